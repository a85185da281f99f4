//! Fixed feature generators feeding the critic and actor decoders.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::reservoir::{Activation, ReservoirModel, ReservoirSpec, ReservoirState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    /// Small fixed reservoir stepped once per training step.
    #[default]
    Reservoir,
    /// `tanh` of a fixed random projection, no memory.
    Memoryless,
    /// `z = e`. Used by the scalar LQR self-test.
    Linear,
}

impl std::str::FromStr for FeatureKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "reservoir" => Ok(FeatureKind::Reservoir),
            "memoryless" => Ok(FeatureKind::Memoryless),
            "linear" => Ok(FeatureKind::Linear),
            other => Err(format!(
                "unknown feature kind {other:?} (expected reservoir, memoryless or linear)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMap {
    Reservoir { net: ReservoirModel, state: ReservoirState },
    Memoryless { projection: DMatrix<f64> },
    Linear { dim: usize },
}

impl FeatureMap {
    /// Builds a frozen feature map over an `n_in`-dimensional input.
    pub fn new(kind: FeatureKind, n_in: usize, n_features: usize, seed: u64) -> Result<Self> {
        match kind {
            FeatureKind::Reservoir => {
                let net = ReservoirSpec {
                    n_r: n_features,
                    n_in,
                    n_classes: 0,
                    alpha1: 1.0,
                    activation: Activation::Tanh,
                    spectral_radius: 0.9,
                    input_scale: 1.0,
                    n_plastic: 0,
                    plastic_mode: Default::default(),
                    seed,
                }
                .build()?;
                let state = net.zero_state();
                Ok(FeatureMap::Reservoir { net, state })
            }
            FeatureKind::Memoryless => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let projection = DMatrix::from_fn(n_features, n_in, |_, _| rng.random_range(-1.0..=1.0));
                Ok(FeatureMap::Memoryless { projection })
            }
            FeatureKind::Linear => {
                if n_features != n_in {
                    return Err(Error::InvalidArgument {
                        name: "n_features",
                        reason: format!("linear features need n_features == n_in ({n_in}), got {n_features}"),
                    });
                }
                Ok(FeatureMap::Linear { dim: n_in })
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FeatureMap::Reservoir { net, .. } => net.n_neurons(),
            FeatureMap::Memoryless { projection } => projection.nrows(),
            FeatureMap::Linear { dim } => *dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            FeatureMap::Reservoir { net, .. } => net.n_inputs(),
            FeatureMap::Memoryless { projection } => projection.ncols(),
            FeatureMap::Linear { dim } => *dim,
        }
    }

    /// Clears any internal memory; called at every series boundary.
    pub fn reset(&mut self) {
        if let FeatureMap::Reservoir { net, state } = self {
            *state = net.zero_state();
        }
    }

    pub fn forward(&mut self, e: &DVector<f64>, dt: f64) -> Result<DVector<f64>> {
        check_dim("feature input", self.input_dim(), e.len())?;
        let z = match self {
            FeatureMap::Reservoir { net, state } => {
                *state = net.step(state, e, dt)?;
                state.v.clone()
            }
            FeatureMap::Memoryless { projection } => (&*projection * e).map(f64::tanh),
            FeatureMap::Linear { .. } => e.clone(),
        };
        if z.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: "feature state",
                step: 0,
            });
        }
        Ok(z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reservoir_features_repeat_under_same_seed() {
        let run = || {
            let mut fm = FeatureMap::new(FeatureKind::Reservoir, 2, 8, 5).unwrap();
            let mut last = DVector::zeros(8);
            for t in 0..20 {
                let e = DVector::from_vec(vec![(t as f64).sin(), 0.5]);
                last = fm.forward(&e, 0.05).unwrap();
            }
            last
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn reset_clears_memory() {
        let mut fm = FeatureMap::new(FeatureKind::Reservoir, 1, 4, 1).unwrap();
        let e = DVector::from_element(1, 1.0);
        let first = fm.forward(&e, 0.1).unwrap();
        fm.forward(&e, 0.1).unwrap();
        fm.reset();
        assert_eq!(fm.forward(&e, 0.1).unwrap(), first);
    }

    #[test]
    fn memoryless_and_linear() {
        let mut fm = FeatureMap::new(FeatureKind::Memoryless, 2, 5, 3).unwrap();
        let e = DVector::from_vec(vec![0.2, -0.4]);
        assert_eq!(fm.forward(&e, 0.1).unwrap(), fm.forward(&e, 0.1).unwrap());
        let mut lin = FeatureMap::new(FeatureKind::Linear, 2, 2, 0).unwrap();
        assert_eq!(lin.forward(&e, 0.1).unwrap(), e);
        assert!(FeatureMap::new(FeatureKind::Linear, 2, 3, 0).is_err());
    }
}
