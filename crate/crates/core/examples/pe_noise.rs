//! Exploration noise: amplitude schedule per epoch and the empirical RMS of
//! both noise kinds.
//!
//!     cargo run --release --example pe_noise

use hjbr::tracking::{PeGenerator, PeKind, PeSchedule};

fn main() {
    for kind in [PeKind::Uniform, PeKind::SineDither] {
        let schedule = PeSchedule {
            amplitude: 0.2,
            decay: 0.7,
            kind,
        };
        let pe = PeGenerator::new(schedule, 16, 4);
        println!("{kind:?}");
        for epoch in 0..5 {
            let mut sq = 0.0;
            let mut peak = 0.0f64;
            let steps = 500;
            for step in 0..steps {
                let n = pe.noise(step, epoch);
                sq += n.norm_squared();
                peak = peak.max(n.amax());
            }
            let rms = (sq / (steps * pe.dim()) as f64).sqrt();
            println!(
                "  epoch {epoch}: amplitude {:.4}  rms {rms:.4}  peak {peak:.4}",
                schedule.amplitude_at(epoch)
            );
        }
    }
}
