//! Scalar plant `de/dt = a e + b u`: the actor-critic laws should recover the
//! Riccati gain. Also runs the marginally stable `a = 0` plant, which needs a
//! stabilizing initial policy.
//!
//!     cargo run --release --example lqr_selftest

use hjbr::{lqr_selftest, LqrConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cases = [
        ("a = -1, b = 1, r = 1, eta = 2", LqrConfig::default()),
        (
            "a = 0, eta = 1 (gate overridden), init_p = 0.5",
            LqrConfig {
                a: 0.0,
                eta: 1.0,
                init_p: 0.5,
                force: true,
                ..LqrConfig::default()
            },
        ),
    ];
    for (name, cfg) in cases {
        let report = lqr_selftest(&cfg)?;
        println!("{name}");
        println!("  gate: {}", report.gate.summary());
        for line in report.to_text().lines() {
            println!("  {line}");
        }
        let every = (report.history.len() / 6).max(1);
        for (step, gain) in report.history.iter().step_by(every) {
            println!("  step {step:>6}: gain {gain:.6}");
        }
    }
    Ok(())
}
