//! Calibrates the hyper-parameter gate on the two-tone task and shows which
//! settings it admits.
//!
//!     cargo run --release --example gate_check

use hjbr::synth_two_tone;
use hjbr::trainer::{gate, prepare, two_tone_config};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = synth_two_tone(40, 50, 2.0, 4.0, 0.05, 11)?;
    let base = two_tone_config();
    let prepared = prepare(&data, &base)?;
    let report = gate(&prepared, &base)?;
    print!("{}", report.to_text());

    let bound = report.alpha_c_bound;
    let variants: [(&str, f64, f64, f64); 5] = [
        ("tuned", base.eta, base.alpha_c, base.alpha_a),
        ("eta = 1", 1.0, base.alpha_c, base.alpha_a),
        ("alpha_a = 0", base.eta, base.alpha_c, 0.0),
        ("alpha_c = 0.99 x bound", base.eta, 0.99 * bound, base.alpha_a),
        ("alpha_c = 2 x bound", base.eta, 2.0 * bound, base.alpha_a),
    ];
    println!();
    for (name, eta, alpha_c, alpha_a) in variants {
        let cfg = hjbr::TrainConfig {
            eta,
            alpha_c,
            alpha_a,
            ..base.clone()
        };
        let r = gate(&prepare(&data, &cfg)?, &cfg)?;
        println!("{name:<24} {}", r.summary());
    }
    Ok(())
}
