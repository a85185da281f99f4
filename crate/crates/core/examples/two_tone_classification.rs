//! Two-class synthetic task: a sine at f1 cycles per series versus one at 2 f1.
//!
//! Pretrains the readout, runs the hyper-parameter gate, trains the plastic
//! recurrent weights with the actor-critic loop and evaluates feedforward.
//!
//!     cargo run --release --example two_tone_classification [-- config.txt]

use std::time::Instant;

use hjbr::{config, evaluate, fit, synth_two_tone, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg: TrainConfig = match std::env::args().nth(1) {
        Some(path) => config::load(path)?,
        None => hjbr::trainer::two_tone_config(),
    };
    let data = synth_two_tone(40, 50, 2.0, 4.0, 0.05, 11)?;

    let started = Instant::now();
    let out = fit(&data, &cfg, false)?;
    let secs = started.elapsed().as_secs_f64();
    let diag = &out.diagnostics;

    println!("gate: {}", diag.gate.summary());
    println!("epoch  sum_e_sq      train_acc  |dWc|       |dWa|");
    for e in &diag.epochs {
        println!(
            "{:>5}  {:<12.6}  {:<9.4}  {:<10.3e}  {:<10.3e}",
            e.epoch, e.sum_e_sq, e.train_accuracy, e.delta_wc, e.delta_wa
        );
    }
    let pre = evaluate(&out.pretrained, &out.dataset, cfg.dt)?.accuracy;
    let post = evaluate(&out.model, &out.dataset, cfg.dt)?;
    println!("non-increasing epoch pairs: {:.3}", diag.monotone_fraction());
    println!("feedforward accuracy, pretrained readout only: {pre:.4}");
    println!("feedforward accuracy, trained plastic weights: {:.4}", post.accuracy);
    println!("confusion (rows true, cols predicted): {:?}", post.confusion);
    println!("elapsed: {secs:.2} s");
    Ok(())
}
