//! Writes a synthetic dataset in the UCR TSV layout (label first, then the
//! series), reads it back, pretrains a readout and evaluates it.
//!
//!     cargo run --release --example ucr_roundtrip [-- path.tsv]

use hjbr::trainer::{prepare, two_tone_config};
use hjbr::{evaluate, load_ucr_tsv, synth_two_tone};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = match std::env::args().nth(1) {
        Some(path) => load_ucr_tsv(path)?,
        None => {
            let synth = synth_two_tone(20, 40, 1.5, 3.0, 0.05, 2)?;
            let dir = tempfile_dir()?;
            let path = dir.join("two_tone_TRAIN.tsv");
            synth.write_tsv(&path)?;
            let back = load_ucr_tsv(&path)?;
            println!("wrote and re-read {}", path.display());
            println!("fingerprint before {}", synth.fingerprint());
            println!("fingerprint after  {}", back.fingerprint());
            back
        }
    };
    println!(
        "{} series, length {}..{}, {} classes",
        data.len(),
        data.series.iter().map(|s| s.len()).min().unwrap_or(0),
        data.series.iter().map(|s| s.len()).max().unwrap_or(0),
        data.n_classes
    );
    let cfg = two_tone_config();
    let prepared = prepare(&data, &cfg)?;
    let ev = evaluate(&prepared.model, &prepared.dataset, cfg.dt)?;
    println!("pretrained readout accuracy: {:.4}", ev.accuracy);
    print!("{}", ev.to_csv());
    Ok(())
}

fn tempfile_dir() -> std::io::Result<std::path::PathBuf> {
    let dir = std::env::temp_dir().join("hjbr_ucr_roundtrip");
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}
