//! MNIST training with the mean-field learner and the BackProp baseline.
//!
//! Needs the four IDX files in `$BMNN_DATA_DIR` (default `data/mnist`).
//!
//! `cargo run --release --example mnist -- [arch] [epochs] [samples per epoch]`

use std::path::PathBuf;

use bmnn::harness::{run_mnist, RunConfig};

fn main() -> bmnn::Result<()> {
    let mut args = std::env::args().skip(1);
    let arch = args.next().unwrap_or_else(|| "785x510x10".into());
    let epochs = args.next().and_then(|a| a.parse().ok()).unwrap_or(1);
    let samples = args.next().and_then(|a| a.parse().ok()).or(Some(10_000));
    let dir = std::env::var_os("BMNN_DATA_DIR").map_or_else(|| PathBuf::from("data/mnist"), PathBuf::from);

    let config = RunConfig {
        epochs,
        samples,
        progress: true,
        ..RunConfig::mnist(&arch, dir)
    };
    let report = run_mnist(&config)?;
    for e in &report.epochs {
        println!("epoch {} {:<9} test error {:.4}", e.epoch, e.algorithm.name(), e.test_error);
    }
    Ok(())
}
