//! Teacher-student benchmark: a student with the teacher's MxMx1 shape learns
//! online from labelled random ±1 inputs.
//!
//! `cargo run --release --example teacher_student -- [M] [trials]`

use bmnn::harness::{run_teacher_student, Algorithm, RunConfig};

fn main() -> bmnn::Result<()> {
    let mut args = std::env::args().skip(1);
    let m: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(7);
    let trials: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(3);
    let config = RunConfig {
        trials,
        ..RunConfig::teacher_student(m)
    };
    let report = run_teacher_student(&config)?;

    // Learning curve of the first trial, every 20k samples.
    println!("samples   mfb     pmfb    backprop clipped");
    for n in (20_000..=200_000).step_by(20_000) {
        let at = |a: Algorithm| {
            report
                .train
                .iter()
                .find(|r| r.trial == 0 && r.algorithm == a && r.sample_index == n)
                .map_or(f64::NAN, |r| r.window_error)
        };
        println!(
            "{n:>7}   {:.4}  {:.4}  {:.4}   {:.4}",
            at(Algorithm::Mfb),
            at(Algorithm::Pmfb),
            at(Algorithm::Backprop),
            at(Algorithm::Clipped)
        );
    }
    println!();
    for s in &report.summary {
        println!(
            "{:<9} best test error {:.4} (trial {}), mean {:.4}",
            s.algorithm.name(),
            s.best_test_error,
            s.best_trial,
            s.mean_test_error
        );
    }
    Ok(())
}
