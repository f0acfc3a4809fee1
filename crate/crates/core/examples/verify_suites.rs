//! Runs every verification suite and prints one line per suite.
//!
//! `cargo run --release --example verify_suites`

use bmnn::verify::{run_all, VerifyConfig};

fn main() -> bmnn::Result<()> {
    let report = run_all(&VerifyConfig::default())?;
    for s in &report.suites {
        let status = if s.passed { "ok  " } else { "FAIL" };
        println!("{status} {:<34} {:>9} checks  {}", s.name, s.checked, s.detail);
    }
    std::process::exit(if report.passed() { 0 } else { 1 });
}
