//! One online update on a tiny 4x2x1 network, printing the forward moments and
//! the per-weight log-likelihood ratios that move the fields.

use bmnn::{update_step, ConvergingTopology, LabeledSample, MfbConfig, PosteriorParams};

fn main() -> bmnn::Result<()> {
    let topology: ConvergingTopology = "4x2x1".parse()?;
    let params = PosteriorParams::from_layers(
        &topology,
        vec![vec![0.3, -0.7, 1.2, 0.05, -0.4, 0.9, -1.5, 0.2], vec![0.6, -0.25]],
    )?;
    let sample = LabeledSample::new(vec![1.0, -0.5, 0.25, 2.0], vec![-1.0])?;
    let out = update_step(&params, &sample, MfbConfig::default())?;

    for l in 1..=topology.depth() {
        println!("layer {l}");
        println!("  mu      {:?}", out.forward.mu(l));
        println!("  sigma^2 {:?}", out.forward.sigma2(l));
        println!("  nu      {:?}", out.forward.nu(l));
        println!("  R       {:?}", out.backward.r(l));
    }
    for l in 1..=topology.depth() {
        println!("h{l}: {:?} -> {:?}", params.layer(l), out.params.layer(l));
    }
    Ok(())
}
