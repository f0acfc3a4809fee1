//! Compare the engine's per-weight log-likelihood ratios with exact
//! enumeration on a network small enough to enumerate, then check the forward
//! means against Monte-Carlo sampling of binary networks.

use bmnn::oracle::{all_weights, exact_likelihood_ratio, mc_forward_check};
use bmnn::{forward_pass, update_step, ConvergingTopology, LabeledSample, MfbConfig, PosteriorParams};

fn main() -> bmnn::Result<()> {
    let topology: ConvergingTopology = "5x3x1".parse()?;
    let params = PosteriorParams::init_prior(&topology, 9);
    let sample = LabeledSample::new(vec![1.0, -1.0, 1.0, 1.0, -1.0], vec![1.0])?;
    let step = update_step(&params, &sample, MfbConfig::default())?;

    println!("weight          exact ratio   engine R");
    let mut agree = 0;
    let mut total = 0;
    for w in all_weights(&topology) {
        let exact = exact_likelihood_ratio(&params, &sample, w)?;
        let engine = step.backward.r(w.layer)[w.offset(&topology)];
        println!("({}, {}, {})      {:>11.5}   {:>9.5}", w.layer, w.neuron, w.slot, exact.to_f64(), engine);
        if let Some(s) = exact.sign() {
            total += 1;
            agree += usize::from(s == engine.signum());
        }
    }
    println!("sign agreement {agree}/{total}");

    let wide: ConvergingTopology = "21x21x1".parse()?;
    let p = PosteriorParams::init_prior(&wide, 4);
    let x: Vec<f64> = (0..21).map(|i| if i % 3 == 0 { -1.0 } else { 1.0 }).collect();
    let mc = mc_forward_check(&p, &x, 100_000, 5)?;
    let nu = forward_pass(&p, &x, MfbConfig::default())?;
    println!(
        "output mean: Monte-Carlo {:.4} ± {:.4}, mean-field {:.4}",
        mc.mean[1][0],
        mc.stderr[1][0],
        nu.output()[0]
    );
    Ok(())
}
