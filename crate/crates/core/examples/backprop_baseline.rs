//! The real-weight baseline: gradient check against central differences, then
//! online training on teacher data, with and without clipping the weights.

use bmnn::backprop::{backprop_step, clipped_weights, gradient, loss, rmnn_forward, RealNetParams};
use bmnn::teacher::{make_teacher, sample_stream};
use bmnn::{bmnn_eval, sign};

fn main() -> bmnn::Result<()> {
    let teacher = make_teacher(9, 11)?;
    let topology = teacher.topology().clone();
    let mut params = RealNetParams::init(&topology, 3e-2, 12);

    let probe = &sample_stream(&teacher, 1, 13)[0];
    let analytic = gradient(&params, probe)?;
    let step = 1e-5;
    let mut worst = 0.0f64;
    for l in 1..=topology.depth() {
        for i in 0..params.layer(l).len() {
            let w = params.layer(l)[i];
            params.layer_mut(l)[i] = w + step;
            let up = loss(&params, probe)?;
            params.layer_mut(l)[i] = w - step;
            let down = loss(&params, probe)?;
            params.layer_mut(l)[i] = w;
            worst = worst.max((analytic[l - 1][i] - (up - down) / (2.0 * step)).abs());
        }
    }
    println!("max |analytic - numeric| gradient gap: {worst:.2e}");

    for s in sample_stream(&teacher, 200_000, 14) {
        backprop_step(&mut params, &s)?;
    }
    let test = sample_stream(&teacher, 10_000, 15);
    let clipped = clipped_weights(&params);
    let (mut real_err, mut clip_err) = (0, 0);
    for s in &test {
        real_err += usize::from(f64::from(sign(rmnn_forward(&params, &s.x)?.output()[0])) != s.y[0]);
        clip_err += usize::from(f64::from(bmnn_eval(&clipped, &s.x)?[0]) != s.y[0]);
    }
    let n = test.len() as f64;
    println!("test error: backprop {:.4}, clipped {:.4}", real_err as f64 / n, clip_err as f64 / n);
    Ok(())
}
