//! Network outputs: the deterministic binary network, the posterior-averaged
//! (PMFB) output, and the argmax classification rule.

use crate::binary::{sign, BinaryWeights};
use crate::error::{Error, Result};
use crate::mfb::{forward_pass, MfbConfig};
use crate::posterior::PosteriorParams;
use crate::topology::ConvergingTopology;

/// Pre-sign sums of the output layer of the binary network
/// `v_l = sign(W_l v_{l-1})`, `v_0 = x`.
pub fn bmnn_output_sums(weights: &BinaryWeights, x: &[f64]) -> Result<Vec<f64>> {
    sign_sums(weights.topology(), x, |l, idx| weights.layer(l)[idx] > 0)
}

/// Output sums of the binary network with weights `sign(values)`, read
/// straight from real-valued arrays (posterior fields or BackProp weights).
pub fn sign_network_output_sums(
    topology: &ConvergingTopology,
    values: &[Vec<f64>],
    x: &[f64],
) -> Result<Vec<f64>> {
    if values.len() != topology.depth() {
        return Err(Error::DimensionMismatch {
            what: "weight layers",
            expected: topology.depth(),
            actual: values.len(),
        });
    }
    for (shape, layer) in topology.layers().zip(values) {
        if layer.len() != shape.weights() {
            return Err(Error::DimensionMismatch {
                what: "weights in layer",
                expected: shape.weights(),
                actual: layer.len(),
            });
        }
    }
    sign_sums(topology, x, |l, idx| sign(values[l - 1][idx]) > 0)
}

fn sign_sums(
    topology: &ConvergingTopology,
    x: &[f64],
    positive: impl Fn(usize, usize) -> bool,
) -> Result<Vec<f64>> {
    if x.len() != topology.input_dim() {
        return Err(Error::DimensionMismatch {
            what: "input",
            expected: topology.input_dim(),
            actual: x.len(),
        });
    }
    let mut v = x.to_vec();
    let depth = topology.depth();
    for l in 1..=depth {
        let shape = topology.layer(l);
        let sums: Vec<f64> = (0..shape.width)
            .map(|i| {
                (0..shape.fan_in)
                    .map(|r| {
                        let input = v[shape.source(i, r)];
                        if positive(l, i * shape.fan_in + r) {
                            input
                        } else {
                            -input
                        }
                    })
                    .sum()
            })
            .collect();
        if l == depth {
            return Ok(sums);
        }
        v = sums.into_iter().map(|s| f64::from(sign(s))).collect();
    }
    unreachable!("topology has at least one layer")
}

/// Output of the binary network, in `{-1, +1}^{V_L}` with `sign(0) = +1`.
pub fn bmnn_eval(weights: &BinaryWeights, x: &[f64]) -> Result<Vec<i8>> {
    Ok(bmnn_output_sums(weights, x)?.into_iter().map(sign).collect())
}

/// Ensemble-mean output `nu_L` and its sign.
pub fn pmfb_output(
    params: &PosteriorParams,
    x: &[f64],
    config: MfbConfig,
) -> Result<(Vec<f64>, Vec<i8>)> {
    let trace = forward_pass(params, x, config)?;
    let nu = trace.output().to_vec();
    let y = nu.iter().map(|&v| sign(v)).collect();
    Ok((nu, y))
}

/// Index of the largest score; ties go to the lowest index.
pub fn classify(scores: &[f64]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (n, &s) in scores.iter().enumerate() {
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((n, s)),
        }
    }
    best.map(|(n, _)| n).ok_or(Error::Empty("scores"))
}
