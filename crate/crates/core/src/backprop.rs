//! Real-valued baseline on the same converging topology, trained with plain
//! online gradient descent on `E = 1/2 |y - v_L|^2`.
//!
//! Activations are `s(u) = 1.7159 tanh(2u / 3)` on every layer, output
//! included. Because hidden neurons have fan-out 1, each neuron's error signal
//! comes from a single weight above it and a step costs `O(|W|)`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binary::BinaryWeights;
use crate::error::{Error, Result};
use crate::mfb::LabeledSample;
use crate::model_io::{ModelDocument, ModelKind};
use crate::topology::ConvergingTopology;

pub const AMPLITUDE: f64 = 1.7159;
pub const SLOPE: f64 = 2.0 / 3.0;

#[inline]
pub fn activation(u: f64) -> f64 {
    AMPLITUDE * (SLOPE * u).tanh()
}

#[inline]
pub fn activation_derivative(u: f64) -> f64 {
    let t = (SLOPE * u).tanh();
    AMPLITUDE * SLOPE * (1.0 - t * t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealNetParams {
    topology: ConvergingTopology,
    weights: Vec<Vec<f64>>,
    pub eta: f64,
}

/// Per-layer inputs `u_l = W_l v_{l-1}` and outputs `v_l = s(u_l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Activations {
    /// `u[l - 1]` for layers `1..=L`.
    pub u: Vec<Vec<f64>>,
    /// `v[m]` for `m` in `0..=L`; `v[0]` is the input.
    pub v: Vec<Vec<f64>>,
}

impl Activations {
    /// Output-layer inputs, the scores used for classification.
    pub fn output_input(&self) -> &[f64] {
        self.u.last().expect("at least one layer")
    }

    pub fn output(&self) -> &[f64] {
        self.v.last().expect("at least one layer")
    }
}

impl RealNetParams {
    pub fn zeros(topology: &ConvergingTopology, eta: f64) -> Self {
        Self {
            topology: topology.clone(),
            weights: topology.layers().map(|s| vec![0.0; s.weights()]).collect(),
            eta,
        }
    }

    /// `W ~ U[-sqrt(3/K_l), sqrt(3/K_l)]`, unit variance after scaling by `sqrt(K_l)`.
    pub fn init(topology: &ConvergingTopology, eta: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = topology
            .layers()
            .map(|s| {
                let a = (3.0 / s.fan_in as f64).sqrt();
                (0..s.weights()).map(|_| rng.random_range(-a..=a)).collect()
            })
            .collect();
        Self {
            topology: topology.clone(),
            weights,
            eta,
        }
    }

    pub fn from_layers(topology: &ConvergingTopology, weights: Vec<Vec<f64>>, eta: f64) -> Result<Self> {
        if weights.len() != topology.depth() {
            return Err(Error::DimensionMismatch {
                what: "weight layers",
                expected: topology.depth(),
                actual: weights.len(),
            });
        }
        for (shape, layer) in topology.layers().zip(&weights) {
            if layer.len() != shape.weights() {
                return Err(Error::DimensionMismatch {
                    what: "weights in layer",
                    expected: shape.weights(),
                    actual: layer.len(),
                });
            }
        }
        Ok(Self {
            topology: topology.clone(),
            weights,
            eta,
        })
    }

    pub fn topology(&self) -> &ConvergingTopology {
        &self.topology
    }

    pub fn layer(&self, layer: usize) -> &[f64] {
        &self.weights[layer - 1]
    }

    pub fn layer_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.weights[layer - 1]
    }

    pub fn layers(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().flatten().all(|w| w.is_finite())
    }

    pub fn to_document(&self) -> ModelDocument {
        ModelDocument::new(ModelKind::RealWeights, &self.topology, self.weights.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_document().save(path)
    }

    pub fn load(path: &Path, eta: f64) -> Result<Self> {
        let doc = ModelDocument::load(path)?;
        doc.expect_kind(ModelKind::RealWeights)?;
        Self::from_layers(&doc.topology()?, doc.layers, eta)
    }
}

pub fn rmnn_forward(params: &RealNetParams, x: &[f64]) -> Result<Activations> {
    let topology = params.topology();
    if x.len() != topology.input_dim() {
        return Err(Error::DimensionMismatch {
            what: "input",
            expected: topology.input_dim(),
            actual: x.len(),
        });
    }
    let mut u = Vec::with_capacity(topology.depth());
    let mut v = vec![x.to_vec()];
    for (shape, w) in topology.layers().zip(params.layers()) {
        let prev = v.last().expect("input pushed");
        let ul: Vec<f64> = (0..shape.width)
            .map(|i| {
                w[i * shape.fan_in..(i + 1) * shape.fan_in]
                    .iter()
                    .enumerate()
                    .map(|(r, wr)| wr * prev[shape.source(i, r)])
                    .sum()
            })
            .collect();
        v.push(ul.iter().map(|&z| activation(z)).collect());
        u.push(ul);
    }
    Ok(Activations { u, v })
}

/// `E = 1/2 |y - v_L|^2`.
pub fn loss(params: &RealNetParams, sample: &LabeledSample) -> Result<f64> {
    let act = rmnn_forward(params, &sample.x)?;
    Ok(0.5
        * act
            .output()
            .iter()
            .zip(&sample.y)
            .map(|(v, y)| (y - v).powi(2))
            .sum::<f64>())
}

/// `dE/du` for every neuron, per layer.
fn neuron_deltas(params: &RealNetParams, act: &Activations, y: &[f64]) -> Vec<Vec<f64>> {
    let topology = params.topology();
    let depth = topology.depth();
    let mut deltas = vec![Vec::new(); depth];
    deltas[depth - 1] = act.u[depth - 1]
        .iter()
        .zip(&act.v[depth])
        .zip(y)
        .map(|((&u, &v), &y)| (v - y) * activation_derivative(u))
        .collect();
    for l in (1..depth).rev() {
        let k_above = topology.fan_in(l + 1);
        let w_above = params.layer(l + 1);
        let above = &deltas[l];
        // Neuron j of layer l is slot j of the flat weight array above it.
        let d = act.u[l - 1]
            .iter()
            .enumerate()
            .map(|(j, &u)| w_above[j] * above[j / k_above] * activation_derivative(u))
            .collect();
        deltas[l - 1] = d;
    }
    deltas
}

/// Analytic `dE/dW` per layer.
pub fn gradient(params: &RealNetParams, sample: &LabeledSample) -> Result<Vec<Vec<f64>>> {
    sample.check(params.topology())?;
    let act = rmnn_forward(params, &sample.x)?;
    let deltas = neuron_deltas(params, &act, &sample.y);
    Ok(params
        .topology()
        .layers()
        .enumerate()
        .map(|(l, shape)| {
            (0..shape.width)
                .flat_map(|i| (0..shape.fan_in).map(move |r| (i, r)))
                .map(|(i, r)| deltas[l][i] * act.v[l][shape.source(i, r)])
                .collect()
        })
        .collect())
}

/// One online step `W <- W - eta dE/dW`, gradients taken before any weight moves.
pub fn backprop_step(params: &mut RealNetParams, sample: &LabeledSample) -> Result<()> {
    sample.check(params.topology())?;
    let act = rmnn_forward(params, &sample.x)?;
    let deltas = neuron_deltas(params, &act, &sample.y);
    let eta = params.eta;
    let topology = params.topology().clone();
    for (l, shape) in topology.layers().enumerate() {
        let w = &mut params.weights[l];
        let input = &act.v[l];
        for i in 0..shape.width {
            let step = eta * deltas[l][i];
            if step == 0.0 {
                continue;
            }
            for r in 0..shape.fan_in {
                w[i * shape.fan_in + r] -= step * input[shape.source(i, r)];
            }
        }
    }
    Ok(())
}

/// `sign(W)` with `sign(0) = +1`.
pub fn clipped_weights(params: &RealNetParams) -> BinaryWeights {
    BinaryWeights::from_signs(params.topology(), params.layers())
}
