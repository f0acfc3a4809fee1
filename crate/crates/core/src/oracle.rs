//! Exact reference computations for small networks.
//!
//! Under the factorized posterior, the likelihood of a label with one weight
//! pinned is `P(y | x, W_ij = w) = sum over all other weights` of the product of
//! their probabilities times the indicator that the binary network maps `x` to
//! `y`. Two independent routes compute it:
//!
//! * [`exact_likelihoods`] enumerates every configuration of the other weights.
//! * [`recursive_likelihoods`] exploits the tree structure. Neurons in one
//!   layer depend on disjoint weights, so each hidden activation distribution
//!   can be computed neuron by neuron (enumeration on the first layer, a
//!   convolution over the `K` signed inputs above it).
//!
//! Zero pre-activations count for neither sign, matching `theta(0) = 0`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mfb::{ForwardTrace, LabeledSample};
use crate::posterior::PosteriorParams;
use crate::topology::ConvergingTopology;

/// Brute force enumerates `2^(n - 1)` configurations; beyond this it is refused.
pub const MAX_ENUMERATED_WEIGHTS: usize = 22;
/// Largest first-layer fan-in the recursive route will enumerate.
pub const MAX_RECURSIVE_FAN_IN: usize = 24;

/// Position of one weight: `layer` counts from 1, `neuron` and `slot` from 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WeightIndex {
    pub layer: usize,
    pub neuron: usize,
    pub slot: usize,
}

impl WeightIndex {
    pub fn new(layer: usize, neuron: usize, slot: usize) -> Self {
        Self { layer, neuron, slot }
    }

    fn check(&self, topology: &ConvergingTopology) -> Result<()> {
        let ok = (1..=topology.depth()).contains(&self.layer) && {
            let s = topology.layer(self.layer);
            self.neuron < s.width && self.slot < s.fan_in
        };
        if ok {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange(format!(
                "weight (layer {}, neuron {}, slot {}) in {topology}",
                self.layer, self.neuron, self.slot
            )))
        }
    }

    /// Offset in the layer's row-major weight array.
    pub fn offset(&self, topology: &ConvergingTopology) -> usize {
        self.neuron * topology.fan_in(self.layer) + self.slot
    }
}

/// Every weight of `topology`, layer by layer in storage order.
pub fn all_weights(topology: &ConvergingTopology) -> impl Iterator<Item = WeightIndex> + '_ {
    (1..=topology.depth()).flat_map(move |l| {
        let s = topology.layer(l);
        (0..s.width).flat_map(move |i| (0..s.fan_in).map(move |r| WeightIndex::new(l, i, r)))
    })
}

/// `ln P(y | W = +1) - ln P(y | W = -1)`, with the degenerate cases kept apart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogRatio {
    Finite(f64),
    PlusInfinity,
    MinusInfinity,
    /// Both likelihoods vanish.
    Indeterminate,
}

impl LogRatio {
    pub fn from_likelihoods(plus: f64, minus: f64) -> Self {
        match (plus > 0.0, minus > 0.0) {
            (true, true) => Self::Finite(plus.ln() - minus.ln()),
            (true, false) => Self::PlusInfinity,
            (false, true) => Self::MinusInfinity,
            (false, false) => Self::Indeterminate,
        }
    }

    /// `+1`, `-1` or `0`; `None` when indeterminate.
    pub fn sign(&self) -> Option<f64> {
        match *self {
            Self::Finite(v) if v > 0.0 => Some(1.0),
            Self::Finite(v) if v < 0.0 => Some(-1.0),
            Self::Finite(_) => Some(0.0),
            Self::PlusInfinity => Some(1.0),
            Self::MinusInfinity => Some(-1.0),
            Self::Indeterminate => None,
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Self::PlusInfinity | Self::MinusInfinity)
    }

    /// The ratio as a float (`±inf` for the infinite cases, NaN if indeterminate).
    pub fn to_f64(&self) -> f64 {
        match *self {
            Self::Finite(v) => v,
            Self::PlusInfinity => f64::INFINITY,
            Self::MinusInfinity => f64::NEG_INFINITY,
            Self::Indeterminate => f64::NAN,
        }
    }
}

/// `P(W = +1) = (1 + tanh h) / 2`, written to keep the small tail accurate.
fn prob_plus(h: f64) -> f64 {
    if h >= 0.0 {
        1.0 / (1.0 + (-2.0 * h).exp())
    } else {
        let e = (2.0 * h).exp();
        e / (1.0 + e)
    }
}

fn check_sample(params: &PosteriorParams, sample: &LabeledSample, w: WeightIndex) -> Result<()> {
    sample.check(params.topology())?;
    w.check(params.topology())
}

/// `(P(y | x, W = +1), P(y | x, W = -1))` by enumerating all other weights.
pub fn exact_likelihoods(
    params: &PosteriorParams,
    sample: &LabeledSample,
    w: WeightIndex,
) -> Result<(f64, f64)> {
    check_sample(params, sample, w)?;
    let topology = params.topology();
    let n = topology.weight_count();
    if n > MAX_ENUMERATED_WEIGHTS {
        return Err(Error::InstanceTooLarge {
            weights: n,
            limit: MAX_ENUMERATED_WEIGHTS,
        });
    }
    // Flat view of all weights with the pinned one last.
    let mut offsets = Vec::with_capacity(n);
    for l in 1..=topology.depth() {
        for idx in 0..topology.layer(l).weights() {
            offsets.push((l, idx));
        }
    }
    let pinned = (w.layer, w.offset(topology));
    offsets.retain(|&o| o != pinned);
    let p_plus: Vec<f64> = offsets.iter().map(|&(l, idx)| prob_plus(params.layer(l)[idx])).collect();

    let mut weights: Vec<Vec<f64>> = topology.layers().map(|s| vec![0.0; s.weights()]).collect();
    let mut acts: Vec<Vec<f64>> = topology.widths().iter().map(|&d| vec![0.0; d]).collect();
    acts[0].copy_from_slice(&sample.x);
    let (mut total_plus, mut total_minus) = (0.0, 0.0);
    for mask in 0u64..(1 << offsets.len()) {
        let mut prob = 1.0;
        for (bit, (&(l, idx), &p)) in offsets.iter().zip(&p_plus).enumerate() {
            let plus = mask >> bit & 1 == 1;
            weights[l - 1][idx] = if plus { 1.0 } else { -1.0 };
            prob *= if plus { p } else { 1.0 - p };
        }
        if prob == 0.0 {
            continue;
        }
        for (value, total) in [(1.0, &mut total_plus), (-1.0, &mut total_minus)] {
            weights[pinned.0 - 1][pinned.1] = value;
            if produces_label(topology, &weights, &mut acts, &sample.y) {
                *total += prob;
            }
        }
    }
    Ok((total_plus, total_minus))
}

/// Strict-sign evaluation; `false` as soon as any pre-activation is zero or an
/// output disagrees with `y`.
fn produces_label(
    topology: &ConvergingTopology,
    weights: &[Vec<f64>],
    acts: &mut [Vec<f64>],
    y: &[f64],
) -> bool {
    let depth = topology.depth();
    for l in 1..=depth {
        let shape = topology.layer(l);
        let (lower, upper) = acts.split_at_mut(l);
        let input = &lower[l - 1];
        let out = &mut upper[0];
        for i in 0..shape.width {
            let sum: f64 = (0..shape.fan_in)
                .map(|r| weights[l - 1][i * shape.fan_in + r] * input[shape.source(i, r)])
                .sum();
            if sum == 0.0 {
                return false;
            }
            let v = sum.signum();
            if l == depth && v != y[i] {
                return false;
            }
            out[i] = v;
        }
    }
    true
}

/// `(P(v = +1), P(v = -1))` for each neuron, layer by layer, with optionally
/// one weight pinned. The two masses sum to less than one when ties are possible.
fn activation_masses(
    params: &PosteriorParams,
    x: &[f64],
    pinned: Option<(WeightIndex, f64)>,
) -> Result<Vec<Vec<(f64, f64)>>> {
    let topology = params.topology();
    let weight_plus = |l: usize, i: usize, r: usize| -> f64 {
        match pinned {
            Some((w, value)) if w.layer == l && w.neuron == i && w.slot == r => {
                if value > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            _ => prob_plus(params.layer(l)[i * topology.fan_in(l) + r]),
        }
    };
    let first = topology.layer(1);
    if first.fan_in > MAX_RECURSIVE_FAN_IN {
        return Err(Error::InstanceTooLarge {
            weights: first.fan_in,
            limit: MAX_RECURSIVE_FAN_IN,
        });
    }
    let mut masses = Vec::with_capacity(topology.depth());
    let layer1 = (0..first.width)
        .map(|i| {
            let p: Vec<f64> = (0..first.fan_in).map(|r| weight_plus(1, i, r)).collect();
            let (mut plus, mut minus) = (0.0, 0.0);
            for mask in 0u64..(1 << first.fan_in) {
                let mut prob = 1.0;
                let mut sum = 0.0;
                for (r, (&pr, &xr)) in p.iter().zip(x).enumerate() {
                    if mask >> r & 1 == 1 {
                        prob *= pr;
                        sum += xr;
                    } else {
                        prob *= 1.0 - pr;
                        sum -= xr;
                    }
                }
                if sum > 0.0 {
                    plus += prob;
                } else if sum < 0.0 {
                    minus += prob;
                }
            }
            (plus, minus)
        })
        .collect();
    masses.push(layer1);
    for l in 2..=topology.depth() {
        let shape = topology.layer(l);
        let below: &Vec<(f64, f64)> = &masses[l - 2];
        let k = shape.fan_in;
        let layer = (0..shape.width)
            .map(|i| {
                // dist[s + k] = mass of partial sum s of the signed inputs.
                let mut dist = vec![0.0; 2 * k + 1];
                dist[k] = 1.0;
                for r in 0..k {
                    let (vp, vm) = below[shape.source(i, r)];
                    let wp = weight_plus(l, i, r);
                    let z_plus = wp * vp + (1.0 - wp) * vm;
                    let z_minus = wp * vm + (1.0 - wp) * vp;
                    let mut next = vec![0.0; 2 * k + 1];
                    for (s, &m) in dist.iter().enumerate() {
                        if m == 0.0 {
                            continue;
                        }
                        if s + 1 < next.len() {
                            next[s + 1] += m * z_plus;
                        }
                        if s > 0 {
                            next[s - 1] += m * z_minus;
                        }
                    }
                    dist = next;
                }
                let plus: f64 = dist[k + 1..].iter().sum();
                let minus: f64 = dist[..k].iter().sum();
                (plus, minus)
            })
            .collect();
        masses.push(layer);
    }
    Ok(masses)
}

fn label_probability(masses: &[Vec<(f64, f64)>], y: &[f64]) -> f64 {
    masses
        .last()
        .expect("at least one layer")
        .iter()
        .zip(y)
        .map(|(&(plus, minus), &yi)| if yi > 0.0 { plus } else { minus })
        .product()
}

/// Same quantity as [`exact_likelihoods`] by layer recursion. Cost is
/// `2^K_1` per first-layer neuron plus `O(K^2)` per deeper neuron.
pub fn recursive_likelihoods(
    params: &PosteriorParams,
    sample: &LabeledSample,
    w: WeightIndex,
) -> Result<(f64, f64)> {
    check_sample(params, sample, w)?;
    let plus = activation_masses(params, &sample.x, Some((w, 1.0)))?;
    let minus = activation_masses(params, &sample.x, Some((w, -1.0)))?;
    Ok((label_probability(&plus, &sample.y), label_probability(&minus, &sample.y)))
}

/// `P(y | x)` with every weight free.
pub fn marginal_likelihood(params: &PosteriorParams, sample: &LabeledSample) -> Result<f64> {
    sample.check(params.topology())?;
    Ok(label_probability(&activation_masses(params, &sample.x, None)?, &sample.y))
}

pub fn exact_likelihood_ratio(
    params: &PosteriorParams,
    sample: &LabeledSample,
    w: WeightIndex,
) -> Result<LogRatio> {
    let (plus, minus) = exact_likelihoods(params, sample, w)?;
    Ok(LogRatio::from_likelihoods(plus, minus))
}

pub fn recursive_likelihood_ratio(
    params: &PosteriorParams,
    sample: &LabeledSample,
    w: WeightIndex,
) -> Result<LogRatio> {
    let (plus, minus) = recursive_likelihoods(params, sample, w)?;
    Ok(LogRatio::from_likelihoods(plus, minus))
}

/// Mean and variance of a neuron's normalized input with one weight left out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExcludedMoments {
    pub mean: f64,
    pub variance: f64,
}

/// Direct sums over the fan-in minus `w`, using the forward trace's mean
/// activations. No variance floor is added.
pub fn exact_excluded_moments(
    params: &PosteriorParams,
    trace: &ForwardTrace,
    w: WeightIndex,
) -> Result<ExcludedMoments> {
    let topology = params.topology();
    w.check(topology)?;
    let shape = topology.layer(w.layer);
    let nu = trace.nu(w.layer - 1);
    let h = params.layer(w.layer);
    let k = shape.fan_in as f64;
    let (mut mean, mut variance) = (0.0, 0.0);
    for r in (0..shape.fan_in).filter(|&r| r != w.slot) {
        let a = nu[shape.source(w.neuron, r)];
        let field = h[w.neuron * shape.fan_in + r];
        let sech = field.cosh().recip();
        mean += field.tanh() * a;
        let hidden = if shape.dense { 0.0 } else { 1.0 - a * a };
        variance += hidden + a * a * sech * sech;
    }
    Ok(ExcludedMoments {
        mean: mean / k.sqrt(),
        variance: variance / k,
    })
}

/// Empirical mean activation per neuron over networks drawn from the posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloEstimate {
    pub samples: usize,
    /// `mean[l - 1][i]` estimates the mean of `v_{i,l}`.
    pub mean: Vec<Vec<f64>>,
    /// Standard error `sqrt((1 - mean^2) / n)` of each mean.
    pub stderr: Vec<Vec<f64>>,
}

/// Draws `n_samples` binary networks from the posterior and propagates `x`
/// with `sign(0) = +1`.
pub fn mc_forward_check(
    params: &PosteriorParams,
    x: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    let topology = params.topology();
    if x.len() != topology.input_dim() {
        return Err(Error::DimensionMismatch {
            what: "input",
            expected: topology.input_dim(),
            actual: x.len(),
        });
    }
    if n_samples == 0 {
        return Err(Error::Empty("Monte Carlo samples"));
    }
    let p_plus: Vec<Vec<f64>> = params.layers().iter().map(|l| l.iter().map(|&h| prob_plus(h)).collect()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sums: Vec<Vec<f64>> = topology.widths()[1..].iter().map(|&d| vec![0.0; d]).collect();
    let mut acts: Vec<Vec<f64>> = topology.widths().iter().map(|&d| vec![0.0; d]).collect();
    acts[0].copy_from_slice(x);
    for _ in 0..n_samples {
        for l in 1..=topology.depth() {
            let shape = topology.layer(l);
            let (lower, upper) = acts.split_at_mut(l);
            let input = &lower[l - 1];
            for i in 0..shape.width {
                let mut sum = 0.0;
                for r in 0..shape.fan_in {
                    let a = input[shape.source(i, r)];
                    if rng.random::<f64>() < p_plus[l - 1][i * shape.fan_in + r] {
                        sum += a;
                    } else {
                        sum -= a;
                    }
                }
                let v = if sum >= 0.0 { 1.0 } else { -1.0 };
                upper[0][i] = v;
                sums[l - 1][i] += v;
            }
        }
    }
    let n = n_samples as f64;
    let mean: Vec<Vec<f64>> = sums.iter().map(|l| l.iter().map(|s| s / n).collect()).collect();
    let stderr = mean
        .iter()
        .map(|l| l.iter().map(|m| ((1.0 - m * m).max(0.0) / n).sqrt()).collect())
        .collect();
    Ok(MonteCarloEstimate {
        samples: n_samples,
        mean,
        stderr,
    })
}
