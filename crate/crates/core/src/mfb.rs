//! Mean-field Bayes backpropagation: one online update of the posterior.
//!
//! A step runs three phases on the frozen pre-update parameters:
//!
//! 1. **Forward.** For every layer `m` and neuron `k` the normalized input
//!    `u_{k,m}` is treated as Gaussian with
//!    `mu = K^{-1/2} sum_r tanh(h_kr) nu_r` and
//!    `sigma^2 = K^{-1} sum_r [(1 - nu_r^2)(1 - [m = 1]) + nu_r^2 sech^2(h_kr)] + eps`,
//!    giving the mean activation `nu_k = 2 Phi(mu / sigma) - 1` (`nu_0 = x`).
//! 2. **Backward.** For every weight, the excluded mean
//!    `mu_{i(j)} = mu_i - K^{-1/2} tanh(h_ij) nu_j` feeds
//!    `G_ij = (2 / sqrt K) N(0 | mu_{i(j)}, sigma_i^2)`, divided at the output
//!    layer by `Phi(y_i mu_{i(j)} / sigma_i)`. When that ratio is not finite its
//!    tail limit `-2 y_i mu_{i(j)} / (sigma_i^2 sqrt K) theta(-y_i mu_{i(j)})`
//!    is used instead. The factor `y_i` keeps `G >= 0` for either label, as the
//!    ratio itself always is. Deltas chain down the fan-out-1 path:
//!    `Delta_ij = Delta_{child} tanh(G_ij) tanh(h_ij)`, starting from `y`.
//!    The log-likelihood ratio is `R_ij = Delta_child tanh(G_ij x_j)` on the
//!    first layer and `Delta_child tanh(G_ij) nu_j` above it.
//! 3. **Update.** `h <- h + R / 2` for all weights at once.
//!
//! The cost of a step is linear in the number of weights.

use crate::error::{Error, Result};
use crate::gauss::{ln_density_at_zero, phi, theta};
use crate::posterior::{tanh_expm1, weight_moments, PosteriorParams};
use crate::topology::ConvergingTopology;

/// Variance floor `2^-52`.
pub const DEFAULT_EPS: f64 = f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MfbConfig {
    pub eps: f64,
}

impl Default for MfbConfig {
    fn default() -> Self {
        Self { eps: DEFAULT_EPS }
    }
}

impl MfbConfig {
    pub fn with_eps(eps: f64) -> Result<Self> {
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::Config(format!("eps must be finite and >= 0, got {eps}")));
        }
        Ok(Self { eps })
    }
}

/// One online training example.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub x: Vec<f64>,
    /// Entries are exactly `+1.0` or `-1.0`.
    pub y: Vec<f64>,
}

impl LabeledSample {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if let Some(v) = y.iter().find(|&&v| v != 1.0 && v != -1.0) {
            return Err(Error::InvalidLabel(format!("label entries must be ±1, got {v}")));
        }
        Ok(Self { x, y })
    }

    pub fn check(&self, topology: &ConvergingTopology) -> Result<()> {
        check_len("input", topology.input_dim(), self.x.len())?;
        check_len("label", topology.output_dim(), self.y.len())
    }
}

fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            actual,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    mu: Vec<Vec<f64>>,
    sigma2: Vec<Vec<f64>>,
    nu: Vec<Vec<f64>>,
    weight_mean: Vec<Vec<f64>>,
}

impl ForwardTrace {
    fn empty(topology: &ConvergingTopology) -> Self {
        let per_neuron = || {
            topology
                .layers()
                .map(|s| vec![0.0; s.width])
                .collect::<Vec<_>>()
        };
        Self {
            mu: per_neuron(),
            sigma2: per_neuron(),
            nu: topology.widths().iter().map(|&w| vec![0.0; w]).collect(),
            weight_mean: topology.layers().map(|s| vec![0.0; s.weights()]).collect(),
        }
    }

    /// `mu_{k,l}` for layer `l` in `1..=L`.
    pub fn mu(&self, layer: usize) -> &[f64] {
        &self.mu[layer - 1]
    }

    /// `sigma^2_{k,l}` (eps included) for layer `l` in `1..=L`.
    pub fn sigma2(&self, layer: usize) -> &[f64] {
        &self.sigma2[layer - 1]
    }

    /// `nu_{k,m} = <v_{k,m}>` for `m` in `0..=L`; `nu_0` is the input.
    pub fn nu(&self, layer: usize) -> &[f64] {
        &self.nu[layer]
    }

    /// Output-layer mean activations.
    pub fn output(&self) -> &[f64] {
        self.nu.last().expect("at least one layer")
    }

    /// Cached `tanh(h)` per weight of layer `l`.
    pub fn weight_mean(&self, layer: usize) -> &[f64] {
        &self.weight_mean[layer - 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackwardTrace {
    mu_excl: Vec<Vec<f64>>,
    g: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
}

impl BackwardTrace {
    fn empty(topology: &ConvergingTopology) -> Self {
        let per_weight = || {
            topology
                .layers()
                .map(|s| vec![0.0; s.weights()])
                .collect::<Vec<_>>()
        };
        Self {
            mu_excl: per_weight(),
            g: per_weight(),
            delta: delta_buffers(topology, true),
            r: per_weight(),
        }
    }

    /// `mu_{i(j),l}` per weight.
    pub fn mu_excl(&self, layer: usize) -> &[f64] {
        &self.mu_excl[layer - 1]
    }

    /// `G_{ij,l}` per weight, after the output-layer guard.
    pub fn g(&self, layer: usize) -> &[f64] {
        &self.g[layer - 1]
    }

    /// `Delta_{ij,l}` per weight. Layer 1 values are recorded for completeness;
    /// nothing downstream reads them.
    pub fn delta(&self, layer: usize) -> &[f64] {
        &self.delta[layer - 1]
    }

    /// Log-likelihood ratio `R_{ij,l}` per weight.
    pub fn r(&self, layer: usize) -> &[f64] {
        &self.r[layer - 1]
    }

    pub fn r_layers(&self) -> &[Vec<f64>] {
        &self.r
    }
}

/// Layer 1 deltas are never consumed; they are only kept when `with_first` is set.
fn delta_buffers(topology: &ConvergingTopology, with_first: bool) -> Vec<Vec<f64>> {
    topology
        .layers()
        .map(|s| if s.dense && !with_first { Vec::new() } else { vec![0.0; s.weights()] })
        .collect()
}

fn forward_into(
    params: &PosteriorParams,
    x: &[f64],
    eps: f64,
    trace: &mut ForwardTrace,
) -> Result<()> {
    let topology = params.topology();
    check_len("input", topology.input_dim(), x.len())?;
    trace.nu[0].copy_from_slice(x);
    for l in 1..=topology.depth() {
        let shape = topology.layer(l);
        let k = shape.fan_in as f64;
        let inv_sqrt_k = k.sqrt().recip();
        let first = l == 1;
        let h = params.layer(l);
        let (lower, upper) = trace.nu.split_at_mut(l);
        let nu_in = &lower[l - 1];
        let nu_out = &mut upper[0];
        let means = &mut trace.weight_mean[l - 1];
        let mu = &mut trace.mu[l - 1];
        let sigma2 = &mut trace.sigma2[l - 1];
        for i in 0..shape.width {
            let row = i * shape.fan_in;
            let mut sum_mean = 0.0;
            let mut sum_var = 0.0;
            for r in 0..shape.fan_in {
                let a = nu_in[shape.source(i, r)];
                let (m, v) = weight_moments(h[row + r]);
                means[row + r] = m;
                sum_mean += m * a;
                let a2 = a * a;
                sum_var += if first { a2 * v } else { (1.0 - a2) + a2 * v };
            }
            let mean = sum_mean * inv_sqrt_k;
            let var = sum_var / k + eps;
            mu[i] = mean;
            sigma2[i] = var;
            // 2 Phi(z) - 1 without the cancellation near z = 0.
            nu_out[i] = libm::erf(mean / (2.0 * var).sqrt());
        }
    }
    Ok(())
}

/// Below this, `exp` returns exactly `+0.0`.
const EXP_UNDERFLOW: f64 = -746.0;

/// `tanh` that skips the transcendental for signed zeros, which it returns
/// unchanged. Saturated posteriors make `G = 0` common.
#[inline]
fn tanh_or_zero(z: f64) -> f64 {
    if z == 0.0 {
        z
    } else {
        tanh_expm1(z)
    }
}

/// Walks the backward pass, writing deltas into the non-empty buffers of `delta` and
/// reporting `(layer, weight index, mu_excl, G, R)` for every weight.
fn backward_kernel<F>(
    topology: &ConvergingTopology,
    forward: &ForwardTrace,
    y: &[f64],
    delta: &mut [Vec<f64>],
    mut sink: F,
) where
    F: FnMut(usize, usize, f64, f64, f64),
{
    let depth = topology.depth();
    for l in (1..=depth).rev() {
        let shape = topology.layer(l);
        let k = shape.fan_in as f64;
        let sqrt_k = k.sqrt();
        let inv_sqrt_k = sqrt_k.recip();
        let ln_scale = (2.0 / sqrt_k).ln();
        let output = l == depth;
        let mu = &forward.mu[l - 1];
        let sigma2 = &forward.sigma2[l - 1];
        let nu_in = &forward.nu[l - 1];
        let means = &forward.weight_mean[l - 1];
        let (below, above) = delta.split_at_mut(l);
        let upstream: &[f64] = if output { y } else { &above[0] };
        let own = &mut below[l - 1];
        for i in 0..shape.width {
            let up = upstream[i];
            let var = sigma2[i];
            let sigma = var.sqrt();
            // ln[(2 / sqrt K) N(0 | m, var)] = ln_norm - m^2 / (2 var)
            let ln_norm = ln_scale + ln_density_at_zero(0.0, var);
            let inv_two_var = 0.5 / var;
            let row = i * shape.fan_in;
            for r in 0..shape.fan_in {
                let idx = row + r;
                let a = nu_in[shape.source(i, r)];
                let m = means[idx];
                let mu_excl = mu[i] - inv_sqrt_k * m * a;
                let exponent = ln_norm - mu_excl * mu_excl * inv_two_var;
                let mut g = if exponent < EXP_UNDERFLOW { 0.0 } else { exponent.exp() };
                if output {
                    let yi = y[i];
                    g /= phi(yi * mu_excl / sigma);
                    if !g.is_finite() {
                        g = -2.0 * yi * mu_excl / (var * sqrt_k) * theta(-yi * mu_excl);
                    }
                }
                let ratio = if shape.dense {
                    if !own.is_empty() {
                        own[idx] = up * tanh_or_zero(g) * m;
                    }
                    up * tanh_or_zero(g * a)
                } else {
                    let tg = tanh_or_zero(g);
                    own[idx] = up * tg * m;
                    up * tg * a
                };
                sink(l, idx, mu_excl, g, ratio);
            }
        }
    }
}

/// Reusable buffers for repeated updates on one topology.
#[derive(Debug, Clone)]
pub struct MfbEngine {
    topology: ConvergingTopology,
    config: MfbConfig,
    forward: ForwardTrace,
    delta: Vec<Vec<f64>>,
}

impl MfbEngine {
    pub fn new(topology: &ConvergingTopology, config: MfbConfig) -> Self {
        Self {
            topology: topology.clone(),
            config,
            forward: ForwardTrace::empty(topology),
            delta: delta_buffers(topology, false),
        }
    }

    pub fn config(&self) -> MfbConfig {
        self.config
    }

    fn check_params(&self, params: &PosteriorParams) -> Result<()> {
        if params.topology() != &self.topology {
            return Err(Error::InvalidTopology(format!(
                "engine built for {}, parameters are {}",
                self.topology,
                params.topology()
            )));
        }
        Ok(())
    }

    /// Forward pass into the engine's buffers.
    pub fn forward(&mut self, params: &PosteriorParams, x: &[f64]) -> Result<&ForwardTrace> {
        self.check_params(params)?;
        forward_into(params, x, self.config.eps, &mut self.forward)?;
        Ok(&self.forward)
    }

    /// The trace of the most recent forward pass.
    pub fn last_forward(&self) -> &ForwardTrace {
        &self.forward
    }

    /// One in-place online update. Equivalent to [`update_step`] without
    /// materializing the backward trace.
    ///
    /// Every quantity the backward pass reads (`tanh(h)`, `nu`, `mu`, `sigma^2`,
    /// upstream deltas) is taken from the forward trace or from layers already
    /// finished, so writing `h` while descending matches a simultaneous update.
    pub fn step(&mut self, params: &mut PosteriorParams, sample: &LabeledSample) -> Result<()> {
        self.check_params(params)?;
        sample.check(&self.topology)?;
        forward_into(params, &sample.x, self.config.eps, &mut self.forward)?;
        backward_kernel(
            &self.topology,
            &self.forward,
            &sample.y,
            &mut self.delta,
            |l, idx, _, _, r| params.layer_mut(l)[idx] += 0.5 * r,
        );
        Ok(())
    }
}

pub fn forward_pass(
    params: &PosteriorParams,
    x: &[f64],
    config: MfbConfig,
) -> Result<ForwardTrace> {
    let mut trace = ForwardTrace::empty(params.topology());
    forward_into(params, x, config.eps, &mut trace)?;
    Ok(trace)
}

/// Backward pass for `sample` given the forward trace of the same parameters
/// on `sample.x`.
pub fn backward_pass(
    params: &PosteriorParams,
    trace: &ForwardTrace,
    sample: &LabeledSample,
) -> Result<BackwardTrace> {
    let topology = params.topology();
    sample.check(topology)?;
    if trace.nu(0) != sample.x.as_slice() {
        return Err(Error::Config(
            "forward trace was not computed on this sample's input".into(),
        ));
    }
    for (l, shape) in topology.layers().enumerate() {
        check_len("trace weights in layer", shape.weights(), trace.weight_mean[l].len())?;
    }
    let mut out = BackwardTrace::empty(topology);
    let BackwardTrace {
        mu_excl,
        g,
        delta,
        r,
    } = &mut out;
    backward_kernel(topology, trace, &sample.y, delta, |l, idx, me, gv, rv| {
        mu_excl[l - 1][idx] = me;
        g[l - 1][idx] = gv;
        r[l - 1][idx] = rv;
    });
    Ok(out)
}

/// Result of [`update_step`].
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub params: PosteriorParams,
    pub forward: ForwardTrace,
    pub backward: BackwardTrace,
}

/// Forward and backward on the frozen `params`, then `h <- h + R/2`.
pub fn update_step(
    params: &PosteriorParams,
    sample: &LabeledSample,
    config: MfbConfig,
) -> Result<StepOutcome> {
    let forward = forward_pass(params, &sample.x, config)?;
    let backward = backward_pass(params, &forward, sample)?;
    let mut next = params.clone();
    for (l, r) in backward.r.iter().enumerate() {
        for (h, r) in next.layer_mut(l + 1).iter_mut().zip(r) {
            *h += 0.5 * r;
        }
    }
    Ok(StepOutcome {
        params: next,
        forward,
        backward,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn topo(w: &[usize]) -> ConvergingTopology {
        ConvergingTopology::new(w).unwrap()
    }

    fn params(w: &[usize], h: Vec<Vec<f64>>) -> PosteriorParams {
        PosteriorParams::from_layers(&topo(w), h).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn single_layer_forward() {
        let p = params(&[2, 1], vec![vec![1.0, -1.0]]);
        let f = forward_pass(&p, &[1.0, -1.0], MfbConfig::default()).unwrap();
        close(f.mu(1)[0], 1.077_056_784_376_732_7, 1e-14);
        close(f.sigma2(1)[0], 0.419_974_341_614_026_3, 1e-14);
        close(f.output()[0], 0.903_484_311_448_792_8, 1e-14);
    }

    #[test]
    fn single_layer_zero_fields() {
        let p = params(&[2, 1], vec![vec![0.0, 0.0]]);
        let s = LabeledSample::new(vec![1.0, 0.5], vec![1.0]).unwrap();
        let out = update_step(&p, &s, MfbConfig::default()).unwrap();
        assert_eq!(out.forward.mu(1)[0], 0.0);
        close(out.forward.sigma2(1)[0], 0.625, 1e-15);
        assert_eq!(out.forward.output()[0], 0.0);
        close(out.backward.g(1)[0], 1.427_299_292_922_216, 1e-13);
        close(out.backward.r(1)[0], 0.891_111_806_646_452, 1e-14);
        close(out.backward.r(1)[1], 0.612_960_331_017_61, 1e-14);
        // Delta on layer 1: y tanh(G) tanh(h) with h = 0.
        assert_eq!(out.backward.delta(1), &[0.0, 0.0]);
    }

    #[test]
    fn two_layer_step_matches_reference() {
        let h = vec![vec![0.3, -0.7, 1.2, 0.05, -0.4, 0.9, -1.5, 0.2], vec![0.6, -0.25]];
        let p = params(&[4, 2, 1], h);
        let s = LabeledSample::new(vec![1.0, -0.5, 0.25, 2.0], vec![-1.0]).unwrap();
        let out = update_step(&p, &s, MfbConfig::default()).unwrap();
        close(out.forward.nu(1)[0], 0.310_848_446_555_077_26, 1e-14);
        close(out.forward.nu(1)[1], -0.204_454_705_375_560_87, 1e-14);
        close(out.forward.output()[0], 0.122_888_670_489_762_96, 1e-14);
        let r1 = [
            -0.145_403_325_685_291_4,
            0.074_871_735_520_976_12,
            -0.037_262_629_361_726_33,
            -0.257_286_839_986_284_77,
            0.071_944_754_726_278_68,
            -0.037_090_221_501_343_05,
            0.018_555_346_414_350_395,
            0.119_949_067_553_489_82,
        ];
        let r2 = [-0.256_185_239_865_535_3, 0.173_269_851_187_631_6];
        for (a, b) in out.backward.r(1).iter().zip(&r1) {
            close(*a, *b, 1e-13);
        }
        for (a, b) in out.backward.r(2).iter().zip(&r2) {
            close(*a, *b, 1e-13);
        }
        for (l, r) in out.backward.r_layers().iter().enumerate() {
            for ((new, old), r) in out.params.layer(l + 1).iter().zip(p.layer(l + 1)).zip(r) {
                assert_eq!(*new, old + 0.5 * r);
            }
        }
    }

    #[test]
    fn underflow_shortcuts_are_exact() {
        assert_eq!(EXP_UNDERFLOW.exp().to_bits(), 0.0f64.to_bits());
        assert_eq!((EXP_UNDERFLOW - 1e3).exp().to_bits(), 0.0f64.to_bits());
        for z in [0.0, -0.0] {
            assert_eq!(tanh_or_zero(z).to_bits(), tanh_expm1(z).to_bits());
        }
        assert_eq!(tanh_or_zero(0.3), tanh_expm1(0.3));
    }

    #[test]
    fn zero_fields_are_a_fixed_point() {
        let t = topo(&[6, 3, 1]);
        let p = PosteriorParams::zeros(&t);
        let s = LabeledSample::new(vec![1.0, -1.0, 0.5, 2.0, -0.25, 1.0], vec![1.0]).unwrap();
        let out = update_step(&p, &s, MfbConfig::default()).unwrap();
        assert!(out.backward.r_layers().iter().flatten().all(|&r| r == 0.0));
        assert_eq!(out.params, p);
    }

    #[test]
    fn engine_step_equals_simultaneous_update() {
        let t = topo(&[8, 4, 2, 1]);
        let mut p = PosteriorParams::init_prior(&t, 17);
        let mut engine = MfbEngine::new(&t, MfbConfig::default());
        let xs = [
            vec![1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 1.0, -1.0],
            vec![0.5, 2.0, -1.5, 0.0, 1.0, -0.25, 0.75, 1.0],
            vec![-1.0, -1.0, 1.0, -1.0, 1.0, 1.0, 1.0, 1.0],
        ];
        for (n, x) in xs.iter().enumerate() {
            let y = if n % 2 == 0 { 1.0 } else { -1.0 };
            let s = LabeledSample::new(x.clone(), vec![y]).unwrap();
            let reference = update_step(&p, &s, MfbConfig::default()).unwrap().params;
            engine.step(&mut p, &s).unwrap();
            assert_eq!(p, reference);
        }
    }

    #[test]
    fn exclusion_identity() {
        let t = topo(&[6, 3, 1]);
        let p = PosteriorParams::init_prior(&t, 5);
        let s = LabeledSample::new(vec![0.5, -1.0, 1.5, 1.0, -0.5, 0.25], vec![-1.0]).unwrap();
        let out = update_step(&p, &s, MfbConfig::default()).unwrap();
        for shape_l in 1..=t.depth() {
            let shape = t.layer(shape_l);
            let nu = out.forward.nu(shape_l - 1);
            for i in 0..shape.width {
                for r in 0..shape.fan_in {
                    let idx = i * shape.fan_in + r;
                    let back = out.backward.mu_excl(shape_l)[idx]
                        + p.layer(shape_l)[idx].tanh() * nu[shape.source(i, r)]
                            / (shape.fan_in as f64).sqrt();
                    close(back, out.forward.mu(shape_l)[i], 1e-12);
                }
            }
        }
    }

    #[test]
    fn surprising_label_guard_is_positive_for_both_labels() {
        // Nearly certain weights: output far from the label makes Phi underflow.
        for y in [1.0, -1.0] {
            let p = params(&[3, 1], vec![vec![-30.0 * y, -30.0 * y, -30.0 * y]]);
            let s = LabeledSample::new(vec![1.0, 1.0, 1.0], vec![y]).unwrap();
            let out = update_step(&p, &s, MfbConfig::default()).unwrap();
            for (&g, &r) in out.backward.g(1).iter().zip(out.backward.r(1)) {
                assert!(g.is_finite() && g > 0.0, "g = {g}");
                assert_eq!(r.signum(), y);
            }
        }
    }

    #[test]
    fn certain_consistent_posterior_does_not_move() {
        let p = params(&[3, 1], vec![vec![30.0, 30.0, -30.0]]);
        let s = LabeledSample::new(vec![1.0, 1.0, -1.0], vec![1.0]).unwrap();
        let out = update_step(&p, &s, MfbConfig::default()).unwrap();
        assert!(out.backward.r(1).iter().all(|r| r.abs() < 1e-8));
    }

    #[test]
    fn rejects_mismatched_trace_and_bad_eps() {
        let t = topo(&[2, 1]);
        let p = PosteriorParams::zeros(&t);
        let f = forward_pass(&p, &[1.0, 1.0], MfbConfig::default()).unwrap();
        let s = LabeledSample::new(vec![1.0, -1.0], vec![1.0]).unwrap();
        assert!(backward_pass(&p, &f, &s).is_err());
        assert!(MfbConfig::with_eps(-1.0).is_err());
        assert!(MfbConfig::with_eps(f64::NAN).is_err());
        assert!(LabeledSample::new(vec![1.0], vec![0.5]).is_err());
    }

    #[test]
    fn engine_rejects_foreign_topology() {
        let mut engine = MfbEngine::new(&topo(&[4, 2, 1]), MfbConfig::default());
        let mut p = PosteriorParams::zeros(&topo(&[4, 1]));
        let s = LabeledSample::new(vec![1.0; 4], vec![1.0]).unwrap();
        assert!(engine.step(&mut p, &s).is_err());
    }
}
