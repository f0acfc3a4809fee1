//! Verification suites: numerical invariants of the update, oracle studies,
//! the baseline gradient check, packed-evaluator equivalence and a scaling
//! measurement. Each suite returns a [`SuiteReport`]; [`run_all`] runs them in
//! sequence.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::backprop::{gradient, loss, RealNetParams};
use crate::binary::BinaryWeights;
use crate::bitpack::{pack, packed_eval};
use crate::error::Result;
use crate::mfb::{update_step, LabeledSample, MfbConfig, MfbEngine};
use crate::oracle::{
    all_weights, exact_excluded_moments, exact_likelihood_ratio, exact_likelihoods,
    mc_forward_check, recursive_likelihood_ratio, recursive_likelihoods, LogRatio,
};
use crate::posterior::{weight_mean, weight_moments, weight_variance, PosteriorParams};
use crate::predictor::{bmnn_eval, bmnn_output_sums};
use crate::topology::ConvergingTopology;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: String,
    /// Number of individual comparisons made.
    pub checked: usize,
    /// Number of comparisons that missed their tolerance.
    pub failures: usize,
    pub passed: bool,
    pub detail: String,
}

impl SuiteReport {
    fn strict(name: &str, checked: usize, failures: usize, detail: String) -> Self {
        Self {
            name: name.into(),
            checked,
            failures,
            passed: checked > 0 && failures == 0,
            detail,
        }
    }
}

/// One weight of one oracle instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleRow {
    pub instance: String,
    pub exact: f64,
    pub engine: f64,
    /// Empty when the case is outside the study's filter.
    pub agree: Option<bool>,
}

pub fn write_oracle_csv(rows: &[OracleRow], out: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_error(e: csv::Error) -> crate::error::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => io.into(),
        other => crate::error::Error::Format(format!("csv: {other:?}")),
    }
}

fn topo(widths: &[usize]) -> ConvergingTopology {
    ConvergingTopology::new(widths).expect("suite architectures are valid")
}

fn random_fields(t: &ConvergingTopology, rng: &mut impl Rng, lo: f64, hi: f64) -> PosteriorParams {
    let h = t
        .layers()
        .map(|s| (0..s.weights()).map(|_| rng.random_range(lo..hi)).collect())
        .collect();
    PosteriorParams::from_layers(t, h).expect("finite fields")
}

fn random_pm(rng: &mut impl Rng) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

fn random_sample(t: &ConvergingTopology, rng: &mut impl Rng, scale: f64) -> LabeledSample {
    let x = (0..t.input_dim()).map(|_| rng.random_range(-scale..scale)).collect();
    let y = (0..t.output_dim()).map(|_| random_pm(rng)).collect();
    LabeledSample { x, y }
}

fn random_binary(t: &ConvergingTopology, rng: &mut impl Rng) -> BinaryWeights {
    let layers = t
        .layers()
        .map(|s| (0..s.weights()).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect())
        .collect();
    BinaryWeights::new(t.clone(), layers).expect("valid shapes")
}

fn mixed_architectures() -> Vec<ConvergingTopology> {
    [
        &[5, 5, 1][..],
        &[6, 3, 1],
        &[8, 4, 2, 1],
        &[10, 10, 2],
        &[7, 1],
        &[12, 6, 3],
        &[9, 9, 3],
        &[20, 12, 4, 2],
    ]
    .iter()
    .map(|w| topo(w))
    .collect()
}

fn relative_gap(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// `R` on `(c x, y)` equals `R` on `(x, y)` for `c` in `[0.5, 2]`.
pub fn amplitude_invariance(eps: f64, rel_tol: f64, instances: usize, seed: u64) -> Result<SuiteReport> {
    let config = MfbConfig::with_eps(eps)?;
    let archs = mixed_architectures();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut checked, mut failures, mut worst) = (0, 0, 0.0f64);
    for n in 0..instances {
        let t = &archs[n % archs.len()];
        let p = random_fields(t, &mut rng, -2.0, 2.0);
        let s = random_sample(t, &mut rng, 1.5);
        let c = rng.random_range(0.5..=2.0);
        let scaled = LabeledSample {
            x: s.x.iter().map(|v| c * v).collect(),
            y: s.y.clone(),
        };
        let a = update_step(&p, &s, config)?;
        let b = update_step(&p, &scaled, config)?;
        for (ra, rb) in a.backward.r_layers().iter().flatten().zip(b.backward.r_layers().iter().flatten()) {
            let gap = relative_gap(*ra, *rb);
            worst = worst.max(gap);
            checked += 1;
            failures += usize::from(!(gap <= rel_tol));
        }
    }
    Ok(SuiteReport::strict(
        &format!("amplitude invariance (eps={eps:e})"),
        checked,
        failures,
        format!("max relative gap {worst:.3e}, tolerance {rel_tol:e}"),
    ))
}

/// All-zero fields on networks with two or more layers give `R = 0` exactly.
pub fn zero_init_fixed_point(instances: usize, seed: u64) -> Result<SuiteReport> {
    let archs: Vec<_> = mixed_architectures().into_iter().filter(|t| t.depth() >= 2).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut checked, mut failures) = (0, 0);
    for n in 0..instances {
        let t = &archs[n % archs.len()];
        let p = PosteriorParams::zeros(t);
        let s = random_sample(t, &mut rng, 3.0);
        let out = update_step(&p, &s, MfbConfig::default())?;
        for &r in out.backward.r_layers().iter().flatten() {
            checked += 1;
            failures += usize::from(r != 0.0);
        }
        checked += 1;
        failures += usize::from(out.params != p);
    }
    Ok(SuiteReport::strict("zero-init fixed point", checked, failures, "R == 0 exactly".into()))
}

/// Fields `30 W*` with a sample that `W*` classifies with margin, so that every
/// excluded output mean still agrees with the label.
fn certain_consistent_instance(
    t: &ConvergingTopology,
    rng: &mut impl Rng,
) -> Option<(PosteriorParams, LabeledSample)> {
    let w = random_binary(t, rng);
    let x: Vec<f64> = (0..t.input_dim()).map(|_| random_pm(rng)).collect();
    // Integer sums layer by layer; any hidden tie disqualifies the draw.
    let mut act = x.clone();
    for l in 1..=t.depth() {
        let shape = t.layer(l);
        let sums: Vec<f64> = (0..shape.width)
            .map(|i| {
                (0..shape.fan_in)
                    .map(|r| f64::from(w.layer(l)[i * shape.fan_in + r]) * act[shape.source(i, r)])
                    .sum()
            })
            .collect();
        if sums.iter().any(|&s| s == 0.0) {
            return None;
        }
        if l == t.depth() {
            for (i, &s) in sums.iter().enumerate() {
                for r in 0..shape.fan_in {
                    let term = f64::from(w.layer(l)[i * shape.fan_in + r]) * act[shape.source(i, r)];
                    if s.signum() * (s - term) <= 0.0 {
                        return None;
                    }
                }
            }
            let y = sums.iter().map(|s| s.signum()).collect();
            let h = w.layers().iter().map(|l| l.iter().map(|&v| 30.0 * f64::from(v)).collect()).collect();
            let p = PosteriorParams::from_layers(t, h).expect("finite");
            return Some((p, LabeledSample { x, y }));
        }
        act = sums.iter().map(|s| s.signum()).collect();
    }
    None
}

pub fn certain_consistent_fixed_point(instances: usize, seed: u64) -> Result<SuiteReport> {
    let archs = [topo(&[7, 1]), topo(&[9, 1]), topo(&[5, 5, 1]), topo(&[7, 7, 1]), topo(&[9, 3, 1])];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut checked, mut failures, mut worst, mut found) = (0, 0, 0.0f64, 0);
    let mut attempts = 0;
    while found < instances && attempts < instances * 1000 {
        attempts += 1;
        let t = &archs[attempts % archs.len()];
        let Some((p, s)) = certain_consistent_instance(t, &mut rng) else {
            continue;
        };
        found += 1;
        let out = update_step(&p, &s, MfbConfig::default())?;
        for &r in out.backward.r_layers().iter().flatten() {
            worst = worst.max(r.abs());
            checked += 1;
            failures += usize::from(!(r.abs() < 1e-8));
        }
    }
    let mut report = SuiteReport::strict(
        "certain-consistent fixed point",
        checked,
        failures,
        format!("{found} instances, max |R| {worst:.3e}"),
    );
    report.passed &= found == instances;
    Ok(report)
}

/// Engine excluded means against direct sums over the fan-in minus one weight.
pub fn exclusion_identity(instances: usize, seed: u64) -> Result<SuiteReport> {
    let mut archs = mixed_architectures();
    archs.push(topo(&[101, 20, 4]));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut checked, mut failures, mut worst) = (0, 0, 0.0f64);
    for n in 0..instances {
        let t = &archs[n % archs.len()];
        let p = random_fields(t, &mut rng, -4.0, 4.0);
        let s = random_sample(t, &mut rng, 2.0);
        let out = update_step(&p, &s, MfbConfig::default())?;
        for w in all_weights(t) {
            let direct = exact_excluded_moments(&p, &out.forward, w)?;
            let gap = (direct.mean - out.backward.mu_excl(w.layer)[w.offset(t)]).abs();
            worst = worst.max(gap);
            checked += 1;
            failures += usize::from(!(gap <= 1e-12));
            // Dropping a nonnegative term can only shrink the variance.
            checked += 1;
            failures += usize::from(!(direct.variance <= out.forward.sigma2(w.layer)[w.neuron]));
        }
    }
    Ok(SuiteReport::strict(
        "exclusion identity",
        checked,
        failures,
        format!("max |difference| {worst:.3e}, tolerance 1e-12"),
    ))
}

fn adversarial_input(rng: &mut impl Rng) -> f64 {
    match rng.random_range(0..6) {
        0 => 0.0,
        1 => random_pm(rng),
        2 => random_pm(rng) * 1e3,
        3 => random_pm(rng) * 1e-6,
        4 => rng.random_range(-100.0..100.0),
        _ => random_pm(rng) * 1e8,
    }
}

/// Many steps with extreme fields, extreme or zero inputs and contradictory
/// labels. Every stored `h`, `G`, `Delta`, `R` must stay finite and every
/// forward quantity in range.
pub fn nan_freedom(steps: usize, seed: u64) -> Result<SuiteReport> {
    let archs = mixed_architectures();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut checked, mut failures) = (0usize, 0usize);
    let streams = archs.len() * 2;
    let per_stream = steps.div_ceil(streams);
    let mut done = 0;
    for stream in 0..streams {
        let t = &archs[stream % archs.len()];
        let mut p = random_fields(t, &mut rng, -50.0, 50.0);
        let mut last_x: Vec<f64> = (0..t.input_dim()).map(|_| adversarial_input(&mut rng)).collect();
        for _ in 0..per_stream.min(steps - done) {
            // Half the time repeat the previous input with flipped labels.
            let (x, y) = if rng.random::<bool>() {
                let y = (0..t.output_dim()).map(|_| random_pm(&mut rng)).collect();
                (last_x.clone(), y)
            } else {
                let x: Vec<f64> = (0..t.input_dim()).map(|_| adversarial_input(&mut rng)).collect();
                let y = (0..t.output_dim()).map(|_| random_pm(&mut rng)).collect();
                (x, y)
            };
            last_x.clone_from(&x);
            let out = update_step(&p, &LabeledSample { x, y }, MfbConfig::default())?;
            let mut ok = out.params.is_finite();
            for l in 1..=t.depth() {
                ok &= out.backward.g(l).iter().all(|v| v.is_finite());
                ok &= out.backward.delta(l).iter().all(|v| v.is_finite());
                ok &= out.backward.r(l).iter().all(|v| v.is_finite());
                ok &= out.forward.sigma2(l).iter().all(|&v| v > 0.0 && v.is_finite());
                ok &= out.forward.nu(l).iter().all(|v| (-1.0..=1.0).contains(v));
            }
            checked += 1;
            failures += usize::from(!ok);
            p = out.params;
            done += 1;
        }
    }
    Ok(SuiteReport::strict("NaN-freedom", checked, failures, format!("{done} adversarial steps")))
}

/// `mean^2 + variance = 1` for `|h| <= 20`.
pub fn moment_identity() -> SuiteReport {
    let (mut checked, mut failures, mut worst) = (0, 0, 0.0f64);
    for k in -200_000..=200_000 {
        let h = f64::from(k) * 1e-4;
        let (m, v) = weight_moments(h);
        for gap in [
            (m * m + v - 1.0).abs(),
            (weight_mean(h).powi(2) + weight_variance(h) - 1.0).abs(),
            (weight_mean(-h) + weight_mean(h)).abs(),
        ] {
            worst = worst.max(gap);
            checked += 1;
            failures += usize::from(!(gap <= 1e-12));
        }
    }
    SuiteReport::strict(
        "mean^2 + variance = 1",
        checked,
        failures,
        format!("max deviation {worst:.3e} over |h| <= 20"),
    )
}

/// Brute-force enumeration and the layer recursion agree.
pub fn oracle_cross_check(instances: usize, seed: u64) -> Result<SuiteReport> {
    let archs = [topo(&[3, 3, 1]), topo(&[4, 2, 1]), topo(&[6, 2, 1]), topo(&[4, 2, 2, 1]), topo(&[5, 1])];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut checked, mut failures, mut worst) = (0, 0, 0.0f64);
    for n in 0..instances {
        let t = &archs[n % archs.len()];
        let p = random_fields(t, &mut rng, -2.0, 2.0);
        let s = random_sample(t, &mut rng, 1.0);
        for w in all_weights(t) {
            let (a, b) = exact_likelihoods(&p, &s, w)?;
            let (c, d) = recursive_likelihoods(&p, &s, w)?;
            let gap = (a - c).abs().max((b - d).abs());
            worst = worst.max(gap);
            checked += 1;
            failures += usize::from(!(gap <= 1e-12));
        }
    }
    Ok(SuiteReport::strict(
        "oracle routes agree",
        checked,
        failures,
        format!("max |difference| {worst:.3e}"),
    ))
}

/// Minimum share of sign agreements required by [`sign_agreement`].
pub const SIGN_AGREEMENT_TARGET: f64 = 0.9;

/// Exact log-likelihood ratios against engine `R` on `[K, K, 1]` networks with
/// `K` in `{5, 7, 9}`, `h ~ U[-1, 1]`, `x` in `{-1, 1}^K` and a random label.
/// Cases enter the count when both likelihoods are positive and the exact
/// ratio exceeds 0.1 in magnitude.
pub fn sign_agreement(instances: usize, seed: u64) -> Result<(SuiteReport, Vec<OracleRow>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let (mut considered, mut agreed) = (0usize, 0usize);
    for n in 0..instances {
        let k = [5, 7, 9][n % 3];
        let t = topo(&[k, k, 1]);
        let p = random_fields(&t, &mut rng, -1.0, 1.0);
        let x = (0..k).map(|_| random_pm(&mut rng)).collect();
        let s = LabeledSample { x, y: vec![random_pm(&mut rng)] };
        let engine = update_step(&p, &s, MfbConfig::default())?;
        for w in all_weights(&t) {
            let exact = recursive_likelihood_ratio(&p, &s, w)?;
            let r = engine.backward.r(w.layer)[w.offset(&t)];
            let agree = match exact {
                LogRatio::Finite(v) if v.abs() > 0.1 => {
                    considered += 1;
                    let ok = r.signum() == v.signum() && r != 0.0;
                    agreed += usize::from(ok);
                    Some(ok)
                }
                _ => None,
            };
            rows.push(OracleRow {
                instance: format!("sign K={k} n={n} l={} i={} r={}", w.layer, w.neuron + 1, w.slot + 1),
                exact: exact.to_f64(),
                engine: r,
                agree,
            });
        }
    }
    let rate = if considered == 0 { 0.0 } else { agreed as f64 / considered as f64 };
    let report = SuiteReport {
        name: "sign agreement".into(),
        checked: considered,
        failures: considered - agreed,
        passed: instances >= 200 && considered > 0 && rate >= SIGN_AGREEMENT_TARGET,
        detail: format!("{instances} instances, agreement {:.2}% (target >= 90%)", 100.0 * rate),
    };
    Ok((report, rows))
}

/// Single-layer instances where one input outweighs all others, so pinning
/// that weight decides the label and one exact likelihood is 0.
///
/// Even-numbered instances draw moderate fields `h ~ U[-3, 3]`; there `R` must
/// be finite, nonzero and carry the sign of the divergent ratio. Odd-numbered
/// instances use nearly certain fields (`15 <= |h| <= 30`), which drives the
/// output-layer guard. There `R` must be finite and never point against the
/// ratio. When the other weights already agree with the label, `G` underflows
/// to 0 and `R = 0` by construction; those zeros are counted separately,
/// split by whether the clipped network already outputs the label.
pub fn certainty_divergence(instances: usize, seed: u64) -> Result<(SuiteReport, Vec<OracleRow>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut tally = DivergenceTally::default();
    for n in 0..instances {
        let k = 2 + n % 5;
        let t = topo(&[k, 1]);
        let certain = n % 2 == 1;
        let p = if certain {
            let h = vec![(0..k).map(|_| random_pm(&mut rng) * rng.random_range(15.0..30.0)).collect()];
            PosteriorParams::from_layers(&t, h)?
        } else {
            random_fields(&t, &mut rng, -3.0, 3.0)
        };
        let mut x: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dominant = rng.random_range(0..k);
        let rest: f64 = x.iter().enumerate().filter(|&(r, _)| r != dominant).map(|(_, v)| v.abs()).sum();
        x[dominant] = random_pm(&mut rng) * (rest + rng.random_range(0.1..1.0));
        let s = LabeledSample { x, y: vec![random_pm(&mut rng)] };
        let engine = update_step(&p, &s, MfbConfig::default())?;
        let map_agrees = f64::from(bmnn_eval(&p.clip_map(), &s.x)?[0]) == s.y[0];
        for w in all_weights(&t) {
            let exact = exact_likelihood_ratio(&p, &s, w)?;
            let r = engine.backward.r(1)[w.slot];
            let agree = exact.is_infinite().then(|| tally.record(r, exact, certain, map_agrees));
            rows.push(OracleRow {
                instance: format!("certainty K={k} n={n} r={}", w.slot + 1),
                exact: exact.to_f64(),
                engine: r,
                agree,
            });
        }
    }
    let t = &tally;
    let failures = t.non_finite + t.opposite + t.moderate_zero;
    let report = SuiteReport {
        name: "certainty divergence".into(),
        checked: t.divergent,
        failures,
        passed: t.divergent > 0 && t.moderate > 0 && t.certain > 0 && failures == 0,
        detail: format!(
            "{} divergent ratios: {} non-finite, {} opposite sign; moderate fields {}/{} sign-correct; \
             certain fields {}/{} sign-correct, R = 0 on {} already-consistent and {} surprising samples",
            t.divergent,
            t.non_finite,
            t.opposite,
            t.moderate - t.moderate_zero,
            t.moderate,
            t.certain - t.consistent_zero - t.surprising_zero,
            t.certain,
            t.consistent_zero,
            t.surprising_zero,
        ),
    };
    Ok((report, rows))
}

#[derive(Debug, Default)]
struct DivergenceTally {
    divergent: usize,
    non_finite: usize,
    opposite: usize,
    moderate: usize,
    moderate_zero: usize,
    certain: usize,
    consistent_zero: usize,
    surprising_zero: usize,
}

impl DivergenceTally {
    /// Returns whether `r` is finite, nonzero and sign-correct.
    fn record(&mut self, r: f64, exact: LogRatio, certain: bool, map_agrees: bool) -> bool {
        self.divergent += 1;
        if certain {
            self.certain += 1;
        } else {
            self.moderate += 1;
        }
        if !r.is_finite() {
            self.non_finite += 1;
            return false;
        }
        if r == 0.0 {
            match (certain, map_agrees) {
                (false, _) => self.moderate_zero += 1,
                (true, true) => self.consistent_zero += 1,
                (true, false) => self.surprising_zero += 1,
            }
            return false;
        }
        let ok = Some(r.signum()) == exact.sign();
        self.opposite += usize::from(!ok);
        ok
    }
}

/// Monte-Carlo means of a `[21, 21, 1]` network against the forward pass:
/// `|empirical - nu| <= max(0.05, 4 stderr)` per neuron.
pub fn monte_carlo_forward(samples: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = topo(&[21, 21, 1]);
    let (mut checked, mut failures, mut worst) = (0, 0, 0.0f64);
    for trial in 0..3u64 {
        let p = random_fields(&t, &mut rng, -1.0, 1.0);
        let x: Vec<f64> = (0..21).map(|_| random_pm(&mut rng)).collect();
        let trace = crate::mfb::forward_pass(&p, &x, MfbConfig::default())?;
        let mc = mc_forward_check(&p, &x, samples, seed.wrapping_add(trial))?;
        for l in 1..=t.depth() {
            for (i, &nu) in trace.nu(l).iter().enumerate() {
                let gap = (mc.mean[l - 1][i] - nu).abs();
                worst = worst.max(gap);
                checked += 1;
                failures += usize::from(!(gap <= 0.05f64.max(4.0 * mc.stderr[l - 1][i])));
            }
        }
    }
    Ok(SuiteReport::strict(
        "Monte-Carlo forward check",
        checked,
        failures,
        format!("n={samples} per network, max |empirical - nu| {worst:.4}"),
    ))
}

/// Relative error `|a - b| / max(|a|, |b|, floor)`; below the floor the
/// comparison is effectively absolute.
pub const GRADIENT_FLOOR: f64 = 1e-4;

/// Analytic baseline gradients against central differences with step `1e-5`
/// on random `4 x 4 x 1` networks.
pub fn gradient_check(instances: usize, seed: u64) -> Result<SuiteReport> {
    let t = topo(&[4, 4, 1]);
    let step = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut checked, mut failures, mut worst) = (0, 0, 0.0f64);
    for n in 0..instances {
        let mut p = RealNetParams::init(&t, 0.1, seed.wrapping_add(n as u64));
        let s = random_sample(&t, &mut rng, 1.0);
        let analytic = gradient(&p, &s)?;
        for l in 1..=t.depth() {
            for idx in 0..t.layer(l).weights() {
                let orig = p.layer(l)[idx];
                p.layer_mut(l)[idx] = orig + step;
                let up = loss(&p, &s)?;
                p.layer_mut(l)[idx] = orig - step;
                let down = loss(&p, &s)?;
                p.layer_mut(l)[idx] = orig;
                let numeric = (up - down) / (2.0 * step);
                let a = analytic[l - 1][idx];
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRADIENT_FLOOR);
                worst = worst.max(err);
                checked += 1;
                failures += usize::from(!(err <= 1e-5));
            }
        }
    }
    Ok(SuiteReport::strict(
        "baseline gradient check",
        checked,
        failures,
        format!("{instances} networks, max relative error {worst:.3e}"),
    ))
}

/// Packed evaluation against the reference evaluator, including even fan-in
/// (ties) and rows longer than one 64-bit word.
pub fn packed_equivalence(pairs: usize, seed: u64) -> Result<SuiteReport> {
    let archs = [
        topo(&[7, 7, 1]),
        topo(&[6, 6, 1]),
        topo(&[8, 4, 2]),
        topo(&[12, 6, 3, 1]),
        topo(&[65, 13, 1]),
        topo(&[30, 130, 2]),
        topo(&[3, 1]),
        topo(&[4, 64, 1]),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut checked, mut failures) = (0, 0);
    for n in 0..pairs {
        let t = &archs[n % archs.len()];
        let w = random_binary(t, &mut rng);
        let x: Vec<f64> = match n % 3 {
            0 => (0..t.input_dim()).map(|_| random_pm(&mut rng)).collect(),
            1 => (0..t.input_dim()).map(|_| rng.random_range(-2.0..2.0)).collect(),
            _ => (0..t.input_dim()).map(|_| f64::from(rng.random_range(-1i8..=1))).collect(),
        };
        let packed = pack(&w);
        checked += 1;
        let same = packed_eval(&packed, &x)? == bmnn_eval(&w, &x)?
            && packed.output_sums(&x)? == bmnn_output_sums(&w, &x)?
            && packed.unpack() == w;
        failures += usize::from(!same);
    }
    Ok(SuiteReport::strict(
        "bit-packed equivalence",
        checked,
        failures,
        format!("{pairs} random (network, input) pairs"),
    ))
}

/// Mean wall time of one fused update per architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingPoint {
    pub architecture: String,
    pub weights: usize,
    pub seconds_per_step: f64,
}

/// Times [`MfbEngine::step`] on each architecture for at least `budget`.
pub fn time_updates(architectures: &[ConvergingTopology], budget: Duration, seed: u64) -> Result<Vec<ScalingPoint>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    for t in architectures {
        let mut p = PosteriorParams::init_prior(t, seed);
        let samples: Vec<LabeledSample> = (0..16).map(|_| random_sample(t, &mut rng, 1.0)).collect();
        let mut engine = MfbEngine::new(t, MfbConfig::default());
        for s in &samples {
            engine.step(&mut p, s)?;
        }
        let start = Instant::now();
        let mut steps = 0usize;
        while start.elapsed() < budget || steps < 32 {
            engine.step(&mut p, &samples[steps % samples.len()])?;
            steps += 1;
        }
        points.push(ScalingPoint {
            architecture: t.to_string(),
            weights: t.weight_count(),
            seconds_per_step: start.elapsed().as_secs_f64() / steps as f64,
        });
    }
    Ok(points)
}

/// Least-squares slope of `ln(time)` against `ln(weights)`.
pub fn log_log_slope(points: &[ScalingPoint]) -> f64 {
    let xs: Vec<f64> = points.iter().map(|p| (p.weights as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.seconds_per_step.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

/// Architectures `785 x H x 10` for `H` in `{10, 100, 1000}`, spanning 100x in weights.
pub fn scaling_architectures() -> Vec<ConvergingTopology> {
    [10, 100, 1000].iter().map(|&h| topo(&[785, h, 10])).collect()
}

pub fn complexity(budget: Duration, seed: u64) -> Result<SuiteReport> {
    let points = time_updates(&scaling_architectures(), budget, seed)?;
    let slope = log_log_slope(&points);
    let table = points
        .iter()
        .map(|p| format!("{}: {} weights {:.3e} s", p.architecture, p.weights, p.seconds_per_step))
        .collect::<Vec<_>>()
        .join("; ");
    let ok = (0.8..=1.2).contains(&slope);
    Ok(SuiteReport {
        name: "linear update cost".into(),
        checked: points.len(),
        failures: usize::from(!ok),
        passed: ok,
        detail: format!("log-log slope {slope:.3} (target [0.8, 1.2]); {table}"),
    })
}

/// Sizes of every suite. [`VerifyConfig::default`] is the full gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerifyConfig {
    pub seed: u64,
    pub instances: usize,
    pub nan_steps: usize,
    pub oracle_instances: usize,
    pub mc_samples: usize,
    pub gradient_instances: usize,
    pub packed_pairs: usize,
    /// Per-architecture timing budget in milliseconds; 0 skips the scaling suite.
    pub timing_ms: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seed: 2014,
            instances: 200,
            nan_steps: 100_000,
            oracle_instances: 240,
            mc_samples: 100_000,
            gradient_instances: 100,
            packed_pairs: 10_000,
            timing_ms: 400,
        }
    }
}

/// All suite reports plus the oracle rows behind the two oracle studies.
#[derive(Debug, Clone)]
pub struct Verification {
    pub suites: Vec<SuiteReport>,
    pub oracle_rows: Vec<OracleRow>,
}

impl Verification {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }
}

pub fn run_all(config: &VerifyConfig) -> Result<Verification> {
    let seed = config.seed;
    let mut suites = vec![
        amplitude_invariance(0.0, 1e-9, config.instances, seed)?,
        amplitude_invariance(crate::mfb::DEFAULT_EPS, 1e-6, config.instances, seed + 1)?,
        zero_init_fixed_point(config.instances, seed + 2)?,
        certain_consistent_fixed_point(config.instances, seed + 3)?,
        exclusion_identity(config.instances, seed + 4)?,
        nan_freedom(config.nan_steps, seed + 5)?,
        moment_identity(),
        oracle_cross_check(config.instances.min(50), seed + 6)?,
    ];
    let (agreement, mut rows) = sign_agreement(config.oracle_instances, seed + 7)?;
    let (divergence, more) = certainty_divergence(config.oracle_instances, seed + 8)?;
    rows.extend(more);
    suites.push(agreement);
    suites.push(divergence);
    suites.push(monte_carlo_forward(config.mc_samples, seed + 9)?);
    suites.push(gradient_check(config.gradient_instances, seed + 10)?);
    suites.push(packed_equivalence(config.packed_pairs, seed + 11)?);
    if config.timing_ms > 0 {
        suites.push(complexity(Duration::from_millis(config.timing_ms), seed + 12)?);
    }
    Ok(Verification {
        suites,
        oracle_rows: rows,
    })
}
