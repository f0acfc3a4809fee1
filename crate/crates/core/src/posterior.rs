//! Factorized weight posterior stored as log-odds parameters.
//!
//! Each binary weight `W` carries a field `h` with
//! `P(W = +1) = e^h / (e^h + e^-h)`, so `<W> = tanh(h)` and
//! `Var(W) = sech^2(h)`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binary::BinaryWeights;
use crate::error::{Error, Result};
use crate::model_io::{ModelDocument, ModelKind};
use crate::topology::ConvergingTopology;

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorParams {
    topology: ConvergingTopology,
    h: Vec<Vec<f64>>,
}

/// Mean of a weight with log-odds `h`.
#[inline]
pub fn weight_mean(h: f64) -> f64 {
    h.tanh()
}

/// Variance `sech^2(h)` of a weight with log-odds `h`.
#[inline]
pub fn weight_variance(h: f64) -> f64 {
    weight_moments(h).1
}

/// `(tanh(h), sech^2(h))` from a single exponential.
///
/// With `t = e^{-2|h|}`: `tanh|h| = (1 - t) / (1 + t)` and
/// `sech^2 h = 4t / (1 + t)^2`. Small `|h|` goes through `expm1` so `1 - t`
/// keeps its precision; large `|h|` keeps `t` itself so the variance tail is
/// not rounded away.
#[inline]
pub fn weight_moments(h: f64) -> (f64, f64) {
    let a = h.abs();
    let (one_minus_t, t) = if a < 0.5 {
        let u = (-2.0 * a).exp_m1();
        (-u, 1.0 + u)
    } else {
        let t = (-2.0 * a).exp();
        (1.0 - t, t)
    };
    let d = 1.0 + t;
    ((one_minus_t / d).copysign(h), 4.0 * t / (d * d))
}

/// `tanh` through one `expm1`; cheaper than `f64::tanh` on common targets and
/// within a few ulp of it.
#[inline]
pub(crate) fn tanh_expm1(z: f64) -> f64 {
    let u = (-2.0 * z.abs()).exp_m1();
    (-u / (2.0 + u)).copysign(z)
}

impl PosteriorParams {
    /// All-zero (uniform) posterior.
    pub fn zeros(topology: &ConvergingTopology) -> Self {
        let h = topology.layers().map(|s| vec![0.0; s.weights()]).collect();
        Self {
            topology: topology.clone(),
            h,
        }
    }

    pub fn from_layers(topology: &ConvergingTopology, h: Vec<Vec<f64>>) -> Result<Self> {
        if h.len() != topology.depth() {
            return Err(Error::DimensionMismatch {
                what: "posterior layers",
                expected: topology.depth(),
                actual: h.len(),
            });
        }
        for (shape, layer) in topology.layers().zip(&h) {
            if layer.len() != shape.weights() {
                return Err(Error::DimensionMismatch {
                    what: "posterior weights in layer",
                    expected: shape.weights(),
                    actual: layer.len(),
                });
            }
            if layer.iter().any(|v| !v.is_finite()) {
                return Err(Error::Format("posterior parameters must be finite".into()));
            }
        }
        Ok(Self {
            topology: topology.clone(),
            h,
        })
    }

    /// Prior with `h ~ U[-sqrt(3/K_l), sqrt(3/K_l)]` i.i.d., i.e. unit standard
    /// deviation after scaling by `sqrt(K_l)`.
    pub fn init_prior(topology: &ConvergingTopology, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = topology
            .layers()
            .map(|s| {
                let a = (3.0 / s.fan_in as f64).sqrt();
                (0..s.weights()).map(|_| rng.random_range(-a..=a)).collect()
            })
            .collect();
        Self {
            topology: topology.clone(),
            h,
        }
    }

    pub fn topology(&self) -> &ConvergingTopology {
        &self.topology
    }

    /// Log-odds of layer `l` (1-based), row-major `V_l x K_l`.
    pub fn layer(&self, layer: usize) -> &[f64] {
        &self.h[layer - 1]
    }

    pub fn layer_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.h[layer - 1]
    }

    pub fn layers(&self) -> &[Vec<f64>] {
        &self.h
    }

    /// `h` of slot `slot` of neuron `neuron` in layer `layer` (0-based neuron/slot).
    pub fn get(&self, layer: usize, neuron: usize, slot: usize) -> f64 {
        let k = self.topology.fan_in(layer);
        self.h[layer - 1][neuron * k + slot]
    }

    pub fn set(&mut self, layer: usize, neuron: usize, slot: usize, value: f64) {
        let k = self.topology.fan_in(layer);
        self.h[layer - 1][neuron * k + slot] = value;
    }

    pub fn scaled(&self, c: f64) -> Self {
        let h = self
            .h
            .iter()
            .map(|layer| layer.iter().map(|v| v * c).collect())
            .collect();
        Self {
            topology: self.topology.clone(),
            h,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.h.iter().flatten().all(|v| v.is_finite())
    }

    /// MAP weights `sign(h)`, with `sign(0) = +1`.
    pub fn clip_map(&self) -> BinaryWeights {
        BinaryWeights::from_signs(&self.topology, &self.h)
    }

    pub fn to_document(&self) -> ModelDocument {
        ModelDocument::new(ModelKind::MfbPosterior, &self.topology, self.h.clone())
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        doc.expect_kind(ModelKind::MfbPosterior)?;
        let topology = doc.topology()?;
        Self::from_layers(&topology, doc.layers.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_document().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_document(&ModelDocument::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tanh_expm1_matches_std() {
        for k in -40_000..=40_000 {
            let z = f64::from(k) * 1e-3;
            let (a, b) = (tanh_expm1(z), z.tanh());
            assert!((a - b).abs() <= 4.0 * f64::EPSILON * b.abs().max(f64::MIN_POSITIVE), "{z}");
        }
        assert_eq!(tanh_expm1(0.0), 0.0);
        assert_eq!(tanh_expm1(1e-300), 1e-300);
        assert_eq!(tanh_expm1(800.0), 1.0);
    }

    fn topo(w: &[usize]) -> ConvergingTopology {
        ConvergingTopology::new(w).unwrap()
    }

    #[test]
    fn prior_range_and_spread() {
        let t = topo(&[3, 100_000 / 3 * 3, 3]);
        let p = PosteriorParams::init_prior(&t, 11);
        // Layer 2 has K = V_1 / V_2; layer 1 has K = 3.
        let l1 = p.layer(1);
        assert!(l1.iter().all(|v| v.abs() <= 1.0));
        let n = l1.len() as f64;
        let mean = l1.iter().sum::<f64>() / n;
        let std = (l1.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let expected = 1.0 / 3f64.sqrt();
        assert!((std / expected - 1.0).abs() < 0.01, "std {std}");
    }

    #[test]
    fn prior_range_wide_fan_in() {
        let t = topo(&[785, 10]);
        let p = PosteriorParams::init_prior(&t, 3);
        let a = (3.0f64 / 785.0).sqrt();
        assert!((a - 0.0618).abs() < 5e-5);
        assert!(p.layer(1).iter().all(|v| v.abs() <= a));
        let max = p.layer(1).iter().fold(0f64, |m, v| m.max(v.abs()));
        assert!(max > 0.99 * a);
    }

    #[test]
    fn prior_is_deterministic() {
        let t = topo(&[7, 7, 1]);
        assert_eq!(
            PosteriorParams::init_prior(&t, 5),
            PosteriorParams::init_prior(&t, 5)
        );
        assert_ne!(
            PosteriorParams::init_prior(&t, 5),
            PosteriorParams::init_prior(&t, 6)
        );
    }

    #[test]
    fn mean_values() {
        assert_eq!(weight_mean(0.0), 0.0);
        assert!((weight_mean(50.0) - 1.0).abs() < 1e-15);
        assert!((weight_mean(1.0) - 0.761_594_155_955_764_9).abs() < 1e-15);
        assert_eq!(weight_mean(-0.37), -weight_mean(0.37));
    }

    #[test]
    fn fused_moments_agree_with_tanh() {
        for k in -400..=400 {
            let h = k as f64 * 0.05;
            let (m, v) = weight_moments(h);
            assert!((m - h.tanh()).abs() < 1e-15, "h={h}");
            let sech = 1.0 / h.cosh();
            assert!((v - sech * sech).abs() <= 1e-15 * (1.0 + sech * sech), "h={h}");
            assert!((m * m + v - 1.0).abs() < 1e-12);
        }
        assert_eq!(weight_moments(1e-300).0, 1e-300);
        assert_eq!(weight_moments(800.0), (1.0, 0.0));
        assert_eq!(weight_moments(-800.0), (-1.0, 0.0));
    }

    #[test]
    fn clip_examples() {
        let t = topo(&[2, 1]);
        let p = PosteriorParams::from_layers(&t, vec![vec![0.3, -1.2]]).unwrap();
        assert_eq!(p.clip_map().layer(1), &[1, -1]);

        let t1 = topo(&[1, 1]);
        let p = PosteriorParams::from_layers(&t1, vec![vec![0.0]]).unwrap();
        assert_eq!(p.clip_map().layer(1), &[1]);

        let t3 = topo(&[3, 1]);
        let p = PosteriorParams::from_layers(&t3, vec![vec![-0.1, -4.0, -1e-9]]).unwrap();
        assert_eq!(p.clip_map().layer(1), &[-1, -1, -1]);
    }

    #[test]
    fn rejects_bad_shapes() {
        let t = topo(&[2, 1]);
        assert!(PosteriorParams::from_layers(&t, vec![vec![0.0]]).is_err());
        assert!(PosteriorParams::from_layers(&t, vec![vec![0.0, f64::NAN]]).is_err());
        assert!(PosteriorParams::from_layers(&t, vec![]).is_err());
    }
}
