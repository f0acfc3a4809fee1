//! Synthetic teacher-student data: a random `M x M x 1` binary network labels
//! uniformly random `{-1, +1}^M` inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binary::BinaryWeights;
use crate::error::{Error, Result};
use crate::mfb::LabeledSample;
use crate::predictor::bmnn_eval;
use crate::topology::ConvergingTopology;

pub fn teacher_topology(m: usize) -> Result<ConvergingTopology> {
    if m == 0 {
        return Err(Error::Config("teacher size M must be at least 1".into()));
    }
    ConvergingTopology::new(&[m, m, 1])
}

/// Random teacher with i.i.d. uniform ±1 weights.
///
/// Even `M` allows zero pre-activations (resolved by `sign(0) = +1`); a
/// warning is printed on stderr in that case.
pub fn make_teacher(m: usize, seed: u64) -> Result<BinaryWeights> {
    let topology = teacher_topology(m)?;
    if m % 2 == 0 {
        eprintln!("warning: even teacher size M={m} admits sign(0) ties");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = topology
        .layers()
        .map(|s| (0..s.weights()).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect())
        .collect();
    BinaryWeights::new(topology, layers)
}

/// Endless stream of teacher-labelled random binary inputs.
#[derive(Debug, Clone)]
pub struct SampleStream<'a> {
    teacher: &'a BinaryWeights,
    rng: ChaCha8Rng,
}

impl<'a> SampleStream<'a> {
    pub fn new(teacher: &'a BinaryWeights, seed: u64) -> Self {
        Self {
            teacher,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Iterator for SampleStream<'_> {
    type Item = LabeledSample;

    fn next(&mut self) -> Option<LabeledSample> {
        let dim = self.teacher.topology().input_dim();
        let x: Vec<f64> = (0..dim)
            .map(|_| if self.rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let y = bmnn_eval(self.teacher, &x)
            .expect("input sized from the teacher")
            .into_iter()
            .map(f64::from)
            .collect();
        Some(LabeledSample { x, y })
    }
}

pub fn sample_stream(teacher: &BinaryWeights, n: usize, seed: u64) -> Vec<LabeledSample> {
    SampleStream::new(teacher, seed).take(n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::bmnn_output_sums;

    #[test]
    fn teacher_shape_and_determinism() {
        let t = make_teacher(3, 1).unwrap();
        assert_eq!(t.layers()[0].len() + t.layers()[1].len(), 12);
        assert_eq!(t, make_teacher(3, 1).unwrap());
    }

    #[test]
    fn weight_balance() {
        let mut plus = 0usize;
        let mut total = 0usize;
        for seed in 0..200 {
            let t = make_teacher(31, seed).unwrap();
            for w in t.layers().iter().flatten() {
                total += 1;
                plus += usize::from(*w > 0);
            }
        }
        assert!(total > 100_000);
        let freq = plus as f64 / total as f64;
        assert!((freq - 0.5).abs() < 0.01, "{freq}");
    }

    #[test]
    fn seeds_give_different_teachers() {
        let distinct = (0..50)
            .map(|s| make_teacher(3, s).unwrap())
            .collect::<Vec<_>>()
            .windows(2)
            .filter(|w| w[0] != w[1])
            .count();
        // Collisions have probability 2^-12 per pair.
        assert!(distinct >= 47);
    }

    #[test]
    fn labels_match_teacher_and_never_tie() {
        let teacher = make_teacher(7, 4).unwrap();
        for s in sample_stream(&teacher, 2_000, 8) {
            assert!(s.x.iter().all(|&v| v == 1.0 || v == -1.0));
            let out = bmnn_eval(&teacher, &s.x).unwrap();
            assert_eq!(s.y, vec![f64::from(out[0])]);
            assert_ne!(bmnn_output_sums(&teacher, &s.x).unwrap()[0], 0.0);
        }
    }

    #[test]
    fn streams_are_reproducible() {
        let teacher = make_teacher(5, 0).unwrap();
        assert_eq!(sample_stream(&teacher, 50, 3), sample_stream(&teacher, 50, 3));
        assert_ne!(sample_stream(&teacher, 50, 3), sample_stream(&teacher, 50, 4));
    }
}
