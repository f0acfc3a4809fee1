//! Experiment runners behind the `bmnn` binary: the teacher-student benchmark,
//! MNIST training, the verification gate and offline model evaluation.
//!
//! Every runner returns an in-memory [`RunReport`]; [`RunReport::write`] turns
//! it into CSV logs plus a `manifest.json`. Output bytes depend only on the
//! configuration, so rerunning a manifest reproduces its CSV files exactly.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backprop::{backprop_step, rmnn_forward, RealNetParams};
use crate::binary::sign;
use crate::bitpack::{pack, PackedNetwork, MAGIC};
use crate::dataio::{encode_label, load_mnist, Matrix, MnistData};
use crate::error::{Error, Result};
use crate::mfb::{LabeledSample, MfbConfig, MfbEngine, DEFAULT_EPS};
use crate::model_io::{ModelDocument, ModelKind};
use crate::posterior::PosteriorParams;
use crate::predictor::{classify, sign_network_output_sums};
use crate::teacher::{make_teacher, sample_stream, SampleStream};
use crate::topology::ConvergingTopology;
use crate::verify::{csv_error, run_all, write_oracle_csv, SuiteReport, Verification, VerifyConfig};

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "+", env!("BMNN_GIT_DESCRIBE"));

pub const DEFAULT_SEED: u64 = 2014;
pub const TEACHER_STUDENT_TRIALS: usize = 10;
pub const TEACHER_STUDENT_SAMPLES: usize = 200_000;
pub const TEACHER_STUDENT_TEST_SAMPLES: usize = 10_000;
pub const TRAINING_WINDOW: usize = 5_000;
pub const LOG_EVERY: usize = 1_000;
pub const MNIST_ARCHITECTURE: &str = "785x3010x10";
pub const MNIST_ETA: f64 = 1e-3;
pub const MNIST_CLASSES: usize = 10;

/// BackProp learning rate used for each teacher size `M`.
pub fn teacher_student_eta(m: usize) -> Option<f64> {
    match m {
        3 => Some(0.1),
        5 | 7 | 9 => Some(3e-2),
        21 | 31 | 51 => Some(3e-3),
        101 => Some(1e-3),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Mean-field Bayes updates, predicting with the MAP binary network.
    Mfb,
    /// Same posterior, predicting with the ensemble-mean output.
    Pmfb,
    /// Real-weight gradient descent.
    Backprop,
    /// The BackProp weights clipped to their signs.
    Clipped,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Self::Mfb, Self::Pmfb, Self::Backprop, Self::Clipped];

    pub fn name(self) -> &'static str {
        match self {
            Self::Mfb => "mfb",
            Self::Pmfb => "pmfb",
            Self::Backprop => "backprop",
            Self::Clipped => "clipped",
        }
    }

    /// Whether the algorithm reads the mean-field posterior (as opposed to
    /// real BackProp weights).
    pub fn uses_posterior(self) -> bool {
        matches!(self, Self::Mfb | Self::Pmfb)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown algorithm {s:?} (mfb, pmfb, backprop, clipped)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    TeacherStudent,
    Mnist,
    Verify,
    Eval,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Self::TeacherStudent => "teacher-student",
            Self::Mnist => "mnist",
            Self::Verify => "verify",
            Self::Eval => "eval",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub architecture: String,
    pub algorithms: Vec<Algorithm>,
    pub seed: u64,
    pub trials: usize,
    /// Training samples (teacher-student) or per-epoch cap (MNIST); `None`
    /// means the full budget.
    pub samples: Option<usize>,
    /// Test samples (teacher-student) or test-set cap (MNIST).
    pub test_samples: Option<usize>,
    pub epochs: usize,
    /// BackProp learning rate; `None` picks the default for the task.
    pub eta: Option<f64>,
    pub eps: f64,
    pub window: usize,
    pub log_every: usize,
    pub data_dir: Option<PathBuf>,
    /// Print progress lines on stderr.
    #[serde(skip)]
    pub progress: bool,
}

impl RunConfig {
    pub fn teacher_student(m: usize) -> Self {
        Self {
            command: Command::TeacherStudent,
            architecture: format!("{m}x{m}x1"),
            algorithms: Algorithm::ALL.to_vec(),
            seed: DEFAULT_SEED,
            trials: TEACHER_STUDENT_TRIALS,
            samples: None,
            test_samples: None,
            epochs: 1,
            eta: None,
            eps: DEFAULT_EPS,
            window: TRAINING_WINDOW,
            log_every: LOG_EVERY,
            data_dir: None,
            progress: false,
        }
    }

    pub fn mnist(architecture: &str, data_dir: impl Into<PathBuf>) -> Self {
        Self {
            command: Command::Mnist,
            architecture: architecture.to_string(),
            trials: 1,
            data_dir: Some(data_dir.into()),
            ..Self::teacher_student(1)
        }
    }

    pub fn topology(&self) -> Result<ConvergingTopology> {
        self.architecture.parse()
    }

    /// Selected algorithms, deduplicated, in canonical order.
    pub fn algorithm_set(&self) -> Vec<Algorithm> {
        self.algorithms.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |what: &str, v: usize| {
            if v == 0 {
                Err(Error::Config(format!("{what} must be positive")))
            } else {
                Ok(())
            }
        };
        if self.algorithms.is_empty() {
            return Err(Error::Config("no algorithm selected".into()));
        }
        positive("trials", self.trials)?;
        positive("epochs", self.epochs)?;
        positive("window", self.window)?;
        positive("log interval", self.log_every)?;
        if let Some(n) = self.samples {
            positive("samples", n)?;
        }
        if let Some(n) = self.test_samples {
            positive("test samples", n)?;
        }
        if let Some(eta) = self.eta {
            if !(eta.is_finite() && eta > 0.0) {
                return Err(Error::Config(format!("eta must be finite and positive, got {eta}")));
            }
        }
        MfbConfig::with_eps(self.eps)?;
        Ok(())
    }

    pub fn run_id(&self) -> String {
        format!("{}-{}-seed{}", self.command.name(), self.architecture, self.seed)
    }

    fn mfb_config(&self) -> MfbConfig {
        MfbConfig { eps: self.eps }
    }
}

/// splitmix64 finalizer over (base, purpose, index), so every stream gets an
/// independent seed that does not shift when other streams are added.
fn derive_seed(base: u64, purpose: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TEACHER: u64 = 1;
const TRAIN: u64 = 2;
const TEST: u64 = 3;
const POSTERIOR: u64 = 4;
const REAL_INIT: u64 = 5;
const SHUFFLE: u64 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSeeds {
    pub trial: usize,
    pub teacher: u64,
    pub train: u64,
    pub test: u64,
    pub posterior: u64,
    pub real_init: u64,
    /// Base of the per-epoch shuffle seeds.
    pub shuffle: u64,
}

impl TrialSeeds {
    pub fn derive(seed: u64, trial: usize) -> Self {
        let t = trial as u64;
        Self {
            trial,
            teacher: derive_seed(seed, TEACHER, t),
            train: derive_seed(seed, TRAIN, t),
            test: derive_seed(seed, TEST, t),
            posterior: derive_seed(seed, POSTERIOR, t),
            real_init: derive_seed(seed, REAL_INIT, t),
            shuffle: derive_seed(seed, SHUFFLE, t),
        }
    }

    pub fn epoch_shuffle(&self, epoch: usize) -> u64 {
        derive_seed(self.shuffle, SHUFFLE, epoch as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainRow {
    pub run_id: String,
    pub algorithm: Algorithm,
    pub trial: usize,
    pub sample_index: usize,
    pub window_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestRow {
    pub run_id: String,
    pub algorithm: Algorithm,
    pub trial: usize,
    pub test_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRow {
    pub run_id: String,
    pub algorithm: Algorithm,
    pub trial: usize,
    pub epoch: usize,
    pub test_error: f64,
}

/// Per-algorithm outcome; the best trial is the one with the lowest test error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub run_id: String,
    pub algorithm: Algorithm,
    pub best_trial: usize,
    pub best_test_error: f64,
    pub mean_test_error: f64,
    /// Lowest full-window training error seen in any trial.
    pub min_window_error: Option<f64>,
    /// Earliest sample count, over all trials, at which a full window had no errors.
    pub zero_window_at: Option<usize>,
}

const TRAIN_HEADER: [&str; 5] = ["run_id", "algorithm", "trial", "sample_index", "window_error"];
const TEST_HEADER: [&str; 4] = ["run_id", "algorithm", "trial", "test_error"];
const EPOCH_HEADER: [&str; 5] = ["run_id", "algorithm", "trial", "epoch", "test_error"];
const SUMMARY_HEADER: [&str; 7] = [
    "run_id",
    "algorithm",
    "best_trial",
    "best_test_error",
    "mean_test_error",
    "min_window_error",
    "zero_window_at",
];
const SUITE_HEADER: [&str; 5] = ["name", "checked", "failures", "passed", "detail"];

/// Final parameters of one trial.
#[derive(Debug, Clone)]
pub struct TrialModels {
    pub trial: usize,
    pub posterior: Option<PosteriorParams>,
    pub real: Option<RealNetParams>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub version: String,
    pub run_id: String,
    pub config: RunConfig,
    /// Learning rate actually used by BackProp, if it ran.
    pub eta: Option<f64>,
    pub seeds: Vec<TrialSeeds>,
    pub files: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub manifest: Manifest,
    pub train: Vec<TrainRow>,
    pub test: Vec<TestRow>,
    /// Per-epoch test errors (MNIST only); epoch 0 is the untrained network.
    pub epochs: Vec<EpochRow>,
    pub summary: Vec<SummaryRow>,
    pub models: Vec<TrialModels>,
}

impl RunReport {
    pub fn summary_for(&self, algorithm: Algorithm) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.algorithm == algorithm)
    }

    /// Writes logs, summary, final models and the manifest into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_csv(&dir.join("train_log.csv"), &TRAIN_HEADER, &self.train)?;
        write_csv(&dir.join("test_log.csv"), &TEST_HEADER, &self.test)?;
        write_csv(&dir.join("summary.csv"), &SUMMARY_HEADER, &self.summary)?;
        let mut files: Vec<String> =
            ["train_log.csv", "test_log.csv", "summary.csv"].map(String::from).to_vec();
        if self.manifest.config.command == Command::Mnist {
            write_csv(&dir.join("epoch_log.csv"), &EPOCH_HEADER, &self.epochs)?;
            files.push("epoch_log.csv".into());
        }
        for m in &self.models {
            if let Some(p) = &m.posterior {
                let name = format!("posterior-trial{}.json", m.trial);
                p.save(&dir.join(&name))?;
                files.push(name);
                let name = format!("map-trial{}.bmnn", m.trial);
                fs::write(dir.join(&name), pack(&p.clip_map()).to_bytes())?;
                files.push(name);
            }
            if let Some(r) = &m.real {
                let name = format!("backprop-trial{}.json", m.trial);
                r.save(&dir.join(&name))?;
                files.push(name);
            }
        }
        let manifest = Manifest {
            files,
            ..self.manifest.clone()
        };
        write_manifest(&dir.join("manifest.json"), &manifest)
    }
}

fn write_manifest(path: &Path, manifest: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// CSV with an explicit header row (written even when `rows` is empty) and LF
/// line endings.
pub fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let out = BufWriter::new(File::create(path)?);
    write_csv_to(out, header, rows)
}

fn write_csv_to<T: Serialize>(out: impl Write, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Misclassification rule: sign for a single output, argmax otherwise.
fn is_mistake(scores: &[f64], y: &[f64]) -> Result<bool> {
    if y.len() == 1 {
        return Ok(f64::from(sign(scores[0])) != y[0]);
    }
    Ok(classify(scores)? != classify(y)?)
}

/// Online error over the most recent `window` predictions.
#[derive(Debug, Clone)]
struct WindowTracker {
    ring: Vec<bool>,
    errors: usize,
    seen: usize,
    min_full: Option<f64>,
    first_zero: Option<usize>,
}

impl WindowTracker {
    fn new(window: usize) -> Self {
        Self {
            ring: vec![false; window],
            errors: 0,
            seen: 0,
            min_full: None,
            first_zero: None,
        }
    }

    fn push(&mut self, mistake: bool) {
        let window = self.ring.len();
        let slot = self.seen % window;
        if self.seen >= window && self.ring[slot] {
            self.errors -= 1;
        }
        self.ring[slot] = mistake;
        self.errors += usize::from(mistake);
        self.seen += 1;
        if self.seen >= window {
            let rate = self.rate();
            self.min_full = Some(self.min_full.map_or(rate, |m| m.min(rate)));
            if self.errors == 0 && self.first_zero.is_none() {
                self.first_zero = Some(self.seen);
            }
        }
    }

    fn rate(&self) -> f64 {
        self.errors as f64 / self.seen.min(self.ring.len()).max(1) as f64
    }
}

/// A trained or loaded model that can score inputs.
#[derive(Debug, Clone)]
pub enum Model {
    Posterior(PosteriorParams),
    Real(RealNetParams),
    /// A bit-packed binary network, scored as [`Algorithm::Mfb`].
    Packed(PackedNetwork),
}

impl Model {
    /// Loads a model JSON document or a packed `BMNN` file.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        if bytes.starts_with(MAGIC) {
            return Ok(Self::Packed(PackedNetwork::from_bytes(&bytes)?));
        }
        let text = std::str::from_utf8(&bytes)
            .map_err(|_| Error::Format(format!("{} is neither JSON nor a packed network", path.display())))?;
        let doc = ModelDocument::from_text(text)?;
        match doc.kind {
            ModelKind::MfbPosterior => Ok(Self::Posterior(PosteriorParams::from_document(&doc)?)),
            ModelKind::RealWeights => Ok(Self::Real(RealNetParams::from_layers(
                &doc.topology()?,
                doc.layers,
                MNIST_ETA,
            )?)),
        }
    }

    pub fn topology(&self) -> &ConvergingTopology {
        match self {
            Self::Posterior(p) => p.topology(),
            Self::Real(p) => p.topology(),
            Self::Packed(p) => p.topology(),
        }
    }

    /// Algorithms whose predictions this model can produce.
    pub fn algorithms(&self) -> Vec<Algorithm> {
        match self {
            Self::Posterior(_) => vec![Algorithm::Mfb, Algorithm::Pmfb],
            Self::Real(_) => vec![Algorithm::Backprop, Algorithm::Clipped],
            Self::Packed(_) => vec![Algorithm::Mfb],
        }
    }
}

/// Scores inputs with a model, reusing forward buffers between calls.
#[derive(Debug)]
pub struct Scorer<'a> {
    model: &'a Model,
    engine: Option<MfbEngine>,
}

impl<'a> Scorer<'a> {
    pub fn new(model: &'a Model, config: MfbConfig) -> Self {
        let engine = match model {
            Model::Posterior(p) => Some(MfbEngine::new(p.topology(), config)),
            _ => None,
        };
        Self { model, engine }
    }

    /// Output scores of `algorithm`: pre-sign output sums for the binary
    /// networks, `nu_L` for PMFB, `v_L` for BackProp.
    pub fn scores(&mut self, algorithm: Algorithm, x: &[f64]) -> Result<Vec<f64>> {
        match (self.model, algorithm) {
            (Model::Posterior(p), Algorithm::Mfb) => sign_network_output_sums(p.topology(), p.layers(), x),
            (Model::Posterior(p), Algorithm::Pmfb) => {
                let engine = self.engine.as_mut().expect("posterior scorer owns an engine");
                Ok(engine.forward(p, x)?.output().to_vec())
            }
            (Model::Real(p), Algorithm::Backprop) => Ok(rmnn_forward(p, x)?.output().to_vec()),
            (Model::Real(p), Algorithm::Clipped) => sign_network_output_sums(p.topology(), p.layers(), x),
            (Model::Packed(p), Algorithm::Mfb) => p.output_sums(x),
            (_, a) => Err(Error::Config(format!("this model cannot produce {a} predictions"))),
        }
    }

    /// Fraction of samples misclassified.
    pub fn error_rate<'s>(
        &mut self,
        algorithm: Algorithm,
        samples: impl IntoIterator<Item = (&'s [f64], &'s [f64])>,
    ) -> Result<f64> {
        let (mut wrong, mut total) = (0usize, 0usize);
        for (x, y) in samples {
            wrong += usize::from(is_mistake(&self.scores(algorithm, x)?, y)?);
            total += 1;
        }
        if total == 0 {
            return Err(Error::Empty("test samples"));
        }
        Ok(wrong as f64 / total as f64)
    }
}

/// One learner per parameter family; MFB and PMFB share a posterior, BackProp
/// and Clipped share real weights.
struct Learner {
    model: Model,
    engine: Option<MfbEngine>,
    tracked: Vec<Algorithm>,
}

impl Learner {
    fn groups(algorithms: &[Algorithm]) -> Vec<Vec<Algorithm>> {
        let (bayes, real): (Vec<_>, Vec<_>) = algorithms.iter().partition(|a| a.uses_posterior());
        [bayes, real].into_iter().filter(|g| !g.is_empty()).collect()
    }

    fn new(
        tracked: Vec<Algorithm>,
        topology: &ConvergingTopology,
        seeds: &TrialSeeds,
        eta: Option<f64>,
        config: MfbConfig,
    ) -> Self {
        if tracked[0].uses_posterior() {
            Self {
                model: Model::Posterior(PosteriorParams::init_prior(topology, seeds.posterior)),
                engine: Some(MfbEngine::new(topology, config)),
                tracked,
            }
        } else {
            let eta = eta.expect("learning rate resolved before training");
            Self {
                model: Model::Real(RealNetParams::init(topology, eta, seeds.real_init)),
                engine: None,
                tracked,
            }
        }
    }

    /// Records each tracked algorithm's prediction on `sample` (made before
    /// the update), then trains on it.
    fn step(&mut self, sample: &LabeledSample, trackers: &mut [WindowTracker]) -> Result<()> {
        match &mut self.model {
            Model::Posterior(params) => {
                let engine = self.engine.as_mut().expect("posterior learner owns an engine");
                let mut pmfb_slot = None;
                for (a, t) in self.tracked.iter().zip(trackers.iter_mut()) {
                    match a {
                        Algorithm::Mfb => {
                            let s = sign_network_output_sums(params.topology(), params.layers(), &sample.x)?;
                            t.push(is_mistake(&s, &sample.y)?);
                        }
                        _ => pmfb_slot = Some(t),
                    }
                }
                engine.step(params, sample)?;
                if let Some(t) = pmfb_slot {
                    // The step's forward pass ran on the pre-update posterior.
                    t.push(is_mistake(engine.last_forward().output(), &sample.y)?);
                }
            }
            Model::Real(params) => {
                for (a, t) in self.tracked.iter().zip(trackers.iter_mut()) {
                    let s = match a {
                        Algorithm::Backprop => rmnn_forward(params, &sample.x)?.output().to_vec(),
                        _ => sign_network_output_sums(params.topology(), params.layers(), &sample.x)?,
                    };
                    t.push(is_mistake(&s, &sample.y)?);
                }
                backprop_step(params, sample)?;
            }
            Model::Packed(_) => unreachable!("packed networks are not trained"),
        }
        Ok(())
    }

    fn error_rates<'s>(
        &self,
        config: MfbConfig,
        samples: impl Iterator<Item = (&'s [f64], &'s [f64])> + Clone,
    ) -> Result<Vec<f64>> {
        let mut scorer = Scorer::new(&self.model, config);
        self.tracked.iter().map(|&a| scorer.error_rate(a, samples.clone())).collect()
    }

    fn into_models(self, trial: usize) -> TrialModels {
        let (posterior, real) = match self.model {
            Model::Posterior(p) => (Some(p), None),
            Model::Real(r) => (None, Some(r)),
            Model::Packed(_) => (None, None),
        };
        TrialModels { trial, posterior, real }
    }
}

fn log_point(n: usize, total: usize, every: usize) -> bool {
    n % every == 0 || n == total
}

fn summarize(
    run_id: &str,
    algorithms: &[Algorithm],
    test: &[TestRow],
    trackers: &[(Algorithm, WindowTracker)],
) -> Vec<SummaryRow> {
    algorithms
        .iter()
        .filter_map(|&a| {
            let rows: Vec<&TestRow> = test.iter().filter(|r| r.algorithm == a).collect();
            let best = rows
                .iter()
                .min_by(|x, y| x.test_error.total_cmp(&y.test_error).then(x.trial.cmp(&y.trial)))?;
            let mine = trackers.iter().filter(|(b, _)| *b == a).map(|(_, t)| t);
            Some(SummaryRow {
                run_id: run_id.to_string(),
                algorithm: a,
                best_trial: best.trial,
                best_test_error: best.test_error,
                mean_test_error: rows.iter().map(|r| r.test_error).sum::<f64>() / rows.len() as f64,
                min_window_error: mine.clone().filter_map(|t| t.min_full).min_by(f64::total_cmp),
                zero_window_at: mine.filter_map(|t| t.first_zero).min(),
            })
        })
        .collect()
}

fn resolve_eta(config: &RunConfig, default: Option<f64>, what: &str) -> Result<Option<f64>> {
    if !config.algorithms.iter().any(|a| !a.uses_posterior()) {
        return Ok(None);
    }
    match config.eta.or(default) {
        Some(eta) => Ok(Some(eta)),
        None => Err(Error::Config(format!("no default learning rate for {what}; pass --eta"))),
    }
}

/// Online training of every selected algorithm on teacher-labelled samples,
/// repeated over independent trials.
pub fn run_teacher_student(config: &RunConfig) -> Result<RunReport> {
    config.validate()?;
    let topology = config.topology()?;
    let widths = topology.widths();
    if widths.len() != 3 || widths[0] != widths[1] || widths[2] != 1 {
        return Err(Error::Config(format!(
            "teacher-student needs an MxMx1 architecture, got {topology}"
        )));
    }
    let m = widths[0];
    if m % 2 == 0 {
        return Err(Error::Config(format!("teacher size M must be odd, got {m}")));
    }
    let eta = resolve_eta(config, teacher_student_eta(m), &format!("M={m}"))?;
    let algorithms = config.algorithm_set();
    let samples = config.samples.unwrap_or(TEACHER_STUDENT_SAMPLES);
    let test_n = config.test_samples.unwrap_or(TEACHER_STUDENT_TEST_SAMPLES);
    let run_id = config.run_id();
    let mfb = config.mfb_config();

    let mut seeds = Vec::new();
    let mut train_rows = Vec::new();
    let mut test_rows = Vec::new();
    let mut all_trackers = Vec::new();
    let mut models = Vec::new();
    for trial in 0..config.trials {
        let started = Instant::now();
        let s = TrialSeeds::derive(config.seed, trial);
        seeds.push(s);
        let teacher = make_teacher(m, s.teacher)?;
        let test = sample_stream(&teacher, test_n, s.test);
        let mut trial_models = TrialModels {
            trial,
            posterior: None,
            real: None,
        };
        let mut trial_rows: Vec<(Algorithm, Vec<TrainRow>)> = Vec::new();
        for group in Learner::groups(&algorithms) {
            let mut learner = Learner::new(group.clone(), &topology, &s, eta, mfb);
            let mut trackers = vec![WindowTracker::new(config.window); group.len()];
            let mut rows = vec![Vec::new(); group.len()];
            for (n, sample) in SampleStream::new(&teacher, s.train).take(samples).enumerate() {
                learner.step(&sample, &mut trackers)?;
                if log_point(n + 1, samples, config.log_every) {
                    for ((a, t), r) in group.iter().zip(&trackers).zip(&mut rows) {
                        r.push(TrainRow {
                            run_id: run_id.clone(),
                            algorithm: *a,
                            trial,
                            sample_index: n + 1,
                            window_error: t.rate(),
                        });
                    }
                }
            }
            let errors = learner.error_rates(mfb, test.iter().map(|s| (s.x.as_slice(), s.y.as_slice())))?;
            for ((&a, e), t) in group.iter().zip(errors).zip(trackers) {
                test_rows.push(TestRow {
                    run_id: run_id.clone(),
                    algorithm: a,
                    trial,
                    test_error: e,
                });
                all_trackers.push((a, t));
            }
            trial_rows.extend(group.iter().copied().zip(rows));
            let done = learner.into_models(trial);
            trial_models.posterior = trial_models.posterior.or(done.posterior);
            trial_models.real = trial_models.real.or(done.real);
        }
        trial_rows.sort_by_key(|(a, _)| *a);
        train_rows.extend(trial_rows.into_iter().flat_map(|(_, r)| r));
        models.push(trial_models);
        if config.progress {
            let errs: Vec<String> = test_rows
                .iter()
                .filter(|r| r.trial == trial)
                .map(|r| format!("{}={:.4}", r.algorithm, r.test_error))
                .collect();
            eprintln!(
                "trial {trial}: test error {} ({:.1}s)",
                errs.join(" "),
                started.elapsed().as_secs_f64()
            );
        }
    }
    test_rows.sort_by_key(|r| (r.trial, r.algorithm));
    let summary = summarize(&run_id, &algorithms, &test_rows, &all_trackers);
    Ok(RunReport {
        manifest: Manifest {
            version: VERSION.to_string(),
            run_id,
            config: config.clone(),
            eta,
            seeds,
            files: Vec::new(),
        },
        train: train_rows,
        test: test_rows,
        epochs: Vec::new(),
        summary,
        models,
    })
}

/// Loads MNIST from `config.data_dir` and trains on it.
pub fn run_mnist(config: &RunConfig) -> Result<RunReport> {
    let dir = config
        .data_dir
        .as_deref()
        .ok_or_else(|| Error::Config("no MNIST data directory given".into()))?;
    let data = load_mnist(dir)?;
    run_mnist_on(config, &data)
}

fn labelled_rows<'a>(
    matrix: &'a Matrix,
    targets: &'a [Vec<f64>],
    n: usize,
) -> impl Iterator<Item = (&'a [f64], &'a [f64])> + Clone + 'a {
    (0..n).map(move |i| (matrix.row(i), targets[i].as_slice()))
}

/// Epoch training on already-preprocessed data; each epoch visits the
/// training set in a fresh random order shared by all algorithms.
pub fn run_mnist_on(config: &RunConfig, data: &MnistData) -> Result<RunReport> {
    config.validate()?;
    let topology = config.topology()?;
    if topology.input_dim() != data.train.cols || topology.input_dim() != data.test.cols {
        return Err(Error::DimensionMismatch {
            what: "input width",
            expected: data.train.cols,
            actual: topology.input_dim(),
        });
    }
    let classes = topology.output_dim();
    if classes != MNIST_CLASSES {
        return Err(Error::Config(format!("MNIST needs {MNIST_CLASSES} outputs, got {classes}")));
    }
    let eta = resolve_eta(config, Some(MNIST_ETA), "MNIST")?;
    let algorithms = config.algorithm_set();
    let run_id = config.run_id();
    let mfb = config.mfb_config();
    let encode = |labels: &[u8]| -> Result<Vec<Vec<f64>>> {
        labels.iter().map(|&l| encode_label(usize::from(l), classes)).collect()
    };
    let train_targets = encode(&data.train_labels)?;
    let test_targets = encode(&data.test_labels)?;
    let per_epoch = config.samples.map_or(data.train.rows, |n| n.min(data.train.rows));
    let test_n = config.test_samples.map_or(data.test.rows, |n| n.min(data.test.rows));
    let total = per_epoch * config.epochs;

    let mut seeds = Vec::new();
    let mut train_rows = Vec::new();
    let mut test_rows = Vec::new();
    let mut epoch_rows = Vec::new();
    let mut all_trackers = Vec::new();
    let mut models = Vec::new();
    for trial in 0..config.trials {
        let s = TrialSeeds::derive(config.seed, trial);
        seeds.push(s);
        let orders: Vec<Vec<usize>> = (1..=config.epochs)
            .map(|epoch| {
                let mut order: Vec<usize> = (0..data.train.rows).collect();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(s.epoch_shuffle(epoch)));
                order.truncate(per_epoch);
                order
            })
            .collect();
        let mut trial_models = TrialModels {
            trial,
            posterior: None,
            real: None,
        };
        let mut trial_rows: Vec<(Algorithm, Vec<TrainRow>)> = Vec::new();
        for group in Learner::groups(&algorithms) {
            let mut learner = Learner::new(group.clone(), &topology, &s, eta, mfb);
            let mut trackers = vec![WindowTracker::new(config.window); group.len()];
            let mut rows = vec![Vec::new(); group.len()];
            let mut record_epoch = |learner: &Learner, epoch: usize| -> Result<Vec<f64>> {
                let started = Instant::now();
                let errors = learner.error_rates(mfb, labelled_rows(&data.test, &test_targets, test_n))?;
                for (&a, &e) in group.iter().zip(&errors) {
                    epoch_rows.push(EpochRow {
                        run_id: run_id.clone(),
                        algorithm: a,
                        trial,
                        epoch,
                        test_error: e,
                    });
                    if config.progress {
                        eprintln!(
                            "trial {trial} epoch {epoch}: {a} test error {e:.4} (eval {:.1}s)",
                            started.elapsed().as_secs_f64()
                        );
                    }
                }
                Ok(errors)
            };
            let mut errors = record_epoch(&learner, 0)?;
            let mut n = 0usize;
            for (epoch, order) in orders.iter().enumerate() {
                let started = Instant::now();
                for &i in order {
                    let sample = LabeledSample {
                        x: data.train.row(i).to_vec(),
                        y: train_targets[i].clone(),
                    };
                    learner.step(&sample, &mut trackers)?;
                    n += 1;
                    if log_point(n, total, config.log_every) {
                        for ((a, t), r) in group.iter().zip(&trackers).zip(&mut rows) {
                            r.push(TrainRow {
                                run_id: run_id.clone(),
                                algorithm: *a,
                                trial,
                                sample_index: n,
                                window_error: t.rate(),
                            });
                        }
                    }
                }
                if config.progress {
                    eprintln!(
                        "trial {trial} epoch {}: trained {} in {:.1}s",
                        epoch + 1,
                        group.iter().map(|a| a.name()).collect::<Vec<_>>().join("+"),
                        started.elapsed().as_secs_f64()
                    );
                }
                errors = record_epoch(&learner, epoch + 1)?;
            }
            for ((&a, e), t) in group.iter().zip(errors).zip(trackers) {
                test_rows.push(TestRow {
                    run_id: run_id.clone(),
                    algorithm: a,
                    trial,
                    test_error: e,
                });
                all_trackers.push((a, t));
            }
            trial_rows.extend(group.iter().copied().zip(rows));
            let done = learner.into_models(trial);
            trial_models.posterior = trial_models.posterior.or(done.posterior);
            trial_models.real = trial_models.real.or(done.real);
        }
        trial_rows.sort_by_key(|(a, _)| *a);
        train_rows.extend(trial_rows.into_iter().flat_map(|(_, r)| r));
        models.push(trial_models);
    }
    test_rows.sort_by_key(|r| (r.trial, r.algorithm));
    epoch_rows.sort_by_key(|r| (r.trial, r.algorithm, r.epoch));
    let summary = summarize(&run_id, &algorithms, &test_rows, &all_trackers);
    Ok(RunReport {
        manifest: Manifest {
            version: VERSION.to_string(),
            run_id,
            config: config.clone(),
            eta,
            seeds,
            files: Vec::new(),
        },
        train: train_rows,
        test: test_rows,
        epochs: epoch_rows,
        summary,
        models,
    })
}

#[derive(Debug, Clone, Serialize)]
struct VerifyManifest<'a> {
    version: &'a str,
    config: &'a VerifyConfig,
    passed: bool,
    files: [&'a str; 2],
}

/// Runs every verification suite; with `out`, writes `verify_report.csv`,
/// `oracle.csv` and a manifest there.
pub fn run_verify(config: &VerifyConfig, out: Option<&Path>) -> Result<Verification> {
    let result = run_all(config)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_csv::<SuiteReport>(&dir.join("verify_report.csv"), &SUITE_HEADER, &result.suites)?;
        write_oracle_csv(&result.oracle_rows, BufWriter::new(File::create(dir.join("oracle.csv"))?))?;
        write_manifest(
            &dir.join("manifest.json"),
            &VerifyManifest {
                version: VERSION,
                config,
                passed: result.passed(),
                files: ["verify_report.csv", "oracle.csv"],
            },
        )?;
    }
    Ok(result)
}

/// Test error of every algorithm `model` supports on the first `limit` test
/// images.
pub fn evaluate_on_mnist(
    model: &Model,
    data: &MnistData,
    limit: Option<usize>,
    config: MfbConfig,
) -> Result<Vec<(Algorithm, f64)>> {
    if model.topology().input_dim() != data.test.cols {
        return Err(Error::DimensionMismatch {
            what: "input width",
            expected: data.test.cols,
            actual: model.topology().input_dim(),
        });
    }
    let classes = model.topology().output_dim();
    let targets: Vec<Vec<f64>> = data
        .test_labels
        .iter()
        .map(|&l| encode_label(usize::from(l), classes))
        .collect::<Result<_>>()?;
    let n = limit.map_or(data.test.rows, |l| l.min(data.test.rows));
    let mut scorer = Scorer::new(model, config);
    model
        .algorithms()
        .into_iter()
        .map(|a| Ok((a, scorer.error_rate(a, labelled_rows(&data.test, &targets, n))?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Normalization;

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert_eq!("PMFB".parse::<Algorithm>().unwrap(), Algorithm::Pmfb);
        assert!("sgd".parse::<Algorithm>().is_err());
    }

    #[test]
    fn learning_rates_by_size() {
        assert_eq!(teacher_student_eta(3), Some(0.1));
        assert_eq!(teacher_student_eta(9), Some(3e-2));
        assert_eq!(teacher_student_eta(51), Some(3e-3));
        assert_eq!(teacher_student_eta(101), Some(1e-3));
        assert_eq!(teacher_student_eta(11), None);
    }

    #[test]
    fn seeds_are_distinct_per_trial_and_purpose() {
        let a = TrialSeeds::derive(7, 0);
        let b = TrialSeeds::derive(7, 1);
        let all = [a.teacher, a.train, a.test, a.posterior, a.real_init, b.teacher, b.train, b.test];
        let set: BTreeSet<_> = all.iter().collect();
        assert_eq!(set.len(), all.len());
        assert_eq!(a, TrialSeeds::derive(7, 0));
        assert_ne!(a.epoch_shuffle(1), a.epoch_shuffle(2));
    }

    #[test]
    fn window_tracker_counts() {
        let mut t = WindowTracker::new(4);
        for m in [true, false, true, true] {
            t.push(m);
        }
        assert_eq!(t.rate(), 0.75);
        assert_eq!(t.min_full, Some(0.75));
        for _ in 0..3 {
            t.push(false);
        }
        assert_eq!(t.rate(), 0.25);
        assert_eq!(t.first_zero, None);
        t.push(false);
        assert_eq!(t.rate(), 0.0);
        assert_eq!(t.first_zero, Some(8));
        t.push(true);
        assert_eq!(t.first_zero, Some(8));
        assert_eq!(t.min_full, Some(0.0));
    }

    #[test]
    fn partial_window_rate() {
        let mut t = WindowTracker::new(10);
        t.push(true);
        t.push(false);
        assert_eq!(t.rate(), 0.5);
        assert_eq!(t.min_full, None);
    }

    #[test]
    fn mistakes() {
        assert!(!is_mistake(&[0.0], &[1.0]).unwrap());
        assert!(is_mistake(&[-0.1], &[1.0]).unwrap());
        assert!(!is_mistake(&[0.1, 0.7, -0.2], &[-1.0, 1.0, -1.0]).unwrap());
        assert!(is_mistake(&[0.9, 0.7, -0.2], &[-1.0, 1.0, -1.0]).unwrap());
    }

    #[test]
    fn csv_header_without_rows() {
        let mut buf = Vec::new();
        write_csv_to::<TestRow>(&mut buf, &TEST_HEADER, &[]).unwrap();
        assert_eq!(buf, b"run_id,algorithm,trial,test_error\n");
        let mut buf = Vec::new();
        let row = TestRow {
            run_id: "r".into(),
            algorithm: Algorithm::Pmfb,
            trial: 2,
            test_error: 0.125,
        };
        write_csv_to(&mut buf, &TEST_HEADER, &[row]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "run_id,algorithm,trial,test_error\nr,pmfb,2,0.125\n");
    }

    #[test]
    fn config_validation() {
        let mut c = RunConfig::teacher_student(3);
        assert!(c.validate().is_ok());
        c.algorithms.clear();
        assert!(c.validate().is_err());
        let mut c = RunConfig::teacher_student(3);
        c.samples = Some(0);
        assert!(c.validate().is_err());
        let mut c = RunConfig::teacher_student(3);
        c.eta = Some(-1.0);
        assert!(c.validate().is_err());
        let mut c = RunConfig::teacher_student(4);
        c.trials = 1;
        assert!(run_teacher_student(&c).is_err());
        let mut c = RunConfig::teacher_student(11);
        c.trials = 1;
        assert!(run_teacher_student(&c).is_err());
        c.algorithms = vec![Algorithm::Mfb];
        c.samples = Some(10);
        assert!(run_teacher_student(&c).is_ok());
    }

    fn tiny_ts() -> RunConfig {
        RunConfig {
            trials: 2,
            samples: Some(300),
            test_samples: Some(200),
            window: 50,
            log_every: 100,
            ..RunConfig::teacher_student(3)
        }
    }

    #[test]
    fn teacher_student_report_shape() {
        let r = run_teacher_student(&tiny_ts()).unwrap();
        // 2 trials x 4 algorithms x 3 log points.
        assert_eq!(r.train.len(), 24);
        assert_eq!(r.test.len(), 8);
        assert_eq!(r.summary.len(), 4);
        assert!(r.train.iter().all(|t| (0.0..=1.0).contains(&t.window_error)));
        assert_eq!(r.train[0].algorithm, Algorithm::Mfb);
        assert_eq!(r.train[0].sample_index, 100);
        assert_eq!(r.manifest.eta, Some(0.1));
        assert_eq!(r.models.len(), 2);
        assert!(r.models.iter().all(|m| m.posterior.is_some() && m.real.is_some()));
        for s in &r.summary {
            let best = r
                .test
                .iter()
                .filter(|t| t.algorithm == s.algorithm)
                .map(|t| t.test_error)
                .fold(f64::INFINITY, f64::min);
            assert_eq!(s.best_test_error, best);
        }
    }

    #[test]
    fn shared_posterior_gives_same_model_either_way() {
        // Tracking PMFB alongside MFB must not change the trained posterior.
        let both = run_teacher_student(&tiny_ts()).unwrap();
        let only = run_teacher_student(&RunConfig {
            algorithms: vec![Algorithm::Mfb],
            ..tiny_ts()
        })
        .unwrap();
        assert_eq!(
            both.models[1].posterior.as_ref().unwrap(),
            only.models[1].posterior.as_ref().unwrap()
        );
        let mfb_rows = |r: &RunReport| {
            r.test.iter().filter(|t| t.algorithm == Algorithm::Mfb).cloned().collect::<Vec<_>>()
        };
        assert_eq!(mfb_rows(&both), mfb_rows(&only));
    }

    fn synthetic_mnist(n_train: usize, n_test: usize) -> MnistData {
        // Each class lights up its own block of "pixels".
        let make = |n: usize, offset: usize| {
            let labels: Vec<u8> = (0..n).map(|i| ((i * 7 + offset) % 10) as u8).collect();
            let d = 20;
            let mut data = Vec::with_capacity(n * (d + 1));
            for (i, &l) in labels.iter().enumerate() {
                for j in 0..d {
                    let on = j / 2 == usize::from(l);
                    let noise = ((i * 31 + j * 17) % 7) as f64 / 10.0 - 0.3;
                    data.push(if on { 2.0 } else { -0.2 } + noise);
                }
                data.push(1.0);
            }
            (Matrix { rows: n, cols: d + 1, data }, labels)
        };
        let (train, train_labels) = make(n_train, 0);
        let (test, test_labels) = make(n_test, 3);
        MnistData {
            train,
            train_labels,
            test,
            test_labels,
            normalization: Normalization {
                means: vec![0.0; 20],
                std: 1.0,
            },
        }
    }

    #[test]
    fn mnist_runner_on_synthetic_digits() {
        let data = synthetic_mnist(400, 100);
        let config = RunConfig {
            epochs: 2,
            window: 100,
            log_every: 200,
            ..RunConfig::mnist("21x30x10", "unused")
        };
        let r = run_mnist_on(&config, &data).unwrap();
        // 4 algorithms x epochs 0..=2.
        assert_eq!(r.epochs.len(), 12);
        assert_eq!(r.train.len(), 4 * 4);
        for a in Algorithm::ALL {
            let last = r.epochs.iter().rfind(|e| e.algorithm == a).unwrap();
            assert_eq!(last.epoch, 2);
            assert_eq!(r.summary_for(a).unwrap().best_test_error, last.test_error);
        }
        // An easy separable task: the trained posterior gets almost everything.
        assert!(r.summary_for(Algorithm::Pmfb).unwrap().best_test_error < 0.1);
        assert!(run_mnist_on(&RunConfig::mnist("20x10x10", "unused"), &data).is_err());
        assert!(run_mnist_on(&RunConfig::mnist("21x3x1", "unused"), &data).is_err());
    }

    #[test]
    fn written_runs_are_byte_identical_and_reloadable() {
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for d in &dirs {
            run_teacher_student(&tiny_ts()).unwrap().write(d.path()).unwrap();
        }
        for name in ["train_log.csv", "test_log.csv", "summary.csv", "manifest.json"] {
            let a = fs::read(dirs[0].path().join(name)).unwrap();
            assert_eq!(a, fs::read(dirs[1].path().join(name)).unwrap(), "{name}");
        }
        let text = fs::read_to_string(dirs[0].path().join("train_log.csv")).unwrap();
        assert!(text.starts_with("run_id,algorithm,trial,sample_index,window_error\n"));
        assert!(!text.contains('\r'));
        let manifest: serde_json::Value =
            serde_json::from_slice(&fs::read(dirs[0].path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["config"]["seed"], DEFAULT_SEED);
        assert_eq!(manifest["seeds"].as_array().unwrap().len(), 2);
        for name in ["posterior-trial0.json", "map-trial1.bmnn", "backprop-trial1.json"] {
            Model::load(&dirs[0].path().join(name)).unwrap();
        }
    }

    #[test]
    fn packed_map_scores_like_posterior_map() {
        let r = run_teacher_student(&tiny_ts()).unwrap();
        let posterior = Model::Posterior(r.models[0].posterior.clone().unwrap());
        let packed = Model::Packed(pack(&r.models[0].posterior.as_ref().unwrap().clip_map()));
        let mut a = Scorer::new(&posterior, MfbConfig::default());
        let mut b = Scorer::new(&packed, MfbConfig::default());
        let x = [1.0, -1.0, 1.0];
        assert_eq!(a.scores(Algorithm::Mfb, &x).unwrap(), b.scores(Algorithm::Mfb, &x).unwrap());
        assert!(b.scores(Algorithm::Pmfb, &x).is_err());
    }
}
