//! Binary-weight neural networks with converging (fan-out 1) topology, trained
//! online by mean-field Bayesian backpropagation.
//!
//! The learner keeps a factorized posterior over `±1` weights, parameterized by
//! one real field `h` per weight (`P(W = 1) = (1 + tanh h) / 2`). Each labelled
//! sample updates every field in time linear in the number of weights. The
//! trained posterior is then used either deterministically (the sign of the
//! posterior mean, see [`predictor::bmnn_eval`]) or probabilistically
//! ([`predictor::pmfb_output`]).

pub mod backprop;
pub mod binary;
pub mod bitpack;
pub mod dataio;
pub mod error;
pub mod gauss;
pub mod harness;
pub mod mfb;
pub mod model_io;
pub mod oracle;
pub mod posterior;
pub mod predictor;
pub mod teacher;
pub mod topology;
pub mod verify;

pub use binary::{sign, BinaryWeights};
pub use error::{Error, Result};
pub use harness::{Algorithm, RunConfig, RunReport};
pub use mfb::{
    backward_pass, forward_pass, update_step, BackwardTrace, ForwardTrace, LabeledSample,
    MfbConfig, MfbEngine, StepOutcome,
};
pub use posterior::PosteriorParams;
pub use predictor::{bmnn_eval, classify, pmfb_output};
pub use topology::ConvergingTopology;
