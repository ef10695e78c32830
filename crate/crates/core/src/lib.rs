//! Output-distribution regularizers for classifiers.
//!
//! The crate implements the maximum-entropy confidence penalty (with
//! hinge-thresholded and annealed variants), uniform and unigram label
//! smoothing, and label noise, each as a loss returning its analytic
//! gradient with respect to the logits, together with:
//!
//! - numerically stable softmax/entropy/KL primitives ([`math`]),
//! - a fully-connected ReLU classifier with inverted dropout and
//!   hand-derived backpropagation ([`mlp`]),
//! - an SGD trainer with early stopping, gradient-norm telemetry, and a
//!   grid-search driver ([`trainer`]),
//! - IDX dataset ingestion and synthetic fixtures ([`dataio`]),
//! - confidence-histogram and entropy diagnostics plus the CSV metrics
//!   formats ([`reporting`]),
//! - a central finite-difference oracle for every analytic gradient in
//!   the crate ([`gradcheck`]).
//!
//! Entropies, divergences, and losses are in nats. All randomness is
//! seeded; identical configs replay bit-identical runs.

pub mod dataio;
pub mod error;
pub mod gradcheck;
pub mod math;
pub mod mlp;
pub mod regularizers;
pub mod reporting;
pub mod trainer;

pub use dataio::{LabeledDataset, SplitBounds};
pub use error::{Error, Result};
pub use math::{LogitVector, ProbVector};
pub use mlp::{Architecture, DropoutConfig, DropoutSampler, ForwardTrace, Gradients, MlpParams};
pub use regularizers::{
    AnnealMode, AnnealSchedule, LossResult, RegularizerKind, RegularizerSpec,
};
pub use reporting::{ConfidenceHistogram, EntropyStats, RunSummary};
pub use trainer::{EpochRecord, RunMetrics, TrainConfig};
