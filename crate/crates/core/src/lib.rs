//! Maximum margin matrix factorization (MMMF) for ordinal ratings, and a
//! self-training loop that grows a sparse rating matrix with confidently
//! predicted cells while pruning observed cells that sit on a decision
//! boundary.
//!
//! The pieces, bottom up:
//!
//! * [`matrix`]: the sparse `N x M` rating matrix on a `1..=R` scale.
//! * [`kernel`] and [`model`]: smooth hinge, threshold discretization and
//!   the factor model `(U, V, Θ)`.
//! * [`trainer`]: objective, gradients and the descent loop.
//! * [`selftrain`]: confidence bands, skew-aware sampling and the outer loop.
//! * [`eval`], [`baseline`], [`grid`]: metrics, a biased-MF comparison
//!   learner and hyperparameter sweeps.
//! * [`ingest`], [`checkpoint`], [`report`]: file formats.
//!
//! One training solve costs `O(t₁ R |Ω| d)`; each outer iteration adds an
//! `O(R N M)` scan of every cell, for `O(t₂ (t₁ R N M d + R N M))` overall
//! in the dense worst case.

pub mod baseline;
pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod grid;
pub mod ingest;
pub mod kernel;
pub mod matrix;
pub mod model;
pub mod report;
pub mod selftrain;
pub mod trainer;

pub use error::{Error, Result};
pub use eval::{ConfusionMatrix, MetricsSnapshot};
pub use matrix::{Rating, SparseRatingMatrix};
pub use model::{FactorModel, Hyperparams};
pub use selftrain::{Candidate, CandidateSet, IterationReport, SelfTrainConfig, SelfTrainOutcome, StopReason};
pub use trainer::{TrainTrace, Gradients};
