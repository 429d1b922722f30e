//! Sparse-plus-low-rank estimation for exponential-family graphical models
//! with sample-specific latent shifts.
//!
//! The estimator minimizes a (pseudo-)likelihood in `(alpha, theta, L)` with
//! an l1 penalty on the interaction matrix and a nuclear-norm penalty on the
//! d x n latent shift matrix `L`.

pub mod data;
pub mod error;
pub mod family;
pub mod linalg;
pub mod metrics;
pub mod objective;
pub mod prox;
pub mod reduced;
pub mod solver;
pub mod stability;
pub mod synth;

pub use data::{all_edges, support_of, DataMatrix, Edge, EdgeSet};
pub use error::{Error, Result};
pub use family::{FamilyKind, FamilySpec, ModelParams};
pub use prox::PenaltyConfig;
pub use solver::{fit, fit_warm, kkt_check, FitResult, KktReport, SolveOptions, StructureConstraints};
