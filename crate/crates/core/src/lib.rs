//! Variance-reducing mini-batch schedulers for SGD training.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`] and [`rng`]: dense row-major matrices and a seedable
//!   ChaCha-based generator shared by everything else.
//! - [`nn`]: a small multi-layer perceptron with hand-written backprop,
//!   inverted dropout and plain SGD.
//! - [`samplers`]: the schedulers that re-inject the worst-scoring samples
//!   (per mini-batch or per epoch, deterministic or subsampled) and the
//!   per-sample usage ledger.
//! - [`dro`]: the exact maximiser of `Σ pᵢℓᵢ` over the χ²-ball intersected
//!   with the simplex, and the mean + variance form of the robust risk.
//! - [`data`]: IDX loading, subsetting, contrast normalisation and synthetic
//!   blob datasets.
//!
//! Row-parallel kernels use rayon when the `parallel` feature is enabled
//! (the default); see [`par`].

pub mod data;
pub mod dro;
pub mod nn;
pub mod par;
pub mod rng;
pub mod samplers;
pub mod tensor;

pub use data::{Dataset, DataError, SplitSpec};
pub use dro::{robust_risk, solve_robust_weights, DroError, RobustRisk, RobustWeights};
pub use nn::{LossReduction, LossVector, ModelParams, NnError, TrainStepReport};
pub use par::Execution;
pub use rng::Rng;
pub use samplers::{MiniBatchPlan, SampleLedger, SamplerError, Scheduler, SchedulerKind};
pub use tensor::{Matrix, TensorError};
