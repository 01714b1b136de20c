//! Train a model on a sample of the data and bound, with a chosen confidence,
//! how far its predictions can drift from the model trained on every row.
//!
//! The building blocks:
//!
//! * [`mcs`] model class specifications (linear regression, logistic
//!   regression, max-entropy classifier, PPCA) with per-example gradients;
//! * [`optimizer`] BFGS / L-BFGS;
//! * [`stats`] the curvature matrices that describe parameter uncertainty;
//! * [`psampler`] Gaussian draws of plausible full-data parameters;
//! * [`accuracy`] error bound for a trained approximate model;
//! * [`sizer`] smallest sample that meets a requested bound;
//! * [`coordinator`] the end-to-end contract workflow.
//!
//! With the default `parallel` feature the per-row and per-draw loops run on
//! rayon. Chunking is fixed so results are bit-identical with the feature
//! turned off.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accuracy;
pub mod coordinator;
pub mod data;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod mcs;
pub mod optimizer;
pub mod psampler;
pub mod sizer;
pub mod stats;
pub mod synth;

pub use coordinator::{train_with_contract, Contract, RunConfig, RunReport};
pub use data::{load_dataset, Dataset, FileFormat};
pub use error::{Error, Result};
pub use mcs::{Mcs, ModelKind, ModelSpec, TrainedModel};
