//! Lottery-ticket subnetwork pools.
//!
//! This crate trains MLP classifiers, runs iterative magnitude pruning with
//! weight rewinding to produce a pool of progressively sparser checkpoints,
//! and then builds stronger sparse (and dense) networks by greedily
//! interpolating pool members under a validation-accuracy acceptance rule,
//! pruning back to the target density at every step. Weight-averaging
//! baselines (SWA, EMA), an output ensemble, and the analysis drivers for
//! heatmaps, interpolation paths, disagreement matrices, and ablations round
//! out the toolkit.

pub mod analysis;
pub mod baselines;
pub mod config;
pub mod data;
pub mod error;
pub mod imp;
pub mod model;
pub mod pools;
pub mod pruning;
pub mod store;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{lerp, scale_add, ParamSet, Tensor};
