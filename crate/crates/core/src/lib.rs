//! Intertwined time-distributed dense / space-distributed temporal
//! convolution networks for multichannel EEG classification, together with
//! the cascade and parallel convolutional-recurrent baselines, training,
//! preprocessing, hyperparameter search and nonparametric model comparison.
//!
//! Everything runs on a small reverse-mode autodiff engine in double
//! precision ([`autodiff`]).

pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod filter;
pub mod gradcheck;
mod kernels;
pub mod layers;
pub mod mesh;
pub mod model;
pub mod optim;
pub mod params;
pub mod plan;
pub mod rng;
pub mod space;
pub mod stats;
pub mod sweep;
pub mod synth;
pub mod tensor;
pub mod train;

pub use autodiff::{Activation, Graph, ParamId, PoolKind, Var};
pub use config::{Family, HyperConfig, Minimizer};
pub use model::{build_model, Model};
pub use plan::{plan_shapes, ShapePlan};
pub use error::{Error, Result};
pub use params::ParamStore;
pub use tensor::Tensor;
