//! Mean and covariance feature matching GANs.
//!
//! The crate provides a small dense tensor type with reverse-mode
//! differentiation, parametric and fixed feature maps, the mean and
//! covariance matching IPM objectives (primal and dual forms), the
//! constrained critic updates they need, synthetic mixture data, the
//! training loops, and evaluation and plotting helpers.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod autodiff;
pub mod codec;
pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod gradcheck;
pub mod linalg;
pub mod norm;
pub mod objectives;
pub mod optim;
pub mod params;
pub mod plot;
pub mod rng;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, Tape, Var};
pub use data::{MixtureSample, MixtureSpec, NoisePrior};
pub use error::{Error, Result};
pub use features::{FeatureMap, Generator, IdentityMap, Mlp, MlpFeatureMap, RandomFourierMap};
pub use norm::Norm;
pub use objectives::{CovCritic, LabelHead, LossWeights, MeanCritic};
pub use optim::{Direction, RmsPropState};
pub use params::ParamStore;
pub use tensor::Tensor;
pub use train::{Objective, TrainConfig, TrainRecord, TrainTrace, Trainer};
