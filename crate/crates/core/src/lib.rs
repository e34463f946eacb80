//! Two-step self-supervised domain adaptation at desk scale.
//!
//! The pipeline trains a segmentation (or classification) generator against a
//! labeled source domain while adversarially aligning the entropy maps of an
//! unlabeled target domain, ranks the target images by mean prediction
//! entropy, splits them into easy and hard subdomains by a ratio `lambda`,
//! and then aligns the hard split to the pseudo-labeled easy split.
//!
//! Everything runs on a small reverse-mode autodiff engine ([`autodiff`])
//! over dense f32 tensors; training is deterministic given a seed.

pub mod autodiff;
pub mod datagen;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod kernels;
pub mod losses;
pub mod maps;
pub mod models;
pub mod optim;
pub mod pipeline;
pub mod pseudolabel;
pub mod ranking;
pub mod rng;
pub mod tensor;

pub use autodiff::{Tape, Var, PROB_EPS};
pub use error::{Error, Result};
pub use maps::{EntropyMap, LabelMap, ProbMap};
pub use optim::{adam_step, sgd_step, ParameterSet};
pub use tensor::Tensor;
