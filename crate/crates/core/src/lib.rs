//! Joint training of a feature attention mask, a latent population graph and
//! a graph-convolutional node classifier, with interpretability regularizers
//! on the mask.
//!
//! The pipeline per forward pass is: attention mask → masked features →
//! embedding MLP → soft adjacency → normalized graph convolutions → logits.
//! Everything is expressed on the [`autodiff::Tape`], so a single backward
//! pass yields gradients for every parameter.

pub mod autodiff;
pub mod classifier;
pub mod cli;
pub mod data;
pub mod error;
pub mod glm;
pub mod iam;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod report;
pub mod trainer;

pub use error::{Error, Result};
