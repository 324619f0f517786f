//! Two-level text anomaly detection.
//!
//! A semi-supervised GAN is trained on baseline text. The per-layer outputs of
//! its convolutional discriminator form a short sequence of vectors for every
//! document; an LSTM autoencoder trained on baseline sequences flags documents
//! whose sequence it cannot reconstruct. Documents that pass are classified by
//! the discriminator's class head.

pub mod artifact;
pub mod autodiff;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod gan;
pub mod nn;
pub mod ood;
pub mod pipeline;
pub mod stats;
pub mod synthetic;

pub use error::{Error, Result};
