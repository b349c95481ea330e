//! Learning probe-scanning skills from demonstrations.
//!
//! States are embedded as 50-D latent nodes (40 image features, a probe
//! quaternion and a contact wrench). A full-covariance Gaussian mixture is
//! fitted over the nodes; control variables are predicted by Gaussian
//! mixture regression, checked against per-component likelihood bounds and,
//! when unstable, snapped to the Mahalanobis-nearest component.

pub mod config;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod adaptation;
pub mod gmm;
pub mod gmr;
pub mod image;
pub mod kmeans;
pub mod mc;
pub mod quat;
pub mod stability;
pub mod synth;
mod textfmt;
pub mod trajectory;
pub mod types;

pub use error::{Error, Result};
pub use quat::{quat_angle_deg, Quaternion};
pub use types::*;
