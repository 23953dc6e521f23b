//! Hyperbolic deep learning on the Lorentz (hyperboloid) model.
//!
//! The crate is organised bottom-up:
//!
//! - [`manifold`]: points, tangent vectors, distance, exp/log maps, parallel transport.
//! - [`gyro`]: gyroaddition, gyromultiplication and gyroinverse (closed forms plus
//!   the Riemannian composites they are checked against).
//! - [`frechet`]: weighted Fréchet mean and variance.
//! - [`hyperbolicity`]: Gromov δ-hyperbolicity of finite metric spaces.
//! - [`autodiff`]: a small reverse-mode tape over dense `f64` arrays, plus Adam.
//! - [`layers`]: Euclidean and Lorentz neural layers built on the tape.
//! - [`alignment`]: hyperbolic batch normalization, domain-specific momentum
//!   statistics and the horospherical sliced-Wasserstein loss.
//! - [`model`]: the HEEGNet architecture, training, source-free adaptation and
//!   evaluation, with a binary checkpoint format.
//! - [`synth`] and [`data`]: synthetic generators and on-disk dataset formats.
//! - [`config`] and [`experiment`]: run configuration and cross-validation folds.

pub mod alignment;
pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod frechet;
pub mod gradcheck;
pub mod gyro;
pub mod hyperbolicity;
pub mod layers;
pub mod manifold;
pub mod model;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
pub use frechet::{frechet_variance, momentum_mean_update, weighted_frechet_mean, FrechetResult};
pub use gyro::{gyroadd, gyroinverse, gyromul};
pub use manifold::{Curvature, LorentzPoint, TangentVector};

/// Crate version, echoed into every report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
