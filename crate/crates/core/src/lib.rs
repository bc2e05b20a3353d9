//! Multi-step chlorophyll forecasting from multivariate water-quality series.
//!
//! The predictor chains three learned stages over a sliding input window:
//! a moving-average trend/period decomposition with spectral denoising, an
//! adaptive graph convolution across parameters, and a stack of dilated causal
//! convolutions. Everything runs on the small reverse-mode engine in
//! [`autodiff`].

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod decomposition;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod model;
pub mod pipeline;
pub mod synthetic;
pub mod temporal;
pub mod train;

pub use error::{Error, Result};
