//! Simulation and correction of turbulence-distorted Laguerre-Gaussian modes.

pub mod channel;
pub mod cnn;
pub mod config;
pub mod dataset;
pub mod error;
pub mod fft;
pub mod gdo;
pub mod field;
pub mod io;
pub mod optics;
pub mod pipeline;
pub mod seed;
pub mod tomography;
pub mod turbulence;

pub use error::{Error, Result};
