//! Fast emulation and modular calibration for simulators with functional output.
//!
//! The functional output of an ensemble of simulator runs is reduced to a
//! handful of orthogonal basis weights. Each weight is emulated by a local
//! Gaussian process whose inputs are stretched by globally estimated
//! lengthscales, so nearest neighbours in the scaled space are the
//! highest-correlation training points and prediction needs no further
//! parameter estimation. On top of the emulator sit a Metropolis sampler for
//! modular calibration (with an optional basis discrepancy model) and a
//! deterministic MAP estimator built on a rank-reduced Gaussian likelihood.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and
//! wall-clock benchmarks live in the `flagp` companion crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod basis;
pub mod calibration;
pub mod dataset;
pub mod discrepancy;
pub mod emulator;
mod error;
pub mod gp;
pub mod knn;
pub mod linalg;
pub mod map;
pub mod metrics;
pub mod optim;
pub mod rng;
pub mod scaling;

pub use error::{Error, Result};

pub use nalgebra::{DMatrix, DVector};
