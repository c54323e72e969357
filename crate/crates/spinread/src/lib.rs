//! Desk-scale simulation and classification toolkit for noise-robust
//! single-shot spin readout.
//!
//! The crate simulates charge-sensor traces with a two-state Markov
//! tunneling model, injects Gaussian/drift/spike noise at calibrated
//! levels, and compares three event classifiers: optimized thresholding,
//! sliding-Haar wavelet edge detection, and a tiny CNN+LSTM network
//! (110 parameters) trained from scratch with hand-rolled
//! backpropagation. An experiment harness runs noise-robustness accuracy
//! sweeps and spin-relaxation (T1) estimation with exponential fitting.
//!
//! Everything stochastic is driven by explicit seeds; identical seeds
//! reproduce results bit-for-bit.

pub mod baseline;
pub mod config;
pub mod dnn;
pub mod error;
pub mod experiments;
pub mod expfit;
pub mod io;
pub mod noise;
pub mod rng;
pub mod sim;
pub mod trace;

pub use error::{Error, Result};
pub use rng::Rng;
pub use trace::{Label, LabeledDataset, Trace};
