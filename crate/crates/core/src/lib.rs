//! Simulation library for 5G reference-signal positioning with vector
//! antennas, OFDM range-Doppler imaging and FMCW mmWave radar processing.

pub mod antenna;
pub mod channel;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod fmcw;
pub mod positioning;
pub mod render;
pub mod sar_imaging;
pub mod rng;
pub mod waveforms;

pub use error::{Error, Result};
