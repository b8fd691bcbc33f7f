//! Noise-aware single-qubit tomography for trapped-ion registers.
//!
//! The crate simulates imperfect single-qubit gates, noisy thresholded
//! readout and cross-talk between neighboring ions, reconstructs those errors
//! from tomography data, and synthesizes short pulse sequences that realize
//! near-ideal target rotations from the imperfect pulses.
//!
//! Modules, bottom-up:
//! - [`qmath`]: complex matrices, rotation unitaries, gate fidelity.
//! - [`noise`]: ground-truth readout, gate and cross-talk models.
//! - [`sim`]: circuits, exact outcome probabilities, seeded sampling.
//! - [`tomo`]: readout, tomography-gate and process estimators.
//! - [`calib`]: linear model fitting and corrective sequence synthesis.
//! - [`cli`]: experiment campaigns behind the `iontomo` binary.

pub mod calib;
pub mod cli;
pub mod error;
pub mod noise;
pub mod optim;
pub mod qmath;
pub mod rng;
pub mod sim;
pub mod tomo;

pub use error::{Error, Result};
