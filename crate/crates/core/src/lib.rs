//! Neural-network quantum state tomography on Pauli-4 measurement data.
//!
//! The crate covers the whole pipeline: exact measurement statistics and
//! samplers for structured pure states ([`states`]), a bidirectional stacked
//! GRU generative model with exact likelihoods and hand-derived gradients
//! ([`model`]), minibatch training with fluctuation-based checkpoint
//! selection ([`training`]), and classical/quantum fidelity estimates
//! ([`evaluation`]).

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod povm;
pub mod seed;
pub mod states;
pub mod training;

pub use dataset::MeasurementDataset;
pub use error::{QstError, Result};
pub use evaluation::{FidelityReport, GenerativeModel};
pub use povm::{pauli4_povm, PovmFrame};
pub use states::{StateFamily, StateSpec};
pub use training::{EpochLoss, TrainConfig, TrainLedger};
