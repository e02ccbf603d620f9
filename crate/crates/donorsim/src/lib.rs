//! Pulse-level simulator of two exchange-coupled multi-nuclear phosphorus
//! spin registers, together with the calibration, readout, benchmarking, and
//! tomography protocols used to operate them as an 11-spin processor.
//!
//! The crate is organized bottom-up:
//!
//! - [`model`] — static spin Hamiltonian: resonance-line arithmetic for both
//!   electrons and nuclei, exchange interpolation, Stark shifts.
//! - [`freqtable`] — the calibrated drive-frequency table derived from a
//!   model snapshot, and its cheap collective-update rules.
//! - [`rabi`] — two-level detuned-drive closed forms: flip probability,
//!   propagators, selectivity node laws.
//! - [`state`] — dense state vector with conditioned single-spin operations.
//! - [`circuit`] — gate-level circuit description (conditioned rotations,
//!   virtual-Z, electron init/measure, idles, repeated readout blocks).
//! - [`config`] — the `device_11q.json` schema: device, noise, policies.
//! - [`noise`] — fluctuators, drift, quasi-static dephasing, line pulling.
//! - [`qnd`] — exact Markov analysis of repetitive nuclear readout.
//! - [`engine`] — pulse scheduler and shot executor: realizes circuits as
//!   finite-duration tones acting on every in-band resonance line.

pub mod bootstrap;
pub mod calibration;
pub mod circuit;
pub mod circuits;
pub mod clifford;
pub mod config;
pub mod decompose;
pub mod engine;
pub mod error;
pub mod fit;
pub mod freqtable;
pub mod model;
pub mod noise;
pub mod protocols;
pub mod qnd;
pub mod rb;
pub mod rabi;
pub mod state;
pub mod tomography;

pub use config::{reference_config, reference_device, SimConfig};
pub use engine::{Engine, NuclearRead, PulseMode, ReadoutMode, ResolvedPulse, ShotRecord};
pub use error::{Result, SimError};
pub use model::{DeviceModel, SpinId, SpinRole, SpinState};
pub use state::StateVector;
