//! Enhanced-single-particle (EHM) lithium-ion cell model with a local
//! fault detection and isolation layer built on an unscented Kalman filter.
//!
//! * [`model`]: two-state EHM dynamics, output voltage and SEI side reaction.
//! * [`sensitivity`]: state/output sensitivities and identifiability.
//! * [`ukf`]: augmented-state UKF.
//! * [`fdi`]: primary residual, normalized residual, χ² and min-max tests.
//! * [`harness`]: drive cycles, configuration, experiments and Monte Carlo.

pub mod chi2;
pub mod error;
pub mod fdi;
pub mod harness;
pub mod model;
pub mod ocp;
pub mod params;
pub mod sensitivity;
pub mod ukf;

pub use error::{FdiError, Result};
pub use model::{EhmState, Simulator};
pub use ocp::{OcpCurve, OcpPair};
pub use params::{CellParameters, Param, ThetaVector};
