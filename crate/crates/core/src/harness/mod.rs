//! Experiment plumbing: drive cycles, configuration, single runs, Monte
//! Carlo replication and reports.

pub mod config;
pub mod drive_cycle;
pub mod experiment;
pub mod montecarlo;
pub mod physics;
pub mod report;

pub use config::{Config, ExperimentConfig, FaultSpec};
pub use drive_cycle::{load_drive_cycle, CycleTarget, DriveCycle, SyntheticCycle};
pub use experiment::{run_experiment, simulate_plant, Prepared};
pub use montecarlo::{run_monte_carlo, McSummary};
pub use physics::{fault_physics, worst_fault_cases, DischargeTest, FaultPhysics};
