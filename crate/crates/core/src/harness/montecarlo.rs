//! Monte Carlo replication over measurement-noise realizations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FdiError, Result};
use crate::fdi::{FdiReport, Thresholds};
use crate::harness::config::FaultSpec;
use crate::harness::experiment::{run_replicate, simulate_plant, Prepared};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub run_index: usize,
    pub message: String,
}

/// Averages over the successful replicates of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub fault: FaultSpec,
    pub label: String,
    pub seed: u64,
    pub n_runs: usize,
    pub mean_chi2_global: f64,
    /// Ordered as [`crate::params::Param::ALL`].
    pub mean_chi2_minmax: [f64; 4],
    pub detection_rate: f64,
    pub isolation_rates: [f64; 4],
    pub thresholds: Thresholds,
    /// Capacity lost to the side reaction in the plant record [Ah].
    pub plant_q_loss: f64,
    pub reports: Vec<FdiReport>,
    pub failures: Vec<RunFailure>,
}

impl McSummary {
    /// Recomputes the averages from `reports`, in replicate order.
    pub fn from_reports(
        fault: FaultSpec,
        seed: u64,
        thresholds: Thresholds,
        reports: Vec<FdiReport>,
        failures: Vec<RunFailure>,
        plant_q_loss: f64,
    ) -> Result<Self> {
        if reports.is_empty() {
            return Err(FdiError::domain(format!(
                "no successful replicate for {} ({} failures)",
                fault.label(),
                failures.len()
            )));
        }
        let n = reports.len() as f64;
        let mean_chi2_global = reports.iter().map(|r| r.chi2_global).sum::<f64>() / n;
        let mut mean_chi2_minmax = [0.0; 4];
        let mut isolation_rates = [0.0; 4];
        for (i, (m, rate)) in mean_chi2_minmax.iter_mut().zip(isolation_rates.iter_mut()).enumerate() {
            *m = reports.iter().map(|r| r.chi2_minmax[i]).sum::<f64>() / n;
            *rate = reports.iter().filter(|r| r.isolated[i]).count() as f64 / n;
        }
        let detection_rate = reports.iter().filter(|r| r.detected).count() as f64 / n;
        Ok(McSummary {
            fault,
            label: fault.label(),
            seed,
            n_runs: reports.len() + failures.len(),
            mean_chi2_global,
            mean_chi2_minmax,
            detection_rate,
            isolation_rates,
            thresholds,
            plant_q_loss,
            reports,
            failures,
        })
    }

    /// Decision on the averaged global statistic.
    pub fn mean_detected(&self) -> bool {
        self.mean_chi2_global > self.thresholds.global
    }

    pub fn mean_isolated(&self) -> [bool; 4] {
        self.mean_chi2_minmax.map(|v| v > self.thresholds.isolation)
    }
}

/// Runs `n_runs` replicates in parallel. The noise-free plant record is
/// shared; each replicate draws its own noise stream.
pub fn run_monte_carlo(prepared: &Prepared, fault: &FaultSpec) -> Result<McSummary> {
    let exp = &prepared.config.experiment;
    let plant = simulate_plant(prepared, fault)?;
    let outcomes: Vec<Result<FdiReport>> = (0..exp.n_runs)
        .into_par_iter()
        .map(|i| run_replicate(prepared, fault, &plant, i, false).map(|o| o.report))
        .collect();
    let mut reports = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for (run_index, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(r) => reports.push(r),
            Err(e) if exp.fail_fast => return Err(e),
            Err(e) => {
                log::warn!("{e}");
                failures.push(RunFailure {
                    run_index,
                    message: e.to_string(),
                });
            }
        }
    }
    McSummary::from_reports(*fault, exp.seed, exp.thresholds()?, reports, failures, plant.q_loss)
}
