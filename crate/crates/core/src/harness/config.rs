//! TOML experiment configuration.
//!
//! Every section is optional; missing keys fall back to the defaults shown
//! listed in `configs/default.toml`.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{FdiError, Result};
use crate::fdi::Thresholds;
use crate::harness::drive_cycle::{load_drive_cycle, CycleTarget, DriveCycle, SyntheticCycle};
use crate::model::EhmState;
use crate::ocp::{OcpPair, OcpSpec};
use crate::params::{CellParameters, Param, ThetaVector};
use crate::ukf::{UkfConfig, L_AUG};

/// Sample budget, noise, statistics and replication settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Samples per record.
    pub n: usize,
    /// Warm-up samples dropped before the residuals are accumulated.
    pub discard: usize,
    /// Monte Carlo replicates.
    pub n_runs: usize,
    /// Measurement noise variance [V²].
    pub noise_var: f64,
    /// Master seed.
    pub seed: u64,
    /// Lag count of the Σ estimator.
    pub n_i: usize,
    /// False-alarm probability used for both thresholds.
    pub alpha_fa: f64,
    /// Explicit thresholds overriding `alpha_fa`.
    pub thresholds: Option<ThresholdOverride>,
    /// Relative error applied to both components of the initial estimate.
    pub init_state_error_rel: f64,
    /// Plant SOC at k = 0; the surface concentration starts relaxed.
    pub initial_soc: f64,
    /// Include the `r · s_yy` term in the M estimate.
    pub second_order: bool,
    /// Abort a Monte Carlo batch on the first failing replicate.
    pub fail_fast: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n: 8400,
            discard: 200,
            n_runs: 100,
            noise_var: 1e-5,
            seed: 7,
            n_i: 12,
            alpha_fa: 0.01,
            thresholds: None,
            init_state_error_rel: -0.05,
            initial_soc: 0.97,
            second_order: true,
            fail_fast: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdOverride {
    pub global: f64,
    pub isolation: f64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n <= self.discard {
            return Err(FdiError::config(format!(
                "need n > discard (n = {}, discard = {})",
                self.n, self.discard
            )));
        }
        if self.n - self.discard <= self.n_i {
            return Err(FdiError::config("n − discard must exceed n_i"));
        }
        if self.n_runs == 0 {
            return Err(FdiError::config("n_runs must be ≥ 1"));
        }
        if !(self.noise_var > 0.0 && self.noise_var.is_finite()) {
            return Err(FdiError::config("noise_var must be > 0"));
        }
        if !(self.init_state_error_rel > -1.0 && self.init_state_error_rel.is_finite()) {
            return Err(FdiError::config("init_state_error_rel must be > −1"));
        }
        if !(self.initial_soc > 0.0 && self.initial_soc < 1.0) {
            return Err(FdiError::config("initial_soc must lie in (0, 1)"));
        }
        if let Some(t) = self.thresholds {
            if !(t.global > 0.0 && t.isolation > 0.0) {
                return Err(FdiError::config("thresholds must be > 0"));
            }
        }
        self.thresholds()?;
        Ok(())
    }

    pub fn thresholds(&self) -> Result<Thresholds> {
        let mut t = Thresholds::from_false_alarm(self.alpha_fa)?;
        if let Some(o) = self.thresholds {
            t.global = o.global;
            t.isolation = o.isolation;
        }
        Ok(t)
    }
}

/// Filter tuning; covariances are isotropic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UkfTuning {
    pub alpha: f64,
    pub beta: f64,
    /// Defaults to `3 − L`.
    pub kappa: Option<f64>,
    /// Process noise variance per state.
    pub q: f64,
    /// Initial covariance per state.
    pub p0: f64,
}

impl Default for UkfTuning {
    fn default() -> Self {
        UkfTuning {
            alpha: 0.1,
            beta: 2.0,
            kappa: None,
            q: 1e-8,
            p0: 1e-3,
        }
    }
}

impl UkfTuning {
    pub fn to_config(&self, x0_hat: Vector2<f64>, r_x: f64) -> UkfConfig {
        UkfConfig {
            alpha: self.alpha,
            beta_w: self.beta,
            kappa: self.kappa.unwrap_or(3.0 - L_AUG as f64),
            q_x: Matrix2::identity() * self.q,
            r_x,
            p_x0: Matrix2::identity() * self.p0,
            x0_hat,
        }
    }
}

/// Current profile source. A CSV `path` takes precedence over the
/// synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CycleConfig {
    pub path: Option<PathBuf>,
    pub max_c_rate: f64,
    pub mean_c_rate: f64,
    pub synthetic: SyntheticCycle,
}

impl Default for CycleConfig {
    fn default() -> Self {
        let t = CycleTarget::default();
        CycleConfig {
            path: None,
            max_c_rate: t.max_c_rate,
            mean_c_rate: t.mean_c_rate,
            synthetic: SyntheticCycle::default(),
        }
    }
}

impl CycleConfig {
    pub fn target(&self) -> CycleTarget {
        CycleTarget {
            max_c_rate: self.max_c_rate,
            mean_c_rate: self.mean_c_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OcpConfig {
    pub pos: OcpSpec,
    pub neg: OcpSpec,
}

impl Default for OcpConfig {
    fn default() -> Self {
        OcpConfig {
            pos: OcpSpec::Builtin {
                name: "lco-synthetic".into(),
            },
            neg: OcpSpec::Builtin {
                name: "carbon-synthetic".into(),
            },
        }
    }
}

/// Plant-side fault injected for a whole record.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FaultSpec {
    #[default]
    None,
    /// `θ_target ← θ_target · (1 + delta_rel)`.
    ParamRelative { target: Param, delta_rel: f64 },
    /// Side reaction active with exchange current density `j_sr0` [A/m²].
    SideReaction { j_sr0: f64 },
}

impl FaultSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            FaultSpec::None => Ok(()),
            FaultSpec::ParamRelative { delta_rel, .. } => {
                if delta_rel == 0.0 || !delta_rel.is_finite() || delta_rel <= -1.0 {
                    Err(FdiError::config(format!(
                        "param_relative fault needs a finite delta_rel ≠ 0 and > −1, got {delta_rel}"
                    )))
                } else {
                    Ok(())
                }
            }
            FaultSpec::SideReaction { j_sr0 } => {
                if j_sr0 > 0.0 && j_sr0.is_finite() {
                    Ok(())
                } else {
                    Err(FdiError::config(format!("side_reaction fault needs j_sr0 > 0, got {j_sr0}")))
                }
            }
        }
    }

    /// Short label such as `R_f+0.2%` or `sr(j_sr0=3e-5)`.
    pub fn label(&self) -> String {
        match *self {
            FaultSpec::None => "none".into(),
            FaultSpec::ParamRelative { target, delta_rel } => {
                format!("{target}{:+}%", delta_rel * 100.0)
            }
            FaultSpec::SideReaction { j_sr0 } => format!("side_reaction(j_sr0={j_sr0:e})"),
        }
    }

    /// Plant parameters under this fault.
    pub fn plant_theta(&self, theta0: &ThetaVector) -> ThetaVector {
        match *self {
            FaultSpec::ParamRelative { target, delta_rel } => theta0.perturbed(target, delta_rel),
            _ => *theta0,
        }
    }
}

/// Whole configuration file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub experiment: ExperimentConfig,
    pub ukf: UkfTuning,
    pub cycle: CycleConfig,
    pub cell: CellParameters,
    pub theta: ThetaVector,
    pub ocp: OcpConfig,
    pub fault: FaultSpec,
    /// Directory relative paths are resolved against; set by [`Config::load`].
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| FdiError::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| FdiError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: Config = toml::from_str(&text).map_err(|e| FdiError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        config.base_dir = path.parent().map(Path::to_path_buf);
        config.validate().map_err(|e| e.context(format!("config {}", path.display())))?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| FdiError::config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.experiment.validate()?;
        self.cell.validate().map_err(|e| FdiError::config(e.to_string()))?;
        self.theta.validate().map_err(|e| FdiError::config(e.to_string()))?;
        self.fault.validate()?;
        let ukf = self.ukf.to_config(Vector2::new(0.5, 0.5), self.experiment.noise_var);
        ukf.validate()?;
        if self.cycle.path.is_none() {
            self.cycle.synthetic.validate()?;
        }
        Ok(())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn build_ocps(&self) -> Result<OcpPair> {
        let base = self.base_dir.as_deref();
        Ok(OcpPair {
            pos: self.ocp.pos.build(base)?,
            neg: self.ocp.neg.build(base)?,
        })
    }

    pub fn capacity_ah(&self) -> f64 {
        self.cell.nominal_capacity_ah(&self.theta)
    }

    /// One profile segment, from the CSV file when configured.
    pub fn build_cycle(&self) -> Result<DriveCycle> {
        let capacity = self.capacity_ah();
        match &self.cycle.path {
            Some(p) => load_drive_cycle(&self.resolve(p), self.cycle.target(), capacity, self.cell.t_s),
            None => self
                .cycle
                .synthetic
                .generate(self.cycle.target(), capacity, self.cell.t_s),
        }
    }

    /// The plant's initial state.
    pub fn initial_state(&self) -> EhmState {
        EhmState::relaxed(self.experiment.initial_soc)
    }
}
