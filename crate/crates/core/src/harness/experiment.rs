//! One experiment: faulted plant, noisy measurements, UKF at the nominal
//! parameters, primary residuals and the local tests.

use nalgebra::{Matrix2x4, RowVector4};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{FdiError, Result};
use crate::fdi::{FdiReport, PrimaryResidualSeries, RunMetadata};
use crate::harness::config::{Config, FaultSpec};
use crate::harness::drive_cycle::DriveCycle;
use crate::model::{EhmState, Simulator};
use crate::ocp::OcpPair;
use crate::params::CellParameters;
use crate::sensitivity::{
    identifiability_report, relative_sensitivities, simulate_with_sensitivities, IdentifiabilityReport,
    SensitivityTracker, TrajectoryContext,
};
use crate::ukf::{ukf_step, EhmModel, UkfState};

/// Configuration together with everything derived from it once: OCP
/// curves and the input sequence.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: Config,
    pub ocps: OcpPair,
    pub cycle: DriveCycle,
    /// Terminal current density per sample [A/m²], length `n`.
    pub currents: Vec<f64>,
}

impl Prepared {
    pub fn new(config: Config) -> Result<Self> {
        config.validate()?;
        let ocps = config.build_ocps()?;
        let cycle = config.build_cycle()?;
        Self::with_cycle(config, ocps, cycle)
    }

    pub fn with_cycle(config: Config, ocps: OcpPair, cycle: DriveCycle) -> Result<Self> {
        let area = config.cell.area;
        let currents = cycle
            .mirrored_repeat(config.experiment.n)
            .into_iter()
            .map(|i| i / area)
            .collect();
        Ok(Prepared {
            config,
            ocps,
            cycle,
            currents,
        })
    }

    /// Currents in amperes.
    pub fn currents_a(&self) -> Vec<f64> {
        self.currents.iter().map(|z| z * self.config.cell.area).collect()
    }
}

/// Noise-free plant response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantRecord {
    pub voltage: Vec<f64>,
    pub states: Vec<EhmState>,
    /// Side-reaction current density per sample (zero without side reaction).
    pub side_current: Vec<f64>,
    /// Capacity lost by the side reaction over the record [Ah].
    pub q_loss: f64,
}

impl PlantRecord {
    pub fn soc_range(&self) -> (f64, f64) {
        self.states.iter().fold((f64::MAX, f64::MIN), |(lo, hi), s| (lo.min(s.soc), hi.max(s.soc)))
    }
}

/// Simulates the plant under `fault` over the prepared input.
pub fn simulate_plant(prepared: &Prepared, fault: &FaultSpec) -> Result<PlantRecord> {
    let cfg = &prepared.config;
    let theta = fault.plant_theta(&cfg.theta);
    let mut params = cfg.cell.clone();
    let side = if let FaultSpec::SideReaction { j_sr0 } = *fault {
        params.j_sr0 = j_sr0;
        true
    } else {
        false
    };
    let mut sim = Simulator::new(params, theta, prepared.ocps.clone(), cfg.initial_state())?;
    if side {
        sim = sim.with_side_reaction();
    }
    let records = sim.run(&prepared.currents).map_err(|e| e.context(format!("plant ({})", fault.label())))?;
    let q_loss = sim.side_reaction().map_or(0.0, |s| s.q_loss);
    Ok(PlantRecord {
        voltage: records.iter().map(|r| r.voltage).collect(),
        states: records.iter().map(|r| r.state).collect(),
        side_current: records.iter().map(|r| r.d).collect(),
        q_loss,
    })
}

/// Gaussian measurement noise for replicate `run_index`: the ChaCha stream
/// number is the replicate index, so every replicate is reproducible on its
/// own.
pub fn measurement_noise(seed: u64, run_index: u64, n: usize, variance: f64) -> Result<Vec<f64>> {
    let normal = Normal::new(0.0, variance.sqrt()).map_err(|e| FdiError::config(e.to_string()))?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(run_index);
    Ok((0..n).map(|_| normal.sample(&mut rng)).collect())
}

/// Per-sample filter and sensitivity trace.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub current: Vec<f64>,
    pub measured: Vec<f64>,
    pub predicted: Vec<f64>,
    pub innovation: Vec<f64>,
    pub x_hat: Vec<[f64; 2]>,
    pub p_diag: Vec<[f64; 2]>,
    pub s_y: Vec<[f64; 4]>,
}

impl RunTrace {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "k,current_density,y_meas,y_hat,innovation,soc_hat,css_hat,p_soc,p_css,s_eps_s_neg,s_R_f,s_g_s,s_n_Li"
        )?;
        for k in 0..self.current.len() {
            let s = self.s_y.get(k).copied().unwrap_or([f64::NAN; 4]);
            writeln!(
                w,
                "{k},{},{},{},{},{},{},{},{},{},{},{},{}",
                self.current[k],
                self.measured[k],
                self.predicted[k],
                self.innovation[k],
                self.x_hat[k][0],
                self.x_hat[k][1],
                self.p_diag[k][0],
                self.p_diag[k][1],
                s[0],
                s[1],
                s[2],
                s[3]
            )?;
        }
        Ok(())
    }
}

/// Result of one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub report: FdiReport,
    pub series: PrimaryResidualSeries,
    pub trace: Option<RunTrace>,
}

/// Filters one measured record and evaluates the local tests.
pub fn analyze_record(
    prepared: &Prepared,
    measured: &[f64],
    metadata: RunMetadata,
    keep_trace: bool,
) -> Result<RunOutput> {
    let cfg = &prepared.config;
    let exp = &cfg.experiment;
    if measured.len() != prepared.currents.len() {
        return Err(FdiError::config("measurement and input lengths differ"));
    }
    let x0 = cfg.initial_state().to_vector();
    let ukf_cfg = cfg.ukf.to_config(x0 * (1.0 + exp.init_state_error_rel), exp.noise_var);
    let nominal = CellParameters {
        j_sr0: 0.0,
        ..cfg.cell.clone()
    };
    let model = EhmModel::new(cfg.theta, &nominal, &prepared.ocps)?;
    let mut tracker = SensitivityTracker::new(cfg.theta, nominal.clone(), prepared.ocps.clone(), exp.second_order);
    let mut state = UkfState::initial(&ukf_cfg);
    let mut series = PrimaryResidualSeries::with_capacity(measured.len().saturating_sub(exp.discard));
    let mut trace = keep_trace.then(RunTrace::default);

    for (k, (&u, &y)) in prepared.currents.iter().zip(measured).enumerate() {
        state = ukf_step(&state, u, y, &model, &ukf_cfg)?;
        let prior = EhmState::from_vector(&state.x_prior);
        let posterior = EhmState::from_vector(&state.x_hat);
        let mut s_y_row = None;
        if k >= exp.discard || trace.is_some() {
            let bundle = tracker.output(&prior, u)?;
            s_y_row = Some(bundle.s_y);
            if k >= exp.discard {
                series.push(bundle.s_y, bundle.s_yy, state.last_innovation);
            }
        }
        if let Some(t) = trace.as_mut() {
            let s: RowVector4<f64> = s_y_row.unwrap_or_else(RowVector4::zeros);
            t.current.push(u);
            t.measured.push(y);
            t.predicted.push(state.last_y_hat);
            t.innovation.push(state.last_innovation);
            t.x_hat.push([state.x_hat[0], state.x_hat[1]]);
            t.p_diag.push([state.p_x[(0, 0)], state.p_x[(1, 1)]]);
            t.s_y.push([s[0], s[1], s[2], s[3]]);
        }
        tracker.advance(&posterior, u)?;
    }
    let report = FdiReport::from_series(&series, exp.n_i, exp.thresholds()?, metadata)?;
    Ok(RunOutput { report, series, trace })
}

/// Runs replicate `run_index` against a precomputed plant record.
pub fn run_replicate(
    prepared: &Prepared,
    fault: &FaultSpec,
    plant: &PlantRecord,
    run_index: usize,
    keep_trace: bool,
) -> Result<RunOutput> {
    let exp = &prepared.config.experiment;
    let noise = measurement_noise(exp.seed, run_index as u64, plant.voltage.len(), exp.noise_var)?;
    let measured: Vec<f64> = plant.voltage.iter().zip(&noise).map(|(v, e)| v + e).collect();
    let metadata = RunMetadata {
        seed: Some(exp.seed),
        run_index: Some(run_index),
        fault: fault.label(),
        n: exp.n,
        discard: exp.discard,
        n_i: exp.n_i,
    };
    analyze_record(prepared, &measured, metadata, keep_trace)
        .map_err(|e| e.context(format!("run {run_index} ({})", fault.label())))
}

/// Simulates, adds noise and tests a single replicate.
pub fn run_experiment(prepared: &Prepared, fault: &FaultSpec, run_index: usize) -> Result<FdiReport> {
    let plant = simulate_plant(prepared, fault)?;
    Ok(run_replicate(prepared, fault, &plant, run_index, false)?.report)
}

/// Identifiability of θ on the prepared input at the nominal parameters,
/// from the open-loop output sensitivities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityAnalysis {
    pub report: IdentifiabilityReport,
    /// Norms of the relative sensitivities `θ_j ∂y/∂θ_j`.
    pub relative_norms: [f64; 4],
    pub soc_range: (f64, f64),
    pub s_x_final: Matrix2x4<f64>,
}

pub fn sensitivity_analysis(prepared: &Prepared) -> Result<SensitivityAnalysis> {
    let cfg = &prepared.config;
    let ctx = TrajectoryContext {
        initial: cfg.initial_state(),
        currents: &prepared.currents,
        theta: cfg.theta,
        params: &cfg.cell,
        ocps: &prepared.ocps,
    };
    let tr = simulate_with_sensitivities(&ctx)?;
    let report = identifiability_report(&tr.s_y)?;
    let rel = relative_sensitivities(&tr.s_y, &cfg.theta);
    let mut relative_norms = [0.0; 4];
    for (j, norm) in relative_norms.iter_mut().enumerate() {
        *norm = rel.iter().map(|r| r[j] * r[j]).sum::<f64>().sqrt();
    }
    let soc_range = tr
        .states
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), s| (lo.min(s.soc), hi.max(s.soc)));
    Ok(SensitivityAnalysis {
        report,
        relative_norms,
        soc_range,
        s_x_final: *tr.s_x.last().expect("non-empty trajectory"),
    })
}
