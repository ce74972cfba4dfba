//! Direct healthy-vs-faulty discharge comparison: capacity fade and change
//! of the instantaneous ohmic drop at a constant C-rate.

use serde::{Deserialize, Serialize};

use crate::error::{FdiError, Result};
use crate::harness::config::{Config, FaultSpec};
use crate::model::{open_circuit_voltage, EhmState, Simulator};
use crate::ocp::OcpPair;
use crate::params::{CellParameters, Param, ThetaVector};

/// Constant-current discharge from rest at the charge voltage limit down to
/// a voltage cutoff. The charge limit is the healthy open-circuit voltage at
/// the configured initial SOC, so a faulty cell starts wherever its own
/// open-circuit voltage reaches that limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DischargeTest {
    pub c_rate: f64,
    pub cutoff_v: f64,
    /// Upper bound on the discharge duration [h].
    pub max_hours: f64,
}

impl Default for DischargeTest {
    fn default() -> Self {
        DischargeTest {
            c_rate: 0.5,
            cutoff_v: 3.0,
            max_hours: 4.0,
        }
    }
}

impl DischargeTest {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_rate > 0.0 && self.c_rate.is_finite()) {
            return Err(FdiError::config("discharge c_rate must be > 0"));
        }
        if !(self.cutoff_v.is_finite() && self.max_hours > 0.0) {
            return Err(FdiError::config("discharge test needs a finite cutoff and max_hours > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DischargeResult {
    /// Charge delivered until the cutoff, with the crossing interpolated [Ah].
    pub capacity_ah: f64,
    /// Terminal voltage of the first loaded sample [V].
    pub initial_voltage: f64,
    /// Open-circuit voltage minus the first loaded voltage [V].
    pub initial_drop: f64,
    /// Side-reaction capacity lost during the discharge [Ah].
    pub q_loss: f64,
}

/// Discharges the cell described by `config` under `fault`.
pub fn discharge(config: &Config, ocps: &OcpPair, fault: &FaultSpec, test: &DischargeTest) -> Result<DischargeResult> {
    test.validate()?;
    let theta = fault.plant_theta(&config.theta);
    let mut params = config.cell.clone();
    let side = if let FaultSpec::SideReaction { j_sr0 } = *fault {
        params.j_sr0 = j_sr0;
        true
    } else {
        false
    };
    // the current follows the nominal cell so every fault sees the same load
    let z = test.c_rate * config.cell.one_c_density(&config.theta);
    let dt_h = params.t_s / 3600.0;
    let area = params.area;
    let v_max = open_circuit_voltage(&config.initial_state(), &config.theta, &config.cell, ocps)?;
    let initial = EhmState::relaxed(charged_soc(v_max, &theta, &params, ocps)?);
    let ocv0 = open_circuit_voltage(&initial, &theta, &params, ocps)?;
    let mut sim = Simulator::new(params, theta, ocps.clone(), initial)?;
    if side {
        sim = sim.with_side_reaction();
    }
    let max_steps = (test.max_hours / dt_h).ceil() as usize;
    let first = sim.step(z)?;
    if first.voltage <= test.cutoff_v {
        return Err(FdiError::domain(format!(
            "cell starts below the {:.3} V cutoff",
            test.cutoff_v
        )));
    }
    let mut prev = first.voltage;
    for k in 1..max_steps {
        let rec = sim
            .step(z)
            .map_err(|e| e.context(format!("discharge step {k} ({})", fault.label())))?;
        if rec.voltage <= test.cutoff_v {
            let frac = (prev - test.cutoff_v) / (prev - rec.voltage);
            let steps = (k - 1) as f64 + frac;
            return Ok(DischargeResult {
                capacity_ah: z * area * steps * dt_h,
                initial_voltage: first.voltage,
                initial_drop: ocv0 - first.voltage,
                q_loss: rec.q_loss,
            });
        }
        prev = rec.voltage;
    }
    Err(FdiError::domain(format!(
        "cutoff {:.3} V not reached within {} h",
        test.cutoff_v, test.max_hours
    )))
}

/// SOC at which the relaxed open-circuit voltage equals `v_max`, by
/// bisection (the open-circuit voltage increases with SOC).
fn charged_soc(v_max: f64, theta: &ThetaVector, params: &CellParameters, ocps: &OcpPair) -> Result<f64> {
    let ocv = |soc: f64| open_circuit_voltage(&EhmState::relaxed(soc), theta, params, ocps);
    let (mut lo, mut hi) = (1e-3, 1.0 - 1e-3);
    // the lower end may sit outside the positive-electrode domain; walk up
    while ocv(lo).is_err() && lo < hi {
        lo += 1e-3;
    }
    if !(ocv(lo)? < v_max) {
        return Err(FdiError::domain("charge voltage limit below the cell's range"));
    }
    while ocv(hi).is_err() && hi > lo {
        hi -= 1e-3;
    }
    if !(ocv(hi)? > v_max) {
        return Err(FdiError::domain("charge voltage limit above the cell's range"));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ocv(mid)? < v_max {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Fault magnitude in terms an experimenter would measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultPhysics {
    pub fault: String,
    pub healthy: DischargeResult,
    pub faulty: DischargeResult,
    /// `100 (Q_healthy − Q_faulty) / Q_healthy`.
    pub capacity_fade_pct: f64,
    /// Change of the instantaneous drop `OCV − V` when both cells are loaded
    /// from the same state (the healthy charged state), relative to the
    /// healthy terminal voltage [%].
    pub ohmic_drop_change_pct: f64,
}

/// Instantaneous drop `OCV − V` of the first loaded sample from `state`.
fn instantaneous_drop(
    config: &Config,
    ocps: &OcpPair,
    fault: &FaultSpec,
    state: EhmState,
    z: f64,
) -> Result<(f64, f64)> {
    let theta = fault.plant_theta(&config.theta);
    let mut params = config.cell.clone();
    let side = if let FaultSpec::SideReaction { j_sr0 } = *fault {
        params.j_sr0 = j_sr0;
        true
    } else {
        false
    };
    let ocv = open_circuit_voltage(&state, &theta, &params, ocps)?;
    let mut sim = Simulator::new(params, theta, ocps.clone(), state)?;
    if side {
        sim = sim.with_side_reaction();
    }
    let v = sim.step(z)?.voltage;
    Ok((ocv - v, v))
}

pub fn fault_physics(config: &Config, ocps: &OcpPair, fault: &FaultSpec, test: &DischargeTest) -> Result<FaultPhysics> {
    let healthy = discharge(config, ocps, &FaultSpec::None, test)?;
    let faulty = discharge(config, ocps, fault, test)?;
    let z = test.c_rate * config.cell.one_c_density(&config.theta);
    let start = config.initial_state();
    let (drop_h, v_h) = instantaneous_drop(config, ocps, &FaultSpec::None, start, z)?;
    let (drop_f, _) = instantaneous_drop(config, ocps, fault, start, z)?;
    Ok(FaultPhysics {
        fault: fault.label(),
        capacity_fade_pct: 100.0 * (healthy.capacity_ah - faulty.capacity_ah) / healthy.capacity_ah,
        ohmic_drop_change_pct: 100.0 * (drop_f - drop_h).abs() / v_h,
        healthy,
        faulty,
    })
}

/// The largest fault of each kind in the reference study.
pub fn worst_fault_cases() -> Vec<FaultSpec> {
    vec![
        FaultSpec::ParamRelative {
            target: Param::EpsSNeg,
            delta_rel: -0.001,
        },
        FaultSpec::ParamRelative {
            target: Param::RF,
            delta_rel: 0.002,
        },
        FaultSpec::ParamRelative {
            target: Param::GS,
            delta_rel: 0.05,
        },
        FaultSpec::ParamRelative {
            target: Param::NLi,
            delta_rel: -0.001,
        },
        FaultSpec::SideReaction { j_sr0: 3e-5 },
    ]
}
