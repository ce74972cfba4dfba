//! Two-state equivalent-hydraulic model (EHM) of the negative electrode,
//! in healthy mode and with a parasitic side reaction.
//!
//! Sign convention: positive current discharges the cell. Discharge removes
//! lithium from the negative electrode, so the input matrix is
//! `B = -(T_s/θ₁)[b₁, b₂]ᵀ` and the film term lowers the terminal voltage,
//! `-(θ₂/θ₁) d₁ u`. The kinetic overpotentials follow the usual
//! Butler–Volmer orientation, `η⁺ < 0` and `η⁻ > 0` under discharge. The
//! side-reaction current `d` is cathodic, hence `d ≤ 0`.
//!
//! All currents are densities over the electrode cross-section [A/m²].

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{FdiError, Result};
use crate::ocp::{OcpCurve, OcpPair};
use crate::params::{CellParameters, ThetaVector};

/// Stoichiometries are only evaluated inside `[STOICH_GUARD, 1 - STOICH_GUARD]`.
pub const STOICH_GUARD: f64 = 1e-6;

/// Tolerance on the side-reaction potential balance [V].
pub const SIDE_REACTION_TOL: f64 = 1e-10;
const SIDE_REACTION_MAX_ITER: usize = 100;

/// Negative-electrode state `[SOC, c̄_ss]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EhmState {
    pub soc: f64,
    pub c_ss_bar: f64,
}

impl EhmState {
    pub fn new(soc: f64, c_ss_bar: f64) -> Self {
        EhmState { soc, c_ss_bar }
    }

    /// Rest state with surface and bulk concentrations equal.
    pub fn relaxed(soc: f64) -> Self {
        EhmState::new(soc, soc)
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.soc, self.c_ss_bar)
    }

    pub fn from_vector(v: &Vector2<f64>) -> Self {
        EhmState::new(v[0], v[1])
    }

    pub fn is_valid(&self) -> bool {
        in_open_unit(self.soc) && in_open_unit(self.c_ss_bar)
    }
}

#[inline]
fn in_open_unit(x: f64) -> bool {
    x > 0.0 && x < 1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Electrode {
    Pos,
    Neg,
}

/// `A(θ)` and `B(θ)` of the linear state update `x⁺ = A x + B u`.
pub fn state_matrices(
    theta: &ThetaVector,
    params: &CellParameters,
) -> Result<(Matrix2<f64>, Vector2<f64>)> {
    if !(params.beta > 0.0 && params.beta < 1.0) {
        return Err(FdiError::domain(format!(
            "beta = {} outside (0, 1)",
            params.beta
        )));
    }
    if theta.eps_s_neg == 0.0 || !theta.eps_s_neg.is_finite() {
        return Err(FdiError::domain("eps_s_neg must be finite and nonzero"));
    }
    let ga = params.t_s * theta.g_s * params.a1();
    let a = Matrix2::new(1.0, 0.0, ga, 1.0 - ga);
    let scale = -params.t_s / theta.eps_s_neg;
    let b = Vector2::new(scale * params.b1(), scale * params.b2());
    Ok((a, b))
}

pub fn step_healthy(
    state: &EhmState,
    u: f64,
    theta: &ThetaVector,
    params: &CellParameters,
) -> Result<EhmState> {
    let (a, b) = state_matrices(theta, params)?;
    Ok(EhmState::from_vector(&(a * state.to_vector() + b * u)))
}

/// Positive-electrode stoichiometry from the lithium balance,
/// `SOC⁺ = θ₁ ρ SOC⁻ + θ₄ σ`.
pub fn positive_stoichiometry(
    soc_neg: f64,
    theta: &ThetaVector,
    params: &CellParameters,
) -> Result<f64> {
    let x = theta.eps_s_neg * params.rho() * soc_neg + theta.n_li * params.sigma();
    if !in_open_unit(x) {
        return Err(FdiError::domain(format!(
            "positive stoichiometry {x} outside (0, 1) for SOC⁻ = {soc_neg}; lithium balance inconsistent"
        )));
    }
    Ok(x)
}

/// Total lithium [mol] implied by the two electrode stoichiometries.
pub fn lithium_inventory(
    soc_pos: f64,
    soc_neg: f64,
    eps_s_neg: f64,
    params: &CellParameters,
) -> f64 {
    params.area
        * (params.c_s_max_pos * params.l_pos * params.eps_s_pos * soc_pos
            + params.c_s_max_neg * params.l_neg * eps_s_neg * soc_neg)
}

fn check_stoich(x: f64) -> Result<()> {
    if !(STOICH_GUARD..=1.0 - STOICH_GUARD).contains(&x) {
        return Err(FdiError::domain(format!(
            "stoichiometry {x} outside [{STOICH_GUARD}, {}]",
            1.0 - STOICH_GUARD
        )));
    }
    Ok(())
}

/// Exchange current density `k c_max √c_e √(x(1-x))` [A/m²].
pub fn exchange_current_density(x: f64, electrode: Electrode, params: &CellParameters) -> Result<f64> {
    check_stoich(x)?;
    let (k, c_max) = match electrode {
        Electrode::Pos => (params.k_n_pos, params.c_s_max_pos),
        Electrode::Neg => (params.k_n_neg, params.c_s_max_neg),
    };
    Ok(k * c_max * params.c_e.sqrt() * (x * (1.0 - x)).sqrt())
}

/// Argument of the `asinh` in the overpotential, and the volume fraction used.
fn overpotential_argument(
    x: f64,
    u: f64,
    electrode: Electrode,
    theta: &ThetaVector,
    params: &CellParameters,
) -> Result<f64> {
    let j0 = exchange_current_density(x, electrode, params)?;
    let (sign, r, eps, l) = match electrode {
        Electrode::Pos => (-1.0, params.r_pos, params.eps_s_pos, params.l_pos),
        Electrode::Neg => (1.0, params.r_neg, theta.eps_s_neg, params.l_neg),
    };
    Ok(sign * r * u / (6.0 * eps * l * j0))
}

pub fn surface_overpotential(
    x: f64,
    u: f64,
    electrode: Electrode,
    theta: &ThetaVector,
    params: &CellParameters,
) -> Result<f64> {
    let arg = overpotential_argument(x, u, electrode, theta, params)?;
    Ok(params.kinetic_voltage() * arg.asinh())
}

/// Partial derivatives of a surface overpotential.
#[derive(Debug, Clone, Copy)]
pub(crate) struct OverpotentialPartials {
    pub value: f64,
    /// ∂η/∂x
    pub d_x: f64,
    /// ∂η/∂u
    pub d_u: f64,
    /// ∂η/∂ε (volume fraction of the electrode)
    pub d_eps: f64,
}

pub(crate) fn overpotential_partials(
    x: f64,
    u: f64,
    electrode: Electrode,
    theta: &ThetaVector,
    params: &CellParameters,
) -> Result<OverpotentialPartials> {
    let arg = overpotential_argument(x, u, electrode, theta, params)?;
    let kv = params.kinetic_voltage();
    let dasinh = kv / (1.0 + arg * arg).sqrt();
    let eps = match electrode {
        Electrode::Pos => params.eps_s_pos,
        Electrode::Neg => theta.eps_s_neg,
    };
    // arg ∝ u / (eps · sqrt(x(1-x)))
    let darg_dx = -0.5 * arg * (1.0 - 2.0 * x) / (x * (1.0 - x));
    let darg_du = if u != 0.0 {
        arg / u
    } else {
        overpotential_argument(x, 1.0, electrode, theta, params)?
    };
    Ok(OverpotentialPartials {
        value: kv * arg.asinh(),
        d_x: dasinh * darg_dx,
        d_u: dasinh * darg_du,
        d_eps: -dasinh * arg / eps,
    })
}

/// Terminal voltage of the healthy cell, `h(θ, x, u)`.
pub fn output_voltage(
    state: &EhmState,
    u: f64,
    theta: &ThetaVector,
    params: &CellParameters,
    ocp_pos: &OcpCurve,
    ocp_neg: &OcpCurve,
) -> Result<f64> {
    output_voltage_faulty(state, u, u, theta, params, ocp_pos, ocp_neg)
}

/// Terminal voltage with a side reaction, `h̄(θ, x, u, z)`: the total current
/// `z` drives the positive electrode and the film, the intercalation current
/// `u` drives the negative overpotential.
pub fn output_voltage_faulty(
    state: &EhmState,
    u: f64,
    z: f64,
    theta: &ThetaVector,
    params: &CellParameters,
    ocp_pos: &OcpCurve,
    ocp_neg: &OcpCurve,
) -> Result<f64> {
    let soc_pos = positive_stoichiometry(state.soc, theta, params)?;
    let eta_pos = surface_overpotential(soc_pos, z, Electrode::Pos, theta, params)?;
    let eta_neg = surface_overpotential(state.c_ss_bar, u, Electrode::Neg, theta, params)?;
    let film = theta.r_f / theta.eps_s_neg * params.d1() * z;
    Ok(eta_pos - eta_neg + ocp_pos.evaluate(soc_pos) - ocp_neg.evaluate(state.c_ss_bar) - film)
}

/// Open-circuit voltage `U⁺(SOC⁺) − U⁻(c̄_ss)`.
pub fn open_circuit_voltage(
    state: &EhmState,
    theta: &ThetaVector,
    params: &CellParameters,
    ocps: &OcpPair,
) -> Result<f64> {
    let soc_pos = positive_stoichiometry(state.soc, theta, params)?;
    check_stoich(state.c_ss_bar)?;
    Ok(ocps.pos.evaluate(soc_pos) - ocps.neg.evaluate(state.c_ss_bar))
}

/// Split of the terminal current into intercalation and side-reaction parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurrentSplit {
    /// Intercalation current density.
    pub u: f64,
    /// Side-reaction current density (≤ 0).
    pub d: f64,
    /// Potential balance residual at the returned point [V].
    pub residual: f64,
    pub iterations: usize,
}

/// Solves Kirchhoff's split `z = u + d` together with the potential balance
/// `U⁻ + η⁻(u) − U_sr − η_sr(d) = 0`.
///
/// The unknown is parameterized as `d = −exp(s)`, which keeps `d` strictly
/// negative and turns the balance into a strictly increasing function of `s`.
/// A bracket is grown around the Tafel estimate and refined by Newton steps,
/// falling back to bisection whenever a step leaves the bracket.
pub fn solve_side_reaction(
    state: &EhmState,
    z: f64,
    theta: &ThetaVector,
    params: &CellParameters,
    ocp_neg: &OcpCurve,
) -> Result<CurrentSplit> {
    if params.j_sr0 == 0.0 {
        return Ok(CurrentSplit {
            u: z,
            d: 0.0,
            residual: 0.0,
            iterations: 0,
        });
    }
    let c = state.c_ss_bar;
    check_stoich(c)?;
    let kv = params.kinetic_voltage();
    let u_neg = ocp_neg.evaluate(c);
    let ln_k = (params.r_neg / (3.0 * params.l_neg * params.j_sr0)).ln();

    let balance = |s: f64| -> Result<(f64, f64)> {
        let d = -s.exp();
        let p = overpotential_partials(c, z - d, Electrode::Neg, theta, params)?;
        let g = u_neg + p.value - params.u_sr + kv * (ln_k + s);
        let dg = p.d_u * s.exp() + kv;
        Ok((g, dg))
    };

    let eta0 = surface_overpotential(c, z, Electrode::Neg, theta, params)?;
    let mut s = (params.u_sr - u_neg - eta0) / kv - ln_k;
    let (mut g, mut dg) = balance(s)?;
    if !g.is_finite() {
        return Err(FdiError::domain("side-reaction balance is not finite"));
    }

    // grow a sign-change bracket [lo, hi] with g(lo) < 0 < g(hi)
    let (mut lo, mut hi) = (s, s);
    let (mut g_lo, mut g_hi) = (g, g);
    let mut step = 1.0;
    let mut expansions = 0;
    while g_lo > 0.0 {
        lo -= step;
        step *= 2.0;
        g_lo = balance(lo)?.0;
        expansions += 1;
        if expansions > 60 || !g_lo.is_finite() {
            return Err(FdiError::domain("cannot bracket the side-reaction current"));
        }
    }
    step = 1.0;
    while g_hi < 0.0 {
        hi += step;
        step *= 2.0;
        g_hi = balance(hi)?.0;
        expansions += 1;
        if expansions > 120 || !g_hi.is_finite() {
            return Err(FdiError::domain("cannot bracket the side-reaction current"));
        }
    }

    for it in 1..=SIDE_REACTION_MAX_ITER {
        if g.abs() <= SIDE_REACTION_TOL {
            let d = -s.exp();
            return Ok(CurrentSplit {
                u: z - d,
                d,
                residual: g,
                iterations: it - 1,
            });
        }
        if g < 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        let newton = s - g / dg;
        s = if newton > lo && newton < hi && dg > 0.0 {
            newton
        } else {
            0.5 * (lo + hi)
        };
        (g, dg) = balance(s)?;
    }
    if g.abs() <= SIDE_REACTION_TOL {
        let d = -s.exp();
        return Ok(CurrentSplit {
            u: z - d,
            d,
            residual: g,
            iterations: SIDE_REACTION_MAX_ITER,
        });
    }
    Err(FdiError::Convergence {
        iterations: SIDE_REACTION_MAX_ITER,
        residual: g,
    })
}

/// Cumulative lithium loss bookkeeping of the side reaction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SideReactionState {
    /// Capacity lost so far [Ah].
    pub q_loss: f64,
    /// Side-reaction current density of the last step [A/m²].
    pub d: f64,
}

impl SideReactionState {
    /// Effective lithium inventory `n_Li − (3600/F) Q_loss` [mol].
    pub fn lithium_inventory(&self, n_li: f64, params: &CellParameters) -> f64 {
        n_li - 3600.0 / params.faraday * self.q_loss
    }
}

/// Accumulates one sample of side-reaction current into the capacity loss.
pub fn step_capacity_loss(
    sr: &SideReactionState,
    d: f64,
    params: &CellParameters,
) -> SideReactionState {
    SideReactionState {
        q_loss: sr.q_loss - params.area * params.t_s / 3600.0 * d,
        d,
    }
}

/// Checks that the OCP orientation agrees with the current sign convention:
/// a discharge step must lower both the bulk SOC and the open-circuit voltage.
pub fn check_sign_convention(
    theta: &ThetaVector,
    params: &CellParameters,
    ocps: &OcpPair,
) -> Result<()> {
    let soc_mid = 0.5;
    let before = EhmState::relaxed(soc_mid);
    let u = params.one_c_density(theta);
    let mut after = step_healthy(&before, u, theta, params)?;
    after.c_ss_bar = after.soc;
    if after.soc >= before.soc {
        return Err(FdiError::config(
            "a positive (discharge) current did not lower the negative-electrode SOC",
        ));
    }
    let v0 = open_circuit_voltage(&before, theta, params, ocps)?;
    let v1 = open_circuit_voltage(&after, theta, params, ocps)?;
    if v1 >= v0 {
        return Err(FdiError::config(format!(
            "OCP orientation inconsistent with the current sign: discharge raised OCV from {v0} V to {v1} V"
        )));
    }
    Ok(())
}

/// One simulated sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// State at which the output was evaluated.
    pub state: EhmState,
    /// Terminal current density.
    pub z: f64,
    /// Intercalation current density.
    pub u: f64,
    /// Side-reaction current density.
    pub d: f64,
    pub voltage: f64,
    /// Capacity lost up to (excluding) this sample [Ah].
    pub q_loss: f64,
}

/// Discrete-time plant: owns its state, advances one sample per call.
#[derive(Debug, Clone)]
pub struct Simulator {
    params: CellParameters,
    theta: ThetaVector,
    ocps: OcpPair,
    state: EhmState,
    side: Option<SideReactionState>,
    a: Matrix2<f64>,
    b: Vector2<f64>,
}

impl Simulator {
    /// Healthy-mode simulator (side reaction off regardless of `j_sr0`).
    pub fn new(
        params: CellParameters,
        theta: ThetaVector,
        ocps: OcpPair,
        initial: EhmState,
    ) -> Result<Self> {
        params.validate()?;
        theta.validate()?;
        let (a, b) = state_matrices(&theta, &params)?;
        Ok(Simulator {
            params,
            theta,
            ocps,
            state: initial,
            side: None,
            a,
            b,
        })
    }

    /// Enables the side reaction using `params.j_sr0`.
    pub fn with_side_reaction(mut self) -> Self {
        self.side = Some(SideReactionState::default());
        self
    }

    pub fn state(&self) -> EhmState {
        self.state
    }

    pub fn side_reaction(&self) -> Option<SideReactionState> {
        self.side
    }

    pub fn theta(&self) -> &ThetaVector {
        &self.theta
    }

    pub fn params(&self) -> &CellParameters {
        &self.params
    }

    /// θ with `n_Li` replaced by the inventory left after side-reaction losses.
    pub fn effective_theta(&self) -> ThetaVector {
        match self.side {
            Some(sr) => ThetaVector {
                n_li: sr.lithium_inventory(self.theta.n_li, &self.params),
                ..self.theta
            },
            None => self.theta,
        }
    }

    /// Evaluates the output at the current state for terminal current `z`,
    /// then advances the state by one sample.
    pub fn step(&mut self, z: f64) -> Result<StepRecord> {
        let theta = self.effective_theta();
        let state = self.state;
        let (u, d, voltage, q_loss) = match self.side {
            Some(sr) => {
                let split = solve_side_reaction(&state, z, &theta, &self.params, &self.ocps.neg)?;
                let v = output_voltage_faulty(
                    &state,
                    split.u,
                    z,
                    &theta,
                    &self.params,
                    &self.ocps.pos,
                    &self.ocps.neg,
                )?;
                self.side = Some(step_capacity_loss(&sr, split.d, &self.params));
                (split.u, split.d, v, sr.q_loss)
            }
            None => {
                let v = output_voltage(
                    &state,
                    z,
                    &theta,
                    &self.params,
                    &self.ocps.pos,
                    &self.ocps.neg,
                )?;
                (z, 0.0, v, 0.0)
            }
        };
        self.state = EhmState::from_vector(&(self.a * state.to_vector() + self.b * u));
        Ok(StepRecord {
            state,
            z,
            u,
            d,
            voltage,
            q_loss,
        })
    }

    /// Runs the whole input sequence.
    pub fn run(&mut self, currents: &[f64]) -> Result<Vec<StepRecord>> {
        currents
            .iter()
            .enumerate()
            .map(|(k, &z)| {
                self.step(z)
                    .map_err(|e| e.context(format!("simulation step {k}")))
            })
            .collect()
    }
}
