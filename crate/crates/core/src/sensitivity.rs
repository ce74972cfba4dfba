//! Parameter sensitivities of the EHM and identifiability diagnostics.
//!
//! First-order sensitivities are propagated with the discrete sensitivity
//! system `s_x⁺ = ∇ₓf s_x + ∂f/∂θ`, `s_y = ∇ₓh s_x + ∂h/∂θ` using closed-form
//! Jacobians. Second-order output sensitivities are central differences of
//! first-order sensitivity trajectories.

use nalgebra::{DMatrix, Matrix2, Matrix2x4, Matrix4, RowVector2, RowVector4};
use serde::{Deserialize, Serialize};

use crate::error::{FdiError, Result};
use crate::model::{overpotential_partials, positive_stoichiometry, state_matrices, EhmState, Electrode};
use crate::ocp::OcpPair;
use crate::params::{CellParameters, Param, ThetaVector};

/// Relative step used for second-order finite differences.
pub const SECOND_ORDER_REL_STEP: f64 = 1e-5;

/// Jacobians of the state and output maps at one sample.
#[derive(Debug, Clone, Copy)]
pub struct ModelJacobians {
    pub y: f64,
    /// ∇ₓf = A(θ)
    pub df_dx: Matrix2<f64>,
    pub df_dtheta: Matrix2x4<f64>,
    pub dh_dx: RowVector2<f64>,
    pub dh_dtheta: RowVector4<f64>,
}

/// Analytic Jacobians of `f` and `h` at `(θ, x, u)` in healthy mode.
pub fn model_jacobians(
    state: &EhmState,
    u: f64,
    theta: &ThetaVector,
    params: &CellParameters,
    ocps: &OcpPair,
) -> Result<ModelJacobians> {
    let (a, _) = state_matrices(theta, params)?;
    let eps = theta.eps_s_neg;
    let rho = params.rho();
    let sigma = params.sigma();

    let mut df_dtheta = Matrix2x4::zeros();
    let ts_u_eps2 = params.t_s * u / (eps * eps);
    df_dtheta[(0, 0)] = ts_u_eps2 * params.b1();
    df_dtheta[(1, 0)] = ts_u_eps2 * params.b2();
    df_dtheta[(1, 2)] = params.t_s * params.a1() * (state.soc - state.c_ss_bar);

    let p = positive_stoichiometry(state.soc, theta, params)?;
    let c = state.c_ss_bar;
    let pos = overpotential_partials(p, u, Electrode::Pos, theta, params)?;
    let neg = overpotential_partials(c, u, Electrode::Neg, theta, params)?;
    let dpos_dp = pos.d_x + ocps.pos.slope(p);
    let d1 = params.d1();
    let film = theta.r_f / eps * d1 * u;

    let y = pos.value - neg.value + ocps.pos.evaluate(p) - ocps.neg.evaluate(c) - film;
    let dh_dx = RowVector2::new(dpos_dp * eps * rho, -neg.d_x - ocps.neg.slope(c));
    let dh_dtheta = RowVector4::new(
        dpos_dp * rho * state.soc - neg.d_eps + film / eps,
        -d1 * u / eps,
        0.0,
        dpos_dp * sigma,
    );
    Ok(ModelJacobians {
        y,
        df_dx: a,
        df_dtheta,
        dh_dx,
        dh_dtheta,
    })
}

/// One step of the sensitivity system. Returns `(s_x(k+1), s_y(k))`.
pub fn propagate_sensitivity(
    state: &EhmState,
    s_x: &Matrix2x4<f64>,
    u: f64,
    theta: &ThetaVector,
    params: &CellParameters,
    ocps: &OcpPair,
) -> Result<(Matrix2x4<f64>, RowVector4<f64>)> {
    let j = model_jacobians(state, u, theta, params, ocps)?;
    Ok(propagate_with(&j, s_x))
}

fn propagate_with(j: &ModelJacobians, s_x: &Matrix2x4<f64>) -> (Matrix2x4<f64>, RowVector4<f64>) {
    let s_y = j.dh_dx * s_x + j.dh_dtheta;
    let next = j.df_dx * s_x + j.df_dtheta;
    (next, s_y)
}

/// Per-sample sensitivities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityBundle {
    /// ∂x/∂θ
    pub s_x: Matrix2x4<f64>,
    /// ∂y/∂θ
    pub s_y: RowVector4<f64>,
    /// ∂²y/∂θ², symmetrized
    pub s_yy: Matrix4<f64>,
}

/// Open-loop simulation of the model together with its sensitivities.
#[derive(Debug, Clone)]
pub struct SensitivityTrajectory {
    pub states: Vec<EhmState>,
    pub y: Vec<f64>,
    pub s_x: Vec<Matrix2x4<f64>>,
    pub s_y: Vec<RowVector4<f64>>,
}

/// Inputs needed to reproduce an open-loop trajectory.
#[derive(Debug, Clone)]
pub struct TrajectoryContext<'a> {
    /// Initial state, independent of θ.
    pub initial: EhmState,
    pub currents: &'a [f64],
    pub theta: ThetaVector,
    pub params: &'a CellParameters,
    pub ocps: &'a OcpPair,
}

/// Simulates the healthy model from a θ-independent initial state
/// (so `s_x(0) = 0`) and propagates first-order sensitivities.
pub fn simulate_with_sensitivities(ctx: &TrajectoryContext<'_>) -> Result<SensitivityTrajectory> {
    let n = ctx.currents.len();
    let mut out = SensitivityTrajectory {
        states: Vec::with_capacity(n),
        y: Vec::with_capacity(n),
        s_x: Vec::with_capacity(n),
        s_y: Vec::with_capacity(n),
    };
    let (a, b) = state_matrices(&ctx.theta, ctx.params)?;
    let mut x = ctx.initial;
    let mut s_x = Matrix2x4::zeros();
    for (k, &u) in ctx.currents.iter().enumerate() {
        let j = model_jacobians(&x, u, &ctx.theta, ctx.params, ctx.ocps)
            .map_err(|e| e.context(format!("sensitivity step {k}")))?;
        let (next, s_y) = propagate_with(&j, &s_x);
        out.states.push(x);
        out.y.push(j.y);
        out.s_x.push(s_x);
        out.s_y.push(s_y);
        s_x = next;
        x = EhmState::from_vector(&(a * x.to_vector() + b * u));
    }
    Ok(out)
}

fn fd_steps(theta: &ThetaVector) -> [f64; 4] {
    Param::ALL.map(|p| SECOND_ORDER_REL_STEP * theta.get(p).abs())
}

/// Second-order output sensitivities before symmetrization; column `j` is
/// the central difference of `s_yᵀ` along `θ_j`.
pub fn second_order_sensitivity_raw(ctx: &TrajectoryContext<'_>) -> Result<Vec<Matrix4<f64>>> {
    let n = ctx.currents.len();
    let mut out = vec![Matrix4::zeros(); n];
    let steps = fd_steps(&ctx.theta);
    for p in Param::ALL {
        let j = p.index();
        let h = steps[j];
        let run = |sign: f64| {
            let mut theta = ctx.theta;
            theta.set(p, ctx.theta.get(p) + sign * h);
            simulate_with_sensitivities(&TrajectoryContext { theta, ..ctx.clone() })
        };
        let plus = run(1.0)?;
        let minus = run(-1.0)?;
        for k in 0..n {
            let col = (plus.s_y[k] - minus.s_y[k]).transpose() / (2.0 * h);
            if col.iter().any(|v| !v.is_finite()) {
                return Err(FdiError::domain(format!(
                    "non-finite second-order sensitivity at step {k}"
                )));
            }
            out[k].set_column(j, &col);
        }
    }
    Ok(out)
}

/// Symmetrized second-order output sensitivities `∂²y/∂θ²` per sample.
pub fn second_order_sensitivity(ctx: &TrajectoryContext<'_>) -> Result<Vec<Matrix4<f64>>> {
    Ok(second_order_sensitivity_raw(ctx)?
        .into_iter()
        .map(|s| symmetrize(&s))
        .collect())
}

pub(crate) fn symmetrize(s: &Matrix4<f64>) -> Matrix4<f64> {
    (s + s.transpose()) * 0.5
}

/// Sensitivity propagation along an externally supplied state trajectory,
/// typically the estimates of a state observer.
///
/// Second-order sensitivities are obtained from eight perturbed copies of the
/// sensitivity system, each evaluated at `x ± h_j s_x[:, j]` so that the
/// perturbed states stay consistent with the perturbed parameters to first
/// order.
#[derive(Debug, Clone)]
pub struct SensitivityTracker {
    theta: ThetaVector,
    params: CellParameters,
    ocps: OcpPair,
    s_x: Matrix2x4<f64>,
    perturbed: Option<Box<PerturbedCopies>>,
}

#[derive(Debug, Clone)]
struct PerturbedCopies {
    steps: [f64; 4],
    thetas: [[ThetaVector; 2]; 4],
    s_x: [[Matrix2x4<f64>; 2]; 4],
}

impl SensitivityTracker {
    pub fn new(theta: ThetaVector, params: CellParameters, ocps: OcpPair, second_order: bool) -> Self {
        let perturbed = second_order.then(|| {
            let steps = fd_steps(&theta);
            let thetas = Param::ALL.map(|p| {
                let h = steps[p.index()];
                [1.0, -1.0].map(|sign| {
                    let mut t = theta;
                    t.set(p, theta.get(p) + sign * h);
                    t
                })
            });
            Box::new(PerturbedCopies {
                steps,
                thetas,
                s_x: [[Matrix2x4::zeros(); 2]; 4],
            })
        });
        SensitivityTracker {
            theta,
            params,
            ocps,
            s_x: Matrix2x4::zeros(),
            perturbed,
        }
    }

    pub fn s_x(&self) -> &Matrix2x4<f64> {
        &self.s_x
    }

    fn shifted(&self, x: &EhmState, j: usize, sign: f64, h: f64) -> EhmState {
        EhmState::from_vector(&(x.to_vector() + self.s_x.column(j) * (sign * h)))
    }

    /// Output sensitivities at state `x` and input `u` (second-order block is
    /// zero when the tracker was built without it).
    pub fn output(&self, x: &EhmState, u: f64) -> Result<SensitivityBundle> {
        let j = model_jacobians(x, u, &self.theta, &self.params, &self.ocps)?;
        let s_y = j.dh_dx * self.s_x + j.dh_dtheta;
        let mut s_yy = Matrix4::zeros();
        if let Some(pc) = &self.perturbed {
            for col in 0..4 {
                let h = pc.steps[col];
                let mut pair = [RowVector4::zeros(); 2];
                for (side, sign) in [1.0, -1.0].into_iter().enumerate() {
                    let xs = self.shifted(x, col, sign, h);
                    let jp = model_jacobians(&xs, u, &pc.thetas[col][side], &self.params, &self.ocps)?;
                    pair[side] = jp.dh_dx * pc.s_x[col][side] + jp.dh_dtheta;
                }
                s_yy.set_column(col, &((pair[0] - pair[1]).transpose() / (2.0 * h)));
            }
            s_yy = symmetrize(&s_yy);
        }
        Ok(SensitivityBundle {
            s_x: self.s_x,
            s_y,
            s_yy,
        })
    }

    /// Advances all sensitivity copies across one sample using state `x`.
    pub fn advance(&mut self, x: &EhmState, u: f64) -> Result<()> {
        let j = model_jacobians(x, u, &self.theta, &self.params, &self.ocps)?;
        let next = j.df_dx * self.s_x + j.df_dtheta;
        if let Some(pc) = self.perturbed.as_deref() {
            let mut updated = pc.s_x;
            for col in 0..4 {
                let h = pc.steps[col];
                for (side, sign) in [1.0, -1.0].into_iter().enumerate() {
                    let xs = self.shifted(x, col, sign, h);
                    let jp = model_jacobians(&xs, u, &pc.thetas[col][side], &self.params, &self.ocps)?;
                    updated[col][side] = jp.df_dx * pc.s_x[col][side] + jp.df_dtheta;
                }
            }
            if let Some(pc) = self.perturbed.as_deref_mut() {
                pc.s_x = updated;
            }
        }
        self.s_x = next;
        Ok(())
    }
}

/// Scales each sensitivity column by its nominal parameter value,
/// `θ_j ∂y/∂θ_j`.
pub fn relative_sensitivities(s_y: &[RowVector4<f64>], theta: &ThetaVector) -> Vec<RowVector4<f64>> {
    let scale = theta.to_vector().transpose();
    s_y.iter().map(|row| row.component_mul(&scale)).collect()
}

/// `(S^y)ᵀ S^y = D C D` decomposition of a stacked sensitivity matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    /// N×4 stacked output sensitivities.
    pub s_y: DMatrix<f64>,
    /// Diagonal of column norms.
    pub d: Matrix4<f64>,
    /// Correlation-like matrix with unit diagonal.
    pub c: Matrix4<f64>,
}

impl IdentifiabilityReport {
    pub fn norms(&self) -> [f64; 4] {
        [self.d[(0, 0)], self.d[(1, 1)], self.d[(2, 2)], self.d[(3, 3)]]
    }

    /// Parameters ordered from most to least sensitive.
    pub fn ranking(&self) -> [Param; 4] {
        let norms = self.norms();
        let mut order = Param::ALL;
        order.sort_by(|a, b| norms[b.index()].total_cmp(&norms[a.index()]));
        order
    }
}

pub fn identifiability_report(s_y: &[RowVector4<f64>]) -> Result<IdentifiabilityReport> {
    let n = s_y.len();
    if n < 4 {
        return Err(FdiError::domain(format!(
            "identifiability analysis needs at least 4 samples, got {n}"
        )));
    }
    let s = DMatrix::from_fn(n, 4, |k, j| s_y[k][j]);
    let gram = s.transpose() * &s;
    let norms: Vec<f64> = (0..4).map(|j| gram[(j, j)].sqrt()).collect();
    for p in Param::ALL {
        if norms[p.index()] == 0.0 {
            return Err(FdiError::DegenerateColumn(p.name()));
        }
    }
    let d = Matrix4::from_diagonal(&nalgebra::Vector4::from_column_slice(&norms));
    let c = Matrix4::from_fn(|i, j| {
        if i == j {
            1.0
        } else {
            (gram[(i, j)] / (norms[i] * norms[j])).clamp(-1.0, 1.0)
        }
    });
    Ok(IdentifiabilityReport { s_y: s, d, c })
}
