//! Augmented-state unscented Kalman filter for a two-state, single-output
//! system with additive process and measurement noise.
//!
//! The augmented vector is `[x; w; v]` with `L = 2·n_x + n_y = 5`. Sigma
//! points are `x̂ᵃ ± γ (√Pᵃ)_l` with a lower-triangular square root; noise
//! sigma components are added after the state and output maps.

use nalgebra::{Matrix2, SMatrix, SVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{FdiError, Result};
use crate::model::{output_voltage, EhmState};
use crate::ocp::OcpPair;
use crate::params::{CellParameters, ThetaVector};

pub const N_X: usize = 2;
pub const N_Y: usize = 1;
/// Augmented dimension `2 n_x + n_y`.
pub const L_AUG: usize = 2 * N_X + N_Y;
pub const N_SIGMA: usize = 2 * L_AUG + 1;

/// Negative eigenvalues above this are projected to zero; below, the filter
/// reports divergence.
pub const COVARIANCE_FLOOR: f64 = -1e-10;

type Mat5 = SMatrix<f64, L_AUG, L_AUG>;
type Vec5 = SVector<f64, L_AUG>;

/// State and output maps seen by the filter.
pub trait UkfModel {
    fn transition(&self, x: &Vector2<f64>, u: f64) -> Result<Vector2<f64>>;
    fn output(&self, x: &Vector2<f64>, u: f64) -> Result<f64>;

    /// Whether an estimate is admissible; the default accepts everything.
    fn admissible(&self, _x: &Vector2<f64>) -> bool {
        true
    }
}

/// The healthy EHM at fixed parameters.
#[derive(Debug, Clone)]
pub struct EhmModel<'a> {
    pub theta: ThetaVector,
    pub params: &'a CellParameters,
    pub ocps: &'a OcpPair,
    a: Matrix2<f64>,
    b: Vector2<f64>,
}

impl<'a> EhmModel<'a> {
    pub fn new(theta: ThetaVector, params: &'a CellParameters, ocps: &'a OcpPair) -> Result<Self> {
        let (a, b) = crate::model::state_matrices(&theta, params)?;
        Ok(EhmModel {
            theta,
            params,
            ocps,
            a,
            b,
        })
    }
}

impl UkfModel for EhmModel<'_> {
    fn transition(&self, x: &Vector2<f64>, u: f64) -> Result<Vector2<f64>> {
        Ok(self.a * x + self.b * u)
    }

    fn output(&self, x: &Vector2<f64>, u: f64) -> Result<f64> {
        output_voltage(
            &EhmState::from_vector(x),
            u,
            &self.theta,
            self.params,
            &self.ocps.pos,
            &self.ocps.neg,
        )
    }

    fn admissible(&self, x: &Vector2<f64>) -> bool {
        EhmState::from_vector(x).is_valid()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UkfConfig {
    pub alpha: f64,
    pub beta_w: f64,
    pub kappa: f64,
    pub q_x: Matrix2<f64>,
    pub r_x: f64,
    pub p_x0: Matrix2<f64>,
    pub x0_hat: Vector2<f64>,
}

impl UkfConfig {
    /// `α = 0.1`, `β = 2`, `κ = 3 − L`, `Q = 1e-8 I`, `P₀ = 1e-3 I`.
    pub fn standard(x0_hat: Vector2<f64>, r_x: f64) -> Self {
        UkfConfig {
            alpha: 0.1,
            beta_w: 2.0,
            kappa: 3.0 - L_AUG as f64,
            q_x: Matrix2::identity() * 1e-8,
            r_x,
            p_x0: Matrix2::identity() * 1e-3,
            x0_hat,
        }
    }

    pub fn lambda(&self) -> f64 {
        let l = L_AUG as f64;
        self.alpha * self.alpha * (l + self.kappa) - l
    }

    /// Checks the covariance invariants (symmetric positive definite).
    pub fn validate(&self) -> Result<()> {
        for (name, m) in [("Q_x", &self.q_x), ("P_x0", &self.p_x0)] {
            if (m - m.transpose()).norm() > 1e-12 * m.norm() {
                return Err(FdiError::config(format!("{name} is not symmetric")));
            }
            if m.cholesky().is_none() {
                return Err(FdiError::config(format!("{name} is not positive definite")));
            }
        }
        if !(self.r_x > 0.0 && self.r_x.is_finite()) {
            return Err(FdiError::config("R_x must be > 0"));
        }
        if L_AUG as f64 + self.lambda() <= 0.0 {
            return Err(FdiError::config("L + λ must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UkfWeights {
    pub wm: [f64; N_SIGMA],
    pub wc: [f64; N_SIGMA],
    pub gamma: f64,
    pub lambda: f64,
}

pub fn ukf_weights(config: &UkfConfig) -> Result<UkfWeights> {
    let l = L_AUG as f64;
    let lambda = config.lambda();
    let spread = l + lambda;
    if !(spread > 0.0) {
        return Err(FdiError::config(format!(
            "L + λ = {spread} must be positive (α = {}, κ = {})",
            config.alpha, config.kappa
        )));
    }
    let w = 1.0 / (2.0 * spread);
    let mut wm = [w; N_SIGMA];
    let mut wc = [w; N_SIGMA];
    wm[0] = lambda / spread;
    wc[0] = lambda / spread + 1.0 - config.alpha * config.alpha + config.beta_w;
    Ok(UkfWeights {
        wm,
        wc,
        gamma: spread.sqrt(),
        lambda,
    })
}

/// Filter state between samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UkfState {
    /// Posterior estimate.
    pub x_hat: Vector2<f64>,
    /// Posterior covariance.
    pub p_x: Matrix2<f64>,
    /// Prior estimate of the last processed sample.
    pub x_prior: Vector2<f64>,
    pub last_innovation: f64,
    pub last_y_hat: f64,
    /// Innovation variance of the last processed sample.
    pub last_p_y: f64,
    /// Input of the last processed sample; `None` before the first sample.
    pub last_input: Option<f64>,
    pub step: usize,
}

impl UkfState {
    pub fn initial(config: &UkfConfig) -> Self {
        UkfState {
            x_hat: config.x0_hat,
            p_x: config.p_x0,
            x_prior: config.x0_hat,
            last_innovation: 0.0,
            last_y_hat: f64::NAN,
            last_p_y: f64::NAN,
            last_input: None,
            step: 0,
        }
    }
}

/// Lower-triangular factor of a symmetric positive semidefinite block; a
/// zero block factors to zero, a failed factorization is retried once with
/// diagonal jitter.
fn psd_factor<const N: usize>(m: &SMatrix<f64, N, N>, name: &str) -> Result<SMatrix<f64, N, N>> {
    let sym = (m + m.transpose()) * 0.5;
    if sym.iter().all(|v| *v == 0.0) {
        return Ok(SMatrix::zeros());
    }
    if let Some(c) = sym.cholesky() {
        return Ok(c.l());
    }
    let jitter = 1e-12 * sym.trace() / N as f64;
    let retry = sym + SMatrix::<f64, N, N>::identity() * jitter;
    retry
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| FdiError::NotPositiveDefinite(format!("{name} (after jitter {jitter:e})")))
}

/// Projects small negative eigenvalues of a symmetric 2×2 covariance to zero.
fn floor_covariance(p: &Matrix2<f64>, step: usize) -> Result<Matrix2<f64>> {
    let sym = (p + p.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min >= 0.0 {
        return Ok(sym);
    }
    if min < COVARIANCE_FLOOR {
        return Err(FdiError::Divergence {
            step,
            reason: format!("covariance eigenvalue {min:e} below floor"),
        });
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let out = eig.eigenvectors * Matrix2::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    Ok((out + out.transpose()) * 0.5)
}

/// Processes one sample `(u, y_meas)`.
///
/// The time update uses the input of the previous sample, matching
/// `x(k+1) = f(θ, x(k), u(k))`; the first call only performs the
/// measurement update on the initial estimate.
pub fn ukf_step<M: UkfModel>(
    state: &UkfState,
    u: f64,
    y_meas: f64,
    model: &M,
    config: &UkfConfig,
) -> Result<UkfState> {
    let w = ukf_weights(config)?;
    let step = state.step;

    let mut sqrt_aug = Mat5::zeros();
    sqrt_aug
        .fixed_view_mut::<2, 2>(0, 0)
        .copy_from(&psd_factor(&state.p_x, "P_x")?);
    sqrt_aug
        .fixed_view_mut::<2, 2>(2, 2)
        .copy_from(&psd_factor(&config.q_x, "Q_x")?);
    if config.r_x < 0.0 {
        return Err(FdiError::NotPositiveDefinite("R_x < 0".into()));
    }
    sqrt_aug[(4, 4)] = config.r_x.sqrt();

    let mut mean = Vec5::zeros();
    mean.fixed_rows_mut::<2>(0).copy_from(&state.x_hat);
    let mut sigma = [mean; N_SIGMA];
    for l in 0..L_AUG {
        let col = sqrt_aug.column(l) * w.gamma;
        sigma[1 + l] = mean + col;
        sigma[1 + L_AUG + l] = mean - col;
    }

    // time update
    let mut x_pts = [Vector2::zeros(); N_SIGMA];
    for (i, s) in sigma.iter().enumerate() {
        let xs = Vector2::new(s[0], s[1]);
        x_pts[i] = match state.last_input {
            Some(u_prev) => model.transition(&xs, u_prev)? + Vector2::new(s[2], s[3]),
            None => xs,
        };
    }
    let x_prior = x_pts
        .iter()
        .zip(w.wm.iter())
        .fold(Vector2::zeros(), |acc, (x, wm)| acc + x * *wm);
    let mut p_prior = Matrix2::zeros();
    for (x, wc) in x_pts.iter().zip(w.wc.iter()) {
        let dx = x - x_prior;
        p_prior += dx * dx.transpose() * *wc;
    }

    // measurement update
    let mut y_pts = [0.0; N_SIGMA];
    for (i, (x, s)) in x_pts.iter().zip(sigma.iter()).enumerate() {
        y_pts[i] = model
            .output(x, u)
            .map_err(|e| FdiError::Divergence {
                step,
                reason: format!("sigma point {i} left the model domain: {e}"),
            })?
            + s[4];
    }
    let y_hat: f64 = y_pts.iter().zip(w.wm.iter()).map(|(y, wm)| y * wm).sum();
    let mut p_y = 0.0;
    let mut p_xy = Vector2::zeros();
    for ((x, y), wc) in x_pts.iter().zip(y_pts.iter()).zip(w.wc.iter()) {
        let dy = y - y_hat;
        p_y += wc * dy * dy;
        p_xy += (x - x_prior) * (wc * dy);
    }
    let innovation = y_meas - y_hat;
    let gain = if p_y > 0.0 {
        p_xy / p_y
    } else if p_xy.iter().all(|v| *v == 0.0) {
        Vector2::zeros()
    } else {
        return Err(FdiError::Divergence {
            step,
            reason: format!("innovation variance {p_y:e} is not positive"),
        });
    };
    let x_hat = x_prior + gain * innovation;
    let p_x = floor_covariance(&(p_prior - gain * gain.transpose() * p_y), step)?;

    if !model.admissible(&x_hat) || x_hat.iter().any(|v| !v.is_finite()) {
        return Err(FdiError::Divergence {
            step,
            reason: format!("estimate [{}, {}] left the state domain", x_hat[0], x_hat[1]),
        });
    }

    Ok(UkfState {
        x_hat,
        p_x,
        x_prior,
        last_innovation: innovation,
        last_y_hat: y_hat,
        last_p_y: p_y,
        last_input: Some(u),
        step: step + 1,
    })
}

/// Runs the filter over a whole record.
pub fn ukf_run<M: UkfModel>(
    model: &M,
    config: &UkfConfig,
    inputs: &[f64],
    measurements: &[f64],
) -> Result<Vec<UkfState>> {
    if inputs.len() != measurements.len() {
        return Err(FdiError::config("input and measurement lengths differ"));
    }
    let mut state = UkfState::initial(config);
    let mut out = Vec::with_capacity(inputs.len());
    for (&u, &y) in inputs.iter().zip(measurements) {
        state = ukf_step(&state, u, y, model, config)?;
        out.push(state);
    }
    Ok(out)
}
