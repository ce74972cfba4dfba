//! Local-approach fault detection and isolation.
//!
//! Primary residuals `H_k = s_y(k)ᵀ r(k)` are accumulated into the
//! normalized residual `ζ_N`; the limiting covariance `Σ` and sensitivity
//! matrix `M` give a global χ² detection test and per-parameter min-max
//! isolation tests.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix4, RowVector4, Vector4};
use serde::{Deserialize, Serialize};

use crate::chi2::chi2_quantile;
use crate::error::{FdiError, Result};
use crate::params::Param;

/// Largest accepted condition number of `Σ` and `MᵀΣ⁻¹M` after diagonal
/// equilibration.
pub const CONDITION_LIMIT: f64 = 1e12;
/// `σ_min(M)/σ_max(M)` below this triggers a rank-deficiency warning.
pub const RANK_WARNING: f64 = 1e-10;
pub const N_THETA: usize = 4;

pub fn primary_residual(s_y: &RowVector4<f64>, r: f64) -> Vector4<f64> {
    s_y.transpose() * r
}

/// Per-sample factors of the primary residual.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PrimaryResidualSeries {
    pub h: Vec<Vector4<f64>>,
    pub r: Vec<f64>,
    pub s_y: Vec<RowVector4<f64>>,
    pub s_yy: Vec<Matrix4<f64>>,
}

impl PrimaryResidualSeries {
    pub fn with_capacity(n: usize) -> Self {
        PrimaryResidualSeries {
            h: Vec::with_capacity(n),
            r: Vec::with_capacity(n),
            s_y: Vec::with_capacity(n),
            s_yy: Vec::with_capacity(n),
        }
    }

    pub fn push(&mut self, s_y: RowVector4<f64>, s_yy: Matrix4<f64>, r: f64) {
        self.h.push(primary_residual(&s_y, r));
        self.r.push(r);
        self.s_y.push(s_y);
        self.s_yy.push(s_yy);
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }
}

/// `ζ_N = (1/√N) Σ_k H_k`.
pub fn normalized_residual(h: &[Vector4<f64>]) -> Result<Vector4<f64>> {
    if h.is_empty() {
        return Err(FdiError::domain("normalized residual needs N ≥ 1"));
    }
    let sum = h.iter().fold(Vector4::zeros(), |acc, v| acc + v);
    Ok(sum / (h.len() as f64).sqrt())
}

/// Lag-sum estimate of the limiting covariance of `ζ_N`, checked positive
/// definite.
pub fn estimate_sigma(h: &[Vector4<f64>], n_i: usize) -> Result<Matrix4<f64>> {
    let sigma = lag_sum_sigma(h, n_i)?;
    if sigma.cholesky().is_none() {
        return Err(FdiError::NotPositiveDefinite(format!(
            "Σ estimate with n_i = {n_i}; try a different lag count"
        )));
    }
    Ok(sigma)
}

/// `(1/N) Σ H_k H_kᵀ + Σ_{i=1..n_i} (1/(N−i)) Σ_k (H_k H_{k+i}ᵀ + H_{k+i} H_kᵀ)`,
/// symmetrized, without the definiteness check.
pub fn lag_sum_sigma(h: &[Vector4<f64>], n_i: usize) -> Result<Matrix4<f64>> {
    let n = h.len();
    if n <= n_i {
        return Err(FdiError::domain(format!("Σ estimator needs N > n_i (N = {n}, n_i = {n_i})")));
    }
    let mut sigma = h.iter().fold(Matrix4::zeros(), |acc, v| acc + v * v.transpose()) / n as f64;
    for i in 1..=n_i {
        let mut cross = Matrix4::zeros();
        for k in 0..n - i {
            let c = h[k] * h[k + i].transpose();
            cross += c + c.transpose();
        }
        sigma += cross / (n - i) as f64;
    }
    Ok((sigma + sigma.transpose()) * 0.5)
}

/// `M = (1/N) Σ_k [ −s_y(k)ᵀ s_y(k) + r(k) s_yy(k) ]`.
pub fn estimate_m(s_y: &[RowVector4<f64>], s_yy: &[Matrix4<f64>], r: &[f64]) -> Result<Matrix4<f64>> {
    let n = s_y.len();
    if n == 0 || s_yy.len() != n || r.len() != n {
        return Err(FdiError::domain(format!(
            "M estimator needs aligned non-empty series (s_y {n}, s_yy {}, r {})",
            s_yy.len(),
            r.len()
        )));
    }
    let mut m = Matrix4::zeros();
    for k in 0..n {
        m += -s_y[k].transpose() * s_y[k] + s_yy[k] * r[k];
    }
    m /= n as f64;
    let sv = m.singular_values();
    let ratio = sv.min() / sv.max();
    if !(ratio >= RANK_WARNING) {
        log::warn!("sensitivity matrix M is nearly rank deficient (σ_min/σ_max = {ratio:e})");
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalStatistics {
    pub zeta: Vector4<f64>,
    pub sigma: Matrix4<f64>,
    pub m: Matrix4<f64>,
    pub n_eff: usize,
}

impl LocalStatistics {
    pub fn from_series(series: &PrimaryResidualSeries, n_i: usize) -> Result<Self> {
        Ok(LocalStatistics {
            zeta: normalized_residual(&series.h)?,
            sigma: estimate_sigma(&series.h, n_i)?,
            m: estimate_m(&series.s_y, &series.s_yy, &series.r)?,
            n_eff: series.len(),
        })
    }
}

/// Condition number of a symmetric positive definite matrix after scaling
/// it to unit diagonal.
fn equilibrated_condition(a: &DMatrix<f64>) -> f64 {
    let d = a.diagonal().map(|v| if v > 0.0 { 1.0 / v.sqrt() } else { 0.0 });
    let scaled = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * d[i] * d[j]);
    let eig = scaled.symmetric_eigen().eigenvalues;
    let (min, max) = (eig.min(), eig.max());
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn guarded_cholesky(a: &DMatrix<f64>, name: &'static str) -> Result<Cholesky<f64, Dyn>> {
    let condition = equilibrated_condition(a);
    if !(condition <= CONDITION_LIMIT) {
        return Err(FdiError::IllConditioned { name, condition });
    }
    Cholesky::new(a.clone()).ok_or_else(|| FdiError::NotPositiveDefinite(name.to_string()))
}

/// `ζ̃ = MᵀΣ⁻¹ζ` and Fisher information `F = MᵀΣ⁻¹M`, via solves against
/// the factorization of `Σ`.
fn fisher(stats: &LocalStatistics) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let sigma = DMatrix::from_iterator(4, 4, stats.sigma.iter().copied());
    let m = DMatrix::from_iterator(4, 4, stats.m.iter().copied());
    let zeta = DVector::from_iterator(4, stats.zeta.iter().copied());
    let chol = guarded_cholesky(&sigma, "Σ")?;
    let zt = m.transpose() * chol.solve(&zeta);
    let f = m.transpose() * chol.solve(&m);
    let f = (&f + f.transpose()) * 0.5;
    Ok((zt, f))
}

/// `χ² = ζᵀΣ⁻¹M(MᵀΣ⁻¹M)⁻¹MᵀΣ⁻¹ζ`.
pub fn chi2_global(stats: &LocalStatistics) -> Result<f64> {
    let (zt, f) = fisher(stats)?;
    let chol = guarded_cholesky(&f, "MᵀΣ⁻¹M")?;
    Ok(zt.dot(&chol.solve(&zt)))
}

/// `ζᵀΣ⁻¹ζ`, equal to the global statistic when `M` is square and invertible.
pub fn chi2_reduced(stats: &LocalStatistics) -> Result<f64> {
    let sigma = DMatrix::from_iterator(4, 4, stats.sigma.iter().copied());
    let zeta = DVector::from_iterator(4, stats.zeta.iter().copied());
    let chol = guarded_cholesky(&sigma, "Σ")?;
    Ok(zeta.dot(&chol.solve(&zeta)))
}

/// Min-max statistic for the tested parameter set `a`, the remaining
/// parameters being nuisance. An empty nuisance set gives the global
/// statistic.
pub fn chi2_minmax(stats: &LocalStatistics, a: &[usize]) -> Result<f64> {
    if a.is_empty() || a.iter().any(|&i| i >= N_THETA) {
        return Err(FdiError::domain(format!("invalid tested parameter set {a:?}")));
    }
    let mut sorted = a.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != a.len() {
        return Err(FdiError::domain(format!("duplicate indices in {a:?}")));
    }
    let b: Vec<usize> = (0..N_THETA).filter(|i| !a.contains(i)).collect();
    let (zt, f) = fisher(stats)?;
    let za = zt.select_rows(a);
    let faa = f.select_rows(a).select_columns(a);
    let (z_star, f_star) = if b.is_empty() {
        (za, faa)
    } else {
        let zb = zt.select_rows(&b);
        let fab = f.select_rows(a).select_columns(&b);
        let fbb = f.select_rows(&b).select_columns(&b);
        let chol_b = guarded_cholesky(&fbb, "F_bb")?;
        let z_star = za - &fab * chol_b.solve(&zb);
        let f_star = faa - &fab * chol_b.solve(&fab.transpose());
        (z_star, (&f_star + f_star.transpose()) * 0.5)
    };
    let chol = guarded_cholesky(&f_star, "F*_a")?;
    Ok(z_star.dot(&chol.solve(&z_star)))
}

pub fn chi2_detect(stats: &LocalStatistics, threshold: f64) -> Result<(f64, bool)> {
    let chi2 = chi2_global(stats)?;
    Ok((chi2, chi2 > threshold))
}

/// Min-max isolation test for a single parameter (`n_a = 1`).
pub fn minmax_isolate(stats: &LocalStatistics, a: Param, threshold: f64) -> Result<(f64, bool)> {
    let chi2 = chi2_minmax(stats, &[a.index()])?;
    Ok((chi2, chi2 > threshold))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub global: f64,
    pub isolation: f64,
    pub alpha_fa: f64,
}

impl Thresholds {
    /// Quantiles `1 − α` of χ²₄ and χ²₁.
    pub fn from_false_alarm(alpha_fa: f64) -> Result<Self> {
        if !(alpha_fa > 0.0 && alpha_fa < 1.0) {
            return Err(FdiError::config(format!("false-alarm probability {alpha_fa} outside (0, 1)")));
        }
        Ok(Thresholds {
            global: chi2_quantile(N_THETA as u32, 1.0 - alpha_fa)?,
            isolation: chi2_quantile(1, 1.0 - alpha_fa)?,
            alpha_fa,
        })
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds::from_false_alarm(0.01).expect("χ² quantiles for α = 0.01")
    }
}

/// Run context attached to a report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub seed: Option<u64>,
    pub run_index: Option<usize>,
    pub fault: String,
    pub n: usize,
    pub discard: usize,
    pub n_i: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdiReport {
    pub chi2_global: f64,
    /// One statistic per parameter, ordered as [`Param::ALL`].
    pub chi2_minmax: [f64; 4],
    pub thresholds: Thresholds,
    pub detected: bool,
    pub isolated: [bool; 4],
    pub dof: (usize, usize),
    /// Heuristic: the flagged parameter with the largest min-max statistic.
    pub most_likely_fault: Option<Param>,
    pub statistics: LocalStatistics,
    pub metadata: RunMetadata,
}

impl FdiReport {
    pub fn from_statistics(stats: LocalStatistics, thresholds: Thresholds, metadata: RunMetadata) -> Result<Self> {
        let (chi2_global, detected) = chi2_detect(&stats, thresholds.global)?;
        let mut chi2_minmax = [0.0; 4];
        let mut isolated = [false; 4];
        for p in Param::ALL {
            let (v, flag) = minmax_isolate(&stats, p, thresholds.isolation)?;
            chi2_minmax[p.index()] = v;
            isolated[p.index()] = flag;
        }
        let most_likely_fault = Param::ALL
            .into_iter()
            .filter(|p| isolated[p.index()])
            .max_by(|a, b| chi2_minmax[a.index()].total_cmp(&chi2_minmax[b.index()]));
        Ok(FdiReport {
            chi2_global,
            chi2_minmax,
            thresholds,
            detected,
            isolated,
            dof: (N_THETA, 1),
            most_likely_fault,
            statistics: stats,
            metadata,
        })
    }

    pub fn from_series(
        series: &PrimaryResidualSeries,
        n_i: usize,
        thresholds: Thresholds,
        metadata: RunMetadata,
    ) -> Result<Self> {
        Self::from_statistics(LocalStatistics::from_series(series, n_i)?, thresholds, metadata)
    }
}
