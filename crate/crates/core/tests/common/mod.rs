#![allow(dead_code)]

use ehm_fdi::ukf::UkfModel;
use ehm_fdi::Result;
use nalgebra::{Matrix2, RowVector2, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// `x⁺ = F x + G u`, `y = H x + D u`.
#[derive(Debug, Clone, Copy)]
pub struct LinearModel {
    pub f: Matrix2<f64>,
    pub g: Vector2<f64>,
    pub h: RowVector2<f64>,
    pub d: f64,
}

impl LinearModel {
    pub fn example() -> Self {
        LinearModel {
            f: Matrix2::new(0.98, 0.01, 0.03, 0.95),
            g: Vector2::new(-2e-4, -3e-4),
            h: RowVector2::new(0.8, -0.3),
            d: -5e-3,
        }
    }
}

impl UkfModel for LinearModel {
    fn transition(&self, x: &Vector2<f64>, u: f64) -> Result<Vector2<f64>> {
        Ok(self.f * x + self.g * u)
    }

    fn output(&self, x: &Vector2<f64>, u: f64) -> Result<f64> {
        Ok((self.h * x)[0] + self.d * u)
    }
}

/// Textbook Kalman filter with the filter's sample timing: the first sample
/// is a pure measurement update, later samples predict with the previous input.
pub struct KfEstimate {
    pub x: Vector2<f64>,
    pub p: Matrix2<f64>,
    pub innovation: f64,
}

pub fn linear_kf(
    m: &LinearModel,
    q: &Matrix2<f64>,
    r: f64,
    x0: Vector2<f64>,
    p0: Matrix2<f64>,
    inputs: &[f64],
    ys: &[f64],
) -> Vec<KfEstimate> {
    let (mut x, mut p) = (x0, p0);
    let mut out = Vec::with_capacity(ys.len());
    for k in 0..ys.len() {
        if k > 0 {
            x = m.f * x + m.g * inputs[k - 1];
            p = m.f * p * m.f.transpose() + q;
        }
        let y_hat = (m.h * x)[0] + m.d * inputs[k];
        let s = (m.h * p * m.h.transpose())[0] + r;
        let gain = p * m.h.transpose() / s;
        let innovation = ys[k] - y_hat;
        x += gain * innovation;
        p -= gain * s * gain.transpose();
        p = (p + p.transpose()) * 0.5;
        out.push(KfEstimate { x, p, innovation });
    }
    out
}

/// Simulated linear-Gaussian record `(inputs, measurements)`.
pub fn linear_record(m: &LinearModel, q: f64, r: f64, n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Normal::new(0.0, q.sqrt()).unwrap();
    let v = Normal::new(0.0, r.sqrt()).unwrap();
    let mut x = Vector2::new(0.6, 0.55);
    let mut inputs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for k in 0..n {
        let u = 20.0 * ((k as f64) * 0.05).sin() + if k % 37 < 5 { 40.0 } else { -10.0 };
        inputs.push(u);
        ys.push((m.h * x)[0] + m.d * u + v.sample(&mut rng));
        x = m.f * x + m.g * u + Vector2::new(w.sample(&mut rng), w.sample(&mut rng));
    }
    (inputs, ys)
}

/// Relative error with an absolute floor.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / b.abs().max(floor)
}
