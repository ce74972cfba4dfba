use ehm_fdi::chi2::{chi2_cdf, chi2_quantile};
use ehm_fdi::fdi::{
    chi2_global, chi2_minmax, chi2_reduced, estimate_sigma, normalized_residual, LocalStatistics, Thresholds,
};
use nalgebra::{Matrix4, Vector4};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::erf::erf;

const N: usize = 400;
const N_I: usize = 2;

/// Closed forms: `P(χ²₄ ≤ x) = 1 − e^{−x/2}(1 + x/2)`, `P(χ²₁ ≤ x) = erf(√(x/2))`.
fn cdf4(x: f64) -> f64 {
    1.0 - (-x / 2.0).exp() * (1.0 + x / 2.0)
}

fn cdf1(x: f64) -> f64 {
    erf((x / 2.0).sqrt())
}

fn true_sigma_factor() -> Matrix4<f64> {
    Matrix4::new(
        1.0, 0.0, 0.0, 0.0, 0.4, 0.8, 0.0, 0.0, -0.2, 0.3, 0.6, 0.0, 0.1, -0.3, 0.2, 0.5,
    )
}

fn design() -> Matrix4<f64> {
    Matrix4::new(
        -2.0, 0.5, 0.1, -0.3, 0.4, -1.5, 0.2, 0.0, 0.1, 0.3, -1.0, 0.6, -0.2, 0.0, 0.4, -0.8,
    )
}

/// One synthetic record of iid `H_k ~ N(μ, LLᵀ)` turned into local statistics.
fn synthetic_trial(rng: &mut ChaCha8Rng, mean: &Vector4<f64>) -> LocalStatistics {
    let l = true_sigma_factor();
    let h: Vec<Vector4<f64>> = (0..N)
        .map(|_| {
            let w = Vector4::from_fn(|_, _| StandardNormal.sample(rng));
            mean + l * w
        })
        .collect();
    LocalStatistics {
        zeta: normalized_residual(&h).unwrap(),
        sigma: estimate_sigma(&h, N_I).unwrap(),
        m: design(),
        n_eff: N,
    }
}

/// Kolmogorov–Smirnov distance between a sample and a continuous CDF.
fn ks_distance(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn chi2_cdf_matches_closed_forms() {
    for x in [0.01, 0.5, 1.0, 3.0, 6.6349, 13.2767, 30.0] {
        assert!((chi2_cdf(4, x) - cdf4(x)).abs() < 1e-12, "x = {x}");
        // statrs' erf carries errors up to ~1e-10 near 0.5
        assert!((chi2_cdf(1, x) - cdf1(x)).abs() < 1e-9, "x = {x}");
    }
    let q4 = chi2_quantile(4, 0.99).unwrap();
    assert!((cdf4(q4) - 0.99).abs() < 1e-12);
}

#[test]
fn null_statistics_follow_their_chi2_laws() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let trials = 500;
    let mut global = Vec::with_capacity(trials);
    let mut minmax: [Vec<f64>; 4] = Default::default();
    for _ in 0..trials {
        let st = synthetic_trial(&mut rng, &Vector4::zeros());
        global.push(chi2_global(&st).unwrap());
        for (a, v) in minmax.iter_mut().enumerate() {
            v.push(chi2_minmax(&st, &[a]).unwrap());
        }
    }
    // 1% critical value of the one-sample KS statistic
    let critical = 1.63 / (trials as f64).sqrt();
    let d = ks_distance(global.clone(), cdf4);
    assert!(d < critical, "global KS distance {d}");
    for (a, v) in minmax.into_iter().enumerate() {
        let d = ks_distance(v, cdf1);
        assert!(d < critical, "min-max {a} KS distance {d}");
    }
    let t = Thresholds::default();
    let fa = global.iter().filter(|&&g| g > t.global).count() as f64 / trials as f64;
    assert!(fa <= 0.03, "false-alarm rate {fa}");
}

#[test]
fn mean_statistic_grows_by_the_noncentrality() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let m = design();
    let l = true_sigma_factor();
    let sigma_inv = (l * l.transpose()).try_inverse().unwrap();
    let fisher = m.transpose() * sigma_inv * m;
    let delta = Vector4::new(0.6, -0.4, 0.3, 0.5);
    let lambda = (delta.transpose() * fisher * delta)[0];
    let shift = m * delta / (N as f64).sqrt();
    let trials = 300;
    let mean = (0..trials)
        .map(|_| chi2_global(&synthetic_trial(&mut rng, &shift)).unwrap())
        .sum::<f64>()
        / trials as f64;
    let sd = (2.0 * (4.0 + 2.0 * lambda) / trials as f64).sqrt();
    assert!((mean - (4.0 + lambda)).abs() < 4.0 * sd + 0.05 * lambda, "mean {mean}, 4 + λ = {}", 4.0 + lambda);
}

fn spd(a: [f64; 16], ridge: f64) -> Matrix4<f64> {
    let a = Matrix4::from_row_slice(&a);
    a * a.transpose() + Matrix4::identity() * ridge
}

prop_compose! {
    fn stats_strategy()(
        s in prop::array::uniform16(-1.0f64..1.0),
        m in prop::array::uniform16(-1.0f64..1.0),
        z in prop::array::uniform4(-3.0f64..3.0),
    ) -> LocalStatistics {
        LocalStatistics {
            zeta: Vector4::from_column_slice(&z),
            sigma: spd(s, 0.5),
            m: Matrix4::from_row_slice(&m) + Matrix4::identity() * 2.0,
            n_eff: 100,
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn quadratic_form_oracles(st in stats_strategy()) {
        let sigma_inv = st.sigma.try_inverse().unwrap();
        let zt = st.m.transpose() * sigma_inv * st.zeta;
        let f = st.m.transpose() * sigma_inv * st.m;
        let global = (zt.transpose() * f.try_inverse().unwrap() * zt)[0];
        let g = chi2_global(&st).unwrap();
        prop_assert!((g - global).abs() <= 1e-8 * global.max(1e-8));
        // square invertible M: the projection is the identity
        prop_assert!((chi2_reduced(&st).unwrap() - g).abs() <= 1e-8 * g.max(1e-8));

        for a in 0..4 {
            let mm = chi2_minmax(&st, &[a]).unwrap();
            prop_assert!(mm >= -1e-12 && mm <= g * (1.0 + 1e-9) + 1e-12);
            // dual route: global minus the statistic of the nuisance-only model
            let b: Vec<usize> = (0..4).filter(|&i| i != a).collect();
            let zb = zt.select_rows(&b);
            let fbb = f.select_rows(&b).select_columns(&b);
            let nuisance = (zb.transpose() * fbb.try_inverse().unwrap() * &zb)[0];
            prop_assert!((mm - (global - nuisance)).abs() <= 1e-7 * global.max(1e-6));
        }
    }

    #[test]
    fn statistics_are_invariant_to_reparameterization(
        st in stats_strategy(),
        t in prop::array::uniform4(0.1f64..10.0),
    ) {
        let mut scaled = st.clone();
        scaled.m = st.m * Matrix4::from_diagonal(&Vector4::from_column_slice(&t));
        let g = chi2_global(&st).unwrap();
        prop_assert!((chi2_global(&scaled).unwrap() - g).abs() <= 1e-8 * g.max(1e-8));
        for a in 0..4 {
            let x = chi2_minmax(&st, &[a]).unwrap();
            let y = chi2_minmax(&scaled, &[a]).unwrap();
            prop_assert!((x - y).abs() <= 1e-7 * g.max(1e-8));
        }
    }

    #[test]
    fn statistics_scale_quadratically_with_the_residual(st in stats_strategy(), c in 0.1f64..10.0) {
        let mut scaled = st.clone();
        scaled.zeta *= c;
        let g = chi2_global(&st).unwrap();
        prop_assert!((chi2_global(&scaled).unwrap() - c * c * g).abs() <= 1e-8 * c * c * g.max(1e-8));
    }
}
