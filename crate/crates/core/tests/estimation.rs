//! Seeded simulation checks for the step-one estimators, the plug-in
//! estimator and the Monte Carlo harness.

use covfree::linalg::Tolerances;
use covfree::models::{build_omega, spatial_all_rho_check, CovarianceModel, SerialPreset, SpatialVariant};
use covfree::ridge::{gr_hat_operator, gr_hat_operator_identity, Penalty};
use covfree::spatial::{nullspace_instance, row_normalize, ContiguityMatrix};
use covfree::two_step::{
    estimate_rho, estimate_sigma12, estimate_theta, run_monte_carlo, run_sweep, sample_errors, two_step_estimate,
    McConfig,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn tol() -> Tolerances {
    Tolerances::default()
}

fn gaussian_design(n: usize, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, k, |_, j| if j == 0 { 1.0 } else { rng.sample(StandardNormal) })
}

fn lattice(side: usize) -> DMatrix<f64> {
    row_normalize(&ContiguityMatrix::rook_lattice(side, side)).matrix
}

fn spatial_response(model: &CovarianceModel, x: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let beta = DVector::from_fn(x.ncols(), |j, _| 1.0 - j as f64);
    x * beta + sample_errors(model, 1.0, x.nrows(), rng, &tol()).unwrap()
}

#[test]
fn rho_near_zero_for_white_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let w = lattice(10);
    let x = gaussian_design(100, 3, &mut rng);
    for variant in [SpatialVariant::Sar, SpatialVariant::Sma] {
        let model = CovarianceModel::Sar1 { w: w.clone(), rho: Some(0.0) };
        let y = spatial_response(&model, &x, &mut rng);
        let est = estimate_rho(&y, &x, &w, variant, None).unwrap();
        assert!(est.value.abs() < 0.15, "{variant:?}: {}", est.value);
        assert!(!est.degenerate);
    }
}

#[test]
fn rho_recovered_on_lattice() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let w = lattice(15);
    let x = gaussian_design(225, 3, &mut rng);
    let model = CovarianceModel::sar1(w.clone(), Some(0.6), &tol()).unwrap();
    let y = spatial_response(&model, &x, &mut rng);
    let est = estimate_rho(&y, &x, &w, SpatialVariant::Sar, None).unwrap();
    assert!(est.value > 0.4 && est.value < 0.8, "{}", est.value);

    let model = CovarianceModel::sma1(w.clone(), Some(0.6), &tol()).unwrap();
    let y = spatial_response(&model, &x, &mut rng);
    let est = estimate_rho(&y, &x, &w, SpatialVariant::Sma, None).unwrap();
    assert!(est.value > 0.4 && est.value < 0.8, "{}", est.value);
}

#[test]
fn rho_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w = lattice(5);
    let x = gaussian_design(25, 2, &mut rng);
    let model = CovarianceModel::sar1(w.clone(), Some(-0.4), &tol()).unwrap();
    let y = spatial_response(&model, &x, &mut rng);
    let a = estimate_rho(&y, &x, &w, SpatialVariant::Sar, None).unwrap();
    let b = estimate_rho(&y, &x, &w, SpatialVariant::Sar, None).unwrap();
    assert_eq!(a, b);
    assert!(a.value.abs() <= 0.99);
}

#[test]
fn sigma12_near_zero_for_independent_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let m = 2000;
    let x1 = gaussian_design(m, 2, &mut rng);
    let x2 = gaussian_design(m, 3, &mut rng);
    let y1 = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y2 = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let est = estimate_sigma12(&y1, &y2, &x1, &x2, &tol()).unwrap();
    assert!(est.value.abs() < 0.1, "{}", est.value);
}

#[test]
fn theta_recovered_for_intraclass_and_near_zero_for_white_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let n = 100;
    let a = SerialPreset::IntraClass.matrix(n);
    let x = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));

    let model = CovarianceModel::serial(a.clone(), Some(0.5), &tol()).unwrap();
    let y = spatial_response(&model, &x, &mut rng);
    let est = estimate_theta(&y, &x, &a, Some(1.0), &tol()).unwrap();
    assert!(est.value > 0.3 && est.value < 0.7, "{}", est.value);

    let ar = SerialPreset::Ar1.matrix(n);
    let model = CovarianceModel::serial(ar.clone(), Some(0.0), &tol()).unwrap();
    let y = spatial_response(&model, &x, &mut rng);
    let est = estimate_theta(&y, &x, &ar, None, &tol()).unwrap();
    assert!(est.value.abs() < 0.2, "{}", est.value);
}

#[test]
fn known_parameters_reduce_to_plain_estimate() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let w = lattice(4);
    let x = gaussian_design(16, 2, &mut rng);
    let model = CovarianceModel::sma1(w, Some(0.3), &tol()).unwrap();
    let y = spatial_response(&model, &x, &mut rng);
    let k = DMatrix::identity(2, 2) * 0.5;
    let fit = two_step_estimate(&model, &y, &x, &k, None, &tol()).unwrap();
    let omega = build_omega(&model, &tol()).unwrap();
    let direct = gr_hat_operator(&x, &omega, &k, &tol()).unwrap() * &y;
    assert_eq!(fit.beta, direct);
    assert!(fit.fitted.is_none());
}

#[test]
fn two_step_equals_free_when_condition_holds() {
    let (w, x, k) = nullspace_instance();
    assert!(spatial_all_rho_check(&w, &x, &k, SpatialVariant::Sma, &tol()).unwrap().holds);
    let free = gr_hat_operator_identity(&x, &k).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for rho in [-0.8, 0.1, 0.7] {
        let model = CovarianceModel::sma1(w.clone(), Some(rho), &tol()).unwrap();
        let y = spatial_response(&model, &x, &mut rng);
        let fit = two_step_estimate(&model.forget_parameter(), &y, &x, &k, None, &tol()).unwrap();
        assert!(fit.fitted.is_some());
        assert!((&fit.beta - &free * &y).amax() <= 1e-8);
    }
}

#[test]
fn two_step_differs_on_generic_instance() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let w = lattice(5);
    let x = gaussian_design(25, 2, &mut rng);
    let model = CovarianceModel::sar1(w, Some(0.7), &tol()).unwrap();
    let y = spatial_response(&model, &x, &mut rng);
    let k = DMatrix::identity(2, 2);
    let fit = two_step_estimate(&model.forget_parameter(), &y, &x, &k, None, &tol()).unwrap();
    let free = gr_hat_operator_identity(&x, &k).unwrap() * &y;
    assert!((&fit.beta - free).amax() > 1e-6);
}

#[test]
fn rao_two_step_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = gaussian_design(12, 3, &mut rng);
    let g = DMatrix::from_fn(3, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
    let gamma_bar = &g * g.transpose();
    let d = DMatrix::from_fn(9, 9, |_, _| rng.sample::<f64, _>(StandardNormal));
    let model = CovarianceModel::rao(x.clone(), gamma_bar, Some(&d * d.transpose()), &tol()).unwrap();
    let y = DVector::from_fn(12, |_, _| rng.sample::<f64, _>(StandardNormal));
    let k = DMatrix::identity(3, 3) * 2.0;
    let oracle = gr_hat_operator(&x, &build_omega(&model, &tol()).unwrap(), &k, &tol()).unwrap() * &y;
    let fit = two_step_estimate(&model.forget_parameter(), &y, &x, &k, None, &tol()).unwrap();
    assert!((fit.beta - oracle).amax() <= 1e-8);
}

fn sar_config(replications: usize, threads: Option<usize>) -> McConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let x = gaussian_design(16, 2, &mut rng);
    McConfig {
        model: CovarianceModel::sar1(lattice(4), Some(0.5), &tol()).unwrap(),
        x,
        beta: DVector::from_vec(vec![1.0, 2.0]),
        sigma2: 1.5,
        penalty: Penalty::OrdinaryRidge(0.5),
        replications,
        seed: 42,
        threads,
        grid: None,
    }
}

#[test]
fn monte_carlo_identity_truth() {
    let mut cfg = sar_config(50, Some(2));
    cfg.model = CovarianceModel::Explicit { omega: DMatrix::identity(16, 16) };
    let r = run_monte_carlo(&cfg, &tol()).unwrap();
    let oracle = r.record("oracle").unwrap();
    let free = r.record("cov_free").unwrap();
    assert_eq!(oracle.mse, free.mse);
    assert_eq!(oracle.max_gap_to_free, 0.0);
    assert_eq!(r.record("two_step").unwrap().failed, 0);
}

#[test]
fn monte_carlo_variance_is_nonnegative() {
    let r = run_monte_carlo(&sar_config(200, None), &tol()).unwrap();
    for rec in &r.records {
        let bias2: f64 = rec.bias.iter().map(|b| b * b).sum();
        assert!(rec.mse >= bias2 - 1e-12, "{}", rec.name);
        assert_eq!(rec.ok + rec.failed, 200);
    }
    assert!(r.mean_fitted_param.is_some());
    assert!(r.mean_condition_omega_hat >= 1.0);
}

#[test]
fn monte_carlo_equivalence_instance_has_zero_gap() {
    let (w, x, _) = nullspace_instance();
    let cfg = McConfig {
        model: CovarianceModel::sma1(w, Some(0.6), &tol()).unwrap(),
        x,
        beta: DVector::from_vec(vec![0.5, -0.5]),
        sigma2: 1.0,
        penalty: Penalty::OrdinaryRidge(1.0),
        replications: 100,
        seed: 3,
        threads: Some(3),
        grid: None,
    };
    let r = run_monte_carlo(&cfg, &tol()).unwrap();
    for rec in &r.records {
        assert!(rec.max_gap_to_free <= 1e-8, "{}: {}", rec.name, rec.max_gap_to_free);
    }
    let mses: Vec<f64> = r.records.iter().map(|rec| rec.mse).collect();
    assert!(mses.iter().all(|m| (m - mses[2]).abs() <= 1e-8));
}

#[test]
fn monte_carlo_is_thread_independent() {
    let a = run_monte_carlo(&sar_config(64, Some(1)), &tol()).unwrap();
    let b = run_monte_carlo(&sar_config(64, Some(4)), &tol()).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.mean_fitted_param, b.mean_fitted_param);
}

#[test]
fn sweep_produces_one_report_per_grid_value() {
    let mut cfg = sar_config(10, Some(2));
    cfg.grid = Some(vec![-0.5, 0.0, 0.5]);
    let reports = run_sweep(&cfg, &tol()).unwrap();
    assert_eq!(reports.len(), 3);
    assert_eq!(reports[1].grid_value, Some(0.0));
    cfg.grid = Some(vec![1.5]);
    assert!(run_sweep(&cfg, &tol()).is_err());
}

#[test]
fn rejects_empty_runs() {
    let cfg = sar_config(0, None);
    assert!(run_monte_carlo(&cfg, &tol()).is_err());
}
