//! Plug-in estimation (estimate `Ω`, then compute `β̂(Ω̂, K)`) and a
//! seeded Monte Carlo harness comparing it with the covariance-free
//! estimator `β̂(I, K)`.
//!
//! Step-one estimators are quasi-likelihood or moment based and only serve
//! the comparison. Simulated errors are Gaussian.
//!
//! Replication `r` draws from the ChaCha8 stream `r` of the configured
//! seed, and results are reduced in replication order, so reports are
//! bit-identical for any thread count.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen, LU};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{shape_err, Error, Result};
use crate::io::{self, KeyValues};
use crate::linalg::{self, block_diag, Tolerances};
use crate::models::{self, build_omega, theta_interval, CovarianceModel, SpatialVariant, Unknown};
use crate::ridge::{gr_hat_operator, gr_hat_operator_identity, materialize_penalty, Penalty};

const GRID_POINTS: usize = 41;
const MAX_GOLDEN_ITERATIONS: usize = 200;
/// Search interval for spatial coefficients.
pub const RHO_BOUND: f64 = 0.99;
/// Cap on an unbounded end of the admissible serial-correlation interval.
pub const THETA_CAP: f64 = 10.0;

/// Draws `ε` with `Cov(ε) = σ²Ω` for a fully specified model.
#[derive(Debug, Clone)]
pub struct ErrorSampler {
    kind: SamplerKind,
    n: usize,
    sigma: f64,
}

#[derive(Debug, Clone)]
enum SamplerKind {
    Factor(DMatrix<f64>),
    Sar(LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
    Sma(DMatrix<f64>),
    Sur { m: usize, sigma12: f64 },
}

impl ErrorSampler {
    pub fn new(model: &CovarianceModel, sigma2: f64, tol: &Tolerances) -> Result<Self> {
        if !(sigma2.is_finite() && sigma2 > 0.0) {
            return Err(Error::ModelDomain(format!("σ² must be positive, got {sigma2}")));
        }
        let n = model.dim();
        let kind = match model {
            CovarianceModel::Sar1 { w, rho } => {
                let r = rho.ok_or_else(|| Error::ModelDomain("ρ must be known to sample".into()))?;
                models::validate_rho(r)?;
                let lu = (DMatrix::<f64>::identity(n, n) - w * r).lu();
                if !lu.is_invertible() {
                    return Err(Error::Singular(format!("I − ρW is singular at ρ = {r}")));
                }
                SamplerKind::Sar(lu)
            }
            CovarianceModel::Sma1 { w, rho } => {
                let r = rho.ok_or_else(|| Error::ModelDomain("ρ must be known to sample".into()))?;
                models::validate_rho(r)?;
                SamplerKind::Sma(DMatrix::<f64>::identity(n, n) + w * r)
            }
            CovarianceModel::Sur { x1, sigma12, .. } => {
                let s = sigma12.ok_or_else(|| Error::ModelDomain("σ₁₂ must be known to sample".into()))?;
                models::validate_sigma12(s)?;
                SamplerKind::Sur { m: x1.nrows(), sigma12: s }
            }
            _ => {
                let omega = build_omega(model, tol)?;
                SamplerKind::Factor(linalg::cholesky(&omega, "Ω")?.unpack())
            }
        };
        Ok(ErrorSampler { kind, n, sigma: sigma2.sqrt() })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let e = DVector::from_fn(self.n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let eps = match &self.kind {
            SamplerKind::Factor(l) => l * e,
            SamplerKind::Sar(lu) => lu.solve(&e).expect("factor checked invertible"),
            SamplerKind::Sma(b) => b * e,
            SamplerKind::Sur { m, sigma12 } => {
                let c = (1.0 - sigma12 * sigma12).sqrt();
                DVector::from_fn(2 * m, |i, _| if i < *m { e[i] } else { sigma12 * e[i - m] + c * e[i] })
            }
        };
        eps * self.sigma
    }
}

/// One draw of `ε`; `n` must match the model dimension.
pub fn sample_errors<R: Rng + ?Sized>(
    model: &CovarianceModel,
    sigma2: f64,
    n: usize,
    rng: &mut R,
    tol: &Tolerances,
) -> Result<DVector<f64>> {
    let sampler = ErrorSampler::new(model, sigma2, tol)?;
    if sampler.n() != n {
        return Err(shape_err(format!("model dimension is {}, requested {n}", sampler.n())));
    }
    Ok(sampler.sample(rng))
}

/// Outcome of a one-dimensional step-one fit.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEstimate {
    pub value: f64,
    /// Residuals vanished, so the data carry no information on the parameter.
    pub degenerate: bool,
    pub objective: f64,
    pub iterations: usize,
}

impl ParamEstimate {
    fn degenerate() -> Self {
        ParamEstimate { value: 0.0, degenerate: true, objective: f64::NAN, iterations: 0 }
    }
}

fn ols_residuals(y: &DVector<f64>, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    if y.len() != x.nrows() {
        return Err(shape_err(format!("y has length {}, X has {} rows", y.len(), x.nrows())));
    }
    let chol = linalg::cholesky(&(x.transpose() * x), "XᵀX")?;
    let b = chol.solve(&(x.transpose() * y));
    Ok(y - x * b)
}

fn is_negligible(r: &DVector<f64>, y: &DVector<f64>) -> bool {
    r.norm() <= 1e-12 * y.norm().max(f64::MIN_POSITIVE)
}

/// Grid scan followed by golden-section refinement of the best bracket.
fn minimize_scalar(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> Result<(f64, f64, usize)> {
    let g = |t: f64| {
        let v = f(t);
        if v.is_nan() { f64::INFINITY } else { v }
    };
    let step = (hi - lo) / (GRID_POINTS - 1) as f64;
    let pts: Vec<f64> = (0..GRID_POINTS).map(|i| if i + 1 == GRID_POINTS { hi } else { lo + step * i as f64 }).collect();
    let vals: Vec<f64> = pts.iter().map(|&t| g(t)).collect();
    let mut trace: Vec<(f64, f64)> = pts.iter().copied().zip(vals.iter().copied()).collect();
    let best = (0..GRID_POINTS)
        .filter(|&i| vals[i].is_finite())
        .min_by(|&a, &b| vals[a].total_cmp(&vals[b]))
        .ok_or_else(|| Error::EstimationFailure {
            message: "objective is not finite anywhere on the search grid".into(),
            trace: trace.clone(),
        })?;

    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = pts[best.saturating_sub(1)];
    let mut b = pts[(best + 1).min(GRID_POINTS - 1)];
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (g(c), g(d));
    let mut iterations = 0;
    while b - a > 1e-10 * (1.0 + a.abs().max(b.abs())) {
        if iterations == MAX_GOLDEN_ITERATIONS {
            return Err(Error::EstimationFailure {
                message: format!("golden-section search did not converge in {MAX_GOLDEN_ITERATIONS} iterations"),
                trace,
            });
        }
        iterations += 1;
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = g(c);
            trace.push((c, fc));
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = g(d);
            trace.push((d, fd));
        }
    }
    let mid = 0.5 * (a + b);
    let fm = g(mid);
    if fm <= vals[best] {
        Ok((mid, fm, iterations))
    } else {
        Ok((pts[best], vals[best], iterations))
    }
}

/// Gaussian negative log-likelihood in terms of the quadratic form
/// `q = rᵀΩ⁻¹r` and `log|Ω|`, with `σ²` either known or profiled out.
fn neg_loglik(q: f64, logdet: f64, n: usize, sigma2: Option<f64>) -> f64 {
    if q.is_nan() || q <= 0.0 || !logdet.is_finite() {
        return f64::INFINITY;
    }
    match sigma2 {
        Some(s2) => 0.5 * q / s2 + 0.5 * logdet,
        None => 0.5 * n as f64 * (q / n as f64).ln() + 0.5 * logdet,
    }
}

/// Quasi-likelihood estimator of a spatial coefficient, reusable across
/// responses sharing `W`.
#[derive(Debug, Clone)]
pub struct RhoEstimator {
    w: DMatrix<f64>,
    variant: SpatialVariant,
    eigenvalues: Option<Vec<Complex<f64>>>,
}

impl RhoEstimator {
    pub fn new(w: &DMatrix<f64>, variant: SpatialVariant) -> Result<Self> {
        linalg::ensure_square(w, "W")?;
        linalg::ensure_finite(w, "W")?;
        let eigenvalues = nalgebra::Schur::try_new(w.clone(), f64::EPSILON, 10_000)
            .map(|s| s.complex_eigenvalues().iter().copied().collect());
        Ok(RhoEstimator { w: w.clone(), variant, eigenvalues })
    }

    /// `log|det(I + sρW)|`.
    fn log_abs_det(&self, s: f64) -> f64 {
        match &self.eigenvalues {
            Some(ev) => ev.iter().map(|l| (Complex::new(1.0, 0.0) + l * s).norm().ln()).sum(),
            None => {
                let n = self.w.nrows();
                let lu = (DMatrix::<f64>::identity(n, n) + &self.w * s).lu();
                let u = lu.u();
                (0..n).map(|i| u[(i, i)].abs().ln()).sum()
            }
        }
    }

    fn objective(&self, r: &DVector<f64>, rho: f64, sigma2: Option<f64>) -> f64 {
        let n = r.len();
        match self.variant {
            SpatialVariant::Sar => {
                let e = r - &self.w * r * rho;
                neg_loglik(e.norm_squared(), -2.0 * self.log_abs_det(-rho), n, sigma2)
            }
            SpatialVariant::Sma => {
                let b = DMatrix::<f64>::identity(n, n) + &self.w * rho;
                match b.lu().solve(r) {
                    Some(e) => neg_loglik(e.norm_squared(), 2.0 * self.log_abs_det(rho), n, sigma2),
                    None => f64::INFINITY,
                }
            }
        }
    }

    pub fn estimate(&self, y: &DVector<f64>, x: &DMatrix<f64>, sigma2: Option<f64>) -> Result<ParamEstimate> {
        if x.nrows() != self.w.nrows() {
            return Err(shape_err(format!("W is {0}×{0}, X has {1} rows", self.w.nrows(), x.nrows())));
        }
        let r = ols_residuals(y, x)?;
        if is_negligible(&r, y) {
            return Ok(ParamEstimate::degenerate());
        }
        let (value, objective, iterations) =
            minimize_scalar(|rho| self.objective(&r, rho, sigma2), -RHO_BOUND, RHO_BOUND)?;
        Ok(ParamEstimate { value, degenerate: false, objective, iterations })
    }
}

/// Spatial coefficient from OLS residuals by profiled quasi-likelihood over
/// `[−0.99, 0.99]`.
pub fn estimate_rho(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    w: &DMatrix<f64>,
    variant: SpatialVariant,
    sigma2: Option<f64>,
) -> Result<ParamEstimate> {
    RhoEstimator::new(w, variant)?.estimate(y, x, sigma2)
}

/// Cross-equation correlation of per-equation OLS residuals, clamped into
/// the positive definite region.
pub fn estimate_sigma12(
    y1: &DVector<f64>,
    y2: &DVector<f64>,
    x1: &DMatrix<f64>,
    x2: &DMatrix<f64>,
    tol: &Tolerances,
) -> Result<ParamEstimate> {
    if y1.len() != y2.len() {
        return Err(shape_err("both equations need the same sample size"));
    }
    let r1 = ols_residuals(y1, x1)?;
    let r2 = ols_residuals(y2, x2)?;
    if is_negligible(&r1, y1) || is_negligible(&r2, y2) {
        return Ok(ParamEstimate::degenerate());
    }
    let corr = r1.dot(&r2) / (r1.norm() * r2.norm());
    let bound = 1.0 - tol.psd_atol;
    Ok(ParamEstimate { value: corr.clamp(-bound, bound), degenerate: false, objective: f64::NAN, iterations: 0 })
}

/// Quasi-likelihood estimator of `θ` in `Ω⁻¹ = I + θA`, reusable across
/// responses sharing `A`.
#[derive(Debug, Clone)]
pub struct ThetaEstimator {
    a: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    interval: (f64, f64),
}

impl ThetaEstimator {
    pub fn new(a: &DMatrix<f64>, tol: &Tolerances) -> Result<Self> {
        let (lo, hi) = theta_interval(a, tol)?;
        let (lo, hi) = (lo.max(-THETA_CAP), hi.min(THETA_CAP));
        let margin = 1e-3 * (hi - lo);
        let eigenvalues = SymmetricEigen::new(a.clone()).eigenvalues.iter().copied().collect();
        Ok(ThetaEstimator { a: a.clone(), eigenvalues, interval: (lo + margin, hi - margin) })
    }

    /// Search interval after capping and shrinking away from the boundary.
    pub fn interval(&self) -> (f64, f64) {
        self.interval
    }

    pub fn estimate(&self, y: &DVector<f64>, x: &DMatrix<f64>, sigma2: Option<f64>) -> Result<ParamEstimate> {
        let n = self.a.nrows();
        if x.nrows() != n {
            return Err(shape_err(format!("A is {n}×{n}, X has {} rows", x.nrows())));
        }
        let r = ols_residuals(y, x)?;
        if is_negligible(&r, y) {
            return Ok(ParamEstimate::degenerate());
        }
        let rr = r.norm_squared();
        let rar = r.dot(&(&self.a * &r));
        let f = |t: f64| {
            let logdet: f64 = -self.eigenvalues.iter().map(|l| (1.0 + t * l).ln()).sum::<f64>();
            neg_loglik(rr + t * rar, logdet, n, sigma2)
        };
        let (value, objective, iterations) = minimize_scalar(f, self.interval.0, self.interval.1)?;
        Ok(ParamEstimate { value, degenerate: false, objective, iterations })
    }
}

pub fn estimate_theta(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    a: &DMatrix<f64>,
    sigma2: Option<f64>,
    tol: &Tolerances,
) -> Result<ParamEstimate> {
    ThetaEstimator::new(a, tol)?.estimate(y, x, sigma2)
}

/// Result of the plug-in procedure.
#[derive(Debug, Clone)]
pub struct TwoStepFit {
    pub beta: DVector<f64>,
    pub omega_hat: DMatrix<f64>,
    /// Estimated parameter, absent when the model had no unknowns.
    pub fitted: Option<(Unknown, ParamEstimate)>,
}

/// Step-one fit for the model's unknown, reusing expensive factorizations.
#[derive(Debug, Clone)]
enum Step1 {
    Known,
    RaoZeroDelta,
    Sur { x1: DMatrix<f64>, x2: DMatrix<f64> },
    Rho(RhoEstimator),
    Theta(ThetaEstimator),
}

impl Step1 {
    fn new(model: &CovarianceModel, tol: &Tolerances) -> Result<Self> {
        Ok(match (model.unknown(), model) {
            (None, _) => Step1::Known,
            (Some(Unknown::DeltaBar), _) => Step1::RaoZeroDelta,
            (Some(Unknown::Sigma12), CovarianceModel::Sur { x1, x2, .. }) => {
                Step1::Sur { x1: x1.clone(), x2: x2.clone() }
            }
            (Some(Unknown::Rho), CovarianceModel::Sar1 { w, .. }) => Step1::Rho(RhoEstimator::new(w, SpatialVariant::Sar)?),
            (Some(Unknown::Rho), CovarianceModel::Sma1 { w, .. }) => Step1::Rho(RhoEstimator::new(w, SpatialVariant::Sma)?),
            (Some(Unknown::Theta), CovarianceModel::Serial { a, .. }) => Step1::Theta(ThetaEstimator::new(a, tol)?),
            _ => unreachable!("unknown parameter does not belong to the model"),
        })
    }

    fn fit(
        &self,
        model: &CovarianceModel,
        y: &DVector<f64>,
        x: &DMatrix<f64>,
        sigma2: Option<f64>,
        tol: &Tolerances,
    ) -> Result<(CovarianceModel, Option<(Unknown, ParamEstimate)>)> {
        match self {
            Step1::Known => Ok((model.clone(), None)),
            Step1::RaoZeroDelta => {
                // H(Ω, K) does not depend on Δ̄, so any admissible value works.
                let (n, k) = x.shape();
                let fitted = model.with_delta_bar(DMatrix::zeros(n - k, n - k), tol)?;
                Ok((fitted, None))
            }
            Step1::Sur { x1, x2 } => {
                let m = x1.nrows();
                let y1 = y.rows(0, m).into_owned();
                let y2 = y.rows(m, m).into_owned();
                let est = estimate_sigma12(&y1, &y2, x1, x2, tol)?;
                Ok((model.with_scalar(est.value)?, Some((Unknown::Sigma12, est))))
            }
            Step1::Rho(e) => {
                let est = e.estimate(y, x, sigma2)?;
                Ok((model.with_scalar(est.value)?, Some((Unknown::Rho, est))))
            }
            Step1::Theta(e) => {
                let est = e.estimate(y, x, sigma2)?;
                Ok((model.with_scalar(est.value)?, Some((Unknown::Theta, est))))
            }
        }
    }
}

fn check_sur_design(model: &CovarianceModel, x: &DMatrix<f64>) -> Result<()> {
    if let CovarianceModel::Sur { x1, x2, .. } = model {
        if max_abs_diff(x, &block_diag(x1, x2)) != 0.0 {
            return Err(shape_err("for the SUR model X must be the block diagonal of X₁ and X₂"));
        }
    }
    Ok(())
}

fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    if a.shape() != b.shape() {
        return f64::INFINITY;
    }
    linalg::max_abs(&(a - b))
}

/// Estimates the model's unknown parameter, builds `Ω̂` and returns
/// `β̂(Ω̂, K)`. A model without unknowns uses its own `Ω`.
pub fn two_step_estimate(
    model: &CovarianceModel,
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    k_mat: &DMatrix<f64>,
    sigma2: Option<f64>,
    tol: &Tolerances,
) -> Result<TwoStepFit> {
    check_sur_design(model, x)?;
    if model.dim() != x.nrows() || y.len() != x.nrows() {
        return Err(shape_err(format!(
            "model dimension {}, X has {} rows, y has length {}",
            model.dim(),
            x.nrows(),
            y.len()
        )));
    }
    let (fitted_model, fitted) = Step1::new(model, tol)?.fit(model, y, x, sigma2, tol)?;
    let omega_hat = build_omega(&fitted_model, tol)?;
    let beta = gr_hat_operator(x, &omega_hat, k_mat, tol)? * y;
    Ok(TwoStepFit { beta, omega_hat, fitted })
}

/// Simulation setup. `model` carries the true parameters.
#[derive(Debug, Clone)]
pub struct McConfig {
    pub model: CovarianceModel,
    pub x: DMatrix<f64>,
    pub beta: DVector<f64>,
    pub sigma2: f64,
    pub penalty: Penalty,
    pub replications: usize,
    pub seed: u64,
    /// Worker threads; `None` lets the pool decide.
    pub threads: Option<usize>,
    /// True values of the scalar parameter for a sensitivity sweep.
    pub grid: Option<Vec<f64>>,
}

const CONFIG_KEYS: &[&str] = &[
    "model", "x", "beta", "sigma2", "penalty", "replications", "seed", "threads", "grid", "omega", "gamma_bar",
    "delta_bar", "x1", "x2", "sigma12", "w", "row_normalize", "rho", "a", "theta",
];

impl McConfig {
    /// Reads the `key = value` format. Paths resolve against the config
    /// file's directory.
    pub fn from_key_values(kv: &KeyValues, tol: &Tolerances) -> Result<Self> {
        kv.reject_unknown(CONFIG_KEYS)?;
        let cfg_err = |e: Error| match e {
            Error::Config(_) | Error::Io(_) | Error::Parse { .. } => e,
            other => Error::Config(other.to_string()),
        };
        let kind = kv.require("model")?;
        let (model, x) = match kind {
            "sur" => {
                let x1 = kv.matrix("x1")?;
                let x2 = kv.matrix("x2")?;
                let x = block_diag(&x1, &x2);
                let s: f64 = kv.require_value("sigma12")?;
                (CovarianceModel::sur(x1, x2, Some(s)).map_err(cfg_err)?, x)
            }
            _ => {
                let x = kv.matrix("x")?;
                let n = x.nrows();
                let model = match kind {
                    "explicit" => CovarianceModel::explicit(kv.matrix("omega")?, tol),
                    "rao" => CovarianceModel::rao(x.clone(), kv.matrix("gamma_bar")?, Some(kv.matrix("delta_bar")?), tol),
                    "sar1" | "sma1" => {
                        let normalize = kv.parse_value::<bool>("row_normalize")?.unwrap_or(false);
                        let w = io::read_weights(&kv.path("w")?, normalize)?;
                        let rho = Some(kv.require_value("rho")?);
                        if kind == "sar1" { CovarianceModel::sar1(w, rho, tol) } else { CovarianceModel::sma1(w, rho, tol) }
                    }
                    "serial" => {
                        let a = io::load_serial_a(kv.require("a")?, n, &kv.base)?;
                        CovarianceModel::serial(a, Some(kv.require_value("theta")?), tol)
                    }
                    other => return Err(Error::Config(format!("unknown model `{other}`"))),
                };
                (model.map_err(cfg_err)?, x)
            }
        };
        let beta = kv.parse_list("beta")?.ok_or_else(|| Error::Config("missing key `beta`".into()))?;
        let penalty = match kv.get("penalty") {
            Some(spec) => io::parse_penalty(spec, &kv.base)?,
            None => Penalty::Zero,
        };
        let cfg = McConfig {
            model,
            x,
            beta: DVector::from_vec(beta),
            sigma2: kv.parse_value("sigma2")?.unwrap_or(1.0),
            penalty,
            replications: kv.require_value("replications")?,
            seed: kv.require_value("seed")?,
            threads: kv.parse_value("threads")?,
            grid: kv.parse_list("grid")?,
        };
        cfg.validate(tol).map_err(cfg_err)?;
        Ok(cfg)
    }

    pub fn validate(&self, tol: &Tolerances) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if !(self.sigma2.is_finite() && self.sigma2 > 0.0) {
            return Err(Error::Config(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        let (n, k) = self.x.shape();
        if self.beta.len() != k {
            return Err(Error::Config(format!("beta has {} entries, X has {k} columns", self.beta.len())));
        }
        if self.model.dim() != n {
            return Err(Error::Config(format!("model dimension {} does not match {n} rows of X", self.model.dim())));
        }
        check_sur_design(&self.model, &self.x)?;
        let rank = linalg::numerical_rank(&self.x, tol)?;
        if rank != k {
            return Err(Error::RankDeficient { expected: k, found: rank });
        }
        if let Some(grid) = &self.grid {
            if grid.is_empty() {
                return Err(Error::Config("grid is empty".into()));
            }
            if self.model.scalar().is_none() {
                return Err(Error::Config(format!("model `{}` has no scalar parameter to sweep", self.model.name())));
            }
            for &v in grid {
                build_omega(&self.model.with_scalar(v)?, tol)?;
            }
        }
        build_omega(&self.model, tol)?;
        Ok(())
    }
}

/// Neumaier compensated sum.
#[derive(Debug, Clone, Copy, Default)]
struct Sum {
    s: f64,
    c: f64,
}

impl Sum {
    fn add(&mut self, v: f64) {
        let t = self.s + v;
        if self.s.abs() >= v.abs() {
            self.c += (self.s - t) + v;
        } else {
            self.c += (v - t) + self.s;
        }
        self.s = t;
    }

    fn value(&self) -> f64 {
        self.s + self.c
    }
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mut s = Sum::default();
    values.iter().for_each(|&v| s.add(v));
    let mean = s.value() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let mut ss = Sum::default();
    values.iter().for_each(|&v| ss.add((v - mean) * (v - mean)));
    (mean, (ss.value() / (n - 1) as f64 / n as f64).sqrt())
}

/// Summary of one estimator over all replications.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorRecord {
    pub name: String,
    pub mse: f64,
    pub mse_se: f64,
    pub bias: Vec<f64>,
    /// Mean of `‖β̂ − β̂(I, K)‖`.
    pub mean_gap_to_free: f64,
    pub max_gap_to_free: f64,
    /// Mean paired difference of squared errors against `β̂(I, K)`.
    pub mse_diff_to_free: f64,
    pub mse_diff_se: f64,
    pub ok: usize,
    pub failed: usize,
}

#[derive(Debug, Clone)]
pub struct McReport {
    pub seed: u64,
    pub replications: usize,
    /// True value of the swept parameter, when part of a sweep.
    pub grid_value: Option<f64>,
    /// Oracle `β̂(Ω, K)`, two-step `β̂(Ω̂, K)` and covariance-free `β̂(I, K)`.
    pub records: Vec<EstimatorRecord>,
    pub mean_fitted_param: Option<f64>,
    pub degenerate_fits: usize,
    pub mean_condition_omega_hat: f64,
    pub wall_time: Duration,
}

impl McReport {
    pub fn record(&self, name: &str) -> Option<&EstimatorRecord> {
        self.records.iter().find(|r| r.name == name)
    }
}

struct Replication {
    oracle: DVector<f64>,
    free: DVector<f64>,
    two_step: Option<(DVector<f64>, Option<ParamEstimate>, f64)>,
}

fn condition_spd(m: &DMatrix<f64>) -> f64 {
    let ev = SymmetricEigen::new(m.clone()).eigenvalues;
    let (lo, hi) = (ev.min(), ev.max());
    if lo <= 0.0 { f64::INFINITY } else { hi / lo }
}

/// Runs the harness at the configured true parameters.
pub fn run_monte_carlo(cfg: &McConfig, tol: &Tolerances) -> Result<McReport> {
    cfg.validate(tol)?;
    let start = Instant::now();
    let n = cfg.x.nrows();
    let x = &cfg.x;
    let k_mat = materialize_penalty(&cfg.penalty, x, &DMatrix::identity(n, n), tol)?;
    let omega = build_omega(&cfg.model, tol)?;
    let h_oracle = gr_hat_operator(x, &omega, &k_mat, tol)?;
    let h_free = gr_hat_operator_identity(x, &k_mat)?;
    let sampler = ErrorSampler::new(&cfg.model, cfg.sigma2, tol)?;
    let unknown_model = cfg.model.forget_parameter();
    let step1 = Step1::new(&unknown_model, tol)?;
    let mean = x * &cfg.beta;

    let one = |rep: usize| -> Replication {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(rep as u64);
        let y = &mean + sampler.sample(&mut rng);
        let two_step = step1.fit(&unknown_model, &y, x, Some(cfg.sigma2), tol).and_then(|(m, fitted)| {
            let omega_hat = build_omega(&m, tol)?;
            let beta = gr_hat_operator(x, &omega_hat, &k_mat, tol)? * &y;
            Ok((beta, fitted.map(|f| f.1), condition_spd(&omega_hat)))
        });
        Replication { oracle: &h_oracle * &y, free: &h_free * &y, two_step: two_step.ok() }
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let reps: Vec<Replication> = pool.install(|| (0..cfg.replications).into_par_iter().map(one).collect());

    let free: Vec<&DVector<f64>> = reps.iter().map(|r| &r.free).collect();
    let summarize = |name: &str, est: Vec<Option<&DVector<f64>>>| -> EstimatorRecord {
        let k = cfg.beta.len();
        let mut sq = Vec::new();
        let mut diffs = Vec::new();
        let mut gaps = Vec::new();
        let mut bias = vec![Sum::default(); k];
        for (b, f) in est.iter().zip(&free) {
            let Some(b) = b else { continue };
            let e = *b - &cfg.beta;
            let se = e.norm_squared();
            sq.push(se);
            diffs.push(se - (*f - &cfg.beta).norm_squared());
            gaps.push((*b - *f).norm());
            for j in 0..k {
                bias[j].add(e[j]);
            }
        }
        let ok = sq.len();
        let (mse, mse_se) = mean_and_se(&sq);
        let (mse_diff_to_free, mse_diff_se) = mean_and_se(&diffs);
        let (mean_gap_to_free, _) = mean_and_se(&gaps);
        EstimatorRecord {
            name: name.to_string(),
            mse,
            mse_se,
            bias: bias.iter().map(|s| s.value() / ok as f64).collect(),
            mean_gap_to_free,
            max_gap_to_free: gaps.iter().copied().fold(0.0, f64::max),
            mse_diff_to_free,
            mse_diff_se,
            ok,
            failed: cfg.replications - ok,
        }
    };

    let records = vec![
        summarize("oracle", reps.iter().map(|r| Some(&r.oracle)).collect()),
        summarize("two_step", reps.iter().map(|r| r.two_step.as_ref().map(|t| &t.0)).collect()),
        summarize("cov_free", reps.iter().map(|r| Some(&r.free)).collect()),
    ];
    let fits: Vec<&ParamEstimate> = reps.iter().filter_map(|r| r.two_step.as_ref().and_then(|t| t.1.as_ref())).collect();
    let params: Vec<f64> = fits.iter().filter(|p| !p.degenerate).map(|p| p.value).collect();
    let conds: Vec<f64> = reps.iter().filter_map(|r| r.two_step.as_ref().map(|t| t.2)).collect();
    Ok(McReport {
        seed: cfg.seed,
        replications: cfg.replications,
        grid_value: None,
        records,
        mean_fitted_param: (!params.is_empty()).then(|| mean_and_se(&params).0),
        degenerate_fits: fits.iter().filter(|p| p.degenerate).count(),
        mean_condition_omega_hat: mean_and_se(&conds).0,
        wall_time: start.elapsed(),
    })
}

/// One report per grid value, or a single report without a grid.
pub fn run_sweep(cfg: &McConfig, tol: &Tolerances) -> Result<Vec<McReport>> {
    let Some(grid) = &cfg.grid else {
        return Ok(vec![run_monte_carlo(cfg, tol)?]);
    };
    grid.iter()
        .map(|&v| {
            let point = McConfig { model: cfg.model.with_scalar(v)?, grid: None, ..cfg.clone() };
            let mut report = run_monte_carlo(&point, tol)?;
            report.grid_value = Some(v);
            Ok(report)
        })
        .collect()
}

fn opt_number(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), io::format_number)
}

/// Machine-readable output: one CSV row per estimator and grid value, with
/// 17 significant digits. Timing is deliberately excluded.
pub fn reports_to_csv(reports: &[McReport]) -> String {
    let k = reports.first().and_then(|r| r.records.first()).map_or(0, |r| r.bias.len());
    let mut out = String::from(
        "grid_value,estimator,seed,replications,ok,failed,mse,mse_se,mean_gap_to_free,max_gap_to_free,mse_diff_to_free,mse_diff_se",
    );
    for j in 1..=k {
        write!(out, ",bias_{j}").unwrap();
    }
    out.push_str(",mean_fitted_param,degenerate_fits,mean_condition_omega_hat\n");
    for rep in reports {
        for r in &rep.records {
            write!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                opt_number(rep.grid_value),
                r.name,
                rep.seed,
                rep.replications,
                r.ok,
                r.failed,
                io::format_number(r.mse),
                io::format_number(r.mse_se),
                io::format_number(r.mean_gap_to_free),
                io::format_number(r.max_gap_to_free),
                io::format_number(r.mse_diff_to_free),
                io::format_number(r.mse_diff_se),
            )
            .unwrap();
            for b in &r.bias {
                write!(out, ",{}", io::format_number(*b)).unwrap();
            }
            writeln!(
                out,
                ",{},{},{}",
                opt_number(rep.mean_fitted_param),
                rep.degenerate_fits,
                io::format_number(rep.mean_condition_omega_hat)
            )
            .unwrap();
        }
    }
    out
}

/// Human-readable table with 6 significant digits.
pub fn reports_to_table(reports: &[McReport]) -> String {
    let mut out = String::new();
    for rep in reports {
        if let Some(v) = rep.grid_value {
            writeln!(out, "true parameter = {v:.6}").unwrap();
        }
        writeln!(out, "seed = {}, replications = {}, wall time = {:.3} s", rep.seed, rep.replications, rep.wall_time.as_secs_f64())
            .unwrap();
        writeln!(
            out,
            "{:<10} {:>13} {:>13} {:>13} {:>13} {:>13} {:>7}",
            "estimator", "mse", "mse_se", "gap_to_free", "diff_to_free", "diff_se", "failed"
        )
        .unwrap();
        for r in &rep.records {
            writeln!(
                out,
                "{:<10} {:>13.6e} {:>13.6e} {:>13.6e} {:>13.6e} {:>13.6e} {:>7}",
                r.name, r.mse, r.mse_se, r.mean_gap_to_free, r.mse_diff_to_free, r.mse_diff_se, r.failed
            )
            .unwrap();
        }
        if let Some(p) = rep.mean_fitted_param {
            writeln!(out, "mean fitted parameter = {p:.6}, degenerate fits = {}", rep.degenerate_fits).unwrap();
        }
        writeln!(out, "mean condition number of fitted covariance = {:.6e}\n", rep.mean_condition_omega_hat).unwrap();
    }
    out
}
