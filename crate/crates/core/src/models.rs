//! Structured covariance families and their parameter-free coincidence
//! conditions.
//!
//! Each family fixes the shape of `Ω` up to unknown parameters (a random
//! effect covariance, a cross-equation correlation, a spatial coefficient,
//! a serial-correlation coefficient). The checkers in this module decide
//! coincidence of the two ridge estimators without ever touching those
//! unknowns.

use nalgebra::DMatrix;

use crate::error::{shape_err, Error, Result};
use crate::linalg::{self, block_diag, max_abs, scaled, vstack, Tolerances};

/// Spatial process form: autoregressive `ε = ρWε + e` or moving average
/// `ε = ρWe + e`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpatialVariant {
    Sar,
    Sma,
}

/// Description of `Ω`. Parameters set to `None` are unknown.
#[derive(Debug, Clone)]
pub enum CovarianceModel {
    Explicit {
        omega: DMatrix<f64>,
    },
    /// `Ω = I + XΓ̄Xᵀ + ZΔ̄Zᵀ` with `Z` the orthonormal null-space basis of `X`.
    Rao {
        x: DMatrix<f64>,
        gamma_bar: DMatrix<f64>,
        delta_bar: Option<DMatrix<f64>>,
    },
    /// Two stacked equations with `Ω = Σ ⊗ I_m`, `σ₁₁ = σ₂₂ = 1`.
    Sur {
        x1: DMatrix<f64>,
        x2: DMatrix<f64>,
        sigma12: Option<f64>,
    },
    /// `Ω = (I − ρW)⁻¹(I − ρWᵀ)⁻¹`.
    Sar1 { w: DMatrix<f64>, rho: Option<f64> },
    /// `Ω = (I + ρW)(I + ρWᵀ)`.
    Sma1 { w: DMatrix<f64>, rho: Option<f64> },
    /// `Ω⁻¹ = I + θA`.
    Serial { a: DMatrix<f64>, theta: Option<f64> },
}

/// Which parameter of a model is still unknown.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unknown {
    DeltaBar,
    Sigma12,
    Rho,
    Theta,
}

fn validate_weights(w: &DMatrix<f64>, tol: &Tolerances) -> Result<()> {
    linalg::ensure_square(w, "W")?;
    linalg::ensure_finite(w, "W")?;
    if w.iter().any(|&v| v < 0.0) {
        return Err(Error::ModelDomain("W has negative weights".into()));
    }
    for (i, row) in w.row_iter().enumerate() {
        let s = row.sum();
        if s != 0.0 && (s - 1.0).abs() > tol.residual_atol {
            return Err(Error::ModelDomain(format!("row {i} of W sums to {s}, expected 1 or 0")));
        }
    }
    if max_abs(w) == 0.0 {
        return Err(Error::ModelDomain("W is the zero matrix".into()));
    }
    Ok(())
}

pub(crate) fn validate_rho(rho: f64) -> Result<()> {
    if rho.is_finite() && rho.abs() < 1.0 {
        Ok(())
    } else {
        Err(Error::ModelDomain(format!("ρ must satisfy |ρ| < 1, got {rho}")))
    }
}

pub(crate) fn validate_sigma12(s: f64) -> Result<()> {
    if s.is_finite() && s.abs() < 1.0 {
        Ok(())
    } else {
        Err(Error::ModelDomain(format!("σ₁₂ must satisfy |σ₁₂| < 1, got {s}")))
    }
}

fn ensure_symmetric(m: &DMatrix<f64>, what: &str, tol: &Tolerances) -> Result<()> {
    linalg::ensure_square(m, what)?;
    let asym = scaled(max_abs(&(m - m.transpose())), max_abs(m).max(1.0));
    if asym > tol.residual_atol {
        return Err(Error::ModelDomain(format!("{what} is not symmetric")));
    }
    Ok(())
}

fn ensure_psd(m: &DMatrix<f64>, what: &str, tol: &Tolerances) -> Result<()> {
    ensure_symmetric(m, what, tol)?;
    if !linalg::is_psd(m, tol)? {
        return Err(Error::ModelDomain(format!("{what} is not positive semidefinite")));
    }
    Ok(())
}

/// Normalized cross-correlation and per-equation scale factors for a raw
/// `(σ₁₁, σ₁₂, σ₂₂)`. Dividing equation `i` by `scale_i` yields unit
/// variances and correlation `sigma12`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurScaling {
    pub sigma12: f64,
    pub scale1: f64,
    pub scale2: f64,
}

pub fn sur_normalize(s11: f64, s12: f64, s22: f64) -> Result<SurScaling> {
    if !(s11 > 0.0 && s22 > 0.0) || !(s11.is_finite() && s22.is_finite() && s12.is_finite()) {
        return Err(Error::ModelDomain("σ₁₁ and σ₂₂ must be positive".into()));
    }
    let scale1 = s11.sqrt();
    let scale2 = s22.sqrt();
    let sigma12 = s12 / (scale1 * scale2);
    validate_sigma12(sigma12)?;
    Ok(SurScaling { sigma12, scale1, scale2 })
}

impl CovarianceModel {
    pub fn explicit(omega: DMatrix<f64>, tol: &Tolerances) -> Result<Self> {
        linalg::ensure_square(&omega, "Ω")?;
        if !linalg::is_pd(&omega, tol)? {
            return Err(Error::NotPositiveDefinite("Ω".into()));
        }
        Ok(CovarianceModel::Explicit { omega })
    }

    pub fn rao(
        x: DMatrix<f64>,
        gamma_bar: DMatrix<f64>,
        delta_bar: Option<DMatrix<f64>>,
        tol: &Tolerances,
    ) -> Result<Self> {
        let (n, k) = x.shape();
        if gamma_bar.shape() != (k, k) {
            return Err(shape_err(format!("Γ̄ must be {k}×{k}, got {:?}", gamma_bar.shape())));
        }
        ensure_psd(&gamma_bar, "Γ̄", tol)?;
        if let Some(d) = &delta_bar {
            if n <= k || d.shape() != (n - k, n - k) {
                return Err(shape_err(format!("Δ̄ must be {m}×{m}, got {:?}", d.shape(), m = n.saturating_sub(k))));
            }
            ensure_psd(d, "Δ̄", tol)?;
        }
        Ok(CovarianceModel::Rao { x, gamma_bar, delta_bar })
    }

    pub fn sur(x1: DMatrix<f64>, x2: DMatrix<f64>, sigma12: Option<f64>) -> Result<Self> {
        if x1.nrows() != x2.nrows() {
            return Err(shape_err(format!(
                "both equations need the same sample size, got {} and {}",
                x1.nrows(),
                x2.nrows()
            )));
        }
        if let Some(s) = sigma12 {
            validate_sigma12(s)?;
        }
        Ok(CovarianceModel::Sur { x1, x2, sigma12 })
    }

    pub fn sar1(w: DMatrix<f64>, rho: Option<f64>, tol: &Tolerances) -> Result<Self> {
        validate_weights(&w, tol)?;
        if let Some(r) = rho {
            validate_rho(r)?;
        }
        Ok(CovarianceModel::Sar1 { w, rho })
    }

    pub fn sma1(w: DMatrix<f64>, rho: Option<f64>, tol: &Tolerances) -> Result<Self> {
        validate_weights(&w, tol)?;
        if let Some(r) = rho {
            validate_rho(r)?;
        }
        Ok(CovarianceModel::Sma1 { w, rho })
    }

    pub fn serial(a: DMatrix<f64>, theta: Option<f64>, tol: &Tolerances) -> Result<Self> {
        ensure_symmetric(&a, "A", tol)?;
        let model = CovarianceModel::Serial { a, theta };
        if theta.is_some() {
            build_omega(&model, tol)?;
        }
        Ok(model)
    }

    /// Dimension of `Ω`.
    pub fn dim(&self) -> usize {
        match self {
            CovarianceModel::Explicit { omega } => omega.nrows(),
            CovarianceModel::Rao { x, .. } => x.nrows(),
            CovarianceModel::Sur { x1, .. } => 2 * x1.nrows(),
            CovarianceModel::Sar1 { w, .. } | CovarianceModel::Sma1 { w, .. } => w.nrows(),
            CovarianceModel::Serial { a, .. } => a.nrows(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CovarianceModel::Explicit { .. } => "explicit",
            CovarianceModel::Rao { .. } => "rao",
            CovarianceModel::Sur { .. } => "sur",
            CovarianceModel::Sar1 { .. } => "sar1",
            CovarianceModel::Sma1 { .. } => "sma1",
            CovarianceModel::Serial { .. } => "serial",
        }
    }

    /// The parameter a two-step procedure would have to estimate, if any.
    pub fn unknown(&self) -> Option<Unknown> {
        match self {
            CovarianceModel::Explicit { .. } => None,
            CovarianceModel::Rao { delta_bar, .. } => delta_bar.is_none().then_some(Unknown::DeltaBar),
            CovarianceModel::Sur { sigma12, .. } => sigma12.is_none().then_some(Unknown::Sigma12),
            CovarianceModel::Sar1 { rho, .. } | CovarianceModel::Sma1 { rho, .. } => {
                rho.is_none().then_some(Unknown::Rho)
            }
            CovarianceModel::Serial { theta, .. } => theta.is_none().then_some(Unknown::Theta),
        }
    }

    /// The model's natural unknown parameter, forgotten.
    pub fn forget_parameter(&self) -> Self {
        let mut m = self.clone();
        match &mut m {
            CovarianceModel::Explicit { .. } => {}
            CovarianceModel::Rao { delta_bar, .. } => *delta_bar = None,
            CovarianceModel::Sur { sigma12, .. } => *sigma12 = None,
            CovarianceModel::Sar1 { rho, .. } | CovarianceModel::Sma1 { rho, .. } => *rho = None,
            CovarianceModel::Serial { theta, .. } => *theta = None,
        }
        m
    }

    /// Sets the scalar parameter (ρ, θ or σ₁₂) of the model.
    pub fn with_scalar(&self, value: f64) -> Result<Self> {
        let mut m = self.clone();
        match &mut m {
            CovarianceModel::Sur { sigma12, .. } => {
                validate_sigma12(value)?;
                *sigma12 = Some(value);
            }
            CovarianceModel::Sar1 { rho, .. } | CovarianceModel::Sma1 { rho, .. } => {
                validate_rho(value)?;
                *rho = Some(value);
            }
            CovarianceModel::Serial { theta, .. } => *theta = Some(value),
            other => {
                return Err(Error::InvalidInput(format!("{} has no scalar parameter", other.name())));
            }
        }
        Ok(m)
    }

    pub fn with_delta_bar(&self, delta: DMatrix<f64>, tol: &Tolerances) -> Result<Self> {
        match self {
            CovarianceModel::Rao { x, gamma_bar, .. } => {
                CovarianceModel::rao(x.clone(), gamma_bar.clone(), Some(delta), tol)
            }
            other => Err(Error::InvalidInput(format!("{} has no Δ̄ parameter", other.name()))),
        }
    }

    /// The scalar parameter currently set, if the model has one.
    pub fn scalar(&self) -> Option<f64> {
        match self {
            CovarianceModel::Sur { sigma12, .. } => *sigma12,
            CovarianceModel::Sar1 { rho, .. } | CovarianceModel::Sma1 { rho, .. } => *rho,
            CovarianceModel::Serial { theta, .. } => *theta,
            _ => None,
        }
    }
}

fn missing(what: &str) -> Error {
    Error::ModelDomain(format!("parameter {what} is unknown; supply a value to build Ω"))
}

/// Materializes `Ω` for a model whose parameters are all known.
pub fn build_omega(model: &CovarianceModel, tol: &Tolerances) -> Result<DMatrix<f64>> {
    let mut omega = match model {
        CovarianceModel::Explicit { omega } => omega.clone(),
        CovarianceModel::Rao { x, gamma_bar, delta_bar } => {
            let delta_bar = delta_bar.as_ref().ok_or_else(|| missing("Δ̄"))?;
            let n = x.nrows();
            let z = linalg::null_space_basis(x, tol)?;
            DMatrix::identity(n, n) + x * gamma_bar * x.transpose() + &z * delta_bar * z.transpose()
        }
        CovarianceModel::Sur { x1, sigma12, .. } => {
            let s = sigma12.ok_or_else(|| missing("σ₁₂"))?;
            validate_sigma12(s)?;
            let m = x1.nrows();
            let i = DMatrix::<f64>::identity(m, m);
            let mut omega = block_diag(&i, &i);
            for j in 0..m {
                omega[(j, m + j)] = s;
                omega[(m + j, j)] = s;
            }
            omega
        }
        CovarianceModel::Sar1 { w, rho } => {
            let r = rho.ok_or_else(|| missing("ρ"))?;
            validate_rho(r)?;
            let n = w.nrows();
            let a = DMatrix::<f64>::identity(n, n) - w * r;
            let a_inv = a
                .lu()
                .solve(&DMatrix::identity(n, n))
                .ok_or_else(|| Error::Singular(format!("I − ρW is singular at ρ = {r}")))?;
            &a_inv * a_inv.transpose()
        }
        CovarianceModel::Sma1 { w, rho } => {
            let r = rho.ok_or_else(|| missing("ρ"))?;
            validate_rho(r)?;
            let n = w.nrows();
            let b = DMatrix::<f64>::identity(n, n) + w * r;
            &b * b.transpose()
        }
        CovarianceModel::Serial { a, theta } => {
            let t = theta.ok_or_else(|| missing("θ"))?;
            let n = a.nrows();
            let prec = DMatrix::<f64>::identity(n, n) + a * t;
            let chol = linalg::cholesky(&prec, "I + θA").map_err(|_| {
                Error::ModelDomain(format!("I + θA is not positive definite at θ = {t}"))
            })?;
            chol.solve(&DMatrix::identity(n, n))
        }
    };
    linalg::symmetrize(&mut omega);
    Ok(omega)
}

/// Standard choices of `A` for `Ω⁻¹ = I + θA`. These are implementation
/// presets: intra-class `𝟏𝟏ᵀ − I`, the path adjacency (first-order
/// serial neighbours) and the cycle adjacency (circular neighbours).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SerialPreset {
    IntraClass,
    Ar1,
    Circular,
}

impl SerialPreset {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "intraclass" | "intra-class" => Some(SerialPreset::IntraClass),
            "ar1" => Some(SerialPreset::Ar1),
            "circular" => Some(SerialPreset::Circular),
            _ => None,
        }
    }

    pub fn matrix(self, n: usize) -> DMatrix<f64> {
        match self {
            SerialPreset::IntraClass => DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 }),
            SerialPreset::Ar1 => {
                DMatrix::from_fn(n, n, |i, j| if i.abs_diff(j) == 1 { 1.0 } else { 0.0 })
            }
            SerialPreset::Circular => DMatrix::from_fn(n, n, |i, j| {
                let d = i.abs_diff(j);
                if n > 2 && (d == 1 || d == n - 1) || n == 2 && d == 1 { 1.0 } else { 0.0 }
            }),
        }
    }
}

/// Open interval of `θ` for which `I + θA` is positive definite. Infinite
/// ends are returned as `±∞`.
pub fn theta_interval(a: &DMatrix<f64>, tol: &Tolerances) -> Result<(f64, f64)> {
    ensure_symmetric(a, "A", tol)?;
    if max_abs(a) == 0.0 {
        return Err(Error::ModelDomain("A = 0 leaves θ unidentifiable".into()));
    }
    let eig = nalgebra::SymmetricEigen::new(a.clone());
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    let lo = if lmax > 0.0 { -1.0 / lmax } else { f64::NEG_INFINITY };
    let hi = if lmin < 0.0 { -1.0 / lmin } else { f64::INFINITY };
    if lo >= hi {
        return Err(Error::ModelDomain("no θ makes I + θA positive definite".into()));
    }
    Ok((lo, hi))
}

/// Verdict of a parameter-free condition.
#[derive(Debug, Clone)]
pub struct ConditionVerdict {
    pub holds: bool,
    pub residuals: Vec<(String, f64)>,
    /// The verdict did not use any unknown parameter.
    pub parameter_free: bool,
    /// A `false` verdict only means "not established".
    pub sufficient_only: bool,
}

impl ConditionVerdict {
    pub fn residual(&self, name: &str) -> Option<f64> {
        self.residuals.iter().find(|(n, _)| n == name).map(|(_, r)| *r)
    }
}

fn check_design_penalty(x: &DMatrix<f64>, k_mat: &DMatrix<f64>) -> Result<()> {
    let k = x.ncols();
    if k_mat.shape() != (k, k) {
        return Err(shape_err(format!("K must be {k}×{k}, got {:?}", k_mat.shape())));
    }
    Ok(())
}

fn check_weight_shape(w: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<()> {
    let n = x.nrows();
    if w.shape() != (n, n) {
        return Err(shape_err(format!("W must be {n}×{n}, got {:?}", w.shape())));
    }
    if max_abs(w) == 0.0 {
        return Err(Error::InvalidInput("W must be nonzero".into()));
    }
    Ok(())
}

fn zero_padded(top: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    vstack(top, &DMatrix::zeros(k, top.ncols()))
}

/// `𝒞([M; 0]) ⊆ 𝒞([X; K])` for each named `M`.
fn inclusions(
    blocks: &[(&str, DMatrix<f64>)],
    x: &DMatrix<f64>,
    k_mat: &DMatrix<f64>,
    tol: &Tolerances,
) -> Result<(bool, Vec<(String, f64)>)> {
    let target = vstack(x, k_mat);
    let mut holds = true;
    let mut residuals = Vec::with_capacity(blocks.len());
    for (name, m) in blocks {
        let t = linalg::col_space_subset(&zero_padded(m, x.ncols()), &target, tol)?;
        holds &= t.holds;
        residuals.push((name.to_string(), t.residual));
    }
    Ok((holds, residuals))
}

/// Mixed-effects criterion `XᵀXΓ̄K = 0`; exact for every unknown `Δ̄`.
pub fn mixed_effects_check(
    x: &DMatrix<f64>,
    gamma_bar: &DMatrix<f64>,
    k_mat: &DMatrix<f64>,
    tol: &Tolerances,
) -> Result<ConditionVerdict> {
    check_design_penalty(x, k_mat)?;
    let k = x.ncols();
    if gamma_bar.shape() != (k, k) {
        return Err(shape_err(format!("Γ̄ must be {k}×{k}, got {:?}", gamma_bar.shape())));
    }
    ensure_psd(gamma_bar, "Γ̄", tol)?;
    let xtx = x.transpose() * x;
    let prod = &xtx * gamma_bar * k_mat;
    let r = scaled(max_abs(&prod), xtx.norm() * gamma_bar.norm() * k_mat.norm());
    Ok(ConditionVerdict {
        holds: r <= tol.residual_atol,
        residuals: vec![("xtx_gammabar_k".into(), r)],
        parameter_free: true,
        sufficient_only: false,
    })
}

/// Two-equation SUR criterion `X₁ᵀZ₂ = 0`, `X₂ᵀZ₁ = 0`, `X₁ᵀX₂ = 0`.
///
/// Sufficient only. Note that the first two products force
/// `𝒞(X₁) = 𝒞(X₂)`, after which the third can only vanish for zero
/// designs; on full-rank inputs this checker therefore never reports
/// `holds`.
pub fn sur_check(
    x1: &DMatrix<f64>,
    x2: &DMatrix<f64>,
    z1: &DMatrix<f64>,
    z2: &DMatrix<f64>,
    tol: &Tolerances,
) -> Result<ConditionVerdict> {
    let m = x1.nrows();
    for (i, (x, z)) in [(x1, z1), (x2, z2)].into_iter().enumerate() {
        let k = x.ncols();
        if x.nrows() != m || z.nrows() != m {
            return Err(shape_err("all blocks need the same row count"));
        }
        if m <= k || z.ncols() != m - k {
            return Err(shape_err(format!("Z{} must be {m}×{}", i + 1, m.saturating_sub(k))));
        }
        let ortho = scaled(max_abs(&(x.transpose() * z)), x.norm() * z.norm());
        if ortho > tol.residual_atol {
            return Err(Error::InvalidInput(format!("X{0}ᵀZ{0} ≠ 0", i + 1)));
        }
        let rank = linalg::numerical_rank(z, tol)?;
        if rank != m - k {
            return Err(Error::RankDeficient { expected: m - k, found: rank });
        }
    }
    let prod = |a: &DMatrix<f64>, b: &DMatrix<f64>| scaled(max_abs(&(a.transpose() * b)), a.norm() * b.norm());
    let residuals = vec![
        ("x1t_z2".to_string(), prod(x1, z2)),
        ("x2t_z1".to_string(), prod(x2, z1)),
        ("x1t_x2".to_string(), prod(x1, x2)),
    ];
    Ok(ConditionVerdict {
        holds: residuals.iter().all(|(_, r)| *r <= tol.residual_atol),
        residuals,
        parameter_free: true,
        sufficient_only: true,
    })
}

/// [`sur_check`] with the canonical null-space bases.
pub fn sur_check_auto(x1: &DMatrix<f64>, x2: &DMatrix<f64>, tol: &Tolerances) -> Result<ConditionVerdict> {
    let z1 = linalg::null_space_basis(x1, tol)?;
    let z2 = linalg::null_space_basis(x2, tol)?;
    sur_check(x1, x2, &z1, &z2, tol)
}

/// Spatial criterion: `𝒞([WX; 0]) ⊆ 𝒞([X; K])` and `𝒞([WᵀX; 0]) ⊆ 𝒞([X; K])`.
/// Sufficient for both the SAR and SMA forms at any `ρ ≠ 0`.
pub fn spatial_lag_check(w: &DMatrix<f64>, x: &DMatrix<f64>, k_mat: &DMatrix<f64>, tol: &Tolerances) -> Result<ConditionVerdict> {
    check_design_penalty(x, k_mat)?;
    check_weight_shape(w, x)?;
    let (holds, residuals) = inclusions(&[("wx", w * x), ("wtx", w.transpose() * x)], x, k_mat, tol)?;
    Ok(ConditionVerdict { holds, residuals, parameter_free: true, sufficient_only: true })
}

/// Necessary and sufficient for coincidence at every `ρ` with `0 < |ρ| < 1`
/// under the SMA form: `(W + Wᵀ)X` and `WWᵀX` both lie in `𝒞([X; K])`
/// padded with zeros. The SAR variant uses `WᵀWX` in place of `WWᵀX`.
pub fn spatial_all_rho_check(
    w: &DMatrix<f64>,
    x: &DMatrix<f64>,
    k_mat: &DMatrix<f64>,
    variant: SpatialVariant,
    tol: &Tolerances,
) -> Result<ConditionVerdict> {
    check_design_penalty(x, k_mat)?;
    check_weight_shape(w, x)?;
    let sym = (w + w.transpose()) * x;
    let second = match variant {
        SpatialVariant::Sma => ("wwt_x", w * (w.transpose() * x)),
        SpatialVariant::Sar => ("wtw_x", w.transpose() * (w * x)),
    };
    let (holds, residuals) = inclusions(&[("sym_x", sym), second], x, k_mat, tol)?;
    Ok(ConditionVerdict {
        holds,
        residuals,
        parameter_free: true,
        sufficient_only: variant == SpatialVariant::Sar,
    })
}

/// Algebraic restatement of [`spatial_all_rho_check`] (SMA form) as four
/// vanishing products.
pub fn spatial_all_rho_products_check(
    w: &DMatrix<f64>,
    x: &DMatrix<f64>,
    k_mat: &DMatrix<f64>,
    tol: &Tolerances,
) -> Result<ConditionVerdict> {
    check_design_penalty(x, k_mat)?;
    check_weight_shape(w, x)?;
    let z = linalg::null_space_basis(x, tol)?;
    let xtx = linalg::cholesky(&(x.transpose() * x), "XᵀX")?;
    let x_pinv = xtx.solve(&x.transpose());

    let s = w + w.transpose();
    let wwt = w * w.transpose();
    let sym_x = &s * x;
    let wwt_x = &wwt * x;

    let k_norm = k_mat.norm();
    let kp_norm = k_norm * x_pinv.norm();
    let xn = x.norm();
    let zn = z.norm();
    let residuals = vec![
        ("k_pinv_sym_x".to_string(), scaled(max_abs(&(k_mat * &x_pinv * &sym_x)), kp_norm * s.norm() * xn)),
        ("k_pinv_wwt_x".to_string(), scaled(max_abs(&(k_mat * &x_pinv * &wwt_x)), kp_norm * wwt.norm() * xn)),
        ("zt_sym_x".to_string(), scaled(max_abs(&(z.transpose() * &sym_x)), zn * s.norm() * xn)),
        ("zt_wwt_x".to_string(), scaled(max_abs(&(z.transpose() * &wwt_x)), zn * wwt.norm() * xn)),
    ];
    Ok(ConditionVerdict {
        holds: residuals.iter().all(|(_, r)| *r <= tol.residual_atol),
        residuals,
        parameter_free: true,
        sufficient_only: false,
    })
}

/// `𝒞([(W + Wᵀ + ρWWᵀ)X; 0]) ⊆ 𝒞([X; K])`, which is equivalent to
/// coincidence under the SMA form at this particular `ρ`.
pub fn spatial_fixed_rho_check(
    w: &DMatrix<f64>,
    x: &DMatrix<f64>,
    k_mat: &DMatrix<f64>,
    rho: f64,
    tol: &Tolerances,
) -> Result<ConditionVerdict> {
    if rho == 0.0 || !rho.is_finite() {
        return Err(Error::InvalidInput(format!("ρ must be finite and nonzero, got {rho}")));
    }
    check_design_penalty(x, k_mat)?;
    check_weight_shape(w, x)?;
    let m = (w + w.transpose() + w * w.transpose() * rho) * x;
    let (holds, residuals) = inclusions(&[("fixed_rho_x", m)], x, k_mat, tol)?;
    Ok(ConditionVerdict { holds, residuals, parameter_free: false, sufficient_only: false })
}

fn in_parameter_set(rho: f64) -> bool {
    rho != 0.0 && rho.abs() < 1.0
}

/// Coincidence at two distinct `ρ` values; by the SMA equivalence chain a
/// pass certifies coincidence at every admissible `ρ`.
pub fn spatial_two_point_check(
    w: &DMatrix<f64>,
    x: &DMatrix<f64>,
    k_mat: &DMatrix<f64>,
    rho1: f64,
    rho2: f64,
    tol: &Tolerances,
) -> Result<ConditionVerdict> {
    if rho1 == rho2 {
        return Err(Error::InvalidInput("the two ρ values must differ".into()));
    }
    if !in_parameter_set(rho1) || !in_parameter_set(rho2) {
        return Err(Error::InvalidInput(format!("ρ values must satisfy 0 < |ρ| < 1, got {rho1} and {rho2}")));
    }
    let a = spatial_fixed_rho_check(w, x, k_mat, rho1, tol)?;
    let b = spatial_fixed_rho_check(w, x, k_mat, rho2, tol)?;
    Ok(ConditionVerdict {
        holds: a.holds && b.holds,
        residuals: vec![("rho1".into(), a.residuals[0].1), ("rho2".into(), b.residuals[0].1)],
        parameter_free: false,
        sufficient_only: false,
    })
}

/// Serial-correlation criterion `𝒞([AX; 0]) ⊆ 𝒞([X; K])`, sufficient for
/// every admissible `θ`.
pub fn serial_check(a: &DMatrix<f64>, x: &DMatrix<f64>, k_mat: &DMatrix<f64>, tol: &Tolerances) -> Result<ConditionVerdict> {
    check_design_penalty(x, k_mat)?;
    let n = x.nrows();
    if a.shape() != (n, n) {
        return Err(shape_err(format!("A must be {n}×{n}, got {:?}", a.shape())));
    }
    ensure_symmetric(a, "A", tol)?;
    let (holds, residuals) = inclusions(&[("ax", a * x)], x, k_mat, tol)?;
    Ok(ConditionVerdict { holds, residuals, parameter_free: true, sufficient_only: true })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ridge::estimators_coincide;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    fn design() -> DMatrix<f64> {
        DMatrix::from_row_slice(5, 2, &[1.0, 0.3, 1.0, -0.2, 1.0, 1.4, 1.0, 0.8, 1.0, -1.1])
    }

    fn edge_fixture() -> (DMatrix<f64>, DMatrix<f64>) {
        // W = e₁e₂ᵀ and X spanning {e₃, e₄} in ℝ⁵.
        let mut w = DMatrix::zeros(5, 5);
        w[(0, 1)] = 1.0;
        let mut x = DMatrix::zeros(5, 2);
        x[(2, 0)] = 1.0;
        x[(3, 1)] = 1.0;
        (w, x)
    }

    #[test]
    fn sma_at_zero_is_identity() {
        let (w, _) = edge_fixture();
        let m = CovarianceModel::Sma1 { w, rho: Some(0.0) };
        assert_eq!(build_omega(&m, &tol()).unwrap(), DMatrix::identity(5, 5));
    }

    #[test]
    fn rao_with_zero_effects_is_identity() {
        let x = design();
        let m = CovarianceModel::rao(x, DMatrix::zeros(2, 2), Some(DMatrix::zeros(3, 3)), &tol()).unwrap();
        assert!(max_abs(&(build_omega(&m, &tol()).unwrap() - DMatrix::<f64>::identity(5, 5))) < 1e-15);
    }

    #[test]
    fn sur_kronecker_structure() {
        let x = DMatrix::from_element(3, 1, 1.0);
        let m = CovarianceModel::sur(x.clone(), x, Some(0.4)).unwrap();
        let o = build_omega(&m, &tol()).unwrap();
        assert_eq!(o.shape(), (6, 6));
        assert_eq!(o[(0, 3)], 0.4);
        assert_eq!(o[(2, 5)], 0.4);
        assert_eq!(o[(0, 4)], 0.0);
        assert_eq!(o[(4, 4)], 1.0);
    }

    #[test]
    fn sur_scaling_helper() {
        let s = sur_normalize(4.0, 1.0, 1.0).unwrap();
        assert_eq!(s.sigma12, 0.5);
        assert_eq!((s.scale1, s.scale2), (2.0, 1.0));
        assert!(sur_normalize(1.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn parameter_domains() {
        let (w, _) = edge_fixture();
        assert!(matches!(CovarianceModel::sma1(w.clone(), Some(1.0), &tol()), Err(Error::ModelDomain(_))));
        let m = CovarianceModel::sar1(w, None, &tol()).unwrap();
        assert!(matches!(build_omega(&m, &tol()), Err(Error::ModelDomain(_))));
        let a = SerialPreset::IntraClass.matrix(4);
        // admissible θ ∈ (−1/3, 1)
        assert!(CovarianceModel::serial(a.clone(), Some(0.5), &tol()).is_ok());
        assert!(matches!(CovarianceModel::serial(a, Some(-0.5), &tol()), Err(Error::ModelDomain(_))));
        let bad = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(matches!(CovarianceModel::serial(bad, None, &tol()), Err(Error::ModelDomain(_))));
    }

    #[test]
    fn theta_interval_for_intraclass() {
        let (lo, hi) = theta_interval(&SerialPreset::IntraClass.matrix(5), &tol()).unwrap();
        assert!((lo + 0.25).abs() < 1e-12);
        assert!((hi - 1.0).abs() < 1e-12);
        assert!(matches!(theta_interval(&DMatrix::zeros(3, 3), &tol()), Err(Error::ModelDomain(_))));
    }

    #[test]
    fn mixed_effects_cases() {
        let x = design();
        let k = DMatrix::<f64>::identity(2, 2);
        assert!(mixed_effects_check(&x, &DMatrix::zeros(2, 2), &k, &tol()).unwrap().holds);
        let g = (x.transpose() * &x).try_inverse().unwrap();
        assert!(mixed_effects_check(&x, &g, &DMatrix::zeros(2, 2), &tol()).unwrap().holds);
        let v = mixed_effects_check(&x, &g, &k, &tol()).unwrap();
        assert!(!v.holds);
    }

    #[test]
    fn sur_condition_is_never_met_by_full_rank_blocks() {
        let m = 6;
        let x1 = DMatrix::from_fn(m, 2, |i, j| if i == j { 1.0 } else { 0.0 });
        let x2 = DMatrix::from_fn(m, 2, |i, j| if i == j + 2 { 1.0 } else { 0.0 });
        let v = sur_check_auto(&x1, &x2, &tol()).unwrap();
        assert!(v.sufficient_only);
        assert!(v.residual("x1t_x2").unwrap() == 0.0);
        assert!(!v.holds);
        assert!(!sur_check_auto(&x1, &x1, &tol()).unwrap().holds);
    }

    #[test]
    fn spatial_lag_nullspace_and_k_zero_cases() {
        let (w, x) = edge_fixture();
        let k = DMatrix::<f64>::identity(2, 2);
        assert!(spatial_lag_check(&w, &x, &k, &tol()).unwrap().holds);

        // symmetric doubly-stochastic W on a 4-cycle keeps 𝟏 invariant
        let c = SerialPreset::Circular.matrix(4) * 0.5;
        let ones = DMatrix::from_element(4, 1, 1.0);
        assert!(spatial_lag_check(&c, &ones, &DMatrix::zeros(1, 1), &tol()).unwrap().holds);
        assert!(!spatial_lag_check(&c, &ones, &DMatrix::identity(1, 1), &tol()).unwrap().holds);
        assert!(matches!(spatial_lag_check(&DMatrix::zeros(4, 4), &ones, &DMatrix::zeros(1, 1), &tol()), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn all_rho_edge_fixture_and_product_form_agree() {
        let (w, x) = edge_fixture();
        let k = DMatrix::<f64>::identity(2, 2);
        for variant in [SpatialVariant::Sma, SpatialVariant::Sar] {
            assert!(spatial_all_rho_check(&w, &x, &k, variant, &tol()).unwrap().holds);
        }
        assert!(spatial_all_rho_products_check(&w, &x, &k, &tol()).unwrap().holds);
        let v = spatial_all_rho_products_check(&w, &x, &DMatrix::zeros(2, 2), &tol()).unwrap();
        assert_eq!(v.residual("k_pinv_sym_x"), Some(0.0));
        assert!(v.holds);
    }

    #[test]
    fn symmetric_w_with_wx_zero() {
        // W symmetric on the pair {1,2}, X supported on {3,4,5}
        let mut w = DMatrix::zeros(5, 5);
        w[(0, 1)] = 1.0;
        w[(1, 0)] = 1.0;
        let x = DMatrix::from_fn(5, 2, |i, j| if i == j + 2 || i == 4 { 1.0 } else { 0.0 });
        let k = DMatrix::<f64>::identity(2, 2) * 0.3;
        assert!(spatial_all_rho_check(&w, &x, &k, SpatialVariant::Sma, &tol()).unwrap().holds);
        assert!(spatial_all_rho_check(&w, &x, &k, SpatialVariant::Sar, &tol()).unwrap().holds);
    }

    #[test]
    fn fixed_rho_and_two_point_inputs() {
        let (w, x) = edge_fixture();
        let k = DMatrix::<f64>::identity(2, 2);
        assert!(spatial_fixed_rho_check(&w, &x, &k, 0.3, &tol()).unwrap().holds);
        assert!(matches!(spatial_fixed_rho_check(&w, &x, &k, 0.0, &tol()), Err(Error::InvalidInput(_))));
        assert!(matches!(spatial_two_point_check(&w, &x, &k, 0.2, 0.2, &tol()), Err(Error::InvalidInput(_))));
        assert!(spatial_two_point_check(&w, &x, &k, 0.2, -0.7, &tol()).unwrap().holds);
    }

    #[test]
    fn serial_intraclass_with_ones() {
        let n = 6;
        let a = SerialPreset::IntraClass.matrix(n);
        let ones = DMatrix::from_element(n, 1, 1.0);
        let v = serial_check(&a, &ones, &DMatrix::zeros(1, 1), &tol()).unwrap();
        assert!(v.holds);
        let m = CovarianceModel::serial(a, Some(0.5), &tol()).unwrap();
        let omega = build_omega(&m, &tol()).unwrap();
        assert!(estimators_coincide(&ones, &omega, &DMatrix::zeros(1, 1), &tol()).unwrap().equal);
    }

    #[test]
    fn serial_identity_a() {
        let x = design();
        let a = DMatrix::<f64>::identity(5, 5);
        assert!(serial_check(&a, &x, &DMatrix::zeros(2, 2), &tol()).unwrap().holds);
        assert!(!serial_check(&a, &x, &DMatrix::identity(2, 2), &tol()).unwrap().holds);
        let asym = DMatrix::from_fn(5, 5, |i, j| if j == i + 1 { 1.0 } else { 0.0 });
        assert!(matches!(serial_check(&asym, &x, &DMatrix::zeros(2, 2), &tol()), Err(Error::ModelDomain(_))));
    }

    #[test]
    fn serial_presets_are_symmetric() {
        for p in [SerialPreset::IntraClass, SerialPreset::Ar1, SerialPreset::Circular] {
            let a = p.matrix(5);
            assert_eq!(a, a.transpose());
        }
        assert_eq!(SerialPreset::Circular.matrix(5).row(0).sum(), 2.0);
        assert_eq!(SerialPreset::Ar1.matrix(5).row(0).sum(), 1.0);
    }
}
