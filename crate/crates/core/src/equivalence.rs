//! Algebraic criteria for `β̂(Ω, K) = β̂(I, K)` for every `y`.
//!
//! Two characterizations are implemented and can be compared against the
//! hat-operator oracle in [`crate::ridge::estimators_coincide`]:
//!
//! * the decomposition route: write
//!   `Ω = XΓXᵀ + ZΔZᵀ + XΞZᵀ + ZΞᵀXᵀ` and require `Ξ = 0` together with
//!   `XᵀXΓK = K`;
//! * the column-space route: `𝒞([ΩX; K]) = 𝒞([X; K])`, certified by a
//!   nonsingular `G` with `ΩX = XG` and `K = KG`.

use std::fmt;

use nalgebra::DMatrix;

use crate::error::{shape_err, Error, Result};
use crate::linalg::{self, max_abs, scaled, vstack, Tolerances};
use crate::ridge::{self, Coincidence};

/// Components of `Ω` in the `(X, Z)` coordinates.
#[derive(Debug, Clone)]
pub struct OmegaDecomposition {
    pub gamma: DMatrix<f64>,
    pub delta: DMatrix<f64>,
    pub xi: DMatrix<f64>,
    pub z_used: DMatrix<f64>,
}

impl OmegaDecomposition {
    /// `XΓXᵀ + ZΔZᵀ + XΞZᵀ + ZΞᵀXᵀ`.
    pub fn recompose(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let z = &self.z_used;
        let cross = x * &self.xi * z.transpose();
        x * &self.gamma * x.transpose() + z * &self.delta * z.transpose() + &cross + cross.transpose()
    }
}

/// Decomposes `Ω` using the canonical orthonormal null-space basis of `X`.
pub fn decompose_omega(omega: &DMatrix<f64>, x: &DMatrix<f64>, tol: &Tolerances) -> Result<OmegaDecomposition> {
    let z = linalg::null_space_basis(x, tol)?;
    decompose_omega_with_basis(omega, x, &z, tol)
}

/// Decomposes `Ω` in a caller-supplied basis `Z` (full rank, `XᵀZ = 0`).
pub fn decompose_omega_with_basis(
    omega: &DMatrix<f64>,
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    tol: &Tolerances,
) -> Result<OmegaDecomposition> {
    let (n, k) = x.shape();
    if omega.shape() != (n, n) {
        return Err(shape_err(format!("Ω must be {n}×{n}, got {:?}", omega.shape())));
    }
    if z.shape() != (n, n - k) {
        return Err(shape_err(format!("Z must be {n}×{}, got {:?}", n - k, z.shape())));
    }
    let ortho = scaled(max_abs(&(x.transpose() * z)), max_abs(x) * max_abs(z) * n as f64);
    if ortho > tol.residual_atol {
        return Err(Error::InvalidInput(format!("XᵀZ ≠ 0 (scaled residual {ortho:.3e})")));
    }
    let xtx = linalg::cholesky(&(x.transpose() * x), "XᵀX")?;
    let ztz = linalg::cholesky(&(z.transpose() * z), "ZᵀZ")?;

    // (XᵀX)⁻¹ Xᵀ  and  (ZᵀZ)⁻¹ Zᵀ
    let x_pinv = xtx.solve(&x.transpose());
    let z_pinv = ztz.solve(&z.transpose());

    let mut gamma = &x_pinv * omega * x_pinv.transpose();
    let mut delta = &z_pinv * omega * z_pinv.transpose();
    linalg::symmetrize(&mut gamma);
    linalg::symmetrize(&mut delta);
    let xi = &x_pinv * omega * z_pinv.transpose();
    Ok(OmegaDecomposition { gamma, delta, xi, z_used: z.clone() })
}

/// Which rule produced a verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    Decomposition,
    ColumnSpace,
    PdShortcut,
    Oracle,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::Decomposition => "decomposition",
            Rule::ColumnSpace => "column_space",
            Rule::PdShortcut => "pd_shortcut",
            Rule::Oracle => "oracle",
        })
    }
}

#[derive(Debug, Clone)]
pub enum Certificate {
    Residual(f64),
    SingularValue(f64),
    Matrix(DMatrix<f64>),
}

#[derive(Debug, Clone)]
pub struct EquivalenceVerdict {
    pub equal: bool,
    pub fired_condition: Rule,
    pub certificates: Vec<(String, Certificate)>,
}

impl EquivalenceVerdict {
    pub fn residual(&self, name: &str) -> Option<f64> {
        self.certificates.iter().find_map(|(n, c)| match c {
            Certificate::Residual(r) if n == name => Some(*r),
            _ => None,
        })
    }

    pub fn witness(&self) -> Option<&DMatrix<f64>> {
        self.certificates.iter().find_map(|(n, c)| match c {
            Certificate::Matrix(m) if n == "witness_g" => Some(m),
            _ => None,
        })
    }

    /// All residual certificates as `(name, value)` pairs.
    pub fn residuals(&self) -> impl Iterator<Item = (&str, f64)> {
        self.certificates.iter().filter_map(|(n, c)| match c {
            Certificate::Residual(r) => Some((n.as_str(), *r)),
            _ => None,
        })
    }

    /// The residual the verdict hinges on (the largest one tested).
    pub fn deciding_residual(&self) -> f64 {
        self.residuals().map(|(_, r)| r).fold(0.0, f64::max)
    }
}

fn check_inputs(omega: &DMatrix<f64>, x: &DMatrix<f64>, k_mat: &DMatrix<f64>, tol: &Tolerances) -> Result<()> {
    let (n, k) = x.shape();
    if omega.shape() != (n, n) {
        return Err(shape_err(format!("Ω must be {n}×{n}, got {:?}", omega.shape())));
    }
    if k_mat.shape() != (k, k) {
        return Err(shape_err(format!("K must be {k}×{k}, got {:?}", k_mat.shape())));
    }
    let rank = linalg::numerical_rank(x, tol)?;
    if rank < k {
        return Err(Error::RankDeficient { expected: k, found: rank });
    }
    Ok(())
}

/// Decomposition criterion: `XᵀΩZ = 0` and `XᵀXΓK = K`.
pub fn decomposition_check(
    omega: &DMatrix<f64>,
    x: &DMatrix<f64>,
    k_mat: &DMatrix<f64>,
    tol: &Tolerances,
) -> Result<EquivalenceVerdict> {
    let z = linalg::null_space_basis(x, tol)?;
    decomposition_check_with_basis(omega, x, k_mat, &z, tol)
}

pub fn decomposition_check_with_basis(
    omega: &DMatrix<f64>,
    x: &DMatrix<f64>,
    k_mat: &DMatrix<f64>,
    z: &DMatrix<f64>,
    tol: &Tolerances,
) -> Result<EquivalenceVerdict> {
    check_inputs(omega, x, k_mat, tol)?;
    let dec = decompose_omega_with_basis(omega, x, z, tol)?;

    let cross = x.transpose() * omega * z;
    let xi_res = scaled(max_abs(&cross), x.norm() * omega.norm() * z.norm());

    let cond4 = x.transpose() * x * &dec.gamma * k_mat - k_mat;
    let cond4_res = scaled(max_abs(&cond4), max_abs(k_mat));

    let equal = xi_res <= tol.residual_atol && cond4_res <= tol.residual_atol;
    Ok(EquivalenceVerdict {
        equal,
        fired_condition: Rule::Decomposition,
        certificates: vec![
            ("xt_omega_z".into(), Certificate::Residual(xi_res)),
            ("xtx_gamma_k".into(), Certificate::Residual(cond4_res)),
        ],
    })
}

/// Column-space criterion `𝒞([ΩX; K]) = 𝒞([X; K])`.
pub fn column_space_check(
    omega: &DMatrix<f64>,
    x: &DMatrix<f64>,
    k_mat: &DMatrix<f64>,
    tol: &Tolerances,
) -> Result<EquivalenceVerdict> {
    check_inputs(omega, x, k_mat, tol)?;
    let omega_x = omega * x;
    let lhs = vstack(&omega_x, k_mat);
    let rhs = vstack(x, k_mat);
    let eq = linalg::col_space_equal(&lhs, &rhs, tol)?;

    let mut certificates = vec![
        ("forward".to_string(), Certificate::Residual(eq.forward.residual)),
        ("backward".to_string(), Certificate::Residual(eq.backward.residual)),
    ];
    if let (Some(g), Some(smin)) = (&eq.witness, eq.witness_min_singular) {
        let scale = max_abs(&lhs).max(max_abs(&rhs));
        let ox = scaled(max_abs(&(&omega_x - x * g)), scale);
        let kg = scaled(max_abs(&(k_mat - k_mat * g)), scale);
        certificates.push(("witness_g".into(), Certificate::Matrix(g.clone())));
        certificates.push(("witness_min_singular".into(), Certificate::SingularValue(smin)));
        certificates.push(("omega_x_minus_xg".into(), Certificate::Residual(ox)));
        certificates.push(("k_minus_kg".into(), Certificate::Residual(kg)));
    }
    Ok(EquivalenceVerdict { equal: eq.holds, fired_condition: Rule::ColumnSpace, certificates })
}

/// `ΩX = X`, which is the whole criterion when `K` is positive definite.
pub fn pd_shortcut_check(omega: &DMatrix<f64>, x: &DMatrix<f64>, tol: &Tolerances) -> Result<EquivalenceVerdict> {
    let n = x.nrows();
    if omega.shape() != (n, n) {
        return Err(shape_err(format!("Ω must be {n}×{n}, got {:?}", omega.shape())));
    }
    let res = scaled(max_abs(&(omega * x - x)), max_abs(x));
    Ok(EquivalenceVerdict {
        equal: res <= tol.residual_atol,
        fired_condition: Rule::PdShortcut,
        certificates: vec![("omega_x_minus_x".into(), Certificate::Residual(res))],
    })
}

pub fn oracle_check(
    omega: &DMatrix<f64>,
    x: &DMatrix<f64>,
    k_mat: &DMatrix<f64>,
    tol: &Tolerances,
) -> Result<EquivalenceVerdict> {
    let c = ridge::estimators_coincide(x, omega, k_mat, tol)?;
    Ok(EquivalenceVerdict {
        equal: c.equal,
        fired_condition: Rule::Oracle,
        certificates: vec![("hat_gap".into(), Certificate::Residual(c.residual))],
    })
}

/// Residuals within this factor of `residual_atol` are treated as too close
/// to call when verdicts disagree.
pub const HYSTERESIS_FACTOR: f64 = 100.0;

#[derive(Debug, Clone)]
pub struct CrossValidation {
    pub decomposition: EquivalenceVerdict,
    pub column_space: EquivalenceVerdict,
    pub oracle: Coincidence,
    pub agree: bool,
    /// Set when the verdicts disagree but some residual sits inside the
    /// hysteresis band, so the disagreement is attributed to the tolerance.
    pub diagnostic: Option<String>,
}

impl CrossValidation {
    pub fn equal(&self) -> bool {
        self.column_space.equal
    }
}

fn borderline(r: f64, tol: &Tolerances) -> bool {
    r > tol.residual_atol / HYSTERESIS_FACTOR && r <= tol.residual_atol * HYSTERESIS_FACTOR
}

/// Runs both criteria and the oracle and insists that they agree.
pub fn cross_validate(
    omega: &DMatrix<f64>,
    x: &DMatrix<f64>,
    k_mat: &DMatrix<f64>,
    tol: &Tolerances,
) -> Result<CrossValidation> {
    let decomposition = decomposition_check(omega, x, k_mat, tol)?;
    let column_space = column_space_check(omega, x, k_mat, tol)?;
    let oracle = ridge::estimators_coincide(x, omega, k_mat, tol)?;

    let agree = decomposition.equal == column_space.equal && column_space.equal == oracle.equal;
    let residuals = [
        decomposition.deciding_residual(),
        column_space.residual("forward").unwrap_or(0.0).max(column_space.residual("backward").unwrap_or(0.0)),
        oracle.residual,
    ];
    let mut diagnostic = None;
    if !agree {
        let summary = format!(
            "decomposition={} (r={:.3e}) column_space={} (r={:.3e}) oracle={} (r={:.3e})",
            decomposition.equal, residuals[0], column_space.equal, residuals[1], oracle.equal, residuals[2]
        );
        if residuals.iter().any(|&r| borderline(r, tol)) {
            diagnostic = Some(format!("tolerance-ambiguous: {summary}"));
        } else {
            return Err(Error::Inconsistency(summary));
        }
    }
    Ok(CrossValidation { decomposition, column_space, oracle, agree, diagnostic })
}
