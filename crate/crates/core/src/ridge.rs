//! General ridge estimators `β̂(Φ, K) = (XᵀΦ⁻¹X + K)⁻¹ XᵀΦ⁻¹ y` and the
//! exact coincidence oracle built on their hat operators.
//!
//! No inverse is ever formed explicitly: `Φ⁻¹X` comes from a Cholesky solve
//! and the bracket is factored again before the final solve.

use nalgebra::{DMatrix, DVector};

use crate::error::{shape_err, Error, Result};
use crate::linalg::{self, max_abs, scaled, Tolerances};

/// How the penalty matrix `K` is built.
#[derive(Debug, Clone, PartialEq)]
pub enum Penalty {
    Zero,
    /// `λ I_k`.
    OrdinaryRidge(f64),
    /// `δ XᵀΦ⁻¹X`.
    Shrinkage(f64),
    Custom(DMatrix<f64>),
}

impl Penalty {
    pub fn is_zero(&self) -> bool {
        matches!(self, Penalty::Zero)
    }
}

/// Builds the `k × k` penalty for the design `x`; `phi` is only consulted
/// for [`Penalty::Shrinkage`].
pub fn materialize_penalty(
    p: &Penalty,
    x: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    tol: &Tolerances,
) -> Result<DMatrix<f64>> {
    let k = x.ncols();
    match p {
        Penalty::Zero => Ok(DMatrix::zeros(k, k)),
        Penalty::OrdinaryRidge(lambda) => {
            if !(lambda.is_finite() && *lambda > 0.0) {
                return Err(Error::Penalty(format!("ridge λ must be positive, got {lambda}")));
            }
            Ok(DMatrix::identity(k, k) * *lambda)
        }
        Penalty::Shrinkage(delta) => {
            if !(delta.is_finite() && *delta > 0.0) {
                return Err(Error::Penalty(format!("shrinkage δ must be positive, got {delta}")));
            }
            if phi.shape() != (x.nrows(), x.nrows()) {
                return Err(shape_err(format!(
                    "Φ must be {n}×{n}, got {:?}",
                    phi.shape(),
                    n = x.nrows()
                )));
            }
            let chol = linalg::cholesky(phi, "Φ")?;
            let phi_inv_x = chol.solve(x);
            let mut k_mat = x.transpose() * phi_inv_x * *delta;
            linalg::symmetrize(&mut k_mat);
            Ok(k_mat)
        }
        Penalty::Custom(k_mat) => {
            validate_penalty_matrix(k_mat, k, tol)?;
            Ok(k_mat.clone())
        }
    }
}

pub fn validate_penalty_matrix(k_mat: &DMatrix<f64>, k: usize, tol: &Tolerances) -> Result<()> {
    if k_mat.shape() != (k, k) {
        return Err(Error::Penalty(format!("K must be {k}×{k}, got {:?}", k_mat.shape())));
    }
    match linalg::is_psd(k_mat, tol) {
        Ok(true) => Ok(()),
        Ok(false) => Err(Error::Penalty("K is not positive semidefinite".into())),
        Err(Error::Symmetry { asymmetry }) => {
            Err(Error::Penalty(format!("K is not symmetric (asymmetry {asymmetry:.3e})")))
        }
        Err(e) => Err(e),
    }
}

/// One model instance: design, optional response, and the error covariance.
#[derive(Debug, Clone)]
pub struct GlmInstance {
    pub x: DMatrix<f64>,
    pub y: Option<DVector<f64>>,
    /// Carried for completeness; it cancels in every point estimate.
    pub sigma2: Option<f64>,
    pub omega: DMatrix<f64>,
}

impl GlmInstance {
    pub fn new(
        x: DMatrix<f64>,
        y: Option<DVector<f64>>,
        omega: DMatrix<f64>,
        tol: &Tolerances,
    ) -> Result<Self> {
        let (n, k) = x.shape();
        let rank = linalg::numerical_rank(&x, tol)?;
        if rank != k {
            return Err(Error::RankDeficient { expected: k, found: rank });
        }
        if omega.shape() != (n, n) {
            return Err(shape_err(format!("Ω must be {n}×{n}, got {:?}", omega.shape())));
        }
        if !linalg::is_pd(&omega, tol)? {
            return Err(Error::NotPositiveDefinite("Ω".into()));
        }
        if let Some(y) = &y {
            if y.len() != n {
                return Err(shape_err(format!("y has length {}, expected {n}", y.len())));
            }
        }
        Ok(GlmInstance { x, y, sigma2: None, omega })
    }

    pub fn with_sigma2(mut self, sigma2: f64) -> Self {
        self.sigma2 = Some(sigma2);
        self
    }
}

fn check_hat_shapes(x: &DMatrix<f64>, phi: &DMatrix<f64>, k_mat: &DMatrix<f64>) -> Result<()> {
    let (n, k) = x.shape();
    if phi.shape() != (n, n) {
        return Err(shape_err(format!("Φ must be {n}×{n}, got {:?}", phi.shape())));
    }
    if k_mat.shape() != (k, k) {
        return Err(shape_err(format!("K must be {k}×{k}, got {:?}", k_mat.shape())));
    }
    Ok(())
}

/// The `k × n` operator `H(Φ, K) = (XᵀΦ⁻¹X + K)⁻¹ XᵀΦ⁻¹`.
pub fn gr_hat_operator(
    x: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    k_mat: &DMatrix<f64>,
    _tol: &Tolerances,
) -> Result<DMatrix<f64>> {
    check_hat_shapes(x, phi, k_mat)?;
    linalg::ensure_finite(x, "X")?;
    let chol = linalg::cholesky(phi, "Φ")?;
    let phi_inv_x = chol.solve(x);
    hat_from_weighted(x, &phi_inv_x, k_mat)
}

/// Same as [`gr_hat_operator`] with `Φ = I`.
pub fn gr_hat_operator_identity(x: &DMatrix<f64>, k_mat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = x.ncols();
    if k_mat.shape() != (k, k) {
        return Err(shape_err(format!("K must be {k}×{k}, got {:?}", k_mat.shape())));
    }
    hat_from_weighted(x, x, k_mat)
}

fn hat_from_weighted(
    x: &DMatrix<f64>,
    phi_inv_x: &DMatrix<f64>,
    k_mat: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let mut bracket = x.transpose() * phi_inv_x + k_mat;
    linalg::symmetrize(&mut bracket);
    let chol = nalgebra::Cholesky::new(bracket)
        .ok_or_else(|| Error::Singular("XᵀΦ⁻¹X + K is numerically singular".into()))?;
    Ok(chol.solve(&phi_inv_x.transpose()))
}

/// `β̂(Φ, K) = H(Φ, K) y` for the instance's response.
pub fn gr_estimate(
    inst: &GlmInstance,
    phi: &DMatrix<f64>,
    k_mat: &DMatrix<f64>,
    tol: &Tolerances,
) -> Result<DVector<f64>> {
    let y = inst
        .y
        .as_ref()
        .ok_or_else(|| Error::MissingData("response vector y".into()))?;
    Ok(gr_hat_operator(&inst.x, phi, k_mat, tol)? * y)
}

/// Result of comparing `β̂(Ω, K)` with `β̂(I, K)` for every possible `y`.
#[derive(Debug, Clone)]
pub struct Coincidence {
    pub equal: bool,
    /// `‖H(Ω,K) − H(I,K)‖_max / ‖H(I,K)‖_max`.
    pub residual: f64,
}

/// Exact coincidence oracle: the estimators agree for all `y` iff their hat
/// operators agree.
pub fn estimators_coincide(
    x: &DMatrix<f64>,
    omega: &DMatrix<f64>,
    k_mat: &DMatrix<f64>,
    tol: &Tolerances,
) -> Result<Coincidence> {
    let h_omega = gr_hat_operator(x, omega, k_mat, tol)?;
    let h_free = gr_hat_operator_identity(x, k_mat)?;
    let residual = scaled(max_abs(&(h_omega - &h_free)), max_abs(&h_free));
    Ok(Coincidence { equal: residual <= tol.residual_atol, residual })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    #[test]
    fn penalty_materialization() {
        let x = DMatrix::<f64>::identity(4, 3);
        let phi = DMatrix::<f64>::identity(4, 4);
        let k = materialize_penalty(&Penalty::Zero, &x, &phi, &tol()).unwrap();
        assert_eq!(k, DMatrix::zeros(3, 3));
        let k = materialize_penalty(&Penalty::OrdinaryRidge(2.0), &x, &phi, &tol()).unwrap();
        assert_eq!(k, DMatrix::identity(3, 3) * 2.0);

        let x2 = DMatrix::<f64>::identity(2, 2);
        let k = materialize_penalty(&Penalty::Shrinkage(1.0), &x2, &x2, &tol()).unwrap();
        assert!(max_abs(&(k - DMatrix::<f64>::identity(2, 2))) < 1e-15);
    }

    #[test]
    fn penalty_rejects_bad_input() {
        let x = DMatrix::<f64>::identity(3, 2);
        let phi = DMatrix::<f64>::identity(3, 3);
        let neg = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            materialize_penalty(&Penalty::Custom(neg), &x, &phi, &tol()),
            Err(Error::Penalty(_))
        ));
        assert!(matches!(
            materialize_penalty(&Penalty::OrdinaryRidge(-1.0), &x, &phi, &tol()),
            Err(Error::Penalty(_))
        ));
    }

    #[test]
    fn hat_operator_identity_cases() {
        let n = 4;
        let i = DMatrix::<f64>::identity(n, n);
        let h = gr_hat_operator(&i, &i, &DMatrix::zeros(n, n), &tol()).unwrap();
        assert!(max_abs(&(h - &i)) < 1e-15);
        let h = gr_hat_operator(&i, &i, &(&i * 3.0), &tol()).unwrap();
        assert!(max_abs(&(h - &i * 0.25)) < 1e-15);
    }

    #[test]
    fn shrinkage_factors_out() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.3, 1.0, -0.2, 1.0, 1.4, 1.0, 0.8]);
        let phi = DMatrix::from_fn(4, 4, |i, j| 0.5_f64.powi((i as i32 - j as i32).abs()));
        let delta = 0.7;
        let k = materialize_penalty(&Penalty::Shrinkage(delta), &x, &phi, &tol()).unwrap();
        let h = gr_hat_operator(&x, &phi, &k, &tol()).unwrap();
        let h0 = gr_hat_operator(&x, &phi, &DMatrix::zeros(2, 2), &tol()).unwrap();
        assert!(max_abs(&(h - h0 / (1.0 + delta))) < 1e-12);
    }

    #[test]
    fn ols_with_orthonormal_design() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let y = DVector::from_vec(vec![2.0, -1.0, 5.0]);
        let inst = GlmInstance::new(x.clone(), Some(y.clone()), DMatrix::identity(3, 3), &tol()).unwrap();
        let b = gr_estimate(&inst, &inst.omega, &DMatrix::zeros(2, 2), &tol()).unwrap();
        assert!((b - x.transpose() * y).norm() < 1e-15);
    }

    #[test]
    fn missing_response_is_an_error() {
        let x = DMatrix::<f64>::identity(3, 1);
        let inst = GlmInstance::new(x, None, DMatrix::identity(3, 3), &tol()).unwrap();
        let err = gr_estimate(&inst, &inst.omega, &DMatrix::zeros(1, 1), &tol());
        assert!(matches!(err, Err(Error::MissingData(_))));
    }

    #[test]
    fn instance_validation() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert!(matches!(
            GlmInstance::new(x, None, DMatrix::identity(3, 3), &tol()),
            Err(Error::RankDeficient { .. })
        ));
        let x = DMatrix::<f64>::identity(3, 1);
        assert!(matches!(
            GlmInstance::new(x, None, DMatrix::zeros(3, 3), &tol()),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn identity_covariance_coincides_exactly() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.3, 1.0, -0.2, 1.0, 1.4, 1.0, 0.8]);
        let c = estimators_coincide(&x, &DMatrix::identity(4, 4), &DMatrix::identity(2, 2), &tol())
            .unwrap();
        assert!(c.equal);
        assert_eq!(c.residual, 0.0);
    }
}
