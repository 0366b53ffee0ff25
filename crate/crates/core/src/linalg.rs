//! Rank-revealing building blocks: numerical rank, orthonormal bases,
//! projectors and column-space tests.
//!
//! Every column-space decision is made from a projector residual
//! `‖(I − P_B) A‖_max` rather than from comparing ranks of concatenated
//! matrices, because rank jumps are brittle near the cutoff. A rank-based
//! variant, [`col_space_subset_by_rank`], is kept for cross-checking.
//!
//! Matrix-equality residuals are reported relative to the max-norm of the
//! operands so that the verdicts do not depend on the overall scale of the
//! data.

use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen, SVD};

use crate::error::{shape_err, Error, Result};

/// Numerical cutoffs shared by every test in the crate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Relative singular-value cutoff. `None` means
    /// `max(rows, cols) · ε` for the matrix at hand.
    pub rank_rtol: Option<f64>,
    /// Cutoff for (scaled) matrix-equality residuals.
    pub residual_atol: f64,
    /// Eigenvalue cutoff for definiteness tests.
    pub psd_atol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rank_rtol: None,
            residual_atol: 1e-10,
            psd_atol: 1e-10,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if let Some(r) = self.rank_rtol {
            if !ok(r) {
                return Err(Error::InvalidInput(format!("rank_rtol must be positive and finite, got {r}")));
            }
        }
        if !ok(self.residual_atol) {
            return Err(Error::InvalidInput(format!(
                "residual_atol must be positive and finite, got {}",
                self.residual_atol
            )));
        }
        if !ok(self.psd_atol) {
            return Err(Error::InvalidInput(format!(
                "psd_atol must be positive and finite, got {}",
                self.psd_atol
            )));
        }
        Ok(())
    }

    /// Relative singular-value cutoff for a `rows × cols` matrix.
    pub fn rank_cutoff(&self, rows: usize, cols: usize) -> f64 {
        self.rank_rtol
            .unwrap_or_else(|| rows.max(cols) as f64 * f64::EPSILON)
    }
}

pub fn ensure_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} has non-finite entries")))
    }
}

pub fn ensure_square(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.is_square() {
        Ok(())
    } else {
        Err(shape_err(format!("{what} must be square, got {}×{}", m.nrows(), m.ncols())))
    }
}

/// Largest absolute entry; 0 for an empty matrix.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// `num / scale`, with a zero scale treated as 1.
pub(crate) fn scaled(num: f64, scale: f64) -> f64 {
    if scale > 0.0 && scale.is_finite() {
        num / scale
    } else {
        num
    }
}

fn svd(m: &DMatrix<f64>) -> Result<SVD<f64, Dyn, Dyn>> {
    SVD::try_new(m.clone(), true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Singular("SVD failed to converge".into()))
}

fn retained(sv: &nalgebra::DVector<f64>, cutoff: f64) -> usize {
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > cutoff * smax).count()
}

/// Number of singular values above `rank_rtol · σ_max`.
pub fn numerical_rank(m: &DMatrix<f64>, tol: &Tolerances) -> Result<usize> {
    ensure_finite(m, "matrix")?;
    if m.is_empty() {
        return Ok(0);
    }
    let d = svd(m)?;
    Ok(retained(&d.singular_values, tol.rank_cutoff(m.nrows(), m.ncols())))
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    ensure_finite(m, "matrix")?;
    let d = svd(m)?;
    Ok(d.singular_values.iter().cloned().collect())
}

pub fn smallest_singular_value(m: &DMatrix<f64>) -> Result<f64> {
    Ok(singular_values(m)?.into_iter().fold(f64::INFINITY, f64::min))
}

/// 2-norm condition number `σ_max / σ_min`.
pub fn condition_number(m: &DMatrix<f64>) -> Result<f64> {
    let sv = singular_values(m)?;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(if smin == 0.0 { f64::INFINITY } else { smax / smin })
}

/// Orthonormal basis of the column space of `m` (possibly zero columns).
pub fn column_basis(m: &DMatrix<f64>, tol: &Tolerances) -> Result<DMatrix<f64>> {
    ensure_finite(m, "matrix")?;
    let d = svd(m)?;
    let r = retained(&d.singular_values, tol.rank_cutoff(m.nrows(), m.ncols()));
    let u = d.u.expect("U requested");
    Ok(u.columns(0, r).into_owned())
}

/// Orthonormal `n × (n − k)` basis `Z` with `XᵀZ = 0`.
///
/// Taken from the trailing columns of the full Householder `Q` of `X`, so
/// the result is bit-for-bit reproducible for a given input.
pub fn null_space_basis(x: &DMatrix<f64>, tol: &Tolerances) -> Result<DMatrix<f64>> {
    let (n, k) = x.shape();
    if n <= k {
        return Err(shape_err(format!("need more rows than columns, got {n}×{k}")));
    }
    let rank = numerical_rank(x, tol)?;
    if rank != k {
        return Err(Error::RankDeficient { expected: k, found: rank });
    }
    let qr = x.clone().qr();
    let mut qt = DMatrix::<f64>::identity(n, n);
    qr.q_tr_mul(&mut qt);
    let q = qt.transpose();
    Ok(q.columns(k, n - k).into_owned())
}

/// Orthogonal projector onto the column space of `m`.
pub fn orthogonal_projector(m: &DMatrix<f64>, tol: &Tolerances) -> Result<DMatrix<f64>> {
    let u = column_basis(m, tol)?;
    let mut p = &u * u.transpose();
    symmetrize(&mut p);
    Ok(p)
}

/// Outcome of `𝒞(A) ⊆ 𝒞(B)`.
#[derive(Debug, Clone)]
pub struct SubsetTest {
    pub holds: bool,
    /// `‖(I − P_B)A‖_max / max(‖A‖_max, ‖B‖_max)`.
    pub residual: f64,
    /// Least-squares solution of `A = BG`, present when `holds`.
    pub witness: Option<DMatrix<f64>>,
    /// Scaled `‖BG − A‖_max` for the witness.
    pub witness_residual: Option<f64>,
}

/// Decides `𝒞(A) ⊆ 𝒞(B)` and, when it holds, returns `G` with `A = BG`.
pub fn col_space_subset(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: &Tolerances) -> Result<SubsetTest> {
    if a.nrows() != b.nrows() {
        return Err(shape_err(format!(
            "column-space test needs equal row counts, got {} and {}",
            a.nrows(),
            b.nrows()
        )));
    }
    ensure_finite(a, "A")?;
    ensure_finite(b, "B")?;
    let scale = max_abs(a).max(max_abs(b));

    let d = svd(b)?;
    let r = retained(&d.singular_values, tol.rank_cutoff(b.nrows(), b.ncols()));
    let u = d.u.as_ref().expect("U requested").columns(0, r).into_owned();
    let v_t = d.v_t.as_ref().expect("Vᵀ requested").rows(0, r).into_owned();

    let coeffs = u.transpose() * a;
    let resid = a - &u * &coeffs;
    let residual = scaled(max_abs(&resid), scale);
    let holds = residual <= tol.residual_atol;

    let (witness, witness_residual) = if holds {
        let mut scaled_coeffs = coeffs;
        for (i, mut row) in scaled_coeffs.row_iter_mut().enumerate() {
            row /= d.singular_values[i];
        }
        let g = v_t.transpose() * scaled_coeffs;
        let wr = scaled(max_abs(&(b * &g - a)), scale);
        (Some(g), Some(wr))
    } else {
        (None, None)
    };

    Ok(SubsetTest { holds, residual, witness, witness_residual })
}

/// Rank-based variant: `rank [B A] = rank B`.
pub fn col_space_subset_by_rank(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: &Tolerances) -> Result<bool> {
    if a.nrows() != b.nrows() {
        return Err(shape_err("column-space test needs equal row counts"));
    }
    let joined = hstack(b, a);
    Ok(numerical_rank(&joined, tol)? == numerical_rank(b, tol)?)
}

/// Outcome of `𝒞(A) = 𝒞(B)`.
#[derive(Debug, Clone)]
pub struct EqualityTest {
    pub holds: bool,
    pub forward: SubsetTest,
    pub backward: SubsetTest,
    /// `G` with `A = BG` when the spaces agree.
    pub witness: Option<DMatrix<f64>>,
    /// Smallest singular value of the witness; positive certifies that `G`
    /// is nonsingular.
    pub witness_min_singular: Option<f64>,
}

pub fn col_space_equal(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: &Tolerances) -> Result<EqualityTest> {
    if a.shape() != b.shape() {
        return Err(shape_err(format!(
            "column-space equality needs equal shapes, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let forward = col_space_subset(a, b, tol)?;
    let backward = col_space_subset(b, a, tol)?;
    let holds = forward.holds && backward.holds;
    let (witness, witness_min_singular) = match (&forward.witness, holds) {
        (Some(g), true) => (Some(g.clone()), Some(smallest_singular_value(g)?)),
        _ => (None, None),
    };
    Ok(EqualityTest { holds, forward, backward, witness, witness_min_singular })
}

/// Symmetric part `(M + Mᵀ)/2` in place.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

fn symmetric_part(m: &DMatrix<f64>, tol: &Tolerances) -> Result<DMatrix<f64>> {
    ensure_square(m, "matrix")?;
    ensure_finite(m, "matrix")?;
    let asym = scaled(max_abs(&(m - m.transpose())), max_abs(m).max(1.0));
    if asym > tol.residual_atol {
        return Err(Error::Symmetry { asymmetry: asym });
    }
    let mut s = m.clone();
    symmetrize(&mut s);
    Ok(s)
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>, tol: &Tolerances) -> Result<f64> {
    let s = symmetric_part(m, tol)?;
    if s.is_empty() {
        return Ok(f64::INFINITY);
    }
    let eig = SymmetricEigen::try_new(s, f64::EPSILON, 0)
        .ok_or_else(|| Error::Singular("symmetric eigendecomposition failed".into()))?;
    Ok(eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min))
}

pub fn is_psd(m: &DMatrix<f64>, tol: &Tolerances) -> Result<bool> {
    Ok(min_eigenvalue(m, tol)? >= -tol.psd_atol)
}

pub fn is_pd(m: &DMatrix<f64>, tol: &Tolerances) -> Result<bool> {
    Ok(min_eigenvalue(m, tol)? > tol.psd_atol)
}

/// Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    ensure_square(m, what)?;
    ensure_finite(m, what)?;
    let mut s = m.clone();
    symmetrize(&mut s);
    Cholesky::new(s).ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

/// `[A; B]`.
pub fn vstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.ncols(), b.ncols(), "vstack needs equal column counts");
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
    out.rows_mut(0, a.nrows()).copy_from(a);
    out.rows_mut(a.nrows(), b.nrows()).copy_from(b);
    out
}

/// `[A B]`.
pub fn hstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), b.nrows(), "hstack needs equal row counts");
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// `diag(A, B)`.
pub fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((a.nrows(), a.ncols()), b.shape()).copy_from(b);
    out
}
