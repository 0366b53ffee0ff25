//! Spatial weight matrices built from contiguity, plus canonical fixtures.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{self, Tolerances};

/// Binary, symmetric adjacency with an empty diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct ContiguityMatrix {
    entries: DMatrix<f64>,
}

impl ContiguityMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        linalg::ensure_square(&entries, "contiguity matrix")?;
        let n = entries.nrows();
        for i in 0..n {
            if entries[(i, i)] != 0.0 {
                return Err(Error::InvalidInput(format!("region {} is contiguous with itself", i + 1)));
            }
            for j in 0..n {
                let c = entries[(i, j)];
                if c != 0.0 && c != 1.0 {
                    return Err(Error::InvalidInput(format!("entry ({}, {}) is {c}, expected 0 or 1", i + 1, j + 1)));
                }
                if c != entries[(j, i)] {
                    return Err(Error::InvalidInput(format!("contiguity is not mutual at ({}, {})", i + 1, j + 1)));
                }
            }
        }
        Ok(ContiguityMatrix { entries })
    }

    /// Builds from 0-based undirected edges.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut c = DMatrix::zeros(n, n);
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidInput(format!("edge ({}, {}) exceeds n = {n}", i + 1, j + 1)));
            }
            if i == j {
                return Err(Error::InvalidInput(format!("self-loop at region {}", i + 1)));
            }
            c[(i, j)] = 1.0;
            c[(j, i)] = 1.0;
        }
        Ok(ContiguityMatrix { entries: c })
    }

    /// Rook contiguity on a `rows × cols` grid, numbered row-major.
    pub fn rook_lattice(rows: usize, cols: usize) -> Self {
        let n = rows * cols;
        let mut c = DMatrix::zeros(n, n);
        for r in 0..rows {
            for s in 0..cols {
                let i = r * cols + s;
                if s + 1 < cols {
                    c[(i, i + 1)] = 1.0;
                    c[(i + 1, i)] = 1.0;
                }
                if r + 1 < rows {
                    c[(i, i + cols)] = 1.0;
                    c[(i + cols, i)] = 1.0;
                }
            }
        }
        ContiguityMatrix { entries: c }
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }
}

/// Row-normalized weights. Rows of isolated regions stay zero and are listed
/// in `isolated`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub matrix: DMatrix<f64>,
    pub row_sums: Vec<f64>,
    pub isolated: Vec<usize>,
}

impl WeightMatrix {
    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }
}

/// `w_ij = c_ij / Σ_j c_ij`, leaving rows without neighbours at zero.
pub fn row_normalize(c: &ContiguityMatrix) -> WeightMatrix {
    let n = c.n();
    let mut matrix = c.entries.clone();
    let mut row_sums = Vec::with_capacity(n);
    let mut isolated = Vec::new();
    for i in 0..n {
        let degree = c.entries.row(i).sum();
        if degree == 0.0 {
            isolated.push(i);
            row_sums.push(0.0);
        } else {
            matrix.row_mut(i).unscale_mut(degree);
            row_sums.push(matrix.row(i).sum());
        }
    }
    WeightMatrix { matrix, row_sums, isolated }
}

/// Maximum absolute row sum.
pub fn inf_norm(w: &DMatrix<f64>) -> f64 {
    w.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// `|ρ|·‖W‖∞ < 1`, which makes `I ± ρW` nonsingular and so both spatial
/// covariances positive definite.
pub fn pd_guarantee(w: &DMatrix<f64>, rho: f64) -> bool {
    rho.abs() * inf_norm(w) < 1.0
}

/// Cyclic shift on five regions, `W⁵ = I`.
pub fn cyclic_shift(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| if j == (i + 1) % n { 1.0 } else { 0.0 })
}

/// Spatial instance on which the estimators coincide at one specific `ρ`
/// even though neither `WX` nor the `ρ`-free conditions lie in the
/// required column space.
///
/// `W` is the 5-cycle shift, `X` has rows `(cos mθ, sin mθ)` for
/// `θ = 2π/5`, `ρ = −2cos θ` and `K = I₂`. Since `W + Wᵀ` acts on 𝒞(X)
/// as `2cos θ` and `WWᵀ = I`, the moving-average covariance satisfies
/// `ΩX = (1 + 2ρ cos θ + ρ²)X = X`.
pub fn counterexample_instance() -> (DMatrix<f64>, DMatrix<f64>, f64, DMatrix<f64>) {
    let theta = 2.0 * PI / 5.0;
    let w = cyclic_shift(5);
    let x = DMatrix::from_fn(5, 2, |m, j| {
        let a = m as f64 * theta;
        if j == 0 { a.cos() } else { a.sin() }
    });
    let rho = -2.0 * theta.cos();
    (w, x, rho, DMatrix::identity(2, 2))
}

/// Two disjoint three-region paths with a design lying in `𝒩(W) ∩ 𝒩(Wᵀ)`.
/// Every spatial condition holds for any `K`, so both estimators coincide
/// at every `ρ`.
pub fn nullspace_instance() -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let c = ContiguityMatrix::from_edges(6, &[(0, 1), (1, 2), (3, 4), (4, 5)]).expect("valid edges");
    let w = row_normalize(&c).matrix;
    let x = DMatrix::from_row_slice(6, 2, &[1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0]);
    (w, x, DMatrix::identity(2, 2))
}

/// Checks the row-sum invariant of an arbitrary weight matrix.
pub fn is_row_normalized(w: &DMatrix<f64>, tol: &Tolerances) -> bool {
    w.iter().all(|&v| v >= 0.0)
        && w.row_iter().all(|r| {
            let s = r.sum();
            s == 0.0 || (s - 1.0).abs() <= tol.residual_atol
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;
    use crate::models::{build_omega, CovarianceModel};

    #[test]
    fn path_of_three() {
        let c = ContiguityMatrix::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let w = row_normalize(&c);
        assert_eq!(w.matrix.row(1).iter().copied().collect::<Vec<_>>(), vec![0.5, 0.0, 0.5]);
        assert_eq!(w.matrix[(0, 1)], 1.0);
        assert_eq!(w.matrix[(2, 1)], 1.0);
        assert!(w.isolated.is_empty());
        assert_eq!(inf_norm(&w.matrix), 1.0);
    }

    #[test]
    fn complete_triangle() {
        let c = ContiguityMatrix::from_edges(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let w = row_normalize(&c).matrix;
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(w[(i, j)], if i == j { 0.0 } else { 0.5 });
            }
        }
    }

    #[test]
    fn isolated_region_is_kept_and_flagged() {
        let c = ContiguityMatrix::from_edges(4, &[(0, 1), (1, 2)]).unwrap();
        let w = row_normalize(&c);
        assert_eq!(w.isolated, vec![3]);
        assert_eq!(w.row_sums[3], 0.0);
        assert_eq!(w.matrix.row(3).sum(), 0.0);
        assert_eq!(inf_norm(&w.matrix), 1.0);
        assert!(is_row_normalized(&w.matrix, &Tolerances::default()));
    }

    #[test]
    fn contiguity_validation() {
        let asym = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(ContiguityMatrix::new(asym).is_err());
        let weighted = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 2.0, 0.0]);
        assert!(ContiguityMatrix::new(weighted).is_err());
        let looped = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 0.0]);
        assert!(ContiguityMatrix::new(looped).is_err());
        assert!(ContiguityMatrix::from_edges(3, &[(1, 1)]).is_err());
        assert!(ContiguityMatrix::from_edges(3, &[(0, 3)]).is_err());
    }

    #[test]
    fn lattice_degrees() {
        let c = ContiguityMatrix::rook_lattice(3, 3);
        let deg: Vec<f64> = c.entries().row_iter().map(|r| r.sum()).collect();
        assert_eq!(deg, vec![2.0, 3.0, 2.0, 3.0, 4.0, 3.0, 2.0, 3.0, 2.0]);
        assert!(ContiguityMatrix::new(c.entries().clone()).is_ok());
    }

    #[test]
    fn norms_and_guarantee() {
        assert_eq!(inf_norm(&DMatrix::zeros(3, 3)), 0.0);
        let w = row_normalize(&ContiguityMatrix::rook_lattice(2, 3)).matrix;
        assert!(pd_guarantee(&w, 0.99));
        assert!(!pd_guarantee(&w, 1.0));
        assert!(pd_guarantee(&DMatrix::zeros(3, 3), 0.5));
    }

    #[test]
    fn guarantee_implies_positive_definite() {
        let tol = Tolerances::default();
        let w = row_normalize(&ContiguityMatrix::rook_lattice(3, 3)).matrix;
        for rho in [-0.99, -0.5, 0.3, 0.99] {
            assert!(pd_guarantee(&w, rho));
            for m in [
                CovarianceModel::Sar1 { w: w.clone(), rho: Some(rho) },
                CovarianceModel::Sma1 { w: w.clone(), rho: Some(rho) },
            ] {
                assert!(linalg::is_pd(&build_omega(&m, &tol).unwrap(), &tol).unwrap());
            }
        }
    }

    #[test]
    fn counterexample_identities() {
        let (w, x, rho, k) = counterexample_instance();
        let mut p = DMatrix::<f64>::identity(5, 5);
        for _ in 0..5 {
            p = &w * p;
        }
        assert!(max_abs(&(p - DMatrix::<f64>::identity(5, 5))) <= 1e-12);
        assert!((rho + 0.6180339887498949).abs() < 1e-15);
        assert!(rho.abs() < 1.0);
        assert_eq!((x[(0, 0)], x[(0, 1)]), (1.0, 0.0));
        assert_eq!(k, DMatrix::identity(2, 2));
        let theta = 2.0 * PI / 5.0;
        assert!((1.0 + 2.0 * rho * theta.cos() + rho * rho - 1.0).abs() < 1e-15);
    }

    #[test]
    fn nullspace_fixture_is_annihilated() {
        let (w, x, _) = nullspace_instance();
        assert_eq!(max_abs(&(&w * &x)), 0.0);
        assert_eq!(max_abs(&(w.transpose() * &x)), 0.0);
        assert!(is_row_normalized(&w, &Tolerances::default()));
    }
}
