use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use clap::ValueEnum;
use covfree::io::{format_number, write_matrix};
use covfree::models::{CovarianceModel, SerialPreset};
use covfree::spatial::{counterexample_instance, row_normalize, ContiguityMatrix};
use covfree::Tolerances;
use nalgebra::DMatrix;

use crate::{CliError, DemoArgs, Output};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DemoName {
    /// Coincidence at one spatial coefficient without any parameter-free condition.
    Counterexample,
    /// Mixed-effects model without a random effect in the column space of X.
    RaoZeroGamma,
    /// Two-equation system with coordinate-block designs.
    SurOrthogonal,
    /// Spatial autoregression on a 5×5 rook lattice.
    SarLattice,
    /// Intra-class serial correlation with an intercept-only design.
    SerialIntraclass,
}

const LATTICE_SIDE: usize = 5;

fn coordinate_blocks(m: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let x1 = DMatrix::from_fn(m, 2, |i, j| if i == j { 1.0 } else { 0.0 });
    let x2 = DMatrix::from_fn(m, 2, |i, j| if i == j + 2 { 1.0 } else { 0.0 });
    (x1, x2)
}

fn rao_design() -> DMatrix<f64> {
    DMatrix::from_row_slice(6, 2, &[1.0, -1.5, 1.0, -0.5, 1.0, 0.0, 1.0, 0.25, 1.0, 1.0, 1.0, 2.0])
}

fn rao_delta_bar() -> DMatrix<f64> {
    DMatrix::from_fn(4, 4, |i, j| if i == j { 2.0 } else { 0.5 })
}

fn lattice_contiguity() -> ContiguityMatrix {
    ContiguityMatrix::rook_lattice(LATTICE_SIDE, LATTICE_SIDE)
}

/// Intercept plus centred row and column coordinates.
fn lattice_design() -> DMatrix<f64> {
    let c = (LATTICE_SIDE as f64 - 1.0) / 2.0;
    DMatrix::from_fn(LATTICE_SIDE * LATTICE_SIDE, 3, |i, j| match j {
        0 => 1.0,
        1 => (i / LATTICE_SIDE) as f64 - c,
        _ => (i % LATTICE_SIDE) as f64 - c,
    })
}

/// The fixture as a `(model, X, K)` triple for `check --demo`.
pub fn check_instance(name: DemoName, tol: &Tolerances) -> Result<(CovarianceModel, DMatrix<f64>, DMatrix<f64>), CliError> {
    Ok(match name {
        DemoName::Counterexample => {
            let (w, x, rho, k) = counterexample_instance();
            (CovarianceModel::Sma1 { w, rho: Some(rho) }, x, k)
        }
        DemoName::RaoZeroGamma => {
            let x = rao_design();
            (CovarianceModel::rao(x.clone(), DMatrix::zeros(2, 2), None, tol)?, x, DMatrix::identity(2, 2))
        }
        DemoName::SurOrthogonal => {
            let (x1, x2) = coordinate_blocks(6);
            let x = covfree::linalg::block_diag(&x1, &x2);
            (CovarianceModel::sur(x1, x2, None)?, x, DMatrix::zeros(4, 4))
        }
        DemoName::SarLattice => {
            let w = row_normalize(&lattice_contiguity()).matrix;
            (CovarianceModel::sar1(w, None, tol)?, lattice_design(), DMatrix::identity(3, 3))
        }
        DemoName::SerialIntraclass => {
            let a = SerialPreset::IntraClass.matrix(6);
            (CovarianceModel::serial(a, None, tol)?, DMatrix::from_element(6, 1, 1.0), DMatrix::zeros(1, 1))
        }
    })
}

fn write_edges(path: &Path, c: &ContiguityMatrix) -> Result<(), CliError> {
    let n = c.n();
    let mut text = format!("n {n}\n");
    for i in 0..n {
        for j in i + 1..n {
            if c.entries()[(i, j)] != 0.0 {
                writeln!(text, "{} {}", i + 1, j + 1).expect("writing to a String");
            }
        }
    }
    fs::write(path, text).map_err(covfree::Error::from)?;
    Ok(())
}

fn write_all(dir: &Path, o: &mut Output, files: &[(&str, &DMatrix<f64>)]) -> Result<(), CliError> {
    for (name, m) in files {
        let path = dir.join(name);
        write_matrix(&path, m)?;
        o.push(format!("file.{}", name.trim_end_matches(".txt")), path.display());
    }
    Ok(())
}

pub fn cmd_demo(a: &DemoArgs) -> Result<Output, CliError> {
    let dir = &a.out_dir;
    fs::create_dir_all(dir).map_err(covfree::Error::from)?;
    let mut o = Output::default();
    o.push("demo", a.name.to_possible_value().expect("no skipped variants").get_name());
    match a.name {
        DemoName::Counterexample => {
            let (w, x, rho, k) = counterexample_instance();
            write_all(dir, &mut o, &[("w.txt", &w), ("x.txt", &x), ("k.txt", &k)])?;
            o.push("rho", format_number(rho));
            o.push("expected.equal", "true");
            o.push("expected.spatial_lag", "false");
            o.push("expected.all_rho", "false");
            o.push("note", "ΩX = X at this ρ only; the estimators differ at other ρ");
        }
        DemoName::RaoZeroGamma => {
            let x = rao_design();
            let g = DMatrix::zeros(2, 2);
            let d = rao_delta_bar();
            let k = DMatrix::identity(2, 2);
            write_all(dir, &mut o, &[("x.txt", &x), ("gamma_bar.txt", &g), ("delta_bar.txt", &d), ("k.txt", &k)])?;
            o.push("expected.mixed_effects", "true");
            o.push("expected.equal", "true");
            o.push("note", "with Γ̄ = 0 the estimators coincide for every Δ̄ and every K");
        }
        DemoName::SurOrthogonal => {
            let (x1, x2) = coordinate_blocks(6);
            let k = DMatrix::zeros(4, 4);
            write_all(dir, &mut o, &[("x1.txt", &x1), ("x2.txt", &x2), ("k.txt", &k)])?;
            o.push("expected.sur", "false");
            o.push("expected.equal_at_sigma12_0", "true");
            o.push("expected.equal_at_sigma12_nonzero", "false");
            o.push(
                "note",
                "X₁ᵀZ₂ = 0 and X₂ᵀZ₁ = 0 force 𝒞(X₁) = 𝒞(X₂), so X₁ᵀX₂ = 0 cannot also hold for nonzero blocks",
            );
        }
        DemoName::SarLattice => {
            let c = lattice_contiguity();
            let w = row_normalize(&c).matrix;
            let x = lattice_design();
            let k = DMatrix::identity(3, 3);
            write_all(dir, &mut o, &[("w.txt", &w), ("x.txt", &x), ("k.txt", &k)])?;
            let edges = dir.join("edges.txt");
            write_edges(&edges, &c)?;
            o.push("file.edges", edges.display());
            let cfg = dir.join("simulate.cfg");
            let text = "# Spatial autoregression on a 5×5 rook lattice\n\
                        model = sar1\nx = x.txt\nw = edges.txt\nrho = 0.5\nbeta = 1, 0.5, -0.5\nsigma2 = 1\n\
                        penalty = ridge:1\nreplications = 200\nseed = 20240101\n";
            fs::write(&cfg, text).map_err(covfree::Error::from)?;
            o.push("file.config", cfg.display());
            o.push("expected.spatial_lag", "false");
            o.push("expected.all_rho", "false");
            o.push("expected.equal", "false");
        }
        DemoName::SerialIntraclass => {
            let x = DMatrix::from_element(6, 1, 1.0);
            let k = DMatrix::zeros(1, 1);
            write_all(dir, &mut o, &[("x.txt", &x), ("k.txt", &k)])?;
            o.push("a", "intraclass");
            o.push("expected.serial", "true");
            o.push("expected.equal", "true");
        }
    }
    Ok(o)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_demo_has_a_consistent_check_instance() {
        let tol = Tolerances::default();
        for name in DemoName::value_variants() {
            let (model, x, k) = check_instance(*name, &tol).unwrap();
            assert_eq!(model.dim(), x.nrows());
            assert_eq!(k.shape(), (x.ncols(), x.ncols()));
        }
    }

    #[test]
    fn lattice_design_is_centred() {
        let x = lattice_design();
        assert_eq!(x.column(1).sum(), 0.0);
        assert_eq!(x.column(2).sum(), 0.0);
    }
}
