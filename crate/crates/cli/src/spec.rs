//! `--model` and `--K` argument grammar.
//!
//! ```text
//! explicit:identity | explicit:<omega file>
//! rao:<gamma_bar file>[,<delta_bar file>]
//! sur:<x1 file>,<x2 file>
//! sar1:<w file> | sma1:<w file>
//! serial:<intraclass|ar1|circular|a file>
//! ```

use std::path::Path;

use covfree::io::{self, read_matrix};
use covfree::linalg::block_diag;
use covfree::models::CovarianceModel;
use covfree::Tolerances;
use nalgebra::DMatrix;

use crate::CliError;

/// Scalar parameters supplied on the command line.
#[derive(Debug, Clone, Copy, Default)]
pub struct Scalars {
    pub rho: Option<f64>,
    pub theta: Option<f64>,
    pub sigma12: Option<f64>,
}

/// A parsed model together with its design.
pub struct Loaded {
    pub model: CovarianceModel,
    pub x: DMatrix<f64>,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Resolves the design: `--X` when given, otherwise the SUR blocks.
pub fn load_model(
    spec: &str,
    x: Option<DMatrix<f64>>,
    scalars: Scalars,
    row_normalize: bool,
    tol: &Tolerances,
) -> Result<Loaded, CliError> {
    let (kind, arg) = spec.split_once(':').unwrap_or((spec, ""));
    let cwd = Path::new(".");
    let need_x = |x: Option<DMatrix<f64>>| x.ok_or_else(|| usage(format!("--model {kind} needs --X")));
    let model_and_x = match kind {
        "explicit" => {
            let x = need_x(x)?;
            let omega = match arg {
                "identity" => DMatrix::identity(x.nrows(), x.nrows()),
                "" => return Err(usage("explicit model needs `identity` or a file")),
                path => read_matrix(Path::new(path))?,
            };
            (CovarianceModel::explicit(omega, tol)?, x)
        }
        "rao" => {
            let x = need_x(x)?;
            let mut parts = arg.split(',');
            let gamma = parts.next().filter(|s| !s.is_empty()).ok_or_else(|| usage("rao model needs a Γ̄ file"))?;
            let gamma = read_matrix(Path::new(gamma))?;
            let delta = parts.next().map(|p| read_matrix(Path::new(p))).transpose()?;
            (CovarianceModel::rao(x.clone(), gamma, delta, tol)?, x)
        }
        "sur" => {
            let (a, b) = arg.split_once(',').ok_or_else(|| usage("sur model needs `sur:<x1>,<x2>`"))?;
            let x1 = read_matrix(Path::new(a))?;
            let x2 = read_matrix(Path::new(b))?;
            let stacked = block_diag(&x1, &x2);
            if let Some(x) = &x {
                if *x != stacked {
                    return Err(usage("--X must equal the block diagonal of the SUR blocks"));
                }
            }
            (CovarianceModel::sur(x1, x2, scalars.sigma12)?, stacked)
        }
        "sar1" | "sma1" => {
            if arg.is_empty() {
                return Err(usage(format!("{kind} model needs a weight file")));
            }
            let x = need_x(x)?;
            let w = io::read_weights(Path::new(arg), row_normalize)?;
            let m = if kind == "sar1" {
                CovarianceModel::sar1(w, scalars.rho, tol)?
            } else {
                CovarianceModel::sma1(w, scalars.rho, tol)?
            };
            (m, x)
        }
        "serial" => {
            if arg.is_empty() {
                return Err(usage("serial model needs a preset or a matrix file"));
            }
            let x = need_x(x)?;
            let a = io::load_serial_a(arg, x.nrows(), cwd)?;
            (CovarianceModel::serial(a, scalars.theta, tol)?, x)
        }
        other => {
            return Err(usage(format!("unknown model `{other}`; expected explicit, rao, sur, sar1, sma1 or serial")))
        }
    };
    let (model, x) = model_and_x;
    if model.dim() != x.nrows() {
        return Err(CliError::Core(covfree::Error::Shape(format!(
            "model dimension {} does not match {} rows of X",
            model.dim(),
            x.nrows()
        ))));
    }
    Ok(Loaded { model, x })
}
