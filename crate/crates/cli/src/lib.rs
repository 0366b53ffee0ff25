//! Command-line front end for `covfree`.
//!
//! Output is one `key=value` pair per line. The exit code reports whether
//! the computation ran, never the verdict: 0 computed, 1 usage or input
//! error, 2 numerical or validation error.

mod demo;
mod spec;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use covfree::equivalence::{cross_validate, oracle_check, decomposition_check, column_space_check, Certificate, EquivalenceVerdict};
use covfree::io::{self, format_number, KeyValues};
use covfree::linalg::{self, Tolerances};
use covfree::models::{
    build_omega, mixed_effects_check, sur_check_auto, spatial_lag_check, spatial_all_rho_check, spatial_all_rho_products_check, serial_check,
    ConditionVerdict, CovarianceModel, SpatialVariant,
};
use covfree::ridge::{gr_hat_operator, gr_hat_operator_identity, materialize_penalty};
use covfree::two_step::{reports_to_csv, reports_to_table, run_sweep, two_step_estimate, McConfig};
use nalgebra::{DMatrix, DVector};

pub use demo::DemoName;
use spec::{load_model, Scalars};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(covfree::Error),
}

impl From<covfree::Error> for CliError {
    fn from(e: covfree::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_input_error() => 1,
            CliError::Core(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "covfree", version, about = "Decide when the covariance-free ridge estimator equals the covariance-aware one")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decide whether β̂(Ω,K) and β̂(I,K) coincide for every response.
    Check(CheckArgs),
    /// Compute the estimators for a response vector.
    Estimate(EstimateArgs),
    /// Run the seeded Monte Carlo comparison described by a config file.
    Simulate(SimulateArgs),
    /// Write a named fixture to files and print its expected verdicts.
    Demo(DemoArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Decomposition,
    ColumnSpace,
    Oracle,
    Auto,
}

#[derive(Debug, clap::Args)]
pub struct ModelArgs {
    /// Design matrix file.
    #[arg(long = "X", value_name = "FILE")]
    pub x: Option<PathBuf>,
    /// Penalty: zero, ridge:λ, shrink:δ or a matrix file.
    #[arg(long = "K", default_value = "zero")]
    pub k: String,
    /// Covariance model, e.g. explicit:identity, sma1:w.txt, serial:intraclass.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub rho: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub theta: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub sigma12: Option<f64>,
    /// Treat a dense weight file as contiguity and row-normalize it.
    #[arg(long)]
    pub row_normalize: bool,
    /// Absolute residual tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Relative singular-value cutoff for numerical rank.
    #[arg(long)]
    pub rank_tol: Option<f64>,
}

#[derive(Debug, clap::Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value = "auto")]
    pub method: Method,
    /// Cross-check the column-space verdict against the other routes.
    #[arg(long)]
    pub verify: bool,
    /// Decide coincidence for every admissible spatial coefficient.
    #[arg(long)]
    pub all_rho: bool,
    /// Use a built-in fixture instead of files.
    #[arg(long, value_enum)]
    pub demo: Option<DemoName>,
}

#[derive(Debug, clap::Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Response vector file.
    #[arg(long)]
    pub y: PathBuf,
    /// Estimate the unknown covariance parameter first and plug it in.
    #[arg(long)]
    pub two_step: bool,
    /// Known error variance used by the step-one likelihood.
    #[arg(long)]
    pub sigma2: Option<f64>,
}

#[derive(Debug, clap::Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output prefix; writes <prefix>.csv and <prefix>.txt.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the thread count from the config.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, clap::Args)]
pub struct DemoArgs {
    #[arg(long, value_enum)]
    pub name: DemoName,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

/// Ordered `key=value` output.
#[derive(Debug, Default)]
pub struct Output {
    lines: Vec<(String, String)>,
}

impl Output {
    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.lines.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.lines.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn write_to(&self, out: &mut dyn Write) -> std::io::Result<()> {
        for (k, v) in &self.lines {
            writeln!(out, "{k}={v}")?;
        }
        Ok(())
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(o) => {
            if o.write_to(out).is_err() {
                return 1;
            }
            0
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cmd: &Command) -> Result<Output, CliError> {
    match cmd {
        Command::Check(a) => cmd_check(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Demo(a) => demo::cmd_demo(a),
    }
}

fn tolerances(m: &ModelArgs) -> Result<Tolerances, CliError> {
    let mut tol = Tolerances::default();
    if let Some(t) = m.tol {
        tol.residual_atol = t;
        tol.psd_atol = t;
    }
    tol.rank_rtol = m.rank_tol;
    tol.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(tol)
}

fn scalars(m: &ModelArgs) -> Scalars {
    Scalars { rho: m.rho, theta: m.theta, sigma12: m.sigma12 }
}

fn read_design(m: &ModelArgs) -> Result<Option<DMatrix<f64>>, CliError> {
    Ok(m.x.as_deref().map(io::read_matrix).transpose()?)
}

fn penalty_matrix(spec: &str, x: &DMatrix<f64>, tol: &Tolerances) -> Result<DMatrix<f64>, CliError> {
    let p = io::parse_penalty(spec, Path::new("."))?;
    let n = x.nrows();
    Ok(materialize_penalty(&p, x, &DMatrix::identity(n, n), tol)?)
}

fn push_verdict(o: &mut Output, v: &EquivalenceVerdict) {
    o.push("equal", v.equal);
    o.push("fired_condition", v.fired_condition);
    for (name, c) in &v.certificates {
        match c {
            Certificate::Residual(r) => o.push(format!("residual.{name}"), format_number(*r)),
            Certificate::SingularValue(s) => o.push(format!("certificate.{name}"), format_number(*s)),
            Certificate::Matrix(m) => o.push(format!("certificate.{name}"), format_row_major(m)),
        }
    }
}

fn push_condition(o: &mut Output, key: &str, v: &ConditionVerdict) {
    o.push(key, v.holds);
    for (name, r) in &v.residuals {
        o.push(format!("residual.{key}.{name}"), format_number(*r));
    }
}

fn format_row_major(m: &DMatrix<f64>) -> String {
    let rows: Vec<String> = m
        .row_iter()
        .map(|r| r.iter().map(|v| format_number(*v)).collect::<Vec<_>>().join(","))
        .collect();
    format!("[{}]", rows.join(";"))
}

fn format_vector(v: &DVector<f64>) -> String {
    v.iter().map(|x| format_number(*x)).collect::<Vec<_>>().join(",")
}

/// Parameter-free conditions of the model; returns the verdict that
/// decides coincidence for every value of the unknown, when one exists,
/// and whether it is exact.
fn parameter_free(
    o: &mut Output,
    model: &CovarianceModel,
    x: &DMatrix<f64>,
    k: &DMatrix<f64>,
    tol: &Tolerances,
) -> Result<Option<(&'static str, ConditionVerdict)>, CliError> {
    Ok(match model {
        CovarianceModel::Rao { gamma_bar, .. } => {
            let v = mixed_effects_check(x, gamma_bar, k, tol)?;
            push_condition(o, "mixed_effects", &v);
            Some(("mixed_effects", v))
        }
        CovarianceModel::Sur { x1, x2, .. } => {
            let v = sur_check_auto(x1, x2, tol)?;
            push_condition(o, "sur", &v);
            Some(("sur", v))
        }
        CovarianceModel::Sar1 { w, .. } | CovarianceModel::Sma1 { w, .. } => {
            let variant = if matches!(model, CovarianceModel::Sar1 { .. }) { SpatialVariant::Sar } else { SpatialVariant::Sma };
            push_condition(o, "spatial_lag", &spatial_lag_check(w, x, k, tol)?);
            let iii = spatial_all_rho_check(w, x, k, variant, tol)?;
            push_condition(o, "all_rho", &iii);
            if variant == SpatialVariant::Sma {
                push_condition(o, "all_rho_products", &spatial_all_rho_products_check(w, x, k, tol)?);
            }
            Some(("all_rho", iii))
        }
        CovarianceModel::Serial { a, .. } => {
            let v = serial_check(a, x, k, tol)?;
            push_condition(o, "serial", &v);
            Some(("serial", v))
        }
        CovarianceModel::Explicit { .. } => None,
    })
}

fn push_parameter_free_decision(o: &mut Output, name: &str, v: &ConditionVerdict) {
    if v.holds || !v.sufficient_only {
        o.push("equal", v.holds);
    } else {
        o.push("equal", "undetermined");
    }
    o.push("fired_condition", name);
    o.push("valid_for", "all_parameters");
}

fn cmd_check(a: &CheckArgs) -> Result<Output, CliError> {
    let tol = tolerances(&a.model)?;
    let (model, x, k) = match a.demo {
        Some(name) => {
            let (model, x, k) = demo::check_instance(name, &tol)?;
            (model, x, k)
        }
        None => {
            let spec = a.model.model.as_deref().ok_or_else(|| CliError::Usage("--model or --demo is required".into()))?;
            let loaded = load_model(spec, read_design(&a.model)?, scalars(&a.model), a.model.row_normalize, &tol)?;
            let k = penalty_matrix(&a.model.k, &loaded.x, &tol)?;
            (loaded.model, loaded.x, k)
        }
    };
    if a.all_rho && !matches!(model, CovarianceModel::Sar1 { .. } | CovarianceModel::Sma1 { .. }) {
        return Err(CliError::Usage("--all-rho applies to sar1 and sma1 models".into()));
    }
    let mut o = Output::default();
    o.push("model", model.name());
    o.push("n", x.nrows());
    o.push("k", x.ncols());
    let free = parameter_free(&mut o, &model, &x, &k, &tol)?;

    let unknown = model.unknown().is_some();
    if a.all_rho || unknown {
        match free {
            Some((name, v)) => push_parameter_free_decision(&mut o, name, &v),
            None => unreachable!("explicit models have no unknowns"),
        }
        return Ok(o);
    }

    let omega = build_omega(&model, &tol)?;
    let verdict = match a.method {
        Method::Decomposition => decomposition_check(&omega, &x, &k, &tol)?,
        Method::ColumnSpace | Method::Auto => column_space_check(&omega, &x, &k, &tol)?,
        Method::Oracle => oracle_check(&omega, &x, &k, &tol)?,
    };
    push_verdict(&mut o, &verdict);
    if a.verify {
        let cv = cross_validate(&omega, &x, &k, &tol)?;
        o.push("verify.decomposition", cv.decomposition.equal);
        o.push("verify.column_space", cv.column_space.equal);
        o.push("verify.oracle", cv.oracle.equal);
        o.push("verify.oracle_gap", format_number(cv.oracle.residual));
        o.push("verify.agree", cv.agree);
        if let Some(d) = cv.diagnostic {
            o.push("verify.diagnostic", d);
        }
    }
    Ok(o)
}

fn cmd_estimate(a: &EstimateArgs) -> Result<Output, CliError> {
    let tol = tolerances(&a.model)?;
    let spec = a.model.model.as_deref().ok_or_else(|| CliError::Usage("--model is required".into()))?;
    let loaded = load_model(spec, read_design(&a.model)?, scalars(&a.model), a.model.row_normalize, &tol)?;
    let (model, x) = (loaded.model, loaded.x);
    let y = io::read_vector(&a.y)?;
    if y.len() != x.nrows() {
        return Err(CliError::Core(covfree::Error::Shape(format!("y has length {}, X has {} rows", y.len(), x.nrows()))));
    }
    let k = penalty_matrix(&a.model.k, &x, &tol)?;
    let mut o = Output::default();
    o.push("model", model.name());
    let free = gr_hat_operator_identity(&x, &k)? * &y;
    o.push("beta_cov_free", format_vector(&free));

    if model.unknown().is_none() {
        let omega = build_omega(&model, &tol)?;
        let beta = gr_hat_operator(&x, &omega, &k, &tol)? * &y;
        o.push("beta_gr_omega", format_vector(&beta));
        o.push("gap_gr_omega_vs_free", format_number((&beta - &free).norm()));
    } else if !a.two_step {
        return Err(CliError::Usage(format!(
            "model `{}` has an unknown parameter; supply it or pass --two-step",
            model.name()
        )));
    }
    if a.two_step {
        let fit = two_step_estimate(&model, &y, &x, &k, a.sigma2, &tol)?;
        o.push("beta_two_step", format_vector(&fit.beta));
        if let Some((which, est)) = &fit.fitted {
            let key = match which {
                covfree::models::Unknown::Rho => "rho",
                covfree::models::Unknown::Theta => "theta",
                covfree::models::Unknown::Sigma12 => "sigma12",
                covfree::models::Unknown::DeltaBar => "delta_bar",
            };
            o.push(format!("fitted.{key}"), format_number(est.value));
            o.push("fitted.degenerate", est.degenerate);
        }
        o.push("omega_hat_condition", format_number(linalg::condition_number(&fit.omega_hat)?));
        o.push("gap_two_step_vs_free", format_number((&fit.beta - &free).norm()));
    }
    Ok(o)
}

fn cmd_simulate(a: &SimulateArgs) -> Result<Output, CliError> {
    let tol = Tolerances::default();
    let kv = KeyValues::read(&a.config)?;
    let mut cfg = McConfig::from_key_values(&kv, &tol)?;
    if let Some(t) = a.threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        cfg.threads = Some(t);
    }
    let reports = run_sweep(&cfg, &tol)?;
    let csv = with_extension(&a.out, "csv");
    let table = with_extension(&a.out, "txt");
    fs::write(&csv, reports_to_csv(&reports)).map_err(covfree::Error::from)?;
    fs::write(&table, reports_to_table(&reports)).map_err(covfree::Error::from)?;
    let mut o = Output::default();
    o.push("seed", cfg.seed);
    o.push("replications", cfg.replications);
    o.push("grid_points", reports.len());
    let failed: usize = reports.iter().flat_map(|r| r.records.iter()).map(|r| r.failed).sum();
    o.push("failed_fits", failed);
    o.push("csv", csv.display());
    o.push("table", table.display());
    Ok(o)
}

fn with_extension(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}
