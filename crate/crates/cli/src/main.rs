//! `ssp`: fit, tune and simulate sparse additive models from the command line.

mod config;
mod data;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sparse_additive::model::{self, AdditiveModelSpec, FittedAdditiveModel, KnotPolicy, GAMMA};
use sparse_additive::simulate::{self, ScenarioId, SimScenario, StudyConfig};
use sparse_additive::tuning::{self, GridConfig, TuneResult};
use sparse_additive::{Family, SolverConfig};

use data::{write_atomic, Table};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] sparse_additive::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Core(e) if e.is_input_error() => 2,
            _ => 3,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "ssp", version, about = "Sparse additive models with the sparsity-smoothness penalty")]
struct Cli {
    /// TOML file with default flag values; explicit flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit one model at fixed penalty levels.
    Fit(FitArgs),
    /// Predict from a saved model.
    Predict(PredictArgs),
    /// K-fold cross-validation over a (λ₁, λ₂) grid.
    Cv(CvArgs),
    /// Replicated simulation study on a built-in scenario.
    Simulate(SimulateArgs),
    /// Print the smallest λ₁ giving the all-zero model.
    LambdaMax(LambdaMaxArgs),
    /// Export fitted component curves for plotting.
    Curves(CurvesArgs),
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Response distribution.
    #[arg(long, default_value = "gaussian")]
    family: Family,
    /// Interior knots per predictor (default: round(√n) − 4).
    #[arg(long)]
    knots: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    lambda3: f64,
    #[arg(long, default_value_t = 1e-6)]
    kkt_tol: f64,
    #[arg(long, default_value_t = 10_000)]
    max_sweeps: usize,
}

impl ModelArgs {
    fn spec(&self, lambda1: f64, lambda2: f64) -> AdditiveModelSpec {
        AdditiveModelSpec {
            lambda1,
            lambda2,
            lambda3: self.lambda3,
            weights: None,
            knots: self.knots.map_or(KnotPolicy::SqrtN, KnotPolicy::Interior),
            family: self.family,
            solver: SolverConfig { kkt_tol: self.kkt_tol, max_sweeps: self.max_sweeps, ..SolverConfig::default() },
        }
    }
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    response: String,
    #[arg(long)]
    lambda1: f64,
    #[arg(long)]
    lambda2: f64,
    /// Refit with weights from the ordinary estimate.
    #[arg(long)]
    adaptive: bool,
    #[arg(long, default_value_t = 1.0)]
    gamma_w: f64,
    #[arg(long)]
    out: PathBuf,
    /// Per-component diagnostics CSV (default: next to the model file).
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[arg(long, default_value_t = 100)]
    n_l1: usize,
    #[arg(long, default_value_t = 15)]
    n_l2: usize,
    #[arg(long, default_value_t = 1e-3)]
    l1_ratio: f64,
    /// Smallest λ₂ (default 1e−6 · n^(−4/5)).
    #[arg(long, requires = "l2_max")]
    l2_min: Option<f64>,
    /// Largest λ₂ (default 1e2 · n^(−4/5)).
    #[arg(long, requires = "l2_min")]
    l2_max: Option<f64>,
}

impl GridArgs {
    fn config(&self) -> GridConfig {
        GridConfig {
            n_l1: self.n_l1,
            n_l2: self.n_l2,
            l1_ratio: self.l1_ratio,
            l2_range: self.l2_min.zip(self.l2_max),
        }
    }
}

#[derive(Args, Debug)]
struct CvArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    response: String,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// ex1, ex2, ex3, ex3hf, ex4 or logistic.
    #[arg(long)]
    scenario: ScenarioId,
    /// Covariate mixing parameter for ex3, ex3hf and ex4.
    #[arg(long, default_value_t = 0.0)]
    t: f64,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Override the number of predictors.
    #[arg(long)]
    p: Option<usize>,
    /// Override the training sample size.
    #[arg(long)]
    n: Option<usize>,
    /// Add an adaptive second stage and report PE ratios.
    #[arg(long)]
    adaptive: bool,
    #[arg(long, default_value_t = 1.0)]
    gamma_w: f64,
    /// Monte Carlo sample size for prediction error.
    #[arg(long, default_value_t = 10_000)]
    n_mc: usize,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args, Debug)]
struct LambdaMaxArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    response: String,
    #[arg(long)]
    lambda2: f64,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct CurvesArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    points: usize,
}

fn main() -> ExitCode {
    let args = match config::merge_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Fit(a) => fit(a),
        Command::Predict(a) => predict(a),
        Command::Cv(a) => cv(a),
        Command::Simulate(a) => simulate(a),
        Command::LambdaMax(a) => lambda_max(a),
        Command::Curves(a) => curves(a),
    }
}

fn warn(model: &FittedAdditiveModel) {
    for w in &model.warnings {
        eprintln!("warning: {w}");
    }
}

fn save_model(model: &FittedAdditiveModel, path: &Path) -> Result<(), CliError> {
    let json = model.to_json()?;
    write_atomic(path, |w| w.write_all(json.as_bytes()))
}

fn default_diagnostics_path(model_path: &Path) -> PathBuf {
    let stem = model_path.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
    model_path.with_file_name(format!("{stem}_diagnostics.csv"))
}

/// `τ_n` is reported at `λ = λ₂^{1/(2−γ)}`, i.e. the square root inside the penalty.
fn write_diagnostics(model: &FittedAdditiveModel, path: &Path) -> Result<(), CliError> {
    let lambda = model.spec.lambda2.powf(1.0 / (2.0 - GAMMA));
    write_atomic(path, |w| {
        writeln!(w, "predictor,name,status,active,empirical_norm,curvature,tau_n,kkt_residual,jitter,w1,w2")?;
        for c in &model.components {
            let name = component_name(model, c.index);
            let status = serde_json::to_value(c.status).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
            let kkt = c.kkt_residual.map(|r| r.to_string()).unwrap_or_default();
            let (w1, w2) = c.weights.map_or((String::new(), String::new()), |w| (w.w1.to_string(), w.w2.to_string()));
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{}",
                c.index + 1,
                name,
                status,
                c.is_active(),
                c.empirical_norm,
                c.curvature,
                c.tau_n(lambda),
                kkt,
                c.jitter_used,
                w1,
                w2
            )?;
        }
        Ok(())
    })
}

fn component_name(model: &FittedAdditiveModel, j: usize) -> String {
    model
        .predictor_names
        .as_ref()
        .and_then(|n| n.get(j).cloned())
        .unwrap_or_else(|| format!("x{}", j + 1))
}

fn fit(a: FitArgs) -> Result<(), CliError> {
    let table = Table::read(&a.data)?;
    let (x, y, names) = table.split_response(&a.response)?;
    let spec = a.model.spec(a.lambda1, a.lambda2);
    let mut fitted = model::fit(x.view(), y.view(), &spec)?;
    if a.adaptive {
        let weights = tuning::adaptive_weights(&fitted, a.gamma_w)?;
        let aspec = AdditiveModelSpec { weights: Some(weights), ..spec };
        fitted = model::fit(x.view(), y.view(), &aspec)?;
    }
    fitted.predictor_names = Some(names);
    warn(&fitted);
    save_model(&fitted, &a.out)?;
    let diag = a.diagnostics.unwrap_or_else(|| default_diagnostics_path(&a.out));
    write_diagnostics(&fitted, &diag)
}

fn predict(a: PredictArgs) -> Result<(), CliError> {
    let fitted = FittedAdditiveModel::load(&a.model)?;
    let table = Table::read(&a.data)?;
    let x = match &fitted.predictor_names {
        Some(names) => table.select(names)?,
        None if table.names.len() >= fitted.p => table.data.slice(ndarray::s![.., ..fitted.p]).to_owned(),
        None => return Err(CliError::Input(format!("model needs {} predictor columns", fitted.p))),
    };
    let eta = fitted.predict_linear(x.view())?;
    let pred = fitted.predict(x.view())?;
    write_atomic(&a.out, |w| {
        writeln!(w, "prediction,linear_predictor")?;
        for (p, e) in pred.iter().zip(&eta) {
            writeln!(w, "{p},{e}")?;
        }
        Ok(())
    })
}

fn write_tune_outputs(result: &TuneResult, dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    write_atomic(&dir.join("scores.csv"), |w| result.write_scores_csv(w))?;
    write_atomic(&dir.join("path.csv"), |w| result.write_path_csv(w))?;
    save_model(&result.model, &dir.join("model.json"))?;
    write_diagnostics(&result.model, &dir.join("diagnostics.csv"))
}

fn cv(a: CvArgs) -> Result<(), CliError> {
    let table = Table::read(&a.data)?;
    let (x, y, names) = table.split_response(&a.response)?;
    let spec = a.model.spec(0.0, 0.0);
    let grid = tuning::make_grid(x.view(), y.view(), &spec, &a.grid.config())?;
    let mut result = tuning::kfold_cv(x.view(), y.view(), &grid, &spec, a.folds, a.seed)?;
    result.model.predictor_names = Some(names);
    if result.converged.iter().any(|c| !c) {
        eprintln!("warning: some grid fits stopped before meeting the KKT tolerance");
    }
    warn(&result.model);
    write_tune_outputs(&result, &a.out)?;
    println!("lambda1={} lambda2={}", result.lambda1, result.lambda2);
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let mut scenario = SimScenario::from_id(a.scenario, a.t);
    if let Some(p) = a.p {
        scenario = scenario.with_p(p)?;
    }
    if let Some(n) = a.n {
        scenario = scenario.with_n(n);
    }
    let config = StudyConfig {
        n_reps: a.reps,
        seed: a.seed,
        grid: a.grid.config(),
        spec: AdditiveModelSpec::default(),
        adaptive: a.adaptive.then_some(a.gamma_w),
        n_mc: a.n_mc,
    };
    let report = simulate::run_study(&scenario, &config)?;
    for (r, msg) in &report.failures {
        eprintln!("warning: replicate {r} failed: {msg}");
    }
    std::fs::create_dir_all(&a.out)?;
    write_atomic(&a.out.join("replicates.csv"), |w| report.write_replicates_csv(w))?;
    write_atomic(&a.out.join("summary.csv"), |w| report.write_summary_csv(w))
}

fn lambda_max(a: LambdaMaxArgs) -> Result<(), CliError> {
    let table = Table::read(&a.data)?;
    let (x, y, _) = table.split_response(&a.response)?;
    let spec = a.model.spec(0.0, a.lambda2);
    println!("{}", model::lambda1_max(x.view(), y.view(), &spec)?);
    Ok(())
}

fn file_safe(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn curves(a: CurvesArgs) -> Result<(), CliError> {
    if a.points < 2 {
        return Err(CliError::Input("--points must be at least 2".into()));
    }
    let fitted = FittedAdditiveModel::load(&a.model)?;
    std::fs::create_dir_all(&a.out)?;
    for c in fitted.components.iter().filter(|c| c.is_active()) {
        let Some(basis) = &c.basis else { continue };
        let (lo, hi) = (basis.knots().lower(), basis.knots().upper());
        let name = component_name(&fitted, c.index);
        let path = a.out.join(format!("component_{}_{}.csv", c.index + 1, file_safe(&name)));
        write_atomic(&path, |w| {
            writeln!(w, "x,fhat")?;
            for i in 0..a.points {
                let x = lo + (hi - lo) * i as f64 / (a.points - 1) as f64;
                writeln!(w, "{x},{}", c.eval(x))?;
            }
            Ok(())
        })?;
    }
    Ok(())
}
