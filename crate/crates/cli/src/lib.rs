//! Command-line front end: `simulate`, `fit`, `eval-loglik` and `version`,
//! driven by a JSON run configuration.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use serde_json::Value;

use cmvt::em::{EmTrace, FitOptions, GammaVariant, HasNu0, NuEquation};
use cmvt::minnesota::{fit_type1_minnesota, log_marginal_likelihood_type1_minnesota, MinnesotaHyper};
use cmvt::simulate::{simulate_bvar, ModelKind, RngStream};
use cmvt::type1::{fit_type1, log_marginal_likelihood_type1};
use cmvt::type2::{fit_type2, fit_type2_minnesota, log_likelihood_type2, log_likelihood_type2_minnesota};
use cmvt::{build_design, load_dataset, DesignMatrices, ModelParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl From<cmvt::Error> for CliError {
    fn from(e: cmvt::Error) -> Self {
        use cmvt::Error as E;
        match e {
            E::Io { .. } | E::Parse { .. } | E::Dimension(_) | E::InvalidParams(_) => CliError::Usage(e.to_string()),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModelChoice {
    Type1,
    Type1Minnesota,
    Type2,
    Type2Minnesota,
}

impl ModelChoice {
    fn name(self) -> &'static str {
        match self {
            ModelChoice::Type1 => "type1",
            ModelChoice::Type1Minnesota => "type1-minnesota",
            ModelChoice::Type2 => "type2",
            ModelChoice::Type2Minnesota => "type2-minnesota",
        }
    }

    fn is_minnesota(self) -> bool {
        matches!(self, ModelChoice::Type1Minnesota | ModelChoice::Type2Minnesota)
    }

    fn kind(self) -> ModelKind {
        match self {
            ModelChoice::Type1 | ModelChoice::Type1Minnesota => ModelKind::Type1,
            ModelChoice::Type2 | ModelChoice::Type2Minnesota => ModelKind::Type2,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub endogenous: Option<PathBuf>,
    pub exogenous: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSpec {
    pub n: usize,
    #[serde(default = "one")]
    pub l: usize,
    #[serde(rename = "T")]
    pub t_len: usize,
    /// True parameters; falls back to `init`, then to a built-in VAR.
    pub params: Option<Value>,
}

fn one() -> usize {
    1
}

/// Single JSON document describing a run.
#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelChoice,
    #[serde(default)]
    pub data: DataPaths,
    #[serde(default = "one")]
    pub p: usize,
    /// `"default"` or a parameter object.
    #[serde(default = "default_init")]
    pub init: Value,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub update_nu0: bool,
    #[serde(default)]
    pub nu0_equation: NuEquation,
    #[serde(default)]
    pub gamma_delta_variant: GammaVariant,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Unit-root flags for the Minnesota models (default: all ones).
    pub phi: Option<Vec<u8>>,
    pub simulate: Option<SimulateSpec>,
}

fn default_init() -> Value {
    Value::String("default".into())
}

fn default_tol() -> f64 {
    1e-8
}

fn default_max_iters() -> usize {
    500
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.data.endogenous = cfg.data.endogenous.map(|p| base.join(p));
        cfg.data.exogenous = cfg.data.exogenous.map(|p| base.join(p));
        cfg.output_dir = base.join(&cfg.output_dir);
        Ok(cfg)
    }

    fn apply(&mut self, o: &Overrides) {
        if let Some(m) = o.model {
            self.model = m;
        }
        if let Some(p) = o.p {
            self.p = p;
        }
        if let Some(t) = o.tol {
            self.tol = t;
        }
        if let Some(m) = o.max_iters {
            self.max_iters = m;
        }
        if o.update_nu0 {
            self.update_nu0 = true;
        }
        if let Some(e) = o.nu0_equation {
            self.nu0_equation = e.into();
        }
        if let Some(g) = o.gamma_delta_variant {
            self.gamma_delta_variant = g.into();
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(d) = &o.output_dir {
            self.output_dir = d.clone();
        }
        if let Some(e) = &o.endogenous {
            self.data.endogenous = Some(e.clone());
        }
        if let Some(e) = &o.exogenous {
            self.data.exogenous = Some(e.clone());
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(CliError::Usage(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            tol: self.tol,
            max_iters: self.max_iters,
            update_nu0: self.update_nu0,
            nu0_equation: self.nu0_equation,
            gamma_variant: self.gamma_delta_variant,
            ..FitOptions::default()
        }
    }

    fn design(&self) -> CliResult<DesignMatrices> {
        let endo = self
            .data
            .endogenous
            .as_deref()
            .ok_or_else(|| CliError::Usage("config has no data.endogenous path".into()))?;
        let data = load_dataset(endo, self.data.exogenous.as_deref(), self.p)?;
        Ok(build_design(&data))
    }

    fn phi(&self, n: usize) -> CliResult<Vec<u8>> {
        match &self.phi {
            Some(phi) if phi.len() != n => Err(CliError::Usage(format!(
                "phi has {} entries but the data have {n} variables",
                phi.len()
            ))),
            Some(phi) => Ok(phi.clone()),
            None => Ok(vec![1; n]),
        }
    }
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum NuEquationArg {
    Eq26,
    Eq27,
}

impl From<NuEquationArg> for NuEquation {
    fn from(a: NuEquationArg) -> Self {
        match a {
            NuEquationArg::Eq26 => NuEquation::Eq26,
            NuEquationArg::Eq27 => NuEquation::Eq27,
        }
    }
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum GammaArg {
    Consistent,
    Printed,
}

impl From<GammaArg> for GammaVariant {
    fn from(a: GammaArg) -> Self {
        match a {
            GammaArg::Consistent => GammaVariant::Consistent,
            GammaArg::Printed => GammaVariant::Printed,
        }
    }
}

/// Flags that override individual config keys.
#[derive(Debug, Args)]
struct Overrides {
    #[arg(long)]
    model: Option<ModelChoice>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    update_nu0: bool,
    #[arg(long, value_enum)]
    nu0_equation: Option<NuEquationArg>,
    #[arg(long, value_enum)]
    gamma_delta_variant: Option<GammaArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    endogenous: Option<PathBuf>,
    #[arg(long)]
    exogenous: Option<PathBuf>,
}

#[derive(Debug, Parser)]
#[command(name = "cmvt", about = "EM estimation for Type I / Type II matrix-variate t BVAR models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a dataset and write it with its true parameters.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run EM and write params.json, trace.csv and report.txt.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Print the log-likelihood of the data at the given parameters.
    EvalLoglik {
        #[arg(long)]
        config: PathBuf,
        /// Parameter file (as written by `fit`); defaults to the config's `init`.
        #[arg(long)]
        params: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Print the version.
    Version,
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let pool = match thread_pool() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let result = pool.install(|| dispatch(cli.command));
    match result {
        Ok(out) => {
            print!("{out}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn thread_pool() -> CliResult<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("CMVT_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage(format!("CMVT_THREADS must be a positive integer, got {v:?}")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))
}

fn load_config(path: &Path, overrides: &Overrides) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::from_file(path)?;
    cfg.apply(overrides);
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(cmd: Command) -> CliResult<String> {
    match cmd {
        Command::Version => Ok(format!("cmvt {}\n", env!("CARGO_PKG_VERSION"))),
        Command::Simulate { config, overrides } => simulate(&load_config(&config, &overrides)?),
        Command::Fit { config, overrides } => fit(&load_config(&config, &overrides)?),
        Command::EvalLoglik {
            config,
            params,
            overrides,
        } => eval_loglik(&load_config(&config, &overrides)?, params.as_deref()),
    }
}

/// Initial values for one of the two parameterizations.
enum Start {
    General(ModelParams),
    Minnesota(MinnesotaHyper),
}

fn parse_start(value: &Value, model: ModelChoice) -> CliResult<Start> {
    let bad = |e: serde_json::Error| CliError::Usage(format!("invalid parameter block for {}: {e}", model.name()));
    if model.is_minnesota() {
        Ok(Start::Minnesota(serde_json::from_value(value.clone()).map_err(bad)?))
    } else {
        Ok(Start::General(serde_json::from_value(value.clone()).map_err(bad)?))
    }
}

fn start_values(cfg: &RunConfig, design: &DesignMatrices) -> CliResult<Start> {
    match &cfg.init {
        Value::String(s) if s == "default" => {
            if cfg.model.is_minnesota() {
                Ok(Start::Minnesota(MinnesotaHyper::default_init(design, cfg.phi(design.n())?)?))
            } else {
                Ok(Start::General(ModelParams::default_init(design)?))
            }
        }
        Value::Object(_) => parse_start(&cfg.init, cfg.model),
        other => Err(CliError::Usage(format!("init must be \"default\" or an object, got {other}"))),
    }
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))
}

fn to_json<S: serde::Serialize>(v: &S) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("parameters serialize");
    s.push('\n');
    s
}

struct FitOutcome {
    params_json: String,
    trace_csv: String,
    summary: TraceSummary,
}

struct TraceSummary {
    iterations: usize,
    initial: f64,
    final_loglik: f64,
    converged: bool,
    stop_reason: String,
    failure: Option<String>,
    final_nu0: f64,
}

fn summarize<P: HasNu0>(trace: &EmTrace<P>) -> TraceSummary {
    TraceSummary {
        iterations: trace.entries.len() - 1,
        initial: trace.entries[0].loglik,
        final_loglik: trace.final_loglik(),
        converged: trace.converged,
        stop_reason: serde_json::to_value(trace.stop_reason)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default(),
        failure: trace.failure.clone(),
        final_nu0: trace.entries.last().map_or(f64::NAN, |e| e.params.nu0()),
    }
}

fn run_fit(cfg: &RunConfig, design: &DesignMatrices) -> CliResult<FitOutcome> {
    let opts = cfg.fit_options();
    let outcome = match (start_values(cfg, design)?, cfg.model) {
        (Start::General(init), ModelChoice::Type1) => {
            let (fit, trace) = fit_type1(init, design, &opts)?;
            (to_json(&fit), trace.to_csv(), summarize(&trace))
        }
        (Start::General(init), ModelChoice::Type2) => {
            let (fit, trace) = fit_type2(init, design, &opts)?;
            (to_json(&fit), trace.to_csv(), summarize(&trace))
        }
        (Start::Minnesota(init), ModelChoice::Type1Minnesota) => {
            let (fit, trace) = fit_type1_minnesota(init, design, &opts)?;
            (to_json(&fit), trace.to_csv(), summarize(&trace))
        }
        (Start::Minnesota(init), ModelChoice::Type2Minnesota) => {
            let (fit, trace) = fit_type2_minnesota(init, design, &opts)?;
            (to_json(&fit), trace.to_csv(), summarize(&trace))
        }
        _ => unreachable!("start values always match the model family"),
    };
    Ok(FitOutcome {
        params_json: outcome.0,
        trace_csv: outcome.1,
        summary: outcome.2,
    })
}

fn report(cfg: &RunConfig, design: &DesignMatrices, s: &TraceSummary) -> String {
    let mut r = String::new();
    let path_or_none = |p: &Option<PathBuf>| p.as_ref().map_or("(none)".to_string(), |p| p.display().to_string());
    let _ = writeln!(r, "cmvt fit report");
    let _ = writeln!(r);
    let _ = writeln!(r, "model                 {}", cfg.model.name());
    let _ = writeln!(r, "endogenous            {}", path_or_none(&cfg.data.endogenous));
    let _ = writeln!(r, "exogenous             {}", path_or_none(&cfg.data.exogenous));
    let _ = writeln!(
        r,
        "dimensions            n = {}, l = {}, p = {}, d = {}, T = {}",
        design.n(),
        design.l(),
        design.p(),
        design.d(),
        design.t_len()
    );
    let _ = writeln!(r);
    let _ = writeln!(r, "variant flags");
    let _ = writeln!(r, "  update-nu0          {}", cfg.update_nu0);
    let _ = writeln!(r, "  nu0-equation        {}", enum_name(&cfg.nu0_equation));
    let _ = writeln!(r, "  gamma-delta-variant {}", enum_name(&cfg.gamma_delta_variant));
    let _ = writeln!(r, "  tol                 {:e}", cfg.tol);
    let _ = writeln!(r, "  max-iters           {}", cfg.max_iters);
    if cfg.model.is_minnesota() {
        let phi = cfg.phi(design.n()).unwrap_or_default();
        let _ = writeln!(r, "  phi                 {phi:?}");
    }
    let _ = writeln!(r);
    let _ = writeln!(r, "iterations            {}", s.iterations);
    let _ = writeln!(r, "stop reason           {}", s.stop_reason);
    let _ = writeln!(r, "converged             {}", s.converged);
    let _ = writeln!(r, "initial loglik        {:?}", s.initial);
    let _ = writeln!(r, "final loglik          {:?}", s.final_loglik);
    let _ = writeln!(r, "final nu0             {:?}", s.final_nu0);
    if let Some(f) = &s.failure {
        let _ = writeln!(r, "failure               {f}");
    }
    r
}

fn enum_name<S: serde::Serialize>(v: &S) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()
}

fn fit(cfg: &RunConfig) -> CliResult<String> {
    let design = cfg.design()?;
    let out = run_fit(cfg, &design)?;
    create_dir(&cfg.output_dir)?;
    write_file(&cfg.output_dir.join("params.json"), &out.params_json)?;
    write_file(&cfg.output_dir.join("trace.csv"), &out.trace_csv)?;
    write_file(&cfg.output_dir.join("report.txt"), &report(cfg, &design, &out.summary))?;
    if let Some(f) = &out.summary.failure {
        return Err(CliError::Numeric(format!(
            "EM stopped after {} iterations: {f}",
            out.summary.iterations
        )));
    }
    Ok(format!(
        "{} iterations, final loglik {:?}; wrote {}\n",
        out.summary.iterations,
        out.summary.final_loglik,
        cfg.output_dir.display()
    ))
}

fn eval_loglik(cfg: &RunConfig, params: Option<&Path>) -> CliResult<String> {
    let design = cfg.design()?;
    let start = match params {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
            let value: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("invalid JSON in {}: {e}", path.display())))?;
            parse_start(&value, cfg.model)?
        }
        None => start_values(cfg, &design)?,
    };
    let value = match (start, cfg.model) {
        (Start::General(p), ModelChoice::Type1) => log_marginal_likelihood_type1(&p, &design)?,
        (Start::General(p), ModelChoice::Type2) => log_likelihood_type2(&p, &design)?,
        (Start::Minnesota(h), ModelChoice::Type1Minnesota) => log_marginal_likelihood_type1_minnesota(&h, &design)?,
        (Start::Minnesota(h), ModelChoice::Type2Minnesota) => log_likelihood_type2_minnesota(&h, &design)?,
        _ => unreachable!("start values always match the model family"),
    };
    Ok(format!("{value:?}\n"))
}

/// VAR used by `simulate` when no parameters are supplied: intercept 0.2,
/// own first lag 0.5, small coefficient variances, `E[Σ] = 0.3 I`.
fn builtin_truth(n: usize, l: usize, p: usize) -> CliResult<ModelParams> {
    let d = l + n * p;
    let mut pi0 = DMatrix::zeros(n, d);
    for i in 0..n {
        pi0[(i, 0)] = 0.2;
        if p > 0 {
            pi0[(i, l + i)] = 0.5;
        }
    }
    let lambda0 = DVector::from_fn(d, |k, _| if k < l { 0.1 } else { 0.01 });
    let nu0 = n as f64 + 4.0;
    let v0 = DMatrix::identity(n, n) * (0.3 * 3.0);
    Ok(ModelParams::new(DVector::from_column_slice(pi0.as_slice()), lambda0, nu0, v0)?)
}

fn simulate(cfg: &RunConfig) -> CliResult<String> {
    let spec = cfg
        .simulate
        .as_ref()
        .ok_or_else(|| CliError::Usage("config has no simulate block".into()))?;
    if spec.l == 0 || spec.n == 0 || spec.t_len == 0 {
        return Err(CliError::Usage("simulate needs n, l, T >= 1".into()));
    }
    let supplied = spec.params.as_ref().or(match &cfg.init {
        Value::Object(_) => Some(&cfg.init),
        _ => None,
    });
    let (truth, sidecar) = match supplied {
        Some(v) => match parse_start(v, cfg.model)? {
            Start::General(p) => (p.clone(), to_json(&p)),
            Start::Minnesota(h) => (h.induced_params(cfg.p)?, to_json(&h)),
        },
        None => {
            let p = builtin_truth(spec.n, spec.l, cfg.p)?;
            (p.clone(), to_json(&p))
        }
    };
    if truth.n() != spec.n || truth.d() != spec.l + spec.n * cfg.p {
        return Err(CliError::Usage(format!(
            "parameters have n = {}, d = {}; simulate block implies n = {}, d = {}",
            truth.n(),
            truth.d(),
            spec.n,
            spec.l + spec.n * cfg.p
        )));
    }
    let rng = RngStream::new(cfg.seed);
    let mut aux = rng.split(u64::MAX - 1);
    let mut exo = DMatrix::from_element(spec.l, spec.t_len, 1.0);
    for r in 1..spec.l {
        for t in 0..spec.t_len {
            exo[(r, t)] = aux.standard_normal();
        }
    }
    let pre = DMatrix::zeros(spec.n, cfg.p);
    let data = simulate_bvar(&truth, cfg.p, cfg.model.kind(), &exo, &pre, &rng)?;

    create_dir(&cfg.output_dir)?;
    let endo = cfg.output_dir.join("endogenous.csv");
    let exo_path = cfg.output_dir.join("exogenous.csv");
    let written = cmvt::dataio::write_dataset(&data, &endo, &exo_path)?;
    write_file(&cfg.output_dir.join("true_params.json"), &sidecar)?;
    let mut out = format!("wrote {}\n", endo.display());
    if let Some(p) = written {
        let _ = writeln!(out, "wrote {}", p.display());
    }
    let _ = writeln!(out, "wrote {}", cfg.output_dir.join("true_params.json").display());
    Ok(out)
}
