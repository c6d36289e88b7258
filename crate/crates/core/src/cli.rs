//! Command-line workbench: `simulate`, `fit`, `predict`, `evaluate`, `bench`.
//!
//! Exit codes: 0 success, 2 usage or configuration, 3 data, 4 model mismatch.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bench::{fitted_scaling_ratio, run_bench, write_bench_file, BenchConfig};
use crate::constraints::{
    build_constraint_points, evaluate_constraints_with_tolerance, fit_constrained, ConstraintConfig, ConstraintReport,
    ConstraintRule, DEFAULT_REPORT_TOLERANCE,
};
use crate::error::Error;
use crate::gp::{
    evaluate, fit_staged, load_model, save_model, FitConfig, KernelFamily, MultiTaskGP, SolverKind, TrainingSet,
    TrajectoryPoint,
};
use crate::manifest::RunManifest;
use crate::markov::{
    bin_many, estimate_empirical, read_sequences_csv, write_sequences_csv, MobilityState, StateSequence,
    TimeBinScheme, TransitionDataset, TASK_NAMES,
};
use crate::plot::{Chart, Series};
use crate::synth::{simulate_population, SimulationConfig, TransitionFunctionSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_MISMATCH: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { code: EXIT_DATA, message: message.into() }
    }

    pub fn mismatch(message: impl Into<String>) -> Self {
        Self { code: EXIT_MISMATCH, message: message.into() }
    }
}

/// Default exit code of a library error outside any file-specific context.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::ModelMismatch(_) => EXIT_MISMATCH,
        Error::InvalidConfig(_) | Error::InvalidCount(_) | Error::Io(_) | Error::Json(_) => EXIT_USAGE,
        Error::EmptyInput(_)
        | Error::InvalidSequence(_)
        | Error::InvalidTransitionMatrix { .. }
        | Error::NotRegularGrid { .. }
        | Error::DimensionError { .. }
        | Error::SingularFactor { .. }
        | Error::MaxIterations { .. }
        | Error::NotPositiveDefinite { .. }
        | Error::OptimizationFailed { .. }
        | Error::DegenerateData(_)
        | Error::NegativeVariance(_)
        | Error::Csv(_) => EXIT_DATA,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self { code: exit_code(&e), message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::usage(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Errors while parsing a data file are data errors; a missing file is usage.
fn in_data_file(path: &Path) -> impl Fn(Error) -> CliError + '_ {
    move |e| match e {
        Error::Io(_) => CliError::usage(format!("{}: {e}", path.display())),
        Error::ModelMismatch(_) => CliError::mismatch(format!("{}: {e}", path.display())),
        _ => CliError::data(format!("{}: {e}", path.display())),
    }
}

/// An unreadable or inconsistent model document is a model mismatch.
fn in_model_file(path: &Path) -> impl Fn(Error) -> CliError + '_ {
    move |e| match e {
        Error::Io(_) => CliError::usage(format!("{}: {e}", path.display())),
        _ => CliError::mismatch(format!("{}: {e}", path.display())),
    }
}

#[derive(Parser, Debug)]
#[command(name = "mobgp", version, about = "Multi-task GP estimation of weekly move/pause transition probabilities")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct GlobalArgs {
    /// Seed for every random draw of the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for parallel prediction.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[arg(long, global = true, env = "MOBGP_OUT", default_value = "mobgp-out")]
    #[serde(skip)]
    pub out_dir: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample move/pause sequences from a transition-function spec.
    Simulate(SimulateArgs),
    /// Bin sequences and fit a (constrained) multi-task GP.
    Fit(FitArgs),
    /// Posterior mean and variance of a saved model.
    Predict(PredictArgs),
    /// Score models against a truth spec or held-out data; writes plots.
    Evaluate(EvaluateArgs),
    /// Time structured against dense covariance algebra.
    Bench(BenchArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverArg {
    Dense,
    Structured,
}

impl From<SolverArg> for SolverKind {
    fn from(s: SolverArg) -> Self {
        match s {
            SolverArg::Dense => SolverKind::Dense,
            SolverArg::Structured => SolverKind::Structured,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelArg {
    Rbf,
    Matern32,
}

impl From<KernelArg> for KernelFamily {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Rbf => KernelFamily::Rbf,
            KernelArg::Matern32 => KernelFamily::Matern32,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseArg {
    Shared,
    PerTask,
}

/// `off`, `bins` or `uniform:N`.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ConstraintsArg {
    Off,
    Rule(ConstraintRule),
}

fn parse_constraints(s: &str) -> std::result::Result<ConstraintsArg, String> {
    if s == "off" {
        Ok(ConstraintsArg::Off)
    } else {
        s.parse().map(ConstraintsArg::Rule)
    }
}

fn parse_bins(s: &str) -> std::result::Result<u32, String> {
    match s {
        "1" | "2" | "4" => Ok(s.parse().expect("digit")),
        _ => Err(format!("bins per hour must be 1, 2 or 4 (got {s})")),
    }
}

fn parse_state(s: &str) -> std::result::Result<MobilityState, String> {
    MobilityState::from_code(s).map_err(|e| e.to_string())
}

#[derive(Args, Debug, Serialize)]
pub struct SimulateArgs {
    /// Transition-function spec (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub weeks: u32,
    #[arg(long, default_value_t = 4)]
    pub steps_per_hour: u32,
    /// Independent individuals, each on its own random stream.
    #[arg(long, default_value_t = 1)]
    pub people: usize,
    #[arg(long, default_value = "P", value_parser = parse_state)]
    pub initial_state: MobilityState,
}

#[derive(Args, Debug, Serialize)]
pub struct FitArgs {
    /// State sequences (`person_id,timestamp,state`) or binned transitions.
    #[arg(long)]
    pub data: PathBuf,
    /// Defaults to 1 for sequence input and to the file's grid for binned input.
    #[arg(long, value_parser = parse_bins)]
    pub bins_per_hour: Option<u32>,
    #[arg(long, value_enum, default_value = "structured")]
    pub solver: SolverArg,
    #[arg(long, default_value = "bins", value_parser = parse_constraints)]
    pub constraints: ConstraintsArg,
    #[arg(long, default_value_t = 10.0)]
    pub penalty_weight: f64,
    #[arg(long, default_value_t = 10.0)]
    pub penalty_multiplier: f64,
    #[arg(long, default_value_t = 3)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0.0)]
    pub nonneg_margin: f64,
    #[arg(long, default_value_t = DEFAULT_REPORT_TOLERANCE)]
    pub report_tolerance: f64,
    /// Adam iterations per penalty stage.
    #[arg(long, default_value_t = 500)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0.05)]
    pub learning_rate: f64,
    /// Quasi-Newton iterations after each Adam stage.
    #[arg(long, default_value_t = 0)]
    pub refine_iterations: usize,
    #[arg(long, value_enum, default_value = "rbf")]
    pub kernel: KernelArg,
    #[arg(long, value_enum, default_value = "per-task")]
    pub noise: NoiseArg,
    /// Do not wrap the kernel around the week.
    #[arg(long)]
    pub non_periodic: bool,
    /// Fit a diagonal task covariance (no information sharing).
    #[arg(long)]
    pub independent_tasks: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Expected grid of the model; a different one is a mismatch.
    #[arg(long, value_parser = parse_bins)]
    pub bins_per_hour: Option<u32>,
    /// Query hours; defaults to a regular grid over the week.
    #[arg(long, value_delimiter = ',')]
    pub hours: Option<Vec<f64>>,
    /// Queries per bin of the model grid when `--hours` is absent.
    #[arg(long, default_value_t = 1)]
    pub points_per_bin: usize,
}

#[derive(Args, Debug, Serialize)]
#[command(group(ArgGroup::new("reference").required(true).args(["truth", "holdout"])))]
pub struct EvaluateArgs {
    /// One or more saved models, e.g. a discretization sweep.
    #[arg(long, required = true, num_args = 1..)]
    pub model: Vec<PathBuf>,
    /// Ground-truth transition-function spec.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Held-out sequences or binned transitions.
    #[arg(long)]
    pub holdout: Option<PathBuf>,
    /// Expected grid of every model; a different one is a mismatch.
    #[arg(long, value_parser = parse_bins)]
    pub bins_per_hour: Option<u32>,
    #[arg(long, default_value_t = 4)]
    pub plot_points_per_bin: usize,
    #[arg(long, default_value_t = DEFAULT_REPORT_TOLERANCE)]
    pub report_tolerance: f64,
}

#[derive(Args, Debug, Serialize)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "1024,2048,4096,8192,16384")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub repetitions: usize,
    /// Skip the solve, Kronecker and likelihood comparisons.
    #[arg(long)]
    pub matvec_only: bool,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    let g = &cli.global;
    if g.threads == 0 {
        return Err(CliError::usage("--threads must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(g.threads)
        .build()
        .map_err(|e| CliError::usage(e.to_string()))?;
    fs::create_dir_all(&g.out_dir)
        .map_err(|e| CliError::usage(format!("cannot create {}: {e}", g.out_dir.display())))?;
    pool.install(|| match &cli.command {
        Command::Simulate(a) => cmd_simulate(g, a),
        Command::Fit(a) => cmd_fit(g, a),
        Command::Predict(a) => cmd_predict(g, a),
        Command::Evaluate(a) => cmd_evaluate(g, a),
        Command::Bench(a) => cmd_bench(g, a),
    })
}

fn config_json(g: &GlobalArgs, args: &impl Serialize) -> serde_json::Value {
    serde_json::json!({
        "global": serde_json::to_value(g).unwrap_or_default(),
        "args": serde_json::to_value(args).unwrap_or_default(),
    })
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::usage(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
    w.write_record(header).map_err(Error::from)?;
    for r in rows {
        w.write_record(&r).map_err(Error::from)?;
    }
    w.flush()?;
    Ok(())
}

fn num(x: f64) -> String {
    x.to_string()
}

fn svg(path: &Path, chart: &Chart) -> CliResult<()> {
    fs::write(path, chart.render())?;
    Ok(())
}

fn cmd_simulate(g: &GlobalArgs, a: &SimulateArgs) -> CliResult<()> {
    let text = fs::read_to_string(&a.spec)
        .map_err(|e| CliError::usage(format!("cannot read spec {}: {e}", a.spec.display())))?;
    let spec = TransitionFunctionSpec::from_json(&text)
        .map_err(|e| CliError::usage(format!("malformed spec {}: {e}", a.spec.display())))?;
    let mut cfg = SimulationConfig::new(a.weeks, a.steps_per_hour, g.seed);
    cfg.initial_state = a.initial_state;
    cfg.validate()?;
    if a.people == 0 {
        return Err(CliError::usage("--people must be at least 1"));
    }
    let mut manifest = RunManifest::start("simulate", config_json(g, a), g.seed);
    let t = Instant::now();
    let seqs = simulate_population(&spec, &cfg, a.people)?;
    manifest.timing("simulate", elapsed_ms(t));
    let file = fs::File::create(g.out_dir.join("states.csv"))?;
    write_sequences_csv(std::io::BufWriter::new(file), &seqs)?;
    manifest.output("states.csv");
    manifest.finish(&g.out_dir)?;
    let states: usize = seqs.iter().map(StateSequence::len).sum();
    println!("simulated {states} states for {} people", seqs.len());
    Ok(())
}

enum DataFile {
    Sequences(Vec<StateSequence>),
    Transitions(TransitionDataset),
}

fn read_data_file(path: &Path) -> CliResult<DataFile> {
    let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    let header = text.lines().next().unwrap_or("").trim();
    let ctx = in_data_file(path);
    if header.starts_with("person_id") {
        Ok(DataFile::Sequences(read_sequences_csv(text.as_bytes()).map_err(&ctx)?))
    } else if header.starts_with("bin") {
        Ok(DataFile::Transitions(TransitionDataset::read_csv(text.as_bytes()).map_err(&ctx)?))
    } else {
        Err(CliError::data(format!("{}: unrecognised header {header:?}", path.display())))
    }
}

fn transitions_csv(path: &Path, ds: &TransitionDataset) -> CliResult<()> {
    let file = fs::File::create(path)?;
    ds.write_csv(std::io::BufWriter::new(file))?;
    Ok(())
}

#[derive(Serialize)]
struct FitSummary {
    bins_per_hour: u32,
    training_rows: usize,
    observed_bins: usize,
    observations: usize,
    constraints: ConstraintsArg,
    constraint_points: usize,
    penalty_schedule: Vec<f64>,
    solver_requested: SolverKind,
    solver_used: SolverKind,
    jitter: f64,
    iterations_recorded: usize,
    initial_nll: f64,
    final_nll: f64,
    final_objective: f64,
    initial_loss: f64,
    final_loss: f64,
    lengthscale: f64,
    signal_variance: f64,
    task_covariance: Vec<Vec<f64>>,
    noise_variance: Vec<f64>,
}

fn cmd_fit(g: &GlobalArgs, a: &FitArgs) -> CliResult<()> {
    let mut manifest = RunManifest::start("fit", config_json(g, a), g.seed);
    let ds = match read_data_file(&a.data)? {
        DataFile::Sequences(seqs) => {
            let scheme = TimeBinScheme::new(a.bins_per_hour.unwrap_or(1))?;
            estimate_empirical(&bin_many(&seqs, scheme))
        }
        DataFile::Transitions(ds) => {
            if let Some(b) = a.bins_per_hour.filter(|&b| b != ds.scheme().bins_per_hour()) {
                return Err(CliError::usage(format!(
                    "--bins-per-hour {b} does not match the {} bins per hour of {}",
                    ds.scheme().bins_per_hour(),
                    a.data.display()
                )));
            }
            ds
        }
    };
    let scheme = ds.scheme();
    println!("training rows: {}", ds.rows().len());
    transitions_csv(&g.out_dir.join("transitions.csv"), &ds)?;
    manifest.output("transitions.csv");
    if ds.observed_bins() < 2 {
        return Err(CliError::data(format!(
            "degenerate data: {} observed bins, at least 2 are required",
            ds.observed_bins()
        )));
    }
    let data = TrainingSet::from_dataset(&ds);
    let fit_cfg = FitConfig {
        iterations: a.iterations,
        learning_rate: a.learning_rate,
        kernel: a.kernel.into(),
        periodic: !a.non_periodic,
        per_task_noise: a.noise == NoiseArg::PerTask,
        solver: a.solver.into(),
        independent_tasks: a.independent_tasks,
        refine_iterations: a.refine_iterations,
        init: None,
    };
    let ccfg = ConstraintConfig {
        penalty_weight: a.penalty_weight,
        multiplier: a.penalty_multiplier,
        restarts: a.restarts,
        nonneg_margin: a.nonneg_margin,
        report_tolerance: a.report_tolerance,
    };
    ccfg.validate()?;
    let points = match &a.constraints {
        ConstraintsArg::Off => None,
        ConstraintsArg::Rule(r) => Some(build_constraint_points(scheme, r.clone())?),
    };

    let t = Instant::now();
    let (model, trajectory, initial_nll, final_nll, final_objective, schedule) = match &points {
        None => {
            let o = fit_staged(&data, &fit_cfg, None)?;
            (o.model, o.trajectory, o.initial_nll, o.final_nll, o.final_objective, Vec::new())
        }
        Some(p) => {
            let o = fit_constrained(&data, p, &ccfg, &fit_cfg)?;
            (o.model, o.trajectory, o.initial_nll, o.final_nll, o.final_objective, ccfg.schedule())
        }
    };
    manifest.timing("fit", elapsed_ms(t));

    let model_path = g.out_dir.join("model.json");
    save_model(&model, &model_path)?;
    manifest.output("model.json");
    // everything downstream uses the document as written
    let model = load_model(&model_path).map_err(in_model_file(&model_path))?;

    write_loss_csv(&g.out_dir.join("loss.csv"), &trajectory)?;
    manifest.output("loss.csv");
    let mut chart = Chart::new("Loss progression", "iteration", "objective");
    chart.push(Series::line("objective", trajectory.iter().map(|p| (p.iteration as f64, p.objective)).collect()));
    chart.push(Series::line("nll", trajectory.iter().map(|p| (p.iteration as f64, p.nll)).collect()));
    svg(&g.out_dir.join("loss.svg"), &chart)?;
    manifest.output("loss.svg");

    let report_points = match points {
        Some(p) => p,
        None => build_constraint_points(scheme, ConstraintRule::TrainingBins)?,
    };
    let report = evaluate_constraints_with_tolerance(&model, &report_points, a.report_tolerance)?;
    manifest.timing("constraint_report", report.wall_time_ms);
    write_json(&g.out_dir.join("constraint_report.json"), &report)?;
    manifest.output("constraint_report.json");

    let h = model.hyper();
    let kf = model.task_covariance();
    let summary = FitSummary {
        bins_per_hour: scheme.bins_per_hour(),
        training_rows: ds.rows().len(),
        observed_bins: ds.observed_bins(),
        observations: data.observations().len(),
        constraints: a.constraints.clone(),
        constraint_points: report_points.len(),
        penalty_schedule: schedule,
        solver_requested: model.requested_solver(),
        solver_used: model.solver(),
        jitter: model.jitter(),
        iterations_recorded: trajectory.len(),
        initial_nll,
        final_nll,
        final_objective,
        initial_loss: trajectory.first().map_or(f64::NAN, |p| p.objective),
        final_loss: trajectory.last().map_or(f64::NAN, |p| p.objective),
        lengthscale: h.kernel.lengthscale,
        signal_variance: h.kernel.signal_variance,
        task_covariance: (0..kf.nrows()).map(|r| kf.row(r).iter().copied().collect()).collect(),
        noise_variance: (0..h.tasks()).map(|l| h.noise.variance(l)).collect(),
    };
    write_json(&g.out_dir.join("fit_summary.json"), &summary)?;
    manifest.output("fit_summary.json");
    manifest.finish(&g.out_dir)?;
    println!(
        "nll {initial_nll:.6} -> {final_nll:.6}; mean stochasticity violation {:.3e}",
        report.mean_stochasticity_violation()
    );
    Ok(())
}

pub const LOSS_HEADER: [&str; 5] = ["iteration", "stage", "penalty_weight", "objective", "nll"];

fn write_loss_csv(path: &Path, trajectory: &[TrajectoryPoint]) -> CliResult<()> {
    write_csv(
        path,
        &LOSS_HEADER,
        trajectory.iter().map(|p| {
            vec![
                p.iteration.to_string(),
                p.stage.to_string(),
                num(p.penalty_weight),
                num(p.objective),
                num(p.nll),
            ]
        }),
    )
}

fn model_scheme(model: &MultiTaskGP, path: &Path, expected: Option<u32>) -> CliResult<TimeBinScheme> {
    let scheme = model
        .data()
        .scheme
        .ok_or_else(|| CliError::mismatch(format!("{}: model has no weekly grid", path.display())))?;
    if let Some(b) = expected.filter(|&b| b != scheme.bins_per_hour()) {
        return Err(CliError::mismatch(format!(
            "{}: model has {} bins per hour, expected {b}",
            path.display(),
            scheme.bins_per_hour()
        )));
    }
    if model.hyper().tasks() != TASK_NAMES.len() {
        return Err(CliError::mismatch(format!("{}: model does not have the four transition tasks", path.display())));
    }
    Ok(scheme)
}

fn week_grid(scheme: TimeBinScheme, per_bin: usize) -> Vec<f64> {
    let step = scheme.bin_width_hours() / per_bin as f64;
    (0..scheme.total_bins() * per_bin).map(|k| (k as f64 + 0.5) * step).collect()
}

fn cmd_predict(g: &GlobalArgs, a: &PredictArgs) -> CliResult<()> {
    if a.points_per_bin == 0 {
        return Err(CliError::usage("--points-per-bin must be at least 1"));
    }
    let mut manifest = RunManifest::start("predict", config_json(g, a), g.seed);
    let model = load_model(&a.model).map_err(in_model_file(&a.model))?;
    let scheme = model_scheme(&model, &a.model, a.bins_per_hour)?;
    let queries = match &a.hours {
        Some(h) => {
            if h.iter().any(|x| !x.is_finite()) {
                return Err(CliError::usage("query hours must be finite"));
            }
            h.clone()
        }
        None => week_grid(scheme, a.points_per_bin),
    };
    let t = Instant::now();
    let preds = model.predict(&queries)?;
    manifest.timing("predict", elapsed_ms(t));
    write_csv(
        &g.out_dir.join("predictions.csv"),
        &["hour", "task", "mean", "variance"],
        preds.iter().flat_map(|p| {
            TASK_NAMES
                .iter()
                .enumerate()
                .map(|(l, name)| vec![num(p.input), name.to_string(), num(p.mean[l]), num(p.variance[l])])
                .collect::<Vec<_>>()
        }),
    )?;
    manifest.output("predictions.csv");
    manifest.finish(&g.out_dir)?;
    println!("predicted {} points", preds.len());
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TaskMetrics {
    pub task: String,
    pub rmse: f64,
    pub mae: f64,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelMetrics {
    pub label: String,
    pub model: String,
    pub bins_per_hour: u32,
    /// Trained on every bin of its grid.
    pub grid_based: bool,
    pub tasks: Vec<TaskMetrics>,
    pub rmse_mean: f64,
    pub mae_mean: f64,
    pub final_nll: f64,
    pub nll_per_observation: f64,
    pub constraint_report: ConstraintReport,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalMetrics {
    pub reference: String,
    pub reference_path: String,
    pub models: Vec<ModelMetrics>,
}

/// RMSE and MAE per task over `(task index, mean, target)` rows, in row order.
pub fn task_metrics(rows: &[(usize, f64, f64)]) -> Vec<TaskMetrics> {
    TASK_NAMES
        .iter()
        .enumerate()
        .map(|(l, name)| {
            let mut sq = 0.0;
            let mut abs = 0.0;
            let mut n = 0usize;
            for &(task, m, t) in rows {
                if task == l {
                    sq += (m - t) * (m - t);
                    abs += (m - t).abs();
                    n += 1;
                }
            }
            let (rmse, mae) = if n == 0 { (f64::NAN, f64::NAN) } else { ((sq / n as f64).sqrt(), abs / n as f64) };
            TaskMetrics { task: name.to_string(), rmse, mae, points: n }
        })
        .collect()
}

enum Reference {
    Truth(TransitionFunctionSpec),
    Holdout(DataFile),
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Parent-directory names, or `model<i>` when those are missing or repeat.
fn model_labels(paths: &[PathBuf]) -> Vec<String> {
    let raw: Vec<Option<String>> = paths
        .iter()
        .map(|p| {
            p.parent()
                .and_then(|d| d.file_name())
                .map(|s| sanitize(&s.to_string_lossy()))
                .filter(|s| !s.is_empty())
        })
        .collect();
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for r in raw.iter().flatten() {
        *seen.entry(r.as_str()).or_default() += 1;
    }
    raw.iter()
        .enumerate()
        .map(|(i, r)| match r {
            Some(s) if seen[s.as_str()] == 1 => s.clone(),
            _ => format!("model{i}"),
        })
        .collect()
}

fn sibling(model: &Path, name: &str) -> PathBuf {
    model.parent().unwrap_or(Path::new(".")).join(name)
}

fn read_loss_csv(path: &Path) -> Option<Vec<TrajectoryPoint>> {
    let mut rdr = csv::Reader::from_path(path).ok()?;
    rdr.records()
        .map(|r| {
            let r = r.ok()?;
            Some(TrajectoryPoint {
                iteration: r.get(0)?.parse().ok()?,
                stage: r.get(1)?.parse().ok()?,
                penalty_weight: r.get(2)?.parse().ok()?,
                objective: r.get(3)?.parse().ok()?,
                nll: r.get(4)?.parse().ok()?,
            })
        })
        .collect()
}

fn cmd_evaluate(g: &GlobalArgs, a: &EvaluateArgs) -> CliResult<()> {
    if a.plot_points_per_bin == 0 {
        return Err(CliError::usage("--plot-points-per-bin must be at least 1"));
    }
    let mut manifest = RunManifest::start("evaluate", config_json(g, a), g.seed);
    let (reference, reference_path) = match (&a.truth, &a.holdout) {
        (Some(p), None) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::usage(format!("cannot read {}: {e}", p.display())))?;
            let spec = TransitionFunctionSpec::from_json(&text)
                .map_err(|e| CliError::usage(format!("malformed spec {}: {e}", p.display())))?;
            (Reference::Truth(spec), p)
        }
        (None, Some(p)) => (Reference::Holdout(read_data_file(p)?), p),
        _ => return Err(CliError::usage("give exactly one of --truth and --holdout")),
    };
    let labels = model_labels(&a.model);
    let mut models = Vec::new();
    for path in &a.model {
        let model = load_model(path).map_err(in_model_file(path))?;
        let scheme = model_scheme(&model, path, a.bins_per_hour)?;
        models.push((model, scheme));
    }

    let t = Instant::now();
    let mut metrics = Vec::new();
    let mut prediction_rows = Vec::new();
    let mut posterior_rows = Vec::new();
    for ((label, path), (model, scheme)) in labels.iter().zip(&a.model).zip(&models) {
        let scheme = *scheme;
        let centers = scheme.bin_centers();
        let targets: Vec<[Option<f64>; 4]> = match &reference {
            Reference::Truth(spec) => centers.iter().map(|&h| spec.tasks_at_hours(h).map(Some)).collect(),
            Reference::Holdout(file) => {
                let ds = match file {
                    DataFile::Sequences(seqs) => estimate_empirical(&bin_many(seqs, scheme)),
                    DataFile::Transitions(ds) => {
                        if ds.scheme() != scheme {
                            return Err(CliError::mismatch(format!(
                                "{} has {} bins per hour but model {} has {}",
                                reference_path.display(),
                                ds.scheme().bins_per_hour(),
                                path.display(),
                                scheme.bins_per_hour()
                            )));
                        }
                        ds.clone()
                    }
                };
                ds.rows().iter().map(|r| r.values()).collect()
            }
        };
        let preds = model.predict(&centers)?;
        let mut rows = Vec::new();
        for (p, tv) in preds.iter().zip(&targets) {
            for (l, t) in tv.iter().enumerate() {
                if let Some(t) = *t {
                    rows.push((l, p.mean[l], t));
                    prediction_rows.push(vec![
                        label.clone(),
                        num(p.input),
                        TASK_NAMES[l].to_string(),
                        num(p.mean[l]),
                        num(p.variance[l]),
                        num(t),
                    ]);
                }
            }
        }
        let tasks = task_metrics(&rows);
        let scored: Vec<&TaskMetrics> = tasks.iter().filter(|m| m.points > 0).collect();
        let k = scored.len().max(1) as f64;
        let rmse_mean = scored.iter().map(|m| m.rmse).sum::<f64>() / k;
        let mae_mean = scored.iter().map(|m| m.mae).sum::<f64>() / k;
        let nll = evaluate(model.hyper(), model.data(), model.requested_solver(), None, false)?.nll;
        let report_points = build_constraint_points(scheme, ConstraintRule::TrainingBins)?;
        let report = evaluate_constraints_with_tolerance(model, &report_points, a.report_tolerance)?;
        metrics.push(ModelMetrics {
            label: label.clone(),
            model: path.display().to_string(),
            bins_per_hour: scheme.bins_per_hour(),
            grid_based: model.data().is_complete(),
            tasks,
            rmse_mean,
            mae_mean,
            final_nll: nll,
            nll_per_observation: nll / model.data().observations().len() as f64,
            constraint_report: report,
        });

        // Posterior over the week with empirical points, one chart per task.
        let grid = week_grid(scheme, a.plot_points_per_bin);
        let post = model.predict(&grid)?;
        for (l, name) in TASK_NAMES.iter().enumerate() {
            let sd = |p: &crate::gp::PredictiveDistribution| 2.0 * p.variance[l].sqrt();
            let mut chart = Chart::new(format!("{name} posterior ({label})"), "hour of week", name.to_string());
            chart.x_range = Some((0.0, 168.0));
            chart.push(Series::band(
                "mean ± 2σ",
                post.iter().map(|p| (p.input, p.mean[l] - sd(p), p.mean[l] + sd(p))).collect(),
            ));
            chart.push(Series::line("posterior mean", post.iter().map(|p| (p.input, p.mean[l])).collect()));
            let data = model.data();
            chart.push(Series::points(
                "empirical",
                (0..data.len()).filter(|&i| data.mask[i][l]).map(|i| (data.inputs[i], data.targets[i][l])).collect(),
            ));
            match &reference {
                Reference::Truth(spec) => chart.push(Series::line(
                    "truth",
                    grid.iter().map(|&h| (h, spec.tasks_at_hours(h)[l])).collect(),
                )),
                Reference::Holdout(_) => chart.push(Series::points(
                    "held-out",
                    centers.iter().zip(&targets).filter_map(|(&h, t)| t[l].map(|v| (h, v))).collect(),
                )),
            }
            let file = format!("posterior_{}_{name}.svg", sanitize(label));
            svg(&g.out_dir.join(&file), &chart)?;
            manifest.output(file);
            for p in &post {
                posterior_rows.push(vec![
                    label.clone(),
                    num(p.input),
                    name.to_string(),
                    num(p.mean[l]),
                    num(p.variance[l]),
                    num(p.mean[l] - sd(p)),
                    num(p.mean[l] + sd(p)),
                ]);
            }
        }
    }
    manifest.timing("evaluate", elapsed_ms(t));

    write_csv(
        &g.out_dir.join("predictions.csv"),
        &["model", "hour", "task", "mean", "variance", "target"],
        prediction_rows,
    )?;
    manifest.output("predictions.csv");
    write_csv(
        &g.out_dir.join("posterior.csv"),
        &["model", "hour", "task", "mean", "variance", "lower", "upper"],
        posterior_rows,
    )?;
    manifest.output("posterior.csv");
    let eval = EvalMetrics {
        reference: match reference {
            Reference::Truth(_) => "truth".into(),
            Reference::Holdout(_) => "holdout".into(),
        },
        reference_path: reference_path.display().to_string(),
        models: metrics,
    };
    write_json(&g.out_dir.join("metrics.json"), &eval)?;
    manifest.output("metrics.json");
    write_comparison(g, a, &eval, &mut manifest)?;
    manifest.finish(&g.out_dir)?;
    for m in &eval.models {
        println!("{}: rmse_mean {:.6} mae_mean {:.6}", m.label, m.rmse_mean, m.mae_mean);
    }
    Ok(())
}

pub fn comparison_header() -> Vec<String> {
    let mut h = vec!["model".to_string(), "bins_per_hour".into()];
    h.extend(TASK_NAMES.iter().map(|t| format!("rmse_{t}")));
    h.extend(TASK_NAMES.iter().map(|t| format!("mae_{t}")));
    h.extend(
        [
            "rmse_mean",
            "mae_mean",
            "final_nll",
            "nll_per_observation",
            "mean_stochasticity_violation",
            "max_stochasticity_violation",
            "min_value",
        ]
        .map(String::from),
    );
    h
}

/// Sweep outputs: comparison table, runtimes, loss progression and the
/// summary charts.
fn write_comparison(g: &GlobalArgs, a: &EvaluateArgs, eval: &EvalMetrics, manifest: &mut RunManifest) -> CliResult<()> {
    let header = comparison_header();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(
        &g.out_dir.join("comparison.csv"),
        &header_refs,
        eval.models.iter().map(|m| {
            let mut r = vec![m.label.clone(), m.bins_per_hour.to_string()];
            r.extend(m.tasks.iter().map(|t| num(t.rmse)));
            r.extend(m.tasks.iter().map(|t| num(t.mae)));
            let c = &m.constraint_report;
            r.extend([
                num(m.rmse_mean),
                num(m.mae_mean),
                num(m.final_nll),
                num(m.nll_per_observation),
                num(c.mean_stochasticity_violation()),
                num(c.max_stochasticity_violation()),
                num(c.min_value),
            ]);
            r
        }),
    )?;
    manifest.output("comparison.csv");

    // Wall-clock data lives apart from the numerical tables.
    let fit_ms: Vec<Option<f64>> = a
        .model
        .iter()
        .map(|p| {
            RunManifest::load(&sibling(p, crate::manifest::MANIFEST_FILE))
                .ok()
                .and_then(|m| m.timings_ms.get("fit").copied())
        })
        .collect();
    write_csv(
        &g.out_dir.join("runtime.csv"),
        &["model", "bins_per_hour", "fit_ms", "constraint_report_ms"],
        eval.models.iter().zip(&fit_ms).map(|(m, f)| {
            vec![
                m.label.clone(),
                m.bins_per_hour.to_string(),
                f.map(num).unwrap_or_default(),
                num(m.constraint_report.wall_time_ms),
            ]
        }),
    )?;
    manifest.output("runtime.csv");

    let levels: Vec<u32> = eval.models.iter().map(|m| m.bins_per_hour).collect();
    let distinct = {
        let mut l = levels.clone();
        l.sort_unstable();
        l.dedup();
        l.len() == levels.len()
    };
    let xs: Vec<f64> = if distinct { levels.iter().map(|&b| b as f64).collect() } else { (1..=levels.len()).map(|i| i as f64).collect() };
    let x_label = if distinct { "bins per hour" } else { "model" };

    let mut chart = Chart::new("Constraint satisfaction and runtime", x_label, "mean stochasticity violation")
        .with_right_axis("fit time (ms)");
    chart.push(Series::line(
        "mean stochasticity violation",
        xs.iter().zip(&eval.models).map(|(&x, m)| (x, m.constraint_report.mean_stochasticity_violation())).collect(),
    ));
    chart.push(
        Series::line(
            "fit time",
            xs.iter().zip(&fit_ms).filter_map(|(&x, f)| f.map(|f| (x, f))).collect(),
        )
        .on_right(),
    );
    svg(&g.out_dir.join("constraint_runtime.svg"), &chart)?;
    manifest.output("constraint_runtime.svg");

    let mut chart = Chart::new("Error metrics per discretization level", x_label, "RMSE");
    for (l, name) in TASK_NAMES.iter().enumerate() {
        chart.push(Series::line(
            format!("RMSE {name}"),
            xs.iter().zip(&eval.models).filter(|(_, m)| m.tasks[l].points > 0).map(|(&x, m)| (x, m.tasks[l].rmse)).collect(),
        ));
    }
    chart.push(Series::line("MAE mean", xs.iter().zip(&eval.models).map(|(&x, m)| (x, m.mae_mean)).collect()));
    svg(&g.out_dir.join("error_metrics.svg"), &chart)?;
    manifest.output("error_metrics.svg");

    let mut loss_rows = Vec::new();
    let mut chart = Chart::new("Loss function progression", "iteration", "objective");
    for (m, p) in eval.models.iter().zip(&a.model) {
        if let Some(traj) = read_loss_csv(&sibling(p, "loss.csv")) {
            chart.push(Series::line(m.label.clone(), traj.iter().map(|t| (t.iteration as f64, t.objective)).collect()));
            loss_rows.extend(traj.iter().map(|t| {
                vec![
                    m.label.clone(),
                    m.bins_per_hour.to_string(),
                    t.iteration.to_string(),
                    t.stage.to_string(),
                    num(t.penalty_weight),
                    num(t.objective),
                    num(t.nll),
                ]
            }));
        }
    }
    write_csv(
        &g.out_dir.join("loss_progression.csv"),
        &["model", "bins_per_hour", "iteration", "stage", "penalty_weight", "objective", "nll"],
        loss_rows,
    )?;
    manifest.output("loss_progression.csv");
    svg(&g.out_dir.join("loss_progression.svg"), &chart)?;
    manifest.output("loss_progression.svg");
    Ok(())
}

fn cmd_bench(g: &GlobalArgs, a: &BenchArgs) -> CliResult<()> {
    let cfg = BenchConfig {
        sizes: a.sizes.clone(),
        repetitions: a.repetitions,
        seed: g.seed,
        extended: !a.matvec_only,
    };
    cfg.validate()?;
    let mut manifest = RunManifest::start("bench", config_json(g, a), g.seed);
    let t = Instant::now();
    let rows = run_bench(&cfg)?;
    manifest.timing("bench", elapsed_ms(t));
    write_bench_file(&rows, &g.out_dir.join("bench.csv"))?;
    manifest.output("bench.csv");
    manifest.finish(&g.out_dir)?;
    for r in rows.iter().filter(|r| r.structure != "dense") {
        println!("{:>12} {:>12} n={:<6} {:>10.4} ms  x{:.1}", r.operation, r.structure, r.n, r.median_ms, r.speedup_vs_dense);
    }
    if let (Some(d), Some(s)) = (fitted_scaling_ratio(&rows, "matvec", "dense"), fitted_scaling_ratio(&rows, "matvec", "toeplitz")) {
        println!("matvec time(2n)/time(n): dense {d:.2}, toeplitz {s:.2}");
    }
    Ok(())
}
