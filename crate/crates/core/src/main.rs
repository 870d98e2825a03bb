use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use dimless_mpc::dimensional::{compute_pi_groups, match_similar_system, pi_distance, DimensionalError, QuantitySet};
use dimless_mpc::dynamics::DynamicsError;
use dimless_mpc::envs::{
    dimensionless_states, lap_time, rms_gap, run_controller, score, succeeded, task_dissimilarity, write_atomic,
    write_episode, EnvError, Task, TaskSpec, WeightsFile, SWING_UP_ANGLE, SWING_UP_FRACTION,
};
use dimless_mpc::mdp::{EpisodeResult, MdpError, DEFAULT_SIMILARITY_TOL};
use dimless_mpc::mpc::{MpcError, MAX_ITERATIONS, STATE_PENALTY, TOLERANCE};
use dimless_mpc::tuning::{history_csv, tune, TunerConfig, TuningError, DEFAULT_BOUNDS, EI_CANDIDATES};

const EXIT_PARSE: u8 = 2;
const EXIT_DIMENSIONAL: u8 = 3;
const EXIT_CONFIG: u8 = 4;
const EXIT_DISSIMILAR: u8 = 5;
const EXIT_SOLVER: u8 = 6;

#[derive(Parser)]
#[command(name = "dimless-mpc", version, about = "Dimensional analysis, dimensionless MPC and scale-invariant tuning")]
struct Cli {
    /// Tuner seed; overrides the seed in the tuner config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (the runs root for simulate, tune and transfer).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// RMS tolerance on dimensionless trajectories for transfer.
    #[arg(long, global = true, default_value_t = 1e-6)]
    tol: f64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the Π-groups of a system spec.
    Pi { system: PathBuf },
    /// Build a dynamically similar system from a reference spec.
    Match {
        system: PathBuf,
        /// New values, `name=value`.
        #[arg(long = "set", value_parser = parse_assignment, num_args = 1.., required = true)]
        set: Vec<(String, f64)>,
        /// Quantities kept at their reference values.
        #[arg(long, num_args = 1..)]
        fixed: Vec<String>,
    },
    /// Run one closed-loop episode and write its trajectory and result.
    Simulate { task: PathBuf, weights: PathBuf },
    /// Tune the dimensionless weights of a task with Bayesian optimization.
    Tune { task: PathBuf, config: PathBuf },
    /// Run the same dimensionless weights on two similar tasks and compare.
    Transfer { task_a: PathBuf, task_b: PathBuf, weights: PathBuf },
}

fn parse_assignment(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s.split_once('=').ok_or_else(|| format!("expected name=value, got `{s}`"))?;
    let value: f64 = value.parse().map_err(|e| format!("`{value}`: {e}"))?;
    Ok((name.trim().to_string(), value))
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

fn dimensional_code(e: &DimensionalError) -> u8 {
    match e {
        DimensionalError::IncomparableSets => EXIT_DISSIMILAR,
        _ => EXIT_DIMENSIONAL,
    }
}

fn dynamics_code(e: &DynamicsError) -> u8 {
    match e {
        DynamicsError::Dimensional(d) => dimensional_code(d),
        DynamicsError::Signature(_) | DynamicsError::Parameter(_) | DynamicsError::Track(_) => EXIT_CONFIG,
        DynamicsError::InvalidStep(_) | DynamicsError::InvalidHorizon | DynamicsError::Rebuild(_) => EXIT_CONFIG,
        _ => EXIT_SOLVER,
    }
}

fn mpc_code(e: &MpcError) -> u8 {
    match e {
        MpcError::Invalid(_) | MpcError::Unit | MpcError::Scaling(_) => EXIT_CONFIG,
        MpcError::Dynamics(d) => dynamics_code(d),
        MpcError::Json(_) => EXIT_PARSE,
        MpcError::Qp(_) | MpcError::Divergence(_) | MpcError::AtState { .. } => EXIT_SOLVER,
    }
}

impl From<EnvError> for Failure {
    fn from(e: EnvError) -> Self {
        let code = match &e {
            EnvError::Dimensional(d) => dimensional_code(d),
            EnvError::Dynamics(d) => dynamics_code(d),
            EnvError::Mpc(m) => mpc_code(m),
            EnvError::Mdp(MdpError::Dynamics(d)) => dynamics_code(d),
            EnvError::Mdp(MdpError::Dimensional(d)) => dimensional_code(d),
            EnvError::Mdp(MdpError::Incomparable(_)) => EXIT_DISSIMILAR,
            EnvError::Mdp(MdpError::Episode { .. }) => EXIT_SOLVER,
            EnvError::Mdp(_) | EnvError::Invalid(_) => EXIT_CONFIG,
            EnvError::Io { .. } | EnvError::Json { .. } => EXIT_PARSE,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<DimensionalError> for Failure {
    fn from(e: DimensionalError) -> Self {
        Failure::new(dimensional_code(&e), e.to_string())
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::new(EXIT_PARSE, format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::new(EXIT_PARSE, format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes()).map_err(Failure::from)
}

/// Provenance of a run. Written before any other output of the command.
#[derive(Serialize)]
struct RunManifest {
    command: String,
    inputs: Vec<String>,
    seed: Option<u64>,
    out: String,
    version: &'static str,
    /// SHA-256 over the input files and `config`.
    config_hash: String,
    config: Value,
    started_unix: u64,
}

fn file_digest(path: &Path) -> Result<String, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::new(EXIT_PARSE, format!("{}: {e}", path.display())))?;
    Ok(format!("{:x}", Sha256::digest(bytes)))
}

fn write_manifest(
    dir: &Path,
    command: &str,
    inputs: &[PathBuf],
    seed: Option<u64>,
    config: Value,
) -> Result<(), Failure> {
    let mut hasher = Sha256::new();
    hasher.update(command.as_bytes());
    for p in inputs {
        hasher.update(file_digest(p)?.as_bytes());
    }
    hasher.update(serde_json::to_vec(&config).map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))?);
    let manifest = RunManifest {
        command: command.to_string(),
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        seed,
        out: dir.display().to_string(),
        version: env!("CARGO_PKG_VERSION"),
        config_hash: format!("{:x}", hasher.finalize()),
        config,
        started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

fn solver_settings() -> Value {
    json!({
        "sqp_max_iterations": MAX_ITERATIONS,
        "sqp_tolerance": TOLERANCE,
        "state_penalty": STATE_PENALTY,
        "similarity_tolerance": DEFAULT_SIMILARITY_TOL,
        "swing_up_angle": SWING_UP_ANGLE,
        "swing_up_fraction": SWING_UP_FRACTION,
    })
}

/// Every number that shapes a closed-loop run of `task`.
fn task_settings(task: &Task, weights: &[f64]) -> Result<Value, Failure> {
    let problem = task.problem(weights)?;
    let problem: Value = serde_json::from_str(&problem.to_json().map_err(EnvError::from)?)
        .map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))?;
    let dt = match task {
        Task::Cartpole(t) => t.dt,
        Task::Race(t) => t.dt,
    };
    Ok(json!({
        "task": task.name(),
        "dt": dt,
        "max_steps": task.max_steps(),
        "x0": task.x0(),
        "weights": weights,
        "problem": problem,
    }))
}

struct LoadedTask {
    task: Task,
    /// The task file followed by the files it references.
    inputs: Vec<PathBuf>,
}

fn load_task(path: &Path) -> Result<LoadedTask, Failure> {
    let spec = TaskSpec::load(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let task = spec.build(base)?;
    let mut inputs = vec![path.to_path_buf()];
    inputs.extend(spec.inputs(base));
    Ok(LoadedTask { task, inputs })
}

fn load_weights(path: &Path, task: &Task) -> Result<Vec<f64>, Failure> {
    let w = WeightsFile::load(path)?;
    let values = w.for_task(task)?;
    // builds the problem once so bad weights fail before anything is written
    task.problem(&values)?;
    Ok(values)
}

fn runs_root(cli: &Cli) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from("runs"))
}

fn cmd_pi(cli: &Cli, system: &Path) -> Result<(), Failure> {
    let qs: QuantitySet = read_json(system)?;
    let groups = compute_pi_groups(&qs)?;
    if let Some(dir) = &cli.out {
        write_manifest(dir, "pi", &[system.to_path_buf()], cli.seed, json!({}))?;
        write_json(&dir.join("pi_groups.json"), &groups)?;
    }
    for (i, g) in groups.iter().enumerate() {
        println!("pi_{}\t{}\t{}", i + 1, g.symbolic(), g.value);
    }
    Ok(())
}

fn cmd_match(cli: &Cli, system: &Path, set: &[(String, f64)], fixed: &[String]) -> Result<(), Failure> {
    let reference: QuantitySet = read_json(system)?;
    let mut values = BTreeMap::new();
    for (name, v) in set {
        if values.insert(name.clone(), *v).is_some() {
            return Err(Failure::new(EXIT_PARSE, format!("`{name}` is set twice")));
        }
    }
    let matched = match_similar_system(&reference, fixed, &values)?;
    let distance = pi_distance(&reference, &matched)?;
    log::info!("pi distance to the reference: {distance:e}");
    let text = serde_json::to_string_pretty(&matched).map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))?;
    match &cli.out {
        Some(dir) => {
            let config = json!({ "set": values, "fixed": fixed });
            write_manifest(dir, "match", &[system.to_path_buf()], cli.seed, config)?;
            let path = dir.join("system.json");
            write_atomic(&path, format!("{text}\n").as_bytes())?;
            println!("{}\tpi_distance {distance:e}", path.display());
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn report_episode(task: &Task, res: &EpisodeResult, path: &Path) {
    let lap = lap_time(task, res).map(|t| format!("\tlap_time {t}")).unwrap_or_default();
    println!(
        "{}\tscore {}\tsuccess {}\tsteps {}{lap}",
        path.display(),
        score(res),
        succeeded(task, res),
        res.n_steps()
    );
}

fn cmd_simulate(cli: &Cli, task_path: &Path, weights_path: &Path) -> Result<(), Failure> {
    let loaded = load_task(task_path)?;
    let task = &loaded.task;
    let weights = load_weights(weights_path, task)?;
    let dir = runs_root(cli).join(task.name()).join(task.scale_label());
    let mut inputs = loaded.inputs.clone();
    inputs.push(weights_path.to_path_buf());
    let config = json!({ "run": task_settings(task, &weights)?, "solver": solver_settings() });
    write_manifest(&dir, "simulate", &inputs, cli.seed, config)?;
    let res = run_controller(task, &weights)?;
    let path = write_episode(&dir, task, &res)?;
    report_episode(task, &res, &path);
    match &res.failure {
        Some(f) => Err(Failure::new(EXIT_SOLVER, format!("episode failed: {f:?}"))),
        None => Ok(()),
    }
}

/// Tuner config file. Bounds default to the same range for every weight
/// and the seed defaults to zero.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TuneFile {
    #[serde(default)]
    bounds: Option<Vec<(f64, f64)>>,
    n_trials: usize,
    n_init: usize,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    episode_budget: Option<usize>,
}

fn cmd_tune(cli: &Cli, task_path: &Path, config_path: &Path) -> Result<(), Failure> {
    let loaded = load_task(task_path)?;
    let mut task = loaded.task;
    let file: TuneFile = read_json(config_path)?;
    let names = task.weight_names()?;
    let config = TunerConfig {
        bounds: file.bounds.unwrap_or_else(|| vec![DEFAULT_BOUNDS; names.len()]),
        n_trials: file.n_trials,
        n_init: file.n_init,
        seed: cli.seed.or(file.seed).unwrap_or(0),
        episode_budget: file.episode_budget,
    };
    if config.bounds.len() != names.len() {
        return Err(Failure::new(
            EXIT_CONFIG,
            format!("{} bounds given for the {} weights {names:?}", config.bounds.len(), names.len()),
        ));
    }
    config.validate().map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))?;
    if let Some(steps) = config.episode_budget {
        task.set_max_steps(steps);
    }
    let dir = runs_root(cli).join(task.name()).join(task.scale_label()).join("tune");
    let mut inputs = loaded.inputs.clone();
    inputs.push(config_path.to_path_buf());
    let manifest_config = json!({
        "tuner": config,
        "ei_candidates": EI_CANDIDATES,
        "run": task_settings(&task, &task.default_weights())?,
        "solver": solver_settings(),
    });
    write_manifest(&dir, "tune", &inputs, Some(config.seed), manifest_config)?;
    let mut trial = 0;
    let outcome = tune(
        |w: &[f64]| {
            let rec = dimless_mpc::envs::trial_record(&task, w);
            log::info!("trial {trial}: objective {} feasible {}", rec.objective, rec.feasible);
            trial += 1;
            rec
        },
        &config,
    );
    let outcome = match outcome {
        Ok(o) => o,
        Err(TuningError::AllInfeasible(history)) => {
            write_atomic(&dir.join("history.csv"), history_csv(&history).as_bytes())?;
            return Err(Failure::new(EXIT_SOLVER, format!("all {} trials were infeasible", history.len())));
        }
        Err(e) => return Err(Failure::new(EXIT_CONFIG, e.to_string())),
    };
    write_atomic(&dir.join("history.csv"), history_csv(&outcome.history).as_bytes())?;
    let best = WeightsFile { names, values: outcome.best.params.clone() };
    write_json(&dir.join("best_weights.json"), &best)?;
    println!("{}\tbest objective {}", dir.display(), outcome.best.objective);
    Ok(())
}

#[derive(Serialize)]
struct TransferReport {
    task: String,
    scale_a: String,
    scale_b: String,
    dissimilarity: f64,
    pi_distance: f64,
    /// RMS gap between the dimensionless state trajectories.
    rms_gap: f64,
    tol: f64,
    /// Predicted ratios `b / a` of the time and cost units.
    time_unit_ratio: f64,
    cost_unit_ratio: f64,
    score_ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    lap_time_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lap_time_dimensionless_a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lap_time_dimensionless_b: Option<f64>,
    success_a: bool,
    success_b: bool,
    pass: bool,
}

fn cmd_transfer(cli: &Cli, path_a: &Path, path_b: &Path, weights_path: &Path) -> Result<(), Failure> {
    let a = load_task(path_a)?;
    let b = load_task(path_b)?;
    let (ta, tb) = (&a.task, &b.task);
    let weights = load_weights(weights_path, ta)?;
    let pi = match pi_distance(ta.params(), tb.params()) {
        Ok(d) => d,
        Err(DimensionalError::IncomparableSets) => f64::INFINITY,
        Err(e) => return Err(e.into()),
    };
    let dissimilarity = if pi.is_finite() { task_dissimilarity(ta, tb)? } else { f64::INFINITY };
    if !(dissimilarity <= DEFAULT_SIMILARITY_TOL) {
        return Err(Failure::new(
            EXIT_DISSIMILAR,
            format!("tasks are not similar: pi_distance {pi:e}, dissimilarity {dissimilarity:e}"),
        ));
    }
    load_weights(weights_path, tb)?;
    let dir = runs_root(cli)
        .join(ta.name())
        .join(format!("transfer_{}_{}", ta.scale_label(), tb.scale_label()));
    let mut inputs = a.inputs.clone();
    inputs.extend(b.inputs.iter().cloned());
    inputs.push(weights_path.to_path_buf());
    let config = json!({
        "tol": cli.tol,
        "run_a": task_settings(ta, &weights)?,
        "run_b": task_settings(tb, &weights)?,
        "solver": solver_settings(),
    });
    write_manifest(&dir, "transfer", &inputs, cli.seed, config)?;

    let ra = run_controller(ta, &weights)?;
    let rb = run_controller(tb, &weights)?;
    write_episode(&dir.join("a"), ta, &ra)?;
    write_episode(&dir.join("b"), tb, &rb)?;
    let (sa, sb) = (ta.scaling()?, tb.scaling()?);
    let gap = rms_gap(&dimensionless_states(&ra, &sa), &dimensionless_states(&rb, &sb));
    let (lap_a, lap_b) = (lap_time(ta, &ra), lap_time(tb, &rb));
    let (success_a, success_b) = (succeeded(ta, &ra), succeeded(tb, &rb));
    let report = TransferReport {
        task: ta.name().to_string(),
        scale_a: ta.scale_label(),
        scale_b: tb.scale_label(),
        dissimilarity,
        pi_distance: pi,
        rms_gap: gap,
        tol: cli.tol,
        time_unit_ratio: sb.m_t / sa.m_t,
        cost_unit_ratio: sb.m_cost / sa.m_cost,
        score_ratio: score(&rb) / score(&ra),
        lap_time_ratio: lap_a.zip(lap_b).map(|(x, y)| y / x),
        lap_time_dimensionless_a: lap_a.map(|t| t / sa.m_t),
        lap_time_dimensionless_b: lap_b.map(|t| t / sb.m_t),
        success_a,
        success_b,
        pass: gap <= cli.tol && success_a == success_b && !ra.failed() && !rb.failed(),
    };
    write_json(&dir.join("report.json"), &report)?;
    println!(
        "{}\trms_gap {:e}\tscore_ratio {}\tpass {}",
        dir.display(),
        report.rms_gap,
        report.score_ratio,
        report.pass
    );
    if ra.failed() || rb.failed() {
        return Err(Failure::new(EXIT_SOLVER, "a closed-loop run failed"));
    }
    if !report.pass {
        return Err(Failure::new(EXIT_DISSIMILAR, format!("transfer gap {gap:e} exceeds {:e}", cli.tol)));
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if !(cli.tol >= 0.0 && cli.tol.is_finite()) {
        return Err(Failure::new(EXIT_PARSE, "--tol must be finite and non-negative"));
    }
    match &cli.command {
        Command::Pi { system } => cmd_pi(cli, system),
        Command::Match { system, set, fixed } => cmd_match(cli, system, set, fixed),
        Command::Simulate { task, weights } => cmd_simulate(cli, task, weights),
        Command::Tune { task, config } => cmd_tune(cli, task, config),
        Command::Transfer { task_a, task_b, weights } => cmd_transfer(cli, task_a, task_b, weights),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("DIMLESS_MPC_LOG", "error")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_PARSE) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
