//! `warmstate` command line.
//!
//! Two inspection commands (`model`, `bound`) print JSON to stdout; the three
//! experiment commands (`variance-scan`, `train`, `meta-train`) are driven by
//! a strict JSON config file and write their outputs under the config's
//! `output_dir`. Every output is a pure function of the effective config, so
//! re-running the echoed `config_<run_id>.json` reproduces the files
//! byte-for-byte. The `WARMSTATE_SEED` environment variable overrides the
//! config seed *before* the echo is written, which keeps that property.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use warmstate::bounds::{bound_report, BoundInputs, BoundReport};
use warmstate::experiments::{
    fit_rmax, log_grid, scan_csv, tracking_experiment, variance_scan, FitResult, TrackingConfig,
};
use warmstate::pauli::{exact_spectrum, semi_norm, Model};
use warmstate::trainer::{Branch, InitPolicy, Optimizer, Schedule, ScheduleMode, TrainConfig};
use warmstate::Error;

const SEED_ENV: &str = "WARMSTATE_SEED";

// ---------------------------------------------------------------------------
// failure -> exit code

#[derive(Debug)]
enum Failure {
    /// Bad arguments, bad config, domain violations. Exit 2.
    Validation(String),
    /// Numerics went wrong while executing a valid request. Exit 3.
    Runtime(String),
    /// Filesystem trouble. Exit 4.
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Runtime(_) => 3,
            Failure::Io(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Validation(m) | Failure::Runtime(m) | Failure::Io(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFinite(..) => Failure::Runtime(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Validation(msg.into())
}

// ---------------------------------------------------------------------------
// argument surface

#[derive(Parser)]
#[command(
    name = "warmstate",
    version,
    about = "Warm-started variational ground-state tracking along a Hamiltonian path"
)]
struct Cli {
    /// Worker threads for sample loops. Results never depend on this.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print a model instance at one path point: terms, spectrum, gap,
    /// seminorm (JSON on stdout).
    Model(ModelArgs),
    /// Print the analytic step budget, warm-start radius budget and variance
    /// floor for explicit inputs (JSON on stdout).
    Bound(BoundArgs),
    /// Train at the first path point, then scan loss variance over warm-start
    /// radii for several system sizes.
    VarianceScan(ConfigArg),
    /// Warm-started step-by-step training along a path schedule.
    Train(ConfigArg),
    /// Incremental training of one deformation-encoded circuit over a
    /// growing set of path points.
    MetaTrain(ConfigArg),
}

#[derive(Args)]
struct ModelArgs {
    /// Model name: heisenberg_field, xy, ising_jw.
    #[arg(long)]
    name: String,
    /// Qubit count.
    #[arg(long)]
    n: usize,
    /// Path point; must lie in the model's domain.
    #[arg(long)]
    x: f64,
    /// Coupling scale (ignored by heisenberg_field).
    #[arg(long = "J", default_value_t = 1.0)]
    j: f64,
}

#[derive(Args)]
struct BoundArgs {
    /// Spectral gap e1 - e0 at the relevant path point.
    #[arg(long)]
    gap: f64,
    /// Spectral seminorm of H at the probe point.
    #[arg(long)]
    h_seminorm: f64,
    /// Spectral seminorm of the deformation direction H1.
    #[arg(long)]
    h1_seminorm: f64,
    /// Number of trainable rotation parameters.
    #[arg(long)]
    m: usize,
    /// Preparation error sqrt(1 - fidelity) carried into the step.
    #[arg(long)]
    eps: f64,
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    #[arg(long, default_value_t = 0.5)]
    gamma_tilde: f64,
    /// max |dg/dx| over encoded gates; 0 for deformation-blind circuits.
    #[arg(long, default_value_t = 0.0)]
    g_max_deriv: f64,
    /// Probe half-width for the variance floor (default: the radius budget).
    #[arg(long)]
    r: Option<f64>,
}

#[derive(Args)]
struct ConfigArg {
    /// Path to the JSON config file.
    #[arg(long)]
    config: PathBuf,
}

// ---------------------------------------------------------------------------
// config schema (strict: unknown keys are rejected)

fn unit_coupling() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSpec {
    name: String,
    n: usize,
    #[serde(default = "unit_coupling")]
    j: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScanModelSpec {
    name: String,
    #[serde(default = "unit_coupling")]
    j: f64,
}

/// Either an explicit point list or an inclusive linear grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum ScheduleSpec {
    Explicit { xs: Vec<f64> },
    Linspace { x_min: f64, x_max: f64, k: usize },
}

impl ScheduleSpec {
    fn points(&self) -> CliResult<Vec<f64>> {
        match self {
            ScheduleSpec::Explicit { xs } => Ok(xs.clone()),
            ScheduleSpec::Linspace { x_min, x_max, k } => {
                if *k < 2 {
                    return Err(invalid("schedule k must be at least 2 (use xs for a single point)"));
                }
                if !(x_min.is_finite() && x_max.is_finite()) || x_min >= x_max {
                    return Err(invalid(format!(
                        "schedule needs finite x_min < x_max, got [{x_min}, {x_max}]"
                    )));
                }
                let step = (x_max - x_min) / (*k as f64 - 1.0);
                Ok((0..*k).map(|i| x_min + step * i as f64).collect())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum EncodingPreset {
    /// Plain hardware-efficient circuit; gates ignore the path point.
    Constant,
    /// Single-qubit angles scale linearly with x, entanglers stay constant.
    LinearSingles,
}

impl EncodingPreset {
    fn for_mode(mode: ScheduleMode) -> EncodingPreset {
        match mode {
            ScheduleMode::VqePath => EncodingPreset::Constant,
            ScheduleMode::MetaIncremental => EncodingPreset::LinearSingles,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnsatzSpec {
    /// Layer count.
    l: usize,
    /// Accepted for explicitness; each command has exactly one valid preset
    /// and rejects the other.
    #[serde(default)]
    encoding: Option<EncodingPreset>,
}

/// `"exact"` or `{"n_shots": N}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum NoiseSpec {
    Shots { n_shots: u64 },
    Mode(String),
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec::Mode("exact".to_string())
    }
}

impl NoiseSpec {
    fn shots(&self) -> CliResult<Option<u64>> {
        match self {
            NoiseSpec::Shots { n_shots } => {
                if *n_shots == 0 {
                    Err(invalid("noise.n_shots must be positive"))
                } else {
                    Ok(Some(*n_shots))
                }
            }
            NoiseSpec::Mode(s) if s == "exact" => Ok(None),
            NoiseSpec::Mode(s) => Err(invalid(format!(
                "noise must be \"exact\" or {{\"n_shots\": N}}, got \"{s}\""
            ))),
        }
    }
}

/// Optimizer settings; mirrors the library defaults field by field.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TrainSpec {
    optimizer: Optimizer,
    learning_rate: f64,
    max_iters: usize,
    grad_tol: f64,
    r_warm: f64,
    n_restarts: usize,
    /// None = pick the model's default first-step policy.
    init: Option<InitPolicy>,
    theta_init: Option<Vec<f64>>,
}

impl Default for TrainSpec {
    fn default() -> Self {
        let base = TrainConfig::default();
        TrainSpec {
            optimizer: base.optimizer,
            learning_rate: base.learning_rate,
            max_iters: base.max_iters,
            grad_tol: base.grad_tol,
            r_warm: base.r_warm,
            n_restarts: base.n_restarts,
            init: None,
            theta_init: None,
        }
    }
}

impl TrainSpec {
    fn to_config(&self, init: InitPolicy, shots: Option<u64>, seed: u64) -> TrainConfig {
        TrainConfig {
            optimizer: self.optimizer,
            learning_rate: self.learning_rate,
            max_iters: self.max_iters,
            grad_tol: self.grad_tol,
            r_warm: self.r_warm,
            n_restarts: self.n_restarts,
            shots,
            seed,
            init,
            theta_init: self.theta_init.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FormatSpec {
    csv: bool,
    json: bool,
}

impl Default for FormatSpec {
    fn default() -> Self {
        FormatSpec { csv: true, json: true }
    }
}

/// Geometric radius grid, endpoints included.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct GridSpec {
    lo: f64,
    hi: f64,
    points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { lo: 1e-2, hi: std::f64::consts::PI, points: 16 }
    }
}

fn default_scan_samples() -> usize {
    10_000
}

fn default_reference_points() -> usize {
    101
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScanRunConfig {
    model: ScanModelSpec,
    /// System sizes; one circuit of depth L = n per size.
    ns: Vec<usize>,
    #[serde(default)]
    r_grid: GridSpec,
    #[serde(default = "default_scan_samples")]
    samples: usize,
    #[serde(default)]
    train: TrainSpec,
    #[serde(default)]
    noise: NoiseSpec,
    #[serde(default)]
    seed: u64,
    output_dir: PathBuf,
    #[serde(default)]
    format: FormatSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrackRunConfig {
    model: ModelSpec,
    schedule: ScheduleSpec,
    ansatz: AnsatzSpec,
    #[serde(default)]
    train: TrainSpec,
    #[serde(default)]
    noise: NoiseSpec,
    #[serde(default)]
    seed: u64,
    /// Points of the exact two-level reference curve over the model domain.
    #[serde(default = "default_reference_points")]
    reference_points: usize,
    output_dir: PathBuf,
    #[serde(default)]
    format: FormatSpec,
}

// ---------------------------------------------------------------------------
// shared plumbing

fn read_config<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Io(format!("reading {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| invalid(format!("config {}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| Failure::Io(format!("writing {}: {e}", path.display())))
}

/// Environment override happens before the config is echoed, so the echo
/// always records the seed that actually ran.
fn effective_seed(config_seed: u64) -> CliResult<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse::<u64>()
            .map_err(|_| invalid(format!("{SEED_ENV} must be an unsigned integer, got '{v}'"))),
        Err(std::env::VarError::NotPresent) => Ok(config_seed),
        Err(e) => Err(invalid(format!("{SEED_ENV}: {e}"))),
    }
}

/// First 12 hex digits of the SHA-256 of the effective config text.
fn run_id(effective_config: &str) -> String {
    let digest = Sha256::digest(effective_config.as_bytes());
    digest[..6].iter().map(|b| format!("{b:02x}")).collect()
}

fn to_pretty_json<T: Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Failure::Runtime(format!("serializing output: {e}")))?;
    s.push('\n');
    Ok(s)
}

fn prepare_output_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)
        .map_err(|e| Failure::Io(format!("creating {}: {e}", dir.display())))
}

// ---------------------------------------------------------------------------
// model

#[derive(Serialize)]
struct TermRow {
    coeff: f64,
    string: String,
}

#[derive(Serialize)]
struct ModelReport {
    model: &'static str,
    n: usize,
    x: f64,
    j: f64,
    domain: (f64, f64),
    num_terms: usize,
    terms: Vec<TermRow>,
    ground_energy: f64,
    gap: f64,
    semi_norm: f64,
    eigenvalues: Vec<f64>,
}

fn cmd_model(args: &ModelArgs) -> CliResult<()> {
    let model: Model = args.name.parse()?;
    let family = model.family(args.n, args.j)?;
    if !family.contains(args.x) {
        let (lo, hi) = family.domain();
        return Err(invalid(format!(
            "x = {} outside the {} domain [{lo}, {hi}]",
            args.x,
            model.name()
        )));
    }
    let h = family.at(args.x);
    let spectrum = exact_spectrum(&h)?;
    let report = ModelReport {
        model: model.name(),
        n: args.n,
        x: args.x,
        j: args.j,
        domain: family.domain(),
        num_terms: h.num_terms(),
        terms: h
            .terms()
            .iter()
            .map(|t| TermRow { coeff: t.coeff, string: t.string.to_string() })
            .collect(),
        ground_energy: spectrum.ground_energy(),
        gap: spectrum.gap(),
        semi_norm: semi_norm(&h)?,
        eigenvalues: spectrum.eigenvalues.clone(),
    };
    print!("{}", to_pretty_json(&report)?);
    Ok(())
}

// ---------------------------------------------------------------------------
// bound

#[derive(Serialize)]
struct BoundOutput {
    inputs: BoundInputs,
    report: BoundReport,
}

fn cmd_bound(args: &BoundArgs) -> CliResult<()> {
    let inputs = BoundInputs {
        gap: args.gap,
        h_seminorm: args.h_seminorm,
        h1_seminorm: args.h1_seminorm,
        m: args.m,
        eps: args.eps,
        gamma: args.gamma,
        gamma_tilde: args.gamma_tilde,
        g_max_deriv: args.g_max_deriv,
    };
    let report = bound_report(&inputs, args.r)?;
    print!("{}", to_pretty_json(&BoundOutput { inputs, report })?);
    Ok(())
}

// ---------------------------------------------------------------------------
// variance-scan

#[derive(Serialize)]
struct ScanSummary<'a> {
    run_id: &'a str,
    model: &'a str,
    ns: &'a [usize],
    samples: usize,
    rows: usize,
    /// Power-law fit of the largest in-budget radius vs parameter count;
    /// absent when fewer than three distinct parameter counts were scanned.
    fit: Option<FitResult>,
}

fn cmd_variance_scan(path: &Path) -> CliResult<()> {
    let mut cfg: ScanRunConfig = read_config(path)?;
    cfg.seed = effective_seed(cfg.seed)?;
    let model: Model = cfg.model.name.parse()?;
    if cfg.ns.is_empty() {
        return Err(invalid("ns must list at least one system size"));
    }
    let shots = cfg.noise.shots()?;
    let train = cfg.train.to_config(
        cfg.train.init.unwrap_or_else(|| InitPolicy::default_for(model)),
        shots,
        cfg.seed,
    );
    cfg.train.init = Some(train.init);

    let echo = to_pretty_json(&cfg)?;
    let id = run_id(&echo);
    prepare_output_dir(&cfg.output_dir)?;
    write_file(&cfg.output_dir.join(format!("config_{id}.json")), &echo)?;

    let grid = log_grid(cfg.r_grid.lo, cfg.r_grid.hi, cfg.r_grid.points);
    if grid.is_empty() {
        return Err(invalid("r_grid produced no radii; check lo < hi and points >= 1"));
    }
    let rows = variance_scan(model, cfg.model.j, &cfg.ns, &grid, cfg.samples, &train)?;
    let fit = fit_rmax(&rows).ok();

    if cfg.format.csv {
        write_file(&cfg.output_dir.join(format!("scan_{id}.csv")), &scan_csv(&rows))?;
    }
    if cfg.format.json {
        let summary = ScanSummary {
            run_id: &id,
            model: model.name(),
            ns: &cfg.ns,
            samples: cfg.samples,
            rows: rows.len(),
            fit,
        };
        write_file(
            &cfg.output_dir.join(format!("summary_{id}.json")),
            &to_pretty_json(&summary)?,
        )?;
    }
    match fit {
        Some(f) => println!(
            "variance-scan {id}: {} rows, r_max ~ M^{:.3} -> {}",
            rows.len(),
            f.exponent,
            cfg.output_dir.display()
        ),
        None => println!(
            "variance-scan {id}: {} rows -> {}",
            rows.len(),
            cfg.output_dir.display()
        ),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// train / meta-train

fn cmd_track(path: &Path, mode: ScheduleMode) -> CliResult<()> {
    let mut cfg: TrackRunConfig = read_config(path)?;
    cfg.seed = effective_seed(cfg.seed)?;
    let model: Model = cfg.model.name.parse()?;

    let expected = EncodingPreset::for_mode(mode);
    let preset = cfg.ansatz.encoding.unwrap_or(expected);
    if preset != expected {
        return Err(invalid(format!(
            "this command uses the {:?} encoding preset; got {:?}",
            expected, preset
        )));
    }
    cfg.ansatz.encoding = Some(preset);

    let shots = cfg.noise.shots()?;
    let train = cfg.train.to_config(
        cfg.train.init.unwrap_or_else(|| InitPolicy::default_for(model)),
        shots,
        cfg.seed,
    );
    cfg.train.init = Some(train.init);

    let echo = to_pretty_json(&cfg)?;
    let id = run_id(&echo);
    prepare_output_dir(&cfg.output_dir)?;
    write_file(&cfg.output_dir.join(format!("config_{id}.json")), &echo)?;

    let schedule = Schedule::new(mode, cfg.schedule.points()?)?;
    let tracking = TrackingConfig {
        n: cfg.model.n,
        l: cfg.ansatz.l,
        coupling: cfg.model.j,
        reference_points: cfg.reference_points,
        train,
    };
    let result = tracking_experiment(model, &schedule, &tracking)?;

    if cfg.format.json {
        write_file(
            &cfg.output_dir.join(format!("run_{id}.json")),
            &to_pretty_json(&result)?,
        )?;
    }
    if cfg.format.csv {
        write_file(
            &cfg.output_dir.join(format!("records_{id}.csv")),
            &result.run.records_csv(),
        )?;
        write_file(
            &cfg.output_dir.join(format!("tracking_{id}.csv")),
            &result.tracking_csv(),
        )?;
        write_file(
            &cfg.output_dir.join(format!("reference_{id}.csv")),
            &result.reference_csv(),
        )?;
        if !result.run.test_records.is_empty() {
            write_file(
                &cfg.output_dir.join(format!("test_points_{id}.csv")),
                &result.run.test_records_csv(),
            )?;
        }
    }

    let name = match mode {
        ScheduleMode::VqePath => "train",
        ScheduleMode::MetaIncremental => "meta-train",
    };
    let ground = result.run.records.iter().filter(|r| r.branch == Branch::Ground).count();
    let excited = result.run.records.iter().filter(|r| r.branch == Branch::Excited).count();
    let neither = result.run.records.len() - ground - excited;
    let last = result
        .run
        .records
        .last()
        .ok_or_else(|| Failure::Runtime("run produced no records".to_string()))?;
    println!(
        "{name} {id}: {} steps, branches {ground} ground / {excited} excited / {neither} neither, \
         final energy {:.6} (fidelity {:.4}) -> {}",
        result.run.records.len(),
        last.energy_learned,
        last.fidelity_gs,
        cfg.output_dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------

fn run(cli: Cli) -> CliResult<()> {
    if let Some(workers) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .map_err(|e| Failure::Runtime(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Model(args) => cmd_model(args),
        Command::Bound(args) => cmd_bound(args),
        Command::VarianceScan(c) => cmd_variance_scan(&c.config),
        Command::Train(c) => cmd_track(&c.config, ScheduleMode::VqePath),
        Command::MetaTrain(c) => cmd_track(&c.config, ScheduleMode::MetaIncremental),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
