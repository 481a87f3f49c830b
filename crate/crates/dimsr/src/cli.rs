//! Command-line front end: `run`, `build-library`, `report`, `validate`.
//!
//! Configuration lives in one flat TOML namespace holding the engine
//! parameters plus harness fields (`gamma`, `trials`, `problems`,
//! `output_dir`, `library_cache`, `build_library`, `library_capacity`,
//! `train_fraction`, `jobs`). Command-line flags override file values;
//! unknown keys are hard errors. The default output directory can also
//! be set through the `DIMSR_OUTPUT_DIR` environment variable.
//!
//! A run executes the trial grid problem × γ × trial. Every trial writes
//! its record atomically to its own JSON-lines file, then the combined
//! `records.jsonl` and `summary.csv` are produced. All per-trial
//! randomness derives from the base seed plus the trial coordinates —
//! never from the mode — so records from different modes with the same
//! base seed are paired and byte-identical reruns are guaranteed
//! (timing fields aside).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bench::{
    add_noise, complexity, make_probe, parse_expression, r2_score, read_records, simplify, split,
    summarize, symbolic_solution, wilcoxon_report, write_records, write_summary_csv, BenchError,
    ProblemError, ProblemSpec, RunRecord, StatsError,
};
use crate::dimension::DimResult;
use crate::evolution::{evolve, EvolutionConfig, EvolutionError, HomogeneityMode};
use crate::fitness::{evaluate_batch, FitnessError, Problem};
use crate::genome::ExprTree;
use crate::problems::default_operators;
use crate::semantics::{build_library, load_library, save_library, LibraryIoError, SemanticLibrary};
use crate::stream_rng;

/// Version stamp embedded in every record's config snapshot; `report`
/// refuses to mix records across versions.
pub const SCHEMA_VERSION: u64 = 1;

/// Rows in the numeric probe used by the symbolic-solution check.
const PROBE_ROWS: usize = 128;

const OUTPUT_DIR_ENV: &str = "DIMSR_OUTPUT_DIR";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("config file does not parse: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Evolution(#[from] EvolutionError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Library(#[from] LibraryIoError),
    #[error("evaluating best expression failed: {0}")]
    Fitness(#[from] FitnessError),
    #[error("recorded expression does not parse back: {0}")]
    Reparse(String),
}

/// Full harness configuration: engine parameters plus the trial grid
/// and artifact locations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub evolution: EvolutionConfig,
    /// Noise levels to sweep; `0.0` means clean targets.
    pub gamma: Vec<f64>,
    pub trials: u64,
    /// Problem spec files; the command line may extend or replace this.
    pub problems: Vec<String>,
    pub output_dir: Option<String>,
    /// Directory holding one `<problem>.library.json` per problem.
    pub library_cache: Option<String>,
    /// Build the repair library on demand when no cache file exists.
    pub build_library: bool,
    pub library_capacity: usize,
    pub train_fraction: f64,
    /// Worker threads for the trial grid; default = available cores.
    pub jobs: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            evolution: EvolutionConfig::default(),
            gamma: vec![0.0],
            trials: 1,
            problems: Vec::new(),
            output_dir: None,
            library_cache: None,
            build_library: true,
            library_capacity: 10_000,
            train_fraction: 0.75,
            jobs: None,
        }
    }
}

/// Harness-only keys of the flat config namespace.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct HarnessFields {
    gamma: Option<Vec<f64>>,
    trials: Option<u64>,
    problems: Option<Vec<String>>,
    output_dir: Option<String>,
    library_cache: Option<String>,
    build_library: Option<bool>,
    library_capacity: Option<usize>,
    train_fraction: Option<f64>,
    jobs: Option<usize>,
}

impl RunConfig {
    /// Parses the flat TOML namespace. Keys matching engine parameters
    /// go to [`EvolutionConfig`]; the rest must be harness fields, and
    /// anything else is a hard error.
    pub fn from_toml_str(text: &str) -> Result<RunConfig, CliError> {
        let table: toml::Table = toml::from_str(text)?;
        let engine_keys: Vec<String> = toml::Table::try_from(EvolutionConfig::default())
            .expect("engine config serializes")
            .keys()
            .cloned()
            .collect();
        let mut engine = toml::Table::new();
        let mut harness = toml::Table::new();
        for (key, value) in table {
            if engine_keys.iter().any(|k| *k == key) {
                engine.insert(key, value);
            } else {
                harness.insert(key, value);
            }
        }
        let evolution: EvolutionConfig = engine
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        let fields: HarnessFields = harness
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        let defaults = RunConfig::default();
        Ok(RunConfig {
            evolution,
            gamma: fields.gamma.unwrap_or(defaults.gamma),
            trials: fields.trials.unwrap_or(defaults.trials),
            problems: fields.problems.unwrap_or(defaults.problems),
            output_dir: fields.output_dir,
            library_cache: fields.library_cache,
            build_library: fields.build_library.unwrap_or(defaults.build_library),
            library_capacity: fields.library_capacity.unwrap_or(defaults.library_capacity),
            train_fraction: fields.train_fraction.unwrap_or(defaults.train_fraction),
            jobs: fields.jobs,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.evolution.validate().map_err(|e| match e {
            EvolutionError::InvalidConfig(m) => CliError::Config(m),
            other => CliError::Evolution(other),
        })?;
        if self.trials == 0 {
            return Err(CliError::Config("trials must be at least 1".into()));
        }
        if self.gamma.is_empty() {
            return Err(CliError::Config("gamma list must not be empty".into()));
        }
        if let Some(g) = self.gamma.iter().find(|g| !g.is_finite() || **g < 0.0) {
            return Err(CliError::Config(format!(
                "gamma must be finite and non-negative, got {g}"
            )));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(CliError::Config(format!(
                "train_fraction must lie strictly between 0 and 1, got {}",
                self.train_fraction
            )));
        }
        if self.library_capacity == 0 {
            return Err(CliError::Config("library_capacity must be at least 1".into()));
        }
        if self.jobs == Some(0) {
            return Err(CliError::Config("jobs must be at least 1".into()));
        }
        if self.evolution.mode == HomogeneityMode::Sbp
            && self.library_cache.is_none()
            && !self.build_library
        {
            return Err(CliError::Config(
                "mode sbp needs a library_cache path or build_library = true".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Parser)]
#[command(name = "dimsr", version, about = "Unit-aware symbolic regression by gene expression programming")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the trial grid and write records plus a summary.
    Run(RunArgs),
    /// Build and persist repair libraries for the given problems.
    BuildLibrary(BuildLibraryArgs),
    /// Aggregate record files into summary and significance tables.
    Report(ReportArgs),
    /// Lint problem files: units, truth expressions, dimensions.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<HomogeneityMode>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    population_size: Option<usize>,
    #[arg(long)]
    generations: Option<usize>,
    #[arg(long)]
    head_length: Option<usize>,
    #[arg(long)]
    max_evaluations: Option<u64>,
    #[arg(long)]
    library_cache: Option<PathBuf>,
    #[arg(long)]
    library_capacity: Option<usize>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut config = match &self.config {
            None => RunConfig::default(),
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
                    path: path.clone(),
                    source,
                })?;
                RunConfig::from_toml_str(&text)?
            }
        };
        let evo = &mut config.evolution;
        if let Some(v) = self.mode {
            evo.mode = v;
        }
        if let Some(v) = self.lambda {
            evo.lambda = v;
        }
        if let Some(v) = self.seed {
            evo.seed = v;
        }
        if let Some(v) = self.population_size {
            evo.population_size = v;
        }
        if let Some(v) = self.generations {
            evo.generations = v;
        }
        if let Some(v) = self.head_length {
            evo.head_length = v;
        }
        if let Some(v) = self.max_evaluations {
            evo.max_evaluations = v;
        }
        if let Some(v) = &self.library_cache {
            config.library_cache = Some(v.display().to_string());
        }
        if let Some(v) = self.library_capacity {
            config.library_capacity = v;
        }
        Ok(config)
    }
}

#[derive(Args)]
struct RunArgs {
    /// Problem spec files; extends/replaces the config's problem list.
    #[arg(value_name = "PROBLEM")]
    problems: Vec<PathBuf>,
    #[command(flatten)]
    common: ConfigArgs,
    /// Noise levels, comma-separated.
    #[arg(long, value_delimiter = ',')]
    gamma: Option<Vec<f64>>,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct BuildLibraryArgs {
    /// Problem spec files to build libraries for.
    #[arg(value_name = "PROBLEM", required = true)]
    problems: Vec<PathBuf>,
    #[command(flatten)]
    common: ConfigArgs,
}

#[derive(Args)]
struct ReportArgs {
    /// Record files or directories containing `*.jsonl`.
    #[arg(value_name = "RECORDS", required = true)]
    records: Vec<PathBuf>,
    /// Directory for the emitted CSV tables.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Base significance level before Bonferroni correction.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(value_name = "PROBLEM", required = true)]
    problems: Vec<PathBuf>,
}

/// Entry point used by the `dimsr` binary.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::BuildLibrary(args) => cmd_build_library(&args),
        Command::Report(args) => cmd_report(&args),
        Command::Validate(args) => cmd_validate(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

/// Stable 64-bit seed derived from labelled parts, so every random
/// stream in a run is reproducible and independent of scheduling.
fn derive_seed(parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part.as_bytes());
        hasher.update([0x1f]);
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let tmp = path.with_extension("jsonl.tmp");
    let io_err = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    std::fs::write(&tmp, contents).map_err(io_err)?;
    std::fs::rename(&tmp, path).map_err(io_err)
}

/// Everything fixed per problem before the trial grid runs.
struct ProblemBundle {
    spec: ProblemSpec,
    problem: Problem,
    truth: Option<ExprTree>,
    library: Option<SemanticLibrary>,
}

fn load_bundle(
    path: &Path,
    config: &RunConfig,
    want_library: bool,
) -> Result<ProblemBundle, CliError> {
    let loaded = ProblemSpec::load(path)?;
    let dataset = loaded.read_dataset()?;
    if config.evolution.mode != HomogeneityMode::None {
        let missing = loaded.spec.missing_units(&dataset);
        if !missing.is_empty() {
            return Err(CliError::Config(format!(
                "problem '{}': mode {} needs units for every column; missing: {}",
                loaded.spec.name,
                config.evolution.mode,
                missing.join(", ")
            )));
        }
    }
    let problem = loaded
        .spec
        .build_problem(&dataset, &default_operators(), true)?;
    let truth = loaded.spec.truth_tree(&problem.table)?;
    let library = if want_library {
        Some(obtain_library(config, &loaded.spec, &problem)?)
    } else {
        None
    };
    Ok(ProblemBundle {
        spec: loaded.spec,
        problem,
        truth,
        library,
    })
}

fn library_file(cache_dir: &str, problem_name: &str) -> PathBuf {
    Path::new(cache_dir).join(format!("{problem_name}.library.json"))
}

fn build_problem_library(config: &RunConfig, spec: &ProblemSpec, problem: &Problem) -> SemanticLibrary {
    let lib_seed = derive_seed(&["library", &config.evolution.seed.to_string(), &spec.name]);
    // Library entries never nest transcendentals directly (no
    // exp(log(…)) stacks); such compositions add bulk, not semantics.
    let banned: Vec<_> = problem
        .table
        .ops()
        .iter()
        .copied()
        .filter(|op| op.is_transcendental())
        .collect();
    build_library(
        &problem.table,
        config.evolution.head_length,
        config.library_capacity,
        &banned,
        &mut stream_rng(lib_seed, 0),
    )
}

/// Loads the cached library when present, otherwise builds it (and
/// persists it when a cache directory is configured).
fn obtain_library(
    config: &RunConfig,
    spec: &ProblemSpec,
    problem: &Problem,
) -> Result<SemanticLibrary, CliError> {
    if let Some(dir) = &config.library_cache {
        let path = library_file(dir, &spec.name);
        if path.exists() {
            return Ok(load_library(&path, &problem.table)?);
        }
        if !config.build_library {
            return Err(CliError::Config(format!(
                "library cache {} not found and build_library is disabled",
                path.display()
            )));
        }
        let library = build_problem_library(config, spec, problem);
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: PathBuf::from(dir),
            source,
        })?;
        save_library(&library, &problem.table, &path)?;
        return Ok(library);
    }
    Ok(build_problem_library(config, spec, problem))
}

fn record_file_name(record: &RunRecord) -> String {
    format!(
        "{}__{}__g{}__t{}.jsonl",
        record.problem, record.mode, record.gamma, record.trial
    )
}

/// Runs one trial of the grid: split, noise the training targets,
/// evolve, score the best expression on the held-out side, and write
/// the record to its own file.
fn run_trial(
    config: &RunConfig,
    bundle: &ProblemBundle,
    gamma: f64,
    trial: u64,
    out_dir: &Path,
) -> Result<RunRecord, CliError> {
    let base = config.evolution.seed.to_string();
    let gkey = format!("{:016x}", gamma.to_bits());
    let tkey = trial.to_string();
    let coords = [bundle.spec.name.as_str(), gkey.as_str(), tkey.as_str()];
    let seed_for = |label: &str| {
        let mut parts = vec![label, base.as_str()];
        parts.extend_from_slice(&coords);
        derive_seed(&parts)
    };

    let (train, test) = split(
        &bundle.problem.x,
        &bundle.problem.y,
        config.train_fraction,
        &mut stream_rng(seed_for("split"), 0),
    )?;
    let train_y = add_noise(&train.y, gamma, &mut stream_rng(seed_for("noise"), 0));
    let train_problem = Problem {
        x: train.x.clone(),
        y: train_y,
        feature_names: bundle.problem.feature_names.clone(),
        feature_dims: bundle.problem.feature_dims.clone(),
        target_dim: bundle.problem.target_dim,
        table: bundle.problem.table.clone(),
    };

    let mut evo_config = config.evolution.clone();
    evo_config.seed = seed_for("trial");
    let mut record = evolve(&evo_config, &train_problem, bundle.library.as_ref())?;
    record.problem = bundle.spec.name.clone();
    record.gamma = gamma;
    record.trial = trial;

    let table = &bundle.problem.table;
    let best = parse_expression(&record.best_expression, table)
        .map_err(|e| CliError::Reparse(e.to_string()))?;
    let pred = evaluate_batch(&best, &test.x, &[])?;
    record.r2_test = r2_score(&test.y, &pred).ok();
    record.complexity = Some(complexity(&simplify(&best, table), table));
    if let Some(truth) = &bundle.truth {
        let probe = make_probe(&train.x, PROBE_ROWS, &mut stream_rng(seed_for("probe"), 0));
        record.symbolic_solution = Some(symbolic_solution(truth, &best, &probe, table));
    }
    record.config = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "run": config,
    });

    let line = serde_json::to_string(&record).map_err(BenchError::from)?;
    write_atomic(&out_dir.join(record_file_name(&record)), &format!("{line}\n"))?;
    Ok(record)
}

fn resolve_output_dir(config: &RunConfig) -> PathBuf {
    config
        .output_dir
        .clone()
        .or_else(|| std::env::var(OUTPUT_DIR_ENV).ok())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let mut config = args.common.load()?;
    if let Some(v) = &args.gamma {
        config.gamma = v.clone();
    }
    if let Some(v) = args.trials {
        config.trials = v;
    }
    if let Some(v) = args.train_fraction {
        config.train_fraction = v;
    }
    if let Some(v) = args.jobs {
        config.jobs = Some(v);
    }
    if let Some(v) = &args.output_dir {
        config.output_dir = Some(v.display().to_string());
    }
    if !args.problems.is_empty() {
        config.problems = args
            .problems
            .iter()
            .map(|p| p.display().to_string())
            .collect();
    }
    config.validate()?;
    if config.problems.is_empty() {
        return Err(CliError::Config("no problems given".into()));
    }

    let want_library = config.evolution.mode == HomogeneityMode::Sbp;
    let bundles: Vec<ProblemBundle> = config
        .problems
        .iter()
        .map(|p| load_bundle(Path::new(p), &config, want_library))
        .collect::<Result<_, _>>()?;

    let out_dir = resolve_output_dir(&config);
    std::fs::create_dir_all(&out_dir).map_err(|source| CliError::Io {
        path: out_dir.clone(),
        source,
    })?;

    let mut tasks: Vec<(usize, f64, u64)> = Vec::new();
    for b in 0..bundles.len() {
        for gamma in &config.gamma {
            for trial in 0..config.trials {
                tasks.push((b, *gamma, trial));
            }
        }
    }

    let execute = || -> Result<Vec<RunRecord>, CliError> {
        tasks
            .par_iter()
            .map(|(b, gamma, trial)| {
                let record = run_trial(&config, &bundles[*b], *gamma, *trial, &out_dir)?;
                println!(
                    "{} mode={} gamma={} trial={}: loss={:.6e} r2_test={:.4} stop={}",
                    record.problem,
                    record.mode,
                    record.gamma,
                    record.trial,
                    record.best_loss,
                    record.r2_test.unwrap_or(f64::NAN),
                    record.stop_reason
                );
                Ok(record)
            })
            .collect()
    };
    let records = match config.jobs {
        None => execute()?,
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?
            .install(execute)?,
    };

    let combined = out_dir.join("records.jsonl");
    if combined.exists() {
        std::fs::remove_file(&combined).map_err(|source| CliError::Io {
            path: combined.clone(),
            source,
        })?;
    }
    write_records(&records, &combined)?;
    write_summary_csv(&summarize(&records), &out_dir.join("summary.csv"))?;
    println!(
        "wrote {} records, {} and {}",
        records.len(),
        combined.display(),
        out_dir.join("summary.csv").display()
    );
    Ok(())
}

fn cmd_build_library(args: &BuildLibraryArgs) -> Result<(), CliError> {
    let config = args.common.load()?;
    let dir = config.library_cache.clone().ok_or_else(|| {
        CliError::Config("build-library needs --library-cache or library_cache in the config".into())
    })?;
    std::fs::create_dir_all(&dir).map_err(|source| CliError::Io {
        path: PathBuf::from(&dir),
        source,
    })?;
    for path in &args.problems {
        let loaded = ProblemSpec::load(path)?;
        let dataset = loaded.read_dataset()?;
        let missing = loaded.spec.missing_units(&dataset);
        if !missing.is_empty() {
            return Err(CliError::Config(format!(
                "problem '{}': libraries need units for every column; missing: {}",
                loaded.spec.name,
                missing.join(", ")
            )));
        }
        let problem = loaded
            .spec
            .build_problem(&dataset, &default_operators(), true)?;
        let library = build_problem_library(&config, &loaded.spec, &problem);
        let file = library_file(&dir, &loaded.spec.name);
        save_library(&library, &problem.table, &file)?;
        println!(
            "{}: {} entries over {} dimension/size keys -> {}",
            loaded.spec.name,
            library.n_entries(),
            library.n_keys(),
            file.display()
        );
    }
    Ok(())
}

fn schema_of(record: &RunRecord) -> u64 {
    record
        .config
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .unwrap_or(0)
}

fn collect_record_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    for path in paths {
        if path.is_dir() {
            let mut inside: Vec<PathBuf> = std::fs::read_dir(path)
                .map_err(|source| CliError::Io {
                    path: path.clone(),
                    source,
                })?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            inside.sort();
            files.extend(inside);
        } else {
            files.push(path.clone());
        }
    }
    Ok(files)
}

fn cmd_report(args: &ReportArgs) -> Result<(), CliError> {
    let files = collect_record_files(&args.records)?;
    let mut records: Vec<RunRecord> = Vec::new();
    for file in &files {
        records.extend(read_records(file)?);
    }
    if records.is_empty() {
        return Err(CliError::Config("no records found".into()));
    }
    let schema = schema_of(&records[0]);
    if let Some(other) = records.iter().find(|r| schema_of(r) != schema) {
        return Err(CliError::Config(format!(
            "mixed record schema versions: {} and {}",
            schema,
            schema_of(other)
        )));
    }

    std::fs::create_dir_all(&args.out).map_err(|source| CliError::Io {
        path: args.out.clone(),
        source,
    })?;
    let summary = summarize(&records);
    let summary_path = args.out.join("summary.csv");
    write_summary_csv(&summary, &summary_path)?;
    println!("summary ({} rows): {}", summary.len(), summary_path.display());

    let significance = significance_rows(&records, args.alpha)?;
    if significance.is_empty() {
        println!("significance matrix skipped: needs two modes with >= 6 shared trials");
        return Ok(());
    }
    let sig_path = args.out.join("significance.csv");
    let mut out = String::from(
        "gamma,method_a,method_b,n,w_plus,p_value,alpha,significant,grade\n",
    );
    for (gamma, pair) in &significance {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            gamma,
            pair.a,
            pair.b,
            pair.n_effective,
            pair.w_plus,
            pair.p_value,
            pair.alpha,
            pair.significant,
            pair.grade
        ));
        println!(
            "gamma={}: {} vs {} p={:.4} {}",
            gamma, pair.a, pair.b, pair.p_value, pair.grade
        );
    }
    std::fs::write(&sig_path, out).map_err(|source| CliError::Io {
        path: sig_path.clone(),
        source,
    })?;
    println!("significance matrix: {}", sig_path.display());
    Ok(())
}

/// Pairs test-R² samples across modes by (problem, trial) within each
/// noise level and runs the signed-rank tests. Noise levels with fewer
/// than two modes or fewer than six complete pairs contribute nothing.
fn significance_rows(
    records: &[RunRecord],
    alpha: f64,
) -> Result<Vec<(String, crate::bench::PairResult)>, CliError> {
    let mut by_gamma: BTreeMap<String, Vec<&RunRecord>> = BTreeMap::new();
    for record in records {
        by_gamma
            .entry(format!("{}", record.gamma))
            .or_default()
            .push(record);
    }
    let mut rows = Vec::new();
    for (gamma, group) in by_gamma {
        let mut modes: Vec<String> = group.iter().map(|r| r.mode.clone()).collect();
        modes.sort();
        modes.dedup();
        if modes.len() < 2 {
            continue;
        }
        // Key → per-mode R², keeping only keys every mode reported.
        let mut cells: BTreeMap<(String, u64), BTreeMap<String, f64>> = BTreeMap::new();
        for record in &group {
            if let Some(r2) = record.r2_test {
                cells
                    .entry((record.problem.clone(), record.trial))
                    .or_default()
                    .insert(record.mode.clone(), r2);
            }
        }
        let mut samples: BTreeMap<String, Vec<f64>> =
            modes.iter().map(|m| (m.clone(), Vec::new())).collect();
        for by_mode in cells.values() {
            if modes.iter().all(|m| by_mode.contains_key(m)) {
                for mode in &modes {
                    samples.get_mut(mode).unwrap().push(by_mode[mode]);
                }
            }
        }
        let n_pairs = samples.values().next().map_or(0, Vec::len);
        if n_pairs < 6 {
            continue;
        }
        for pair in wilcoxon_report(&samples, alpha)? {
            rows.push((gamma.clone(), pair));
        }
    }
    Ok(rows)
}

fn cmd_validate(args: &ValidateArgs) -> Result<(), CliError> {
    let mut failures = 0usize;
    for path in &args.problems {
        match validate_problem(path) {
            Ok(summary) => println!("ok {}: {}", path.display(), summary),
            Err(e) => {
                failures += 1;
                eprintln!("FAIL {}: {e}", path.display());
            }
        }
    }
    if failures > 0 {
        return Err(CliError::Config(format!(
            "{failures} problem file(s) failed validation"
        )));
    }
    Ok(())
}

fn validate_problem(path: &Path) -> Result<String, CliError> {
    let loaded = ProblemSpec::load(path)?;
    let dataset = loaded.read_dataset()?;
    let problem = loaded
        .spec
        .build_problem(&dataset, &default_operators(), true)?;
    let truth = loaded.spec.truth_tree(&problem.table)?;
    let missing = loaded.spec.missing_units(&dataset);
    if let Some(truth) = &truth {
        if missing.is_empty() && truth.dims[0] != DimResult::Defined(problem.target_dim) {
            return Err(CliError::Config(format!(
                "truth expression dimension {:?} does not match the target unit",
                truth.dims[0]
            )));
        }
    }
    let mut notes = vec![format!(
        "{} rows, {} features, target '{}'",
        dataset.y.len(),
        dataset.feature_names.len(),
        dataset.target_name
    )];
    if truth.is_some() {
        notes.push("truth ok".into());
    }
    if !missing.is_empty() {
        notes.push(format!("no units for: {}", missing.join(", ")));
    }
    Ok(notes.join("; "))
}
