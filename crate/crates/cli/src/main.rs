//! `rmp`: run scenarios, compare combination strategies, check invariants
//! and generate reaching scenes.
//!
//! Exit codes: 0 success, 1 I/O or internal failure, 2 collision, 3 timeout,
//! 4 configuration error, 5 divergence. `verify` exits 1 when any invariant
//! fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use rmp_core::simulator::compare::{batch_compare, default_strategies, threads_from_env};
use rmp_core::simulator::generator::{generate_batch, GeneratorConfig};
use rmp_core::simulator::output::{trajectory_csv, RunSummary};
use rmp_core::simulator::scenario::Scenario;
use rmp_core::simulator::{Strategy, Verdict};
use rmp_core::verify::{self, Fault, VerifyOptions};

#[derive(Parser)]
#[command(name = "rmp", version, about = "Riemannian motion policy simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its trajectory CSV and JSON summary.
    Simulate(SimulateArgs),
    /// Run every strategy over a batch of scenarios and tabulate the results.
    Compare(CompareArgs),
    /// Run invariant suites: all, algebra, kinematics, limits, controllers, tree.
    Verify(VerifyArgs),
    /// Write generated reaching scenes as scenario files.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario file (JSON).
    file: PathBuf,
    /// Output directory; defaults to the scenario's `output_dir`, then the
    /// scenario file's directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the scenario's `strategy`.
    #[arg(long)]
    strategy: Option<String>,
    /// Overrides `integrator.dt`.
    #[arg(long)]
    dt: Option<f64>,
    /// Overrides `integrator.steps`.
    #[arg(long)]
    steps: Option<usize>,
    /// Overrides the scenario's `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct CompareArgs {
    /// JSON file with any of the keys below; flags given on the command line
    /// take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of generated scenes to include.
    #[arg(long)]
    generate: Option<usize>,
    /// Generator seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated strategies, e.g. `metric_weighted,scaled_identity@10`.
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<String>>,
    /// Directory of scenario files to include.
    #[arg(long)]
    dir: Option<PathBuf>,
    /// Where to write `runs.csv`, `summary.csv` and `summary.txt`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; falls back to the config file, then RMP_THREADS.
    #[arg(long)]
    threads: Option<usize>,
}

/// File form of `compare`'s flags.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CompareConfig {
    generate: Option<usize>,
    seed: Option<u64>,
    strategies: Option<Vec<String>>,
    dir: Option<PathBuf>,
    out: Option<PathBuf>,
    threads: Option<usize>,
    generator: Option<GeneratorConfig>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Suite to run.
    #[arg(default_value = "all")]
    suite: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Corrupt the build on purpose (negative control): `negated-metric`.
    #[arg(long)]
    inject_fault: Option<String>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 20)]
    count: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Generator parameters (JSON); unset keys keep their defaults.
    #[arg(long)]
    generator: Option<PathBuf>,
}

/// Error carrying the process exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

const EXIT_IO: u8 = 1;
const EXIT_CONFIG: u8 = 4;

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        error: e.into(),
    }
}

fn io_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_IO,
        error: e.into(),
    }
}

fn verdict_code(v: Verdict) -> u8 {
    match v {
        Verdict::Success => 0,
        Verdict::Collision => 2,
        Verdict::Timeout => 3,
        Verdict::Divergence => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Compare(a) => compare(a),
        Command::Verify(a) => run_verify(a),
        Command::Generate(a) => generate(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(config_err)?;
    serde_json::from_str(&text)
        .with_context(|| format!("{}", path.display()))
        .map_err(config_err)
}

fn load_scenario(path: &Path) -> Result<Scenario, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(config_err)?;
    Scenario::from_json(&text)
        .with_context(|| format!("{}", path.display()))
        .map_err(config_err)
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(io_err)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create {}", dir.display()))
        .map_err(io_err)
}

fn simulate(a: SimulateArgs) -> Result<u8, Failure> {
    let mut s = load_scenario(&a.file)?;
    if let Some(st) = &a.strategy {
        s.strategy = st.parse().map_err(config_err)?;
    }
    if let Some(dt) = a.dt {
        s.integrator.dt = dt;
    }
    if let Some(n) = a.steps {
        s.integrator.steps = n;
    }
    if let Some(seed) = a.seed {
        s.seed = seed;
    }
    let base = a.file.parent().unwrap_or(Path::new(".")).to_path_buf();
    let out_dir = match (&a.out, &s.output_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => base.join(o),
        (None, None) => base,
    };
    let (built, outcome) = s
        .run()
        .with_context(|| format!("scenario '{}'", s.name))
        .map_err(config_err)?;
    let summary = RunSummary::new(&s, s.strategy, &built, &outcome).map_err(io_err)?;
    create_dir(&out_dir)?;
    let csv_path = out_dir.join(format!("{}.trajectory.csv", s.name));
    let json_path = out_dir.join(format!("{}.summary.json", s.name));
    write(&csv_path, &trajectory_csv(&outcome))?;
    write(&json_path, &summary.to_json())?;
    println!(
        "{}: {} ({}) with {}; {} steps, final error {:.3e}, min clearance {:.4}",
        s.name,
        summary.verdict,
        summary.message,
        summary.strategy,
        summary.steps,
        summary.final_error,
        summary.min_clearance
    );
    println!("wrote {} and {}", csv_path.display(), json_path.display());
    if outcome.verdict != Verdict::Success {
        eprintln!("run ended with {}: {}", outcome.verdict, outcome.message);
    }
    Ok(verdict_code(outcome.verdict))
}

/// Scenario files in `dir`, sorted by file name.
fn load_dir(dir: &Path) -> Result<Vec<Scenario>, Failure> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("cannot read directory {}", dir.display()))
        .map_err(config_err)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_scenario(p)).collect()
}

fn compare(a: CompareArgs) -> Result<u8, Failure> {
    let file: CompareConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => CompareConfig::default(),
    };
    let generate = a.generate.or(file.generate).unwrap_or(0);
    let seed = a.seed.or(file.seed).unwrap_or(7);
    let dir = a.dir.or(file.dir);
    let out = a.out.or(file.out).unwrap_or_else(|| PathBuf::from("."));
    let threads = a.threads.or(file.threads).or_else(threads_from_env);
    if threads == Some(0) {
        return Err(config_err(anyhow::anyhow!("thread count must be positive")));
    }
    let strategies: Vec<Strategy> = match a.strategies.or(file.strategies) {
        Some(names) => names
            .iter()
            .map(|n| n.parse::<Strategy>())
            .collect::<Result<_, _>>()
            .map_err(config_err)?,
        None => default_strategies(),
    };

    let mut scenarios = match &dir {
        Some(d) => load_dir(d)?,
        None => Vec::new(),
    };
    scenarios.extend(generate_batch(generate, seed, &file.generator.unwrap_or_default()));
    if scenarios.is_empty() {
        return Err(config_err(anyhow::anyhow!(
            "batch is empty (give --generate N or --dir DIR with scenario files)"
        )));
    }
    let report = batch_compare(&scenarios, &strategies, threads).map_err(config_err)?;
    create_dir(&out)?;
    write(&out.join("runs.csv"), &report.records_csv())?;
    write(&out.join("summary.csv"), &report.summary_csv())?;
    let human = report.human_summary();
    write(&out.join("summary.txt"), &human)?;
    print!("{human}");
    println!("wrote runs.csv, summary.csv and summary.txt to {}", out.display());
    Ok(0)
}

fn run_verify(a: VerifyArgs) -> Result<u8, Failure> {
    let suites = verify::parse_selector(&a.suite).map_err(config_err)?;
    let fault = match &a.inject_fault {
        Some(f) => Some(f.parse::<Fault>().map_err(config_err)?),
        None => None,
    };
    let outcomes = verify::run(&suites, &VerifyOptions { seed: a.seed, fault });
    for o in &outcomes {
        println!("{o}");
    }
    let failed: Vec<_> = outcomes.iter().filter(|o| !o.passed).collect();
    println!("{} checks, {} failed", outcomes.len(), failed.len());
    if failed.is_empty() {
        return Ok(0);
    }
    for o in &failed {
        eprintln!(
            "violated: {}/{} (reproduce with `rmp verify {} --seed {}`)",
            o.suite, o.invariant, o.suite, o.seed
        );
    }
    Ok(1)
}

fn generate(a: GenerateArgs) -> Result<u8, Failure> {
    let cfg: GeneratorConfig = match &a.generator {
        Some(p) => read_json(p)?,
        None => GeneratorConfig::default(),
    };
    create_dir(&a.out)?;
    for s in generate_batch(a.count, a.seed, &cfg) {
        write(&a.out.join(format!("{}.json", s.name)), &s.to_json())?;
    }
    println!("wrote {} scenes to {}", a.count, a.out.display());
    Ok(0)
}
