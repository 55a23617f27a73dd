//! The `mmtsn` command line: generate, train, eval, infer, gradcheck, compare.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::infer::{evaluate_case, evaluate_cases, evaluate_ground_truth, predict_volume};
use crate::metrics::report::{EvaluationReport, REPORT_TITLE};
use crate::model::Variant;
use crate::phantom::dataset::{generate_cases, load_cases, write_cases, Case};
use crate::phantom::io::{read_volume, write_labels};
use crate::phantom::Extents;
use crate::train::{self, load_checkpoint, TrainConfig, CHECKPOINT_DIR};
use crate::verify::gradient_suite;

pub const RUN_MANIFEST: &str = "run_manifest.json";
pub const THREADS_ENV: &str = "MMTS_THREADS";

#[derive(Debug, Parser)]
#[command(name = "mmtsn", version, about = "Multi-modal tumor segmentation on synthetic phantoms")]
pub struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write deterministic phantom cases.
    Generate(GenerateArgs),
    /// Train one model variant.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a directory of cases.
    Eval(EvalArgs),
    /// Segment one image volume.
    Infer(InferArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck,
    /// Train and evaluate all five comparison methods.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Volume extents as DxHxW.
    #[arg(long, default_value = "32x32x32", value_parser = parse_extents)]
    pub extents: Extents,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON training config; every field is optional.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Overrides the config's variant.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Overrides the config's step count.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint directory; not needed with --ground-truth.
    #[arg(long, required_unless_present = "ground_truth")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    /// Sliding-window patch extents as DxHxW.
    #[arg(long, default_value = "16x16x16", value_parser = parse_extents)]
    pub patch: Extents,
    /// Score the ground truth against itself instead of running a model.
    #[arg(long)]
    pub ground_truth: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Image volume file.
    #[arg(long)]
    pub input: PathBuf,
    /// Output label volume file.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value = "16x16x16", value_parser = parse_extents)]
    pub patch: Extents,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Where to write the table, per-method runs and the run manifest.
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn parse_extents(s: &str) -> Result<Extents, String> {
    let parts: Vec<&str> = s.split('x').collect();
    let [d, h, w] = parts[..] else {
        return Err(format!("expected DxHxW, got {s:?}"));
    };
    let parse = |p: &str| p.parse::<usize>().map_err(|e| format!("bad extent {p:?}: {e}"));
    Ok([parse(d)?, parse(h)?, parse(w)?])
}

/// A command failure with its exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Run(Error::Config(_)) => 2,
            CliError::Run(_) => 1,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    build: String,
    seed: u64,
    config_sha256: String,
    config: serde_json::Value,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn write_run_manifest(dir: &Path, command: &str, seed: u64, config: &impl Serialize) -> CliResult<()> {
    let value = serde_json::to_value(config).map_err(Error::from)?;
    let canonical = serde_json::to_string(&value).map_err(Error::from)?;
    let manifest = RunManifest {
        command,
        build: format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
        seed,
        config_sha256: sha256_hex(canonical.as_bytes()),
        config: value,
    };
    let mut text = serde_json::to_string_pretty(&manifest).map_err(Error::from)?;
    text.push('\n');
    write_file(&dir.join(RUN_MANIFEST), text.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e).into())
}

fn require_dir(path: &Path, what: &str) -> CliResult<()> {
    if !path.is_dir() {
        return Err(CliError::Usage(format!("{what} {} is not a directory", path.display())));
    }
    Ok(())
}

fn load_train_config(path: Option<&Path>) -> CliResult<TrainConfig> {
    match path {
        Some(p) => {
            if !p.is_file() {
                return Err(CliError::Usage(format!("config {} does not exist", p.display())));
            }
            Ok(TrainConfig::load(p)?)
        }
        None => Ok(TrainConfig::default()),
    }
}

/// Worker count for evaluation: `MMTS_THREADS` if set, else the CPU count.
pub fn eval_threads() -> CliResult<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        Err(_) => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Generate(a) => generate(seed.unwrap_or(0), a),
        Command::Train(a) => train_cmd(seed, a),
        Command::Eval(a) => eval_cmd(a),
        Command::Infer(a) => infer_cmd(a),
        Command::Gradcheck => gradcheck_cmd(seed.unwrap_or(0)),
        Command::Compare(a) => compare_cmd(seed, a),
    }
}

fn generate(seed: u64, a: GenerateArgs) -> CliResult<()> {
    if a.count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    let cases = generate_cases(seed, a.extents, a.count).map_err(|e| match e {
        Error::Data(msg) => CliError::Usage(msg),
        other => other.into(),
    })?;
    let written = write_cases(&a.out_dir, &cases)?;
    #[derive(Serialize)]
    struct GenerateConfig {
        extents: Extents,
        count: usize,
    }
    write_run_manifest(&a.out_dir, "generate", seed, &GenerateConfig { extents: a.extents, count: a.count })?;
    println!("wrote {} files to {}", written.len(), a.out_dir.display());
    Ok(())
}

fn train_cmd(seed: Option<u64>, a: TrainArgs) -> CliResult<()> {
    require_dir(&a.data_dir, "data dir")?;
    let mut config = load_train_config(a.config.as_deref())?;
    if let Some(v) = a.variant {
        config.variant = v;
    }
    if let Some(s) = a.steps {
        config.steps = s;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    config.validate()?;
    let cases = load_cases(&a.data_dir)?;
    let samples = train::prepare_samples(&cases, config.patch_extents)?;
    let mut trainer = if a.resume {
        train::Trainer::resume(config.clone(), samples, &a.out_dir)?
    } else {
        train::Trainer::new(config.clone(), samples)?.with_output(&a.out_dir)
    };
    write_run_manifest(&a.out_dir, "train", config.seed, &config)?;
    write_file(&a.out_dir.join("config.json"), config.to_json().as_bytes())?;
    trainer.run()?;
    let last = trainer.log().last().expect("at least one step");
    println!(
        "{} steps of {} done, final loss {:.6}; outputs in {}",
        trainer.steps_done(),
        config.variant,
        last.total,
        a.out_dir.display()
    );
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> CliResult<()> {
    require_dir(&a.data_dir, "data dir")?;
    let cases = load_cases(&a.data_dir)?;
    let threads = eval_threads()?;
    let reports = if a.ground_truth {
        evaluate_cases(&cases, threads, evaluate_ground_truth)?
    } else {
        let dir = a.checkpoint.as_deref().expect("clap requires --checkpoint");
        require_dir(dir, "checkpoint")?;
        let graph = load_checkpoint(dir, None)?.graph;
        evaluate_cases(&cases, threads, |c| evaluate_case(&graph, c, a.patch))?
    };
    let report = EvaluationReport::new(reports);
    write_file(&a.report, report.to_json().as_bytes())?;
    println!("{}", format_aggregate(&report));
    Ok(())
}

fn infer_cmd(a: InferArgs) -> CliResult<()> {
    require_dir(&a.checkpoint, "checkpoint")?;
    let graph = load_checkpoint(&a.checkpoint, None)?.graph;
    let image = read_volume(&a.input)?;
    let labels = predict_volume(&graph, &image, a.patch)?.labels()?;
    if let Some(parent) = a.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_labels(&a.output, &labels)?;
    println!("wrote {}", a.output.display());
    Ok(())
}

fn gradcheck_cmd(seed: u64) -> CliResult<()> {
    let report = gradient_suite(seed)?;
    for c in &report.checks {
        println!(
            "{} {:<44} max rel err {:.3e} (tol {:.0e}, {} coords)",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.max_rel_error,
            c.tolerance,
            c.checked
        );
    }
    let failed = report.failures().count();
    println!(
        "{} of {} checks passed in {:.1} s",
        report.checks.len() - failed,
        report.checks.len(),
        report.elapsed.as_secs_f64()
    );
    if failed > 0 {
        return Err(Error::NonFinite(format!("{failed} gradient checks failed")).into());
    }
    Ok(())
}

fn format_aggregate(report: &EvaluationReport) -> String {
    let cell = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
    let mut out = format!("{}\n{:<8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n", report.title, "", "dice_et", "dice_tc", "dice_wt", "hd95_et", "hd95_tc", "hd95_wt");
    let a = &report.aggregate;
    for (name, row) in [("mean", a.mean), ("median", a.median), ("q25", a.q25), ("q75", a.q75)] {
        let _ = writeln!(
            out,
            "{:<8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
            name,
            cell(row.dice.et),
            cell(row.dice.tc),
            cell(row.dice.wt),
            cell(row.hd95.et),
            cell(row.hd95.tc),
            cell(row.hd95.wt)
        );
    }
    out
}

/// One row of the comparison table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodRow {
    pub method: String,
    /// Mean Dice ET, TC, WT then mean HD95 ET, TC, WT over the held-out cases.
    pub metrics: [Option<f64>; 6],
}

pub const COMPARE_COLUMNS: [&str; 6] = ["dice_et", "dice_tc", "dice_wt", "hd95_et", "hd95_tc", "hd95_wt"];

/// The five compared methods: the four variants plus MMTSN without the
/// containment loss.
pub fn compare_methods(base: &TrainConfig) -> Vec<(String, TrainConfig)> {
    let mut methods: Vec<(String, TrainConfig)> = [Variant::UnetPre, Variant::UnetPost, Variant::MmtsnNoScfb]
        .into_iter()
        .map(|v| (v.to_string(), TrainConfig { variant: v, ..base.clone() }))
        .collect();
    let mut no_sc = TrainConfig { variant: Variant::Mmtsn, ..base.clone() };
    no_sc.weights.lambda_sc = 0.0;
    methods.push(("mmtsn_no_sc_loss".into(), no_sc));
    methods.push(("mmtsn".into(), TrainConfig { variant: Variant::Mmtsn, ..base.clone() }));
    methods
}

/// Cases used for evaluation: the last `ceil(n / 5)`; the rest train.
pub fn split_cases(cases: &[Case]) -> CliResult<(&[Case], &[Case])> {
    if cases.len() < 2 {
        return Err(CliError::Usage(format!("compare needs at least 2 cases, found {}", cases.len())));
    }
    let held_out = cases.len().div_ceil(5);
    Ok(cases.split_at(cases.len() - held_out))
}

pub fn format_compare_table(rows: &[MethodRow], config: &TrainConfig, n_train: usize, n_eval: usize) -> (String, String) {
    let cell = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
    let mut text = format!("{REPORT_TITLE}\n{:<18}", "method");
    let mut csv = format!("method,{}\n", COMPARE_COLUMNS.join(","));
    for c in COMPARE_COLUMNS {
        let _ = write!(text, " {c:>8}");
    }
    text.push('\n');
    for row in rows {
        let _ = write!(text, "{:<18}", row.method);
        csv.push_str(&row.method);
        for v in row.metrics {
            let _ = write!(text, " {:>8}", cell(v));
            csv.push(',');
            if let Some(v) = v {
                csv.push_str(&v.to_string());
            }
        }
        text.push('\n');
        csv.push('\n');
    }
    let _ = writeln!(
        text,
        "seed {} shared by all methods; cases: {} train, {} eval; {} steps per method",
        config.seed, n_train, n_eval, config.steps
    );
    (text, csv)
}

fn compare_cmd(seed: Option<u64>, a: CompareArgs) -> CliResult<()> {
    require_dir(&a.data_dir, "data dir")?;
    let mut base = load_train_config(a.config.as_deref())?;
    if let Some(s) = seed {
        base.seed = s;
    }
    base.validate()?;
    let cases = load_cases(&a.data_dir)?;
    let (train_cases, eval_cases) = split_cases(&cases)?;
    let threads = eval_threads()?;
    write_run_manifest(&a.out_dir, "compare", base.seed, &base)?;
    let mut rows = Vec::new();
    for (name, config) in compare_methods(&base) {
        let run_dir = a.out_dir.join(&name);
        let trainer = train::train(&config, train_cases, &run_dir)?;
        let reports = evaluate_cases(eval_cases, threads, |c| evaluate_case(trainer.graph(), c, config.patch_extents))?;
        let report = EvaluationReport::new(reports);
        write_file(&run_dir.join("report.json"), report.to_json().as_bytes())?;
        let m = report.aggregate.mean;
        rows.push(MethodRow {
            method: name,
            metrics: [m.dice.et, m.dice.tc, m.dice.wt, m.hd95.et, m.hd95.tc, m.hd95.wt],
        });
        eprintln!("finished {}", rows.last().expect("just pushed").method);
    }
    let (text, csv) = format_compare_table(&rows, &base, train_cases.len(), eval_cases.len());
    write_file(&a.out_dir.join("compare.txt"), text.as_bytes())?;
    write_file(&a.out_dir.join("compare.csv"), csv.as_bytes())?;
    print!("{text}");
    Ok(())
}

/// Checkpoint directory written by `train` under an output directory.
pub fn checkpoint_dir(out_dir: &Path) -> PathBuf {
    out_dir.join(CHECKPOINT_DIR)
}
