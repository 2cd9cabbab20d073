//! Command-line front end: `run`, `gen`, `sweep` and `eval`.
//!
//! Exit codes are a stable contract: 0 success, 1 runtime failure, 2 usage or
//! configuration error.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Child, Command};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{apply_split, generate_blobs, load_csv, load_masks, write_csv, write_masks, BlobConfig, DataError, Dataset, SplitConfig};
use crate::metrics::{open_world_report, EvalReport};
use crate::prototypes::{write_checkpoint, GroupPartition};
use crate::trainer::{run, ModelSnapshot, RunRecord, TrainConfig, TrainError};

/// Output root used when `--out` is absent.
pub const OUT_ENV: &str = "PROTOGROUP_OUT";

/// Keys `sweep` accepts, with whether they take integer values.
pub const SWEEPABLE: &[(&str, bool)] = &[
    ("lambda1", false),
    ("lambda2", false),
    ("temperature", false),
    ("kappa", true),
    ("num_prototypes", true),
    ("noise_std", false),
    ("learning_rate", false),
];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{msg}")]
    Runtime { msg: String, diagnostic: Option<PathBuf> },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime { .. } => 1,
        }
    }

    fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime {
            msg: msg.into(),
            diagnostic: None,
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::runtime(format!("{}: {e}", path.display()))
}

fn data_error(e: DataError) -> CliError {
    match e {
        DataError::InvalidGenerator(_) | DataError::Generation { .. } | DataError::Split(_) => {
            CliError::Usage(e.to_string())
        }
        DataError::Parse { .. } | DataError::Io { .. } => CliError::runtime(e.to_string()),
    }
}

/// Where the data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Blobs(BlobConfig),
    Csv {
        path: PathBuf,
        #[serde(default = "yes")]
        has_header: bool,
        /// `index,is_known,is_labeled` file; when absent `split` is applied.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        masks: Option<PathBuf>,
    },
}

fn yes() -> bool {
    true
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Blobs(BlobConfig::default())
    }
}

/// Everything one run needs. Training keys sit at the top level, the data
/// source and split in their own tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct CliConfigFile {
    #[serde(flatten)]
    pub train: TrainConfig,
    pub data: DataSource,
    pub split: SplitConfig,
}

impl CliConfigFile {
    /// Parses a TOML table, rejecting any key the schema does not know.
    pub fn from_table(table: &toml::Table) -> Result<Self, CliError> {
        let cfg: CliConfigFile = toml::Value::Table(table.clone()).try_into().map_err(|e: toml::de::Error| {
            let msg = e.message();
            // nested tables reject unknown keys themselves; report the full path
            let unknown = msg
                .strip_prefix("unknown field `")
                .and_then(|rest| rest.split('`').next())
                .and_then(|name| find_key_path(table, name, ""));
            match unknown {
                Some(path) => CliError::Usage(format!("unknown config key `{path}`")),
                None => CliError::Usage(format!("invalid config: {msg}")),
            }
        })?;
        let echo = cfg.to_table()?;
        if let Some(key) = first_unknown_key(table, &echo, "") {
            return Err(CliError::Usage(format!("unknown config key `{key}`")));
        }
        Ok(cfg)
    }

    pub fn to_table(&self) -> Result<toml::Table, CliError> {
        toml::Table::try_from(self).map_err(|e| CliError::Usage(format!("config cannot be represented: {e}")))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Usage(format!("config cannot be represented: {e}")))
    }

    /// Loads the dataset with open-world masks applied.
    pub fn load_dataset(&self) -> Result<Dataset, CliError> {
        match &self.data {
            DataSource::Blobs(b) => {
                let d = generate_blobs(b).map_err(data_error)?;
                apply_split(&d, &self.split, self.train.seed).map_err(data_error)
            }
            DataSource::Csv { path, has_header, masks } => {
                let d = load_csv(path, *has_header).map_err(data_error)?;
                match masks {
                    Some(m) => load_masks(&d, m).map_err(data_error),
                    None => apply_split(&d, &self.split, self.train.seed).map_err(data_error),
                }
            }
        }
    }

    /// Makes relative data paths absolute against `base`, so the echoed
    /// config works from any directory.
    fn resolve_paths(&mut self, base: &Path) {
        if let DataSource::Csv { path, masks, .. } = &mut self.data {
            let fix = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            };
            fix(path);
            if let Some(m) = masks {
                fix(m);
            }
        }
    }
}

/// Depth-first path of the first key in `given` absent from `known`.
fn first_unknown_key(given: &toml::Table, known: &toml::Table, prefix: &str) -> Option<String> {
    for (k, v) in given {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (v, known.get(k)) {
            (_, None) => return Some(path),
            (toml::Value::Table(g), Some(toml::Value::Table(kn))) => {
                if let Some(p) = first_unknown_key(g, kn, &path) {
                    return Some(p);
                }
            }
            _ => {}
        }
    }
    None
}

/// Dotted path of the first key named `name`, searched depth-first.
fn find_key_path(table: &toml::Table, name: &str, prefix: &str) -> Option<String> {
    for (k, v) in table {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        if k == name {
            return Some(path);
        }
        if let toml::Value::Table(t) = v {
            if let Some(p) = find_key_path(t, name, &path) {
                return Some(p);
            }
        }
    }
    None
}

/// Parses `key=value`; the value is read as a TOML literal, falling back to a
/// bare string.
fn parse_override(raw: &str) -> Result<(Vec<String>, toml::Value), CliError> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override `{raw}` is not key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::Usage(format!("override `{raw}` has an empty key")));
    }
    let value = value.trim();
    let parsed = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((key.split('.').map(str::to_string).collect(), parsed))
}

fn set_path(table: &mut toml::Table, path: &[String], value: toml::Value) -> Result<(), CliError> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("override path crosses non-table key `{p}`")))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

/// Reads a config file (or starts from defaults) and applies overrides.
pub fn load_config(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<CliConfigFile, CliError> {
    let (mut table, base) = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            let table = text
                .parse::<toml::Table>()
                .map_err(|e| CliError::Usage(format!("{}: {}", p.display(), e.message())))?;
            let abs = std::path::absolute(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            let base = abs.parent().map(Path::to_path_buf).unwrap_or_default();
            (table, base)
        }
        None => (toml::Table::new(), std::env::current_dir().unwrap_or_default()),
    };
    for raw in overrides {
        let (key, value) = parse_override(raw)?;
        set_path(&mut table, &key, value)?;
    }
    if let Some(s) = seed {
        let s = i64::try_from(s).map_err(|_| CliError::Usage(format!("seed {s} exceeds the config range")))?;
        table.insert("seed".into(), toml::Value::Integer(s));
    }
    let mut cfg = CliConfigFile::from_table(&table)?;
    cfg.resolve_paths(&base);
    cfg.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

/// Final scores plus the effective config; the file written as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub estimated_class_count: usize,
    pub final_eval: EvalReport,
    pub group_counts: Vec<usize>,
    pub seed: u64,
    pub train_size: usize,
    pub eval_size: usize,
    pub config: CliConfigFile,
}

#[derive(Debug, Serialize)]
struct AbortReport<'a> {
    error: String,
    epoch: Option<usize>,
    batch: Option<usize>,
    loss: Option<&'a crate::losses::LossBreakdown>,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

/// Trains per `cfg` and writes `run.csv`, `summary.json`, `config.toml`,
/// `prototypes.ckpt` and `model.json` into `out`. On a training abort the
/// diagnostic goes to `abort.json`.
pub fn run_to_dir(cfg: &CliConfigFile, out: &Path) -> Result<RunSummary, CliError> {
    create_dir(out)?;
    write(&out.join("config.toml"), cfg.to_toml()?)?;
    let dataset = cfg.load_dataset()?;
    let outcome = match run(&dataset, &cfg.train) {
        Ok(o) => o,
        Err(TrainError::Config(m)) => return Err(CliError::Usage(m)),
        Err(e) => {
            let (epoch, batch, loss) = match &e {
                TrainError::NonFiniteLoss { epoch, batch, breakdown } => (Some(*epoch), Some(*batch), Some(breakdown)),
                _ => (None, None, None),
            };
            let report = AbortReport {
                error: e.to_string(),
                epoch,
                batch,
                loss,
            };
            let path = out.join("abort.json");
            let json = serde_json::to_string_pretty(&report).expect("plain data serializes");
            write(&path, json)?;
            return Err(CliError::Runtime {
                msg: format!("run aborted: {e}"),
                diagnostic: Some(path),
            });
        }
    };
    let record: &RunRecord = &outcome.record;
    write(&out.join("run.csv"), record.to_csv())?;
    write(
        &out.join("prototypes.ckpt"),
        write_checkpoint(&outcome.state.bank, &outcome.state.partition),
    )?;
    let model = serde_json::to_string(&outcome.state.snapshot()).expect("plain data serializes");
    write(&out.join("model.json"), model)?;
    let summary = RunSummary {
        estimated_class_count: record.estimated_class_count,
        final_eval: record.final_eval().clone(),
        group_counts: record.rows.iter().map(|r| r.group_count).collect(),
        seed: record.seed,
        train_size: record.train_size,
        eval_size: record.eval_size,
        config: cfg.clone(),
    };
    let json = serde_json::to_string_pretty(&summary).expect("plain data serializes");
    write(&out.join("summary.json"), json)?;
    Ok(summary)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"))
}

fn print_scores(r: &EvalReport, estimated: usize) {
    println!(
        "known_acc={} novel_acc={} all_acc={:.4} nmi={:.4} estimated_class_count={estimated}",
        fmt_opt(r.known_acc),
        fmt_opt(r.novel_acc),
        r.all_acc,
        r.nmi
    );
}

#[derive(Debug, Parser)]
#[command(name = "protogroup", version, about = "Open-world class discovery with progressively grouped prototypes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Output directory (defaults to $PROTOGROUP_OUT, then the current directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed override.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted `key=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Train and evaluate one configuration.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Write a Gaussian-blob dataset as CSV.
    Gen {
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 200)]
        per_class: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 6.0)]
        separation: f64,
        #[arg(long, default_value_t = 1.0)]
        spread: f64,
        /// Also write open-world masks here, using the split fractions below.
        #[arg(long)]
        masks: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        known_fraction: f64,
        #[arg(long, default_value_t = 0.1)]
        label_fraction: f64,
        /// Output CSV file (defaults to data.csv under the output root).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// One run per value of a single numeric key, plus an aggregate CSV.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        common: Common,
        /// One of lambda1, lambda2, temperature, kappa, num_prototypes, noise_std, learning_rate.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
        /// Run this many values at once as separate processes.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Re-score a saved model against a CSV dataset.
    Eval {
        /// `model.json` from a run, or the run directory holding it.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// The CSV has no header row.
        #[arg(long)]
        no_header: bool,
        /// Optional directory for `eval.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn out_root(out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn cmd_run(config: ConfigArgs, common: Common) -> Result<(), CliError> {
    let cfg = load_config(config.config.as_deref(), &config.set, common.seed)?;
    let out = out_root(common.out);
    let summary = run_to_dir(&cfg, &out)?;
    print_scores(&summary.final_eval, summary.estimated_class_count);
    println!("outputs written to {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_gen(
    classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    spread: f64,
    masks: Option<PathBuf>,
    split: SplitConfig,
    out: Option<PathBuf>,
    seed: u64,
) -> Result<(), CliError> {
    let path = out.unwrap_or_else(|| out_root(None).join("data.csv"));
    let d = generate_blobs(&BlobConfig {
        num_classes: classes,
        per_class,
        dim,
        separation,
        spread,
        seed,
    })
    .map_err(data_error)?;
    write_csv(&d, &path, true).map_err(data_error)?;
    if let Some(m) = masks {
        let split = apply_split(&d, &split, seed).map_err(data_error)?;
        write_masks(&split, &m).map_err(data_error)?;
    }
    println!("wrote {} rows to {}", d.len(), path.display());
    Ok(())
}

/// Renders a sweep value as a TOML literal of the key's type.
fn sweep_value(param: &str, raw: &str) -> Result<toml::Value, CliError> {
    let integer = SWEEPABLE
        .iter()
        .find(|(k, _)| *k == param)
        .map(|&(_, i)| i)
        .ok_or_else(|| {
            let names: Vec<&str> = SWEEPABLE.iter().map(|(k, _)| *k).collect();
            CliError::Usage(format!("`{param}` is not sweepable; choose one of {}", names.join(", ")))
        })?;
    let bad = || CliError::Usage(format!("`{raw}` is not a valid value for {param}"));
    let raw = raw.trim();
    if integer {
        raw.parse::<i64>().map(toml::Value::Integer).map_err(|_| bad())
    } else {
        raw.parse::<f64>().ok().filter(|v| v.is_finite()).map(toml::Value::Float).ok_or_else(bad)
    }
}

const SWEEP_HEADER: &str = "param,value,status,estimated_class_count,known_acc,novel_acc,all_acc,nmi";

fn sweep_row(param: &str, value: &str, summary: Option<&RunSummary>) -> String {
    let opt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
    match summary {
        Some(s) => format!(
            "{param},{value},ok,{},{},{},{},{}",
            s.estimated_class_count,
            opt(s.final_eval.known_acc),
            opt(s.final_eval.novel_acc),
            s.final_eval.all_acc,
            s.final_eval.nmi
        ),
        None => format!("{param},{value},failed,,,,,"),
    }
}

fn read_summary(dir: &Path) -> Option<RunSummary> {
    let text = fs::read_to_string(dir.join("summary.json")).ok()?;
    serde_json::from_str(&text).ok()
}

fn cmd_sweep(config: ConfigArgs, common: Common, param: String, values: Vec<String>, jobs: usize) -> Result<(), CliError> {
    let values: Vec<String> = values.into_iter().map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return Err(CliError::Usage("sweep needs at least one value".into()));
    }
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let out = out_root(common.out);
    // validate everything before the first run starts
    let mut plans = Vec::with_capacity(values.len());
    for raw in &values {
        let v = sweep_value(&param, raw)?;
        let mut set = config.set.clone();
        set.push(format!("{param}={v}"));
        let cfg = load_config(config.config.as_deref(), &set, common.seed)?;
        plans.push((raw.clone(), cfg, out.join(format!("{param}={raw}"))));
    }

    let mut failures = 0;
    if jobs == 1 {
        for (raw, cfg, dir) in &plans {
            if let Err(e) = run_to_dir(cfg, dir) {
                eprintln!("{param}={raw}: {e}");
                failures += 1;
            }
        }
    } else {
        let exe = std::env::current_exe().map_err(|e| CliError::runtime(format!("cannot locate own executable: {e}")))?;
        let mut running: Vec<(String, Child)> = Vec::new();
        let mut queue = plans.iter();
        loop {
            while running.len() < jobs {
                let Some((raw, cfg, dir)) = queue.next() else { break };
                create_dir(dir)?;
                let input = dir.join("input.toml");
                write(&input, cfg.to_toml()?)?;
                let child = Command::new(&exe)
                    .arg("run")
                    .arg("--config")
                    .arg(&input)
                    .arg("--out")
                    .arg(dir)
                    .spawn()
                    .map_err(|e| CliError::runtime(format!("cannot start sweep job: {e}")))?;
                running.push((raw.clone(), child));
            }
            if running.is_empty() {
                break;
            }
            // wait on the oldest job; the pool refills once it finishes
            let (raw, mut child) = running.remove(0);
            let status = child.wait().map_err(|e| CliError::runtime(format!("sweep job failed: {e}")))?;
            if !status.success() {
                eprintln!("{param}={raw}: job exited with {status}");
                failures += 1;
            }
        }
    }

    let mut csv = String::from(SWEEP_HEADER);
    csv.push('\n');
    for (raw, _, dir) in &plans {
        csv.push_str(&sweep_row(&param, raw, read_summary(dir).as_ref()));
        csv.push('\n');
    }
    let path = out.join("sweep.csv");
    create_dir(&out)?;
    write(&path, csv)?;
    println!("{} runs, aggregate written to {}", plans.len(), path.display());
    if failures > 0 {
        return Err(CliError::runtime(format!("{failures} of {} sweep runs failed", plans.len())));
    }
    Ok(())
}

fn cmd_eval(model: PathBuf, data: PathBuf, no_header: bool, out: Option<PathBuf>) -> Result<(), CliError> {
    let model_path = if model.is_dir() { model.join("model.json") } else { model };
    let text = fs::read_to_string(&model_path).map_err(|e| io_error(&model_path, e))?;
    let snapshot: ModelSnapshot = serde_json::from_str(&text)
        .map_err(|e| CliError::runtime(format!("{}: {e}", model_path.display())))?;
    GroupPartition::from_assignment(snapshot.partition.clone())
        .map_err(|e| CliError::runtime(format!("{}: {e}", model_path.display())))?;
    let d = load_csv(&data, !no_header).map_err(data_error)?;
    if d.dim() != snapshot.encoder.input_dim {
        return Err(CliError::Usage(format!(
            "{} has {} features but the model expects {}",
            data.display(),
            d.dim(),
            snapshot.encoder.input_dim
        )));
    }
    let pred = snapshot.predict(&d.features).map_err(|e| CliError::runtime(e.to_string()))?;
    let known: BTreeSet<usize> = snapshot
        .matching
        .as_ref()
        .map(|m| m.class_to_group.keys().copied().collect())
        .unwrap_or_default();
    let report = open_world_report(&pred, &d.labels, &known, snapshot.matching.as_ref(), snapshot.group_count())
        .map_err(|e| CliError::runtime(e.to_string()))?;
    print_scores(&report, report.estimated_class_count);
    if let Some(dir) = out.or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from)) {
        create_dir(&dir)?;
        let json = serde_json::to_string_pretty(&report).expect("plain data serializes");
        write(&dir.join("eval.json"), json)?;
    }
    Ok(())
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Cmd::Run { config, common } => cmd_run(config, common),
        Cmd::Gen {
            classes,
            per_class,
            dim,
            separation,
            spread,
            masks,
            known_fraction,
            label_fraction,
            out,
            seed,
        } => cmd_gen(
            classes,
            per_class,
            dim,
            separation,
            spread,
            masks,
            SplitConfig {
                known_class_fraction: known_fraction,
                label_fraction,
            },
            out,
            seed,
        ),
        Cmd::Sweep {
            config,
            common,
            param,
            values,
            jobs,
        } => cmd_sweep(config, common, param, values, jobs),
        Cmd::Eval {
            model,
            data,
            no_header,
            out,
        } => cmd_eval(model, data, no_header, out),
    }
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Runtime { diagnostic: Some(p), .. } = &e {
                eprintln!("diagnostic written to {}", p.display());
            }
            e.exit_code()
        }
    }
}
