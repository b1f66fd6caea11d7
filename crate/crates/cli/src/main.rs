//! `avfuse` command-line driver.
//!
//! Exit codes: 0 success, 1 validation or configuration error, 2 numerical
//! failure (including a failed gradient check), 3 file-system error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{Map, Value};

use avfuse::annotation::{
    adjust_personnel, planted_population, read_records, standard_items, AdjustConfig, AnnotationReport,
};
use avfuse::experiment::{ablate, ablation_csv, make_split, run, subset, AblationAxis, RunConfig};
use avfuse::features::dataset::write_dataset;
use avfuse::features::synth::generate_sample;
use avfuse::gradcheck::{standard_suite, SuiteConfig};
use avfuse::model::{prepare_all, AvModel};
use avfuse::taxonomy::EMOTIONS;
use avfuse::train::evaluate;
use avfuse::{ErrorClass, OpKind};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] avfuse::Error),
    #[error("gradient check failed for {0} unit(s)")]
    GradcheckFailed(usize),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) => match e.class() {
                ErrorClass::Validation => 1,
                ErrorClass::Numerical => 2,
                ErrorClass::Io => 3,
            },
            CliError::GradcheckFailed(_) => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(name = "avfuse", version, about = "Audio-visual fusion: data, training, ablations, checks, annotation metrics")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON file of flat dotted keys, e.g. {"model.c1": 16, "train.epochs": 50}.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key: --set train.lr=0.001 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Master seed for data, initialization, split and training order.
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset manifest; without it the synthetic set is generated in memory.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic dataset (manifest + media) to a directory.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on the training split; writes a checkpoint and a JSON-lines log.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint; writes metrics, confusion matrix and embeddings.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Which part of the split to evaluate: test, train or all.
        #[arg(long, default_value = "test")]
        subset: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// One training run per value of an axis: layers, mask, fusion or gamma.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        axis: String,
        /// Comma-separated values; defaults to the axis's standard grid.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        /// CSV output path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every op and composite module.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Corrupt one op's backward rule to confirm the checker notices.
        #[arg(long, value_name = "OP")]
        fault: Option<String>,
    },
    /// Consistency, agreement and resolution report for annotation records.
    AnnotationMetrics {
        /// JSON-lines annotation records.
        input: PathBuf,
        #[arg(long, default_value_t = 6)]
        categories: usize,
        /// Append a planted-population personnel-adjustment simulation.
        #[arg(long)]
        adjust: bool,
        /// Write the adjustment trajectory CSV here.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(avfuse::Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn config_error(msg: String) -> CliError {
    CliError::Core(avfuse::Error::Config(msg))
}

/// Config file (or `fallback` when no `--config` is given), then `--set`
/// overrides, then `--seed` and `--data`.
fn load_config(common: &Common, fallback: Option<&Path>) -> Result<RunConfig> {
    let mut flat = Map::new();
    if let Some(path) = common.config.as_deref().or(fallback) {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let value: Value =
            serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        match value {
            Value::Object(m) => flatten("", m, &mut flat),
            _ => return Err(config_error(format!("{}: expected a JSON object", path.display()))),
        }
    }
    for kv in &common.set {
        let (k, v) = RunConfig::parse_override(kv)?;
        flat.insert(k, v);
    }
    let mut cfg = RunConfig::from_flat(&flat)?;
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(data) = &common.data {
        cfg.data = Some(data.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Accept nested objects too, so a saved resolved config reads back.
fn flatten(prefix: &str, m: Map<String, Value>, out: &mut Map<String, Value>) {
    for (k, v) in m {
        let key = if prefix.is_empty() { k } else { format!("{prefix}.{k}") };
        match v {
            Value::Object(inner) if !inner.is_empty() => flatten(&key, inner, out),
            other => {
                out.insert(key, other);
            }
        }
    }
}

fn cmd_synth(common: &Common, out: &Path) -> Result<()> {
    let cfg = load_config(common, None)?;
    let synth = cfg.synth;
    let manifest = write_dataset(out, (0..synth.len()).map(|i| generate_sample(&synth, i)))?;
    println!("{}", manifest.display());
    Ok(())
}

fn cmd_train(common: &Common, out: &Path) -> Result<()> {
    let cfg = load_config(common, None)?;
    let data = prepare_all(&cfg.load_samples()?, &cfg.model)?;
    let mut log = String::new();
    let result = run(&cfg, &data, |e| {
        let line = serde_json::to_string(e).expect("epoch log serializes");
        println!("{line}");
        log.push_str(&line);
        log.push('\n');
    })?;
    write(&out.join("train_log.jsonl"), log)?;
    write(&out.join("config.json"), serde_json::to_string_pretty(&cfg).expect("config serializes"))?;
    write(&out.join("split.json"), serde_json::to_string_pretty(&result.split).expect("split serializes"))?;
    result.params.save(out.join("model.ckpt"), &result.model.meta())?;
    if let Some(test) = &result.test {
        eprintln!(
            "test acc={:.4} wa_f1={:.4} uar={:.4}",
            test.report.acc, test.report.wa_f1, test.report.uar
        );
    }
    Ok(())
}

fn cmd_eval(common: &Common, checkpoint: &Path, which: &str, out: &Path) -> Result<()> {
    let sibling = checkpoint.with_file_name("config.json");
    let fallback = sibling.exists().then_some(sibling.as_path());
    let cfg = load_config(common, fallback)?;
    let (model, params) = AvModel::load::<f32>(checkpoint)?;
    let data = prepare_all(&cfg.load_samples()?, &model.cfg)?;
    let split = make_split(&data, cfg.split, cfg.seed)?;
    let idx: Vec<usize> = match which {
        "test" => split.test.clone(),
        "train" => split.train.clone(),
        "all" => (0..data.len()).collect(),
        other => return Err(config_error(format!("unknown subset `{other}` (test, train or all)"))),
    };
    let part = subset(&data, &idx);
    let eval = evaluate(&model, &params, &part)?;
    let names: Vec<&str> = if model.cfg.num_classes == EMOTIONS.len() {
        EMOTIONS.to_vec()
    } else {
        Vec::new()
    };
    let mut metrics = serde_json::to_value(&eval.report).expect("metrics serialize");
    metrics["subset"] = Value::from(which);
    metrics["samples"] = Value::from(part.len());
    metrics["split_checksum"] = Value::from(split.checksum.clone());
    let text = serde_json::to_string_pretty(&metrics).expect("metrics serialize");
    println!("{text}");
    write(&out.join("metrics.json"), text)?;
    write(&out.join("confusion.csv"), eval.report.confusion_csv(&names))?;
    let dim = eval.embeddings.first().map_or(0, Vec::len);
    let mut csv = String::from("id,label,pred");
    for k in 0..dim {
        csv.push_str(&format!(",e{k}"));
    }
    csv.push('\n');
    for ((s, p), e) in part.iter().zip(&eval.preds).zip(&eval.embeddings) {
        csv.push_str(&format!("{},{},{}", s.id, s.label, p));
        for v in e {
            csv.push_str(&format!(",{v}"));
        }
        csv.push('\n');
    }
    write(&out.join("embeddings.csv"), csv)
}

fn cmd_ablate(common: &Common, axis: &str, values: &[String], out: &Path) -> Result<()> {
    let cfg = load_config(common, None)?;
    let axis: AblationAxis = axis.parse()?;
    let values = if values.is_empty() {
        axis.default_values()
    } else {
        values.to_vec()
    };
    let rows = ablate(&cfg, axis, &values)?;
    let csv = ablation_csv(axis, &rows);
    print!("{csv}");
    write(out, csv)
}

fn cmd_gradcheck(seed: u64, fault: Option<&str>) -> Result<()> {
    let fault = fault
        .map(|name| {
            OpKind::ALL
                .into_iter()
                .find(|k| k.name() == name)
                .ok_or_else(|| config_error(format!("unknown op `{name}`")))
        })
        .transpose()?;
    let reports = standard_suite(&SuiteConfig {
        seed,
        fault,
        ..Default::default()
    })?;
    let mut stdout = std::io::stdout().lock();
    for r in &reports {
        let _ = writeln!(stdout, "{}", r.line());
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    let _ = writeln!(stdout, "{} units, {} failed", reports.len(), failed);
    if failed > 0 {
        return Err(CliError::GradcheckFailed(failed));
    }
    Ok(())
}

fn cmd_annotation(
    input: &Path,
    categories: usize,
    adjust: bool,
    trajectory: Option<&Path>,
    seed: u64,
    out: Option<&Path>,
) -> Result<()> {
    let records = read_records(input, categories)?;
    let mut report = AnnotationReport::from_records(&records, categories)?;
    if adjust || trajectory.is_some() {
        let (groups, oracle) = planted_population(seed);
        let outcome = adjust_personnel(groups, &standard_items(100), &oracle, &AdjustConfig::default())?;
        if let Some(path) = trajectory {
            write(path, outcome.trajectory_csv())?;
        }
        report.adjustment = Some(outcome.trajectory);
    }
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    match out {
        Some(path) => write(path, text),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Synth { common, out } => cmd_synth(common, out),
        Cmd::Train { common, out } => cmd_train(common, out),
        Cmd::Eval {
            common,
            checkpoint,
            subset,
            out,
        } => cmd_eval(common, checkpoint, subset, out),
        Cmd::Ablate {
            common,
            axis,
            values,
            out,
        } => cmd_ablate(common, axis, values, out),
        Cmd::Gradcheck { seed, fault } => cmd_gradcheck(*seed, fault.as_deref()),
        Cmd::AnnotationMetrics {
            input,
            categories,
            adjust,
            trajectory,
            seed,
            out,
        } => cmd_annotation(input, *categories, *adjust, trajectory.as_deref(), *seed, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
