//! Command-line entry point tying generation, training, evaluation, and
//! contribution analysis into reproducible seeded runs.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 numeric
//! failure, 4 undefined metric.

mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ConfigError, RunConfig};
use favoa_core::battery::{run_battery, BatterySpec};
use favoa_core::contribution::{self, AnalysisError};
use favoa_core::data::{Ambiguity, DataError, Dataset, Split};
use favoa_core::metrics::{compute_report, write_scores_csv, MetricError};
use favoa_core::model::{load_params, save_params, FavoaParams, ModelError};
use favoa_core::provider::{EmbeddingProvider, ZeroVoiceProvider};
use favoa_core::synth::generate;
use favoa_core::train::{resume, score_entries, train, EpochRecord, TrainError};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_UNDEFINED_METRIC: u8 = 4;

#[derive(Parser)]
#[command(
    name = "favoa",
    about = "Gated bimodal fusion of speaking context and face-voice association, desk scale",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to the run configuration JSON.
    #[arg(long)]
    config: PathBuf,
    /// Override a config value, e.g. --set train.epochs=5 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args)]
struct SplitArg {
    /// Entries to use: train, val, or all.
    #[arg(long, default_value = "val")]
    split: String,
}

impl SplitArg {
    fn parse(&self) -> Result<Option<Split>, CliError> {
        match self.split.as_str() {
            "train" => Ok(Some(Split::Train)),
            "val" => Ok(Some(Split::Val)),
            "all" => Ok(None),
            other => Err(CliError::Input(format!(
                "unknown split {other:?}; expected train, val, or all"
            ))),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset under <output_dir>/data.
    GenData(ConfigArgs),
    /// Train on the configured dataset; writes params, checkpoint, report.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a dataset split and report ranking metrics.
    Eval {
        /// Parameter file written by `train`.
        #[arg(long)]
        params: PathBuf,
        /// Dataset manifest path.
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        split: SplitArg,
        /// Output directory for scores.csv and metrics.json.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Per-entry gate contribution analysis and histogram.
    Analyze {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Histogram bin width; must divide [0, 1] into whole bins.
        #[arg(long, default_value_t = contribution::DEFAULT_BIN_WIDTH)]
        bin_width: f64,
        #[command(flatten)]
        split: SplitArg,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Finite-difference validation of every layer and the full model.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("{0}")]
    Input(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("gradient checks failed")]
    GradcheckFailed,
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Train(TrainError::NonFiniteGradient { .. })
            | CliError::Train(TrainError::NonFiniteLoss { .. })
            | CliError::GradcheckFailed => EXIT_NUMERIC,
            CliError::Metric(MetricError::Undefined(_)) => EXIT_UNDEFINED_METRIC,
            CliError::Analysis(AnalysisError::EmptyGate)
            | CliError::Analysis(AnalysisError::NoRecords) => EXIT_UNDEFINED_METRIC,
            _ => EXIT_CONFIG,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
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
        Command::GenData(args) => cmd_gen_data(&args),
        Command::Train { config, resume } => cmd_train(&config, resume.as_deref()),
        Command::Eval {
            params,
            dataset,
            split,
            out,
        } => cmd_eval(&params, &dataset, &split, &out),
        Command::Analyze {
            params,
            dataset,
            bin_width,
            split,
            out,
        } => cmd_analyze(&params, &dataset, bin_width, &split, &out),
        Command::Gradcheck { seed } => cmd_gradcheck(seed),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| CliError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn cmd_gen_data(args: &ConfigArgs) -> Result<(), CliError> {
    let config = RunConfig::load(&args.config, &args.sets)?;
    let generator = config.generator_config();
    generator.validate()?;
    let data_dir = config.output_dir.join("data");
    let manifest = generate(&generator, &data_dir)?;
    let dataset = Dataset::load(&manifest)?;
    let train_n = dataset.select(Some(Split::Train), None).len();
    let val_n = dataset.select(Some(Split::Val), None).len();
    let ambiguous_n = dataset.select(None, Some(Ambiguity::Ambiguous)).len();
    println!("wrote {}", manifest.display());
    println!(
        "scenes: {}  entries: {} (train {train_n}, val {val_n}; ambiguous {ambiguous_n})",
        dataset.scene_count(),
        dataset.entries().len()
    );
    Ok(())
}

fn print_epochs(records: &[EpochRecord]) {
    for r in records {
        let mut line = format!(
            "epoch {:>3}  lr {:.3e}  train_loss {:.6}",
            r.epoch, r.learning_rate, r.mean_train_loss
        );
        if let Some(val) = &r.val {
            let _ = write!(
                line,
                "  val map {:.4} auc {:.4} bacc {:.4}",
                val.map, val.auc, val.balanced_accuracy
            );
        }
        println!("{line}");
    }
}

fn cmd_train(args: &ConfigArgs, resume_from: Option<&Path>) -> Result<(), CliError> {
    let config = RunConfig::load(&args.config, &args.sets)?;
    let dataset = Dataset::load(&config.manifest_path())?;
    let opts = config.train_options();
    let checkpoint = config.output_dir.join("checkpoint.bin");
    let params_path = config.output_dir.join("params.bin");
    let report_path = config.output_dir.join("report.jsonl");

    let zero_voice;
    let provider: &dyn EmbeddingProvider = if config.train.ablate_voice {
        zero_voice = ZeroVoiceProvider { inner: &dataset };
        &zero_voice
    } else {
        &dataset
    };

    if let Some(ckpt) = resume_from {
        let (model_config, params, records) =
            resume(ckpt, &dataset, provider, &opts, Some(&checkpoint))?;
        print_epochs(&records);
        save_params(&params_path, &model_config, &params)?;
        let mut lines = String::new();
        for r in &records {
            let mut v = serde_json::to_value(r).expect("epoch record serializes");
            v.as_object_mut()
                .expect("object")
                .insert("record".into(), "epoch".into());
            lines.push_str(&v.to_string());
            lines.push('\n');
        }
        let mut existing = std::fs::read_to_string(&report_path).unwrap_or_default();
        existing.push_str(&lines);
        write_file(&report_path, &existing)?;
    } else {
        let mut params = FavoaParams::seeded(&config.model, config.seed)?;
        let report = train(
            &mut params,
            &config.model,
            &dataset,
            provider,
            &opts,
            Some(&checkpoint),
        )?;
        print_epochs(&report.records);
        save_params(&params_path, &config.model, &params)?;
        write_file(&report_path, &report.to_jsonl())?;
    }
    println!("params:     {}", params_path.display());
    println!("checkpoint: {}", checkpoint.display());
    println!("report:     {}", report_path.display());
    Ok(())
}

fn cmd_eval(
    params_path: &Path,
    dataset_path: &Path,
    split: &SplitArg,
    out: &Path,
) -> Result<(), CliError> {
    let (model_config, params) = load_params(params_path)?;
    let dataset = Dataset::load(dataset_path)?;
    let indices = dataset.select(split.parse()?, None);
    if indices.is_empty() {
        return Err(CliError::Input(format!(
            "no entries in split {:?}",
            split.split
        )));
    }
    let scored = score_entries(&params, &model_config, &dataset, &dataset, &indices)?;
    let rows: Vec<(String, f64, favoa_core::data::RawLabel)> = indices
        .iter()
        .zip(&scored)
        .map(|(&idx, s)| {
            (
                s.entry_id.clone(),
                s.score,
                dataset.entries()[idx].label,
            )
        })
        .collect();
    std::fs::create_dir_all(out).map_err(|source| CliError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    write_scores_csv(&out.join("scores.csv"), &rows)?;
    let report = compute_report(&scored, 0.5)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_file(&out.join("metrics.json"), &(json + "\n"))?;
    println!(
        "entries {}  map {:.4}  auc {:.4}  balanced_accuracy {:.4}",
        scored.len(),
        report.map,
        report.auc,
        report.balanced_accuracy
    );
    Ok(())
}

fn cmd_analyze(
    params_path: &Path,
    dataset_path: &Path,
    bin_width: f64,
    split: &SplitArg,
    out: &Path,
) -> Result<(), CliError> {
    let (model_config, params) = load_params(params_path)?;
    let dataset = Dataset::load(dataset_path)?;
    let indices = dataset.select(split.parse()?, None);
    if indices.is_empty() {
        return Err(CliError::Input(format!(
            "no entries in split {:?}",
            split.split
        )));
    }
    let output = contribution::analyze(
        &params,
        &model_config,
        &dataset,
        &dataset,
        &indices,
        bin_width,
    )?;
    std::fs::create_dir_all(out).map_err(|source| CliError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    contribution::write_records_csv(&out.join("contribution.csv"), &output.records)?;
    contribution::write_histogram_csv(&out.join("histogram.csv"), &output.histogram)?;
    let json = serde_json::to_string_pretty(&output.summary).expect("summary serializes");
    write_file(&out.join("summary.json"), &(json + "\n"))?;
    println!(
        "entries {}  mean degree {:.4}  median {:.4}  >0.15: {:.1}%  >0.30: {:.1}%",
        output.records.len(),
        output.summary.mean,
        output.summary.median,
        output.summary.frac_gt_0_15 * 100.0,
        output.summary.frac_gt_0_30 * 100.0
    );
    Ok(())
}

fn cmd_gradcheck(seed: u64) -> Result<(), CliError> {
    let reports = run_battery(&BatterySpec {
        seed,
        ..BatterySpec::default()
    })?;
    let mut all_passed = true;
    for r in &reports {
        println!("{r}");
        all_passed &= r.passed();
    }
    if all_passed {
        println!("all {} checks passed", reports.len());
        Ok(())
    } else {
        Err(CliError::GradcheckFailed)
    }
}
