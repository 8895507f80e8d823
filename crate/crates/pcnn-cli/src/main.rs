//! Command-line harness for the photonic CNN simulator: data ingestion,
//! training/fine-tuning orchestration, and artifact emission (metrics JSON,
//! CSV curves, perf tables, checkpoints, and a per-run manifest).

mod config;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use pcnn::eval::{confusion_csv, evaluate};
use pcnn::idx::{load_idx, Dataset};
use pcnn::network::{Mode, NetworkSpec};
use pcnn::perf::{
    gpu_comparison, perf_report, render_tables, technology_table, NopsMode, PowerMode,
    TECH_PRESETS,
};
use pcnn::photonic::CrosstalkModel;
use pcnn::spsa::{finetune, write_trace_csv, HardwareObjective, Objective};
use pcnn::twin::{
    accuracy, load_checkpoint, parity_check, pretrain, save_checkpoint, transfer_phases,
    write_loss_csv,
};
use serde::Serialize;
use sha2::{Digest, Sha256};

use config::AppConfig;

#[derive(Parser)]
#[command(name = "pcnn", version, about = "Fully optical CNN simulator harness")]
struct Cli {
    /// TOML configuration file; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// MNIST IDX directory; falls back to $PCNN_DATA_DIR, then data/mnist.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,

    /// Directory receiving all artifacts of this run.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    /// Root seed; all randomness (shuffles, SPSA perturbations) flows from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Truncate the training split to its first N samples.
    #[arg(long, global = true)]
    train_subset: Option<usize>,

    /// Truncate the test split to its first N samples.
    #[arg(long, global = true)]
    test_subset: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pre-train the digital twin with exact gradients; writes twin.ckpt.
    Pretrain,
    /// Copy twin phases onto the hardware model and verify parity.
    Transfer {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a checkpoint: accuracy plus the 10x10 confusion matrix.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ModeArg::Hardware)]
        mode: ModeArg,
        /// Nearest-neighbour crosstalk strength (hardware mode only).
        #[arg(long)]
        xt: Option<f64>,
    },
    /// Accuracy across a grid of crosstalk strengths; writes sweep.csv.
    XtalkSweep {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// SPSA fine-tuning on the crosstalk-perturbed hardware model.
    Finetune {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Crosstalk strength the hardware runs at (default from config).
        #[arg(long)]
        xt: Option<f64>,
    },
    /// Performance model: operations, latency, power, energy tables.
    Perf {
        /// Heater powers are traced from this checkpoint when given.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = NopsArg::Formula)]
        nops: NopsArg,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Twin,
    Hardware,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Twin => Mode::Twin,
            ModeArg::Hardware => Mode::Hardware,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum NopsArg {
    Formula,
    Paper,
}

impl From<NopsArg> for NopsMode {
    fn from(n: NopsArg) -> NopsMode {
        match n {
            NopsArg::Formula => NopsMode::Formula,
            NopsArg::Paper => NopsMode::Paper,
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: u64,
    config_sha256: String,
    git_describe: String,
    outputs: Vec<String>,
    /// Wall-clock seconds since the Unix epoch; excluded from determinism
    /// comparisons, which look at the metrics files only.
    created_unix_s: u64,
}

fn main() {
    if let Err(err) = run() {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let config = AppConfig::load(cli.config.as_deref())?;
    std::fs::create_dir_all(&cli.out_dir)
        .with_context(|| format!("creating {}", cli.out_dir.display()))?;

    let outputs = match &cli.command {
        Command::Pretrain => cmd_pretrain(&cli, &config)?,
        Command::Transfer { checkpoint } => cmd_transfer(&cli, &config, checkpoint.as_deref())?,
        Command::Eval { checkpoint, mode, xt } => {
            cmd_eval(&cli, &config, checkpoint.as_deref(), (*mode).into(), *xt)?
        }
        Command::XtalkSweep { checkpoint } => cmd_sweep(&cli, &config, checkpoint.as_deref())?,
        Command::Finetune { checkpoint, xt } => {
            cmd_finetune(&cli, &config, checkpoint.as_deref(), *xt)?
        }
        Command::Perf { checkpoint, nops } => {
            cmd_perf(&cli, &config, checkpoint.as_deref(), (*nops).into())?
        }
    };

    write_manifest(&cli, &config, &outputs)?;
    Ok(())
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Pretrain => "pretrain",
        Command::Transfer { .. } => "transfer",
        Command::Eval { .. } => "eval",
        Command::XtalkSweep { .. } => "xtalk-sweep",
        Command::Finetune { .. } => "finetune",
        Command::Perf { .. } => "perf",
    }
}

fn write_manifest(cli: &Cli, config: &AppConfig, outputs: &[PathBuf]) -> anyhow::Result<()> {
    let manifest = Manifest {
        command: command_name(&cli.command),
        seed: cli.seed,
        config_sha256: hex(&Sha256::digest(config.canonical_toml().as_bytes())),
        git_describe: git_describe(),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        created_unix_s: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    let path = cli.out_dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".to_string())
}

fn data_dir(cli: &Cli) -> PathBuf {
    cli.data_dir
        .clone()
        .or_else(|| std::env::var_os("PCNN_DATA_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data/mnist"))
}

fn load_split(dir: &Path, images: &str, labels: &str, subset: Option<usize>) -> anyhow::Result<Dataset> {
    let dataset = load_idx(&dir.join(images), &dir.join(labels))
        .with_context(|| format!("loading {images} from {}", dir.display()))?;
    Ok(match subset {
        Some(n) => dataset.subset(n.min(dataset.len())),
        None => dataset,
    })
}

fn load_train(cli: &Cli) -> anyhow::Result<Dataset> {
    load_split(&data_dir(cli), "train-images-idx3-ubyte", "train-labels-idx1-ubyte", cli.train_subset)
}

fn load_test(cli: &Cli) -> anyhow::Result<Dataset> {
    load_split(&data_dir(cli), "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", cli.test_subset)
}

fn require_checkpoint(checkpoint: Option<&Path>) -> anyhow::Result<Vec<f64>> {
    let path = checkpoint.ok_or_else(|| anyhow::anyhow!("checkpoint required"))?;
    Ok(load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?)
}

fn crosstalk_model(xt: f64) -> anyhow::Result<Option<CrosstalkModel<f64>>> {
    if xt == 0.0 {
        Ok(None)
    } else {
        Ok(Some(CrosstalkModel::nearest_neighbor(xt)?))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn cmd_pretrain(cli: &Cli, config: &AppConfig) -> anyhow::Result<Vec<PathBuf>> {
    let train = load_train(cli)?;
    let test = load_test(cli)?;
    let spec = NetworkSpec::standard()?;
    let net = config.network_config();
    let train_cfg = config.train_config(cli.seed);

    eprintln!(
        "pretraining on {} samples ({} epochs, batch {}), testing on {}",
        train.len(),
        train_cfg.epochs,
        train_cfg.batch,
        test.len()
    );
    let (theta, records) = pretrain(&spec, &net, &train.samples(), &test.samples(), &train_cfg, |r| {
        eprintln!(
            "epoch {:2}  train_loss {:.4}  train_acc {:.4}  test_acc {:.4}",
            r.epoch, r.train_loss, r.train_acc, r.test_acc
        );
    })?;

    let ckpt = cli.out_dir.join("twin.ckpt");
    save_checkpoint(&ckpt, &theta)?;
    let curve = cli.out_dir.join("loss.csv");
    write_loss_csv(&curve, &records)?;

    #[derive(Serialize)]
    struct PretrainMetrics {
        seed: u64,
        train_samples: usize,
        test_samples: usize,
        epochs: usize,
        best_test_acc: f64,
        final_train_loss: f64,
    }
    let best = records.iter().map(|r| r.test_acc).fold(f64::NEG_INFINITY, f64::max);
    let metrics = cli.out_dir.join("metrics.json");
    write_json(
        &metrics,
        &PretrainMetrics {
            seed: cli.seed,
            train_samples: train.len(),
            test_samples: test.len(),
            epochs: records.len(),
            best_test_acc: best,
            final_train_loss: records.last().map(|r| r.train_loss).unwrap_or(f64::NAN),
        },
    )?;
    Ok(vec![ckpt, curve, metrics])
}

fn cmd_transfer(
    cli: &Cli,
    config: &AppConfig,
    checkpoint: Option<&Path>,
) -> anyhow::Result<Vec<PathBuf>> {
    let theta = require_checkpoint(checkpoint)?;
    let hardware = transfer_phases(&theta)?;
    let test = load_test(cli)?;
    let spec = NetworkSpec::standard()?;
    let net = config.network_config();
    // Parity over a small slice is enough to certify the transfer; the
    // twin and hardware paths share the forward math exactly.
    let n_parity = test.len().min(20);
    let worst = parity_check(&spec, &net, &hardware, &test.images[..n_parity])?;

    let ckpt = cli.out_dir.join("hardware.ckpt");
    save_checkpoint(&ckpt, &hardware)?;

    #[derive(Serialize)]
    struct TransferMetrics {
        parity_max_abs_score_diff: f64,
        parity_images: usize,
    }
    let metrics = cli.out_dir.join("metrics.json");
    write_json(&metrics, &TransferMetrics { parity_max_abs_score_diff: worst, parity_images: n_parity })?;
    Ok(vec![ckpt, metrics])
}

fn cmd_eval(
    cli: &Cli,
    config: &AppConfig,
    checkpoint: Option<&Path>,
    mode: Mode,
    xt: Option<f64>,
) -> anyhow::Result<Vec<PathBuf>> {
    let theta = require_checkpoint(checkpoint)?;
    if xt.is_some() && mode == Mode::Twin {
        bail!("crosstalk applies to the hardware model only");
    }
    let crosstalk = crosstalk_model(xt.unwrap_or(0.0))?;
    let test = load_test(cli)?;
    let spec = NetworkSpec::standard()?;
    let net = config.network_config();
    let result = evaluate(&spec, &net, &theta, &test.samples(), mode, crosstalk.as_ref())?;

    let confusion = cli.out_dir.join("confusion.csv");
    std::fs::write(&confusion, confusion_csv(&result))?;

    #[derive(Serialize)]
    struct EvalMetrics {
        accuracy: f64,
        per_class_acc: [f64; 10],
        mode: &'static str,
        xt: f64,
        samples: usize,
    }
    let metrics = cli.out_dir.join("metrics.json");
    write_json(
        &metrics,
        &EvalMetrics {
            accuracy: result.accuracy,
            per_class_acc: result.per_class_acc,
            mode: if mode == Mode::Twin { "twin" } else { "hardware" },
            xt: xt.unwrap_or(0.0),
            samples: test.len(),
        },
    )?;
    eprintln!("accuracy {:.4} over {} samples", result.accuracy, test.len());
    Ok(vec![confusion, metrics])
}

fn cmd_sweep(cli: &Cli, config: &AppConfig, checkpoint: Option<&Path>) -> anyhow::Result<Vec<PathBuf>> {
    let theta = require_checkpoint(checkpoint)?;
    let test = load_test(cli)?;
    let spec = NetworkSpec::standard()?;
    let net = config.network_config();

    let mut rows = Vec::new();
    for &xt in &config.crosstalk.sweep {
        let crosstalk = crosstalk_model(xt)?;
        let acc = accuracy(&spec, &net, &theta, &test.samples(), Mode::Hardware, crosstalk.as_ref())?;
        eprintln!("xt {xt:.3} -> accuracy {acc:.4}");
        rows.push((xt, acc));
    }

    let mut csv = String::from("xt,accuracy\n");
    for (xt, acc) in &rows {
        csv.push_str(&format!("{xt},{acc:.6}\n"));
    }
    let sweep = cli.out_dir.join("sweep.csv");
    std::fs::write(&sweep, csv)?;

    #[derive(Serialize)]
    struct SweepMetrics {
        rows: Vec<(f64, f64)>,
        samples: usize,
    }
    let metrics = cli.out_dir.join("metrics.json");
    write_json(&metrics, &SweepMetrics { rows, samples: test.len() })?;
    Ok(vec![sweep, metrics])
}

fn cmd_finetune(
    cli: &Cli,
    config: &AppConfig,
    checkpoint: Option<&Path>,
    xt: Option<f64>,
) -> anyhow::Result<Vec<PathBuf>> {
    let theta = require_checkpoint(checkpoint)?;
    let xt = xt.unwrap_or(config.crosstalk.xt);
    let crosstalk = crosstalk_model(xt)?;
    let train = load_train(cli)?;
    let test = load_test(cli)?;
    let spec = NetworkSpec::standard()?;
    let net = config.network_config();
    let spsa_cfg = config.spsa_config(cli.seed);

    let acc_before = accuracy(&spec, &net, &theta, &test.samples(), Mode::Hardware, crosstalk.as_ref())?;
    eprintln!("accuracy before fine-tuning (xt {xt:.3}): {acc_before:.4}");

    let mut objective =
        HardwareObjective::new(&spec, &net, crosstalk.as_ref(), train.samples(), config.network.s_scale);
    let (best_theta, trace) = finetune(&theta, &mut objective, &test.samples(), &spsa_cfg)?;
    let evaluations = objective.evaluations();

    let acc_after =
        accuracy(&spec, &net, &best_theta, &test.samples(), Mode::Hardware, crosstalk.as_ref())?;
    eprintln!("accuracy after fine-tuning: {acc_after:.4} ({evaluations} objective evaluations)");

    let ckpt = cli.out_dir.join("finetuned.ckpt");
    save_checkpoint(&ckpt, &best_theta)?;
    let trace_path = cli.out_dir.join("trace.csv");
    write_trace_csv(&trace_path, &trace)?;

    #[derive(Serialize)]
    struct FinetuneMetrics {
        xt: f64,
        iterations: usize,
        objective_evaluations: usize,
        acc_before: f64,
        acc_after: f64,
    }
    let metrics = cli.out_dir.join("metrics.json");
    write_json(
        &metrics,
        &FinetuneMetrics {
            xt,
            iterations: spsa_cfg.iterations,
            objective_evaluations: evaluations,
            acc_before,
            acc_after,
        },
    )?;
    Ok(vec![ckpt, trace_path, metrics])
}

fn cmd_perf(
    cli: &Cli,
    config: &AppConfig,
    checkpoint: Option<&Path>,
    nops: NopsMode,
) -> anyhow::Result<Vec<PathBuf>> {
    // Paper mode reproduces the published tables with their fixed 14.7 W
    // total; formula mode traces heater power from the checkpoint phases.
    let theta = match checkpoint {
        Some(path) => load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?,
        None => vec![0.0; pcnn::photonic::TOTAL_PARAMS],
    };
    let power = match nops {
        NopsMode::Paper => PowerMode::Fixed(14.7),
        NopsMode::Formula => PowerMode::Traced,
    };
    let perf_cfg = config.perf_config(nops, power);
    let report = perf_report(&theta, &perf_cfg)?;
    let tech = technology_table(&theta, &TECH_PRESETS, &perf_cfg)?;
    let gpus = gpu_comparison(&report);

    let tables = cli.out_dir.join("tables.txt");
    std::fs::write(&tables, render_tables(&report, &tech, &gpus))?;

    #[derive(Serialize)]
    struct PerfMetrics {
        report: pcnn::perf::PerfReport,
        technology: Vec<pcnn::perf::TechRow>,
        gpus: Vec<pcnn::perf::GpuRow>,
    }
    let metrics = cli.out_dir.join("perf.json");
    write_json(&metrics, &PerfMetrics { report, technology: tech, gpus })?;
    print!("{}", std::fs::read_to_string(&tables)?);
    Ok(vec![tables, metrics])
}
