use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bgshift_core::exec::{configured_threads, with_threads, ExecMode};
use bgshift_core::harness::{self, ExperimentConfig, RunReport, REPORT_FILE};
use bgshift_core::losses::MethodConfig;
use bgshift_core::protocol::{select_learning_rate, split_train_val, tune_method_weight, HparamGrid, DEFAULT_TRAIN_RATIO};
use bgshift_core::scenario::{generate_synthetic, split, write_dataset, SyntheticConfig};
use bgshift_core::trainer::{run_step, TrainConfig};
use bgshift_core::{Error, Result};
use clap::{Parser, Subcommand};

/// Background-shift aware class-incremental segmentation experiments.
///
/// `run` and `select` accept `--key=value` overrides for any config field,
/// with dotted keys for nested ones (e.g. `--train.lr_later=5e-3`).
#[derive(Parser)]
#[command(name = "bgshift", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (PPM images, PGM masks, manifest.txt).
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        classes: usize,
        #[arg(long, default_value_t = 100)]
        images: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 2)]
        blobs: usize,
    },
    /// Run an experiment; writes report.json, miou.csv and checkpoints/.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Choose method weights (and optionally the incremental learning rate)
    /// on the first incremental step of the first seed.
    Select {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0.2)]
        decay: f64,
        /// Comma-separated learning rates to try with fine-tuning first.
        #[arg(long, value_delimiter = ',')]
        lr_candidates: Vec<f64>,
    },
    /// Print seed-mean tables and, given two methods, ordering verdicts.
    Report {
        /// A run directory or a report.json file.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        baseline: Option<String>,
        #[arg(long)]
        target: Option<String>,
    },
}

const FLAGS: &[&str] = &[
    "out", "seed", "classes", "images", "height", "width", "blobs", "config", "decay", "lr-candidates", "in",
    "baseline", "target", "help", "version",
];

/// Splits `--key=value` config overrides from the arguments clap handles.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut keep = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        match a.strip_prefix("--").and_then(|r| r.split_once('=')) {
            Some((k, v)) if !FLAGS.contains(&k) => overrides.push((k.to_string(), v.to_string())),
            _ => keep.push(a),
        }
    }
    (keep, overrides)
}

fn mode(threads: usize) -> ExecMode {
    if threads > 1 {
        ExecMode::Parallel
    } else {
        ExecMode::Sequential
    }
}

fn load_config(path: &Path, out: Option<PathBuf>, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path, overrides)?;
    if out.is_some() {
        cfg.out = out;
    }
    Ok(cfg)
}

fn select(cfg: &ExperimentConfig, decay: f64, lr_candidates: &[f64], mode: ExecMode) -> Result<serde_json::Value> {
    let schedule = cfg.label_schedule()?;
    if schedule.num_steps() < 2 {
        return Err(Error::Config("selection needs at least one incremental step".into()));
    }
    let seed = cfg.seeds[0];
    let mut train_cfg = TrainConfig { seed, ..cfg.train.clone() };
    let (train, _) = cfg.dataset.load(seed)?;
    let parts = split(&train, &schedule, cfg.split)?;
    let ft = MethodConfig::preset("FT")?;
    let first = run_step(None, &parts.steps[0], &schedule, &ft, &train_cfg, mode)?;
    let data = &parts.steps[1];
    let mut out = serde_json::Map::new();
    if !lr_candidates.is_empty() {
        let (tr, va) = split_train_val(data, DEFAULT_TRAIN_RATIO, seed)?;
        let lr = select_learning_rate(&first, &tr, &va, &schedule, lr_candidates, &train_cfg, mode)?;
        train_cfg.lr_later = lr.value;
        out.insert("lr_later".into(), serde_json::to_value(lr)?);
    }
    let grid = HparamGrid::standard();
    let mut weights = serde_json::Map::new();
    for m in cfg.method_configs()? {
        if m.joint || m.method_weight().is_none() {
            continue;
        }
        let sel = tune_method_weight(&first, data, &schedule, &m, &train_cfg, &grid, decay, mode)?;
        if sel.fallback {
            eprintln!("warning: no weight for {} kept new-class mIoU within the tolerated decay", m.name);
        }
        weights.insert(m.name.clone(), serde_json::to_value(sel)?);
    }
    out.insert("weights".into(), serde_json::Value::Object(weights));
    Ok(serde_json::Value::Object(out))
}

fn report(input: &Path, baseline: Option<String>, target: Option<String>) -> Result<()> {
    let path = if input.is_dir() { input.join(REPORT_FILE) } else { input.to_path_buf() };
    let r = RunReport::load(&path)?;
    print!("{}", harness::format_table(&r));
    match (baseline, target) {
        (Some(b), Some(t)) => {
            for v in harness::compare_report(&r, &b, &t)? {
                println!(
                    "step {} {:<7} {b} {:.1} vs {t} {:.1}: {:?}",
                    v.step, v.metric, v.baseline, v.target, v.verdict
                );
            }
            Ok(())
        }
        (None, None) => Ok(()),
        _ => Err(Error::Config("--baseline and --target go together".into())),
    }
}

fn execute(cli: Cli, overrides: &[(String, String)], threads: usize) -> Result<bool> {
    let takes_overrides = matches!(cli.command, Command::Run { .. } | Command::Select { .. });
    if !takes_overrides && !overrides.is_empty() {
        return Err(Error::Config(format!("unknown option --{}", overrides[0].0)));
    }
    match cli.command {
        Command::Generate { out, seed, classes, images, height, width, blobs } => {
            let cfg = SyntheticConfig {
                num_fg_classes: classes,
                num_images: images,
                height,
                width,
                blobs_per_image: blobs,
            };
            write_dataset(&out, &generate_synthetic(seed, &cfg)?, classes)?;
            println!("wrote {images} images to {}", out.display());
            Ok(true)
        }
        Command::Run { config, out } => {
            let cfg = load_config(&config, out, overrides)?;
            let r = with_threads(threads, || harness::run_experiment(&cfg, mode(threads)))?;
            print!("{}", harness::format_table(&r));
            Ok(!r.has_failures())
        }
        Command::Select { config, out, decay, lr_candidates } => {
            let cfg = load_config(&config, out, overrides)?;
            let v = with_threads(threads, || select(&cfg, decay, &lr_candidates, mode(threads)))?;
            let text = serde_json::to_string_pretty(&v)?;
            if let Some(dir) = &cfg.out {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join("selection.json"), &text)?;
            }
            println!("{text}");
            Ok(true)
        }
        Command::Report { input, baseline, target } => {
            report(&input, baseline, target)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let (args, overrides) = split_overrides(std::env::args().collect());
    let cli = Cli::parse_from(args);
    match execute(cli, &overrides, configured_threads()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
