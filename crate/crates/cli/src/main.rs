mod config;

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use log::info;
use serde_json::json;

use cmc3d::model::{load_checkpoint, CHECKPOINT_FORMAT_VERSION};
use cmc3d::train::{evaluate, predict, train, TrainConfig, METRICS_HEADER, NUM_WORKERS_ENV};
use cmc3d::volume::{
    generate_synthetic_dataset, load_scan, save_volume, write_synthetic_dataset, DatasetManifest,
    ManifestEntry, Shape3, SynthConfig, Task, VOLUME_FORMAT_VERSION,
};
use cmc3d::Error;

use config::ConfigError;

#[derive(Parser)]
#[command(
    name = "cmc3d",
    version,
    about = "Contrastive + mixup 3D CT classification toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a manifest of slice-stack directories into binary volume files.
    Preprocess {
        /// Manifest CSV (`scan_dir,label`) or a directory containing manifest.csv.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "detection")]
        task: Task,
        /// Target shape, DxHxW.
        #[arg(long)]
        shape: Shape3,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic slice-stack dataset and its manifest.
    Synth {
        #[arg(long, default_value = "detection")]
        task: Task,
        #[arg(long)]
        n_per_class: usize,
        #[arg(long)]
        shape: Shape3,
        #[arg(long, default_value_t = 0.2)]
        gap: f64,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model from a TOML config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Training manifest CSV or a directory containing manifest.csv.
        #[arg(long)]
        data: PathBuf,
        /// Optional validation manifest; enables best.ckpt.
        #[arg(long)]
        val: Option<PathBuf>,
        /// Run directory. Defaults to runs/<config name>-<unix time>.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override a config key, e.g. `--set loss_weights.w1=0.5`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Evaluate a checkpoint on a labelled manifest and print a JSON report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Task of the manifest; defaults to the checkpoint's task.
        #[arg(long)]
        task: Option<Task>,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print per-scan class probabilities as CSV.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Manifest whose scans to classify (labels are ignored).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Scan directories or .cmcvol files.
        scans: Vec<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Library(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Library(e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn manifest_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join("manifest.csv")
    } else {
        data.to_path_buf()
    }
}

fn read_manifest(data: &Path, task: Task) -> Result<DatasetManifest, Failure> {
    let path = manifest_path(data);
    if !path.exists() {
        return Err(Failure::Usage(format!(
            "manifest {} does not exist",
            path.display()
        )));
    }
    Ok(DatasetManifest::from_csv(&path, task)?)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::Usage(format!("cannot write {}: {e}", path.display()))
}

fn preprocess(data: &Path, task: Task, shape: Shape3, out: &Path) -> Outcome {
    let manifest = read_manifest(data, task)?;
    let dir = out.join("volumes");
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut entries = Vec::with_capacity(manifest.len());
    for e in &manifest.entries {
        let v = load_scan(&e.scan_dir, shape)?;
        let n = seen.entry(v.scan_id().to_owned()).or_insert(0);
        let name = match *n {
            0 => format!("{}.cmcvol", v.scan_id()),
            k => format!("{}_{k}.cmcvol", v.scan_id()),
        };
        *n += 1;
        let path = dir.join(name);
        save_volume(&v, &path)?;
        info!("{} -> {}", e.scan_dir.display(), path.display());
        entries.push(ManifestEntry {
            scan_dir: path,
            label: e.label,
        });
    }
    let written = DatasetManifest { entries, task };
    written.write_csv(out.join("manifest.csv"))?;
    println!(
        "preprocessed {} scans into {}",
        written.len(),
        out.display()
    );
    Ok(())
}

fn synth(config: SynthConfig, out: &Path) -> Outcome {
    let samples = generate_synthetic_dataset(&config)?;
    let manifest = write_synthetic_dataset(&samples, out)?;
    println!(
        "wrote {} synthetic scans and {}",
        manifest.len(),
        out.join("manifest.csv").display()
    );
    Ok(())
}

fn default_run_dir(config_path: &Path) -> PathBuf {
    let stem = config_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    PathBuf::from("runs").join(format!("{stem}-{secs}"))
}

fn write_new(path: &Path, contents: &str) -> Outcome {
    let mut f = OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(path)
        .map_err(|e| Failure::Usage(format!("cannot create {}: {e}", path.display())))?;
    f.write_all(contents.as_bytes()).map_err(io_err(path))
}

fn run_record(
    config: &TrainConfig,
    argv: &[String],
    data: &Path,
    val: Option<&Path>,
) -> serde_json::Value {
    json!({
        "command": argv,
        "tool_version": env!("CARGO_PKG_VERSION"),
        "seed": config.seed,
        "data": manifest_path(data),
        "val": val.map(manifest_path),
        "num_workers_env": std::env::var(NUM_WORKERS_ENV).ok(),
        "format_versions": {
            "volume": VOLUME_FORMAT_VERSION,
            "checkpoint": CHECKPOINT_FORMAT_VERSION,
            "metrics_header": METRICS_HEADER,
        },
        "config": config,
    })
}

fn train_cmd(
    config_path: &Path,
    data: &Path,
    val: Option<&Path>,
    out: Option<PathBuf>,
    overrides: &[String],
) -> Outcome {
    let config = config::load(config_path, overrides)?;
    config.validate()?;
    let out = out.unwrap_or_else(|| default_run_dir(config_path));
    if out.join("run.json").exists() {
        return Err(Failure::Usage(format!(
            "{} already holds a run; choose another --out",
            out.display()
        )));
    }
    let manifest = read_manifest(data, config.task)?;
    let val_manifest = val.map(|v| read_manifest(v, config.task)).transpose()?;
    fs::create_dir_all(&out).map_err(io_err(&out))?;
    let argv: Vec<String> = std::env::args().collect();
    write_new(&out.join("config.toml"), &config::to_toml(&config))?;
    let record = run_record(&config, &argv, data, val);
    write_new(
        &out.join("run.json"),
        &(serde_json::to_string_pretty(&record).expect("json") + "\n"),
    )?;
    let summary = train(&manifest, &config, &out, val_manifest.as_ref())?;
    println!("trained {} steps", summary.steps);
    println!("final checkpoint: {}", summary.final_checkpoint.display());
    if let (Some(p), Some(f1)) = (&summary.best_checkpoint, summary.best_val_macro_f1) {
        println!(
            "best checkpoint: {} (validation macro F1 {f1:.4})",
            p.display()
        );
    }
    Ok(())
}

fn checkpoint_task(checkpoint: &Path) -> Result<Task, Failure> {
    let ck = load_checkpoint(checkpoint)?;
    Ok(TrainConfig::from_json(&ck.config_json)?.task)
}

fn eval_cmd(checkpoint: &Path, data: &Path, task: Option<Task>, out: Option<&Path>) -> Outcome {
    let task = match task {
        Some(t) => t,
        None => checkpoint_task(checkpoint)?,
    };
    let manifest = read_manifest(data, task)?;
    let report = evaluate(&manifest, checkpoint)?;
    let text = serde_json::to_string_pretty(&report).expect("json") + "\n";
    if let Some(p) = out {
        fs::write(p, &text).map_err(io_err(p))?;
    }
    print!("{text}");
    Ok(())
}

fn predict_cmd(checkpoint: &Path, data: Option<&Path>, scans: Vec<PathBuf>) -> Outcome {
    let mut paths = scans;
    if let Some(d) = data {
        let manifest = read_manifest(d, checkpoint_task(checkpoint)?)?;
        paths.extend(manifest.entries.into_iter().map(|e| e.scan_dir));
    }
    if paths.is_empty() {
        return Err(Failure::Usage(
            "predict needs --data or at least one scan path".into(),
        ));
    }
    let preds = predict(&paths, checkpoint)?;
    let k = preds.first().map_or(0, |p| p.probabilities.len());
    let mut out = String::from("scan_id,label");
    for c in 0..k {
        out.push_str(&format!(",p{c}"));
    }
    out.push('\n');
    for p in preds {
        out.push_str(&format!("{},{}", p.scan_id, p.label));
        for v in p.probabilities {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    print!("{out}");
    Ok(())
}

fn dispatch(cli: Cli) -> Outcome {
    match cli.command {
        Command::Preprocess {
            data,
            task,
            shape,
            out,
        } => preprocess(&data, task, shape, &out),
        Command::Synth {
            task,
            n_per_class,
            shape,
            gap,
            noise,
            seed,
            out,
        } => synth(
            SynthConfig {
                task,
                n_per_class,
                shape,
                class_mean_gap: gap,
                noise_std: noise,
                seed,
            },
            &out,
        ),
        Command::Train {
            config,
            data,
            val,
            out,
            overrides,
        } => train_cmd(&config, &data, val.as_deref(), out, &overrides),
        Command::Eval {
            checkpoint,
            data,
            task,
            out,
        } => eval_cmd(&checkpoint, &data, task, out.as_deref()),
        Command::Predict {
            checkpoint,
            data,
            scans,
        } => predict_cmd(&checkpoint, data.as_deref(), scans),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Library(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Numerical { .. } => 3,
                _ => 2,
            })
        }
    }
}
