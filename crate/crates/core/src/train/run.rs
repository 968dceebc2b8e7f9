use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use log::info;

use super::data::{
    build_batch, epoch_batches, par_map, steps_per_epoch, worker_count, Batch, Loader,
};
use super::infer::{eval_view, predict_labels};
use super::metrics::macro_f1;
use super::optim::AdamW;
use super::schedule::lr_at;
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::losses::LossBreakdown;
use crate::matrix::Matrix;
use crate::model::{save_checkpoint, Model};
use crate::volume::{DatasetManifest, Volume};

pub const METRICS_HEADER: &str = "epoch,step,l_con,l_mix,l_clf,total,lr";

pub const METRICS_FILE: &str = "metrics.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub steps: usize,
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: Option<PathBuf>,
    pub best_val_macro_f1: Option<f64>,
    /// Mean losses of the last epoch, if any epoch ran.
    pub last_epoch: Option<LossBreakdown>,
}

fn append_row(path: &Path, row: &str) -> Result<()> {
    let mut f = OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(row.as_bytes())
        .and_then(|_| f.sync_data())
        .map_err(|e| Error::io(path, e))
}

fn check_finite(model: &Model, loss: &LossBreakdown, step: usize) -> Result<()> {
    let grads_ok = model
        .params()
        .grads()?
        .iter()
        .all(|g| g.iter().all(|v| v.is_finite()));
    if loss.is_finite() && grads_ok {
        return Ok(());
    }
    Err(numerical(step, loss))
}

fn numerical(step: usize, loss: &LossBreakdown) -> Error {
    Error::Numerical {
        step,
        l_con: loss.l_con,
        l_mix: loss.l_mix,
        l_clf: loss.l_clf,
        total: loss.total,
    }
}

struct Run<'a> {
    config: &'a TrainConfig,
    model: Model,
    opt: AdamW,
    total_steps: usize,
    config_json: String,
    metrics_path: PathBuf,
    best_path: PathBuf,
    val_set: Option<(Vec<Volume>, Vec<usize>)>,
    summary: TrainSummary,
    acc: [f64; 4],
    batches: usize,
}

impl Run<'_> {
    fn step(&mut self, step: usize, batch: Batch) -> Result<()> {
        let mixed_labels = Matrix::from_rows(&batch.mixup.labels)?;
        let (loss, _) = self
            .model
            .train_step(
                &batch.views.views,
                &batch.mixup.views,
                &batch.views.labels,
                &mixed_labels,
                &self.config.loss_weights,
            )
            .map_err(|e| match e {
                Error::Numerical {
                    l_con,
                    l_mix,
                    l_clf,
                    total,
                    ..
                } => Error::Numerical {
                    step,
                    l_con,
                    l_mix,
                    l_clf,
                    total,
                },
                other => other,
            })?;
        check_finite(&self.model, &loss, step)?;
        let lr = lr_at(step, self.total_steps, self.config);
        self.opt.step(self.model.params_mut(), lr)?;
        if !self
            .model
            .params()
            .params()
            .iter()
            .all(|p| p.value.iter().all(|v| v.is_finite()))
        {
            return Err(numerical(step, &loss));
        }
        for (a, v) in self
            .acc
            .iter_mut()
            .zip([loss.l_con, loss.l_mix, loss.l_clf, loss.total])
        {
            *a += v;
        }
        self.batches += 1;
        Ok(())
    }

    fn end_epoch(&mut self, epoch: usize, first_step: usize, steps_done: usize) -> Result<()> {
        let m = self.acc.map(|v| v / self.batches.max(1) as f64);
        self.acc = [0.0; 4];
        self.batches = 0;
        let lr = lr_at(first_step, self.total_steps, self.config);
        append_row(
            &self.metrics_path,
            &format!(
                "{epoch},{steps_done},{},{},{},{},{lr}\n",
                m[0], m[1], m[2], m[3]
            ),
        )?;
        self.summary.steps = steps_done;
        self.summary.last_epoch = Some(LossBreakdown {
            l_con: m[0],
            l_mix: m[1],
            l_clf: m[2],
            total: m[3],
        });
        info!(
            "epoch {epoch}: total {:.5} (con {:.5}, mix {:.5}, clf {:.5}), lr {lr:e}",
            m[3], m[0], m[1], m[2]
        );
        if let Some((vols, labels)) = &self.val_set {
            let pred = predict_labels(&self.model, vols, self.config.batch_size)?;
            let (f1, _) = macro_f1(labels, &pred, self.config.task.num_classes())?;
            info!("epoch {epoch}: validation macro F1 {f1:.4}");
            if self.summary.best_val_macro_f1.is_none_or(|b| f1 > b) {
                self.summary.best_val_macro_f1 = Some(f1);
                save_checkpoint(&self.model, &self.config_json, &self.best_path)?;
                self.summary.best_checkpoint = Some(self.best_path.clone());
            }
        }
        Ok(())
    }
}

/// One planned step: its epoch, global index, and whether it closes the epoch.
struct Planned {
    epoch: usize,
    step: usize,
    last: bool,
    indices: Vec<usize>,
}

fn plan<'a>(config: &'a TrainConfig, labels: &'a [usize]) -> impl Iterator<Item = Planned> + 'a {
    let spe = steps_per_epoch(config, labels.len());
    (0..config.epochs).flat_map(move |epoch| {
        let batches = epoch_batches(config, labels, epoch);
        let n = batches.len();
        batches
            .into_iter()
            .enumerate()
            .map(move |(i, indices)| Planned {
                epoch,
                step: epoch * spe + i,
                last: i + 1 == n,
                indices,
            })
    })
}

/// Batches assembled ahead of the optimizer when loading runs in parallel.
const PREFETCH: usize = 2;

/// Trains on `manifest`, writing `metrics.csv`, `final.ckpt` and, when a
/// validation manifest is given, `best.ckpt` into `out_dir`.
pub fn train(
    manifest: &DatasetManifest,
    config: &TrainConfig,
    out_dir: impl AsRef<Path>,
    val: Option<&DatasetManifest>,
) -> Result<TrainSummary> {
    config.validate()?;
    if manifest.is_empty() {
        return Err(Error::Dataset("training manifest is empty".into()));
    }
    for m in std::iter::once(manifest).chain(val) {
        if m.task != config.task {
            return Err(Error::Config(format!(
                "manifest is for the {} task, config for {}",
                m.task, config.task
            )));
        }
        m.check_labels()?;
    }
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let metrics_path = out_dir.join(METRICS_FILE);
    File::create(&metrics_path)
        .and_then(|mut f| writeln!(f, "{METRICS_HEADER}"))
        .map_err(|e| Error::io(&metrics_path, e))?;

    let workers = worker_count(config.num_workers);
    let labels = manifest.labels();
    let spe = steps_per_epoch(config, labels.len());
    info!(
        "training on {} scans: {} epochs of {spe} steps, {workers} worker(s)",
        labels.len(),
        config.epochs
    );

    let val_set = match val {
        Some(v) => Some((
            par_map(&v.entries, workers, |_, e| {
                eval_view(&e.load(config.load_shape)?, config.augment.output_shape)
            })?,
            v.labels(),
        )),
        None => None,
    };
    let model = config.build_model()?;
    let final_path = out_dir.join(FINAL_CHECKPOINT);
    let mut run = Run {
        config,
        opt: AdamW::new(model.params(), config.adam, config.weight_decay),
        model,
        total_steps: spe * config.epochs,
        config_json: config.to_json(),
        metrics_path,
        best_path: out_dir.join(BEST_CHECKPOINT),
        val_set,
        summary: TrainSummary {
            steps: 0,
            final_checkpoint: final_path.clone(),
            best_checkpoint: None,
            best_val_macro_f1: None,
            last_epoch: None,
        },
        acc: [0.0; 4],
        batches: 0,
    };

    if config.epochs > 0 {
        let loader = Loader::new(
            &manifest.entries,
            config.load_shape,
            workers,
            config.cache_volumes,
        )?;
        let mut handle = |p: Planned, batch: Result<Batch>| -> Result<()> {
            run.step(p.step, batch?)?;
            if p.last {
                run.end_epoch(p.epoch, p.epoch * spe, p.step + 1)?;
            }
            Ok(())
        };
        if workers <= 1 {
            for p in plan(config, &labels) {
                let batch = build_batch(config, &loader, &labels, &p.indices, p.step);
                handle(p, batch)?;
            }
        } else {
            std::thread::scope(|s| -> Result<()> {
                let (tx, rx) = mpsc::sync_channel(PREFETCH);
                let (loader, labels) = (&loader, &labels);
                s.spawn(move || {
                    for p in plan(config, labels) {
                        let batch = build_batch(config, loader, labels, &p.indices, p.step);
                        let failed = batch.is_err();
                        if tx.send((p, batch)).is_err() || failed {
                            break;
                        }
                    }
                });
                // Dropping the receiver on error stops the producer at its next send.
                rx.into_iter().try_for_each(|(p, batch)| handle(p, batch))
            })?;
        }
    }
    save_checkpoint(&run.model, &run.config_json, &final_path)?;
    Ok(run.summary)
}
