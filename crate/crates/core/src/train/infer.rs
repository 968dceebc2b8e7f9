use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::data::{par_map, worker_count};
use super::metrics::{confusion_matrix, macro_f1};
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{checkpoint_from_bytes, Model};
use crate::volume::{resample, DatasetManifest, ManifestEntry, Shape3, Task, Volume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub n_samples: usize,
    /// SHA-256 of the checkpoint file, hex encoded.
    pub checkpoint_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub scan_id: String,
    pub label: usize,
    pub probabilities: Vec<f64>,
}

/// The deterministic evaluation view: a centred z-window when the scan is
/// deeper than the model input, then resampling to `input` if needed.
pub fn eval_view(volume: &Volume, input: Shape3) -> Result<Volume> {
    let d = volume.shape().d;
    let v = if d > input.d {
        volume.z_window((d - input.d) / 2, input.d)?
    } else {
        volume.clone()
    };
    if v.shape() == input {
        Ok(v)
    } else {
        resample(&v, input)
    }
}

/// Restores a model and its training configuration from a checkpoint file,
/// also returning the checkpoint id.
pub fn load_model(checkpoint: impl AsRef<Path>) -> Result<(Model, TrainConfig, String)> {
    let path = checkpoint.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let id = hex::encode(Sha256::digest(&bytes));
    let ck = checkpoint_from_bytes(&bytes)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let config = TrainConfig::from_json(&ck.config_json)?;
    let mut model = config.build_model()?;
    model.params_mut().load_from(&ck.params)?;
    Ok((model, config, id))
}

pub(crate) fn predict_proba_batched(
    model: &Model,
    views: &[Volume],
    batch: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(views.len());
    for chunk in views.chunks(batch.max(1)) {
        let p = model.predict_proba(chunk)?;
        out.extend(p.iter_rows().map(<[f64]>::to_vec));
    }
    Ok(out)
}

fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

pub(crate) fn predict_labels(model: &Model, views: &[Volume], batch: usize) -> Result<Vec<usize>> {
    Ok(predict_proba_batched(model, views, batch)?
        .iter()
        .map(|p| argmax(p))
        .collect())
}

fn load_views(entries: &[ManifestEntry], config: &TrainConfig) -> Result<Vec<Volume>> {
    par_map(entries, worker_count(config.num_workers), |_, e| {
        eval_view(&e.load(config.load_shape)?, config.augment.output_shape)
    })
}

/// Single-view evaluation of a checkpoint on a labelled manifest.
pub fn evaluate(manifest: &DatasetManifest, checkpoint: impl AsRef<Path>) -> Result<EvalReport> {
    let (model, config, checkpoint_id) = load_model(checkpoint)?;
    let k = model.head_spec().num_classes;
    if manifest.task.num_classes() != k {
        return Err(Error::Config(format!(
            "manifest is for the {} task ({} classes), checkpoint predicts {k}",
            manifest.task,
            manifest.task.num_classes()
        )));
    }
    manifest.check_labels()?;
    if manifest.is_empty() {
        return Err(Error::Dataset("evaluation manifest is empty".into()));
    }
    let views = load_views(&manifest.entries, &config)?;
    let pred = predict_labels(&model, &views, config.batch_size)?;
    let truth = manifest.labels();
    let (macro_f1, per_class_f1) = macro_f1(&truth, &pred, k)?;
    Ok(EvalReport {
        task: config.task,
        macro_f1,
        per_class_f1,
        confusion: confusion_matrix(&truth, &pred, k)?,
        n_samples: truth.len(),
        checkpoint_id,
    })
}

/// Class probabilities and argmax label for each scan directory or volume file.
pub fn predict<P: AsRef<Path>>(
    scans: &[P],
    checkpoint: impl AsRef<Path>,
) -> Result<Vec<Prediction>> {
    let (model, config, _) = load_model(checkpoint)?;
    let entries: Vec<ManifestEntry> = scans
        .iter()
        .map(|p| ManifestEntry {
            scan_dir: p.as_ref().to_path_buf(),
            label: 0,
        })
        .collect();
    let views = load_views(&entries, &config)?;
    let probs = predict_proba_batched(&model, &views, config.batch_size)?;
    Ok(views
        .iter()
        .zip(probs)
        .map(|(v, p)| Prediction {
            scan_id: v.scan_id().to_owned(),
            label: argmax(&p),
            probabilities: p,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_view_takes_centre_window() {
        let v = Volume::from_fn(Shape3::new(8, 2, 2), "s", |z, _, _| z as f32).unwrap();
        let e = eval_view(&v, Shape3::new(4, 2, 2)).unwrap();
        assert_eq!(e.plane(0)[0], 2.0);
        assert_eq!(e.plane(3)[0], 5.0);
        let same = eval_view(&v, Shape3::new(8, 2, 2)).unwrap();
        assert_eq!(same, v);
    }

    #[test]
    fn argmax_prefers_first_of_ties() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.2, 0.7]), 2);
    }
}
