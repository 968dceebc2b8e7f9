use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DatasetManifest, LabeledSample, ManifestEntry, Shape3, Task, Volume};
use crate::error::{Error, Result};

/// Parameters of the synthetic stand-in dataset. Class `k` scans are
/// `clamp(0.3 + k·class_mean_gap + noise, 0, 1)` with i.i.d. Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub task: Task,
    pub n_per_class: usize,
    pub shape: Shape3,
    pub class_mean_gap: f64,
    pub noise_std: f64,
    pub seed: u64,
}

pub const SYNTH_BASE_INTENSITY: f64 = 0.3;

impl SynthConfig {
    fn base(&self, class: usize) -> f64 {
        SYNTH_BASE_INTENSITY + class as f64 * self.class_mean_gap
    }

    fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        if self.n_per_class < 1 {
            return Err(Error::Config("n_per_class must be at least 1".into()));
        }
        if !(self.class_mean_gap > 0.0) || !self.class_mean_gap.is_finite() {
            return Err(Error::Config(format!(
                "class_mean_gap must be positive, got {}",
                self.class_mean_gap
            )));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::Config(format!(
                "noise_std must be non-negative, got {}",
                self.noise_std
            )));
        }
        let top = self.base(self.task.num_classes() - 1);
        if top > 1.0 {
            return Err(Error::Config(format!(
                "class mean {top} exceeds 1 for the {} task; lower class_mean_gap",
                self.task
            )));
        }
        Ok(())
    }
}

pub fn generate_synthetic_dataset(config: &SynthConfig) -> Result<Vec<LabeledSample>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise =
        Normal::new(0.0, config.noise_std).map_err(|e| Error::Config(format!("noise_std: {e}")))?;
    let mut samples = Vec::with_capacity(config.n_per_class * config.task.num_classes());
    for class in 0..config.task.num_classes() {
        let base = config.base(class);
        for i in 0..config.n_per_class {
            let data = (0..config.shape.len())
                .map(|_| (base + noise.sample(&mut rng)).clamp(0.0, 1.0) as f32)
                .collect();
            let volume = Volume::new(
                data,
                config.shape,
                format!("synth_c{class}_{i:04}"),
                config.shape.d as u32,
            )?;
            samples.push(LabeledSample::new(volume, class, config.task)?);
        }
    }
    Ok(samples)
}

/// Writes each sample as an 8-bit PNG slice stack under `out/scans/<id>/`
/// plus `out/manifest.csv`, and returns the manifest.
pub fn write_synthetic_dataset(
    samples: &[LabeledSample],
    out: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    let out = out.as_ref();
    let task = samples
        .first()
        .map(|s| s.task)
        .ok_or_else(|| Error::Config("no samples to write".into()))?;
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        let v = &s.volume;
        let dir = out.join("scans").join(v.scan_id());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let shape = v.shape();
        for z in 0..shape.d {
            let pixels: Vec<u8> = v
                .plane(z)
                .iter()
                .map(|&x| (x.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect();
            let img = image::GrayImage::from_raw(shape.w as u32, shape.h as u32, pixels)
                .expect("plane size matches shape");
            let path = dir.join(format!("slice_{z:04}.png"));
            img.save(&path)
                .map_err(|e| Error::Dataset(format!("cannot write {}: {e}", path.display())))?;
        }
        entries.push(ManifestEntry {
            scan_dir: dir,
            label: s.label,
        });
    }
    let manifest = DatasetManifest { entries, task };
    manifest.write_csv(out.join("manifest.csv"))?;
    Ok(manifest)
}
