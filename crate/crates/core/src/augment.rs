//! Stochastic augmentation: random-resized crop, z-window crop and contrast
//! jitter, two views per scan, and mixup over the augmented views.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{resample, LabeledSample, Shape3, Volume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentPolicy {
    /// Range of the crop's area as a fraction of the slice area.
    pub crop_scale_range: (f64, f64),
    /// Depth of the random contiguous z-window, if any.
    #[serde(default)]
    pub z_crop_depth: Option<usize>,
    pub contrast_range: (f64, f64),
    pub output_shape: Shape3,
    #[serde(default)]
    pub seed: u64,
}

impl AugmentPolicy {
    /// Parameters that leave a volume of `shape` untouched.
    pub fn identity(shape: Shape3) -> Self {
        AugmentPolicy {
            crop_scale_range: (1.0, 1.0),
            z_crop_depth: None,
            contrast_range: (1.0, 1.0),
            output_shape: shape,
            seed: 0,
        }
    }

    /// Detection defaults: scans stored at depth `2·d` are z-cropped to `d`.
    pub fn detection(output_shape: Shape3) -> Self {
        AugmentPolicy {
            crop_scale_range: (0.6, 1.0),
            z_crop_depth: Some(output_shape.d),
            contrast_range: (0.8, 1.2),
            output_shape,
            seed: 0,
        }
    }

    /// Severity defaults: the detection augmentations without the z-crop.
    pub fn severity(output_shape: Shape3) -> Self {
        AugmentPolicy {
            z_crop_depth: None,
            ..AugmentPolicy::detection(output_shape)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.crop_scale_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!(
                "crop_scale_range must satisfy 0 < min <= max <= 1, got ({lo}, {hi})"
            )));
        }
        let (clo, chi) = self.contrast_range;
        if !(clo > 0.0 && clo <= chi && chi.is_finite()) {
            return Err(Error::Config(format!(
                "contrast_range must be positive with min <= max, got ({clo}, {chi})"
            )));
        }
        if self.z_crop_depth == Some(0) {
            return Err(Error::Config("z_crop_depth must be at least 1".into()));
        }
        self.output_shape.validate()
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo < hi {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Applies crop, z-window and contrast in that order and returns a volume
/// of `policy.output_shape`.
pub fn augment_one(volume: &Volume, policy: &AugmentPolicy, rng: &mut impl Rng) -> Result<Volume> {
    policy.validate()?;
    let shape = volume.shape();
    if let Some(zd) = policy.z_crop_depth {
        if zd > shape.d {
            return Err(Error::Shape(format!(
                "z_crop_depth {zd} exceeds volume depth {}",
                shape.d
            )));
        }
    }

    // Random-resized crop in the axial plane, aspect ratio preserved.
    let scale = uniform(rng, policy.crop_scale_range).sqrt();
    let ch = ((shape.h as f64 * scale).round() as usize).clamp(1, shape.h);
    let cw = ((shape.w as f64 * scale).round() as usize).clamp(1, shape.w);
    let y0 = rng.random_range(0..=shape.h - ch);
    let x0 = rng.random_range(0..=shape.w - cw);
    let cropped = volume.crop((0, y0, x0), Shape3::new(shape.d, ch, cw))?;
    let mut out = resample(
        &cropped,
        Shape3::new(shape.d, policy.output_shape.h, policy.output_shape.w),
    )?;

    if let Some(zd) = policy.z_crop_depth {
        let z0 = rng.random_range(0..=shape.d - zd);
        out = out.z_window(z0, zd)?;
    }
    if out.shape() != policy.output_shape {
        out = resample(&out, policy.output_shape)?;
    }

    let c = uniform(rng, policy.contrast_range);
    if c != 1.0 {
        out = adjust_contrast(&out, c);
    }
    Ok(out)
}

/// `clamp(c·(v − mean) + mean, 0, 1)` about the volume mean.
pub fn adjust_contrast(volume: &Volume, c: f64) -> Volume {
    let mean = volume.mean();
    let data = volume
        .data()
        .iter()
        .map(|&v| (c * (v as f64 - mean) + mean).clamp(0.0, 1.0) as f32)
        .collect();
    volume.map_data(data)
}

/// `2N` views from `N` samples; views `2k` and `2k+1` come from sample `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedBatch {
    pub views: Vec<Volume>,
    pub labels: Vec<usize>,
    pub source_index: Vec<usize>,
    pub num_classes: usize,
}

impl AugmentedBatch {
    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    /// Assembles a batch from already-augmented view pairs.
    pub fn from_pairs(
        pairs: Vec<(Volume, Volume)>,
        labels: &[usize],
        num_classes: usize,
    ) -> Result<Self> {
        if pairs.len() != labels.len() || pairs.is_empty() {
            return Err(Error::Input(format!(
                "{} view pairs for {} labels",
                pairs.len(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Input(format!("label {l} >= {num_classes} classes")));
        }
        let n = pairs.len();
        let mut views = Vec::with_capacity(2 * n);
        for (a, b) in pairs {
            views.push(a);
            views.push(b);
        }
        Ok(AugmentedBatch {
            views,
            labels: labels.iter().flat_map(|&l| [l, l]).collect(),
            source_index: (0..n).flat_map(|k| [k, k]).collect(),
            num_classes,
        })
    }
}

pub fn make_two_views(
    batch: &[LabeledSample],
    policy: &AugmentPolicy,
    rng: &mut impl Rng,
) -> Result<AugmentedBatch> {
    let first = batch
        .first()
        .ok_or_else(|| Error::Input("cannot augment an empty batch".into()))?;
    let mut pairs = Vec::with_capacity(batch.len());
    for s in batch {
        let a = augment_one(&s.volume, policy, rng)?;
        let b = augment_one(&s.volume, policy, rng)?;
        pairs.push((a, b));
    }
    let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
    AugmentedBatch::from_pairs(pairs, &labels, first.task.num_classes())
}

/// Whether one mixing coefficient is shared by the batch or drawn per view.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixupGranularity {
    #[default]
    Batch,
    Sample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixupBatch {
    pub views: Vec<Volume>,
    /// Soft labels, one probability vector per view.
    pub labels: Vec<Vec<f64>>,
    /// Mixing coefficient per view (all equal under batch granularity).
    pub lambdas: Vec<f64>,
    pub partner: Vec<usize>,
}

impl MixupBatch {
    pub fn lambda(&self) -> f64 {
        self.lambdas[0]
    }
}

pub fn one_hot(label: usize, num_classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; num_classes];
    v[label] = 1.0;
    v
}

/// Draws `λ ~ Beta(α, α)` and a random partner permutation, then mixes.
pub fn make_mixup(
    batch: &AugmentedBatch,
    alpha: f64,
    granularity: MixupGranularity,
    rng: &mut impl Rng,
) -> Result<MixupBatch> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Config(format!(
            "mixup alpha must be positive, got {alpha}"
        )));
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::Config(format!("mixup alpha: {e}")))?;
    let n = batch.len();
    let lambdas = match granularity {
        MixupGranularity::Batch => vec![beta.sample(rng); n],
        MixupGranularity::Sample => (0..n).map(|_| beta.sample(rng)).collect(),
    };
    let mut partner: Vec<usize> = (0..n).collect();
    partner.shuffle(rng);
    mix_with(batch, &lambdas, &partner)
}

/// `x_mix = λ·x_i + (1−λ)·x_p`, `y_mix = λ·onehot(y_i) + (1−λ)·onehot(y_p)`.
pub fn mix_with(batch: &AugmentedBatch, lambdas: &[f64], partner: &[usize]) -> Result<MixupBatch> {
    let n = batch.len();
    if lambdas.len() != n || partner.len() != n {
        return Err(Error::Input(format!(
            "{} lambdas and {} partners for {n} views",
            lambdas.len(),
            partner.len()
        )));
    }
    if let Some(&p) = partner.iter().find(|&&p| p >= n) {
        return Err(Error::Input(format!("partner index {p} out of range")));
    }
    if let Some(&l) = lambdas.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(Error::Input(format!("lambda {l} outside [0, 1]")));
    }
    let shape = batch.views[0].shape();
    if let Some(v) = batch.views.iter().find(|v| v.shape() != shape) {
        return Err(Error::Shape(format!(
            "mixup needs equal view shapes, got {} and {shape}",
            v.shape()
        )));
    }

    let k = batch.num_classes;
    let mut views = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let (lam, p) = (lambdas[i], partner[i]);
        let a = &batch.views[i];
        let b = &batch.views[p];
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| {
                let (x, y) = (x as f64, y as f64);
                (lam * x + (1.0 - lam) * y).clamp(x.min(y), x.max(y)) as f32
            })
            .collect();
        views.push(a.map_data(data));
        let (ya, yb) = (one_hot(batch.labels[i], k), one_hot(batch.labels[p], k));
        labels.push(
            ya.iter()
                .zip(&yb)
                .map(|(u, v)| lam * u + (1.0 - lam) * v)
                .collect(),
        );
    }
    Ok(MixupBatch {
        views,
        labels,
        lambdas: lambdas.to_vec(),
        partner: partner.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Task;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(shape: Shape3) -> Volume {
        Volume::from_fn(shape, "r", |z, y, x| {
            ((z * 7 + y * 3 + x) % 17) as f32 / 16.0
        })
        .unwrap()
    }

    fn samples(n: usize) -> Vec<LabeledSample> {
        (0..n)
            .map(|i| {
                let v = ramp(Shape3::new(8, 8, 8)).with_scan_id(format!("s{i}"));
                LabeledSample::new(v, i % 2, Task::Detection).unwrap()
            })
            .collect()
    }

    #[test]
    fn detection_policy_shape() {
        let v = Volume::filled(Shape3::new(128, 32, 32), 0.4, "d").unwrap();
        let p = AugmentPolicy::detection(Shape3::new(64, 16, 16));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = augment_one(&v, &p, &mut rng).unwrap();
        assert_eq!(out.shape(), Shape3::new(64, 16, 16));
    }

    #[test]
    fn identity_policy_is_identity() {
        let v = ramp(Shape3::new(5, 6, 7));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = augment_one(&v, &AugmentPolicy::identity(v.shape()), &mut rng).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn constants_survive_any_policy() {
        let v = Volume::filled(Shape3::new(10, 12, 12), 0.5, "c").unwrap();
        let p = AugmentPolicy {
            crop_scale_range: (0.2, 0.9),
            z_crop_depth: Some(6),
            contrast_range: (0.3, 2.5),
            output_shape: Shape3::new(5, 9, 7),
            seed: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let out = augment_one(&v, &p, &mut rng).unwrap();
            assert!(out.data().iter().all(|&x| x == 0.5));
        }
    }

    #[test]
    fn z_crop_deeper_than_volume_fails() {
        let v = Volume::filled(Shape3::new(4, 4, 4), 0.5, "c").unwrap();
        let p = AugmentPolicy::detection(Shape3::new(8, 4, 4));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            augment_one(&v, &p, &mut rng),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn contrast_stays_in_unit_range() {
        let v = ramp(Shape3::new(2, 4, 4));
        let out = adjust_contrast(&v, 3.0);
        assert!(out.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
        assert!((out.mean() - v.mean()).abs() < 0.2);
    }

    #[test]
    fn two_views_pairing() {
        let batch = samples(8);
        let p = AugmentPolicy::severity(Shape3::new(8, 6, 6));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ab = make_two_views(&batch, &p, &mut rng).unwrap();
        assert_eq!(ab.len(), 16);
        for k in 0..8 {
            assert_eq!(ab.source_index[2 * k], k);
            assert_eq!(ab.source_index[2 * k + 1], k);
            assert_eq!(ab.labels[2 * k], batch[k].label);
            assert_eq!(ab.labels[2 * k + 1], batch[k].label);
        }
        let one = make_two_views(&batch[..1], &p, &mut rng).unwrap();
        assert_eq!(one.source_index, vec![0, 0]);

        let again =
            |seed| make_two_views(&batch, &p, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        assert_eq!(again(9), again(9));
        assert!(make_two_views(&[], &p, &mut rng).is_err());
    }

    #[test]
    fn mixup_arithmetic() {
        let shape = Shape3::new(1, 1, 1);
        let pairs = vec![(
            Volume::filled(shape, 2.0, "a").unwrap(),
            Volume::filled(shape, 6.0, "b").unwrap(),
        )];
        let ab = AugmentedBatch::from_pairs(pairs, &[0], 2).unwrap();
        let m = mix_with(&ab, &[0.25, 0.25], &[1, 0]).unwrap();
        assert_eq!(m.views[0].data(), &[5.0]);

        let pairs = vec![
            (
                Volume::filled(shape, 0.0, "a").unwrap(),
                Volume::filled(shape, 0.0, "a").unwrap(),
            ),
            (
                Volume::filled(shape, 1.0, "b").unwrap(),
                Volume::filled(shape, 1.0, "b").unwrap(),
            ),
        ];
        let ab = AugmentedBatch::from_pairs(pairs, &[0, 1], 2).unwrap();
        let m = mix_with(&ab, &[0.7; 4], &[2, 3, 0, 1]).unwrap();
        assert_eq!(m.labels[0], vec![0.7, 1.0 - 0.7]);
        assert!((m.labels[0][1] - 0.3).abs() < 1e-15);

        let unit = mix_with(&ab, &[1.0; 4], &[2, 3, 0, 1]).unwrap();
        assert_eq!(unit.views, ab.views);
        assert_eq!(unit.labels[2], vec![0.0, 1.0]);
    }

    #[test]
    fn mixup_rejects_bad_alpha() {
        let batch = samples(2);
        let p = AugmentPolicy::identity(Shape3::new(8, 8, 8));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ab = make_two_views(&batch, &p, &mut rng).unwrap();
        assert!(matches!(
            make_mixup(&ab, 0.0, MixupGranularity::Batch, &mut rng),
            Err(Error::Config(_))
        ));
        let m = make_mixup(&ab, 0.2, MixupGranularity::Batch, &mut rng).unwrap();
        assert!(m.lambdas.iter().all(|&l| l == m.lambda()));
        let mut sorted = m.partner.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
        let s = make_mixup(&ab, 0.2, MixupGranularity::Sample, &mut rng).unwrap();
        for l in &s.labels {
            assert!((l.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
