//! Plain Rust behind the browser bindings, so it can be tested natively.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

use cmc3d::augment::{augment_one, mix_with, AugmentPolicy, AugmentedBatch};
use cmc3d::losses::supcon_loss;
use cmc3d::volume::{Shape3, Volume};
use cmc3d::{Error, Matrix, Result};

pub const PHANTOM_SHAPE: Shape3 = Shape3 {
    d: 16,
    h: 96,
    w: 96,
};

/// A crude axial chest phantom: soft-tissue body, two dark lungs and, when
/// `lesions > 0`, bright ground-glass blobs inside the lungs.
pub fn phantom(seed: u32, lesions: usize) -> Result<Volume> {
    let s = PHANTOM_SHAPE;
    let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..lesions)
        .map(|_| {
            let side = if rng.random_bool(0.5) { 30.0 } else { 66.0 };
            (
                rng.random_range(0.0..s.d as f64),
                48.0 + rng.random_range(-18.0..18.0),
                side + rng.random_range(-7.0..7.0),
                rng.random_range(3.0..7.0),
            )
        })
        .collect();
    let noise: Vec<f32> = (0..s.len())
        .map(|_| rng.random_range(-0.03..0.03))
        .collect();
    let mut i = 0;
    Volume::from_fn(s, format!("phantom_{seed}"), |z, y, x| {
        let (zf, yf, xf) = (z as f64, y as f64, x as f64);
        let sq = |v: f64| v * v;
        let mut v = 0.0;
        if sq((yf - 48.0) / 40.0) + sq((xf - 48.0) / 44.0) < 1.0 {
            v = 0.55;
            let ry = 26.0 + 4.0 * (zf / s.d as f64 * std::f64::consts::PI).sin();
            for cx in [30.0, 66.0] {
                if sq((yf - 48.0) / ry) + sq((xf - cx) / 13.0) < 1.0 {
                    v = 0.12;
                    for &(bz, by, bx, r) in &blobs {
                        let d2 = sq(zf - bz) / 4.0 + sq(yf - by) + sq(xf - bx);
                        v += 0.4 * (-d2 / (2.0 * r * r)).exp();
                    }
                }
            }
        }
        let out = (v as f32 + noise[i]).clamp(0.0, 1.0);
        i += 1;
        out
    })
}

/// Gray RGBA pixels of slice `z`.
pub fn slice_rgba(volume: &Volume, z: usize) -> Vec<u8> {
    volume
        .plane(z)
        .iter()
        .flat_map(|&v| {
            let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            [g, g, g, 255]
        })
        .collect()
}

/// Places equally sized RGBA panels side by side.
pub fn side_by_side(panels: &[Vec<u8>], w: usize, h: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(panels.len() * w * h * 4);
    for y in 0..h {
        for p in panels {
            out.extend_from_slice(&p[y * w * 4..(y + 1) * w * 4]);
        }
    }
    out
}

/// Original phantom next to two independently augmented views of it, all at
/// the middle slice.
pub fn augment_views(seed: u32, crop_min: f64, contrast_spread: f64) -> Result<Vec<u8>> {
    let vol = phantom(seed, 3)?;
    let policy = AugmentPolicy {
        crop_scale_range: (crop_min, 1.0),
        z_crop_depth: None,
        contrast_range: (1.0 - contrast_spread, 1.0 + contrast_spread),
        output_shape: PHANTOM_SHAPE,
        seed: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed as u64 ^ 0x5eed);
    let a = augment_one(&vol, &policy, &mut rng)?;
    let b = augment_one(&vol, &policy, &mut rng)?;
    let z = PHANTOM_SHAPE.d / 2;
    let panels = [slice_rgba(&vol, z), slice_rgba(&a, z), slice_rgba(&b, z)];
    Ok(side_by_side(&panels, PHANTOM_SHAPE.w, PHANTOM_SHAPE.h))
}

/// Supervised contrastive loss of four unit embeddings on the circle: class 0
/// at `±θ/2`, class 1 at `π ± θ/2`, for `points` values of θ across `[0, π]`.
pub fn supcon_curve(tau: f64, points: usize) -> Result<Vec<f64>> {
    if points < 2 {
        return Err(Error::Input("need at least two points".into()));
    }
    let labels = [0, 0, 1, 1];
    (0..points)
        .map(|i| {
            let theta = std::f64::consts::PI * i as f64 / (points - 1) as f64;
            let angles = [
                theta / 2.0,
                -theta / 2.0,
                std::f64::consts::PI + theta / 2.0,
                std::f64::consts::PI - theta / 2.0,
            ];
            let rows: Vec<[f64; 2]> = angles.iter().map(|a| [a.cos(), a.sin()]).collect();
            supcon_loss(&Matrix::from_rows(&rows)?, &labels, tau)
        })
        .collect()
}

/// Counts of `samples` draws of `λ ~ Beta(α, α)` in `bins` equal bins of `[0, 1]`.
pub fn lambda_histogram(alpha: f64, samples: usize, bins: usize, seed: u32) -> Result<Vec<u32>> {
    if bins == 0 {
        return Err(Error::Input("bins must be positive".into()));
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::Config(format!("alpha: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
    let mut counts = vec![0u32; bins];
    for _ in 0..samples {
        let l: f64 = beta.sample(&mut rng);
        counts[((l * bins as f64) as usize).min(bins - 1)] += 1;
    }
    Ok(counts)
}

/// A healthy and a lesioned phantom, then their mixup `λ·a + (1−λ)·b`.
pub fn mixup_preview(seed: u32, lambda: f64) -> Result<Vec<u8>> {
    let healthy = phantom(seed, 0)?;
    let sick = phantom(seed.wrapping_add(1), 5)?;
    let batch = AugmentedBatch::from_pairs(
        vec![
            (healthy.clone(), healthy.clone()),
            (sick.clone(), sick.clone()),
        ],
        &[0, 1],
        2,
    )?;
    let mixed = mix_with(&batch, &[lambda; 4], &[2, 3, 0, 1])?;
    let z = PHANTOM_SHAPE.d / 2;
    let panels = [
        slice_rgba(&healthy, z),
        slice_rgba(&sick, z),
        slice_rgba(&mixed.views[0], z),
    ];
    Ok(side_by_side(&panels, PHANTOM_SHAPE.w, PHANTOM_SHAPE.h))
}
