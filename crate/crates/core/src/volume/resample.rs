use super::{Shape3, Volume};
use crate::error::Result;

/// Trilinear resampling with corner-aligned sampling: output voxel `i` along
/// an axis of length `n_out` samples input coordinate `i·(n_in−1)/(n_out−1)`.
/// A single output sample is taken at the axis centre.
///
/// The interpolation is separable (width, then height, then depth) and
/// carried in `f64`; each 1D step is clamped to its two parents, so
/// constants are preserved exactly and the output never leaves the input's
/// `[min, max]`.
pub fn resample(volume: &Volume, target: Shape3) -> Result<Volume> {
    target.validate()?;
    let src = volume.shape();
    if src == target {
        return Ok(volume.clone());
    }

    let mut buf: Vec<f64> = volume.data().iter().map(|&v| v as f64).collect();
    let mut dims = [src.d, src.h, src.w];
    for (axis, n_out) in [(2, target.w), (1, target.h), (0, target.d)] {
        if dims[axis] != n_out {
            buf = resample_axis(&buf, dims, axis, n_out);
            dims[axis] = n_out;
        }
    }

    let data = buf.into_iter().map(|v| v as f32).collect();
    Ok(Volume::from_parts_unchecked(
        data,
        target,
        volume.scan_id().to_owned(),
        volume.source_slice_count(),
    ))
}

#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    t: f64,
}

fn taps(n_in: usize, n_out: usize) -> Vec<Tap> {
    (0..n_out)
        .map(|i| {
            let pos = if n_in == 1 {
                0.0
            } else if n_out == 1 {
                (n_in - 1) as f64 / 2.0
            } else {
                (i * (n_in - 1)) as f64 / (n_out - 1) as f64
            };
            let lo = (pos.floor() as usize).min(n_in - 1);
            let hi = (lo + 1).min(n_in - 1);
            Tap {
                lo,
                hi,
                t: pos - lo as f64,
            }
        })
        .collect()
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    let v = a + t * (b - a);
    v.clamp(a.min(b), a.max(b))
}

fn resample_axis(src: &[f64], dims: [usize; 3], axis: usize, n_out: usize) -> Vec<f64> {
    let taps = taps(dims[axis], n_out);
    // Treat the grid as (outer, axis, inner) with the axis in the middle.
    let outer: usize = dims[..axis].iter().product();
    let inner: usize = dims[axis + 1..].iter().product();
    let n_in = dims[axis];
    let mut out = vec![0.0; outer * n_out * inner];
    for o in 0..outer {
        let src_block = &src[o * n_in * inner..(o + 1) * n_in * inner];
        let dst_block = &mut out[o * n_out * inner..(o + 1) * n_out * inner];
        for (i, tap) in taps.iter().enumerate() {
            let a = &src_block[tap.lo * inner..(tap.lo + 1) * inner];
            let b = &src_block[tap.hi * inner..(tap.hi + 1) * inner];
            let dst = &mut dst_block[i * inner..(i + 1) * inner];
            for ((d, &av), &bv) in dst.iter_mut().zip(a).zip(b) {
                *d = lerp(av, bv, tap.t);
            }
        }
    }
    out
}
