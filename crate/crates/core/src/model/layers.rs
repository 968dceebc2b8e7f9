//! Forward and backward kernels for the reference encoder and heads.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Batch of multi-channel volumes laid out `[n, c, d, h, w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor5 {
    pub dims: [usize; 5],
    pub data: Vec<f64>,
}

impl Tensor5 {
    pub fn zeros(dims: [usize; 5]) -> Self {
        Tensor5 {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn from_vec(dims: [usize; 5], data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.iter().product::<usize>() {
            return Err(Error::Shape(format!(
                "{} values for tensor {dims:?}",
                data.len()
            )));
        }
        Ok(Tensor5 { dims, data })
    }

    pub fn spatial(&self) -> usize {
        self.dims[2] * self.dims[3] * self.dims[4]
    }

    /// Contiguous `[d, h, w]` block of sample `n`, channel `c`.
    pub fn channel(&self, n: usize, c: usize) -> &[f64] {
        let s = self.spatial();
        let off = (n * self.dims[1] + c) * s;
        &self.data[off..off + s]
    }

    pub fn channel_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let s = self.spatial();
        let off = (n * self.dims[1] + c) * s;
        &mut self.data[off..off + s]
    }
}

/// Convolution kernel `[c_out, c_in, kd, kh, kw]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel3d {
    pub dims: [usize; 5],
    pub data: Vec<f64>,
}

impl Kernel3d {
    pub fn from_vec(dims: [usize; 5], data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.iter().product::<usize>() {
            return Err(Error::Shape(format!(
                "{} values for kernel {dims:?}",
                data.len()
            )));
        }
        Ok(Kernel3d { dims, data })
    }

    pub fn get(&self, o: usize, i: usize, t: usize, y: usize, x: usize) -> f64 {
        let [_, ci, kd, kh, kw] = self.dims;
        self.data[(((o * ci + i) * kd + t) * kh + y) * kw + x]
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    cin: usize,
    cout: usize,
    k: [usize; 3],
    pad: [usize; 3],
    inp: [usize; 3],
    out: [usize; 3],
}

impl ConvGeom {
    fn new(input: [usize; 5], kernel: [usize; 5], pad: [usize; 3]) -> Result<Self> {
        let [_, cin, d, h, w] = input;
        let [cout, kcin, kd, kh, kw] = kernel;
        if cin != kcin {
            return Err(Error::Shape(format!(
                "input has {cin} channels, kernel expects {kcin}"
            )));
        }
        let mut out = [0usize; 3];
        for (a, ((&n, &k), &p)) in [d, h, w].iter().zip(&[kd, kh, kw]).zip(&pad).enumerate() {
            if n + 2 * p < k {
                return Err(Error::Shape(format!(
                    "kernel extent {k} exceeds padded input extent {} on axis {a}",
                    n + 2 * p
                )));
            }
            out[a] = n + 2 * p - k + 1;
        }
        Ok(ConvGeom {
            cin,
            cout,
            k: [kd, kh, kw],
            pad,
            inp: [d, h, w],
            out,
        })
    }

    fn taps(&self) -> usize {
        self.k.iter().product()
    }

    fn spatial_out(&self) -> usize {
        self.out.iter().product()
    }

    /// Visits every (column row, output row, input row, x-range) of sample `b`.
    fn for_each_patch_row(
        &self,
        mut f: impl FnMut(usize, usize, usize, std::ops::Range<usize>, usize),
    ) {
        let [kd, kh, kw] = self.k;
        for i in 0..self.cin {
            for kz in 0..kd {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let r = ((i * kd + kz) * kh + ky) * kw + kx;
                        self.for_each_row(kz, ky, kx, |orow, irow, xs| f(r, orow, irow, xs, i));
                    }
                }
            }
        }
    }

    /// Fills `col` (`[cin·taps, spatial_out]`) with the receptive fields of
    /// sample `b`. Padding cells are never written, so `col` must start zeroed
    /// and may then be reused across samples.
    fn im2col(&self, input: &Tensor5, b: usize, col: &mut [f64]) {
        let sp = self.spatial_out();
        self.for_each_patch_row(|r, orow, irow, xs, i| {
            let x = input.channel(b, i);
            let len = xs.len();
            let start = r * sp + orow + xs.start;
            col[start..start + len].copy_from_slice(&x[irow..irow + len]);
        });
    }

    /// Scatter-adds column gradients back onto sample `b` of `grad_in`.
    fn col2im(&self, gcol: &[f64], grad_in: &mut Tensor5, b: usize) {
        let sp = self.spatial_out();
        self.for_each_patch_row(|r, orow, irow, xs, i| {
            let gi = grad_in.channel_mut(b, i);
            let len = xs.len();
            let start = r * sp + orow + xs.start;
            for (d, s) in gi[irow..irow + len]
                .iter_mut()
                .zip(&gcol[start..start + len])
            {
                *d += s;
            }
        });
    }

    /// Output positions `o` along an axis for which `o + k − pad` is inside the input.
    #[inline]
    fn valid(&self, axis: usize, k: usize) -> std::ops::Range<usize> {
        let p = self.pad[axis];
        let lo = p.saturating_sub(k);
        let hi = (self.inp[axis] + p).saturating_sub(k).min(self.out[axis]);
        lo..hi.max(lo)
    }

    /// Visits every (output row, input row, x-shift) triple touched by tap `(kz, ky, kx)`.
    #[inline]
    fn for_each_row(
        &self,
        kz: usize,
        ky: usize,
        kx: usize,
        mut f: impl FnMut(usize, usize, std::ops::Range<usize>),
    ) {
        let [_, h, w] = self.inp;
        let [_, oh, ow] = self.out;
        let xs = self.valid(2, kx);
        if xs.is_empty() {
            return;
        }
        for oz in self.valid(0, kz) {
            let iz = oz + kz - self.pad[0];
            for oy in self.valid(1, ky) {
                let iy = oy + ky - self.pad[1];
                let out_row = (oz * oh + oy) * ow;
                let in_row = (iz * h + iy) * w + xs.start + kx - self.pad[2];
                f(out_row, in_row, xs.clone());
            }
        }
    }
}

/// Stride-1 3D convolution with zero padding `pad` on each axis.
pub fn conv3d(input: &Tensor5, kernel: &Kernel3d, pad: [usize; 3]) -> Result<Tensor5> {
    conv3d_raw(input, &kernel.data, kernel.dims, pad)
}

/// Spatial block size of the column loops, chosen to keep a block of every
/// column row in cache.
const TILE: usize = 256;

/// Dot product with four independent accumulators so the loop vectorises.
#[inline]
fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) fn conv3d_raw(
    input: &Tensor5,
    weight: &[f64],
    wdims: [usize; 5],
    pad: [usize; 3],
) -> Result<Tensor5> {
    let g = ConvGeom::new(input.dims, wdims, pad)?;
    let n = input.dims[0];
    let mut out = Tensor5::zeros([n, g.cout, g.out[0], g.out[1], g.out[2]]);
    let rows = g.cin * g.taps();
    let mut col = vec![0.0; rows * g.spatial_out()];
    for b in 0..n {
        g.im2col(input, b, &mut col);
        let sp = g.spatial_out();
        for t0 in (0..sp).step_by(TILE) {
            let t1 = (t0 + TILE).min(sp);
            for o in 0..g.cout {
                let dst = &mut out.channel_mut(b, o)[t0..t1];
                for (r, &wv) in weight[o * rows..(o + 1) * rows].iter().enumerate() {
                    for (d, s) in dst.iter_mut().zip(&col[r * sp + t0..r * sp + t1]) {
                        *d += wv * s;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of a convolution with respect to its input and weights.
pub(crate) fn conv3d_backward(
    input: &Tensor5,
    weight: &[f64],
    wdims: [usize; 5],
    pad: [usize; 3],
    grad_out: &Tensor5,
    grad_w: &mut [f64],
    want_grad_input: bool,
) -> Result<Option<Tensor5>> {
    let g = ConvGeom::new(input.dims, wdims, pad)?;
    let n = input.dims[0];
    let rows = g.cin * g.taps();
    let sp = g.spatial_out();
    let mut col = vec![0.0; rows * sp];
    let mut gcol = want_grad_input.then(|| vec![0.0; rows * sp]);
    let mut grad_in = want_grad_input.then(|| Tensor5::zeros(input.dims));
    for b in 0..n {
        g.im2col(input, b, &mut col);
        for t0 in (0..sp).step_by(TILE) {
            let t1 = (t0 + TILE).min(sp);
            for o in 0..g.cout {
                let go = &grad_out.channel(b, o)[t0..t1];
                for r in 0..rows {
                    grad_w[o * rows + r] += dot4(go, &col[r * sp + t0..r * sp + t1]);
                }
            }
            if let Some(gc) = gcol.as_mut() {
                for r in 0..rows {
                    let dst = &mut gc[r * sp + t0..r * sp + t1];
                    let w0 = weight[r];
                    for (d, s) in dst.iter_mut().zip(&grad_out.channel(b, 0)[t0..t1]) {
                        *d = w0 * s;
                    }
                    for o in 1..g.cout {
                        let wv = weight[o * rows + r];
                        for (d, s) in dst.iter_mut().zip(&grad_out.channel(b, o)[t0..t1]) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
        if let (Some(gc), Some(gi)) = (gcol.as_ref(), grad_in.as_mut()) {
            g.col2im(gc, gi, b);
        }
    }
    Ok(grad_in)
}

/// Per-channel batch statistics of a normalisation layer.
#[derive(Debug, Clone)]
pub(crate) struct NormCache {
    pub xhat: Tensor5,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub(crate) const NORM_EPS: f64 = 1e-5;

/// Batch normalisation over `(n, d, h, w)` per channel using batch statistics.
pub(crate) fn batch_norm_train(x: &Tensor5, gamma: &[f64], beta: &[f64]) -> (Tensor5, NormCache) {
    let [n, c, ..] = x.dims;
    let m = (n * x.spatial()) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let s: f64 = (0..n).map(|b| x.channel(b, ch).iter().sum::<f64>()).sum();
        mean[ch] = s / m;
        let ss: f64 = (0..n)
            .map(|b| {
                x.channel(b, ch)
                    .iter()
                    .map(|v| (v - mean[ch]).powi(2))
                    .sum::<f64>()
            })
            .sum();
        var[ch] = ss / m;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
    let mut xhat = Tensor5::zeros(x.dims);
    let mut y = Tensor5::zeros(x.dims);
    for b in 0..n {
        for ch in 0..c {
            let src = x.channel(b, ch);
            let xh = xhat.channel_mut(b, ch);
            for (d, s) in xh.iter_mut().zip(src) {
                *d = (s - mean[ch]) * inv_std[ch];
            }
            let xh = xhat.channel(b, ch).to_vec();
            for (d, s) in y.channel_mut(b, ch).iter_mut().zip(&xh) {
                *d = gamma[ch] * s + beta[ch];
            }
        }
    }
    (
        y,
        NormCache {
            xhat,
            inv_std,
            mean,
            var,
        },
    )
}

/// Normalisation with fixed (running) statistics.
pub(crate) fn batch_norm_eval(
    x: &Tensor5,
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    var: &[f64],
) -> Tensor5 {
    let [n, c, ..] = x.dims;
    let mut y = Tensor5::zeros(x.dims);
    for b in 0..n {
        for ch in 0..c {
            let scale = gamma[ch] / (var[ch] + NORM_EPS).sqrt();
            let shift = beta[ch] - mean[ch] * scale;
            for (d, s) in y.channel_mut(b, ch).iter_mut().zip(x.channel(b, ch)) {
                *d = s * scale + shift;
            }
        }
    }
    y
}

pub(crate) fn batch_norm_backward(
    cache: &NormCache,
    gamma: &[f64],
    grad_out: &Tensor5,
    grad_gamma: &mut [f64],
    grad_beta: &mut [f64],
) -> Tensor5 {
    let [n, c, ..] = grad_out.dims;
    let m = (n * grad_out.spatial()) as f64;
    let mut grad_in = Tensor5::zeros(grad_out.dims);
    for ch in 0..c {
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for b in 0..n {
            for (g, xh) in grad_out
                .channel(b, ch)
                .iter()
                .zip(cache.xhat.channel(b, ch))
            {
                sum_g += g;
                sum_gx += g * xh;
            }
        }
        grad_beta[ch] += sum_g;
        grad_gamma[ch] += sum_gx;
        let k = gamma[ch] * cache.inv_std[ch] / m;
        for b in 0..n {
            let xh = cache.xhat.channel(b, ch).to_vec();
            let go = grad_out.channel(b, ch).to_vec();
            for ((d, g), x) in grad_in.channel_mut(b, ch).iter_mut().zip(&go).zip(&xh) {
                *d = k * (m * g - sum_g - x * sum_gx);
            }
        }
    }
    grad_in
}

pub(crate) fn relu(x: &mut Tensor5) {
    x.data.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Zeroes gradient entries where the activation output was not positive.
pub(crate) fn relu_backward(output: &Tensor5, grad: &mut Tensor5) {
    for (g, &y) in grad.data.iter_mut().zip(&output.data) {
        if y <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Pooling window per spatial axis: 2 where the axis has room, else 1.
pub(crate) fn pool_window(dims: [usize; 5]) -> [usize; 3] {
    [dims[2], dims[3], dims[4]].map(|n| if n >= 2 { 2 } else { 1 })
}

/// Non-overlapping average pooling; a trailing odd element is dropped.
pub(crate) fn avg_pool(x: &Tensor5) -> Tensor5 {
    let [n, c, d, h, w] = x.dims;
    let [pd, ph, pw] = pool_window(x.dims);
    let (od, oh, ow) = (d / pd, h / ph, w / pw);
    let mut out = Tensor5::zeros([n, c, od, oh, ow]);
    let scale = 1.0 / (pd * ph * pw) as f64;
    for b in 0..n {
        for ch in 0..c {
            let src = x.channel(b, ch);
            let dst = out.channel_mut(b, ch);
            for z in 0..od {
                for y in 0..oh {
                    for xo in 0..ow {
                        let mut s = 0.0;
                        for dz in 0..pd {
                            for dy in 0..ph {
                                let row = ((z * pd + dz) * h + y * ph + dy) * w + xo * pw;
                                s += src[row..row + pw].iter().sum::<f64>();
                            }
                        }
                        dst[(z * oh + y) * ow + xo] = s * scale;
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn avg_pool_backward(input_dims: [usize; 5], grad_out: &Tensor5) -> Tensor5 {
    let [n, c, _, h, w] = input_dims;
    let [pd, ph, pw] = pool_window(input_dims);
    let [_, _, od, oh, ow] = grad_out.dims;
    let mut grad_in = Tensor5::zeros(input_dims);
    let scale = 1.0 / (pd * ph * pw) as f64;
    for b in 0..n {
        for ch in 0..c {
            let go = grad_out.channel(b, ch).to_vec();
            let gi = grad_in.channel_mut(b, ch);
            for z in 0..od {
                for y in 0..oh {
                    for xo in 0..ow {
                        let g = go[(z * oh + y) * ow + xo] * scale;
                        for dz in 0..pd {
                            for dy in 0..ph {
                                let row = ((z * pd + dz) * h + y * ph + dy) * w + xo * pw;
                                gi[row..row + pw].iter_mut().for_each(|v| *v += g);
                            }
                        }
                    }
                }
            }
        }
    }
    grad_in
}

/// Mean over the spatial axes, giving an `n × c` matrix.
pub(crate) fn global_avg_pool(x: &Tensor5) -> Matrix {
    let [n, c, ..] = x.dims;
    let s = x.spatial() as f64;
    let mut out = Matrix::zeros(n, c);
    for b in 0..n {
        for ch in 0..c {
            out.set(b, ch, x.channel(b, ch).iter().sum::<f64>() / s);
        }
    }
    out
}

pub(crate) fn global_avg_pool_backward(dims: [usize; 5], grad: &Matrix) -> Tensor5 {
    let [n, c, ..] = dims;
    let mut out = Tensor5::zeros(dims);
    let s = out.spatial() as f64;
    for b in 0..n {
        for ch in 0..c {
            let g = grad.get(b, ch) / s;
            out.channel_mut(b, ch).iter_mut().for_each(|v| *v = g);
        }
    }
    out
}

/// `x·Wᵀ + b` with `W` stored `[out, in]`.
pub(crate) fn linear(x: &Matrix, w: &[f64], b: &[f64]) -> Matrix {
    let (n, din) = x.shape();
    let dout = b.len();
    let mut y = Matrix::zeros(n, dout);
    for i in 0..n {
        let xi = x.row(i);
        for (o, yo) in y.row_mut(i).iter_mut().enumerate() {
            *yo = b[o] + crate::matrix::dot(xi, &w[o * din..(o + 1) * din]);
        }
    }
    y
}

/// Accumulates weight and bias gradients and returns the input gradient.
pub(crate) fn linear_backward(
    x: &Matrix,
    w: &[f64],
    grad_y: &Matrix,
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) -> Matrix {
    let (n, din) = x.shape();
    let dout = grad_y.cols();
    let mut grad_x = Matrix::zeros(n, din);
    for i in 0..n {
        let xi = x.row(i);
        for o in 0..dout {
            let g = grad_y.get(i, o);
            grad_b[o] += g;
            let wrow = &w[o * din..(o + 1) * din];
            for (k, (gw, &xv)) in grad_w[o * din..(o + 1) * din]
                .iter_mut()
                .zip(xi)
                .enumerate()
            {
                *gw += g * xv;
                grad_x.row_mut(i)[k] += g * wrow[k];
            }
        }
    }
    grad_x
}

pub(crate) fn relu_matrix(x: &Matrix) -> Matrix {
    let data = x.as_slice().iter().map(|v| v.max(0.0)).collect();
    Matrix::from_vec(x.rows(), x.cols(), data).expect("same shape")
}

pub(crate) fn relu_matrix_backward(pre: &Matrix, grad: &mut Matrix) {
    for (g, &p) in grad.as_mut_slice().iter_mut().zip(pre.as_slice()) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
}

pub(crate) const NORM_FLOOR: f64 = 1e-12;

/// Row-wise L2 normalisation; returns the normalised rows and the norms.
pub(crate) fn l2_normalize(u: &Matrix) -> (Matrix, Vec<f64>) {
    let mut z = u.clone();
    let mut norms = Vec::with_capacity(u.rows());
    for i in 0..u.rows() {
        let nrm = crate::matrix::dot(u.row(i), u.row(i))
            .sqrt()
            .max(NORM_FLOOR);
        z.row_mut(i).iter_mut().for_each(|v| *v /= nrm);
        norms.push(nrm);
    }
    (z, norms)
}

pub(crate) fn l2_normalize_backward(z: &Matrix, norms: &[f64], grad_z: &Matrix) -> Matrix {
    let mut grad_u = Matrix::zeros(z.rows(), z.cols());
    for (i, &nrm) in norms.iter().enumerate().take(z.rows()) {
        let zi = z.row(i);
        let gi = grad_z.row(i);
        let proj = crate::matrix::dot(zi, gi);
        for ((d, &g), &zv) in grad_u.row_mut(i).iter_mut().zip(gi).zip(zi) {
            *d = (g - zv * proj) / nrm;
        }
    }
    grad_u
}

/// Row-wise softmax with max subtraction.
pub(crate) fn softmax(logits: &Matrix) -> Matrix {
    let mut p = logits.clone();
    for i in 0..p.rows() {
        let row = p.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    p
}

pub(crate) fn softmax_backward(p: &Matrix, grad_p: &Matrix) -> Matrix {
    let mut g = Matrix::zeros(p.rows(), p.cols());
    for i in 0..p.rows() {
        let pi = p.row(i);
        let gi = grad_p.row(i);
        let inner = crate::matrix::dot(pi, gi);
        for ((d, &pv), &gv) in g.row_mut(i).iter_mut().zip(pi).zip(gi) {
            *d = pv * (gv - inner);
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct seven-loop convolution, independent of the row-sliced kernel.
    fn conv_naive(x: &Tensor5, k: &Kernel3d, pad: [usize; 3]) -> Tensor5 {
        let [n, ci, d, h, w] = x.dims;
        let [co, _, kd, kh, kw] = k.dims;
        let od = d + 2 * pad[0] + 1 - kd;
        let oh = h + 2 * pad[1] + 1 - kh;
        let ow = w + 2 * pad[2] + 1 - kw;
        let mut out = Tensor5::zeros([n, co, od, oh, ow]);
        for b in 0..n {
            for o in 0..co {
                for z in 0..od {
                    for y in 0..oh {
                        for xx in 0..ow {
                            let mut s = 0.0;
                            for i in 0..ci {
                                for t in 0..kd {
                                    for u in 0..kh {
                                        for v in 0..kw {
                                            let iz = z as isize + t as isize - pad[0] as isize;
                                            let iy = y as isize + u as isize - pad[1] as isize;
                                            let ix = xx as isize + v as isize - pad[2] as isize;
                                            if iz < 0
                                                || iy < 0
                                                || ix < 0
                                                || iz >= d as isize
                                                || iy >= h as isize
                                                || ix >= w as isize
                                            {
                                                continue;
                                            }
                                            s += k.get(o, i, t, u, v)
                                                * x.channel(b, i)[((iz as usize) * h
                                                    + iy as usize)
                                                    * w
                                                    + ix as usize];
                                        }
                                    }
                                }
                            }
                            out.channel_mut(b, o)[(z * oh + y) * ow + xx] = s;
                        }
                    }
                }
            }
        }
        out
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        (0..n)
            .map(|i| (((i as u64 + 1) * 2654435761 + seed * 97) % 1000) as f64 / 500.0 - 1.0)
            .collect()
    }

    #[test]
    fn conv_matches_naive_with_and_without_padding() {
        let x = Tensor5::from_vec([2, 2, 4, 5, 3], pseudo(240, 1)).unwrap();
        let k = Kernel3d::from_vec([3, 2, 3, 3, 2], pseudo(108, 2)).unwrap();
        for pad in [[0, 0, 0], [1, 1, 1], [1, 2, 0]] {
            let a = conv3d(&x, &k, pad).unwrap();
            let b = conv_naive(&x, &k, pad);
            assert_eq!(a.dims, b.dims);
            for (u, v) in a.data.iter().zip(&b.data) {
                assert!((u - v).abs() < 1e-12);
            }
        }
        assert!(conv3d(
            &x,
            &Kernel3d::from_vec([1, 2, 5, 1, 1], vec![0.0; 10]).unwrap(),
            [0; 3]
        )
        .is_err());
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x), g> is bilinear, so its gradients must satisfy
        // <grad_x, x> = <grad_w, w> = <conv(x), g>.
        let x = Tensor5::from_vec([2, 2, 3, 4, 4], pseudo(192, 3)).unwrap();
        let wdims = [3, 2, 3, 3, 3];
        let w = pseudo(162, 4);
        let y = conv3d_raw(&x, &w, wdims, [1, 1, 1]).unwrap();
        let g = Tensor5::from_vec(y.dims, pseudo(y.data.len(), 5)).unwrap();
        let inner: f64 = y.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
        let mut gw = vec![0.0; w.len()];
        let gx = conv3d_backward(&x, &w, wdims, [1, 1, 1], &g, &mut gw, true)
            .unwrap()
            .unwrap();
        let via_x: f64 = gx.data.iter().zip(&x.data).map(|(a, b)| a * b).sum();
        let via_w: f64 = gw.iter().zip(&w).map(|(a, b)| a * b).sum();
        assert!((via_x - inner).abs() < 1e-9);
        assert!((via_w - inner).abs() < 1e-9);
    }

    #[test]
    fn pooling_handles_unit_and_odd_axes() {
        let x = Tensor5::from_vec([1, 1, 1, 3, 4], (0..12).map(|v| v as f64).collect()).unwrap();
        let p = avg_pool(&x);
        assert_eq!(p.dims, [1, 1, 1, 1, 2]);
        assert_eq!(
            p.data,
            vec![(0.0 + 1.0 + 4.0 + 5.0) / 4.0, (2.0 + 3.0 + 6.0 + 7.0) / 4.0]
        );
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let l = Matrix::from_rows(&[[1000.0, 0.0, -5.0], [0.1, 0.2, 0.3]]).unwrap();
        let p = softmax(&l);
        for r in p.iter_rows() {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(r.iter().all(|&v| v >= 0.0));
        }
    }
}
