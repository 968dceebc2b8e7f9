//! Small reference encoder: four stages of 3×3×3 convolution, batch
//! normalisation, ReLU and 2× average pooling, then global average pooling.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::layers::{self, NormCache, Tensor5};
use super::params::{ParamId, ParamStore};
use super::{Encoder, EncoderCache, EncoderSpec, Mode};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

const KERNEL: usize = 3;
const PAD: [usize; 3] = [1, 1, 1];

#[derive(Debug, Clone, Copy)]
struct Stage {
    conv: ParamId,
    gamma: ParamId,
    beta: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
    cin: usize,
    cout: usize,
}

#[derive(Debug)]
pub struct Tiny3d {
    spec: EncoderSpec,
    stages: Vec<Stage>,
}

struct StageCache {
    input: Tensor5,
    norm: Option<NormCache>,
    activated: Tensor5,
}

struct Tiny3dCache {
    stages: Vec<StageCache>,
    last_dims: [usize; 5],
}

impl Tiny3d {
    /// Channel widths of the four stages; the last equals the embedding size.
    pub fn widths(spec: &EncoderSpec) -> [usize; 4] {
        let b = spec.base_width;
        [b, 2 * b, 4 * b, spec.embedding_dim]
    }

    pub fn new(spec: EncoderSpec, params: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        let mut cin = 1;
        let mut stages = Vec::with_capacity(4);
        for (s, &cout) in Tiny3d::widths(&spec).iter().enumerate() {
            let fan_in = cin * KERNEL.pow(3);
            let he = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
            let w: Vec<f64> = (0..cout * fan_in).map(|_| he.sample(rng)).collect();
            let p = format!("encoder.stage{s}");
            stages.push(Stage {
                conv: params.register(
                    format!("{p}.conv.weight"),
                    &[cout, cin, KERNEL, KERNEL, KERNEL],
                    w,
                    true,
                ),
                gamma: params.register(format!("{p}.norm.weight"), &[cout], vec![1.0; cout], true),
                beta: params.register(format!("{p}.norm.bias"), &[cout], vec![0.0; cout], true),
                running_mean: params.register(
                    format!("{p}.norm.running_mean"),
                    &[cout],
                    vec![0.0; cout],
                    false,
                ),
                running_var: params.register(
                    format!("{p}.norm.running_var"),
                    &[cout],
                    vec![1.0; cout],
                    false,
                ),
                cin,
                cout,
            });
            cin = cout;
        }
        Ok(Tiny3d { spec, stages })
    }

    fn wdims(s: &Stage) -> [usize; 5] {
        [s.cout, s.cin, KERNEL, KERNEL, KERNEL]
    }
}

impl Encoder for Tiny3d {
    fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    fn forward(
        &self,
        params: &ParamStore,
        input: &Tensor5,
        mode: Mode,
    ) -> Result<(Matrix, EncoderCache)> {
        let mut x = input.clone();
        let mut caches = Vec::with_capacity(self.stages.len());
        for s in &self.stages {
            let conv = layers::conv3d_raw(&x, params.get(s.conv), Tiny3d::wdims(s), PAD)?;
            let (mut y, norm) = match mode {
                Mode::Train => {
                    let (y, c) =
                        layers::batch_norm_train(&conv, params.get(s.gamma), params.get(s.beta));
                    (y, Some(c))
                }
                Mode::Eval => (
                    layers::batch_norm_eval(
                        &conv,
                        params.get(s.gamma),
                        params.get(s.beta),
                        params.get(s.running_mean),
                        params.get(s.running_var),
                    ),
                    None,
                ),
            };
            layers::relu(&mut y);
            let pooled = layers::avg_pool(&y);
            caches.push(StageCache {
                input: x,
                norm,
                activated: y,
            });
            x = pooled;
        }
        let r = layers::global_avg_pool(&x);
        let cache = Tiny3dCache {
            stages: caches,
            last_dims: x.dims,
        };
        Ok((r, Box::new(cache)))
    }

    fn backward(
        &self,
        params: &ParamStore,
        cache: &EncoderCache,
        grad_r: &Matrix,
        grads: &mut [Vec<f64>],
    ) -> Result<()> {
        let cache = cache
            .downcast_ref::<Tiny3dCache>()
            .ok_or_else(|| Error::State("cache was not produced by tiny3d".into()))?;
        let mut g = layers::global_avg_pool_backward(cache.last_dims, grad_r);
        for (i, (s, c)) in self.stages.iter().zip(&cache.stages).enumerate().rev() {
            let mut gy = layers::avg_pool_backward(c.activated.dims, &g);
            layers::relu_backward(&c.activated, &mut gy);
            let norm = c
                .norm
                .as_ref()
                .ok_or_else(|| Error::State("backward through an eval-mode pass".into()))?;
            let (gg, gb) = two_mut(grads, s.gamma.index(), s.beta.index());
            let gconv = layers::batch_norm_backward(norm, params.get(s.gamma), &gy, gg, gb);
            let gx = layers::conv3d_backward(
                &c.input,
                params.get(s.conv),
                Tiny3d::wdims(s),
                PAD,
                &gconv,
                &mut grads[s.conv.index()],
                i > 0,
            )?;
            if let Some(gx) = gx {
                g = gx;
            }
        }
        Ok(())
    }

    fn commit_running_stats(&self, params: &mut ParamStore, cache: &EncoderCache, momentum: f64) {
        let Some(cache) = cache.downcast_ref::<Tiny3dCache>() else {
            return;
        };
        for (s, c) in self.stages.iter().zip(&cache.stages) {
            let Some(norm) = &c.norm else { continue };
            let dims = c.activated.dims;
            let m = (dims[0] * dims[2] * dims[3] * dims[4]) as f64;
            let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
            for (r, &b) in params.get_mut(s.running_mean).iter_mut().zip(&norm.mean) {
                *r = (1.0 - momentum) * *r + momentum * b;
            }
            for (r, &b) in params.get_mut(s.running_var).iter_mut().zip(&norm.var) {
                *r = (1.0 - momentum) * *r + momentum * b * unbias;
            }
        }
    }
}

fn two_mut(v: &mut [Vec<f64>], a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    assert!(a < b);
    let (lo, hi) = v.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}
