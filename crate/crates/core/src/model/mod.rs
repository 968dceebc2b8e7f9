//! Encoder `E`, projection head `P` and classifier `C` behind one model.
//!
//! `r = E(x)`, `z = normalize(P(r))` with `P` a two-layer perceptron, and
//! `ŷ = softmax(C(r))`. The mixup branch runs the same weights on the
//! mixed views and only produces class probabilities.

mod checkpoint;
mod inflate;
mod layers;
mod params;
mod tiny3d;


use std::any::Any;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{joint_loss_grad, LossBreakdown, LossGrads, LossWeights};
use crate::matrix::Matrix;
use crate::volume::{Shape3, Volume};

pub use checkpoint::{
    checkpoint_from_bytes, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT_VERSION,
    CHECKPOINT_MAGIC,
};
pub use inflate::{inflate_2d_kernel, Kernel2d};
pub use layers::{conv3d, Kernel3d, Tensor5};
pub use params::{Param, ParamId, ParamStore};
pub use tiny3d::Tiny3d;

/// Momentum of the running normalisation statistics.
pub const RUNNING_STAT_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; caches kept for backward.
    Train,
    /// Running statistics; deterministic per sample.
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Tiny3d,
    /// Supplied through [`Model::with_encoder`].
    Pluggable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSpec {
    pub name: EncoderKind,
    pub embedding_dim: usize,
    pub input_shape: Shape3,
    /// Channel width of the first tiny3d stage.
    #[serde(default = "default_base_width")]
    pub base_width: usize,
}

fn default_base_width() -> usize {
    4
}

impl EncoderSpec {
    pub fn tiny3d(input_shape: Shape3, embedding_dim: usize) -> Self {
        EncoderSpec {
            name: EncoderKind::Tiny3d,
            embedding_dim,
            input_shape,
            base_width: default_base_width(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim < 1 {
            return Err(Error::Config("embedding_dim must be at least 1".into()));
        }
        if self.base_width < 1 {
            return Err(Error::Config("base_width must be at least 1".into()));
        }
        self.input_shape.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    pub projection_dim: usize,
    pub num_classes: usize,
}

impl HeadSpec {
    pub fn validate(&self) -> Result<()> {
        if self.projection_dim < 1 {
            return Err(Error::Config("projection_dim must be at least 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        Ok(())
    }
}

pub type EncoderCache = Box<dyn Any + Send + Sync>;

/// A volumetric backbone mapping `[n, 1, d, h, w]` inputs to `n × d_e`
/// representations. Implementations register their tensors in the model's
/// [`ParamStore`] when constructed.
pub trait Encoder: fmt::Debug + Send + Sync {
    fn spec(&self) -> &EncoderSpec;

    fn forward(
        &self,
        params: &ParamStore,
        input: &Tensor5,
        mode: Mode,
    ) -> Result<(Matrix, EncoderCache)>;

    /// Accumulates parameter gradients given `dL/dr`.
    fn backward(
        &self,
        params: &ParamStore,
        cache: &EncoderCache,
        grad_r: &Matrix,
        grads: &mut [Vec<f64>],
    ) -> Result<()>;

    fn commit_running_stats(
        &self,
        _params: &mut ParamStore,
        _cache: &EncoderCache,
        _momentum: f64,
    ) {
    }
}

/// Model outputs for one training step.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutputs {
    pub r: Matrix,
    /// Unit-norm projections.
    pub z: Matrix,
    pub y_hat: Matrix,
    /// Class probabilities on the mixed views.
    pub y_hat_mix: Matrix,
}

struct BranchCache {
    encoder: EncoderCache,
    r: Matrix,
    head: Option<ProjectionCache>,
    probs: Matrix,
}

struct ProjectionCache {
    pre: Matrix,
    hidden: Matrix,
    z: Matrix,
    norms: Vec<f64>,
}

/// Outputs plus everything backward needs.
pub struct ForwardPass {
    pub outputs: BatchOutputs,
    raw: BranchCache,
    mixed: Option<BranchCache>,
}

#[derive(Debug, Clone, Copy)]
struct HeadIds {
    fc1_w: ParamId,
    fc1_b: ParamId,
    fc2_w: ParamId,
    fc2_b: ParamId,
    clf_w: ParamId,
    clf_b: ParamId,
}

#[derive(Debug)]
pub struct Model {
    encoder: Box<dyn Encoder>,
    head: HeadSpec,
    params: ParamStore,
    ids: HeadIds,
}

fn normal_init(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    let d = Normal::new(0.0, std).expect("valid std");
    (0..n).map(|_| d.sample(rng)).collect()
}

impl Model {
    /// Builds the reference encoder and heads, initialised from `seed`.
    pub fn new(encoder: EncoderSpec, head: HeadSpec, seed: u64) -> Result<Self> {
        match encoder.name {
            EncoderKind::Tiny3d => Model::with_encoder(
                |params, rng| Ok(Box::new(Tiny3d::new(encoder, params, rng)?) as Box<dyn Encoder>),
                head,
                seed,
            ),
            EncoderKind::Pluggable => Err(Error::Config(
                "pluggable encoders are supplied through Model::with_encoder".into(),
            )),
        }
    }

    pub fn with_encoder<F>(build: F, head: HeadSpec, seed: u64) -> Result<Self>
    where
        F: FnOnce(&mut ParamStore, &mut ChaCha8Rng) -> Result<Box<dyn Encoder>>,
    {
        head.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let encoder = build(&mut params, &mut rng)?;
        encoder.spec().validate()?;
        let de = encoder.spec().embedding_dim;
        let (dp, k) = (head.projection_dim, head.num_classes);
        let fc1_w = params.register(
            "projection.fc1.weight",
            &[de, de],
            normal_init(&mut rng, de * de, (2.0 / de as f64).sqrt()),
            true,
        );
        let fc1_b = params.register("projection.fc1.bias", &[de], vec![0.0; de], true);
        let fc2_w = params.register(
            "projection.fc2.weight",
            &[dp, de],
            normal_init(&mut rng, dp * de, (1.0 / de as f64).sqrt()),
            true,
        );
        let fc2_b = params.register("projection.fc2.bias", &[dp], vec![0.0; dp], true);
        let clf_w = params.register(
            "classifier.weight",
            &[k, de],
            normal_init(&mut rng, k * de, (1.0 / de as f64).sqrt()),
            true,
        );
        let clf_b = params.register("classifier.bias", &[k], vec![0.0; k], true);
        Ok(Model {
            encoder,
            head,
            params,
            ids: HeadIds {
                fc1_w,
                fc1_b,
                fc2_w,
                fc2_b,
                clf_w,
                clf_b,
            },
        })
    }

    pub fn encoder_spec(&self) -> &EncoderSpec {
        self.encoder.spec()
    }

    pub fn head_spec(&self) -> &HeadSpec {
        &self.head
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn input_shape(&self) -> Shape3 {
        self.encoder.spec().input_shape
    }

    fn to_tensor(&self, views: &[Volume]) -> Result<Tensor5> {
        let shape = self.input_shape();
        let mut data = Vec::with_capacity(views.len() * shape.len());
        for v in views {
            if v.shape() != shape {
                return Err(Error::Shape(format!(
                    "view {} has shape {}, model expects {shape}",
                    v.scan_id(),
                    v.shape()
                )));
            }
            data.extend(v.data().iter().map(|&x| x as f64));
        }
        Tensor5::from_vec([views.len(), 1, shape.d, shape.h, shape.w], data)
    }

    fn branch(&self, views: &[Volume], mode: Mode, project: bool) -> Result<BranchCache> {
        let x = self.to_tensor(views)?;
        let (r, encoder) = self.encoder.forward(&self.params, &x, mode)?;
        let p = &self.params;
        let head = project.then(|| {
            let pre = layers::linear(&r, p.get(self.ids.fc1_w), p.get(self.ids.fc1_b));
            let hidden = layers::relu_matrix(&pre);
            let u = layers::linear(&hidden, p.get(self.ids.fc2_w), p.get(self.ids.fc2_b));
            let (z, norms) = layers::l2_normalize(&u);
            ProjectionCache {
                pre,
                hidden,
                z,
                norms,
            }
        });
        let logits = layers::linear(&r, p.get(self.ids.clf_w), p.get(self.ids.clf_b));
        Ok(BranchCache {
            encoder,
            r,
            head,
            probs: layers::softmax(&logits),
        })
    }

    /// Runs the raw views through all heads and the mixed views through the
    /// classifier. `mixed` may be empty.
    pub fn forward(&self, views: &[Volume], mixed: &[Volume], mode: Mode) -> Result<ForwardPass> {
        if views.is_empty() {
            return Err(Error::Input("forward on an empty batch".into()));
        }
        let raw = self.branch(views, mode, true)?;
        let mixed = if mixed.is_empty() {
            None
        } else {
            Some(self.branch(mixed, mode, false)?)
        };
        let k = self.head.num_classes;
        let outputs = BatchOutputs {
            r: raw.r.clone(),
            z: raw.head.as_ref().expect("raw branch projects").z.clone(),
            y_hat: raw.probs.clone(),
            y_hat_mix: mixed
                .as_ref()
                .map_or_else(|| Matrix::zeros(0, k), |m| m.probs.clone()),
        };
        Ok(ForwardPass {
            outputs,
            raw,
            mixed,
        })
    }

    /// Class probabilities in eval mode.
    pub fn predict_proba(&self, views: &[Volume]) -> Result<Matrix> {
        if views.is_empty() {
            return Ok(Matrix::zeros(0, self.head.num_classes));
        }
        Ok(self.branch(views, Mode::Eval, false)?.probs)
    }

    fn backward_branch(
        &self,
        cache: &BranchCache,
        grad_z: Option<&Matrix>,
        grad_p: &Matrix,
        grads: &mut [Vec<f64>],
    ) -> Result<()> {
        if grad_p.shape() != cache.probs.shape() {
            return Err(Error::Shape(format!(
                "probability gradient {:?} for outputs {:?}",
                grad_p.shape(),
                cache.probs.shape()
            )));
        }
        let (ids, p) = (self.ids, &self.params);
        let glogits = layers::softmax_backward(&cache.probs, grad_p);
        let (gw, gb) = pair_mut(grads, ids.clf_w.index(), ids.clf_b.index());
        let mut grad_r = layers::linear_backward(&cache.r, p.get(ids.clf_w), &glogits, gw, gb);

        if let (Some(gz), Some(h)) = (grad_z, cache.head.as_ref()) {
            if gz.shape() != h.z.shape() {
                return Err(Error::Shape(format!(
                    "projection gradient {:?} for outputs {:?}",
                    gz.shape(),
                    h.z.shape()
                )));
            }
            let gu = layers::l2_normalize_backward(&h.z, &h.norms, gz);
            let (gw, gb) = pair_mut(grads, ids.fc2_w.index(), ids.fc2_b.index());
            let mut gh = layers::linear_backward(&h.hidden, p.get(ids.fc2_w), &gu, gw, gb);
            layers::relu_matrix_backward(&h.pre, &mut gh);
            let (gw, gb) = pair_mut(grads, ids.fc1_w.index(), ids.fc1_b.index());
            let gr = layers::linear_backward(&cache.r, p.get(ids.fc1_w), &gh, gw, gb);
            for (a, b) in grad_r.as_mut_slice().iter_mut().zip(gr.as_slice()) {
                *a += b;
            }
        }
        self.encoder.backward(p, &cache.encoder, &grad_r, grads)
    }

    /// Accumulates parameter gradients of a train-mode pass given the loss
    /// gradients with respect to its outputs.
    pub fn backward(&mut self, pass: &ForwardPass, grads: &LossGrads) -> Result<()> {
        let mut acc = std::mem::take(self.params.grads_mut());
        let mut run = || -> Result<()> {
            self.backward_branch(&pass.raw, Some(&grads.z), &grads.y_hat, &mut acc)?;
            match &pass.mixed {
                Some(m) => self.backward_branch(m, None, &grads.y_hat_mix, &mut acc),
                None if grads.y_hat_mix.rows() == 0 => Ok(()),
                None => Err(Error::Shape("mixup gradient without a mixup branch".into())),
            }
        };
        let res = run();
        *self.params.grads_mut() = acc;
        res
    }

    /// Folds the raw branch's batch statistics into the running statistics.
    pub fn commit_running_stats(&mut self, pass: &ForwardPass) {
        self.encoder.commit_running_stats(
            &mut self.params,
            &pass.raw.encoder,
            RUNNING_STAT_MOMENTUM,
        );
    }

    /// One forward/backward pass: clears gradients, evaluates the joint loss
    /// in train mode, accumulates gradients and updates running statistics.
    /// Non-finite outputs yield [`Error::Numerical`] with step 0 and NaN losses.
    pub fn train_step(
        &mut self,
        views: &[Volume],
        mixed: &[Volume],
        labels: &[usize],
        mixed_labels: &Matrix,
        weights: &LossWeights,
    ) -> Result<(LossBreakdown, BatchOutputs)> {
        self.params.zero_grad();
        let pass = self.forward(views, mixed, Mode::Train)?;
        let o = &pass.outputs;
        if !(o.z.is_finite() && o.y_hat.is_finite() && o.y_hat_mix.is_finite()) {
            return Err(Error::Numerical {
                step: 0,
                l_con: f64::NAN,
                l_mix: f64::NAN,
                l_clf: f64::NAN,
                total: f64::NAN,
            });
        }
        let (loss, grads) = joint_loss_grad(&pass.outputs, labels, mixed_labels, weights)?;
        self.backward(&pass, &grads)?;
        self.commit_running_stats(&pass);
        Ok((loss, pass.outputs))
    }

    /// Overwrites a 5D convolution weight with the inflation of a 2D kernel
    /// whose channel counts and spatial extent match.
    pub fn load_inflated_kernel(&mut self, name: &str, kernel: &Kernel2d) -> Result<()> {
        let param = self
            .params
            .by_name_mut(name)
            .ok_or_else(|| Error::Config(format!("no parameter named {name}")))?;
        let &[co, ci, d, kh, kw] = param.shape.as_slice() else {
            return Err(Error::Shape(format!(
                "{name} is not a 3D convolution weight"
            )));
        };
        if kernel.dims != [co, ci, kh, kw] {
            return Err(Error::Shape(format!(
                "2D kernel {:?} does not match {name} {:?}",
                kernel.dims, param.shape
            )));
        }
        param.value = inflate_2d_kernel(kernel, d)?.data;
        Ok(())
    }
}

fn pair_mut(v: &mut [Vec<f64>], a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    assert!(a < b);
    let (lo, hi) = v.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}
