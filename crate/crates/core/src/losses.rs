//! Supervised contrastive, mixup and classification losses with analytic
//! gradients, and their weighted combination.
//!
//! All losses are batch means. Gradients are taken with respect to the
//! loss inputs (projections `z` and class probabilities), treating every
//! entry as a free variable; the model backpropagates them from there.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::model::BatchOutputs;

/// Lower clamp applied to probabilities inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

const UNIT_NORM_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// Contrastive weight.
    pub w1: f64,
    /// Mixup weight.
    pub w2: f64,
    /// Classification weight.
    pub w3: f64,
    pub temperature: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w1: 1.0,
            w2: 1.0,
            w3: 1.0,
            temperature: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        check_tau(self.temperature)?;
        for (name, w) in [("w1", self.w1), ("w2", self.w2), ("w3", self.w3)] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::Config(format!(
                    "{name} must be a finite value >= 0, got {w}"
                )));
            }
        }
        if self.w1 == 0.0 && self.w2 == 0.0 && self.w3 == 0.0 {
            return Err(Error::Config(
                "at least one loss weight must be non-zero".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_con: f64,
    pub l_mix: f64,
    pub l_clf: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.l_con.is_finite()
            && self.l_mix.is_finite()
            && self.l_clf.is_finite()
            && self.total.is_finite()
    }
}

/// Gradients of the joint loss with respect to the model outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrads {
    pub z: Matrix,
    pub y_hat: Matrix,
    pub y_hat_mix: Matrix,
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Config(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    Ok(())
}

fn check_embeddings(z: &Matrix, labels: &[usize], tau: f64) -> Result<()> {
    check_tau(tau)?;
    if z.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} embeddings for {} labels",
            z.rows(),
            labels.len()
        )));
    }
    if z.rows() < 2 {
        return Err(Error::Input(format!(
            "contrastive loss needs at least 2 views, got {}",
            z.rows()
        )));
    }
    for (i, row) in z.iter_rows().enumerate() {
        let norm = dot(row, row).sqrt();
        if !((norm - 1.0).abs() <= UNIT_NORM_TOL) {
            return Err(Error::Input(format!(
                "embedding row {i} has norm {norm}, expected unit norm"
            )));
        }
    }
    Ok(())
}

/// Supervised contrastive loss. Positives of anchor `i` are the other views
/// carrying its label; the denominator runs over every view except `i`.
/// Anchors without positives are left out of the mean.
pub fn supcon_loss(z: &Matrix, labels: &[usize], tau: f64) -> Result<f64> {
    supcon_forward(z, labels, tau, false).map(|(l, _)| l)
}

/// `supcon_loss` together with its gradient with respect to `z`.
pub fn supcon_loss_grad(z: &Matrix, labels: &[usize], tau: f64) -> Result<(f64, Matrix)> {
    supcon_forward(z, labels, tau, true).map(|(l, g)| (l, g.expect("gradient requested")))
}

fn supcon_forward(
    z: &Matrix,
    labels: &[usize],
    tau: f64,
    want_grad: bool,
) -> Result<(f64, Option<Matrix>)> {
    check_embeddings(z, labels, tau)?;
    let n = z.rows();

    // Scaled similarity logits.
    let mut logits = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let s = dot(z.row(i), z.row(j)) / tau;
            logits.set(i, j, s);
            logits.set(j, i, s);
        }
    }

    let anchors: Vec<usize> = (0..n)
        .filter(|&i| (0..n).any(|j| j != i && labels[j] == labels[i]))
        .collect();
    if anchors.is_empty() {
        return Ok((0.0, want_grad.then(|| Matrix::zeros(n, z.cols()))));
    }
    let m = anchors.len() as f64;

    let mut total = 0.0;
    // coef[i][k] = dL/d logit_ik
    let mut coef = want_grad.then(|| Matrix::zeros(n, n));
    for &i in &anchors {
        let row = logits.row(i);
        let max = (0..n)
            .filter(|&k| k != i)
            .map(|k| row[k])
            .fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = (0..n)
            .filter(|&k| k != i)
            .map(|k| (row[k] - max).exp())
            .sum();
        let lse = max + sum_exp.ln();

        let positives: Vec<usize> = (0..n)
            .filter(|&j| j != i && labels[j] == labels[i])
            .collect();
        let p = positives.len() as f64;
        let mean_pos = positives.iter().map(|&j| row[j]).sum::<f64>() / p;
        total += lse - mean_pos;

        if let Some(c) = coef.as_mut() {
            for k in (0..n).filter(|&k| k != i) {
                let q = (row[k] - max).exp() / sum_exp;
                let target = if labels[k] == labels[i] { 1.0 / p } else { 0.0 };
                c.set(i, k, (q - target) / m);
            }
        }
    }
    let loss = total / m;

    let grad = coef.map(|c| {
        let mut g = Matrix::zeros(n, z.cols());
        for i in 0..n {
            for k in 0..n {
                let a = c.get(i, k) / tau;
                if a == 0.0 {
                    continue;
                }
                // logit_ik = z_i·z_k / τ
                for (gi, zk) in g.row_mut(i).iter_mut().zip(z.row(k)) {
                    *gi += a * zk;
                }
                for (gk, zi) in g.row_mut(k).iter_mut().zip(z.row(i)) {
                    *gk += a * zi;
                }
            }
        }
        g
    });
    Ok((loss, grad))
}

/// Literal transcription of the contrastive loss as a double loop, with no
/// stabilisation. Test oracle for [`supcon_loss`].
pub fn supcon_loss_bruteforce(z: &Matrix, labels: &[usize], tau: f64) -> Result<f64> {
    check_embeddings(z, labels, tau)?;
    let n = z.rows();
    let mut sum = 0.0;
    let mut anchors = 0usize;
    for i in 0..n {
        // 2·N_y: views in the batch sharing the anchor's label.
        let same_label = (0..n).filter(|&j| labels[j] == labels[i]).count();
        if same_label < 2 {
            continue;
        }
        let mut denom = 0.0;
        for k in 0..n {
            if k != i {
                let mut s = 0.0;
                for c in 0..z.cols() {
                    s += z.get(i, c) * z.get(k, c);
                }
                denom += (s / tau).exp();
            }
        }
        let mut inner = 0.0;
        for j in 0..n {
            if j != i && labels[j] == labels[i] {
                let mut s = 0.0;
                for c in 0..z.cols() {
                    s += z.get(i, c) * z.get(j, c);
                }
                inner += ((s / tau).exp() / denom).ln();
            }
        }
        sum += -inner / (same_label as f64 - 1.0);
        anchors += 1;
    }
    Ok(if anchors == 0 {
        0.0
    } else {
        sum / anchors as f64
    })
}

fn check_same_shape(a: &Matrix, b: &Matrix, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

#[inline]
fn clamped_log(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0).ln()
}

#[inline]
fn clamped_log_grad(p: f64) -> f64 {
    if p > PROB_FLOOR && p < 1.0 {
        1.0 / p
    } else {
        0.0
    }
}

/// Mean soft-label cross-entropy `−Σ_c y[c]·ln ŷ[c]` over rows.
pub fn mixup_loss(y_hat_mix: &Matrix, mixed_labels: &Matrix) -> Result<f64> {
    mixup_loss_grad(y_hat_mix, mixed_labels).map(|(l, _)| l)
}

pub fn mixup_loss_grad(y_hat_mix: &Matrix, mixed_labels: &Matrix) -> Result<(f64, Matrix)> {
    check_same_shape(y_hat_mix, mixed_labels, "mixup predictions vs labels")?;
    let n = y_hat_mix.rows();
    if n == 0 {
        return Err(Error::Shape("mixup loss of an empty batch".into()));
    }
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(n, y_hat_mix.cols());
    for i in 0..n {
        for (c, (&p, &y)) in y_hat_mix.row(i).iter().zip(mixed_labels.row(i)).enumerate() {
            loss -= y * clamped_log(p);
            grad.set(i, c, -y * clamped_log_grad(p) / n as f64);
        }
    }
    Ok((loss / n as f64, grad))
}

/// Mean `−ln ŷ_i[y_i]` over rows.
pub fn clf_loss(y_hat: &Matrix, labels: &[usize]) -> Result<f64> {
    clf_loss_grad(y_hat, labels).map(|(l, _)| l)
}

pub fn clf_loss_grad(y_hat: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let n = y_hat.rows();
    if n != labels.len() || n == 0 {
        return Err(Error::Shape(format!(
            "{n} prediction rows for {} labels",
            labels.len()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= y_hat.cols()) {
        return Err(Error::Input(format!(
            "label {l} out of range for {} classes",
            y_hat.cols()
        )));
    }
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(n, y_hat.cols());
    for (i, &l) in labels.iter().enumerate() {
        let p = y_hat.get(i, l);
        loss -= clamped_log(p);
        grad.set(i, l, -clamped_log_grad(p) / n as f64);
    }
    Ok((loss / n as f64, grad))
}

/// `w1·l_con + w2·l_mix + w3·l_clf`.
pub fn joint_loss(
    outputs: &BatchOutputs,
    labels: &[usize],
    mixed_labels: &Matrix,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    weights.validate()?;
    let l_con = supcon_loss(&outputs.z, labels, weights.temperature)?;
    let l_mix = mixup_loss(&outputs.y_hat_mix, mixed_labels)?;
    let l_clf = clf_loss(&outputs.y_hat, labels)?;
    Ok(combine(l_con, l_mix, l_clf, weights))
}

fn combine(l_con: f64, l_mix: f64, l_clf: f64, w: &LossWeights) -> LossBreakdown {
    LossBreakdown {
        l_con,
        l_mix,
        l_clf,
        total: w.w1 * l_con + w.w2 * l_mix + w.w3 * l_clf,
    }
}

/// [`joint_loss`] plus gradients with respect to `z`, `y_hat` and
/// `y_hat_mix`. Components with zero weight get an all-zero gradient.
pub fn joint_loss_grad(
    outputs: &BatchOutputs,
    labels: &[usize],
    mixed_labels: &Matrix,
    weights: &LossWeights,
) -> Result<(LossBreakdown, LossGrads)> {
    weights.validate()?;
    let (l_con, mut gz) = supcon_loss_grad(&outputs.z, labels, weights.temperature)?;
    let (l_mix, mut gmix) = mixup_loss_grad(&outputs.y_hat_mix, mixed_labels)?;
    let (l_clf, mut gclf) = clf_loss_grad(&outputs.y_hat, labels)?;
    for (g, w) in [
        (&mut gz, weights.w1),
        (&mut gmix, weights.w2),
        (&mut gclf, weights.w3),
    ] {
        g.as_mut_slice().iter_mut().for_each(|v| *v *= w);
    }
    Ok((
        combine(l_con, l_mix, l_clf, weights),
        LossGrads {
            z: gz,
            y_hat: gclf,
            y_hat_mix: gmix,
        },
    ))
}
