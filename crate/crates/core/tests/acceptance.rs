//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use cmc3d::augment::{make_mixup, mix_with, AugmentPolicy, AugmentedBatch, MixupGranularity};
use cmc3d::losses::{
    clf_loss, clf_loss_grad, joint_loss, joint_loss_grad, mixup_loss, mixup_loss_grad, supcon_loss,
    supcon_loss_bruteforce, supcon_loss_grad, LossWeights,
};
use cmc3d::model::{
    checkpoint_from_bytes, conv3d, inflate_2d_kernel, load_checkpoint, save_checkpoint,
    BatchOutputs, EncoderSpec, HeadSpec, Kernel2d, Model, Tensor5,
};
use cmc3d::train::{evaluate, lr_at, macro_f1, train, ModelConfig, TrainConfig};
use cmc3d::volume::{
    generate_synthetic_dataset, load_volume, resample, save_volume, write_synthetic_dataset,
    DatasetManifest, Shape3, SynthConfig, Task, Volume,
};
use cmc3d::{Error, Matrix};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn unit_rows(r: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
    let mut m = Matrix::zeros(n, d);
    for i in 0..n {
        let row: Vec<f64> = (0..d).map(|_| StandardNormal.sample(r)).collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (j, v) in row.iter().enumerate() {
            m.set(i, j, v / norm);
        }
    }
    m
}

/// Rows of a softmax over random logits, bounded away from 0.
fn prob_rows(r: &mut ChaCha8Rng, n: usize, k: usize) -> Matrix {
    let mut m = Matrix::zeros(n, k);
    for i in 0..n {
        let e: Vec<f64> = (0..k).map(|_| r.random_range(-1.5..1.5f64).exp()).collect();
        let s: f64 = e.iter().sum();
        for j in 0..k {
            m.set(i, j, e[j] / s);
        }
    }
    m
}

fn soft_labels(r: &mut ChaCha8Rng, n: usize, k: usize) -> Matrix {
    let mut m = Matrix::zeros(n, k);
    for i in 0..n {
        let lam: f64 = r.random();
        let (a, b) = (r.random_range(0..k), r.random_range(0..k));
        m.set(i, a, m.get(i, a) + lam);
        m.set(i, b, m.get(i, b) + 1.0 - lam);
    }
    m
}

/// Literal transcription of the supervised contrastive loss: no
/// max-subtraction, anchors without positives skipped.
fn supcon_oracle(z: &Matrix, labels: &[usize], tau: f64) -> f64 {
    let n = z.rows();
    let sim = |a: usize, b: usize| -> f64 {
        (0..z.cols())
            .map(|k| z.get(a, k) * z.get(b, k))
            .sum::<f64>()
            / tau
    };
    let mut total = 0.0;
    let mut anchors = 0;
    for i in 0..n {
        let pos: Vec<usize> = (0..n)
            .filter(|&p| p != i && labels[p] == labels[i])
            .collect();
        if pos.is_empty() {
            continue;
        }
        let denom: f64 = (0..n).filter(|&a| a != i).map(|a| sim(i, a).exp()).sum();
        let s: f64 = pos.iter().map(|&p| (sim(i, p).exp() / denom).ln()).sum();
        total += -s / pos.len() as f64;
        anchors += 1;
    }
    if anchors == 0 {
        0.0
    } else {
        total / anchors as f64
    }
}

fn criterion_1() -> Outcome {
    let mut r = rng(1);
    let taus = [0.07, 0.1, 0.5, 1.0];
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let n = 2 * r.random_range(1..=8usize);
        let d = r.random_range(1..=8usize);
        let k = r.random_range(1..=4usize);
        let tau = taus[case % 4];
        let z = unit_rows(&mut r, n, d);
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let fast = supcon_loss(&z, &labels, tau).map_err(|e| e.to_string())?;
        let brute = supcon_loss_bruteforce(&z, &labels, tau).map_err(|e| e.to_string())?;
        let oracle = supcon_oracle(&z, &labels, tau);
        let err = (fast - brute).abs().max((fast - oracle).abs());
        ensure!(
            err <= 1e-9,
            "case {case}: stable {fast}, brute force {brute}, oracle {oracle}"
        );
        worst = worst.max(err);
    }
    Ok(format!("200 instances, max |diff| {worst:.1e}"))
}

fn criterion_2() -> Outcome {
    let mut worst: f64 = 0.0;
    for n in [2usize, 4, 8, 16] {
        let z = Matrix::from_rows(&vec![[0.0, 0.6, 0.8]; n]).unwrap();
        let want = ((n - 1) as f64).ln();
        for tau in [0.07, 0.1, 0.5, 1.0] {
            let got = supcon_loss(&z, &vec![0; n], tau).map_err(|e| e.to_string())?;
            ensure!(
                (got - want).abs() <= 1e-9,
                "2N={n} tau={tau}: {got} vs ln({})",
                n - 1
            );
            worst = worst.max((got - want).abs());
        }
    }
    Ok(format!(
        "ln(2N-1) for 2N in {{2,4,8,16}}, max |diff| {worst:.1e}"
    ))
}

/// Norm-wise relative error between an analytic gradient and central
/// differences of `f` around `x`.
fn fd_rel_err(x: &Matrix, analytic: &Matrix, h: f64, f: impl Fn(&Matrix) -> f64) -> f64 {
    let mut num = 0.0;
    let mut den_a = 0.0;
    let mut den_n = 0.0;
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let mut up = x.clone();
            up.set(i, j, x.get(i, j) + h);
            let mut dn = x.clone();
            dn.set(i, j, x.get(i, j) - h);
            let fd = (f(&up) - f(&dn)) / (2.0 * h);
            let a = analytic.get(i, j);
            num += (a - fd) * (a - fd);
            den_a += a * a;
            den_n += fd * fd;
        }
    }
    let den = den_a.sqrt().max(den_n.sqrt());
    if den < 1e-12 {
        num.sqrt()
    } else {
        num.sqrt() / den
    }
}

fn criterion_3() -> Outcome {
    const H: f64 = 1e-5;
    let mut r = rng(3);
    let mut worst = [0.0f64; 4];
    for case in 0..50 {
        let n = 2 * r.random_range(1..=6usize);
        let d = r.random_range(2..=8usize);
        let k = if case % 2 == 0 { 2 } else { 4 };
        let tau = [0.07, 0.1, 0.5, 1.0][case % 4];
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let z = unit_rows(&mut r, n, d);
        let y_hat = prob_rows(&mut r, n, k);
        let y_mix = prob_rows(&mut r, n, k);
        let targets = soft_labels(&mut r, n, k);

        let (_, g) = supcon_loss_grad(&z, &labels, tau).unwrap();
        let e0 = fd_rel_err(&z, &g, H, |z| supcon_loss(z, &labels, tau).unwrap());
        let (_, g) = mixup_loss_grad(&y_mix, &targets).unwrap();
        let e1 = fd_rel_err(&y_mix, &g, H, |p| mixup_loss(p, &targets).unwrap());
        let (_, g) = clf_loss_grad(&y_hat, &labels).unwrap();
        let e2 = fd_rel_err(&y_hat, &g, H, |p| clf_loss(p, &labels).unwrap());

        let w = LossWeights {
            w1: r.random_range(0.1..2.0),
            w2: r.random_range(0.1..2.0),
            w3: r.random_range(0.1..2.0),
            temperature: tau,
        };
        let out = BatchOutputs {
            r: Matrix::zeros(n, 1),
            z: z.clone(),
            y_hat: y_hat.clone(),
            y_hat_mix: y_mix.clone(),
        };
        let (_, g) = joint_loss_grad(&out, &labels, &targets, &w).unwrap();
        let total = |o: &BatchOutputs| joint_loss(o, &labels, &targets, &w).unwrap().total;
        let ez = fd_rel_err(&z, &g.z, H, |z| {
            total(&BatchOutputs {
                z: z.clone(),
                ..out.clone()
            })
        });
        let ey = fd_rel_err(&y_hat, &g.y_hat, H, |y| {
            total(&BatchOutputs {
                y_hat: y.clone(),
                ..out.clone()
            })
        });
        let em = fd_rel_err(&y_mix, &g.y_hat_mix, H, |y| {
            total(&BatchOutputs {
                y_hat_mix: y.clone(),
                ..out.clone()
            })
        });
        let e3 = ez.max(ey).max(em);
        for (slot, (name, e)) in
            worst
                .iter_mut()
                .zip([("supcon", e0), ("mixup", e1), ("clf", e2), ("joint", e3)])
        {
            ensure!(e < 1e-4, "case {case}: {name} relative error {e:.2e}");
            *slot = slot.max(e);
        }
    }
    Ok(format!(
        "50 instances each, max rel err supcon {:.1e} mixup {:.1e} clf {:.1e} joint {:.1e}",
        worst[0], worst[1], worst[2], worst[3]
    ))
}

fn random_volume(r: &mut ChaCha8Rng, shape: Shape3, id: &str) -> Volume {
    let data = (0..shape.len()).map(|_| r.random::<f32>()).collect();
    Volume::new(data, shape, id, shape.d as u32).unwrap()
}

fn criterion_4() -> Outcome {
    let mut r = rng(4);
    let shape = Shape3::new(3, 5, 4);
    let mut pairs = 0;
    for case in 0..25 {
        let n = 2 * r.random_range(1..=4usize);
        let k = if case % 2 == 0 { 2 } else { 4 };
        let labels: Vec<usize> = (0..n / 2).map(|_| r.random_range(0..k)).collect();
        let views: Vec<(Volume, Volume)> = (0..n / 2)
            .map(|i| {
                (
                    random_volume(&mut r, shape, &format!("a{i}")),
                    random_volume(&mut r, shape, &format!("b{i}")),
                )
            })
            .collect();
        let batch = AugmentedBatch::from_pairs(views, &labels, k).unwrap();
        let gran = if case % 3 == 0 {
            MixupGranularity::Sample
        } else {
            MixupGranularity::Batch
        };
        let mix = make_mixup(&batch, 0.2, gran, &mut r).unwrap();
        for (i, y) in mix.labels.iter().enumerate() {
            let s: f64 = y.iter().sum();
            ensure!(
                (s - 1.0).abs() <= 1e-12,
                "case {case} view {i}: labels sum to {s}"
            );
            let (a, b) = (&batch.views[i], &batch.views[mix.partner[i]]);
            for ((&m, &x), &y) in mix.views[i].data().iter().zip(a.data()).zip(b.data()) {
                ensure!(
                    m >= x.min(y) && m <= x.max(y),
                    "case {case}: voxel {m} outside [{x}, {y}]"
                );
            }
            pairs += 1;
        }
        let partner: Vec<usize> = (0..n).rev().collect();
        let ones = mix_with(&batch, &vec![1.0; n], &partner).unwrap();
        let zeros = mix_with(&batch, &vec![0.0; n], &partner).unwrap();
        for i in 0..n {
            ensure!(
                ones.views[i].data() == batch.views[i].data(),
                "lambda=1 changed view {i}"
            );
            ensure!(
                zeros.views[i].data() == batch.views[partner[i]].data(),
                "lambda=0 did not reproduce partner of view {i}"
            );
        }
    }
    ensure!(pairs >= 100, "only {pairs} pairs checked");
    Ok(format!(
        "{pairs} mixed pairs within parent bounds, degenerate draws exact"
    ))
}

/// Confusion counts by explicit enumeration of every (true, predicted) cell.
fn f1_oracle(t: &[usize], p: &[usize], k: usize) -> (f64, Vec<f64>) {
    let per: Vec<f64> = (0..k)
        .map(|c| {
            let mut tp = 0u64;
            let mut fp = 0u64;
            let mut fn_ = 0u64;
            for (&a, &b) in t.iter().zip(p) {
                match (a == c, b == c) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fn_ += 1,
                    _ => {}
                }
            }
            if 2 * tp + fp + fn_ == 0 {
                0.0
            } else {
                (2 * tp) as f64 / (2 * tp + fp + fn_) as f64
            }
        })
        .collect();
    (per.iter().sum::<f64>() / k as f64, per)
}

fn criterion_5() -> Outcome {
    let mut r = rng(5);
    for case in 0..500 {
        let k = if case % 2 == 0 { 2 } else { 4 };
        let n = r.random_range(1..=50usize);
        let t: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let p: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let got = macro_f1(&t, &p, k).map_err(|e| e.to_string())?;
        let want = f1_oracle(&t, &p, k);
        ensure!(got == want, "case {case}: {got:?} vs oracle {want:?}");
    }
    let (m, _) = macro_f1(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
    ensure!(
        (m - 0.733_333_333_333_333_3).abs() <= 1e-12,
        "worked example gave {m}"
    );
    Ok(format!("500 random cases exact, worked example {m:.12}"))
}

/// Direct 2D convolution of one `[c, h, w]` image with zero padding `pad`.
fn conv2d_oracle(img: &[f64], c: usize, h: usize, w: usize, k: &Kernel2d, pad: usize) -> Vec<f64> {
    let [co, ci, kh, kw] = k.dims;
    assert_eq!(ci, c);
    let (oh, ow) = (h + 2 * pad + 1 - kh, w + 2 * pad + 1 - kw);
    let mut out = vec![0.0; co * oh * ow];
    for o in 0..co {
        for y in 0..oh {
            for x in 0..ow {
                let mut s = 0.0;
                for i in 0..ci {
                    for u in 0..kh {
                        for v in 0..kw {
                            let (iy, ix) = (
                                (y + u) as isize - pad as isize,
                                (x + v) as isize - pad as isize,
                            );
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                s += k.get(o, i, u, v)
                                    * img[(i * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                }
                out[(o * oh + y) * ow + x] = s;
            }
        }
    }
    out
}

fn criterion_6() -> Outcome {
    let mut r = rng(6);
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let ks = [1usize, 3, 5][case % 3];
        let depth = [1usize, 3, 7][(case / 3) % 3];
        let (co, ci) = (r.random_range(1..=3usize), r.random_range(1..=3usize));
        let kernel = Kernel2d::from_vec(
            [co, ci, ks, ks],
            (0..co * ci * ks * ks)
                .map(|_| StandardNormal.sample(&mut r))
                .collect(),
        )
        .unwrap();
        let k3 = inflate_2d_kernel(&kernel, depth).unwrap();
        let (h, w) = (r.random_range(ks..ks + 6), r.random_range(ks..ks + 6));
        let d = depth + r.random_range(0..3usize);
        let slice: Vec<f64> = (0..ci * h * w).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut data = Vec::with_capacity(ci * d * h * w);
        for i in 0..ci {
            for _ in 0..d {
                data.extend_from_slice(&slice[i * h * w..(i + 1) * h * w]);
            }
        }
        let x = Tensor5::from_vec([1, ci, d, h, w], data).unwrap();
        let pad = ks / 2;
        let y = conv3d(&x, &k3, [0, pad, pad]).unwrap();
        let want = conv2d_oracle(&slice, ci, h, w, &kernel, pad);
        let [_, _, od, oh, ow] = y.dims;
        for o in 0..co {
            for z in 0..od {
                for p in 0..oh * ow {
                    let got = y.data[((o * od + z) * oh * ow) + p];
                    let e = (got - want[o * oh * ow + p]).abs();
                    ensure!(e <= 1e-5, "case {case}: k={ks} d={depth} differs by {e}");
                    worst = worst.max(e);
                }
            }
        }
    }
    Ok(format!("20 kernels, max |diff| {worst:.1e}"))
}

fn criterion_7() -> Outcome {
    let mut r = rng(7);
    for case in 0..20 {
        let src = Shape3::new(
            r.random_range(1..12),
            r.random_range(1..12),
            r.random_range(1..12),
        );
        let dst = Shape3::new(
            r.random_range(1..12),
            r.random_range(1..12),
            r.random_range(1..12),
        );
        let c: f32 = r.random();
        let v = resample(&Volume::filled(src, c, "c").unwrap(), dst).unwrap();
        ensure!(
            v.data().iter().all(|&x| x == c),
            "case {case}: constant {c} not preserved"
        );
    }
    let mut worst: f64 = 0.0;
    for d in [4usize, 8, 16, 64] {
        let (a, b) = (0.1, 0.8 / (d - 1) as f64);
        let ramp = Volume::from_fn(Shape3::new(d, 3, 5), "ramp", |z, _, _| {
            (a + b * z as f64) as f32
        })
        .unwrap();
        let half = resample(&ramp, Shape3::new(d / 2, 3, 5)).unwrap();
        let scale = (d - 1) as f64 / (d / 2 - 1).max(1) as f64;
        for z in 0..d / 2 {
            let want = if d / 2 == 1 {
                a + b * (d - 1) as f64 / 2.0
            } else {
                a + b * z as f64 * scale
            };
            for &x in half.plane(z) {
                worst = worst.max((x as f64 - want).abs());
            }
        }
    }
    ensure!(worst <= 1e-6, "ramp deviates by {worst}");
    let scan = random_volume(&mut r, Shape3::new(37, 64, 48), "scan");
    let det = resample(&scan, Shape3::new(128, 256, 256)).unwrap();
    let sev = resample(&scan, Shape3::new(64, 256, 256)).unwrap();
    ensure!(
        det.shape() == Shape3::new(128, 256, 256),
        "detection shape {}",
        det.shape()
    );
    ensure!(
        sev.shape() == Shape3::new(64, 256, 256),
        "severity shape {}",
        sev.shape()
    );
    let view = cmc3d::augment::augment_one(
        &det,
        &AugmentPolicy::detection(Shape3::new(64, 256, 256)),
        &mut r,
    )
    .unwrap();
    ensure!(
        view.shape() == Shape3::new(64, 256, 256),
        "detection view shape {}",
        view.shape()
    );
    Ok(format!(
        "constants exact, ramp max |diff| {worst:.1e}, 128x256x256 and 64x256x256 contracts hold"
    ))
}

fn criterion_8() -> Outcome {
    let s = Shape3::new(4, 8, 8);
    for e in [10usize, 100] {
        let mut c = TrainConfig::new(Task::Detection, s, s);
        c.epochs = e;
        for spe in [1usize, 3] {
            let total = e * spe;
            for step in 0..total {
                let pct = 100 * (step / spe) / e;
                let want = match pct {
                    0..30 => 1e-5,
                    30..80 => 1e-6,
                    _ => 1e-7,
                };
                let got = lr_at(step, total, &c);
                ensure!(
                    got == want,
                    "E={e} step {step}/{total}: {got:e}, want {want:e}"
                );
            }
        }
    }
    Ok("E in {10, 100}: 1e-5, 1e-6, 1e-7 bit-exact".into())
}

fn synth_set(
    dir: &Path,
    n_per_class: usize,
    shape: Shape3,
    gap: f64,
    noise: f64,
    seed: u64,
) -> DatasetManifest {
    let samples = generate_synthetic_dataset(&SynthConfig {
        task: Task::Detection,
        n_per_class,
        shape,
        class_mean_gap: gap,
        noise_std: noise,
        seed,
    })
    .unwrap();
    write_synthetic_dataset(&samples, dir).unwrap()
}

fn smoke_config(shape: Shape3, epochs: usize, seed: u64) -> TrainConfig {
    let mut c = TrainConfig::new(Task::Detection, shape, shape);
    c.epochs = epochs;
    c.batch_size = 8;
    c.lr = 1e-3;
    c.seed = seed;
    c.mixup_alpha = 0.2;
    c.loss_weights = LossWeights {
        w1: 1.0,
        w2: 1.0,
        w3: 1.0,
        temperature: 0.1,
    };
    c.model = ModelConfig {
        embedding_dim: 32,
        projection_dim: 16,
        ..ModelConfig::default()
    };
    c
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let shape = Shape3::new(16, 32, 32);
    let data = synth_set(&tmp.path().join("data"), 16, shape, 0.2, 0.05, 9);
    let config = smoke_config(shape, 50, 9);
    let mut runs = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let summary = train(&data, &config, &out, None).map_err(|e| e.to_string())?;
        ensure!(summary.steps == 200, "ran {} steps", summary.steps);
        let report = evaluate(&data, &summary.final_checkpoint).map_err(|e| e.to_string())?;
        let metrics = std::fs::read(out.join("metrics.csv")).unwrap();
        runs.push((report, metrics));
    }
    let (a, b) = (&runs[0], &runs[1]);
    ensure!(
        a.0.macro_f1 >= 0.95,
        "training macro F1 {:.4}",
        a.0.macro_f1
    );
    ensure!(a.1 == b.1, "metrics logs differ between seeded runs");
    ensure!(a.0 == b.0, "evaluation reports differ between seeded runs");
    Ok(format!(
        "200 steps, training macro F1 {:.4}, runs identical",
        a.0.macro_f1
    ))
}

fn criterion_10() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let shape = Shape3::new(8, 16, 16);
    let mut means = [0.0; 2];
    let mut detail = Vec::new();
    for seed in 0..5u64 {
        let train_set = synth_set(
            &tmp.path().join(format!("train{seed}")),
            32,
            shape,
            0.1,
            0.15,
            100 + seed,
        );
        let val_set = synth_set(
            &tmp.path().join(format!("val{seed}")),
            32,
            shape,
            0.1,
            0.15,
            200 + seed,
        );
        for (slot, w) in [(1.0, 1.0, 1.0), (0.0, 0.0, 1.0)].into_iter().enumerate() {
            let mut c = smoke_config(shape, 3, seed);
            c.loss_weights.w1 = w.0;
            c.loss_weights.w2 = w.1;
            c.loss_weights.w3 = w.2;
            let out = tmp.path().join(format!("run{seed}_{slot}"));
            let s = train(&train_set, &c, &out, None).map_err(|e| e.to_string())?;
            let f1 = evaluate(&val_set, &s.final_checkpoint)
                .map_err(|e| e.to_string())?
                .macro_f1;
            means[slot] += f1 / 5.0;
            detail.push(f1);
        }
    }
    ensure!(
        means[0] >= means[1],
        "joint {:.4} < plain CE {:.4} (per run {detail:.3?})",
        means[0],
        means[1]
    );
    Ok(format!(
        "mean validation macro F1: joint {:.4}, plain CE {:.4}",
        means[0], means[1]
    ))
}

fn criterion_11() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut r = rng(11);
    for i in 0..10 {
        let shape = Shape3::new(
            r.random_range(1..6),
            r.random_range(1..9),
            r.random_range(1..9),
        );
        let v =
            random_volume(&mut r, shape, &format!("scan_{i}")).with_source_slice_count(r.random());
        let p = tmp.path().join(format!("v{i}.cmcvol"));
        save_volume(&v, &p).unwrap();
        let back = load_volume(&p).unwrap();
        ensure!(back == v, "volume {i} changed on reload");
        ensure!(
            back.data()
                .iter()
                .zip(v.data())
                .all(|(a, b)| a.to_bits() == b.to_bits()),
            "volume {i} voxels not bit-exact"
        );
        let bytes = std::fs::read(&p).unwrap();
        let mut bad = bytes.clone();
        bad[0] ^= 0x20;
        std::fs::write(&p, &bad).unwrap();
        ensure!(
            matches!(load_volume(&p), Err(Error::Format(_))),
            "corrupted volume magic accepted"
        );
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        ensure!(
            matches!(load_volume(&p), Err(Error::Format(_))),
            "truncated volume accepted"
        );
    }
    let model = Model::new(
        EncoderSpec::tiny3d(Shape3::new(4, 8, 8), 8),
        HeadSpec {
            projection_dim: 4,
            num_classes: 4,
        },
        11,
    )
    .unwrap();
    let p = tmp.path().join("m.ckpt");
    save_checkpoint(&model, "{\"k\":4}", &p).unwrap();
    let ck = load_checkpoint(&p).unwrap();
    ensure!(
        &ck.params == model.params(),
        "checkpoint parameters changed on reload"
    );
    let bytes = std::fs::read(&p).unwrap();
    let mut bad = bytes.clone();
    bad[1] = b'X';
    ensure!(
        matches!(checkpoint_from_bytes(&bad), Err(Error::Format(_))),
        "corrupted checkpoint magic accepted"
    );
    for cut in [0, 7, 12, bytes.len() / 2, bytes.len() - 1] {
        ensure!(
            matches!(checkpoint_from_bytes(&bytes[..cut]), Err(Error::Format(_))),
            "checkpoint truncated to {cut} bytes accepted"
        );
    }
    Ok("10 volumes and a checkpoint bit-exact; bad magic and truncation rejected".into())
}

fn main() {
    let only: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let criteria: [(&str, fn() -> Outcome, Option<Duration>); 11] = [
        (
            "contrastive loss oracle equivalence",
            criterion_1,
            Some(Duration::from_secs(5)),
        ),
        ("ln(2N-1) analytic case", criterion_2, None),
        (
            "loss gradient checks",
            criterion_3,
            Some(Duration::from_secs(30)),
        ),
        ("mixup contracts", criterion_4, None),
        ("macro-F1 oracle", criterion_5, None),
        ("kernel inflation invariant", criterion_6, None),
        ("resampling invariants", criterion_7, None),
        ("learning-rate schedule", criterion_8, None),
        (
            "end-to-end overfit smoke test",
            criterion_9,
            Some(Duration::from_secs(300)),
        ),
        ("ablation direction check", criterion_10, None),
        ("format round-trips", criterion_11, None),
    ];
    let mut failed = 0;
    for (i, (name, run, budget)) in criteria.into_iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = t.elapsed();
        let outcome = match (outcome, budget) {
            (Ok(_), Some(b)) if elapsed > b => Err(format!("took {elapsed:.1?}, budget {b:?}")),
            (o, _) => o,
        };
        match outcome {
            Ok(msg) => println!("[PASS] {n:>2} {name}: {msg} ({elapsed:.2?})"),
            Err(msg) => {
                failed += 1;
                println!("[FAIL] {n:>2} {name}: {msg} ({elapsed:.2?})");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
