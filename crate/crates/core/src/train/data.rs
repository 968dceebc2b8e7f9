//! Scan loading and batch assembly, optionally spread over worker threads.

use std::borrow::Cow;
use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TrainConfig;
use crate::augment::{augment_one, make_mixup, AugmentedBatch, MixupBatch};
use crate::error::Result;
use crate::volume::{ManifestEntry, Shape3, Volume};

/// Environment variable capping the number of data-loading threads.
pub const NUM_WORKERS_ENV: &str = "CMC3D_NUM_WORKERS";

/// `requested`, capped by `CMC3D_NUM_WORKERS` when that is set to a positive integer.
pub fn worker_count(requested: usize) -> usize {
    let cap = std::env::var(NUM_WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0);
    match cap {
        Some(c) => requested.min(c).max(1),
        None => requested.max(1),
    }
}

/// Order-preserving parallel map over contiguous chunks.
pub(crate) fn par_map<T, U, F>(items: &[T], workers: usize, f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> Result<U> + Sync,
{
    if workers <= 1 || items.len() <= 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let chunk = items.len().div_ceil(workers);
    let f = &f;
    let parts: Vec<Result<Vec<U>>> = std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .enumerate()
            .map(|(c, part)| {
                s.spawn(move || {
                    part.iter()
                        .enumerate()
                        .map(|(j, t)| f(c * chunk + j, t))
                        .collect::<Result<Vec<U>>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("data worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Independent random stream for one `(purpose, a, b)` coordinate of a run.
pub(crate) fn stream(seed: u64, purpose: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose << 56 ^ a << 24 ^ b);
    rng
}

const STREAM_ORDER: u64 = 1;
const STREAM_AUGMENT: u64 = 2;
const STREAM_MIXUP: u64 = 3;

pub(crate) struct Loader<'a> {
    entries: &'a [ManifestEntry],
    shape: Shape3,
    workers: usize,
    cache: Option<Vec<Volume>>,
}

impl<'a> Loader<'a> {
    pub fn new(
        entries: &'a [ManifestEntry],
        shape: Shape3,
        workers: usize,
        cache: bool,
    ) -> Result<Self> {
        let cache = if cache {
            Some(par_map(entries, workers, |_, e| e.load(shape))?)
        } else {
            None
        };
        Ok(Loader {
            entries,
            shape,
            workers,
            cache,
        })
    }

    pub fn get(&self, i: usize) -> Result<Cow<'_, Volume>> {
        match &self.cache {
            Some(c) => Ok(Cow::Borrowed(&c[i])),
            None => self.entries[i].load(self.shape).map(Cow::Owned),
        }
    }
}

/// Dataset indices of every batch in `epoch`.
pub(crate) fn epoch_batches(
    config: &TrainConfig,
    labels: &[usize],
    epoch: usize,
) -> Vec<Vec<usize>> {
    let n = labels.len();
    let mut rng = stream(config.seed, STREAM_ORDER, epoch as u64, 0);
    let order: Vec<usize> = if config.balanced_sampling {
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            by_class.entry(l).or_default().push(i);
        }
        let classes: Vec<&Vec<usize>> = by_class.values().collect();
        (0..n)
            .map(|_| {
                let c = classes[rng.random_range(0..classes.len())];
                c[rng.random_range(0..c.len())]
            })
            .collect()
    } else {
        let mut o: Vec<usize> = (0..n).collect();
        o.shuffle(&mut rng);
        o
    };
    order
        .chunks(config.batch_size)
        .map(<[usize]>::to_vec)
        .collect()
}

pub(crate) fn steps_per_epoch(config: &TrainConfig, n: usize) -> usize {
    n.div_ceil(config.batch_size)
}

pub(crate) struct Batch {
    pub views: AugmentedBatch,
    pub mixup: MixupBatch,
}

/// Two augmented views per scan plus their mixup. Every scan draws from its
/// own stream keyed by the global step, so results do not depend on the
/// number of workers.
pub(crate) fn build_batch(
    config: &TrainConfig,
    loader: &Loader<'_>,
    labels: &[usize],
    indices: &[usize],
    step: usize,
) -> Result<Batch> {
    let policy = &config.augment;
    let aug_seed = config.seed ^ policy.seed.rotate_left(32);
    let pairs = par_map(indices, loader.workers, |k, &i| {
        let vol = loader.get(i)?;
        let mut rng = stream(aug_seed, STREAM_AUGMENT, step as u64, k as u64);
        Ok((
            augment_one(&vol, policy, &mut rng)?,
            augment_one(&vol, policy, &mut rng)?,
        ))
    })?;
    let batch_labels: Vec<usize> = indices.iter().map(|&i| labels[i]).collect();
    let views = AugmentedBatch::from_pairs(pairs, &batch_labels, config.task.num_classes())?;
    let mut rng = stream(config.seed, STREAM_MIXUP, step as u64, 0);
    let mixup = make_mixup(
        &views,
        config.mixup_alpha,
        config.mixup_granularity,
        &mut rng,
    )?;
    Ok(Batch { views, mixup })
}
