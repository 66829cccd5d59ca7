//! Epoch loop shared by fold models and final models.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{NetworkSpec, NetworkState, SgdHyper};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub sgd: SgdHyper,
    pub epochs: usize,
    pub batch_size: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.sgd.validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// One-hot rows for hard labels.
pub fn one_hot(labels: &[usize], num_classes: usize) -> Array2<f64> {
    let mut out = Array2::zeros((labels.len(), num_classes));
    for (i, &y) in labels.iter().enumerate() {
        out[[i, y]] = 1.0;
    }
    out
}

/// Seeded permutation of `0..n` for one epoch.
pub fn epoch_order(n: usize, seed: u64, keys: &[u64], epoch: usize) -> Vec<usize> {
    let mut path = keys.to_vec();
    path.extend([rng::SHUFFLE, epoch as u64]);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &path));
    order
}

/// What a training batch looks like once built.
pub struct Batch {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
}

/// Initializes a network and runs `cfg.epochs` epochs of shuffled minibatch
/// SGD. `make_batch(epoch, step, indices)` turns sample indices into inputs
/// and soft targets; `after_epoch(epoch, state)` runs once per epoch.
///
/// Streams: init from `keys ++ [INIT]`, shuffling from
/// `keys ++ [SHUFFLE, epoch]`.
pub fn fit<B, E>(
    spec: &NetworkSpec,
    n: usize,
    cfg: &TrainConfig,
    seed: u64,
    keys: &[u64],
    mut make_batch: B,
    mut after_epoch: E,
) -> Result<NetworkState>
where
    B: FnMut(usize, usize, &[usize]) -> Result<Batch>,
    E: FnMut(usize, &NetworkState) -> Result<()>,
{
    cfg.validate()?;
    if n == 0 {
        return Err(Error::Input("cannot train on an empty dataset".into()));
    }
    let mut init_path = keys.to_vec();
    init_path.push(rng::INIT);
    let mut state = NetworkState::init(spec, &mut rng::stream(seed, &init_path))?;
    for epoch in 0..cfg.epochs {
        let lr = cfg.sgd.lr_at(epoch);
        let order = epoch_order(n, seed, keys, epoch);
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = make_batch(epoch, step, chunk)?;
            state.train_step(batch.inputs.view(), batch.targets.view(), &cfg.sgd, lr)?;
        }
        after_epoch(epoch, &state)?;
    }
    Ok(state)
}

/// Plain cross-entropy training on hard labels.
pub fn fit_hard_labels(
    spec: &NetworkSpec,
    features: ArrayView2<f64>,
    labels: &[usize],
    cfg: &TrainConfig,
    seed: u64,
    keys: &[u64],
) -> Result<NetworkState> {
    let classes = spec.num_classes();
    fit(
        spec,
        labels.len(),
        cfg,
        seed,
        keys,
        |_, _, idx| {
            Ok(Batch {
                inputs: features.select(ndarray::Axis(0), idx),
                targets: one_hot(&idx.iter().map(|&i| labels[i]).collect::<Vec<_>>(), classes),
            })
        },
        |_, _| Ok(()),
    )
}

/// Worker count from `SELECTMIX_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var("SELECTMIX_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Runs `f` inside a rayon pool capped by `SELECTMIX_THREADS`.
pub fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap() {
        builder = builder.num_threads(n);
    }
    match builder.build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}
