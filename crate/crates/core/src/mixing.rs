//! Mixed-batch construction for ERM, Mixup, Mixup* and SelectMix, and the
//! two-endpoint composite loss.
//!
//! Every strategy produces the same [`MixedBatch`] shape: inputs, a per-sample
//! weight `lambda` and two hard label endpoints. The implied soft target of
//! sample `i` is `lambda_i * e(label_a_i) + (1 - lambda_i) * e(label_b_i)`.

use ndarray::{Array2, ArrayView2, Zip};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::crossval::{ClassIndex, MismatchSet, OofPredictions};
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::net::PROB_FLOOR;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixKind {
    Erm,
    Mixup,
    MixupStar,
    #[serde(rename = "selectmix")]
    SelectMix,
}

impl MixKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MixKind::Erm => "erm",
            MixKind::Mixup => "mixup",
            MixKind::MixupStar => "mixup_star",
            MixKind::SelectMix => "selectmix",
        }
    }

    /// Whether the strategy consumes out-of-fold predictions.
    pub fn needs_guidance(self) -> bool {
        matches!(self, MixKind::MixupStar | MixKind::SelectMix)
    }
}

impl std::str::FromStr for MixKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "erm" => Ok(MixKind::Erm),
            "mixup" => Ok(MixKind::Mixup),
            "mixup_star" | "mixup*" => Ok(MixKind::MixupStar),
            "selectmix" => Ok(MixKind::SelectMix),
            other => Err(Error::Config(format!("unknown strategy `{other}`"))),
        }
    }
}

/// Where a SelectMix sample looks for its partner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PartnerPool {
    /// Reliable samples of the predicted class, falling back to any sample
    /// of the predicted class.
    #[default]
    ReliablePredClass,
    /// Any sample of the predicted class.
    AnyPredClass,
    /// Reliable samples whose predicted class equals the sample's observed
    /// label, falling back to any sample predicted as that label.
    NoisyClass,
}

impl std::str::FromStr for PartnerPool {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reliable_pred_class" => Ok(PartnerPool::ReliablePredClass),
            "any_pred_class" => Ok(PartnerPool::AnyPredClass),
            "noisy_class" => Ok(PartnerPool::NoisyClass),
            other => Err(Error::Config(format!("unknown partner pool `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixStrategy {
    pub kind: MixKind,
    pub alpha: f64,
    pub partner_pool: PartnerPool,
}

impl MixStrategy {
    pub fn new(kind: MixKind, alpha: f64) -> Result<Self> {
        let strat = MixStrategy {
            kind,
            alpha,
            partner_pool: PartnerPool::default(),
        };
        strat.validate()?;
        Ok(strat)
    }

    pub fn with_pool(mut self, partner_pool: PartnerPool) -> Self {
        self.partner_pool = partner_pool;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Spec(format!("Beta parameter must be positive, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Out-of-fold predictions and everything derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct Guidance {
    pub oof: OofPredictions,
    pub mismatch: MismatchSet,
    pub index: ClassIndex,
}

impl Guidance {
    pub fn new(ds: &Dataset, oof: OofPredictions) -> Result<Self> {
        let mismatch = crate::crossval::mismatch_set(ds, &oof)?;
        let index = crate::crossval::class_index(&oof, &mismatch);
        Ok(Guidance {
            oof,
            mismatch,
            index,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedBatch {
    pub inputs: Array2<f64>,
    pub lambda: Vec<f64>,
    /// Endpoint weighted by `lambda`.
    pub label_a: Vec<usize>,
    /// Endpoint weighted by `1 - lambda`.
    pub label_b: Vec<usize>,
    pub mixed_flag: Vec<bool>,
    /// Dataset index of the partner; the sample itself when unmixed.
    pub partner: Vec<usize>,
}

impl MixedBatch {
    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    /// `lambda * e_a + (1 - lambda) * e_b` per row.
    pub fn soft_targets(&self, num_classes: usize) -> Array2<f64> {
        let mut t = Array2::zeros((self.len(), num_classes));
        for i in 0..self.len() {
            t[[i, self.label_a[i]]] += self.lambda[i];
            t[[i, self.label_b[i]]] += 1.0 - self.lambda[i];
        }
        t
    }
}

/// One draw from `Beta(alpha, alpha)`.
pub fn sample_lambda<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    Ok(lambda_dist(alpha)?.sample(rng))
}

fn lambda_dist(alpha: f64) -> Result<Beta<f64>> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Spec(format!("Beta parameter must be positive, got {alpha}")));
    }
    Beta::new(alpha, alpha).map_err(|e| Error::Spec(e.to_string()))
}

/// Uniform draw from `pool` without `exclude`; `pool` must be ascending.
fn draw_excluding<R: Rng + ?Sized>(pool: &[usize], exclude: usize, rng: &mut R) -> Option<usize> {
    match pool.binary_search(&exclude) {
        Ok(pos) => {
            if pool.len() < 2 {
                return None;
            }
            let k = rng.random_range(0..pool.len() - 1);
            Some(if k >= pos { pool[k + 1] } else { pool[k] })
        }
        Err(_) => {
            if pool.is_empty() {
                return None;
            }
            Some(pool[rng.random_range(0..pool.len())])
        }
    }
}

/// Draws a mixing partner for sample `i`, or `None` when the pool (and its
/// fallback) is empty.
pub fn select_partner<R: Rng + ?Sized>(
    i: usize,
    noisy_label: usize,
    index: &ClassIndex,
    oof: &OofPredictions,
    pool: PartnerPool,
    rng: &mut R,
) -> Option<usize> {
    let with_fallback = |class: usize, rng: &mut R| {
        let reliable = index.reliable(class);
        if reliable.iter().any(|&j| j != i) {
            draw_excluding(reliable, i, rng)
        } else {
            draw_excluding(index.all(class), i, rng)
        }
    };
    match pool {
        PartnerPool::ReliablePredClass => with_fallback(oof.pred_labels()[i], rng),
        PartnerPool::AnyPredClass => draw_excluding(index.all(oof.pred_labels()[i]), i, rng),
        PartnerPool::NoisyClass => with_fallback(noisy_label, rng),
    }
}

/// Builds the training batch for `indices` under `strat`.
///
/// ERM passes samples through with their observed labels. Mixup pairs each
/// sample with a partner from a seeded permutation of the batch. Mixup* does
/// the same with out-of-fold predicted labels on both sides. SelectMix leaves
/// reliable samples untouched (no random draws) and mixes each mismatched
/// sample with a partner from [`select_partner`], weighting its observed
/// label by `lambda` and its predicted label by `1 - lambda`.
pub fn build_mixed_batch<R: Rng + ?Sized>(
    indices: &[usize],
    ds: &Dataset,
    guidance: Option<&Guidance>,
    strat: &MixStrategy,
    rng: &mut R,
) -> Result<MixedBatch> {
    strat.validate()?;
    if let Some(&bad) = indices.iter().find(|&&i| i >= ds.len()) {
        return Err(Error::Shape(format!("index {bad} out of {} samples", ds.len())));
    }
    let noisy = ds.noisy_labels();
    let b = indices.len();
    let mut mb = MixedBatch {
        inputs: ds.features().select(ndarray::Axis(0), indices),
        lambda: vec![1.0; b],
        label_a: indices.iter().map(|&i| noisy[i]).collect(),
        label_b: indices.iter().map(|&i| noisy[i]).collect(),
        mixed_flag: vec![false; b],
        partner: indices.to_vec(),
    };
    let need = |kind: MixKind| {
        guidance.ok_or_else(|| Error::Config(format!("{} needs out-of-fold guidance", kind.as_str())))
    };
    match strat.kind {
        MixKind::Erm => {}
        MixKind::Mixup | MixKind::MixupStar => {
            let labels = match strat.kind {
                MixKind::MixupStar => {
                    let g = need(strat.kind)?;
                    if g.oof.len() != ds.len() {
                        return Err(Error::Shape("guidance does not match the dataset".into()));
                    }
                    g.oof.pred_labels()
                }
                _ => noisy,
            };
            let dist = lambda_dist(strat.alpha)?;
            let mut perm: Vec<usize> = (0..b).collect();
            perm.shuffle(rng);
            for (p, &q) in perm.iter().enumerate() {
                let (i, j) = (indices[p], indices[q]);
                let lam = dist.sample(rng);
                mix_row(&mut mb.inputs, p, lam, ds, j);
                mb.lambda[p] = lam;
                mb.label_a[p] = labels[i];
                mb.label_b[p] = labels[j];
                mb.mixed_flag[p] = true;
                mb.partner[p] = j;
            }
        }
        MixKind::SelectMix => {
            let g = need(strat.kind)?;
            if g.oof.len() != ds.len() || g.mismatch.population() != ds.len() {
                return Err(Error::Shape("guidance does not match the dataset".into()));
            }
            let mut dist = None;
            for (p, &i) in indices.iter().enumerate() {
                if !g.mismatch.contains(i) {
                    continue;
                }
                let Some(j) =
                    select_partner(i, noisy[i], &g.index, &g.oof, strat.partner_pool, rng)
                else {
                    continue;
                };
                let dist = match &dist {
                    Some(d) => d,
                    None => dist.insert(lambda_dist(strat.alpha)?),
                };
                let lam = dist.sample(rng);
                mix_row(&mut mb.inputs, p, lam, ds, j);
                mb.lambda[p] = lam;
                mb.label_a[p] = noisy[i];
                mb.label_b[p] = g.oof.pred_labels()[i];
                mb.mixed_flag[p] = true;
                mb.partner[p] = j;
            }
        }
    }
    Ok(mb)
}

/// `row = lam * row + (1 - lam) * x_j`.
fn mix_row(inputs: &mut Array2<f64>, row: usize, lam: f64, ds: &Dataset, j: usize) {
    Zip::from(inputs.row_mut(row))
        .and(ds.row(j))
        .for_each(|x, &xj| *x = lam * *x + (1.0 - lam) * xj);
}

/// Mean over the batch of `lambda * l(p, a) + (1 - lambda) * l(p, b)` with
/// `l` the cross-entropy against a one-hot label.
pub fn composite_loss(probs: ArrayView2<f64>, mb: &MixedBatch) -> Result<f64> {
    if probs.nrows() != mb.len() || mb.is_empty() {
        return Err(Error::Shape(format!(
            "{} probability rows for a batch of {}",
            probs.nrows(),
            mb.len()
        )));
    }
    let c = probs.ncols();
    if let Some(&bad) = mb.label_a.iter().chain(&mb.label_b).find(|&&y| y >= c) {
        return Err(Error::Shape(format!("label {bad} outside {c} classes")));
    }
    let nll = |p: f64| -p.max(PROB_FLOOR).ln();
    let total: f64 = (0..mb.len())
        .map(|i| {
            let lam = mb.lambda[i];
            lam * nll(probs[[i, mb.label_a[i]]]) + (1.0 - lam) * nll(probs[[i, mb.label_b[i]]])
        })
        .sum();
    Ok(total / mb.len() as f64)
}
