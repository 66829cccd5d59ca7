//! Out-of-fold prediction, mismatch detection and the class-wise index.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::net::{argmax, NetworkSpec};
use crate::rng;
use crate::training::{fit_hard_labels, with_pool, TrainConfig};

/// Assignment of every sample to one of `k` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KFoldPlan {
    fold_of: Vec<usize>,
    k: usize,
}

impl KFoldPlan {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.fold_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fold_of.is_empty()
    }

    pub fn fold_of(&self) -> &[usize] {
        &self.fold_of
    }

    /// Held-out indices of fold `k`, ascending.
    pub fn held_out(&self, fold: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.fold_of[i] == fold).collect()
    }

    /// Training indices of fold `k` (everything not held out), ascending.
    pub fn training(&self, fold: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.fold_of[i] != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Shuffles `0..n` with the seed and cuts the permutation into `k`
/// contiguous chunks; the first `n mod k` chunks get one extra sample.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<KFoldPlan> {
    if k < 2 {
        return Err(Error::Plan(format!("need at least 2 folds, got {k}")));
    }
    if k > n {
        return Err(Error::Plan(format!("{k} folds for only {n} samples")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[rng::FOLDS]));
    let base = n / k;
    let extra = n % k;
    let mut fold_of = vec![0; n];
    let mut start = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        for &i in &order[start..start + size] {
            fold_of[i] = fold;
        }
        start += size;
    }
    Ok(KFoldPlan { fold_of, k })
}

/// Out-of-fold probability rows with their argmax labels and confidences.
#[derive(Debug, Clone, PartialEq)]
pub struct OofPredictions {
    probs: Array2<f64>,
    pred_labels: Vec<usize>,
    confidence: Vec<f64>,
}

impl OofPredictions {
    pub fn from_probs(probs: Array2<f64>) -> Result<Self> {
        if probs.nrows() == 0 || probs.ncols() == 0 {
            return Err(Error::Shape("empty probability matrix".into()));
        }
        let mut pred_labels = Vec::with_capacity(probs.nrows());
        let mut confidence = Vec::with_capacity(probs.nrows());
        for (i, row) in probs.rows().into_iter().enumerate() {
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (row.sum() - 1.0).abs() > 1e-9 {
                return Err(Error::Input(format!("row {i} is not a probability vector")));
            }
            let row = row.to_vec();
            let label = argmax(&row);
            pred_labels.push(label);
            confidence.push(row[label]);
        }
        Ok(OofPredictions {
            probs,
            pred_labels,
            confidence,
        })
    }

    /// Degenerate predictions putting all mass on the given labels.
    pub fn from_labels(labels: &[usize], num_classes: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Input(format!("label {bad} outside {num_classes} classes")));
        }
        Self::from_probs(crate::training::one_hot(labels, num_classes))
    }

    pub fn len(&self) -> usize {
        self.pred_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pred_labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.probs.ncols()
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn pred_labels(&self) -> &[usize] {
        &self.pred_labels
    }

    pub fn confidence(&self) -> &[f64] {
        &self.confidence
    }

    /// Writes `index,pred_label,confidence,prob_0..prob_{C-1}`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["index".to_string(), "pred_label".into(), "confidence".into()];
        header.extend((0..self.num_classes()).map(|k| format!("prob_{k}")));
        w.write_record(&header)?;
        for (i, row) in self.probs.rows().into_iter().enumerate() {
            let mut record = vec![
                i.to_string(),
                self.pred_labels[i].to_string(),
                self.confidence[i].to_string(),
            ];
            record.extend(row.iter().map(|p| p.to_string()));
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

static FOLD_TRAININGS: AtomicUsize = AtomicUsize::new(0);

/// Total fold models trained by this process so far.
pub fn fold_trainings() -> usize {
    FOLD_TRAININGS.load(Ordering::Relaxed)
}

/// Trains one model per fold on everything outside it (observed labels) and
/// records that model's probabilities for the held-out samples.
///
/// Fold `k` draws from streams keyed `(seed, FOLD_TRAIN, k, ..)`, so the
/// result does not depend on scheduling.
pub fn oof_predict(
    ds: &Dataset,
    net: &NetworkSpec,
    train: &TrainConfig,
    plan: &KFoldPlan,
    seed: u64,
) -> Result<OofPredictions> {
    oof_predict_observed(ds, net, train, plan, seed, |_, _| {})
}

pub(crate) fn oof_predict_observed<F>(
    ds: &Dataset,
    net: &NetworkSpec,
    train: &TrainConfig,
    plan: &KFoldPlan,
    seed: u64,
    observe: F,
) -> Result<OofPredictions>
where
    F: Fn(usize, &Dataset) + Sync,
{
    if plan.len() != ds.len() {
        return Err(Error::Shape(format!(
            "fold plan covers {} samples, dataset has {}",
            plan.len(),
            ds.len()
        )));
    }
    if net.input_dim() != ds.dim() || net.num_classes() != ds.num_classes() {
        return Err(Error::Shape(format!(
            "network {:?} does not fit {} features / {} classes",
            net.layer_widths,
            ds.dim(),
            ds.num_classes()
        )));
    }
    train.validate()?;

    let run_fold = |fold: usize| -> Result<(Vec<usize>, Array2<f64>)> {
        let held = plan.held_out(fold);
        let fit_set = ds.subset(&plan.training(fold))?;
        observe(fold, &fit_set);
        FOLD_TRAININGS.fetch_add(1, Ordering::Relaxed);
        let model = fit_hard_labels(
            net,
            fit_set.features().view(),
            fit_set.noisy_labels(),
            train,
            seed,
            &[rng::FOLD_TRAIN, fold as u64],
        )?;
        let probs = model.forward(ds.features().select(Axis(0), &held).view())?;
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(Error::Training {
                layer: net.num_layers() - 1,
            });
        }
        Ok((held, probs))
    };

    let folds: Vec<Result<(Vec<usize>, Array2<f64>)>> = with_pool(|| {
        (0..plan.k())
            .into_par_iter()
            .map(|fold| {
                run_fold(fold).map_err(|e| Error::Fold {
                    fold,
                    source: Box::new(e),
                })
            })
            .collect()
    });

    let mut probs = Array2::zeros((ds.len(), ds.num_classes()));
    for fold in folds {
        let (held, rows) = fold?;
        for (r, &i) in held.iter().enumerate() {
            probs.row_mut(i).assign(&rows.row(r));
        }
    }
    OofPredictions::from_probs(probs)
}

/// Indices whose observed label disagrees with the out-of-fold prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct MismatchSet {
    indices: Vec<usize>,
    member: Vec<bool>,
    rho: f64,
}

impl MismatchSet {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn contains(&self, i: usize) -> bool {
        self.member.get(i).copied().unwrap_or(false)
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Size of the dataset the set was computed on.
    pub fn population(&self) -> usize {
        self.member.len()
    }

    /// Newline-separated ascending indices.
    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for i in &self.indices {
            writeln!(out, "{i}")?;
        }
        out.flush()
    }
}

pub fn mismatch_set(ds: &Dataset, oof: &OofPredictions) -> Result<MismatchSet> {
    mismatch_from_labels(ds.noisy_labels(), oof.pred_labels())
}

pub fn mismatch_from_labels(noisy: &[usize], pred: &[usize]) -> Result<MismatchSet> {
    if noisy.len() != pred.len() {
        return Err(Error::Shape(format!(
            "{} observed labels vs {} predictions",
            noisy.len(),
            pred.len()
        )));
    }
    if noisy.is_empty() {
        return Err(Error::Shape("empty label vectors".into()));
    }
    let member: Vec<bool> = noisy.iter().zip(pred).map(|(a, b)| a != b).collect();
    let indices: Vec<usize> = (0..member.len()).filter(|&i| member[i]).collect();
    let rho = indices.len() as f64 / member.len() as f64;
    Ok(MismatchSet {
        indices,
        member,
        rho,
    })
}

/// Samples grouped by predicted class, in full and restricted to the
/// reliable (non-mismatched) samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassIndex {
    all: Vec<Vec<usize>>,
    reliable: Vec<Vec<usize>>,
}

impl ClassIndex {
    pub fn all(&self, class: usize) -> &[usize] {
        self.all.get(class).map_or(&[], Vec::as_slice)
    }

    pub fn reliable(&self, class: usize) -> &[usize] {
        self.reliable.get(class).map_or(&[], Vec::as_slice)
    }

    pub fn num_classes(&self) -> usize {
        self.all.len()
    }
}

pub fn class_index(oof: &OofPredictions, m: &MismatchSet) -> ClassIndex {
    let c = oof.num_classes();
    let mut all = vec![Vec::new(); c];
    let mut reliable = vec![Vec::new(); c];
    for (j, &y) in oof.pred_labels().iter().enumerate() {
        all[y].push(j);
        if !m.contains(j) {
            reliable[y].push(j);
        }
    }
    ClassIndex { all, reliable }
}
