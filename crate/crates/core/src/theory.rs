//! Empirical checks of the Mixup / SelectMix risk comparison.
//!
//! * [`kappa`] gives the Beta-moment weights of the instance- and
//!   class-dependent noise terms in the Mixup risk.
//! * [`estimate_risks`] estimates the Mixup risk (random pairs, observed
//!   labels on both sides) and the SelectMix risk (reliable samples unmixed,
//!   mismatched samples mixed with a same-class partner) for a fixed model,
//!   together with the mismatch rate `rho`, the reliability margin `delta`
//!   and the bound `r_sel <= r_mix - kappa_cdn * delta * rho`.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::mixing::{select_partner, Guidance, PartnerPool};
use crate::net::{NetworkState, Probabilities, PROB_FLOOR};
use crate::rng;

/// Smallest draw count accepted by [`estimate_risks`].
pub const MIN_DRAWS: usize = 10_000;

/// Standard errors allowed on the wrong side of the bound.
pub const HOLDS_TOLERANCE_SE: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaPair {
    /// `E[lambda^2 + (1 - lambda)^2]`
    pub kappa_idn: f64,
    /// `2 E[lambda (1 - lambda)]`
    pub kappa_cdn: f64,
    pub alpha: f64,
}

/// Closed forms under `lambda ~ Beta(alpha, alpha)`:
/// `kappa_cdn = alpha / (2 alpha + 1)`, `kappa_idn = (alpha + 1) / (2 alpha + 1)`.
pub fn kappa(alpha: f64) -> Result<KappaPair> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Spec(format!("Beta parameter must be positive, got {alpha}")));
    }
    let denom = 2.0 * alpha + 1.0;
    Ok(KappaPair {
        kappa_idn: (alpha + 1.0) / denom,
        kappa_cdn: alpha / denom,
        alpha,
    })
}

/// `|CE(p, a y1 + (1-a) y2) - a CE(p, y1) - (1-a) CE(p, y2)|` for one-hot
/// `y1 = e(class1)`, `y2 = e(class2)`.
pub fn linearity_residual(p: &Probabilities, class1: usize, class2: usize, alpha: f64) -> f64 {
    let p = p.as_slice();
    let mut mixed = vec![0.0; p.len()];
    mixed[class1] += alpha;
    mixed[class2] += 1.0 - alpha;
    let one = |k: usize| {
        let mut t = vec![0.0; p.len()];
        t[k] = 1.0;
        crate::net::soft_cross_entropy(p, &t)
    };
    let lhs = crate::net::soft_cross_entropy(p, &mixed);
    (lhs - alpha * one(class1) - (1.0 - alpha) * one(class2)).abs()
}

fn ln_floor(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

/// Mean computed around the first element, so identical values return that
/// value exactly.
fn shifted_mean(values: impl IntoIterator<Item = f64>) -> Option<(f64, usize)> {
    let mut iter = values.into_iter();
    let first = iter.next()?;
    let (mut acc, mut n) = (0.0, 1usize);
    for v in iter {
        acc += v - first;
        n += 1;
    }
    Some((first + acc / n as f64, n))
}

/// Mean and standard error of the mean.
fn mean_se(values: &[f64]) -> (f64, f64) {
    let (mean, n) = shifted_mean(values.iter().copied()).unwrap_or((0.0, 0));
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

fn probs_of(model: &NetworkState, features: ArrayView2<f64>) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((features.nrows(), model.spec().num_classes()));
    for (k, chunk) in features.axis_chunks_iter(Axis(0), 2048).enumerate() {
        let start = k * 2048;
        let probs = model.forward(chunk)?;
        out.slice_mut(ndarray::s![start..start + chunk.nrows(), ..])
            .assign(&probs);
    }
    Ok(out)
}

/// Reliability margin from precomputed probability rows: mean clean-label
/// log-likelihood over the reliable samples minus the mean over all samples
/// of the class-averaged log-likelihood.
pub fn delta_from_probs(
    probs: ArrayView2<f64>,
    clean: &[usize],
    reliable: impl Fn(usize) -> bool,
) -> Result<f64> {
    if probs.nrows() != clean.len() {
        return Err(Error::Shape(format!(
            "{} probability rows for {} labels",
            probs.nrows(),
            clean.len()
        )));
    }
    let (lhs, _) = shifted_mean(
        (0..clean.len())
            .filter(|&i| reliable(i))
            .map(|i| ln_floor(probs[[i, clean[i]]])),
    )
    .ok_or_else(|| Error::Estimation("no reliable samples".into()))?;
    let (rhs, _) = shifted_mean(probs.rows().into_iter().map(|row| {
        shifted_mean(row.iter().map(|&p| ln_floor(p)))
            .expect("nonempty row")
            .0
    }))
    .ok_or_else(|| Error::Estimation("empty dataset".into()))?;
    Ok(lhs - rhs)
}

/// Reliability margin of `model` on `ds` given the mismatch set in `guidance`.
pub fn estimate_delta(model: &NetworkState, ds: &Dataset, guidance: &Guidance) -> Result<f64> {
    let clean = ds
        .clean_labels()
        .ok_or_else(|| Error::Estimation("reliability margin needs clean labels".into()))?;
    if guidance.mismatch.population() != ds.len() {
        return Err(Error::Shape("mismatch set does not match the dataset".into()));
    }
    let probs = probs_of(model, ds.features().view())?;
    delta_from_probs(probs.view(), clean, |i| !guidance.mismatch.contains(i))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub alpha: f64,
    pub kappa_idn: f64,
    pub kappa_cdn: f64,
    pub rho: f64,
    pub delta: f64,
    pub r_mix: f64,
    pub r_mix_se: f64,
    pub r_sel: f64,
    pub r_sel_se: f64,
    pub gap_bound: f64,
    pub holds: bool,
}

impl RiskReport {
    /// `r_sel <= r_mix` without the bound term.
    pub fn weak_holds(&self) -> bool {
        self.r_sel <= self.r_mix
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// A pending Monte-Carlo draw: mixed input plus its two-endpoint target.
struct Draw {
    i: usize,
    j: usize,
    lambda: f64,
    a: usize,
    b: usize,
}

/// Evaluates the composite loss of every draw, in chunks.
fn draw_losses(model: &NetworkState, ds: &Dataset, draws: &[Draw]) -> Result<Vec<f64>> {
    let mut losses = Vec::with_capacity(draws.len());
    for chunk in draws.chunks(4096) {
        let mut inputs = Array2::zeros((chunk.len(), ds.dim()));
        for (r, d) in chunk.iter().enumerate() {
            let mut row = inputs.row_mut(r);
            row.assign(&ds.row(d.i));
            if d.lambda != 1.0 {
                row *= d.lambda;
                row.scaled_add(1.0 - d.lambda, &ds.row(d.j));
            }
        }
        let probs = model.forward(inputs.view())?;
        losses.extend(chunk.iter().enumerate().map(|(r, d)| {
            let la = -ln_floor(probs[[r, d.a]]);
            if d.lambda == 1.0 {
                la
            } else {
                la - (1.0 - d.lambda) * (la + ln_floor(probs[[r, d.b]]))
            }
        }));
    }
    Ok(losses)
}

/// Monte-Carlo estimates of the Mixup and SelectMix risks of a fixed model.
///
/// `r_mix` averages `num_draws` random pairs `(i, j)` with
/// `lambda ~ Beta(alpha, alpha)` and observed labels on both sides.
/// `r_sel` is stratified by the mismatch set: the reliable part (used
/// unmixed) is averaged exactly over all reliable samples, the mismatched
/// part by `num_draws` draws of a mismatched sample, its partner and
/// `lambda`. Standard errors cover the sampled parts only.
pub fn estimate_risks(
    model: &NetworkState,
    ds: &Dataset,
    guidance: &Guidance,
    alpha: f64,
    num_draws: usize,
    seed: u64,
) -> Result<RiskReport> {
    if num_draws < MIN_DRAWS {
        return Err(Error::Estimation(format!(
            "need at least {MIN_DRAWS} draws, got {num_draws}"
        )));
    }
    if ds.clean_labels().is_none() {
        return Err(Error::Estimation("risk estimation needs clean labels".into()));
    }
    if guidance.oof.len() != ds.len() || guidance.mismatch.population() != ds.len() {
        return Err(Error::Shape("guidance does not match the dataset".into()));
    }
    let kappas = kappa(alpha)?;
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::Spec(e.to_string()))?;
    let n = ds.len();
    let noisy = ds.noisy_labels();
    let pred = guidance.oof.pred_labels();

    let mut rng_mix = rng::stream(seed, &[rng::RISK, 0]);
    let mix_draws: Vec<Draw> = (0..num_draws)
        .map(|_| {
            let i = rng_mix.random_range(0..n);
            let j = rng_mix.random_range(0..n);
            let lambda = beta.sample(&mut rng_mix);
            Draw {
                i,
                j,
                lambda,
                a: noisy[i],
                b: noisy[j],
            }
        })
        .collect();
    let (r_mix, r_mix_se) = mean_se(&draw_losses(model, ds, &mix_draws)?);

    let rho = guidance.mismatch.rho();
    let reliable: Vec<Draw> = (0..n)
        .filter(|&i| !guidance.mismatch.contains(i))
        .map(|i| Draw {
            i,
            j: i,
            lambda: 1.0,
            a: noisy[i],
            b: noisy[i],
        })
        .collect();
    let reliable_mean = shifted_mean(draw_losses(model, ds, &reliable)?).map(|(m, _)| m);

    let mismatched = guidance.mismatch.indices();
    let mut rng_sel = rng::stream(seed, &[rng::RISK, 1]);
    let sel_draws: Vec<Draw> = if mismatched.is_empty() {
        Vec::new()
    } else {
        (0..num_draws)
            .map(|_| {
                let i = mismatched[rng_sel.random_range(0..mismatched.len())];
                match select_partner(
                    i,
                    noisy[i],
                    &guidance.index,
                    &guidance.oof,
                    PartnerPool::ReliablePredClass,
                    &mut rng_sel,
                ) {
                    Some(j) => Draw {
                        i,
                        j,
                        lambda: beta.sample(&mut rng_sel),
                        a: noisy[i],
                        b: pred[i],
                    },
                    None => Draw {
                        i,
                        j: i,
                        lambda: 1.0,
                        a: noisy[i],
                        b: noisy[i],
                    },
                }
            })
            .collect()
    };
    let (r_sel, r_sel_se) = match (reliable_mean, sel_draws.is_empty()) {
        (Some(rel), true) => (rel, 0.0),
        (rel, false) => {
            let (mis, se) = mean_se(&draw_losses(model, ds, &sel_draws)?);
            match rel {
                Some(rel) => (rel + rho * (mis - rel), rho * se),
                None => (mis, se),
            }
        }
        (None, true) => unreachable!("a nonempty dataset is either reliable or mismatched"),
    };

    let delta = if rho < 1.0 {
        estimate_delta(model, ds, guidance)?
    } else {
        return Err(Error::Estimation("every sample is mismatched; delta undefined".into()));
    };
    let gap_bound = kappas.kappa_cdn * delta * rho;
    let slack = HOLDS_TOLERANCE_SE * (r_mix_se.powi(2) + r_sel_se.powi(2)).sqrt();
    Ok(RiskReport {
        alpha,
        kappa_idn: kappas.kappa_idn,
        kappa_cdn: kappas.kappa_cdn,
        rho,
        delta,
        r_mix,
        r_mix_se,
        r_sel,
        r_sel_se,
        gap_bound,
        holds: r_sel <= r_mix - gap_bound + slack,
    })
}
