//! Seeded end-to-end experiments: noise injection, out-of-fold guidance,
//! mixed-batch training with per-epoch clean-test evaluation, alpha sweeps
//! and CSV/JSON output.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::crossval::{make_folds, oof_predict, OofPredictions};
use crate::datasets::{gen_gaussian_stream, inject_noise, load_idx, Dataset, NoiseKind, NoiseSpec, SyntheticSpec};
use crate::error::{Error, Result, StageExt};
use crate::mixing::{build_mixed_batch, Guidance, MixKind, MixStrategy, PartnerPool};
use crate::net::{Activation, NetworkSpec, NetworkState, SgdHyper};
use crate::rng;
use crate::theory::{estimate_risks, RiskReport};
use crate::training::{fit, Batch, TrainConfig};

/// `dataset` value selecting the Gaussian generator instead of IDX files.
pub const SYNTHETIC: &str = "synthetic";

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// Flat experiment description; every field doubles as a CLI flag and a
/// config-file key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Directory holding the four IDX files, or `"synthetic"`.
    pub dataset: String,
    /// Keep only the first `n` training samples.
    pub train_subset: Option<usize>,
    /// Keep only the first `n` test samples.
    pub test_size: Option<usize>,

    pub synth_classes: usize,
    pub synth_dim: usize,
    pub synth_per_class: usize,
    pub synth_test_per_class: usize,
    pub synth_separation: f64,
    pub synth_stddev: f64,

    pub noise_kind: NoiseKind,
    pub noise_rate: f64,
    /// Asymmetric flips; defaults to `c -> c + 1 mod C`.
    pub pair_map: Option<BTreeMap<usize, usize>>,
    pub idn_sharpness: f64,

    pub strategy: MixKind,
    pub alpha: f64,
    pub partner_pool: PartnerPool,

    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub weight_decay: f64,
    pub init_scale: f64,

    pub lr: f64,
    pub momentum: f64,
    pub milestones: Vec<usize>,
    pub decay_factor: f64,
    pub epochs: usize,
    pub batch_size: usize,

    pub kfold: usize,
    /// Epochs per fold model; half of `epochs` when unset.
    pub oof_epochs: Option<usize>,

    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: "data/mnist-desk".into(),
            train_subset: Some(10_000),
            test_size: Some(2_000),
            synth_classes: 2,
            synth_dim: 10,
            synth_per_class: 500,
            synth_test_per_class: 250,
            synth_separation: 3.0,
            synth_stddev: 1.0,
            noise_kind: NoiseKind::Symmetric,
            noise_rate: 0.5,
            pair_map: None,
            idn_sharpness: 4.0,
            strategy: MixKind::SelectMix,
            alpha: 1.0,
            partner_pool: PartnerPool::default(),
            hidden: vec![128],
            activation: Activation::Relu,
            weight_decay: 1e-4,
            init_scale: 1.0,
            lr: 0.1,
            momentum: 0.9,
            milestones: vec![15, 23],
            decay_factor: 0.1,
            epochs: 30,
            batch_size: 128,
            kfold: 5,
            oof_epochs: None,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    /// Small synthetic two-class setup.
    pub fn synthetic() -> Self {
        ExperimentConfig {
            dataset: SYNTHETIC.into(),
            train_subset: None,
            test_size: None,
            hidden: vec![16],
            epochs: 20,
            milestones: vec![10, 15],
            batch_size: 32,
            noise_rate: 0.0,
            ..ExperimentConfig::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn is_synthetic(&self) -> bool {
        self.dataset == SYNTHETIC
    }

    pub fn strategy(&self) -> Result<MixStrategy> {
        Ok(MixStrategy::new(self.strategy, self.alpha)?.with_pool(self.partner_pool))
    }

    pub fn noise(&self, num_classes: usize) -> NoiseSpec {
        match self.noise_kind {
            NoiseKind::Symmetric => NoiseSpec::symmetric(self.noise_rate),
            NoiseKind::Asymmetric => NoiseSpec::asymmetric(
                self.noise_rate,
                self.pair_map
                    .clone()
                    .unwrap_or_else(|| NoiseSpec::cyclic_pairs(num_classes)),
            ),
            NoiseKind::InstanceDependent => {
                NoiseSpec::instance_dependent(self.noise_rate, self.idn_sharpness)
            }
        }
    }

    pub fn network(&self, input_dim: usize, num_classes: usize) -> Result<NetworkSpec> {
        let mut widths = vec![input_dim];
        widths.extend(&self.hidden);
        widths.push(num_classes);
        Ok(NetworkSpec::new(widths, self.activation)?
            .with_weight_decay(self.weight_decay)
            .with_init_scale(self.init_scale))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            sgd: SgdHyper {
                base_lr: self.lr,
                momentum: self.momentum,
                milestones: self.milestones.clone(),
                decay_factor: self.decay_factor,
            },
            epochs: self.epochs,
            batch_size: self.batch_size,
        }
    }

    /// Schedule of the fold models: `oof_epochs` long, milestones rescaled.
    pub fn fold_train_config(&self) -> TrainConfig {
        let main = self.train_config();
        let epochs = self.oof_epochs.unwrap_or(self.epochs.div_ceil(2)).max(1);
        TrainConfig {
            sgd: main.sgd.rescaled(self.epochs, epochs),
            epochs,
            batch_size: main.batch_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        self.strategy()?;
        if self.kfold < 2 {
            return Err(Error::Config(format!("kfold must be at least 2, got {}", self.kfold)));
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(Error::Config(format!("noise rate {} outside [0, 1]", self.noise_rate)));
        }
        if self.train_subset == Some(0) || self.test_size == Some(0) {
            return Err(Error::Config("subset sizes must be positive".into()));
        }
        Ok(())
    }

    /// First 12 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .take(6)
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Noisy training set, clean test set and (when computed) out-of-fold
/// guidance for one configuration.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub cfg: ExperimentConfig,
    pub train: Dataset,
    pub test: Dataset,
    pub net: NetworkSpec,
    pub guidance: Option<Guidance>,
}

/// Training and test data before noise.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    if cfg.is_synthetic() {
        let spec = |per_class| {
            SyntheticSpec::on_axes(
                cfg.synth_classes,
                per_class,
                cfg.synth_dim,
                cfg.synth_separation,
                cfg.synth_stddev,
            )
        };
        let train = gen_gaussian_stream(
            &spec(cfg.synth_per_class)?,
            &mut rng::stream(cfg.seed, &[rng::SYNTH_TRAIN]),
        )?;
        let test = gen_gaussian_stream(
            &spec(cfg.synth_test_per_class)?,
            &mut rng::stream(cfg.seed, &[rng::SYNTH_TEST]),
        )?;
        return Ok((train, test));
    }
    let dir = PathBuf::from(&cfg.dataset);
    let train = load_idx(&dir.join(TRAIN_IMAGES), &dir.join(TRAIN_LABELS))?;
    let test = load_idx(&dir.join(TEST_IMAGES), &dir.join(TEST_LABELS))?;
    let classes = train.num_classes().max(test.num_classes());
    let head = |ds: Dataset, cap: Option<usize>| -> Result<Dataset> {
        let ds = ds.with_num_classes(classes)?;
        match cap {
            Some(n) if n < ds.len() => ds.subset(&(0..n).collect::<Vec<_>>()),
            _ => Ok(ds),
        }
    };
    Ok((head(train, cfg.train_subset)?, head(test, cfg.test_size)?))
}

/// Out-of-fold guidance for `train` under `cfg`.
pub fn compute_guidance(cfg: &ExperimentConfig, train: &Dataset, net: &NetworkSpec) -> Result<Guidance> {
    let plan = make_folds(train.len(), cfg.kfold, cfg.seed).stage("make_folds")?;
    let oof = oof_predict(train, net, &cfg.fold_train_config(), &plan, cfg.seed)
        .stage("oof_predict")?;
    Guidance::new(train, oof).stage("select")
}

/// Loads data, injects noise and computes guidance when the configured
/// strategy needs it, or whenever `force_guidance` is set.
pub fn prepare(cfg: &ExperimentConfig, force_guidance: bool) -> Result<Prepared> {
    cfg.validate().stage("config")?;
    let (clean, test) = load_data(cfg).stage("load")?;
    let net = cfg.network(clean.dim(), clean.num_classes()).stage("config")?;
    let train = inject_noise(&clean, &cfg.noise(clean.num_classes()), cfg.seed)
        .stage("inject_noise")?;
    if cfg.batch_size > train.len() {
        return Err(Error::Config(format!(
            "batch size {} exceeds {} training samples",
            cfg.batch_size,
            train.len()
        ))
        .in_stage("config"));
    }
    let guidance = if force_guidance || cfg.strategy.needs_guidance() {
        Some(compute_guidance(cfg, &train, &net)?)
    } else {
        None
    };
    Ok(Prepared {
        cfg: cfg.clone(),
        train,
        test,
        net,
        guidance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub per_epoch_test_acc: Vec<f64>,
    pub best_acc: f64,
    pub last10_avg: f64,
    /// Mismatch rate; absent for strategies that skip out-of-fold guidance.
    pub rho: Option<f64>,
    pub wall_time_s: f64,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// JSON without the timing field, for reproducibility comparisons.
    pub fn timeless_json(&self) -> Result<String> {
        let mut value = serde_json::to_value(self)?;
        if let Some(obj) = value.as_object_mut() {
            obj.remove("wall_time_s");
        }
        Ok(serde_json::to_string_pretty(&value)?)
    }

    pub fn row(&self) -> ResultRow {
        ResultRow {
            strategy: self.config.strategy.as_str().into(),
            noise_kind: self.config.noise_kind.as_str().into(),
            noise_rate: self.config.noise_rate,
            alpha: self.config.alpha,
            seed: self.config.seed.to_string(),
            best_acc: self.best_acc,
            last10_avg: self.last10_avg,
            rho: self.rho,
            wall_time_s: self.wall_time_s,
        }
    }
}

/// Fraction of test samples whose argmax prediction equals the clean label.
pub fn evaluate(model: &NetworkState, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Evaluation("empty test set".into()));
    }
    let clean = test
        .clean_labels()
        .ok_or_else(|| Error::Evaluation("test set has no clean labels".into()))?;
    let pred = model.predict_labels(test.features().view())?;
    let hits = pred.iter().zip(clean).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / test.len() as f64)
}

/// `(best, mean of the final min(10, len) entries)`.
pub fn summarize(series: &[f64]) -> Result<(f64, f64)> {
    if series.is_empty() {
        return Err(Error::Evaluation("empty accuracy series".into()));
    }
    let best = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tail = &series[series.len().saturating_sub(10)..];
    Ok((best, tail.iter().sum::<f64>() / tail.len() as f64))
}

impl Prepared {
    fn guidance_for(&self, strat: &MixStrategy) -> Result<Option<&Guidance>> {
        match (&self.guidance, strat.kind.needs_guidance()) {
            (None, true) => Err(Error::Config(format!(
                "{} needs out-of-fold guidance; prepare it first",
                strat.kind.as_str()
            ))),
            (g, _) => Ok(g.as_ref()),
        }
    }

    /// Trains under `strat`, evaluating on the clean test set after every
    /// epoch (`on_epoch(epoch, accuracy, model)`).
    pub fn train_with<F>(&self, strat: &MixStrategy, mut on_epoch: F) -> Result<NetworkState>
    where
        F: FnMut(usize, f64, &NetworkState),
    {
        let guidance = self.guidance_for(strat)?;
        let classes = self.train.num_classes();
        let seed = self.cfg.seed;
        fit(
            &self.net,
            self.train.len(),
            &self.cfg.train_config(),
            seed,
            &[],
            |epoch, step, idx| {
                let mut rng = rng::stream(seed, &[rng::MIX, epoch as u64, step as u64]);
                let mb = build_mixed_batch(idx, &self.train, guidance, strat, &mut rng)?;
                Ok(Batch {
                    targets: mb.soft_targets(classes),
                    inputs: mb.inputs,
                })
            },
            |epoch, state| {
                let acc = evaluate(state, &self.test).stage("evaluate")?;
                on_epoch(epoch, acc, state);
                Ok(())
            },
        )
        .map_err(|e| match e {
            e @ Error::Stage { .. } => e,
            e => e.in_stage("train"),
        })
    }

    /// Full report for `strat` (alpha and partner pool taken from `strat`).
    pub fn run(&self, strat: &MixStrategy) -> Result<ExperimentReport> {
        self.run_timed(strat, Instant::now())
    }

    fn run_timed(&self, strat: &MixStrategy, start: Instant) -> Result<ExperimentReport> {
        let mut series = Vec::with_capacity(self.cfg.epochs);
        self.train_with(strat, |_, acc, _| series.push(acc))?;
        let (best_acc, last10_avg) = summarize(&series)?;
        let config = ExperimentConfig {
            strategy: strat.kind,
            alpha: strat.alpha,
            partner_pool: strat.partner_pool,
            ..self.cfg.clone()
        };
        Ok(ExperimentReport {
            config_hash: config.hash(),
            config,
            per_epoch_test_acc: series,
            best_acc,
            last10_avg,
            rho: self
                .guidance
                .as_ref()
                .filter(|_| strat.kind.needs_guidance())
                .map(|g| g.mismatch.rho()),
            wall_time_s: start.elapsed().as_secs_f64(),
        })
    }
}

/// Full pipeline for one configuration.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    let prepared = prepare(cfg, false)?;
    prepared.run_timed(&cfg.strategy().stage("config")?, start)
}

/// Trains a model under the configured strategy and estimates the Mixup and
/// SelectMix risks on the noisy training set.
pub fn theory_check(cfg: &ExperimentConfig, num_draws: usize) -> Result<RiskReport> {
    let prepared = prepare(cfg, true)?;
    let model = prepared.train_with(&cfg.strategy().stage("config")?, |_, _, _| {})?;
    let guidance = prepared.guidance.as_ref().expect("forced guidance");
    estimate_risks(&model, &prepared.train, guidance, cfg.alpha, num_draws, cfg.seed)
        .stage("estimate_risks")
}

/// One line of the results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub strategy: String,
    pub noise_kind: String,
    pub noise_rate: f64,
    pub alpha: f64,
    /// A seed, or `mean` / `std` for aggregate rows.
    pub seed: String,
    pub best_acc: f64,
    pub last10_avg: f64,
    pub rho: Option<f64>,
    pub wall_time_s: f64,
}

pub const RESULTS_HEADER: &str =
    "strategy,noise_kind,noise_rate,alpha,seed,best_acc,last10_avg,rho,wall_time_s";

pub fn write_rows<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(RESULTS_HEADER.split(','))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io("<results>", e))?;
    Ok(())
}

/// Mean and sample standard deviation rows over `rows` (one group).
pub fn aggregate_rows(rows: &[ResultRow]) -> Vec<ResultRow> {
    let Some(first) = rows.first() else {
        return Vec::new();
    };
    let stats = |f: &dyn Fn(&ResultRow) -> f64| {
        let n = rows.len() as f64;
        let mean = rows.iter().map(f).sum::<f64>() / n;
        let var = if rows.len() > 1 {
            rows.iter().map(|r| (f(r) - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        (mean, var.sqrt())
    };
    let (best, best_sd) = stats(&|r| r.best_acc);
    let (last, last_sd) = stats(&|r| r.last10_avg);
    let (time, time_sd) = stats(&|r| r.wall_time_s);
    let rho = rows
        .iter()
        .map(|r| r.rho)
        .collect::<Option<Vec<f64>>>()
        .map(|v| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let sd = if v.len() > 1 {
                (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            (mean, sd)
        });
    let make = |seed: &str, best, last, rho, time| ResultRow {
        seed: seed.into(),
        best_acc: best,
        last10_avg: last,
        rho,
        wall_time_s: time,
        ..first.clone()
    };
    vec![
        make("mean", best, last, rho.map(|r| r.0), time),
        make("std", best_sd, last_sd, rho.map(|r| r.1), time_sd),
    ]
}

/// A failed sweep cell.
#[derive(Debug)]
pub struct CellFailure {
    pub alpha: f64,
    pub seed: u64,
    pub error: Error,
}

/// Per-cell reports plus the emitted table.
#[derive(Debug, Default)]
pub struct SweepTable {
    pub reports: Vec<ExperimentReport>,
    /// Per-cell rows followed by per-alpha `mean` and `std` rows.
    pub rows: Vec<ResultRow>,
    pub failures: Vec<CellFailure>,
}

impl SweepTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_rows(&self.rows, out)
    }

    /// `mean` row for `alpha`, if any cell completed.
    pub fn mean_row(&self, alpha: f64) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.seed == "mean" && r.alpha == alpha)
    }
}

/// Runs the cross product `alphas x seeds`. Out-of-fold guidance does not
/// depend on alpha and is computed once per seed. Failed cells are recorded
/// and the rest of the table is still produced.
pub fn sweep_alpha(base: &ExperimentConfig, alphas: &[f64], seeds: &[u64]) -> Result<SweepTable> {
    if alphas.is_empty() || seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one alpha and one seed".into()));
    }
    let mut table = SweepTable::default();
    let mut prepared: BTreeMap<u64, std::result::Result<Prepared, String>> = BTreeMap::new();
    let mut cells: BTreeMap<usize, Vec<ResultRow>> = BTreeMap::new();
    for (a, &alpha) in alphas.iter().enumerate() {
        for &seed in seeds {
            let start = Instant::now();
            let cfg = ExperimentConfig {
                alpha,
                seed,
                ..base.clone()
            };
            let prep = prepared
                .entry(seed)
                .or_insert_with(|| prepare(&cfg, false).map_err(|e| e.to_string()));
            let result = match prep {
                Ok(p) => cfg.strategy().and_then(|s| p.run_timed(&s, start)),
                Err(msg) => Err(Error::Config(format!("preparation failed: {msg}"))),
            };
            match result {
                Ok(report) => {
                    let row = report.row();
                    table.rows.push(row.clone());
                    cells.entry(a).or_default().push(row);
                    table.reports.push(report);
                }
                Err(error) => table.failures.push(CellFailure { alpha, seed, error }),
            }
        }
    }
    for rows in cells.values() {
        table.rows.extend(aggregate_rows(rows));
    }
    Ok(table)
}

/// OOF predictions CSV plus the mismatch index file next to it.
pub fn write_oof(oof: &OofPredictions, guidance: &Guidance, csv_path: &Path) -> Result<PathBuf> {
    let file = std::fs::File::create(csv_path).map_err(|e| Error::io(csv_path, e))?;
    oof.write_csv(std::io::BufWriter::new(file))?;
    let m_path = csv_path.with_extension("mismatch.txt");
    let file = std::fs::File::create(&m_path).map_err(|e| Error::io(&m_path, e))?;
    guidance
        .mismatch
        .write_to(std::io::BufWriter::new(file))
        .map_err(|e| Error::io(&m_path, e))?;
    Ok(m_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn summarize_examples() {
        let (best, last) = summarize(&[0.5, 0.9, 0.8]).unwrap();
        assert_eq!(best, 0.9);
        assert_relative_eq!(last, 2.2 / 3.0, epsilon = 1e-12);
        assert_eq!(summarize(&[0.7; 4]).unwrap(), (0.7, 0.7));
        let mut series = vec![0.1; 10];
        series.extend([0.9; 10]);
        assert_relative_eq!(summarize(&series).unwrap().1, 0.9, epsilon = 1e-12);
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn evaluate_examples() {
        let spec = NetworkSpec::new(vec![2, 3], Activation::Relu).unwrap();
        let uniform = NetworkState::zeros(&spec).unwrap();
        let one = Dataset::new(array![[1.0, 2.0]], vec![2], 3).unwrap();
        // uniform ties resolve to class 0
        assert_eq!(evaluate(&uniform, &one).unwrap(), 0.0);
        let empty = one.subset(&[]).unwrap();
        assert!(matches!(evaluate(&uniform, &empty), Err(Error::Evaluation(_))));
        let blind = Dataset::unlabeled_truth(array![[0.0, 0.0]], vec![0], 3).unwrap();
        assert!(matches!(evaluate(&uniform, &blind), Err(Error::Evaluation(_))));
    }

    #[test]
    fn config_round_trips_through_flat_json() {
        let cfg = ExperimentConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
        let partial = ExperimentConfig::from_json(r#"{"strategy": "mixup", "alpha": 4.0}"#).unwrap();
        assert_eq!(partial.strategy, MixKind::Mixup);
        assert_eq!(partial.epochs, 30);
        assert!(ExperimentConfig::from_json(r#"{"epoch": 3}"#).is_err());
    }

    #[test]
    fn config_hash_tracks_fields() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig { seed: 1, ..a.clone() };
        assert_eq!(a.hash().len(), 12);
        assert_eq!(a.hash(), a.clone().hash());
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn fold_schedule_is_half_length() {
        let cfg = ExperimentConfig::default();
        let fold = cfg.fold_train_config();
        assert_eq!(fold.epochs, 15);
        assert_eq!(fold.sgd.milestones, vec![8, 12]);
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let ok = ExperimentConfig::synthetic();
        ok.validate().unwrap();
        for bad in [
            ExperimentConfig { epochs: 0, ..ok.clone() },
            ExperimentConfig { kfold: 1, ..ok.clone() },
            ExperimentConfig { alpha: 0.0, ..ok.clone() },
            ExperimentConfig { noise_rate: 1.5, ..ok.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
        let huge = ExperimentConfig {
            batch_size: 5000,
            ..ok
        };
        assert!(matches!(prepare(&huge, false), Err(Error::Stage { stage: "config", .. })));
    }

    #[test]
    fn csv_rows_have_fixed_header() {
        let row = ResultRow {
            strategy: "selectmix".into(),
            noise_kind: "symmetric".into(),
            noise_rate: 0.5,
            alpha: 1.0,
            seed: "3".into(),
            best_acc: 0.75,
            last10_avg: 0.5,
            rho: None,
            wall_time_s: 2.0,
        };
        let mut buf = Vec::new();
        write_rows(std::slice::from_ref(&row), &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            format!("{RESULTS_HEADER}\nselectmix,symmetric,0.5,1.0,3,0.75,0.5,,2.0\n")
        );
        let other = ResultRow {
            seed: "4".into(),
            best_acc: 0.25,
            ..row.clone()
        };
        let agg = aggregate_rows(&[row, other]);
        assert_eq!(agg[0].seed, "mean");
        assert_eq!(agg[0].best_acc, 0.5);
        assert_relative_eq!(agg[1].best_acc, 0.125f64.sqrt(), epsilon = 1e-12);
        assert_eq!(agg[1].rho, None);
    }
}
