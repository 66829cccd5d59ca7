//! Datasets: IDX ingestion, Gaussian generators and label-noise channels.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::crossval::OofPredictions;
use crate::error::{Error, Result};
use crate::rng;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Training or test data with clean labels (when known) and observed labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    clean_labels: Option<Vec<usize>>,
    noisy_labels: Vec<usize>,
    num_classes: usize,
    flip_mask: Option<Vec<bool>>,
}

impl Dataset {
    /// A dataset whose observed labels are its clean labels.
    pub fn new(features: Array2<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        check_labels(&features, &labels, num_classes)?;
        let flips = vec![false; labels.len()];
        Ok(Dataset {
            features,
            clean_labels: Some(labels.clone()),
            noisy_labels: labels,
            num_classes,
            flip_mask: Some(flips),
        })
    }

    /// A dataset where only the observed (possibly noisy) labels are known.
    pub fn unlabeled_truth(
        features: Array2<f64>,
        noisy_labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        check_labels(&features, &noisy_labels, num_classes)?;
        Ok(Dataset {
            features,
            clean_labels: None,
            noisy_labels,
            num_classes,
            flip_mask: None,
        })
    }

    pub fn len(&self) -> usize {
        self.noisy_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.noisy_labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn clean_labels(&self) -> Option<&[usize]> {
        self.clean_labels.as_deref()
    }

    pub fn noisy_labels(&self) -> &[usize] {
        &self.noisy_labels
    }

    pub fn flip_mask(&self) -> Option<&[bool]> {
        self.flip_mask.as_deref()
    }

    pub fn flipped_count(&self) -> usize {
        self.flip_mask().map_or(0, |m| m.iter().filter(|&&f| f).count())
    }

    /// Replaces the observed labels, recomputing the flip mask against the
    /// clean labels when those are known.
    pub fn with_noisy_labels(&self, noisy_labels: Vec<usize>) -> Result<Self> {
        if noisy_labels.len() != self.len() {
            return Err(Error::Shape(format!(
                "{} labels for {} samples",
                noisy_labels.len(),
                self.len()
            )));
        }
        check_labels(&self.features, &noisy_labels, self.num_classes)?;
        let flip_mask = self
            .clean_labels
            .as_ref()
            .map(|clean| clean.iter().zip(&noisy_labels).map(|(c, n)| c != n).collect());
        Ok(Dataset {
            features: self.features.clone(),
            clean_labels: self.clean_labels.clone(),
            noisy_labels,
            num_classes: self.num_classes,
            flip_mask,
        })
    }

    /// Overrides the class count, e.g. when a subset misses the top classes.
    pub fn with_num_classes(mut self, num_classes: usize) -> Result<Self> {
        check_labels(&self.features, &self.noisy_labels, num_classes)?;
        if let Some(clean) = &self.clean_labels {
            check_labels(&self.features, clean, num_classes)?;
        }
        self.num_classes = num_classes;
        Ok(self)
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Shape(format!("index {bad} out of {} samples", self.len())));
        }
        let pick = |v: &Vec<usize>| indices.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Ok(Dataset {
            features: self.features.select(Axis(0), indices),
            clean_labels: self.clean_labels.as_ref().map(pick),
            noisy_labels: pick(&self.noisy_labels),
            num_classes: self.num_classes,
            flip_mask: self
                .flip_mask
                .as_ref()
                .map(|m| indices.iter().map(|&i| m[i]).collect()),
        })
    }

    /// Writes `feature_0..feature_{d-1},clean_label,noisy_label,flipped`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.dim()).map(|j| format!("feature_{j}")).collect();
        header.extend(["clean_label", "noisy_label", "flipped"].map(String::from));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut record: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            record.push(
                self.clean_labels
                    .as_ref()
                    .map_or_else(String::new, |c| c[i].to_string()),
            );
            record.push(self.noisy_labels[i].to_string());
            record.push(
                self.flip_mask
                    .as_ref()
                    .map_or_else(String::new, |m| u8::from(m[i]).to_string()),
            );
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn check_labels(features: &Array2<f64>, labels: &[usize], num_classes: usize) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::Input("a dataset needs at least one sample".into()));
    }
    if features.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} feature rows but {} labels",
            features.nrows(),
            labels.len()
        )));
    }
    if num_classes == 0 {
        return Err(Error::Input("class count must be positive".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(Error::Input(format!("label {bad} outside {num_classes} classes")));
    }
    Ok(())
}

struct IdxReader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> IdxReader<'a> {
    fn fail(&self, field: &str) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            field: field.to_string(),
        }
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        let end = self.pos + 4;
        let chunk = self.bytes.get(self.pos..end).ok_or_else(|| self.fail(field))?;
        self.pos = end;
        Ok(u32::from_be_bytes(chunk.try_into().expect("4 bytes")))
    }

    fn payload(&self, len: usize) -> Result<&'a [u8]> {
        match self.bytes.len().checked_sub(self.pos) {
            Some(rest) if rest == len => Ok(&self.bytes[self.pos..]),
            _ => Err(self.fail("payload length")),
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an IDX image file (`0x00000803`, N x rows x cols) and its label file
/// (`0x00000801`, N). Pixels become `byte / 255`, flattened row-major.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let image_bytes = read_file(images_path)?;
    let mut images = IdxReader {
        path: images_path,
        bytes: &image_bytes,
        pos: 0,
    };
    if images.u32("magic number")? != IDX_IMAGES_MAGIC {
        return Err(images.fail("magic number"));
    }
    let count = images.u32("image count")? as usize;
    let rows = images.u32("row count")? as usize;
    let cols = images.u32("column count")? as usize;
    let pixels = images.payload(count * rows * cols)?;

    let label_bytes = read_file(labels_path)?;
    let mut labels = IdxReader {
        path: labels_path,
        bytes: &label_bytes,
        pos: 0,
    };
    if labels.u32("magic number")? != IDX_LABELS_MAGIC {
        return Err(labels.fail("magic number"));
    }
    let label_count = labels.u32("label count")? as usize;
    if label_count != count {
        return Err(labels.fail("label count (differs from image count)"));
    }
    let raw_labels = labels.payload(label_count)?;
    if count == 0 {
        return Err(images.fail("image count (zero)"));
    }

    let features = Array2::from_shape_vec(
        (count, rows * cols),
        pixels.iter().map(|&b| f64::from(b) / 255.0).collect(),
    )
    .expect("payload length checked");
    let labels: Vec<usize> = raw_labels.iter().map(|&b| usize::from(b)).collect();
    let num_classes = labels.iter().max().map_or(1, |m| m + 1);
    Dataset::new(features, labels, num_classes)
}

/// Writes a dataset back as an IDX image/label pair with `rows x cols` images.
/// Features are mapped to bytes as `round(255 * v)`; labels written are the
/// clean labels when known, otherwise the observed ones.
pub fn write_idx(
    ds: &Dataset,
    images_path: &Path,
    labels_path: &Path,
    rows: usize,
    cols: usize,
) -> Result<()> {
    if rows * cols != ds.dim() {
        return Err(Error::Shape(format!(
            "{rows}x{cols} images cannot hold {} features",
            ds.dim()
        )));
    }
    if ds.num_classes() > 256 {
        return Err(Error::Input("IDX labels are single bytes".into()));
    }
    let n = ds.len() as u32;
    let mut img = Vec::with_capacity(16 + ds.features.len());
    for word in [IDX_IMAGES_MAGIC, n, rows as u32, cols as u32] {
        img.extend_from_slice(&word.to_be_bytes());
    }
    for &v in ds.features.iter() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Input(format!("feature {v} outside [0, 1]")));
        }
        img.push((v * 255.0).round() as u8);
    }
    let labels = ds.clean_labels().unwrap_or(ds.noisy_labels());
    let mut lab = Vec::with_capacity(8 + labels.len());
    for word in [IDX_LABELS_MAGIC, n] {
        lab.extend_from_slice(&word.to_be_bytes());
    }
    lab.extend(labels.iter().map(|&y| y as u8));
    fs::write(images_path, img).map_err(|e| Error::io(images_path, e))?;
    fs::write(labels_path, lab).map_err(|e| Error::io(labels_path, e))?;
    Ok(())
}

/// Isotropic Gaussian classes around fixed means.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub per_class_count: usize,
    pub dim: usize,
    /// `num_classes x dim` class means.
    pub means: Array2<f64>,
    pub stddev: f64,
}

impl SyntheticSpec {
    /// Class `c` centred at `separation * e_c`; needs `dim >= num_classes`.
    pub fn on_axes(
        num_classes: usize,
        per_class_count: usize,
        dim: usize,
        separation: f64,
        stddev: f64,
    ) -> Result<Self> {
        if dim < num_classes {
            return Err(Error::Spec(format!(
                "{num_classes} axis-aligned means need at least {num_classes} dimensions"
            )));
        }
        let mut means = Array2::zeros((num_classes, dim));
        for c in 0..num_classes {
            means[[c, c]] = separation;
        }
        let spec = SyntheticSpec {
            num_classes,
            per_class_count,
            dim,
            means,
            stddev,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.per_class_count == 0 || self.dim == 0 {
            return Err(Error::Spec("class count, per-class count and dim must be positive".into()));
        }
        if self.means.dim() != (self.num_classes, self.dim) {
            return Err(Error::Spec(format!(
                "means are {:?}, expected ({}, {})",
                self.means.dim(),
                self.num_classes,
                self.dim
            )));
        }
        if !(self.stddev >= 0.0 && self.stddev.is_finite()) {
            return Err(Error::Spec("stddev must be finite and nonnegative".into()));
        }
        for a in 0..self.num_classes {
            for b in a + 1..self.num_classes {
                if self.means.row(a) == self.means.row(b) {
                    return Err(Error::Spec(format!("classes {a} and {b} share a mean")));
                }
            }
        }
        Ok(())
    }
}

/// Samples `per_class_count` points per class, grouped by class in order.
pub fn gen_gaussian(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    gen_gaussian_stream(spec, &mut rng::stream(seed, &[rng::SYNTH_TRAIN]))
}

pub(crate) fn gen_gaussian_stream(spec: &SyntheticSpec, rng: &mut rng::Rng) -> Result<Dataset> {
    spec.validate()?;
    let n = spec.num_classes * spec.per_class_count;
    let mut features = Array2::zeros((n, spec.dim));
    let mut labels = Vec::with_capacity(n);
    for (i, mut row) in features.rows_mut().into_iter().enumerate() {
        let c = i / spec.per_class_count;
        for (x, &m) in row.iter_mut().zip(spec.means.row(c)) {
            let z: f64 = StandardNormal.sample(rng);
            *x = m + spec.stddev * z;
        }
        labels.push(c);
    }
    Dataset::new(features, labels, spec.num_classes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Symmetric,
    Asymmetric,
    InstanceDependent,
}

impl NoiseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::Symmetric => "symmetric",
            NoiseKind::Asymmetric => "asymmetric",
            NoiseKind::InstanceDependent => "instance_dependent",
        }
    }
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" | "sym" => Ok(NoiseKind::Symmetric),
            "asymmetric" | "asym" => Ok(NoiseKind::Asymmetric),
            "instance_dependent" | "idn" => Ok(NoiseKind::InstanceDependent),
            other => Err(Error::Config(format!("unknown noise kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub rate: f64,
    /// Flip destination per source class (asymmetric only). Classes without
    /// an entry are never flipped.
    pub pair_map: Option<BTreeMap<usize, usize>>,
    /// Slope of the flip-probability curve (instance-dependent only).
    pub idn_sharpness: f64,
}

impl NoiseSpec {
    pub fn symmetric(rate: f64) -> Self {
        NoiseSpec {
            kind: NoiseKind::Symmetric,
            rate,
            pair_map: None,
            idn_sharpness: 4.0,
        }
    }

    pub fn asymmetric(rate: f64, pair_map: BTreeMap<usize, usize>) -> Self {
        NoiseSpec {
            kind: NoiseKind::Asymmetric,
            rate,
            pair_map: Some(pair_map),
            idn_sharpness: 4.0,
        }
    }

    pub fn instance_dependent(rate: f64, idn_sharpness: f64) -> Self {
        NoiseSpec {
            kind: NoiseKind::InstanceDependent,
            rate,
            pair_map: None,
            idn_sharpness,
        }
    }

    /// `c -> (c + 1) mod C`.
    pub fn cyclic_pairs(num_classes: usize) -> BTreeMap<usize, usize> {
        (0..num_classes).map(|c| (c, (c + 1) % num_classes)).collect()
    }

    fn validate(&self, num_classes: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::Spec(format!("noise rate {} outside [0, 1]", self.rate)));
        }
        if self.rate > 0.0 && num_classes < 2 {
            return Err(Error::Spec("label noise needs at least two classes".into()));
        }
        match self.kind {
            NoiseKind::Asymmetric => {
                let map = self
                    .pair_map
                    .as_ref()
                    .ok_or_else(|| Error::Spec("asymmetric noise needs a pair map".into()))?;
                for (&from, &to) in map {
                    if from == to {
                        return Err(Error::Spec(format!("pair map sends class {from} to itself")));
                    }
                    if from >= num_classes || to >= num_classes {
                        return Err(Error::Spec(format!(
                            "pair {from}->{to} outside {num_classes} classes"
                        )));
                    }
                }
            }
            NoiseKind::InstanceDependent => {
                if !(self.idn_sharpness > 0.0 && self.idn_sharpness.is_finite()) {
                    return Err(Error::Spec("IDN sharpness must be positive".into()));
                }
            }
            NoiseKind::Symmetric => {}
        }
        Ok(())
    }
}

/// Uniform draw among the `num_classes - 1` classes other than `clean`.
fn other_class<R: Rng + ?Sized>(rng: &mut R, clean: usize, num_classes: usize) -> usize {
    let k = rng.random_range(0..num_classes - 1);
    if k >= clean {
        k + 1
    } else {
        k
    }
}

/// Per-sample flip probabilities for the instance-dependent channel.
///
/// Each sample gets `u` = its within-class rank of distance to the class
/// mean, scaled to `[0, 1]` and centred at zero. Raw probabilities
/// `sigmoid(sharpness * u)` are rescaled so their mean equals `rate`, then
/// capped at 1.
pub fn idn_flip_probabilities(ds: &Dataset, clean: &[usize], rate: f64, sharpness: f64) -> Vec<f64> {
    let n = ds.len();
    let c = ds.num_classes();
    let mut sums = Array2::<f64>::zeros((c, ds.dim()));
    let mut counts = vec![0usize; c];
    for (i, &y) in clean.iter().enumerate() {
        let mut s = sums.row_mut(y);
        s += &ds.row(i);
        counts[y] += 1;
    }
    let mut by_class: Vec<Vec<(f64, usize)>> = vec![Vec::new(); c];
    for (i, &y) in clean.iter().enumerate() {
        let mean = sums.row(y).mapv(|v| v / counts[y] as f64);
        let dist = (&ds.row(i) - &mean).mapv(|v| v * v).sum();
        by_class[y].push((dist, i));
    }
    let mut u = vec![0.0; n];
    for members in &mut by_class {
        members.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let denom = (members.len().max(2) - 1) as f64;
        for (rank, &(_, i)) in members.iter().enumerate() {
            u[i] = rank as f64 / denom - 0.5;
        }
    }
    let raw: Vec<f64> = u.iter().map(|&u| 1.0 / (1.0 + (-sharpness * u).exp())).collect();
    let mean = raw.iter().sum::<f64>() / n as f64;
    raw.iter().map(|&r| (rate * r / mean).min(1.0)).collect()
}

/// Corrupts the observed labels according to `spec`. Clean labels are kept
/// and the flip mask records every changed label.
pub fn inject_noise(ds: &Dataset, spec: &NoiseSpec, seed: u64) -> Result<Dataset> {
    let clean = ds
        .clean_labels()
        .ok_or_else(|| Error::Input("noise injection needs clean labels".into()))?;
    let c = ds.num_classes();
    spec.validate(c)?;
    let mut rng = rng::stream(seed, &[rng::NOISE]);
    let mut noisy = clean.to_vec();
    if spec.rate == 0.0 {
        return ds.with_noisy_labels(noisy);
    }
    match spec.kind {
        NoiseKind::Symmetric => {
            for (y, &clean) in noisy.iter_mut().zip(clean) {
                if rng.random::<f64>() < spec.rate {
                    *y = other_class(&mut rng, clean, c);
                }
            }
        }
        NoiseKind::Asymmetric => {
            let map = spec.pair_map.as_ref().expect("validated");
            for (y, &clean) in noisy.iter_mut().zip(clean) {
                let flip = rng.random::<f64>() < spec.rate;
                if let (true, Some(&to)) = (flip, map.get(&clean)) {
                    *y = to;
                }
            }
        }
        NoiseKind::InstanceDependent => {
            let probs = idn_flip_probabilities(ds, clean, spec.rate, spec.idn_sharpness);
            for ((y, &clean), &p) in noisy.iter_mut().zip(clean).zip(&probs) {
                if rng.random::<f64>() < p {
                    *y = other_class(&mut rng, clean, c);
                }
            }
        }
    }
    ds.with_noisy_labels(noisy)
}

/// Replaces the observed labels by out-of-fold predicted labels.
pub fn relabel_with_oof(ds: &Dataset, oof: &OofPredictions) -> Result<Dataset> {
    if oof.len() != ds.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} samples",
            oof.len(),
            ds.len()
        )));
    }
    ds.with_noisy_labels(oof.pred_labels().to_vec())
}
