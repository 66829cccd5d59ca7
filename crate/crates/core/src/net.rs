//! Dense softmax classifier with hand-derived backprop and SGD with momentum.
//!
//! Layer `l` maps `(batch, in) -> (batch, out)` as `z = a W + b`, with weights
//! stored `(in, out)`. Hidden layers apply the configured activation, the last
//! layer applies softmax. The training objective is the mean soft-target
//! cross-entropy over the batch plus `weight_decay / 2 * |theta|^2` over all
//! weights and biases.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound applied to probabilities before any logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
        }
    }

    /// Multiplies `upstream` by the derivative, expressed through the
    /// activation output `a`.
    fn backprop(self, upstream: &mut Array2<f64>, a: &Array2<f64>) {
        match self {
            Activation::Relu => Zip::from(upstream).and(a).for_each(|g, &a| {
                if a <= 0.0 {
                    *g = 0.0;
                }
            }),
            Activation::Tanh => Zip::from(upstream)
                .and(a)
                .for_each(|g, &a| *g *= 1.0 - a * a),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Input width, hidden widths, then the class count.
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub weight_decay: f64,
    pub init_scale: f64,
}

impl NetworkSpec {
    pub fn new(layer_widths: Vec<usize>, activation: Activation) -> Result<Self> {
        let spec = NetworkSpec {
            layer_widths,
            activation,
            weight_decay: 0.0,
            init_scale: 1.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }

    pub fn with_init_scale(mut self, init_scale: f64) -> Self {
        self.init_scale = init_scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::Spec("a network needs at least input and output widths".into()));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::Spec("layer widths must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Spec("weight decay must be finite and nonnegative".into()));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Spec("init scale must be positive".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_widths.last().expect("validated widths")
    }

    pub fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }
}

/// Per-layer weights and biases. Also used for gradients and momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Params {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        let pairs = spec.layer_widths.windows(2);
        Params {
            weights: pairs.clone().map(|w| Array2::zeros((w[0], w[1]))).collect(),
            biases: pairs.map(|w| Array1::zeros(w[1])).collect(),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    fn same_shape(&self, other: &Params) -> bool {
        self.num_layers() == other.num_layers()
            && self
                .weights
                .iter()
                .zip(&other.weights)
                .all(|(a, b)| a.dim() == b.dim())
            && self
                .biases
                .iter()
                .zip(&other.biases)
                .all(|(a, b)| a.len() == b.len())
    }

    /// Index of the first layer holding a non-finite entry.
    pub fn first_non_finite_layer(&self) -> Option<usize> {
        (0..self.num_layers()).find(|&l| {
            self.weights[l].iter().any(|v| !v.is_finite())
                || self.biases[l].iter().any(|v| !v.is_finite())
        })
    }

    fn squared_norm(&self) -> f64 {
        let w: f64 = self.weights.iter().map(|w| w.iter().map(|v| v * v).sum::<f64>()).sum();
        let b: f64 = self.biases.iter().map(|b| b.iter().map(|v| v * v).sum::<f64>()).sum();
        w + b
    }

    /// Flat mutable view of every scalar, weights of each layer before its biases.
    pub fn scalars_mut(&mut self) -> Vec<&mut f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.extend(w.iter_mut());
            out.extend(b.iter_mut());
        }
        out
    }

    /// Flat copy of every scalar in the order of [`Params::scalars_mut`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }
}

/// A single validated probability row.
#[derive(Debug, Clone, PartialEq)]
pub struct Probabilities(Vec<f64>);

impl Probabilities {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Input("empty probability vector".into()));
        }
        if values.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::Input("probabilities must lie in (0, 1]".into()));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Input(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Probabilities(values))
    }

    pub fn uniform(classes: usize) -> Self {
        Probabilities(vec![1.0 / classes as f64; classes])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

/// Index of the largest entry; exact ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = k;
        }
    }
    best
}

/// `-sum_k target_k * ln(max(p_k, PROB_FLOOR))`.
pub fn soft_cross_entropy(p: &[f64], target: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), target.len());
    -p.iter()
        .zip(target)
        .map(|(&p, &t)| if t == 0.0 { 0.0 } else { t * p.max(PROB_FLOOR).ln() })
        .sum::<f64>()
}

/// Row-wise softmax with the probability floor applied.
fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| (v / sum).max(PROB_FLOOR));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdHyper {
    pub base_lr: f64,
    pub momentum: f64,
    /// Epochs at which the rate is multiplied by `decay_factor`.
    pub milestones: Vec<usize>,
    pub decay_factor: f64,
}

impl SgdHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Spec("base learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Spec("momentum must lie in [0, 1)".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return Err(Error::Spec("decay factor must lie in (0, 1)".into()));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Spec("milestones must be strictly increasing".into()));
        }
        Ok(())
    }

    /// Step schedule: `base_lr * decay_factor^(milestones <= epoch)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.base_lr * self.decay_factor.powi(passed as i32)
    }

    /// The same schedule shape compressed or stretched to a different epoch budget.
    pub fn rescaled(&self, from_epochs: usize, to_epochs: usize) -> SgdHyper {
        let mut milestones: Vec<usize> = self
            .milestones
            .iter()
            .map(|&m| (m * to_epochs + from_epochs / 2) / from_epochs.max(1))
            .filter(|&m| m > 0)
            .collect();
        milestones.dedup();
        SgdHyper {
            milestones,
            ..self.clone()
        }
    }
}

impl Default for SgdHyper {
    fn default() -> Self {
        SgdHyper {
            base_lr: 0.1,
            momentum: 0.9,
            milestones: vec![100, 150],
            decay_factor: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    spec: NetworkSpec,
    params: Params,
    momentum: Params,
}

impl NetworkState {
    /// Uniform init in `±init_scale / sqrt(fan_in)` for weights and biases,
    /// zero momentum.
    pub fn init<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = Params::zeros(spec);
        for (w, b) in params.weights.iter_mut().zip(params.biases.iter_mut()) {
            let bound = spec.init_scale / (w.nrows() as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            w.iter_mut().for_each(|v| *v = dist.sample(rng));
            b.iter_mut().for_each(|v| *v = dist.sample(rng));
        }
        Ok(NetworkState {
            spec: spec.clone(),
            momentum: Params::zeros(spec),
            params,
        })
    }

    pub fn zeros(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        Ok(NetworkState {
            spec: spec.clone(),
            params: Params::zeros(spec),
            momentum: Params::zeros(spec),
        })
    }

    pub fn from_params(spec: &NetworkSpec, params: Params) -> Result<Self> {
        spec.validate()?;
        let momentum = Params::zeros(spec);
        if !params.same_shape(&momentum) {
            return Err(Error::Shape("parameters do not match the network spec".into()));
        }
        if let Some(layer) = params.first_non_finite_layer() {
            return Err(Error::Input(format!("non-finite parameter in layer {layer}")));
        }
        Ok(NetworkState {
            spec: spec.clone(),
            params,
            momentum,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn momentum(&self) -> &Params {
        &self.momentum
    }

    fn check_inputs(&self, inputs: &ArrayView2<f64>) -> Result<()> {
        if inputs.ncols() != self.spec.input_dim() {
            return Err(Error::Shape(format!(
                "input width {} but network expects {}",
                inputs.ncols(),
                self.spec.input_dim()
            )));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite input feature".into()));
        }
        Ok(())
    }

    /// Activations of every layer; the last entry holds the probabilities.
    fn activations(&self, inputs: &ArrayView2<f64>) -> Vec<Array2<f64>> {
        let last = self.params.num_layers() - 1;
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(last + 1);
        for (l, (w, b)) in self.params.weights.iter().zip(&self.params.biases).enumerate() {
            let mut z = match l {
                0 => inputs.dot(w),
                _ => acts[l - 1].dot(w),
            };
            z += b;
            if l == last {
                softmax_rows(&mut z);
            } else {
                self.spec.activation.apply(&mut z);
            }
            acts.push(z);
        }
        acts
    }

    /// Probability rows for a batch of inputs.
    pub fn forward(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_inputs(&inputs)?;
        Ok(self.activations(&inputs).pop().expect("at least one layer"))
    }

    /// Mean soft cross-entropy plus the weight-decay penalty.
    pub fn objective(&self, inputs: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<f64> {
        let probs = self.forward(inputs)?;
        self.check_targets(&inputs, &targets)?;
        Ok(self.objective_from(&probs, &targets))
    }

    fn objective_from(&self, probs: &Array2<f64>, targets: &ArrayView2<f64>) -> f64 {
        let data: f64 = probs
            .rows()
            .into_iter()
            .zip(targets.rows())
            .map(|(p, t)| {
                soft_cross_entropy(
                    p.as_slice().expect("standard layout"),
                    &t.to_vec(),
                )
            })
            .sum::<f64>()
            / probs.nrows() as f64;
        data + 0.5 * self.spec.weight_decay * self.params.squared_norm()
    }

    fn check_targets(&self, inputs: &ArrayView2<f64>, targets: &ArrayView2<f64>) -> Result<()> {
        if inputs.nrows() == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        if targets.dim() != (inputs.nrows(), self.spec.num_classes()) {
            return Err(Error::Shape(format!(
                "targets {:?} for {} inputs and {} classes",
                targets.dim(),
                inputs.nrows(),
                self.spec.num_classes()
            )));
        }
        Ok(())
    }

    /// Objective value and its exact gradient with respect to every parameter.
    pub fn gradients(
        &self,
        inputs: ArrayView2<f64>,
        targets: ArrayView2<f64>,
    ) -> Result<(f64, Params)> {
        self.check_inputs(&inputs)?;
        self.check_targets(&inputs, &targets)?;
        let acts = self.activations(&inputs);
        let probs = acts.last().expect("at least one layer");
        let loss = self.objective_from(probs, &targets);

        let batch = inputs.nrows() as f64;
        // d(soft CE)/dz = p * sum(t) - t for the softmax layer.
        let mass = targets.sum_axis(Axis(1)).insert_axis(Axis(1));
        let mut delta = (probs * &mass - targets) / batch;

        let layers = self.params.num_layers();
        let mut grads = Params::zeros(&self.spec);
        let wd = self.spec.weight_decay;
        for l in (0..layers).rev() {
            let below = match l {
                0 => inputs.view(),
                _ => acts[l - 1].view(),
            };
            grads.weights[l] = below.t().dot(&delta);
            grads.biases[l] = delta.sum_axis(Axis(0));
            if wd > 0.0 {
                grads.weights[l].scaled_add(wd, &self.params.weights[l]);
                grads.biases[l].scaled_add(wd, &self.params.biases[l]);
            }
            if l > 0 {
                let mut upstream = delta.dot(&self.params.weights[l].t());
                self.spec.activation.backprop(&mut upstream, &acts[l - 1]);
                delta = upstream;
            }
        }
        Ok((loss, grads))
    }

    /// `buffer = momentum * buffer + grad; param -= lr * buffer`.
    pub fn sgd_step(&mut self, grads: &Params, hyper: &SgdHyper, lr: f64) -> Result<()> {
        if !grads.same_shape(&self.params) {
            return Err(Error::Shape("gradient does not match parameters".into()));
        }
        if let Some(layer) = grads.first_non_finite_layer() {
            return Err(Error::Training { layer });
        }
        let mu = hyper.momentum;
        for l in 0..self.params.num_layers() {
            Zip::from(&mut self.momentum.weights[l])
                .and(&mut self.params.weights[l])
                .and(&grads.weights[l])
                .for_each(|buf, p, &g| {
                    *buf = mu * *buf + g;
                    *p -= lr * *buf;
                });
            Zip::from(&mut self.momentum.biases[l])
                .and(&mut self.params.biases[l])
                .and(&grads.biases[l])
                .for_each(|buf, p, &g| {
                    *buf = mu * *buf + g;
                    *p -= lr * *buf;
                });
        }
        Ok(())
    }

    /// One gradient evaluation followed by one SGD step; returns the objective.
    pub fn train_step(
        &mut self,
        inputs: ArrayView2<f64>,
        targets: ArrayView2<f64>,
        hyper: &SgdHyper,
        lr: f64,
    ) -> Result<f64> {
        let (loss, grads) = self.gradients(inputs, targets)?;
        if !loss.is_finite() {
            return Err(Error::Training {
                layer: self.params.num_layers() - 1,
            });
        }
        self.sgd_step(&grads, hyper, lr)?;
        Ok(loss)
    }

    /// Argmax class per row, evaluated in chunks.
    pub fn predict_labels(&self, inputs: ArrayView2<f64>) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(inputs.nrows());
        for chunk in inputs.axis_chunks_iter(Axis(0), 1024) {
            let probs = self.forward(chunk)?;
            out.extend(probs.rows().into_iter().map(|r| argmax(r.as_slice().expect("standard layout"))));
        }
        Ok(out)
    }
}
