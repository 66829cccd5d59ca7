//! Reference computations shared by the integration tests. Nothing here
//! calls into the code path it is used to check.

#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

use selectmix::net::{Activation, NetworkSpec, NetworkState};

pub fn mnist_dir() -> String {
    format!("{}/../../data/mnist-desk", env!("CARGO_MANIFEST_DIR"))
}

/// Outcome of one central-difference gradient comparison.
#[derive(Debug)]
pub struct GradCheck {
    pub layers: Vec<usize>,
    pub coords: usize,
    /// Coordinates within relative error 1e-4.
    pub rel_ok: usize,
    /// Largest absolute error among the coordinates outside the relative bound.
    pub worst_abs_outside: f64,
}

impl GradCheck {
    pub fn passes(&self) -> bool {
        self.rel_ok as f64 > 0.99 * self.coords as f64 && self.worst_abs_outside < 1e-6
    }
}

/// Random net with at most 3 layers and 32 units, random soft targets,
/// compared against central differences with step 1e-5.
pub fn finite_difference_check(seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.random_range(1..=3);
    let mut layers = vec![rng.random_range(1..=32)];
    for _ in 0..depth {
        layers.push(rng.random_range(2..=32));
    }
    let activation = if seed.is_multiple_of(2) { Activation::Tanh } else { Activation::Relu };
    let spec = NetworkSpec::new(layers.clone(), activation)
        .unwrap()
        .with_weight_decay(if seed.is_multiple_of(3) { 0.0 } else { 1e-3 });
    let mut state = NetworkState::init(&spec, &mut rng).unwrap();
    let batch = rng.random_range(1..=8);
    let inputs = Array2::from_shape_fn((batch, layers[0]), |_| rng.random_range(-1.0..1.0));
    let classes = *layers.last().unwrap();
    let mut targets = Array2::from_shape_fn((batch, classes), |_| rng.random::<f64>());
    for mut row in targets.rows_mut() {
        let s = row.sum();
        row /= s;
    }

    let (_, grads) = state.gradients(inputs.view(), targets.view()).unwrap();
    let analytic = grads.to_flat();
    let h = 1e-5;
    let mut rel_ok = 0;
    let mut worst_abs_outside = 0.0f64;
    for (k, &g) in analytic.iter().enumerate() {
        let original = state.params().to_flat()[k];
        *state.params_mut().scalars_mut()[k] = original + h;
        let plus = state.objective(inputs.view(), targets.view()).unwrap();
        *state.params_mut().scalars_mut()[k] = original - h;
        let minus = state.objective(inputs.view(), targets.view()).unwrap();
        *state.params_mut().scalars_mut()[k] = original;
        let numeric = (plus - minus) / (2.0 * h);
        let abs = (g - numeric).abs();
        let scale = g.abs().max(numeric.abs());
        if scale > 0.0 && abs / scale < 1e-4 || abs == 0.0 {
            rel_ok += 1;
        } else {
            worst_abs_outside = worst_abs_outside.max(abs);
        }
    }
    GradCheck {
        layers,
        coords: analytic.len(),
        rel_ok,
        worst_abs_outside,
    }
}

/// Plain Monte-Carlo moments of `Beta(alpha, alpha)`: returns
/// `(E[l^2 + (1-l)^2], 2 E[l (1-l)], standard error of the latter)`.
pub fn monte_carlo_kappa(alpha: f64, draws: usize, seed: u64) -> (f64, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta = Beta::new(alpha, alpha).unwrap();
    let (mut idn, mut cdn, mut cdn_sq) = (0.0, 0.0, 0.0);
    for _ in 0..draws {
        let l: f64 = beta.sample(&mut rng);
        let c = 2.0 * l * (1.0 - l);
        idn += l * l + (1.0 - l) * (1.0 - l);
        cdn += c;
        cdn_sq += c * c;
    }
    let n = draws as f64;
    let mean = cdn / n;
    let var = (cdn_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
    (idn / n, mean, (var / n).sqrt())
}

/// Pearson statistic of `counts` against a uniform expectation.
pub fn chi_square_uniform(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum()
}

/// 0.999 quantiles of the chi-square distribution by degrees of freedom.
pub fn chi_square_999(df: usize) -> f64 {
    match df {
        1 => 10.827566170662733,
        2 => 13.815510557964274,
        3 => 16.26623619623813,
        9 => 27.877164871256568,
        _ => panic!("no tabulated quantile for {df} degrees of freedom"),
    }
}

/// `|observed - n p| <= 3 sqrt(n p (1 - p))`.
pub fn within_three_sigma(observed: usize, n: usize, p: f64) -> bool {
    let mean = n as f64 * p;
    let sd = (n as f64 * p * (1.0 - p)).sqrt();
    (observed as f64 - mean).abs() <= 3.0 * sd
}
