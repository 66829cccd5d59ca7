//! Exit criteria. Each test prints one `PASS`/`FAIL` line (bypassing the
//! output capture) and then asserts the criterion.

mod common;

use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use selectmix::crossval::OofPredictions;
use selectmix::datasets::{inject_noise, load_idx, write_idx, Dataset, NoiseSpec};
use selectmix::harness::{
    aggregate_rows, prepare, sweep_alpha, theory_check, write_rows, ExperimentConfig, ExperimentReport,
    ResultRow, TEST_IMAGES, TEST_LABELS, TRAIN_IMAGES, TRAIN_LABELS,
};
use selectmix::mixing::{Guidance, MixKind, MixStrategy};
use selectmix::net::Probabilities;
use selectmix::theory::{kappa, linearity_residual, RiskReport};

fn report(name: &str, pass: bool, detail: String) {
    let line = format!("\n{} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
}

fn mnist(noise_rate: f64) -> ExperimentConfig {
    ExperimentConfig {
        dataset: common::mnist_dir(),
        noise_rate,
        ..ExperimentConfig::default()
    }
}

const SEEDS: [u64; 3] = [0, 1, 2];

#[test]
fn c01_mixed_target_loss_is_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let classes = rng.random_range(2..=12);
        let raw: Vec<f64> = (0..classes).map(|_| rng.random::<f64>() + 1e-9).collect();
        let s: f64 = raw.iter().sum();
        let p = Probabilities::new(raw.iter().map(|v| v / s).collect()).unwrap();
        let (y1, y2) = (rng.random_range(0..classes), rng.random_range(0..classes));
        let alpha = rng.random::<f64>();
        worst = worst.max(linearity_residual(&p, y1, y2, alpha));
    }
    let pass = worst < 1e-12;
    report("linearity", pass, format!("max residual {worst:.3e} over 1e4 triples (< 1e-12)"));
    assert!(pass);
}

#[test]
fn c02_kappa_matches_beta_moments() {
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, alpha) in [0.1, 0.5, 1.0, 2.0, 4.0].into_iter().enumerate() {
        let k = kappa(alpha).unwrap();
        let (idn, cdn, _) = common::monte_carlo_kappa(alpha, 1_000_000, 100 + i as u64);
        let err = (idn - k.kappa_idn).abs().max((cdn - k.kappa_cdn).abs());
        let sum = (k.kappa_idn + k.kappa_cdn - 1.0).abs();
        pass &= err < 2e-3 && sum < 1e-12;
        parts.push(format!("a={alpha}: err {err:.1e} sum-1 {sum:.0e}"));
    }
    report("kappa", pass, parts.join("; "));
    assert!(pass);
}

#[test]
fn c03_gradients_match_finite_differences() {
    let start = Instant::now();
    let checks: Vec<_> = (0..10).map(common::finite_difference_check).collect();
    let elapsed = start.elapsed();
    let failed: Vec<_> = checks.iter().filter(|c| !c.passes()).collect();
    let pass = failed.is_empty() && elapsed < Duration::from_secs(30);
    let coords: usize = checks.iter().map(|c| c.coords).sum();
    report(
        "gradient check",
        pass,
        format!("{} of 10 nets ok, {coords} coordinates, {:.1}s (< 30s) {failed:?}", 10 - failed.len(), elapsed.as_secs_f64()),
    );
    assert!(pass);
}

#[test]
fn c04_noise_injection_is_calibrated() {
    let start = Instant::now();
    let n = 10_000;
    let ds = Dataset::new(Array2::zeros((n, 1)), (0..n).map(|i| i % 10).collect(), 10).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for (seed, rate) in [(1u64, 0.2), (2, 0.4), (3, 0.8)] {
        let noisy = inject_noise(&ds, &NoiseSpec::symmetric(rate), seed).unwrap();
        let ok = common::within_three_sigma(noisy.flipped_count(), n, rate);
        pass &= ok;
        parts.push(format!("p={rate}: {} flips", noisy.flipped_count()));
    }
    let map = NoiseSpec::cyclic_pairs(10);
    let asym = inject_noise(&ds, &NoiseSpec::asymmetric(0.4, map.clone()), 4).unwrap();
    let off_map = ds
        .clean_labels()
        .unwrap()
        .iter()
        .zip(asym.noisy_labels())
        .filter(|(y, z)| y != z && map.get(y) != Some(z))
        .count();
    pass &= off_map == 0 && common::within_three_sigma(asym.flipped_count(), n, 0.4);
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(5);
    parts.push(format!("asymmetric off-map flips {off_map}, {:.2}s (< 5s)", elapsed.as_secs_f64()));
    report("noise calibration", pass, parts.join("; "));
    assert!(pass);
}

#[test]
fn c05_selectmix_equals_erm_without_mismatches() {
    let cfg = ExperimentConfig {
        noise_rate: 0.0,
        epochs: 10,
        milestones: vec![5, 8],
        ..mnist(0.0)
    };
    let mut prepared = prepare(&ExperimentConfig { strategy: MixKind::Erm, ..cfg }, false).unwrap();
    let labels = prepared.train.noisy_labels().to_vec();
    let oof = OofPredictions::from_labels(&labels, 10).unwrap();
    prepared.guidance = Some(Guidance::new(&prepared.train, oof).unwrap());
    let rho = prepared.guidance.as_ref().unwrap().mismatch.rho();
    let trace = |kind| {
        let mut states = Vec::new();
        prepared
            .train_with(&MixStrategy::new(kind, 1.0).unwrap(), |_, _, s| states.push(s.clone()))
            .unwrap();
        states
    };
    let (sel, erm) = (trace(MixKind::SelectMix), trace(MixKind::Erm));
    let identical_epochs = sel.iter().zip(&erm).filter(|(a, b)| a == b).count();
    let pass = rho == 0.0 && sel.len() == 10 && sel == erm;
    report(
        "rho=0 degeneracy",
        pass,
        format!("rho {rho}, {identical_epochs}/10 epochs bitwise identical"),
    );
    assert!(pass);
}

struct MnistRuns {
    mixup: Vec<ExperimentReport>,
    selectmix: Vec<ExperimentReport>,
    mixup_star: Vec<ExperimentReport>,
    elapsed: Duration,
}

fn mnist_runs() -> &'static MnistRuns {
    static RUNS: OnceLock<MnistRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let start = Instant::now();
        let mut runs = MnistRuns {
            mixup: Vec::new(),
            selectmix: Vec::new(),
            mixup_star: Vec::new(),
            elapsed: Duration::ZERO,
        };
        for seed in SEEDS {
            let prepared = prepare(&ExperimentConfig { seed, ..mnist(0.5) }, true).unwrap();
            let run = |kind| prepared.run(&MixStrategy::new(kind, 1.0).unwrap()).unwrap();
            runs.mixup.push(run(MixKind::Mixup));
            runs.selectmix.push(run(MixKind::SelectMix));
            runs.mixup_star.push(run(MixKind::MixupStar));
        }
        runs.elapsed = start.elapsed();
        runs
    })
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

/// Per seed: `(selectmix last10, mixup last10, selectmix best-last, mixup best-last)`.
fn digit_comparison() -> Vec<(f64, f64, f64, f64)> {
    let runs = mnist_runs();
    runs.selectmix
        .iter()
        .zip(&runs.mixup)
        .map(|(sel, mix)| {
            (
                sel.last10_avg,
                mix.last10_avg,
                sel.best_acc - sel.last10_avg,
                mix.best_acc - mix.last10_avg,
            )
        })
        .collect()
}

#[test]
fn c06a_selectmix_beats_mixup_on_noisy_digits() {
    let rows = digit_comparison();
    let elapsed = mnist_runs().elapsed;
    let pass = rows.iter().all(|r| r.0 - r.1 >= 0.02) && elapsed < Duration::from_secs(600);
    let detail: Vec<String> = rows
        .iter()
        .enumerate()
        .map(|(s, r)| format!("seed {s}: {} vs {}", pct(r.0), pct(r.1)))
        .collect();
    report(
        "digits 50% symmetric, last10 margin >= 2 points",
        pass,
        format!("{}; runs took {:.0}s (< 600s)", detail.join(", "), elapsed.as_secs_f64()),
    );
    assert!(pass);
}

#[test]
fn c06b_selectmix_is_at_least_as_stable_as_mixup() {
    let rows = digit_comparison();
    let pass = rows.iter().all(|r| r.2 <= r.3);
    let detail: Vec<String> = rows
        .iter()
        .enumerate()
        .map(|(s, r)| format!("seed {s}: {} vs {}", pct(r.2), pct(r.3)))
        .collect();
    report(
        "digits 50% symmetric, best-last gap <= mixup",
        pass,
        detail.join(", "),
    );
    assert!(pass);
}

#[test]
fn c07_mixup_star_is_not_worse_than_mixup() {
    let runs = mnist_runs();
    let wins = runs
        .mixup_star
        .iter()
        .zip(&runs.mixup)
        .filter(|(star, mix)| star.last10_avg >= mix.last10_avg)
        .count();
    let detail: Vec<String> = runs
        .mixup_star
        .iter()
        .zip(&runs.mixup)
        .map(|(star, mix)| format!("{} vs {}", pct(star.last10_avg), pct(mix.last10_avg)))
        .collect();
    let pass = wins >= 2;
    report("mixup* >= mixup", pass, format!("{wins}/3 seeds ({})", detail.join(", ")));
    assert!(pass);
}

#[test]
fn c08_selectmix_risk_gap() {
    let start = Instant::now();
    let reports: Vec<RiskReport> = (0..5u64)
        .map(|seed| {
            let cfg = ExperimentConfig {
                seed,
                noise_rate: 0.4,
                alpha: 1.0,
                strategy: MixKind::SelectMix,
                ..ExperimentConfig::synthetic()
            };
            theory_check(&cfg, 100_000).unwrap()
        })
        .collect();
    let elapsed = start.elapsed();
    let weak = reports.iter().all(RiskReport::weak_holds);
    let holds = reports.iter().filter(|r| r.holds).count();
    let pass = weak && holds >= 4 && elapsed < Duration::from_secs(120);
    let detail: Vec<String> = reports
        .iter()
        .map(|r| format!("{:.4}<={:.4}-{:.4}", r.r_sel, r.r_mix, r.gap_bound))
        .collect();
    report(
        "risk gap",
        pass,
        format!("bound holds {holds}/5, r_sel<=r_mix in all: {weak}, {:.1}s; {}", elapsed.as_secs_f64(), detail.join(" ")),
    );
    assert!(pass);
}

#[test]
fn c09_alpha_one_is_the_sweet_spot() {
    let cfg = mnist(0.4);
    let table = sweep_alpha(&cfg, &[0.1, 1.0, 4.0], &SEEDS).unwrap();
    assert!(table.failures.is_empty(), "{:?}", table.failures);
    let mean = |a: f64| table.mean_row(a).unwrap().last10_avg;
    let (low, mid, high) = (mean(0.1), mean(1.0), mean(4.0));
    let pass = mid >= low - 0.003 && mid >= high - 0.003;
    report(
        "alpha ablation",
        pass,
        format!("mean last10 a=0.1 {} a=1 {} a=4 {} (a=1 must be >= both within 0.3)", pct(low), pct(mid), pct(high)),
    );
    assert!(pass);
}

#[test]
fn c10_idx_and_csv_formats_are_exact() {
    let dir = Path::new(&common::mnist_dir()).to_path_buf();
    let tmp = tempfile::tempdir().unwrap();
    let mut idx_ok = true;
    for (images, labels) in [(TRAIN_IMAGES, TRAIN_LABELS), (TEST_IMAGES, TEST_LABELS)] {
        let ds = load_idx(&dir.join(images), &dir.join(labels)).unwrap();
        let (img, lab) = (tmp.path().join(images), tmp.path().join(labels));
        write_idx(&ds, &img, &lab, 28, 28).unwrap();
        idx_ok &= std::fs::read(&img).unwrap() == std::fs::read(dir.join(images)).unwrap();
        idx_ok &= std::fs::read(&lab).unwrap() == std::fs::read(dir.join(labels)).unwrap();
        let back = load_idx(&img, &lab).unwrap();
        idx_ok &= back.features() == ds.features() && back.clean_labels() == ds.clean_labels();
    }

    let golden = |name: &str| {
        std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)).unwrap()
    };
    let mut csv_ok = true;
    let ds = Dataset::new(array![[0.5, 1.0], [0.25, 0.0]], vec![0, 1], 2)
        .unwrap()
        .with_noisy_labels(vec![1, 1])
        .unwrap();
    let mut buf = Vec::new();
    ds.write_csv(&mut buf).unwrap();
    csv_ok &= buf == golden("dataset.csv").into_bytes();

    let oof = OofPredictions::from_probs(array![[0.25, 0.75], [0.5, 0.5]]).unwrap();
    let mut buf = Vec::new();
    oof.write_csv(&mut buf).unwrap();
    csv_ok &= buf == golden("oof.csv").into_bytes();

    let cell = |seed: &str, best, last, rho, time| ResultRow {
        strategy: "selectmix".into(),
        noise_kind: "symmetric".into(),
        noise_rate: 0.5,
        alpha: 1.0,
        seed: seed.into(),
        best_acc: best,
        last10_avg: last,
        rho: Some(rho),
        wall_time_s: time,
    };
    let mut rows = vec![cell("7", 0.875, 0.8125, 0.25, 1.5), cell("8", 0.625, 0.5625, 0.5, 2.5)];
    rows.extend(aggregate_rows(&rows.clone()));
    let mut buf = Vec::new();
    write_rows(&rows, &mut buf).unwrap();
    csv_ok &= buf == golden("results.csv").into_bytes();

    let pass = idx_ok && csv_ok;
    report("IDX round trip and golden CSV", pass, format!("idx byte-exact {idx_ok}, csv byte-exact {csv_ok}"));
    assert!(pass);
}
