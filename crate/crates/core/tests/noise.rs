mod common;

use std::collections::BTreeMap;

use ndarray::Array2;

use common::{chi_square_999, chi_square_uniform, within_three_sigma};
use selectmix::datasets::{inject_noise, Dataset, NoiseSpec};

fn balanced(n: usize, classes: usize) -> Dataset {
    Dataset::new(Array2::zeros((n, 1)), (0..n).map(|i| i % classes).collect(), classes).unwrap()
}

#[test]
fn symmetric_destinations_are_uniform() {
    let ds = balanced(20_000, 10);
    let noisy = inject_noise(&ds, &NoiseSpec::symmetric(0.6), 11).unwrap();
    let mut dest = vec![vec![0usize; 10]; 10];
    for (&y, &z) in ds.clean_labels().unwrap().iter().zip(noisy.noisy_labels()) {
        if y != z {
            dest[y][z] += 1;
        }
    }
    for (c, row) in dest.iter().enumerate() {
        assert_eq!(row[c], 0);
        let others: Vec<usize> = (0..10).filter(|&k| k != c).map(|k| row[k]).collect();
        let stat = chi_square_uniform(&others);
        assert!(stat < chi_square_999(9), "class {c}: chi-square {stat}");
    }
}

#[test]
fn flip_counts_land_near_the_rate() {
    let ds = balanced(10_000, 10);
    for (seed, rate) in [(1, 0.2), (2, 0.45), (3, 0.8)] {
        let noisy = inject_noise(&ds, &NoiseSpec::symmetric(rate), seed).unwrap();
        assert!(within_three_sigma(noisy.flipped_count(), ds.len(), rate));
        let mask = noisy.flip_mask().unwrap();
        let clean = ds.clean_labels().unwrap();
        for ((&m, &z), &y) in mask.iter().zip(noisy.noisy_labels()).zip(clean) {
            assert_eq!(m, z != y);
        }
    }
}

#[test]
fn asymmetric_flips_follow_the_map() {
    let ds = balanced(10_000, 4);
    let map = BTreeMap::from([(0, 2), (3, 1)]);
    let noisy = inject_noise(&ds, &NoiseSpec::asymmetric(0.35, map.clone()), 5).unwrap();
    let clean = ds.clean_labels().unwrap();
    let mut flips = 0;
    for (&y, &z) in clean.iter().zip(noisy.noisy_labels()) {
        if y != z {
            assert_eq!(map.get(&y), Some(&z));
            flips += 1;
        }
    }
    let eligible = clean.iter().filter(|y| map.contains_key(y)).count();
    assert!(within_three_sigma(flips, eligible, 0.35));
}

#[test]
fn injection_is_reproducible() {
    let ds = balanced(500, 5);
    let spec = NoiseSpec::symmetric(0.3);
    let a = inject_noise(&ds, &spec, 42).unwrap();
    assert_eq!(a.noisy_labels(), inject_noise(&ds, &spec, 42).unwrap().noisy_labels());
    assert_ne!(a.noisy_labels(), inject_noise(&ds, &spec, 43).unwrap().noisy_labels());
}
