//! Independent reference implementations shared by the integration tests.
//! Everything here is written from the formulas with plain loops in f64 and
//! never calls back into the library's kernels.

#![allow(dead_code)]

pub mod grad;
pub mod oracle;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Values at least `gap` apart in magnitude from zero, in `±[gap, hi)`.
pub fn away_from_zero(rng: &mut impl Rng, n: usize, gap: f64, hi: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v = rng.gen_range(gap..hi);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect()
}

/// A shuffled ladder of distinct values spaced by `step`, so that max
/// selections have no near ties.
pub fn distinct(rng: &mut impl Rng, n: usize, step: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * step).collect();
    for i in (1..n).rev() {
        v.swap(i, rng.gen_range(0..=i));
    }
    v
}

pub fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

pub fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

/// Writes a seeded synthetic dataset under `dir` and decodes every sample.
pub fn synth_samples(dir: &std::path::Path, count: usize, size: usize, seed: u64) -> Vec<lesionseg::data::Sample> {
    let records =
        lesionseg::data::synth_dataset(dir, count, size, seed, &lesionseg::data::SynthConfig::default()).unwrap();
    lesionseg::data::load_all(&records).unwrap()
}
