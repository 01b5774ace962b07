//! Seeded random small instances for oracle checks, gradient checks and the
//! bundled CLI self-test.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mixture::{ActivationCrop, MixtureCoefficients};
use crate::model::{ClassModel, CompositionalNet, PartModel};
use crate::occlusion::OccluderBank;
use crate::tensor::{FeatureMap, WindowShape};
use crate::vmf::{VmfKernelBank, DEFAULT_SIGMA};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn direction(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Normalized `h x w x d` map of random directions.
pub fn random_map(h: usize, w: usize, d: usize, seed: u64) -> FeatureMap {
    let mut rng = rng(seed);
    let data = (0..h * w).flat_map(|_| direction(&mut rng, d)).map(|x| x as f32).collect();
    FeatureMap::new(h, w, d, data).expect("valid dimensions").normalize_rows(1e-8)
}

pub fn random_bank(k: usize, d: usize, sigma: f64, seed: u64) -> VmfKernelBank {
    let mut rng = rng(seed);
    let mus = (0..k).flat_map(|_| direction(&mut rng, d)).collect();
    VmfKernelBank::from_directions(mus, d, sigma).expect("valid bank")
}

/// Activations of a random map under a random bank, as a fully valid crop.
pub fn random_crop(h: usize, w: usize, k: usize, sigma: f64, seed: u64) -> ActivationCrop {
    let d = k + 2;
    let map = random_map(h, w, d, seed);
    let bank = random_bank(k, d, sigma, seed ^ 0x9e37_79b9);
    ActivationCrop::full(bank.activation_tensor(&map).expect("matching depth"))
}

pub fn random_logits(n: usize, scale: f64, seed: u64) -> Vec<f64> {
    let mut rng = rng(seed);
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn random_mixture(h: usize, w: usize, k: usize, seed: u64) -> MixtureCoefficients {
    MixtureCoefficients::from_logits(h, w, k, random_logits(h * w * k, 2.0, seed)).expect("valid mixture")
}

pub fn random_simplex_rows(rows: usize, k: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng(seed);
    let mut out: Vec<f64> = (0..rows * k).map(|_| rng.random_range(0.05..1.0)).collect();
    for row in out.chunks_exact_mut(k) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= s);
    }
    out
}

pub fn random_occluders(n: usize, k: usize, prior: f64, seed: u64) -> OccluderBank {
    OccluderBank::new(k, random_simplex_rows(n, k, seed), prior).expect("valid occluders")
}

fn random_part(h: usize, w: usize, k: usize, m: usize, context: bool, seed: u64) -> PartModel {
    let object = (0..m as u64).map(|i| random_mixture(h, w, k, seed.wrapping_add(i))).collect();
    let context =
        context.then(|| (0..m as u64).map(|i| random_mixture(h, w, k, seed.wrapping_add(1000 + i))).collect());
    PartModel::new(WindowShape::centered(h, w), object, context).expect("valid part")
}

/// A random model over `h x w` windows with `k` kernels of depth `k + 2`.
/// `full` adds context mixtures and corner parts.
pub fn random_net(h: usize, w: usize, k: usize, classes: usize, m: usize, full: bool, seed: u64) -> CompositionalNet {
    let bank = random_bank(k, k + 2, DEFAULT_SIGMA, seed);
    let classes = (0..classes)
        .map(|c| {
            let s = seed.wrapping_mul(7919).wrapping_add(c as u64 * 100_003);
            ClassModel {
                label: c,
                name: format!("class{c}"),
                center: random_part(h, w, k, m, full, s),
                corners: full.then(|| {
                    (
                        random_part(h, w, k, m, true, s.wrapping_add(10_000)),
                        random_part(h, w, k, m, true, s.wrapping_add(20_000)),
                    )
                }),
            }
        })
        .collect();
    CompositionalNet::new(bank, classes, random_occluders(2, k, 0.5, seed.wrapping_add(3))).expect("valid net")
}

/// Map whose features are noisy copies of random kernels of `bank`.
pub fn clustered_map(h: usize, w: usize, bank: &VmfKernelBank, noise: f64, seed: u64) -> FeatureMap {
    let mut rng = rng(seed);
    let d = bank.depth();
    let mut data = Vec::with_capacity(h * w * d);
    for _ in 0..h * w {
        let k = rng.random_range(0..bank.k());
        let jitter = direction(&mut rng, d);
        data.extend(bank.mu(k).iter().zip(&jitter).map(|(m, j)| (m + noise * j) as f32));
    }
    FeatureMap::new(h, w, d, data).expect("valid dimensions").normalize_rows(1e-8)
}
