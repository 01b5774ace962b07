//! Occluder bank, occlusion likelihood plane, per-position occlusion
//! decisions and the occlusion score used for localization.

use crate::clustering::{kmeans_pp, KMeansOptions};
use crate::error::{Error, Result};
use crate::mixture::{ActivationCrop, SIMPLEX_TOLERANCE};
use crate::tensor::{dot, FeatureMap, ScoreGrid};
use crate::vmf::VmfKernelBank;

pub const DEFAULT_OCCLUDERS: usize = 5;
pub const DEFAULT_PRIOR: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct OccluderBank {
    k: usize,
    /// `n x k`, each row on the simplex.
    betas: Vec<f64>,
    prior: f64,
}

impl OccluderBank {
    pub fn new(k: usize, betas: Vec<f64>, prior: f64) -> Result<Self> {
        if k == 0 || betas.is_empty() || !betas.len().is_multiple_of(k) {
            return Err(Error::Dimension(format!("occluder bank needs n x {k} coefficients, got {}", betas.len())));
        }
        let bank = Self { k, betas, prior };
        bank.validate()?;
        Ok(bank)
    }

    pub fn validate(&self) -> Result<()> {
        check_prior(self.prior)?;
        for (n, beta) in self.betas.chunks_exact(self.k).enumerate() {
            let sum: f64 = beta.iter().sum();
            if (sum - 1.0).abs() > SIMPLEX_TOLERANCE || beta.iter().any(|&b| !(b >= 0.0)) {
                return Err(Error::Invariant(format!("occluder {n} is not on the simplex (sum {sum})")));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.betas.len() / self.k
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn prior(&self) -> f64 {
        self.prior
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn beta(&self, n: usize) -> &[f64] {
        &self.betas[n * self.k..(n + 1) * self.k]
    }

    pub fn with_prior(&self, prior: f64) -> Result<Self> {
        check_prior(prior)?;
        Ok(Self { prior, ..self.clone() })
    }

    /// `max_n log(l . beta_n)` and the winning occluder (lowest index on ties).
    pub fn loglik(&self, l: &[f64]) -> (f64, usize) {
        let mut best = (f64::NEG_INFINITY, 0);
        for (n, beta) in self.betas.chunks_exact(self.k).enumerate() {
            let v = dot(l, beta).ln();
            if v > best.0 {
                best = (v, n);
            }
        }
        best
    }

    pub fn log_prior(&self) -> f64 {
        self.prior.ln()
    }

    pub fn log_not_prior(&self) -> f64 {
        (1.0 - self.prior).ln()
    }
}

fn check_prior(prior: f64) -> Result<()> {
    if !(prior > 0.0 && prior < 1.0) {
        return Err(Error::Config(format!("occlusion prior must lie in (0, 1), got {prior}")));
    }
    Ok(())
}

/// `O[i] = max_n log(l_i . beta_n)`; excluded crop cells hold 0 and are flagged invalid.
pub fn occlusion_loglik_plane(crop: &ActivationCrop, bank: &OccluderBank) -> Result<ScoreGrid> {
    if crop.acts.channels != bank.k {
        return Err(Error::Dimension(format!(
            "activations have {} channels, occluders {}",
            crop.acts.channels, bank.k
        )));
    }
    let mut grid = ScoreGrid::filled(crop.acts.height, crop.acts.width, 0.0);
    for cell in 0..crop.cells() {
        if crop.valid[cell] {
            grid.values[cell] = bank.loglik(crop.acts.at(cell)).0;
        } else {
            grid.valid[cell] = false;
        }
    }
    Ok(grid)
}

fn check_planes(e: &ScoreGrid, o: &ScoreGrid) -> Result<()> {
    if e.height != o.height || e.width != o.width {
        return Err(Error::Dimension(format!("planes {}x{} and {}x{} differ", e.height, e.width, o.height, o.width)));
    }
    Ok(())
}

/// `z_i = 1` iff the occluder branch strictly beats the object branch.
/// Positions invalid in either plane are never occluded.
pub fn occlusion_decision(e: &ScoreGrid, o: &ScoreGrid, prior: f64) -> Result<Vec<bool>> {
    check_planes(e, o)?;
    check_prior(prior)?;
    let (lp, lq) = (prior.ln(), (1.0 - prior).ln());
    Ok((0..e.len()).map(|i| e.valid[i] && o.valid[i] && o.values[i] + lp > e.values[i] + lq).collect())
}

/// `S[i] = (O[i] + log p) - (E[i] + log(1 - p))`.
pub fn occlusion_score_plane(e: &ScoreGrid, o: &ScoreGrid, prior: f64) -> Result<ScoreGrid> {
    check_planes(e, o)?;
    check_prior(prior)?;
    let (lp, lq) = (prior.ln(), (1.0 - prior).ln());
    let mut out = ScoreGrid::filled(e.height, e.width, 0.0);
    for i in 0..e.len() {
        if e.valid[i] && o.valid[i] {
            out.values[i] = (o.values[i] + lp) - (e.values[i] + lq);
        } else {
            out.valid[i] = false;
        }
    }
    Ok(out)
}

/// Cluster the activation vectors of object-free maps into `n` groups and
/// take each group's normalized mean activation as an occluder model.
pub fn learn_occluder_bank(
    backgrounds: &[FeatureMap],
    n: usize,
    bank: &VmfKernelBank,
    prior: f64,
    seed: u64,
) -> Result<OccluderBank> {
    let mut points = Vec::new();
    for map in backgrounds {
        points.extend_from_slice(&bank.activation_tensor(map)?.data);
    }
    learn_occluders_from_activations(&points, bank.k(), n, prior, seed)
}

/// As [`learn_occluder_bank`] on precomputed `rows x k` activation vectors.
pub fn learn_occluders_from_activations(
    activations: &[f64],
    k: usize,
    n: usize,
    prior: f64,
    seed: u64,
) -> Result<OccluderBank> {
    if activations.is_empty() {
        return Err(Error::Data("no background activations to learn occluders from".into()));
    }
    let clusters = kmeans_pp(activations, k, n, seed, KMeansOptions::default())?;
    if clusters.k() < n {
        tracing::warn!(requested = n, used = clusters.k(), "occluder count reduced");
    }
    let mut betas = vec![0.0; clusters.k() * k];
    for (row, &a) in activations.chunks_exact(k).zip(&clusters.assignments) {
        for (b, &l) in betas[a * k..(a + 1) * k].iter_mut().zip(row) {
            *b += l;
        }
    }
    for beta in betas.chunks_exact_mut(k) {
        let total: f64 = beta.iter().sum();
        if total > 0.0 {
            beta.iter_mut().for_each(|b| *b /= total);
        } else {
            beta.fill(1.0 / k as f64);
        }
    }
    OccluderBank::new(k, betas, prior)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{random_crop, rng};
    use crate::tensor::Tensor3;
    use rand::Rng;

    fn grid(values: Vec<f64>) -> ScoreGrid {
        ScoreGrid::new(1, values.len(), values).unwrap()
    }

    fn one_hot_crop(k: usize, hot: usize) -> ActivationCrop {
        let mut data = vec![0.0; k];
        data[hot] = 1.0;
        ActivationCrop::full(Tensor3 { height: 1, width: 1, channels: k, data })
    }

    #[test]
    fn plane_examples() {
        let bank = OccluderBank::new(3, vec![0.0, 1.0, 0.0, 0.2, 0.3, 0.5], 0.5).unwrap();
        let o = occlusion_loglik_plane(&one_hot_crop(3, 1), &bank).unwrap();
        assert_eq!(o.values[0], 0.0);

        let uniform = OccluderBank::new(4, vec![0.25; 4], 0.5).unwrap();
        let o = occlusion_loglik_plane(&one_hot_crop(4, 2), &uniform).unwrap();
        assert!((o.values[0] - 0.25f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn plane_matches_scalar_oracle() {
        let crop = random_crop(3, 2, 4, 30.0, 12);
        let mut r = rng(4);
        let mut betas: Vec<f64> = (0..8).map(|_| r.random_range(0.01..1.0)).collect();
        for row in betas.chunks_exact_mut(4) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|b| *b /= s);
        }
        let bank = OccluderBank::new(4, betas.clone(), 0.5).unwrap();
        let o = occlusion_loglik_plane(&crop, &bank).unwrap();
        for cell in 0..6 {
            let mut best = f64::NEG_INFINITY;
            for n in 0..2 {
                let mut q = 0.0;
                for k in 0..4 {
                    q += crop.acts.at(cell)[k] * betas[n * 4 + k];
                }
                if q.ln() > best {
                    best = q.ln();
                }
            }
            assert!((o.values[cell] - best).abs() < 1e-12);
        }
    }

    #[test]
    fn decision_examples() {
        let e = grid(vec![-3.0, -1.0, -2.0]);
        let o = grid(vec![-1.0, -3.0, -2.0]);
        assert_eq!(occlusion_decision(&e, &o, 0.5).unwrap(), vec![true, false, false]);
        assert_eq!(occlusion_decision(&e, &o, 1e-300).unwrap(), vec![false; 3]);
        assert!(occlusion_decision(&e, &o, 0.0).is_err());
    }

    #[test]
    fn score_examples() {
        let e = grid(vec![-2.0, -1.0, -5.0]);
        let o = grid(vec![-2.0, -4.0, -0.5]);
        let s = occlusion_score_plane(&e, &o, 0.5).unwrap();
        assert_eq!(s.values[0], 0.0);
        let z = occlusion_decision(&e, &o, 0.5).unwrap();
        for i in 0..3 {
            assert_eq!(z[i], s.values[i] > 0.0);
        }
        let swapped = occlusion_score_plane(&o, &e, 0.5).unwrap();
        for i in 0..3 {
            assert_eq!(swapped.values[i], -s.values[i]);
        }
    }

    #[test]
    fn learn_single_occluder_is_mean() {
        let acts = vec![0.2, 0.6, 0.2, 0.4, 0.4, 0.2];
        let bank = learn_occluders_from_activations(&acts, 3, 1, 0.5, 0).unwrap();
        let expect = [0.6 / 2.0, 1.0 / 2.0, 0.4 / 2.0];
        for (b, e) in bank.beta(0).iter().zip(expect) {
            assert!((b - e).abs() < 1e-12);
        }
    }

    #[test]
    fn learn_two_populations() {
        let mut r = rng(8);
        let means = [[0.7, 0.2, 0.1], [0.05, 0.15, 0.8]];
        let mut acts = Vec::new();
        let mut sums = [[0.0; 3]; 2];
        for i in 0..400 {
            let m = means[i % 2];
            let row: Vec<f64> = m.iter().map(|v| v + r.random_range(-1e-4..1e-4)).collect();
            for k in 0..3 {
                sums[i % 2][k] += row[k];
            }
            acts.extend(row);
        }
        let a = learn_occluders_from_activations(&acts, 3, 2, 0.5, 3).unwrap();
        let b = learn_occluders_from_activations(&acts, 3, 2, 0.5, 3).unwrap();
        assert_eq!(a, b);
        for s in sums {
            let total: f64 = s.iter().sum();
            let best = (0..2)
                .map(|n| (0..3).map(|k| (a.beta(n)[k] - s[k] / total).abs()).fold(0.0, f64::max))
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-3);
        }
    }
}
