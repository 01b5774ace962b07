//! k-means++ and hamming-affinity spectral clustering, used by every
//! initialization path.

use std::collections::HashSet;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::instances::rng;
use crate::tensor::Tensor3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansOptions {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self { max_iters: 100, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    pub dim: usize,
    /// `k x dim`, row-major.
    pub centers: Vec<f64>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Inertia after each assignment step.
    pub history: Vec<f64>,
}

impl ClusterResult {
    pub fn k(&self) -> usize {
        self.centers.len() / self.dim
    }

    pub fn center(&self, c: usize) -> &[f64] {
        &self.centers[c * self.dim..(c + 1) * self.dim]
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.k()];
        for &a in &self.assignments {
            out[a] += 1;
        }
        out
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest center (lowest index on ties) and its squared distance.
pub fn nearest(point: &[f64], centers: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.chunks_exact(dim).enumerate() {
        let d = sq_dist(point, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

pub fn count_distinct(points: &[f64], dim: usize) -> usize {
    points.chunks_exact(dim).map(|p| p.iter().map(|x| x.to_bits()).collect::<Vec<_>>()).collect::<HashSet<_>>().len()
}

/// k-means++ seeding followed by Lloyd iterations. `points` is `n x dim`
/// row-major. Asking for more clusters than there are distinct points
/// reduces `k`.
pub fn kmeans_pp(points: &[f64], dim: usize, k: usize, seed: u64, opts: KMeansOptions) -> Result<ClusterResult> {
    if dim == 0 || points.is_empty() || !points.len().is_multiple_of(dim) {
        return Err(Error::Data("k-means needs a non-empty n x dim point set".into()));
    }
    if k == 0 {
        return Err(Error::Config("k-means needs k >= 1".into()));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("k-means input contains non-finite values".into()));
    }
    let n = points.len() / dim;
    let mut k = k.min(n);
    let distinct = count_distinct(points, dim);
    if distinct < k {
        tracing::warn!(requested = k, distinct, "fewer distinct points than clusters; reducing k");
        k = distinct;
    }
    let point = |i: usize| &points[i * dim..(i + 1) * dim];

    let mut rng = rng(seed);
    let mut centers = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centers.extend_from_slice(point(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(point(i), point(first))).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut chosen = n - 1;
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 && target < d {
                chosen = i;
                break;
            }
            target -= d;
        }
        // round-off can walk past the end; take the last point with mass
        if d2[chosen] == 0.0 {
            chosen = d2.iter().rposition(|&d| d > 0.0).expect("k <= distinct points");
        }
        let c = point(chosen).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(point(i), &c));
        }
        centers.extend_from_slice(&c);
    }

    let mut assignments = vec![0usize; n];
    let mut history = Vec::new();
    for _ in 0..opts.max_iters.max(1) {
        let nearest_all: Vec<(usize, f64)> = (0..n).into_par_iter().map(|i| nearest(point(i), &centers, dim)).collect();
        let mut inertia = 0.0;
        for (a, (c, d)) in assignments.iter_mut().zip(&nearest_all) {
            *a = *c;
            inertia += d;
        }
        history.push(inertia);

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &a) in assignments.iter().enumerate() {
            counts[a] += 1;
            for (s, x) in sums[a * dim..(a + 1) * dim].iter_mut().zip(point(i)) {
                *s += x;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let new: Vec<f64> = sums[c * dim..(c + 1) * dim].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(sq_dist(&new, &centers[c * dim..(c + 1) * dim]).sqrt());
            centers[c * dim..(c + 1) * dim].copy_from_slice(&new);
        }
        if shift < opts.tol {
            break;
        }
    }
    // reassign against the final centers so every point sits at its nearest one
    let mut final_inertia = 0.0;
    for (i, a) in assignments.iter_mut().enumerate() {
        let (c, d) = nearest(point(i), &centers, dim);
        *a = c;
        final_inertia += d;
    }
    history.push(final_inertia);
    Ok(ClusterResult { dim, centers, assignments, inertia: final_inertia, history })
}

/// Packed bit vector compared by hamming distance.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitVector {
    len: usize,
    words: Vec<u64>,
}

impl BitVector {
    pub fn from_bools(bits: impl IntoIterator<Item = bool>) -> Self {
        let mut words = Vec::new();
        let mut len = 0;
        for b in bits {
            if len % 64 == 0 {
                words.push(0);
            }
            if b {
                *words.last_mut().expect("pushed above") |= 1 << (len % 64);
            }
            len += 1;
        }
        Self { len, words }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn hamming(&self, other: &BitVector) -> usize {
        self.words.iter().zip(&other.words).map(|(a, b)| (a ^ b).count_ones() as usize).sum()
    }
}

/// One bit per activation, set iff the activation exceeds `threshold`.
pub fn binarize_activations(acts: &Tensor3, threshold: f64) -> BitVector {
    BitVector::from_bools(acts.data.iter().map(|&a| a > threshold))
}

/// `W_ab = 1 - hamming(a, b) / len`.
pub fn hamming_affinity(bits: &[BitVector]) -> Result<DMatrix<f64>> {
    let len = bits.first().map_or(0, BitVector::len);
    if len == 0 || bits.iter().any(|b| b.len() != len) {
        return Err(Error::Dimension("bit vectors must share a non-zero length".into()));
    }
    let n = bits.len();
    let mut w = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in a..n {
            let v = 1.0 - bits[a].hamming(&bits[b]) as f64 / len as f64;
            w[(a, b)] = v;
            w[(b, a)] = v;
        }
    }
    Ok(w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralResult {
    pub assignments: Vec<usize>,
    /// Components that received no members.
    pub empty: Vec<usize>,
}

/// Spectral clustering into `m` groups: symmetric-normalized Laplacian of the
/// hamming affinity, embedding on its `m` smallest eigenvectors with rows
/// scaled to unit length, then k-means++.
pub fn spectral_cluster(bits: &[BitVector], m: usize, seed: u64) -> Result<SpectralResult> {
    if m == 0 {
        return Err(Error::Config("spectral clustering needs m >= 1".into()));
    }
    if bits.len() < m {
        return Err(Error::Data(format!(
            "spectral clustering into {m} groups needs at least {m} vectors, got {}",
            bits.len()
        )));
    }
    let n = bits.len();
    if bits.iter().all(|b| b == &bits[0]) {
        tracing::warn!(n, m, "all vectors identical; spectral clustering collapses to one component");
        return Ok(SpectralResult { assignments: vec![0; n], empty: (1..m).collect() });
    }
    let w = hamming_affinity(bits)?;
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|a| {
            let d: f64 = w.row(a).sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let lap = DMatrix::from_fn(n, n, |a, b| {
        let id = if a == b { 1.0 } else { 0.0 };
        id - inv_sqrt[a] * w[(a, b)] * inv_sqrt[b]
    });
    let eig = SymmetricEigen::new(lap);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let mut embed = vec![0.0; n * m];
    for (j, &col) in order.iter().take(m).enumerate() {
        for a in 0..n {
            embed[a * m + j] = eig.eigenvectors[(a, col)];
        }
    }
    for row in embed.chunks_exact_mut(m) {
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|x| *x /= norm);
        }
    }
    let clusters = kmeans_pp(&embed, m, m, seed, KMeansOptions::default())?;
    let sizes = {
        let mut s = vec![0usize; m];
        clusters.assignments.iter().for_each(|&a| s[a] += 1);
        s
    };
    let empty: Vec<usize> = (0..m).filter(|&c| sizes[c] == 0).collect();
    if !empty.is_empty() {
        tracing::warn!(?empty, "spectral clustering left components empty");
    }
    Ok(SpectralResult { assignments: clusters.assignments, empty })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(seed: u64) -> (Vec<f64>, [f64; 2], [f64; 2]) {
        let mut r = rng(seed);
        let mut pts = Vec::new();
        let mut means = [[0.0; 2]; 2];
        for (c, origin) in [[0.0, 0.0], [10.0, 10.0]].iter().enumerate() {
            for _ in 0..200 {
                let p = [origin[0] + r.random_range(-0.01..0.01), origin[1] + r.random_range(-0.01..0.01)];
                means[c][0] += p[0] / 200.0;
                means[c][1] += p[1] / 200.0;
                pts.extend_from_slice(&p);
            }
        }
        (pts, means[0], means[1])
    }

    #[test]
    fn k_points_k_clusters_zero_inertia() {
        let pts = [0.0, 0.0, 1.0, 0.0, 0.0, 5.0];
        let r = kmeans_pp(&pts, 2, 3, 1, KMeansOptions::default()).unwrap();
        assert_eq!(r.inertia, 0.0);
        assert_eq!(r.sizes(), vec![1, 1, 1]);
    }

    #[test]
    fn two_blobs_recover_means() {
        let (pts, m0, m1) = blobs(3);
        let r = kmeans_pp(&pts, 2, 2, 11, KMeansOptions::default()).unwrap();
        for m in [m0, m1] {
            let best = (0..2).map(|c| sq_dist(r.center(c), &m).sqrt()).fold(f64::INFINITY, f64::min);
            assert!(best < 1e-3, "{best}");
        }
    }

    #[test]
    fn deterministic_and_monotone() {
        let mut r = rng(5);
        let pts: Vec<f64> = (0..600).map(|_| r.random_range(-1.0..1.0)).collect();
        let a = kmeans_pp(&pts, 3, 6, 9, KMeansOptions::default()).unwrap();
        let b = kmeans_pp(&pts, 3, 6, 9, KMeansOptions::default()).unwrap();
        assert_eq!(a, b);
        assert!(a.history.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        for i in 0..200 {
            assert_eq!(a.assignments[i], nearest(&pts[i * 3..i * 3 + 3], &a.centers, 3).0);
        }
    }

    #[test]
    fn k_reduced_to_distinct_points() {
        let pts = [1.0, 1.0, 1.0, 1.0, 2.0, 2.0];
        let r = kmeans_pp(&pts, 2, 3, 0, KMeansOptions::default()).unwrap();
        assert_eq!(r.k(), 2);
        assert!(kmeans_pp(&[], 2, 1, 0, KMeansOptions::default()).is_err());
    }

    #[test]
    fn binarize_examples() {
        let ones = Tensor3 { height: 1, width: 2, channels: 2, data: vec![1.0; 4] };
        assert_eq!(binarize_activations(&ones, 0.5).count_ones(), 4);
        assert_eq!(binarize_activations(&ones, 1.0).count_ones(), 0);
        let bits = Tensor3 { data: vec![0.0, 1.0, 1.0, 0.0], ..ones };
        let once = binarize_activations(&bits, 0.5);
        let again: Vec<f64> = (0..4).map(|i| if once.get(i) { 1.0 } else { 0.0 }).collect();
        assert_eq!(binarize_activations(&Tensor3 { data: again, ..bits }, 0.5), once);
    }

    #[test]
    fn spectral_splits_two_groups() {
        let a = BitVector::from_bools((0..40).map(|i| i < 20));
        let b = BitVector::from_bools((0..40).map(|i| i >= 20));
        let bits: Vec<BitVector> = (0..10).map(|i| if i % 2 == 0 { a.clone() } else { b.clone() }).collect();
        let r = spectral_cluster(&bits, 2, 4).unwrap();
        assert!(r.empty.is_empty());
        for i in 0..10 {
            assert_eq!(r.assignments[i] == r.assignments[0], i % 2 == 0);
        }
    }

    #[test]
    fn spectral_degenerate_identical() {
        let a = BitVector::from_bools([true, false, true]);
        let r = spectral_cluster(&[a.clone(), a.clone(), a], 2, 0).unwrap();
        assert_eq!(r.assignments, vec![0, 0, 0]);
        assert_eq!(r.empty, vec![1]);
    }

    #[test]
    fn affinity_symmetric_unit_diagonal() {
        let mut r = rng(2);
        let bits: Vec<BitVector> = (0..6).map(|_| BitVector::from_bools((0..70).map(|_| r.random::<bool>()))).collect();
        let w = hamming_affinity(&bits).unwrap();
        for a in 0..6 {
            assert_eq!(w[(a, a)], 1.0);
            for b in 0..6 {
                assert_eq!(w[(a, b)], w[(b, a)]);
            }
        }
    }
}
