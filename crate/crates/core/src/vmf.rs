//! von Mises-Fisher kernel bank.
//!
//! The normalization constant is fixed to `Z(sigma) = e^sigma`, so the
//! activation of kernel `k` at a unit feature `f` is `exp(sigma (mu_k . f - 1))`,
//! which lies in `(0, 1]` and equals 1 exactly when `f = mu_k`.

use crate::error::{Error, Result};
use crate::tensor::{dot_f32_f64, inner_product_maps, FeatureMap, Tensor3};

pub const DEFAULT_SIGMA: f64 = 30.0;

/// Allowed deviation of a kernel norm from 1.
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct VmfKernelBank {
    k: usize,
    depth: usize,
    sigma: f64,
    /// `K x D`, row-major.
    mus: Vec<f64>,
}

impl VmfKernelBank {
    /// Builds a bank from kernel rows that must already be unit length.
    pub fn new(mus: Vec<f64>, depth: usize, sigma: f64) -> Result<Self> {
        let bank = Self::unchecked(mus, depth, sigma)?;
        bank.validate()?;
        Ok(bank)
    }

    /// Builds a bank, normalizing each row. Zero rows are rejected.
    pub fn from_directions(mut mus: Vec<f64>, depth: usize, sigma: f64) -> Result<Self> {
        if depth == 0 || mus.is_empty() || !mus.len().is_multiple_of(depth) {
            return Err(Error::Dimension(format!("{} kernel values do not form rows of depth {depth}", mus.len())));
        }
        for (k, row) in mus.chunks_exact_mut(depth).enumerate() {
            let n = norm(row);
            if n == 0.0 || !n.is_finite() {
                return Err(Error::Invariant(format!("kernel {k} has zero norm")));
            }
            row.iter_mut().for_each(|x| *x /= n);
        }
        Self::new(mus, depth, sigma)
    }

    fn unchecked(mus: Vec<f64>, depth: usize, sigma: f64) -> Result<Self> {
        if depth == 0 || mus.is_empty() || !mus.len().is_multiple_of(depth) {
            return Err(Error::Dimension(format!("{} kernel values do not form rows of depth {depth}", mus.len())));
        }
        Ok(Self { k: mus.len() / depth, depth, sigma, mus })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Invariant(format!("sigma must be > 0, got {}", self.sigma)));
        }
        for (k, row) in self.mus.chunks_exact(self.depth).enumerate() {
            let n = norm(row);
            if (n - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::Invariant(format!("kernel {k} has norm {n}")));
            }
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn mus(&self) -> &[f64] {
        &self.mus
    }

    pub fn mu(&self, k: usize) -> &[f64] {
        &self.mus[k * self.depth..(k + 1) * self.depth]
    }

    /// Raw parameter access for optimizers; call [`Self::renormalize`] afterwards.
    pub fn mus_mut(&mut self) -> &mut [f64] {
        &mut self.mus
    }

    /// Projects every kernel back onto the unit sphere. A kernel that collapsed
    /// to zero is left unchanged and reported as an error.
    pub fn renormalize(&mut self) -> Result<()> {
        for (k, row) in self.mus.chunks_exact_mut(self.depth).enumerate() {
            let n = norm(row);
            if n == 0.0 || !n.is_finite() {
                return Err(Error::Numeric(format!("kernel {k} collapsed (norm {n})")));
            }
            row.iter_mut().for_each(|x| *x /= n);
        }
        Ok(())
    }

    /// `log N(mu_k . f) = sigma (mu_k . f - 1)`.
    pub fn log_activation(&self, f: &[f32], k: usize) -> Result<f64> {
        if k >= self.k {
            return Err(Error::Index { index: k, len: self.k });
        }
        if f.len() != self.depth {
            return Err(Error::Dimension(format!("feature depth {} vs kernel depth {}", f.len(), self.depth)));
        }
        Ok(self.sigma * (dot_f32_f64(f, self.mu(k)) - 1.0))
    }

    /// The activation tensor `L` (`H x W x K`, entries in `(0, 1]`).
    pub fn activation_tensor(&self, map: &FeatureMap) -> Result<Tensor3> {
        let mut b = inner_product_maps(map, &self.mus, self.depth)?;
        let sigma = self.sigma;
        b.data.iter_mut().for_each(|x| *x = (sigma * (*x - 1.0)).exp());
        Ok(b)
    }

    /// Closed-form maximum-likelihood update under hard assignments: each
    /// kernel becomes the normalized mean of its assigned features. Kernels
    /// with no features, or whose features average to zero, keep their value.
    pub fn ml_update(&self, features: &[&[f32]], assignments: &[usize]) -> Result<Self> {
        if features.len() != assignments.len() {
            return Err(Error::Dimension(format!("{} features but {} assignments", features.len(), assignments.len())));
        }
        let mut sums = vec![0.0f64; self.k * self.depth];
        for (f, &a) in features.iter().zip(assignments) {
            if a >= self.k {
                return Err(Error::Index { index: a, len: self.k });
            }
            if f.len() != self.depth {
                return Err(Error::Dimension("feature depth mismatch".into()));
            }
            for (s, &x) in sums[a * self.depth..(a + 1) * self.depth].iter_mut().zip(*f) {
                *s += x as f64;
            }
        }
        let mut out = self.clone();
        for (k, (row, sum)) in out.mus.chunks_exact_mut(self.depth).zip(sums.chunks_exact(self.depth)).enumerate() {
            let n = norm(sum);
            // Below this the mean direction is numerically meaningless.
            if n > 1e-12 {
                for (m, s) in row.iter_mut().zip(sum) {
                    *m = s / n;
                }
            } else {
                tracing::debug!(kernel = k, "ml_update: no usable mass, keeping kernel");
            }
        }
        Ok(out)
    }

    /// Index of the most similar kernel to `f`; lowest index wins ties.
    pub fn best_kernel(&self, f: &[f32]) -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for k in 0..self.k {
            let s = dot_f32_f64(f, self.mu(k));
            if s > best.1 {
                best = (k, s);
            }
        }
        best
    }
}

/// Free energy of the hard-assignment vMF model, `-sum_i max_k mu_k . f_i`,
/// and its gradient with respect to the kernels projected onto the tangent
/// space of the unit sphere at each kernel.
pub fn loss_vmf(map: &FeatureMap, bank: &VmfKernelBank) -> Result<(f64, Vec<f64>)> {
    if map.depth() != bank.depth {
        return Err(Error::Dimension(format!("feature depth {} vs kernel depth {}", map.depth(), bank.depth)));
    }
    let mut grad = vec![0.0; bank.k * bank.depth];
    let loss = accumulate_loss_vmf(map.vectors(), bank, 1.0, &mut grad);
    project_tangent(bank, &mut grad);
    Ok((loss, grad))
}

/// Adds `scale * d/dmu (-sum max_k mu_k . f)` (unprojected) into `grad` and
/// returns the scaled loss.
pub(crate) fn accumulate_loss_vmf<'a>(
    features: impl Iterator<Item = &'a [f32]>,
    bank: &VmfKernelBank,
    scale: f64,
    grad: &mut [f64],
) -> f64 {
    let d = bank.depth;
    let mut loss = 0.0;
    for f in features {
        let (k, s) = bank.best_kernel(f);
        loss -= s;
        for (g, &x) in grad[k * d..(k + 1) * d].iter_mut().zip(f) {
            *g -= scale * x as f64;
        }
    }
    scale * loss
}

/// `g_k <- g_k - (g_k . mu_k) mu_k` for every kernel.
pub fn project_tangent(bank: &VmfKernelBank, grad: &mut [f64]) {
    for (g, mu) in grad.chunks_exact_mut(bank.depth).zip(bank.mus.chunks_exact(bank.depth)) {
        let along: f64 = g.iter().zip(mu).map(|(a, b)| a * b).sum();
        g.iter_mut().zip(mu).for_each(|(a, &b)| *a -= along * b);
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
