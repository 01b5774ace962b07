//! Per-position mixture coefficients over the vMF kernels (the object
//! template of one viewpoint) and the likelihood planes derived from them.
//!
//! Coefficients are stored as unconstrained logits; the simplex-valued
//! coefficients are their per-cell softmax, cached alongside.

use crate::error::{Error, Result};
use crate::tensor::{dot, ScoreGrid, Tensor3, Window, WindowShape};

/// Simplex tolerance on stored coefficients.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

/// Logit assigned to an exactly-zero probability.
const MIN_LOGIT: f64 = -690.0;

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureCoefficients {
    height: usize,
    width: usize,
    k: usize,
    logits: Vec<f64>,
    probs: Vec<f64>,
}

impl MixtureCoefficients {
    pub fn from_logits(height: usize, width: usize, k: usize, logits: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || k == 0 || logits.len() != height * width * k {
            return Err(Error::Dimension(format!(
                "mixture {height}x{width}x{k} needs {} logits, got {}",
                height * width * k,
                logits.len()
            )));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invariant("mixture logits must be finite".into()));
        }
        let mut out = Self { height, width, k, probs: vec![0.0; logits.len()], logits };
        out.refresh();
        Ok(out)
    }

    /// From simplex-valued coefficients. Each cell must sum to 1.
    pub fn from_probs(height: usize, width: usize, k: usize, probs: &[f64]) -> Result<Self> {
        if probs.len() != height * width * k {
            return Err(Error::Dimension(format!(
                "mixture {height}x{width}x{k} needs {} coefficients, got {}",
                height * width * k,
                probs.len()
            )));
        }
        check_simplex(probs, k)?;
        let logits = probs.iter().map(|&p| if p > 0.0 { p.ln().max(MIN_LOGIT) } else { MIN_LOGIT }).collect();
        Self::from_logits(height, width, k, logits)
    }

    pub fn uniform(height: usize, width: usize, k: usize) -> Self {
        Self::from_logits(height, width, k, vec![0.0; height * width * k]).expect("non-empty")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn cell(&self, cell: usize) -> &[f64] {
        &self.probs[cell * self.k..(cell + 1) * self.k]
    }

    /// Mutate the logits in place; probabilities are recomputed afterwards.
    pub fn update_logits(&mut self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.logits);
        self.refresh();
    }

    pub fn validate(&self) -> Result<()> {
        if self.logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invariant("mixture logits must be finite".into()));
        }
        check_simplex(&self.probs, self.k)
    }

    fn refresh(&mut self) {
        for (lg, p) in self.logits.chunks_exact(self.k).zip(self.probs.chunks_exact_mut(self.k)) {
            softmax_into(lg, p);
        }
    }
}

fn check_simplex(probs: &[f64], k: usize) -> Result<()> {
    for (cell, p) in probs.chunks_exact(k).enumerate() {
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE || p.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::Invariant(format!("cell {cell} is not on the simplex (sum {sum})")));
        }
    }
    Ok(())
}

pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - m).exp();
        z += *o;
    }
    out.iter_mut().for_each(|o| *o /= z);
}

/// Chain rule through a per-cell softmax: `d_logit = a * (d_a - a . d_a)`, added into `d_logits`.
pub(crate) fn softmax_backward(alpha: &[f64], d_alpha: &[f64], d_logits: &mut [f64]) {
    let inner = dot(alpha, d_alpha);
    for ((g, &a), &da) in d_logits.iter_mut().zip(alpha).zip(d_alpha) {
        *g += a * (da - inner);
    }
}

/// Window-shaped activations cut out of a full activation tensor, with a mask
/// of the cells that fell inside the source grid (invalid cells hold zeros).
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationCrop {
    pub acts: Tensor3,
    pub valid: Vec<bool>,
}

impl ActivationCrop {
    pub fn new(acts: &Tensor3, window: Window) -> Self {
        let shape = window.shape;
        let mut out = Tensor3::zeros(shape.height, shape.width, acts.channels);
        let mut valid = vec![false; shape.cells()];
        for (cell, g) in window.valid_cells() {
            out.at_mut(cell).copy_from_slice(acts.at(g));
            valid[cell] = true;
        }
        Self { acts: out, valid }
    }

    /// A crop where every cell is valid.
    pub fn full(acts: Tensor3) -> Self {
        let valid = vec![true; acts.len()];
        Self { acts, valid }
    }

    pub fn shape(&self) -> WindowShape {
        WindowShape::centered(self.acts.height, self.acts.width)
    }

    pub fn cells(&self) -> usize {
        self.valid.len()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

fn check_crop(crop: &ActivationCrop, mix: &MixtureCoefficients) -> Result<()> {
    if crop.acts.height != mix.height || crop.acts.width != mix.width || crop.acts.channels != mix.k {
        return Err(Error::Dimension(format!(
            "activations {}x{}x{} vs mixture {}x{}x{}",
            crop.acts.height, crop.acts.width, crop.acts.channels, mix.height, mix.width, mix.k
        )));
    }
    Ok(())
}

/// `E[i] = log(l_i . alpha_i)` at valid cells; excluded cells hold 0 and are
/// flagged invalid.
pub fn mixture_loglik_plane(crop: &ActivationCrop, mix: &MixtureCoefficients) -> Result<ScoreGrid> {
    check_crop(crop, mix)?;
    let mut grid = ScoreGrid::filled(mix.height, mix.width, 0.0);
    for cell in 0..mix.cells() {
        if crop.valid[cell] {
            grid.values[cell] = dot(crop.acts.at(cell), mix.cell(cell)).ln();
        } else {
            grid.valid[cell] = false;
        }
    }
    Ok(grid)
}

/// Initialize `m` mixtures as normalized mean activations of the images
/// assigned to each. `weights[i][cell]` (optional) selects which cells of
/// image `i` contribute; invalid crop cells never do. Cells without mass get
/// the uniform vector. Returns the mixtures and the list of empty components.
pub fn init_mixture_coefficients(
    stacks: &[ActivationCrop],
    weights: Option<&[Vec<bool>]>,
    assignments: &[usize],
    m: usize,
) -> Result<(Vec<MixtureCoefficients>, Vec<usize>)> {
    let first = stacks.first().ok_or_else(|| Error::Data("no activation stacks to initialize from".into()))?;
    let (h, w, k) = (first.acts.height, first.acts.width, first.acts.channels);
    if assignments.len() != stacks.len() {
        return Err(Error::Dimension(format!("{} stacks but {} assignments", stacks.len(), assignments.len())));
    }
    if let Some(ws) = weights {
        if ws.len() != stacks.len() || ws.iter().any(|mask| mask.len() != h * w) {
            return Err(Error::Dimension("weight masks do not match stacks".into()));
        }
    }
    let cells = h * w;
    let mut sums = vec![vec![0.0f64; cells * k]; m];
    let mut counts = vec![0usize; m];
    for (idx, (stack, &a)) in stacks.iter().zip(assignments).enumerate() {
        if a >= m {
            return Err(Error::Index { index: a, len: m });
        }
        if stack.acts.height != h || stack.acts.width != w || stack.acts.channels != k {
            return Err(Error::Dimension("activation stacks differ in shape".into()));
        }
        counts[a] += 1;
        for cell in 0..cells {
            let used = stack.valid[cell] && weights.is_none_or(|ws| ws[idx][cell]);
            if used {
                for (s, &l) in sums[a][cell * k..(cell + 1) * k].iter_mut().zip(stack.acts.at(cell)) {
                    *s += l;
                }
            }
        }
    }
    let mut empty = Vec::new();
    let mut out = Vec::with_capacity(m);
    for (comp, sum) in sums.iter_mut().enumerate() {
        if counts[comp] == 0 {
            tracing::warn!(component = comp, "mixture component has no images; using uniform");
            empty.push(comp);
        }
        for cell in sum.chunks_exact_mut(k) {
            let total: f64 = cell.iter().sum();
            if total > 0.0 {
                cell.iter_mut().for_each(|x| *x /= total);
            } else {
                cell.fill(1.0 / k as f64);
            }
        }
        out.push(MixtureCoefficients::from_probs(h, w, k, sum)?);
    }
    Ok((out, empty))
}

/// `-sum_i (1 - z_i) log(l_i . alpha_i)` over valid cells and its gradient
/// with respect to the mixture logits.
pub fn loss_mix(crop: &ActivationCrop, mix: &MixtureCoefficients, occluded: &[bool]) -> Result<(f64, Vec<f64>)> {
    check_crop(crop, mix)?;
    if occluded.len() != mix.cells() {
        return Err(Error::Dimension("occlusion map does not match mixture".into()));
    }
    let k = mix.k;
    let mut grad = vec![0.0; mix.logits.len()];
    let mut d_alpha = vec![0.0; k];
    let mut loss = 0.0;
    for cell in 0..mix.cells() {
        if !crop.valid[cell] || occluded[cell] {
            continue;
        }
        let l = crop.acts.at(cell);
        let alpha = mix.cell(cell);
        let q = dot(l, alpha);
        loss -= q.ln();
        for (d, &lk) in d_alpha.iter_mut().zip(l) {
            *d = -lk / q;
        }
        softmax_backward(alpha, &d_alpha, &mut grad[cell * k..(cell + 1) * k]);
    }
    Ok((loss, grad))
}
