//! Context mixtures, the context/object blended likelihood, and the
//! box-driven context segmentation used to train them.

use crate::clustering::{kmeans_pp, KMeansOptions};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::mixture::{softmax_backward, ActivationCrop, MixtureCoefficients};
use crate::tensor::{dot, FeatureMap, Position, ScoreGrid};

pub const DEFAULT_CONTEXT_CENTERS: usize = 5;
pub const DEFAULT_CONTEXT_THRESHOLD: f64 = 0.75;
pub const DEFAULT_RF_MARGIN: usize = 1;

fn check_same(crop: &ActivationCrop, a: &MixtureCoefficients, chi: &MixtureCoefficients) -> Result<()> {
    let dims = |m: &MixtureCoefficients| (m.height(), m.width(), m.k());
    let c = (crop.acts.height, crop.acts.width, crop.acts.channels);
    if dims(a) != c || dims(chi) != c {
        return Err(Error::Dimension(format!("activations {c:?}, object {:?}, context {:?}", dims(a), dims(chi))));
    }
    Ok(())
}

fn check_omega(omega: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&omega) {
        return Err(Error::Config(format!("omega must lie in [0, 1], got {omega}")));
    }
    Ok(())
}

/// `E[i] = log(omega * l_i . chi_i + (1 - omega) * l_i . alpha_i)`.
/// With `omega = 0` the context mixture may be absent.
pub fn blend_loglik_plane(
    crop: &ActivationCrop,
    object: &MixtureCoefficients,
    context: Option<&MixtureCoefficients>,
    omega: f64,
) -> Result<ScoreGrid> {
    check_omega(omega)?;
    let chi = match context {
        Some(chi) => chi,
        None if omega == 0.0 => return crate::mixture::mixture_loglik_plane(crop, object),
        None => return Err(Error::Config(format!("omega = {omega} requires context mixtures"))),
    };
    check_same(crop, object, chi)?;
    let mut grid = ScoreGrid::filled(object.height(), object.width(), 0.0);
    for cell in 0..object.cells() {
        if crop.valid[cell] {
            let l = crop.acts.at(cell);
            let q = omega * dot(l, chi.cell(cell)) + (1.0 - omega) * dot(l, object.cell(cell));
            grid.values[cell] = q.ln();
        } else {
            grid.valid[cell] = false;
        }
    }
    Ok(grid)
}

/// Unit-norm context feature centers and the cosine cutoff for segmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextDictionary {
    pub depth: usize,
    /// `q x depth`, row-major.
    pub centers: Vec<f64>,
    pub threshold: f64,
}

impl ContextDictionary {
    pub fn q(&self) -> usize {
        self.centers.len() / self.depth
    }

    pub fn center(&self, q: usize) -> &[f64] {
        &self.centers[q * self.depth..(q + 1) * self.depth]
    }

    /// `max_q cos(C_q, f)`; void features score 0.
    pub fn max_cosine(&self, f: &[f32]) -> f64 {
        let norm = f.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        self.centers
            .chunks_exact(self.depth)
            .map(|c| crate::tensor::dot_f32_f64(f, c) / norm)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// k-means++ over context features (`n x depth` rows), centers renormalized.
pub fn build_context_dictionary(
    features: &[f64],
    depth: usize,
    q: usize,
    threshold: f64,
    seed: u64,
) -> Result<ContextDictionary> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("context threshold must lie in (0, 1), got {threshold}")));
    }
    let clusters = kmeans_pp(features, depth, q, seed, KMeansOptions::default())?;
    if clusters.k() < q {
        tracing::warn!(requested = q, used = clusters.k(), "context dictionary size reduced");
    }
    let mut centers = clusters.centers;
    for c in centers.chunks_exact_mut(depth) {
        let n = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            c.iter_mut().for_each(|x| *x /= n);
        }
    }
    Ok(ContextDictionary { depth, centers, threshold })
}

/// Per-cell object/context labels aligned to a grid; `true` marks object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextAssignment {
    pub height: usize,
    pub width: usize,
    pub object: Vec<bool>,
}

impl ContextAssignment {
    pub fn object_count(&self) -> usize {
        self.object.iter().filter(|&&o| o).count()
    }
}

/// Object cells lie inside `bbox` shrunk by `rf_margin` cells and are not
/// similar to any context center; every other cell is context.
pub fn segment_context(
    map: &FeatureMap,
    bbox: &BBox,
    dict: &ContextDictionary,
    rf_margin: usize,
) -> Result<ContextAssignment> {
    if dict.depth != map.depth() {
        return Err(Error::Dimension(format!("context dictionary depth {} vs map depth {}", dict.depth, map.depth())));
    }
    let (h, w) = (map.height(), map.width());
    if bbox.is_degenerate() {
        tracing::warn!(?bbox, "degenerate box; whole map treated as context");
        return Ok(ContextAssignment { height: h, width: w, object: vec![false; h * w] });
    }
    let inner = bbox.erode(rf_margin as f64);
    let object = (0..h * w)
        .map(|i| {
            let pos = Position::new(i / w, i % w);
            inner.contains_cell(pos) && dict.max_cosine(map.vector_at(i)) < dict.threshold
        })
        .collect();
    Ok(ContextAssignment { height: h, width: w, object })
}

/// Object cells pay `-log(l . alpha)`, context cells `-log(l . chi)`, occluded
/// and invalid cells nothing. Returns the loss and the logit gradients of the
/// object and context mixtures.
pub fn loss_context(
    crop: &ActivationCrop,
    object: &MixtureCoefficients,
    context: &MixtureCoefficients,
    is_object: &[bool],
    occluded: &[bool],
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_same(crop, object, context)?;
    let cells = object.cells();
    if is_object.len() != cells || occluded.len() != cells {
        return Err(Error::Dimension("context or occlusion map does not match window".into()));
    }
    let k = object.k();
    let mut g_obj = vec![0.0; cells * k];
    let mut g_ctx = vec![0.0; cells * k];
    let mut d = vec![0.0; k];
    let mut loss = 0.0;
    for cell in 0..cells {
        if !crop.valid[cell] || occluded[cell] {
            continue;
        }
        let (mix, grad) = if is_object[cell] { (object, &mut g_obj) } else { (context, &mut g_ctx) };
        let l = crop.acts.at(cell);
        let q = dot(l, mix.cell(cell));
        loss -= q.ln();
        for (dk, &lk) in d.iter_mut().zip(l) {
            *dk = -lk / q;
        }
        softmax_backward(mix.cell(cell), &d, &mut grad[cell * k..(cell + 1) * k]);
    }
    Ok((loss, g_obj, g_ctx))
}
