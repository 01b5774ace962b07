//! Feed-forward inference: occlusion-robust class scores, scanning-window
//! detection maps, non-maximum suppression and corner voting.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::context::blend_loglik_plane;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::mixture::ActivationCrop;
use crate::model::{ClassModel, CompositionalNet, Corner, PartModel};
use crate::occlusion::{occlusion_decision, occlusion_loglik_plane, occlusion_score_plane, OccluderBank};
use crate::tensor::{FeatureMap, Position, ScoreGrid, Tensor3, Window, WindowShape};

pub const DEFAULT_TEMPERATURE: f64 = 2.0;

/// Index of the first maximum.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Softmax of `t * scores`.
pub fn softmax_with_temperature(scores: &[f64], t: f64) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|&s| (t * (s - m)).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// `sum_i max(E_i + log(1 - p), O_i + log p)` over cells valid in both planes.
pub fn robust_score(e: &ScoreGrid, o: &ScoreGrid, occ: &OccluderBank) -> f64 {
    let (lp, lq) = (occ.log_prior(), occ.log_not_prior());
    (0..e.len()).filter(|&i| e.valid[i] && o.valid[i]).map(|i| (e.values[i] + lq).max(o.values[i] + lp)).sum()
}

/// Per-mixture robust scores of one part over one window crop.
#[derive(Debug, Clone, PartialEq)]
pub struct PartScore {
    pub per_mixture: Vec<f64>,
    pub winner: usize,
    pub score: f64,
    pub valid: usize,
    /// Likelihood plane of the winning mixture.
    pub e: ScoreGrid,
    pub o: ScoreGrid,
    pub occluded: Vec<bool>,
}

pub fn score_part(crop: &ActivationCrop, part: &PartModel, occ: &OccluderBank, omega: f64) -> Result<PartScore> {
    let o = occlusion_loglik_plane(crop, occ)?;
    let mut per_mixture = Vec::with_capacity(part.m());
    let mut planes = Vec::with_capacity(part.m());
    for m in 0..part.m() {
        let e = blend_loglik_plane(crop, &part.object[m], part.context_of(m), omega)?;
        per_mixture.push(robust_score(&e, &o, occ));
        planes.push(e);
    }
    let winner = argmax(&per_mixture);
    let e = planes.swap_remove(winner);
    let occluded = occlusion_decision(&e, &o, occ.prior())?;
    Ok(PartScore { score: per_mixture[winner], per_mixture, winner, valid: crop.valid_count(), e, o, occluded })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifyOptions {
    pub omega: f64,
    pub temperature: f64,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self { omega: 0.0, temperature: DEFAULT_TEMPERATURE }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationResult {
    /// `s_y = max_m s^m_y`.
    pub scores: Vec<f64>,
    pub valid: Vec<usize>,
    pub winners: Vec<usize>,
    pub mixture_scores: Vec<Vec<f64>>,
    /// Occlusion map of each class's winning mixture, in window cells.
    pub occlusion: Vec<Vec<bool>>,
    pub probabilities: Vec<f64>,
    pub predicted: usize,
}

impl ClassificationResult {
    /// `s_y / N_y`, the inputs to the tempered softmax.
    pub fn normalized_scores(&self) -> Vec<f64> {
        self.scores.iter().zip(&self.valid).map(|(s, &n)| s / n.max(1) as f64).collect()
    }
}

/// Classification window of a class: its center part placed on the grid center.
pub fn class_window(class: &ClassModel, grid_height: usize, grid_width: usize) -> Window {
    Window::centered_on_grid(class.center.shape, grid_height, grid_width)
}

pub fn classify(map: &FeatureMap, net: &CompositionalNet, opts: ClassifyOptions) -> Result<ClassificationResult> {
    let acts = net.bank.activation_tensor(map)?;
    classify_activations(&acts, net, opts)
}

pub fn classify_activations(
    acts: &Tensor3,
    net: &CompositionalNet,
    opts: ClassifyOptions,
) -> Result<ClassificationResult> {
    if net.classes.is_empty() {
        return Err(Error::Config("no class models".into()));
    }
    if !(opts.temperature > 0.0) {
        return Err(Error::Config("temperature must be positive".into()));
    }
    let mut out = ClassificationResult {
        scores: Vec::new(),
        valid: Vec::new(),
        winners: Vec::new(),
        mixture_scores: Vec::new(),
        occlusion: Vec::new(),
        probabilities: Vec::new(),
        predicted: 0,
    };
    for class in &net.classes {
        let crop = ActivationCrop::new(acts, class_window(class, acts.height, acts.width));
        if crop.valid_count() == 0 {
            return Err(Error::Dimension(format!("class {} window misses the map", class.label)));
        }
        let ps = score_part(&crop, &class.center, &net.occluders, opts.omega)?;
        out.scores.push(ps.score);
        out.valid.push(ps.valid);
        out.winners.push(ps.winner);
        out.mixture_scores.push(ps.per_mixture);
        out.occlusion.push(ps.occluded);
    }
    out.probabilities = softmax_with_temperature(&out.normalized_scores(), opts.temperature);
    out.predicted = argmax(&out.probabilities);
    Ok(out)
}

/// Occlusion score plane of `class`'s winning mixture over its classification window.
pub fn occlusion_scores(acts: &Tensor3, net: &CompositionalNet, class: usize, omega: f64) -> Result<ScoreGrid> {
    let model = net.classes.get(class).ok_or(Error::Index { index: class, len: net.classes.len() })?;
    let crop = ActivationCrop::new(acts, class_window(model, acts.height, acts.width));
    let ps = score_part(&crop, &model.center, &net.occluders, omega)?;
    occlusion_score_plane(&ps.e, &ps.o, net.occluders.prior())
}

/// `max_n log(l_p . beta_n)` at every grid position.
pub fn occluder_plane(acts: &Tensor3, occ: &OccluderBank) -> Result<ScoreGrid> {
    occlusion_loglik_plane(&ActivationCrop::full(acts.clone()), occ)
}

/// Activations as a `positions x K` matrix.
pub fn activation_matrix(acts: &Tensor3) -> DMatrix<f64> {
    DMatrix::from_row_slice(acts.len(), acts.channels, &acts.data)
}

fn coeff_matrix(probs: &[f64], k: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(probs.len() / k, k, probs)
}

/// Every grid position paired with every window cell: `E[p, u]` is the
/// blended log-likelihood of position `p` under window cell `u`.
#[derive(Debug, Clone)]
pub struct ScanTable {
    pub positions: usize,
    pub cells: usize,
    /// `positions x cells`, row-major.
    pub e: Vec<f64>,
}

pub fn scan_table(lmat: &DMatrix<f64>, part: &PartModel, m: usize, omega: f64) -> Result<ScanTable> {
    let k = part.k();
    let obj = lmat * coeff_matrix(part.object[m].probs(), k).transpose();
    let q = match part.context_of(m) {
        Some(chi) if omega > 0.0 => {
            let ctx = lmat * coeff_matrix(chi.probs(), k).transpose();
            obj * (1.0 - omega) + ctx * omega
        }
        None if omega > 0.0 => return Err(Error::Config(format!("omega = {omega} requires context mixtures"))),
        _ => obj,
    };
    let (positions, cells) = q.shape();
    let mut e = vec![0.0; positions * cells];
    for p in 0..positions {
        for u in 0..cells {
            e[p * cells + u] = q[(p, u)].ln();
        }
    }
    Ok(ScanTable { positions, cells, e })
}

/// Detection map of one part: for every window center the best mixture's
/// evidence ratio against the all-occluder explanation,
/// `sum_u max(E_u + log(1 - p) - O_u - log p, 0)` over valid cells.
/// Windows of equal content score equally wherever they sit.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionMap {
    pub r: ScoreGrid,
    pub winners: Vec<usize>,
    pub per_mixture: Vec<Vec<f64>>,
    pub cells: usize,
}

impl DetectionMap {
    /// Divisor turning a map value into a per-cell score.
    pub fn normalizer(&self) -> f64 {
        self.cells as f64
    }
}

pub fn detection_map_from(
    lmat: &DMatrix<f64>,
    o: &ScoreGrid,
    part: &PartModel,
    occ: &OccluderBank,
    omega: f64,
) -> Result<DetectionMap> {
    let (h, w) = (o.height, o.width);
    let shape = part.shape;
    let (log_p, log_q) = (occ.log_prior(), occ.log_not_prior());
    let mut per_mixture = Vec::with_capacity(part.m());
    for m in 0..part.m() {
        let table = scan_table(lmat, part, m, omega)?;
        let r: Vec<f64> = (0..h * w)
            .map(|i| {
                let win = Window::new(shape, Position::new(i / w, i % w), h, w);
                win.valid_cells()
                    .map(|(u, g)| (table.e[g * table.cells + u] + log_q - o.values[g] - log_p).max(0.0))
                    .sum()
            })
            .collect();
        per_mixture.push(r);
    }
    let mut r = ScoreGrid::filled(h, w, 0.0);
    let mut winners = vec![0; h * w];
    for i in 0..h * w {
        let col: Vec<f64> = per_mixture.iter().map(|v| v[i]).collect();
        winners[i] = argmax(&col);
        r.values[i] = col[winners[i]];
    }
    Ok(DetectionMap { r, winners, per_mixture, cells: shape.cells() })
}

pub fn detection_map(
    map: &FeatureMap,
    net: &CompositionalNet,
    class: usize,
    corner: Corner,
    omega: f64,
) -> Result<DetectionMap> {
    let acts = net.bank.activation_tensor(map)?;
    let part = net
        .classes
        .get(class)
        .and_then(|c| c.part(corner))
        .ok_or_else(|| Error::Config(format!("class {class} has no {corner:?} part")))?;
    let o = occluder_plane(&acts, &net.occluders)?;
    detection_map_from(&activation_matrix(&acts), &o, part, &net.occluders, omega)
}

/// Greedy peak picking: descending score (row-major order on ties), each
/// kept peak suppressing everything within Chebyshev distance `radius`.
pub fn nms(r: &ScoreGrid, radius: usize, t: f64) -> Vec<Position> {
    let mut order: Vec<usize> = (0..r.len()).filter(|&i| r.valid[i] && r.values[i] > t).collect();
    order.sort_by(|&a, &b| r.values[b].total_cmp(&r.values[a]).then(a.cmp(&b)));
    let mut kept: Vec<Position> = Vec::new();
    for i in order {
        let p = r.position(i);
        if kept.iter().all(|k| k.chebyshev(p) > radius) {
            kept.push(p);
        }
    }
    kept
}

/// Box of the model window placed at `center`, clipped to nothing.
pub fn window_box(shape: WindowShape, center: Position) -> BBox {
    let top = center.row as f64 - shape.anchor.row as f64;
    let left = center.col as f64 - shape.anchor.col as f64;
    BBox::new(left, top, left + shape.width as f64, top + shape.height as f64)
}

fn best_in(r: &ScoreGrid, keep: impl Fn(Position) -> bool) -> Option<Position> {
    let mut best: Option<(usize, f64)> = None;
    let mut lowest = f64::INFINITY;
    for i in 0..r.len() {
        if !r.valid[i] || !keep(r.position(i)) {
            continue;
        }
        let v = r.values[i];
        lowest = lowest.min(v);
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    // a flat region carries no corner evidence
    best.filter(|&(_, v)| v > lowest).map(|(i, _)| r.position(i))
}

/// Box from the strongest top-left corner response above-left of `center`
/// and the strongest bottom-right response below-right of it, both within
/// `search_radius`. Falls back to the model window when either region is
/// empty or flat. The flag reports the fallback.
pub fn vote_bbox(
    r_tl: &ScoreGrid,
    r_br: &ScoreGrid,
    center: Position,
    search_radius: usize,
    fallback: WindowShape,
) -> (BBox, bool) {
    let near = |p: Position| p.chebyshev(center) <= search_radius;
    let tl = best_in(r_tl, |p| near(p) && p.row < center.row && p.col < center.col);
    let br = best_in(r_br, |p| near(p) && p.row > center.row && p.col > center.col);
    match (tl, br) {
        (Some(tl), Some(br)) => (BBox::from_cells(tl, br), false),
        _ => (window_box(fallback, center), true),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectOptions {
    pub omega: f64,
    /// Per-class thresholds on the per-cell detection score; a single entry applies to all.
    pub thresholds: Vec<f64>,
    pub nms_radius: usize,
    pub search_radius: usize,
    pub use_corners: bool,
    pub max_per_class: usize,
    pub stride: usize,
}

impl Default for DetectOptions {
    fn default() -> Self {
        Self {
            omega: 0.2,
            thresholds: vec![0.0],
            nms_radius: 3,
            search_radius: 6,
            use_corners: true,
            max_per_class: 5,
            stride: 4,
        }
    }
}

impl DetectOptions {
    pub fn threshold(&self, class: usize) -> f64 {
        match self.thresholds.as_slice() {
            [] => 0.0,
            [t] => *t,
            ts => ts.get(class).copied().unwrap_or(ts[ts.len() - 1]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub label: usize,
    /// Box in feature cells.
    pub bbox: BBox,
    /// Box in pixels.
    pub image_bbox: BBox,
    /// Center-part detection score per window cell.
    pub score: f64,
    pub center: Position,
    pub mixture: usize,
    /// Occlusion map over the center window, row-major.
    pub occlusion: Vec<bool>,
    pub fallback: bool,
}

pub fn detect(map: &FeatureMap, net: &CompositionalNet, opts: &DetectOptions) -> Result<Vec<Detection>> {
    let acts = net.bank.activation_tensor(map)?;
    detect_activations(&acts, net, opts)
}

pub fn detect_activations(acts: &Tensor3, net: &CompositionalNet, opts: &DetectOptions) -> Result<Vec<Detection>> {
    if opts.use_corners && !net.has_corners() {
        return Err(Error::Config("corner voting needs corner models for every class".into()));
    }
    let lmat = activation_matrix(acts);
    let o = occluder_plane(acts, &net.occluders)?;
    let per_class: Vec<Result<Vec<Detection>>> =
        net.classes.par_iter().map(|class| detect_class(acts, &lmat, &o, net, class, opts)).collect();
    let mut all = Vec::new();
    for d in per_class {
        all.extend(d?);
    }
    all.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.label.cmp(&b.label)));
    let mut kept: Vec<Detection> = Vec::new();
    for d in all {
        if kept.iter().all(|k| k.bbox.iou(&d.bbox) <= 0.5) {
            kept.push(d);
        }
    }
    Ok(kept)
}

fn detect_class(
    acts: &Tensor3,
    lmat: &DMatrix<f64>,
    o: &ScoreGrid,
    net: &CompositionalNet,
    class: &ClassModel,
    opts: &DetectOptions,
) -> Result<Vec<Detection>> {
    let occ = &net.occluders;
    let ct = detection_map_from(lmat, o, &class.center, occ, opts.omega)?;
    let n = ct.cells as f64;
    let t = opts.threshold(class.label) * n;
    let centers: Vec<Position> = nms(&ct.r, opts.nms_radius, t).into_iter().take(opts.max_per_class).collect();
    if centers.is_empty() {
        return Ok(Vec::new());
    }
    let corners = match (&class.corners, opts.use_corners) {
        (Some((tl, br)), true) => Some((
            detection_map_from(lmat, o, tl, occ, opts.omega)?.r,
            detection_map_from(lmat, o, br, occ, opts.omega)?.r,
        )),
        _ => None,
    };
    let mut out = Vec::with_capacity(centers.len());
    for center in centers {
        let (bbox, fallback) = match &corners {
            Some((rtl, rbr)) => vote_bbox(rtl, rbr, center, opts.search_radius, class.center.shape),
            None => (window_box(class.center.shape, center), true),
        };
        let idx = center.row * ct.r.width + center.col;
        let mixture = ct.winners[idx];
        let crop = ActivationCrop::new(acts, Window::new(class.center.shape, center, acts.height, acts.width));
        let e = blend_loglik_plane(&crop, &class.center.object[mixture], class.center.context_of(mixture), opts.omega)?;
        let oc = occlusion_loglik_plane(&crop, occ)?;
        out.push(Detection {
            label: class.label,
            image_bbox: bbox.scale(opts.stride as f64),
            bbox,
            score: ct.r.values[idx] / n,
            center,
            mixture,
            occlusion: occlusion_decision(&e, &oc, occ.prior())?,
            fallback,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{random_map, random_net};
    use crate::mixture::MixtureCoefficients;

    #[test]
    fn identical_classes_tie() {
        let mut net = random_net(3, 3, 3, 2, 2, false, 4);
        net.classes[1].center = net.classes[0].center.clone();
        let map = random_map(3, 3, 5, 9);
        let r = classify(&map, &net, ClassifyOptions::default()).unwrap();
        assert_eq!(r.scores[0], r.scores[1]);
        assert!((r.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn self_consistent_pattern_wins() {
        // class 0's first mixture is one-hot on the kernel the map's features equal
        let mut net = random_net(3, 3, 3, 2, 2, false, 8);
        let hot = |k: usize| {
            let mut p = vec![0.0; 27];
            (0..9).for_each(|c| p[c * 3 + k] = 1.0);
            MixtureCoefficients::from_probs(3, 3, 3, &p).unwrap()
        };
        net.classes[0].center.object[0] = hot(1);
        net.classes[1].center.object = vec![hot(0), hot(2)];
        let mu: Vec<f32> = net.bank.mu(1).iter().map(|&x| x as f32).collect();
        let data = (0..9).flat_map(|_| mu.clone()).collect();
        let map = FeatureMap::new(3, 3, 5, data).unwrap().normalize_rows(1e-8);
        let r = classify(&map, &net, ClassifyOptions::default()).unwrap();
        assert_eq!(r.predicted, 0);
        assert_eq!(r.winners[0], 0);
    }

    #[test]
    fn softmax_temperature_example() {
        let p = softmax_with_temperature(&[1.0, 0.0], 2.0);
        assert!((p[0] - 0.8807970779778823).abs() < 1e-12);
    }

    fn grid(h: usize, w: usize, values: Vec<f64>) -> ScoreGrid {
        ScoreGrid::new(h, w, values).unwrap()
    }

    #[test]
    fn nms_examples() {
        let mut v = vec![0.0; 25];
        v[12] = 5.0;
        assert_eq!(nms(&grid(5, 5, v.clone()), 1, 1.0), vec![Position::new(2, 2)]);
        v[0] = 5.0;
        v[12] = 0.0;
        v[24] = 5.0;
        assert_eq!(nms(&grid(5, 5, v.clone()), 2, 1.0), vec![Position::new(0, 0), Position::new(4, 4)]);
        assert!(nms(&grid(5, 5, v), 2, 5.0).is_empty());
    }

    #[test]
    fn vote_examples() {
        let mut tl = vec![0.0; 49];
        let mut br = vec![0.0; 49];
        tl[7 + 1] = 1.0;
        br[5 * 7 + 6] = 1.0;
        let shape = WindowShape::centered(3, 3);
        let (b, fb) = vote_bbox(&grid(7, 7, tl), &grid(7, 7, br), Position::new(3, 3), 5, shape);
        assert!(!fb);
        assert_eq!(b, BBox::from_cells(Position::new(1, 1), Position::new(5, 6)));

        let flat = grid(7, 7, vec![0.3; 49]);
        let (b, fb) = vote_bbox(&flat, &flat, Position::new(3, 3), 5, shape);
        assert!(fb);
        assert_eq!(b, BBox::new(2.0, 2.0, 5.0, 5.0));
    }

    #[test]
    fn detection_map_shift_equivariance() {
        let net = random_net(3, 3, 4, 1, 2, true, 2);
        let map = random_map(8, 8, 6, 3);
        let mut shifted = FeatureMap::zeros(8, 8, 6);
        for r in 0..7 {
            for c in 0..6 {
                shifted.vector_mut(Position::new(r + 1, c + 2)).copy_from_slice(map.vector(Position::new(r, c)));
            }
        }
        let a = detection_map(&map, &net, 0, Corner::Center, 0.2).unwrap();
        let b = detection_map(&shifted.normalize_rows(1e-8), &net, 0, Corner::Center, 0.2).unwrap();
        // windows fully inside the copied region see identical content
        for r in 1..5 {
            for c in 1..4 {
                let i = r * 8 + c;
                let j = (r + 1) * 8 + c + 2;
                assert_eq!(a.r.values[i], b.r.values[j]);
            }
        }
    }
}
