//! Evaluation metrics: accuracy tables, detection AP and occluder ROC.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::inference::{
    class_window, classify_activations, detect_activations, occlusion_scores, ClassifyOptions, DetectOptions,
};
use crate::model::CompositionalNet;
use crate::synth::{Level, OccluderType};
use crate::tensor::{FeatureMap, ScoreGrid};

/// Per (level, occluder type) tallies of correct classifications.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AccuracyTable {
    pub cells: BTreeMap<(Level, OccluderType), (usize, usize)>,
}

impl AccuracyTable {
    /// `None` for a cell without samples.
    pub fn accuracy(&self, level: Level, kind: OccluderType) -> Option<f64> {
        self.cells.get(&(level, kind)).filter(|(_, n)| *n > 0).map(|&(c, n)| c as f64 / n as f64)
    }

    /// Pooled accuracy over all samples at `level`.
    pub fn level_accuracy(&self, level: Level) -> Option<f64> {
        let (c, n) =
            self.cells.iter().filter(|((l, _), _)| *l == level).fold((0, 0), |(c, n), (_, &(ci, ni))| (c + ci, n + ni));
        (n > 0).then(|| c as f64 / n as f64)
    }

    /// Unweighted mean over the non-empty cells.
    pub fn mean(&self) -> Option<f64> {
        let accs: Vec<f64> = self.cells.values().filter(|(_, n)| *n > 0).map(|&(c, n)| c as f64 / n as f64).collect();
        (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
    }

    /// Levels as rows, occluder types as columns; absent cells print `-`.
    pub fn render(&self) -> String {
        let kinds =
            [OccluderType::None, OccluderType::White, OccluderType::Noise, OccluderType::Texture, OccluderType::Object];
        let mut out = String::from("level");
        for k in kinds {
            write!(out, "\t{}", k.tag()).expect("writing to a String");
        }
        out.push_str("\tall\n");
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |a| format!("{:.1}", 100.0 * a));
        for level in Level::ALL {
            out.push_str(level.tag());
            for k in kinds {
                write!(out, "\t{}", fmt(self.accuracy(level, k))).expect("writing to a String");
            }
            writeln!(out, "\t{}", fmt(self.level_accuracy(level))).expect("writing to a String");
        }
        writeln!(out, "mean\t{}", fmt(self.mean())).expect("writing to a String");
        out
    }
}

/// One classified test sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClsRecord {
    pub level: Level,
    pub kind: OccluderType,
    pub predicted: usize,
    pub label: usize,
}

pub fn eval_classification(records: &[ClsRecord]) -> AccuracyTable {
    let mut table = AccuracyTable::default();
    for r in records {
        let cell = table.cells.entry((r.level, r.kind)).or_insert((0, 0));
        cell.0 += usize::from(r.predicted == r.label);
        cell.1 += 1;
    }
    table
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    a.iou(b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredBox {
    pub image: usize,
    pub label: usize,
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub image: usize,
    pub label: usize,
    pub bbox: BBox,
}

/// Greedy matching in descending score order; one flag per ranked detection.
pub fn match_detections(dets: &[ScoredBox], gts: &[GroundTruth], iou_thresh: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut used = vec![false; gts.len()];
    let mut hits = vec![false; dets.len()];
    for &d in &order {
        let det = &dets[d];
        let best = gts
            .iter()
            .enumerate()
            .filter(|(g, gt)| !used[*g] && gt.image == det.image && gt.label == det.label)
            .map(|(g, gt)| (g, det.bbox.iou(&gt.bbox)))
            .filter(|&(_, o)| o > iou_thresh)
            .max_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((g, _)) = best {
            used[g] = true;
            hits[d] = true;
        }
    }
    order.iter().map(|&d| hits[d]).collect()
}

/// Area under the precision/recall curve with all-points interpolation:
/// precision at each recall is the best precision at that recall or higher.
pub fn average_precision(ranked_hits: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 || ranked_hits.is_empty() {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(ranked_hits.len());
    for (i, &hit) in ranked_hits.iter().enumerate() {
        tp += usize::from(hit);
        points.push((tp as f64 / num_gt as f64, tp as f64 / (i + 1) as f64));
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..points.len() {
        let (r, _) = points[i];
        if r > prev_recall {
            let envelope = points[i..].iter().map(|p| p.1).fold(0.0, f64::max);
            ap += (r - prev_recall) * envelope;
            prev_recall = r;
        }
    }
    ap
}

/// AP of `dets` against `gts` at the given IoU threshold. A detection is a
/// true positive when it has the right class and overlaps an unmatched box
/// by more than the threshold.
pub fn eval_detection(dets: &[ScoredBox], gts: &[GroundTruth], iou_thresh: f64) -> f64 {
    average_precision(&match_detections(dets, gts, iou_thresh), gts.len())
}

/// The highest-scoring detection of every image (first one on ties).
pub fn top_per_image(dets: &[ScoredBox]) -> Vec<ScoredBox> {
    let mut best: BTreeMap<usize, ScoredBox> = BTreeMap::new();
    for d in dets {
        match best.get(&d.image) {
            Some(b) if b.score >= d.score => {}
            _ => {
                best.insert(d.image, *d);
            }
        }
    }
    best.into_values().collect()
}

/// Correct AP for single-object images: each image contributes its top
/// detection, which counts only with the right class and enough overlap.
pub fn eval_detection_per_image(dets: &[ScoredBox], gts: &[GroundTruth], iou_thresh: f64) -> f64 {
    eval_detection(&top_per_image(dets), gts, iou_thresh)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Roc {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// ROC of `(score, is_positive)` samples; higher scores mean positive. Tied
/// scores move together, so ties earn half credit.
pub fn roc_curve(samples: &[(f64, bool)]) -> Result<Roc> {
    let pos = samples.iter().filter(|s| s.1).count();
    let neg = samples.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Data(format!("ROC needs both classes, got {pos} positive and {neg} negative")));
    }
    if samples.iter().any(|s| s.0.is_nan()) {
        return Err(Error::Numeric("NaN score in ROC input".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    let auc = points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum();
    Ok(Roc { points, auc })
}

/// Occluder-vs-object ROC over object cells only. Each item is a score plane
/// with its ground-truth occluder and object masks at feature resolution.
pub fn eval_occlusion_roc(items: &[(&ScoreGrid, &[bool], &[bool])]) -> Result<Roc> {
    let mut samples = Vec::new();
    for &(grid, occ, obj) in items {
        if occ.len() != grid.len() || obj.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "masks of {} and {} cells for a {}-cell score plane",
                occ.len(),
                obj.len(),
                grid.len()
            )));
        }
        for i in 0..grid.len() {
            if obj[i] && grid.valid[i] {
                samples.push((grid.values[i], occ[i]));
            }
        }
    }
    roc_curve(&samples)
}

/// A labelled test scene.
#[derive(Debug, Clone, Copy)]
pub struct EvalScene<'a> {
    pub map: &'a FeatureMap,
    pub label: usize,
    pub level: Level,
    pub kind: OccluderType,
    /// Object box in pixels.
    pub bbox: BBox,
    /// Occluder and object masks on the feature grid, when known.
    pub masks: Option<(&'a [bool], &'a [bool])>,
}

pub fn classification_records(
    net: &CompositionalNet,
    scenes: &[EvalScene],
    opts: ClassifyOptions,
) -> Result<Vec<ClsRecord>> {
    scenes
        .par_iter()
        .map(|s| {
            let acts = net.bank.activation_tensor(s.map)?;
            Ok(ClsRecord {
                level: s.level,
                kind: s.kind,
                predicted: classify_activations(&acts, net, opts)?.predicted,
                label: s.label,
            })
        })
        .collect()
}

/// Per-image correct AP at IoU 0.5 for every level present, in level order.
pub fn detection_ap_by_level(
    net: &CompositionalNet,
    scenes: &[EvalScene],
    opts: &DetectOptions,
) -> Result<Vec<(Level, f64)>> {
    let per_scene: Vec<Vec<ScoredBox>> = scenes
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let acts = net.bank.activation_tensor(s.map)?;
            Ok(detect_activations(&acts, net, opts)?
                .into_iter()
                .map(|d| ScoredBox { image: i, label: d.label, bbox: d.image_bbox, score: d.score })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for level in Level::ALL {
        let idx: Vec<usize> = (0..scenes.len()).filter(|&i| scenes[i].level == level).collect();
        if idx.is_empty() {
            continue;
        }
        let gts: Vec<GroundTruth> =
            idx.iter().map(|&i| GroundTruth { image: i, label: scenes[i].label, bbox: scenes[i].bbox }).collect();
        let dets: Vec<ScoredBox> = idx.iter().flat_map(|&i| per_scene[i].iter().copied()).collect();
        out.push((level, eval_detection_per_image(&dets, &gts, 0.5)));
    }
    Ok(out)
}

/// Occluder localization ROC over the correctly classified scenes that carry
/// masks, scored on the true class's classification window. Also returns how
/// many scenes entered.
pub fn occlusion_roc_on_correct(net: &CompositionalNet, scenes: &[EvalScene], omega: f64) -> Result<(Roc, usize)> {
    let opts = ClassifyOptions { omega, ..ClassifyOptions::default() };
    let planes: Vec<Option<(ScoreGrid, Vec<bool>, Vec<bool>)>> = scenes
        .par_iter()
        .map(|s| {
            let Some((occ, obj)) = s.masks else { return Ok(None) };
            let acts = net.bank.activation_tensor(s.map)?;
            if classify_activations(&acts, net, opts)?.predicted != s.label {
                return Ok(None);
            }
            let grid = occlusion_scores(&acts, net, s.label, omega)?;
            let window = class_window(&net.classes[s.label], acts.height, acts.width);
            let (mut wocc, mut wobj) = (vec![false; grid.len()], vec![false; grid.len()]);
            for (u, g) in window.valid_cells() {
                wocc[u] = occ[g];
                wobj[u] = obj[g];
            }
            Ok(Some((grid, wocc, wobj)))
        })
        .collect::<Result<_>>()?;
    let items: Vec<(&ScoreGrid, &[bool], &[bool])> =
        planes.iter().flatten().map(|(g, o, b)| (g, o.as_slice(), b.as_slice())).collect();
    Ok((eval_occlusion_roc(&items)?, items.len()))
}
