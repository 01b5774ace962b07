//! Detection objective: classification from the center detection maps,
//! generative regularization of every part on its aligned crop, and the
//! dice localization loss, optimized with per-group Adam.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use nalgebra::DMatrix;

use super::backprop::{backprop_kernels, backprop_o, backprop_single, mixture_offsets, sum_in_order};
use super::losses::{loss_classification, loss_detect};
use super::optim::{adam_step, AdamParams, AdamState};
use super::{install_params, write_log, EpochLog, TrainConfig};
use crate::context::{segment_context, ContextDictionary};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::inference::{
    activation_matrix, detection_map_from, occluder_plane, scan_table, score_part, softmax_with_temperature,
};
use crate::instances::rng;
use crate::mixture::softmax_backward;
use crate::mixture::ActivationCrop;
use crate::model::{CompositionalNet, Corner, ParamGroup};
use crate::tensor::{dot, FeatureMap, Position, ScoreGrid, Tensor3, Window};
use crate::vmf::{accumulate_loss_vmf, project_tangent};

/// A training scene with its box (feature cells), part anchors and the
/// object/context labels of each part's window.
#[derive(Debug, Clone, PartialEq)]
pub struct DetSample {
    pub map: FeatureMap,
    pub label: usize,
    pub bbox: BBox,
    pub anchors: [Position; 3],
    /// Per part, window-cell labels (`true` = object), in [`Corner::ALL`] order.
    pub object_cells: [Vec<bool>; 3],
}

impl DetSample {
    /// Anchors come from the box; object cells from context segmentation
    /// (or from the eroded box alone when no dictionary is given).
    pub fn new(
        map: FeatureMap,
        label: usize,
        bbox: BBox,
        net: &CompositionalNet,
        dict: Option<&ContextDictionary>,
        rf_margin: usize,
    ) -> Result<Self> {
        let (h, w) = (map.height(), map.width());
        let object_grid: Vec<bool> = match dict {
            Some(d) => segment_context(&map, &bbox, d, rf_margin)?.object,
            None => {
                let inner = bbox.erode(rf_margin as f64);
                (0..h * w).map(|i| inner.contains_cell(Position::new(i / w, i % w))).collect()
            }
        };
        let class = net.classes.get(label).ok_or(Error::Index { index: label, len: net.classes.len() })?;
        let anchors = Corner::ALL.map(|c| c.anchor(&bbox));
        let object_cells = Corner::ALL.map(|c| {
            let shape = class.part(c).map_or(class.center.shape, |p| p.shape);
            let window = Window::new(shape, c.anchor(&bbox), h, w);
            let mut cells = vec![false; shape.cells()];
            for (u, g) in window.valid_cells() {
                cells[u] = object_grid[g];
            }
            cells
        });
        Ok(Self { map, label, bbox, anchors, object_cells })
    }
}

/// Batch-mean loss terms. `vmf`, `con` and `detect` are summed over parts.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DetTerms {
    pub class: f64,
    pub vmf: f64,
    pub con: f64,
    pub detect: f64,
    pub total: f64,
    /// Samples whose center map peaks within one cell of the true center.
    pub hits: usize,
}

struct Ctx<'a> {
    net: &'a CompositionalNet,
    acts: &'a Tensor3,
    lmat: &'a DMatrix<f64>,
    o: &'a ScoreGrid,
    omega: f64,
    shift: f64,
}

impl Ctx<'_> {
    /// Backpropagates `dr[p]`, the gradient on the map value of `class`'s
    /// `corner` part with mixture `m` at every window center `p`.
    fn backprop_map(
        &self,
        class: usize,
        corner: Corner,
        m: usize,
        dr: &[f64],
        grad: &mut [f64],
        dl: &mut [f64],
    ) -> Result<()> {
        let part = self.net.classes[class].part(corner).expect("part exists");
        let (h, w, k) = (self.acts.height, self.acts.width, self.acts.channels);
        let cells = part.shape.cells();
        let chi = part.context_of(m).filter(|_| self.omega > 0.0);
        let wa = if chi.is_some() { 1.0 - self.omega } else { 1.0 };
        let active: Vec<usize> = (0..dr.len()).filter(|&p| dr[p] != 0.0).collect();
        // a few peaks are cheaper cell by cell than through the full scan table
        let table = if active.len() * 8 > dr.len() { Some(scan_table(self.lmat, part, m, self.omega)?) } else { None };
        let blended = |g: usize, u: usize| -> f64 {
            match &table {
                Some(t) => t.e[g * cells + u].exp(),
                None => {
                    let l = self.acts.at(g);
                    let qa = dot(l, part.object[m].cell(u));
                    match chi {
                        Some(chi) => wa * qa + self.omega * dot(l, chi.cell(u)),
                        None => qa,
                    }
                }
            }
        };
        // a[r, u] = dLoss/dq at the r-th touched grid position under window cell u
        let mut row_of = vec![usize::MAX; h * w];
        let mut rows = Vec::new();
        for &p in &active {
            for (_, g) in Window::new(part.shape, Position::new(p / w, p % w), h, w).valid_cells() {
                if row_of[g] == usize::MAX {
                    row_of[g] = rows.len();
                    rows.push(g);
                }
            }
        }
        let mut a = DMatrix::<f64>::zeros(rows.len(), cells);
        let mut d_o = vec![0.0; h * w];
        for &p in &active {
            let window = Window::new(part.shape, Position::new(p / w, p % w), h, w);
            let d = dr[p];
            for (u, g) in window.valid_cells() {
                let q = blended(g, u);
                if q.ln() + self.shift - self.o.values[g] > 0.0 {
                    a[(row_of[g], u)] += d / q;
                    d_o[g] -= d;
                }
            }
        }
        let (obj_off, ctx_off) = mixture_offsets(self.net, class, corner, m);
        let l_rows = self.lmat.select_rows(&rows);
        let at_l = a.transpose() * l_rows;
        let alpha = DMatrix::from_row_slice(cells, k, part.object[m].probs());
        let mut coeff = &alpha * wa;
        for u in 0..cells {
            let d_alpha: Vec<f64> = at_l.row(u).iter().map(|x| x * wa).collect();
            let start = obj_off + u * k;
            softmax_backward(part.object[m].cell(u), &d_alpha, &mut grad[start..start + k]);
        }
        if let (Some(chi), Some(off)) = (chi, ctx_off) {
            for u in 0..cells {
                let d_chi: Vec<f64> = at_l.row(u).iter().map(|x| x * self.omega).collect();
                let start = off + u * k;
                softmax_backward(chi.cell(u), &d_chi, &mut grad[start..start + k]);
            }
            coeff += DMatrix::from_row_slice(cells, k, chi.probs()) * self.omega;
        }
        let d_l = a * coeff;
        for (r, &g) in rows.iter().enumerate() {
            let dlg = &mut dl[g * k..(g + 1) * k];
            for (x, &y) in dlg.iter_mut().zip(d_l.row(r).iter()) {
                *x += y;
            }
            if d_o[g] != 0.0 {
                backprop_o(&self.net.occluders, self.acts.at(g), d_o[g], dlg);
            }
        }
        Ok(())
    }
}

struct SampleOut {
    terms: DetTerms,
    grad: Vec<f64>,
}

fn sample_loss(net: &CompositionalNet, s: &DetSample, cfg: &TrainConfig) -> Result<SampleOut> {
    let y = s.label;
    if y >= net.classes.len() {
        return Err(Error::Index { index: y, len: net.classes.len() });
    }
    if !net.has_corners() {
        return Err(Error::Config("detection training needs corner parts for every class".into()));
    }
    let occ = &net.occluders;
    let bank = &net.bank;
    let k = bank.k();
    let kd = bank.mus().len();
    let acts = bank.activation_tensor(&s.map)?;
    let lmat = activation_matrix(&acts);
    let o = occluder_plane(&acts, occ)?;
    let ctx =
        Ctx { net, acts: &acts, lmat: &lmat, o: &o, omega: cfg.omega, shift: occ.log_not_prior() - occ.log_prior() };
    let mut grad = vec![0.0; net.param_len()];
    let mut dl = vec![0.0; acts.data.len()];
    let t = cfg.temperature;

    // classification from the peaks of the center maps
    let mut peaks = Vec::with_capacity(net.classes.len());
    let mut center_maps = Vec::with_capacity(net.classes.len());
    for class in &net.classes {
        let dm = detection_map_from(&lmat, &o, &class.center, occ, cfg.omega)?;
        let peak = dm.r.argmax().expect("detection map has valid cells");
        peaks.push(peak);
        center_maps.push(dm);
    }
    let u: Vec<f64> = center_maps.iter().zip(&peaks).map(|(dm, p)| dm.r.get(*p) / dm.normalizer()).collect();
    let (class_loss, g) = loss_classification(&u, y, t);
    for (c, (dm, &p)) in center_maps.iter().zip(&peaks).enumerate() {
        let idx = p.row * dm.r.width + p.col;
        if g[c] != 0.0 {
            let mut dr = vec![0.0; dm.r.len()];
            dr[idx] = g[c] / dm.normalizer();
            ctx.backprop_map(c, Corner::Center, dm.winners[idx], &dr, &mut grad, &mut dl)?;
        }
    }
    let hits = usize::from(peaks[y].chebyshev(s.anchors[0]) <= 1);

    let (mut vmf, mut con, mut detect) = (0.0, 0.0, 0.0);
    let e1 = cfg.epsilon1;
    for (ci, corner) in Corner::ALL.into_iter().enumerate() {
        let part = net.classes[y].part(corner).expect("corners checked");
        let anchor = s.anchors[ci];
        let window = Window::new(part.shape, anchor, acts.height, acts.width);
        let crop = ActivationCrop::new(&acts, window);
        let n = crop.valid_count();
        if n == 0 {
            return Err(Error::Data(format!("{corner:?} anchor {anchor:?} lies off the map")));
        }
        let nf = n as f64;

        // generative regularization on the aligned crop
        if e1 > 0.0 {
            let feats = window.valid_cells().map(|(_, g)| s.map.vector_at(g));
            vmf += accumulate_loss_vmf(feats, bank, e1 / nf, &mut grad[..kd]) / e1;
        }
        let ps = score_part(&crop, part, occ, cfg.omega)?;
        let m = ps.winner;
        let (obj_off, ctx_off) = mixture_offsets(net, y, corner, m);
        for (cell, gi) in window.valid_cells() {
            if ps.occluded[cell] {
                continue;
            }
            let l = acts.at(gi);
            let use_context = !s.object_cells[ci][cell] && part.context.is_some();
            let (mix, off) = match (use_context, ctx_off) {
                (true, Some(off)) => (part.context_of(m).expect("context present"), off),
                _ => (&part.object[m], obj_off),
            };
            con -= dot(l, mix.cell(cell)).ln() / nf;
            if e1 > 0.0 {
                backprop_single(mix, cell, l, -e1 / nf, off, &mut grad, &mut dl[gi * k..(gi + 1) * k]);
            }
        }

        // dice localization on the response map of the winning mixture
        let dm_owned;
        let dm = if corner == Corner::Center {
            &center_maps[y]
        } else {
            dm_owned = detection_map_from(&lmat, &o, part, occ, cfg.omega)?;
            &dm_owned
        };
        let scale = t / dm.normalizer();
        let s_hat = softmax_with_temperature(&dm.per_mixture[m], scale);
        let target: Vec<bool> = (0..s_hat.len()).map(|i| i == anchor.row * o.width + anchor.col).collect();
        let (dice, d_s) = loss_detect(&s_hat, &target);
        detect += dice;
        let w = e1 * cfg.epsilon2;
        if w > 0.0 {
            let inner = dot(&s_hat, &d_s);
            let dr: Vec<f64> = s_hat.iter().zip(&d_s).map(|(&sh, &ds)| w * scale * sh * (ds - inner)).collect();
            ctx.backprop_map(y, corner, m, &dr, &mut grad, &mut dl)?;
        }
    }
    backprop_kernels(&s.map, &acts, &dl, bank.sigma(), &mut grad[..kd]);
    let total = class_loss + e1 * (vmf + con + cfg.epsilon2 * detect);
    Ok(SampleOut { terms: DetTerms { class: class_loss, vmf, con, detect, total, hits }, grad })
}

/// Batch-mean `L_class + eps1 sum_c (L_vmf^c + L_con^c + eps2 L_detect^c)`
/// and its gradient in the flat parameter layout (kernels tangent-projected).
pub fn total_loss_det(net: &CompositionalNet, batch: &[&DetSample], cfg: &TrainConfig) -> Result<(DetTerms, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Data("empty training batch".into()));
    }
    let outs: Vec<SampleOut> = batch.par_iter().map(|s| sample_loss(net, s, cfg)).collect::<Result<_>>()?;
    let n = batch.len() as f64;
    let mut terms = DetTerms::default();
    for o in &outs {
        terms.class += o.terms.class / n;
        terms.vmf += o.terms.vmf / n;
        terms.con += o.terms.con / n;
        terms.detect += o.terms.detect / n;
        terms.total += o.terms.total / n;
        terms.hits += o.terms.hits;
    }
    let mut grad = sum_in_order(outs.into_iter().map(|o| o.grad), net.param_len());
    grad.iter_mut().for_each(|g| *g /= n);
    let kd = net.bank.mus().len();
    project_tangent(&net.bank, &mut grad[..kd]);
    Ok((terms, grad))
}

/// Adam on the detection objective with separate rates for kernels, center
/// mixtures and corner mixtures.
pub fn train_detector(
    net: &mut CompositionalNet,
    data: &[DetSample],
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    let mut history = Vec::with_capacity(cfg.det_epochs);
    if data.is_empty() || cfg.det_epochs == 0 {
        return Ok(history);
    }
    let spans = net.param_spans();
    let mut states = vec![AdamState::default(); spans.len()];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = rng(cfg.seed ^ 0xd37);
    for epoch in 0..cfg.det_epochs {
        order.shuffle(&mut rng);
        let mut sums = DetTerms::default();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&DetSample> = chunk.iter().map(|&i| &data[i]).collect();
            let (terms, grad) = total_loss_det(net, &batch, cfg)?;
            if !terms.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!("detection loss diverged in epoch {epoch}: {terms:?}")));
            }
            let w = chunk.len() as f64;
            sums.class += terms.class * w;
            sums.vmf += terms.vmf * w;
            sums.con += terms.con * w;
            sums.detect += terms.detect * w;
            sums.total += terms.total * w;
            sums.hits += terms.hits;
            let mut params = net.params();
            for (span, state) in spans.iter().zip(&mut states) {
                let lr = match span.group {
                    ParamGroup::Kernels => cfg.lr_vmf,
                    ParamGroup::Mixtures => cfg.lr_mixture,
                    ParamGroup::Corners => cfg.lr_corner,
                };
                let r = span.start..span.start + span.len;
                adam_step(&mut params[r.clone()], &grad[r], state, lr, AdamParams::default());
            }
            install_params(net, &params)?;
        }
        let n = data.len() as f64;
        let entry = EpochLog {
            stage: "train-det",
            epoch,
            loss: sums.total / n,
            terms: vec![
                ("class".into(), sums.class / n),
                ("vmf".into(), sums.vmf / n),
                ("con".into(), sums.con / n),
                ("detect".into(), sums.detect / n),
            ],
            accuracy: Some(sums.hits as f64 / n),
        };
        tracing::info!(epoch, loss = entry.loss, "detection epoch");
        write_log(&mut log, &entry)?;
        history.push(entry);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{clustered_map, random_net};
    use crate::training::{finite_difference_check, loss_on_sphere};

    fn samples(net: &CompositionalNet, seed: u64) -> Vec<DetSample> {
        (0..2)
            .map(|i| {
                let map = clustered_map(7, 7, &net.bank, 0.3, seed * 10 + i);
                let bbox = BBox::new(1.0, 2.0, 5.0, 6.0);
                DetSample::new(map, i as usize, bbox, net, None, 1).unwrap()
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..2 {
            let net = random_net(3, 3, 3, 2, 2, true, seed + 40);
            let data = samples(&net, seed);
            let batch: Vec<&DetSample> = data.iter().collect();
            let cfg = TrainConfig::default();
            let (_, grad) = total_loss_det(&net, &batch, &cfg).unwrap();
            let err = finite_difference_check(
                |p| loss_on_sphere(&net, p, |n| Ok(total_loss_det(n, &batch, &cfg)?.0.total)).unwrap(),
                &net.params(),
                &grad,
                1e-4,
            );
            assert!(err <= 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn epsilon_zero_is_classification_only() {
        let net = random_net(3, 3, 3, 2, 2, true, 3);
        let data = samples(&net, 1);
        let cfg = TrainConfig { epsilon1: 0.0, ..TrainConfig::default() };
        let (terms, _) = total_loss_det(&net, &[&data[0]], &cfg).unwrap();
        assert_eq!(terms.total, terms.class);
    }
}
