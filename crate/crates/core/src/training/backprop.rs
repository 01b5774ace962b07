//! Shared reverse-mode pieces: from likelihood-plane gradients to mixture
//! logits and activations, and from activations to the kernels.

use crate::mixture::softmax_backward;
use crate::model::{CompositionalNet, Corner, PartModel};
use crate::occlusion::OccluderBank;
use crate::tensor::{dot, FeatureMap, Tensor3};

/// Flat offsets of mixture `m`'s object logits and (when present) context logits.
pub(crate) fn mixture_offsets(
    net: &CompositionalNet,
    class: usize,
    corner: Corner,
    m: usize,
) -> (usize, Option<usize>) {
    let part = net.classes[class].part(corner).expect("part exists");
    let size = part.shape.cells() * part.k();
    let base = net.part_offset(class, corner);
    let ctx = part.context.as_ref().map(|_| base + (part.m() + m) * size);
    (base + m * size, ctx)
}

/// Routes `de = dLoss/dE` at window cell `cell` (activation vector `l`) into
/// the logits of mixture `m` and into `dl`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backprop_e(
    part: &PartModel,
    m: usize,
    omega: f64,
    l: &[f64],
    cell: usize,
    de: f64,
    offsets: (usize, Option<usize>),
    grad: &mut [f64],
    dl: &mut [f64],
) {
    let alpha = part.object[m].cell(cell);
    let k = alpha.len();
    let chi = part.context_of(m).filter(|_| omega > 0.0).map(|c| c.cell(cell));
    let qa = dot(l, alpha);
    let q = match chi {
        Some(chi) => (1.0 - omega) * qa + omega * dot(l, chi),
        None => qa,
    };
    let coef = de / q;
    let wa = if chi.is_some() { 1.0 - omega } else { 1.0 };
    let d_alpha: Vec<f64> = l.iter().map(|&x| coef * wa * x).collect();
    let start = offsets.0 + cell * k;
    softmax_backward(alpha, &d_alpha, &mut grad[start..start + k]);
    for (d, &a) in dl.iter_mut().zip(alpha) {
        *d += coef * wa * a;
    }
    if let (Some(chi), Some(ctx)) = (chi, offsets.1) {
        let d_chi: Vec<f64> = l.iter().map(|&x| coef * omega * x).collect();
        let start = ctx + cell * k;
        softmax_backward(chi, &d_chi, &mut grad[start..start + k]);
        for (d, &c) in dl.iter_mut().zip(chi) {
            *d += coef * omega * c;
        }
    }
}

/// Routes `d_o = dLoss/dO` at a position with activations `l` into `dl`
/// through the winning occluder.
pub(crate) fn backprop_o(occ: &OccluderBank, l: &[f64], d_o: f64, dl: &mut [f64]) {
    let (_, n) = occ.loglik(l);
    let beta = occ.beta(n);
    let coef = d_o / dot(l, beta);
    for (d, &b) in dl.iter_mut().zip(beta) {
        *d += coef * b;
    }
}

/// `dmu_k += sum_p dl[p, k] sigma l[p, k] f_p` (unprojected).
pub(crate) fn backprop_kernels(map: &FeatureMap, acts: &Tensor3, dl: &[f64], sigma: f64, grad_mu: &mut [f64]) {
    let (k, d) = (acts.channels, map.depth());
    for p in 0..acts.len() {
        let f = map.vector_at(p);
        for kk in 0..k {
            let c = dl[p * k + kk] * sigma * acts.data[p * k + kk];
            if c != 0.0 {
                for (g, &x) in grad_mu[kk * d..(kk + 1) * d].iter_mut().zip(f) {
                    *g += c * f64::from(x);
                }
            }
        }
    }
}

/// Ordered element-wise sum of per-sample gradients.
pub(crate) fn sum_in_order(parts: impl IntoIterator<Item = Vec<f64>>, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for g in parts {
        out.iter_mut().zip(&g).for_each(|(o, x)| *o += x);
    }
    out
}

/// Routes `de = dLoss/d log(l . w_cell)` for a single mixture whose logits
/// start at `offset`.
pub(crate) fn backprop_single(
    mix: &crate::mixture::MixtureCoefficients,
    cell: usize,
    l: &[f64],
    de: f64,
    offset: usize,
    grad: &mut [f64],
    dl: &mut [f64],
) {
    let w = mix.cell(cell);
    let k = w.len();
    let coef = de / dot(l, w);
    let d_w: Vec<f64> = l.iter().map(|&x| coef * x).collect();
    let start = offset + cell * k;
    softmax_backward(w, &d_w, &mut grad[start..start + k]);
    for (d, &a) in dl.iter_mut().zip(w) {
        *d += coef * a;
    }
}
