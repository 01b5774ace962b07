//! Classification objective: tempered cross-entropy plus the vMF and mixture
//! regularizers, optimized with momentum SGD.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::backprop::{backprop_e, backprop_kernels, backprop_o, mixture_offsets, sum_in_order};
use super::losses::loss_classification;
use super::optim::{sgd_momentum_step, SgdState};
use super::{install_params, write_log, EpochLog, TrainConfig};
use crate::error::{Error, Result};
use crate::inference::{class_window, score_part};
use crate::instances::rng;
use crate::mixture::ActivationCrop;
use crate::model::{CompositionalNet, Corner};
use crate::tensor::FeatureMap;
use crate::vmf::{accumulate_loss_vmf, project_tangent};

/// Batch-mean loss terms, each already normalized per position.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClsTerms {
    pub class: f64,
    pub vmf: f64,
    pub mix: f64,
    pub total: f64,
    pub correct: usize,
}

struct ImageOut {
    terms: ClsTerms,
    grad: Vec<f64>,
}

fn image_loss(net: &CompositionalNet, map: &FeatureMap, y: usize, cfg: &TrainConfig) -> Result<ImageOut> {
    if y >= net.classes.len() {
        return Err(Error::Index { index: y, len: net.classes.len() });
    }
    let bank = &net.bank;
    let occ = &net.occluders;
    let k = bank.k();
    let acts = bank.activation_tensor(map)?;
    let mut grad = vec![0.0; net.param_len()];
    let mut dl = vec![0.0; acts.data.len()];

    let mut forward = Vec::with_capacity(net.classes.len());
    for class in &net.classes {
        let window = class_window(class, acts.height, acts.width);
        let crop = ActivationCrop::new(&acts, window);
        let ps = score_part(&crop, &class.center, occ, 0.0)?;
        forward.push((window, ps));
    }
    let u: Vec<f64> = forward.iter().map(|(_, ps)| ps.score / ps.valid as f64).collect();
    let (ce, g) = loss_classification(&u, y, cfg.temperature);
    let predicted = crate::inference::argmax(&u);

    let (lp, lq) = (occ.log_prior(), occ.log_not_prior());
    for (c, (window, ps)) in forward.iter().enumerate() {
        let ds = g[c] / ps.valid as f64;
        if ds == 0.0 {
            continue;
        }
        let part = &net.classes[c].center;
        let offsets = mixture_offsets(net, c, Corner::Center, ps.winner);
        for (cell, gi) in window.valid_cells() {
            let l = acts.at(gi);
            let dlp = &mut dl[gi * k..(gi + 1) * k];
            if ps.o.values[cell] + lp > ps.e.values[cell] + lq {
                backprop_o(occ, l, ds, dlp);
            } else {
                backprop_e(part, ps.winner, 0.0, l, cell, ds, offsets, &mut grad, dlp);
            }
        }
    }

    let (window, ps) = &forward[y];
    let mix_scale = cfg.gamma2 / ps.valid as f64;
    let mut mix = 0.0;
    if cfg.gamma2 > 0.0 {
        let part = &net.classes[y].center;
        let offsets = mixture_offsets(net, y, Corner::Center, ps.winner);
        for (cell, gi) in window.valid_cells() {
            if ps.occluded[cell] {
                continue;
            }
            mix -= ps.e.values[cell];
            let l = acts.at(gi);
            backprop_e(part, ps.winner, 0.0, l, cell, -mix_scale, offsets, &mut grad, &mut dl[gi * k..(gi + 1) * k]);
        }
    }
    mix /= ps.valid as f64;

    let positions = map.height() * map.width();
    let kd = bank.mus().len();
    let vmf = if cfg.gamma1 > 0.0 {
        accumulate_loss_vmf(map.vectors(), bank, cfg.gamma1 / positions as f64, &mut grad[..kd]) / cfg.gamma1
    } else {
        0.0
    };
    backprop_kernels(map, &acts, &dl, bank.sigma(), &mut grad[..kd]);

    let total = ce + cfg.gamma1 * vmf + cfg.gamma2 * mix;
    Ok(ImageOut { terms: ClsTerms { class: ce, vmf, mix, total, correct: usize::from(predicted == y) }, grad })
}

/// Batch-mean `L_class + gamma1 L_vmf + gamma2 L_mix` and its gradient in the
/// model's flat parameter layout (kernel part tangent-projected).
pub fn total_loss_cls(
    net: &CompositionalNet,
    batch: &[(&FeatureMap, usize)],
    cfg: &TrainConfig,
) -> Result<(ClsTerms, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Data("empty training batch".into()));
    }
    let outs: Vec<ImageOut> = batch.par_iter().map(|(map, y)| image_loss(net, map, *y, cfg)).collect::<Result<_>>()?;
    let n = batch.len() as f64;
    let mut terms = ClsTerms::default();
    for o in &outs {
        terms.class += o.terms.class / n;
        terms.vmf += o.terms.vmf / n;
        terms.mix += o.terms.mix / n;
        terms.total += o.terms.total / n;
        terms.correct += o.terms.correct;
    }
    let mut grad = sum_in_order(outs.into_iter().map(|o| o.grad), net.param_len());
    grad.iter_mut().for_each(|g| *g /= n);
    let kd = net.bank.mus().len();
    project_tangent(&net.bank, &mut grad[..kd]);
    Ok((terms, grad))
}

/// Momentum SGD on the classification objective. Only kernels and center
/// object mixtures move.
pub fn train_classifier(
    net: &mut CompositionalNet,
    data: &[(FeatureMap, usize)],
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    let mut history = Vec::with_capacity(cfg.epochs);
    if data.is_empty() || cfg.epochs == 0 {
        return Ok(history);
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut state = SgdState::default();
    let mut rng = rng(cfg.seed);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = ClsTerms::default();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&FeatureMap, usize)> = chunk.iter().map(|&i| (&data[i].0, data[i].1)).collect();
            let (terms, grad) = total_loss_cls(net, &batch, cfg)?;
            if !terms.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!("classification loss diverged in epoch {epoch}: {terms:?}")));
            }
            let w = chunk.len() as f64;
            sums.class += terms.class * w;
            sums.vmf += terms.vmf * w;
            sums.mix += terms.mix * w;
            sums.total += terms.total * w;
            sums.correct += terms.correct;
            let mut params = net.params();
            sgd_momentum_step(&mut params, &grad, &mut state, cfg.lr, cfg.momentum);
            install_params(net, &params)?;
        }
        let n = data.len() as f64;
        let entry = EpochLog {
            stage: "train-cls",
            epoch,
            loss: sums.total / n,
            terms: vec![("class".into(), sums.class / n), ("vmf".into(), sums.vmf / n), ("mix".into(), sums.mix / n)],
            accuracy: Some(sums.correct as f64 / n),
        };
        tracing::info!(epoch, loss = entry.loss, accuracy = entry.accuracy, "classification epoch");
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

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..3 {
            let net = random_net(3, 3, 3, 2, 2, false, seed);
            let maps: Vec<FeatureMap> = (0..2).map(|i| clustered_map(3, 3, &net.bank, 0.3, seed * 10 + i)).collect();
            let batch: Vec<(&FeatureMap, usize)> = maps.iter().zip([0, 1]).collect();
            let cfg = TrainConfig::default();
            let (_, grad) = total_loss_cls(&net, &batch, &cfg).unwrap();
            let err = finite_difference_check(
                |p| loss_on_sphere(&net, p, |n| Ok(total_loss_cls(n, &batch, &cfg)?.0.total)).unwrap(),
                &net.params(),
                &grad,
                1e-4,
            );
            assert!(err <= 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn pure_cross_entropy_without_regularizers() {
        let net = random_net(3, 3, 3, 2, 2, false, 1);
        let map = clustered_map(3, 3, &net.bank, 0.3, 2);
        let cfg = TrainConfig { gamma1: 0.0, gamma2: 0.0, ..TrainConfig::default() };
        let (terms, _) = total_loss_cls(&net, &[(&map, 0)], &cfg).unwrap();
        assert_eq!(terms.total, terms.class);
    }

    #[test]
    fn zero_epochs_is_identity() {
        let mut net = random_net(3, 3, 3, 2, 2, false, 1);
        let before = net.clone();
        let map = clustered_map(3, 3, &net.bank, 0.3, 2);
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        train_classifier(&mut net, &[(map, 0)], &cfg, None).unwrap();
        assert_eq!(net, before);
    }
}
