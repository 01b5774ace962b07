//! Reference classifier: a linear softmax layer on globally average-pooled
//! backbone features.

use crate::error::{Error, Result};
use crate::inference::{argmax, softmax_with_temperature};
use crate::tensor::FeatureMap;

/// Mean feature vector over all positions.
pub fn pooled_features(map: &FeatureMap) -> Vec<f64> {
    let d = map.depth();
    let mut out = vec![0.0; d];
    for v in map.vectors() {
        for (o, &x) in out.iter_mut().zip(v) {
            *o += f64::from(x);
        }
    }
    let n = (map.height() * map.width()) as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSoftmax {
    pub classes: usize,
    pub dim: usize,
    /// `classes x dim`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    /// Per-dimension standardization fitted on the training set.
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineOptions {
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        Self { epochs: 500, lr: 0.5, l2: 1e-4 }
    }
}

impl LinearSoftmax {
    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn logits(&self, pooled: &[f64]) -> Vec<f64> {
        let x = self.standardize(pooled);
        (0..self.classes)
            .map(|c| {
                let w = &self.weights[c * self.dim..(c + 1) * self.dim];
                self.bias[c] + w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    pub fn predict(&self, map: &FeatureMap) -> usize {
        argmax(&self.logits(&pooled_features(map)))
    }
}

/// Full-batch gradient descent on L2-regularized cross-entropy.
pub fn train_linear_softmax(
    data: &[(&FeatureMap, usize)],
    classes: usize,
    opts: BaselineOptions,
) -> Result<LinearSoftmax> {
    if data.is_empty() || classes == 0 {
        return Err(Error::Data("baseline needs training data and classes".into()));
    }
    let xs: Vec<Vec<f64>> = data.iter().map(|(m, _)| pooled_features(m)).collect();
    let dim = xs[0].len();
    let n = xs.len() as f64;
    let mut mean = vec![0.0; dim];
    for x in &xs {
        mean.iter_mut().zip(x).for_each(|(m, v)| *m += v / n);
    }
    let mut scale = vec![0.0; dim];
    for x in &xs {
        scale.iter_mut().zip(x).zip(&mean).for_each(|((s, v), m)| *s += (v - m).powi(2) / n);
    }
    scale.iter_mut().for_each(|s| *s = s.sqrt().max(1e-8));
    let mut model =
        LinearSoftmax { classes, dim, weights: vec![0.0; classes * dim], bias: vec![0.0; classes], mean, scale };
    let zs: Vec<Vec<f64>> = xs.iter().map(|x| model.standardize(x)).collect();
    for _ in 0..opts.epochs {
        let mut gw = vec![0.0; classes * dim];
        let mut gb = vec![0.0; classes];
        for (z, &(_, y)) in zs.iter().zip(data) {
            if y >= classes {
                return Err(Error::Index { index: y, len: classes });
            }
            let logits: Vec<f64> = (0..classes)
                .map(|c| {
                    model.bias[c] + model.weights[c * dim..(c + 1) * dim].iter().zip(z).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            let p = softmax_with_temperature(&logits, 1.0);
            for c in 0..classes {
                let d = p[c] - f64::from(u8::from(c == y));
                gb[c] += d / n;
                for (g, &zi) in gw[c * dim..(c + 1) * dim].iter_mut().zip(z) {
                    *g += d * zi / n;
                }
            }
        }
        for (w, g) in model.weights.iter_mut().zip(&gw) {
            *w -= opts.lr * (g + opts.l2 * *w);
        }
        for (b, g) in model.bias.iter_mut().zip(&gb) {
            *b -= opts.lr * g;
        }
    }
    Ok(model)
}
