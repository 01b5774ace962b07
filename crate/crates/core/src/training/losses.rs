//! Scalar losses over scores and response maps.

use crate::inference::softmax_with_temperature;
use crate::tensor::ScoreGrid;

/// Cross-entropy of the tempered softmax over `scores` against class `y`,
/// and its gradient with respect to the scores.
pub fn loss_classification(scores: &[f64], y: usize, t: f64) -> (f64, Vec<f64>) {
    let p = softmax_with_temperature(scores, t);
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // log-sum-exp form keeps the loss exact when p[y] underflows
    let lse = scores.iter().map(|&s| (t * (s - m)).exp()).sum::<f64>().ln();
    let loss = lse - t * (scores[y] - m);
    let grad = p.iter().enumerate().map(|(i, &pi)| t * (pi - if i == y { 1.0 } else { 0.0 })).collect();
    (loss, grad)
}

/// Normalize positive scores over the valid cells to sum to one. An all-zero
/// map becomes uniform.
pub fn response_map(s: &ScoreGrid) -> ScoreGrid {
    let total: f64 = s.valid_sum();
    let count = s.valid.iter().filter(|&&v| v).count().max(1);
    let mut out = s.clone();
    if total > 0.0 && total.is_finite() {
        for i in 0..s.len() {
            out.values[i] = if s.valid[i] { s.values[i] / total } else { 0.0 };
        }
    } else {
        tracing::warn!("response map has no mass; using uniform");
        for i in 0..s.len() {
            out.values[i] = if s.valid[i] { 1.0 / count as f64 } else { 0.0 };
        }
    }
    out
}

/// Response map from log-scores: `softmax(scale * r)` over valid cells.
pub fn response_map_from_log(r: &ScoreGrid, scale: f64) -> ScoreGrid {
    let m = (0..r.len()).filter(|&i| r.valid[i]).map(|i| r.values[i]).fold(f64::NEG_INFINITY, f64::max);
    let mut out = r.clone();
    for i in 0..r.len() {
        out.values[i] = if r.valid[i] { (scale * (r.values[i] - m)).exp() } else { 0.0 };
    }
    response_map(&out)
}

/// Dice loss `1 - 2 sum(s t) / (sum s + sum t)` and its gradient with respect to `s`.
pub fn loss_detect(s_hat: &[f64], target: &[bool]) -> (f64, Vec<f64>) {
    let a: f64 = s_hat.iter().zip(target).filter(|(_, &t)| t).map(|(s, _)| s).sum();
    let b: f64 = s_hat.iter().sum::<f64>() + target.iter().filter(|&&t| t).count() as f64;
    if b == 0.0 {
        return (0.0, vec![0.0; s_hat.len()]);
    }
    let grad = target.iter().map(|&t| -2.0 * ((if t { 1.0 } else { 0.0 }) * b - a) / (b * b)).collect();
    (1.0 - 2.0 * a / b, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::gradcheck::finite_difference_check;

    #[test]
    fn classification_examples() {
        let (loss, _) = loss_classification(&[1.0, 0.0], 0, 2.0);
        assert!((loss - 0.126928011042973).abs() < 1e-12);
        let (loss, _) = loss_classification(&[0.3; 5], 2, 2.0);
        assert!((loss - 5f64.ln()).abs() < 1e-12);
        let scores = [0.4, -1.3, 2.0];
        let (_, g) = loss_classification(&scores, 1, 2.0);
        let err = finite_difference_check(|s| loss_classification(s, 1, 2.0).0, &scores, &g, 1e-4);
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn response_examples() {
        let one_hot = ScoreGrid::new(1, 3, vec![0.0, 2.0, 0.0]).unwrap();
        assert_eq!(response_map(&one_hot).values, vec![0.0, 1.0, 0.0]);
        let flat = ScoreGrid::new(2, 2, vec![3.0; 4]).unwrap();
        assert_eq!(response_map(&flat).values, vec![0.25; 4]);
        let zero = ScoreGrid::new(1, 2, vec![0.0; 2]).unwrap();
        assert_eq!(response_map(&zero).values, vec![0.5; 2]);
    }

    #[test]
    fn dice_examples() {
        let t = [false, true, false, false];
        assert_eq!(loss_detect(&[0.0, 1.0, 0.0, 0.0], &t).0, 0.0);
        assert!((loss_detect(&[0.25; 4], &t).0 - 0.75).abs() < 1e-15);
        assert_eq!(loss_detect(&[1.0, 0.0, 0.0, 0.0], &t).0, 1.0);
        let s = [0.1, 0.5, 0.3, 0.1];
        let (_, g) = loss_detect(&s, &t);
        let err = finite_difference_check(|x| loss_detect(x, &t).0, &s, &g, 1e-4);
        assert!(err <= 1e-6);
    }
}
