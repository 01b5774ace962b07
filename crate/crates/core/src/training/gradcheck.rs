//! Central finite-difference verification of analytic gradients.

/// Max over coordinates of `|a - n| / max(|a|, |n|, 1e-8)` where `n` is the
/// central difference with step `h`.
pub fn finite_difference_check(mut loss: impl FnMut(&[f64]) -> f64, params: &[f64], analytic: &[f64], h: f64) -> f64 {
    assert_eq!(params.len(), analytic.len(), "gradient length mismatch");
    let mut x = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let up = loss(&x);
        x[i] = orig - h;
        let down = loss(&x);
        x[i] = orig;
        let n = (up - down) / (2.0 * h);
        let a = analytic[i];
        worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(1e-8));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let f = |x: &[f64]| 3.0 * x[0] * x[0] - 2.0 * x[0] * x[1] + 0.5 * x[1] * x[1] + x[1];
        let p = [0.7, -1.2];
        let g = [6.0 * p[0] - 2.0 * p[1], -2.0 * p[0] + p[1] + 1.0];
        assert!(finite_difference_check(f, &p, &g, 1e-4) <= 1e-8);
    }
}
