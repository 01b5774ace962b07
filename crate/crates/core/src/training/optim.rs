//! Hand-written optimizers over flat parameter slices.

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SgdState {
    pub velocity: Vec<f64>,
}

/// `v <- momentum v + g; p <- p - lr v`.
pub fn sgd_momentum_step(params: &mut [f64], grads: &[f64], state: &mut SgdState, lr: f64, momentum: f64) {
    if state.velocity.len() != params.len() {
        state.velocity = vec![0.0; params.len()];
    }
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

/// Bias-corrected Adam.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64, hp: AdamParams) {
    if state.m.len() != params.len() {
        state.m = vec![0.0; params.len()];
        state.v = vec![0.0; params.len()];
        state.t = 0;
    }
    state.t += 1;
    let c1 = 1.0 - hp.beta1.powi(state.t as i32);
    let c2 = 1.0 - hp.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * g;
        state.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        params[i] -= lr * mh / (vh.sqrt() + hp.eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_examples() {
        let mut p = vec![1.0, -2.0];
        let mut s = SgdState::default();
        sgd_momentum_step(&mut p, &[0.0, 0.0], &mut s, 0.1, 0.9);
        assert_eq!(p, vec![1.0, -2.0]);

        let mut plain = vec![1.0];
        sgd_momentum_step(&mut plain, &[2.0], &mut SgdState::default(), 0.1, 0.0);
        assert_eq!(plain, vec![0.8]);

        let (lr, g) = (0.01, 3.0);
        let mut p = vec![0.0];
        let mut s = SgdState::default();
        sgd_momentum_step(&mut p, &[g], &mut s, lr, 0.9);
        sgd_momentum_step(&mut p, &[g], &mut s, lr, 0.9);
        assert!((p[0] + lr * g * 2.9).abs() < 1e-15);
    }

    #[test]
    fn adam_examples() {
        let mut p = vec![0.5];
        adam_step(&mut p, &[0.0], &mut AdamState::default(), 1e-3, AdamParams::default());
        assert_eq!(p, vec![0.5]);
        for g in [1e-3, 1.0, 1e4] {
            let mut p = vec![0.0];
            adam_step(&mut p, &[g], &mut AdamState::default(), 1e-3, AdamParams::default());
            assert!((p[0] + 1e-3).abs() < 1e-8, "{g}: {}", p[0]);
        }
        let run = || {
            let mut p = vec![0.1, 0.2];
            let mut s = AdamState::default();
            for _ in 0..3 {
                adam_step(&mut p, &[0.3, -0.7], &mut s, 1e-2, AdamParams::default());
            }
            p
        };
        assert_eq!(run(), run());
    }
}
