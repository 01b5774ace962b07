//! Loss assembly, optimizers, gradient checking and the training loops.

mod backprop;
pub mod classification;
pub mod detection;
pub mod gradcheck;
pub mod losses;
pub mod optim;

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::CompositionalNet;

pub use classification::{total_loss_cls, train_classifier, ClsTerms};
pub use detection::{total_loss_det, train_detector, DetSample, DetTerms};
pub use gradcheck::finite_difference_check;
pub use losses::{loss_classification, loss_detect, response_map, response_map_from_log};
pub use optim::{adam_step, sgd_momentum_step, AdamParams, AdamState, SgdState};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub gamma1: f64,
    pub gamma2: f64,
    pub epsilon1: f64,
    pub epsilon2: f64,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_vmf: f64,
    pub lr_mixture: f64,
    pub lr_corner: f64,
    pub det_epochs: usize,
    pub temperature: f64,
    /// Context weight used while training detection models.
    pub omega: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma1: 3.0,
            gamma2: 3.0,
            epsilon1: 0.2,
            epsilon2: 0.4,
            lr: 0.01,
            momentum: 0.9,
            epochs: 50,
            batch_size: 8,
            lr_vmf: 2e-5,
            lr_mixture: 5e-5,
            lr_corner: 5e-5,
            det_epochs: 2,
            temperature: 2.0,
            omega: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("lr", self.lr),
            ("lr_vmf", self.lr_vmf),
            ("lr_mixture", self.lr_mixture),
            ("lr_corner", self.lr_corner),
            ("temperature", self.temperature),
        ];
        for (name, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        for (name, v) in
            [("gamma1", self.gamma1), ("gamma2", self.gamma2), ("epsilon1", self.epsilon1), ("epsilon2", self.epsilon2)]
        {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.omega) {
            return Err(Error::Config(format!("omega must lie in [0, 1], got {}", self.omega)));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub stage: &'static str,
    pub epoch: usize,
    pub loss: f64,
    pub terms: Vec<(String, f64)>,
    pub accuracy: Option<f64>,
}

pub(crate) fn write_log(sink: &mut Option<&mut dyn Write>, entry: &EpochLog) -> Result<()> {
    if let Some(w) = sink {
        let line = serde_json::to_string(entry).map_err(|e| Error::Data(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io("training log", e))?;
    }
    Ok(())
}

/// Replace the model's parameters and put the kernels back on the sphere.
pub(crate) fn install_params(net: &mut CompositionalNet, params: &[f64]) -> Result<()> {
    net.set_params(params)?;
    net.bank.renormalize()
}

/// Loss as a function of raw parameters with kernels normalized inside, so
/// its gradient at unit kernels is the tangent-projected kernel gradient.
pub fn loss_on_sphere(
    net: &CompositionalNet,
    params: &[f64],
    loss: impl Fn(&CompositionalNet) -> Result<f64>,
) -> Result<f64> {
    let mut probe = net.clone();
    install_params(&mut probe, params)?;
    loss(&probe)
}
