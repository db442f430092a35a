//! SGD with momentum and decoupled-from-nothing weight decay (decay is folded
//! into the gradient before the momentum update, the convention most deep
//! learning frameworks use), plus the step-decay learning-rate schedule with
//! linear warmup used by every training phase.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ParameterStore;

/// Training hyperparameters for one phase.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f32,
    /// Epochs at which the learning rate divides by `lr_drop_factor`.
    #[serde(default)]
    pub lr_drop_epochs: Vec<usize>,
    #[serde(default = "default_drop_factor")]
    pub lr_drop_factor: f32,
    #[serde(default)]
    pub warmup_epochs: usize,
    #[serde(default)]
    pub weight_decay: f32,
    #[serde(default = "default_momentum")]
    pub momentum: f32,
    #[serde(default)]
    pub label_smoothing: f32,
}

fn default_drop_factor() -> f32 {
    10.0
}

fn default_momentum() -> f32 {
    0.9
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::contract("schedule: batch_size must be >= 1"));
        }
        if !(self.base_lr >= 0.0) || !self.base_lr.is_finite() {
            // zero is allowed so a no-op pass can exercise the full loop
            return Err(Error::contract("schedule: base_lr must be >= 0"));
        }
        if !(self.lr_drop_factor > 1.0) {
            return Err(Error::contract("schedule: lr_drop_factor must be > 1"));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::contract("schedule: label_smoothing outside [0, 1)"));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(Error::contract("schedule: weight_decay must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::contract("schedule: momentum outside [0, 1)"));
        }
        let mut prev = None;
        for &e in &self.lr_drop_epochs {
            if e == 0 || e >= self.epochs {
                return Err(Error::contract(format!(
                    "schedule: lr drop epoch {e} outside (0, {})",
                    self.epochs
                )));
            }
            if let Some(p) = prev {
                if e <= p {
                    return Err(Error::contract("schedule: lr drop epochs must increase"));
                }
            }
            prev = Some(e);
        }
        if self.warmup_epochs > self.epochs {
            return Err(Error::contract("schedule: warmup longer than training"));
        }
        Ok(())
    }

    /// Learning rate for a zero-based epoch index: linear warmup to `base_lr`
    /// over `warmup_epochs`, then division by `lr_drop_factor` at each drop.
    pub fn lr_at(&self, epoch: usize) -> f32 {
        if epoch < self.warmup_epochs {
            return self.base_lr * (epoch + 1) as f32 / self.warmup_epochs as f32;
        }
        let drops = self.lr_drop_epochs.iter().filter(|&&e| e <= epoch).count();
        self.base_lr / self.lr_drop_factor.powi(drops as i32)
    }
}

/// One SGD step over every parameter in the store:
///
/// ```text
/// g    = grad + weight_decay * value
/// buf  = momentum * buf + g
/// value -= lr * buf
/// ```
///
/// With `momentum == 0` the buffer stays untouched and the update is plain
/// SGD. `lr == 0` leaves values unchanged (but still advances the buffer).
pub fn sgd_step(store: &mut ParameterStore, lr: f32, momentum: f32, weight_decay: f32) -> Result<()> {
    if !(lr >= 0.0) {
        return Err(Error::contract(format!("sgd_step: lr {lr} must be >= 0")));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::contract(format!("sgd_step: momentum {momentum} outside [0, 1)")));
    }
    if !(weight_decay >= 0.0) {
        return Err(Error::contract(format!("sgd_step: weight_decay {weight_decay} must be >= 0")));
    }
    for (name, param) in store.iter_mut() {
        let n = param.value.numel();
        for i in 0..n {
            let g = param.grad.data()[i] + weight_decay * param.value.data()[i];
            let step = if momentum > 0.0 {
                let buf = momentum * param.momentum.data()[i] + g;
                param.momentum.data_mut()[i] = buf;
                buf
            } else {
                g
            };
            let v = param.value.data()[i] - lr * step;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("sgd_step on {name:?}"),
                });
            }
            param.value.data_mut()[i] = v;
        }
    }
    Ok(())
}
