//! Dense f32 tensors and a tape-based reverse-mode autodiff engine.
//!
//! The engine is define-by-run: forward calls on a [`Tape`] record one node
//! per operation, and [`Tape::backward`] walks the record in reverse. Values
//! are stored in f32; reductions (means, variances, losses) accumulate in f64.
//! The op set is exactly what the residual super-networks need: convolution,
//! group normalization, ReLU, elementwise add/mul, global average pooling, a
//! linear head, and softmax cross-entropy with label smoothing.

mod gradcheck;
mod optim;
mod store;
mod tape;

pub use gradcheck::{finite_diff_grad, grad_compare, GradCompare};
pub use optim::{sgd_step, TrainSchedule};
pub use store::{Param, ParameterStore};
pub use tape::{NodeId, Tape};

use crate::error::{Error, Result};

/// Row-major dense tensor of f32 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("shape {:?} implies {} values, got {}", shape, numel, data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::filled(shape, 1.0)
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f32) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> Result<f32> {
        if !self.is_scalar() {
            return Err(Error::shape(
                "Tensor::item",
                format!("expected scalar, got shape {:?}", self.shape),
            ));
        }
        Ok(self.data[0])
    }

    /// Fails if any element is NaN or infinite.
    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite {
                context: context.to_string(),
            })
        }
    }

    /// Fills with N(0, std^2) draws using the Box-Muller transform, so the
    /// byte stream consumed from `rng` is fixed regardless of platform.
    pub fn fill_normal(&mut self, std: f32, rng: &mut impl rand::Rng) {
        let mut i = 0;
        while i < self.data.len() {
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let r = (-2.0 * u1.ln()).sqrt();
            let theta = 2.0 * std::f64::consts::PI * u2;
            self.data[i] = (r * theta.cos()) as f32 * std;
            i += 1;
            if i < self.data.len() {
                self.data[i] = (r * theta.sin()) as f32 * std;
                i += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;

    #[test]
    fn new_checks_length() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn ensure_finite_catches_nan_and_inf() {
        let t = Tensor::new(&[2], vec![1.0, f32::NAN]).unwrap();
        assert!(t.ensure_finite("t").is_err());
        let t = Tensor::new(&[2], vec![1.0, f32::INFINITY]).unwrap();
        assert!(t.ensure_finite("t").is_err());
        let t = Tensor::new(&[2], vec![1.0, -2.0]).unwrap();
        assert!(t.ensure_finite("t").is_ok());
    }

    #[test]
    fn normal_fill_moments() {
        let mut t = Tensor::zeros(&[100_000]);
        let mut rng = derive_rng(9, "normal-test");
        t.fill_normal(2.0, &mut rng);
        let n = t.numel() as f64;
        let mean: f64 = t.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var: f64 = t.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 4.0).abs() < 0.1, "var {var}");
    }
}
