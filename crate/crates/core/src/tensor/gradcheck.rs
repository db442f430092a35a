//! Finite-difference gradient oracle.
//!
//! This module is the independent check that the tape's analytic gradients
//! are right: it never looks at the backward pass, only at forward losses of
//! perturbed inputs. Tests across the crate (and the acceptance suite) run
//! every differentiable op through it.

/// Central-difference gradient of `f` at `theta`, one component at a time:
/// `(f(theta + h e_i) - f(theta - h e_i)) / (2h)`. The divisor uses the step
/// actually realized in f32, which removes representation error from the
/// estimate.
pub fn finite_diff_grad(f: &mut dyn FnMut(&[f32]) -> f64, theta: &[f32], h: f32) -> Vec<f64> {
    let mut work = theta.to_vec();
    let mut grad = vec![0.0f64; theta.len()];
    for i in 0..theta.len() {
        let orig = work[i];
        let up = orig + h;
        let down = orig - h;
        work[i] = up;
        let plus = f(&work);
        work[i] = down;
        let minus = f(&work);
        work[i] = orig;
        grad[i] = (plus - minus) / (up as f64 - down as f64);
    }
    grad
}

/// Result of comparing analytic and numeric gradients.
#[derive(Debug, Clone)]
pub struct GradCompare {
    pub pass: bool,
    /// Worst value of `|a - n| / max(|a|, |n|, atol/rtol)` over all components.
    pub worst_rel: f64,
    pub worst_index: usize,
}

/// Per-component check: passes iff `|a - n| <= atol + rtol * max(|a|, |n|)`
/// everywhere.
pub fn grad_compare(analytic: &[f32], numeric: &[f64], rtol: f64, atol: f64) -> GradCompare {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    let mut worst_rel = 0.0f64;
    let mut worst_index = 0;
    let mut pass = true;
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let a = a as f64;
        let diff = (a - n).abs();
        let scale = a.abs().max(n.abs());
        if diff > atol + rtol * scale {
            pass = false;
        }
        let rel = diff / scale.max(atol / rtol);
        if rel > worst_rel {
            worst_rel = rel;
            worst_index = i;
        }
    }
    GradCompare {
        pass,
        worst_rel,
        worst_index,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_matches_quadratic() {
        // f(x) = sum(x^2): grad = 2x exactly (central difference is exact for
        // quadratics up to rounding).
        let theta = vec![1.0f32, -2.0, 0.5];
        let mut f = |x: &[f32]| x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>();
        let g = finite_diff_grad(&mut f, &theta, 1e-3);
        for (i, &t) in theta.iter().enumerate() {
            assert!((g[i] - 2.0 * t as f64).abs() < 1e-6, "component {i}: {}", g[i]);
        }
    }

    #[test]
    fn compare_flags_mismatch() {
        let analytic = vec![1.0f32, 2.0];
        let ok = grad_compare(&analytic, &[1.0001, 2.0001], 1e-3, 1e-4);
        assert!(ok.pass);
        let bad = grad_compare(&analytic, &[1.1, 2.0], 1e-3, 1e-4);
        assert!(!bad.pass);
        assert_eq!(bad.worst_index, 0);
    }
}
