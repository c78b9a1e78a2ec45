//! Adam gradient ascent with best-iterate bookkeeping.

use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub steps: usize,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            steps: 1000,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid_input("adam learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(invalid_input("adam beta1 and beta2 must lie in [0, 1)"));
        }
        if self.epsilon.is_nan() || self.epsilon < 0.0 {
            return Err(invalid_input("adam epsilon must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ascent {
    pub params: Vec<f64>,
    pub objective: f64,
}

fn all_finite(value: f64, grad: &[f64]) -> bool {
    value.is_finite() && grad.iter().all(|g| g.is_finite())
}

/// Maximize `objective` from `x0` with Adam and return the best iterate seen.
///
/// `objective` returns the value and gradient at a point. A step that lands
/// on a non-finite value is retried at half length; if that also fails the
/// parameters stay where they were for that step.
pub fn maximize<F>(x0: &[f64], cfg: &AdamConfig, mut objective: F) -> Result<Ascent>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    cfg.validate()?;
    let (mut fx, mut grad) = objective(x0);
    if !all_finite(fx, &grad) {
        return Err(Error::Numerical(format!(
            "objective is not finite at the starting point ({fx})"
        )));
    }
    let dim = x0.len();
    let mut x = x0.to_vec();
    let mut best = Ascent {
        params: x.clone(),
        objective: fx,
    };
    let mut m = vec![0.0; dim];
    let mut v = vec![0.0; dim];
    let (mut b1t, mut b2t) = (1.0, 1.0);
    let mut candidate = vec![0.0; dim];
    let mut step = vec![0.0; dim];

    for _ in 0..cfg.steps {
        b1t *= cfg.beta1;
        b2t *= cfg.beta2;
        for i in 0..dim {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let m_hat = m[i] / (1.0 - b1t);
            let v_hat = v[i] / (1.0 - b2t);
            step[i] = cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }

        let mut accepted = None;
        for scale in [1.0, 0.5] {
            for i in 0..dim {
                candidate[i] = x[i] + scale * step[i];
            }
            let (f, g) = objective(&candidate);
            if all_finite(f, &g) {
                accepted = Some((f, g));
                break;
            }
        }
        if let Some((f, g)) = accepted {
            x.copy_from_slice(&candidate);
            fx = f;
            grad = g;
            if fx > best.objective {
                best.objective = fx;
                best.params.copy_from_slice(&x);
            }
        }
    }
    Ok(best)
}
