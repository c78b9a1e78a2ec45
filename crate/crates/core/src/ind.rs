//! Independent per-policy baseline: each policy value is Gaussian around its
//! OPE estimate, with its own OPE and return noise variances.

use serde::{Deserialize, Serialize};

use crate::adam::{self, AdamConfig};
use crate::error::{invalid_input, Result};
use crate::gp::IGPrior;
use crate::observations::{ObservationLog, ObservationSummary, PolicyObservations};

/// Per-policy noise variances (log space) and a shared inverse-gamma prior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndHyperparams {
    log_ope_noise_var: Vec<f64>,
    log_return_noise_var: Vec<f64>,
    pub prior: Option<IGPrior>,
}

impl IndHyperparams {
    /// Every variance at 1000 with an `IG(1, 1000)` prior.
    pub fn initial(num_policies: usize) -> Self {
        Self {
            log_ope_noise_var: vec![1000f64.ln(); num_policies],
            log_return_noise_var: vec![1000f64.ln(); num_policies],
            prior: Some(IGPrior {
                alpha: 1.0,
                beta: 1000.0,
            }),
        }
    }

    pub fn new(ope_noise_var: &[f64], return_noise_var: &[f64], prior: Option<IGPrior>) -> Result<Self> {
        if ope_noise_var.len() != return_noise_var.len() {
            return Err(invalid_input("ind hyperparams: variance vectors differ in length"));
        }
        if let Some(v) = ope_noise_var
            .iter()
            .chain(return_noise_var)
            .find(|v| !(**v > 0.0 && v.is_finite()))
        {
            return Err(invalid_input(format!("ind noise variance must be positive, got {v}")));
        }
        Ok(Self {
            log_ope_noise_var: ope_noise_var.iter().map(|v| v.ln()).collect(),
            log_return_noise_var: return_noise_var.iter().map(|v| v.ln()).collect(),
            prior,
        })
    }

    pub fn len(&self) -> usize {
        self.log_ope_noise_var.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_ope_noise_var.is_empty()
    }

    pub fn ope_noise_var(&self, k: usize) -> f64 {
        self.log_ope_noise_var[k].exp()
    }

    pub fn return_noise_var(&self, k: usize) -> f64 {
        self.log_return_noise_var[k].exp()
    }

    /// Posterior `(mean, variance)` of every policy; `None` for policies
    /// with neither an OPE estimate nor a return.
    pub fn posteriors(&self, log: &ObservationLog) -> Result<Vec<Option<(f64, f64)>>> {
        if log.len() != self.len() {
            return Err(invalid_input(format!(
                "ind hyperparams cover {} policies, log has {}",
                self.len(),
                log.len()
            )));
        }
        Ok(log
            .iter()
            .enumerate()
            .map(|(k, p)| {
                p.is_observed()
                    .then(|| posterior_of(&p.summary(), self.ope_noise_var(k), self.return_noise_var(k)))
            })
            .collect())
    }

    /// Sum of the per-policy objectives.
    pub fn objective(&self, log: &ObservationLog) -> f64 {
        log.iter()
            .enumerate()
            .map(|(k, p)| {
                objective_and_grad(
                    &p.summary(),
                    self.log_ope_noise_var[k],
                    self.log_return_noise_var[k],
                    self.prior,
                )
                .0
            })
            .sum()
    }
}

fn posterior_of(s: &ObservationSummary, ope_var: f64, ret_var: f64) -> (f64, f64) {
    match s.ope {
        Some(rho) => {
            let ratio = ret_var / ope_var;
            let denom = s.count + ratio;
            ((s.sum() + ratio * rho) / denom, ret_var / denom)
        }
        None => (s.mean, ret_var / s.count),
    }
}

/// Posterior mean and variance of one policy value.
pub fn ind_posterior(ope: Option<f64>, returns: &[f64], ope_var: f64, ret_var: f64) -> Result<(f64, f64)> {
    if ope.is_none() && returns.is_empty() {
        return Err(invalid_input("ind posterior needs an OPE estimate or a return"));
    }
    check_variances(ope_var, ret_var)?;
    let p = PolicyObservations {
        ope,
        returns: returns.to_vec(),
    };
    Ok(posterior_of(&p.summary(), ope_var, ret_var))
}

fn check_variances(ope_var: f64, ret_var: f64) -> Result<()> {
    if !(ope_var > 0.0 && ret_var > 0.0) {
        return Err(invalid_input(format!(
            "noise variances must be positive, got ({ope_var}, {ret_var})"
        )));
    }
    Ok(())
}

/// Log marginal likelihood of one policy's data with the value integrated
/// out, plus IG log priors on both variances (2π constants dropped).
pub fn ind_log_marginal(
    ope: Option<f64>,
    returns: &[f64],
    ope_var: f64,
    ret_var: f64,
    prior: Option<IGPrior>,
) -> Result<f64> {
    check_variances(ope_var, ret_var)?;
    let p = PolicyObservations {
        ope,
        returns: returns.to_vec(),
    };
    Ok(objective_and_grad(&p.summary(), ope_var.ln(), ret_var.ln(), prior).0)
}

/// Gradient of [`ind_log_marginal`] with respect to `(log σ_ρ², log σ_r²)`.
pub fn ind_log_marginal_grad(
    ope: Option<f64>,
    returns: &[f64],
    ope_var: f64,
    ret_var: f64,
    prior: Option<IGPrior>,
) -> Result<[f64; 2]> {
    check_variances(ope_var, ret_var)?;
    let p = PolicyObservations {
        ope,
        returns: returns.to_vec(),
    };
    Ok(objective_and_grad(&p.summary(), ope_var.ln(), ret_var.ln(), prior).1)
}

fn objective_and_grad(s: &ObservationSummary, log_ope: f64, log_ret: f64, prior: Option<IGPrior>) -> (f64, [f64; 2]) {
    let (a, b) = (log_ope.exp(), log_ret.exp());
    let mut value = 0.0;
    let mut grad = [0.0; 2];
    let c = if s.ope.is_some() { 1.0 } else { 0.0 };
    let precision = c / a + s.count / b;
    if precision > 0.0 {
        let lambda = 1.0 / precision;
        let (y, _) = posterior_of(s, a, b);
        let ope_dev = s.ope.map_or(0.0, |rho| (rho - y) * (rho - y));
        let ret_dev = s.returns_sq_dev(y);
        value = -0.5 * (c * log_ope + s.count * log_ret - lambda.ln()) - 0.5 * (ope_dev / a + ret_dev / b);
        grad[0] = 0.5 * c / a * (ope_dev + lambda - a);
        grad[1] = 0.5 / b * (ret_dev + s.count * (lambda - b));
    }
    if let Some(p) = prior {
        value += p.log_density(a) + p.log_density(b);
        grad[0] += p.d_log_density(a);
        grad[1] += p.d_log_density(b);
    }
    (value, grad)
}

/// Per-policy MAP fit of the noise variances by Adam ascent from `h0`.
pub fn ind_fit_map(log: &ObservationLog, h0: &IndHyperparams, cfg: &AdamConfig) -> Result<IndHyperparams> {
    if log.len() != h0.len() {
        return Err(invalid_input(format!(
            "ind hyperparams cover {} policies, log has {}",
            h0.len(),
            log.len()
        )));
    }
    let mut h = h0.clone();
    for (k, p) in log.iter().enumerate() {
        let s = p.summary();
        let start = [h0.log_ope_noise_var[k], h0.log_return_noise_var[k]];
        let best = adam::maximize(&start, cfg, |x| {
            let (v, g) = objective_and_grad(&s, x[0], x[1], h0.prior);
            (v, g.to_vec())
        })?;
        h.log_ope_noise_var[k] = best.params[0];
        h.log_return_noise_var[k] = best.params[1];
    }
    Ok(h)
}
