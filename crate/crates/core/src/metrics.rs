//! Regret, rank and execution statistics, plus aggregation over repetitions.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Result};

fn check_index(true_values: &[f64], k: usize) -> Result<()> {
    if k < true_values.len() {
        Ok(())
    } else {
        Err(invalid_input(format!(
            "policy index {k} out of range for {} policies",
            true_values.len()
        )))
    }
}

fn best_value(true_values: &[f64]) -> f64 {
    true_values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `max μ − μ[recommended]`.
pub fn simple_regret(true_values: &[f64], recommended: usize) -> Result<f64> {
    check_index(true_values, recommended)?;
    Ok(best_value(true_values) - true_values[recommended])
}

/// Gap between the best and worst value; regrets are divided by it.
pub fn value_gap(true_values: &[f64]) -> f64 {
    let lo = true_values.iter().copied().fold(f64::INFINITY, f64::min);
    let gap = best_value(true_values) - lo;
    if gap.is_finite() {
        gap
    } else {
        0.0
    }
}

/// `regret / gap`, with 0 when the gap is 0.
pub fn normalize_regret(regret: f64, true_values: &[f64]) -> f64 {
    let gap = value_gap(true_values);
    if gap > 0.0 {
        regret / gap
    } else {
        0.0
    }
}

/// 1 plus the number of policies with a strictly larger value.
pub fn rank_of_selection(true_values: &[f64], recommended: usize) -> Result<usize> {
    check_index(true_values, recommended)?;
    let v = true_values[recommended];
    Ok(1 + true_values.iter().filter(|&&x| x > v).count())
}

/// Running sum of `max μ − μ[executed_i]`.
pub fn cumulative_regret(true_values: &[f64], executed: &[usize]) -> Result<Vec<f64>> {
    let best = best_value(true_values);
    let mut total = 0.0;
    executed
        .iter()
        .map(|&k| {
            check_index(true_values, k)?;
            total += best - true_values[k];
            Ok(total)
        })
        .collect()
}

/// Indices of the `⌈q·K⌉` lowest-valued policies plus any tied with the
/// largest value in that set.
pub fn bottom_set(true_values: &[f64], quantile: f64) -> Result<Vec<bool>> {
    if !(quantile > 0.0 && quantile <= 1.0) {
        return Err(invalid_input(format!("quantile must lie in (0, 1], got {quantile}")));
    }
    let k = true_values.len();
    if k == 0 {
        return Ok(Vec::new());
    }
    let size = ((quantile * k as f64).ceil() as usize).clamp(1, k);
    let mut sorted = true_values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let threshold = sorted[size - 1];
    Ok(true_values.iter().map(|&v| v <= threshold).collect())
}

/// Fraction of executed episodes spent on bottom-quantile policies.
pub fn worst_policy_frequency(true_values: &[f64], executed: &[usize], quantile: f64) -> Result<f64> {
    let bottom = bottom_set(true_values, quantile)?;
    if executed.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for &k in executed {
        check_index(true_values, k)?;
        hits += usize::from(bottom[k]);
    }
    Ok(hits as f64 / executed.len() as f64)
}

/// Pointwise mean and standard deviation of the mean over repetitions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretCurve {
    pub mean: Vec<f64>,
    pub sd_of_mean: Vec<f64>,
    pub repetitions: usize,
}

impl RegretCurve {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Mean and sd-of-mean after `step` episodes (1-based).
    pub fn at(&self, step: usize) -> Option<(f64, f64)> {
        let i = step.checked_sub(1)?;
        Some((*self.mean.get(i)?, self.sd_of_mean[i]))
    }

    pub fn last(&self) -> Option<(f64, f64)> {
        self.at(self.len())
    }

    /// CSV with columns `step,mean_regret,sd_of_mean,n_reps`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["step", "mean_regret", "sd_of_mean", "n_reps"])?;
        for i in 0..self.len() {
            w.write_record([
                (i + 1).to_string(),
                self.mean[i].to_string(),
                self.sd_of_mean[i].to_string(),
                self.repetitions.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Aggregate equal-length per-repetition curves. The standard deviation
/// uses the `R − 1` denominator and is 0 for a single repetition.
pub fn aggregate_curves(curves: &[Vec<f64>]) -> Result<RegretCurve> {
    let first = curves
        .first()
        .ok_or_else(|| invalid_input("at least one repetition is required"))?;
    let n = first.len();
    if let Some((i, c)) = curves.iter().enumerate().find(|(_, c)| c.len() != n) {
        return Err(invalid_input(format!(
            "repetition {i} has {} steps, expected {n}",
            c.len()
        )));
    }
    let reps = curves.len();
    let mut mean = vec![0.0; n];
    let mut sd_of_mean = vec![0.0; n];
    for t in 0..n {
        // Welford update.
        let (mut m, mut s) = (0.0, 0.0);
        for (r, c) in curves.iter().enumerate() {
            let x = c[t];
            let delta = x - m;
            m += delta / (r + 1) as f64;
            s += delta * (x - m);
        }
        mean[t] = m;
        if reps > 1 {
            sd_of_mean[t] = (s / (reps - 1) as f64).sqrt() / (reps as f64).sqrt();
        }
    }
    Ok(RegretCurve {
        mean,
        sd_of_mean,
        repetitions: reps,
    })
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Affine map sending the sample mean and (population) sd to the targets.
/// Constant inputs are only shifted.
pub fn rescale_returns(values: &[f64], target_mean: f64, target_sd: f64) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let (mean, sd) = mean_sd(values);
    let scale = if sd > 0.0 { target_sd / sd } else { 1.0 };
    values.iter().map(|v| target_mean + (v - mean) * scale).collect()
}
