//! Per-policy observation records: an optional OPE estimate and episodic returns.

use std::io::Read;

use serde::Deserialize;

use crate::error::{invalid_input, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PolicyObservations {
    pub ope: Option<f64>,
    pub returns: Vec<f64>,
}

impl PolicyObservations {
    pub fn is_observed(&self) -> bool {
        self.ope.is_some() || !self.returns.is_empty()
    }

    pub(crate) fn summary(&self) -> ObservationSummary {
        let count = self.returns.len() as f64;
        let mean = if count > 0.0 {
            self.returns.iter().sum::<f64>() / count
        } else {
            0.0
        };
        ObservationSummary {
            ope: self.ope,
            count,
            mean,
            m2: self.returns.iter().map(|r| (r - mean) * (r - mean)).sum(),
        }
    }
}

/// Sufficient statistics of one policy's observations.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ObservationSummary {
    pub ope: Option<f64>,
    pub count: f64,
    pub mean: f64,
    /// Sum of squared deviations from `mean`.
    pub m2: f64,
}

impl ObservationSummary {
    /// Sum of squared deviations of the returns from `y`.
    #[inline]
    pub fn returns_sq_dev(&self, y: f64) -> f64 {
        self.m2 + self.count * (self.mean - y) * (self.mean - y)
    }

    #[inline]
    pub fn sum(&self) -> f64 {
        self.count * self.mean
    }
}

/// Observations for every candidate policy, indexed by position.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ObservationLog {
    policies: Vec<PolicyObservations>,
}

impl ObservationLog {
    pub fn new(num_policies: usize) -> Self {
        Self {
            policies: vec![PolicyObservations::default(); num_policies],
        }
    }

    /// Log seeded with an OPE estimate per policy (`None` where absent).
    pub fn with_ope(ope: &[Option<f64>]) -> Result<Self> {
        let mut log = Self::new(ope.len());
        for (k, v) in ope.iter().enumerate() {
            if let Some(v) = v {
                log.set_ope(k, *v)?;
            }
        }
        Ok(log)
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    pub fn policy(&self, k: usize) -> &PolicyObservations {
        &self.policies[k]
    }

    pub fn iter(&self) -> impl Iterator<Item = &PolicyObservations> {
        self.policies.iter()
    }

    pub fn set_ope(&mut self, k: usize, value: f64) -> Result<()> {
        check_finite(value)?;
        self.slot(k)?.ope = Some(value);
        Ok(())
    }

    pub fn push_return(&mut self, k: usize, value: f64) -> Result<()> {
        check_finite(value)?;
        self.slot(k)?.returns.push(value);
        Ok(())
    }

    fn slot(&mut self, k: usize) -> Result<&mut PolicyObservations> {
        let n = self.policies.len();
        self.policies
            .get_mut(k)
            .ok_or_else(|| invalid_input(format!("policy index {k} out of range for {n} policies")))
    }

    /// Indices of policies with at least one observation of either kind.
    pub fn observed_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.policies[k].is_observed()).collect()
    }

    pub fn total_returns(&self) -> usize {
        self.policies.iter().map(|p| p.returns.len()).sum()
    }

    /// Restriction to a subset of policies, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            policies: indices.iter().map(|&k| self.policies[k].clone()).collect(),
        }
    }

    /// Read `policy_id,kind,value` rows. `policy_ids` maps ids to positions.
    pub fn read_csv<R: Read>(reader: R, policy_ids: &[i64]) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            policy_id: i64,
            kind: String,
            value: f64,
        }
        let mut log = Self::new(policy_ids.len());
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        for (line, row) in rdr.deserialize::<Row>().enumerate() {
            let row = row?;
            let k = policy_ids
                .iter()
                .position(|&id| id == row.policy_id)
                .ok_or_else(|| invalid_input(format!("row {}: unknown policy_id {}", line + 1, row.policy_id)))?;
            match row.kind.as_str() {
                "ope" => {
                    if log.policies[k].ope.is_some() {
                        return Err(invalid_input(format!(
                            "row {}: second ope value for policy_id {}",
                            line + 1,
                            row.policy_id
                        )));
                    }
                    log.set_ope(k, row.value)?
                }
                "return" => log.push_return(k, row.value)?,
                other => {
                    return Err(invalid_input(format!(
                        "row {}: kind must be `ope` or `return`, got `{other}`",
                        line + 1
                    )))
                }
            }
        }
        Ok(log)
    }
}

fn check_finite(v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(invalid_input(format!("non-finite observation {v}")))
    }
}
