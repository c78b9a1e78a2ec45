//! Acquisition scores and the sequential selection loop: choose a policy,
//! run one episode, add the return to the log, refit, recommend.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adam::AdamConfig;
use crate::error::{invalid_input, invalid_state, Result};
use crate::gp::{self, GPHyperparams, Posterior};
use crate::ind::{self, IndHyperparams};
use crate::kernel::DistanceMatrix;
use crate::observations::ObservationLog;
use crate::rng::{self, domain};

/// Something that can run one episode of a policy and report its return.
pub trait ReturnSampler {
    fn num_policies(&self) -> usize;
    fn sample_return(&mut self, policy: usize) -> Result<f64>;
}

/// Marginal belief about one policy value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Belief {
    pub mean: f64,
    pub variance: f64,
}

impl Belief {
    pub fn sd(&self) -> f64 {
        self.variance.max(0.0).sqrt()
    }
}

impl Posterior {
    pub fn beliefs(&self) -> Vec<Option<Belief>> {
        (0..self.len())
            .map(|k| {
                Some(Belief {
                    mean: self.mean[k],
                    variance: self.variance(k),
                })
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AcquisitionStrategy {
    Ucb { beta_sqrt: f64 },
    Uniform,
    EpsilonGreedy { epsilon: f64 },
    ExpectedImprovement,
}

impl Default for AcquisitionStrategy {
    fn default() -> Self {
        Self::Ucb { beta_sqrt: 5.0 }
    }
}

impl AcquisitionStrategy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Ucb { beta_sqrt } if !(beta_sqrt > 0.0 && beta_sqrt.is_finite()) => Err(invalid_input(format!(
                "UCB beta_sqrt must be positive, got {beta_sqrt}"
            ))),
            Self::EpsilonGreedy { epsilon } if !(0.0..=1.0).contains(&epsilon) => {
                Err(invalid_input(format!("epsilon must lie in [0, 1], got {epsilon}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "GP")]
    Gp,
    #[serde(rename = "Ind")]
    Ind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub budget: usize,
    /// Uniformly sampled episodes before the first fit; `None` means 0 with
    /// OPE and 5 without.
    pub n_init: Option<usize>,
    pub use_ope: bool,
    pub model: ModelKind,
    pub strategy: AcquisitionStrategy,
    pub refit_every: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl LoopConfig {
    pub fn new(model: ModelKind, strategy: AcquisitionStrategy, use_ope: bool, budget: usize, seed: u64) -> Self {
        Self {
            budget,
            n_init: None,
            use_ope,
            model,
            strategy,
            refit_every: 1,
            seed,
            adam: AdamConfig::default(),
        }
    }

    pub fn n_init(&self) -> usize {
        self.n_init.unwrap_or(if self.use_ope { 0 } else { 5 }).min(self.budget)
    }

    pub fn validate(&self) -> Result<()> {
        self.strategy.validate()?;
        self.adam.validate()?;
        if self.refit_every == 0 {
            return Err(invalid_input("refit_every must be at least 1"));
        }
        if let Some(n) = self.n_init {
            if n > self.budget {
                return Err(invalid_input(format!("n_init {n} exceeds budget {}", self.budget)));
            }
        }
        Ok(())
    }
}

/// UCB score `mean + beta_sqrt · sd` for every policy.
pub fn ucb_scores(p: &Posterior, beta_sqrt: f64) -> Vec<f64> {
    ucb_from_beliefs(&p.beliefs(), beta_sqrt)
}

/// UCB scores; policies without a belief score `+∞`.
pub fn ucb_from_beliefs(beliefs: &[Option<Belief>], beta_sqrt: f64) -> Vec<f64> {
    beliefs
        .iter()
        .map(|b| b.map_or(f64::INFINITY, |b| b.mean + beta_sqrt * b.sd()))
        .collect()
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Expected improvement over the best posterior mean; `+∞` for policies
/// without a belief and 0 for policies with zero variance.
pub fn expected_improvement(beliefs: &[Option<Belief>]) -> Vec<f64> {
    let incumbent = beliefs
        .iter()
        .flatten()
        .map(|b| b.mean)
        .fold(f64::NEG_INFINITY, f64::max);
    beliefs
        .iter()
        .map(|b| match b {
            None => f64::INFINITY,
            Some(b) => {
                let sd = b.sd();
                if sd == 0.0 {
                    return 0.0;
                }
                let gap = b.mean - incumbent;
                let z = gap / sd;
                gap * std_normal_cdf(z) + sd * std_normal_pdf(z)
            }
        })
        .collect()
}

/// Index of the largest value; lowest index wins ties, NaN never wins.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Choose the next policy to execute.
pub fn select_next<R: Rng + ?Sized>(
    beliefs: &[Option<Belief>],
    strategy: &AcquisitionStrategy,
    rng: &mut R,
) -> Result<usize> {
    if beliefs.is_empty() {
        return Err(invalid_input("no candidate policies"));
    }
    let k = beliefs.len();
    let pick = match *strategy {
        AcquisitionStrategy::Ucb { beta_sqrt } => argmax(&ucb_from_beliefs(beliefs, beta_sqrt)),
        AcquisitionStrategy::Uniform => Some(rng.random_range(0..k)),
        AcquisitionStrategy::EpsilonGreedy { epsilon } => {
            if rng.random::<f64>() < epsilon {
                Some(rng.random_range(0..k))
            } else {
                let means: Vec<f64> = beliefs.iter().map(|b| b.map_or(f64::INFINITY, |b| b.mean)).collect();
                argmax(&means)
            }
        }
        AcquisitionStrategy::ExpectedImprovement => argmax(&expected_improvement(beliefs)),
    };
    pick.ok_or_else(|| invalid_state("every acquisition score is NaN"))
}

/// Policy with the highest posterior mean among those with a belief.
pub fn recommend(beliefs: &[Option<Belief>]) -> Result<usize> {
    let means: Vec<f64> = beliefs.iter().map(|b| b.map_or(f64::NAN, |b| b.mean)).collect();
    argmax(&means).ok_or_else(|| invalid_state("no policy has a posterior to recommend from"))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub executed: usize,
    pub ret: f64,
    pub recommended: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TraceStatus {
    Complete,
    /// The environment failed; the trace holds the steps before the failure.
    Aborted(String),
}

/// Record of one selection run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub steps: Vec<TraceStep>,
    pub final_recommendation: Option<usize>,
    pub status: TraceStatus,
}

impl Trace {
    pub fn is_valid(&self) -> bool {
        self.status == TraceStatus::Complete
    }

    pub fn executed(&self) -> impl Iterator<Item = usize> + '_ {
        self.steps.iter().map(|s| s.executed)
    }

    /// CSV with columns `step,executed_policy,return,recommended_policy`;
    /// steps count episodes from 1.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["step", "executed_policy", "return", "recommended_policy"])?;
        for (i, s) in self.steps.iter().enumerate() {
            w.write_record([
                (i + 1).to_string(),
                s.executed.to_string(),
                s.ret.to_string(),
                s.recommended.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

enum Model {
    Gp(GPHyperparams),
    Ind(IndHyperparams),
}

impl Model {
    fn refit(&mut self, log: &ObservationLog, d: &DistanceMatrix, adam: &AdamConfig) -> Result<()> {
        match self {
            Model::Gp(h) => *h = gp::fit_map(h, log, d, adam)?,
            Model::Ind(h) => *h = ind::ind_fit_map(log, h, adam)?,
        }
        Ok(())
    }

    fn beliefs(&self, log: &ObservationLog, d: &DistanceMatrix) -> Result<Vec<Option<Belief>>> {
        match self {
            Model::Gp(h) => Ok(h.posterior(log, d)?.beliefs()),
            Model::Ind(h) => Ok(h
                .posteriors(log)?
                .into_iter()
                .map(|p| p.map(|(mean, variance)| Belief { mean, variance }))
                .collect()),
        }
    }
}

/// Run the active selection loop.
///
/// `ope` must be given exactly when `cfg.use_ope` is set; entries may be
/// `None` for policies without an OPE estimate. The GP starts from
/// [`gp::default_gp_hyperparams`] (with priors only when OPE is off), the
/// independent model from [`IndHyperparams::initial`]; every refit starts
/// from the previous fit.
pub fn run_selection(
    env: &mut dyn ReturnSampler,
    d: &DistanceMatrix,
    ope: Option<&[Option<f64>]>,
    cfg: &LoopConfig,
) -> Result<Trace> {
    cfg.validate()?;
    let k = d.len();
    if env.num_policies() != k {
        return Err(invalid_input(format!(
            "environment has {} policies, distance matrix has {k}",
            env.num_policies()
        )));
    }
    let mut log = match (cfg.use_ope, ope) {
        (true, Some(o)) if o.len() == k => ObservationLog::with_ope(o)?,
        (true, Some(o)) => return Err(invalid_input(format!("{} OPE estimates for {k} policies", o.len()))),
        (true, None) => return Err(invalid_input("use_ope is set but no OPE estimates were given")),
        (false, Some(_)) => return Err(invalid_input("OPE estimates given but use_ope is off")),
        (false, None) => ObservationLog::new(k),
    };
    let mut model = match cfg.model {
        ModelKind::Gp => Model::Gp(gp::default_gp_hyperparams(d, !cfg.use_ope)),
        ModelKind::Ind => Model::Ind(IndHyperparams::initial(k)),
    };
    let n_init = cfg.n_init();
    let mut rng = rng::stream(cfg.seed, &[domain::SELECTION]);

    let mut beliefs = None;
    let mut fitted = false;
    let mut since_fit = 0;
    if n_init == 0 && !log.observed_indices().is_empty() {
        model.refit(&log, d, &cfg.adam)?;
        fitted = true;
        beliefs = Some(model.beliefs(&log, d)?);
    }

    let mut steps = Vec::with_capacity(cfg.budget);
    for i in 0..cfg.budget {
        let executed = match &beliefs {
            Some(b) if i >= n_init => select_next(b, &cfg.strategy, &mut rng)?,
            _ => rng.random_range(0..k),
        };
        let ret = match env.sample_return(executed) {
            Ok(r) => r,
            Err(e) => {
                let final_recommendation = steps.last().map(|s: &TraceStep| s.recommended);
                return Ok(Trace {
                    steps,
                    final_recommendation,
                    status: TraceStatus::Aborted(format!("episode {} of policy {executed}: {e}", i + 1)),
                });
            }
        };
        log.push_return(executed, ret)?;
        since_fit += 1;
        let last = i + 1 == cfg.budget;
        if i + 1 >= n_init && (!fitted || since_fit >= cfg.refit_every || last) {
            model.refit(&log, d, &cfg.adam)?;
            fitted = true;
            since_fit = 0;
        }
        let b = model.beliefs(&log, d)?;
        let recommended = recommend(&b)?;
        beliefs = Some(b);
        steps.push(TraceStep {
            executed,
            ret,
            recommended,
        });
    }

    let final_recommendation = match (&beliefs, steps.last()) {
        (_, Some(s)) => Some(s.recommended),
        (Some(b), None) => Some(recommend(b)?),
        (None, None) => None,
    };
    Ok(Trace {
        steps,
        final_recommendation,
        status: TraceStatus::Complete,
    })
}
