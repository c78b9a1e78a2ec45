//! Synthetic benchmark tasks: policies grouped into families of similar
//! behaviour, hidden true values drawn from a policy kernel, noisy episodic
//! returns and OPE estimates of controllable quality.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Error, Result};
use crate::gp;
use crate::kernel::{distance_matrix, ActionFingerprint, ActionKind, DistanceMatrix, FingerprintFile, KernelParams};
use crate::rng::{self, domain};
use crate::selection::ReturnSampler;

/// Distribution of one episodic return around the policy value `μ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReturnNoise {
    /// `μ + sd·ξ`
    Gaussian { sd: f64 },
    /// 0 with probability `zero_prob`, otherwise `μ/(1 − zero_prob) + sd·ξ`.
    Mixture { zero_prob: f64, sd: f64 },
}

impl ReturnNoise {
    fn validate(&self) -> Result<()> {
        let sd = match *self {
            ReturnNoise::Gaussian { sd } => sd,
            ReturnNoise::Mixture { zero_prob, sd } => {
                if !(0.0..1.0).contains(&zero_prob) {
                    return Err(invalid_input(format!(
                        "return_noise.zero_prob must lie in [0, 1), got {zero_prob}"
                    )));
                }
                sd
            }
        };
        if !(sd >= 0.0 && sd.is_finite()) {
            return Err(invalid_input(format!("return_noise.sd must be nonnegative, got {sd}")));
        }
        Ok(())
    }

    fn scaled(self, c: f64) -> Self {
        match self {
            ReturnNoise::Gaussian { sd } => ReturnNoise::Gaussian { sd: sd * c },
            ReturnNoise::Mixture { zero_prob, sd } => ReturnNoise::Mixture { zero_prob, sd: sd * c },
        }
    }

    /// One draw for a policy with value `mu`.
    pub fn sample<R: Rng + ?Sized>(&self, mu: f64, rng: &mut R) -> f64 {
        let xi: f64 = rng.sample(StandardNormal);
        match *self {
            ReturnNoise::Gaussian { sd } => mu + sd * xi,
            ReturnNoise::Mixture { zero_prob, sd } => {
                if rng.random::<f64>() < zero_prob {
                    0.0
                } else {
                    mu / (1.0 - zero_prob) + sd * xi
                }
            }
        }
    }
}

/// Units of the noise and bias settings.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScale {
    /// Taken as given.
    Absolute,
    /// Multiplied by the standard deviation of the realized true values.
    #[default]
    ValueSd,
}

/// How the hidden values relate to the policy kernel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValueModel {
    /// A draw from the GP with `true_kernel`.
    #[default]
    WellSpecified,
    /// The GP draw plus independent Student-t noise per policy.
    HeavyTailed { scale: f64, dof: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticTaskConfig {
    pub num_policies: usize,
    pub num_families: usize,
    pub probe_states: usize,
    pub action_dim: usize,
    pub action_kind: ActionKind,
    /// Number of distinct actions when `action_kind` is discrete.
    pub num_actions: usize,
    pub true_kernel: KernelParams,
    pub value_mean: f64,
    pub value_model: ValueModel,
    pub return_noise: ReturnNoise,
    pub ope_noise_sd: f64,
    pub ope_bias: f64,
    pub noise_scale: NoiseScale,
    pub seed: u64,
}

impl Default for SyntheticTaskConfig {
    fn default() -> Self {
        Self {
            num_policies: 50,
            num_families: 3,
            probe_states: 1000,
            action_dim: 2,
            action_kind: ActionKind::Continuous,
            num_actions: 5,
            true_kernel: KernelParams::new(100.0, 1.0, 1.0).expect("valid default kernel"),
            value_mean: 0.0,
            value_model: ValueModel::WellSpecified,
            return_noise: ReturnNoise::Gaussian { sd: 2.0 },
            ope_noise_sd: 1.0,
            ope_bias: 0.0,
            noise_scale: NoiseScale::ValueSd,
            seed: 0,
        }
    }
}

impl SyntheticTaskConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_policies", self.num_policies),
            ("num_families", self.num_families),
            ("probe_states", self.probe_states),
            ("action_dim", self.action_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(invalid_input(format!("{name} must be at least 1")));
            }
        }
        if self.action_kind == ActionKind::Discrete && self.num_actions < 2 {
            return Err(invalid_input("num_actions must be at least 2 for discrete actions"));
        }
        if !(self.ope_noise_sd >= 0.0 && self.ope_noise_sd.is_finite()) {
            return Err(invalid_input(format!(
                "ope_noise_sd must be nonnegative, got {}",
                self.ope_noise_sd
            )));
        }
        if !self.ope_bias.is_finite() || !self.value_mean.is_finite() {
            return Err(invalid_input("ope_bias and value_mean must be finite"));
        }
        if let ValueModel::HeavyTailed { scale, dof } = self.value_model {
            if !(scale >= 0.0 && scale.is_finite() && dof > 0.0 && dof.is_finite()) {
                return Err(invalid_input(format!(
                    "value_model needs nonnegative scale and positive dof, got ({scale}, {dof})"
                )));
            }
        }
        self.return_noise.validate()
    }
}

// Geometry of the generated fingerprints.
const PATHS_PER_FAMILY: usize = 2;
const PATH_SPREAD: f64 = 0.5;
const POLICY_JITTER: f64 = 0.1;
const DISCRETE_SWITCH: f64 = 0.4;
const DISCRETE_JITTER: f64 = 0.05;

/// A generated or loaded task. The true values are for scoring only.
#[derive(Clone, Debug)]
pub struct SyntheticTask {
    fingerprints: Vec<ActionFingerprint>,
    distances: DistanceMatrix,
    true_values: Vec<f64>,
    ope: Vec<f64>,
    return_noise: ReturnNoise,
    families: Vec<usize>,
}

/// Family of policy `j` when `k` policies are split into `f` contiguous blocks.
fn family_of(j: usize, k: usize, f: usize) -> usize {
    j * f / k
}

fn continuous_fingerprints<R: Rng>(cfg: &SyntheticTaskConfig, r: &mut R) -> Vec<Vec<f64>> {
    let (k, f, s, a) = (cfg.num_policies, cfg.num_families, cfg.probe_states, cfg.action_dim);
    let mut normal = |n: usize| -> Vec<f64> { (0..n).map(|_| r.sample(StandardNormal)).collect() };
    let centers: Vec<Vec<f64>> = (0..f).map(|_| normal(s * a)).collect();
    let paths: Vec<Vec<f64>> = (0..f * PATHS_PER_FAMILY).map(|_| normal(s * a)).collect();
    let mut members = vec![0usize; f];
    (0..k)
        .map(|j| {
            let fam = family_of(j, k, f);
            let size = (0..k).filter(|&i| family_of(i, k, f) == fam).count();
            let rank = members[fam];
            members[fam] += 1;
            let path = &paths[fam * PATHS_PER_FAMILY + rank % PATHS_PER_FAMILY];
            let progress = (rank + 1) as f64 / size as f64;
            let jitter = normal(s * a);
            (0..s * a)
                .map(|i| centers[fam][i] + PATH_SPREAD * progress * path[i] + POLICY_JITTER * jitter[i])
                .collect()
        })
        .collect()
}

fn discrete_fingerprints<R: Rng>(cfg: &SyntheticTaskConfig, r: &mut R) -> Vec<Vec<f64>> {
    let (k, f, s, a, n) = (
        cfg.num_policies,
        cfg.num_families,
        cfg.probe_states,
        cfg.action_dim,
        cfg.num_actions,
    );
    let mut actions = |len: usize| -> Vec<f64> { (0..len).map(|_| r.random_range(0..n) as f64).collect() };
    let centers: Vec<Vec<f64>> = (0..f).map(|_| actions(s * a)).collect();
    let alternatives: Vec<Vec<f64>> = (0..f * PATHS_PER_FAMILY).map(|_| actions(s * a)).collect();
    let thresholds: Vec<Vec<f64>> = (0..f * PATHS_PER_FAMILY)
        .map(|_| (0..s * a).map(|_| r.random::<f64>()).collect())
        .collect();
    let mut members = vec![0usize; f];
    (0..k)
        .map(|j| {
            let fam = family_of(j, k, f);
            let size = (0..k).filter(|&i| family_of(i, k, f) == fam).count();
            let rank = members[fam];
            members[fam] += 1;
            let p = fam * PATHS_PER_FAMILY + rank % PATHS_PER_FAMILY;
            let progress = (rank + 1) as f64 / size as f64;
            (0..s * a)
                .map(|i| {
                    if r.random::<f64>() < DISCRETE_JITTER {
                        r.random_range(0..n) as f64
                    } else if thresholds[p][i] < DISCRETE_SWITCH * progress {
                        alternatives[p][i]
                    } else {
                        centers[fam][i]
                    }
                })
                .collect()
        })
        .collect()
}

fn population_sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Generate a task; the result depends only on `cfg`.
///
/// Policies are split into `num_families` contiguous blocks. Each family
/// has a center action per probe state and a few progress paths; a member
/// sits partway along one path, plus a little private jitter, so members of
/// one family act alike. True values are a draw from the GP with
/// `true_kernel` on the resulting distances, and `ρ_k = μ_k + bias + sd·ξ_k`.
/// Geometry, values and OPE noise use separate streams, so changing the OPE
/// settings leaves the fingerprints and values unchanged.
pub fn make_synthetic_task(cfg: &SyntheticTaskConfig) -> Result<SyntheticTask> {
    cfg.validate()?;
    let mut geometry = rng::stream(cfg.seed, &[domain::TASK, 0]);
    let mut value_rng = rng::stream(cfg.seed, &[domain::TASK, 1]);
    let mut ope_rng = rng::stream(cfg.seed, &[domain::TASK, 2]);

    let flat = match cfg.action_kind {
        ActionKind::Continuous => continuous_fingerprints(cfg, &mut geometry),
        ActionKind::Discrete => discrete_fingerprints(cfg, &mut geometry),
    };
    let fingerprints = flat
        .into_iter()
        .enumerate()
        .map(|(j, data)| {
            ActionFingerprint::from_flat(j as i64, cfg.action_kind, cfg.probe_states, cfg.action_dim, data)
        })
        .collect::<Result<Vec<_>>>()?;
    let distances = distance_matrix(&fingerprints)?;

    let mut true_values = gp::sample_values(&distances, &cfg.true_kernel, cfg.value_mean, &mut value_rng)?;
    if let ValueModel::HeavyTailed { scale, dof } = cfg.value_model {
        let t = StudentT::new(dof).map_err(|e| invalid_input(format!("value_model: {e}")))?;
        for v in &mut true_values {
            *v += scale * t.sample(&mut value_rng);
        }
    }

    let unit = match cfg.noise_scale {
        NoiseScale::Absolute => 1.0,
        NoiseScale::ValueSd => population_sd(&true_values),
    };
    let ope = true_values
        .iter()
        .map(|&mu| {
            let xi: f64 = ope_rng.sample(StandardNormal);
            mu + unit * (cfg.ope_bias + cfg.ope_noise_sd * xi)
        })
        .collect();
    let k = cfg.num_policies;
    Ok(SyntheticTask {
        fingerprints,
        distances,
        true_values,
        ope,
        return_noise: cfg.return_noise.scaled(unit),
        families: (0..k).map(|j| family_of(j, k, cfg.num_families)).collect(),
    })
}

/// Companion document stored next to the fingerprint file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskValues {
    pub true_values: Vec<f64>,
    pub ope: Vec<f64>,
    pub return_noise: ReturnNoise,
    #[serde(default)]
    pub families: Option<Vec<usize>>,
}

impl SyntheticTask {
    /// Assemble a task from its parts; families default to a single one.
    pub fn from_parts(
        fingerprints: Vec<ActionFingerprint>,
        true_values: Vec<f64>,
        ope: Vec<f64>,
        return_noise: ReturnNoise,
        families: Option<Vec<usize>>,
    ) -> Result<Self> {
        let k = fingerprints.len();
        if k == 0 {
            return Err(invalid_input("a task needs at least one policy"));
        }
        for (name, len) in [("true_values", true_values.len()), ("ope", ope.len())] {
            if len != k {
                return Err(invalid_input(format!("{name} has {len} entries for {k} policies")));
            }
        }
        if let Some(i) = true_values.iter().position(|v| !v.is_finite()) {
            return Err(invalid_input(format!("true_values[{i}] is not finite")));
        }
        if let Some(i) = ope.iter().position(|v| !v.is_finite()) {
            return Err(invalid_input(format!("ope[{i}] is not finite")));
        }
        return_noise.validate()?;
        let families = families.unwrap_or_else(|| vec![0; k]);
        if families.len() != k {
            return Err(invalid_input(format!(
                "families has {} entries for {k} policies",
                families.len()
            )));
        }
        let distances = distance_matrix(&fingerprints)?;
        Ok(Self {
            fingerprints,
            distances,
            true_values,
            ope,
            return_noise,
            families,
        })
    }

    pub fn len(&self) -> usize {
        self.fingerprints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fingerprints.is_empty()
    }

    pub fn fingerprints(&self) -> &[ActionFingerprint] {
        &self.fingerprints
    }

    pub fn distances(&self) -> &DistanceMatrix {
        &self.distances
    }

    /// Hidden policy values; for scoring only.
    pub fn true_values(&self) -> &[f64] {
        &self.true_values
    }

    pub fn ope(&self) -> &[f64] {
        &self.ope
    }

    pub fn return_noise(&self) -> ReturnNoise {
        self.return_noise
    }

    pub fn families(&self) -> &[usize] {
        &self.families
    }

    pub fn sample_return<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> f64 {
        self.return_noise.sample(self.true_values[k], rng)
    }

    /// Task restricted to `indices`, in that order; policy ids are kept.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(invalid_input(format!(
                "policy index {i} out of range for {} policies",
                self.len()
            )));
        }
        Ok(Self {
            fingerprints: indices.iter().map(|&i| self.fingerprints[i].clone()).collect(),
            distances: self.distances.submatrix(indices),
            true_values: indices.iter().map(|&i| self.true_values[i]).collect(),
            ope: indices.iter().map(|&i| self.ope[i]).collect(),
            return_noise: self.return_noise,
            families: indices.iter().map(|&i| self.families[i]).collect(),
        })
    }

    pub fn write<W1: Write, W2: Write>(&self, fingerprints: W1, values: W2) -> Result<()> {
        FingerprintFile::from_fingerprints(&self.fingerprints)?.write(fingerprints)?;
        let doc = TaskValues {
            true_values: self.true_values.clone(),
            ope: self.ope.clone(),
            return_noise: self.return_noise,
            families: Some(self.families.clone()),
        };
        serde_json::to_writer(values, &doc)?;
        Ok(())
    }

    pub fn read<R1: Read, R2: Read>(fingerprints: R1, values: R2) -> Result<Self> {
        let fps = FingerprintFile::read(fingerprints)?.into_fingerprints()?;
        let doc: TaskValues = serde_json::from_reader(values)?;
        Self::from_parts(fps, doc.true_values, doc.ope, doc.return_noise, doc.families)
    }

    pub fn save(&self, fingerprint_path: &Path, values_path: &Path) -> Result<()> {
        let fp = std::io::BufWriter::new(std::fs::File::create(fingerprint_path)?);
        let vals = std::io::BufWriter::new(std::fs::File::create(values_path)?);
        self.write(fp, vals)
    }

    pub fn load(fingerprint_path: &Path, values_path: &Path) -> Result<Self> {
        let open = |p: &Path| -> Result<_> {
            std::fs::File::open(p)
                .map(std::io::BufReader::new)
                .map_err(|e| Error::InvalidInput(format!("{}: {e}", p.display())))
        };
        Self::read(open(fingerprint_path)?, open(values_path)?)
    }
}

/// Return sampler whose `n`-th return of a policy depends only on the seed,
/// the policy id and `n`, so runs that execute the same policy the same
/// number of times see the same returns.
#[derive(Clone, Debug)]
pub struct CounterEnv<'a> {
    task: &'a SyntheticTask,
    seed: u64,
    visits: Vec<u64>,
}

impl<'a> CounterEnv<'a> {
    pub fn new(task: &'a SyntheticTask, seed: u64) -> Self {
        Self {
            task,
            seed,
            visits: vec![0; task.len()],
        }
    }

    pub fn visits(&self) -> &[u64] {
        &self.visits
    }
}

impl ReturnSampler for CounterEnv<'_> {
    fn num_policies(&self) -> usize {
        self.task.len()
    }

    fn sample_return(&mut self, policy: usize) -> Result<f64> {
        if policy >= self.task.len() {
            return Err(invalid_input(format!("policy index {policy} out of range")));
        }
        let id = self.task.fingerprints[policy].policy_id() as u64;
        let mut r = rng::stream(self.seed, &[domain::RETURNS, id, self.visits[policy]]);
        self.visits[policy] += 1;
        Ok(self.task.sample_return(policy, &mut r))
    }
}
