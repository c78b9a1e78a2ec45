//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use aops_core::adam::AdamConfig;
use aops_core::kernel::{normalize_action_dims, FingerprintFile};
use aops_core::simenv::{SyntheticTask, SyntheticTaskConfig, TaskValues};
use serde::{Deserialize, Serialize};

use crate::method::Method;

/// Where the candidate policies come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSource {
    /// A fresh synthetic pool per repetition; its `seed` is replaced by one
    /// derived from the base seed and the repetition.
    Synthetic(SyntheticTaskConfig),
    /// A fixed pool read from a fingerprint file and its companion values.
    Files {
        fingerprints: PathBuf,
        values: PathBuf,
        #[serde(default)]
        normalize_action_dims: bool,
    },
}

impl Default for TaskSource {
    fn default() -> Self {
        TaskSource::Synthetic(SyntheticTaskConfig::default())
    }
}

impl TaskSource {
    pub fn load_files(fingerprints: &Path, values: &Path, normalize: bool) -> Result<SyntheticTask> {
        let read = |p: &Path| std::fs::read(p).with_context(|| format!("reading {}", p.display()));
        let fp_file = FingerprintFile::read(read(fingerprints)?.as_slice())
            .with_context(|| format!("parsing fingerprints {}", fingerprints.display()))?;
        let mut fps = fp_file
            .into_fingerprints()
            .with_context(|| format!("fingerprints {}", fingerprints.display()))?;
        if normalize {
            normalize_action_dims(&mut fps)?;
        }
        let doc: TaskValues = serde_json::from_slice(&read(values)?)
            .with_context(|| format!("parsing task values {}", values.display()))?;
        SyntheticTask::from_parts(fps, doc.true_values, doc.ope, doc.return_noise, doc.families)
            .with_context(|| format!("task values {}", values.display()))
    }
}

/// One experiment: a task source, a list of methods and the protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub task: TaskSource,
    pub methods: Vec<Method>,
    pub budget: usize,
    pub repetitions: usize,
    /// Number of policies drawn from the pool in each repetition.
    pub subsample_k: Option<usize>,
    /// Number of policies that receive an OPE estimate in each repetition.
    pub ope_subset: Option<usize>,
    pub base_seed: u64,
    pub output_dir: Option<PathBuf>,
    pub beta_sqrt: f64,
    pub epsilon: f64,
    pub refit_every: usize,
    pub n_init: Option<usize>,
    pub adam: AdamConfig,
    pub write_traces: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut methods = Method::ablation_grid();
        methods.push(Method::OpeOnly);
        Self {
            name: "experiment".into(),
            task: TaskSource::default(),
            methods,
            budget: 100,
            repetitions: 100,
            subsample_k: None,
            ope_subset: None,
            base_seed: 0,
            output_dir: None,
            beta_sqrt: 5.0,
            epsilon: 0.1,
            refit_every: 1,
            n_init: None,
            adam: AdamConfig::default(),
            write_traces: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a TOML config, or the `config` entry of a run manifest when the
    /// file ends in `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg = if path.extension().is_some_and(|e| e == "json") {
            let manifest: crate::experiment::Manifest =
                serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))?;
            manifest.config
        } else {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        };
        cfg.validate()
            .with_context(|| format!("invalid config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.methods.is_empty(), "methods: at least one method is required");
        ensure!(self.repetitions >= 1, "repetitions: must be at least 1");
        ensure!(self.budget >= 1, "budget: must be at least 1");
        ensure!(self.refit_every >= 1, "refit_every: must be at least 1");
        ensure!(
            self.beta_sqrt > 0.0 && self.beta_sqrt.is_finite(),
            "beta_sqrt: must be positive, got {}",
            self.beta_sqrt
        );
        ensure!(
            (0.0..=1.0).contains(&self.epsilon),
            "epsilon: must lie in [0, 1], got {}",
            self.epsilon
        );
        if let Some(k) = self.subsample_k {
            ensure!(k >= 1, "subsample_k: must be at least 1");
        }
        if let Some(n) = self.n_init {
            ensure!(n <= self.budget, "n_init: {n} exceeds budget {}", self.budget);
        }
        if self.ope_subset == Some(0) && self.methods.contains(&Method::OpeOnly) {
            bail!("ope_subset: the OPE baseline needs at least one OPE estimate");
        }
        self.adam.validate().context("adam")?;
        if let TaskSource::Synthetic(t) = &self.task {
            t.validate().context("task.synthetic")?;
        }
        let mut seen = std::collections::HashSet::new();
        for m in &self.methods {
            ensure!(seen.insert(*m), "methods: `{m}` listed twice");
        }
        Ok(())
    }

    /// Differences from the default fitting schedule, recorded in manifests.
    pub fn schedule_deviations(&self) -> Vec<String> {
        let d = AdamConfig::default();
        let mut out = Vec::new();
        if self.refit_every != 1 {
            out.push(format!("refit_every = {} (default 1)", self.refit_every));
        }
        if self.adam.steps != d.steps {
            out.push(format!("adam.steps = {} (default {})", self.adam.steps, d.steps));
        }
        if self.adam.learning_rate != d.learning_rate {
            out.push(format!(
                "adam.learning_rate = {} (default {})",
                self.adam.learning_rate, d.learning_rate
            ));
        }
        out
    }
}
