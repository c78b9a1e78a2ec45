//! Repetition fan-out, per-method scoring and result files.

use std::borrow::Cow;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use aops_core::metrics::{
    aggregate_curves, cumulative_regret, normalize_regret, rank_of_selection, simple_regret, value_gap,
    worst_policy_frequency, RegretCurve,
};
use aops_core::rng::{derive_seed, domain, stream};
use aops_core::selection::{argmax, run_selection, LoopConfig, Trace};
use aops_core::simenv::{make_synthetic_task, CounterEnv, SyntheticTask, SyntheticTaskConfig};
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, TaskSource};
use crate::method::Method;

/// Quantile defining the "bottom policies" execution rate.
pub const BOTTOM_QUANTILE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OpeOnlyResult {
    pub recommended: usize,
    pub regret: f64,
}

/// Recommend the policy with the highest OPE estimate (lowest index on ties).
pub fn run_ope_only(task: &SyntheticTask, ope: &[Option<f64>]) -> Result<OpeOnlyResult> {
    ensure!(
        ope.len() == task.len(),
        "{} OPE entries for {} policies",
        ope.len(),
        task.len()
    );
    let scores: Vec<f64> = ope.iter().map(|o| o.unwrap_or(f64::NAN)).collect();
    let Some(recommended) = argmax(&scores) else {
        bail!("the OPE baseline needs at least one OPE estimate");
    };
    Ok(OpeOnlyResult {
        recommended,
        regret: simple_regret(task.true_values(), recommended)?,
    })
}

/// Scores of one method in one repetition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepMetrics {
    pub rep: usize,
    pub final_regret: f64,
    pub final_rank: usize,
    /// Cumulative regret of the executed policies, divided by the value gap.
    pub cumulative_regret: Option<f64>,
    pub bottom10_rate: Option<f64>,
    pub worst_rate: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct MethodResult {
    pub method: Method,
    pub curve: RegretCurve,
    /// Normalized simple regret after each episode, per repetition.
    pub regrets: Vec<Vec<f64>>,
    pub reps: Vec<RepMetrics>,
    pub traces: Vec<Option<Trace>>,
}

impl MethodResult {
    pub fn mean_of<F: Fn(&RepMetrics) -> Option<f64>>(&self, f: F) -> Option<f64> {
        let values: Vec<f64> = self.reps.iter().filter_map(f).collect();
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub methods: Vec<MethodResult>,
}

impl ExperimentResult {
    pub fn method(&self, m: Method) -> Option<&MethodResult> {
        self.methods.iter().find(|r| r.method == m)
    }
}

/// Contents of `manifest.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: ExperimentConfig,
    pub schedule_deviations: Vec<String>,
}

impl Manifest {
    pub fn new(config: &ExperimentConfig) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            schedule_deviations: config.schedule_deviations(),
        }
    }
}

struct RepOutcome {
    regrets: Vec<f64>,
    metrics: RepMetrics,
    trace: Option<Trace>,
}

fn pool_for_rep<'a>(
    cfg: &ExperimentConfig,
    fixed: Option<&'a SyntheticTask>,
    rep_seed: u64,
) -> Result<Cow<'a, SyntheticTask>> {
    match (&cfg.task, fixed) {
        (_, Some(t)) => Ok(Cow::Borrowed(t)),
        (TaskSource::Synthetic(t), None) => {
            let task_cfg = SyntheticTaskConfig {
                seed: derive_seed(rep_seed, &[domain::TASK]),
                ..t.clone()
            };
            Ok(Cow::Owned(make_synthetic_task(&task_cfg)?))
        }
        (TaskSource::Files { .. }, None) => bail!("file task was not loaded"),
    }
}

fn run_repetition(cfg: &ExperimentConfig, fixed: Option<&SyntheticTask>, rep: usize) -> Result<Vec<RepOutcome>> {
    let rep_seed = derive_seed(cfg.base_seed, &[rep as u64]);
    let pool = pool_for_rep(cfg, fixed, rep_seed)?;
    let task: Cow<SyntheticTask> = match cfg.subsample_k {
        Some(k) => {
            ensure!(
                k <= pool.len(),
                "subsample_k: {k} exceeds the pool of {} policies",
                pool.len()
            );
            let mut idx = index::sample(&mut stream(rep_seed, &[domain::SUBSAMPLE]), pool.len(), k).into_vec();
            idx.sort_unstable();
            Cow::Owned(pool.subset(&idx)?)
        }
        None => Cow::Borrowed(pool.as_ref()),
    };
    let k = task.len();
    let ope: Vec<Option<f64>> = match cfg.ope_subset {
        Some(m) => {
            ensure!(m <= k, "ope_subset: {m} exceeds the {k} candidate policies");
            let mut has = vec![false; k];
            for i in index::sample(&mut stream(rep_seed, &[domain::OPE_SUBSET]), k, m) {
                has[i] = true;
            }
            task.ope().iter().zip(has).map(|(&v, h)| h.then_some(v)).collect()
        }
        None => task.ope().iter().copied().map(Some).collect(),
    };

    let values = task.true_values();
    let pool_values = pool.true_values();
    let gap = value_gap(pool_values);
    let normalized = |rec: usize| -> Result<f64> { Ok(normalize_regret(simple_regret(values, rec)?, pool_values)) };

    let mut out = Vec::with_capacity(cfg.methods.len());
    for method in &cfg.methods {
        let outcome = match *method {
            Method::OpeOnly => {
                let r = run_ope_only(&task, &ope)?;
                let reg = normalized(r.recommended)?;
                RepOutcome {
                    regrets: vec![reg; cfg.budget],
                    metrics: RepMetrics {
                        rep,
                        final_regret: reg,
                        final_rank: rank_of_selection(values, r.recommended)?,
                        cumulative_regret: None,
                        bottom10_rate: None,
                        worst_rate: None,
                    },
                    trace: None,
                }
            }
            Method::Active {
                model,
                strategy,
                use_ope,
            } => {
                let mut lc = LoopConfig::new(
                    model,
                    strategy.acquisition(cfg.beta_sqrt, cfg.epsilon),
                    use_ope,
                    cfg.budget,
                    derive_seed(rep_seed, &[domain::SELECTION]),
                );
                lc.refit_every = cfg.refit_every;
                lc.n_init = cfg.n_init;
                lc.adam = cfg.adam;
                let mut env = CounterEnv::new(&task, derive_seed(rep_seed, &[domain::RETURNS]));
                let trace = run_selection(&mut env, task.distances(), use_ope.then_some(ope.as_slice()), &lc)
                    .with_context(|| format!("repetition {rep}, method {method}"))?;
                ensure!(
                    trace.is_valid(),
                    "repetition {rep}, method {method}: {:?}",
                    trace.status
                );
                let regrets = trace
                    .steps
                    .iter()
                    .map(|s| normalized(s.recommended))
                    .collect::<Result<Vec<_>>>()?;
                let executed: Vec<usize> = trace.executed().collect();
                let cum = cumulative_regret(values, &executed)?;
                let final_rec = trace.final_recommendation.context("no final recommendation")?;
                RepOutcome {
                    metrics: RepMetrics {
                        rep,
                        final_regret: *regrets.last().context("empty trace")?,
                        final_rank: rank_of_selection(values, final_rec)?,
                        cumulative_regret: Some(if gap > 0.0 {
                            cum.last().copied().unwrap_or(0.0) / gap
                        } else {
                            0.0
                        }),
                        bottom10_rate: Some(worst_policy_frequency(values, &executed, BOTTOM_QUANTILE)?),
                        worst_rate: Some(worst_policy_frequency(values, &executed, 1.0 / k as f64)?),
                    },
                    regrets,
                    trace: Some(trace),
                }
            }
        };
        out.push(outcome);
    }
    Ok(out)
}

/// Worker count from `AOPS_WORKERS`, else the available parallelism.
pub fn default_workers() -> usize {
    std::env::var("AOPS_WORKERS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Run every method on every repetition. Output does not depend on `workers`.
pub fn run_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<ExperimentResult> {
    cfg.validate()?;
    let fixed = match &cfg.task {
        TaskSource::Files {
            fingerprints,
            values,
            normalize_action_dims,
        } => Some(TaskSource::load_files(fingerprints, values, *normalize_action_dims)?),
        TaskSource::Synthetic(_) => None,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .context("building worker pool")?;
    let per_rep: Vec<Vec<RepOutcome>> = pool.install(|| {
        (0..cfg.repetitions)
            .into_par_iter()
            .map(|rep| run_repetition(cfg, fixed.as_ref(), rep))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut methods: Vec<MethodResult> = cfg
        .methods
        .iter()
        .map(|&method| MethodResult {
            method,
            curve: RegretCurve {
                mean: Vec::new(),
                sd_of_mean: Vec::new(),
                repetitions: 0,
            },
            regrets: Vec::with_capacity(cfg.repetitions),
            reps: Vec::with_capacity(cfg.repetitions),
            traces: Vec::with_capacity(cfg.repetitions),
        })
        .collect();
    for outcomes in per_rep {
        for (m, o) in methods.iter_mut().zip(outcomes) {
            m.regrets.push(o.regrets);
            m.reps.push(o.metrics);
            m.traces.push(o.trace);
        }
    }
    for m in &mut methods {
        m.curve = aggregate_curves(&m.regrets)?;
    }
    Ok(ExperimentResult {
        config: cfg.clone(),
        methods,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

impl ExperimentResult {
    /// Write the manifest, summary, per-repetition metrics, curves and
    /// (if enabled) traces under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        let manifest = Manifest::new(&self.config);
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(dir.join("manifest.json"), text).with_context(|| format!("writing {}", dir.display()))?;

        let mut summary = csv::Writer::from_writer(create(&dir.join("summary.csv"))?);
        summary.write_record([
            "method",
            "budget",
            "mean_regret",
            "sd_of_mean",
            "mean_rank",
            "mean_cumulative_regret",
            "bottom10_rate",
            "worst_rate",
            "n_reps",
        ])?;
        for m in &self.methods {
            let (mean, sd) = m.curve.last().context("empty curve")?;
            summary.write_record([
                m.method.to_string(),
                self.config.budget.to_string(),
                mean.to_string(),
                sd.to_string(),
                opt(m.mean_of(|r| Some(r.final_rank as f64))),
                opt(m.mean_of(|r| r.cumulative_regret)),
                opt(m.mean_of(|r| r.bottom10_rate)),
                opt(m.mean_of(|r| r.worst_rate)),
                m.curve.repetitions.to_string(),
            ])?;
        }
        summary.flush()?;

        let mut per_rep = csv::Writer::from_writer(create(&dir.join("per_rep.csv"))?);
        per_rep.write_record([
            "rep",
            "method",
            "final_regret",
            "final_rank",
            "cumulative_regret",
            "bottom10_rate",
            "worst_rate",
        ])?;
        for m in &self.methods {
            for r in &m.reps {
                per_rep.write_record([
                    r.rep.to_string(),
                    m.method.to_string(),
                    r.final_regret.to_string(),
                    r.final_rank.to_string(),
                    opt(r.cumulative_regret),
                    opt(r.bottom10_rate),
                    opt(r.worst_rate),
                ])?;
            }
        }
        per_rep.flush()?;

        let curves = dir.join("curves");
        fs::create_dir_all(&curves)?;
        for m in &self.methods {
            m.curve
                .write_csv(create(&curves.join(format!("{}.csv", m.method.file_stem())))?)?;
        }

        if self.config.write_traces {
            for m in &self.methods {
                let tdir = dir.join("traces").join(m.method.file_stem());
                for (rep, t) in m.traces.iter().enumerate() {
                    if let Some(t) = t {
                        fs::create_dir_all(&tdir)?;
                        t.write_csv(create(&tdir.join(format!("rep_{rep:04}.csv")))?)?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Run `cfg` once per value of a swept setting, writing each result to its
/// own subdirectory and a combined curve table.
fn sweep<F>(
    cfg: &ExperimentConfig,
    values: &[usize],
    label: &str,
    apply: F,
    workers: usize,
    out: Option<&Path>,
) -> Result<Vec<(usize, ExperimentResult)>>
where
    F: Fn(&mut ExperimentConfig, usize),
{
    ensure!(!values.is_empty(), "no {label} values given");
    let mut results = Vec::with_capacity(values.len());
    for &v in values {
        let mut c = cfg.clone();
        apply(&mut c, v);
        let r = run_experiment(&c, workers).with_context(|| format!("{label} = {v}"))?;
        if let Some(dir) = out {
            r.write(&dir.join(format!("{label}_{v}")))?;
        }
        results.push((v, r));
    }
    if let Some(dir) = out {
        let mut w = csv::Writer::from_writer(create(&dir.join(format!("vary_{label}.csv")))?);
        w.write_record([label, "method", "step", "mean_regret", "sd_of_mean", "n_reps"])?;
        for (v, r) in &results {
            for m in &r.methods {
                for i in 0..m.curve.len() {
                    w.write_record([
                        v.to_string(),
                        m.method.to_string(),
                        (i + 1).to_string(),
                        m.curve.mean[i].to_string(),
                        m.curve.sd_of_mean[i].to_string(),
                        m.curve.repetitions.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
    }
    Ok(results)
}

/// Same pool per repetition, `K` policies drawn from it for each `K`.
pub fn vary_k_experiment(
    cfg: &ExperimentConfig,
    k_values: &[usize],
    workers: usize,
    out: Option<&Path>,
) -> Result<Vec<(usize, ExperimentResult)>> {
    sweep(cfg, k_values, "k", |c, k| c.subsample_k = Some(k), workers, out)
}

/// Same tasks, OPE estimates for only `n` policies per repetition.
pub fn vary_ope_experiment(
    cfg: &ExperimentConfig,
    n_values: &[usize],
    workers: usize,
    out: Option<&Path>,
) -> Result<Vec<(usize, ExperimentResult)>> {
    if n_values.contains(&0) && cfg.methods.contains(&Method::OpeOnly) {
        bail!("n_ope = 0 leaves the OPE baseline without estimates; drop the OPE method");
    }
    sweep(cfg, n_values, "n_ope", |c, n| c.ope_subset = Some(n), workers, out)
}

/// Output directory: the explicit one, else the config's, else `results/<name>`.
pub fn output_dir(cfg: &ExperimentConfig, explicit: Option<PathBuf>) -> PathBuf {
    explicit
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("results").join(&cfg.name))
}
