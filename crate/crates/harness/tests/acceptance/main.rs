//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Arguments select criteria by substring of their
//! names, e.g. `cargo test --test acceptance -- c1 c5`.

mod oracles;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use aops_core::adam::AdamConfig;
use aops_core::gp::{llh_gradient, log_marginal_likelihood, GPHyperparams, GPPriors, NUM_GP_PARAMS};
use aops_core::ind::{ind_log_marginal, ind_log_marginal_grad, ind_posterior};
use aops_core::kernel::{distance_matrix, kernel_matrix, DistanceMatrix, KernelParams, JITTER};
use aops_core::observations::ObservationLog;
use aops_core::rng::{stream, StreamRng};
use aops_core::simenv::{NoiseScale, ReturnNoise, SyntheticTaskConfig};
use aops_harness::config::{ExperimentConfig, TaskSource};
use aops_harness::experiment::{default_workers, run_experiment, vary_k_experiment, ExperimentResult, MethodResult};
use aops_harness::method::Method;
use nalgebra::DVector;
use oracles::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Fitting schedule of the qualitative runs: the same per-refit parameter
/// travel (steps × learning rate) as the library default.
const ACCEPTANCE_ADAM: AdamConfig = AdamConfig {
    learning_rate: 0.02,
    beta1: 0.9,
    beta2: 0.999,
    epsilon: 1e-8,
    steps: 50,
};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn rng(seed: u64) -> StreamRng {
    stream(seed, &[0xACCE])
}

fn c1_posterior_oracle() -> Verdict {
    let start = Instant::now();
    let mut r = rng(1);
    let mut worst: f64 = 0.0;
    for trial in 0..200 {
        let k = [1, 2, 3, 5, 8][trial % 5];
        let d = random_distances(&mut r, k);
        let log = random_log(&mut r, k);
        let h = random_hypers(&mut r, false);
        let post = h.posterior(&log, &d).unwrap();
        let cov = kernel_matrix(&d, &h.kernel) + nalgebra::DMatrix::identity(k, k) * (JITTER * h.kernel.diagonal());
        let (mean, sigma) = joint_conditioning(&cov, &log, h.mean, h.ope_noise_var(), h.return_noise_var());
        worst = worst
            .max((&post.mean - &mean).amax())
            .max((&post.covariance - &sigma).amax());
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst <= 1e-8 && secs < 10.0,
        format!("max |Δ| {worst:.2e} over 200 instances (tol 1e-8), {secs:.2} s (limit 10 s)"),
    )
}

fn c2_ind_closed_form() -> Verdict {
    let mut r = rng(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let ope = r.random_bool(0.7).then(|| r.random_range(-5.0..5.0));
        let min_returns = usize::from(ope.is_none());
        let rets: Vec<f64> = (0..r.random_range(min_returns..10))
            .map(|_| r.random_range(-5.0..5.0))
            .collect();
        let (a, b) = (r.random_range(0.1..10.0), r.random_range(0.1..10.0));
        let (m, v) = ind_posterior(ope, &rets, a, b).unwrap();
        let (om, ov) = sequential_conjugate(ope, &rets, a, b);
        worst = worst.max((m - om).abs()).max((v - ov).abs());
    }
    verdict(
        worst <= 1e-12,
        format!("max |Δ| {worst:.2e} over 1000 instances (tol 1e-12)"),
    )
}

fn c3_gradients() -> Verdict {
    let mut r = rng(3);
    let mut worst_gp: f64 = 0.0;
    for trial in 0..20 {
        let k = [1, 2, 4, 8][trial % 4];
        let d = random_distances(&mut r, k);
        let log = random_log(&mut r, k);
        let h = random_hypers(&mut r, trial % 2 == 0);
        let g = llh_gradient(&h, &log, &d).unwrap();
        let fd = central_diff(
            |x| log_marginal_likelihood(&h.with_vector(x), &log, &d).unwrap(),
            &h.to_vector(),
            1e-5,
        );
        for i in 0..NUM_GP_PARAMS {
            worst_gp = worst_gp.max(rel_err(g[i], fd[i]));
        }
    }
    let mut worst_ind: f64 = 0.0;
    for trial in 0..20 {
        let ope = (trial % 4 != 0).then(|| r.random_range(-3.0..3.0));
        let n = r.random_range(usize::from(ope.is_none())..8);
        let rets: Vec<f64> = (0..n).map(|_| r.random_range(-4.0..4.0)).collect();
        let prior = (trial % 2 == 0).then(|| random_prior(&mut r));
        let x0: [f64; 2] = [r.random_range(-1.5..1.5), r.random_range(-1.5..1.5)];
        let g = ind_log_marginal_grad(ope, &rets, x0[0].exp(), x0[1].exp(), prior).unwrap();
        let fd = central_diff(
            |x| ind_log_marginal(ope, &rets, x[0].exp(), x[1].exp(), prior).unwrap(),
            &x0,
            1e-5,
        );
        for i in 0..2 {
            worst_ind = worst_ind.max(rel_err(g[i], fd[i]));
        }
    }
    verdict(
        worst_gp < 1e-4 && worst_ind < 1e-4,
        format!("max relative error GP {worst_gp:.2e}, Ind {worst_ind:.2e} over 20 instances each (tol 1e-4)"),
    )
}

fn c4_kernel_psd() -> Verdict {
    let mut r = rng(4);
    let mut worst = f64::INFINITY;
    for _ in 0..100 {
        let k = r.random_range(1..=64);
        let kind = random_kind(&mut r);
        let d = distance_matrix(&random_fingerprints(&mut r, k, kind)).unwrap();
        let km = kernel_matrix(&d, &random_kernel(&mut r));
        let min_eig = km.clone().symmetric_eigen().eigenvalues.min();
        worst = worst.min(min_eig / km.trace());
    }
    verdict(
        worst >= -1e-8,
        format!("min eigenvalue / trace {worst:.2e} over 100 sets (floor -1e-8)"),
    )
}

fn c5_marginal_likelihood() -> Verdict {
    let d1 = DistanceMatrix::from_values(vec![0], vec![0.0]).unwrap();
    let mut r = rng(5);
    let mut worst: f64 = 0.0;
    for trial in 0..50 {
        let h = random_hypers(&mut r, false);
        let ope = (trial % 5 != 0).then(|| r.random_range(-4.0..4.0));
        let n = r.random_range(usize::from(ope.is_none())..6);
        let mut log = ObservationLog::with_ope(&[ope]).unwrap();
        let (mut x, mut noise) = (Vec::new(), Vec::new());
        if let Some(rho) = ope {
            x.push(rho);
            noise.push(h.ope_noise_var());
        }
        for _ in 0..n {
            let v = r.random_range(-4.0..4.0);
            log.push_return(0, v).unwrap();
            x.push(v);
            noise.push(h.return_noise_var());
        }
        let s = h.kernel.diagonal() * (1.0 + JITTER);
        let oracle = scalar_log_evidence(&x, &noise, h.mean, s);
        let obj = log_marginal_likelihood(&h, &log, &d1).unwrap() - x.len() as f64 * HALF_LN_2PI;
        worst = worst.max((obj - oracle).abs());
    }

    let d2 = DistanceMatrix::from_values(vec![0, 1], vec![0.0, 0.6, 0.6, 0.0]).unwrap();
    let (a, b, m) = (1.2, 2.0, 0.4);
    let h = GPHyperparams::new(m, a, b, KernelParams::new(1.5, 0.5, 0.8).unwrap(), GPPriors::default()).unwrap();
    let mut log = ObservationLog::with_ope(&[Some(0.9), Some(-0.2)]).unwrap();
    for (i, x) in [(0, 1.7), (0, 0.1), (1, -1.0)] {
        log.push_return(i, x).unwrap();
    }
    let cov = kernel_matrix(&d2, &h.kernel) + nalgebra::DMatrix::identity(2, 2) * (JITTER * h.kernel.diagonal());
    let chol = cov.cholesky().unwrap();
    let log_lik = |mu: &[f64]| -> f64 {
        let mut s = 0.0;
        for (i, p) in log.iter().enumerate() {
            if let Some(rho) = p.ope {
                s += -HALF_LN_2PI - 0.5 * a.ln() - 0.5 * (rho - mu[i]).powi(2) / a;
            }
            for x in &p.returns {
                s += -HALF_LN_2PI - 0.5 * b.ln() - 0.5 * (x - mu[i]).powi(2) / b;
            }
        }
        s
    };
    let samples = 1_000_000;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        let z = DVector::from_fn(2, |_, _| StandardNormal.sample(&mut r));
        let mu = chol.l() * z;
        let w = log_lik(&[mu[0] + m, mu[1] + m]).exp();
        sum += w;
        sum_sq += w * w;
    }
    let n = samples as f64;
    let mean = sum / n;
    let se_log = ((sum_sq / n - mean * mean) / n).sqrt() / mean;
    let objective = log_marginal_likelihood(&h, &log, &d2).unwrap() - 5.0 * HALF_LN_2PI;
    let dev = (mean.ln() - objective).abs();
    verdict(
        worst <= 1e-8 && dev < 3.0 * se_log,
        format!(
            "K=1 max |Δ| {worst:.2e} over 50 instances (tol 1e-8); K=2 Monte Carlo |Δ| {dev:.2e} vs 3 SE {:.2e}",
            3.0 * se_log
        ),
    )
}

fn benchmark_config(num_policies: usize) -> ExperimentConfig {
    let mut methods = Method::ablation_grid();
    methods.push(Method::OpeOnly);
    ExperimentConfig {
        name: "acceptance".into(),
        task: TaskSource::Synthetic(SyntheticTaskConfig {
            num_policies,
            ope_noise_sd: 1.0,
            return_noise: ReturnNoise::Gaussian { sd: 2.0 },
            noise_scale: NoiseScale::ValueSd,
            ..Default::default()
        }),
        methods,
        budget: 100,
        repetitions: 100,
        base_seed: 0,
        beta_sqrt: 5.0,
        refit_every: 1,
        adam: ACCEPTANCE_ADAM,
        write_traces: false,
        ..Default::default()
    }
}

fn method(s: &str) -> Method {
    s.parse().unwrap()
}

fn get<'a>(r: &'a ExperimentResult, s: &str) -> &'a MethodResult {
    r.method(method(s)).unwrap_or_else(|| panic!("{s} missing"))
}

/// Mean regret at `step` and its sd-of-mean.
fn at(r: &ExperimentResult, s: &str, step: usize) -> (f64, f64) {
    get(r, s).curve.at(step).unwrap()
}

/// `b − a` and the sd of that difference for independent means.
fn margin(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    (b.0 - a.0, a.1.hypot(b.1))
}

struct Benchmark {
    result: ExperimentResult,
    secs: f64,
}

fn benchmark() -> Benchmark {
    let start = Instant::now();
    let result = run_experiment(&benchmark_config(50), default_workers()).expect("benchmark run");
    Benchmark {
        result,
        secs: start.elapsed().as_secs_f64(),
    }
}

const AOPS: &str = "GP+UCB+OPE";

fn c6_headline_ordering(b: &Benchmark) -> Verdict {
    let r = &b.result;
    let a = at(r, AOPS, 100);
    let (m_ind, s_ind) = margin(a, at(r, "Ind+Uniform+NoOPE", 100));
    let (m_ope, s_ope) = margin(a, at(r, "OPE", 100));
    verdict(
        m_ind > 2.0 * s_ind && m_ope > 2.0 * s_ope && b.secs < 600.0,
        format!(
            "A-OPS {:.4}±{:.4}; Ind+Uniform leads by {m_ind:.4} (need > {:.4}); OPE leads by {m_ope:.4} (need > {:.4}); run {:.0} s (limit 600 s)",
            a.0,
            a.1,
            2.0 * s_ind,
            2.0 * s_ope,
            b.secs
        ),
    )
}

fn c7_ablation_ordering(b: &Benchmark) -> Verdict {
    let r = &b.result;
    let a = at(r, AOPS, 100);
    let (m_uni, s_uni) = margin(a, at(r, "GP+Uniform+OPE", 100));
    let (m_ind, s_ind) = margin(a, at(r, "Ind+UCB+OPE", 100));
    let mut ok = m_uni > s_uni && m_ind > s_ind;
    let mut pairs = Vec::new();
    for base in ["GP+UCB", "GP+Uniform", "Ind+UCB", "Ind+Uniform"] {
        let with = at(r, &format!("{base}+OPE"), 50).0;
        let without = at(r, &format!("{base}+NoOPE"), 50).0;
        ok &= with < without;
        pairs.push(format!("{base} {with:.3}<{without:.3}"));
    }
    verdict(
        ok,
        format!(
            "GP+Uniform+OPE margin {m_uni:.4} (need > {s_uni:.4}); Ind+UCB+OPE margin {m_ind:.4} (need > {s_ind:.4}); step 50 OPE vs NoOPE: {}",
            pairs.join(", ")
        ),
    )
}

fn c8_worst_policy_avoidance(b: &Benchmark) -> Verdict {
    let rate = |s: &str| get(&b.result, s).mean_of(|m| m.bottom10_rate).unwrap();
    let (a, u) = (rate(AOPS), rate("Ind+Uniform+NoOPE"));
    verdict(
        a < 0.5 * u,
        format!(
            "bottom-10% execution rate A-OPS {:.2}% vs Ind+Uniform {:.2}% (need < {:.2}%)",
            100.0 * a,
            100.0 * u,
            50.0 * u
        ),
    )
}

fn c9_scaling() -> Verdict {
    let start = Instant::now();
    let mut cfg = benchmark_config(200);
    cfg.methods = vec![method(AOPS), method("Ind+Uniform+NoOPE")];
    let runs = vary_k_experiment(&cfg, &[25, 200], default_workers(), None).expect("vary-k run");
    let final_regret = |i: usize, s: &str| runs[i].1.method(method(s)).unwrap().curve.at(100).unwrap().0;
    let d_aops = final_regret(1, AOPS) - final_regret(0, AOPS);
    let d_ind = final_regret(1, "Ind+Uniform+NoOPE") - final_regret(0, "Ind+Uniform+NoOPE");
    verdict(
        d_aops < d_ind,
        format!(
            "regret change K=25→200: A-OPS {:.4}→{:.4} ({d_aops:+.4}), Ind+Uniform {:.4}→{:.4} ({d_ind:+.4}); {:.0} s",
            final_regret(0, AOPS),
            final_regret(1, AOPS),
            final_regret(0, "Ind+Uniform+NoOPE"),
            final_regret(1, "Ind+Uniform+NoOPE"),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn c10_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = benchmark_config(20);
    cfg.budget = 20;
    cfg.repetitions = 4;
    cfg.write_traces = true;
    fs::write(dir.path().join("cfg.toml"), toml_text(&cfg)).unwrap();
    let run = |config: &Path, out: &str, workers: &str| {
        let status = Command::new(env!("CARGO_BIN_EXE_aops"))
            .args(["--workers", workers, "run", "--config"])
            .arg(config)
            .arg("--output")
            .arg(dir.path().join(out))
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    };
    run(&dir.path().join("cfg.toml"), "first", "1");
    let manifest = dir.path().join("first/manifest.json");
    run(&manifest, "second", "1");
    run(&manifest, "third", "3");
    let reference = csv_files(&dir.path().join("first"));
    let mut mismatches = Vec::new();
    for other in ["second", "third"] {
        let root = dir.path().join(other);
        if csv_files(&root) != reference {
            mismatches.push(format!("{other}: file set differs"));
            continue;
        }
        for f in &reference {
            if fs::read(dir.path().join("first").join(f)).unwrap() != fs::read(root.join(f)).unwrap() {
                mismatches.push(format!("{other}/{}", f.display()));
            }
        }
    }
    verdict(
        mismatches.is_empty() && !reference.is_empty(),
        if mismatches.is_empty() {
            format!(
                "{} CSV files byte-identical across 3 runs (1 and 3 workers)",
                reference.len()
            )
        } else {
            format!("differing files: {}", mismatches.join(", "))
        },
    )
}

fn toml_text(cfg: &ExperimentConfig) -> String {
    toml::to_string(cfg).expect("config serializes to TOML")
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected = |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));

    type Plain = fn() -> Verdict;
    type Shared = fn(&Benchmark) -> Verdict;
    let plain: [(&str, Plain); 5] = [
        ("c1_posterior_oracle", c1_posterior_oracle),
        ("c2_ind_closed_form", c2_ind_closed_form),
        ("c3_gradients", c3_gradients),
        ("c4_kernel_psd", c4_kernel_psd),
        ("c5_marginal_likelihood", c5_marginal_likelihood),
    ];
    let shared: [(&str, Shared); 3] = [
        ("c6_headline_ordering", c6_headline_ordering),
        ("c7_ablation_ordering", c7_ablation_ordering),
        ("c8_worst_policy_avoidance", c8_worst_policy_avoidance),
    ];
    let tail: [(&str, Plain); 2] = [("c9_scaling", c9_scaling), ("c10_determinism", c10_determinism)];

    let mut failed = 0;
    let mut report = |name: &str, v: Verdict| {
        println!("{} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    };
    for (name, f) in plain {
        if selected(name) {
            report(name, f());
        }
    }
    if shared.iter().any(|(n, _)| selected(n)) {
        let b = benchmark();
        for (name, f) in shared {
            if selected(name) {
                report(name, f(&b));
            }
        }
    }
    for (name, f) in tail {
        if selected(name) {
            report(name, f());
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
