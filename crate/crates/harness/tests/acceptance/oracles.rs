use aops_core::gp::{GPHyperparams, GPPriors, IGPrior};
use aops_core::kernel::{distance_matrix, ActionFingerprint, ActionKind, DistanceMatrix, KernelParams};
use aops_core::observations::ObservationLog;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

pub fn random_fingerprints<R: Rng>(r: &mut R, k: usize, kind: ActionKind) -> Vec<ActionFingerprint> {
    let n = r.random_range(2..12);
    let a = if kind == ActionKind::Discrete {
        1
    } else {
        r.random_range(1..4)
    };
    (0..k)
        .map(|id| {
            let data = (0..n * a)
                .map(|_| match kind {
                    ActionKind::Continuous => r.random_range(-1.0..1.0),
                    ActionKind::Discrete => r.random_range(0..4) as f64,
                })
                .collect();
            ActionFingerprint::from_flat(id as i64, kind, n, a, data).unwrap()
        })
        .collect()
}

pub fn random_kind<R: Rng>(r: &mut R) -> ActionKind {
    if r.random_bool(0.5) {
        ActionKind::Continuous
    } else {
        ActionKind::Discrete
    }
}

pub fn random_distances<R: Rng>(r: &mut R, k: usize) -> DistanceMatrix {
    let kind = random_kind(r);
    distance_matrix(&random_fingerprints(r, k, kind)).unwrap()
}

/// Mixed OPE and return observations with at least one observed policy.
pub fn random_log<R: Rng>(r: &mut R, k: usize) -> ObservationLog {
    loop {
        let mut log = ObservationLog::new(k);
        for i in 0..k {
            if r.random_bool(0.7) {
                log.set_ope(i, r.random_range(-3.0..3.0)).unwrap();
            }
            for _ in 0..r.random_range(0..4) {
                log.push_return(i, r.random_range(-4.0..4.0)).unwrap();
            }
        }
        if log.iter().any(|p| p.ope.is_some() || !p.returns.is_empty()) {
            return log;
        }
    }
}

pub fn random_kernel<R: Rng>(r: &mut R) -> KernelParams {
    KernelParams::new(
        r.random_range(0.3..3.0),
        r.random_range(0.1..2.0),
        r.random_range(0.2..2.0),
    )
    .unwrap()
}

pub fn random_prior<R: Rng>(r: &mut R) -> IGPrior {
    IGPrior::new(r.random_range(0.5..3.0), r.random_range(0.5..5.0)).unwrap()
}

pub fn random_hypers<R: Rng>(r: &mut R, with_priors: bool) -> GPHyperparams {
    let kernel = random_kernel(r);
    let priors = if with_priors {
        GPPriors {
            ope_noise_var: Some(random_prior(r)),
            return_noise_var: Some(random_prior(r)),
            kernel_variance: Some(random_prior(r)),
            constant_variance: Some(random_prior(r)),
        }
    } else {
        GPPriors::default()
    };
    GPHyperparams::new(
        r.random_range(-1.0..1.0),
        r.random_range(0.2..3.0),
        r.random_range(0.2..3.0),
        kernel,
        priors,
    )
    .unwrap()
}

/// Every OPE value and return as its own coordinate: (owning policy, noise variance, value).
fn raw_observations(log: &ObservationLog, ope_var: f64, ret_var: f64) -> Vec<(usize, f64, f64)> {
    let mut out = Vec::new();
    for (i, p) in log.iter().enumerate() {
        if let Some(rho) = p.ope {
            out.push((i, ope_var, rho));
        }
        for &x in &p.returns {
            out.push((i, ret_var, x));
        }
    }
    out
}

/// Condition the prior on the raw observation vector with a dense LU inverse.
pub fn joint_conditioning(
    cov: &DMatrix<f64>,
    log: &ObservationLog,
    m: f64,
    ope_var: f64,
    ret_var: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let obs = raw_observations(log, ope_var, ret_var);
    let (k, n) = (cov.nrows(), obs.len());
    let s = DMatrix::from_fn(n, n, |a, b| {
        cov[(obs[a].0, obs[b].0)] + if a == b { obs[a].1 } else { 0.0 }
    });
    let c = DMatrix::from_fn(k, n, |i, b| cov[(i, obs[b].0)]);
    let s_inv = s.lu().try_inverse().expect("observation covariance is invertible");
    let resid = DVector::from_iterator(n, obs.iter().map(|o| o.2 - m));
    let mean = (&c * &s_inv * resid).add_scalar(m);
    let covariance = cov - &c * &s_inv * c.transpose();
    (mean, covariance)
}

/// Posterior of one value from a flat prior: the OPE score (or the first
/// return) starts the belief, then one precision-weighted update per return.
pub fn sequential_conjugate(ope: Option<f64>, returns: &[f64], a: f64, b: f64) -> (f64, f64) {
    let (mut m, mut v, rest) = match ope {
        Some(rho) => (rho, a, returns),
        None => (returns[0], b, &returns[1..]),
    };
    for &x in rest {
        let nv = 1.0 / (1.0 / v + 1.0 / b);
        m = nv * (m / v + x / b);
        v = nv;
    }
    (m, v)
}

/// Log-density of observations `x_i ~ N(μ, n_i)` with `μ ~ N(m, s)`, by the
/// matrix determinant lemma and Sherman–Morrison on `diag(n) + s·11ᵀ`.
pub fn scalar_log_evidence(x: &[f64], noise: &[f64], m: f64, s: f64) -> f64 {
    let p: f64 = noise.iter().map(|n| 1.0 / n).sum();
    let logdet = noise.iter().map(|n| n.ln()).sum::<f64>() + (1.0 + s * p).ln();
    let quad_diag: f64 = x.iter().zip(noise).map(|(xi, n)| (xi - m).powi(2) / n).sum();
    let t: f64 = x.iter().zip(noise).map(|(xi, n)| (xi - m) / n).sum();
    let quad = quad_diag - s * t * t / (1.0 + s * p);
    -0.5 * logdet - 0.5 * quad - x.len() as f64 * HALF_LN_2PI
}

pub fn central_diff<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
            xp[i] += h;
            xm[i] -= h;
            (f(&xp) - f(&xm)) / (2.0 * h)
        })
        .collect()
}

/// `|a − b| / max(|a|, |b|, 1)`
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}
