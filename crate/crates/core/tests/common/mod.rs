#![allow(dead_code)]

use aops_core::gp::{GPHyperparams, GPPriors, IGPrior};
use aops_core::kernel::{distance_matrix, ActionFingerprint, ActionKind, DistanceMatrix, KernelParams};
use aops_core::observations::ObservationLog;
use aops_core::rng;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Random fingerprint set of `k` policies.
pub fn random_fingerprints<R: Rng>(r: &mut R, k: usize, kind: ActionKind) -> Vec<ActionFingerprint> {
    let n = r.random_range(2..10);
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

pub fn random_distances<R: Rng>(r: &mut R, k: usize) -> DistanceMatrix {
    let kind = if r.random_bool(0.5) {
        ActionKind::Continuous
    } else {
        ActionKind::Discrete
    };
    distance_matrix(&random_fingerprints(r, k, kind)).unwrap()
}

/// Random log with a mix of OPE-only, return-only, both, and empty policies;
/// at least one policy is observed.
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
        if !log.observed_indices().is_empty() {
            return log;
        }
    }
}

pub fn random_hypers<R: Rng>(r: &mut R, with_priors: bool) -> GPHyperparams {
    let kernel = KernelParams::new(
        r.random_range(0.3..3.0),
        r.random_range(0.1..2.0),
        r.random_range(0.2..2.0),
    )
    .unwrap();
    let priors = if with_priors {
        let p = Some(IGPrior::new(r.random_range(0.5..3.0), r.random_range(0.5..5.0)).unwrap());
        GPPriors {
            ope_noise_var: p,
            return_noise_var: p,
            kernel_variance: p,
            constant_variance: p,
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

/// Condition `[μ; obs]` on the raw observation vector (every OPE value and
/// every return as its own coordinate) with a dense LU inverse.
pub fn joint_conditioning_oracle(
    cov: &DMatrix<f64>,
    log: &ObservationLog,
    m: f64,
    ope_var: f64,
    ret_var: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let k = cov.nrows();
    let mut owner = Vec::new();
    let mut noise = Vec::new();
    let mut value = Vec::new();
    for (i, p) in log.iter().enumerate() {
        if let Some(rho) = p.ope {
            owner.push(i);
            noise.push(ope_var);
            value.push(rho);
        }
        for &x in &p.returns {
            owner.push(i);
            noise.push(ret_var);
            value.push(x);
        }
    }
    let n = owner.len();
    let s = DMatrix::from_fn(n, n, |a, b| {
        cov[(owner[a], owner[b])] + if a == b { noise[a] } else { 0.0 }
    });
    let c = DMatrix::from_fn(k, n, |i, b| cov[(i, owner[b])]);
    let s_inv = s.lu().try_inverse().expect("observation covariance is invertible");
    let resid = DVector::from_iterator(n, value.iter().map(|v| v - m));
    let mean = (&c * &s_inv * resid).add_scalar(m);
    let covariance = cov - &c * &s_inv * c.transpose();
    (mean, covariance)
}

/// Central finite-difference gradient of `f` at `x`.
pub fn central_diff<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
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

pub fn seeded(seed: u64) -> rng::StreamRng {
    rng::stream(seed, &[0xC0FFEE])
}
