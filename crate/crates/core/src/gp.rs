//! Gaussian-process model over the values of a finite set of candidate
//! policies.
//!
//! Every policy value `μ_k` is jointly Gaussian with mean `m` and covariance
//! given by the policy kernel. A policy may carry one OPE estimate
//! `ρ_k ~ N(μ_k, σ_ρ²)` and any number of episodic returns
//! `r ~ N(μ_k, σ_r²)`. Both kinds of observation collapse into a single
//! effective observation `y_k` with noise variance `Λ_kk`, after which the
//! posterior is ordinary Gaussian conditioning.
//!
//! Hyperparameters are fitted by maximizing the log marginal likelihood plus
//! inverse-gamma log priors on the variances, in log space, with Adam.
//! Constants that do not depend on any hyperparameter (the `2π` factors) are
//! dropped from the objective: it equals `log p(data) + ½·n_obs·log 2π` where
//! `n_obs` counts every OPE value and return.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::adam::{self, AdamConfig};
use crate::error::{invalid_input, invalid_state, Error, Result};
use crate::kernel::{kernel_matrix, DistanceMatrix, KernelParams, JITTER};
use crate::linalg;
use crate::observations::{ObservationLog, ObservationSummary};

/// Inverse-gamma prior `IG(α, β)` on a variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IGPrior {
    pub alpha: f64,
    pub beta: f64,
}

impl IGPrior {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(invalid_input(format!(
                "inverse-gamma prior needs positive alpha and beta, got ({alpha}, {beta})"
            )));
        }
        Ok(Self { alpha, beta })
    }

    /// `α log β − lnΓ(α) − (α+1) log x − β/x`
    pub fn log_density(&self, x: f64) -> f64 {
        self.alpha * self.beta.ln() - libm::lgamma(self.alpha) - (self.alpha + 1.0) * x.ln() - self.beta / x
    }

    /// Derivative of [`Self::log_density`] with respect to `log x`.
    pub fn d_log_density(&self, x: f64) -> f64 {
        -(self.alpha + 1.0) + self.beta / x
    }
}

/// Optional priors on each GP variance parameter. `m` and `l` always have
/// flat priors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GPPriors {
    pub ope_noise_var: Option<IGPrior>,
    pub return_noise_var: Option<IGPrior>,
    pub kernel_variance: Option<IGPrior>,
    pub constant_variance: Option<IGPrior>,
}

impl GPPriors {
    /// `IG(1, 200)` on every variance.
    pub fn weakly_informative() -> Self {
        let p = Some(IGPrior {
            alpha: 1.0,
            beta: 200.0,
        });
        Self {
            ope_noise_var: p,
            return_noise_var: p,
            kernel_variance: p,
            constant_variance: p,
        }
    }
}

/// Number of fitted GP hyperparameters.
pub const NUM_GP_PARAMS: usize = 6;

/// Order of [`GPHyperparams::to_vector`].
pub const GP_PARAM_NAMES: [&str; NUM_GP_PARAMS] = [
    "mean",
    "log_ope_noise_var",
    "log_return_noise_var",
    "log_kernel_variance",
    "log_constant_variance",
    "log_length_scale",
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GPHyperparamsRepr", into = "GPHyperparamsRepr")]
pub struct GPHyperparams {
    pub mean: f64,
    log_ope_noise_var: f64,
    log_return_noise_var: f64,
    pub kernel: KernelParams,
    pub priors: GPPriors,
}

#[derive(Serialize, Deserialize)]
struct GPHyperparamsRepr {
    mean: f64,
    ope_noise_var: f64,
    return_noise_var: f64,
    kernel: KernelParams,
    #[serde(default)]
    priors: GPPriors,
}

impl TryFrom<GPHyperparamsRepr> for GPHyperparams {
    type Error = Error;

    fn try_from(r: GPHyperparamsRepr) -> Result<Self> {
        GPHyperparams::new(r.mean, r.ope_noise_var, r.return_noise_var, r.kernel, r.priors)
    }
}

impl From<GPHyperparams> for GPHyperparamsRepr {
    fn from(h: GPHyperparams) -> Self {
        Self {
            mean: h.mean,
            ope_noise_var: h.ope_noise_var(),
            return_noise_var: h.return_noise_var(),
            kernel: h.kernel,
            priors: h.priors,
        }
    }
}

impl GPHyperparams {
    pub fn new(
        mean: f64,
        ope_noise_var: f64,
        return_noise_var: f64,
        kernel: KernelParams,
        priors: GPPriors,
    ) -> Result<Self> {
        if !mean.is_finite() {
            return Err(invalid_input("GP mean must be finite"));
        }
        for (name, v) in [("ope_noise_var", ope_noise_var), ("return_noise_var", return_noise_var)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid_input(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(Self {
            mean,
            log_ope_noise_var: ope_noise_var.ln(),
            log_return_noise_var: return_noise_var.ln(),
            kernel,
            priors,
        })
    }

    pub fn ope_noise_var(&self) -> f64 {
        self.log_ope_noise_var.exp()
    }

    pub fn return_noise_var(&self) -> f64 {
        self.log_return_noise_var.exp()
    }

    /// Unconstrained parameter vector, ordered as [`GP_PARAM_NAMES`].
    pub fn to_vector(&self) -> [f64; NUM_GP_PARAMS] {
        [
            self.mean,
            self.log_ope_noise_var,
            self.log_return_noise_var,
            self.kernel.log_variance(),
            self.kernel.log_constant_variance(),
            self.kernel.log_length_scale(),
        ]
    }

    /// Same priors, parameters taken from an unconstrained vector.
    pub fn with_vector(&self, v: &[f64]) -> Self {
        Self {
            mean: v[0],
            log_ope_noise_var: v[1],
            log_return_noise_var: v[2],
            kernel: KernelParams::from_log(v[3], v[4], v[5]),
            priors: self.priors,
        }
    }

    /// Prior covariance of the policy values, with diagonal jitter.
    pub fn prior_covariance(&self, d: &DistanceMatrix) -> DMatrix<f64> {
        prior_covariance(d, &self.kernel)
    }

    /// Posterior over all policy values given the observation log.
    pub fn posterior(&self, log: &ObservationLog, d: &DistanceMatrix) -> Result<Posterior> {
        check_dims(log, d)?;
        let eff = aggregate_observations(log, self)?;
        posterior(&self.prior_covariance(d), &eff, self.mean)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Initial hyperparameters: `m = 0`, both noise variances 1000, kernel
/// variance 1, constant variance 10, length scale equal to the median
/// positive distance (1 when every distance is zero).
pub fn default_gp_hyperparams(d: &DistanceMatrix, use_priors: bool) -> GPHyperparams {
    let length_scale = d.median_positive().unwrap_or(1.0);
    let priors = if use_priors {
        GPPriors::weakly_informative()
    } else {
        GPPriors::default()
    };
    GPHyperparams {
        mean: 0.0,
        log_ope_noise_var: 1000f64.ln(),
        log_return_noise_var: 1000f64.ln(),
        kernel: KernelParams::from_log(0.0, 10f64.ln(), length_scale.ln()),
        priors,
    }
}

/// Kernel matrix plus `JITTER·(σ_k² + σ_c²)` on the diagonal.
pub fn prior_covariance(d: &DistanceMatrix, kernel: &KernelParams) -> DMatrix<f64> {
    let mut cov = kernel_matrix(d, kernel);
    let jitter = JITTER * kernel.diagonal();
    for i in 0..cov.nrows() {
        cov[(i, i)] += jitter;
    }
    cov
}

fn check_dims(log: &ObservationLog, d: &DistanceMatrix) -> Result<()> {
    if log.len() != d.len() {
        return Err(invalid_input(format!(
            "observation log has {} policies, distance matrix has {}",
            log.len(),
            d.len()
        )));
    }
    Ok(())
}

/// Precision-weighted summary of each policy's observations.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveObservations {
    pub y: Vec<f64>,
    pub lambda: Vec<f64>,
    pub observed: Vec<bool>,
}

impl EffectiveObservations {
    pub fn observed_indices(&self) -> Vec<usize> {
        (0..self.observed.len()).filter(|&k| self.observed[k]).collect()
    }
}

/// Effective observation of one policy: `(y, Λ)`, or `None` if unobserved.
#[inline]
fn effective(s: &ObservationSummary, ope_var: f64, ret_var: f64) -> Option<(f64, f64)> {
    let (ope_prec, ope_term) = match s.ope {
        Some(rho) => (1.0 / ope_var, rho / ope_var),
        None => (0.0, 0.0),
    };
    let precision = ope_prec + s.count / ret_var;
    if precision == 0.0 {
        return None;
    }
    let lambda = 1.0 / precision;
    Some(((ope_term + s.sum() / ret_var) * lambda, lambda))
}

/// Collapse OPE estimates and returns into `(y_k, Λ_kk)`. Policies without
/// observations are masked out.
pub fn aggregate_observations(log: &ObservationLog, h: &GPHyperparams) -> Result<EffectiveObservations> {
    let k = log.len();
    let (ope_var, ret_var) = (h.ope_noise_var(), h.return_noise_var());
    let mut eff = EffectiveObservations {
        y: vec![0.0; k],
        lambda: vec![0.0; k],
        observed: vec![false; k],
    };
    for (i, p) in log.iter().enumerate() {
        if let Some((y, lambda)) = effective(&p.summary(), ope_var, ret_var) {
            eff.y[i] = y;
            eff.lambda[i] = lambda;
            eff.observed[i] = true;
        }
    }
    if !eff.observed.iter().any(|&o| o) {
        return Err(invalid_state("no policy has any observation"));
    }
    Ok(eff)
}

/// Gaussian posterior over the policy values.
#[derive(Clone, Debug, PartialEq)]
pub struct Posterior {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl Posterior {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn variance(&self, k: usize) -> f64 {
        self.covariance[(k, k)]
    }
}

/// Condition the prior `N(m·1, cov)` on the effective observations of the
/// observed policies:
///
/// `mean = m + K[:,O] (K[O,O] + Λ_O)⁻¹ (y_O − m)`,
/// `Σ = K − K[:,O] (K[O,O] + Λ_O)⁻¹ K[O,:]`.
pub fn posterior(cov: &DMatrix<f64>, eff: &EffectiveObservations, m: f64) -> Result<Posterior> {
    let k = cov.nrows();
    if cov.ncols() != k || eff.y.len() != k || eff.lambda.len() != k || eff.observed.len() != k {
        return Err(invalid_input("posterior: covariance and observations disagree in size"));
    }
    let obs = eff.observed_indices();
    let n = obs.len();
    if n == 0 {
        return Ok(Posterior {
            mean: DVector::from_element(k, m),
            covariance: cov.clone(),
        });
    }
    let mut a = cov.select_rows(&obs).select_columns(&obs);
    for (t, &i) in obs.iter().enumerate() {
        a[(t, t)] += eff.lambda[i];
    }
    let chol = linalg::cholesky_with_jitter(a)?;
    let resid = DVector::from_iterator(n, obs.iter().map(|&i| eff.y[i] - m));
    let weights = chol.solve(&resid);
    // K[O,:] as an n × K block; the posterior uses its transpose.
    let cross = cov.select_rows(&obs);
    let mean = cross.tr_mul(&weights).add_scalar(m);
    let mut v = cross;
    chol.l().solve_lower_triangular_mut(&mut v);
    let mut covariance = cov - v.tr_mul(&v);
    // Enforce exact symmetry.
    for i in 0..k {
        for j in i + 1..k {
            let s = 0.5 * (covariance[(i, j)] + covariance[(j, i)]);
            covariance[(i, j)] = s;
            covariance[(j, i)] = s;
        }
    }
    Ok(Posterior { mean, covariance })
}

/// Precomputed data for repeated evaluation of the GP objective.
pub(crate) struct GpObjective {
    obs: Vec<ObservationSummary>,
    dist: Vec<f64>,
    priors: GPPriors,
    ws: Workspace,
}

/// Buffers reused across evaluations.
struct Workspace {
    y: Vec<f64>,
    lambda: Vec<f64>,
    alpha: Vec<f64>,
    e: Vec<f64>,
    factor: Vec<f64>,
    w: Vec<f64>,
    inv: Vec<f64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self {
            y: vec![0.0; n],
            lambda: vec![0.0; n],
            alpha: vec![0.0; n],
            e: vec![0.0; n * n],
            factor: vec![0.0; n * n],
            w: vec![0.0; n * n],
            inv: vec![0.0; n * n],
        }
    }
}

impl GpObjective {
    pub fn new(log: &ObservationLog, d: &DistanceMatrix, priors: GPPriors) -> Result<Self> {
        check_dims(log, d)?;
        let idx = log.observed_indices();
        if idx.is_empty() {
            return Err(invalid_state("no policy has any observation"));
        }
        let sub = d.submatrix(&idx);
        Ok(Self {
            obs: idx.iter().map(|&k| log.policy(k).summary()).collect(),
            dist: sub.as_slice().to_vec(),
            priors,
            ws: Workspace::new(idx.len()),
        })
    }

    /// Objective value and, if requested, its gradient in the unconstrained
    /// parameterization. Returns `NaN` if the covariance cannot be factorized.
    pub fn eval(&mut self, theta: &[f64], grad: Option<&mut [f64; NUM_GP_PARAMS]>) -> f64 {
        let n = self.obs.len();
        let m = theta[0];
        let (ope_var, ret_var) = (theta[1].exp(), theta[2].exp());
        let (kvar, cvar, ell) = (theta[3].exp(), theta[4].exp(), theta[5].exp());
        let Workspace {
            y,
            lambda,
            alpha,
            e,
            factor,
            w,
            inv,
        } = &mut self.ws;

        let mut value = 0.0;
        for (t, s) in self.obs.iter().enumerate() {
            let (yt, lt) = effective(s, ope_var, ret_var).expect("observed policy");
            y[t] = yt;
            lambda[t] = lt;
            let c = if s.ope.is_some() { 1.0 } else { 0.0 };
            let ope_dev = s.ope.map_or(0.0, |rho| (rho - yt) * (rho - yt));
            value += -0.5 * (c * theta[1] + s.count * theta[2] - lt.ln())
                - 0.5 * (ope_dev / ope_var + s.returns_sq_dev(yt) / ret_var);
        }

        // A = σ_k²(E + εI) + σ_c²(11ᵀ + εI) + Λ with E = exp(−D/l); upper
        // triangles only.
        let inv_ell = 1.0 / ell;
        for i in 0..n {
            let row = i * n;
            for j in i..n {
                let ev = (-self.dist[row + j] * inv_ell).exp();
                e[row + j] = ev;
                factor[row + j] = kvar * ev + cvar;
            }
            factor[row + i] += JITTER * (kvar + cvar) + lambda[i];
        }
        if !linalg::cholesky_upper_in_place(factor, n) {
            return f64::NAN;
        }
        for (a, v) in alpha.iter_mut().zip(y.iter()) {
            *a = v - m;
        }
        linalg::upper_solve(factor, n, alpha);
        let quad: f64 = y.iter().zip(alpha.iter()).map(|(v, a)| (v - m) * a).sum();
        let half_logdet: f64 = (0..n).map(|i| factor[i * n + i].ln()).sum();
        value += -0.5 * quad - half_logdet;

        let priors = [
            (self.priors.ope_noise_var, ope_var),
            (self.priors.return_noise_var, ret_var),
            (self.priors.kernel_variance, kvar),
            (self.priors.constant_variance, cvar),
        ];
        for (p, x) in priors {
            if let Some(p) = p {
                value += p.log_density(x);
            }
        }

        let Some(g) = grad else {
            return value;
        };

        linalg::inverse_from_upper(factor, n, w, inv);

        // ∂/∂A of the Gaussian term is W = ½(ααᵀ − A⁻¹); sums over the
        // symmetric matrices use the upper triangle twice.
        let (mut g_kvar, mut g_cvar, mut g_ell) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let row = i * n;
            let (mut se, mut sed, mut s1) = (0.0, 0.0, 0.0);
            for j in i + 1..n {
                let wv = alpha[i] * alpha[j] - inv[row + j];
                let ev = e[row + j];
                se += wv * ev;
                sed += wv * ev * self.dist[row + j];
                s1 += wv;
            }
            let wii = alpha[i] * alpha[i] - inv[row + i];
            g_kvar += 2.0 * se + wii * (e[row + i] + JITTER);
            g_cvar += 2.0 * s1 + wii * (1.0 + JITTER);
            g_ell += 2.0 * sed + wii * e[row + i] * self.dist[row + i];
        }
        g[0] = alpha.iter().sum();
        g[3] = 0.5 * kvar * g_kvar;
        g[4] = 0.5 * cvar * g_cvar;
        g[5] = 0.5 * kvar * g_ell * inv_ell;

        // Noise variances enter through y, Λ and the per-policy terms.
        let (mut g_ope, mut g_ret) = (0.0, 0.0);
        for (t, s) in self.obs.iter().enumerate() {
            let (yt, lt) = (y[t], lambda[t]);
            let w_diag = 0.5 * (alpha[t] * alpha[t] - inv[t * n + t]);
            if let Some(rho) = s.ope {
                let d_lambda = lt * lt / ope_var;
                let d_y = lt / ope_var * (yt - rho);
                g_ope += w_diag * d_lambda - alpha[t] * d_y + 0.5 / ope_var * ((rho - yt) * (rho - yt) + lt - ope_var);
            }
            if s.count > 0.0 {
                let d_lambda = lt * lt * s.count / ret_var;
                let d_y = lt * s.count / ret_var * (yt - s.mean);
                g_ret += w_diag * d_lambda - alpha[t] * d_y
                    + 0.5 / ret_var * (s.returns_sq_dev(yt) + s.count * (lt - ret_var));
            }
        }
        g[1] = g_ope;
        g[2] = g_ret;
        let slots = [1, 2, 3, 4];
        for ((p, x), slot) in priors.into_iter().zip(slots) {
            if let Some(p) = p {
                g[slot] += p.d_log_density(x);
            }
        }
        value
    }
}

/// Penalized log marginal likelihood of the hyperparameters (2π constants
/// dropped; see the module docs).
pub fn log_marginal_likelihood(h: &GPHyperparams, log: &ObservationLog, d: &DistanceMatrix) -> Result<f64> {
    let mut obj = GpObjective::new(log, d, h.priors)?;
    let v = obj.eval(&h.to_vector(), None);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numerical("log marginal likelihood is not finite".into()))
    }
}

/// Gradient of [`log_marginal_likelihood`] with respect to
/// `(m, log σ_ρ², log σ_r², log σ_k², log σ_c², log l)`.
pub fn llh_gradient(h: &GPHyperparams, log: &ObservationLog, d: &DistanceMatrix) -> Result<[f64; NUM_GP_PARAMS]> {
    let mut obj = GpObjective::new(log, d, h.priors)?;
    let mut g = [0.0; NUM_GP_PARAMS];
    let v = obj.eval(&h.to_vector(), Some(&mut g));
    if v.is_finite() {
        Ok(g)
    } else {
        Err(Error::Numerical("log marginal likelihood is not finite".into()))
    }
}

/// MAP hyperparameters by Adam ascent from `h0`; returns the best iterate.
pub fn fit_map(
    h0: &GPHyperparams,
    log: &ObservationLog,
    d: &DistanceMatrix,
    cfg: &AdamConfig,
) -> Result<GPHyperparams> {
    let mut obj = GpObjective::new(log, d, h0.priors)?;
    let best = adam::maximize(&h0.to_vector(), cfg, |theta| {
        let mut g = [0.0; NUM_GP_PARAMS];
        let v = obj.eval(theta, Some(&mut g));
        (v, g.to_vec())
    })?;
    Ok(h0.with_vector(&best.params))
}

/// Draw policy values `μ ~ N(m·1, K)` from the prior.
pub fn sample_values<R: Rng + ?Sized>(
    d: &DistanceMatrix,
    kernel: &KernelParams,
    mean: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let chol = linalg::cholesky_with_jitter(prior_covariance(d, kernel))?;
    let z = DVector::from_iterator(d.len(), (0..d.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let mu = chol.l() * z;
    Ok(mu.iter().map(|v| v + mean).collect())
}
