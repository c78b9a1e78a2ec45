//! Policy distances from action fingerprints and the Matérn 1/2 policy kernel.
//!
//! Two policies are compared through the actions they choose on a shared set
//! of probe states. The per-state action distance is Euclidean for continuous
//! actions and the mean coordinate disagreement (Hamming) for integer-coded
//! discrete actions; the policy distance is the average over probe states.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Result};

/// Default size of the probe-state subset.
pub const DEFAULT_PROBE_STATES: usize = 1000;

/// Relative diagonal jitter added to covariance matrices before factorization.
pub const JITTER: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionKind {
    Continuous,
    Discrete,
}

/// Actions of one policy on every probe state, stored row-major
/// (`num_probe_states × action_dim`).
#[derive(Clone, Debug, PartialEq)]
pub struct ActionFingerprint {
    policy_id: i64,
    kind: ActionKind,
    num_probe_states: usize,
    action_dim: usize,
    actions: Vec<f64>,
}

impl ActionFingerprint {
    pub fn new(policy_id: i64, kind: ActionKind, rows: &[Vec<f64>]) -> Result<Self> {
        let action_dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != action_dim) {
            return Err(invalid_input(format!("policy {policy_id}: ragged action rows")));
        }
        let flat = rows.iter().flatten().copied().collect();
        Self::from_flat(policy_id, kind, rows.len(), action_dim, flat)
    }

    pub fn from_flat(
        policy_id: i64,
        kind: ActionKind,
        num_probe_states: usize,
        action_dim: usize,
        actions: Vec<f64>,
    ) -> Result<Self> {
        if num_probe_states == 0 || action_dim == 0 {
            return Err(invalid_input(format!(
                "policy {policy_id}: fingerprint needs at least one state and one action dimension"
            )));
        }
        if actions.len() != num_probe_states * action_dim {
            return Err(invalid_input(format!(
                "policy {policy_id}: expected {} action values, got {}",
                num_probe_states * action_dim,
                actions.len()
            )));
        }
        if let Some(bad) = actions.iter().find(|a| !a.is_finite()) {
            return Err(invalid_input(format!("policy {policy_id}: non-finite action {bad}")));
        }
        if kind == ActionKind::Discrete && actions.iter().any(|a| a.fract() != 0.0) {
            return Err(invalid_input(format!(
                "policy {policy_id}: discrete actions must be integer-coded"
            )));
        }
        Ok(Self {
            policy_id,
            kind,
            num_probe_states,
            action_dim,
            actions,
        })
    }

    pub fn policy_id(&self) -> i64 {
        self.policy_id
    }

    pub fn kind(&self) -> ActionKind {
        self.kind
    }

    pub fn num_probe_states(&self) -> usize {
        self.num_probe_states
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// Action chosen on probe state `s`.
    pub fn action(&self, s: usize) -> &[f64] {
        &self.actions[s * self.action_dim..(s + 1) * self.action_dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.actions.chunks_exact(self.action_dim)
    }

    pub fn with_policy_id(mut self, policy_id: i64) -> Self {
        self.policy_id = policy_id;
        self
    }

    /// Multiply every action by `c` (continuous fingerprints only).
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if self.kind != ActionKind::Continuous {
            return Err(invalid_input("only continuous fingerprints can be scaled"));
        }
        let actions = self.actions.iter().map(|a| a * c).collect();
        Self::from_flat(
            self.policy_id,
            self.kind,
            self.num_probe_states,
            self.action_dim,
            actions,
        )
    }

    fn compatible_with(&self, other: &Self) -> Result<()> {
        if self.kind != other.kind
            || self.num_probe_states != other.num_probe_states
            || self.action_dim != other.action_dim
        {
            return Err(invalid_input(format!(
                "incompatible fingerprints for policies {} ({:?}, {}x{}) and {} ({:?}, {}x{})",
                self.policy_id,
                self.kind,
                self.num_probe_states,
                self.action_dim,
                other.policy_id,
                other.kind,
                other.num_probe_states,
                other.action_dim
            )));
        }
        Ok(())
    }
}

/// Divide every continuous action dimension by its standard deviation over
/// all policies and probe states. Dimensions with zero spread are left as is.
pub fn normalize_action_dims(fingerprints: &mut [ActionFingerprint]) -> Result<()> {
    let Some(first) = fingerprints.first() else {
        return Ok(());
    };
    if first.kind != ActionKind::Continuous {
        return Err(invalid_input("variance normalization needs continuous actions"));
    }
    for f in fingerprints.iter() {
        first.compatible_with(f)?;
    }
    let dim = first.action_dim;
    let mut mean = vec![0.0; dim];
    let mut count = 0.0;
    for f in fingerprints.iter() {
        for row in f.rows() {
            for (m, a) in mean.iter_mut().zip(row) {
                *m += a;
            }
            count += 1.0;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0; dim];
    for f in fingerprints.iter() {
        for row in f.rows() {
            for ((v, m), a) in var.iter_mut().zip(&mean).zip(row) {
                *v += (a - m) * (a - m);
            }
        }
    }
    let scale: Vec<f64> = var
        .iter()
        .map(|v| {
            let sd = (v / count).sqrt();
            if sd > 0.0 {
                1.0 / sd
            } else {
                1.0
            }
        })
        .collect();
    for f in fingerprints.iter_mut() {
        for (i, a) in f.actions.iter_mut().enumerate() {
            *a *= scale[i % dim];
        }
    }
    Ok(())
}

/// Indices of the probe states drawn from an external logged dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeStateSet {
    pub state_indices: Vec<usize>,
}

impl ProbeStateSet {
    pub fn count(&self) -> usize {
        self.state_indices.len()
    }
}

/// Uniformly sample `count` distinct state indices out of `dataset_size`.
pub fn subsample_probe_states<R: Rng + ?Sized>(
    dataset_size: usize,
    count: usize,
    rng: &mut R,
) -> Result<ProbeStateSet> {
    if count == 0 || count > dataset_size {
        return Err(invalid_input(format!(
            "cannot draw {count} probe states from a dataset of {dataset_size}"
        )));
    }
    let state_indices = rand::seq::index::sample(rng, dataset_size, count).into_vec();
    Ok(ProbeStateSet { state_indices })
}

/// Distance between two single-state actions.
pub fn action_distance(a1: &[f64], a2: &[f64], kind: ActionKind) -> Result<f64> {
    if a1.len() != a2.len() {
        return Err(invalid_input(format!(
            "action dimension mismatch: {} vs {}",
            a1.len(),
            a2.len()
        )));
    }
    Ok(action_distance_unchecked(a1, a2, kind))
}

#[inline]
fn action_distance_unchecked(a1: &[f64], a2: &[f64], kind: ActionKind) -> f64 {
    match kind {
        ActionKind::Continuous => a1.iter().zip(a2).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
        ActionKind::Discrete => {
            if a1.is_empty() {
                return 0.0;
            }
            let differing = a1.iter().zip(a2).filter(|(x, y)| x != y).count();
            differing as f64 / a1.len() as f64
        }
    }
}

/// Mean action distance over the probe states.
pub fn policy_distance(f1: &ActionFingerprint, f2: &ActionFingerprint) -> Result<f64> {
    f1.compatible_with(f2)?;
    let total: f64 = f1
        .rows()
        .zip(f2.rows())
        .map(|(a, b)| action_distance_unchecked(a, b, f1.kind))
        .sum();
    Ok(total / f1.num_probe_states as f64)
}

/// Symmetric matrix of pairwise policy distances with a zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    policy_ids: Vec<i64>,
    values: Vec<f64>,
}

impl DistanceMatrix {
    /// Build from a row-major `K × K` buffer, checking the distance invariants.
    pub fn from_values(policy_ids: Vec<i64>, values: Vec<f64>) -> Result<Self> {
        let k = policy_ids.len();
        if k == 0 {
            return Err(invalid_input("distance matrix needs at least one policy"));
        }
        if values.len() != k * k {
            return Err(invalid_input(format!(
                "distance matrix for {k} policies needs {} values, got {}",
                k * k,
                values.len()
            )));
        }
        for i in 0..k {
            if values[i * k + i] != 0.0 {
                return Err(invalid_input(format!("nonzero diagonal at {i}")));
            }
            for j in 0..k {
                let v = values[i * k + j];
                if !v.is_finite() || v < 0.0 {
                    return Err(invalid_input(format!("invalid distance {v} at ({i}, {j})")));
                }
                if (v - values[j * k + i]).abs() > 1e-12 {
                    return Err(invalid_input(format!("asymmetric distance at ({i}, {j})")));
                }
            }
        }
        Ok(Self { policy_ids, values })
    }

    pub fn len(&self) -> usize {
        self.policy_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policy_ids.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.len() + j]
    }

    pub fn policy_ids(&self) -> &[i64] {
        &self.policy_ids
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Restriction to the given policies, in the given order.
    pub fn submatrix(&self, indices: &[usize]) -> Self {
        let values = indices
            .iter()
            .flat_map(|&i| indices.iter().map(move |&j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .collect();
        Self {
            policy_ids: indices.iter().map(|&i| self.policy_ids[i]).collect(),
            values,
        }
    }

    /// Median of the strictly positive off-diagonal distances, if any.
    pub fn median_positive(&self) -> Option<f64> {
        let k = self.len();
        let mut d: Vec<f64> = (0..k)
            .flat_map(|i| (i + 1..k).map(move |j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .filter(|&v| v > 0.0)
            .collect();
        if d.is_empty() {
            return None;
        }
        d.sort_by(f64::total_cmp);
        let n = d.len();
        Some(if n % 2 == 1 {
            d[n / 2]
        } else {
            0.5 * (d[n / 2 - 1] + d[n / 2])
        })
    }

    /// CSV export: a header row of policy ids, then one row per policy.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.policy_ids.iter().map(i64::to_string))?;
        for row in self.values.chunks_exact(self.len()) {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Pairwise distances for a candidate set. Each entry is computed from its
/// own pair of fingerprints, so the result does not depend on evaluation
/// order.
pub fn distance_matrix(fingerprints: &[ActionFingerprint]) -> Result<DistanceMatrix> {
    let first = fingerprints
        .first()
        .ok_or_else(|| invalid_input("distance matrix needs at least one fingerprint"))?;
    for f in fingerprints {
        first.compatible_with(f)?;
    }
    let k = fingerprints.len();
    let mut values = vec![0.0; k * k];
    for i in 0..k {
        for j in i + 1..k {
            let d = policy_distance(&fingerprints[i], &fingerprints[j])?;
            values[i * k + j] = d;
            values[j * k + i] = d;
        }
    }
    Ok(DistanceMatrix {
        policy_ids: fingerprints.iter().map(|f| f.policy_id).collect(),
        values,
    })
}

/// Kernel parameters, held in log space so that every value stays positive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelParamsRepr", into = "KernelParamsRepr")]
pub struct KernelParams {
    log_variance: f64,
    log_constant_variance: f64,
    log_length_scale: f64,
}

#[derive(Serialize, Deserialize)]
struct KernelParamsRepr {
    variance: f64,
    constant_variance: f64,
    length_scale: f64,
}

impl TryFrom<KernelParamsRepr> for KernelParams {
    type Error = crate::Error;

    fn try_from(r: KernelParamsRepr) -> Result<Self> {
        KernelParams::new(r.variance, r.constant_variance, r.length_scale)
    }
}

impl From<KernelParams> for KernelParamsRepr {
    fn from(p: KernelParams) -> Self {
        Self {
            variance: p.variance(),
            constant_variance: p.constant_variance(),
            length_scale: p.length_scale(),
        }
    }
}

impl KernelParams {
    pub fn new(variance: f64, constant_variance: f64, length_scale: f64) -> Result<Self> {
        for (name, v) in [
            ("variance", variance),
            ("constant_variance", constant_variance),
            ("length_scale", length_scale),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid_input(format!("kernel {name} must be positive, got {v}")));
            }
        }
        Ok(Self::from_log(variance.ln(), constant_variance.ln(), length_scale.ln()))
    }

    pub fn from_log(log_variance: f64, log_constant_variance: f64, log_length_scale: f64) -> Self {
        Self {
            log_variance,
            log_constant_variance,
            log_length_scale,
        }
    }

    pub fn variance(&self) -> f64 {
        self.log_variance.exp()
    }

    pub fn constant_variance(&self) -> f64 {
        self.log_constant_variance.exp()
    }

    pub fn length_scale(&self) -> f64 {
        self.log_length_scale.exp()
    }

    pub fn log_variance(&self) -> f64 {
        self.log_variance
    }

    pub fn log_constant_variance(&self) -> f64 {
        self.log_constant_variance
    }

    pub fn log_length_scale(&self) -> f64 {
        self.log_length_scale
    }

    /// Value of the kernel at distance `d`.
    #[inline]
    pub fn eval(&self, d: f64) -> f64 {
        self.variance() * (-d / self.length_scale()).exp() + self.constant_variance()
    }

    /// Prior variance of a single policy value (`σ_k² + σ_c²`).
    pub fn diagonal(&self) -> f64 {
        self.variance() + self.constant_variance()
    }
}

/// `σ_k² exp(−d/l) + σ_c²` applied element-wise to a distance matrix.
pub fn kernel_matrix(d: &DistanceMatrix, p: &KernelParams) -> DMatrix<f64> {
    let k = d.len();
    let (var, c, inv_l) = (p.variance(), p.constant_variance(), 1.0 / p.length_scale());
    DMatrix::from_fn(k, k, |i, j| var * (-d.get(i, j) * inv_l).exp() + c)
}

/// On-disk fingerprint document.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FingerprintFile {
    pub action_kind: ActionKind,
    pub num_probe_states: usize,
    pub action_dim: usize,
    pub policies: Vec<PolicyActions>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolicyActions {
    pub id: i64,
    pub actions: Vec<Vec<f64>>,
}

impl FingerprintFile {
    pub fn from_fingerprints(fingerprints: &[ActionFingerprint]) -> Result<Self> {
        let first = fingerprints
            .first()
            .ok_or_else(|| invalid_input("no fingerprints to export"))?;
        for f in fingerprints {
            first.compatible_with(f)?;
        }
        Ok(Self {
            action_kind: first.kind,
            num_probe_states: first.num_probe_states,
            action_dim: first.action_dim,
            policies: fingerprints
                .iter()
                .map(|f| PolicyActions {
                    id: f.policy_id,
                    actions: f.rows().map(<[f64]>::to_vec).collect(),
                })
                .collect(),
        })
    }

    pub fn into_fingerprints(self) -> Result<Vec<ActionFingerprint>> {
        if self.policies.is_empty() {
            return Err(invalid_input("fingerprint file lists no policies"));
        }
        self.policies
            .into_iter()
            .map(|p| {
                if p.actions.len() != self.num_probe_states {
                    return Err(invalid_input(format!(
                        "policy {}: {} action rows, header says num_probe_states = {}",
                        p.id,
                        p.actions.len(),
                        self.num_probe_states
                    )));
                }
                if let Some(row) = p.actions.iter().find(|r| r.len() != self.action_dim) {
                    return Err(invalid_input(format!(
                        "policy {}: action row of length {}, header says action_dim = {}",
                        p.id,
                        row.len(),
                        self.action_dim
                    )));
                }
                ActionFingerprint::new(p.id, self.action_kind, &p.actions)
            })
            .collect()
    }

    pub fn read<R: Read>(reader: R) -> Result<Self> {
        Ok(serde_json::from_reader(reader)?)
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer(writer, self)?;
        Ok(())
    }
}

/// Load fingerprints from a JSON file, optionally normalizing each action
/// dimension by its variance.
pub fn load_fingerprints(path: &Path, normalize_dims: bool) -> Result<Vec<ActionFingerprint>> {
    let file = std::fs::File::open(path)?;
    let mut fps = FingerprintFile::read(std::io::BufReader::new(file))?.into_fingerprints()?;
    if normalize_dims {
        normalize_action_dims(&mut fps)?;
    }
    Ok(fps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;
    use rand::Rng;

    fn fp(id: i64, kind: ActionKind, rows: &[&[f64]]) -> ActionFingerprint {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        ActionFingerprint::new(id, kind, &rows).unwrap()
    }

    fn random_fps(seed: u64, k: usize, kind: ActionKind) -> Vec<ActionFingerprint> {
        let mut r = rng::stream(seed, &[]);
        let (n, a) = (r.random_range(1..12), r.random_range(1..4));
        (0..k)
            .map(|id| {
                let data = (0..n * a)
                    .map(|_| match kind {
                        ActionKind::Continuous => r.random_range(-2.0..2.0),
                        ActionKind::Discrete => r.random_range(0..3) as f64,
                    })
                    .collect();
                ActionFingerprint::from_flat(id as i64, kind, n, a, data).unwrap()
            })
            .collect()
    }

    #[test]
    fn action_distance_examples() {
        let c = ActionKind::Continuous;
        assert_eq!(action_distance(&[0.0, 0.0], &[3.0, 4.0], c).unwrap(), 5.0);
        assert_eq!(action_distance(&[1.5, -2.0], &[1.5, -2.0], c).unwrap(), 0.0);
        let d = ActionKind::Discrete;
        assert_eq!(action_distance(&[2.0], &[7.0], d).unwrap(), 1.0);
        assert_eq!(action_distance(&[2.0], &[2.0], d).unwrap(), 0.0);
        assert_eq!(action_distance(&[1.0, 2.0], &[1.0, 3.0], d).unwrap(), 0.5);
        assert!(matches!(
            action_distance(&[1.0], &[1.0, 2.0], c),
            Err(crate::Error::InvalidInput(_))
        ));
    }

    #[test]
    fn policy_distance_examples() {
        let c = ActionKind::Continuous;
        let a = fp(0, c, &[&[0.0, 0.0], &[1.0, 1.0]]);
        let b = fp(1, c, &[&[3.0, 4.0], &[1.0, 2.0]]);
        assert_eq!(policy_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(policy_distance(&a, &b).unwrap(), 3.0);

        let d = ActionKind::Discrete;
        let x = fp(0, d, &[&[1.0], &[2.0]]);
        let y = fp(1, d, &[&[1.0], &[3.0]]);
        assert_eq!(policy_distance(&x, &y).unwrap(), 0.5);
    }

    #[test]
    fn incompatible_fingerprints_are_rejected() {
        let a = fp(0, ActionKind::Continuous, &[&[0.0]]);
        let b = fp(1, ActionKind::Continuous, &[&[0.0], &[1.0]]);
        let c = fp(2, ActionKind::Discrete, &[&[0.0]]);
        assert!(policy_distance(&a, &b).is_err());
        assert!(policy_distance(&a, &c).is_err());
        assert!(distance_matrix(&[a, c]).is_err());
        assert!(distance_matrix(&[]).is_err());
    }

    #[test]
    fn fingerprint_validation() {
        assert!(ActionFingerprint::from_flat(0, ActionKind::Continuous, 1, 1, vec![f64::NAN]).is_err());
        assert!(ActionFingerprint::from_flat(0, ActionKind::Discrete, 1, 1, vec![0.5]).is_err());
        assert!(ActionFingerprint::from_flat(0, ActionKind::Continuous, 2, 1, vec![0.5]).is_err());
    }

    #[test]
    fn single_policy_gives_zero_matrix() {
        let d = distance_matrix(&[fp(9, ActionKind::Continuous, &[&[1.0]])]).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.get(0, 0), 0.0);
        assert_eq!(d.policy_ids(), &[9]);
    }

    #[test]
    fn distance_matrix_matches_pairwise_loop() {
        for kind in [ActionKind::Continuous, ActionKind::Discrete] {
            let fps = random_fps(11, 3, kind);
            let d = distance_matrix(&fps).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    let mut total = 0.0;
                    for s in 0..fps[i].num_probe_states() {
                        total += action_distance(fps[i].action(s), fps[j].action(s), kind).unwrap();
                    }
                    let expect = total / fps[i].num_probe_states() as f64;
                    assert!((d.get(i, j) - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn kernel_matrix_examples() {
        let p = KernelParams::new(2.0, 0.5, 1.5).unwrap();
        let d = DistanceMatrix::from_values(vec![0, 1], vec![0.0, 1.5, 1.5, 0.0]).unwrap();
        let k = kernel_matrix(&d, &p);
        assert!((k[(0, 0)] - 2.5).abs() < 1e-15);
        assert!((k[(0, 1)] - (2.0 * (-1.0f64).exp() + 0.5)).abs() < 1e-15);
        assert_eq!(k[(0, 1)], k[(1, 0)]);
    }

    #[test]
    fn kernel_matrix_is_psd_on_random_fingerprints() {
        let p = KernelParams::new(1.3, 0.7, 0.4).unwrap();
        for seed in 0..20 {
            let kind = if seed % 2 == 0 {
                ActionKind::Continuous
            } else {
                ActionKind::Discrete
            };
            let fps = random_fps(seed, 8, kind);
            let km = kernel_matrix(&distance_matrix(&fps).unwrap(), &p);
            let trace = km.trace();
            let min_eig = SymmetricEigen::new(km).eigenvalues.min();
            assert!(min_eig >= -1e-8 * trace, "seed {seed}: {min_eig}");
        }
    }

    #[test]
    fn probe_state_sampling() {
        let mut r = rng::stream(1, &[]);
        let mut s = subsample_probe_states(5, 5, &mut r).unwrap().state_indices;
        s.sort_unstable();
        assert_eq!(s, vec![0, 1, 2, 3, 4]);

        let a = subsample_probe_states(5000, DEFAULT_PROBE_STATES, &mut rng::stream(4, &[])).unwrap();
        let b = subsample_probe_states(5000, DEFAULT_PROBE_STATES, &mut rng::stream(4, &[])).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.count(), 1000);
        let mut sorted = a.state_indices.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 1000);

        assert!(subsample_probe_states(3, 4, &mut r).is_err());
        assert!(subsample_probe_states(3, 0, &mut r).is_err());
    }

    #[test]
    fn median_of_positive_distances() {
        let d = DistanceMatrix::from_values(vec![0, 1, 2], vec![0.0, 1.0, 0.0, 1.0, 0.0, 3.0, 0.0, 3.0, 0.0]).unwrap();
        assert_eq!(d.median_positive(), Some(2.0));
        let z = DistanceMatrix::from_values(vec![0, 1], vec![0.0; 4]).unwrap();
        assert_eq!(z.median_positive(), None);
    }

    #[test]
    fn distance_matrix_csv_has_id_header() {
        let d = DistanceMatrix::from_values(vec![4, 7], vec![0.0, 0.25, 0.25, 0.0]).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "4,7\n0,0.25\n0.25,0\n");
    }

    #[test]
    fn fingerprint_file_round_trip_and_errors() {
        let fps = random_fps(3, 4, ActionKind::Discrete);
        let file = FingerprintFile::from_fingerprints(&fps).unwrap();
        let mut buf = Vec::new();
        file.write(&mut buf).unwrap();
        let back = FingerprintFile::read(buf.as_slice())
            .unwrap()
            .into_fingerprints()
            .unwrap();
        assert_eq!(back, fps);

        let bad = r#"{"action_kind":"continuous","num_probe_states":2,"action_dim":1,
                      "policies":[{"id":0,"actions":[[1.0]]}]}"#;
        let err = FingerprintFile::read(bad.as_bytes())
            .unwrap()
            .into_fingerprints()
            .unwrap_err();
        assert!(err.to_string().contains("num_probe_states"));
    }

    #[test]
    fn variance_normalization_gives_unit_spread() {
        let mut fps = random_fps(5, 6, ActionKind::Continuous);
        normalize_action_dims(&mut fps).unwrap();
        let dim = fps[0].action_dim();
        for c in 0..dim {
            let vals: Vec<f64> = fps.iter().flat_map(|f| f.rows().map(move |r| r[c])).collect();
            let n = vals.len() as f64;
            let m = vals.iter().sum::<f64>() / n;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn policy_distance_is_a_pseudometric(seed in any::<u64>(), discrete in any::<bool>()) {
            let kind = if discrete { ActionKind::Discrete } else { ActionKind::Continuous };
            let fps = random_fps(seed, 3, kind);
            let d = |i: usize, j: usize| policy_distance(&fps[i], &fps[j]).unwrap();
            prop_assert!(d(0, 1) >= 0.0);
            prop_assert_eq!(d(0, 1), d(1, 0));
            prop_assert!(d(0, 2) <= d(0, 1) + d(1, 2) + 1e-12);
        }

        #[test]
        fn continuous_distance_scales_with_actions(seed in any::<u64>(), c in -5.0f64..5.0) {
            let fps = random_fps(seed, 2, ActionKind::Continuous);
            let base = policy_distance(&fps[0], &fps[1]).unwrap();
            let scaled = policy_distance(&fps[0].scaled(c).unwrap(), &fps[1].scaled(c).unwrap()).unwrap();
            prop_assert!((scaled - c.abs() * base).abs() <= 1e-12 * (1.0 + base * c.abs()));
        }
    }
}
