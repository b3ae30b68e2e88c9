//! Reconfiguration-capacity diagnostics.
//!
//! Ranks are ensemble averages over realizations of the cumulative Jacobian.
//! A single collapsed realization (log-volume `-inf`) makes the average
//! `-inf` and the rank 0.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{
    log_volume_from_singular_values, singular_values, stable_rank, Matrix, SpectralDecomposition,
    SubspaceBasis, SymmetricSpectrum, Vector, RANK_RTOL,
};
use crate::tasks::{restricted_hessian, QuadraticTask};
use crate::transport::Trajectory;

pub const DEFAULT_TAU_SIGMA: f64 = 1e-3;
pub const DEFAULT_EPS_A: f64 = 1e-6;
pub const DEFAULT_EPS_B: f64 = 1e-4;
/// Slack allowed in the forgetting lower bound.
pub const FORGETTING_BOUND_TOL: f64 = 1e-10;
/// `m_B` must exceed the usable count by more than this to predict
/// incompatibility; absorbs round-off in integer-valued stable ranks.
pub const PREDICATE_TOL: f64 = 1e-9;

fn cumulative_jacobians(trajectories: &[Trajectory]) -> Result<Vec<&Matrix>> {
    let first = trajectories
        .first()
        .ok_or(Error::Empty("at least one trajectory is required"))?;
    let d = first.dim();
    trajectories
        .iter()
        .map(|t| {
            if t.dim() != d {
                Err(Error::DimensionMismatch {
                    context: "ensemble trajectories",
                    expected: d,
                    actual: t.dim(),
                })
            } else {
                Ok(t.cumulative_jacobian())
            }
        })
        .collect()
}

/// Mean of extended reals; `-inf` absorbs.
fn absorbing_mean(values: &[f64]) -> f64 {
    if values.iter().any(|v| *v == f64::NEG_INFINITY) {
        return f64::NEG_INFINITY;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// `exp(mean / dim)`, which is 0 for a `-inf` mean.
fn rank_from_mean(mean_log_volume: f64, dim: usize) -> f64 {
    (mean_log_volume / dim as f64).exp()
}

/// Per-realization `log det(J^T J)`.
pub fn log_volumes(jacobians: &[&Matrix]) -> Result<Vec<f64>> {
    if jacobians.is_empty() {
        return Err(Error::Empty("at least one Jacobian is required"));
    }
    let d = jacobians[0].nrows();
    for j in jacobians {
        if j.nrows() != d || j.ncols() != d {
            return Err(Error::DimensionMismatch {
                context: "ensemble Jacobians",
                expected: d,
                actual: j.ncols(),
            });
        }
    }
    Ok(jacobians
        .par_iter()
        .map(|j| log_volume_from_singular_values(&singular_values(j)))
        .collect())
}

pub fn effective_rank_of(jacobians: &[&Matrix]) -> Result<f64> {
    let volumes = log_volumes(jacobians)?;
    Ok(rank_from_mean(absorbing_mean(&volumes), jacobians[0].nrows()))
}

/// `R = exp((1/d) E log det(J^T J))` over the ensemble.
pub fn effective_rank(trajectories: &[Trajectory]) -> Result<f64> {
    effective_rank_of(&cumulative_jacobians(trajectories)?)
}

/// The compatible rank together with what it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct CompatibleRank {
    pub value: f64,
    pub usable_direction_count: usize,
    /// Realization-averaged singular values of `J Q_A`, descending.
    pub singular_profile: Vec<f64>,
    /// Per-realization `log det(Q_A^T J^T J Q_A)`.
    pub log_volumes: Vec<f64>,
    /// Usable count before rounding.
    pub mean_usable: f64,
}

/// Half-down rounding: 2.5 -> 2, 2.51 -> 3.
pub fn round_half_down(x: f64) -> usize {
    (x - 0.5).ceil().max(0.0) as usize
}

pub fn compatible_effective_rank_of(
    jacobians: &[&Matrix],
    q_a: &SubspaceBasis,
    tau_sigma: f64,
) -> Result<CompatibleRank> {
    let k = q_a.dim();
    if k == 0 {
        return Err(Error::InvalidArgument("compatible subspace must have k_A >= 1".into()));
    }
    if !(tau_sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("tau_sigma must be >= 0, got {tau_sigma}")));
    }
    if jacobians.is_empty() {
        return Err(Error::Empty("at least one Jacobian is required"));
    }
    for j in jacobians {
        if j.ncols() != q_a.ambient_dim() {
            return Err(Error::DimensionMismatch {
                context: "compatible rank Jacobian",
                expected: q_a.ambient_dim(),
                actual: j.ncols(),
            });
        }
    }
    let profiles: Vec<Vec<f64>> = jacobians
        .par_iter()
        .map(|j| singular_values(&(*j * q_a.basis())))
        .collect();
    let volumes: Vec<f64> = profiles
        .iter()
        .map(|s| log_volume_from_singular_values(s))
        .collect();
    let n = profiles.len() as f64;
    let mean_usable = profiles
        .iter()
        .map(|s| s.iter().filter(|&&v| v > tau_sigma).count() as f64)
        .sum::<f64>()
        / n;
    let singular_profile = (0..k)
        .map(|i| profiles.iter().map(|s| s[i]).sum::<f64>() / n)
        .collect();
    Ok(CompatibleRank {
        value: rank_from_mean(absorbing_mean(&volumes), k),
        usable_direction_count: round_half_down(mean_usable).min(k),
        singular_profile,
        log_volumes: volumes,
        mean_usable,
    })
}

/// `R_A = exp((1/k_A) E log det(Q_A^T J^T J Q_A))` and the usable count.
pub fn compatible_effective_rank(
    trajectories: &[Trajectory],
    q_a: &SubspaceBasis,
    tau_sigma: f64,
) -> Result<CompatibleRank> {
    compatible_effective_rank_of(&cumulative_jacobians(trajectories)?, q_a, tau_sigma)
}

/// Directions of the image of `J Q_A` that survive the threshold: left
/// singular vectors of `J Q_A` with singular value above `tau_sigma`.
pub fn usable_subspace(j: &Matrix, q_a: &SubspaceBasis, tau_sigma: f64) -> Result<SubspaceBasis> {
    if j.ncols() != q_a.ambient_dim() {
        return Err(Error::DimensionMismatch {
            context: "usable_subspace",
            expected: q_a.ambient_dim(),
            actual: j.ncols(),
        });
    }
    if q_a.dim() == 0 {
        return Ok(SubspaceBasis::trivial(j.nrows()));
    }
    let svd = SpectralDecomposition::new(&(j * q_a.basis()));
    let keep = svd.singular_values.iter().filter(|&&s| s > tau_sigma).count();
    SubspaceBasis::new(svd.left_basis.columns(0, keep).into_owned())
}

/// `m_B`: stable rank of task B's curvature restricted to `Q_A`.
pub fn reconfiguration_dimension(task_b: &QuadraticTask, q_a: &SubspaceBasis) -> Result<f64> {
    stable_rank(&restricted_hessian(task_b, q_a)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seeds: Vec<u64>,
    pub step_counts: Vec<usize>,
    pub n_realizations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityReport {
    #[serde(with = "extended")]
    pub effective_rank: f64,
    #[serde(with = "extended")]
    pub compatible_effective_rank: f64,
    pub usable_direction_count: usize,
    pub mean_usable_count: f64,
    pub singular_profile: Vec<f64>,
    pub m_b: f64,
    pub k_a: usize,
    /// `m_B > usable_direction_count`.
    pub predicted_incompatible: bool,
    /// `m_B > R_A`, the volume-based comparison.
    pub raw_predicate_incompatible: bool,
    pub tau_sigma: f64,
    #[serde(with = "extended_vec")]
    pub log_volumes: Vec<f64>,
    #[serde(with = "extended_vec")]
    pub compatible_log_volumes: Vec<f64>,
    pub provenance: Provenance,
}

pub fn predict_incompatibility(
    trajectories: &[Trajectory],
    q_a: &SubspaceBasis,
    task_b: &QuadraticTask,
    tau_sigma: f64,
) -> Result<CapacityReport> {
    let jacobians = cumulative_jacobians(trajectories)?;
    let volumes = log_volumes(&jacobians)?;
    let compatible = compatible_effective_rank_of(&jacobians, q_a, tau_sigma)?;
    let m_b = reconfiguration_dimension(task_b, q_a)?;
    Ok(CapacityReport {
        effective_rank: rank_from_mean(absorbing_mean(&volumes), jacobians[0].nrows()),
        compatible_effective_rank: compatible.value,
        usable_direction_count: compatible.usable_direction_count,
        mean_usable_count: compatible.mean_usable,
        singular_profile: compatible.singular_profile,
        m_b,
        k_a: q_a.dim(),
        predicted_incompatible: m_b > compatible.usable_direction_count as f64 + PREDICATE_TOL,
        raw_predicate_incompatible: m_b > compatible.value,
        tau_sigma,
        log_volumes: volumes,
        compatible_log_volumes: compatible.log_volumes,
        provenance: Provenance {
            seeds: trajectories.iter().filter_map(Trajectory::omega_seed).collect(),
            step_counts: trajectories.iter().map(Trajectory::n_steps).collect(),
            n_realizations: trajectories.len(),
        },
    })
}

impl CapacityReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::InvalidArgument(format!("capacity report: {e}")))
    }
}

/// Extended reals in JSON: finite values as numbers, infinities and NaN as
/// the strings `"inf"`, `"-inf"`, `"nan"`.
mod extended {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    pub(super) enum Repr {
        Number(f64),
        Tag(String),
    }

    pub(super) fn to_repr(v: f64) -> Repr {
        if v.is_finite() {
            Repr::Number(v)
        } else if v.is_nan() {
            Repr::Tag("nan".into())
        } else if v > 0.0 {
            Repr::Tag("inf".into())
        } else {
            Repr::Tag("-inf".into())
        }
    }

    pub(super) fn from_repr<E: serde::de::Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Number(v) => Ok(v),
            Repr::Tag(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(E::custom(format!("not an extended real: {other:?}"))),
            },
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        to_repr(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        from_repr(Repr::deserialize(d)?)
    }
}

mod extended_vec {
    use super::extended::{from_repr, to_repr, Repr};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|x| to_repr(*x)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<Repr>::deserialize(d)?.into_iter().map(from_repr).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Forgetting {
    /// `Phi_A(final) - Phi_A(initial)`.
    pub forgetting: f64,
    pub exited_manifold: bool,
    /// `forgetting - (mu/2) delta^2`; nonnegative for quadratics.
    pub bound_check: f64,
    /// Distance of the final point from the task-A optimal set.
    pub distance: f64,
    /// Smallest nonzero eigenvalue of `H_A` (0 if `H_A = 0`).
    pub mu: f64,
}

/// Smallest eigenvalue of `H` above the rank cutoff, or 0 for `H = 0`.
pub fn smallest_positive_curvature(h: &Matrix) -> Result<f64> {
    let spectrum = SymmetricSpectrum::new(h)?;
    let top = spectrum.max();
    if top <= 0.0 {
        return Ok(0.0);
    }
    let cutoff = RANK_RTOL * top;
    Ok(spectrum.values.iter().copied().filter(|&l| l > cutoff).fold(top, f64::min))
}

/// Forgetting incurred moving from `initial` (a task-A optimum) to `last`.
pub fn forgetting_between(
    initial: &Vector,
    last: &Vector,
    task_a: &QuadraticTask,
    eps_a: f64,
) -> Result<Forgetting> {
    if initial.len() != task_a.dim() || last.len() != task_a.dim() {
        return Err(Error::DimensionMismatch {
            context: "measure_forgetting",
            expected: task_a.dim(),
            actual: if initial.len() != task_a.dim() { initial.len() } else { last.len() },
        });
    }
    let start = task_a.value(initial)?;
    if start > eps_a {
        return Err(Error::InvalidArgument(format!(
            "trajectory must start at a task-A optimum; loss {start:e} exceeds eps_A {eps_a:e}"
        )));
    }
    let h = task_a.hessian();
    let spectrum = SymmetricSpectrum::new(h)?;
    let cutoff = RANK_RTOL * spectrum.max().max(0.0);
    let offset = last - task_a.minimizer();
    // Distance to theta* + null(H_A): the component in the range of H_A.
    let mut distance2 = 0.0;
    let mut mu = f64::INFINITY;
    for (i, &l) in spectrum.values.iter().enumerate() {
        if l > cutoff {
            distance2 += spectrum.vectors.column(i).dot(&offset).powi(2);
            mu = mu.min(l);
        }
    }
    if !mu.is_finite() {
        mu = 0.0;
    }
    let forgetting = task_a.value(last)? - start;
    Ok(Forgetting {
        forgetting,
        exited_manifold: forgetting > eps_a,
        bound_check: forgetting - 0.5 * mu * distance2,
        distance: distance2.sqrt(),
        mu,
    })
}

pub fn measure_forgetting(trajectory_on_b: &Trajectory, task_a: &QuadraticTask, eps_a: f64) -> Result<Forgetting> {
    forgetting_between(trajectory_on_b.initial(), trajectory_on_b.final_state(), task_a, eps_a)
}

/// `(tr C)^2 / |C|_F^2` for the sample covariance `C` (divisor `n - 1`);
/// 0 when every sample is identical.
pub fn participation_ratio(samples: &[Vector]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "participation_ratio needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let d = samples[0].len();
    if let Some(bad) = samples.iter().find(|s| s.len() != d) {
        return Err(Error::DimensionMismatch {
            context: "participation_ratio samples",
            expected: d,
            actual: bad.len(),
        });
    }
    let n = samples.len() as f64;
    let mean = samples.iter().fold(Vector::zeros(d), |acc, s| acc + s) / n;
    let mut centered = Matrix::zeros(d, samples.len());
    for (c, s) in samples.iter().enumerate() {
        centered.set_column(c, &(s - &mean));
    }
    let cov = &centered * centered.transpose() / (n - 1.0);
    let frob2 = cov.norm_squared();
    if frob2 == 0.0 {
        return Ok(0.0);
    }
    Ok(cov.trace().powi(2) / frob2)
}

/// Ranks starting at 1, ties sharing their average rank.
fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with tie-averaged ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "spearman",
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument("spearman needs at least 2 points".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spearman input"));
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InvalidArgument("spearman of a constant series is undefined".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}
