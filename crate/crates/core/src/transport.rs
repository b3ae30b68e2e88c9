//! Learning dynamics as random transport maps.
//!
//! A trajectory is one realization `theta_K = Psi_K(theta_0; omega)` together
//! with the Jacobian of the map with respect to `theta_0`. For quadratic
//! tasks every step is affine in `theta`, so the per-step Jacobians are exact
//! and do not depend on the noise draw.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{realization_streams, NoiseStream};
use crate::spectral::{ensure_finite_vector, Matrix, SubspaceBasis, Vector};
use crate::tasks::QuadraticTask;
use crate::thermo::GaussianState;

/// Parameter norm beyond which a run is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepKind {
    GradientDescent,
    /// Additive gradient noise with standard deviation `noise_scale`.
    NoisyGradient,
    /// Euler-Maruyama Langevin step at temperature `noise_scale`.
    Langevin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRule {
    pub kind: StepKind,
    pub step_size: f64,
    #[serde(default)]
    pub noise_scale: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

impl StepRule {
    pub fn gradient_descent(step_size: f64) -> Self {
        StepRule {
            kind: StepKind::GradientDescent,
            step_size,
            noise_scale: 0.0,
            weight_decay: 0.0,
        }
    }

    pub fn noisy_gradient(step_size: f64, noise_scale: f64) -> Self {
        StepRule {
            kind: StepKind::NoisyGradient,
            step_size,
            noise_scale,
            weight_decay: 0.0,
        }
    }

    pub fn langevin(step_size: f64, temperature: f64) -> Self {
        StepRule {
            kind: StepKind::Langevin,
            step_size,
            noise_scale: temperature,
            weight_decay: 0.0,
        }
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "step_size must be finite and > 0, got {}",
                self.step_size
            )));
        }
        if !(self.noise_scale >= 0.0) || !self.noise_scale.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise_scale must be finite and >= 0, got {}",
                self.noise_scale
            )));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "weight_decay must be finite and >= 0, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }

    /// Temperature of a Langevin rule; zero for the other kinds.
    pub fn temperature(&self) -> f64 {
        match self.kind {
            StepKind::Langevin => self.noise_scale,
            _ => 0.0,
        }
    }

    /// Multiplier applied to the standard-normal draw.
    pub fn noise_gain(&self) -> f64 {
        match self.kind {
            StepKind::GradientDescent => 0.0,
            StepKind::NoisyGradient => self.step_size * self.noise_scale,
            StepKind::Langevin => (2.0 * self.noise_scale * self.step_size).sqrt(),
        }
    }

    /// `H + weight_decay * I`.
    pub fn drift_hessian(&self, task: &QuadraticTask) -> Matrix {
        let d = task.dim();
        task.hessian() + Matrix::identity(d, d) * self.weight_decay
    }

    /// `eta * lambda_max(H + weight_decay I)`; the step is stable below 2.
    pub fn stability_number(&self, task: &QuadraticTask) -> f64 {
        self.step_size * (task.lambda_max() + self.weight_decay)
    }

    /// The step Jacobian `I - eta (H + wd I)`.
    pub fn step_jacobian(&self, task: &QuadraticTask) -> Matrix {
        let d = task.dim();
        Matrix::identity(d, d) - self.drift_hessian(task) * self.step_size
    }
}

/// One update. `noise_draw` is a standard-normal vector; it is ignored by
/// gradient descent.
pub fn step(
    theta: &Vector,
    task: &QuadraticTask,
    rule: &StepRule,
    noise_draw: &Vector,
) -> Result<(Vector, Matrix)> {
    step_within(theta, task, rule, noise_draw, None)
}

/// Update restricted to a subspace: drift and noise are both projected by
/// `P = Q Q^T`, and the Jacobian is `I - eta P (H + wd I)`.
pub fn step_within(
    theta: &Vector,
    task: &QuadraticTask,
    rule: &StepRule,
    noise_draw: &Vector,
    projector: Option<&Matrix>,
) -> Result<(Vector, Matrix)> {
    let d = task.dim();
    for (len, context) in [(theta.len(), "step theta"), (noise_draw.len(), "step noise")] {
        if len != d {
            return Err(Error::DimensionMismatch {
                context,
                expected: d,
                actual: len,
            });
        }
    }
    let eta = rule.step_size;
    let mut drift = task.gradient(theta)? + theta * rule.weight_decay;
    let mut jacobian_drift = rule.drift_hessian(task);
    let gain = rule.noise_gain();
    let mut kick = if gain > 0.0 {
        noise_draw * gain
    } else {
        Vector::zeros(d)
    };
    if let Some(p) = projector {
        drift = p * drift;
        jacobian_drift = p * jacobian_drift;
        kick = p * kick;
    }
    let next = theta - drift * eta + kick;
    ensure_finite_vector(&next, "step update")?;
    let jacobian = Matrix::identity(d, d) - jacobian_drift * eta;
    Ok((next, jacobian))
}

/// Provenance of a contiguous block of steps in a [`Trajectory`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub task_label: String,
    pub rule: StepRule,
    pub noise: NoiseStream,
    /// Index of the first step inside the noise stream.
    pub first_step: u64,
    pub n_steps: usize,
    /// Whether updates were confined to a subspace.
    pub constrained: bool,
}

/// A realized transport map with its Jacobian.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    states: Vec<Vector>,
    step_jacobians: Vec<Matrix>,
    cumulative_jacobian: Matrix,
    phases: Vec<Phase>,
}

impl Trajectory {
    /// Zero-step trajectory at `theta`: the identity map.
    pub fn empty(theta: Vector) -> Self {
        let d = theta.len();
        Trajectory {
            states: vec![theta],
            step_jacobians: Vec::new(),
            cumulative_jacobian: Matrix::identity(d, d),
            phases: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn n_steps(&self) -> usize {
        self.step_jacobians.len()
    }

    pub fn initial(&self) -> &Vector {
        &self.states[0]
    }

    pub fn final_state(&self) -> &Vector {
        self.states.last().expect("trajectory has at least one state")
    }

    /// `theta_0, ..., theta_K`.
    pub fn states(&self) -> &[Vector] {
        &self.states
    }

    pub fn step_jacobians(&self) -> &[Matrix] {
        &self.step_jacobians
    }

    /// `J_K = S_{K-1} ... S_1 S_0`.
    pub fn cumulative_jacobian(&self) -> &Matrix {
        &self.cumulative_jacobian
    }

    pub fn phases(&self) -> &[Phase] {
        &self.phases
    }

    /// Seed of the first phase's noise stream, if any step was taken.
    pub fn omega_seed(&self) -> Option<u64> {
        self.phases.first().map(|p| p.noise.seed)
    }

    /// Cumulative Jacobians after `0, 1, ..., K` steps.
    pub fn prefix_jacobians(&self) -> Vec<Matrix> {
        let d = self.dim();
        let mut out = Vec::with_capacity(self.n_steps() + 1);
        let mut acc = Matrix::identity(d, d);
        out.push(acc.clone());
        for s in &self.step_jacobians {
            acc = s * acc;
            out.push(acc.clone());
        }
        out
    }

    /// Recomputes the ordered product of the stored step Jacobians.
    pub fn replayed_cumulative(&self) -> Matrix {
        let d = self.dim();
        self.step_jacobians
            .iter()
            .fold(Matrix::identity(d, d), |acc, s| s * acc)
    }
}

/// Runs `n_steps` of `rule` on `task` from `theta0`, with noise taken from
/// `noise` starting at step 0.
pub fn propagate(
    theta0: &Vector,
    task: &QuadraticTask,
    rule: &StepRule,
    n_steps: usize,
    noise: NoiseStream,
) -> Result<Trajectory> {
    propagate_from(theta0, task, rule, n_steps, noise, 0)
}

/// As [`propagate`], but consuming the noise stream from `first_step`, so a
/// run can be resumed exactly where an earlier one stopped.
pub fn propagate_from(
    theta0: &Vector,
    task: &QuadraticTask,
    rule: &StepRule,
    n_steps: usize,
    noise: NoiseStream,
    first_step: u64,
) -> Result<Trajectory> {
    propagate_until(theta0, task, rule, n_steps, noise, first_step, None, |_| false)
}

/// General driver: at most `max_steps` updates, optionally confined to
/// `subspace`, stopping early as soon as `stop(theta)` holds (checked before
/// every step, including the first).
#[allow(clippy::too_many_arguments)]
pub fn propagate_until(
    theta0: &Vector,
    task: &QuadraticTask,
    rule: &StepRule,
    max_steps: usize,
    noise: NoiseStream,
    first_step: u64,
    subspace: Option<&SubspaceBasis>,
    mut stop: impl FnMut(&Vector) -> bool,
) -> Result<Trajectory> {
    rule.validate()?;
    if theta0.len() != task.dim() {
        return Err(Error::DimensionMismatch {
            context: "propagate theta0",
            expected: task.dim(),
            actual: theta0.len(),
        });
    }
    ensure_finite_vector(theta0, "propagate theta0")?;
    let projector = match subspace {
        Some(q) if q.ambient_dim() != task.dim() => {
            return Err(Error::DimensionMismatch {
                context: "propagate subspace",
                expected: task.dim(),
                actual: q.ambient_dim(),
            })
        }
        Some(q) => Some(q.projector()),
        None => None,
    };
    let d = task.dim();
    let mut traj = Trajectory::empty(theta0.clone());
    let zero = Vector::zeros(d);
    for k in 0..max_steps {
        let theta = traj.final_state();
        if stop(theta) {
            break;
        }
        let step_index = first_step + k as u64;
        let draw = match rule.kind {
            StepKind::GradientDescent => zero.clone(),
            _ => noise.normal(step_index, d),
        };
        let (next, jac) = step_within(theta, task, rule, &draw, projector.as_ref())?;
        let norm = next.norm();
        if norm > DIVERGENCE_NORM {
            return Err(Error::Divergence { step: k + 1, norm });
        }
        traj.cumulative_jacobian = &jac * &traj.cumulative_jacobian;
        traj.step_jacobians.push(jac);
        traj.states.push(next);
    }
    if traj.n_steps() > 0 {
        traj.phases.push(Phase {
            task_label: task.label().to_string(),
            rule: *rule,
            noise,
            first_step,
            n_steps: traj.n_steps(),
            constrained: subspace.is_some(),
        });
    }
    Ok(traj)
}

/// Endpoint tolerance for [`compose`], relative to `max(1, |theta|)`.
pub const COMPOSE_TOL: f64 = 1e-12;

/// `second` after `first`: `J = J_second * J_first`.
pub fn compose(first: &Trajectory, second: &Trajectory) -> Result<Trajectory> {
    if first.dim() != second.dim() {
        return Err(Error::DimensionMismatch {
            context: "compose",
            expected: first.dim(),
            actual: second.dim(),
        });
    }
    let end = first.final_state();
    let gap = (second.initial() - end).norm();
    if gap > COMPOSE_TOL * end.norm().max(1.0) {
        return Err(Error::EndpointMismatch(gap));
    }
    let mut states = first.states.clone();
    states.extend(second.states.iter().skip(1).cloned());
    let mut step_jacobians = first.step_jacobians.clone();
    step_jacobians.extend(second.step_jacobians.iter().cloned());
    let mut phases = first.phases.clone();
    phases.extend(second.phases.iter().cloned());
    Ok(Trajectory {
        states,
        step_jacobians,
        cumulative_jacobian: &second.cumulative_jacobian * &first.cumulative_jacobian,
        phases,
    })
}

/// Independent realizations with `theta_0 ~ initial`. Realization `i` draws
/// its initial condition and its noise from separate streams of
/// `master_seed`, so the output does not depend on scheduling.
pub fn ensemble_propagate(
    initial: &GaussianState,
    task: &QuadraticTask,
    rule: &StepRule,
    n_steps: usize,
    n_realizations: usize,
    master_seed: u64,
) -> Result<Vec<Trajectory>> {
    if n_realizations == 0 {
        return Err(Error::Empty("ensemble_propagate needs at least one realization"));
    }
    if initial.dim() != task.dim() {
        return Err(Error::DimensionMismatch {
            context: "ensemble initial state",
            expected: task.dim(),
            actual: initial.dim(),
        });
    }
    let factor = initial.cholesky_factor();
    (0..n_realizations)
        .into_par_iter()
        .map(|i| {
            let (init_stream, omega) = realization_streams(master_seed, i as u64);
            let z = init_stream.normal(0, task.dim());
            let theta0 = initial.mean() + &factor * z;
            propagate(&theta0, task, rule, n_steps, omega)
        })
        .collect()
}

/// Per-trajectory JSON summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub omega_seed: Option<u64>,
    pub phases: Vec<Phase>,
    pub n_steps: usize,
    pub final_singular_values: Vec<f64>,
}

impl Trajectory {
    pub fn summary(&self) -> TrajectorySummary {
        TrajectorySummary {
            omega_seed: self.omega_seed(),
            phases: self.phases.clone(),
            n_steps: self.n_steps(),
            final_singular_values: crate::spectral::singular_values(&self.cumulative_jacobian),
        }
    }

}
