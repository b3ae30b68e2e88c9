//! Closed-form thermodynamics of Gaussian parameter ensembles.
//!
//! Units: entropy production per step is `eta * E|v|^2 / T`, with `v` the
//! current velocity of the Fokker-Planck flow evaluated at the pre-step
//! state. A run of physical duration `tau` is rescaled to unit time for the
//! speed-limit check, where its dissipation budget becomes
//! `D = tau * T * Sigma / 2` and the bound reads `W2^2 / 2 <= D`.

use std::cmp::Ordering;

use nalgebra::Cholesky;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{ensure_finite_vector, symmetrize, Matrix, SymmetricSpectrum, Vector};
use crate::tasks::QuadraticTask;
use crate::transport::{StepKind, StepRule};

/// Covariances must satisfy `lambda_min >= PD_RTOL * lambda_max`.
pub const PD_RTOL: f64 = 1e-12;
/// Eigenvalue floor applied to degenerate (zero-temperature) covariances.
pub const COVARIANCE_FLOOR: f64 = 1e-12;
/// Variance assigned to null directions of `H` in Gibbs-like states.
pub const DEFAULT_NULL_VARIANCE: f64 = 1e2;

const LOG_2PI_E: f64 = 2.837_877_066_409_345_5; // ln(2 pi e)

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    mean: Vector,
    covariance: Matrix,
    clamped: usize,
}

impl GaussianState {
    pub fn new(mean: Vector, covariance: Matrix) -> Result<Self> {
        Self::build(mean, covariance, false)
    }

    /// Like [`GaussianState::new`] but flooring covariance eigenvalues at
    /// [`COVARIANCE_FLOOR`] instead of rejecting; the number of floored
    /// eigenvalues is kept in [`GaussianState::clamped`].
    pub fn with_floor(mean: Vector, covariance: Matrix) -> Result<Self> {
        Self::build(mean, covariance, true)
    }

    fn build(mean: Vector, covariance: Matrix, clamp: bool) -> Result<Self> {
        if covariance.nrows() != mean.len() {
            return Err(Error::DimensionMismatch {
                context: "GaussianState covariance",
                expected: mean.len(),
                actual: covariance.nrows(),
            });
        }
        ensure_finite_vector(&mean, "GaussianState mean")?;
        let covariance = symmetrize(&covariance)?;
        let spectrum = SymmetricSpectrum::new(&covariance)?;
        let (lo, hi) = (spectrum.min(), spectrum.max());
        if lo > 0.0 && lo >= PD_RTOL * hi {
            return Ok(GaussianState {
                mean,
                covariance,
                clamped: 0,
            });
        }
        if !clamp {
            return Err(Error::NotPositiveDefinite(if hi > 0.0 { lo / hi } else { lo }));
        }
        let floor = COVARIANCE_FLOOR.max(PD_RTOL * hi);
        let clamped = spectrum.values.iter().filter(|&&v| v < floor).count();
        let covariance = spectrum.map(|v| v.max(floor));
        Ok(GaussianState {
            mean,
            covariance: symmetrize(&covariance)?,
            clamped,
        })
    }

    pub fn isotropic(mean: Vector, variance: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(mean, Matrix::identity(d, d) * variance)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &Vector {
        &self.mean
    }

    pub fn covariance(&self) -> &Matrix {
        &self.covariance
    }

    /// Number of covariance eigenvalues raised to the floor at construction.
    pub fn clamped(&self) -> usize {
        self.clamped
    }

    /// Lower Cholesky factor `L` with `L L^T = Sigma`.
    pub fn cholesky_factor(&self) -> Matrix {
        match Cholesky::new(self.covariance.clone()) {
            Some(c) => c.l(),
            // Positive definite by construction; fall back to the symmetric
            // square root if Cholesky loses the last digits.
            None => self.spectrum().map(|v| v.max(0.0).sqrt()),
        }
    }

    fn spectrum(&self) -> SymmetricSpectrum {
        SymmetricSpectrum::new(&self.covariance).expect("covariance is symmetric")
    }

    pub fn log_det(&self) -> f64 {
        self.spectrum().values.iter().map(|v| v.ln()).sum()
    }

    pub fn precision(&self) -> Matrix {
        self.spectrum().map(|v| 1.0 / v)
    }

    fn canonical_cmp(&self, other: &Self) -> Ordering {
        self.mean
            .iter()
            .chain(self.covariance.iter())
            .zip(other.mean.iter().chain(other.covariance.iter()))
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    }
}

/// Stationary Gibbs density `~ exp(-Phi/T)` on the positive eigenspace of
/// `H`; null directions get variance `null_variance`.
pub fn gibbs_state(task: &QuadraticTask, temperature: f64, null_variance: f64) -> Result<GaussianState> {
    check_temperature(temperature)?;
    let spectrum = SymmetricSpectrum::new(task.hessian())?;
    let cutoff = crate::spectral::RANK_RTOL * spectrum.max().max(0.0);
    let cov = spectrum.map(|l| if l > cutoff { temperature / l } else { null_variance });
    GaussianState::new(task.minimizer().clone(), cov)
}

fn check_temperature(temperature: f64) -> Result<()> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "temperature must be finite and > 0, got {temperature}"
        )));
    }
    Ok(())
}

fn check_dims(g: &GaussianState, task: &QuadraticTask) -> Result<()> {
    if g.dim() != task.dim() {
        return Err(Error::DimensionMismatch {
            context: "Gaussian state vs task",
            expected: task.dim(),
            actual: g.dim(),
        });
    }
    Ok(())
}

/// Differential entropy `d/2 log(2 pi e) + 1/2 log det Sigma`.
pub fn entropy(g: &GaussianState) -> f64 {
    0.5 * g.dim() as f64 * LOG_2PI_E + 0.5 * g.log_det()
}

/// `E_q[Phi]`, exact for Gaussians.
pub fn expected_loss(g: &GaussianState, task: &QuadraticTask) -> Result<f64> {
    check_dims(g, task)?;
    Ok(task.value(g.mean())? + 0.5 * (task.hessian() * g.covariance()).trace())
}

/// `F[q] = E_q[Phi] - T H(q)`.
pub fn free_energy(g: &GaussianState, task: &QuadraticTask, temperature: f64) -> Result<f64> {
    check_temperature(temperature)?;
    Ok(expected_loss(g, task)? - temperature * entropy(g))
}

fn check_stable(task: &QuadraticTask, rule: &StepRule) -> Result<()> {
    rule.validate()?;
    let s = rule.stability_number(task);
    if s >= 2.0 {
        return Err(Error::Unstable(s));
    }
    Ok(())
}

/// Variance injected per step by the rule's noise.
fn step_noise_variance(rule: &StepRule) -> f64 {
    match rule.kind {
        StepKind::GradientDescent => 0.0,
        StepKind::NoisyGradient => (rule.step_size * rule.noise_scale).powi(2),
        StepKind::Langevin => 2.0 * rule.noise_scale * rule.step_size,
    }
}

/// One step of the moment recursion matching [`crate::transport::step`]:
/// `mu' = A mu + eta H theta*`, `Sigma' = A Sigma A^T + noise`, with
/// `A = I - eta (H + wd I)`. Zero-noise runs are floored, see
/// [`GaussianState::clamped`].
pub fn evolve_gaussian(g: &GaussianState, task: &QuadraticTask, rule: &StepRule) -> Result<GaussianState> {
    check_dims(g, task)?;
    check_stable(task, rule)?;
    let d = g.dim();
    let a = rule.step_jacobian(task);
    let mean = &a * g.mean() + task.hessian() * task.minimizer() * rule.step_size;
    let cov = &a * g.covariance() * a.transpose()
        + Matrix::identity(d, d) * step_noise_variance(rule);
    GaussianState::with_floor(mean, cov)
}

/// Exact Ornstein-Uhlenbeck transition over time `eta` for the continuous
/// dynamics `d theta = -(H(theta - theta*) + wd theta) dt + sqrt(2 D) dW`,
/// with `D` matched to the rule's per-step noise variance.
pub fn evolve_gaussian_exact(
    g: &GaussianState,
    task: &QuadraticTask,
    rule: &StepRule,
) -> Result<GaussianState> {
    check_dims(g, task)?;
    check_stable(task, rule)?;
    let eta = rule.step_size;
    let drift = rule.drift_hessian(task);
    let spectrum = SymmetricSpectrum::new(&drift)?;
    let center = if rule.weight_decay > 0.0 {
        spectrum.map(|l| 1.0 / l) * task.hessian() * task.minimizer()
    } else {
        task.minimizer().clone()
    };
    let propagator = spectrum.map(|l| (-eta * l).exp());
    // Per-unit-time variance rate matching the rule's per-step injection.
    let rate = step_noise_variance(rule) / eta;
    let injected = spectrum.map(|l| {
        if l * eta > 1e-8 {
            rate * (1.0 - (-2.0 * eta * l).exp()) / (2.0 * l)
        } else {
            rate * eta * (1.0 - eta * l)
        }
    });
    let mean = &center + &propagator * (g.mean() - &center);
    let cov = &propagator * g.covariance() * propagator.transpose() + injected;
    GaussianState::with_floor(mean, cov)
}

fn langevin_temperature(rule: &StepRule) -> Result<f64> {
    if rule.kind != StepKind::Langevin {
        return Err(Error::InvalidArgument(format!(
            "entropy production needs a Langevin rule, got {:?}",
            rule.kind
        )));
    }
    if rule.weight_decay != 0.0 {
        return Err(Error::InvalidArgument(
            "thermodynamic bookkeeping requires weight_decay = 0".into(),
        ));
    }
    check_temperature(rule.noise_scale)?;
    Ok(rule.noise_scale)
}

/// `E_q |v|^2` for the current velocity `v = -grad Phi - T grad log q`.
pub fn mean_squared_velocity(g: &GaussianState, task: &QuadraticTask, temperature: f64) -> Result<f64> {
    check_dims(g, task)?;
    let h = task.hessian();
    let drift = h * (g.mean() - task.minimizer());
    let b = g.precision() * temperature - h;
    let spread = (&b * g.covariance() * b.transpose()).trace();
    Ok(drift.norm_squared() + spread)
}

/// Entropy produced over one step: `eta * E|v|^2 / T` at the pre-step state.
pub fn entropy_production_step(g: &GaussianState, task: &QuadraticTask, rule: &StepRule) -> Result<f64> {
    let t = langevin_temperature(rule)?;
    Ok(rule.step_size * mean_squared_velocity(g, task, t)? / t)
}

/// Per-step entropy production and free energy along a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissipationLedger {
    pub per_step_sigma: Vec<f64>,
    pub total: f64,
    /// `F[q_0], ..., F[q_K]`.
    pub free_energy_series: Vec<f64>,
    /// `total - (F[q_0] - F[q_K]) / T`.
    pub excess: f64,
    pub temperature: f64,
    /// Physical duration of the run (steps times step size).
    pub duration: f64,
}

impl DissipationLedger {
    pub fn new(per_step_sigma: Vec<f64>, free_energy_series: Vec<f64>, temperature: f64, duration: f64) -> Result<Self> {
        check_temperature(temperature)?;
        if free_energy_series.len() != per_step_sigma.len() + 1 {
            return Err(Error::DimensionMismatch {
                context: "ledger free energy series",
                expected: per_step_sigma.len() + 1,
                actual: free_energy_series.len(),
            });
        }
        let total: f64 = per_step_sigma.iter().sum();
        let drop = free_energy_series[0] - free_energy_series[free_energy_series.len() - 1];
        Ok(DissipationLedger {
            excess: total - drop / temperature,
            per_step_sigma,
            total,
            free_energy_series,
            temperature,
            duration,
        })
    }

    /// Free-energy drop over the run divided by `T`.
    pub fn free_energy_drop(&self) -> f64 {
        (self.free_energy_series[0] - self.free_energy_series[self.free_energy_series.len() - 1])
            / self.temperature
    }

    /// `|sigma_k - (F_k - F_{k+1}) / T|` for each step.
    pub fn step_residuals(&self) -> Vec<f64> {
        self.per_step_sigma
            .iter()
            .zip(self.free_energy_series.windows(2))
            .map(|(s, f)| (s - (f[0] - f[1]) / self.temperature).abs())
            .collect()
    }

    /// Dissipation budget after rescaling the run to unit time.
    pub fn esl_budget(&self) -> f64 {
        0.5 * self.duration * self.temperature * self.total
    }
}

/// Which moment recursion drives a relaxation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentScheme {
    /// [`evolve_gaussian`]: the moments of the sampled Euler-Maruyama chain.
    Euler,
    /// [`evolve_gaussian_exact`]: the moments of the continuous flow.
    Exact,
}

#[derive(Debug, Clone)]
pub struct Relaxation {
    pub states: Vec<GaussianState>,
    pub ledger: DissipationLedger,
}

/// Langevin relaxation from `start` for `n_steps`, with its ledger.
pub fn relax(
    start: &GaussianState,
    task: &QuadraticTask,
    rule: &StepRule,
    n_steps: usize,
    scheme: MomentScheme,
) -> Result<Relaxation> {
    let t = langevin_temperature(rule)?;
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut sigmas = Vec::with_capacity(n_steps);
    let mut free = Vec::with_capacity(n_steps + 1);
    states.push(start.clone());
    free.push(free_energy(start, task, t)?);
    for _ in 0..n_steps {
        let q = states.last().expect("nonempty");
        sigmas.push(entropy_production_step(q, task, rule)?);
        let next = match scheme {
            MomentScheme::Euler => evolve_gaussian(q, task, rule)?,
            MomentScheme::Exact => evolve_gaussian_exact(q, task, rule)?,
        };
        free.push(free_energy(&next, task, t)?);
        states.push(next);
    }
    let ledger = DissipationLedger::new(sigmas, free, t, n_steps as f64 * rule.step_size)?;
    Ok(Relaxation { states, ledger })
}

/// Symmetric square root of a PSD matrix (negative round-off clipped).
fn psd_sqrt(m: &Matrix) -> Result<Matrix> {
    Ok(SymmetricSpectrum::new(m)?.map(|v| v.max(0.0).sqrt()))
}

/// 2-Wasserstein distance between Gaussians (Bures-Wasserstein form).
pub fn w2_gaussian(g1: &GaussianState, g2: &GaussianState) -> Result<f64> {
    if g1.dim() != g2.dim() {
        return Err(Error::DimensionMismatch {
            context: "w2_gaussian",
            expected: g1.dim(),
            actual: g2.dim(),
        });
    }
    // Fixed argument order makes the result exactly symmetric.
    let (a, b) = match g1.canonical_cmp(g2) {
        Ordering::Greater => (g2, g1),
        _ => (g1, g2),
    };
    let root_b = psd_sqrt(b.covariance())?;
    let cross = symmetrize(&(&root_b * a.covariance() * &root_b))?;
    let bures2 = a.covariance().trace() + b.covariance().trace() - 2.0 * psd_sqrt(&cross)?.trace();
    let mean2 = (a.mean() - b.mean()).norm_squared();
    Ok((mean2 + bures2.max(0.0)).sqrt())
}

/// Symmetric matrix of the optimal linear map pushing `N(0, S0)` to
/// `N(0, S1)`.
pub fn optimal_map(g0: &GaussianState, g1: &GaussianState) -> Result<Matrix> {
    let spectrum = SymmetricSpectrum::new(g0.covariance())?;
    let root = spectrum.map(|v| v.sqrt());
    let inv_root = spectrum.map(|v| 1.0 / v.sqrt());
    let middle = psd_sqrt(&symmetrize(&(&root * g1.covariance() * &root))?)?;
    symmetrize(&(&inv_root * middle * &inv_root))
}

/// Displacement interpolation `q_s`, `s = k / n_steps`, endpoints included.
pub fn ot_geodesic(g0: &GaussianState, g1: &GaussianState, n_steps: usize) -> Result<Vec<GaussianState>> {
    if g0.dim() != g1.dim() {
        return Err(Error::DimensionMismatch {
            context: "ot_geodesic",
            expected: g0.dim(),
            actual: g1.dim(),
        });
    }
    if n_steps == 0 {
        return Err(Error::InvalidArgument("ot_geodesic needs n_steps >= 1".into()));
    }
    let d = g0.dim();
    let map = optimal_map(g0, g1)?;
    let id = Matrix::identity(d, d);
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(g0.clone());
    for k in 1..n_steps {
        let s = k as f64 / n_steps as f64;
        let a = &id * (1.0 - s) + &map * s;
        let mean = g0.mean() * (1.0 - s) + g1.mean() * s;
        out.push(GaussianState::new(mean, &a * g0.covariance() * a.transpose())?);
    }
    out.push(g1.clone());
    Ok(out)
}

/// Ledger of a path traversed in unit time with per-step transport cost
/// `W2(q_k, q_{k+1})^2 / ds` (in units of `T`). Free energies are taken
/// with respect to `task`.
pub fn path_ledger(states: &[GaussianState], task: &QuadraticTask, temperature: f64) -> Result<DissipationLedger> {
    check_temperature(temperature)?;
    if states.len() < 2 {
        return Err(Error::Empty("path_ledger needs at least two states"));
    }
    let n = states.len() - 1;
    let ds = 1.0 / n as f64;
    let sigmas = states
        .windows(2)
        .map(|w| Ok(w2_gaussian(&w[0], &w[1])?.powi(2) / (ds * temperature)))
        .collect::<Result<Vec<_>>>()?;
    let free = states
        .iter()
        .map(|q| free_energy(q, task, temperature))
        .collect::<Result<Vec<_>>>()?;
    DissipationLedger::new(sigmas, free, temperature, 1.0)
}

/// `D - W2(start, end)^2 / 2`; nonnegative when the speed limit holds.
pub fn esl_slack(ledger: &DissipationLedger, start: &GaussianState, end: &GaussianState) -> Result<f64> {
    if !ledger.total.is_finite() {
        return Err(Error::NonFinite("ledger total"));
    }
    Ok(ledger.esl_budget() - 0.5 * w2_gaussian(start, end)?.powi(2))
}

/// One exported ledger row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerRow {
    pub step: usize,
    /// Entropy produced during the step starting here (0 on the last row).
    pub sigma: f64,
    pub free_energy: f64,
    pub w2_from_start: f64,
}

pub fn ledger_rows(states: &[GaussianState], ledger: &DissipationLedger) -> Result<Vec<LedgerRow>> {
    if states.len() != ledger.free_energy_series.len() {
        return Err(Error::DimensionMismatch {
            context: "ledger_rows",
            expected: ledger.free_energy_series.len(),
            actual: states.len(),
        });
    }
    states
        .iter()
        .enumerate()
        .map(|(k, q)| {
            Ok(LedgerRow {
                step: k,
                sigma: ledger.per_step_sigma.get(k).copied().unwrap_or(0.0),
                free_energy: ledger.free_energy_series[k],
                w2_from_start: w2_gaussian(&states[0], q)?,
            })
        })
        .collect()
}
