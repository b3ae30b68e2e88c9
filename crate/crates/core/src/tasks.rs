//! Synthetic quadratic tasks with known task-preserving subspaces.
//!
//! A task is `Phi(theta) = 1/2 (theta - theta*)^T H (theta - theta*)` with a
//! positive semidefinite, usually rank-deficient, Hessian. The null space of
//! `H_A` is exactly the set of directions along which task A is unaffected.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::random_rotation;
use crate::spectral::{
    ensure_finite_vector, stable_rank, symmetrize, Matrix, SubspaceBasis, SymmetricSpectrum,
    Vector,
};

/// PSD tolerance on the smallest eigenvalue, relative to `max(1, lambda_max)`.
pub const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticTask {
    label: String,
    hessian: Matrix,
    minimizer: Vector,
}

impl QuadraticTask {
    pub fn new(label: impl Into<String>, hessian: Matrix, minimizer: Vector) -> Result<Self> {
        let hessian = symmetrize(&hessian)?;
        if hessian.nrows() != minimizer.len() {
            return Err(Error::DimensionMismatch {
                context: "QuadraticTask minimizer",
                expected: hessian.nrows(),
                actual: minimizer.len(),
            });
        }
        ensure_finite_vector(&minimizer, "QuadraticTask minimizer")?;
        let spectrum = SymmetricSpectrum::new(&hessian)?;
        if spectrum.min() < -PSD_TOL * spectrum.max().max(1.0) {
            return Err(Error::NotPositiveSemidefinite(spectrum.min()));
        }
        Ok(QuadraticTask {
            label: label.into(),
            hessian,
            minimizer,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.minimizer.len()
    }

    pub fn minimizer(&self) -> &Vector {
        &self.minimizer
    }

    /// The (constant) Hessian.
    pub fn hessian(&self) -> &Matrix {
        &self.hessian
    }

    fn check_dim(&self, theta: &Vector) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "task parameter vector",
                expected: self.dim(),
                actual: theta.len(),
            });
        }
        Ok(())
    }

    pub fn value(&self, theta: &Vector) -> Result<f64> {
        self.check_dim(theta)?;
        let r = theta - &self.minimizer;
        Ok(0.5 * r.dot(&(&self.hessian * &r)))
    }

    pub fn gradient(&self, theta: &Vector) -> Result<Vector> {
        self.check_dim(theta)?;
        Ok(&self.hessian * (theta - &self.minimizer))
    }

    /// Hessian at `theta`; independent of `theta` for quadratics.
    pub fn hessian_at(&self, theta: &Vector) -> Result<Matrix> {
        self.check_dim(theta)?;
        Ok(self.hessian.clone())
    }

    pub fn lambda_max(&self) -> f64 {
        SymmetricSpectrum::new(&self.hessian)
            .map(|s| s.max())
            .unwrap_or(0.0)
    }

    /// Same task plus `strength/2 |P (theta - theta*)|^2` on `subspace`.
    /// The minimizer is unchanged.
    pub fn with_subspace_penalty(
        &self,
        label: impl Into<String>,
        subspace: &SubspaceBasis,
        strength: f64,
    ) -> Result<Self> {
        if subspace.ambient_dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "subspace penalty",
                expected: self.dim(),
                actual: subspace.ambient_dim(),
            });
        }
        if !(strength >= 0.0) || !strength.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "penalty strength {strength} must be finite and >= 0"
            )));
        }
        QuadraticTask::new(
            label,
            &self.hessian + subspace.projector() * strength,
            self.minimizer.clone(),
        )
    }
}

/// `Q_A^T H_B Q_A`.
pub fn restricted_hessian(task_b: &QuadraticTask, q_a: &SubspaceBasis) -> Result<Matrix> {
    if q_a.ambient_dim() != task_b.dim() {
        return Err(Error::DimensionMismatch {
            context: "restricted_hessian",
            expected: task_b.dim(),
            actual: q_a.ambient_dim(),
        });
    }
    let q = q_a.basis();
    let r = q.transpose() * task_b.hessian() * q;
    Ok((&r + r.transpose()) * 0.5)
}

fn default_normal_range() -> (f64, f64) {
    (1.0, 2.0)
}

/// Replayable recipe for a [`TaskPair`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskPairSpec {
    pub dim: usize,
    pub k_a: usize,
    /// Eigenvalues of the restriction `Q_A^T H_B Q_A`, one per preserving
    /// direction.
    pub spectrum_b_on_a: Vec<f64>,
    pub rotation_seed: u64,
    /// Eigenvalues of `H_A` on the normal complement (`dim - k_a` of them).
    /// Drawn uniformly from `normal_range` when absent.
    #[serde(default)]
    pub normal_spectrum: Option<Vec<f64>>,
    #[serde(default = "default_normal_range")]
    pub normal_range: (f64, f64),
    /// Angle (radians) by which each curvature direction of task B is tilted
    /// out of the preserving subspace into a paired normal direction.
    #[serde(default)]
    pub normal_coupling: f64,
    /// Minimizer of task A; the origin when empty.
    #[serde(default)]
    pub offset_a: Vec<f64>,
    /// Shift of task B's minimizer along the preserving basis, in basis
    /// coordinates. Keeps a joint minimizer of A and B.
    #[serde(default)]
    pub offset_b_on_a: Vec<f64>,
}

impl TaskPairSpec {
    pub fn new(dim: usize, k_a: usize, spectrum_b_on_a: Vec<f64>, rotation_seed: u64) -> Self {
        TaskPairSpec {
            dim,
            k_a,
            spectrum_b_on_a,
            rotation_seed,
            normal_spectrum: None,
            normal_range: default_normal_range(),
            normal_coupling: 0.0,
            offset_a: Vec::new(),
            offset_b_on_a: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::InvalidArgument(format!("task pair json: {e}")))
    }

    fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(Error::InvalidArgument(m));
        if self.k_a == 0 || self.k_a >= self.dim {
            return invalid(format!("need 0 < k_a < dim, got k_a={} dim={}", self.k_a, self.dim));
        }
        if self.spectrum_b_on_a.len() != self.k_a {
            return Err(Error::DimensionMismatch {
                context: "spectrum_b_on_a",
                expected: self.k_a,
                actual: self.spectrum_b_on_a.len(),
            });
        }
        if let Some(bad) = self.spectrum_b_on_a.iter().find(|s| !(**s >= 0.0) || !s.is_finite()) {
            return invalid(format!("spectrum_b_on_a entries must be finite and >= 0, got {bad}"));
        }
        if let Some(ns) = &self.normal_spectrum {
            if ns.len() != self.dim - self.k_a {
                return Err(Error::DimensionMismatch {
                    context: "normal_spectrum",
                    expected: self.dim - self.k_a,
                    actual: ns.len(),
                });
            }
            if let Some(bad) = ns.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
                return invalid(format!("normal_spectrum entries must be finite and > 0, got {bad}"));
            }
        }
        let (lo, hi) = self.normal_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return invalid(format!("normal_range must satisfy 0 < lo <= hi, got ({lo}, {hi})"));
        }
        if !(self.normal_coupling >= 0.0 && self.normal_coupling < std::f64::consts::FRAC_PI_2) {
            return invalid(format!(
                "normal_coupling must lie in [0, pi/2), got {}",
                self.normal_coupling
            ));
        }
        if !self.offset_a.is_empty() && self.offset_a.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "offset_a",
                expected: self.dim,
                actual: self.offset_a.len(),
            });
        }
        if !self.offset_b_on_a.is_empty() && self.offset_b_on_a.len() != self.k_a {
            return Err(Error::DimensionMismatch {
                context: "offset_b_on_a",
                expected: self.k_a,
                actual: self.offset_b_on_a.len(),
            });
        }
        if self.offset_a.iter().chain(&self.offset_b_on_a).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("task pair offsets"));
        }
        Ok(())
    }
}

/// Two tasks whose interaction inside A's preserving subspace is prescribed.
#[derive(Debug, Clone)]
pub struct TaskPair {
    pub spec: TaskPairSpec,
    pub task_a: QuadraticTask,
    pub task_b: QuadraticTask,
    /// `Q_A`: orthonormal basis of `null(H_A)`. Column `j` is the direction on
    /// which the restriction of `H_B` has eigenvalue `spectrum_b_on_a[j]`.
    pub preserving_basis: SubspaceBasis,
    /// Orthogonal complement of `Q_A`.
    pub normal_basis: SubspaceBasis,
    /// `Q_A^T H_B Q_A`.
    pub restricted_hessian: Matrix,
    /// Stable rank of `diag(spectrum_b_on_a)`.
    pub target_m_b: f64,
}

pub fn make_task_pair(spec: &TaskPairSpec) -> Result<TaskPair> {
    spec.validate()?;
    let (d, k) = (spec.dim, spec.k_a);
    let mut rng = ChaCha20Rng::seed_from_u64(spec.rotation_seed);
    let rotation = random_rotation(d, &mut rng);
    let q_a = rotation.columns(0, k).into_owned();
    let normal = rotation.columns(k, d - k).into_owned();

    let normal_spectrum: Vec<f64> = match &spec.normal_spectrum {
        Some(s) => s.clone(),
        None => {
            let (lo, hi) = spec.normal_range;
            (0..d - k)
                .map(|_| if hi > lo { rng.gen_range(lo..hi) } else { lo })
                .collect()
        }
    };
    let h_a = &normal
        * Matrix::from_diagonal(&Vector::from_vec(normal_spectrum))
        * normal.transpose();

    let (sin, cos) = spec.normal_coupling.sin_cos();
    let mut h_b = Matrix::zeros(d, d);
    for (j, &s) in spec.spectrum_b_on_a.iter().enumerate() {
        let (dir, weight) = if j < d - k {
            (q_a.column(j) * cos + normal.column(j) * sin, s / (cos * cos))
        } else {
            (q_a.column(j).into_owned(), s)
        };
        h_b += &dir * dir.transpose() * weight;
    }

    let theta_a = if spec.offset_a.is_empty() {
        Vector::zeros(d)
    } else {
        Vector::from_row_slice(&spec.offset_a)
    };
    let theta_b = if spec.offset_b_on_a.is_empty() {
        theta_a.clone()
    } else {
        &theta_a + &q_a * Vector::from_row_slice(&spec.offset_b_on_a)
    };

    let task_a = QuadraticTask::new("A", h_a, theta_a)?;
    let task_b = QuadraticTask::new("B", h_b, theta_b)?;
    let preserving_basis = SubspaceBasis::new(q_a)?;
    let normal_basis = SubspaceBasis::new(normal)?;
    let restricted = restricted_hessian(&task_b, &preserving_basis)?;
    let target_m_b = stable_rank(&Matrix::from_diagonal(&Vector::from_row_slice(
        &spec.spectrum_b_on_a,
    )))?;

    Ok(TaskPair {
        spec: spec.clone(),
        task_a,
        task_b,
        preserving_basis,
        normal_basis,
        restricted_hessian: restricted,
        target_m_b,
    })
}

impl TaskPair {
    /// Smallest nonzero eigenvalue of `H_A`.
    pub fn normal_curvature_min(&self) -> f64 {
        let q = self.normal_basis.basis();
        let restricted = q.transpose() * self.task_a.hessian() * q;
        SymmetricSpectrum::new(&restricted).map(|s| s.min()).unwrap_or(0.0)
    }
}
