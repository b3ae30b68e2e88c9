//! Dense linear-algebra kernel: singular values, log-Gram volumes, stable
//! rank, null-space bases and projected Gram matrices.
//!
//! Decompositions are delegated to `nalgebra`; this module owns ordering,
//! tolerances and the extended-real conventions built on top of them.
//! Singular values and eigenvalues are always reported in descending order,
//! ties kept in their original index order.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative cutoff below which a singular value counts as zero.
pub const RANK_RTOL: f64 = 1e-12;
/// Absolute floor for the zero test, for matrices whose largest singular
/// value is itself denormal.
pub const RANK_ATOL: f64 = 1e-300;
/// Largest tolerated relative asymmetry `|H - H^T|_F / |H|_F` for inputs
/// declared symmetric.
pub const SYMMETRY_RTOL: f64 = 1e-8;

/// Builds a matrix from row-major data, rejecting non-finite entries.
pub fn matrix_from_rows(rows: usize, cols: usize, data: &[f64]) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument(format!(
            "matrix shape {rows}x{cols} must be positive"
        )));
    }
    if data.len() != rows * cols {
        return Err(Error::DimensionMismatch {
            context: "matrix_from_rows",
            expected: rows * cols,
            actual: data.len(),
        });
    }
    let m = Matrix::from_row_slice(rows, cols, data);
    ensure_finite(&m, "matrix_from_rows")?;
    Ok(m)
}

pub fn ensure_finite(m: &Matrix, context: &'static str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context))
    }
}

pub fn ensure_finite_vector(v: &Vector, context: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context))
    }
}

/// Indices that sort `values` descending; stable, so ties keep index order.
fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[j].total_cmp(&values[i]));
    idx
}

fn select_columns(m: &Matrix, order: &[usize]) -> Matrix {
    Matrix::from_fn(m.nrows(), order.len(), |r, c| m[(r, order[c])])
}

/// Thin SVD `A = U diag(s) V^T` with `s` nonincreasing.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub singular_values: Vec<f64>,
    /// `rows x min(rows, cols)`, orthonormal columns.
    pub left_basis: Matrix,
    /// `cols x min(rows, cols)`, orthonormal columns.
    pub right_basis: Matrix,
}

impl SpectralDecomposition {
    pub fn new(a: &Matrix) -> Self {
        let svd = a.clone().svd(true, true);
        let s: Vec<f64> = svd.singular_values.iter().copied().collect();
        let order = descending_order(&s);
        let u = svd.u.expect("left singular vectors requested");
        let v = svd.v_t.expect("right singular vectors requested").transpose();
        SpectralDecomposition {
            singular_values: order.iter().map(|&i| s[i]).collect(),
            left_basis: select_columns(&u, &order),
            right_basis: select_columns(&v, &order),
        }
    }

    pub fn reconstruct(&self) -> Matrix {
        let s = Matrix::from_diagonal(&Vector::from_vec(self.singular_values.clone()));
        &self.left_basis * s * self.right_basis.transpose()
    }

    /// Number of singular values above the rank cutoff.
    pub fn numerical_rank(&self) -> usize {
        let cutoff = zero_cutoff(&self.singular_values);
        self.singular_values.iter().filter(|&&s| s > cutoff).count()
    }
}

/// Singular values of `a`, descending, `min(rows, cols)` of them.
pub fn singular_values(a: &Matrix) -> Vec<f64> {
    let mut s: Vec<f64> = a.singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

fn zero_cutoff(descending: &[f64]) -> f64 {
    let top = descending.first().copied().unwrap_or(0.0);
    (RANK_RTOL * top).max(RANK_ATOL)
}

/// `sum_i log s_i^2`, or `-inf` as soon as one value sits at or below the
/// rank cutoff (relative to the largest value).
pub fn log_volume_from_singular_values(descending: &[f64]) -> f64 {
    if descending.is_empty() {
        return 0.0;
    }
    let cutoff = zero_cutoff(descending);
    if descending.iter().any(|&s| s <= cutoff) {
        return f64::NEG_INFINITY;
    }
    descending.iter().map(|&s| 2.0 * s.ln()).sum()
}

/// `log det(J^T J)` for square `J`, as an extended real.
pub fn log_gram_volume(j: &Matrix) -> Result<f64> {
    if !j.is_square() {
        return Err(Error::DimensionMismatch {
            context: "log_gram_volume (columns must equal rows)",
            expected: j.nrows(),
            actual: j.ncols(),
        });
    }
    Ok(log_volume_from_singular_values(&singular_values(j)))
}

/// Number of singular values above `RANK_RTOL * s_max`.
pub fn numerical_rank(a: &Matrix) -> usize {
    numerical_rank_with(a, RANK_RTOL * singular_values(a).first().copied().unwrap_or(0.0))
}

/// Number of singular values strictly above an absolute cutoff.
pub fn numerical_rank_with(a: &Matrix, cutoff: f64) -> usize {
    let cutoff = cutoff.max(RANK_ATOL);
    singular_values(a).iter().filter(|&&s| s > cutoff).count()
}

/// `(H + H^T) / 2`, rejecting inputs whose asymmetry exceeds
/// [`SYMMETRY_RTOL`] relative to `|H|_F`.
pub fn symmetrize(h: &Matrix) -> Result<Matrix> {
    if !h.is_square() {
        return Err(Error::DimensionMismatch {
            context: "symmetrize (columns must equal rows)",
            expected: h.nrows(),
            actual: h.ncols(),
        });
    }
    ensure_finite(h, "symmetrize")?;
    let ht = h.transpose();
    let scale = h.norm();
    let asym = (h - &ht).norm();
    if scale > 0.0 && asym > SYMMETRY_RTOL * scale {
        return Err(Error::Asymmetric(asym / scale));
    }
    Ok((h + ht) * 0.5)
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues descending.
#[derive(Debug, Clone)]
pub struct SymmetricSpectrum {
    pub values: Vec<f64>,
    /// Column `i` pairs with `values[i]`.
    pub vectors: Matrix,
}

impl SymmetricSpectrum {
    pub fn new(h: &Matrix) -> Result<Self> {
        let sym = symmetrize(h)?;
        let eig = SymmetricEigen::new(sym);
        let raw: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        let order = descending_order(&raw);
        Ok(SymmetricSpectrum {
            values: order.iter().map(|&i| raw[i]).collect(),
            vectors: select_columns(&eig.eigenvectors, &order),
        })
    }

    pub fn max(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn min(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    /// `V f(Lambda) V^T`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let d = Vector::from_iterator(self.values.len(), self.values.iter().map(|&x| f(x)));
        &self.vectors * Matrix::from_diagonal(&d) * self.vectors.transpose()
    }
}

/// Stable rank `|H|_F^2 / |H|_2^2` of a symmetric matrix; zero for `H = 0`.
pub fn stable_rank(h: &Matrix) -> Result<f64> {
    let sym = symmetrize(h)?;
    let spectrum = SymmetricSpectrum::new(&sym)?;
    let spectral = spectrum.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if spectral == 0.0 {
        return Ok(0.0);
    }
    let frob2: f64 = spectrum.values.iter().map(|v| v * v).sum();
    Ok(frob2 / (spectral * spectral))
}

/// Orthonormal column basis of a linear subspace of `R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceBasis {
    ambient_dim: usize,
    basis: Matrix,
}

/// Orthonormality tolerance for [`SubspaceBasis`] (max entry of `Q^T Q - I`).
pub const ORTHONORMAL_TOL: f64 = 1e-10;

impl SubspaceBasis {
    pub fn new(basis: Matrix) -> Result<Self> {
        ensure_finite(&basis, "SubspaceBasis")?;
        let k = basis.ncols();
        if k > basis.nrows() {
            return Err(Error::InvalidArgument(format!(
                "{k} basis vectors cannot be orthonormal in dimension {}",
                basis.nrows()
            )));
        }
        let gram = basis.transpose() * &basis;
        let err = (gram - Matrix::identity(k, k)).amax();
        if err > ORTHONORMAL_TOL {
            return Err(Error::InvalidArgument(format!(
                "basis columns are not orthonormal (deviation {err:.3e})"
            )));
        }
        Ok(SubspaceBasis {
            ambient_dim: basis.nrows(),
            basis,
        })
    }

    pub fn identity(d: usize) -> Self {
        SubspaceBasis {
            ambient_dim: d,
            basis: Matrix::identity(d, d),
        }
    }

    pub fn trivial(d: usize) -> Self {
        SubspaceBasis {
            ambient_dim: d,
            basis: Matrix::zeros(d, 0),
        }
    }

    /// Orthonormal basis for the span of `columns`, dropping directions whose
    /// singular value is below `RANK_RTOL` of the largest.
    pub fn span_of(columns: &Matrix) -> Result<Self> {
        ensure_finite(columns, "SubspaceBasis::span_of")?;
        let d = columns.nrows();
        if columns.ncols() == 0 {
            return Ok(Self::trivial(d));
        }
        let svd = SpectralDecomposition::new(columns);
        let rank = svd.numerical_rank();
        let basis = svd.left_basis.columns(0, rank).into_owned();
        Ok(SubspaceBasis {
            ambient_dim: d,
            basis,
        })
    }

    /// Sub-basis made of the listed columns.
    pub fn select(&self, columns: &[usize]) -> Result<Self> {
        if let Some(&bad) = columns.iter().find(|&&c| c >= self.dim()) {
            return Err(Error::InvalidArgument(format!(
                "column {bad} out of range for a {}-dimensional basis",
                self.dim()
            )));
        }
        SubspaceBasis::new(select_columns(&self.basis, columns))
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    /// Orthogonal projector `Q Q^T`.
    pub fn projector(&self) -> Matrix {
        &self.basis * self.basis.transpose()
    }

    /// Orthonormal basis of the orthogonal complement.
    pub fn complement(&self) -> Self {
        let d = self.ambient_dim;
        let residual = Matrix::identity(d, d) - self.projector();
        let spectrum = SymmetricSpectrum::new(&residual).expect("projector is symmetric");
        let keep = spectrum.values.iter().filter(|&&v| v > 0.5).count();
        SubspaceBasis {
            ambient_dim: d,
            basis: spectrum.vectors.columns(0, keep).into_owned(),
        }
    }

    /// Direct sum with another subspace; the two must be orthogonal.
    pub fn join(&self, other: &SubspaceBasis) -> Result<Self> {
        if other.ambient_dim != self.ambient_dim {
            return Err(Error::DimensionMismatch {
                context: "SubspaceBasis::join",
                expected: self.ambient_dim,
                actual: other.ambient_dim,
            });
        }
        let mut cols = Matrix::zeros(self.ambient_dim, self.dim() + other.dim());
        cols.columns_mut(0, self.dim()).copy_from(&self.basis);
        cols.columns_mut(self.dim(), other.dim()).copy_from(&other.basis);
        SubspaceBasis::new(cols)
    }
}

/// Eigenspace of a symmetric PSD matrix with eigenvalues at most
/// `tol * lambda_max` (or at most `tol` when `lambda_max <= 0`).
pub fn null_space_basis(h: &Matrix, tol: f64) -> Result<SubspaceBasis> {
    if !(tol >= 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance {tol} must be >= 0")));
    }
    let spectrum = SymmetricSpectrum::new(h)?;
    let top = spectrum.max();
    let cutoff = if top > 0.0 { tol * top } else { tol };
    let first_null = spectrum
        .values
        .iter()
        .position(|&v| v <= cutoff)
        .unwrap_or(spectrum.values.len());
    let k = spectrum.values.len() - first_null;
    // Eigenvalues are descending, so the null block is the trailing one.
    let basis = spectrum.vectors.columns(first_null, k).into_owned();
    Ok(SubspaceBasis {
        ambient_dim: h.nrows(),
        basis,
    })
}

/// `Q^T J^T J Q`, the Gram matrix of `J` restricted to the subspace.
pub fn project_gram(j: &Matrix, q: &SubspaceBasis) -> Result<Matrix> {
    if j.ncols() != q.ambient_dim() {
        return Err(Error::DimensionMismatch {
            context: "project_gram",
            expected: j.ncols(),
            actual: q.ambient_dim(),
        });
    }
    let jq = j * q.basis();
    let gram = jq.transpose() * &jq;
    Ok((&gram + gram.transpose()) * 0.5)
}
