#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use reconfig_core::noise::random_rotation;
use reconfig_core::{Matrix, Vector};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut *rng))
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, d: usize) -> Vector {
    Vector::from_fn(d, |_, _| StandardNormal.sample(&mut *rng))
}

pub fn diag(v: &[f64]) -> Matrix {
    Matrix::from_diagonal(&Vector::from_row_slice(v))
}

/// `R diag(eigs) R^T` with a random rotation `R`.
pub fn rotated(rng: &mut ChaCha8Rng, eigs: &[f64]) -> Matrix {
    let r = random_rotation(eigs.len(), rng);
    let m = &r * diag(eigs) * r.transpose();
    (&m + m.transpose()) * 0.5
}

pub fn random_spd(rng: &mut ChaCha8Rng, d: usize, lo: f64, hi: f64) -> Matrix {
    use rand::Rng;
    let eigs: Vec<f64> = (0..d).map(|_| rng.gen_range(lo..hi)).collect();
    rotated(rng, &eigs)
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix, descending.
pub fn jacobi_eigenvalues(a: &Matrix) -> Vec<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        if off.sqrt() <= 1e-15 * m.norm().max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut e: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    e.sort_by(|x, y| y.total_cmp(x));
    e
}

/// Singular values via Jacobi on `A^T A` (or `A A^T`), descending.
pub fn jacobi_singular_values(a: &Matrix) -> Vec<f64> {
    let g = if a.nrows() >= a.ncols() {
        a.transpose() * a
    } else {
        a * a.transpose()
    };
    jacobi_eigenvalues(&g).into_iter().map(|v| v.max(0.0).sqrt()).collect()
}

/// `log |det A|` by Gaussian elimination with partial pivoting.
pub fn log_abs_det(a: &Matrix) -> f64 {
    let n = a.nrows();
    let mut m = a.clone();
    let mut acc = 0.0;
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[(i, col)].abs().total_cmp(&m[(j, col)].abs()))
            .unwrap();
        if m[(piv, col)] == 0.0 {
            return f64::NEG_INFINITY;
        }
        m.swap_rows(piv, col);
        acc += m[(col, col)].abs().ln();
        for r in (col + 1)..n {
            let factor = m[(r, col)] / m[(col, col)];
            for c in col..n {
                let v = m[(col, c)];
                m[(r, c)] -= factor * v;
            }
        }
    }
    acc
}

/// `m^k` by repeated squaring.
pub fn matrix_power(m: &Matrix, mut k: usize) -> Matrix {
    let n = m.nrows();
    let mut result = Matrix::identity(n, n);
    let mut base = m.clone();
    while k > 0 {
        if k & 1 == 1 {
            result = &result * &base;
        }
        base = &base * &base;
        k >>= 1;
    }
    result
}

pub fn rel_frobenius(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Random `rows x cols` matrix of exact integer rank `rank` (integer
/// entries, so products are computed without rounding).
pub fn integer_rank_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, rank: usize) -> Matrix {
    use rand::Rng;
    let mut l = Matrix::zeros(rows, rank);
    let mut r = Matrix::zeros(rank, cols);
    loop {
        for v in l.iter_mut() {
            *v = rng.gen_range(-3..=3) as f64;
        }
        for v in r.iter_mut() {
            *v = rng.gen_range(-3..=3) as f64;
        }
        let m = &l * &r;
        if exact_rank(&m) == rank {
            return m;
        }
    }
}

/// Rank by fraction-free elimination on integer-valued matrices.
pub fn exact_rank(m: &Matrix) -> usize {
    let mut a: Vec<Vec<i128>> = (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)] as i128).collect())
        .collect();
    let (rows, cols) = (m.nrows(), m.ncols());
    let mut rank = 0;
    for c in 0..cols {
        let Some(p) = (rank..rows).find(|&r| a[r][c] != 0) else {
            continue;
        };
        a.swap(rank, p);
        for r in (rank + 1)..rows {
            let (top, here) = (a[rank][c], a[r][c]);
            if here != 0 {
                for k in 0..cols {
                    a[r][k] = a[r][k] * top - a[rank][k] * here;
                }
                let g = a[r].iter().fold(0i128, |g, &v| gcd(g, v.abs()));
                if g > 1 {
                    for v in a[r].iter_mut() {
                        *v /= g;
                    }
                }
            }
        }
        rank += 1;
    }
    rank
}

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}
