//! Entropic optimal transport between two equal-size uniform point clouds in
//! at most three dimensions, used as an independent check of the closed-form
//! Gaussian W2.
//!
//! Multilevel Sinkhorn on a truncated kernel. Each level is warm-started
//! from the same problem on a quarter of the points (the coarsest level is a
//! dense, epsilon-scaled log-domain solve). On a level, the kernel keeps the
//! pairs whose weight is within `exp(-TRUNC)` of the best entry in their row
//! or column; scaling-domain sweeps (over-relaxed once close, with a
//! fallback to plain sweeps if the error jumps) run on a fixed support and
//! are periodically absorbed into the log potentials. A level is done when
//! the marginal error is below tolerance on a freshly rebuilt support.

pub type Point = [f64; 3];

const COARSE: usize = 700;
const OMEGA: f64 = 1.6;
const FINAL_SWEEPS: usize = 20;
const TRUNC: f64 = 12.0;
const MAX_SWEEPS: usize = 200;
const ABSORB_AT: f64 = 10.0;
const RELAX_BELOW: f64 = 5e-2;
const REBUILD_EVERY: usize = 60;
const MAX_SUPPORTS: usize = 50;

#[derive(Debug, Clone, Copy)]
pub struct Sinkhorn {
    /// Transport cost of the entropic plan, `sum_ij c_ij pi_ij`.
    pub cost: f64,
    /// L1 error of the column marginal on the final support.
    pub marginal_error: f64,
    pub iterations: usize,
    pub support: usize,
}

#[inline]
fn sq(x: &Point, y: &Point) -> f64 {
    let (a, b, c) = (x[0] - y[0], x[1] - y[1], x[2] - y[2]);
    a * a + b * b + c * c
}

fn lse(vals: &[f64]) -> f64 {
    let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + vals.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// `f_i = -eps (lse_j (g_j - c_ij)/eps - ln m)` for every `x_i`.
fn c_transform(x: &[Point], y: &[Point], g: &[f64], eps: f64) -> Vec<f64> {
    let lm = (y.len() as f64).ln();
    let mut buf = vec![0.0; y.len()];
    x.iter()
        .map(|xi| {
            for (b, (yj, gj)) in buf.iter_mut().zip(y.iter().zip(g)) {
                *b = (gj - sq(xi, yj)) / eps;
            }
            -eps * (lse(&buf) - lm)
        })
        .collect()
}

fn dense_potentials(x: &[Point], y: &[Point], eps: f64, scale: f64) -> (Vec<f64>, Vec<f64>) {
    let mut f = vec![0.0; x.len()];
    let mut g = vec![0.0; y.len()];
    let mut level = 4.0 * scale;
    while level > eps {
        for _ in 0..10 {
            f = c_transform(x, y, &g, level);
            g = c_transform(y, x, &f, level);
        }
        level *= 0.5;
    }
    for _ in 0..FINAL_SWEEPS {
        f = c_transform(x, y, &g, eps);
        g = c_transform(y, x, &f, eps);
    }
    (f, g)
}

struct Support {
    start: Vec<usize>,
    idx: Vec<u32>,
    cost: Vec<f64>,
}

/// Row-major truncated support: pairs within `thr` of the best entry of
/// their row or of their column.
fn support(x: &[Point], y: &[Point], f: &[f64], g: &[f64], thr: f64) -> Support {
    let (n, m) = (x.len(), y.len());
    let coords: Vec<Vec<f64>> = (0..3).map(|a| y.iter().map(|p| p[a]).collect()).collect();
    let (y0, y1, y2) = (&coords[0], &coords[1], &coords[2]);
    let mut row_best = vec![f64::NEG_INFINITY; n];
    let mut col_best = vec![f64::NEG_INFINITY; m];
    let mut h = vec![0.0; m];
    for (i, xi) in x.iter().enumerate() {
        let mut best = f64::NEG_INFINITY;
        for j in 0..m {
            let (a, b, c) = (xi[0] - y0[j], xi[1] - y1[j], xi[2] - y2[j]);
            let cost = a * a + b * b + c * c;
            let v = g[j] - cost;
            best = if v > best { v } else { best };
            let w = f[i] - cost;
            col_best[j] = if w > col_best[j] { w } else { col_best[j] };
        }
        row_best[i] = best;
    }
    let mut start = Vec::with_capacity(n + 1);
    let mut idx = Vec::new();
    let mut cost = Vec::new();
    start.push(0);
    let col_cut: Vec<f64> = col_best.iter().map(|b| b - thr).collect();
    for (i, xi) in x.iter().enumerate() {
        let row_cut = row_best[i] - thr;
        for j in 0..m {
            let (a, b, c) = (xi[0] - y0[j], xi[1] - y1[j], xi[2] - y2[j]);
            h[j] = a * a + b * b + c * c;
        }
        for j in 0..m {
            let c = h[j];
            if g[j] - c >= row_cut || f[i] - c >= col_cut[j] {
                idx.push(j as u32);
                cost.push(c);
            }
        }
        start.push(idx.len());
    }
    Support { start, idx, cost }
}

/// Log-domain row update `f = T(g)` on the support, then the kernel
/// `K = exp((f + g - c) / eps)`, whose rows sum to one.
fn absorb(s: &Support, g: &[f64], f: &mut [f64], eps: f64, kernel: &mut Vec<f64>) {
    let inv = 1.0 / eps;
    kernel.resize(s.idx.len(), 0.0);
    for r in 0..f.len() {
        let range = s.start[r]..s.start[r + 1];
        let mut top = f64::NEG_INFINITY;
        for k in range.clone() {
            let v = (g[s.idx[k] as usize] - s.cost[k]) * inv;
            kernel[k] = v;
            top = top.max(v);
        }
        let mut sum = 0.0;
        for k in range.clone() {
            kernel[k] = (kernel[k] - top).exp();
            sum += kernel[k];
        }
        f[r] = -eps * (top + sum.ln());
        for k in range {
            kernel[k] /= sum;
        }
    }
}

/// Column sums of `diag(u) K diag(v)`.
fn column_sums(s: &Support, kernel: &[f64], u: &[f64], v: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (r, ur) in u.iter().enumerate() {
        for k in s.start[r]..s.start[r + 1] {
            out[s.idx[k] as usize] += kernel[k] * ur;
        }
    }
    for (o, vj) in out.iter_mut().zip(v) {
        *o *= vj;
    }
}

fn l1_error(cols: &[f64]) -> f64 {
    cols.iter().map(|c| (c - 1.0).abs()).sum::<f64>() / cols.len() as f64
}

struct Progress {
    iterations: usize,
    omega: f64,
    best: f64,
}

struct Level {
    f: Vec<f64>,
    g: Vec<f64>,
    support: Support,
    kernel: Vec<f64>,
    error: f64,
}

/// Scaling-domain sweeps on a fixed kernel until the marginal error drops
/// below `tol` or the scalings grow large enough to need absorbing.
fn sweeps(s: &Support, kernel: &[f64], tol: f64, state: &mut Progress) -> (Vec<f64>, f64) {
    let n = s.start.len() - 1;
    let (mut u, mut v, mut cols) = (vec![1.0; n], vec![1.0; n], vec![0.0; n]);
    for sweep in 0..MAX_SWEEPS {
        column_sums(s, kernel, &u, &v, &mut cols);
        let err = l1_error(&cols);
        if err > 10.0 * state.best {
            state.omega = 1.0;
        }
        state.best = state.best.min(err);
        let omega = if err < RELAX_BELOW { state.omega } else { 1.0 };
        let spread = v.iter().map(|a| a.ln().abs()).fold(0.0, f64::max);
        if err < tol || (sweep > 0 && spread > ABSORB_AT) {
            return (v, err);
        }
        for (vj, c) in v.iter_mut().zip(&cols) {
            *vj *= c.powf(-omega);
        }
        for (r, ur) in u.iter_mut().enumerate() {
            let sum: f64 = (s.start[r]..s.start[r + 1]).map(|k| kernel[k] * v[s.idx[k] as usize]).sum();
            *ur = ur.powf(1.0 - omega) * sum.powf(-omega);
        }
        state.iterations += 1;
    }
    column_sums(s, kernel, &u, &v, &mut cols);
    (v, l1_error(&cols))
}

/// Solves one level, warm-started from the same problem on a quarter of the
/// points.
fn solve_level(x: &[Point], y: &[Point], eps: f64, scale: f64, tol: f64, state: &mut Progress) -> Level {
    let n = x.len();
    let m = if n / 4 <= COARSE { COARSE.min(n) } else { n / 4 };
    let (fc, gc) = if n / 4 <= COARSE {
        dense_potentials(&x[..m], &y[..m], eps, scale)
    } else {
        let coarse = solve_level(&x[..m], &y[..m], eps, scale, tol, state);
        (coarse.f, coarse.g)
    };
    let mut f = c_transform(x, &y[..m], &gc, eps);
    let mut g = c_transform(y, &x[..m], &fc, eps);
    let thr = TRUNC * eps;
    let mut kernel = Vec::new();
    state.omega = OMEGA;
    state.best = f64::INFINITY;
    for _ in 0..MAX_SUPPORTS {
        let support = support(x, y, &f, &g, thr);
        absorb(&support, &g, &mut f, eps, &mut kernel);
        let mut cols = vec![0.0; n];
        column_sums(&support, &kernel, &vec![1.0; n], &vec![1.0; n], &mut cols);
        let error = l1_error(&cols);
        if error < tol {
            return Level { f, g, support, kernel, error };
        }
        // Stay on this support until converged, until the potentials have
        // moved far enough that the truncation may be stale, or for at most
        // REBUILD_EVERY sweeps.
        let anchor = g.clone();
        let start = state.iterations;
        loop {
            let (v, err) = sweeps(&support, &kernel, tol, state);
            for (gj, vj) in g.iter_mut().zip(&v) {
                *gj += eps * vj.ln();
            }
            absorb(&support, &g, &mut f, eps, &mut kernel);
            let drift = g.iter().zip(&anchor).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if err < tol || drift > thr || state.iterations - start >= REBUILD_EVERY {
                break;
            }
        }
    }
    panic!("entropic OT did not converge after {MAX_SUPPORTS} supports");
}

/// Entropic OT between uniform clouds `x` and `y` (same size) with
/// regularization `eps`, solved until the L1 marginal error is below `tol`.
/// `scale` is a typical squared distance, where epsilon scaling starts.
pub fn entropic_ot(x: &[Point], y: &[Point], eps: f64, scale: f64, tol: f64) -> Sinkhorn {
    assert_eq!(x.len(), y.len());
    let mut state = Progress {
        iterations: 0,
        omega: OMEGA,
        best: f64::INFINITY,
    };
    let level = solve_level(x, y, eps, scale, tol, &mut state);
    let s = &level.support;
    // Rows of the kernel sum to one, so the plan is `kernel / n`.
    let cost = (0..x.len())
        .map(|r| (s.start[r]..s.start[r + 1]).map(|k| level.kernel[k] * s.cost[k]).sum::<f64>())
        .sum::<f64>()
        / x.len() as f64;
    Sinkhorn {
        cost,
        marginal_error: level.error,
        iterations: state.iterations,
        support: s.idx.len(),
    }
}
