//! Randomized checks of how Jacobians compose.
//!
//! Splits: a run of `K` steps is compared with its first `K1` steps followed
//! by the remaining `K - K1` steps resumed at the same position of the noise
//! stream. Pairs: products of random matrices of prescribed rank are checked
//! against the rank and singular-value product inequalities.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use reconfig_core::noise::{derive_seed, random_rotation, NoiseStream};
use reconfig_core::spectral::{numerical_rank, numerical_rank_with, singular_values};
use reconfig_core::transport::{compose, propagate, propagate_from};
use reconfig_core::{Matrix, QuadraticTask, StepKind, StepRule, Vector};

use super::{Check, ScenarioOutput};
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::output::{Field, Table};

/// Slack on the singular-value product bounds, relative to
/// `sigma_max(A) sigma_max(B)`.
pub const PRODUCT_RTOL: f64 = 1e-12;

/// Cutoff for the rank of a product, relative to `sigma_max(A) sigma_max(B)`.
pub const PRODUCT_RANK_RTOL: f64 = 1e-10;

/// Seed offsets keeping the split and pair streams apart.
const SPLIT_STREAM: u64 = 1 << 32;
const PAIR_STREAM: u64 = 2 << 32;

#[derive(Debug, Clone, PartialEq)]
pub struct SplitRecord {
    pub trial: usize,
    pub seed: u64,
    pub kind: StepKind,
    pub step_size: f64,
    pub weight_decay: f64,
    pub total_steps: usize,
    pub split: usize,
    pub rel_error: f64,
    /// Distance between the composed and the direct endpoint.
    pub endpoint_gap: f64,
    pub rank_first: usize,
    pub rank_second: usize,
    pub rank_whole: usize,
}

impl SplitRecord {
    pub fn rank_violation(&self) -> bool {
        self.rank_whole > self.rank_first.min(self.rank_second)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub pair: usize,
    pub seed: u64,
    pub dim: usize,
    pub rank_a: usize,
    pub rank_b: usize,
    pub rank_product: usize,
    /// Largest `sigma_{i+j}(AB) / (sigma_i(A) sigma_j(B))` over pairs with a
    /// nonzero bound.
    pub max_ratio: f64,
    pub violations: usize,
}

impl PairRecord {
    pub fn rank_violation(&self) -> bool {
        self.rank_product > self.rank_a.min(self.rank_b)
    }
}

#[derive(Debug, Clone)]
pub struct Composition {
    pub splits: Vec<SplitRecord>,
    pub pairs: Vec<PairRecord>,
}

impl Composition {
    pub fn max_rel_error(&self) -> f64 {
        self.splits.iter().map(|s| s.rel_error).fold(0.0, f64::max)
    }

    pub fn max_endpoint_gap(&self) -> f64 {
        self.splits.iter().map(|s| s.endpoint_gap).fold(0.0, f64::max)
    }

    pub fn rank_violations(&self) -> usize {
        self.splits.iter().filter(|s| s.rank_violation()).count()
            + self.pairs.iter().filter(|p| p.rank_violation()).count()
    }

    pub fn singular_violations(&self) -> usize {
        self.pairs.iter().map(|p| p.violations).sum()
    }
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha20Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn split_trial(config: &ExperimentConfig, trial: usize) -> Result<SplitRecord> {
    let seed = derive_seed(config.master_seed, SPLIT_STREAM + trial as u64);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let d = config.dim;

    let kind = [StepKind::GradientDescent, StepKind::NoisyGradient, StepKind::Langevin][rng.gen_range(0..3)];
    let weight_decay = if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(0.0..0.2) };
    let mut eigenvalues: Vec<f64> = (0..d)
        .map(|_| if rng.gen_bool(0.25) { 0.0 } else { rng.gen_range(0.0..2.0) })
        .collect();
    let top = eigenvalues.iter().copied().fold(0.0, f64::max);
    let step_size = rng.gen_range(0.05..0.95) / (top + weight_decay).max(1e-3);
    // Some trials annihilate a direction in a single step, so ranks drop.
    if rng.gen_bool(0.25) {
        eigenvalues[0] = (1.0 / step_size - weight_decay).max(0.0);
    }
    let rotation = random_rotation(d, &mut rng);
    let hessian = &rotation * Matrix::from_diagonal(&Vector::from_vec(eigenvalues)) * rotation.transpose();
    let minimizer = Vector::from_fn(d, |_, _| rng.sample(StandardNormal));
    let task = QuadraticTask::new("random", hessian, minimizer)?;
    let rule = StepRule {
        kind,
        step_size,
        noise_scale: rng.gen_range(0.0..1.0),
        weight_decay,
    };

    let total_steps = rng.gen_range(0..=config.n_steps);
    let split = match trial {
        0 => 0,
        1 => total_steps,
        _ => rng.gen_range(0..=total_steps),
    };
    let theta0 = Vector::from_fn(d, |_, _| rng.sample(StandardNormal));
    let noise = NoiseStream::new(seed, 1);

    let whole = propagate(&theta0, &task, &rule, total_steps, noise)?;
    let first = propagate(&theta0, &task, &rule, split, noise)?;
    let second = propagate_from(first.final_state(), &task, &rule, total_steps - split, noise, split as u64)?;
    let composed = compose(&first, &second)?;

    let reference = whole.cumulative_jacobian();
    let scale = reference.norm();
    let diff = (composed.cumulative_jacobian() - reference).norm();
    let rel_error = if scale > 0.0 { diff / scale } else { diff };
    Ok(SplitRecord {
        trial,
        seed,
        kind,
        step_size,
        weight_decay,
        total_steps,
        split,
        rel_error,
        endpoint_gap: (composed.final_state() - whole.final_state()).norm(),
        rank_first: numerical_rank(first.cumulative_jacobian()),
        rank_second: numerical_rank(second.cumulative_jacobian()),
        rank_whole: numerical_rank(reference),
    })
}

fn pair_trial(config: &ExperimentConfig, pair: usize) -> PairRecord {
    let seed = derive_seed(config.master_seed, PAIR_STREAM + pair as u64);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let d = rng.gen_range(2..=config.composition().max_pair_dim);
    let low_rank = |rng: &mut ChaCha20Rng| {
        let r = rng.gen_range(0..=d);
        gaussian_matrix(d, r, rng) * gaussian_matrix(r, d, rng)
    };
    let a = low_rank(&mut rng);
    let b = low_rank(&mut rng);
    let product = &a * &b;

    let (sa, sb, sp) = (singular_values(&a), singular_values(&b), singular_values(&product));
    let scale = sa[0] * sb[0];
    let mut max_ratio: f64 = 0.0;
    let mut violations = 0;
    for i in 0..d {
        for j in 0..d - i {
            let bound = sa[i] * sb[j];
            if sp[i + j] > bound + PRODUCT_RTOL * scale {
                violations += 1;
            }
            if bound > 0.0 {
                max_ratio = max_ratio.max(sp[i + j] / bound);
            }
        }
    }
    PairRecord {
        pair,
        seed,
        dim: d,
        rank_a: numerical_rank(&a),
        rank_b: numerical_rank(&b),
        rank_product: numerical_rank_with(&product, PRODUCT_RANK_RTOL * scale),
        max_ratio,
        violations,
    }
}

pub fn check(config: &ExperimentConfig) -> Result<Composition> {
    let settings = config.composition();
    let splits = (0..settings.n_splits)
        .into_par_iter()
        .map(|t| split_trial(config, t))
        .collect::<Result<Vec<_>>>()?;
    let pairs = (0..settings.n_pairs)
        .into_par_iter()
        .map(|p| pair_trial(config, p))
        .collect();
    Ok(Composition { splits, pairs })
}

fn kind_name(kind: StepKind) -> &'static str {
    match kind {
        StepKind::GradientDescent => "gradient-descent",
        StepKind::NoisyGradient => "noisy-gradient",
        StepKind::Langevin => "langevin",
    }
}

pub fn run(config: &ExperimentConfig) -> Result<ScenarioOutput> {
    let result = check(config)?;
    let mut out = ScenarioOutput::default();
    out.seed("split trials", derive_seed(config.master_seed, SPLIT_STREAM));
    out.seed("product pairs", derive_seed(config.master_seed, PAIR_STREAM));

    let mut splits = Table::new(
        "composition_splits",
        &[
            ("trial", "split trial index"),
            ("seed", "trial seed (task, rule, start and noise)"),
            ("kind", "update rule"),
            ("step_size", "eta"),
            ("weight_decay", "weight decay"),
            ("total_steps", "K"),
            ("split", "K1"),
            ("rel_error", "|J_split - J_direct|_F / |J_direct|_F"),
            ("endpoint_gap", "|theta_split - theta_direct|"),
            ("rank_first", "numerical rank of the first-segment Jacobian"),
            ("rank_second", "numerical rank of the second-segment Jacobian"),
            ("rank_whole", "numerical rank of the full Jacobian"),
        ],
    );
    for s in &result.splits {
        splits.push(vec![
            s.trial.into(),
            s.seed.into(),
            kind_name(s.kind).into(),
            s.step_size.into(),
            s.weight_decay.into(),
            s.total_steps.into(),
            s.split.into(),
            s.rel_error.into(),
            s.endpoint_gap.into(),
            s.rank_first.into(),
            s.rank_second.into(),
            s.rank_whole.into(),
        ]);
    }
    out.tables.push(splits);

    let mut pairs = Table::new(
        "product_pairs",
        &[
            ("pair", "pair index"),
            ("seed", "pair seed"),
            ("dim", "matrix dimension"),
            ("rank_a", "numerical rank of A"),
            ("rank_b", "numerical rank of B"),
            ("rank_product", "numerical rank of AB"),
            ("max_ratio", "largest sigma_{i+j}(AB) / (sigma_i(A) sigma_j(B))"),
            ("violations", "product bounds exceeded beyond round-off"),
        ],
    );
    for p in &result.pairs {
        pairs.push(vec![
            p.pair.into(),
            p.seed.into(),
            p.dim.into(),
            p.rank_a.into(),
            p.rank_b.into(),
            p.rank_product.into(),
            p.max_ratio.into(),
            p.violations.into(),
        ]);
    }
    out.tables.push(pairs);

    let mut summary = Table::new("composition_summary", &[("metric", "summary statistic"), ("value", "its value")]);
    let rows: [(&str, Field); 5] = [
        ("max_rel_error", result.max_rel_error().into()),
        ("max_endpoint_gap", result.max_endpoint_gap().into()),
        ("rank_violations", result.rank_violations().into()),
        ("singular_violations", result.singular_violations().into()),
        (
            "max_product_ratio",
            result.pairs.iter().map(|p| p.max_ratio).fold(0.0, f64::max).into(),
        ),
    ];
    for (name, value) in rows {
        summary.push(vec![name.into(), value]);
    }
    out.tables.push(summary);

    out.checks.push(Check::at_most(
        "composition_error",
        result.max_rel_error(),
        1e-10,
        "max relative Frobenius gap between split and direct Jacobians",
    ));
    out.checks.push(Check::at_most(
        "rank_monotonicity",
        result.rank_violations() as f64,
        0.0,
        "products whose rank exceeds the smaller factor rank",
    ));
    out.checks.push(Check::at_most(
        "singular_submultiplicativity",
        result.singular_violations() as f64,
        0.0,
        "violated sigma_{i+j}(AB) <= sigma_i(A) sigma_j(B) bounds",
    ));
    Ok(out)
}
