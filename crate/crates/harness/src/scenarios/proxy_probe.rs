//! Participation ratio of probe gradients as a cheap stand-in for the
//! usable direction count.
//!
//! Training runs on task A plus a graded penalty that shrinks the preserving
//! directions at different rates, so the usable count falls one direction
//! at a time. At each checkpoint the probe gradients `J^T xi`, `xi ~ N(0, I)`,
//! are summarized by their participation ratio.

use rand_distr::{Distribution, StandardNormal};
use reconfig_core::capacity::{compatible_effective_rank_of, participation_ratio, spearman};
use reconfig_core::noise::{derive_seed, NoiseStream};
use reconfig_core::transport::propagate;
use reconfig_core::{make_task_pair, Matrix, QuadraticTask, TaskPair, Vector};

use super::{Check, ScenarioOutput};
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::output::{Field, Table};

/// Smallest acceptable rank correlation between the participation ratio and
/// the usable count.
pub const MIN_SPEARMAN: f64 = 0.8;

/// Relative tolerance for the participation ratio of the fresh and the
/// fully collapsed map.
pub const PR_RTOL: f64 = 0.1;

pub fn task_pair(config: &ExperimentConfig) -> Result<TaskPair> {
    let spec = config.task_pair_spec(vec![config.tasks.b_curvature; config.k_a], derive_seed(config.master_seed, 0));
    Ok(make_task_pair(&spec)?)
}

/// Task A plus `strength * (j + 1) / k_a` of curvature on preserving
/// direction `j`.
pub fn graded_task(pair: &TaskPair, config: &ExperimentConfig) -> Result<QuadraticTask> {
    let k = config.k_a;
    let strength = config.probe().penalty_strength;
    let rates = Vector::from_fn(k, |j, _| strength * (j + 1) as f64 / k as f64);
    let q = pair.preserving_basis.basis();
    let h = pair.task_a.hessian() + q * Matrix::from_diagonal(&rates) * q.transpose();
    Ok(QuadraticTask::new("A+graded", h, pair.task_a.minimizer().clone())?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: usize,
    pub usable_count: usize,
    pub compatible_rank: f64,
    /// Participation ratio of the sampled probe gradients.
    pub participation_ratio: f64,
    /// `tr(J J^T)^2 / |J J^T|_F^2`, the infinite-sample value.
    pub population_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct Probe {
    pub checkpoints: Vec<Checkpoint>,
    pub spearman: f64,
    /// Participation ratio when `J` is the projector onto the normal
    /// complement, so only `dim - k_a` directions survive.
    pub collapsed_ratio: f64,
}

fn probe_ratio(j: &Matrix, n_samples: usize, stream: NoiseStream) -> Result<f64> {
    let mut rng = stream.rng_at(0);
    let d = j.nrows();
    let jt = j.transpose();
    let samples: Vec<Vector> = (0..n_samples)
        .map(|_| &jt * Vector::from_fn(d, |_, _| StandardNormal.sample(&mut rng)))
        .collect();
    Ok(participation_ratio(&samples)?)
}

fn population_ratio(j: &Matrix) -> f64 {
    let g = j.transpose() * j;
    let f2 = g.norm_squared();
    if f2 == 0.0 {
        0.0
    } else {
        g.trace().powi(2) / f2
    }
}

pub fn probe(config: &ExperimentConfig) -> Result<Probe> {
    let pair = task_pair(config)?;
    let task = graded_task(&pair, config)?;
    let settings = config.probe();
    let noise_seed = derive_seed(config.master_seed, 1);
    let probe_seed = derive_seed(config.master_seed, 2);
    let n_samples = settings.samples_per_dim * config.dim;

    let traj = propagate(pair.task_a.minimizer(), &task, &config.rule, config.n_steps, NoiseStream::new(noise_seed, 0))?;
    let prefixes = traj.prefix_jacobians();
    let mut checkpoints = Vec::new();
    for (c, step) in (0..=config.n_steps).step_by(settings.checkpoint_every).enumerate() {
        let j = &prefixes[step];
        let compatible = compatible_effective_rank_of(&[j], &pair.preserving_basis, config.thresholds.tau_sigma)?;
        checkpoints.push(Checkpoint {
            step,
            usable_count: compatible.usable_direction_count,
            compatible_rank: compatible.value,
            participation_ratio: probe_ratio(j, n_samples, NoiseStream::new(probe_seed, c as u64))?,
            population_ratio: population_ratio(j),
        });
    }
    let counts: Vec<f64> = checkpoints.iter().map(|c| c.usable_count as f64).collect();
    let ratios: Vec<f64> = checkpoints.iter().map(|c| c.participation_ratio).collect();
    let collapsed = pair.normal_basis.projector();
    // A constant series has no rank correlation; report it as NaN so the
    // check fails instead of the run.
    let constant = |v: &[f64]| v.iter().all(|x| *x == v[0]);
    let rho = if constant(&counts) || constant(&ratios) {
        f64::NAN
    } else {
        spearman(&ratios, &counts)?
    };
    Ok(Probe {
        spearman: rho,
        collapsed_ratio: probe_ratio(&collapsed, n_samples, NoiseStream::new(probe_seed, u64::MAX))?,
        checkpoints,
    })
}

pub fn run(config: &ExperimentConfig) -> Result<ScenarioOutput> {
    let result = probe(config)?;
    let mut out = ScenarioOutput::default();
    out.seed("task pair rotation", derive_seed(config.master_seed, 0));
    out.seed("training noise", derive_seed(config.master_seed, 1));
    out.seed("probe draws", derive_seed(config.master_seed, 2));

    let mut table = Table::new(
        "proxy_probe",
        &[
            ("step", "training step of the checkpoint"),
            ("usable_count", "singular values of J Q_A above tau_sigma"),
            ("compatible_rank", "R_A"),
            ("participation_ratio", "participation ratio of the sampled probe gradients J^T xi"),
            ("population_ratio", "tr(J J^T)^2 / |J J^T|_F^2"),
        ],
    );
    for c in &result.checkpoints {
        table.push(vec![
            c.step.into(),
            c.usable_count.into(),
            c.compatible_rank.into(),
            c.participation_ratio.into(),
            c.population_ratio.into(),
        ]);
    }
    out.tables.push(table);

    let fresh = result.checkpoints[0].participation_ratio;
    let normal_dim = (config.dim - config.k_a) as f64;
    let mut summary = Table::new("proxy_summary", &[("metric", "summary statistic"), ("value", "its value")]);
    let rows: [(&str, Field); 4] = [
        ("spearman", result.spearman.into()),
        ("fresh_participation_ratio", fresh.into()),
        ("collapsed_participation_ratio", result.collapsed_ratio.into()),
        ("surviving_normal_directions", (config.dim - config.k_a).into()),
    ];
    for (name, value) in rows {
        summary.push(vec![name.into(), value]);
    }
    out.tables.push(summary);

    out.checks.push(Check::at_least(
        "spearman",
        result.spearman,
        MIN_SPEARMAN,
        "rank correlation of participation ratio and usable count across checkpoints",
    ));
    out.checks.push(Check::at_most(
        "fresh_ratio",
        (fresh - config.dim as f64).abs() / config.dim as f64,
        PR_RTOL,
        "relative gap between the step-0 participation ratio and dim",
    ));
    out.checks.push(Check::at_most(
        "collapsed_ratio",
        (result.collapsed_ratio - normal_dim).abs() / normal_dim,
        PR_RTOL,
        "relative gap between the collapsed-map participation ratio and dim - k_a",
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Scenario;

    #[test]
    fn default_probe_tracks_the_usable_count() {
        let config = ExperimentConfig::default_for(Scenario::ProxyProbe);
        let result = probe(&config).unwrap();
        assert!(result.spearman >= MIN_SPEARMAN, "spearman {}", result.spearman);
        let first = &result.checkpoints[0];
        let last = result.checkpoints.last().unwrap();
        assert_eq!(first.usable_count, config.k_a);
        assert_eq!(last.usable_count, 0);
        assert!(last.participation_ratio < first.participation_ratio);
    }
}
