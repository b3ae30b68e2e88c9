//! Effective and compatible rank along an ensemble run on task A.
//!
//! Weight decay shrinks every direction of the preserving subspace by
//! `1 - eta * wd` per step, so the compatible singular profile is known in
//! closed form and the run doubles as a check of the rank pipeline.

use reconfig_core::capacity::{compatible_effective_rank_of, effective_rank_of, predict_incompatibility, CapacityReport};
use reconfig_core::noise::derive_seed;
use reconfig_core::spectral::numerical_rank;
use reconfig_core::{make_task_pair, GaussianState, Matrix, TaskPair};
use reconfig_core::transport::ensemble_propagate;

use super::{Check, ScenarioOutput};
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::output::Table;

/// Variance of the isotropic initial ensemble around task A's minimizer.
pub const INITIAL_VARIANCE: f64 = 1.0;

pub fn task_pair(config: &ExperimentConfig) -> Result<TaskPair> {
    let spec = config.task_pair_spec(vec![config.tasks.b_curvature; config.k_a], derive_seed(config.master_seed, 0));
    Ok(make_task_pair(&spec)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankStep {
    pub step: usize,
    pub effective_rank: f64,
    pub compatible_rank: f64,
    pub usable_count: usize,
    /// Largest numerical rank over the realizations.
    pub numerical_rank: usize,
    pub compatible_profile: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RankDecay {
    pub steps: Vec<RankStep>,
    /// Per-step shrink factor `1 - eta * wd` of the preserving directions.
    pub contraction: f64,
    pub report: CapacityReport,
}

impl RankDecay {
    /// Largest relative gap between the measured compatible profile and
    /// `contraction^k`.
    pub fn profile_error(&self) -> f64 {
        self.steps
            .iter()
            .flat_map(|s| {
                let expected = self.contraction.powi(s.step as i32);
                s.compatible_profile.iter().map(move |v| (v - expected).abs() / expected)
            })
            .fold(0.0, f64::max)
    }

    /// Largest increase of the effective rank from one step to the next,
    /// relative to the earlier value.
    pub fn max_rank_increase(&self) -> f64 {
        self.steps
            .windows(2)
            .map(|w| (w[1].effective_rank - w[0].effective_rank) / w[0].effective_rank.max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max)
    }

    pub fn numerical_rank_increases(&self) -> usize {
        self.steps.windows(2).filter(|w| w[1].numerical_rank > w[0].numerical_rank).count()
    }
}

pub fn trace(config: &ExperimentConfig) -> Result<RankDecay> {
    let pair = task_pair(config)?;
    let start = GaussianState::isotropic(pair.task_a.minimizer().clone(), INITIAL_VARIANCE)?;
    let trajectories = ensemble_propagate(
        &start,
        &pair.task_a,
        &config.rule,
        config.n_steps,
        config.n_realizations,
        derive_seed(config.master_seed, 1),
    )?;
    let prefixes: Vec<Vec<Matrix>> = trajectories.iter().map(|t| t.prefix_jacobians()).collect();
    let tau = config.thresholds.tau_sigma;
    let mut steps = Vec::with_capacity(config.n_steps + 1);
    for k in 0..=config.n_steps {
        let js: Vec<&Matrix> = prefixes.iter().map(|p| &p[k]).collect();
        let compatible = compatible_effective_rank_of(&js, &pair.preserving_basis, tau)?;
        steps.push(RankStep {
            step: k,
            effective_rank: effective_rank_of(&js)?,
            compatible_rank: compatible.value,
            usable_count: compatible.usable_direction_count,
            numerical_rank: js.iter().map(|j| numerical_rank(j)).max().unwrap_or(0),
            compatible_profile: compatible.singular_profile,
        });
    }
    let report = predict_incompatibility(&trajectories, &pair.preserving_basis, &pair.task_b, tau)?;
    Ok(RankDecay {
        steps,
        contraction: 1.0 - config.rule.step_size * config.rule.weight_decay,
        report,
    })
}

pub fn run(config: &ExperimentConfig) -> Result<ScenarioOutput> {
    let decay = trace(config)?;
    let mut out = ScenarioOutput::default();
    out.seed("task pair rotation", derive_seed(config.master_seed, 0));
    out.seed("ensemble master seed", derive_seed(config.master_seed, 1));

    let mut columns: Vec<(String, String)> = vec![
        ("step".into(), "training step k".into()),
        ("effective_rank".into(), "R = exp((1/d) E log det(J^T J))".into()),
        ("compatible_rank".into(), "R_A = exp((1/k_a) E log det(Q_A^T J^T J Q_A))".into()),
        ("usable_count".into(), "realization-averaged count of singular values of J Q_A above tau_sigma, rounded half-down".into()),
        ("numerical_rank".into(), "largest numerical rank of J over realizations".into()),
        ("expected_sigma".into(), "closed-form compatible singular value (1 - eta wd)^k".into()),
    ];
    for j in 0..config.k_a {
        columns.push((format!("sigma_{j}"), format!("singular value {j} of J Q_A, realization mean")));
    }
    let cols: Vec<(&str, &str)> = columns.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    let mut table = Table::new("rank_decay", &cols);
    for s in &decay.steps {
        let mut row = vec![
            s.step.into(),
            s.effective_rank.into(),
            s.compatible_rank.into(),
            s.usable_count.into(),
            s.numerical_rank.into(),
            decay.contraction.powi(s.step as i32).into(),
        ];
        row.extend(s.compatible_profile.iter().map(|&v| v.into()));
        table.push(row);
    }
    out.tables.push(table);

    let mut volumes = Table::new(
        "final_log_volumes",
        &[
            ("realization", "ensemble member"),
            ("omega_seed", "noise seed of the realization"),
            ("log_volume", "log det(J^T J) of the final Jacobian"),
            ("compatible_log_volume", "log det(Q_A^T J^T J Q_A) of the final Jacobian"),
        ],
    );
    let seeds = &decay.report.provenance.seeds;
    for (i, (v, c)) in decay.report.log_volumes.iter().zip(&decay.report.compatible_log_volumes).enumerate() {
        volumes.push(vec![
            i.into(),
            seeds.get(i).copied().unwrap_or(0).into(),
            (*v).into(),
            (*c).into(),
        ]);
    }
    out.tables.push(volumes);
    out.documents.push((
        "capacity_report.json".into(),
        serde_json::to_value(&decay.report).expect("report serializes"),
    ));

    out.checks.push(Check::at_most(
        "compatible_profile_matches_decay",
        decay.profile_error(),
        1e-10,
        "max relative gap between singular values of J Q_A and (1 - eta wd)^k",
    ));
    out.checks.push(Check::at_most(
        "effective_rank_nonincreasing",
        decay.max_rank_increase(),
        1e-12,
        "largest relative step-to-step increase of R",
    ));
    out.checks.push(Check::at_most(
        "numerical_rank_nonincreasing",
        decay.numerical_rank_increases() as f64,
        0.0,
        "number of steps at which the numerical rank grew",
    ));
    if config.rule.weight_decay == 0.0 {
        let worst = decay.steps.iter().map(|s| (s.compatible_rank - 1.0).abs()).fold(0.0, f64::max);
        out.checks.push(Check::at_most(
            "compatible_rank_preserved",
            worst,
            1e-10,
            "max |R_A - 1| without weight decay",
        ));
    }
    Ok(out)
}
