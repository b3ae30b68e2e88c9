//! Forgetting against predicted capacity over a grid of task-B demands and
//! phase-1 contraction budgets.
//!
//! Each cell builds a task pair whose task B needs `m` preserving directions,
//! then trains task A with an extra penalty that collapses `b` of the
//! preserving directions (`u = k_a - b` stay usable). Phase 2 learns task B
//! from the phase-1 endpoint with the collapsed directions frozen: first
//! inside the usable subspace alone, and only if that cannot reach task B,
//! inside the usable subspace plus the normal complement of A, which costs
//! task-A loss.

use rayon::prelude::*;
use reconfig_core::capacity::{measure_forgetting, predict_incompatibility, usable_subspace, CapacityReport, Forgetting};
use reconfig_core::noise::{derive_seed, NoiseStream};
use reconfig_core::transport::{compose, propagate_from, propagate_until};
use reconfig_core::{make_task_pair, QuadraticTask, SubspaceBasis, TaskPair, Trajectory, Vector};
use serde::Serialize;

use super::{Check, ScenarioOutput};
use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::output::{Field, Table};

/// Relative per-step loss decrease below which a phase-2 stage counts as
/// stalled.
pub const STALL_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Observed {
    Compatible,
    Incompatible,
    /// Task B not reached, or forgetting between the two thresholds.
    Unresolved,
}

impl Observed {
    pub fn name(self) -> &'static str {
        match self {
            Observed::Compatible => "compatible",
            Observed::Incompatible => "incompatible",
            Observed::Unresolved => "unresolved",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Cell {
    pub index: usize,
    pub m_b_target: usize,
    pub budget: usize,
    pub seed: u64,
    pub report: CapacityReport,
    pub phase1_steps: usize,
    pub phase2_steps: usize,
    /// Steps of phase 2 spent outside the usable subspace alone.
    pub widened_steps: usize,
    pub task_b_loss: f64,
    pub reached_b: bool,
    pub forgetting: Forgetting,
    pub observed: Observed,
}

impl Cell {
    pub fn usable(&self) -> usize {
        self.report.usable_direction_count
    }

    pub fn predicted_incompatible(&self) -> bool {
        self.report.predicted_incompatible
    }

    pub fn agrees(&self) -> bool {
        match self.observed {
            Observed::Compatible => !self.predicted_incompatible(),
            Observed::Incompatible => self.predicted_incompatible(),
            Observed::Unresolved => false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Confusion {
    pub cells: usize,
    /// Predicted and observed incompatible.
    pub true_incompatible: usize,
    /// Predicted incompatible, observed compatible.
    pub false_incompatible: usize,
    pub true_compatible: usize,
    /// Predicted compatible, observed incompatible.
    pub false_compatible: usize,
    pub unresolved: usize,
    pub agreement: f64,
}

#[derive(Debug, Clone)]
pub struct Sweep {
    pub cells: Vec<Cell>,
    pub confusion: Confusion,
}

impl Sweep {
    /// Smallest forgetting among cells with every preserving direction
    /// collapsed, a nonzero task-B demand, and task B reached.
    pub fn collapsed_forgetting_min(&self) -> Option<f64> {
        self.cells
            .iter()
            .filter(|c| c.usable() == 0 && c.m_b_target >= 1 && c.reached_b)
            .map(|c| c.forgetting.forgetting)
            .reduce(f64::min)
    }
}

/// Phase-1 length that takes a direction with shrink factor
/// `|1 - eta * strength|` below `tau_sigma`, plus one step of margin.
pub fn phase1_steps(eta: f64, strength: f64, tau_sigma: f64) -> usize {
    let factor = (1.0 - eta * strength).abs();
    if factor == 0.0 {
        return 1;
    }
    (tau_sigma.ln() / factor.ln()).ceil() as usize + 1
}

fn cell_pair(config: &ExperimentConfig, m: usize, seed: u64) -> Result<TaskPair> {
    let mut spectrum = vec![config.tasks.b_curvature; m];
    spectrum.resize(config.k_a, 0.0);
    Ok(make_task_pair(&config.task_pair_spec(spectrum, seed))?)
}

/// Task A plus the phase-1 penalty on the trailing `budget` preserving
/// directions.
fn collapse_task(config: &ExperimentConfig, pair: &TaskPair, budget: usize) -> Result<QuadraticTask> {
    let k = config.k_a;
    let collapsed: Vec<usize> = (k - budget..k).collect();
    let subspace = pair.preserving_basis.select(&collapsed)?;
    Ok(pair
        .task_a
        .with_subspace_penalty("A+collapse", &subspace, config.sweep().contraction_strength)?)
}

/// Every task a sweep trains on, at the most demanding grid point.
pub fn training_tasks(config: &ExperimentConfig) -> Result<Vec<QuadraticTask>> {
    let sweep = config.sweep();
    let m = sweep.m_b_targets.iter().copied().max().unwrap_or(0);
    let b = sweep.contraction_budgets.iter().copied().max().unwrap_or(0);
    let pair = cell_pair(config, m, derive_seed(config.master_seed, 0))?;
    Ok(vec![collapse_task(config, &pair, b)?, pair.task_b])
}

/// Stop rule for a phase-2 stage: task B learned, or no progress.
fn learned_or_stalled(task_b: &QuadraticTask, eps_b: f64) -> impl FnMut(&Vector) -> bool + '_ {
    let mut previous = f64::INFINITY;
    move |theta| {
        let loss = task_b.value(theta).unwrap_or(f64::NAN);
        let stalled = previous - loss <= STALL_RTOL * loss;
        previous = loss;
        loss <= eps_b || stalled || !loss.is_finite()
    }
}

fn classify(config: &ExperimentConfig, reached_b: bool, forgetting: f64) -> Observed {
    let t = &config.thresholds;
    if !reached_b {
        Observed::Unresolved
    } else if forgetting <= t.eps_low {
        Observed::Compatible
    } else if forgetting >= t.eps_high {
        Observed::Incompatible
    } else {
        Observed::Unresolved
    }
}

fn run_cell(config: &ExperimentConfig, index: usize, m: usize, budget: usize) -> Result<Cell> {
    let seed = derive_seed(config.master_seed, index as u64);
    let pair = cell_pair(config, m, seed)?;
    let rule = &config.rule;
    let tau = config.thresholds.tau_sigma;
    let eps_b = config.thresholds.eps_b;
    let noise = NoiseStream::new(seed, 1);

    let k1 = if budget == 0 {
        0
    } else {
        phase1_steps(rule.step_size, config.sweep().contraction_strength, tau)
    };
    let phase1_task = collapse_task(config, &pair, budget)?;
    let phase1 = propagate_from(pair.task_a.minimizer(), &phase1_task, rule, k1, noise, 0)?;
    let report = predict_incompatibility(std::slice::from_ref(&phase1), &pair.preserving_basis, &pair.task_b, tau)?;

    let usable = usable_subspace(phase1.cumulative_jacobian(), &pair.preserving_basis, tau)?;
    let start = phase1.final_state().clone();
    let task_b = &pair.task_b;
    let mut phase2 = if usable.dim() > 0 {
        propagate_until(
            &start,
            task_b,
            rule,
            config.max_steps,
            noise,
            k1 as u64,
            Some(&usable),
            learned_or_stalled(task_b, eps_b),
        )?
    } else {
        Trajectory::empty(start)
    };
    let mut widened_steps = 0;
    let remaining = config.max_steps - phase2.n_steps();
    if task_b.value(phase2.final_state())? > eps_b && remaining > 0 {
        let widened: SubspaceBasis = usable.join(&pair.normal_basis)?;
        let stage = propagate_until(
            phase2.final_state(),
            task_b,
            rule,
            remaining,
            noise,
            (k1 + phase2.n_steps()) as u64,
            Some(&widened),
            learned_or_stalled(task_b, eps_b),
        )?;
        widened_steps = stage.n_steps();
        phase2 = compose(&phase2, &stage)?;
    }

    let task_b_loss = task_b.value(phase2.final_state())?;
    let reached_b = task_b_loss <= eps_b;
    let forgetting = measure_forgetting(&phase2, &pair.task_a, config.thresholds.eps_a)?;
    Ok(Cell {
        index,
        m_b_target: m,
        budget,
        seed,
        report,
        phase1_steps: k1,
        phase2_steps: phase2.n_steps(),
        widened_steps,
        task_b_loss,
        reached_b,
        observed: classify(config, reached_b, forgetting.forgetting),
        forgetting,
    })
}

pub fn sweep(config: &ExperimentConfig) -> Result<Sweep> {
    let grid = config.sweep();
    let points: Vec<(usize, usize)> = grid
        .m_b_targets
        .iter()
        .flat_map(|&m| grid.contraction_budgets.iter().map(move |&b| (m, b)))
        .collect();
    if config.max_steps == 0 {
        return Err(HarnessError::config("max_steps", "must be >= 1"));
    }
    let cells: Vec<Cell> = points
        .par_iter()
        .enumerate()
        .map(|(i, &(m, b))| run_cell(config, i, m, b))
        .collect::<Result<_>>()?;

    let mut confusion = Confusion {
        cells: cells.len(),
        ..Confusion::default()
    };
    for c in &cells {
        match (c.predicted_incompatible(), c.observed) {
            (_, Observed::Unresolved) => confusion.unresolved += 1,
            (true, Observed::Incompatible) => confusion.true_incompatible += 1,
            (true, Observed::Compatible) => confusion.false_incompatible += 1,
            (false, Observed::Compatible) => confusion.true_compatible += 1,
            (false, Observed::Incompatible) => confusion.false_compatible += 1,
        }
    }
    let agreeing = cells.iter().filter(|c| c.agrees()).count();
    confusion.agreement = agreeing as f64 / cells.len().max(1) as f64;
    Ok(Sweep { cells, confusion })
}

pub fn run(config: &ExperimentConfig) -> Result<ScenarioOutput> {
    let result = sweep(config)?;
    let mut out = ScenarioOutput::default();

    let mut table = Table::new(
        "threshold_sweep",
        &[
            ("cell", "grid index"),
            ("seed", "task-pair rotation seed"),
            ("m_b_target", "number of preserving directions task B curves"),
            ("contraction_budget", "preserving directions collapsed in phase 1"),
            ("m_b", "stable rank of task B's curvature restricted to Q_A"),
            ("usable_count", "singular values of J Q_A above tau_sigma after phase 1"),
            ("compatible_rank", "R_A after phase 1"),
            ("phase1_steps", "phase-1 length"),
            ("phase2_steps", "phase-2 length"),
            ("widened_steps", "phase-2 steps spent outside the usable subspace alone"),
            ("task_b_loss", "task-B loss at the end of phase 2"),
            ("reached_b", "task-B loss at most eps_b"),
            ("forgetting", "task-A loss increase over phase 2"),
            ("bound_check", "forgetting minus (mu/2) distance^2; nonnegative"),
            ("predicted_incompatible", "m_b exceeds usable_count"),
            ("observed", "classification of the forgetting"),
            ("agree", "prediction matches observation"),
        ],
    );
    for c in &result.cells {
        out.seed(format!("cell {} task pair and noise", c.index), c.seed);
        table.push(vec![
            c.index.into(),
            c.seed.into(),
            c.m_b_target.into(),
            c.budget.into(),
            c.report.m_b.into(),
            c.usable().into(),
            c.report.compatible_effective_rank.into(),
            c.phase1_steps.into(),
            c.phase2_steps.into(),
            c.widened_steps.into(),
            c.task_b_loss.into(),
            c.reached_b.into(),
            c.forgetting.forgetting.into(),
            c.forgetting.bound_check.into(),
            c.predicted_incompatible().into(),
            c.observed.name().into(),
            c.agrees().into(),
        ]);
    }
    out.tables.push(table);

    let cf = &result.confusion;
    let mut summary = Table::new("sweep_summary", &[("metric", "summary statistic"), ("value", "its value")]);
    let rows: [(&str, Field); 7] = [
        ("cells", cf.cells.into()),
        ("true_incompatible", cf.true_incompatible.into()),
        ("false_incompatible", cf.false_incompatible.into()),
        ("true_compatible", cf.true_compatible.into()),
        ("false_compatible", cf.false_compatible.into()),
        ("unresolved", cf.unresolved.into()),
        ("agreement", cf.agreement.into()),
    ];
    for (name, value) in rows {
        summary.push(vec![name.into(), value]);
    }
    out.tables.push(summary);

    let reports: Vec<serde_json::Value> = result
        .cells
        .iter()
        .map(|c| {
            serde_json::json!({
                "cell": c.index,
                "m_b_target": c.m_b_target,
                "contraction_budget": c.budget,
                "report": c.report,
            })
        })
        .collect();
    out.documents.push(("capacity_reports.json".into(), serde_json::Value::Array(reports)));

    out.checks.push(Check::at_least(
        "prediction_agreement",
        cf.agreement,
        0.95,
        "fraction of cells whose observed class matches the capacity prediction",
    ));
    if let Some(min) = result.collapsed_forgetting_min() {
        out.checks.push(Check::at_least(
            "collapsed_cells_forget",
            min,
            config.thresholds.eps_high,
            "smallest forgetting among cells with no usable direction and m_b_target >= 1",
        ));
    }
    let worst_bound = result.cells.iter().map(|c| c.forgetting.bound_check).fold(f64::INFINITY, f64::min);
    out.checks.push(Check::at_least(
        "forgetting_bound",
        worst_bound,
        -reconfig_core::capacity::FORGETTING_BOUND_TOL,
        "smallest forgetting - (mu/2) distance^2 over cells",
    ));
    Ok(out)
}
