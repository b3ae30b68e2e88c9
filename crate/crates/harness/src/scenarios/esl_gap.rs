//! Dissipation of a Langevin relaxation against the optimal-transport
//! geodesic between the same endpoints.
//!
//! Both paths are rescaled to unit time, so their budgets `D` compare
//! directly with `W2^2 / 2`. The geodesic saturates the bound as its
//! discretization is refined; the relaxation, which bends towards the
//! stiff directions first, does not.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use reconfig_core::noise::{derive_seed, random_rotation};
use reconfig_core::thermo::{
    esl_slack, ledger_rows, ot_geodesic, path_ledger, relax, w2_gaussian, LedgerRow, MomentScheme,
};
use reconfig_core::{GaussianState, Matrix, QuadraticTask, Vector};

use super::{Check, ScenarioOutput};
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::output::Table;

/// Tolerance on the sign of the slack and of the excess dissipation.
pub const SLACK_ATOL: f64 = 1e-6;

/// Largest geodesic slack, as a fraction of `W2^2 / 2`, at the finest
/// discretization.
pub const GEODESIC_SLACK_FRACTION: f64 = 0.05;

/// Growth of the geodesic slack under refinement, relative to `W2^2 / 2`,
/// still attributed to round-off.
pub const REFINEMENT_RTOL: f64 = 1e-9;

/// Quadratic potential `H = R diag(curvatures) R^T` with minimizer 0.
pub fn potential(config: &ExperimentConfig, rotation: &Matrix) -> Result<QuadraticTask> {
    let curv = Vector::from_vec(config.esl().curvatures);
    let h = rotation * Matrix::from_diagonal(&curv) * rotation.transpose();
    Ok(QuadraticTask::new("potential", h, Vector::zeros(config.dim))?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub interpolation_steps: usize,
    pub budget: f64,
    pub slack: f64,
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub index: usize,
    pub seed: u64,
    pub w2: f64,
    pub relaxation_total: f64,
    pub relaxation_excess: f64,
    pub relaxation_budget: f64,
    pub relaxation_slack: f64,
    /// One entry per configured discretization, in config order.
    pub refinements: Vec<Refinement>,
    pub relaxation_rows: Vec<LedgerRow>,
    /// Rows of the finest geodesic.
    pub geodesic_rows: Vec<LedgerRow>,
}

impl Instance {
    /// `W2^2 / 2`, the speed-limit floor of the budget.
    pub fn floor(&self) -> f64 {
        0.5 * self.w2 * self.w2
    }

    pub fn finest(&self) -> &Refinement {
        self.refinements
            .iter()
            .max_by_key(|r| r.interpolation_steps)
            .expect("at least one discretization")
    }

    /// Largest slack increase between successive refinements, relative to
    /// `W2^2 / 2`.
    pub fn refinement_increase(&self) -> f64 {
        let mut sorted = self.refinements.clone();
        sorted.sort_by_key(|r| r.interpolation_steps);
        let floor = self.floor().max(f64::MIN_POSITIVE);
        sorted
            .windows(2)
            .map(|w| (w[1].slack - w[0].slack) / floor)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn instance(config: &ExperimentConfig, index: usize) -> Result<Instance> {
    let esl = config.esl();
    let seed = derive_seed(config.master_seed, index as u64);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let d = config.dim;
    let rotation = random_rotation(d, &mut rng);
    let task = potential(config, &rotation)?;
    let mean = Vector::from_fn(d, |_, _| esl.start_spread * rng.sample::<f64, _>(StandardNormal));
    let start = GaussianState::isotropic(mean, esl.start_variance)?;
    let t = config.rule.temperature();

    let run = relax(&start, &task, &config.rule, config.n_steps, MomentScheme::Exact)?;
    let end = run.states.last().expect("relaxation has a start state").clone();
    let relaxation_slack = esl_slack(&run.ledger, &start, &end)?;

    let mut refinements = Vec::with_capacity(esl.interpolation_steps.len());
    let mut geodesic_rows = Vec::new();
    let finest = esl.interpolation_steps.iter().copied().max().unwrap_or(1);
    for &n in &esl.interpolation_steps {
        let path = ot_geodesic(&start, &end, n)?;
        let ledger = path_ledger(&path, &task, t)?;
        refinements.push(Refinement {
            interpolation_steps: n,
            budget: ledger.esl_budget(),
            slack: esl_slack(&ledger, &start, &end)?,
        });
        if n == finest && geodesic_rows.is_empty() {
            geodesic_rows = ledger_rows(&path, &ledger)?;
        }
    }
    Ok(Instance {
        index,
        seed,
        w2: w2_gaussian(&start, &end)?,
        relaxation_total: run.ledger.total,
        relaxation_excess: run.ledger.excess,
        relaxation_budget: run.ledger.esl_budget(),
        relaxation_slack,
        refinements,
        relaxation_rows: ledger_rows(&run.states, &run.ledger)?,
        geodesic_rows,
    })
}

pub fn instances(config: &ExperimentConfig) -> Result<Vec<Instance>> {
    (0..config.n_realizations)
        .into_par_iter()
        .map(|i| instance(config, i))
        .collect()
}

fn ledger_table(name: &str, instances: &[Instance], rows: impl Fn(&Instance) -> &[LedgerRow]) -> Table {
    let mut t = Table::new(
        name,
        &[
            ("instance", "relaxation instance"),
            ("step", "step along the path"),
            ("sigma", "entropy produced during the step starting here"),
            ("free_energy", "F = E[Phi] - T H"),
            ("w2_from_start", "W2 distance from the start state"),
        ],
    );
    for inst in instances {
        for r in rows(inst) {
            t.push(vec![
                inst.index.into(),
                r.step.into(),
                r.sigma.into(),
                r.free_energy.into(),
                r.w2_from_start.into(),
            ]);
        }
    }
    t
}

pub fn run(config: &ExperimentConfig) -> Result<ScenarioOutput> {
    let all = instances(config)?;
    let mut out = ScenarioOutput::default();
    for inst in &all {
        out.seed(format!("instance {} rotation and start", inst.index), inst.seed);
    }

    out.tables.push(ledger_table("esl_relaxation", &all, |i| &i.relaxation_rows));
    out.tables.push(ledger_table("esl_geodesic", &all, |i| &i.geodesic_rows));

    let mut summary = Table::new(
        "esl_summary",
        &[
            ("instance", "relaxation instance"),
            ("seed", "rotation and start seed"),
            ("w2", "W2 between the endpoints"),
            ("relaxation_sigma_total", "total entropy produced by the relaxation"),
            ("relaxation_excess", "total minus free-energy drop over T"),
            ("relaxation_budget", "D of the relaxation"),
            ("relaxation_slack", "D - W2^2/2 of the relaxation"),
            ("geodesic_budget", "D of the finest geodesic"),
            ("geodesic_slack", "D - W2^2/2 of the finest geodesic"),
            ("slack_gap", "relaxation slack minus geodesic slack"),
        ],
    );
    let mut refinement = Table::new(
        "esl_refinement",
        &[
            ("instance", "relaxation instance"),
            ("interpolation_steps", "geodesic discretization"),
            ("budget", "D of the discretized geodesic"),
            ("slack", "D - W2^2/2"),
            ("slack_fraction", "slack / (W2^2/2)"),
        ],
    );
    for inst in &all {
        let finest = inst.finest();
        summary.push(vec![
            inst.index.into(),
            inst.seed.into(),
            inst.w2.into(),
            inst.relaxation_total.into(),
            inst.relaxation_excess.into(),
            inst.relaxation_budget.into(),
            inst.relaxation_slack.into(),
            finest.budget.into(),
            finest.slack.into(),
            (inst.relaxation_slack - finest.slack).into(),
        ]);
        for r in &inst.refinements {
            let fraction = if inst.floor() > 0.0 { r.slack / inst.floor() } else { 0.0 };
            refinement.push(vec![
                inst.index.into(),
                r.interpolation_steps.into(),
                r.budget.into(),
                r.slack.into(),
                fraction.into(),
            ]);
        }
    }
    out.tables.push(summary);
    out.tables.push(refinement);

    let min = |f: &dyn Fn(&Instance) -> f64| all.iter().map(f).fold(f64::INFINITY, f64::min);
    let max = |f: &dyn Fn(&Instance) -> f64| all.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    out.checks.push(Check::at_least(
        "relaxation_speed_limit",
        min(&|i| i.relaxation_slack),
        -SLACK_ATOL,
        "smallest D - W2^2/2 over relaxations",
    ));
    out.checks.push(Check::at_least(
        "relaxation_excess_nonnegative",
        min(&|i| i.relaxation_excess),
        -SLACK_ATOL,
        "smallest entropy production minus free-energy drop over T",
    ));
    out.checks.push(Check::at_most(
        "geodesic_slack_fraction",
        max(&|i| if i.floor() > 0.0 { i.finest().slack / i.floor() } else { 0.0 }),
        GEODESIC_SLACK_FRACTION,
        "largest finest-geodesic slack as a fraction of W2^2/2",
    ));
    if config.esl().interpolation_steps.len() > 1 {
        out.checks.push(Check::at_most(
            "geodesic_slack_nonincreasing",
            max(&|i| i.refinement_increase()),
            REFINEMENT_RTOL,
            "largest slack increase under refinement, relative to W2^2/2",
        ));
    }
    let curv = config.esl().curvatures;
    let anisotropic = curv.iter().any(|c| *c != curv[0]);
    let moving: Vec<&Instance> = all.iter().filter(|i| i.w2 > 0.0).collect();
    if anisotropic && !moving.is_empty() {
        let gap = moving
            .iter()
            .map(|i| i.relaxation_slack - i.finest().slack)
            .fold(f64::INFINITY, f64::min);
        out.checks.push(Check {
            name: "relaxation_above_geodesic".into(),
            passed: gap > 0.0,
            observed: gap,
            limit: 0.0,
            detail: "smallest relaxation slack minus geodesic slack; must be strictly positive".into(),
        });
    }
    Ok(out)
}
