//! The five experiment scenarios. Each turns a validated config into tables,
//! JSON documents and pass/fail checks; writing them out is left to the
//! caller.

pub mod composition_check;
pub mod esl_gap;
pub mod proxy_probe;
pub mod rank_decay;
pub mod threshold_sweep;

use reconfig_core::{QuadraticTask, StepRule};
use serde::Serialize;

use crate::config::{ExperimentConfig, Scenario};
use crate::error::{HarnessError, Result};
use crate::output::{SeedRecord, Table};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub observed: f64,
    pub limit: f64,
    pub detail: String,
}

impl Check {
    pub fn at_most(name: &str, observed: f64, limit: f64, detail: impl Into<String>) -> Self {
        Check {
            name: name.to_string(),
            passed: observed <= limit,
            observed,
            limit,
            detail: detail.into(),
        }
    }

    pub fn at_least(name: &str, observed: f64, limit: f64, detail: impl Into<String>) -> Self {
        Check {
            name: name.to_string(),
            passed: observed >= limit,
            observed,
            limit,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ScenarioOutput {
    pub tables: Vec<Table>,
    pub documents: Vec<(String, serde_json::Value)>,
    pub checks: Vec<Check>,
    pub seeds: Vec<SeedRecord>,
}

impl ScenarioOutput {
    pub fn failed_checks(&self) -> usize {
        self.checks.iter().filter(|c| !c.passed).count()
    }

    pub fn checks_table(&self) -> Table {
        let mut t = Table::new(
            "checks",
            &[
                ("name", "check identifier"),
                ("passed", "whether the check held"),
                ("observed", "measured value"),
                ("limit", "threshold the value is compared against"),
                ("detail", "what was compared"),
            ],
        );
        for c in &self.checks {
            t.push(vec![
                c.name.clone().into(),
                c.passed.into(),
                c.observed.into(),
                c.limit.into(),
                c.detail.clone().into(),
            ]);
        }
        t
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    fn seed(&mut self, purpose: impl Into<String>, seed: u64) {
        self.seeds.push(SeedRecord {
            purpose: purpose.into(),
            seed,
        });
    }
}

/// Runs the configured scenario. The config must already be validated.
pub fn run(config: &ExperimentConfig) -> Result<ScenarioOutput> {
    match config.scenario {
        Scenario::EslGap => esl_gap::run(config),
        Scenario::RankDecay => rank_decay::run(config),
        Scenario::ThresholdSweep => threshold_sweep::run(config),
        Scenario::CompositionCheck => composition_check::run(config),
        Scenario::ProxyProbe => proxy_probe::run(config),
    }
}

fn require_stable(rule: &StepRule, task: &QuadraticTask) -> Result<()> {
    let number = rule.stability_number(task);
    if number >= 2.0 {
        return Err(HarnessError::config(
            "rule.step_size",
            format!(
                "step size {} is unstable on task {}: eta * (lambda_max + weight_decay) = {number} >= 2",
                rule.step_size,
                task.label()
            ),
        ));
    }
    Ok(())
}

/// Rejects step sizes that are unstable on any task the scenario trains on.
/// Composition checks draw their own stable rules and are exempt.
pub fn check_stability(config: &ExperimentConfig) -> Result<()> {
    let rule = &config.rule;
    match config.scenario {
        Scenario::EslGap => require_stable(rule, &esl_gap::potential(config, &reconfig_core::Matrix::identity(config.dim, config.dim))?),
        Scenario::RankDecay => require_stable(rule, &rank_decay::task_pair(config)?.task_a),
        Scenario::ThresholdSweep => {
            for task in threshold_sweep::training_tasks(config)? {
                require_stable(rule, &task)?;
            }
            Ok(())
        }
        Scenario::ProxyProbe => require_stable(rule, &proxy_probe::graded_task(&proxy_probe::task_pair(config)?, config)?),
        Scenario::CompositionCheck => Ok(()),
    }
}
