//! Experiment configuration.
//!
//! One TOML file per run. Unknown keys are rejected, and sections that a
//! scenario does not use may be omitted. Defaults are desk-scale: `dim = 16`,
//! `k_a = 8`, 64 realizations and phases of at most 2000 steps.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use reconfig_core::{StepKind, StepRule, TaskPairSpec};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    EslGap,
    RankDecay,
    ThresholdSweep,
    CompositionCheck,
    ProxyProbe,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::EslGap,
        Scenario::RankDecay,
        Scenario::ThresholdSweep,
        Scenario::CompositionCheck,
        Scenario::ProxyProbe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::EslGap => "esl-gap",
            Scenario::RankDecay => "rank-decay",
            Scenario::ThresholdSweep => "threshold-sweep",
            Scenario::CompositionCheck => "composition-check",
            Scenario::ProxyProbe => "proxy-probe",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Scenario::EslGap => "Langevin relaxation vs. optimal-transport geodesic: dissipation and speed-limit slack",
            Scenario::RankDecay => "effective and compatible rank along training with weight decay",
            Scenario::ThresholdSweep => "forgetting vs. predicted capacity over a grid of m_B and usable counts",
            Scenario::CompositionCheck => "randomized Jacobian composition and submultiplicativity checks",
            Scenario::ProxyProbe => "gradient-covariance participation ratio vs. usable direction count",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Scenario::ALL.iter().map(|s| s.name()).collect();
                HarnessError::config("scenario", format!("unknown scenario {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// How the synthetic task pairs are generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskFamily {
    /// Range of task-A curvatures on the normal directions.
    pub normal_range: (f64, f64),
    /// Tilt (radians) of task-B curvature directions out of `Q_A`.
    pub normal_coupling: f64,
    /// Eigenvalue of the restricted task-B curvature on each needed direction.
    pub b_curvature: f64,
    /// Offset of task B's minimizer along every preserving direction.
    pub b_offset: f64,
}

impl Default for TaskFamily {
    fn default() -> Self {
        TaskFamily {
            normal_range: (1.0, 2.0),
            normal_coupling: std::f64::consts::FRAC_PI_4,
            b_curvature: 1.0,
            b_offset: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// Singular-value threshold for usable compatible directions.
    pub tau_sigma: f64,
    /// Task-A loss tolerance of the preserving manifold.
    pub eps_a: f64,
    /// Task-B loss that counts as learned.
    pub eps_b: f64,
    /// Forgetting at or below this is classified compatible.
    pub eps_low: f64,
    /// Forgetting at or above this is classified incompatible.
    pub eps_high: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            tau_sigma: 1e-3,
            eps_a: 1e-6,
            eps_b: 1e-4,
            eps_low: 1e-6,
            eps_high: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepGrid {
    pub m_b_targets: Vec<usize>,
    /// Number of compatible directions collapsed in phase 1.
    pub contraction_budgets: Vec<usize>,
    /// Strength of the phase-1 penalty on the collapsed directions.
    pub contraction_strength: f64,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            m_b_targets: (0..=8).collect(),
            contraction_budgets: (0..=8).collect(),
            contraction_strength: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EslSettings {
    /// Eigenvalues of the relaxation potential; their count fixes the dimension.
    pub curvatures: Vec<f64>,
    /// Standard deviation of the random start means.
    pub start_spread: f64,
    /// Isotropic variance of the start states.
    pub start_variance: f64,
    /// Geodesic discretizations reported in the refinement table.
    pub interpolation_steps: Vec<usize>,
}

impl Default for EslSettings {
    fn default() -> Self {
        EslSettings {
            curvatures: vec![4.0, 0.25],
            start_spread: 2.0,
            start_variance: 0.2,
            interpolation_steps: vec![10, 100, 1000],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompositionSettings {
    pub n_splits: usize,
    pub n_pairs: usize,
    pub max_pair_dim: usize,
}

impl Default for CompositionSettings {
    fn default() -> Self {
        CompositionSettings {
            n_splits: 1000,
            n_pairs: 1000,
            max_pair_dim: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSettings {
    /// Probe gradients drawn per checkpoint, per parameter dimension.
    pub samples_per_dim: usize,
    pub checkpoint_every: usize,
    /// Largest per-direction decay strength; direction `j` of `Q_A` gets
    /// `(j + 1) / k_a` of it.
    pub penalty_strength: f64,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        ProbeSettings {
            samples_per_dim: 100,
            checkpoint_every: 20,
            penalty_strength: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub master_seed: u64,
    pub dim: usize,
    pub k_a: usize,
    pub n_realizations: usize,
    /// Steps per phase.
    pub n_steps: usize,
    /// Step limit for phases that run until a loss target is met.
    pub max_steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub rule: StepRule,
    #[serde(default)]
    pub tasks: TaskFamily,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub esl: Option<EslSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub composition: Option<CompositionSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeSettings>,
}

impl ExperimentConfig {
    pub fn default_for(scenario: Scenario) -> Self {
        let base = ExperimentConfig {
            scenario,
            master_seed: 20_240_501,
            dim: 16,
            k_a: 8,
            n_realizations: 64,
            n_steps: 200,
            max_steps: 2000,
            output_dir: None,
            rule: StepRule::gradient_descent(0.1),
            tasks: TaskFamily::default(),
            thresholds: Thresholds::default(),
            sweep: None,
            esl: None,
            composition: None,
            probe: None,
        };
        match scenario {
            Scenario::EslGap => ExperimentConfig {
                dim: 2,
                k_a: 1,
                n_realizations: 16,
                n_steps: 400,
                rule: StepRule::langevin(0.01, 1.0),
                esl: Some(EslSettings::default()),
                ..base
            },
            Scenario::RankDecay => ExperimentConfig {
                rule: StepRule::langevin(0.1, 0.01).with_weight_decay(0.1),
                n_steps: 100,
                ..base
            },
            Scenario::ThresholdSweep => ExperimentConfig {
                n_realizations: 1,
                sweep: Some(SweepGrid::default()),
                ..base
            },
            Scenario::CompositionCheck => ExperimentConfig {
                composition: Some(CompositionSettings::default()),
                ..base
            },
            Scenario::ProxyProbe => ExperimentConfig {
                n_realizations: 1,
                n_steps: 600,
                probe: Some(ProbeSettings::default()),
                ..base
            },
        }
    }

    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| HarnessError::Parse {
            path: origin.to_path_buf(),
            message: e.message().to_string(),
        })
    }

    /// Reads and validates a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::io(format!("reading {}", path.display()), e))?;
        let config = Self::from_toml_str(&text, path)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn sweep(&self) -> SweepGrid {
        self.sweep.clone().unwrap_or_default()
    }

    pub fn esl(&self) -> EslSettings {
        self.esl.clone().unwrap_or_default()
    }

    pub fn composition(&self) -> CompositionSettings {
        self.composition.clone().unwrap_or_default()
    }

    pub fn probe(&self) -> ProbeSettings {
        self.probe.clone().unwrap_or_default()
    }

    /// Task pair with the configured family and the given restricted
    /// task-B spectrum.
    pub fn task_pair_spec(&self, spectrum_b_on_a: Vec<f64>, rotation_seed: u64) -> TaskPairSpec {
        let mut spec = TaskPairSpec::new(self.dim, self.k_a, spectrum_b_on_a, rotation_seed);
        spec.normal_range = self.tasks.normal_range;
        spec.normal_coupling = self.tasks.normal_coupling;
        spec.offset_b_on_a = vec![self.tasks.b_offset; self.k_a];
        spec
    }

    /// Field-level checks, including step-size stability on every task the
    /// scenario will train on.
    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, message: String| Err(HarnessError::config(field, message));
        if self.dim < 2 {
            return fail("dim", format!("must be >= 2, got {}", self.dim));
        }
        if self.k_a == 0 || self.k_a >= self.dim {
            return fail("k_a", format!("must satisfy 0 < k_a < dim = {}, got {}", self.dim, self.k_a));
        }
        if self.n_realizations == 0 {
            return fail("n_realizations", "must be >= 1".into());
        }
        if self.max_steps == 0 {
            return fail("max_steps", "must be >= 1".into());
        }
        let rule = &self.rule;
        if !(rule.step_size > 0.0 && rule.step_size.is_finite()) {
            return fail("rule.step_size", format!("must be finite and > 0, got {}", rule.step_size));
        }
        if !(rule.noise_scale >= 0.0 && rule.noise_scale.is_finite()) {
            return fail("rule.noise_scale", format!("must be finite and >= 0, got {}", rule.noise_scale));
        }
        if !(rule.weight_decay >= 0.0 && rule.weight_decay.is_finite()) {
            return fail("rule.weight_decay", format!("must be finite and >= 0, got {}", rule.weight_decay));
        }
        self.validate_thresholds()?;
        let (lo, hi) = self.tasks.normal_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return fail("tasks.normal_range", format!("must satisfy 0 < lo <= hi, got ({lo}, {hi})"));
        }
        if !(self.tasks.normal_coupling >= 0.0 && self.tasks.normal_coupling < std::f64::consts::FRAC_PI_2) {
            return fail("tasks.normal_coupling", format!("must lie in [0, pi/2), got {}", self.tasks.normal_coupling));
        }
        if !(self.tasks.b_curvature > 0.0 && self.tasks.b_curvature.is_finite()) {
            return fail("tasks.b_curvature", format!("must be finite and > 0, got {}", self.tasks.b_curvature));
        }
        if !self.tasks.b_offset.is_finite() {
            return fail("tasks.b_offset", "must be finite".into());
        }
        match self.scenario {
            Scenario::EslGap => self.validate_esl()?,
            Scenario::ThresholdSweep => self.validate_sweep()?,
            Scenario::CompositionCheck => {
                let c = self.composition();
                if c.n_splits == 0 || c.n_pairs == 0 {
                    return fail("composition", "n_splits and n_pairs must be >= 1".into());
                }
                if c.max_pair_dim < 2 {
                    return fail("composition.max_pair_dim", format!("must be >= 2, got {}", c.max_pair_dim));
                }
            }
            Scenario::ProxyProbe => {
                let p = self.probe();
                if p.samples_per_dim == 0 || p.checkpoint_every == 0 {
                    return fail("probe", "samples_per_dim and checkpoint_every must be >= 1".into());
                }
                if !(p.penalty_strength >= 0.0 && p.penalty_strength.is_finite()) {
                    return fail("probe.penalty_strength", format!("must be finite and >= 0, got {}", p.penalty_strength));
                }
            }
            Scenario::RankDecay => {}
        }
        crate::scenarios::check_stability(self)
    }

    fn validate_thresholds(&self) -> Result<()> {
        let t = &self.thresholds;
        for (name, v) in [
            ("thresholds.tau_sigma", t.tau_sigma),
            ("thresholds.eps_a", t.eps_a),
            ("thresholds.eps_b", t.eps_b),
            ("thresholds.eps_low", t.eps_low),
            ("thresholds.eps_high", t.eps_high),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(HarnessError::config(name, format!("must be finite and > 0, got {v}")));
            }
        }
        if t.eps_high <= t.eps_low {
            return Err(HarnessError::config(
                "thresholds.eps_high",
                format!("must exceed eps_low = {}, got {}", t.eps_low, t.eps_high),
            ));
        }
        Ok(())
    }

    fn validate_esl(&self) -> Result<()> {
        let esl = self.esl();
        if self.rule.kind != StepKind::Langevin {
            return Err(HarnessError::config("rule.kind", "esl-gap needs a langevin rule"));
        }
        if !(self.rule.noise_scale > 0.0) {
            return Err(HarnessError::config("rule.noise_scale", "esl-gap needs a temperature > 0"));
        }
        if self.rule.weight_decay != 0.0 {
            return Err(HarnessError::config("rule.weight_decay", "esl-gap requires weight_decay = 0"));
        }
        if esl.curvatures.len() != self.dim {
            return Err(HarnessError::config(
                "esl.curvatures",
                format!("needs dim = {} entries, got {}", self.dim, esl.curvatures.len()),
            ));
        }
        if esl.curvatures.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return Err(HarnessError::config("esl.curvatures", "entries must be finite and > 0"));
        }
        if !(esl.start_variance > 0.0 && esl.start_variance.is_finite()) {
            return Err(HarnessError::config("esl.start_variance", "must be finite and > 0"));
        }
        if !(esl.start_spread >= 0.0 && esl.start_spread.is_finite()) {
            return Err(HarnessError::config("esl.start_spread", "must be finite and >= 0"));
        }
        if esl.interpolation_steps.is_empty() || esl.interpolation_steps.contains(&0) {
            return Err(HarnessError::config("esl.interpolation_steps", "must be a nonempty list of positive counts"));
        }
        Ok(())
    }

    fn validate_sweep(&self) -> Result<()> {
        let sweep = self.sweep();
        if sweep.m_b_targets.is_empty() || sweep.contraction_budgets.is_empty() {
            return Err(HarnessError::config("sweep", "m_b_targets and contraction_budgets must be nonempty"));
        }
        if let Some(m) = sweep.m_b_targets.iter().find(|m| **m > self.k_a) {
            return Err(HarnessError::config("sweep.m_b_targets", format!("{m} exceeds k_a = {}", self.k_a)));
        }
        if let Some(b) = sweep.contraction_budgets.iter().find(|b| **b > self.k_a) {
            return Err(HarnessError::config("sweep.contraction_budgets", format!("{b} exceeds k_a = {}", self.k_a)));
        }
        if !(sweep.contraction_strength > 0.0 && sweep.contraction_strength.is_finite()) {
            return Err(HarnessError::config("sweep.contraction_strength", "must be finite and > 0"));
        }
        if self.rule.kind != StepKind::GradientDescent {
            return Err(HarnessError::config("rule.kind", "threshold-sweep runs gradient descent"));
        }
        Ok(())
    }
}
