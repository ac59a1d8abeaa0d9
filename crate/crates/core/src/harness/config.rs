use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::design::ReferenceSpec;
use crate::acquisition::Method;
use crate::error::{Error, Result};
use crate::simulators::{SimulatorKind, SimulatorSpec};

/// Flat experiment configuration, read from a TOML file.
///
/// Every key has a default matching the synthetic experiments; epidemic
/// overrides (`susceptible`, `seeded`, `days`) fall back to the simulator's own values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub simulator: SimulatorKind,
    pub n0: usize,
    pub reps0: usize,
    /// Simulation evaluations per stage.
    pub b: usize,
    /// Number of stages.
    #[serde(rename = "T_b")]
    pub stages: usize,
    /// Replicates per new exploration point.
    pub a_breve: usize,
    /// New points per exploration batch; defaults to `b / a_breve`.
    pub b_breve: Option<usize>,
    pub candidates: usize,
    #[serde(rename = "ref")]
    pub reference: Option<ReferenceSpec>,
    pub method: Method,
    /// Experiment replicates (each with fresh observed data and initial design).
    pub replicates: usize,
    pub seed: u64,
    pub outdir: PathBuf,

    /// Monte Carlo replicates for epidemic expected outputs in the truth table.
    pub truth_reps: usize,
    /// Monte Carlo replicates for the epidemic `eta(theta*)` behind the observed data.
    pub mean_reps: usize,
    /// Warm-start each stage's emulator from the previous stage's fit.
    pub warm_start: bool,
    /// Fresh optimizer starts for a cold fit.
    pub restarts: usize,
    pub max_iter: usize,
    /// Interval-score level.
    pub alpha: f64,
    /// Methods and batch sizes for `bench`; stage counts keep `T_b * b` fixed.
    pub methods: Vec<Method>,
    pub batch_sizes: Vec<usize>,
    /// Reuse a precomputed expected-output table instead of recomputing it.
    pub truth_table: Option<PathBuf>,
    pub dump_fields: bool,

    pub theta_star: Option<Vec<f64>>,
    pub obs_variance: Option<Vec<f64>>,
    pub susceptible: Option<u64>,
    pub seeded: Option<u64>,
    pub days: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            simulator: SimulatorKind::Unimodal,
            n0: 15,
            reps0: 2,
            b: 16,
            stages: 16,
            a_breve: 2,
            b_breve: None,
            candidates: 200,
            reference: None,
            method: Method::Ivar,
            replicates: 1,
            seed: 1,
            outdir: PathBuf::from("out"),
            truth_reps: 1000,
            mean_reps: 1000,
            warm_start: true,
            restarts: 5,
            max_iter: 200,
            alpha: 0.1,
            methods: Method::ALL.to_vec(),
            batch_sizes: vec![8, 16, 32, 64],
            truth_table: None,
            dump_fields: false,
            theta_star: None,
            obs_variance: None,
            susceptible: None,
            seeded: None,
            days: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always serializable")
    }

    pub fn b_breve(&self) -> usize {
        self.b_breve.unwrap_or(self.b / self.a_breve.max(1))
    }

    pub fn reference_spec(&self) -> ReferenceSpec {
        self.reference
            .unwrap_or_else(|| ReferenceSpec::default_for(self.simulator_spec().p()))
    }

    /// Total simulation budget after the initial design.
    pub fn budget(&self) -> usize {
        self.b * self.stages
    }

    pub fn simulator_spec(&self) -> SimulatorSpec {
        let mut spec = SimulatorSpec::new(self.simulator);
        if let Some(t) = &self.theta_star {
            spec.theta_star = t.clone();
        }
        if self.obs_variance.is_some() {
            spec.obs_variance = self.obs_variance.clone();
        }
        if let Some(v) = self.susceptible {
            spec.setup.susceptible = v;
        }
        if let Some(v) = self.seeded {
            spec.setup.seeded = v;
        }
        if let Some(v) = self.days {
            spec.setup.days = v;
        }
        spec
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n0 == 0 || self.reps0 == 0 {
            return fail("n0 and reps0 must be positive".into());
        }
        if self.b == 0 || self.stages == 0 {
            return fail("b and T_b must be positive".into());
        }
        if self.method != Method::Unif {
            if self.a_breve == 0 || self.b_breve() == 0 || self.a_breve * self.b_breve() != self.b {
                return fail(format!(
                    "a_breve * b_breve must equal b (got {} * {} vs {})",
                    self.a_breve,
                    self.b_breve(),
                    self.b
                ));
            }
            if self.candidates == 0 {
                return fail("candidates must be positive".into());
            }
        }
        if self.replicates == 0 {
            return fail("replicates must be positive".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.simulator.is_epidemic() && (self.truth_reps == 0 || self.mean_reps == 0) {
            return fail("epidemic simulators need truth_reps and mean_reps >= 1".into());
        }
        if self.methods.is_empty() || self.batch_sizes.contains(&0) {
            return fail("bench needs at least one method and positive batch sizes".into());
        }
        self.simulator_spec().validate()
    }

    /// Copy of this configuration for one cell of the benchmark matrix. The
    /// stage count is rescaled so every batch size spends the same budget.
    pub fn cell(&self, method: Method, b: usize) -> Result<Self> {
        let budget = self.budget();
        if !budget.is_multiple_of(b) {
            return Err(Error::Config(format!(
                "batch size {b} does not divide the budget {budget}"
            )));
        }
        let mut c = self.clone();
        c.method = method;
        c.b = b;
        c.stages = budget / b;
        c.b_breve = None;
        if method != Method::Unif && !b.is_multiple_of(c.a_breve) {
            return Err(Error::Config(format!(
                "batch size {b} is not a multiple of a_breve {}",
                c.a_breve
            )));
        }
        Ok(c)
    }
}
