//! Experiment configuration files.
//!
//! A config is TOML with a mandatory `[model]` block mirroring the model
//! parameters and a mandatory `[run]` block holding the master seed.

use mmq_core::hjb::{CostModel, SolverOptions};
use mmq_core::stability::{ScanConfig, ScanVariant};
use mmq_core::{EnvGenerator, Grid, MarkovControl, ModelParams, RateTable};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub label: String,
    pub model: ModelBlock,
    #[serde(default)]
    pub policy: PolicyBlock,
    pub cost: Option<CostModel>,
    pub solver: Option<SolverBlock>,
    pub run: RunBlock,
    #[serde(default)]
    pub stability: StabilityBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

/// Rate tables are `classes x environment states`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub n: u64,
    pub alpha: f64,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
    pub mu: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<f64>>,
    pub lambda_hat: Vec<Vec<f64>>,
    pub mu_hat: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    #[default]
    StaticPriority,
    OmegaControl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ControlSpec {
    LastClass,
    Constant { u: Vec<f64> },
    /// The minimizer field of an ergodic solve with the `[solver]` and `[cost]` blocks.
    Hjb,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyBlock {
    #[serde(default)]
    pub kind: PolicyKind,
    pub kappa: Option<f64>,
    pub control: Option<ControlSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CriterionKind {
    Ergodic,
    Discounted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    pub half_width: Vec<f64>,
    pub h: Vec<f64>,
    pub criterion: Option<CriterionKind>,
    pub theta: Option<f64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub truncation_radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    pub seed: u64,
    pub horizon: Option<f64>,
    pub dt: Option<f64>,
    pub replications: Option<usize>,
    pub reference_replications: Option<usize>,
    pub n_list: Option<Vec<u64>>,
    pub t_star: Option<f64>,
    /// Diffusion-scaled initial state; the fluid point when absent.
    pub x0: Option<Vec<f64>>,
    pub burn_in: Option<f64>,
    pub batches: Option<usize>,
    pub stride: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityBlock {
    pub variant: Option<ScanVariant>,
    pub m: Option<u32>,
    pub xi: Option<Vec<f64>>,
    pub c0: Option<f64>,
    pub c_far: Option<f64>,
    pub far_stride: Option<usize>,
    pub core_radius: Option<f64>,
    pub worst: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default = "default_dir")]
    pub dir: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            formats: default_formats(),
        }
    }
}

fn default_dir() -> String {
    "runs".into()
}

fn default_formats() -> Vec<String> {
    vec!["json".into(), "csv".into()]
}

/// Command-line values that replace config entries.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Overrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_h: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub criterion: Option<CriterionKind>,
}

fn field(path: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{path}: {msg}"))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), CliError> {
        if self.label.is_empty() || self.label.contains(['/', '\\']) || self.label.starts_with('.') {
            return Err(field("label", "must be a plain, non-empty directory name"));
        }
        for f in &self.output.formats {
            if f != "json" && f != "csv" {
                return Err(field("output.formats", format!("unknown format {f:?}")));
            }
        }
        Ok(())
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.run.seed = s;
        }
        if let Some(n) = o.n {
            self.model.n = n;
        }
        if let Some(t) = o.horizon {
            self.run.horizon = Some(t);
        }
        if let Some(dt) = o.dt {
            self.run.dt = Some(dt);
        }
        if let (Some(h), Some(s)) = (o.grid_h, self.solver.as_mut()) {
            s.h = vec![h; s.half_width.len()];
        }
        if let (Some(c), Some(s)) = (o.criterion, self.solver.as_mut()) {
            s.criterion = Some(c);
        }
    }

    pub fn params(&self) -> Result<ModelParams, CliError> {
        let m = &self.model;
        let table = |name: &str, rows: &Vec<Vec<f64>>| {
            RateTable::new(rows.clone()).map_err(|e| field(&format!("model.{name}"), e))
        };
        let env = EnvGenerator::from_rows(&m.q, m.alpha, m.n).map_err(|e| field("model.Q", e))?;
        ModelParams::new(
            env,
            table("lambda", &m.lambda)?,
            table("mu", &m.mu)?,
            table("gamma", &m.gamma)?,
            table("lambda_hat", &m.lambda_hat)?,
            table("mu_hat", &m.mu_hat)?,
        )
        .map_err(|e| field("model", e))
    }

    pub fn wants(&self, format: &str) -> bool {
        self.output.formats.iter().any(|f| f == format)
    }

    pub fn horizon(&self, cmd: &str) -> Result<f64, CliError> {
        require(self.run.horizon, "run.horizon", cmd)
    }

    pub fn dt(&self) -> f64 {
        self.run.dt.unwrap_or(mmq_core::diffusion::DEFAULT_DT)
    }

    pub fn replications(&self) -> usize {
        self.run.replications.unwrap_or(1)
    }

    pub fn n_list(&self, cmd: &str) -> Result<Vec<u64>, CliError> {
        require(self.run.n_list.clone(), "run.n_list", cmd)
    }

    pub fn cost(&self, cmd: &str) -> Result<CostModel, CliError> {
        require(self.cost, "cost", cmd)
    }

    pub fn solver(&self, cmd: &str) -> Result<&SolverBlock, CliError> {
        self.solver
            .as_ref()
            .ok_or_else(|| field("solver", format!("required by `{cmd}`")))
    }

    pub fn scan_config(&self) -> ScanConfig {
        let s = &self.stability;
        let d = ScanConfig::default();
        ScanConfig {
            variant: s.variant.unwrap_or(d.variant),
            m: s.m.unwrap_or(d.m),
            xi: s.xi.clone(),
            c0: s.c0.unwrap_or(d.c0),
            c_far: s.c_far.unwrap_or(d.c_far),
            far_stride: s.far_stride.unwrap_or(d.far_stride),
            core_radius: s.core_radius.unwrap_or(d.core_radius),
            worst: s.worst.unwrap_or(d.worst),
        }
    }
}

fn require<T>(v: Option<T>, path: &str, cmd: &str) -> Result<T, CliError> {
    v.ok_or_else(|| field(path, format!("required by `{cmd}`")))
}

impl SolverBlock {
    pub fn grid(&self) -> Result<Grid, CliError> {
        if self.half_width.len() != self.h.len() {
            return Err(field("solver.h", "must have one entry per solver.half_width entry"));
        }
        Grid::symmetric(&self.half_width, &self.h).map_err(|e| field("solver", e))
    }

    pub fn options(&self) -> SolverOptions {
        let d = SolverOptions::default();
        SolverOptions {
            tol: self.tol.unwrap_or(d.tol),
            max_iter: self.max_iter.unwrap_or(d.max_iter),
        }
    }

    pub fn criterion(&self) -> CriterionKind {
        self.criterion.unwrap_or(CriterionKind::Ergodic)
    }

    pub fn theta(&self) -> Result<f64, CliError> {
        self.theta
            .ok_or_else(|| field("solver.theta", "required for the discounted criterion"))
    }

    /// Defaults to 80% of the smallest grid half-width.
    pub fn truncation_radius(&self) -> f64 {
        self.truncation_radius
            .unwrap_or_else(|| 0.8 * self.half_width.iter().copied().fold(f64::INFINITY, f64::min))
    }
}

impl ControlSpec {
    pub fn is_solver(&self) -> bool {
        matches!(self, Self::Hjb)
    }

    /// Non-solver controls; `Hjb` is resolved by the caller.
    pub fn fixed(&self, d: usize) -> Result<Option<MarkovControl>, CliError> {
        match self {
            Self::LastClass => Ok(Some(MarkovControl::last_class(d))),
            Self::Constant { u } => {
                if u.len() != d {
                    return Err(field("policy.control.u", format!("needs {d} entries")));
                }
                MarkovControl::constant(u.clone())
                    .map(Some)
                    .map_err(|e| field("policy.control.u", e))
            }
            Self::Hjb => Ok(None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
label = "m"
[model]
n = 100
alpha = 1.0
Q = [[-1.0, 1.0], [1.0, -1.0]]
lambda = [[1.5, 0.5]]
mu = [[1.0, 1.0]]
gamma = [[0.5, 0.5]]
lambda_hat = [[0.0, 0.0]]
mu_hat = [[0.0, 0.0]]
[run]
seed = 7
"#;

    #[test]
    fn parses_minimal() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.run.seed, 7);
        assert_eq!(c.policy.kind, PolicyKind::StaticPriority);
        c.params().unwrap();
        assert!(c.horizon("simulate").is_err());
    }

    #[test]
    fn seed_is_required() {
        let text = MINIMAL.replace("seed = 7", "");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn model_block_is_required() {
        let text = "label = \"x\"\n[run]\nseed = 1\n";
        let err = ExperimentConfig::parse(text).unwrap_err();
        assert!(err.to_string().contains("model"), "{err}");
    }

    #[test]
    fn shape_errors_name_the_field() {
        let text = MINIMAL.replace("mu = [[1.0, 1.0]]", "mu = [[1.0]]");
        let err = ExperimentConfig::parse(&text).unwrap().params().unwrap_err();
        assert!(err.to_string().contains("model: dimension mismatch: mu"), "{err}");
    }
}
