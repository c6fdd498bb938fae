use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::NetworkConfig;
use crate::problems::{Problem, ProblemKind, ProblemOptions};
use crate::refsolvers::NoiseLevel;
use crate::training::{Physics, Schedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum Approach {
    /// High-fidelity physics plus low-fidelity labeled data.
    #[default]
    Mf,
    /// High-fidelity physics only.
    SingleHf,
    /// High-fidelity physics plus exact data at the low-fidelity locations.
    HfWithData,
}

impl Approach {
    pub const ALL: [Approach; 3] = [Approach::Mf, Approach::SingleHf, Approach::HfWithData];

    pub fn name(self) -> &'static str {
        match self {
            Approach::Mf => "mf",
            Approach::SingleHf => "single-hf",
            Approach::HfWithData => "hf-with-data",
        }
    }
}

impl FromStr for Approach {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Approach::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown approach `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub level: f64,
    #[serde(default)]
    pub interpretation: NoiseLevel,
}

/// Reference-solver settings. Unset fields take the benchmark values of the
/// chosen problem.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Low-fidelity time step (pendulum) or mesh size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lf_step: Option<f64>,
    /// High-fidelity time step (pendulum) or mesh size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hf_step: Option<f64>,
    /// Time step of both reaction-transport simulations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_step: Option<f64>,
    /// Number of low-fidelity observation points along each input axis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lf_grid: Option<Vec<usize>>,
    /// High-fidelity observation locations of inverse problems.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observations: Option<Vec<Vec<f64>>>,
    /// Fixed low-fidelity parameters instead of a seeded draw.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lf_parameters: Option<Vec<f64>>,
    /// Number of test points along each input axis (reaction problem).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_grid: Option<Vec<usize>>,
    /// Gaussian noise added to the low-fidelity labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Residual point count; ignored when the dataset carries residual rows.
    pub residual_points: usize,
    /// Dataset CSV. Relative paths are resolved against the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorConfig>,
}

/// Declarative description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemKind,
    #[serde(default)]
    pub options: ProblemOptions,
    pub network: NetworkConfig,
    #[serde(default)]
    pub schedule: Schedule,
    pub data: DataConfig,
    #[serde(default)]
    pub approach: Approach,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

const PRESETS: [(&str, &str); 8] = [
    ("pendulum", include_str!("../../presets/pendulum.json")),
    ("hydraulic-flux", include_str!("../../presets/hydraulic-flux.json")),
    ("hydraulic-diff", include_str!("../../presets/hydraulic-diff.json")),
    ("chemreact", include_str!("../../presets/chemreact.json")),
    ("grayscott", include_str!("../../presets/grayscott.json")),
    ("lid-steady", include_str!("../../presets/lid-steady.json")),
    ("lid-unsteady", include_str!("../../presets/lid-unsteady.json")),
    ("lid-inverse-re", include_str!("../../presets/lid-inverse-re.json")),
];

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Reads a config file and resolves its dataset path.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        if let (Some(ds), Some(dir)) = (&cfg.data.dataset, path.parent()) {
            if ds.is_relative() {
                cfg.data.dataset = Some(dir.join(ds));
            }
        }
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// JSON schema of the config format.
    pub fn json_schema() -> serde_json::Value {
        serde_json::to_value(schemars::schema_for!(RunConfig)).unwrap_or_default()
    }

    pub fn preset_names() -> impl Iterator<Item = &'static str> {
        PRESETS.iter().map(|(n, _)| *n)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let (_, text) = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::Config(format!("no preset named `{name}`")))?;
        Self::from_json(text)
    }

    /// Multiplies both iteration budgets by `scale`.
    pub fn scaled(mut self, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Config(format!("scale must be positive, got {scale}")));
        }
        self.schedule.adam_iters = (self.schedule.adam_iters as f64 * scale).round() as usize;
        self.schedule.lbfgs_iters = (self.schedule.lbfgs_iters as f64 * scale).round() as usize;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        // The inlet flux may come from generated data later.
        let mut opts = self.options.clone();
        opts.inlet_flux.get_or_insert(0.0);
        let problem = Problem::build(self.problem, &opts)?;
        let net = &self.network;
        if net.hidden.is_empty() || net.hidden.contains(&0) {
            return Err(Error::Config("network needs non-empty hidden layers of positive width".into()));
        }
        if net.feature_depth > net.hidden.len() {
            return Err(Error::Config(format!(
                "feature depth {} exceeds the {} interior layers",
                net.feature_depth,
                net.hidden.len()
            )));
        }
        if !(net.feature_distance >= 0.0 && net.feature_distance.is_finite()) {
            return Err(Error::Config("feature distance must be finite and non-negative".into()));
        }
        if let Some(f) = &net.fourier {
            if f.features == 0 || f.sigma.len() != problem.input_dims() {
                return Err(Error::Config(format!(
                    "Fourier embedding needs features > 0 and {} wave numbers",
                    problem.input_dims()
                )));
            }
        }
        let s = &self.schedule;
        if s.adam_iters + s.lbfgs_iters == 0 {
            return Err(Error::Config("schedule has no iterations".into()));
        }
        if !(s.lr.initial > 0.0 && s.lr.factor > 0.0 && s.lr.every > 0) {
            return Err(Error::Config("learning-rate schedule must be positive".into()));
        }
        if !(s.rho >= 0.0 && s.rho.is_finite()) {
            return Err(Error::Config("weight learning rate must be non-negative".into()));
        }
        if self.data.residual_points == 0 && self.data.dataset.is_none() {
            return Err(Error::Config("residual_points must be positive".into()));
        }
        let inverse = !problem.parameter_names().is_empty();
        if inverse && self.approach == Approach::HfWithData {
            return Err(Error::Config("hf-with-data applies to forward problems only".into()));
        }
        if let Some(g) = &self.data.generator {
            if let Some(n) = &g.noise {
                if !(n.level >= 0.0 && n.level.is_finite()) {
                    return Err(Error::Config("noise level must be non-negative".into()));
                }
            }
        }
        Ok(())
    }
}
