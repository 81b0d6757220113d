use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cost::CostModel;
use crate::discretize::{BoundaryData, Grid, SemidiscreteSystem};
use crate::error::{Error, Result};
use crate::hydraulics::{FeddesParams, HydraulicModel};
use crate::integrate::{ControlMode, IntegratorConfig, NoiseConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Controlled,
    Uncontrolled,
    Both,
}

impl RunMode {
    pub fn includes(self, mode: ControlMode) -> bool {
        match self {
            RunMode::Both => true,
            RunMode::Controlled => mode == ControlMode::Sdre,
            RunMode::Uncontrolled => mode == ControlMode::Uncontrolled,
        }
    }
}

impl std::str::FromStr for RunMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "controlled" => Ok(RunMode::Controlled),
            "uncontrolled" => Ok(RunMode::Uncontrolled),
            "both" => Ok(RunMode::Both),
            other => Err(Error::Config(format!(
                "unknown mode {other:?} (expected controlled, uncontrolled or both)"
            ))),
        }
    }
}

/// Noise settings as written in a config file; the seed lives at top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSettings {
    pub enabled: bool,
    pub epsilon: f64,
    pub controller_sees_noise: bool,
}

impl Default for NoiseSettings {
    fn default() -> Self {
        let n = NoiseConfig::default();
        Self {
            enabled: n.enabled,
            epsilon: n.epsilon,
            controller_sees_noise: n.controller_sees_noise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscretizationSettings {
    pub null_augmentation: bool,
    pub gravity_sign: f64,
    pub include_fixed_bottom_node: bool,
}

impl Default for DiscretizationSettings {
    fn default() -> Self {
        Self {
            null_augmentation: true,
            gravity_sign: -1.0,
            include_fixed_bottom_node: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSettings {
    pub dir: PathBuf,
}

impl Default for OutputSettings {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub seed: u64,
    pub mode: RunMode,
    pub lambda: f64,
    pub model: HydraulicModel,
    pub feddes: FeddesParams,
    pub grid: Grid,
    pub boundary: BoundaryData,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub noise: NoiseSettings,
    #[serde(default)]
    pub discretization: DiscretizationSettings,
    #[serde(default)]
    pub output: OutputSettings,
}

/// 1-based line of the first occurrence of `key = ...` or `[key]` in `text`.
fn find_key_line(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|line| {
        let l = line.trim_start();
        let header = l.strip_prefix('[').map(|r| r.trim_end().trim_end_matches(']'));
        if header.is_some_and(|h| h == key || h.ends_with(&format!(".{key}"))) {
            return true;
        }
        l.strip_prefix(key).is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl ExperimentConfig {
    /// Parse and validate. Errors carry the offending line where one exists.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let msg = e.message().trim().to_string();
            match e.span() {
                Some(span) => Error::Config(format!("line {}: {msg}", line_of_offset(text, span.start))),
                None => Error::Config(msg),
            }
        })?;
        if let Err((key, msg)) = cfg.check() {
            return Err(Error::Config(match find_key_line(text, key) {
                Some(line) => format!("line {line}: {key}: {msg}"),
                None => format!("{key}: {msg}"),
            }));
        }
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.check().map_err(|(key, msg)| Error::Config(format!("{key}: {msg}")))
    }

    fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        fn on<T>(key: &'static str, r: Result<T>) -> std::result::Result<(), (&'static str, String)> {
            r.map(|_| ()).map_err(|e| (key, e.to_string()))
        }
        if self.name.trim().is_empty() {
            return Err(("name", "must not be empty".into()));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(("lambda", format!("must be positive, got {}", self.lambda)));
        }
        on("model", self.model.validate())?;
        on("feddes", self.feddes.validate())?;
        on("grid", self.grid.validate())?;
        on("boundary", self.boundary.validate())?;
        if self.boundary.h_top >= 0.0
            || self.boundary.h_bottom.max_value() >= 0.0
            || self.boundary.h_initial.max_value() >= 0.0
        {
            return Err(("boundary", "heads must be negative (unsaturated)".into()));
        }
        on("integrator", self.integrator.validate())?;
        on("epsilon", self.noise().validate())?;
        if !matches!(self.discretization.gravity_sign, s if s == 1.0 || s == -1.0) {
            return Err(("gravity_sign", "must be 1 or -1".into()));
        }
        Ok(())
    }

    pub fn system(&self) -> Result<SemidiscreteSystem<HydraulicModel>> {
        let grid = Grid::new(self.grid.depth, self.grid.n_nodes)?;
        let mut sys = SemidiscreteSystem::new(grid, self.model, self.feddes, self.boundary.clone());
        sys.use_null_augmentation = self.discretization.null_augmentation;
        sys.gravity_sign = self.discretization.gravity_sign;
        Ok(sys)
    }

    pub fn cost_model(&self) -> Result<CostModel> {
        let dz = self.grid.depth / (self.grid.n_nodes as f64 - 1.0);
        let mut cm = CostModel::new(self.feddes, dz, self.lambda)?;
        cm.include_fixed_bottom_node = self.discretization.include_fixed_bottom_node;
        Ok(cm)
    }

    pub fn integrator_for(&self, mode: ControlMode) -> IntegratorConfig {
        IntegratorConfig {
            control_mode: mode,
            ..self.integrator.clone()
        }
    }

    pub fn noise(&self) -> NoiseConfig {
        NoiseConfig {
            enabled: self.noise.enabled,
            epsilon: self.noise.epsilon,
            seed: self.seed,
            controller_sees_noise: self.noise.controller_sees_noise,
        }
    }
}
