//! Experiment configuration (TOML).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::causality::CausalityError;
use crate::lifting::{Basis, NoiseMode};
use crate::netmodel::ModelError;
use crate::simulate::SignalSpec;
use crate::sysid::FitMethod;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config syntax: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("causality: {0}")]
    Causality(#[from] CausalityError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Model file, relative to the config file's directory.
    pub model: PathBuf,
    /// Per-element law overrides.
    #[serde(default)]
    pub laws: BTreeMap<String, LawOverride>,
    pub methods: Vec<MethodSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Explicit trial seeds; overrides `seed` and `trials` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Initial states are drawn uniformly from `[-x0_spread, x0_spread]`.
    #[serde(default = "default_x0_spread")]
    pub x0_spread: f64,
    /// Internal RK4 step at most `augmentation / substep_ratio`.
    #[serde(default = "default_substep_ratio")]
    pub substep_ratio: f64,
    #[serde(default)]
    pub fit: FitMethod,
    #[serde(default)]
    pub ridge: f64,
    pub train: TrainSpec,
    pub validate: ValidateSpec,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub law: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inverse: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    #[serde(default = "default_train_trajectories")]
    pub trajectories: usize,
    #[serde(default = "default_horizon")]
    pub t_final: f64,
    pub signal: SignalSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateSpec {
    #[serde(default = "default_horizon")]
    pub t_final: f64,
    pub signal: SignalSpec,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseModeConfig {
    /// Synthetic for state-only bases, measured otherwise.
    #[default]
    Auto,
    Measured,
    Synthetic,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseTarget {
    Train,
    Validate,
    #[default]
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub mode: NoiseModeConfig,
    #[serde(default)]
    pub apply_to: NoiseTarget,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { sigma: 0.0, mode: NoiseModeConfig::Auto, apply_to: NoiseTarget::Both }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MethodKind {
    /// States and all auxiliary variables, anticausal ones passed through the
    /// input feedthrough filter.
    DflFiltered,
    /// Synthetic observables of the states alone.
    Ksos { basis: Basis },
    /// Basis over states and every auxiliary variable, anticausal included.
    Omq { basis: Basis },
    /// Augmented plant; `resistor` defaults to every anticausal resistor and
    /// `value` to the breakpoint rule.
    Al2 {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        resistor: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        value: Option<f64>,
    },
    /// Integrated observables.
    Il2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(flatten)]
    pub kind: MethodKind,
    /// Per-method noise mode, overriding `noise.mode`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_mode: Option<NoiseMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitMethod>,
}

fn basis_tag(b: &Basis) -> String {
    match b {
        Basis::DflAux => "aux".into(),
        Basis::Monomial { degree } => format!("monomial{degree}"),
        Basis::Fourier { order } => format!("fourier{order}"),
        Basis::Composite { parts } => parts.iter().map(basis_tag).collect::<Vec<_>>().join("+"),
    }
}

impl MethodSpec {
    pub fn display_name(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        match &self.kind {
            MethodKind::DflFiltered => "dfl-filtered".into(),
            MethodKind::Ksos { basis } => format!("ksos-{}", basis_tag(basis)),
            MethodKind::Omq { basis } => format!("omq-{}", basis_tag(basis)),
            MethodKind::Al2 { .. } => "al2".into(),
            MethodKind::Il2 => "il2".into(),
        }
    }

    pub fn noise_mode(&self, default: NoiseModeConfig) -> NoiseMode {
        if let Some(m) = self.noise_mode {
            return m;
        }
        match default {
            NoiseModeConfig::Measured => NoiseMode::Measured,
            NoiseModeConfig::Synthetic => NoiseMode::Synthetic,
            NoiseModeConfig::Auto => match self.kind {
                MethodKind::Ksos { .. } => NoiseMode::Synthetic,
                _ => NoiseMode::Measured,
            },
        }
    }
}

fn default_trials() -> usize {
    1
}
fn default_dt() -> f64 {
    1e-2
}
fn default_x0_spread() -> f64 {
    0.2
}
fn default_substep_ratio() -> f64 {
    10.0
}
fn default_train_trajectories() -> usize {
    5
}
fn default_horizon() -> f64 {
    10.0
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a config file; the model path is resolved against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut cfg = Self::parse(&text)?;
        if cfg.model.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.model = dir.join(&cfg.model);
            }
        }
        Ok(cfg)
    }

    pub fn trial_seeds(&self) -> Vec<u64> {
        match &self.seeds {
            Some(s) => s.clone(),
            None => (0..self.trials as u64).map(|i| self.seed.wrapping_add(i)).collect(),
        }
    }

    /// Keep only methods whose display name is listed.
    pub fn select_methods(&mut self, names: &[String]) -> Result<(), ConfigError> {
        for n in names {
            if !self.methods.iter().any(|m| &m.display_name() == n) {
                let known: Vec<String> = self.methods.iter().map(MethodSpec::display_name).collect();
                return Err(ConfigError::Invalid(format!("unknown method `{n}` (configured: {})", known.join(", "))));
            }
        }
        self.methods.retain(|m| names.contains(&m.display_name()));
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.methods.is_empty() {
            return bad("at least one method is required".into());
        }
        let mut names = BTreeSet::new();
        for m in &self.methods {
            if !names.insert(m.display_name()) {
                return bad(format!("duplicate method name `{}`", m.display_name()));
            }
            if let MethodKind::Al2 { value: Some(v), .. } = m.kind {
                if !(v > 0.0 && v.is_finite()) {
                    return bad(format!("al2 value must be positive, got {v}"));
                }
            }
        }
        let seeds = self.trial_seeds();
        if seeds.is_empty() {
            return bad("trials must be at least 1".into());
        }
        if seeds.iter().collect::<BTreeSet<_>>().len() != seeds.len() {
            return bad("trial seeds must be distinct".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        for (what, t) in [("train", self.train.t_final), ("validate", self.validate.t_final)] {
            if crate::simulate::grid_steps(t, self.dt).is_err() || t <= 0.0 {
                return bad(format!("{what}.t_final = {t} is not a positive multiple of dt = {}", self.dt));
            }
        }
        if self.train.trajectories == 0 {
            return bad("train.trajectories must be at least 1".into());
        }
        self.train.signal.validate().map_err(ConfigError::Invalid)?;
        self.validate.signal.validate().map_err(ConfigError::Invalid)?;
        if !(self.noise.sigma >= 0.0 && self.noise.sigma.is_finite()) {
            return bad(format!("noise.sigma must be non-negative, got {}", self.noise.sigma));
        }
        if !(self.ridge >= 0.0) {
            return bad(format!("ridge must be non-negative, got {}", self.ridge));
        }
        if !(self.x0_spread >= 0.0) {
            return bad(format!("x0_spread must be non-negative, got {}", self.x0_spread));
        }
        if !(self.substep_ratio >= 1.0) {
            return bad(format!("substep_ratio must be at least 1, got {}", self.substep_ratio));
        }
        Ok(())
    }
}
