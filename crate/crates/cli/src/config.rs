//! Experiment configuration: TOML file, optional named preset underneath it,
//! then command-line overrides on top.

use serde::{Deserialize, Serialize};
use toml::Value;

use crate::error::CliError;
use crate::presets;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Split,
    Lyapunov,
    LyapunovPi,
    Riccati,
    RiccatiPi,
    RobustB,
    RobustNoise,
    GammaSweep,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Split => "split",
            ExperimentKind::Lyapunov => "lyapunov",
            ExperimentKind::LyapunovPi => "lyapunov-pi",
            ExperimentKind::Riccati => "riccati",
            ExperimentKind::RiccatiPi => "riccati-pi",
            ExperimentKind::RobustB => "robust-b",
            ExperimentKind::RobustNoise => "robust-noise",
            ExperimentKind::GammaSweep => "gamma-sweep",
        }
    }
}

pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSystem {
    pub n: usize,
    #[serde(default)]
    pub m: usize,
    pub seed: u64,
    /// Shift the draw so that `A` is Hurwitz.
    #[serde(default)]
    pub stable: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random: Option<RandomSystem>,
    /// Defaults to the identity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Rows>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub agents: usize,
    /// Defaults to the top-level seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "one")]
    pub input_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    #[serde(default = "ring")]
    pub kind: String,
    /// Edge probability for `kind = "random"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            kind: ring(),
            p: None,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default = "one")]
    pub k_w: f64,
    #[serde(default = "split_tolerance")]
    pub tolerance: f64,
    #[serde(default = "split_horizon")]
    pub max_horizon: f64,
    #[serde(default = "split_step")]
    pub step: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            k_w: one(),
            tolerance: split_tolerance(),
            max_horizon: split_horizon(),
            step: split_step(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepProblem {
    Lyapunov,
    Riccati,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Gains for `gamma-sweep`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gammas: Option<Vec<f64>>,
    #[serde(default = "flow_step")]
    pub step: f64,
    pub horizon: f64,
    #[serde(default = "flow_tolerance")]
    pub tolerance: f64,
    /// Flow family swept by `gamma-sweep` (coupled, not PI).
    #[serde(default = "sweep_problem")]
    pub sweep: SweepProblem,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Design {
    Centralized,
    Distributed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustConfig {
    /// Uncertainty / noise levels as fractions of the certified threshold.
    #[serde(default = "robust_fractions")]
    pub fractions: Vec<f64>,
    #[serde(default = "robust_draws")]
    pub draws: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "robust_design")]
    pub design: Design,
}

impl Default for RobustConfig {
    fn default() -> Self {
        Self {
            fractions: robust_fractions(),
            draws: robust_draws(),
            seed: None,
            design: robust_design(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "out_dir")]
    pub dir: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: out_dir() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    pub system: SystemConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub graph: GraphConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<FlowConfig>,
    #[serde(default)]
    pub robust: RobustConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn one() -> f64 {
    1.0
}
fn ring() -> String {
    "ring".into()
}
fn split_tolerance() -> f64 {
    fragctl::splitting::DEFAULT_TOLERANCE
}
fn split_horizon() -> f64 {
    fragctl::splitting::DEFAULT_MAX_HORIZON
}
fn split_step() -> f64 {
    0.5
}
fn flow_step() -> f64 {
    0.01
}
fn flow_tolerance() -> f64 {
    1e-6
}
fn sweep_problem() -> SweepProblem {
    SweepProblem::Riccati
}
fn robust_fractions() -> Vec<f64> {
    vec![0.1, 0.3, 0.5, 0.7, 0.9]
}
fn robust_draws() -> usize {
    100
}
fn robust_design() -> Design {
    Design::Distributed
}
fn out_dir() -> String {
    "out".into()
}

/// Command-line adjustments applied after the file and its preset.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<String>,
    pub gamma: Option<f64>,
    /// `dotted.key=value`, value parsed as TOML where possible.
    pub set: Vec<String>,
}

impl ExperimentConfig {
    pub fn load(path: &std::path::Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn from_toml_str(text: &str, overrides: &Overrides) -> Result<Self, CliError> {
        let user: Value = toml::from_str(text).map_err(|e| CliError::Config(format!("config parse error: {e}")))?;
        let mut merged = match user.get("system").and_then(|s| s.get("preset")).and_then(Value::as_str) {
            Some(name) => {
                let system = user.get("system").and_then(Value::as_table);
                if system.is_some_and(|s| s.contains_key("a") || s.contains_key("random")) {
                    return Err(CliError::Config("system.preset cannot be combined with inline or random matrices".into()));
                }
                let mut base = presets::load(name)?;
                merge(&mut base, user);
                base
            }
            None => user,
        };
        for item in &overrides.set {
            apply_override(&mut merged, item)?;
        }
        let mut cfg: ExperimentConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(format!("invalid config: {}", e.message())))?;
        if let Some(seed) = overrides.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &overrides.out {
            cfg.output.dir = out.clone();
        }
        if let Some(g) = overrides.gamma {
            let flow = cfg
                .flow
                .as_mut()
                .ok_or_else(|| CliError::Config("--gamma given but the config has no [flow] section".into()))?;
            if cfg.experiment == ExperimentKind::GammaSweep {
                flow.gammas = Some(vec![g]);
            } else {
                flow.gamma = Some(g);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn data_seed(&self) -> u64 {
        self.data.seed.unwrap_or(self.seed)
    }

    pub fn robust_seed(&self) -> u64 {
        self.robust.seed.unwrap_or(self.seed.wrapping_add(1))
    }

    pub fn flow(&self) -> Result<&FlowConfig, CliError> {
        self.flow
            .as_ref()
            .ok_or_else(|| CliError::Config(format!("experiment {} needs a [flow] section", self.experiment.as_str())))
    }

    pub fn gamma(&self) -> Result<f64, CliError> {
        self.flow()?
            .gamma
            .ok_or_else(|| CliError::Config("flow.gamma is required".into()))
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        let sources = [self.system.preset.is_some() || self.system.a.is_some(), self.system.random.is_some()];
        if sources.iter().filter(|s| **s).count() != 1 {
            return bad("exactly one system source (preset, inline a/b, random) is required".into());
        }
        if self.data.agents == 0 {
            return bad("data.agents must be positive".into());
        }
        if !(self.data.input_scale >= 0.0) {
            return bad("data.input_scale must be non-negative".into());
        }
        for (name, v) in [("split.k_w", self.split.k_w), ("split.tolerance", self.split.tolerance), ("split.step", self.split.step), ("split.max_horizon", self.split.max_horizon)] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if let Some(flow) = &self.flow {
            for (name, v) in [("flow.step", flow.step), ("flow.horizon", flow.horizon), ("flow.tolerance", flow.tolerance)] {
                if !(v > 0.0) || !v.is_finite() {
                    return bad(format!("{name} must be positive and finite, got {v}"));
                }
            }
            let gammas = flow.gamma.iter().chain(flow.gammas.iter().flatten());
            for g in gammas {
                if !(*g > 0.0) || !g.is_finite() {
                    return bad(format!("gamma must be positive, got {g}"));
                }
            }
        }
        use ExperimentKind::*;
        match self.experiment {
            Split => {}
            Lyapunov | LyapunovPi | Riccati | RiccatiPi => {
                self.gamma()?;
            }
            GammaSweep => {
                if self.flow()?.gammas.as_ref().is_none_or(Vec::is_empty) {
                    return bad("gamma-sweep needs a non-empty flow.gammas".into());
                }
            }
            RobustB | RobustNoise => {
                if self.robust.design == Design::Distributed {
                    self.gamma()?;
                }
                if self.robust.draws == 0 {
                    return bad("robust.draws must be positive".into());
                }
                if self.robust.fractions.iter().any(|f| !(*f >= 0.0) || !f.is_finite()) {
                    return bad("robust.fractions must be non-negative".into());
                }
            }
        }
        if self.output.dir.is_empty() {
            return bad("output.dir must not be empty".into());
        }
        Ok(())
    }
}

/// Tables merge recursively; anything else in `over` replaces `base`.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Table(b), Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn apply_override(root: &mut Value, item: &str) -> Result<(), CliError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{item}` is not key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::Config(format!("override key `{key}` is malformed")));
    }
    let value = parse_value(raw.trim());
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override `{key}` descends into a non-table")))?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Default::default()));
    }
    node.as_table_mut()
        .ok_or_else(|| CliError::Config(format!("override `{key}` descends into a non-table")))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> Value {
    #[derive(Deserialize)]
    struct Wrap {
        v: Value,
    }
    toml::from_str::<Wrap>(&format!("v = {raw}"))
        .map(|w| w.v)
        .unwrap_or_else(|_| Value::String(raw.to_string()))
}
