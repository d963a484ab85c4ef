//! Experiment configuration in a flat `key = value` text format.
//!
//! One assignment per line, `#` starts a comment, lists are comma
//! separated. Unknown keys are rejected so typos do not silently fall back
//! to defaults. See the README for the full key table.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::bounds::{BoundsError, OptimizerSettings, SecrecyMode, SecurityBudget};
use crate::channel::{ChannelError, ChannelModel, ChannelPreset};

/// `p_Z` values used by default.
pub const DEFAULT_PZ: [f64; 5] = [0.09, 0.16, 0.28, 0.40, 0.49];
/// Sifted key lengths used by default, log-spaced from 10³ to 2·10⁵.
pub const DEFAULT_N: [usize; 8] = [1_000, 2_000, 5_000, 10_000, 20_000, 50_000, 100_000, 200_000];
pub const DEFAULT_TRIALS: usize = 20;
/// Default `Q` grid for the qubit-budget search.
pub const DEFAULT_Q_GRID: [f64; 10] = [0.005, 0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09];
/// Default robustness cap for the qubit-budget search.
pub const DEFAULT_EPS_ROB_MAX: f64 = 0.05;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("invalid value for `{key}`: {value}")]
    Value { key: String, value: String },
    #[error("`{0}` must not be empty")]
    Empty(&'static str),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportKind {
    Memory,
    Tcp,
}

/// Optimizer effort selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerChoice {
    /// Fine for general secrecy, coarse for pragmatic secrecy.
    Auto,
    Fine,
    Coarse,
}

impl OptimizerChoice {
    pub fn settings(self, mode: SecrecyMode) -> OptimizerSettings {
        match self {
            OptimizerChoice::Auto => OptimizerSettings::for_mode(mode),
            OptimizerChoice::Fine => OptimizerSettings::FINE,
            OptimizerChoice::Coarse => OptimizerSettings::COARSE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameDirection {
    Encode,
    Decode,
}

/// A channel with the label used in CSV output.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedChannel {
    pub name: String,
    pub model: ChannelModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub channels: Vec<NamedChannel>,
    pub n_list: Vec<usize>,
    pub pz_list: Vec<f64>,
    pub budget: SecurityBudget,
    pub modes: Vec<SecrecyMode>,
    pub trials: usize,
    pub seed: u64,
    /// Fixed `Q_tol_Z`; optimized per point when absent.
    pub q_tol_z: Option<f64>,
    /// Fixed `Q_max_X`; taken from the failure budget when absent.
    pub q_max_x: Option<f64>,
    /// Fixed `L_EC` for the bounds calculator; `1.1 n h2(Q̄_X)` when absent.
    pub l_ec: Option<f64>,
    pub batch: usize,
    pub transport: TransportKind,
    pub optimizer: OptimizerChoice,
    pub ell_target: u64,
    pub q_grid: Vec<f64>,
    pub eps_rob_max: f64,
    pub frame_direction: FrameDirection,
    pub frame_input: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let channels = ["a", "b", "c", "d"]
            .iter()
            .map(|name| {
                let p = ChannelPreset::by_name(name).expect("built-in preset");
                NamedChannel { name: p.name.to_string(), model: p.model() }
            })
            .collect();
        Self {
            channels,
            n_list: DEFAULT_N.to_vec(),
            pz_list: DEFAULT_PZ.to_vec(),
            budget: SecurityBudget::default(),
            modes: vec![SecrecyMode::General, SecrecyMode::Pragmatic],
            trials: DEFAULT_TRIALS,
            seed: 0,
            q_tol_z: None,
            q_max_x: None,
            l_ec: None,
            batch: crate::session::DEFAULT_BATCH,
            transport: TransportKind::Memory,
            optimizer: OptimizerChoice::Auto,
            ell_target: 1000,
            q_grid: DEFAULT_Q_GRID.to_vec(),
            eps_rob_max: DEFAULT_EPS_ROB_MAX,
            frame_direction: FrameDirection::Encode,
            frame_input: None,
        }
    }
}

const KEYS: &[&str] = &[
    "preset",
    "background",
    "intrinsic_x",
    "intrinsic_z",
    "detection",
    "n",
    "p_z",
    "eps_sec",
    "eps_cor",
    "p_fail",
    "modes",
    "trials",
    "seed",
    "q_tol_z",
    "q_max_x",
    "l_ec",
    "batch",
    "transport",
    "optimizer",
    "ell_target",
    "q_grid",
    "eps_rob_max",
    "frame_direction",
    "frame_input",
];

fn parse_one<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.trim().parse().map_err(|_| ConfigError::Value { key: key.to_string(), value: value.to_string() })
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError> {
    value.split(',').map(|v| parse_one(key, v)).collect()
}

fn parse_optional(key: &str, value: &str) -> Result<Option<f64>, ConfigError> {
    if value == "auto" {
        Ok(None)
    } else {
        parse_one(key, value).map(Some)
    }
}

impl ExperimentConfig {
    /// Parses config text, starting from the defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut pairs: Vec<(usize, String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: line_no })?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if !KEYS.contains(&k.as_str()) {
                return Err(ConfigError::UnknownKey { line: line_no, key: k });
            }
            if pairs.iter().any(|(_, seen, _)| *seen == k) {
                return Err(ConfigError::Duplicate { line: line_no, key: k });
            }
            pairs.push((line_no, k, v));
        }
        let mut cfg = Self::default();
        let get = |key: &str| pairs.iter().find(|(_, k, _)| k == key).map(|(_, _, v)| v.as_str());
        for (_, key, value) in &pairs {
            cfg.apply(key, value)?;
        }
        let explicit = ["background", "intrinsic_x", "intrinsic_z", "detection"];
        if explicit.iter().any(|k| get(k).is_some()) {
            let num = |k: &str, default: f64| get(k).map_or(Ok(default), |v| parse_one::<f64>(k, v));
            let model = ChannelModel::new(num("background", 0.0)?, num("intrinsic_x", 0.0)?, num("intrinsic_z", 0.0)?, num("detection", 1.0)?)?;
            cfg.channels = vec![NamedChannel { name: "custom".to_string(), model }];
        }
        let budget = |k: &str, d: f64| get(k).map_or(Ok(d), |v| parse_one::<f64>(k, v));
        let d = SecurityBudget::default();
        cfg.budget = SecurityBudget::new(budget("eps_sec", d.eps_sec())?, budget("eps_cor", d.eps_cor())?, budget("p_fail", d.p_fail())?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = || ConfigError::Value { key: key.to_string(), value: value.to_string() };
        match key {
            "preset" => {
                self.channels = value
                    .split(',')
                    .map(|name| {
                        let p = ChannelPreset::by_name(name.trim())?;
                        Ok(NamedChannel { name: p.name.to_string(), model: p.model() })
                    })
                    .collect::<Result<_, ChannelError>>()?;
            }
            "n" => self.n_list = parse_list(key, value)?,
            "p_z" => self.pz_list = parse_list(key, value)?,
            "modes" => {
                self.modes = value.split(',').map(|m| SecrecyMode::parse(m.trim()).ok_or_else(bad)).collect::<Result<_, _>>()?;
            }
            "trials" => self.trials = parse_one(key, value)?,
            "seed" => self.seed = parse_one(key, value)?,
            "q_tol_z" => self.q_tol_z = parse_optional(key, value)?,
            "q_max_x" => self.q_max_x = parse_optional(key, value)?,
            "l_ec" => self.l_ec = parse_optional(key, value)?,
            "batch" => self.batch = parse_one(key, value)?,
            "transport" => {
                self.transport = match value {
                    "memory" => TransportKind::Memory,
                    "tcp" => TransportKind::Tcp,
                    _ => return Err(bad()),
                }
            }
            "optimizer" => {
                self.optimizer = match value {
                    "auto" => OptimizerChoice::Auto,
                    "fine" => OptimizerChoice::Fine,
                    "coarse" => OptimizerChoice::Coarse,
                    _ => return Err(bad()),
                }
            }
            "ell_target" => self.ell_target = parse_one(key, value)?,
            "q_grid" => self.q_grid = parse_list(key, value)?,
            "eps_rob_max" => self.eps_rob_max = parse_one(key, value)?,
            "frame_direction" => {
                self.frame_direction = match value {
                    "encode" => FrameDirection::Encode,
                    "decode" => FrameDirection::Decode,
                    _ => return Err(bad()),
                }
            }
            "frame_input" => self.frame_input = Some(value.to_string()),
            // handled after the loop
            _ => {}
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let value = |key: &str, v: String| ConfigError::Value { key: key.to_string(), value: v };
        if self.channels.is_empty() {
            return Err(ConfigError::Empty("preset"));
        }
        if self.n_list.is_empty() {
            return Err(ConfigError::Empty("n"));
        }
        if self.pz_list.is_empty() {
            return Err(ConfigError::Empty("p_z"));
        }
        if self.modes.is_empty() {
            return Err(ConfigError::Empty("modes"));
        }
        if let Some(&n) = self.n_list.iter().find(|&&n| n == 0) {
            return Err(value("n", n.to_string()));
        }
        if let Some(&p) = self.pz_list.iter().find(|&&p| !(p > 0.0 && p <= 0.5)) {
            return Err(value("p_z", p.to_string()));
        }
        for (key, v) in [("q_tol_z", self.q_tol_z), ("q_max_x", self.q_max_x)] {
            if let Some(q) = v.filter(|q| !(*q > 0.0 && *q < 0.5)) {
                return Err(value(key, q.to_string()));
            }
        }
        if self.l_ec.is_some_and(|l| !(l >= 0.0 && l.is_finite())) {
            return Err(value("l_ec", format!("{:?}", self.l_ec)));
        }
        if self.trials == 0 {
            return Err(value("trials", "0".into()));
        }
        if self.batch == 0 {
            return Err(value("batch", "0".into()));
        }
        if let Some(&q) = self.q_grid.iter().find(|&&q| !(0.0..0.5).contains(&q)) {
            return Err(value("q_grid", q.to_string()));
        }
        if !(self.eps_rob_max > 0.0 && self.eps_rob_max < 1.0) {
            return Err(value("eps_rob_max", self.eps_rob_max.to_string()));
        }
        Ok(())
    }
}

impl fmt::Display for ExperimentConfig {
    /// Writes a config that parses back to the same value. Explicit
    /// channels are written by parameters.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[String]| v.join(",");
        let custom = self.channels.len() == 1 && self.channels[0].name == "custom";
        if custom {
            let m = &self.channels[0].model;
            writeln!(f, "background = {:e}", m.background())?;
            writeln!(f, "intrinsic_x = {:e}", m.intrinsic(crate::channel::Basis::X))?;
            writeln!(f, "intrinsic_z = {:e}", m.intrinsic(crate::channel::Basis::Z))?;
            writeln!(f, "detection = {:e}", m.detection())?;
        } else {
            writeln!(f, "preset = {}", join(&self.channels.iter().map(|c| c.name.clone()).collect::<Vec<_>>()))?;
        }
        writeln!(f, "n = {}", join(&self.n_list.iter().map(ToString::to_string).collect::<Vec<_>>()))?;
        writeln!(f, "p_z = {}", join(&self.pz_list.iter().map(ToString::to_string).collect::<Vec<_>>()))?;
        writeln!(f, "eps_sec = {:e}", self.budget.eps_sec())?;
        writeln!(f, "eps_cor = {:e}", self.budget.eps_cor())?;
        writeln!(f, "p_fail = {:e}", self.budget.p_fail())?;
        writeln!(f, "modes = {}", join(&self.modes.iter().map(|m| m.as_str().to_string()).collect::<Vec<_>>()))?;
        writeln!(f, "trials = {}", self.trials)?;
        writeln!(f, "seed = {}", self.seed)?;
        let opt = |v: Option<f64>| v.map_or("auto".to_string(), |x| x.to_string());
        writeln!(f, "q_tol_z = {}", opt(self.q_tol_z))?;
        writeln!(f, "q_max_x = {}", opt(self.q_max_x))?;
        writeln!(f, "l_ec = {}", opt(self.l_ec))?;
        writeln!(f, "batch = {}", self.batch)?;
        let transport = match self.transport {
            TransportKind::Memory => "memory",
            TransportKind::Tcp => "tcp",
        };
        writeln!(f, "transport = {transport}")?;
        let optimizer = match self.optimizer {
            OptimizerChoice::Auto => "auto",
            OptimizerChoice::Fine => "fine",
            OptimizerChoice::Coarse => "coarse",
        };
        writeln!(f, "optimizer = {optimizer}")?;
        writeln!(f, "ell_target = {}", self.ell_target)?;
        writeln!(f, "q_grid = {}", join(&self.q_grid.iter().map(ToString::to_string).collect::<Vec<_>>()))?;
        writeln!(f, "eps_rob_max = {}", self.eps_rob_max)?;
        let dir = match self.frame_direction {
            FrameDirection::Encode => "encode",
            FrameDirection::Decode => "decode",
        };
        writeln!(f, "frame_direction = {dir}")?;
        if let Some(path) = &self.frame_input {
            writeln!(f, "frame_input = {path}")?;
        }
        Ok(())
    }
}
