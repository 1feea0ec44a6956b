//! Experiment configuration: a TOML file plus `key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use psgf_core::data::{SplitFractions, SynthProfile};
use psgf_core::federation::{FedRatios, Policy};
use psgf_core::model::{BlockKind, ForecastConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("bad override `{0}`: expected key=value")]
    Override(String),
    #[error("invalid `{field}`: {message}")]
    Field { field: &'static str, message: String },
}

fn field(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field { field, message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Synth,
    Transactions,
    Nn5,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterOn {
    /// Only the training split of each series feeds DTW.
    Train,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyName {
    Centralized,
    Online,
    Pso,
    Psgf,
}

impl PolicyName {
    pub fn federated(self) -> Option<Policy> {
        match self {
            PolicyName::Centralized => None,
            PolicyName::Online => Some(Policy::Online),
            PolicyName::Pso => Some(Policy::Pso),
            PolicyName::Psgf => Some(Policy::Psgf),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyName::Centralized => "centralized",
            PolicyName::Online => "online",
            PolicyName::Pso => "pso",
            PolicyName::Psgf => "psgf",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: Source,
    /// Input file for `transactions` and `nn5` sources.
    pub path: Option<PathBuf>,
    pub profile: SynthProfile,
    pub clients: usize,
    pub days: usize,
    /// First calendar day of synthetic series (YYYY-MM-DD).
    pub start_date: String,
    /// Stations whose last observation is more than this many days before
    /// the newest observation are dropped.
    pub slack_days: i64,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub cluster_on: ClusterOn,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: Source::Synth,
            path: None,
            profile: SynthProfile::Nn5Like,
            clients: 20,
            days: 600,
            start_date: "2020-01-01".into(),
            slack_days: 7,
            train_fraction: 0.7,
            val_fraction: 0.15,
            cluster_on: ClusterOn::Train,
        }
    }
}

impl DataConfig {
    pub fn fractions(&self) -> SplitFractions {
        SplitFractions { train: self.train_fraction, val: self.val_fraction }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub patch_len: usize,
    pub stride: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_k: usize,
    pub mlp_hidden: usize,
    pub blocks: Vec<BlockKind>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let d = ForecastConfig::desk(4);
        ModelConfig {
            lookback: d.lookback,
            horizon: d.horizon,
            patch_len: d.patch_len,
            stride: d.stride,
            d_model: d.d_model,
            heads: d.heads,
            d_k: d.d_k,
            mlp_hidden: d.mlp_hidden,
            blocks: d.blocks,
        }
    }
}

impl ModelConfig {
    pub fn forecast(&self) -> ForecastConfig {
        ForecastConfig {
            lookback: self.lookback,
            horizon: self.horizon,
            channels: 1,
            patch_len: self.patch_len,
            stride: self.stride,
            d_model: self.d_model,
            heads: self.heads,
            d_k: self.d_k,
            mlp_hidden: self.mlp_hidden,
            blocks: self.blocks.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub policy: PolicyName,
    pub select_ratio: f64,
    pub share_ratio: f64,
    pub forward_ratio: f64,
    pub clusters: usize,
    pub max_rounds: usize,
    /// Rounds without improvement before stopping; 0 runs `max_rounds`.
    pub patience: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub eval_test_each_round: bool,
    pub max_epochs: usize,
    pub patience_epochs: usize,
    pub base_lr: f64,
    pub peak_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            policy: PolicyName::Psgf,
            select_ratio: 0.5,
            share_ratio: 0.3,
            forward_ratio: 0.2,
            clusters: 1,
            max_rounds: 200,
            patience: 10,
            local_epochs: 1,
            batch_size: 32,
            lr: 1e-3,
            eval_test_each_round: true,
            max_epochs: 100,
            patience_epochs: 20,
            base_lr: 1e-4,
            peak_lr: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn ratios(&self) -> FedRatios {
        FedRatios { select: self.select_ratio, share: self.share_ratio, forward: self.forward_ratio }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub policies: Vec<PolicyName>,
    pub share_ratios: Vec<f64>,
    pub forward_ratios: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            policies: vec![PolicyName::Pso, PolicyName::Psgf],
            share_ratios: vec![0.5, 0.4, 0.3, 0.2],
            forward_ratios: vec![0.1, 0.2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

fn check_ratio(name: &'static str, v: f64, allow_zero: bool) -> Result<(), ConfigError> {
    let ok = v.is_finite() && v <= 1.0 && if allow_zero { v >= 0.0 } else { v > 0.0 };
    if ok {
        Ok(())
    } else {
        let range = if allow_zero { "[0, 1]" } else { "(0, 1]" };
        Err(field(name, format!("{v} is outside {range}")))
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let d = &self.data;
        if d.source != Source::Synth && d.path.is_none() {
            return Err(field("data.path", "required for file sources"));
        }
        if d.source == Source::Synth {
            if d.clients == 0 {
                return Err(field("data.clients", "must be positive"));
            }
            let min = self.model.lookback + self.model.horizon + 20;
            if d.days < min {
                return Err(field("data.days", format!("{} is shorter than lookback + horizon + 20 = {min}", d.days)));
            }
        }
        chrono::NaiveDate::parse_from_str(&d.start_date, "%Y-%m-%d")
            .map_err(|e| field("data.start_date", e.to_string()))?;
        if d.slack_days < 0 {
            return Err(field("data.slack_days", "must be non-negative"));
        }
        check_ratio("data.train_fraction", d.train_fraction, false)?;
        check_ratio("data.val_fraction", d.val_fraction, true)?;
        d.fractions().validate().map_err(|e| field("data.val_fraction", e.to_string()))?;

        self.model.forecast().validate().map_err(|e| field("model", e.to_string()))?;

        let t = &self.train;
        check_ratio("train.select_ratio", t.select_ratio, false)?;
        check_ratio("train.share_ratio", t.share_ratio, false)?;
        check_ratio("train.forward_ratio", t.forward_ratio, true)?;
        let positive = [
            ("train.clusters", t.clusters),
            ("train.max_rounds", t.max_rounds),
            ("train.batch_size", t.batch_size),
            ("train.max_epochs", t.max_epochs),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(field(name, "must be positive"));
            }
        }
        for (name, v) in [("train.lr", t.lr), ("train.base_lr", t.base_lr), ("train.peak_lr", t.peak_lr)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(field(name, format!("{v} must be positive")));
            }
        }
        for &s in &self.sweep.share_ratios {
            check_ratio("sweep.share_ratios", s, false)?;
        }
        for &f in &self.sweep.forward_ratios {
            check_ratio("sweep.forward_ratios", f, true)?;
        }
        Ok(())
    }

    /// Reads `path` (if any), applies `overrides`, and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|source| ConfigError::Read { path: p.into(), source })?;
                text.parse::<toml::Table>().map_err(|e| ConfigError::Parse(e.to_string()))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: ExperimentConfig =
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn apply_override(table: &mut toml::Table, text: &str) -> Result<(), ConfigError> {
    let (key, raw) = text.split_once('=').ok_or_else(|| ConfigError::Override(text.into()))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError::Override(text.into()));
    }
    let value = match format!("v = {}", raw.trim()).parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().into()),
    };
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| ConfigError::Override(text.into()))?;
    }
    cur.insert(last.into(), value);
    Ok(())
}
