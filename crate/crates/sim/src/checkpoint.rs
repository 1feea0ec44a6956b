//! Model checkpoints: JSON holding the config, the canonical parameter
//! order and the flat values.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use psgf_core::model::{ForecastConfig, Forecaster};
use serde::{Deserialize, Serialize};

pub const FORMAT: &str = "psgf-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: ForecastConfig,
    pub order: Vec<OrderEntry>,
    pub values: Vec<f64>,
}

impl Checkpoint {
    pub fn new(model: &Forecaster, values: &[f64]) -> Self {
        let order = model
            .layout()
            .specs()
            .iter()
            .map(|s| OrderEntry { name: s.name.clone(), shape: s.shape.clone(), offset: s.offset })
            .collect();
        Checkpoint { format: FORMAT.into(), config: model.config().clone(), order, values: values.to_vec() }
    }

    /// Rebuilds the model and checks that the stored order is the canonical one.
    pub fn into_model(self) -> Result<(Forecaster, Vec<f64>)> {
        if self.format != FORMAT {
            bail!("unsupported checkpoint format `{}`", self.format);
        }
        let model = Forecaster::new(self.config)?;
        let expected = Checkpoint::new(&model, &[]).order;
        if expected != self.order {
            bail!("checkpoint parameter order does not match the model layout");
        }
        if self.values.len() != model.param_count() {
            bail!("checkpoint holds {} values, model needs {}", self.values.len(), model.param_count());
        }
        Ok((model, self.values))
    }
}

pub fn save_checkpoint(path: &Path, model: &Forecaster, values: &[f64]) -> Result<()> {
    let text = serde_json::to_string(&Checkpoint::new(model, values))?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn load_checkpoint(path: &Path) -> Result<(Forecaster, Vec<f64>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let ck: Checkpoint = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    ck.into_model()
}
