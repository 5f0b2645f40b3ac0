use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::graph::{generate_synthetic, load_dataset, Dataset, SyntheticSpec, TaskType};
use crate::search::SearchConfig;
use crate::trainer::HParams;

pub const CONFIG_SCHEMA: &str = "gnas-config/1";

/// Where the graphs come from. Relative paths resolve against the config
/// file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    File {
        graphs: PathBuf,
        splits: PathBuf,
        task: TaskType,
    },
    Synthetic {
        spec: SyntheticSpec,
        #[serde(default)]
        seed: u64,
    },
}

impl DatasetSource {
    pub fn load(&self, base: &Path) -> Result<Dataset> {
        match self {
            DatasetSource::File { graphs, splits, task } => {
                load_dataset(&base.join(graphs), &base.join(splits), *task)
            }
            DatasetSource::Synthetic { spec, seed } => generate_synthetic(spec, *seed),
        }
    }
}

/// Allowed-value lists of the published hyper-parameter grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grid {
    Molhiv,
    Molpcba,
    Ppa,
}

struct GridValues {
    learning_rate: &'static [f64],
    batch_size: &'static [usize],
    hidden_size: &'static [usize],
    dropout: &'static [f64],
}

impl Grid {
    fn values(self) -> GridValues {
        const DROPOUT: &[f64] = &[0.1, 0.2, 0.3];
        match self {
            Grid::Molhiv | Grid::Ppa => GridValues {
                learning_rate: &[5e-3, 1e-2, 3e-2, 5e-2, 1e-1],
                batch_size: &[128, 256, 512],
                hidden_size: &[256, 512],
                dropout: DROPOUT,
            },
            Grid::Molpcba => GridValues {
                learning_rate: &[5e-4, 1e-3, 3e-3, 5e-3, 1e-2],
                batch_size: &[256, 512, 1024],
                hidden_size: &[512, 1024],
                dropout: DROPOUT,
            },
        }
    }

    fn name(self) -> &'static str {
        match self {
            Grid::Molhiv => "molhiv",
            Grid::Molpcba => "molpcba",
            Grid::Ppa => "ppa",
        }
    }

    /// Reject any value outside the grid. `virtual_node` is a flag and is
    /// always on its grid.
    pub fn check(self, section: &str, lr: f64, batch: usize, hidden: usize, dropout: f64) -> Result<()> {
        let g = self.values();
        let fail = |field: &str, value: String, allowed: String| {
            Err(Error::Config(format!(
                "{section}.{field} = {value} is not on the {} grid; allowed {allowed}",
                self.name()
            )))
        };
        if !g.learning_rate.contains(&lr) {
            return fail("learning rate", lr.to_string(), format!("{:?}", g.learning_rate));
        }
        if !g.batch_size.contains(&batch) {
            return fail("batch size", batch.to_string(), format!("{:?}", g.batch_size));
        }
        if !g.hidden_size.contains(&hidden) {
            return fail("hidden size", hidden.to_string(), format!("{:?}", g.hidden_size));
        }
        if !g.dropout.contains(&dropout) {
            return fail("dropout", dropout.to_string(), format!("{:?}", g.dropout));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: String,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub train: HParams,
    /// Grid enforced by `--strict-grid`.
    #[serde(default)]
    pub grid: Option<Grid>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: Value = serde_json::from_str(text)?;
        reject_gamma(&raw)?;
        let cfg: RunConfig = serde_json::from_value(raw).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.schema != CONFIG_SCHEMA {
            return Err(Error::Config(format!(
                "unsupported schema `{}`; expected `{CONFIG_SCHEMA}`",
                cfg.schema
            )));
        }
        cfg.search.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::Config(format!("{}: {j}", path.display())),
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn grid_for_strict(&self) -> Result<Grid> {
        self.grid
            .ok_or_else(|| Error::Config("--strict-grid needs a `grid` entry (molhiv, molpcba or ppa)".into()))
    }
}

/// The AUC-margin loss and its `gamma` are not implemented.
fn reject_gamma(raw: &Value) -> Result<()> {
    let found = raw.get("gamma").is_some()
        || ["train", "search"]
            .iter()
            .any(|s| raw.get(s).and_then(|v| v.get("gamma")).is_some());
    if found {
        return Err(Error::OutOfScope(
            "`gamma` parameterizes the AUC-margin training loss, which this tool does not implement; \
             remove it (training uses cross-entropy)"
                .into(),
        ));
    }
    Ok(())
}
