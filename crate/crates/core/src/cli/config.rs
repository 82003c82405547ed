use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::occlcon::MarginConfig;
use crate::scenegen::GeneratorConfig;
use crate::trainhar::TrainConfig;

/// Contents of an experiment TOML file. Every section is optional.
///
/// ```toml
/// [generator]
/// num_images = 2000
/// height = 64
/// width = 64
///
/// [train]
/// dataset = "data/train"
/// epochs = 10
/// mode = "contrastive"
/// margins = { tau_lh = 0.4, tau_m = 0.6, lambda_weight = 1.0 }
///
/// [ablation]
/// grid = [[0.3, 0.4], [0.4, 0.6]]
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub generator: GeneratorConfig,
    pub train: TrainConfig,
    pub ablation: AblationGrid,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    /// Reads `path`, or returns the defaults when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
            }
        }
    }
}

/// Margin pairs to sweep, one training run per pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationGrid {
    pub grid: Vec<(f64, f64)>,
}

impl Default for AblationGrid {
    fn default() -> Self {
        AblationGrid {
            grid: vec![(0.3, 0.4), (0.3, 0.6), (0.3, 0.8), (0.4, 0.6), (0.4, 0.7)],
        }
    }
}

impl AblationGrid {
    /// Every cell must be a valid margin pair and the grid must be non-empty.
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::Config("ablation grid is empty".into()));
        }
        for &(lh, m) in &self.grid {
            MarginConfig::new(lh, m, 1.0)
                .map_err(|e| Error::Config(format!("grid cell ({lh}, {m}) is invalid: {e}")))?;
        }
        Ok(())
    }
}

impl FromStr for AblationGrid {
    type Err = Error;

    /// Parses `"0.3:0.4,0.4:0.6"`.
    fn from_str(s: &str) -> Result<Self> {
        let parse = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("{v:?} is not a number in grid {s:?}")))
        };
        let grid = s
            .split(',')
            .filter(|c| !c.trim().is_empty())
            .map(|cell| {
                let (lh, m) = cell
                    .split_once(':')
                    .ok_or_else(|| Error::Config(format!("grid cell {cell:?} is not of the form tau_lh:tau_m")))?;
                Ok((parse(lh)?, parse(m)?))
            })
            .collect::<Result<_>>()?;
        Ok(AblationGrid { grid })
    }
}

impl fmt::Display for AblationGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cells: Vec<String> = self.grid.iter().map(|(a, b)| format!("{a}:{b}")).collect();
        f.write_str(&cells.join(","))
    }
}
