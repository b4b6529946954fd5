//! Tunables shared by ingest, the index and analytics. Serialized as the
//! dataset's `config.json`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::DEFAULT_THUMBNAIL_CAP;
use crate::geo::DEFAULT_MATCH_RADIUS_M;
use crate::index::DEFAULT_CELL_DEG;
use crate::metrics::DEFAULT_PERPLEXITY_WINDOW;

pub const DEFAULT_KDE_BANDWIDTH_M: f64 = 150.0;

#[derive(Debug, Error, PartialEq)]
#[error("invalid config: {0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub match_radius_m: f64,
    pub grid_cell_deg: f64,
    pub kde_bandwidth_m: f64,
    pub thumbnail_cap: usize,
    pub perplexity_window: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            match_radius_m: DEFAULT_MATCH_RADIUS_M,
            grid_cell_deg: DEFAULT_CELL_DEG,
            kde_bandwidth_m: DEFAULT_KDE_BANDWIDTH_M,
            thumbnail_cap: DEFAULT_THUMBNAIL_CAP,
            perplexity_window: DEFAULT_PERPLEXITY_WINDOW,
        }
    }
}

impl Config {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(ConfigError(format!("{name} must be positive, got {v}")))
            }
        };
        positive("match_radius_m", self.match_radius_m)?;
        positive("grid_cell_deg", self.grid_cell_deg)?;
        positive("kde_bandwidth_m", self.kde_bandwidth_m)?;
        if self.thumbnail_cap == 0 {
            return Err(ConfigError("thumbnail_cap must be at least 1".into()));
        }
        if self.perplexity_window == 0 {
            return Err(ConfigError("perplexity_window must be at least 1".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: Config = serde_json::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }
}
