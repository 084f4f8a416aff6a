//! Environment configuration: a JSON document naming the network, fleet and
//! time-series tables plus the reward and episode parameters.
//!
//! Relative paths are resolved against the directory holding the config.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{load_timeseries, DataError, PriceUnit, TimeSeriesDataset};
use crate::ess::{load_ess, EssError, EssParams};
use crate::network::{load_network, NetworkError, NetworkModel, NodeKind};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config {path}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Ess(#[from] EssError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyNodes {
    /// Every PQ node.
    #[default]
    All,
    /// Only nodes hosting storage.
    EssOnly,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkPaths {
    pub nodes: PathBuf,
    pub lines: PathBuf,
}

fn default_sigma() -> f64 {
    400.0
}
fn default_v_min() -> f64 {
    0.95
}
fn default_v_max() -> f64 {
    1.05
}
fn default_v_ref() -> f64 {
    1.0
}
fn default_dt() -> f64 {
    0.25
}
fn default_horizon() -> usize {
    96
}
fn default_base_mva() -> f64 {
    1.0
}
fn default_resolution() -> u32 {
    15
}

/// Load composition. Only constant-power loads are modelled, so the
/// impedance and current shares must be zero when given.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZipCoefficients {
    #[serde(default)]
    pub z: f64,
    #[serde(default)]
    pub i: f64,
    #[serde(default = "one")]
    pub p: f64,
}

fn one() -> f64 {
    1.0
}

/// The on-disk document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub network: NetworkPaths,
    pub ess: PathBuf,
    pub timeseries: PathBuf,
    #[serde(default = "default_resolution")]
    pub resolution_minutes: u32,
    #[serde(default)]
    pub price_unit: PriceUnit,
    #[serde(default = "default_base_mva")]
    pub base_mva: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_v_min")]
    pub v_min: f64,
    #[serde(default = "default_v_max")]
    pub v_max: f64,
    #[serde(default = "default_v_ref")]
    pub v_ref: f64,
    #[serde(default = "default_dt")]
    pub dt_hours: f64,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub penalty_nodes: PenaltyNodes,
    #[serde(default)]
    pub zip: Option<ZipCoefficients>,
}

/// Validated environment parameters.
#[derive(Debug, Clone)]
pub struct EnvConfig {
    pub network: NetworkModel,
    pub fleet: Vec<EssParams>,
    pub sigma: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub v_ref: f64,
    pub dt_hours: f64,
    pub horizon: usize,
    pub base_mva: f64,
    pub penalty_nodes: PenaltyNodes,
}

impl EnvConfig {
    /// Base power in kW, used to convert kW data to per-unit.
    pub fn s_base_kw(&self) -> f64 {
        self.base_mva * 1000.0
    }

    pub fn state_dim(&self) -> usize {
        self.network.node_count() + 1 + self.fleet.len() + 1
    }

    pub fn action_dim(&self) -> usize {
        self.fleet.len()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.v_min < self.v_ref && self.v_ref < self.v_max) {
            return bad(format!(
                "need v_min < v_ref < v_max, got {} / {} / {}",
                self.v_min, self.v_ref, self.v_max
            ));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return bad(format!("sigma must be >= 0, got {}", self.sigma));
        }
        if !(self.dt_hours > 0.0) || !self.dt_hours.is_finite() {
            return bad(format!("dt_hours must be > 0, got {}", self.dt_hours));
        }
        if self.horizon == 0 {
            return bad("horizon must be >= 1".into());
        }
        if !(self.base_mva > 0.0) || !self.base_mva.is_finite() {
            return bad(format!("base_mva must be > 0, got {}", self.base_mva));
        }
        let mut seen = std::collections::BTreeSet::new();
        for ess in &self.fleet {
            ess.validate()?;
            let node = self.network.nodes.iter().find(|n| n.id == ess.node);
            match node {
                None => return bad(format!("ESS node {} is not in the network", ess.node)),
                Some(n) if n.kind == NodeKind::Slack => {
                    return bad(format!("ESS node {} is the slack node", ess.node))
                }
                _ => {}
            }
            if !seen.insert(ess.node) {
                return bad(format!("more than one ESS at node {}", ess.node));
            }
        }
        Ok(())
    }
}

/// A loaded configuration together with its dataset.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: EnvConfig,
    pub data: TimeSeriesDataset,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn read_config_file(path: &Path) -> Result<ConfigFile, ConfigError> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: name.clone(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path: name, source })
}

/// Loads the config, network, fleet and dataset and checks that they agree.
pub fn load_scenario(path: &Path) -> Result<Scenario, ConfigError> {
    let file = read_config_file(path)?;
    if let Some(zip) = file.zip {
        if zip.z != 0.0 || zip.i != 0.0 || zip.p != 1.0 {
            return Err(ConfigError::Invalid(format!(
                "only constant-power loads are supported, got zip = ({}, {}, {})",
                zip.z, zip.i, zip.p
            )));
        }
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let network = load_network(
        &resolve(base, &file.network.nodes),
        &resolve(base, &file.network.lines),
        file.base_mva,
    )?;
    let fleet = load_ess(&resolve(base, &file.ess))?;
    let data = load_timeseries(
        &resolve(base, &file.timeseries),
        file.resolution_minutes,
        file.price_unit,
    )?;
    let config = EnvConfig {
        network,
        fleet,
        sigma: file.sigma,
        v_min: file.v_min,
        v_max: file.v_max,
        v_ref: file.v_ref,
        dt_hours: file.dt_hours,
        horizon: file.horizon,
        base_mva: file.base_mva,
        penalty_nodes: file.penalty_nodes,
    };
    config.validate()?;
    check_dataset(&config, &data)?;
    Ok(Scenario { config, data })
}

/// Dataset resolution must equal the step length and a day must hold at
/// least one horizon.
pub fn check_dataset(cfg: &EnvConfig, data: &TimeSeriesDataset) -> Result<(), ConfigError> {
    if (data.dt_hours() - cfg.dt_hours).abs() > 1e-12 {
        return Err(ConfigError::Invalid(format!(
            "dataset resolution is {} h but dt_hours is {}",
            data.dt_hours(),
            cfg.dt_hours
        )));
    }
    if cfg.horizon > data.rows_per_day() {
        return Err(ConfigError::Invalid(format!(
            "horizon {} exceeds the {} slots in a day",
            cfg.horizon,
            data.rows_per_day()
        )));
    }
    if data.day_count() == 0 {
        return Err(ConfigError::Invalid("dataset holds no complete day".into()));
    }
    if let Some(id) = data
        .columns
        .iter()
        .filter_map(|c| c.kind.node())
        .find(|id| !cfg.network.contains(*id))
    {
        return Err(ConfigError::Invalid(format!(
            "dataset references node {id}, which is not in the network"
        )));
    }
    Ok(())
}
