//! Energy-storage model: SOC dynamics and feasibility clipping.
//!
//! Power is in kW with charging positive. Efficiency multiplies the stored
//! energy when charging and divides it when discharging.

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EssError {
    #[error("ESS at node {node}: {reason}")]
    InvalidParams { node: usize, reason: String },
    #[error("{path} row {row}: {reason}")]
    MalformedRow {
        path: String,
        row: usize,
        reason: String,
    },
    #[error("io error on {path}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct EssParams {
    #[serde(rename = "node_id")]
    pub node: usize,
    #[serde(rename = "capacity_kwh")]
    pub capacity: f64,
    #[serde(rename = "p_min_kw")]
    pub p_min: f64,
    #[serde(rename = "p_max_kw")]
    pub p_max: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    pub efficiency: f64,
    /// Carried for custom rewards; the default reward ignores it.
    #[serde(default, rename = "degradation_cost")]
    pub degradation_cost: f64,
}

impl EssParams {
    pub fn validate(&self) -> Result<(), EssError> {
        let fail = |reason: &str| {
            Err(EssError::InvalidParams {
                node: self.node,
                reason: reason.to_string(),
            })
        };
        if !(0.0 <= self.soc_min && self.soc_min < self.soc_max && self.soc_max <= 1.0) {
            return fail("need 0 <= soc_min < soc_max <= 1");
        }
        if !(self.p_min < 0.0 && 0.0 < self.p_max) {
            return fail("need p_min < 0 < p_max");
        }
        if !(self.capacity > 0.0) || !self.capacity.is_finite() {
            return fail("capacity must be positive");
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return fail("efficiency must be in (0, 1]");
        }
        Ok(())
    }

    pub fn soc_midpoint(&self) -> f64 {
        0.5 * (self.soc_min + self.soc_max)
    }

    /// SOC change caused by holding `power` for `dt` hours.
    pub fn soc_delta(&self, power: f64, dt: f64) -> f64 {
        if power >= 0.0 {
            self.efficiency * power * dt / self.capacity
        } else {
            power * dt / (self.efficiency * self.capacity)
        }
    }

    /// Power range that keeps SOC inside its bounds over one step.
    pub fn feasible_range(&self, soc: f64, dt: f64) -> (f64, f64) {
        let charge = ((self.soc_max - soc).max(0.0) * self.capacity / (self.efficiency * dt))
            .min(self.p_max);
        let discharge =
            (-(soc - self.soc_min).max(0.0) * self.efficiency * self.capacity / dt).max(self.p_min);
        (discharge, charge)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssState {
    pub soc: f64,
}

/// Clips `requested` (kW) to the power limits and then to the SOC-feasible
/// range, and advances the SOC. Returns the new state and the realized power.
pub fn apply_dispatch(
    params: &EssParams,
    state: EssState,
    requested: f64,
    dt: f64,
) -> (EssState, f64) {
    debug_assert!(dt > 0.0);
    let requested = if requested.is_finite() {
        requested
    } else {
        0.0
    };
    let (lo, hi) = params.feasible_range(state.soc, dt);
    let realized = requested.clamp(params.p_min, params.p_max);
    if realized >= hi && hi < params.p_max {
        return (
            EssState {
                soc: params.soc_max,
            },
            hi,
        );
    }
    if realized <= lo && lo > params.p_min {
        return (
            EssState {
                soc: params.soc_min,
            },
            lo,
        );
    }
    let soc = state.soc + params.soc_delta(realized, dt);
    (
        EssState {
            soc: soc.clamp(params.soc_min, params.soc_max),
        },
        realized,
    )
}

pub fn load_ess(path: &Path) -> Result<Vec<EssParams>, EssError> {
    let name = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| EssError::Io {
        path: name.clone(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut fleet = Vec::new();
    for (row, rec) in reader.deserialize::<EssParams>().enumerate() {
        let params = rec.map_err(|e| EssError::MalformedRow {
            path: name.clone(),
            row: row + 1,
            reason: e.to_string(),
        })?;
        params.validate()?;
        fleet.push(params);
    }
    Ok(fleet)
}
