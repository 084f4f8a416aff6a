//! Scenario augmentation: per-(column, timestep) Gaussian mixtures joined by
//! a Gaussian or t copula over whole-day vectors.

mod copula;
mod gmm;

pub use copula::{fit_copula, sample_copula, CopulaFamily, CopulaModel};
pub use gmm::{
    fit_em, fit_gmm, fit_gmm_candidates, gmm_cdf, gmm_quantile, variance_floor, GmmCandidate,
    GmmComponentSet, DEFAULT_K_MAX, MIN_SAMPLES,
};

use chrono::TimeDelta;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Column, ColumnKind, DataError, TimeSeriesDataset};
use crate::stats::open_unit;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("too few samples: need {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("probability {0} outside (0, 1)")]
    UOutOfRange(f64),
    #[error("copula fit needs at least 4 rows, got {0}")]
    NotEnoughRows(usize),
    #[error("{0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentFamily {
    GmmIndependent,
    GaussianCopula,
    TCopula,
}

impl AugmentFamily {
    fn copula(self) -> Option<CopulaFamily> {
        match self {
            AugmentFamily::GmmIndependent => None,
            AugmentFamily::GaussianCopula => Some(CopulaFamily::Gaussian),
            AugmentFamily::TCopula => Some(CopulaFamily::T),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentOptions {
    pub k_max: usize,
    pub include_pv: bool,
    pub include_price: bool,
}

impl Default for AugmentOptions {
    fn default() -> Self {
        AugmentOptions {
            k_max: DEFAULT_K_MAX,
            include_pv: false,
            include_price: false,
        }
    }
}

impl AugmentOptions {
    fn modelled(&self, kind: ColumnKind) -> bool {
        match kind {
            ColumnKind::ActiveDemand(_) | ColumnKind::ReactiveDemand(_) => true,
            ColumnKind::Pv(_) => self.include_pv,
            ColumnKind::Price => self.include_price,
        }
    }
}

/// Fitted mixture-plus-copula model.
///
/// Margins are laid out column-major by modelled column, then timestep:
/// margin `c·H + t` belongs to `columns[c]` at slot `t`.
#[derive(Debug, Clone)]
pub struct GmcModel {
    pub columns: Vec<ColumnKind>,
    pub steps_per_day: usize,
    pub margins: Vec<GmmComponentSet>,
    pub copula: Option<CopulaModel>,
}

impl GmcModel {
    pub fn from_parts(
        columns: Vec<ColumnKind>,
        steps_per_day: usize,
        margins: Vec<GmmComponentSet>,
        copula: Option<CopulaModel>,
    ) -> Result<Self, AugmentError> {
        let d = columns.len() * steps_per_day;
        if margins.len() != d {
            return Err(AugmentError::InvalidArgument(format!(
                "{} margins for {d} (column, timestep) pairs",
                margins.len()
            )));
        }
        if let Some(c) = &copula {
            if c.dim() != d {
                return Err(AugmentError::InvalidArgument(format!(
                    "copula dimension {} does not match {d} margins",
                    c.dim()
                )));
            }
        }
        Ok(GmcModel {
            columns,
            steps_per_day,
            margins,
            copula,
        })
    }

    pub fn dim(&self) -> usize {
        self.margins.len()
    }

    pub fn margin(&self, column: usize, step: usize) -> &GmmComponentSet {
        &self.margins[column * self.steps_per_day + step]
    }

    /// Fits margins and (optionally) the copula on complete days of `ds`.
    pub fn fit(
        ds: &TimeSeriesDataset,
        family: AugmentFamily,
        opts: &AugmentOptions,
    ) -> Result<Self, AugmentError> {
        let h = ds.rows_per_day();
        let days = ds.day_count();
        if days < MIN_SAMPLES {
            return Err(AugmentError::TooFewSamples {
                needed: MIN_SAMPLES,
                got: days,
            });
        }
        let modelled: Vec<&Column> = ds
            .columns
            .iter()
            .filter(|c| opts.modelled(c.kind))
            .collect();
        if modelled.is_empty() {
            return Err(AugmentError::InvalidArgument(
                "no columns selected for augmentation".into(),
            ));
        }
        let day_values = |c: &Column, t: usize| -> Vec<f64> {
            (0..days).map(|day| c.values[day * h + t]).collect()
        };
        let margins = (0..modelled.len() * h)
            .into_par_iter()
            .map(|m| fit_gmm(&day_values(modelled[m / h], m % h), opts.k_max))
            .collect::<Result<Vec<_>, _>>()?;

        let copula = match family.copula() {
            None => None,
            Some(cf) => {
                let d = margins.len();
                let mut u = DMatrix::zeros(days, d);
                for m in 0..d {
                    let col = modelled[m / h];
                    for day in 0..days {
                        u[(day, m)] = open_unit(margins[m].cdf(col.values[day * h + m % h]));
                    }
                }
                Some(fit_copula(&u, cf)?)
            }
        };
        Ok(GmcModel {
            columns: modelled.iter().map(|c| c.kind).collect(),
            steps_per_day: h,
            margins,
            copula,
        })
    }

    /// Samples `n_days` day-vectors (`n_days × D`) on the data scale, before
    /// any clamping.
    pub fn sample_days(&self, n_days: usize, seed: u64) -> Result<DMatrix<f64>, AugmentError> {
        let d = self.dim();
        let u = match &self.copula {
            Some(c) => sample_copula(c, n_days, seed)?,
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                DMatrix::from_fn(n_days, d, |_, _| open_unit(rng.random::<f64>()))
            }
        };
        let mut x = DMatrix::zeros(n_days, d);
        for m in 0..d {
            for day in 0..n_days {
                x[(day, m)] = self.margins[m].quantile(u[(day, m)])?;
            }
        }
        Ok(x)
    }
}

/// Produces `n_days` synthetic days with the same schema as `ds`.
///
/// Modelled columns come from the fitted GMC model; the remaining columns are
/// copied from a randomly chosen source day so that, for example, an
/// un-modelled price curve stays internally consistent. Sampled PV and
/// price are clamped at zero; demand keeps its sign.
pub fn augment_dataset(
    ds: &TimeSeriesDataset,
    family: AugmentFamily,
    n_days: usize,
    seed: u64,
    opts: &AugmentOptions,
) -> Result<TimeSeriesDataset, AugmentError> {
    if n_days == 0 {
        return Err(AugmentError::InvalidArgument("n_days must be >= 1".into()));
    }
    let model = GmcModel::fit(ds, family, opts)?;
    let h = model.steps_per_day;
    let sampled = model.sample_days(n_days, seed)?;
    // a separate stream so bootstrap choices do not perturb the copula draws
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let source_days: Vec<usize> = (0..n_days)
        .map(|_| rng.random_range(0..ds.day_count()))
        .collect();

    let columns = ds
        .columns
        .iter()
        .map(|col| {
            let mut values = Vec::with_capacity(n_days * h);
            match model.columns.iter().position(|k| *k == col.kind) {
                Some(c) => {
                    let clamp = !matches!(
                        col.kind,
                        ColumnKind::ActiveDemand(_) | ColumnKind::ReactiveDemand(_)
                    );
                    for day in 0..n_days {
                        for t in 0..h {
                            let v = sampled[(day, c * h + t)];
                            values.push(if clamp { v.max(0.0) } else { v });
                        }
                    }
                }
                None => {
                    for &src in &source_days {
                        values.extend_from_slice(&col.values[src * h..(src + 1) * h]);
                    }
                }
            }
            Column {
                name: col.name.clone(),
                kind: col.kind,
                values,
            }
        })
        .collect();
    let step = TimeDelta::minutes(ds.resolution_minutes as i64);
    let start = ds.timestamps[0];
    let timestamps = (0..n_days * h).map(|i| start + step * i as i32).collect();
    Ok(TimeSeriesDataset::new(
        timestamps,
        ds.resolution_minutes,
        columns,
    )?)
}
