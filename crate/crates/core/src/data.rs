//! Timestamp-indexed operational data (demand, PV, price).
//!
//! Columns are classified by name: `p_node_<id>`, `q_node_<id>`,
//! `pv_node_<id>` and `price`. Anything else is rejected.

use std::io::Write;
use std::ops::Range;
use std::path::Path;

use chrono::{NaiveDateTime, NaiveTime, TimeDelta};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("unknown column kind for header `{0}`")]
    UnknownColumnKind(String),
    #[error("irregular timestamps at row {row}: expected {expected}, found {found}")]
    IrregularTimestamps {
        row: usize,
        expected: String,
        found: String,
    },
    #[error("file has no data rows")]
    EmptyFile,
    #[error("row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("column `{0}` has no values at all")]
    AllMissing(String),
    #[error("split boundary {0} is not strictly inside the dataset")]
    BoundaryOutOfRange(NaiveDateTime),
    #[error("split boundary {0} is not at the start of a day")]
    BoundaryNotDayAligned(NaiveDateTime),
    #[error("day index {index} out of range (dataset has {days} days)")]
    IndexOutOfRange { index: usize, days: usize },
    #[error("timestamp {0} not in the dataset index")]
    TimestampNotFound(NaiveDateTime),
    #[error("resolution of {0} minutes does not divide a day")]
    BadResolution(u32),
    #[error("{0}")]
    Inconsistent(String),
    #[error("io error")]
    Io(#[from] std::io::Error),
    #[error("csv error")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ColumnKind {
    ActiveDemand(usize),
    ReactiveDemand(usize),
    Pv(usize),
    Price,
}

impl ColumnKind {
    pub fn classify(name: &str) -> Option<ColumnKind> {
        if name == "price" {
            return Some(ColumnKind::Price);
        }
        let (prefix, id) = name.rsplit_once("_node_")?;
        let id: usize = id.parse().ok()?;
        match prefix {
            "p" => Some(ColumnKind::ActiveDemand(id)),
            "q" => Some(ColumnKind::ReactiveDemand(id)),
            "pv" => Some(ColumnKind::Pv(id)),
            _ => None,
        }
    }

    pub fn node(&self) -> Option<usize> {
        match *self {
            ColumnKind::ActiveDemand(n) | ColumnKind::ReactiveDemand(n) | ColumnKind::Pv(n) => {
                Some(n)
            }
            ColumnKind::Price => None,
        }
    }

    pub fn column_name(&self) -> String {
        match self {
            ColumnKind::ActiveDemand(n) => format!("p_node_{n}"),
            ColumnKind::ReactiveDemand(n) => format!("q_node_{n}"),
            ColumnKind::Pv(n) => format!("pv_node_{n}"),
            ColumnKind::Price => "price".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceUnit {
    #[default]
    EurPerKwh,
    EurPerMwh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    pub timestamps: Vec<NaiveDateTime>,
    pub resolution_minutes: u32,
    pub columns: Vec<Column>,
}

/// One time slot. Vectors are indexed by node id; nodes without data read
/// as zero through the accessors.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotRecord {
    pub timestamp: NaiveDateTime,
    pub demand_p: Vec<f64>,
    pub demand_q: Vec<f64>,
    pub pv_p: Vec<f64>,
    /// EUR/kWh.
    pub price: f64,
}

impl SlotRecord {
    pub fn demand_p(&self, node: usize) -> f64 {
        self.demand_p.get(node).copied().unwrap_or(0.0)
    }

    pub fn demand_q(&self, node: usize) -> f64 {
        self.demand_q.get(node).copied().unwrap_or(0.0)
    }

    pub fn pv_p(&self, node: usize) -> f64 {
        self.pv_p.get(node).copied().unwrap_or(0.0)
    }

    /// Demand minus PV at a node (kW).
    pub fn net_load(&self, node: usize) -> f64 {
        self.demand_p(node) - self.pv_p(node)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSlice {
    pub day_start: NaiveDateTime,
    pub rows: Vec<SlotRecord>,
}

impl EpisodeSlice {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// The first `horizon` slots.
    pub fn truncated(&self, horizon: usize) -> EpisodeSlice {
        EpisodeSlice {
            day_start: self.day_start,
            rows: self.rows[..horizon.min(self.rows.len())].to_vec(),
        }
    }
}

const TIMESTAMP_FORMATS: [&str; 4] = [
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M",
];

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    TIMESTAMP_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s.trim(), f).ok())
}

pub fn format_timestamp(ts: &NaiveDateTime) -> String {
    ts.format("%Y-%m-%dT%H:%M:%S").to_string()
}

fn parse_value(raw: &str) -> Result<f64, String> {
    let t = raw.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("nan") || t.eq_ignore_ascii_case("na") {
        return Ok(f64::NAN);
    }
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() || v.is_nan() => Ok(v),
        _ => Err(format!("cannot parse `{t}` as a number")),
    }
}

/// Linear interpolation for interior gaps, nearest value at the edges.
pub fn fill_missing(values: &mut [f64]) -> bool {
    let known: Vec<usize> = (0..values.len()).filter(|&i| !values[i].is_nan()).collect();
    let (Some(&first), Some(&last)) = (known.first(), known.last()) else {
        return false;
    };
    for i in 0..first {
        values[i] = values[first];
    }
    for i in last + 1..values.len() {
        values[i] = values[last];
    }
    for pair in known.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let span = (b - a) as f64;
        for i in a + 1..b {
            let w = (i - a) as f64 / span;
            values[i] = values[a] + w * (values[b] - values[a]);
        }
    }
    true
}

/// Loads a time-series CSV whose first column is `timestamp`.
pub fn load_timeseries(
    path: &Path,
    resolution_minutes: u32,
    price_unit: PriceUnit,
) -> Result<TimeSeriesDataset, DataError> {
    let file = std::fs::File::open(path)?;
    read_timeseries(file, resolution_minutes, price_unit)
}

pub fn read_timeseries<R: std::io::Read>(
    reader: R,
    resolution_minutes: u32,
    price_unit: PriceUnit,
) -> Result<TimeSeriesDataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = reader.headers()?.clone();
    if headers.is_empty() {
        return Err(DataError::EmptyFile);
    }
    let mut columns = Vec::with_capacity(headers.len() - 1);
    for name in headers.iter().skip(1) {
        let kind =
            ColumnKind::classify(name).ok_or_else(|| DataError::UnknownColumnKind(name.into()))?;
        if columns.iter().any(|c: &Column| c.kind == kind) {
            return Err(DataError::Inconsistent(format!(
                "duplicate column `{name}`"
            )));
        }
        columns.push(Column {
            name: name.to_string(),
            kind,
            values: Vec::new(),
        });
    }

    let mut timestamps = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let bad = |reason: String| DataError::MalformedRow {
            row: row + 1,
            reason,
        };
        if rec.len() != headers.len() {
            return Err(bad(format!(
                "expected {} fields, got {}",
                headers.len(),
                rec.len()
            )));
        }
        let ts =
            parse_timestamp(&rec[0]).ok_or_else(|| bad(format!("bad timestamp `{}`", &rec[0])))?;
        timestamps.push(ts);
        for (col, raw) in columns.iter_mut().zip(rec.iter().skip(1)) {
            col.values.push(parse_value(raw).map_err(bad)?);
        }
    }
    if timestamps.is_empty() {
        return Err(DataError::EmptyFile);
    }

    for col in &mut columns {
        if !fill_missing(&mut col.values) {
            return Err(DataError::AllMissing(col.name.clone()));
        }
        if col.kind == ColumnKind::Price && price_unit == PriceUnit::EurPerMwh {
            col.values.iter_mut().for_each(|v| *v /= 1000.0);
        }
    }
    TimeSeriesDataset::new(timestamps, resolution_minutes, columns)
}

impl TimeSeriesDataset {
    pub fn new(
        timestamps: Vec<NaiveDateTime>,
        resolution_minutes: u32,
        columns: Vec<Column>,
    ) -> Result<Self, DataError> {
        if resolution_minutes == 0 || (24 * 60) % resolution_minutes != 0 {
            return Err(DataError::BadResolution(resolution_minutes));
        }
        if timestamps.is_empty() {
            return Err(DataError::EmptyFile);
        }
        let step = TimeDelta::minutes(resolution_minutes as i64);
        for (row, pair) in timestamps.windows(2).enumerate() {
            if pair[1] - pair[0] != step {
                return Err(DataError::IrregularTimestamps {
                    row: row + 2,
                    expected: format_timestamp(&(pair[0] + step)),
                    found: format_timestamp(&pair[1]),
                });
            }
        }
        for c in &columns {
            if c.values.len() != timestamps.len() {
                return Err(DataError::Inconsistent(format!(
                    "column `{}` has {} values for {} timestamps",
                    c.name,
                    c.values.len(),
                    timestamps.len()
                )));
            }
            if c.values.iter().any(|v| !v.is_finite()) {
                return Err(DataError::Inconsistent(format!(
                    "column `{}` has non-finite values",
                    c.name
                )));
            }
        }
        Ok(TimeSeriesDataset {
            timestamps,
            resolution_minutes,
            columns,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn dt_hours(&self) -> f64 {
        self.resolution_minutes as f64 / 60.0
    }

    pub fn rows_per_day(&self) -> usize {
        (24 * 60 / self.resolution_minutes) as usize
    }

    /// Number of complete days, counted in 24 h blocks from the first row.
    pub fn day_count(&self) -> usize {
        self.len() / self.rows_per_day()
    }

    pub fn column(&self, kind: ColumnKind) -> Option<&Column> {
        self.columns.iter().find(|c| c.kind == kind)
    }

    pub fn max_node_id(&self) -> usize {
        self.columns
            .iter()
            .filter_map(|c| c.kind.node())
            .max()
            .unwrap_or(0)
    }

    pub fn slice_rows(&self, range: Range<usize>) -> TimeSeriesDataset {
        TimeSeriesDataset {
            timestamps: self.timestamps[range.clone()].to_vec(),
            resolution_minutes: self.resolution_minutes,
            columns: self
                .columns
                .iter()
                .map(|c| Column {
                    name: c.name.clone(),
                    kind: c.kind,
                    values: c.values[range.clone()].to_vec(),
                })
                .collect(),
        }
    }

    pub fn record(&self, row: usize) -> SlotRecord {
        let width = self.max_node_id() + 1;
        let mut rec = SlotRecord {
            timestamp: self.timestamps[row],
            demand_p: vec![0.0; width],
            demand_q: vec![0.0; width],
            pv_p: vec![0.0; width],
            price: 0.0,
        };
        for c in &self.columns {
            let v = c.values[row];
            match c.kind {
                ColumnKind::ActiveDemand(n) => rec.demand_p[n] = v,
                ColumnKind::ReactiveDemand(n) => rec.demand_q[n] = v,
                ColumnKind::Pv(n) => rec.pv_p[n] = v,
                ColumnKind::Price => rec.price = v,
            }
        }
        rec
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["timestamp".to_string()];
        header.extend(self.columns.iter().map(|c| c.name.clone()));
        w.write_record(&header)?;
        for (row, ts) in self.timestamps.iter().enumerate() {
            let mut rec = vec![format_timestamp(ts)];
            rec.extend(self.columns.iter().map(|c| c.values[row].to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Splits at a day-aligned boundary: train is `[start, boundary)`, test is
/// `[boundary, end]`.
pub fn split_train_test(
    ds: &TimeSeriesDataset,
    boundary: NaiveDateTime,
) -> Result<(TimeSeriesDataset, TimeSeriesDataset), DataError> {
    let first = ds.timestamps[0];
    let last = *ds.timestamps.last().unwrap();
    if boundary <= first || boundary > last {
        return Err(DataError::BoundaryOutOfRange(boundary));
    }
    if boundary.time() != NaiveTime::MIN {
        return Err(DataError::BoundaryNotDayAligned(boundary));
    }
    let at = ds.timestamps.partition_point(|t| *t < boundary);
    Ok((ds.slice_rows(0..at), ds.slice_rows(at..ds.len())))
}

pub fn select_day(ds: &TimeSeriesDataset, day_index: usize) -> Result<EpisodeSlice, DataError> {
    let days = ds.day_count();
    if day_index >= days {
        return Err(DataError::IndexOutOfRange {
            index: day_index,
            days,
        });
    }
    let per_day = ds.rows_per_day();
    let start = day_index * per_day;
    Ok(EpisodeSlice {
        day_start: ds.timestamps[start],
        rows: (start..start + per_day).map(|r| ds.record(r)).collect(),
    })
}

pub fn select_timeslot(ds: &TimeSeriesDataset, ts: NaiveDateTime) -> Result<SlotRecord, DataError> {
    ds.timestamps
        .binary_search(&ts)
        .map(|row| ds.record(row))
        .map_err(|_| DataError::TimestampNotFound(ts))
}
