// SPDX-License-Identifier: MIT OR Apache-2.0

//! Time-aligned multi-sensor data, CSV ingestion and synthetic data generation.

mod csvio;
mod synth;

pub use csvio::{load_csv, read_csv, write_csv, CadenceGap, Loaded, Schema};
pub use synth::{
    generate_synthetic, read_ground_truth, write_ground_truth, FaultWindow, GroundTruth,
    SyntheticSpec, TruthPoint, TruthRecord, TruthRecordKind, MAX_SPIKE_RATE,
};

use std::collections::HashSet;
use std::fmt;

use chrono::{DateTime, Utc};

use crate::error::{Error, Result};
use crate::stats::SegmentStats;

/// Sampling cadence of plant historian exports: one reading per minute.
pub const CADENCE_SECONDS: i64 = 60;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Timestamp {
    pub index: usize,
    pub wall_time: Option<DateTime<Utc>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SignalKind {
    Temperature,
    Pressure,
    FlowRate,
    Other,
}

impl SignalKind {
    /// Guesses the measured quantity from the tag prefix (`T..`, `P..`, `F..`).
    pub fn infer(id: &str) -> Self {
        match id.trim().chars().next().map(|c| c.to_ascii_uppercase()) {
            Some('T') => SignalKind::Temperature,
            Some('P') => SignalKind::Pressure,
            Some('F') => SignalKind::FlowRate,
            _ => SignalKind::Other,
        }
    }

    pub fn default_unit(self) -> &'static str {
        match self {
            SignalKind::Temperature => "°C",
            SignalKind::Pressure => "kPa",
            SignalKind::FlowRate => "t/h",
            SignalKind::Other => "",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SignalKind::Temperature => "temperature",
            SignalKind::Pressure => "pressure",
            SignalKind::FlowRate => "flow_rate",
            SignalKind::Other => "other",
        }
    }
}

impl fmt::Display for SignalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One sensor's readings. Missing positions hold `NaN` in `values` and `true`
/// in the mask; every other value is finite.
#[derive(Clone, Debug, PartialEq)]
pub struct Signal {
    id: String,
    kind: SignalKind,
    unit: String,
    values: Vec<f64>,
    missing: Vec<bool>,
}

impl Signal {
    /// Builds a signal from raw values, treating `NaN` as missing.
    pub fn new(id: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let missing = values.iter().map(|v| v.is_nan()).collect();
        Self::with_mask(id, values, missing)
    }

    pub fn with_mask(id: impl Into<String>, mut values: Vec<f64>, missing: Vec<bool>) -> Result<Self> {
        let id = id.into();
        if values.len() != missing.len() {
            return Err(Error::Validation(format!(
                "signal {id}: {} values but {} mask entries",
                values.len(),
                missing.len()
            )));
        }
        for (i, (v, &m)) in values.iter_mut().zip(&missing).enumerate() {
            if m {
                *v = f64::NAN;
            } else if !v.is_finite() {
                return Err(Error::Validation(format!(
                    "signal {id}: non-finite value at index {i}"
                )));
            }
        }
        let kind = SignalKind::infer(&id);
        Ok(Signal {
            unit: kind.default_unit().to_owned(),
            id,
            kind,
            values,
            missing,
        })
    }

    pub fn with_kind(mut self, kind: SignalKind, unit: impl Into<String>) -> Self {
        self.kind = kind;
        self.unit = unit.into();
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn kind(&self) -> SignalKind {
        self.kind
    }

    pub fn unit(&self) -> &str {
        &self.unit
    }

    /// Raw values, `NaN` at missing positions.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn missing(&self) -> &[bool] {
        &self.missing
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<f64> {
        if self.missing[i] {
            None
        } else {
            Some(self.values[i])
        }
    }

    pub fn present(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values
            .iter()
            .zip(&self.missing)
            .enumerate()
            .filter(|(_, (_, &m))| !m)
            .map(|(i, (&v, _))| (i, v))
    }

    pub fn n_present(&self) -> usize {
        self.missing.iter().filter(|m| !**m).count()
    }

    pub fn has_missing(&self) -> bool {
        self.missing.iter().any(|&m| m)
    }

    /// Same identity and mask, new values (used by imputation).
    pub(crate) fn replace_values(&self, values: Vec<f64>) -> Result<Signal> {
        Ok(Signal::with_mask(self.id.clone(), values, self.missing.clone())?
            .with_kind(self.kind, self.unit.clone()))
    }

    pub fn stats(&self) -> SegmentStats {
        SegmentStats::from_values(&self.values)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    timestamps: Vec<Timestamp>,
    signals: Vec<Signal>,
    index_origin: u64,
}

impl Dataset {
    pub fn new(timestamps: Vec<Timestamp>, signals: Vec<Signal>) -> Result<Self> {
        Self::with_origin(timestamps, signals, 0)
    }

    /// `index_origin` is the integer label of the first row when the source
    /// file used plain integer timestamps.
    pub fn with_origin(timestamps: Vec<Timestamp>, signals: Vec<Signal>, index_origin: u64) -> Result<Self> {
        let n = timestamps.len();
        if n < 2 {
            return Err(Error::Validation(format!("dataset needs at least 2 samples, got {n}")));
        }
        if signals.is_empty() {
            return Err(Error::Validation("dataset needs at least one signal".into()));
        }
        for (i, ts) in timestamps.iter().enumerate() {
            if ts.index != i {
                return Err(Error::Validation(format!(
                    "timestamp indices must be contiguous from 0; position {i} has index {}",
                    ts.index
                )));
            }
        }
        let mut seen = HashSet::new();
        for s in &signals {
            if s.len() != n {
                return Err(Error::Validation(format!(
                    "signal {} has {} samples, dataset has {n}",
                    s.id(),
                    s.len()
                )));
            }
            if s.id().is_empty() {
                return Err(Error::Validation("empty signal id".into()));
            }
            if !seen.insert(s.id().to_owned()) {
                return Err(Error::Validation(format!("duplicate signal id {}", s.id())));
            }
        }
        Ok(Dataset {
            timestamps,
            signals,
            index_origin,
        })
    }

    /// Index-only timestamps `0..n`.
    pub fn from_signals(signals: Vec<Signal>) -> Result<Self> {
        let n = signals.first().map(Signal::len).unwrap_or(0);
        let timestamps = (0..n).map(|index| Timestamp { index, wall_time: None }).collect();
        Self::new(timestamps, signals)
    }

    pub fn n_samples(&self) -> usize {
        self.timestamps.len()
    }

    pub fn n_signals(&self) -> usize {
        self.signals.len()
    }

    pub fn timestamps(&self) -> &[Timestamp] {
        &self.timestamps
    }

    pub fn signals(&self) -> &[Signal] {
        &self.signals
    }

    pub fn signal(&self, id: &str) -> Option<&Signal> {
        self.signals.iter().find(|s| s.id() == id)
    }

    pub fn index_origin(&self) -> u64 {
        self.index_origin
    }

    /// Text label of row `i` as written to CSV exports.
    pub fn time_label(&self, i: usize) -> String {
        match self.timestamps[i].wall_time {
            Some(t) => t.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
            None => (self.index_origin + i as u64).to_string(),
        }
    }

    /// Same timestamps, replaced signals.
    pub fn with_signals(&self, signals: Vec<Signal>) -> Result<Dataset> {
        Dataset::with_origin(self.timestamps.clone(), signals, self.index_origin)
    }
}

/// Ratio of mean to standard deviation over the non-missing samples.
///
/// A zero standard deviation gives `+inf` for a non-zero mean and `0` for an
/// all-zero signal.
pub fn stn_ratio(signal: &Signal) -> Result<f64> {
    let stats = signal.stats();
    if stats.is_empty() {
        return Err(Error::EmptyInput(format!("signal {} has no present values", signal.id())));
    }
    if stats.count() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: stats.count() as usize,
        });
    }
    let (mean, std) = (stats.mean(), stats.std_dev());
    if std == 0.0 {
        return Ok(if mean == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(mean / std)
}
