// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seeded synthetic plant data with known short-term and long-term anomalies.
//!
//! Each signal is `level(t) + loadings · latent(t) + noise`. The latent
//! factors are slow sinusoids, so the channels are strongly correlated and
//! bounded like real operating-point swings. Spikes replace the clean value
//! with `clean ± amplitude · noise_sigma`; fault windows force the affected
//! channels to a constant.

use std::collections::HashSet;
use std::f64::consts::{PI, SQRT_2};
use std::io::{Read, Write};

use chrono::{DateTime, TimeDelta, Utc};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Dataset, Signal, Timestamp, CADENCE_SECONDS};
use crate::error::{Error, Result};

pub const MAX_SPIKE_RATE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultWindow {
    pub start: usize,
    /// Exclusive.
    pub end: usize,
    pub signals: Vec<String>,
    pub value: f64,
}

impl FaultWindow {
    pub fn contains(&self, i: usize) -> bool {
        (self.start..self.end).contains(&i)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub signal_ids: Vec<String>,
    pub n_latent: usize,
    pub loadings_scale: f64,
    /// Period of the first latent factor, in samples. Later factors run faster.
    pub latent_period: f64,
    /// Per signal, `(start, level)` mean steps. An empty plan means level 0.
    pub segment_plan: Vec<Vec<(usize, f64)>>,
    pub noise_sigma: Vec<f64>,
    pub spike_rate: f64,
    /// In multiples of the signal's `noise_sigma`.
    pub spike_amplitude: f64,
    pub fault_windows: Vec<FaultWindow>,
    pub allow_spike_fault_overlap: bool,
    pub start_time: Option<DateTime<Utc>>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_samples: 1000,
            signal_ids: vec!["T0".into()],
            n_latent: 0,
            loadings_scale: 1.0,
            latent_period: 1000.0,
            segment_plan: Vec::new(),
            noise_sigma: vec![1.0],
            spike_rate: 0.0,
            spike_amplitude: 6.0,
            fault_windows: Vec::new(),
            allow_spike_fault_overlap: false,
            start_time: None,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn n_signals(&self) -> usize {
        self.signal_ids.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_samples;
        let m = self.n_signals();
        if n < 2 {
            return Err(Error::Validation(format!("n_samples must be at least 2, got {n}")));
        }
        if m == 0 {
            return Err(Error::Validation("at least one signal id is required".into()));
        }
        let mut seen = HashSet::new();
        for id in &self.signal_ids {
            if id.is_empty() || !seen.insert(id.as_str()) {
                return Err(Error::Validation(format!("signal id `{id}` is empty or repeated")));
            }
        }
        if !self.segment_plan.is_empty() && self.segment_plan.len() != m {
            return Err(Error::Validation(format!(
                "segment_plan has {} entries for {m} signals",
                self.segment_plan.len()
            )));
        }
        for (plan, id) in self.segment_plan.iter().zip(&self.signal_ids) {
            for w in plan.windows(2) {
                if w[1].0 <= w[0].0 {
                    return Err(Error::Validation(format!("segment starts of {id} are not strictly increasing")));
                }
            }
            if plan.iter().any(|&(s, level)| s >= n || !level.is_finite()) {
                return Err(Error::Validation(format!("segment plan of {id} is out of range")));
            }
        }
        if self.noise_sigma.len() != m {
            return Err(Error::Validation(format!(
                "noise_sigma has {} entries for {m} signals",
                self.noise_sigma.len()
            )));
        }
        if self.noise_sigma.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Validation("noise_sigma must be finite and non-negative".into()));
        }
        if !(0.0..=MAX_SPIKE_RATE).contains(&self.spike_rate) {
            return Err(Error::Validation(format!(
                "spike_rate must lie in [0, {MAX_SPIKE_RATE}], got {}",
                self.spike_rate
            )));
        }
        if !self.spike_amplitude.is_finite() || !self.loadings_scale.is_finite() || self.loadings_scale < 0.0 {
            return Err(Error::Validation("spike_amplitude and loadings_scale must be finite".into()));
        }
        if self.n_latent > 0 && !(self.latent_period.is_finite() && self.latent_period > 0.0) {
            return Err(Error::Validation("latent_period must be positive".into()));
        }
        for w in &self.fault_windows {
            if w.start >= w.end || w.end > n {
                return Err(Error::Validation(format!(
                    "fault window [{}, {}) is not within [0, {n})",
                    w.start, w.end
                )));
            }
            if !w.value.is_finite() {
                return Err(Error::Validation("fault value must be finite".into()));
            }
            if let Some(id) = w.signals.iter().find(|id| !seen.contains(id.as_str())) {
                return Err(Error::Validation(format!("fault window names unknown signal {id}")));
            }
        }
        Ok(())
    }

    fn level_at(&self, signal: usize, t: usize) -> f64 {
        let Some(plan) = self.segment_plan.get(signal) else {
            return 0.0;
        };
        let k = plan.partition_point(|&(s, _)| s <= t);
        if k == 0 {
            0.0
        } else {
            plan[k - 1].1
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthPoint {
    pub signal_id: String,
    pub index: usize,
    pub value: f64,
}

/// What was injected. `latent` holds the factor trajectories and is not part
/// of the sidecar file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundTruth {
    pub change_points: Vec<TruthPoint>,
    pub spikes: Vec<TruthPoint>,
    pub faults: Vec<FaultWindow>,
    pub latent: Vec<Vec<f64>>,
}

impl GroundTruth {
    pub fn is_empty(&self) -> bool {
        self.change_points.is_empty() && self.spikes.is_empty() && self.faults.is_empty()
    }

    pub fn change_points_of(&self, id: &str) -> Vec<usize> {
        self.change_points.iter().filter(|p| p.signal_id == id).map(|p| p.index).collect()
    }

    pub fn spikes_of(&self, id: &str) -> Vec<usize> {
        self.spikes.iter().filter(|p| p.signal_id == id).map(|p| p.index).collect()
    }

    /// Flattened rows of the sidecar file.
    pub fn records(&self) -> Vec<TruthRecord> {
        let mut out = Vec::new();
        for p in &self.change_points {
            out.push(TruthRecord {
                kind: TruthRecordKind::ChangePoint,
                signal_id: p.signal_id.clone(),
                start: p.index,
                end: p.index,
                value: p.value,
            });
        }
        for p in &self.spikes {
            out.push(TruthRecord {
                kind: TruthRecordKind::Spike,
                signal_id: p.signal_id.clone(),
                start: p.index,
                end: p.index + 1,
                value: p.value,
            });
        }
        for w in &self.faults {
            for id in &w.signals {
                out.push(TruthRecord {
                    kind: TruthRecordKind::Fault,
                    signal_id: id.clone(),
                    start: w.start,
                    end: w.end,
                    value: w.value,
                });
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthRecordKind {
    #[serde(rename = "changepoint")]
    ChangePoint,
    Spike,
    Fault,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub kind: TruthRecordKind,
    pub signal_id: String,
    pub start: usize,
    pub end: usize,
    pub value: f64,
}

pub fn write_ground_truth<W: Write>(truth: &GroundTruth, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for rec in truth.records() {
        wtr.serialize(rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<ground truth writer>", e))?;
    Ok(())
}

/// Parses a sidecar file. Fault rows sharing `(start, end, value)` and
/// appearing consecutively are regrouped into one window.
pub fn read_ground_truth<R: Read>(reader: R) -> Result<GroundTruth> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut truth = GroundTruth::default();
    for rec in rdr.deserialize::<TruthRecord>() {
        let rec = rec?;
        if rec.end < rec.start || !rec.value.is_finite() {
            return Err(Error::Validation(format!(
                "ground truth row for {} has an invalid range or value",
                rec.signal_id
            )));
        }
        match rec.kind {
            TruthRecordKind::ChangePoint => truth.change_points.push(TruthPoint {
                signal_id: rec.signal_id,
                index: rec.start,
                value: rec.value,
            }),
            TruthRecordKind::Spike => truth.spikes.push(TruthPoint {
                signal_id: rec.signal_id,
                index: rec.start,
                value: rec.value,
            }),
            TruthRecordKind::Fault => match truth.faults.last_mut() {
                Some(w) if w.start == rec.start && w.end == rec.end && w.value.to_bits() == rec.value.to_bits() => {
                    w.signals.push(rec.signal_id)
                }
                _ => truth.faults.push(FaultWindow {
                    start: rec.start,
                    end: rec.end,
                    signals: vec![rec.signal_id],
                    value: rec.value,
                }),
            },
        }
    }
    Ok(truth)
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generates the dataset described by `spec`. Every random draw comes from a
/// stream keyed by signal position, so the output depends on `spec` alone.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    let n = spec.n_samples;
    let m = spec.n_signals();
    let k = spec.n_latent;

    let mut rng = rng_for(spec.seed, 0);
    let loadings: Vec<Vec<f64>> = (0..m)
        .map(|_| {
            (0..k)
                .map(|_| spec.loadings_scale * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let latent: Vec<Vec<f64>> = (0..k)
        .map(|j| {
            let period = spec.latent_period / (1.0 + 0.618 * j as f64);
            let phase = rng.random_range(0.0..2.0 * PI);
            (0..n)
                .map(|t| SQRT_2 * (2.0 * PI * t as f64 / period + phase).sin())
                .collect()
        })
        .collect();

    let blocked: Vec<bool> = if spec.allow_spike_fault_overlap {
        vec![false; n]
    } else {
        (0..n).map(|t| spec.fault_windows.iter().any(|w| w.contains(t))).collect()
    };
    let eligible: Vec<usize> = (0..n).filter(|&t| !blocked[t]).collect();

    let per_signal: Vec<(Vec<f64>, Vec<TruthPoint>)> = (0..m)
        .into_par_iter()
        .map(|i| {
            let id = &spec.signal_ids[i];
            let sigma = spec.noise_sigma[i];
            let clean: Vec<f64> = (0..n)
                .map(|t| {
                    spec.level_at(i, t) + loadings[i].iter().zip(&latent).map(|(l, f)| l * f[t]).sum::<f64>()
                })
                .collect();
            let mut noise_rng = rng_for(spec.seed, 1 + i as u64);
            let mut values: Vec<f64> = clean
                .iter()
                .map(|c| c + sigma * noise_rng.sample::<f64, _>(StandardNormal))
                .collect();

            let mut spike_rng = rng_for(spec.seed, 1 + (m + i) as u64);
            let count = ((spec.spike_rate * eligible.len() as f64).round() as usize).min(eligible.len());
            let mut picks: Vec<usize> = index::sample(&mut spike_rng, eligible.len(), count)
                .into_iter()
                .map(|j| eligible[j])
                .collect();
            picks.sort_unstable();
            let mut spikes = Vec::with_capacity(count);
            for t in picks {
                let sign = if spike_rng.random::<bool>() { 1.0 } else { -1.0 };
                let v = clean[t] + sign * spec.spike_amplitude * sigma;
                values[t] = v;
                spikes.push(TruthPoint {
                    signal_id: id.clone(),
                    index: t,
                    value: v,
                });
            }
            for w in spec.fault_windows.iter().filter(|w| w.signals.contains(id)) {
                values[w.start..w.end].fill(w.value);
            }
            (values, spikes)
        })
        .collect();

    let mut signals = Vec::with_capacity(m);
    let mut truth = GroundTruth {
        latent,
        faults: spec.fault_windows.clone(),
        ..GroundTruth::default()
    };
    for (i, (values, spikes)) in per_signal.into_iter().enumerate() {
        let id = &spec.signal_ids[i];
        if let Some(plan) = spec.segment_plan.get(i) {
            for &(start, level) in plan.iter().filter(|(s, _)| *s > 0) {
                truth.change_points.push(TruthPoint {
                    signal_id: id.clone(),
                    index: start,
                    value: level,
                });
            }
        }
        truth.spikes.extend(spikes);
        signals.push(Signal::new(id.clone(), values)?);
    }
    let timestamps = (0..n)
        .map(|index| Timestamp {
            index,
            wall_time: spec
                .start_time
                .map(|t0| t0 + TimeDelta::seconds(index as i64 * CADENCE_SECONDS)),
        })
        .collect();
    Ok((Dataset::new(timestamps, signals)?, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(m: usize) -> Vec<String> {
        (0..m).map(|i| format!("T{i}")).collect()
    }

    #[test]
    fn pure_noise_has_empty_truth() {
        let spec = SyntheticSpec {
            n_samples: 2000,
            signal_ids: ids(2),
            segment_plan: vec![vec![(0, 5.0)], vec![(0, -3.0)]],
            noise_sigma: vec![1.0, 2.0],
            seed: 3,
            ..SyntheticSpec::default()
        };
        let (ds, truth) = generate_synthetic(&spec).unwrap();
        assert!(truth.is_empty());
        let s = ds.signal("T1").unwrap().stats();
        assert!((s.mean() + 3.0).abs() < 0.2);
        assert!((s.std_dev() - 2.0).abs() < 0.15);
    }

    #[test]
    fn step_at_500_is_recorded() {
        let spec = SyntheticSpec {
            n_samples: 1000,
            signal_ids: ids(3),
            segment_plan: vec![vec![(0, 0.0), (500, 4.0)]; 3],
            noise_sigma: vec![1.0; 3],
            ..SyntheticSpec::default()
        };
        let (_, truth) = generate_synthetic(&spec).unwrap();
        for id in ids(3) {
            assert_eq!(truth.change_points_of(&id), vec![500]);
        }
    }

    fn busy_spec(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n_samples: 3000,
            signal_ids: ids(4),
            n_latent: 2,
            loadings_scale: 3.0,
            latent_period: 2000.0,
            segment_plan: vec![vec![(0, 10.0), (1200, 14.0)]; 4],
            noise_sigma: vec![0.5; 4],
            spike_rate: 0.02,
            spike_amplitude: 7.0,
            fault_windows: vec![FaultWindow {
                start: 2000,
                end: 2300,
                signals: vec!["T1".into(), "T2".into()],
                value: 0.0,
            }],
            seed,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let (a, ta) = generate_synthetic(&busy_spec(11)).unwrap();
        let (b, tb) = generate_synthetic(&busy_spec(11)).unwrap();
        let (c, _) = generate_synthetic(&busy_spec(12)).unwrap();
        let bits = |d: &Dataset| -> Vec<u64> { d.signals().iter().flat_map(|s| s.values().iter().map(|v| v.to_bits())).collect() };
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(ta, tb);
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn spikes_are_exact_and_avoid_faults() {
        let spec = busy_spec(5);
        let (ds, truth) = generate_synthetic(&spec).unwrap();
        assert_eq!(truth.spikes_of("T0").len(), (0.02f64 * 2700.0).round() as usize);
        let w = &spec.fault_windows[0];
        for p in &truth.spikes {
            assert!(!w.contains(p.index));
            assert_eq!(ds.signal(&p.signal_id).unwrap().get(p.index), Some(p.value));
        }
        let t1 = ds.signal("T1").unwrap();
        assert!((w.start..w.end).all(|t| t1.get(t) == Some(0.0)));
    }

    #[test]
    fn spike_amplitude_is_exact_in_noise_units() {
        let mut spec = busy_spec(5);
        spec.n_latent = 0;
        spec.noise_sigma = vec![0.5, 1.0, 2.0, 0.25];
        let (_, truth) = generate_synthetic(&spec).unwrap();
        for p in &truth.spikes {
            let i = spec.signal_ids.iter().position(|s| *s == p.signal_id).unwrap();
            let offset = (p.value - spec.level_at(i, p.index)).abs();
            assert!((offset - spec.spike_amplitude * spec.noise_sigma[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = busy_spec(0);
        s.spike_rate = 0.1;
        assert!(generate_synthetic(&s).is_err());
        let mut s = busy_spec(0);
        s.fault_windows[0].end = 5000;
        assert!(generate_synthetic(&s).is_err());
        let mut s = busy_spec(0);
        s.segment_plan[0] = vec![(10, 1.0), (5, 2.0)];
        assert!(generate_synthetic(&s).is_err());
        let mut s = busy_spec(0);
        s.noise_sigma.pop();
        assert!(generate_synthetic(&s).is_err());
    }

    #[test]
    fn sidecar_round_trip() {
        let (_, truth) = generate_synthetic(&busy_spec(9)).unwrap();
        let mut buf = Vec::new();
        write_ground_truth(&truth, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("kind,signal_id,start,end,value\n"));
        assert!(text.contains("fault,T1,2000,2300,0"));
        let back = read_ground_truth(buf.as_slice()).unwrap();
        assert_eq!(back.change_points, truth.change_points);
        assert_eq!(back.spikes, truth.spikes);
        assert_eq!(back.faults, truth.faults);
    }
}
