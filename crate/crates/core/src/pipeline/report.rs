// SPDX-License-Identifier: MIT OR Apache-2.0

//! The run report: one TOML document with the parameters used and every
//! summary table of a pipeline run.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sigma::CleanReport;

/// Ranges listed per cluster before the list is cut short.
pub const MAX_LISTED_RANGES: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub run: RunSection,
    #[serde(default)]
    pub signals: Vec<SignalSummary>,
    pub pca: PcaSection,
    #[serde(default)]
    pub periods: Vec<PeriodSummary>,
    pub clusters: ClusterSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<TruthSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub input: String,
    pub n_samples: usize,
    pub n_signals: usize,
    pub cadence_gaps: usize,
    pub rows_inserted: usize,
    pub rows_used: usize,
    pub rows_dropped: usize,
    pub block_size: usize,
    pub min_piece_len: usize,
    pub min_score: f64,
    pub spread: String,
    pub n_components: usize,
    pub alpha: f64,
    pub epsilon_mode: String,
    pub min_pts_mode: String,
    pub seed: u64,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSummary {
    pub id: String,
    pub kind: String,
    pub unit: String,
    pub n_present: usize,
    pub stn: f64,
    pub n_changepoints: usize,
    pub n_outliers: usize,
    pub n_global_outliers: usize,
    pub outlier_fraction: f64,
    pub mad: f64,
    pub residual_std: f64,
}

impl SignalSummary {
    pub fn clean_report(&self) -> CleanReport {
        CleanReport {
            mad: self.mad,
            residual_std: self.residual_std,
            n_changepoints: self.n_changepoints,
            n_outliers: self.n_outliers,
            outlier_fraction: self.outlier_fraction,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcaSection {
    pub retained: Vec<String>,
    #[serde(default)]
    pub excluded: Vec<String>,
    pub t_alpha: f64,
    pub n_flagged: usize,
    /// Mean position of the unflagged rows on the outlier map.
    pub normal_centroid: [f64; 2],
    #[serde(default)]
    pub explained: Vec<ExplainedSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainedSummary {
    pub component: usize,
    pub eigenvalue: f64,
    pub ratio: f64,
    pub cumulative: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodSummary {
    pub start: usize,
    pub end: usize,
    pub n_points: usize,
    pub start_time: String,
    pub end_time: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSection {
    pub epsilon: f64,
    pub min_pts: usize,
    pub n_clusters: usize,
    pub n_noise: usize,
    /// The most populated cluster, 0 when every point is noise.
    pub main_cluster: usize,
    #[serde(default)]
    pub summary: Vec<ClusterSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSummary {
    pub id: usize,
    pub n_points: usize,
    pub n_t2_outliers: usize,
    pub n_ranges: usize,
    /// `[start, end)` runs of consecutive samples, at most [`MAX_LISTED_RANGES`].
    pub ranges: Vec<[usize; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthSection {
    pub n_spikes: usize,
    pub n_spikes_found: usize,
    pub spike_recall: f64,
    pub n_truth_change_points: usize,
    #[serde(default)]
    pub faults: Vec<FaultSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSummary {
    pub start: usize,
    pub end: usize,
    pub n_signals: usize,
    pub flagged_fraction: f64,
    pub overlaps_period: bool,
}

impl RunReport {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Validation(format!("report serialization failed: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<RunReport> {
        toml::from_str(text).map_err(|e| Error::Parse {
            line: e.span().map(|s| text[..s.start.min(text.len())].lines().count() as u64).unwrap_or(0),
            message: e.message().to_owned(),
        })
    }

    /// Cross-table totals that must agree in any report this crate writes.
    pub fn check_consistency(&self) -> Result<()> {
        let period_total: usize = self.periods.iter().map(|p| p.n_points).sum();
        if period_total != self.pca.n_flagged {
            return Err(Error::Validation(format!(
                "periods cover {period_total} points but {} rows are flagged",
                self.pca.n_flagged
            )));
        }
        let clustered: usize = self.clusters.summary.iter().map(|c| c.n_points).sum();
        if clustered + self.clusters.n_noise != self.run.rows_used {
            return Err(Error::Validation(format!(
                "clusters hold {clustered} points plus {} noise for {} rows",
                self.clusters.n_noise, self.run.rows_used
            )));
        }
        if self.run.rows_used + self.run.rows_dropped != self.run.n_samples {
            return Err(Error::Validation("used and dropped rows do not add up to the sample count".into()));
        }
        Ok(())
    }
}
