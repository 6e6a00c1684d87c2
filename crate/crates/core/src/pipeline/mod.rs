// SPDX-License-Identifier: MIT OR Apache-2.0

//! End-to-end run: ingest, change points, piece-wise cleaning, PCA with T²,
//! outlier periods and DBSCAN on the outlier map.

pub mod artifacts;
pub mod report;

use std::fmt;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::changepoint::{detect_online, ChangePoint, ChangePointConfig};
use crate::cluster::{
    dbscan, estimate_epsilon, min_pts_heuristic, ClusterLabels, DbscanParams, PointSet2D, DEFAULT_EPSILON, NOISE,
};
use crate::error::{Error, Result};
use crate::pca::{fit_pca, hotelling_t2, periods_from_flags, t2_threshold, OutlierPeriod, PcaModel, ScoreMatrix, StandardizedMatrix, T2Series};
use crate::render;
use crate::series::{load_csv, read_ground_truth, stn_ratio, write_csv, Dataset, GroundTruth, Schema, Signal};
use crate::sigma::{
    clean_diagnostics, global_3sigma, impute_piecewise_mean, piece_bands, piecewise_3sigma, pieces_from_changepoints,
    Band, OutlierMask, Piece, Spread,
};

use artifacts::*;
use report::*;

/// DBSCAN radius: a fixed value or the knee of the k-distance curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EpsilonMode {
    Auto,
    Fixed(f64),
}

/// DBSCAN density threshold: a fixed count or `max(4, round(log10 N))`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MinPtsMode {
    Auto,
    Fixed(usize),
}

impl FromStr for EpsilonMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("auto") {
            return Ok(EpsilonMode::Auto);
        }
        let v: f64 = s.trim().parse().map_err(|_| Error::Config(format!("epsilon must be `auto` or a number, got `{s}`")))?;
        EpsilonMode::Fixed(v).checked()
    }
}

impl EpsilonMode {
    fn checked(self) -> Result<Self> {
        match self {
            EpsilonMode::Fixed(v) if !(v.is_finite() && v > 0.0) => {
                Err(Error::Config(format!("epsilon must be positive, got {v}")))
            }
            m => Ok(m),
        }
    }
}

impl fmt::Display for EpsilonMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EpsilonMode::Auto => f.write_str("auto"),
            EpsilonMode::Fixed(v) => write!(f, "{v}"),
        }
    }
}

impl FromStr for MinPtsMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("auto") {
            return Ok(MinPtsMode::Auto);
        }
        match s.trim().parse::<usize>() {
            Ok(0) | Err(_) => Err(Error::Config(format!("min_pts must be `auto` or a positive integer, got `{s}`"))),
            Ok(v) => Ok(MinPtsMode::Fixed(v)),
        }
    }
}

impl fmt::Display for MinPtsMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MinPtsMode::Auto => f.write_str("auto"),
            MinPtsMode::Fixed(v) => write!(f, "{v}"),
        }
    }
}

/// TOML accepts either `"auto"` or a bare number for both modes.
#[derive(Deserialize)]
#[serde(untagged)]
enum ModeRepr {
    Int(u64),
    Float(f64),
    Text(String),
}

impl<'de> Deserialize<'de> for EpsilonMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let mode = match ModeRepr::deserialize(d)? {
            ModeRepr::Int(v) => EpsilonMode::Fixed(v as f64).checked(),
            ModeRepr::Float(v) => EpsilonMode::Fixed(v).checked(),
            ModeRepr::Text(s) => s.parse(),
        };
        mode.map_err(serde::de::Error::custom)
    }
}

impl Serialize for EpsilonMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            EpsilonMode::Auto => s.serialize_str("auto"),
            EpsilonMode::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for MinPtsMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let mode = match ModeRepr::deserialize(d)? {
            ModeRepr::Int(v) => v.to_string().parse(),
            ModeRepr::Float(v) => Err(Error::Config(format!("min_pts must be an integer, got {v}"))),
            ModeRepr::Text(s) => s.parse(),
        };
        mode.map_err(serde::de::Error::custom)
    }
}

impl Serialize for MinPtsMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            MinPtsMode::Auto => s.serialize_str("auto"),
            MinPtsMode::Fixed(v) => s.serialize_u64(*v as u64),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub out: PathBuf,
    /// Ground-truth sidecar of a synthetic dataset, for recall figures.
    pub truth: Option<PathBuf>,
    pub block_size: usize,
    pub min_piece_len: usize,
    pub min_score: f64,
    pub variance_floor: f64,
    pub spread: Spread,
    pub n_components: usize,
    pub alpha: f64,
    pub epsilon: EpsilonMode,
    pub min_pts: MinPtsMode,
    /// Recorded in the report; every stage is deterministic.
    pub seed: u64,
    pub render: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let cp = ChangePointConfig::default();
        PipelineConfig {
            input: PathBuf::new(),
            out: PathBuf::from("out"),
            truth: None,
            block_size: cp.block_size,
            min_piece_len: cp.min_piece_len,
            min_score: cp.min_score,
            variance_floor: cp.variance_floor,
            spread: Spread::Std,
            n_components: 2,
            alpha: 0.05,
            epsilon: EpsilonMode::Fixed(DEFAULT_EPSILON),
            min_pts: MinPtsMode::Auto,
            seed: 0,
            render: true,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<PipelineConfig> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_owned()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn change_point_config(&self) -> ChangePointConfig {
        ChangePointConfig {
            block_size: self.block_size,
            min_piece_len: self.min_piece_len,
            variance_floor: self.variance_floor,
            min_score: self.min_score,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.change_point_config().validate()?;
        if self.n_components == 0 {
            return Err(Error::Config("n_components must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        self.epsilon.checked()?;
        if self.min_pts == MinPtsMode::Fixed(0) {
            return Err(Error::Config("min_pts must be at least 1".into()));
        }
        Ok(())
    }
}

/// Everything the per-signal stages produce for one signal.
#[derive(Clone, Debug)]
pub struct SignalOutcome {
    pub change_points: Vec<ChangePoint>,
    pub pieces: Vec<Piece>,
    pub bands: Vec<Option<Band>>,
    pub mask: OutlierMask,
    pub cleaned: Signal,
    pub summary: SignalSummary,
}

pub fn clean_signal(signal: &Signal, cfg: &ChangePointConfig, spread: Spread) -> Result<SignalOutcome> {
    let id = Some(signal.id());
    let change_points = detect_online(signal.values(), cfg).map_err(|e| e.in_stage("changepoint", id))?;
    let idx: Vec<usize> = change_points.iter().map(|c| c.index).collect();
    let pieces = pieces_from_changepoints(&idx, signal.len(), signal.values()).map_err(|e| e.in_stage("clean", id))?;
    let bands = piece_bands(signal, &pieces, spread).map_err(|e| e.in_stage("clean", id))?;
    let mask = piecewise_3sigma(signal, &pieces, spread).map_err(|e| e.in_stage("clean", id))?;
    let cleaned = impute_piecewise_mean(signal, &pieces, &mask).map_err(|e| e.in_stage("clean", id))?;
    let diag = clean_diagnostics(signal, &pieces, &mask).map_err(|e| e.in_stage("clean", id))?;
    let (global, _) = global_3sigma(signal, spread).map_err(|e| e.in_stage("clean", id))?;
    let stn = stn_ratio(signal).map_err(|e| e.in_stage("stn", id))?;
    let summary = SignalSummary {
        id: signal.id().to_owned(),
        kind: signal.kind().as_str().to_owned(),
        unit: signal.unit().to_owned(),
        n_present: signal.n_present(),
        stn,
        n_changepoints: diag.n_changepoints,
        n_outliers: diag.n_outliers,
        n_global_outliers: global.n_flagged(),
        outlier_fraction: diag.outlier_fraction,
        mad: diag.mad,
        residual_std: diag.residual_std,
    };
    Ok(SignalOutcome {
        change_points,
        pieces,
        bands,
        mask,
        cleaned,
        summary,
    })
}

/// Runs [`clean_signal`] over every signal in parallel; results keep the
/// dataset's signal order.
pub fn clean_dataset(dataset: &Dataset, cfg: &ChangePointConfig, spread: Spread) -> Result<Vec<SignalOutcome>> {
    dataset.signals().par_iter().map(|s| clean_signal(s, cfg, spread)).collect()
}

/// Change points only, for every signal.
pub fn segment_dataset(dataset: &Dataset, cfg: &ChangePointConfig) -> Result<Vec<Vec<ChangePoint>>> {
    dataset
        .signals()
        .par_iter()
        .map(|s| detect_online(s.values(), cfg).map_err(|e| e.in_stage("changepoint", Some(s.id()))))
        .collect()
}

#[derive(Clone, Debug)]
pub struct PcaOutcome {
    pub matrix_ids: Vec<String>,
    pub excluded: Vec<String>,
    pub model: PcaModel,
    /// Row index into the dataset of each matrix row.
    pub used_rows: Vec<usize>,
    /// First two score columns per used row; the second is zero for a
    /// single-column model.
    pub map: Vec<[f64; 2]>,
    pub t2: T2Series,
    /// T² flags over every dataset row; dropped rows are never flagged.
    pub flags: Vec<bool>,
    pub periods: Vec<OutlierPeriod>,
    pub n_samples: usize,
}

impl PcaOutcome {
    pub fn n_flagged(&self) -> usize {
        self.t2.n_flagged()
    }

    /// Mean map position of the rows below the limit.
    pub fn normal_centroid(&self) -> [f64; 2] {
        let (mut sx, mut sy, mut c) = (0.0, 0.0, 0usize);
        for (p, &f) in self.map.iter().zip(&self.t2.flags) {
            if !f {
                sx += p[0];
                sy += p[1];
                c += 1;
            }
        }
        if c == 0 {
            return [0.0, 0.0];
        }
        [sx / c as f64, sy / c as f64]
    }
}

/// Standardizes the rows without missing values, fits the model and scores
/// every used row against the T² limit.
pub fn pca_stage(dataset: &Dataset, n_components: usize, alpha: f64) -> Result<PcaOutcome> {
    let n = dataset.n_samples();
    let signals = dataset.signals();
    let used_rows: Vec<usize> = (0..n).filter(|&i| signals.iter().all(|s| !s.missing()[i])).collect();
    if used_rows.len() <= n_components + 1 {
        return Err(Error::Degenerate(format!(
            "{} complete rows left after dropping rows with missing values",
            used_rows.len()
        ))
        .in_stage("standardize", None));
    }
    let columns: Vec<Vec<f64>> = signals.iter().map(|s| used_rows.iter().map(|&i| s.values()[i]).collect()).collect();
    let ids = signals.iter().map(|s| s.id().to_owned()).collect();
    let x = StandardizedMatrix::from_columns(ids, &columns).map_err(|e| e.in_stage("standardize", None))?;
    drop(columns);
    let m = x.n_cols();
    if n_components > m {
        return Err(Error::Config(format!("{n_components} components requested but only {m} signals vary"))
            .in_stage("pca", None));
    }
    let fitted = n_components.max(2).min(m);
    let (model, scores) = fit_pca(&x, fitted).map_err(|e| e.in_stage("pca", None))?;
    let n_used = x.n_rows();
    drop(x);
    let map: Vec<[f64; 2]> = (0..n_used)
        .map(|r| [scores.scores[(r, 0)], if fitted > 1 { scores.scores[(r, 1)] } else { 0.0 }])
        .collect();
    let kept = ScoreMatrix {
        scores: scores.scores.columns(0, n_components).into_owned(),
    };
    drop(scores);
    let t2_values = hotelling_t2(&kept, &model.eigenvalues[..n_components]).map_err(|e| e.in_stage("t2", None))?;
    drop(kept);
    let limit = t2_threshold(n_components, n_used, alpha).map_err(|e| e.in_stage("t2", None))?;
    let t2 = T2Series::new(t2_values, limit, alpha);
    let mut flags = vec![false; n];
    for (&row, &f) in used_rows.iter().zip(&t2.flags) {
        flags[row] = f;
    }
    let periods = periods_from_flags(&flags);
    Ok(PcaOutcome {
        matrix_ids: model.col_ids.clone(),
        excluded: signals
            .iter()
            .map(|s| s.id().to_owned())
            .filter(|id| !model.col_ids.contains(id))
            .collect(),
        model,
        used_rows,
        map,
        t2,
        flags,
        periods,
        n_samples: n,
    })
}

#[derive(Clone, Debug)]
pub struct ClusterOutcome {
    pub params: DbscanParams,
    pub labels: ClusterLabels,
    pub warnings: Vec<String>,
}

/// Resolves the DBSCAN parameters and labels the map points.
pub fn cluster_stage(points: &PointSet2D, epsilon: EpsilonMode, min_pts: MinPtsMode) -> Result<ClusterOutcome> {
    let mut warnings = Vec::new();
    let min_pts = match min_pts {
        MinPtsMode::Fixed(v) => v,
        MinPtsMode::Auto => min_pts_heuristic(points.len()),
    };
    let epsilon = match epsilon {
        EpsilonMode::Fixed(v) => v,
        EpsilonMode::Auto => {
            let k = min_pts.saturating_sub(1).max(1);
            if points.len() <= k {
                warnings.push(format!(
                    "only {} map points, too few for a {k}-distance curve; epsilon falls back to {DEFAULT_EPSILON}",
                    points.len()
                ));
                DEFAULT_EPSILON
            } else {
                let est = estimate_epsilon(points, k).map_err(|e| e.in_stage("cluster", None))?;
                if est.degenerate {
                    warnings.push(format!(
                        "k-distance knee is at zero distance; epsilon falls back to {DEFAULT_EPSILON}"
                    ));
                    DEFAULT_EPSILON
                } else {
                    est.epsilon
                }
            }
        }
    };
    let params = DbscanParams { epsilon, min_pts };
    let labels = dbscan(points, &params).map_err(|e| e.in_stage("cluster", None))?;
    Ok(ClusterOutcome {
        params,
        labels,
        warnings,
    })
}

/// Index of the most populated cluster, lowest id on ties, 0 if none.
pub fn main_cluster(labels: &ClusterLabels) -> usize {
    let sizes = labels.sizes();
    let mut best = (NOISE, 0);
    for (k, &size) in sizes.iter().enumerate() {
        if size > best.1 {
            best = (k + 1, size);
        }
    }
    best.0
}

/// `[start, end)` runs of consecutive values in a sorted index list.
pub fn index_runs(sorted: &[usize]) -> Vec<[usize; 2]> {
    let mut out: Vec<[usize; 2]> = Vec::new();
    for &i in sorted {
        match out.last_mut() {
            Some(r) if r[1] == i => r[1] = i + 1,
            _ => out.push([i, i + 1]),
        }
    }
    out
}

fn cluster_summaries(labels: &ClusterLabels, source: &[usize], flags: &[bool]) -> Vec<ClusterSummary> {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); labels.n_clusters + 1];
    for (k, &l) in labels.labels.iter().enumerate() {
        members[l].push(k);
    }
    members
        .iter()
        .enumerate()
        .skip(1)
        .map(|(id, rows)| {
            let idx: Vec<usize> = rows.iter().map(|&k| source[k]).collect();
            let mut ranges = index_runs(&idx);
            let n_ranges = ranges.len();
            ranges.truncate(MAX_LISTED_RANGES);
            ClusterSummary {
                id,
                n_points: rows.len(),
                n_t2_outliers: rows.iter().filter(|&&k| flags[k]).count(),
                n_ranges,
                ranges,
            }
        })
        .collect()
}

fn truth_section(truth: &GroundTruth, dataset: &Dataset, outcomes: &[SignalOutcome], flags: &[bool], periods: &[OutlierPeriod]) -> TruthSection {
    let mut found = 0;
    for sp in &truth.spikes {
        let hit = dataset
            .signals()
            .iter()
            .position(|s| s.id() == sp.signal_id)
            .is_some_and(|k| sp.index < flags.len() && outcomes[k].mask.is_flagged(sp.index));
        found += usize::from(hit);
    }
    let n_spikes = truth.spikes.len();
    let faults = truth
        .faults
        .iter()
        .map(|w| {
            let end = w.end.min(flags.len());
            let start = w.start.min(end);
            let hit = flags[start..end].iter().filter(|&&f| f).count();
            FaultSummary {
                start: w.start,
                end: w.end,
                n_signals: w.signals.len(),
                flagged_fraction: if end > start { hit as f64 / (end - start) as f64 } else { 0.0 },
                overlaps_period: periods.iter().any(|p| p.start < w.end && w.start < p.end),
            }
        })
        .collect();
    TruthSection {
        n_spikes,
        n_spikes_found: found,
        spike_recall: if n_spikes == 0 { 1.0 } else { found as f64 / n_spikes as f64 },
        n_truth_change_points: truth.change_points.len(),
        faults,
    }
}

pub fn load_truth(path: &Path) -> Result<GroundTruth> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_ground_truth(BufReader::new(file))
}

/// In-memory results of a full run, before anything is written.
pub struct PipelineRun {
    pub dataset: Dataset,
    pub cleaned: Dataset,
    pub outcomes: Vec<SignalOutcome>,
    pub pca: PcaOutcome,
    pub clusters: ClusterOutcome,
    pub report: RunReport,
}

/// Runs every stage without touching the output directory.
pub fn execute(cfg: &PipelineConfig) -> Result<PipelineRun> {
    cfg.validate()?;
    let loaded = load_csv(&cfg.input, &Schema::Infer).map_err(|e| e.in_stage("load", None))?;
    let truth = cfg.truth.as_deref().map(load_truth).transpose().map_err(|e| e.in_stage("load", None))?;
    let dataset = loaded.dataset;
    let mut warnings: Vec<String> = loaded
        .gaps
        .iter()
        .map(|g| format!("{} missing rows inserted after row {}", g.inserted, g.after_index))
        .collect();

    let outcomes = clean_dataset(&dataset, &cfg.change_point_config(), cfg.spread)?;
    let cleaned = dataset
        .with_signals(outcomes.iter().map(|o| o.cleaned.clone()).collect())
        .map_err(|e| e.in_stage("clean", None))?;

    let pca = pca_stage(&cleaned, cfg.n_components, cfg.alpha)?;
    let used_flags = &pca.t2.flags;
    if pca.used_rows.len() < dataset.n_samples() {
        warnings.push(format!(
            "{} rows with missing values left out of the model",
            dataset.n_samples() - pca.used_rows.len()
        ));
    }
    for id in &pca.excluded {
        warnings.push(format!("signal {id} has zero variance and was left out of the model"));
    }

    let points = PointSet2D::new(pca.map.clone(), pca.used_rows.clone()).map_err(|e| e.in_stage("cluster", None))?;
    let clusters = cluster_stage(&points, cfg.epsilon, cfg.min_pts)?;
    warnings.extend(clusters.warnings.iter().cloned());

    let ratios = pca.model.all_explained_ratio();
    let mut cumulative = 0.0;
    let explained = pca
        .model
        .all_eigenvalues
        .iter()
        .zip(&ratios)
        .enumerate()
        .map(|(k, (&eigenvalue, &ratio))| {
            cumulative += ratio;
            ExplainedSummary {
                component: k + 1,
                eigenvalue,
                ratio,
                cumulative,
            }
        })
        .collect();
    let periods = pca
        .periods
        .iter()
        .map(|p| PeriodSummary {
            start: p.start,
            end: p.end,
            n_points: p.n_points,
            start_time: dataset.time_label(p.start),
            end_time: dataset.time_label(p.end - 1),
        })
        .collect();
    let summary = cluster_summaries(&clusters.labels, &pca.used_rows, used_flags);
    let truth = truth.map(|t| truth_section(&t, &dataset, &outcomes, &pca.flags, &pca.periods));

    let report = RunReport {
        run: RunSection {
            input: cfg.input.display().to_string(),
            n_samples: dataset.n_samples(),
            n_signals: dataset.n_signals(),
            cadence_gaps: loaded.gaps.len(),
            rows_inserted: loaded.gaps.iter().map(|g| g.inserted).sum(),
            rows_used: pca.used_rows.len(),
            rows_dropped: dataset.n_samples() - pca.used_rows.len(),
            block_size: cfg.block_size,
            min_piece_len: cfg.min_piece_len,
            min_score: cfg.min_score,
            spread: cfg.spread.to_string(),
            n_components: cfg.n_components,
            alpha: cfg.alpha,
            epsilon_mode: cfg.epsilon.to_string(),
            min_pts_mode: cfg.min_pts.to_string(),
            seed: cfg.seed,
            warnings,
        },
        signals: outcomes.iter().map(|o| o.summary.clone()).collect(),
        pca: PcaSection {
            retained: pca.matrix_ids.clone(),
            excluded: pca.excluded.clone(),
            t_alpha: pca.t2.threshold,
            n_flagged: pca.n_flagged(),
            normal_centroid: pca.normal_centroid(),
            explained,
        },
        periods,
        clusters: ClusterSection {
            epsilon: clusters.params.epsilon,
            min_pts: clusters.params.min_pts,
            n_clusters: clusters.labels.n_clusters,
            n_noise: clusters.labels.n_noise(),
            main_cluster: main_cluster(&clusters.labels),
            summary,
        },
        truth,
    };
    report.check_consistency().map_err(|e| e.in_stage("report", None))?;
    Ok(PipelineRun {
        dataset,
        cleaned,
        outcomes,
        pca,
        clusters,
        report,
    })
}

/// Runs the pipeline and writes every artifact into `cfg.out`. Files appear
/// only once all of them have been written.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunReport> {
    let run = execute(cfg)?;
    let mut stage = Staging::new(&cfg.out)?;
    write_clean_tables(&mut stage, &run.dataset, &run.outcomes)?;
    stage.write_with(CLEANED, |w| write_csv(&run.cleaned, w))?;
    write_pca_tables(&mut stage, &run.cleaned, &run.pca)?;
    stage.write_table(LABELS, &label_rows(&run.pca.map, &run.pca.used_rows, &run.clusters.labels))?;
    let text = run.report.to_toml()?;
    stage.write_with(REPORT, |w| std::io::Write::write_all(w, text.as_bytes()).map_err(|e| Error::io(REPORT, e)))?;
    if cfg.render {
        let inputs = render::FigureInputs::from_run(&run);
        write_figures(&mut stage, &inputs)?;
    }
    stage.commit()?;
    Ok(run.report)
}

pub fn write_figures(stage: &mut Staging, inputs: &render::FigureInputs) -> Result<()> {
    for (name, svg) in render::render_figures(inputs)? {
        let path = format!("{FIGURES}/{name}");
        stage.write_with(&path, |w| std::io::Write::write_all(w, svg.as_bytes()).map_err(|e| Error::io(&name, e)))?;
    }
    Ok(())
}

fn change_point_rows(dataset: &Dataset, per_signal: &[&[ChangePoint]]) -> Vec<ChangePointRow> {
    dataset
        .signals()
        .iter()
        .zip(per_signal)
        .flat_map(|(s, cps)| {
            cps.iter().map(move |c| ChangePointRow {
                signal_id: s.id().to_owned(),
                index: c.index,
                timestamp: dataset.time_label(c.index),
                score: c.score,
            })
        })
        .collect()
}

fn write_clean_tables(stage: &mut Staging, dataset: &Dataset, outcomes: &[SignalOutcome]) -> Result<()> {
    let cps: Vec<&[ChangePoint]> = outcomes.iter().map(|o| o.change_points.as_slice()).collect();
    stage.write_table(CHANGEPOINTS, &change_point_rows(dataset, &cps))?;
    let mut mask = Vec::new();
    let mut bands = Vec::new();
    for (s, o) in dataset.signals().iter().zip(outcomes) {
        for i in o.mask.flagged() {
            mask.push(MaskRow {
                signal_id: s.id().to_owned(),
                index: i,
                raw_value: s.values()[i],
                imputed_value: o.cleaned.values()[i],
            });
        }
        for (p, b) in o.pieces.iter().zip(&o.bands) {
            bands.push(BandRow {
                signal_id: s.id().to_owned(),
                start: p.start,
                end: p.end,
                center: b.map(|b| b.center),
                lower: b.map(|b| b.lower()),
                upper: b.map(|b| b.upper()),
            });
        }
    }
    stage.write_table(MASK, &mask)?;
    stage.write_table(BANDS, &bands)
}

fn write_pca_tables(stage: &mut Staging, dataset: &Dataset, pca: &PcaOutcome) -> Result<()> {
    stage.write_table(EXPLAINED, &explained_rows(&pca.model))?;
    let mut t2 = Vec::with_capacity(pca.n_samples);
    let mut k = 0;
    for i in 0..pca.n_samples {
        let value = if pca.used_rows.get(k) == Some(&i) {
            k += 1;
            Some(pca.t2.values[k - 1])
        } else {
            None
        };
        t2.push(T2Row {
            index: i,
            timestamp: dataset.time_label(i),
            t2: value,
            flag: u8::from(pca.flags[i]),
        });
    }
    stage.write_table(T2, &t2)?;
    drop(t2);
    let periods: Vec<PeriodRow> = pca
        .periods
        .iter()
        .map(|p| PeriodRow {
            start: p.start,
            end: p.end,
            n_points: p.n_points,
        })
        .collect();
    stage.write_table(PERIODS, &periods)?;
    let map: Vec<MapRow> = pca
        .used_rows
        .iter()
        .zip(&pca.map)
        .zip(&pca.t2.flags)
        .map(|((&index, p), &f)| MapRow {
            index,
            pc1: p[0],
            pc2: p[1],
            flag: u8::from(f),
        })
        .collect();
    stage.write_table(OUTLIER_MAP, &map)
}

fn explained_rows(model: &PcaModel) -> Vec<ExplainedRow> {
    let mut cumulative = 0.0;
    model
        .all_eigenvalues
        .iter()
        .zip(model.all_explained_ratio())
        .enumerate()
        .map(|(k, (&eigenvalue, ratio))| {
            cumulative += ratio;
            ExplainedRow {
                component: k + 1,
                eigenvalue,
                ratio,
                cumulative,
            }
        })
        .collect()
}

fn label_rows(map: &[[f64; 2]], source: &[usize], labels: &ClusterLabels) -> Vec<LabelRow> {
    map.iter()
        .zip(source)
        .zip(&labels.labels)
        .map(|((p, &source_index), &cluster_id)| LabelRow {
            source_index,
            pc1: p[0],
            pc2: p[1],
            cluster_id,
        })
        .collect()
}

/// Change-point search alone; writes the change-point table.
pub fn run_segment(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let dataset = load_csv(&cfg.input, &Schema::Infer).map_err(|e| e.in_stage("load", None))?.dataset;
    let found = segment_dataset(&dataset, &cfg.change_point_config())?;
    let refs: Vec<&[ChangePoint]> = found.iter().map(Vec::as_slice).collect();
    let mut stage = Staging::new(&cfg.out)?;
    stage.write_table(CHANGEPOINTS, &change_point_rows(&dataset, &refs))?;
    stage.commit()
}

/// Change points and piece-wise cleaning; writes the cleaned dataset, mask,
/// bands and change points.
pub fn run_clean(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let dataset = load_csv(&cfg.input, &Schema::Infer).map_err(|e| e.in_stage("load", None))?.dataset;
    let outcomes = clean_dataset(&dataset, &cfg.change_point_config(), cfg.spread)?;
    let cleaned = dataset
        .with_signals(outcomes.iter().map(|o| o.cleaned.clone()).collect())
        .map_err(|e| e.in_stage("clean", None))?;
    let mut stage = Staging::new(&cfg.out)?;
    write_clean_tables(&mut stage, &dataset, &outcomes)?;
    stage.write_with(CLEANED, |w| write_csv(&cleaned, w))?;
    stage.commit()
}

/// PCA and T² on an already cleaned dataset.
pub fn run_pca(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let dataset = load_csv(&cfg.input, &Schema::Infer).map_err(|e| e.in_stage("load", None))?.dataset;
    let pca = pca_stage(&dataset, cfg.n_components, cfg.alpha)?;
    let mut stage = Staging::new(&cfg.out)?;
    write_pca_tables(&mut stage, &dataset, &pca)?;
    stage.commit()
}

/// DBSCAN on an outlier-map table (`index,pc1,pc2,flag`).
pub fn run_cluster(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let rows: Vec<MapRow> = read_table(&cfg.input).map_err(|e| e.in_stage("load", None))?;
    let map: Vec<[f64; 2]> = rows.iter().map(|r| [r.pc1, r.pc2]).collect();
    let source: Vec<usize> = rows.iter().map(|r| r.index).collect();
    let points = PointSet2D::new(map.clone(), source.clone()).map_err(|e| e.in_stage("cluster", None))?;
    let clusters = cluster_stage(&points, cfg.epsilon, cfg.min_pts)?;
    let mut stage = Staging::new(&cfg.out)?;
    stage.write_table(LABELS, &label_rows(&map, &source, &clusters.labels))?;
    stage.commit()
}

/// Re-renders the figures of a finished run directory.
pub fn run_plot(dir: &Path) -> Result<Vec<PathBuf>> {
    let inputs = render::FigureInputs::load(dir)?;
    let mut stage = Staging::new(dir)?;
    write_figures(&mut stage, &inputs)?;
    stage.commit()
}
