// SPDX-License-Identifier: MIT OR Apache-2.0

//! Deterministic SVG 1.1 figures drawn from run artifacts: signal overlays
//! with piece-wise bands, STN bars, explained variance, the T² timeline and
//! the outlier map.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::pipeline::artifacts::*;
use crate::pipeline::report::RunReport;
use crate::pipeline::PipelineRun;
use crate::series::{load_csv, Schema};

pub const WIDTH: f64 = 640.0;
pub const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const TICKS: usize = 5;
/// Series longer than this are reduced to per-bucket minima and maxima.
pub const MAX_VERTICES: usize = 2000;
const MAX_MARKERS: usize = 2000;

/// Linear map from data coordinates to the plot area.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl Frame {
    /// Tight ranges around the given values; a flat range is widened by 0.5
    /// each way and an empty one becomes `[-1, 1]`.
    pub fn fit(xs: impl IntoIterator<Item = f64>, ys: impl IntoIterator<Item = f64>) -> Frame {
        Frame {
            x: range(xs),
            y: range(ys),
        }
    }

    pub fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    pub fn py(&self, y: f64) -> f64 {
        let h = HEIGHT - TOP - BOTTOM;
        TOP + h - (y - self.y.0) / (self.y.1 - self.y.0) * h
    }
}

fn range(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.into_iter().filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo > hi {
        (-1.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Reduced polyline of a series; `None` breaks the line at missing data.
pub fn decimate(values: &[f64]) -> Vec<Option<(f64, f64)>> {
    let n = values.len();
    let point = |i: usize| (!values[i].is_nan()).then(|| (i as f64, values[i]));
    if n <= MAX_VERTICES {
        return (0..n).map(point).collect();
    }
    let bucket = n.div_ceil(MAX_VERTICES / 2);
    let mut out = Vec::with_capacity(MAX_VERTICES);
    for start in (0..n).step_by(bucket) {
        let end = (start + bucket).min(n);
        let (mut lo, mut hi): (Option<usize>, Option<usize>) = (None, None);
        for i in start..end {
            if values[i].is_nan() {
                continue;
            }
            if lo.is_none_or(|j| values[i] < values[j]) {
                lo = Some(i);
            }
            if hi.is_none_or(|j| values[i] > values[j]) {
                hi = Some(i);
            }
        }
        match (lo, hi) {
            (Some(a), Some(b)) => {
                let (a, b) = (a.min(b), a.max(b));
                out.push(point(a));
                if b != a {
                    out.push(point(b));
                }
            }
            _ => out.push(None),
        }
    }
    out
}

pub struct SignalTrace {
    pub id: String,
    pub unit: String,
    pub raw: Vec<Option<(f64, f64)>>,
    pub cleaned: Vec<Option<(f64, f64)>>,
    /// Replaced samples as `(index, raw value)`.
    pub flagged: Vec<(f64, f64)>,
    pub bands: Vec<BandRow>,
    pub n_samples: usize,
}

impl SignalTrace {
    pub fn new(id: &str, unit: &str, raw: &[f64], cleaned: &[f64], bands: Vec<BandRow>) -> SignalTrace {
        let mut flagged: Vec<(f64, f64)> = raw
            .iter()
            .zip(cleaned)
            .enumerate()
            .filter(|(_, (r, c))| !r.is_nan() && r != c)
            .map(|(i, (&r, _))| (i as f64, r))
            .collect();
        thin(&mut flagged, MAX_MARKERS);
        SignalTrace {
            id: id.to_owned(),
            unit: unit.to_owned(),
            raw: decimate(raw),
            cleaned: decimate(cleaned),
            flagged,
            bands,
            n_samples: raw.len(),
        }
    }
}

/// Keeps every k-th element so at most `cap` remain.
fn thin<T: Copy>(v: &mut Vec<T>, cap: usize) {
    if v.len() > cap {
        let step = v.len().div_ceil(cap);
        *v = v.iter().step_by(step).copied().collect();
    }
}

/// What the figures need, already reduced to drawable size.
pub struct FigureInputs {
    pub signals: Vec<SignalTrace>,
    pub stn: Vec<(String, f64)>,
    pub explained: Vec<ExplainedRow>,
    pub t2: Vec<Option<(f64, f64)>>,
    pub t_alpha: f64,
    pub n_samples: usize,
    /// `(pc1, pc2, flagged)`.
    pub map: Vec<(f64, f64, bool)>,
}

fn t2_values(n: usize, rows: impl Iterator<Item = (usize, f64)>) -> Vec<f64> {
    let mut v = vec![f64::NAN; n];
    for (i, x) in rows {
        v[i] = x;
    }
    v
}

impl FigureInputs {
    pub fn from_run(run: &PipelineRun) -> FigureInputs {
        let report = &run.report;
        let signals = run
            .dataset
            .signals()
            .iter()
            .zip(run.cleaned.signals())
            .zip(&run.outcomes)
            .map(|((raw, clean), o)| {
                let bands = o
                    .pieces
                    .iter()
                    .zip(&o.bands)
                    .map(|(p, b)| BandRow {
                        signal_id: raw.id().to_owned(),
                        start: p.start,
                        end: p.end,
                        center: b.map(|b| b.center),
                        lower: b.map(|b| b.lower()),
                        upper: b.map(|b| b.upper()),
                    })
                    .collect();
                SignalTrace::new(raw.id(), raw.unit(), raw.values(), clean.values(), bands)
            })
            .collect();
        let n = run.dataset.n_samples();
        let t2 = t2_values(n, run.pca.used_rows.iter().copied().zip(run.pca.t2.values.iter().copied()));
        FigureInputs {
            signals,
            stn: stn_of(report),
            explained: report
                .pca
                .explained
                .iter()
                .map(|e| ExplainedRow {
                    component: e.component,
                    eigenvalue: e.eigenvalue,
                    ratio: e.ratio,
                    cumulative: e.cumulative,
                })
                .collect(),
            t2: decimate(&t2),
            t_alpha: report.pca.t_alpha,
            n_samples: n,
            map: run.pca.map.iter().zip(&run.pca.t2.flags).map(|(p, &f)| (p[0], p[1], f)).collect(),
        }
    }

    /// Reads the artifacts of a finished run directory.
    pub fn load(dir: &Path) -> Result<FigureInputs> {
        let need = |name: &str| {
            let path = dir.join(name);
            if path.exists() {
                Ok(path)
            } else {
                Err(Error::Validation(format!("missing artifact {}", path.display())))
            }
        };
        let report_path = need(REPORT)?;
        let text = fs::read_to_string(&report_path).map_err(|e| Error::io(&report_path, e))?;
        let report = RunReport::from_toml(&text)?;
        let cleaned = load_csv(need(CLEANED)?, &Schema::Infer)?.dataset;
        let mask: Vec<MaskRow> = read_table(&need(MASK)?)?;
        let bands: Vec<BandRow> = read_table(&need(BANDS)?)?;
        let explained: Vec<ExplainedRow> = read_table(&need(EXPLAINED)?)?;
        let t2_rows: Vec<T2Row> = read_table(&need(T2)?)?;
        let map: Vec<MapRow> = read_table(&need(OUTLIER_MAP)?)?;
        let n = cleaned.n_samples();

        let mut signals = Vec::with_capacity(cleaned.n_signals());
        for s in cleaned.signals() {
            let mut raw = s.values().to_vec();
            for m in mask.iter().filter(|m| m.signal_id == s.id()) {
                let slot = raw
                    .get_mut(m.index)
                    .ok_or_else(|| Error::Validation(format!("mask row for {} past the end of the data", m.signal_id)))?;
                *slot = m.raw_value;
            }
            let own = bands.iter().filter(|b| b.signal_id == s.id()).cloned().collect();
            signals.push(SignalTrace::new(s.id(), s.unit(), &raw, s.values(), own));
        }
        if t2_rows.iter().any(|r| r.index >= n) {
            return Err(Error::Validation("t2 table indexes past the end of the data".into()));
        }
        let t2 = t2_values(n, t2_rows.iter().filter_map(|r| r.t2.map(|v| (r.index, v))));
        Ok(FigureInputs {
            signals,
            stn: stn_of(&report),
            explained,
            t2: decimate(&t2),
            t_alpha: report.pca.t_alpha,
            n_samples: n,
            map: map.iter().map(|r| (r.pc1, r.pc2, r.flag != 0)).collect(),
        })
    }
}

fn stn_of(report: &RunReport) -> Vec<(String, f64)> {
    report.signals.iter().map(|s| (s.id.clone(), s.stn)).collect()
}

/// File name and document for every figure, in a fixed order.
pub fn render_figures(inputs: &FigureInputs) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for s in &inputs.signals {
        out.push((format!("signal_{}.svg", file_stem(&s.id)), signal_overlay(s)));
    }
    out.push(("stn.svg".to_owned(), stn_bars(&inputs.stn)));
    out.push(("explained_variance.svg".to_owned(), explained_variance(&inputs.explained)));
    out.push(("t2.svg".to_owned(), t2_timeline(&inputs.t2, inputs.t_alpha, inputs.n_samples)));
    out.push(("outlier_map.svg".to_owned(), outlier_map(&inputs.map)));
    Ok(out)
}

fn file_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn escape(text: &str) -> String {
    let mut s = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => s.push_str("&amp;"),
            '<' => s.push_str("&lt;"),
            '>' => s.push_str("&gt;"),
            '"' => s.push_str("&quot;"),
            c if (c as u32) < 0x20 => s.push(' '),
            c => s.push(c),
        }
    }
    s
}

/// Short tick label: integers as is, otherwise four significant digits.
fn label(v: f64) -> String {
    if v == 0.0 {
        return "0".to_owned();
    }
    if v.fract() == 0.0 && v.abs() < 1e9 {
        return format!("{v:.0}");
    }
    let mag = v.abs().log10().floor() as i32;
    if !(-3..6).contains(&mag) {
        return format!("{v:.3e}");
    }
    let decimals = (3 - mag).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_owned()
    } else {
        s
    }
}

struct Svg {
    body: String,
}

impl Svg {
    fn new(title: &str) -> Svg {
        let mut body = String::new();
        let _ = write!(
            body,
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
             <svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"11\">\n\
             <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n\
             <text x=\"{:.2}\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">{}</text>\n",
            WIDTH / 2.0,
            escape(title)
        );
        Svg { body }
    }

    fn axes(&mut self, frame: &Frame, x_label: &str, y_label: &str) {
        let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
        let _ = writeln!(
            self.body,
            "<path d=\"M{x0:.2},{y0:.2} L{x0:.2},{y1:.2} L{x1:.2},{y1:.2}\" fill=\"none\" stroke=\"black\"/>"
        );
        for k in 0..TICKS {
            let t = k as f64 / (TICKS - 1) as f64;
            let xv = frame.x.0 + t * (frame.x.1 - frame.x.0);
            let yv = frame.y.0 + t * (frame.y.1 - frame.y.0);
            let (px, py) = (frame.px(xv), frame.py(yv));
            let _ = writeln!(
                self.body,
                "<path d=\"M{px:.2},{y1:.2} L{px:.2},{:.2}\" stroke=\"black\"/><text x=\"{px:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
                y1 + 4.0,
                y1 + 16.0,
                label(xv)
            );
            let _ = writeln!(
                self.body,
                "<path d=\"M{:.2},{py:.2} L{x0:.2},{py:.2}\" stroke=\"black\"/><text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
                x0 - 4.0,
                x0 - 6.0,
                py + 4.0,
                label(yv)
            );
        }
        let _ = writeln!(
            self.body,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            (x0 + x1) / 2.0,
            HEIGHT - 12.0,
            escape(x_label)
        );
        let (lx, ly) = (16.0, (y0 + y1) / 2.0);
        let _ = writeln!(
            self.body,
            "<text x=\"{lx:.2}\" y=\"{ly:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 {lx:.2} {ly:.2})\">{}</text>",
            escape(y_label)
        );
    }

    fn polyline(&mut self, frame: &Frame, pts: &[Option<(f64, f64)>], style: &str) {
        let d = path_data(frame, pts);
        if !d.is_empty() {
            let _ = writeln!(self.body, "<path d=\"{d}\" fill=\"none\" {style}/>");
        }
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

/// `M`/`L` commands through the points, restarting after each gap.
pub fn path_data(frame: &Frame, pts: &[Option<(f64, f64)>]) -> String {
    let mut d = String::new();
    let mut pen_down = false;
    for p in pts {
        match p {
            Some((x, y)) => {
                if !d.is_empty() {
                    d.push(' ');
                }
                let cmd = if pen_down { 'L' } else { 'M' };
                let _ = write!(d, "{cmd}{:.2},{:.2}", frame.px(*x), frame.py(*y));
                pen_down = true;
            }
            None => pen_down = false,
        }
    }
    d
}

fn with_unit(name: &str, unit: &str) -> String {
    if unit.is_empty() {
        name.to_owned()
    } else {
        format!("{name} [{unit}]")
    }
}

pub fn signal_overlay(s: &SignalTrace) -> String {
    let ys = s
        .raw
        .iter()
        .chain(&s.cleaned)
        .flatten()
        .map(|p| p.1)
        .chain(s.bands.iter().flat_map(|b| [b.lower, b.upper]).flatten());
    let last = s.n_samples.saturating_sub(1) as f64;
    let frame = Frame::fit([0.0, last], ys);
    let mut svg = Svg::new(&format!("{}: raw, cleaned and piece-wise 3σ band", s.id));
    svg.axes(&frame, "sample index [-]", &with_unit(&s.id, &s.unit));
    svg.polyline(&frame, &s.raw, "stroke=\"#bbbbbb\" stroke-width=\"1\"");
    svg.polyline(&frame, &s.cleaned, "stroke=\"#1f77b4\" stroke-width=\"1\"");
    for b in &s.bands {
        let (x0, x1) = (b.start as f64, b.end.saturating_sub(1).max(b.start) as f64);
        for y in [b.lower, b.upper].into_iter().flatten() {
            svg.polyline(&frame, &[Some((x0, y)), Some((x1, y))], "stroke=\"#d62728\" stroke-dasharray=\"4 3\"");
        }
    }
    for &(x, y) in &s.flagged {
        let _ = writeln!(
            svg.body,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"#d62728\"/>",
            frame.px(x),
            frame.py(y)
        );
    }
    svg.finish()
}

fn bars(svg: &mut Svg, frame: &Frame, values: &[f64], fill: &str) {
    let slot = (WIDTH - LEFT - RIGHT) / values.len().max(1) as f64;
    let base = frame.py(frame.y.0.max(0.0).min(frame.y.1));
    for (k, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            continue;
        }
        let top = frame.py(v);
        let (y, h) = if top < base { (top, base - top) } else { (base, top - base) };
        let _ = writeln!(
            svg.body,
            "<rect x=\"{:.2}\" y=\"{y:.2}\" width=\"{:.2}\" height=\"{h:.2}\" fill=\"{fill}\"/>",
            LEFT + k as f64 * slot + 0.1 * slot,
            0.8 * slot
        );
    }
}

pub fn stn_bars(stn: &[(String, f64)]) -> String {
    let values: Vec<f64> = stn.iter().map(|s| s.1).collect();
    let frame = Frame {
        x: (0.0, stn.len().max(1) as f64),
        y: range(values.iter().copied().chain([0.0])),
    };
    let mut svg = Svg::new("Signal-to-noise ratio per signal");
    svg.axes(&frame, "signal [-]", "mean / standard deviation [-]");
    bars(&mut svg, &frame, &values, "#1f77b4");
    let slot = (WIDTH - LEFT - RIGHT) / stn.len().max(1) as f64;
    for (k, (id, v)) in stn.iter().enumerate() {
        let x = LEFT + (k as f64 + 0.5) * slot;
        let _ = writeln!(
            svg.body,
            "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"9\">{}{}</text>",
            TOP + 10.0,
            escape(id),
            if v.is_finite() { "" } else { " (inf)" }
        );
    }
    svg.finish()
}

pub fn explained_variance(rows: &[ExplainedRow]) -> String {
    let pct: Vec<f64> = rows.iter().map(|r| 100.0 * r.ratio).collect();
    let frame = Frame {
        x: (0.0, rows.len().max(1) as f64),
        y: (0.0, 100.0),
    };
    let mut svg = Svg::new("Explained variance per principal component");
    svg.axes(&frame, "principal component [-]", "explained variance [%]");
    bars(&mut svg, &frame, &pct, "#1f77b4");
    let cumulative: Vec<Option<(f64, f64)>> =
        rows.iter().enumerate().map(|(k, r)| Some((k as f64 + 0.5, 100.0 * r.cumulative))).collect();
    svg.polyline(&frame, &cumulative, "stroke=\"#ff7f0e\" stroke-width=\"1.5\"");
    svg.finish()
}

pub fn t2_timeline(t2: &[Option<(f64, f64)>], t_alpha: f64, n_samples: usize) -> String {
    let frame = Frame::fit(
        [0.0, n_samples.saturating_sub(1) as f64],
        t2.iter().flatten().map(|p| p.1).chain([0.0, t_alpha]),
    );
    let mut svg = Svg::new("Hotelling T² with control limit");
    svg.axes(&frame, "sample index [-]", "T² [-]");
    svg.polyline(&frame, t2, "stroke=\"#1f77b4\" stroke-width=\"1\"");
    if t_alpha.is_finite() {
        svg.polyline(
            &frame,
            &[Some((frame.x.0, t_alpha)), Some((frame.x.1, t_alpha))],
            "stroke=\"#d62728\" stroke-dasharray=\"6 3\"",
        );
    }
    svg.finish()
}

/// Scatter of the first two scores. Markers falling on the same half pixel
/// are drawn once, which keeps large maps small without changing the picture.
pub fn outlier_map(points: &[(f64, f64, bool)]) -> String {
    let frame = Frame::fit(points.iter().map(|p| p.0), points.iter().map(|p| p.1));
    let mut svg = Svg::new("Outlier map");
    svg.axes(&frame, "PC1 score [-]", "PC2 score [-]");
    for (flagged, fill) in [(false, "#7f7f7f"), (true, "#d62728")] {
        let mut seen = HashSet::new();
        for &(x, y, f) in points {
            if f != flagged || !(x.is_finite() && y.is_finite()) {
                continue;
            }
            let (px, py) = (frame.px(x), frame.py(y));
            if seen.insert(((px * 2.0).round() as i64, (py * 2.0).round() as i64)) {
                let _ = writeln!(svg.body, "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"2\" fill=\"{fill}\"/>");
            }
        }
    }
    svg.finish()
}
