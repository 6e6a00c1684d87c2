// SPDX-License-Identifier: MIT OR Apache-2.0

//! Principal component model, Hotelling's T² and long-term outlier periods.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::Dataset;

/// Relative eigenvalue floor: components with `λ ≤ EIGEN_FLOOR · λ₁` are
/// unusable for T².
pub const EIGEN_FLOOR: f64 = 1e-12;

const EIGEN_EPS: f64 = 1e-15;
const EIGEN_MAX_ITER: usize = 10_000;

/// Column-wise z-scores. `data` holds only the retained columns, in the order
/// of `col_ids`.
#[derive(Clone, Debug, PartialEq)]
pub struct StandardizedMatrix {
    pub data: DMatrix<f64>,
    pub col_ids: Vec<String>,
    pub col_means: Vec<f64>,
    pub col_stds: Vec<f64>,
    pub excluded_cols: Vec<String>,
}

impl StandardizedMatrix {
    /// Standardizes complete columns of equal length.
    pub fn from_columns(ids: Vec<String>, columns: &[Vec<f64>]) -> Result<Self> {
        let n = columns.first().map(Vec::len).unwrap_or(0);
        if n < 2 {
            return Err(Error::TooShort { needed: 2, got: n });
        }
        if ids.len() != columns.len() || columns.iter().any(|c| c.len() != n) {
            return Err(Error::Validation("columns differ in length or count".into()));
        }
        let mut kept = Vec::new();
        let mut excluded_cols = Vec::new();
        let (mut col_means, mut col_stds, mut col_ids) = (Vec::new(), Vec::new(), Vec::new());
        for (id, col) in ids.into_iter().zip(columns) {
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::PipelineOrder(format!(
                    "column {id} still has a missing value at row {i}; impute before standardizing"
                )));
            }
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
            let std = var.sqrt();
            if std <= 1e-12 * (1.0 + mean.abs()) {
                excluded_cols.push(id);
                continue;
            }
            kept.push(col);
            col_means.push(mean);
            col_stds.push(std);
            col_ids.push(id);
        }
        if kept.is_empty() {
            return Err(Error::Degenerate("every column has zero variance".into()));
        }
        let data = DMatrix::from_fn(n, kept.len(), |i, j| (kept[j][i] - col_means[j]) / col_stds[j]);
        Ok(StandardizedMatrix {
            data,
            col_ids,
            col_means,
            col_stds,
            excluded_cols,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.data.ncols()
    }
}

pub fn standardize(dataset: &Dataset) -> Result<StandardizedMatrix> {
    let ids = dataset.signals().iter().map(|s| s.id().to_owned()).collect();
    let columns: Vec<Vec<f64>> = dataset.signals().iter().map(|s| s.values().to_vec()).collect();
    StandardizedMatrix::from_columns(ids, &columns)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    /// `M × A`, orthonormal columns.
    pub loadings: DMatrix<f64>,
    /// Retained eigenvalues, non-increasing.
    pub eigenvalues: Vec<f64>,
    pub n_components: usize,
    pub explained_ratio: Vec<f64>,
    /// Every eigenvalue of the covariance, for explained-variance tables.
    pub all_eigenvalues: Vec<f64>,
    pub col_ids: Vec<String>,
}

impl PcaModel {
    pub fn all_explained_ratio(&self) -> Vec<f64> {
        let total: f64 = self.all_eigenvalues.iter().sum();
        self.all_eigenvalues.iter().map(|l| l / total).collect()
    }
}

/// `N × A` projections of the rows onto the loadings.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    pub scores: DMatrix<f64>,
}

/// Sample covariance `XᵀX / (N − 1)` of standardized data.
pub fn covariance(x: &StandardizedMatrix) -> DMatrix<f64> {
    x.data.tr_mul(&x.data) / (x.n_rows() - 1) as f64
}

pub fn fit_pca(x: &StandardizedMatrix, n_components: usize) -> Result<(PcaModel, ScoreMatrix)> {
    let m = x.n_cols();
    if n_components == 0 || n_components > m {
        return Err(Error::Config(format!(
            "number of components must lie in 1..={m}, got {n_components}"
        )));
    }
    let cov = covariance(x);
    let eig = SymmetricEigen::try_new(cov, EIGEN_EPS, EIGEN_MAX_ITER).ok_or_else(|| {
        Error::Numeric(format!(
            "symmetric eigensolver did not converge within {EIGEN_MAX_ITER} iterations on a {m}×{m} covariance"
        ))
    })?;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let all_eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
    let mut loadings = DMatrix::zeros(m, n_components);
    for (j, &k) in order.iter().take(n_components).enumerate() {
        let mut v = eig.eigenvectors.column(k).into_owned();
        let mut lead = 0;
        for i in 1..m {
            if v[i].abs() > v[lead].abs() {
                lead = i;
            }
        }
        if v[lead] < 0.0 {
            v.neg_mut();
        }
        loadings.set_column(j, &v);
    }
    let total: f64 = all_eigenvalues.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::Numeric(format!("covariance has non-positive trace {total}")));
    }
    let eigenvalues = all_eigenvalues[..n_components].to_vec();
    let explained_ratio = eigenvalues.iter().map(|l| l / total).collect();
    let scores = &x.data * &loadings;
    Ok((
        PcaModel {
            loadings,
            eigenvalues,
            n_components,
            explained_ratio,
            all_eigenvalues,
            col_ids: x.col_ids.clone(),
        },
        ScoreMatrix { scores },
    ))
}

/// Rank-`A` approximation `scores · loadingsᵀ` of the standardized data.
pub fn reconstruct(model: &PcaModel, scores: &ScoreMatrix) -> Result<DMatrix<f64>> {
    if scores.scores.ncols() != model.loadings.ncols() {
        return Err(Error::Validation(format!(
            "{} score columns for {} loadings",
            scores.scores.ncols(),
            model.loadings.ncols()
        )));
    }
    Ok(&scores.scores * model.loadings.transpose())
}

/// `Σ_j t_ij² / λ_j` for every row.
pub fn hotelling_t2(scores: &ScoreMatrix, eigenvalues: &[f64]) -> Result<Vec<f64>> {
    let s = &scores.scores;
    if s.ncols() != eigenvalues.len() {
        return Err(Error::Validation(format!(
            "{} score columns for {} eigenvalues",
            s.ncols(),
            eigenvalues.len()
        )));
    }
    let floor = EIGEN_FLOOR * eigenvalues.first().copied().unwrap_or(0.0);
    if let Some(j) = eigenvalues.iter().position(|&l| !(l > floor && l > 0.0)) {
        return Err(Error::Degenerate(format!(
            "component {} has eigenvalue {} at or below the floor; retain fewer components",
            j + 1,
            eigenvalues[j]
        )));
    }
    let mut t2 = vec![0.0; s.nrows()];
    for (j, &l) in eigenvalues.iter().enumerate() {
        for (acc, &t) in t2.iter_mut().zip(s.column(j).iter()) {
            *acc += t * t / l;
        }
    }
    Ok(t2)
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos approximation, g = 7, nine coefficients.
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, &c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta function, modified Lentz.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const MAX_ITER: usize = 200_000;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`, with `y = 1 − x` passed in so
/// neither tail loses digits to cancellation.
fn beta_reg(a: f64, b: f64, x: f64, y: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if y <= 0.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * y.ln() - (ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b));
    if x < (a + 1.0) / (a + b + 2.0) {
        (ln_front.exp() * beta_cf(a, b, x) / a).clamp(0.0, 1.0)
    } else {
        (1.0 - ln_front.exp() * beta_cf(b, a, y) / b).clamp(0.0, 1.0)
    }
}

/// `P(F > f)` for `F ~ F(d1, d2)`.
pub fn f_upper_tail(f: f64, d1: f64, d2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    let s = d1 * f;
    beta_reg(d2 / 2.0, d1 / 2.0, d2 / (d2 + s), s / (d2 + s))
}

/// Upper-tail critical value: `P(F(d1, d2) > result) = alpha`.
pub fn f_quantile(alpha: f64, d1: u64, d2: u64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("tail probability must lie in (0, 1), got {alpha}")));
    }
    if d1 == 0 || d2 == 0 {
        return Err(Error::Domain(format!("degrees of freedom must be positive, got ({d1}, {d2})")));
    }
    let (d1, d2) = (d1 as f64, d2 as f64);
    let mut hi = 1.0;
    while f_upper_tail(hi, d1, d2) > alpha {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::Numeric("F quantile bracket diverged".into()));
        }
    }
    let mut lo = if hi > 1.0 { hi / 2.0 } else { 0.0 };
    while hi - lo > 1e-13 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if f_upper_tail(mid, d1, d2) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// T² control limit for `n_components` retained out of `n_samples` rows.
pub fn t2_threshold(n_components: usize, n_samples: usize, alpha: f64) -> Result<f64> {
    if n_components == 0 || n_samples <= n_components {
        return Err(Error::Domain(format!(
            "need 1 ≤ components < samples, got {n_components} components and {n_samples} samples"
        )));
    }
    let (a, n) = (n_components as f64, n_samples as f64);
    let f = f_quantile(alpha, n_components as u64, (n_samples - n_components) as u64)?;
    Ok((n * n - 1.0) * a / (n * (n - a)) * f)
}

#[derive(Clone, Debug, PartialEq)]
pub struct T2Series {
    pub values: Vec<f64>,
    pub threshold: f64,
    pub alpha: f64,
    pub flags: Vec<bool>,
}

impl T2Series {
    pub fn new(values: Vec<f64>, threshold: f64, alpha: f64) -> Self {
        let flags = values.iter().map(|&v| v > threshold).collect();
        T2Series {
            values,
            threshold,
            alpha,
            flags,
        }
    }

    pub fn n_flagged(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutlierPeriod {
    pub start: usize,
    /// Exclusive.
    pub end: usize,
    pub n_points: usize,
}

/// Maximal runs of `true`.
pub fn periods_from_flags(flags: &[bool]) -> Vec<OutlierPeriod> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &f) in flags.iter().chain(std::iter::once(&false)).enumerate() {
        match (f, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push(OutlierPeriod {
                    start: s,
                    end: i,
                    n_points: i - s,
                });
                start = None;
            }
            _ => {}
        }
    }
    out
}

pub fn group_outlier_periods(t2: &T2Series) -> Vec<OutlierPeriod> {
    periods_from_flags(&t2.flags)
}

#[cfg(test)]
#[path = "../tests/support/f_oracle.rs"]
mod f_oracle;
