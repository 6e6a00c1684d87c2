// SPDX-License-Identifier: MIT OR Apache-2.0

//! Short-term outlier removal with 3σ bands, globally or per piece.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::Signal;
use crate::stats::SegmentStats;

/// Consistency factor turning a median absolute deviation into a standard
/// deviation estimate for Gaussian data.
pub const MAD_SCALE: f64 = 1.4826;

pub const BAND_WIDTH: f64 = 3.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spread {
    /// Mean ± sample standard deviation.
    #[default]
    Std,
    /// Median ± scaled median absolute deviation.
    Mad,
}

impl FromStr for Spread {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "std" => Ok(Spread::Std),
            "mad" => Ok(Spread::Mad),
            other => Err(Error::Config(format!("unknown spread estimator `{other}` (expected std or mad)"))),
        }
    }
}

impl fmt::Display for Spread {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Spread::Std => "std",
            Spread::Mad => "mad",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Band {
    pub center: f64,
    pub spread: f64,
}

impl Band {
    pub fn lower(&self) -> f64 {
        self.center - BAND_WIDTH * self.spread
    }

    pub fn upper(&self) -> f64 {
        self.center + BAND_WIDTH * self.spread
    }

    /// Points exactly on a limit are kept.
    pub fn excludes(&self, x: f64) -> bool {
        x < self.lower() || x > self.upper()
    }
}

fn median_in_place(v: &mut [f64]) -> f64 {
    let n = v.len();
    let (_, &mut hi, _) = v.select_nth_unstable_by(n / 2, f64::total_cmp);
    if n % 2 == 1 {
        hi
    } else {
        let lo = v[..n / 2].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

/// Band over the present values of `values`; `None` below two values.
pub fn band_of(values: &[f64], spread: Spread) -> Option<Band> {
    match spread {
        Spread::Std => {
            let stats = SegmentStats::from_values(values);
            (stats.count() >= 2).then(|| Band {
                center: stats.mean(),
                spread: stats.std_dev(),
            })
        }
        Spread::Mad => {
            let mut present: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
            if present.len() < 2 {
                return None;
            }
            let center = median_in_place(&mut present);
            for x in present.iter_mut() {
                *x = (*x - center).abs();
            }
            Some(Band {
                center,
                spread: MAD_SCALE * median_in_place(&mut present),
            })
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OutlierMask {
    flags: Vec<bool>,
}

impl OutlierMask {
    pub fn empty(len: usize) -> Self {
        OutlierMask { flags: vec![false; len] }
    }

    pub fn from_flags(flags: Vec<bool>) -> Self {
        OutlierMask { flags }
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn is_flagged(&self, i: usize) -> bool {
        self.flags[i]
    }

    pub fn n_flagged(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub fn flagged(&self) -> impl Iterator<Item = usize> + '_ {
        self.flags.iter().enumerate().filter(|(_, &f)| f).map(|(i, _)| i)
    }
}

/// Half-open index range `[start, end)` with statistics of its raw values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Piece {
    pub start: usize,
    pub end: usize,
    pub stats: SegmentStats,
}

impl Piece {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

fn check_partition(pieces: &[Piece], n: usize) -> Result<()> {
    let mut at = 0;
    for p in pieces {
        if p.start != at || p.end <= p.start {
            return Err(Error::Validation(format!(
                "pieces do not partition the series: expected a piece starting at {at}, found [{}, {})",
                p.start, p.end
            )));
        }
        at = p.end;
    }
    if at != n {
        return Err(Error::Validation(format!("pieces cover [0, {at}) but the series has {n} samples")));
    }
    Ok(())
}

fn flag_piece(values: &[f64], band: Option<Band>, out: &mut [bool]) {
    let Some(band) = band else {
        return;
    };
    for (flag, &x) in out.iter_mut().zip(values) {
        *flag = !x.is_nan() && band.excludes(x);
    }
}

/// One band over the whole signal. Returns the mask and `(lower, upper)`.
pub fn global_3sigma(signal: &Signal, spread: Spread) -> Result<(OutlierMask, (f64, f64))> {
    let present = signal.n_present();
    if present == 0 {
        return Err(Error::EmptyInput(format!("signal {} has no present values", signal.id())));
    }
    let band = band_of(signal.values(), spread).ok_or(Error::TooShort { needed: 2, got: present })?;
    let mut flags = vec![false; signal.len()];
    flag_piece(signal.values(), Some(band), &mut flags);
    Ok((OutlierMask { flags }, (band.lower(), band.upper())))
}

/// Splits `[0, n)` at the given change points.
pub fn pieces_from_changepoints(change_points: &[usize], n: usize, values: &[f64]) -> Result<Vec<Piece>> {
    if values.len() != n {
        return Err(Error::Validation(format!("{} values for a series of length {n}", values.len())));
    }
    let mut pieces = Vec::with_capacity(change_points.len() + 1);
    let mut start = 0;
    for &cp in change_points.iter().chain(std::iter::once(&n)) {
        let is_end = pieces.len() == change_points.len();
        if !is_end && (cp == 0 || cp >= n || cp <= start) {
            return Err(Error::Domain(format!(
                "change point {cp} is out of order or outside (0, {n})"
            )));
        }
        pieces.push(Piece {
            start,
            end: cp,
            stats: SegmentStats::from_values(&values[start..cp]),
        });
        start = cp;
    }
    Ok(pieces)
}

/// Band of every piece, `None` where a piece has fewer than two present values.
pub fn piece_bands(signal: &Signal, pieces: &[Piece], spread: Spread) -> Result<Vec<Option<Band>>> {
    check_partition(pieces, signal.len())?;
    Ok(pieces
        .iter()
        .map(|p| band_of(&signal.values()[p.start..p.end], spread))
        .collect())
}

pub fn piecewise_3sigma(signal: &Signal, pieces: &[Piece], spread: Spread) -> Result<OutlierMask> {
    let bands = piece_bands(signal, pieces, spread)?;
    let mut flags = vec![false; signal.len()];
    for (p, band) in pieces.iter().zip(bands) {
        flag_piece(&signal.values()[p.start..p.end], band, &mut flags[p.start..p.end]);
    }
    Ok(OutlierMask { flags })
}

fn check_mask(signal: &Signal, mask: &OutlierMask) -> Result<()> {
    if mask.len() != signal.len() {
        return Err(Error::Validation(format!(
            "mask has {} entries for a signal of length {}",
            mask.len(),
            signal.len()
        )));
    }
    if let Some(i) = mask.flagged().find(|&i| signal.missing()[i]) {
        return Err(Error::Validation(format!("mask flags missing sample {i}")));
    }
    Ok(())
}

/// Replaces flagged samples with the mean of their piece, as stored in
/// `pieces` (the raw, pre-imputation mean).
pub fn impute_piecewise_mean(signal: &Signal, pieces: &[Piece], mask: &OutlierMask) -> Result<Signal> {
    check_partition(pieces, signal.len())?;
    check_mask(signal, mask)?;
    let mut values = signal.values().to_vec();
    for p in pieces {
        let flags = &mask.flags[p.start..p.end];
        for (v, _) in values[p.start..p.end].iter_mut().zip(flags).filter(|(_, &f)| f) {
            *v = p.stats.mean();
        }
    }
    signal.replace_values(values)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CleanReport {
    /// Mean absolute residual against the piece means.
    pub mad: f64,
    pub residual_std: f64,
    pub n_changepoints: usize,
    pub n_outliers: usize,
    pub outlier_fraction: f64,
}

pub fn clean_diagnostics(signal: &Signal, pieces: &[Piece], mask: &OutlierMask) -> Result<CleanReport> {
    check_partition(pieces, signal.len())?;
    check_mask(signal, mask)?;
    let mut abs_sum = 0.0;
    let mut residuals = SegmentStats::new();
    for p in pieces {
        let mean = p.stats.mean();
        for &x in &signal.values()[p.start..p.end] {
            if !x.is_nan() {
                abs_sum += (x - mean).abs();
                residuals.push(x - mean);
            }
        }
    }
    let present = residuals.count() as usize;
    let n_outliers = mask.n_flagged();
    Ok(CleanReport {
        mad: if present == 0 { 0.0 } else { abs_sum / present as f64 },
        residual_std: residuals.std_dev(),
        n_changepoints: pieces.len().saturating_sub(1),
        n_outliers,
        outlier_fraction: if present == 0 { 0.0 } else { n_outliers as f64 / present as f64 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::changepoint::{detect_online, ChangePointConfig};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn sig(values: Vec<f64>) -> Signal {
        Signal::new("T0", values).unwrap()
    }

    fn noise(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    fn whole(s: &Signal) -> Vec<Piece> {
        pieces_from_changepoints(&[], s.len(), s.values()).unwrap()
    }

    #[test]
    fn reported_temperature_band() {
        let h = 33.67 / 2f64.sqrt();
        let s = sig(vec![402.0 - h, 402.0 + h]);
        let (mask, (lo, hi)) = global_3sigma(&s, Spread::Std).unwrap();
        assert_eq!(mask.n_flagged(), 0);
        assert!((lo - 301.0).abs() < 0.02 && (hi - 503.0).abs() < 0.02, "{lo} {hi}");
    }

    #[test]
    fn constant_series_has_degenerate_band() {
        let s = sig(vec![7.5; 40]);
        for spread in [Spread::Std, Spread::Mad] {
            let (mask, bounds) = global_3sigma(&s, spread).unwrap();
            assert_eq!(bounds, (7.5, 7.5));
            assert_eq!(mask.n_flagged(), 0);
        }
    }

    #[test]
    fn single_large_value_among_noise() {
        let mut v = noise(1, 100);
        v.push(10.0);
        let s = sig(v.clone());
        let (mask, _) = global_3sigma(&s, Spread::Std).unwrap();
        // direct recomputation
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt();
        let want: Vec<usize> = (0..v.len()).filter(|&i| (v[i] - m).abs() > 3.0 * sd).collect();
        assert_eq!(mask.flagged().collect::<Vec<_>>(), want);
        assert_eq!(want, vec![100]);
    }

    #[test]
    fn global_errors() {
        let s = sig(vec![f64::NAN; 5]);
        assert!(matches!(global_3sigma(&s, Spread::Std), Err(Error::EmptyInput(_))));
        let s = sig(vec![f64::NAN, 1.0, f64::NAN]);
        assert!(matches!(global_3sigma(&s, Spread::Mad), Err(Error::TooShort { .. })));
    }

    #[test]
    fn mad_band_uses_median() {
        let s = sig(vec![1.0, 2.0, 3.0, 4.0, 100.0]);
        let band = band_of(s.values(), Spread::Mad).unwrap();
        assert_eq!(band.center, 3.0);
        assert!((band.spread - MAD_SCALE).abs() < 1e-15);
        let (mask, _) = global_3sigma(&s, Spread::Mad).unwrap();
        assert_eq!(mask.flagged().collect::<Vec<_>>(), vec![4]);
        assert_eq!(band_of(&[4.0, 1.0, 3.0, 2.0], Spread::Mad).unwrap().center, 2.5);
    }

    #[test]
    fn pieces_follow_change_points() {
        let v = vec![0., 0., 0., 0., 0., 1., 1., 1., 1., 1.];
        let p = pieces_from_changepoints(&[], 10, &v).unwrap();
        assert_eq!((p.len(), p[0].start, p[0].end), (1, 0, 10));
        let p = pieces_from_changepoints(&[5], 10, &v).unwrap();
        assert_eq!(p.iter().map(|p| p.stats.mean()).collect::<Vec<_>>(), vec![0.0, 1.0]);
        for bad in [vec![0], vec![10], vec![5, 5], vec![6, 3]] {
            assert!(matches!(pieces_from_changepoints(&bad, 10, &v), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn spike_in_flat_piece() {
        let mut v = vec![0.0; 60];
        v.push(100.0);
        let s = sig(v);
        let pieces = whole(&s);
        let band = band_of(s.values(), Spread::Std).unwrap();
        let deviation = (100.0 - band.center) / band.spread;
        assert!((deviation - 7.68).abs() < 0.01, "{deviation}");
        let mask = piecewise_3sigma(&s, &pieces, Spread::Std).unwrap();
        assert_eq!(mask.flagged().collect::<Vec<_>>(), vec![60]);

        let cleaned = impute_piecewise_mean(&s, &pieces, &mask).unwrap();
        assert!((cleaned.values()[60] - 100.0 / 61.0).abs() < 1e-12);
        assert!(cleaned.values()[..60].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn constant_pieces_have_no_flags() {
        let v: Vec<f64> = (0..90).map(|i| (i / 30) as f64 * 4.0).collect();
        let s = sig(v);
        let pieces = pieces_from_changepoints(&[30, 60], 90, s.values()).unwrap();
        assert_eq!(piecewise_3sigma(&s, &pieces, Spread::Std).unwrap().n_flagged(), 0);
        let report = clean_diagnostics(&s, &pieces, &OutlierMask::empty(90)).unwrap();
        assert_eq!((report.mad, report.residual_std, report.n_changepoints), (0.0, 0.0, 2));
    }

    #[test]
    fn short_piece_is_never_flagged() {
        let s = sig(vec![0.0, 0.1, -0.1, 0.0, 50.0, f64::NAN]);
        let pieces = pieces_from_changepoints(&[4], 6, s.values()).unwrap();
        assert_eq!(piecewise_3sigma(&s, &pieces, Spread::Std).unwrap().n_flagged(), 0);
    }

    #[test]
    fn imputation_edge_cases() {
        let s = sig(noise(4, 50));
        let pieces = pieces_from_changepoints(&[20], 50, s.values()).unwrap();
        let same = impute_piecewise_mean(&s, &pieces, &OutlierMask::empty(50)).unwrap();
        assert_eq!(same, s);
        let all = OutlierMask::from_flags((0..50).map(|i| i < 20).collect());
        let out = impute_piecewise_mean(&s, &pieces, &all).unwrap();
        assert!(out.values()[..20].iter().all(|&x| x == pieces[0].stats.mean()));
        assert_eq!(&out.values()[20..], &s.values()[20..]);
        assert!(impute_piecewise_mean(&s, &pieces, &OutlierMask::empty(49)).is_err());
        let gap = vec![pieces[0], Piece { start: 21, ..pieces[1] }];
        assert!(matches!(piecewise_3sigma(&s, &gap, Spread::Std), Err(Error::Validation(_))));
    }

    #[test]
    fn missing_points_stay_missing() {
        let mut v = noise(8, 100);
        v[10] = f64::NAN;
        v[50] = 30.0;
        let s = sig(v);
        let pieces = whole(&s);
        let mask = piecewise_3sigma(&s, &pieces, Spread::Std).unwrap();
        assert!(!mask.is_flagged(10) && mask.is_flagged(50));
        let out = impute_piecewise_mean(&s, &pieces, &mask).unwrap();
        assert!(out.values()[10].is_nan() && out.missing()[10]);
        let report = clean_diagnostics(&s, &pieces, &mask).unwrap();
        assert_eq!(report.outlier_fraction, report.n_outliers as f64 / 99.0);
    }

    #[test]
    fn mad_of_unit_noise_matches_expectation() {
        // E|N(0,1)| = sqrt(2/pi)
        let s = sig(noise(21, 10_000).iter().map(|x| x + 50.0).collect());
        let report = clean_diagnostics(&s, &whole(&s), &OutlierMask::empty(10_000)).unwrap();
        assert!((report.mad - (2.0 / std::f64::consts::PI).sqrt()).abs() < 0.05, "{}", report.mad);
        assert!((report.residual_std - 1.0).abs() < 0.05);
    }

    #[test]
    fn step_series_fits_exactly() {
        let v: Vec<f64> = (0..200).map(|i| if i < 120 { 2.0 } else { -3.0 }).collect();
        let s = sig(v);
        let pieces = pieces_from_changepoints(&[120], 200, s.values()).unwrap();
        let report = clean_diagnostics(&s, &pieces, &OutlierMask::empty(200)).unwrap();
        assert_eq!(report.mad, 0.0);
    }

    #[test]
    fn change_point_count_falls_with_min_piece_len() {
        // single series can break the trend at weak shifts, so sum over many
        let mut totals = [0usize; 5];
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut level = 0.0;
            let v: Vec<f64> = (0..10_000)
                .map(|i| {
                    if i % 250 == 0 {
                        level += rng.random_range(-3.0..3.0);
                    }
                    level + rng.sample::<f64, _>(StandardNormal)
                })
                .collect();
            for (k, l) in [30, 60, 120, 240, 480].into_iter().enumerate() {
                let config = ChangePointConfig { min_piece_len: l, ..Default::default() };
                totals[k] += detect_online(&v, &config).unwrap().len();
            }
        }
        assert!(totals.windows(2).all(|w| w[0] >= w[1]), "{totals:?}");
        assert!(totals[4] < totals[0]);
    }

    fn signal_with_cuts() -> impl Strategy<Value = (Vec<f64>, Vec<usize>)> {
        prop::collection::vec(prop_oneof![9 => -50.0f64..50.0, 1 => Just(f64::NAN)], 2..300).prop_flat_map(|v| {
            let n = v.len();
            (Just(v), prop::collection::btree_set(1..n, 0..6).prop_map(|s| s.into_iter().collect()))
        })
    }

    proptest! {
        #[test]
        fn trivial_partition_equals_global(v in prop::collection::vec(-1e3f64..1e3, 2..300), mad in any::<bool>()) {
            let spread = if mad { Spread::Mad } else { Spread::Std };
            let s = sig(v);
            let (global, _) = global_3sigma(&s, spread).unwrap();
            prop_assert_eq!(piecewise_3sigma(&s, &whole(&s), spread).unwrap(), global);
        }

        #[test]
        fn piece_means_match_slices((v, cuts) in signal_with_cuts()) {
            let pieces = pieces_from_changepoints(&cuts, v.len(), &v).unwrap();
            for p in &pieces {
                let slice: Vec<f64> = v[p.start..p.end].iter().copied().filter(|x| !x.is_nan()).collect();
                if slice.is_empty() {
                    prop_assert!(p.stats.is_empty());
                } else {
                    let m = slice.iter().sum::<f64>() / slice.len() as f64;
                    prop_assert!((p.stats.mean() - m).abs() <= 1e-9 * m.abs().max(1.0));
                }
            }
        }

        #[test]
        fn imputation_is_idempotent((v, cuts) in signal_with_cuts(), mad in any::<bool>()) {
            let spread = if mad { Spread::Mad } else { Spread::Std };
            let s = sig(v);
            let pieces = pieces_from_changepoints(&cuts, s.len(), s.values()).unwrap();
            let mask = piecewise_3sigma(&s, &pieces, spread).unwrap();
            let once = impute_piecewise_mean(&s, &pieces, &mask).unwrap();
            let twice = impute_piecewise_mean(&once, &pieces, &mask).unwrap();
            prop_assert_eq!(
                once.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                twice.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            );
        }

        #[test]
        fn flags_are_monotone_in_deviation((v, cuts) in signal_with_cuts()) {
            let s = sig(v);
            let pieces = pieces_from_changepoints(&cuts, s.len(), s.values()).unwrap();
            let bands = piece_bands(&s, &pieces, Spread::Std).unwrap();
            let mask = piecewise_3sigma(&s, &pieces, Spread::Std).unwrap();
            for (p, band) in pieces.iter().zip(bands) {
                let Some(band) = band else { continue };
                let dev = |i: usize| (s.values()[i] - band.center).abs();
                for i in (p.start..p.end).filter(|&i| !s.missing()[i]) {
                    for j in (p.start..p.end).filter(|&j| mask.is_flagged(j)) {
                        if dev(i) > dev(j) {
                            prop_assert!(mask.is_flagged(i));
                        }
                    }
                }
            }
        }

        #[test]
        fn outlier_fraction_is_exact((v, cuts) in signal_with_cuts()) {
            let s = sig(v);
            prop_assume!(s.n_present() > 0);
            let pieces = pieces_from_changepoints(&cuts, s.len(), s.values()).unwrap();
            let mask = piecewise_3sigma(&s, &pieces, Spread::Std).unwrap();
            let report = clean_diagnostics(&s, &pieces, &mask).unwrap();
            prop_assert_eq!(report.n_outliers, mask.n_flagged());
            prop_assert_eq!(report.outlier_fraction, mask.n_flagged() as f64 / s.n_present() as f64);
            prop_assert!((0.0..=1.0).contains(&report.outlier_fraction));
        }
    }
}
