// SPDX-License-Identifier: MIT OR Apache-2.0

//! Running moments shared by the change-point, cleaning and reporting code.

/// Mean, second central moment and count of a set of samples.
///
/// Updated one value at a time with Welford's recurrence, or combined with
/// another accumulator through the pairwise merge of Chan et al. Both paths
/// agree with a two-pass batch computation to within rounding.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SegmentStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl SegmentStats {
    pub fn new() -> Self {
        Self::default()
    }

    /// Accumulates every finite value of `values`; NaN entries are skipped.
    pub fn from_values(values: &[f64]) -> Self {
        let mut stats = Self::new();
        stats.extend(values);
        stats
    }

    pub fn push(&mut self, x: f64) {
        if x.is_nan() {
            return;
        }
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn extend(&mut self, values: &[f64]) {
        for &x in values {
            self.push(x);
        }
    }

    pub fn merge(&self, other: &SegmentStats) -> SegmentStats {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let count = self.count + other.count;
        let (na, nb) = (self.count as f64, other.count as f64);
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * nb / count as f64;
        let m2 = self.m2 + other.m2 + delta * delta * na * nb / count as f64;
        SegmentStats { count, mean, m2 }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Mean of the accumulated values, `NaN` when empty.
    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            f64::NAN
        } else {
            self.mean
        }
    }

    /// Sum of squared deviations from the mean.
    pub fn sse(&self) -> f64 {
        self.m2.max(0.0)
    }

    /// Sample variance (divisor `count - 1`); zero for fewer than two values.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.sse() / (self.count - 1) as f64
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }
}
