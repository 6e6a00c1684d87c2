// SPDX-License-Identifier: MIT OR Apache-2.0

//! Pre-treatment of multi-sensor plant time series.
//!
//! The stages run in a fixed order: change points split each signal into
//! pieces, piece-wise 3σ bands remove short-term outliers, and a PCA model
//! with Hotelling's T² finds long-term outlier periods, which DBSCAN then
//! groups on the plane of the first two scores.

pub mod error;
pub mod stats;
pub mod changepoint;
pub mod sigma;
pub mod pca;
pub mod cluster;
pub mod series;
pub mod pipeline;
pub mod render;

pub use error::{Error, ErrorKind, Result};
pub use stats::SegmentStats;
