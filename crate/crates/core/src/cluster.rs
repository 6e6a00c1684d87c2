// SPDX-License-Identifier: MIT OR Apache-2.0

//! DBSCAN on the plane of the first two principal-component scores.
//!
//! Neighbourhoods are closed Euclidean balls that include the point itself.
//! Clusters are numbered by their lowest-index core point and a border point
//! joins the lowest-numbered cluster that reaches it, which is exactly what a
//! sequential pass over the input in order produces.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 0.7;

pub const NOISE: usize = 0;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointSet2D {
    points: Vec<[f64; 2]>,
    source_index: Vec<usize>,
}

impl PointSet2D {
    pub fn new(points: Vec<[f64; 2]>, source_index: Vec<usize>) -> Result<Self> {
        if points.len() != source_index.len() {
            return Err(Error::Validation(format!(
                "{} points but {} source indices",
                points.len(),
                source_index.len()
            )));
        }
        if let Some(i) = points.iter().position(|p| !(p[0].is_finite() && p[1].is_finite())) {
            return Err(Error::Validation(format!("point {i} has a non-finite coordinate")));
        }
        let mut sorted = source_index.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Validation("source indices are not unique".into()));
        }
        Ok(PointSet2D { points, source_index })
    }

    /// Points numbered `0..n` in input order.
    pub fn from_points(points: Vec<[f64; 2]>) -> Result<Self> {
        let idx = (0..points.len()).collect();
        Self::new(points, idx)
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn source_index(&self) -> &[usize] {
        &self.source_index
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DbscanParams {
    pub epsilon: f64,
    pub min_pts: usize,
}

impl DbscanParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.min_pts == 0 {
            return Err(Error::Config("min_pts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClusterLabels {
    /// Cluster id per point, `0` for noise.
    pub labels: Vec<usize>,
    pub n_clusters: usize,
}

impl ClusterLabels {
    pub fn n_noise(&self) -> usize {
        self.labels.iter().filter(|&&l| l == NOISE).count()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_clusters];
        for &l in &self.labels {
            if l != NOISE {
                sizes[l - 1] += 1;
            }
        }
        sizes
    }
}

#[inline]
fn within(a: &[f64; 2], b: &[f64; 2], eps2: f64) -> bool {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy <= eps2
}

fn check(points: &PointSet2D, params: &DbscanParams) -> Result<()> {
    params.validate()?;
    if points.is_empty() {
        return Err(Error::EmptyInput("no points to cluster".into()));
    }
    Ok(())
}

/// Textbook DBSCAN with linear-scan region queries. Quadratic; used when the
/// grid cannot represent the coordinates.
pub fn dbscan_brute(points: &PointSet2D, params: &DbscanParams) -> Result<ClusterLabels> {
    check(points, params)?;
    let pts = points.points();
    let eps2 = params.epsilon * params.epsilon;
    let region = |i: usize| -> Vec<usize> { (0..pts.len()).filter(|&j| within(&pts[i], &pts[j], eps2)).collect() };
    const UNSEEN: usize = usize::MAX;
    let mut labels = vec![UNSEEN; pts.len()];
    let mut n_clusters = 0;
    for i in 0..pts.len() {
        if labels[i] != UNSEEN {
            continue;
        }
        let seeds = region(i);
        if seeds.len() < params.min_pts {
            labels[i] = NOISE;
            continue;
        }
        n_clusters += 1;
        labels[i] = n_clusters;
        let mut queue: Vec<usize> = seeds;
        let mut head = 0;
        while head < queue.len() {
            let q = queue[head];
            head += 1;
            if labels[q] == NOISE {
                labels[q] = n_clusters;
            }
            if labels[q] != UNSEEN {
                continue;
            }
            labels[q] = n_clusters;
            let nb = region(q);
            if nb.len() >= params.min_pts {
                queue.extend(nb);
            }
        }
    }
    Ok(ClusterLabels { labels, n_clusters })
}

struct Grid {
    /// Point ids grouped by cell.
    order: Vec<usize>,
    cells: HashMap<(i64, i64), (usize, usize)>,
    keys: Vec<(i64, i64)>,
}

const GRID_LIMIT: f64 = (1u64 << 50) as f64;

impl Grid {
    fn build(pts: &[[f64; 2]], side: f64) -> Option<Grid> {
        let mut keys = Vec::with_capacity(pts.len());
        for p in pts {
            let (x, y) = ((p[0] / side).floor(), (p[1] / side).floor());
            if x.abs() > GRID_LIMIT || y.abs() > GRID_LIMIT {
                return None;
            }
            keys.push((x as i64, y as i64));
        }
        let mut order: Vec<usize> = (0..pts.len()).collect();
        order.sort_by_key(|&i| (keys[i], i));
        let mut cells = HashMap::new();
        let mut start = 0;
        while start < order.len() {
            let key = keys[order[start]];
            let mut end = start + 1;
            while end < order.len() && keys[order[end]] == key {
                end += 1;
            }
            cells.insert(key, (start, end));
            start = end;
        }
        Some(Grid { order, cells, keys })
    }

    fn cell(&self, key: (i64, i64)) -> &[usize] {
        match self.cells.get(&key) {
            Some(&(s, e)) => &self.order[s..e],
            None => &[],
        }
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // keep the smaller index as root so roots are stable
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Cells at most this many steps away can hold points within `epsilon`.
const REACH: i64 = 2;

/// DBSCAN with a uniform grid of side `epsilon / √2`, so any two points in one
/// cell are neighbours. Produces the same labels as [`dbscan_brute`].
pub fn dbscan(points: &PointSet2D, params: &DbscanParams) -> Result<ClusterLabels> {
    check(points, params)?;
    let pts = points.points();
    let eps2 = params.epsilon * params.epsilon;
    // shrink slightly so rounding can never put two non-neighbours in one cell
    let side = params.epsilon / std::f64::consts::SQRT_2 * (1.0 - 1e-9);
    let Some(grid) = Grid::build(pts, side) else {
        return dbscan_brute(points, params);
    };
    let min_pts = params.min_pts;

    let is_core: Vec<bool> = (0..pts.len())
        .into_par_iter()
        .map(|i| {
            let (cx, cy) = grid.keys[i];
            let mut count = grid.cell((cx, cy)).len();
            if count >= min_pts {
                return true;
            }
            for dx in -REACH..=REACH {
                for dy in -REACH..=REACH {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    for &j in grid.cell((cx + dx, cy + dy)) {
                        if within(&pts[i], &pts[j], eps2) {
                            count += 1;
                            if count >= min_pts {
                                return true;
                            }
                        }
                    }
                }
            }
            false
        })
        .collect();

    let mut uf = UnionFind::new(pts.len());
    let mut cell_keys: Vec<(i64, i64)> = grid.cells.keys().copied().collect();
    cell_keys.sort_unstable();
    let core_of = |key: (i64, i64)| -> Vec<usize> { grid.cell(key).iter().copied().filter(|&i| is_core[i]).collect() };
    for &key in &cell_keys {
        let here = core_of(key);
        let Some(&first) = here.first() else { continue };
        for &i in &here[1..] {
            uf.union(first, i);
        }
        for dx in 0..=REACH {
            for dy in -REACH..=REACH {
                if dx == 0 && dy <= 0 {
                    continue;
                }
                let there = core_of((key.0 + dx, key.1 + dy));
                let Some(&other) = there.first() else { continue };
                if uf.find(first) == uf.find(other) {
                    continue;
                }
                let linked = here.iter().any(|&a| there.iter().any(|&b| within(&pts[a], &pts[b], eps2)));
                if linked {
                    uf.union(first, other);
                }
            }
        }
    }

    let mut labels = vec![NOISE; pts.len()];
    let mut id_of_root = HashMap::new();
    let mut n_clusters = 0;
    for i in 0..pts.len() {
        if is_core[i] {
            let root = uf.find(i);
            labels[i] = *id_of_root.entry(root).or_insert_with(|| {
                n_clusters += 1;
                n_clusters
            });
        }
    }
    for i in 0..pts.len() {
        if is_core[i] {
            continue;
        }
        let (cx, cy) = grid.keys[i];
        let mut best = NOISE;
        for dx in -REACH..=REACH {
            for dy in -REACH..=REACH {
                for &j in grid.cell((cx + dx, cy + dy)) {
                    if is_core[j] && (best == NOISE || labels[j] < best) && within(&pts[i], &pts[j], eps2) {
                        best = labels[j];
                    }
                }
            }
        }
        labels[i] = best;
    }
    Ok(ClusterLabels { labels, n_clusters })
}

/// `max(4, round(log10(n)))`.
pub fn min_pts_heuristic(n_samples: usize) -> usize {
    if n_samples <= 1 {
        return 4;
    }
    ((n_samples as f64).log10().round() as usize).max(4)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpsilonEstimate {
    pub epsilon: f64,
    /// Sorted k-th nearest-neighbour distances.
    pub k_distance_curve: Vec<f64>,
    pub knee_index: usize,
    /// Set when the knee sits at distance zero, which DBSCAN cannot use.
    pub degenerate: bool,
}

/// Static 2-D k-d tree over point indices.
struct KdTree<'a> {
    pts: &'a [[f64; 2]],
    idx: Vec<usize>,
}

#[derive(PartialEq)]
struct Cand(f64, usize);

impl Eq for Cand {}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

impl<'a> KdTree<'a> {
    fn new(pts: &'a [[f64; 2]]) -> Self {
        let mut idx: Vec<usize> = (0..pts.len()).collect();
        Self::build(pts, &mut idx, 0);
        KdTree { pts, idx }
    }

    fn build(pts: &[[f64; 2]], idx: &mut [usize], axis: usize) {
        if idx.len() <= 1 {
            return;
        }
        let mid = idx.len() / 2;
        idx.select_nth_unstable_by(mid, |&a, &b| pts[a][axis].total_cmp(&pts[b][axis]));
        let (left, right) = idx.split_at_mut(mid);
        Self::build(pts, left, 1 - axis);
        Self::build(pts, &mut right[1..], 1 - axis);
    }

    /// Squared distance to the k-th nearest other point of `q`.
    fn kth_sq(&self, q: usize, k: usize) -> f64 {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(&self.idx, 0, q, k, &mut heap);
        heap.peek().map(|c| c.0).unwrap_or(f64::INFINITY)
    }

    fn search(&self, idx: &[usize], axis: usize, q: usize, k: usize, heap: &mut BinaryHeap<Cand>) {
        if idx.is_empty() {
            return;
        }
        let mid = idx.len() / 2;
        let p = idx[mid];
        let qp = &self.pts[q];
        if p != q {
            let (dx, dy) = (self.pts[p][0] - qp[0], self.pts[p][1] - qp[1]);
            let d2 = dx * dx + dy * dy;
            if heap.len() < k {
                heap.push(Cand(d2, p));
            } else if d2 < heap.peek().unwrap().0 {
                heap.pop();
                heap.push(Cand(d2, p));
            }
        }
        let diff = qp[axis] - self.pts[p][axis];
        let (near, far) = if diff < 0.0 {
            (&idx[..mid], &idx[mid + 1..])
        } else {
            (&idx[mid + 1..], &idx[..mid])
        };
        self.search(near, 1 - axis, q, k, heap);
        if heap.len() < k || diff * diff <= heap.peek().unwrap().0 {
            self.search(far, 1 - axis, q, k, heap);
        }
    }
}

/// Sorted k-distance curve, excluding each point itself.
pub fn k_distance_curve(points: &PointSet2D, k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::Domain("k must be at least 1".into()));
    }
    if points.len() <= k {
        return Err(Error::Domain(format!(
            "k-distance with k = {k} needs more than {k} points, got {}",
            points.len()
        )));
    }
    let tree = KdTree::new(points.points());
    let mut curve: Vec<f64> = (0..points.len())
        .into_par_iter()
        .map(|i| tree.kth_sq(i, k).sqrt())
        .collect();
    curve.sort_by(f64::total_cmp);
    Ok(curve)
}

/// Index of the curve point farthest from the chord joining its ends, with
/// both axes scaled to `[0, 1]`; the first one wins ties.
pub fn knee_index(curve: &[f64]) -> usize {
    let n = curve.len();
    if n < 3 {
        return 0;
    }
    let (lo, hi) = (curve[0], curve[n - 1]);
    let span = hi - lo;
    if span <= 0.0 {
        return 0;
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &d) in curve.iter().enumerate() {
        let x = i as f64 / (n - 1) as f64;
        let y = (d - lo) / span;
        let dist = (x - y).abs();
        if dist > best.1 {
            best = (i, dist);
        }
    }
    best.0
}

pub fn estimate_epsilon(points: &PointSet2D, k: usize) -> Result<EpsilonEstimate> {
    let curve = k_distance_curve(points, k)?;
    let knee = knee_index(&curve);
    let epsilon = curve[knee];
    Ok(EpsilonEstimate {
        epsilon,
        knee_index: knee,
        degenerate: epsilon <= 0.0,
        k_distance_curve: curve,
    })
}

#[cfg(test)]
#[path = "../tests/support/dbscan_oracle.rs"]
mod dbscan_oracle;
