// SPDX-License-Identifier: MIT OR Apache-2.0

//! Quadratic DBSCAN used as the oracle for the grid implementation.

/// Full neighbour matrix, connected components of
/// core points by depth-first search, border points to the smallest id.
pub fn reference(pts: &[[f64; 2]], eps: f64, min_pts: usize) -> (Vec<usize>, usize) {
    let n = pts.len();
    let near = |i: usize, j: usize| (pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2) <= eps * eps;
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts).collect();
    let mut label = vec![0; n];
    let mut k = 0;
    for s in 0..n {
        if !core[s] || label[s] != 0 {
            continue;
        }
        k += 1;
        let mut stack = vec![s];
        label[s] = k;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if core[j] && label[j] == 0 && near(i, j) {
                    label[j] = k;
                    stack.push(j);
                }
            }
        }
    }
    for i in 0..n {
        if !core[i] {
            label[i] = (0..n).filter(|&j| core[j] && near(i, j)).map(|j| label[j]).min().unwrap_or(0);
        }
    }
    (label, k)
}
