//! Joint data association baseline: a global cost matrix over every map
//! landmark solved with the Hungarian algorithm.

use thiserror::Error;

use crate::assoc::projected_distance;
use crate::config::JdaWeights;
use crate::geom::{iou_2d, project_quadric_bbox};
use crate::mapdb::{Frame, FrameView, LandmarkId, MapDatabase};

/// Cost assigned to physically impossible pairs (landmark behind the camera).
pub const INFEASIBLE: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("cost matrix has {got} entries, expected {rows}x{cols}")]
    Shape { rows: usize, cols: usize, got: usize },
    #[error("cost entry ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },
}

/// Dense row-major cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, CostError> {
        if data.len() != rows * cols {
            return Err(CostError::Shape {
                rows,
                cols,
                got: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|c| !c.is_finite()) {
            return Err(CostError::NonFinite {
                row: i / cols.max(1),
                col: i % cols.max(1),
            });
        }
        Ok(CostMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, CostError> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(CostError::Shape {
                rows: rows.len(),
                cols,
                got: bad.len(),
            });
        }
        CostMatrix::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Column assigned to each row, if any.
    pub row_to_col: Vec<Option<usize>>,
    /// Sum of the assigned entries (dummy costs excluded).
    pub total: f64,
}

/// Minimum-cost assignment for `n <= m` (rows ≤ cols); returns the column of
/// each row. Shortest augmenting paths with potentials, O(n²m).
fn solve_wide(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    // 1-based arrays; index 0 is the virtual source column
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![usize::MAX; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Minimum-total-cost one-to-one assignment.
///
/// With `gate = Some(g)` every row may instead take a private dummy column of
/// cost `g`; such rows come back unassigned. Without a gate, min(rows, cols)
/// pairs are assigned.
pub fn hungarian_solve(costs: &CostMatrix, gate: Option<f64>) -> Assignment {
    let (n, m) = (costs.rows, costs.cols);
    let mut row_to_col = vec![None; n];
    if n == 0 {
        return Assignment { row_to_col, total: 0.0 };
    }
    match gate {
        Some(g) => {
            let cols = solve_wide(n, m + n, |r, c| if c < m { costs.get(r, c) } else { g });
            for (r, &c) in cols.iter().enumerate() {
                if c < m {
                    row_to_col[r] = Some(c);
                }
            }
        }
        None if n <= m => {
            for (r, c) in solve_wide(n, m, |r, c| costs.get(r, c)).into_iter().enumerate() {
                row_to_col[r] = Some(c);
            }
        }
        None => {
            for (c, r) in solve_wide(m, n, |r, c| costs.get(c, r)).into_iter().enumerate() {
                row_to_col[r] = Some(c);
            }
        }
    }
    let total = row_to_col
        .iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|c| costs.get(r, c)))
        .sum();
    Assignment { row_to_col, total }
}

/// Association cost of every detection against every landmark in the map.
pub fn build_cost_matrix(
    frame: &Frame,
    db: &MapDatabase,
    view: &FrameView,
    w: &JdaWeights,
) -> (CostMatrix, Vec<LandmarkId>) {
    let t_cw = view.pose.inverse();
    let diag = view.intrinsics.diagonal();
    let ids: Vec<LandmarkId> = db.landmarks().map(|lm| lm.id).collect();
    // landmark-side quantities are shared by all detections
    let projected: Vec<_> = db
        .landmarks()
        .map(|lm| {
            let proj_box = match &lm.quadric {
                Some(q) => project_quadric_bbox(&view.intrinsics, &t_cw, q),
                None => Some(lm.last_box),
            };
            (lm, proj_box)
        })
        .collect();
    let mut data = Vec::with_capacity(frame.detections.len() * ids.len());
    for det in &frame.detections {
        for (lm, proj_box) in &projected {
            let Some(dist) = projected_distance(&view.intrinsics, &t_cw, &det.bbox, &lm.centroid) else {
                data.push(INFEASIBLE);
                continue;
            };
            let label = if lm.label == det.label { 0.0 } else { w.label_penalty };
            let iou = proj_box.as_ref().map_or(0.0, |b| iou_2d(&det.bbox, b));
            data.push(label + w.distance_weight * dist / diag + w.iou_weight * (1.0 - iou));
        }
    }
    let m = CostMatrix::new(frame.detections.len(), ids.len(), data).expect("costs are finite by construction");
    (m, ids)
}

/// Per-detection landmark and cost chosen by the gated global assignment.
pub fn jda_assign(frame: &Frame, db: &MapDatabase, view: &FrameView, w: &JdaWeights) -> Vec<Option<(LandmarkId, f64)>> {
    let (costs, ids) = build_cost_matrix(frame, db, view, w);
    let a = hungarian_solve(&costs, Some(w.gate));
    a.row_to_col
        .iter()
        .enumerate()
        .map(|(r, c)| {
            let c = (*c)?;
            let cost = costs.get(r, c);
            (cost < w.gate).then_some((ids[c], cost))
        })
        .collect()
}
