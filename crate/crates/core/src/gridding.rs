//! Gridding: differentiable scatter of a point cloud onto a vertex lattice.
//!
//! Each point contributes its trilinear weight to the 8 corners of its
//! enclosing cell; a vertex value is the mean contribution over the points
//! that neighbor it. The hard binary voxelization baseline lives here too.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::grid::{
    enclosing_cell, is_neighbor, scale_to_grid_masked, CellIndex, ClampMask, Point3, PointCloud,
    Resolution, ScalarGrid, CELL_OFFSETS,
};

/// State cached by [`gridding_forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct GriddingRecord {
    resolution: Resolution,
    grid_points: Vec<Point3>,
    clamped: Vec<ClampMask>,
    cells: Vec<CellIndex>,
    weights: Vec<[f64; 8]>,
    neighbor_counts: HashMap<usize, u32>,
}

impl GriddingRecord {
    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[CellIndex] {
        &self.cells
    }

    /// Trilinear weights of each point against its 8 cell corners.
    pub fn weights(&self) -> &[[f64; 8]] {
        &self.weights
    }

    /// Number of neighboring points of the vertex at `flat_index`.
    pub fn neighbor_count(&self, flat_index: usize) -> u32 {
        self.neighbor_counts.get(&flat_index).copied().unwrap_or(0)
    }
}

struct Located {
    q: Point3,
    clamped: ClampMask,
    cell: CellIndex,
    corners: [usize; 8],
    weights: [f64; 8],
    neighbor: [bool; 8],
}

fn locate(p: Point3, res: Resolution) -> Located {
    let (q, clamped) = scale_to_grid_masked(p, res);
    // Clamped coordinates always have a complete cell.
    let cell = enclosing_cell(q, res).expect("clamped point has an enclosing cell");
    let corners = cell.vertex_indices(res);
    let mut weights = [0.0; 8];
    let mut neighbor = [false; 8];
    for (j, v) in cell.vertices().into_iter().enumerate() {
        let vp = v.to_point();
        weights[j] = (0..3).map(|a| 1.0 - (vp[a] - q[a]).abs()).product();
        neighbor[j] = is_neighbor(v, q);
    }
    Located {
        q,
        clamped,
        cell,
        corners,
        weights,
        neighbor,
    }
}

fn check_input(cloud: &PointCloud, n: usize) -> Result<Resolution> {
    let res = Resolution::for_gridding(n)?;
    if cloud.points().iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::domain("cloud has non-finite coordinates"));
    }
    Ok(res)
}

/// Hard voxelization: 1 at every vertex with at least one neighboring point.
pub fn voxelize(cloud: &PointCloud, n: usize) -> Result<ScalarGrid> {
    let res = check_input(cloud, n)?;
    let mut grid = ScalarGrid::zeros(res);
    let values = grid.values_mut();
    for &p in cloud.points() {
        let loc = locate(p, res);
        for j in 0..8 {
            if loc.neighbor[j] {
                values[loc.corners[j]] = 1.0;
            }
        }
    }
    Ok(grid)
}

/// Gridding forward pass at resolution `n`.
///
/// Contributions to each vertex are summed in a canonical order, so the output
/// does not depend on point order down to the last bit.
pub fn gridding_forward(cloud: &PointCloud, n: usize) -> Result<(ScalarGrid, GriddingRecord)> {
    let res = check_input(cloud, n)?;
    let count = cloud.len();
    let mut record = GriddingRecord {
        resolution: res,
        grid_points: Vec::with_capacity(count),
        clamped: Vec::with_capacity(count),
        cells: Vec::with_capacity(count),
        weights: Vec::with_capacity(count),
        neighbor_counts: HashMap::new(),
    };
    let mut contributions: Vec<(usize, f64)> = Vec::with_capacity(8 * count);
    for &p in cloud.points() {
        let loc = locate(p, res);
        for j in 0..8 {
            if loc.neighbor[j] {
                contributions.push((loc.corners[j], loc.weights[j]));
                *record.neighbor_counts.entry(loc.corners[j]).or_insert(0) += 1;
            }
        }
        record.grid_points.push(loc.q);
        record.clamped.push(loc.clamped);
        record.cells.push(loc.cell);
        record.weights.push(loc.weights);
    }
    // Weights are nonnegative, so bit order equals numeric order.
    contributions.sort_unstable_by_key(|&(v, w)| (v, w.to_bits()));

    let mut grid = ScalarGrid::zeros(res);
    let values = grid.values_mut();
    for chunk in contributions.chunk_by(|a, b| a.0 == b.0) {
        let v = chunk[0].0;
        let sum: f64 = chunk.iter().map(|c| c.1).sum();
        values[v] = sum / chunk.len() as f64;
    }
    Ok((grid, record))
}

/// Gridding backward pass.
///
/// Returns per-point gradients with respect to the normalized input
/// coordinates. Neighbor counts are held constant; at a coordinate equal to
/// the vertex coordinate the positive branch is taken. Axes that were clamped
/// on entry receive zero gradient.
pub fn gridding_backward(record: &GriddingRecord, grad_w: &ScalarGrid) -> Result<Vec<Point3>> {
    if grad_w.resolution() != record.resolution {
        return Err(Error::contract(format!(
            "co-gradient has resolution {}, record has {}",
            grad_w.resolution().get(),
            record.resolution.get()
        )));
    }
    let res = record.resolution;
    let scale = res.half();
    let g = grad_w.values();
    let mut out = Vec::with_capacity(record.len());
    for i in 0..record.len() {
        let q = record.grid_points[i];
        let cell = record.cells[i];
        let corners = cell.vertex_indices(res);
        let mut grad = [0.0; 3];
        for (j, off) in CELL_OFFSETS.iter().enumerate() {
            let vp = [
                (cell.i + off[0]) as f64,
                (cell.j + off[1]) as f64,
                (cell.k + off[2]) as f64,
            ];
            let delta = [q[0] - vp[0], q[1] - vp[1], q[2] - vp[2]];
            if delta.iter().any(|d| d.abs() >= 1.0) {
                continue;
            }
            let count = record.neighbor_count(corners[j]);
            debug_assert!(count > 0);
            let upstream = g[corners[j]] / count as f64;
            if upstream == 0.0 {
                continue;
            }
            let prox = delta.map(|d| 1.0 - d.abs());
            for a in 0..3 {
                let sign = if delta[a] > 0.0 { -1.0 } else { 1.0 };
                let others = prox[(a + 1) % 3] * prox[(a + 2) % 3];
                grad[a] += upstream * sign * others;
            }
        }
        let mask = record.clamped[i];
        for a in 0..3 {
            grad[a] = if mask[a] { 0.0 } else { grad[a] * scale };
        }
        out.push(grad);
    }
    Ok(out)
}
