//! Gridding Reverse: one point per complete cell, placed at the weighted mean
//! of the cell's corner coordinates.

use crate::error::{Error, Result};
use crate::grid::{CellIndex, Point3, PointCloud, ScalarGrid};

/// Cells whose weight sum is smaller than this in magnitude emit nothing.
pub const SKIP_TOLERANCE: f64 = 1e-8;

/// Emitting cells and their weight sums, in emission order.
#[derive(Debug, Clone)]
pub struct ReverseRecord {
    resolution: crate::grid::Resolution,
    cells: Vec<CellIndex>,
    weight_sums: Vec<f64>,
}

impl ReverseRecord {
    pub fn cells(&self) -> &[CellIndex] {
        &self.cells
    }

    pub fn weight_sums(&self) -> &[f64] {
        &self.weight_sums
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// Converts a grid into a normalized point cloud, cells enumerated x-major,
/// z-fastest.
///
/// Negative values are passed through untouched, so emitted points are only
/// guaranteed to stay inside their cell when the cell's values are nonnegative.
pub fn gridding_reverse_forward(grid: &ScalarGrid) -> Result<(PointCloud, ReverseRecord)> {
    if grid.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("grid contains non-finite values"));
    }
    let res = grid.resolution();
    let scale = res.half();
    let w = grid.values();
    let mut points = Vec::new();
    let mut record = ReverseRecord {
        resolution: res,
        cells: Vec::new(),
        weight_sums: Vec::new(),
    };
    for cell in CellIndex::all(res) {
        let corners = cell.vertex_indices(res);
        let vertices = cell.vertices();
        let mut sum = 0.0;
        let mut acc = [0.0; 3];
        for j in 0..8 {
            let wj = w[corners[j]];
            sum += wj;
            let v = vertices[j].to_point();
            for a in 0..3 {
                acc[a] += wj * v[a];
            }
        }
        if sum.abs() < SKIP_TOLERANCE {
            continue;
        }
        points.push(acc.map(|c| c / sum / scale));
        record.cells.push(cell);
        record.weight_sums.push(sum);
    }
    Ok((PointCloud::from_unbounded(points)?, record))
}

/// Backward pass: maps co-gradients on the emitted (normalized) points to a
/// gradient over the grid values.
pub fn gridding_reverse_backward(
    record: &ReverseRecord,
    cloud: &PointCloud,
    grad_points: &[Point3],
) -> Result<ScalarGrid> {
    if cloud.len() != record.len() || grad_points.len() != record.len() {
        return Err(Error::contract(format!(
            "record has {} points, cloud {}, gradients {}",
            record.len(),
            cloud.len(),
            grad_points.len()
        )));
    }
    let res = record.resolution;
    let scale = res.half();
    let mut grad = ScalarGrid::zeros(res);
    let out = grad.values_mut();
    for (i, cell) in record.cells.iter().enumerate() {
        let g = grad_points[i];
        if g == [0.0; 3] {
            continue;
        }
        let center = cloud.points()[i].map(|c| c * scale);
        let sum = record.weight_sums[i];
        let corners = cell.vertex_indices(res);
        for (j, v) in cell.vertices().into_iter().enumerate() {
            let v = v.to_point();
            let d: f64 = (0..3).map(|a| g[a] * (v[a] - center[a])).sum();
            out[corners[j]] += d / sum / scale;
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Resolution, VertexCoord};

    fn grid_with(n: usize, entries: &[((i32, i32, i32), f64)]) -> ScalarGrid {
        let res = Resolution::new(n).unwrap();
        let mut values = vec![0.0; res.vertex_count()];
        for &((x, y, z), w) in entries {
            values[VertexCoord::new(x, y, z).flat_index(res).unwrap()] = w;
        }
        ScalarGrid::new(res, values).unwrap()
    }

    fn emitted_by(cloud: &PointCloud, rec: &ReverseRecord, cell: CellIndex) -> Point3 {
        let i = rec.cells().iter().position(|c| *c == cell).unwrap();
        cloud.points()[i]
    }

    #[test]
    fn full_cell_example() {
        let entries: Vec<_> = CellIndex::new(0, 0, 0)
            .vertices()
            .iter()
            .map(|v| ((v.x, v.y, v.z), 1.0))
            .collect();
        let grid = grid_with(8, &entries);
        let (cloud, rec) = gridding_reverse_forward(&grid).unwrap();
        assert_eq!(
            emitted_by(&cloud, &rec, CellIndex::new(0, 0, 0)),
            [0.125, 0.125, 0.125]
        );
        assert_eq!(
            emitted_by(&cloud, &rec, CellIndex::new(-1, 0, 0)),
            [0.0, 0.125, 0.125]
        );
        // Every cell sharing a corner with the unit cell emits: 3^3 of them.
        assert_eq!(cloud.len(), 27);
    }

    #[test]
    fn single_vertex_example() {
        let grid = grid_with(8, &[((1, 1, 1), 5.0)]);
        let (cloud, rec) = gridding_reverse_forward(&grid).unwrap();
        assert_eq!(cloud.len(), 8);
        assert!(cloud.points().iter().all(|p| *p == [0.25, 0.25, 0.25]));
        assert!(rec.weight_sums().iter().all(|s| *s == 5.0));

        let grads = vec![[1.0, -2.0, 0.5]; 8];
        let g = gridding_reverse_backward(&rec, &cloud, &grads).unwrap();
        let idx = VertexCoord::new(1, 1, 1)
            .flat_index(Resolution::new(8).unwrap())
            .unwrap();
        assert_eq!(g.values()[idx], 0.0);
    }

    #[test]
    fn uniform_cell_gradients_sum_to_zero() {
        let cell = CellIndex::new(0, 0, 0);
        let entries: Vec<_> = cell
            .vertices()
            .iter()
            .map(|v| ((v.x, v.y, v.z), 1.0))
            .collect();
        let grid = grid_with(8, &entries);
        let (cloud, rec) = gridding_reverse_forward(&grid).unwrap();
        let mut grads = vec![[0.0; 3]; cloud.len()];
        let i = rec.cells().iter().position(|c| *c == cell).unwrap();
        grads[i] = [1.0, 0.0, 0.0];
        let g = gridding_reverse_backward(&rec, &cloud, &grads).unwrap();
        // (x_theta - 0.5) / 8, divided by N/2 = 4.
        for v in cell.vertices() {
            let expect = (v.x as f64 - 0.5) / 8.0 / 4.0;
            assert_eq!(g.get(v).unwrap(), expect);
        }
        assert_eq!(g.values().iter().sum::<f64>(), 0.0);
        assert_eq!(g.values().iter().filter(|v| **v != 0.0).count(), 8);
    }

    #[test]
    fn zero_grid_and_zero_gradients() {
        let grid = grid_with(8, &[]);
        let (cloud, rec) = gridding_reverse_forward(&grid).unwrap();
        assert!(cloud.is_empty() && rec.is_empty());

        let grid = grid_with(8, &[((0, 0, 0), 0.3), ((1, 0, 0), 0.7)]);
        let (cloud, rec) = gridding_reverse_forward(&grid).unwrap();
        let g = gridding_reverse_backward(&rec, &cloud, &vec![[0.0; 3]; cloud.len()]).unwrap();
        assert!(g.values().iter().all(|v| *v == 0.0));
        assert!(gridding_reverse_backward(&rec, &cloud, &[]).is_err());
    }

    #[test]
    fn near_zero_sums_are_skipped() {
        let grid = grid_with(8, &[((0, 0, 0), 1e-9), ((1, 1, 1), 0.5), ((1, 1, 2), -0.5)]);
        let (_, rec) = gridding_reverse_forward(&grid).unwrap();
        assert!(rec.weight_sums().iter().all(|s| s.abs() >= SKIP_TOLERANCE));
        assert!(!rec.cells().contains(&CellIndex::new(1, 1, 1)));
    }

    #[test]
    fn scale_invariance() {
        let grid = grid_with(8, &[((0, 0, 0), 0.3), ((1, 0, 1), 0.7), ((-2, 1, 0), 0.1)]);
        let scaled = ScalarGrid::new(
            grid.resolution(),
            grid.values().iter().map(|v| v * 3.5).collect(),
        )
        .unwrap();
        let (a, _) = gridding_reverse_forward(&grid).unwrap();
        let (b, _) = gridding_reverse_forward(&scaled).unwrap();
        assert_eq!(a.len(), b.len());
        for (p, q) in a.points().iter().zip(b.points()) {
            for k in 0..3 {
                assert!((p[k] - q[k]).abs() < 1e-15);
            }
        }
    }
}
