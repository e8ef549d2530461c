//! Exact nearest-neighbor queries over a fixed point set.
//!
//! Large sets are bucketed into a uniform grid with cell size
//! `max extent / cbrt(n)` and searched shell by shell; small sets are scanned.
//! Both paths return the same answer: the lowest index among the points at
//! minimal squared distance.

use crate::grid::Point3;

/// Sets smaller than this are scanned directly.
pub const BRUTE_FORCE_BELOW: usize = 256;

#[inline]
pub fn squared_distance(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Nearest neighbor of `q` by linear scan, ties to the lowest index.
pub fn brute_force_nearest(points: &[Point3], q: &Point3) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        let d = squared_distance(p, q);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best
}

#[derive(Debug, Clone)]
struct UniformGrid {
    origin: Point3,
    cell: f64,
    dims: [usize; 3],
    starts: Vec<usize>,
    order: Vec<usize>,
}

impl UniformGrid {
    fn build(points: &[Point3]) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
        let per_axis = (points.len() as f64).cbrt().max(1.0);
        let cell = if extent > 0.0 { extent / per_axis } else { 1.0 };
        let dims = [0, 1, 2].map(|a| (((hi[a] - lo[a]) / cell).floor() as usize + 1).max(1));
        let mut grid = Self {
            origin: lo,
            cell,
            dims,
            starts: Vec::new(),
            order: Vec::new(),
        };
        let total = dims[0] * dims[1] * dims[2];
        let keys: Vec<usize> = points.iter().map(|p| grid.flat(grid.cell_of(p))).collect();
        let mut counts = vec![0usize; total + 1];
        for &k in &keys {
            counts[k + 1] += 1;
        }
        for i in 0..total {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut order = vec![0; points.len()];
        for (i, &k) in keys.iter().enumerate() {
            order[fill[k]] = i;
            fill[k] += 1;
        }
        grid.starts = counts;
        grid.order = order;
        grid
    }

    fn cell_of(&self, p: &Point3) -> [usize; 3] {
        [0, 1, 2].map(|a| {
            let c = ((p[a] - self.origin[a]) / self.cell).floor();
            if c <= 0.0 {
                0
            } else {
                (c as usize).min(self.dims[a] - 1)
            }
        })
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        (c[0] * self.dims[1] + c[1]) * self.dims[2] + c[2]
    }

    fn nearest(&self, points: &[Point3], q: &Point3) -> (usize, f64) {
        let center = self.cell_of(q);
        let max_shell = self.dims.iter().copied().max().unwrap_or(1);
        let mut best = (usize::MAX, f64::INFINITY);
        for shell in 0..=max_shell {
            let range = |a: usize| {
                let lo = center[a].saturating_sub(shell);
                let hi = (center[a] + shell).min(self.dims[a] - 1);
                lo..=hi
            };
            for x in range(0) {
                for y in range(1) {
                    for z in range(2) {
                        let ring = center[0]
                            .abs_diff(x)
                            .max(center[1].abs_diff(y))
                            .max(center[2].abs_diff(z));
                        if ring != shell {
                            continue;
                        }
                        let f = self.flat([x, y, z]);
                        for &i in &self.order[self.starts[f]..self.starts[f + 1]] {
                            let d = squared_distance(&points[i], q);
                            if d < best.1 || (d == best.1 && i < best.0) {
                                best = (i, d);
                            }
                        }
                    }
                }
            }
            // Anything outside the searched block is at least this far away.
            let mut bound = f64::INFINITY;
            for a in 0..3 {
                let lo_cell = center[a].saturating_sub(shell);
                let hi_cell = center[a] + shell;
                if lo_cell > 0 {
                    bound = bound.min(q[a] - (self.origin[a] + lo_cell as f64 * self.cell));
                }
                if hi_cell + 1 < self.dims[a] {
                    bound = bound.min(self.origin[a] + (hi_cell + 1) as f64 * self.cell - q[a]);
                }
            }
            if bound == f64::INFINITY {
                break;
            }
            // Slack for rounding in the cell assignment.
            let bound = bound - 1e-9 * self.cell;
            if bound > 0.0 && best.1 < bound * bound {
                break;
            }
        }
        best
    }
}

#[derive(Debug, Clone)]
enum Strategy {
    Scan,
    Grid(UniformGrid),
}

/// Nearest-neighbor index over a borrowed point set.
#[derive(Debug, Clone)]
pub struct NearestIndex<'a> {
    points: &'a [Point3],
    strategy: Strategy,
}

impl<'a> NearestIndex<'a> {
    /// Picks the scan or the grid depending on the set size.
    pub fn new(points: &'a [Point3]) -> Self {
        if points.len() < BRUTE_FORCE_BELOW {
            Self::scan(points)
        } else {
            Self::grid(points)
        }
    }

    pub fn scan(points: &'a [Point3]) -> Self {
        Self {
            points,
            strategy: Strategy::Scan,
        }
    }

    /// Always uses the uniform grid, whatever the set size.
    pub fn grid(points: &'a [Point3]) -> Self {
        let strategy = if points.is_empty() {
            Strategy::Scan
        } else {
            Strategy::Grid(UniformGrid::build(points))
        };
        Self { points, strategy }
    }

    /// Index and squared distance of the nearest point, or `None` for an
    /// empty set.
    pub fn nearest(&self, q: &Point3) -> Option<(usize, f64)> {
        match &self.strategy {
            Strategy::Scan => brute_force_nearest(self.points, q),
            Strategy::Grid(g) => Some(g.nearest(self.points, q)),
        }
    }

    /// Nearest point for every query, in query order.
    pub fn nearest_all(&self, queries: &[Point3]) -> Vec<(usize, f64)> {
        if self.points.is_empty() {
            return Vec::new();
        }
        queries
            .iter()
            .map(|q| self.nearest(q).expect("nonempty index"))
            .collect()
    }
}
