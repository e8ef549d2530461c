//! Shared lattice types: point clouds, scalar grids, vertex and cell indexing,
//! and the normalized-to-grid coordinate convention.
//!
//! Clouds live in the open cube (-1, 1)^3. A grid of resolution `N` has `N`
//! vertices per axis at integer coordinates `-N/2 ..= N/2 - 1`; operators
//! scale points by `N/2` before touching the lattice. Flat indices are
//! x-major with z varying fastest.

use crate::error::{Error, Result};

/// A point in 3-space.
pub type Point3 = [f64; 3];

/// Gap kept below the upper lattice bound so every scaled point has a complete
/// enclosing cell.
pub const CLAMP_EPS: f64 = 1e-6;

/// The eight `{0,1}^3` corner offsets of a cell, x-major and z-fastest.
/// Every per-cell array in the crate follows this order.
pub const CELL_OFFSETS: [[i32; 3]; 8] = [
    [0, 0, 0],
    [0, 0, 1],
    [0, 1, 0],
    [0, 1, 1],
    [1, 0, 0],
    [1, 0, 1],
    [1, 1, 0],
    [1, 1, 1],
];

/// An ordered set of 3D points.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Point3>,
}

impl PointCloud {
    /// Builds a cloud whose coordinates are finite and inside (-1, 1).
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            check_finite(i, p)?;
            if p.iter().any(|c| *c <= -1.0 || *c >= 1.0) {
                return Err(Error::domain(format!(
                    "point {i} ({}, {}, {}) lies outside the open cube (-1, 1)^3",
                    p[0], p[1], p[2]
                )));
            }
        }
        Ok(Self { points })
    }

    /// Builds a cloud that only needs finite coordinates.
    ///
    /// Network outputs can leave the unit cube; the operators clamp on entry.
    pub fn from_unbounded(points: Vec<Point3>) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            check_finite(i, p)?;
        }
        Ok(Self { points })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// True when every coordinate lies in the open cube.
    pub fn in_unit_cube(&self) -> bool {
        self.points
            .iter()
            .all(|p| p.iter().all(|c| *c > -1.0 && *c < 1.0))
    }
}

fn check_finite(i: usize, p: &Point3) -> Result<()> {
    if p.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "point {i} has a non-finite coordinate"
        )))
    }
}

/// Lattice resolution: a positive even vertex count per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Resolution(usize);

impl Resolution {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 || !n.is_multiple_of(2) {
            return Err(Error::domain(format!(
                "resolution must be a positive even integer, got {n}"
            )));
        }
        Ok(Self(n))
    }

    /// Resolutions accepted by the point/grid operators (even, at least 4).
    pub fn for_gridding(n: usize) -> Result<Self> {
        let res = Self::new(n)?;
        if n < 4 {
            return Err(Error::domain(format!(
                "gridding needs a resolution of at least 4, got {n}"
            )));
        }
        Ok(res)
    }

    pub fn get(self) -> usize {
        self.0
    }

    /// `N/2` as a real, the normalized-to-grid scale factor.
    pub fn half(self) -> f64 {
        (self.0 / 2) as f64
    }

    fn half_i(self) -> i32 {
        (self.0 / 2) as i32
    }

    pub fn vertex_count(self) -> usize {
        self.0 * self.0 * self.0
    }

    /// Number of complete cells, `(N - 1)^3`.
    pub fn cell_count(self) -> usize {
        let m = self.0 - 1;
        m * m * m
    }

    pub fn min_coord(self) -> i32 {
        -self.half_i()
    }

    pub fn max_coord(self) -> i32 {
        self.half_i() - 1
    }
}

/// Integer vertex coordinates, each in `-N/2 ..= N/2 - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VertexCoord {
    pub x: i32,
    pub y: i32,
    pub z: i32,
}

impl VertexCoord {
    pub fn new(x: i32, y: i32, z: i32) -> Self {
        Self { x, y, z }
    }

    pub fn is_valid(self, res: Resolution) -> bool {
        let (lo, hi) = (res.min_coord(), res.max_coord());
        [self.x, self.y, self.z]
            .iter()
            .all(|c| (lo..=hi).contains(c))
    }

    /// Flat index `(x + N/2) N^2 + (y + N/2) N + (z + N/2)`.
    pub fn flat_index(self, res: Resolution) -> Result<usize> {
        if !self.is_valid(res) {
            return Err(Error::domain(format!(
                "vertex {self:?} is outside a resolution-{} lattice",
                res.get()
            )));
        }
        Ok(self.flat_index_unchecked(res))
    }

    pub(crate) fn flat_index_unchecked(self, res: Resolution) -> usize {
        let n = res.get();
        let h = res.half_i();
        let xi = (self.x + h) as usize;
        let yi = (self.y + h) as usize;
        let zi = (self.z + h) as usize;
        (xi * n + yi) * n + zi
    }

    pub fn from_flat_index(idx: usize, res: Resolution) -> Result<Self> {
        let n = res.get();
        if idx >= res.vertex_count() {
            return Err(Error::domain(format!(
                "flat index {idx} exceeds {} vertices",
                res.vertex_count()
            )));
        }
        let h = res.half_i();
        Ok(Self {
            x: (idx / (n * n)) as i32 - h,
            y: ((idx / n) % n) as i32 - h,
            z: (idx % n) as i32 - h,
        })
    }

    pub fn to_point(self) -> Point3 {
        [self.x as f64, self.y as f64, self.z as f64]
    }
}

/// A cell named by its minimal vertex; each axis in `-N/2 ..= N/2 - 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CellIndex {
    pub i: i32,
    pub j: i32,
    pub k: i32,
}

impl CellIndex {
    pub fn new(i: i32, j: i32, k: i32) -> Self {
        Self { i, j, k }
    }

    pub fn is_valid(self, res: Resolution) -> bool {
        let (lo, hi) = (res.min_coord(), res.max_coord() - 1);
        [self.i, self.j, self.k]
            .iter()
            .all(|c| (lo..=hi).contains(c))
    }

    /// The eight corner vertices in [`CELL_OFFSETS`] order.
    pub fn vertices(self) -> [VertexCoord; 8] {
        CELL_OFFSETS.map(|[dx, dy, dz]| VertexCoord::new(self.i + dx, self.j + dy, self.k + dz))
    }

    /// Flat indices of the eight corners. Caller guarantees validity.
    pub(crate) fn vertex_indices(self, res: Resolution) -> [usize; 8] {
        self.vertices().map(|v| v.flat_index_unchecked(res))
    }

    /// Cells enumerated x-major, z-fastest.
    pub fn all(res: Resolution) -> impl Iterator<Item = CellIndex> {
        let lo = res.min_coord();
        let hi = res.max_coord() - 1;
        (lo..=hi).flat_map(move |i| {
            (lo..=hi).flat_map(move |j| (lo..=hi).map(move |k| CellIndex::new(i, j, k)))
        })
    }
}

/// The value set `W` of an `N^3` vertex lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    resolution: Resolution,
    values: Vec<f64>,
}

impl ScalarGrid {
    pub fn new(resolution: Resolution, values: Vec<f64>) -> Result<Self> {
        if values.len() != resolution.vertex_count() {
            return Err(Error::contract(format!(
                "grid of resolution {} needs {} values, got {}",
                resolution.get(),
                resolution.vertex_count(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("grid value {i} is not finite")));
        }
        Ok(Self { resolution, values })
    }

    pub fn zeros(resolution: Resolution) -> Self {
        Self {
            resolution,
            values: vec![0.0; resolution.vertex_count()],
        }
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, v: VertexCoord) -> Result<f64> {
        Ok(self.values[v.flat_index(self.resolution)?])
    }
}

/// Per-axis record of whether scaling had to clamp a coordinate.
pub type ClampMask = [bool; 3];

/// Scales a normalized point by `N/2` and clamps it into
/// `[-N/2, N/2 - 1 - CLAMP_EPS]` on each axis.
pub fn scale_to_grid(p: Point3, res: Resolution) -> Result<Point3> {
    if p.iter().any(|c| !c.is_finite()) {
        return Err(Error::domain("cannot scale a non-finite point"));
    }
    Ok(scale_to_grid_masked(p, res).0)
}

pub(crate) fn scale_to_grid_masked(p: Point3, res: Resolution) -> (Point3, ClampMask) {
    let half = res.half();
    let lo = -half;
    let hi = half - 1.0 - CLAMP_EPS;
    let mut q = [0.0; 3];
    let mut clamped = [false; 3];
    for a in 0..3 {
        let s = p[a] * half;
        q[a] = if s < lo {
            clamped[a] = true;
            lo
        } else if s > hi {
            clamped[a] = true;
            hi
        } else {
            s
        };
    }
    (q, clamped)
}

/// The cell whose minimal vertex is the componentwise floor of `q`.
pub fn enclosing_cell(q: Point3, res: Resolution) -> Result<CellIndex> {
    if q.iter().any(|c| !c.is_finite()) {
        return Err(Error::domain("cannot locate a non-finite point"));
    }
    let cell = CellIndex::new(
        q[0].floor() as i32,
        q[1].floor() as i32,
        q[2].floor() as i32,
    );
    if !cell.is_valid(res) {
        return Err(Error::domain(format!(
            "grid point ({}, {}, {}) has no complete enclosing cell at resolution {}",
            q[0],
            q[1],
            q[2],
            res.get()
        )));
    }
    Ok(cell)
}

/// True when `q` lies strictly within unit max-norm distance of `v`.
pub fn is_neighbor(v: VertexCoord, q: Point3) -> bool {
    let vp = v.to_point();
    (0..3).all(|a| (q[a] - vp[a]).abs() < 1.0)
}

/// Indices of grid-space points within the 8 cells adjacent to `v`.
pub fn neighboring_points(v: VertexCoord, points: &[Point3]) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, q)| is_neighbor(v, **q))
        .map(|(i, _)| i)
        .collect()
}
