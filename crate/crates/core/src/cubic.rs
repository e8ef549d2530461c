//! Cubic Feature Sampling: per-point concatenation of the feature vectors at
//! the 8 lattice vertices around the point, plus the seeded subsampler used
//! to fix the coarse point count.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{
    scale_to_grid_masked, Point3, PointCloud, Resolution, VertexCoord, CELL_OFFSETS,
};

/// `c` feature channels on a `t^3` lattice, stored channel-major and then in
/// flat vertex order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    resolution: Resolution,
    channels: usize,
    values: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(resolution: Resolution, channels: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::contract("feature grid needs at least one channel"));
        }
        let expect = channels * resolution.vertex_count();
        if values.len() != expect {
            return Err(Error::contract(format!(
                "feature grid {}x{}^3 needs {expect} values, got {}",
                channels,
                resolution.get(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("feature grid has non-finite values"));
        }
        Ok(Self {
            resolution,
            channels,
            values,
        })
    }

    pub fn zeros(resolution: Resolution, channels: usize) -> Self {
        Self {
            resolution,
            channels,
            values: vec![0.0; channels * resolution.vertex_count()],
        }
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Row-major `points x 8c` feature matrix. Row layout is corner-major: the
/// `c` channels of corner 0, then corner 1, and so on.
#[derive(Debug, Clone, PartialEq)]
pub struct PointFeatures {
    width: usize,
    data: Vec<f64>,
}

impl PointFeatures {
    pub fn new(width: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || !data.len().is_multiple_of(width) {
            return Err(Error::contract(format!(
                "{} values do not form rows of width {width}",
                data.len()
            )));
        }
        Ok(Self { width, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.width
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Keeps the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.width);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Self {
            width: self.width,
            data,
        }
    }

    /// Concatenates several feature blocks with equal row counts side by side.
    pub fn concat_columns(blocks: &[PointFeatures]) -> Result<Self> {
        let rows = blocks.first().map_or(0, |b| b.rows());
        if blocks.iter().any(|b| b.rows() != rows) {
            return Err(Error::contract("feature blocks have different row counts"));
        }
        let width: usize = blocks.iter().map(|b| b.width).sum();
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for b in blocks {
                data.extend_from_slice(b.row(r));
            }
        }
        Self::new(width.max(1), data)
    }
}

/// Flat vertex indices gathered for each point.
#[derive(Debug, Clone)]
pub struct CubicRecord {
    resolution: Resolution,
    channels: usize,
    corners: Vec<[usize; 8]>,
}

impl CubicRecord {
    pub fn corners(&self) -> &[[usize; 8]] {
        &self.corners
    }
}

/// Floor/ceil lattice vertices of a normalized point, in corner order.
/// An integer grid coordinate yields the same vertex twice on that axis.
fn gather_corners(p: Point3, res: Resolution) -> [usize; 8] {
    let (q, _) = scale_to_grid_masked(p, res);
    let lo = q.map(|c| c.floor() as i32);
    let hi = q.map(|c| c.ceil() as i32);
    CELL_OFFSETS.map(|off| {
        let pick = |a: usize| if off[a] == 0 { lo[a] } else { hi[a] };
        VertexCoord::new(pick(0), pick(1), pick(2)).flat_index_unchecked(res)
    })
}

pub fn cubic_feature_sampling_forward(
    cloud: &PointCloud,
    features: &FeatureGrid,
) -> Result<(PointFeatures, CubicRecord)> {
    let res = features.resolution;
    let c = features.channels;
    let stride = res.vertex_count();
    let width = 8 * c;
    let mut data = Vec::with_capacity(cloud.len() * width);
    let mut corners = Vec::with_capacity(cloud.len());
    for &p in cloud.points() {
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain("cloud has non-finite coordinates"));
        }
        let idx = gather_corners(p, res);
        for &v in &idx {
            data.extend((0..c).map(|ch| features.values[ch * stride + v]));
        }
        corners.push(idx);
    }
    Ok((
        PointFeatures { width, data },
        CubicRecord {
            resolution: res,
            channels: c,
            corners,
        },
    ))
}

/// Scatters feature co-gradients back to the lattice with weight 1.
///
/// Also returns the coordinate gradients, which are identically zero.
pub fn cubic_feature_sampling_backward(
    record: &CubicRecord,
    grad: &PointFeatures,
) -> Result<(FeatureGrid, Vec<Point3>)> {
    let c = record.channels;
    if grad.width != 8 * c || grad.rows() != record.corners.len() {
        return Err(Error::contract(format!(
            "co-gradient is {}x{}, record expects {}x{}",
            grad.rows(),
            grad.width,
            record.corners.len(),
            8 * c
        )));
    }
    let res = record.resolution;
    let stride = res.vertex_count();
    let mut out = FeatureGrid::zeros(res, c);
    for (i, idx) in record.corners.iter().enumerate() {
        let row = grad.row(i);
        for (j, &v) in idx.iter().enumerate() {
            for ch in 0..c {
                out.values[ch * stride + v] += row[j * c + ch];
            }
        }
    }
    Ok((out, vec![[0.0; 3]; record.corners.len()]))
}

/// Result of [`random_subsample`]; `indices` maps output rows to input rows.
#[derive(Debug, Clone)]
pub struct Subsample {
    pub cloud: PointCloud,
    pub features: Option<PointFeatures>,
    pub indices: Vec<usize>,
}

/// Seeded row selection of exactly `k` points.
///
/// Without replacement when the cloud has at least `k` points, otherwise
/// `k` independent draws with replacement.
pub fn random_subsample(
    cloud: &PointCloud,
    features: Option<&PointFeatures>,
    k: usize,
    seed: u64,
) -> Result<Subsample> {
    let n = cloud.len();
    if k == 0 {
        return Err(Error::domain("subsample count must be at least 1"));
    }
    if n == 0 {
        return Err(Error::domain("cannot subsample an empty cloud"));
    }
    if let Some(f) = features {
        if f.rows() != n {
            return Err(Error::contract(format!(
                "cloud has {n} points but features have {} rows",
                f.rows()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices: Vec<usize> = if n >= k {
        index::sample(&mut rng, n, k).into_vec()
    } else {
        (0..k).map(|_| rng.gen_range(0..n)).collect()
    };
    let points = indices.iter().map(|&i| cloud.points()[i]).collect();
    Ok(Subsample {
        cloud: PointCloud::from_unbounded(points)?,
        features: features.map(|f| f.select_rows(&indices)),
        indices,
    })
}
