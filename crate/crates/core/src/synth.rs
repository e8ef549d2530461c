//! Seeded synthetic shapes: uniformly sampled primitive surfaces and
//! half-space occluded partial views of them.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{Point3, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Sphere,
    Box,
    Cylinder,
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(ShapeKind::Sphere),
            "box" => Ok(ShapeKind::Box),
            "cylinder" => Ok(ShapeKind::Cylinder),
            other => Err(Error::domain(format!("unknown shape kind '{other}'"))),
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Box => "box",
            ShapeKind::Cylinder => "cylinder",
        })
    }
}

/// A posed primitive.
///
/// `size` is the radius for spheres, the three half extents for boxes, and
/// `[radius, half height, unused]` for cylinders.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub size: [f64; 3],
    pub rotation: [[f64; 3]; 3],
    pub translation: Point3,
    pub count: usize,
    pub seed: u64,
}

const IDENTITY: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

impl ShapeSpec {
    /// An unrotated primitive centered at the origin.
    pub fn centered(kind: ShapeKind, size: [f64; 3], count: usize, seed: u64) -> Self {
        Self {
            kind,
            size,
            rotation: IDENTITY,
            translation: [0.0; 3],
            count,
            seed,
        }
    }

    /// A randomly sized and posed primitive that fits inside the cube with a
    /// margin of at least 0.2.
    pub fn random(kind: ShapeKind, count: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5a4e);
        // Bounding radius stays below 0.55, translation below 0.25 per axis.
        let size = match kind {
            ShapeKind::Sphere => [rng.gen_range(0.3..0.5), 0.0, 0.0],
            ShapeKind::Box => [0, 1, 2].map(|_| rng.gen_range(0.15..0.3)),
            ShapeKind::Cylinder => [rng.gen_range(0.15..0.3), rng.gen_range(0.2..0.4), 0.0],
        };
        let axis = unit_vector(&mut rng);
        let angle = rng.gen_range(0.0..2.0 * PI);
        let translation = [0, 1, 2].map(|_| rng.gen_range(-0.25..0.25));
        Self {
            kind,
            size,
            rotation: axis_angle(axis, angle),
            translation,
            count,
            seed,
        }
    }
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Point3 {
    let z: f64 = rng.gen_range(-1.0..1.0);
    let phi: f64 = rng.gen_range(0.0..2.0 * PI);
    let s = (1.0 - z * z).sqrt();
    [s * phi.cos(), s * phi.sin(), z]
}

fn axis_angle(u: Point3, angle: f64) -> [[f64; 3]; 3] {
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [
            t * u[0] * u[0] + c,
            t * u[0] * u[1] - s * u[2],
            t * u[0] * u[2] + s * u[1],
        ],
        [
            t * u[0] * u[1] + s * u[2],
            t * u[1] * u[1] + c,
            t * u[1] * u[2] - s * u[0],
        ],
        [
            t * u[0] * u[2] - s * u[1],
            t * u[1] * u[2] + s * u[0],
            t * u[2] * u[2] + c,
        ],
    ]
}

fn sample_local(spec: &ShapeSpec, rng: &mut ChaCha8Rng) -> Point3 {
    let size = spec.size;
    match spec.kind {
        ShapeKind::Sphere => unit_vector(rng).map(|c| c * size[0]),
        ShapeKind::Box => {
            let [a, b, c] = size;
            // Face pairs normal to x, y, z, weighted by area.
            let areas = [b * c, a * c, a * b];
            let total: f64 = areas.iter().sum();
            let mut pick = rng.gen_range(0.0..total);
            let mut axis = 2;
            for (i, area) in areas.iter().enumerate() {
                if pick < *area {
                    axis = i;
                    break;
                }
                pick -= area;
            }
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let mut p = [0, 1, 2].map(|i| rng.gen_range(-size[i]..size[i]));
            p[axis] = sign * size[axis];
            p
        }
        ShapeKind::Cylinder => {
            let (r, h) = (size[0], size[1]);
            let side = 2.0 * PI * r * 2.0 * h;
            let cap = PI * r * r;
            let phi = rng.gen_range(0.0..2.0 * PI);
            let pick = rng.gen_range(0.0..side + 2.0 * cap);
            if pick < side {
                [r * phi.cos(), r * phi.sin(), rng.gen_range(-h..h)]
            } else {
                let rho = r * rng.gen_range(0.0f64..1.0).sqrt();
                let z = if pick < side + cap { h } else { -h };
                [rho * phi.cos(), rho * phi.sin(), z]
            }
        }
    }
}

fn validate(spec: &ShapeSpec) -> Result<()> {
    let dims = match spec.kind {
        ShapeKind::Sphere => &spec.size[..1],
        ShapeKind::Box => &spec.size[..],
        ShapeKind::Cylinder => &spec.size[..2],
    };
    if dims.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return Err(Error::domain(format!(
            "{} has non-positive size",
            spec.kind
        )));
    }
    if spec.count == 0 {
        return Err(Error::domain("point count must be at least 1"));
    }
    Ok(())
}

/// Uniform surface samples of the posed primitive.
pub fn generate_complete(spec: &ShapeSpec) -> Result<PointCloud> {
    validate(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let m = spec.rotation;
    let points: Vec<Point3> = (0..spec.count)
        .map(|_| {
            let l = sample_local(spec, &mut rng);
            [0, 1, 2]
                .map(|i| m[i][0] * l[0] + m[i][1] * l[1] + m[i][2] * l[2] + spec.translation[i])
        })
        .collect();
    PointCloud::new(points)
        .map_err(|e| Error::domain(format!("{} pose leaves the unit cube: {e}", spec.kind)))
}

/// Splits a cloud along a random view direction: the `fraction` of points
/// with the largest projection are removed.
///
/// Returns `(kept, removed)`, each in input order.
pub fn split_partial(
    cloud: &PointCloud,
    fraction: f64,
    seed: u64,
) -> Result<(PointCloud, PointCloud)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::domain(format!(
            "removal fraction must be in (0, 1), got {fraction}"
        )));
    }
    let n = cloud.len();
    if n == 0 {
        return Err(Error::domain("cannot occlude an empty cloud"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let view = unit_vector(&mut rng);
    let proj: Vec<f64> = cloud
        .points()
        .iter()
        .map(|p| p[0] * view[0] + p[1] * view[1] + p[2] * view[2])
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| proj[a].total_cmp(&proj[b]).then(a.cmp(&b)));
    let remove = ((fraction * n as f64).round() as usize).min(n - 1);
    let mut removed = vec![false; n];
    for &i in &order[n - remove..] {
        removed[i] = true;
    }
    let (mut kept_pts, mut removed_pts) = (Vec::new(), Vec::new());
    for (i, p) in cloud.points().iter().enumerate() {
        if removed[i] {
            removed_pts.push(*p);
        } else {
            kept_pts.push(*p);
        }
    }
    Ok((
        PointCloud::from_unbounded(kept_pts)?,
        PointCloud::from_unbounded(removed_pts)?,
    ))
}

/// The visible part of a cloud after half-space occlusion.
pub fn make_partial(cloud: &PointCloud, fraction: f64, seed: u64) -> Result<PointCloud> {
    Ok(split_partial(cloud, fraction, seed)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_points_lie_on_surface() {
        let spec = ShapeSpec::centered(ShapeKind::Sphere, [0.9, 0.0, 0.0], 1024, 4);
        let c = generate_complete(&spec).unwrap();
        assert_eq!(c.len(), 1024);
        for p in c.points() {
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            assert!((r - 0.9).abs() < 1e-9);
        }
        assert_eq!(c, generate_complete(&spec).unwrap());
    }

    #[test]
    fn random_poses_stay_inside() {
        for seed in 0..30 {
            for kind in [ShapeKind::Sphere, ShapeKind::Box, ShapeKind::Cylinder] {
                let spec = ShapeSpec::random(kind, 200, seed);
                let c = generate_complete(&spec).unwrap();
                assert!(c.points().iter().flatten().all(|v| v.abs() < 0.85));
            }
        }
    }

    #[test]
    fn oversized_pose_is_rejected() {
        let spec = ShapeSpec::centered(ShapeKind::Box, [1.2, 0.2, 0.2], 100, 0);
        assert!(matches!(generate_complete(&spec), Err(Error::Domain(_))));
        let zero = ShapeSpec::centered(ShapeKind::Sphere, [0.0; 3], 100, 0);
        assert!(generate_complete(&zero).is_err());
    }

    #[test]
    fn box_face_counts_follow_areas() {
        let size = [0.2, 0.35, 0.5];
        let n = 6000;
        let spec = ShapeSpec::centered(ShapeKind::Box, size, n, 21);
        let c = generate_complete(&spec).unwrap();
        let mut counts = [0usize; 6];
        for p in c.points() {
            let face = (0..3)
                .find(|&a| p[a].abs() == size[a])
                .expect("point on a face");
            counts[2 * face + usize::from(p[face] > 0.0)] += 1;
        }
        let areas = [size[1] * size[2], size[0] * size[2], size[0] * size[1]];
        let total: f64 = 2.0 * areas.iter().sum::<f64>();
        for (f, &count) in counts.iter().enumerate() {
            let prob = areas[f / 2] / total;
            let mean = n as f64 * prob;
            let sigma = (n as f64 * prob * (1.0 - prob)).sqrt();
            assert!(
                (count as f64 - mean).abs() <= 3.0 * sigma,
                "face {f}: {count} vs {mean} +- {sigma}"
            );
        }
    }

    #[test]
    fn cylinder_points_lie_on_surface() {
        let spec = ShapeSpec::centered(ShapeKind::Cylinder, [0.4, 0.5, 0.0], 2000, 2);
        let c = generate_complete(&spec).unwrap();
        for p in c.points() {
            let rho = (p[0] * p[0] + p[1] * p[1]).sqrt();
            let on_side = (rho - 0.4).abs() < 1e-9 && p[2].abs() <= 0.5;
            let on_cap = (p[2].abs() - 0.5).abs() < 1e-12 && rho <= 0.4 + 1e-12;
            assert!(on_side || on_cap, "{p:?}");
        }
    }

    #[test]
    fn partial_examples() {
        let spec = ShapeSpec::random(ShapeKind::Box, 1000, 8);
        let c = generate_complete(&spec).unwrap();
        let (kept, removed) = split_partial(&c, 0.5, 3).unwrap();
        assert_eq!(kept.len(), 500);
        assert_eq!(removed.len(), 500);

        let mut all: Vec<Point3> = kept
            .points()
            .iter()
            .chain(removed.points())
            .copied()
            .collect();
        let mut orig = c.points().to_vec();
        let key = |p: &Point3| p.map(f64::to_bits);
        all.sort_by_key(key);
        orig.sort_by_key(key);
        assert_eq!(all, orig);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let view = unit_vector(&mut rng);
        let dot = |p: &Point3| p[0] * view[0] + p[1] * view[1] + p[2] * view[2];
        let max_kept = kept.points().iter().map(dot).fold(f64::MIN, f64::max);
        let min_removed = removed.points().iter().map(dot).fold(f64::MAX, f64::min);
        assert!(max_kept <= min_removed);

        assert!(make_partial(&c, 0.0, 1).is_err());
        assert!(make_partial(&c, 1.0, 1).is_err());
        let one = PointCloud::new(vec![[0.0; 3]]).unwrap();
        assert_eq!(make_partial(&one, 0.9, 1).unwrap().len(), 1);
    }
}
