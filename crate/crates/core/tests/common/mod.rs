#![allow(dead_code)]

use grnet::{Point3, PointCloud};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central difference of `f` at `x` with step `h`.
pub fn central_difference(x: f64, h: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_points(rng: &mut ChaCha8Rng, n: usize, spread: f64) -> Vec<Point3> {
    (0..n)
        .map(|_| [0, 1, 2].map(|_| rng.gen_range(-spread..spread)))
        .collect()
}

pub fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    PointCloud::new(random_points(rng, n, 0.99)).unwrap()
}

/// A point whose grid coordinates at resolution `n` stay at least `margin`
/// away from every integer.
pub fn off_lattice_point(rng: &mut ChaCha8Rng, n: usize, margin: f64) -> Point3 {
    let half = n as f64 / 2.0;
    [0, 1, 2].map(|_| loop {
        let q: f64 = rng.gen_range(-half..half - 1.0);
        let frac = q - q.floor();
        if frac >= margin && frac <= 1.0 - margin {
            break q / half;
        }
    })
}
