//! Evaluation metrics for completed clouds.
//!
//! F-Score uses a strict `< d` threshold. Uniformity picks patch seeds with
//! farthest point sampling and gathers patches with a ball query of radius
//! `sqrt(p)` in the cloud's own coordinates.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{Point3, PointCloud};
use crate::losses::chamfer_l2;
use crate::nearest::{squared_distance, NearestIndex};

/// A named metric value together with the parameters it was computed with.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub name: String,
    pub value: f64,
    pub params: BTreeMap<String, f64>,
}

impl MetricReport {
    pub fn new(name: impl Into<String>, value: f64) -> Self {
        Self {
            name: name.into(),
            value,
            params: BTreeMap::new(),
        }
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }
}

fn require_nonempty(cloud: &PointCloud, role: &str) -> Result<()> {
    if cloud.is_empty() {
        Err(Error::domain(format!("{role} cloud is empty")))
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FScore {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

/// Fraction of `from` whose nearest point in `to` is closer than `d`.
fn fraction_within(from: &[Point3], to: &[Point3], d: f64) -> f64 {
    let index = NearestIndex::new(to);
    let hits = index
        .nearest_all(from)
        .iter()
        .filter(|(_, d2)| d2.sqrt() < d)
        .count();
    hits as f64 / from.len() as f64
}

/// Precision, recall and their harmonic mean at threshold `d`.
pub fn f_score_detail(pred: &PointCloud, gt: &PointCloud, d: f64) -> Result<FScore> {
    require_nonempty(pred, "predicted")?;
    require_nonempty(gt, "ground-truth")?;
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::domain(format!(
            "threshold must be positive, got {d}"
        )));
    }
    let precision = fraction_within(pred.points(), gt.points(), d);
    let recall = fraction_within(gt.points(), pred.points(), d);
    let f_score = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(FScore {
        precision,
        recall,
        f_score,
    })
}

/// Length of the diagonal of the axis-aligned bounding box.
pub fn bbox_diagonal(cloud: &PointCloud) -> f64 {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in cloud.points() {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    if cloud.is_empty() {
        return 0.0;
    }
    (0..3).map(|a| (hi[a] - lo[a]).powi(2)).sum::<f64>().sqrt()
}

pub fn f_score(pred: &PointCloud, gt: &PointCloud, d: f64) -> Result<f64> {
    Ok(f_score_detail(pred, gt, d)?.f_score)
}

/// Mean L2 Chamfer Distance between consecutive frames.
pub fn consistency(frames: &[PointCloud]) -> Result<f64> {
    if frames.len() < 2 {
        return Err(Error::domain(format!(
            "consistency needs at least 2 frames, got {}",
            frames.len()
        )));
    }
    let mut total = 0.0;
    for pair in frames.windows(2) {
        total += chamfer_l2(&pair[0], &pair[1])?.value;
    }
    Ok(total / (frames.len() - 1) as f64)
}

/// Greedy farthest point sampling from a seeded random start.
pub fn farthest_point_sampling(cloud: &PointCloud, m: usize, seed: u64) -> Result<Vec<usize>> {
    require_nonempty(cloud, "input")?;
    let start = ChaCha8Rng::seed_from_u64(seed).gen_range(0..cloud.len());
    farthest_point_sampling_from(cloud, m, start)
}

/// Greedy farthest point sampling from a given start index. Each step adds
/// the point with the largest distance to the chosen set, ties to the lowest
/// index.
pub fn farthest_point_sampling_from(
    cloud: &PointCloud,
    m: usize,
    start: usize,
) -> Result<Vec<usize>> {
    let pts = cloud.points();
    if m > pts.len() {
        return Err(Error::domain(format!(
            "cannot pick {m} seeds from {} points",
            pts.len()
        )));
    }
    if start >= pts.len() {
        return Err(Error::domain(format!("start index {start} out of range")));
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    let mut chosen = Vec::with_capacity(m);
    let mut min_d2 = vec![f64::INFINITY; pts.len()];
    let mut current = start;
    loop {
        chosen.push(current);
        min_d2[current] = f64::NEG_INFINITY;
        if chosen.len() == m {
            break;
        }
        let mut best = (usize::MAX, f64::NEG_INFINITY);
        for (i, p) in pts.iter().enumerate() {
            if min_d2[i] == f64::NEG_INFINITY {
                continue;
            }
            let d = squared_distance(p, &pts[current]);
            if d < min_d2[i] {
                min_d2[i] = d;
            }
            if min_d2[i] > best.1 {
                best = (i, min_d2[i]);
            }
        }
        current = best.0;
    }
    Ok(chosen)
}

/// Indices of all points within `radius` of `center`, in index order.
pub fn ball_query(cloud: &PointCloud, center: &Point3, radius: f64) -> Vec<usize> {
    let r2 = radius * radius;
    cloud
        .points()
        .iter()
        .enumerate()
        .filter(|(_, p)| squared_distance(p, center) <= r2)
        .map(|(i, _)| i)
        .collect()
}

/// Count term of one patch: `(|S| - n_hat)^2 / n_hat`.
pub fn imbalance(patch_size: usize, expected: f64) -> f64 {
    let d = patch_size as f64 - expected;
    d * d / expected
}

/// Spacing term of one patch. Patches with fewer than two points score 0.
pub fn clutter(patch: &[Point3], p: f64) -> f64 {
    let n = patch.len();
    if n < 2 {
        return 0.0;
    }
    let expected = (2.0 * PI * p / (n as f64 * 3f64.sqrt())).sqrt();
    let mut total = 0.0;
    for (i, a) in patch.iter().enumerate() {
        let nearest = patch
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, b)| squared_distance(a, b))
            .fold(f64::INFINITY, f64::min)
            .sqrt();
        let d = nearest - expected;
        total += d * d / expected;
    }
    total / n as f64
}

/// Patch-based uniformity score; lower is more uniform.
pub fn uniformity(cloud: &PointCloud, p: f64, patches: usize, seed: u64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!(
            "patch fraction must be in (0, 1), got {p}"
        )));
    }
    if patches == 0 {
        return Err(Error::domain("patch count must be at least 1"));
    }
    let expected = p * cloud.len() as f64;
    if expected < 2.0 {
        return Err(Error::domain(format!(
            "{} points give {expected} expected points per patch; need at least 2",
            cloud.len()
        )));
    }
    let seeds = farthest_point_sampling(cloud, patches, seed)?;
    let radius = p.sqrt();
    let mut total = 0.0;
    for s in seeds {
        let members = ball_query(cloud, &cloud.points()[s], radius);
        let patch: Vec<Point3> = members.iter().map(|&i| cloud.points()[i]).collect();
        total += imbalance(patch.len(), expected) * clutter(&patch, p);
    }
    Ok(total / patches as f64)
}

/// Mean squared distance from each input point to its nearest output point.
pub fn fidelity(input: &PointCloud, output: &PointCloud) -> Result<f64> {
    require_nonempty(input, "input")?;
    require_nonempty(output, "output")?;
    let matches = NearestIndex::new(output.points()).nearest_all(input.points());
    Ok(matches.iter().map(|m| m.1).sum::<f64>() / input.len() as f64)
}

/// Smallest L2 Chamfer Distance from `output` to any reference shape.
pub fn mmd(output: &PointCloud, references: &[PointCloud]) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::domain("reference set is empty"));
    }
    let mut best = f64::INFINITY;
    for r in references {
        best = best.min(chamfer_l2(output, r)?.value);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::chamfer_l2;

    fn cloud(points: &[Point3]) -> PointCloud {
        PointCloud::new(points.to_vec()).unwrap()
    }

    #[test]
    fn f_score_examples() {
        let a = cloud(&[[0.0; 3], [0.1, 0.2, 0.3], [-0.5, 0.5, 0.0]]);
        assert_eq!(f_score(&a, &a, 0.01).unwrap(), 1.0);

        let far = cloud(&[[0.9, 0.9, 0.9]]);
        assert_eq!(f_score(&a, &far, 0.1).unwrap(), 0.0);

        // Half of each cloud coincides, the other halves are far apart.
        let r = cloud(&[[0.0; 3], [0.1, 0.0, 0.0], [0.9, 0.9, 0.9], [0.9, 0.8, 0.9]]);
        let t = cloud(&[
            [0.0; 3],
            [0.1, 0.0, 0.0],
            [-0.9, -0.9, -0.9],
            [-0.9, -0.8, -0.9],
        ]);
        let fs = f_score_detail(&r, &t, 0.05).unwrap();
        assert_eq!((fs.precision, fs.recall, fs.f_score), (0.5, 0.5, 0.5));
        assert_eq!(f_score(&t, &r, 0.05).unwrap(), 0.5);

        assert!(f_score(&a, &a, 0.0).is_err());
        assert!(f_score(&PointCloud::empty(), &a, 0.1).is_err());
    }

    #[test]
    fn f_score_threshold_is_strict() {
        let a = cloud(&[[0.0; 3]]);
        let b = cloud(&[[0.5, 0.0, 0.0]]);
        assert_eq!(f_score(&a, &b, 0.5).unwrap(), 0.0);
        assert_eq!(f_score(&a, &b, 0.500001).unwrap(), 1.0);
    }

    #[test]
    fn consistency_examples() {
        let a = cloud(&[[0.0; 3], [0.1, 0.0, 0.0]]);
        let b = cloud(&[[0.0, 0.2, 0.0]]);
        let c = cloud(&[[0.3, 0.2, 0.0], [0.0, -0.4, 0.1]]);
        assert_eq!(
            consistency(&[a.clone(), a.clone(), a.clone()]).unwrap(),
            0.0
        );
        let ab = chamfer_l2(&a, &b).unwrap().value;
        let bc = chamfer_l2(&b, &c).unwrap().value;
        assert_eq!(consistency(&[a.clone(), b.clone()]).unwrap(), ab);
        assert_eq!(consistency(&[a.clone(), b, c]).unwrap(), (ab + bc) / 2.0);
        assert!(consistency(&[a]).is_err());
    }

    #[test]
    fn fps_examples() {
        let seg = cloud(&[[-0.5, 0.0, 0.0], [0.0, 0.0, 0.0], [0.5, 0.0, 0.0]]);
        let picks = farthest_point_sampling_from(&seg, 2, 1).unwrap();
        assert_eq!(picks[0], 1);
        assert!(picks[1] == 0 || picks[1] == 2);

        let mut all = farthest_point_sampling(&seg, 3, 4).unwrap();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2]);

        let one = farthest_point_sampling(&seg, 1, 9).unwrap();
        let start = ChaCha8Rng::seed_from_u64(9).gen_range(0..3);
        assert_eq!(one, vec![start]);

        assert!(farthest_point_sampling(&seg, 4, 0).is_err());
    }

    #[test]
    fn patch_terms_vanish_at_their_targets() {
        assert_eq!(imbalance(20, 20.0), 0.0);
        // Two points exactly d_hat apart.
        let p = 0.01;
        let d_hat = (2.0 * PI * p / (2.0 * 3f64.sqrt())).sqrt();
        let pair = [[0.0; 3], [d_hat, 0.0, 0.0]];
        assert!(clutter(&pair, p).abs() < 1e-15);
        assert_eq!(clutter(&pair[..1], p), 0.0);
    }

    #[test]
    fn uniformity_rejects_bad_parameters() {
        let a = cloud(&[[0.0; 3]; 10]);
        assert!(uniformity(&a, 0.0, 1, 0).is_err());
        assert!(uniformity(&a, 0.5, 0, 0).is_err());
        assert!(uniformity(&a, 0.1, 1, 0).is_err());
        assert!(uniformity(&a, 0.5, 11, 0).is_err());
    }

    #[test]
    fn fidelity_and_mmd_examples() {
        let a = cloud(&[[0.0; 3]]);
        let b = cloud(&[[0.0, 0.0, 0.5]]);
        assert_eq!(fidelity(&a, &b).unwrap(), 0.25);
        let ab = cloud(&[[0.0; 3], [0.0, 0.0, 0.5]]);
        assert_eq!(fidelity(&a, &ab).unwrap(), 0.0);

        assert_eq!(mmd(&a, &[b.clone(), a.clone()]).unwrap(), 0.0);
        assert_eq!(
            mmd(&a, std::slice::from_ref(&b)).unwrap(),
            chamfer_l2(&a, &b).unwrap().value
        );
        assert!(mmd(&a, &[]).is_err());
    }
}
