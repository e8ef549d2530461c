//! Training losses with gradients for the predicted cloud: Gridding Loss and
//! the L2/L1 Chamfer Distances.

use crate::error::{Error, Result};
use crate::grid::{Point3, PointCloud, ScalarGrid};
use crate::gridding::{gridding_backward, gridding_forward};
use crate::nearest::NearestIndex;

/// A scalar loss and its gradient with respect to the predicted points.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad_pred: Vec<Point3>,
}

fn require_nonempty(cloud: &PointCloud, role: &str) -> Result<()> {
    if cloud.is_empty() {
        Err(Error::domain(format!("{role} cloud is empty")))
    } else {
        Ok(())
    }
}

/// Mean absolute difference between the gridded predicted and ground-truth
/// clouds at resolution `n`.
pub fn gridding_loss(pred: &PointCloud, gt: &PointCloud, n: usize) -> Result<LossValue> {
    require_nonempty(pred, "predicted")?;
    require_nonempty(gt, "ground-truth")?;
    let (w_pred, record) = gridding_forward(pred, n)?;
    let (w_gt, _) = gridding_forward(gt, n)?;
    let res = w_pred.resolution();
    let norm = res.vertex_count() as f64;
    let mut value = 0.0;
    let mut co_grad = Vec::with_capacity(res.vertex_count());
    for (a, b) in w_pred.values().iter().zip(w_gt.values()) {
        let d = a - b;
        value += d.abs();
        co_grad.push(if d > 0.0 {
            1.0 / norm
        } else if d < 0.0 {
            -1.0 / norm
        } else {
            0.0
        });
    }
    let grad_pred = gridding_backward(&record, &ScalarGrid::new(res, co_grad)?)?;
    Ok(LossValue {
        value: value / norm,
        grad_pred,
    })
}

/// Nearest-neighbor assignments in both directions.
struct Matching {
    /// For each predicted point: (nearest target index, squared distance).
    forward: Vec<(usize, f64)>,
    /// For each target point: (nearest predicted index, squared distance).
    backward: Vec<(usize, f64)>,
}

fn match_clouds(pred: &[Point3], target: &[Point3]) -> Matching {
    Matching {
        forward: NearestIndex::new(target).nearest_all(pred),
        backward: NearestIndex::new(pred).nearest_all(target),
    }
}

/// Chamfer Distance with squared Euclidean distances:
/// `mean_r min_t |r-t|^2 + mean_t min_r |t-r|^2`.
///
/// The gradient holds the nearest-neighbor assignments fixed.
pub fn chamfer_l2(pred: &PointCloud, target: &PointCloud) -> Result<LossValue> {
    require_nonempty(pred, "predicted")?;
    require_nonempty(target, "target")?;
    let (r, t) = (pred.points(), target.points());
    let m = match_clouds(r, t);
    let (nr, nt) = (r.len() as f64, t.len() as f64);
    let value = m.forward.iter().map(|x| x.1).sum::<f64>() / nr
        + m.backward.iter().map(|x| x.1).sum::<f64>() / nt;

    let mut grad = vec![[0.0; 3]; r.len()];
    for (i, &(j, _)) in m.forward.iter().enumerate() {
        for a in 0..3 {
            grad[i][a] += 2.0 * (r[i][a] - t[j][a]) / nr;
        }
    }
    for (j, &(i, _)) in m.backward.iter().enumerate() {
        for a in 0..3 {
            grad[i][a] += 2.0 * (r[i][a] - t[j][a]) / nt;
        }
    }
    Ok(LossValue {
        value,
        grad_pred: grad,
    })
}

/// Chamfer Distance with unsquared Euclidean distances, halved:
/// `(mean_t min_r |t-r| + mean_r min_t |r-t|) / 2`.
pub fn chamfer_l1(pred: &PointCloud, target: &PointCloud) -> Result<LossValue> {
    require_nonempty(pred, "predicted")?;
    require_nonempty(target, "target")?;
    let (r, t) = (pred.points(), target.points());
    let m = match_clouds(r, t);
    let (nr, nt) = (r.len() as f64, t.len() as f64);
    let value = 0.5
        * (m.backward.iter().map(|x| x.1.sqrt()).sum::<f64>() / nt
            + m.forward.iter().map(|x| x.1.sqrt()).sum::<f64>() / nr);

    let mut grad = vec![[0.0; 3]; r.len()];
    let mut push = |i: usize, j: usize, d2: f64, n: f64| {
        if d2 > 0.0 {
            let d = d2.sqrt();
            for a in 0..3 {
                grad[i][a] += 0.5 * (r[i][a] - t[j][a]) / d / n;
            }
        }
    };
    for (i, &(j, d2)) in m.forward.iter().enumerate() {
        push(i, j, d2, nr);
    }
    for (j, &(i, d2)) in m.backward.iter().enumerate() {
        push(i, j, d2, nt);
    }
    Ok(LossValue {
        value,
        grad_pred: grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(points: &[Point3]) -> PointCloud {
        PointCloud::new(points.to_vec()).unwrap()
    }

    #[test]
    fn chamfer_hand_values() {
        let a = cloud(&[[0.0; 3]]);
        let b = cloud(&[[0.5, 0.0, 0.0]]);
        assert_eq!(chamfer_l2(&a, &b).unwrap().value, 0.5);
        assert_eq!(chamfer_l1(&a, &b).unwrap().value, 0.5);
        assert_eq!(chamfer_l2(&a, &a).unwrap().value, 0.0);
        assert_eq!(chamfer_l1(&b, &b).unwrap().value, 0.0);
        assert!(chamfer_l2(&PointCloud::empty(), &a).is_err());
        assert!(chamfer_l1(&a, &PointCloud::empty()).is_err());
    }

    #[test]
    fn chamfer_unit_offset() {
        let origin = cloud(&[[0.0; 3]]);
        let ex = PointCloud::from_unbounded(vec![[1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(chamfer_l2(&origin, &ex).unwrap().value, 2.0);
        assert_eq!(chamfer_l1(&origin, &ex).unwrap().value, 1.0);
    }

    #[test]
    fn chamfer_gradients_by_hand() {
        // r = 0, t = 0.5 e_x: both directions pull r towards t.
        let a = cloud(&[[0.0; 3]]);
        let b = cloud(&[[0.5, 0.0, 0.0]]);
        assert_eq!(
            chamfer_l2(&a, &b).unwrap().grad_pred,
            vec![[-2.0, 0.0, 0.0]]
        );
        assert_eq!(
            chamfer_l1(&a, &b).unwrap().grad_pred,
            vec![[-1.0, 0.0, 0.0]]
        );
        assert_eq!(chamfer_l1(&a, &a).unwrap().grad_pred, vec![[0.0; 3]]);
    }

    #[test]
    fn gridding_loss_identity_and_single_vertex() {
        let gt = cloud(&[[0.1, 0.2, -0.3], [0.5, -0.5, 0.25]]);
        let same = gridding_loss(&gt, &gt, 8).unwrap();
        assert_eq!(same.value, 0.0);
        assert!(same.grad_pred.iter().all(|g| *g == [0.0; 3]));

        // A point exactly on a vertex grids to a single 1 at that vertex.
        let a = cloud(&[[0.25, 0.25, 0.25]]);
        let b = cloud(&[[0.5, 0.5, 0.5]]);
        let l = gridding_loss(&a, &b, 8).unwrap();
        assert_eq!(l.value, 2.0 / 512.0);

        // One extra point on a fresh vertex: grids differ at that vertex by 1.
        let c = cloud(&[[0.25, 0.25, 0.25], [0.5, 0.5, 0.5]]);
        assert_eq!(gridding_loss(&c, &a, 8).unwrap().value, 1.0 / 512.0);

        assert!(gridding_loss(&PointCloud::empty(), &gt, 8).is_err());
        assert!(gridding_loss(&gt, &gt, 6).is_ok());
        assert!(gridding_loss(&gt, &gt, 5).is_err());
    }
}
