//! Depth evaluation metrics with depth capping and validity masking.

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::plane::{OcclusionMask, Plane};

/// Clamp range applied to both prediction and ground truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthCap {
    pub min_depth: f64,
    pub max_depth: f64,
}

impl Default for DepthCap {
    fn default() -> Self {
        Self {
            min_depth: 1e-3,
            max_depth: 80.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub acc_1: f64,
    pub acc_2: f64,
    pub acc_3: f64,
    pub valid_pixel_count: usize,
    pub cap: f64,
}

impl EvalReport {
    /// Column names in report order.
    pub const COLUMNS: [&'static str; 9] = [
        "abs_rel",
        "sq_rel",
        "rmse",
        "rmse_log",
        "a1",
        "a2",
        "a3",
        "valid_pixels",
        "cap",
    ];

    pub fn values(&self) -> [f64; 7] {
        [
            self.abs_rel,
            self.sq_rel,
            self.rmse,
            self.rmse_log,
            self.acc_1,
            self.acc_2,
            self.acc_3,
        ]
    }

    /// Per-image reports averaged with equal weight per image.
    pub fn mean_of(reports: &[EvalReport]) -> Result<EvalReport> {
        if reports.is_empty() {
            return Err(Error::NoValidPixels);
        }
        let n = reports.len() as f64;
        let mut acc = [0.0; 7];
        let mut count = 0;
        for r in reports {
            for (a, v) in acc.iter_mut().zip(r.values()) {
                *a += v / n;
            }
            count += r.valid_pixel_count;
        }
        Ok(EvalReport {
            abs_rel: acc[0],
            sq_rel: acc[1],
            rmse: acc[2],
            rmse_log: acc[3],
            acc_1: acc[4],
            acc_2: acc[5],
            acc_3: acc[6],
            valid_pixel_count: count,
            cap: reports[0].cap,
        })
    }
}

/// Evaluates a predicted depth map (meters) against ground truth on pixels
/// where `valid` is set.
pub fn evaluate(pred: &Plane<f64>, gt: &Plane<f64>, valid: &OcclusionMask, cap: DepthCap) -> Result<EvalReport> {
    pred.ensure_same_shape(gt, "depth maps")?;
    if pred.channels() != 1 || valid.height() != gt.height() || valid.width() != gt.width() {
        return Err(Error::ShapeMismatch {
            what: "evaluation mask",
            expected: (1, gt.height(), gt.width()),
            found: (pred.channels(), valid.height(), valid.width()),
        });
    }
    if !(cap.min_depth > 0.0 && cap.max_depth > cap.min_depth) {
        return Err(Error::OutOfRange {
            name: "depth cap",
            value: cap.max_depth,
        });
    }
    let mut n = 0usize;
    let (mut abs_rel, mut sq_rel, mut sq, mut sq_log) = (0.0, 0.0, 0.0, 0.0);
    let mut within = [0usize; 3];
    let thresholds = [1.25, 1.25f64.powi(2), 1.25f64.powi(3)];
    for (i, (&p, &g)) in pred.data().iter().zip(gt.data()).enumerate() {
        if valid.data()[i] == 0 {
            continue;
        }
        if !(g > 0.0) || !p.is_finite() {
            return Err(Error::OutOfRange {
                name: if p.is_finite() {
                    "ground-truth depth"
                } else {
                    "predicted depth"
                },
                value: if p.is_finite() { g } else { p },
            });
        }
        let p = p.clamp(cap.min_depth, cap.max_depth);
        let g = g.clamp(cap.min_depth, cap.max_depth);
        let diff = p - g;
        abs_rel += diff.abs() / g;
        sq_rel += diff * diff / g;
        sq += diff * diff;
        let dl = p.ln() - g.ln();
        sq_log += dl * dl;
        let ratio = (g / p).max(p / g);
        for (k, t) in thresholds.iter().enumerate() {
            if ratio < *t {
                within[k] += 1;
            }
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::NoValidPixels);
    }
    let nf = n as f64;
    Ok(EvalReport {
        abs_rel: abs_rel / nf,
        sq_rel: sq_rel / nf,
        rmse: (sq / nf).sqrt(),
        rmse_log: (sq_log / nf).sqrt(),
        acc_1: within[0] as f64 / nf,
        acc_2: within[1] as f64 / nf,
        acc_3: within[2] as f64 / nf,
        valid_pixel_count: n,
        cap: cap.max_depth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn perfect_prediction() {
        let gt = Plane::from_fn(1, 3, 4, |_, y, x| 1.0 + (y * 4 + x) as f64);
        let r = evaluate(&gt, &gt, &OcclusionMask::ones(3, 4), DepthCap::default()).unwrap();
        assert_eq!(r.values(), [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(r.valid_pixel_count, 12);
    }

    #[test]
    fn ratio_of_exactly_one_point_two_five() {
        let gt = Plane::from_fn(1, 2, 2, |_, y, x| 2.0 + (y * 2 + x) as f64 * 4.0);
        let pred = gt.map(|v| 1.25 * v);
        let r = evaluate(&pred, &gt, &OcclusionMask::ones(2, 2), DepthCap::default()).unwrap();
        assert_eq!(r.acc_1, 0.0);
        assert_eq!((r.acc_2, r.acc_3), (1.0, 1.0));
        assert!((r.abs_rel - 0.25).abs() < 1e-15);
    }

    #[test]
    fn masking_and_errors() {
        let gt = Plane::new(1, 1, 2, vec![2.0, 0.0]).unwrap();
        let mask = OcclusionMask::new(1, 2, vec![1, 0]).unwrap();
        let r = evaluate(&gt, &gt, &mask, DepthCap::default()).unwrap();
        assert_eq!(r.valid_pixel_count, 1);
        assert_eq!(
            evaluate(&gt, &gt, &OcclusionMask::zeros(1, 2), DepthCap::default()),
            Err(Error::NoValidPixels)
        );
        assert!(evaluate(&gt, &gt, &OcclusionMask::ones(1, 2), DepthCap::default()).is_err());
    }

    #[test]
    fn cap_clamps_far_predictions() {
        let gt = Plane::new(1, 1, 1, vec![80.0]).unwrap();
        let pred = Plane::new(1, 1, 1, vec![500.0]).unwrap();
        let r = evaluate(&pred, &gt, &OcclusionMask::ones(1, 1), DepthCap::default()).unwrap();
        assert_eq!(r.abs_rel, 0.0);
    }
}
