//! Reference checks of the geometry and metric code against independent
//! scalar implementations on random and synthetic fixtures.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::Result;
use crate::geometry::{occlusion_mask, warp_disparity, warp_image, WarpDirection, OCCLUSION_THRESHOLD};
use crate::metrics::{evaluate, DepthCap};
use crate::plane::{DisparityMap, OcclusionMask, Plane};
use crate::synth::{generate_sample, SceneConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct GeometryReport {
    /// Zero-disparity warps that differed from the source in any bit.
    pub identity_failures: usize,
    pub identity_fixtures: usize,
    /// Largest per-sample mean absolute error of the ground-truth
    /// reconstruction on un-occluded pixels, over both directions.
    pub round_trip_error: f64,
    pub round_trip_samples: usize,
    /// Map pairs whose occlusion mask differed from the per-pixel check.
    pub mask_failures: usize,
    pub mask_pairs: usize,
}

fn random_image(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Plane<f64> {
    Plane::from_fn(c, h, w, |_, _, _| rng.random::<f64>())
}

/// Piecewise-constant left disparities with a noisy, partly agreeing right map.
fn random_pair(rng: &mut ChaCha8Rng, h: usize, w: usize) -> (DisparityMap<f64>, DisparityMap<f64>) {
    let cut = rng.random_range(1..w);
    let (a, b) = (rng.random_range(0.0..0.2), rng.random_range(0.0..0.2));
    let left = DisparityMap::from_fn(h, w, |_, x| if x < cut { a } else { b });
    let right = DisparityMap::from_fn(h, w, |_, x| {
        let base = if x < cut { a } else { b };
        base + rng.random_range(-0.02..0.02)
    });
    (left, right)
}

/// Linear sample of row `y` at `x - d * w`, clamped to the border.
fn reference_sample(src: &DisparityMap<f64>, y: usize, x: usize, d: f64) -> f64 {
    let w = src.as_plane().width();
    let xs = x as f64 - d * w as f64;
    if xs <= 0.0 {
        return src.at(y, 0);
    }
    if xs >= (w - 1) as f64 {
        return src.at(y, w - 1);
    }
    let x0 = xs.floor();
    let i = x0 as usize;
    let s0 = src.at(y, i);
    let s1 = src.at(y, (i + 1).min(w - 1));
    s0 + (xs - x0) * (s1 - s0)
}

pub fn check_geometry(fixtures: usize, samples: usize, pairs: usize, seed: u64) -> Result<GeometryReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut identity_failures = 0;
    for _ in 0..fixtures {
        let (h, w) = (rng.random_range(1..12), rng.random_range(2..24));
        let img = random_image(&mut rng, 3, h, w);
        let zero = DisparityMap::filled(h, w, 0.0);
        for dir in [WarpDirection::LeftFromRight, WarpDirection::RightFromLeft] {
            let out = warp_image(&img, &zero, dir)?;
            let same = out
                .data()
                .iter()
                .zip(img.data())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            identity_failures += usize::from(!same);
        }
    }

    let scene = SceneConfig {
        seed,
        ..SceneConfig::default()
    };
    let mut round_trip_error = 0.0f64;
    for i in 0..samples {
        let s = generate_sample(&scene, i as u64)?;
        let views = [
            (
                &s.left,
                &s.right,
                &s.disparity_left,
                &s.occlusion_left,
                WarpDirection::LeftFromRight,
            ),
            (
                &s.right,
                &s.left,
                &s.disparity_right,
                &s.occlusion_right,
                WarpDirection::RightFromLeft,
            ),
        ];
        for (target, source, d, visible, dir) in views {
            let rec = warp_image(source, d, dir)?;
            let (c, h, w) = target.shape();
            let (mut err, mut n) = (0.0f64, 0usize);
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        if visible.is_set(y, x) {
                            err += (rec.get(ch, y, x) as f64 - target.get(ch, y, x) as f64).abs();
                            n += 1;
                        }
                    }
                }
            }
            round_trip_error = round_trip_error.max(err / n.max(1) as f64);
        }
    }

    let mut mask_failures = 0;
    for _ in 0..pairs {
        let (h, w) = (rng.random_range(1..10), rng.random_range(2..32));
        let (d_l, d_r) = random_pair(&mut rng, h, w);
        let tilde = warp_disparity(&d_r, &d_l, WarpDirection::LeftFromRight)?;
        let mask = occlusion_mask(&d_l, &tilde, OCCLUSION_THRESHOLD)?;
        let reference = OcclusionMask::from_fn(h, w, |y, x| {
            let t = reference_sample(&d_r, y, x, d_l.at(y, x));
            (d_l.at(y, x) - t).abs() <= OCCLUSION_THRESHOLD
        });
        mask_failures += usize::from(mask != reference);
    }

    Ok(GeometryReport {
        identity_failures,
        identity_fixtures: fixtures * 2,
        round_trip_error,
        round_trip_samples: samples,
        mask_failures,
        mask_pairs: pairs,
    })
}

/// Straight transcription of the metric definitions over the kept pixels.
pub fn reference_metrics(pred: &[f64], gt: &[f64], valid: &[u8], cap: DepthCap) -> [f64; 7] {
    let kept: Vec<(f64, f64)> = pred
        .iter()
        .zip(gt)
        .zip(valid)
        .filter(|(_, &v)| v == 1)
        .map(|((&p, &g), _)| {
            (
                p.max(cap.min_depth).min(cap.max_depth),
                g.max(cap.min_depth).min(cap.max_depth),
            )
        })
        .collect();
    let n = kept.len() as f64;
    let mean = |f: &dyn Fn(f64, f64) -> f64| kept.iter().map(|&(p, g)| f(p, g)).sum::<f64>() / n;
    let within = |t: f64| mean(&|p, g| if (p / g).max(g / p) < t { 1.0 } else { 0.0 });
    [
        mean(&|p, g| (p - g).abs() / g),
        mean(&|p, g| (p - g).powi(2) / g),
        mean(&|p, g| (p - g).powi(2)).sqrt(),
        mean(&|p, g| (p.ln() - g.ln()).powi(2)).sqrt(),
        within(1.25),
        within(1.25 * 1.25),
        within(1.25 * 1.25 * 1.25),
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    /// Largest absolute difference from the reference over all fixtures and metrics.
    pub max_error: f64,
    pub fixtures: usize,
    /// `pred = gt` gives exactly zero errors and unit accuracies.
    pub identity_exact: bool,
    /// `pred = 1.25 gt` gives Abs Rel exactly 0.25, `a1 = 0`, `a2 = a3 = 1`
    /// and RMSE log `ln 1.25`.
    pub scaled_exact: bool,
}

pub fn check_metrics(fixtures: usize, seed: u64) -> Result<MetricReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cap = DepthCap::default();
    let mut max_error = 0.0f64;
    for _ in 0..fixtures {
        let (h, w) = (rng.random_range(1..16), rng.random_range(1..32));
        let n = h * w;
        let gt: Vec<f64> = (0..n).map(|_| rng.random_range(1e-4..120.0)).collect();
        let pred: Vec<f64> = gt.iter().map(|g| g * rng.random_range(0.3..2.5)).collect();
        let mut valid: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.8))).collect();
        valid[rng.random_range(0..n)] = 1;
        let got = evaluate(
            &Plane::new(1, h, w, pred.clone())?,
            &Plane::new(1, h, w, gt.clone())?,
            &OcclusionMask::new(h, w, valid.clone())?,
            cap,
        )?;
        let want = reference_metrics(&pred, &gt, &valid, cap);
        for (a, b) in got.values().iter().zip(want) {
            max_error = max_error.max((a - b).abs());
        }
    }

    let (h, w) = (8, 16);
    let gt = Plane::from_fn(1, h, w, |_, y, x| (4 + y * w + x) as f64 / 4.0);
    let all = OcclusionMask::ones(h, w);
    let same = evaluate(&gt, &gt, &all, cap)?;
    let identity_exact = same.values() == [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
    let scaled = evaluate(&gt.map(|g| 1.25 * g), &gt, &all, cap)?;
    let scaled_exact = scaled.abs_rel == 0.25
        && scaled.acc_1 == 0.0
        && scaled.acc_2 == 1.0
        && scaled.acc_3 == 1.0
        && (scaled.rmse_log - 1.25f64.ln()).abs() < 1e-12;

    Ok(MetricReport {
        max_error,
        fixtures,
        identity_exact,
        scaled_exact,
    })
}

impl MetricReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_error < tolerance && self.identity_exact && self.scaled_exact
    }
}

impl GeometryReport {
    pub fn passed(&self, round_trip_tolerance: f64) -> bool {
        self.identity_failures == 0 && self.round_trip_error < round_trip_tolerance && self.mask_failures == 0
    }
}
