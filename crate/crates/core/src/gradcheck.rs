//! Central finite-difference verification of every analytic gradient.
//!
//! Fixtures are drawn in double precision and nudged away from the
//! measure-zero kinks of the bilinear sampler (integer sample coordinates),
//! so the finite differences see a locally smooth function.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::Result;
use crate::geometry::{warp_image, warp_image_backward, WarpDirection};
use crate::losses::{self, LossWeights};
use crate::model::{
    backward, init_parameters, student_forward_cached, teacher_forward_cached, ArchConfig, NetworkKind,
    NetworkParameters, OutputGrad, TaskLabel, TeacherOutput,
};
use crate::plane::{DisparityMap, OcclusionMask, Plane, SemanticMap};
use crate::ssim::{ssim_map, ssim_map_backward, SsimConstants};

pub const LOSS_TOLERANCE: f64 = 1e-4;
pub const NETWORK_TOLERANCE: f64 = 1e-3;
const STEP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub fixtures: usize,
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Relative error of one coordinate, floored by 1% of the gradient's
/// largest entry so near-zero coordinates are judged against the overall
/// gradient scale.
pub fn relative_error(analytic: f64, numeric: f64, scale: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-2 * scale).max(1e-300);
    (analytic - numeric).abs() / denom
}

/// Compares `analytic` against central differences of `f` around `x`,
/// probing the given coordinates.
pub fn compare(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], analytic: &[f64], coords: &[usize]) -> f64 {
    let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for &i in coords {
        let orig = probe[i];
        probe[i] = orig + STEP;
        let fp = f(&probe);
        probe[i] = orig - STEP;
        let fm = f(&probe);
        probe[i] = orig;
        let numeric = (fp - fm) / (2.0 * STEP);
        worst = worst.max(relative_error(analytic[i], numeric, scale));
    }
    worst
}

fn all(n: usize) -> Vec<usize> {
    (0..n).collect()
}

fn image(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Plane<f64> {
    Plane::from_fn(c, h, w, |_, _, _| rng.random_range(0.05..0.95))
}

/// Disparity whose sample coordinates stay at least 0.1 px from integers.
fn disparity(rng: &mut ChaCha8Rng, h: usize, w: usize, dir: WarpDirection) -> DisparityMap<f64> {
    let sign = if dir == WarpDirection::LeftFromRight { -1.0 } else { 1.0 };
    DisparityMap::from_fn(h, w, |_, x| loop {
        let d: f64 = rng.random_range(0.02..0.25);
        let xs = x as f64 + sign * d * w as f64;
        let frac = xs - xs.floor();
        if (0.1..0.9).contains(&frac) && !(-0.1..=0.1).contains(&xs) && (xs - (w - 1) as f64).abs() > 0.1 {
            break d;
        }
    })
}

fn semantic(rng: &mut ChaCha8Rng, h: usize, w: usize, k: usize) -> SemanticMap {
    // Blocky labels so both boundary and interior pixels occur.
    let split_x = rng.random_range(1..w);
    let split_y = rng.random_range(1..h);
    let a = rng.random_range(0..k) as u8;
    let b = rng.random_range(0..k) as u8;
    let labels = (0..h * w)
        .map(|i| if i % w < split_x || i / w < split_y { a } else { b })
        .collect();
    SemanticMap::new(h, w, k, labels).expect("labels below class count")
}

fn mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> OcclusionMask {
    OcclusionMask::from_fn(h, w, |_, _| rng.random_bool(0.7))
}

fn with_plane(template: &Plane<f64>, data: &[f64]) -> Plane<f64> {
    Plane::new(template.channels(), template.height(), template.width(), data.to_vec()).expect("same shape")
}

fn with_disp(template: &Plane<f64>, data: &[f64]) -> DisparityMap<f64> {
    DisparityMap::new(with_plane(template, data)).expect("finite")
}

/// A loss with several differentiable inputs: evaluates the scalar from the
/// given inputs and returns analytic gradients for all of them.
struct LossCase {
    name: &'static str,
    build: Box<dyn Fn(&mut ChaCha8Rng) -> Fixture>,
}

type ScalarFn = Box<dyn Fn(&[Plane<f64>]) -> f64>;

struct Fixture {
    inputs: Vec<Plane<f64>>,
    value: ScalarFn,
    grads: Vec<Plane<f64>>,
}

fn run_case(case: &LossCase, fixtures: usize, seed: u64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut coordinates = 0;
    for _ in 0..fixtures {
        let fx = (case.build)(&mut rng);
        for (k, g) in fx.grads.iter().enumerate() {
            let base = fx.inputs.clone();
            let template = base[k].clone();
            let mut f = |x: &[f64]| {
                let mut inputs = base.clone();
                inputs[k] = with_plane(&template, x);
                (fx.value)(&inputs)
            };
            let n = template.data().len();
            worst = worst.max(compare(&mut f, template.data(), g.data(), &all(n)));
            coordinates += n;
        }
    }
    CheckReport {
        name: String::from(case.name),
        fixtures,
        coordinates,
        max_rel_error: worst,
        tolerance: LOSS_TOLERANCE,
    }
}

const H: usize = 5;
const W: usize = 8;

fn cases() -> Vec<LossCase> {
    let w = LossWeights::default();
    let d_max = 0.3;
    vec![
        LossCase {
            name: "warp_image",
            build: Box::new(|rng| {
                let src = image(rng, 3, H, W);
                let d = disparity(rng, H, W, WarpDirection::LeftFromRight);
                let proj = image(rng, 3, H, W);
                let p2 = proj.clone();
                let g = warp_image_backward(&src, &d, WarpDirection::LeftFromRight, &proj).unwrap();
                Fixture {
                    inputs: vec![src, d.into_plane()],
                    value: Box::new(move |x| {
                        let out = warp_image(&x[0], &with_disp(&x[1], x[1].data()), WarpDirection::LeftFromRight);
                        dot(out.unwrap().data(), p2.data())
                    }),
                    grads: vec![g.source, g.disparity],
                }
            }),
        },
        LossCase {
            name: "ssim",
            build: Box::new(|rng| {
                let (a, b) = (image(rng, 3, H, W), image(rng, 3, H, W));
                let proj = image(rng, 1, H, W);
                let k = SsimConstants::default();
                let (ga, gb) = ssim_map_backward(&a, &b, k, &proj).unwrap();
                Fixture {
                    inputs: vec![a, b],
                    value: Box::new(move |x| dot(ssim_map(&x[0], &x[1], k).unwrap().data(), proj.data())),
                    grads: vec![ga, gb],
                }
            }),
        },
        LossCase {
            name: "loss_reconstruction",
            build: Box::new(move |rng| {
                let (a, b) = (image(rng, 3, H, W), image(rng, 3, H, W));
                let (_, ga, gb) = losses::loss_reconstruction_grad(&a, &b, w.theta).unwrap();
                Fixture {
                    inputs: vec![a, b],
                    value: Box::new(move |x| losses::loss_reconstruction(&x[0], &x[1], w.theta).unwrap()),
                    grads: vec![ga, gb],
                }
            }),
        },
        LossCase {
            name: "loss_lr",
            build: Box::new(|rng| {
                let a = disparity(rng, H, W, WarpDirection::LeftFromRight);
                let b = disparity(rng, H, W, WarpDirection::LeftFromRight);
                let (_, ga, gb) = losses::loss_lr_grad(&a, &b).unwrap();
                Fixture {
                    inputs: vec![a.into_plane(), b.into_plane()],
                    value: Box::new(|x| {
                        losses::loss_lr(&with_disp(&x[0], x[0].data()), &with_disp(&x[1], x[1].data())).unwrap()
                    }),
                    grads: vec![ga, gb],
                }
            }),
        },
        LossCase {
            name: "loss_smooth",
            build: Box::new(|rng| {
                let d = disparity(rng, H, W, WarpDirection::LeftFromRight);
                let guide = image(rng, 3, H, W);
                let (_, gd, gg) = losses::loss_smooth_grad(&d, &guide).unwrap();
                Fixture {
                    inputs: vec![d.into_plane(), guide],
                    value: Box::new(|x| losses::loss_smooth(&with_disp(&x[0], x[0].data()), &x[1]).unwrap()),
                    grads: vec![gd, gg],
                }
            }),
        },
        LossCase {
            name: "loss_semantic",
            build: Box::new(move |rng| {
                let d = disparity(rng, H, W, WarpDirection::LeftFromRight);
                let s = semantic(rng, H, W, 4);
                let (_, gd) = losses::loss_semantic_grad(&d, &s, w.kappa).unwrap();
                Fixture {
                    inputs: vec![d.into_plane()],
                    value: Box::new(move |x| {
                        losses::loss_semantic(&with_disp(&x[0], x[0].data()), &s, w.kappa).unwrap()
                    }),
                    grads: vec![gd],
                }
            }),
        },
        LossCase {
            name: "loss_seg",
            build: Box::new(|rng| {
                let logits = Plane::from_fn(4, H, W, |_, _, _| rng.random_range(-2.0..2.0));
                let s = semantic(rng, H, W, 4);
                let (_, g) = losses::loss_seg_grad(&logits, &s).unwrap();
                Fixture {
                    inputs: vec![logits],
                    value: Box::new(move |x| losses::loss_seg(&x[0], &s).unwrap()),
                    grads: vec![g],
                }
            }),
        },
        LossCase {
            name: "loss_binocular",
            build: Box::new(move |rng| {
                let d_l = disparity(rng, H, W, WarpDirection::LeftFromRight);
                let d_r = disparity(rng, H, W, WarpDirection::RightFromLeft);
                let (i_l, i_r) = (image(rng, 3, H, W), image(rng, 3, H, W));
                let (_, g) = losses::loss_binocular_grad(&d_l, &d_r, &i_l, &i_r, &w).unwrap();
                Fixture {
                    inputs: vec![d_l.into_plane(), d_r.into_plane(), i_l, i_r],
                    value: Box::new(move |x| {
                        let (a, b) = (with_disp(&x[0], x[0].data()), with_disp(&x[1], x[1].data()));
                        losses::loss_binocular(&a, &b, &x[2], &x[3], &w).unwrap().total
                    }),
                    grads: vec![g.d_left, g.d_right, g.i_left, g.i_right],
                }
            }),
        },
        LossCase {
            name: "loss_teacher",
            build: Box::new(move |rng| {
                let d_l = disparity(rng, H, W, WarpDirection::LeftFromRight);
                let d_r = disparity(rng, H, W, WarpDirection::RightFromLeft);
                let (i_l, i_r) = (image(rng, 3, H, W), image(rng, 3, H, W));
                let s = semantic(rng, H, W, 3);
                let (_, g) = losses::loss_teacher_grad(&d_l, &d_r, &i_l, &i_r, &s, &w).unwrap();
                Fixture {
                    inputs: vec![d_l.into_plane(), d_r.into_plane(), i_l, i_r],
                    value: Box::new(move |x| {
                        let (a, b) = (with_disp(&x[0], x[0].data()), with_disp(&x[1], x[1].data()));
                        losses::loss_teacher(&a, &b, &x[2], &x[3], &s, &w).unwrap().total
                    }),
                    grads: vec![g.d_left, g.d_right, g.i_left, g.i_right],
                }
            }),
        },
        LossCase {
            name: "loss_distill",
            build: Box::new(move |rng| {
                let a = disparity(rng, H, W, WarpDirection::LeftFromRight);
                let b = disparity(rng, H, W, WarpDirection::LeftFromRight);
                let (_, ga, gb) = losses::loss_distill_grad(&a, &b, w.theta, d_max).unwrap();
                Fixture {
                    inputs: vec![a.into_plane(), b.into_plane()],
                    value: Box::new(move |x| {
                        let (a, b) = (with_disp(&x[0], x[0].data()), with_disp(&x[1], x[1].data()));
                        losses::loss_distill(&a, &b, w.theta, d_max).unwrap()
                    }),
                    grads: vec![ga, gb],
                }
            }),
        },
        LossCase {
            name: "loss_unmo",
            build: Box::new(move |rng| {
                let d = disparity(rng, H, W, WarpDirection::LeftFromRight);
                let (i_s, i_o) = (image(rng, 3, H, W), image(rng, 3, H, W));
                let m = mask(rng, H, W);
                let (_, g) = losses::loss_unmo_grad(&d, &i_s, &i_o, &m, w.theta).unwrap();
                Fixture {
                    inputs: vec![d.into_plane(), i_s, i_o],
                    value: Box::new(move |x| {
                        losses::loss_unmo(&with_disp(&x[0], x[0].data()), &x[1], &x[2], &m, w.theta)
                            .unwrap()
                            .value
                    }),
                    grads: vec![g.d_s, g.i_s, g.i_other],
                }
            }),
        },
        LossCase {
            name: "loss_student",
            build: Box::new(move |rng| {
                let d_s = disparity(rng, H, W, WarpDirection::LeftFromRight);
                let d_t = disparity(rng, H, W, WarpDirection::LeftFromRight);
                let (i_s, i_o) = (image(rng, 3, H, W), image(rng, 3, H, W));
                let m = mask(rng, H, W);
                let s = semantic(rng, H, W, 3);
                let (_, g) = losses::loss_student_grad(&d_s, &d_t, &i_s, &i_o, &m, &s, &w, d_max).unwrap();
                Fixture {
                    inputs: vec![d_s.into_plane(), d_t.into_plane(), i_s, i_o],
                    value: Box::new(move |x| {
                        let (a, b) = (with_disp(&x[0], x[0].data()), with_disp(&x[1], x[1].data()));
                        losses::loss_student(&a, &b, &x[2], &x[3], &m, &s, &w, d_max)
                            .unwrap()
                            .total
                    }),
                    grads: vec![g.d_s, g.d_t, g.i_s, g.i_other],
                }
            }),
        },
        LossCase {
            name: "loss_monocular_photometric",
            build: Box::new(move |rng| {
                let d = disparity(rng, H, W, WarpDirection::LeftFromRight);
                let (i_s, i_o) = (image(rng, 3, H, W), image(rng, 3, H, W));
                let (_, g) = losses::loss_monocular_photometric_grad(&d, &i_s, &i_o, &w).unwrap();
                let (i_s2, i_o2) = (i_s.clone(), i_o.clone());
                Fixture {
                    inputs: vec![d.into_plane()],
                    value: Box::new(move |x| {
                        let d = with_disp(&x[0], x[0].data());
                        losses::loss_monocular_photometric_grad(&d, &i_s2, &i_o2, &w)
                            .unwrap()
                            .0
                            .total
                    }),
                    grads: vec![g],
                }
            }),
        },
    ]
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Finite-difference checks of every loss (and the warp and SSIM operators
/// they are built from) on `fixtures` random fixtures each.
pub fn check_losses(fixtures: usize, seed: u64) -> Vec<CheckReport> {
    cases()
        .iter()
        .enumerate()
        .map(|(i, c)| run_case(c, fixtures, seed.wrapping_add(1000 * i as u64)))
        .collect()
}

/// Which network output a check projects onto.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NetworkProbe {
    TeacherDepth,
    TeacherSegmentation,
    Student,
}

impl NetworkProbe {
    pub fn name(self) -> &'static str {
        match self {
            NetworkProbe::TeacherDepth => "teacher_forward(depth)",
            NetworkProbe::TeacherSegmentation => "teacher_forward(segmentation)",
            NetworkProbe::Student => "student_forward",
        }
    }
}

/// Tiny architecture and input size used for end-to-end checks.
pub fn tiny_arch() -> ArchConfig {
    ArchConfig {
        widths: [4, 6, 8],
        classes: 3,
        cost_shifts: 3,
        ..ArchConfig::default()
    }
}

/// `<R, output>` for a fixed random projection `R`, with its parameter gradient.
fn network_objective(
    probe: NetworkProbe,
    params: &NetworkParameters<f64>,
    i_l: &Plane<f64>,
    i_r: &Plane<f64>,
    proj: &[Plane<f64>],
    want_grad: bool,
) -> Result<(f64, Option<NetworkParameters<f64>>)> {
    let (value, grad) = match probe {
        NetworkProbe::TeacherDepth => {
            let (out, cache) = teacher_forward_cached(params, i_l, i_r, TaskLabel::Depth)?;
            let TeacherOutput::Depth { left, right } = out else {
                unreachable!()
            };
            let v = dot(left.data(), proj[0].data()) + dot(right.data(), proj[1].data());
            let g = want_grad
                .then(|| {
                    backward(
                        params,
                        &cache,
                        OutputGrad::Depth {
                            left: &proj[0],
                            right: &proj[1],
                        },
                    )
                })
                .transpose()?;
            (v, g)
        }
        NetworkProbe::TeacherSegmentation => {
            let (out, cache) = teacher_forward_cached(params, i_l, i_r, TaskLabel::Segmentation)?;
            let TeacherOutput::Segmentation(logits) = out else {
                unreachable!()
            };
            let v = dot(logits.data(), proj[2].data());
            let g = want_grad
                .then(|| backward(params, &cache, OutputGrad::Segmentation(&proj[2])))
                .transpose()?;
            (v, g)
        }
        NetworkProbe::Student => {
            let (d, cache) = student_forward_cached(params, i_l)?;
            let v = dot(d.data(), proj[0].data());
            let g = want_grad
                .then(|| backward(params, &cache, OutputGrad::Student(&proj[0])))
                .transpose()?;
            (v, g)
        }
    };
    Ok((value, grad))
}

/// Parameter-gradient check of one network on `fixtures` random
/// inputs/initializations, probing `per_tensor` coordinates of every tensor.
pub fn check_network(
    probe: NetworkProbe,
    height: usize,
    width: usize,
    fixtures: usize,
    per_tensor: usize,
    seed: u64,
) -> Result<CheckReport> {
    let arch = tiny_arch();
    let kind = if probe == NetworkProbe::Student {
        NetworkKind::Student
    } else {
        NetworkKind::Teacher
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut coordinates = 0;
    for fixture in 0..fixtures {
        let params = init_parameters::<f64>(seed.wrapping_add(fixture as u64), kind, &arch)?;
        let i_l = image(&mut rng, 3, height, width);
        let i_r = image(&mut rng, 3, height, width);
        let proj = vec![
            Plane::from_fn(1, height, width, |_, _, _| rng.random_range(-1.0..1.0)),
            Plane::from_fn(1, height, width, |_, _, _| rng.random_range(-1.0..1.0)),
            Plane::from_fn(arch.classes, height, width, |_, _, _| rng.random_range(-1.0..1.0)),
        ];
        let (_, grads) = network_objective(probe, &params, &i_l, &i_r, &proj, true)?;
        let grads = grads.expect("gradient requested");
        for t in 0..params.tensors().len() {
            let n = params.tensors()[t].data.len();
            let coords: Vec<usize> = (0..per_tensor.min(n)).map(|_| rng.random_range(0..n)).collect();
            let mut f = |x: &[f64]| {
                let mut p = params.clone();
                p.tensors_mut()[t].data.copy_from_slice(x);
                network_objective(probe, &p, &i_l, &i_r, &proj, false)
                    .expect("forward")
                    .0
            };
            let analytic = &grads.tensors()[t].data;
            worst = worst.max(compare(&mut f, &params.tensors()[t].data, analytic, &coords));
            coordinates += coords.len();
        }
    }
    Ok(CheckReport {
        name: format!("{} {}x{}", probe.name(), height, width),
        fixtures,
        coordinates,
        max_rel_error: worst,
        tolerance: NETWORK_TOLERANCE,
    })
}

/// The complete suite: all losses plus the three network forwards.
pub fn check_all(fixtures: usize, seed: u64) -> Result<Vec<CheckReport>> {
    let mut reports = check_losses(fixtures, seed);
    for probe in [
        NetworkProbe::TeacherDepth,
        NetworkProbe::TeacherSegmentation,
        NetworkProbe::Student,
    ] {
        reports.push(check_network(probe, 16, 32, fixtures, 6, seed)?);
    }
    Ok(reports)
}
