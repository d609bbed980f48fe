//! Teacher and student objectives with analytic gradients.
//!
//! Every `*_grad` function returns the loss value together with the
//! gradient of that value with respect to each differentiable input. The
//! plain variants only evaluate the loss.

use alloc::vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::geometry::{warp_image, warp_image_backward, WarpDirection};
use crate::plane::{ClassLogits, DisparityMap, ImagePlane, OcclusionMask, Plane, SemanticMap};
use crate::real::Real;
use crate::ssim::{ssim_map, ssim_map_backward, SsimConstants};

/// Loss weighting constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// SSIM vs L1 balance inside the reconstruction loss.
    pub theta: f64,
    /// Reconstruction weight in the binocular loss.
    pub alpha1: f64,
    /// Left-right consistency weight.
    pub alpha2: f64,
    /// Edge-aware smoothness weight.
    pub alpha3: f64,
    /// Binocular loss weight in the teacher objective.
    pub gamma1: f64,
    /// Semantic-guided smoothness weight in the teacher objective.
    pub gamma2: f64,
    /// Distillation weight in the student objective.
    pub gamma3: f64,
    /// Occlusion-masked reconstruction weight in the student objective.
    pub gamma4: f64,
    /// Semantic-guided smoothness weight in the student objective.
    pub gamma5: f64,
    /// Guide-gradient magnitude assigned to a class boundary.
    pub kappa: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            theta: 0.5,
            alpha1: 1.0,
            alpha2: 0.5,
            alpha3: 1.0,
            gamma1: 1.0,
            gamma2: 1.0,
            gamma3: 1.0,
            gamma4: 0.05,
            gamma5: 1.0,
            kappa: DEFAULT_KAPPA,
        }
    }
}

pub const DEFAULT_KAPPA: f64 = 10.0;

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("theta", self.theta),
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("alpha3", self.alpha3),
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("gamma3", self.gamma3),
            ("gamma4", self.gamma4),
            ("gamma5", self.gamma5),
            ("kappa", self.kappa),
        ];
        for (name, value) in named {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::OutOfRange { name, value });
            }
        }
        check_theta(self.theta)
    }

    /// Multiplies every gamma by `s`.
    pub fn scale_gammas(&self, s: f64) -> Self {
        Self {
            gamma1: self.gamma1 * s,
            gamma2: self.gamma2 * s,
            gamma3: self.gamma3 * s,
            gamma4: self.gamma4 * s,
            gamma5: self.gamma5 * s,
            ..*self
        }
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::OutOfRange {
            name: "theta",
            value: theta,
        });
    }
    Ok(())
}

#[inline]
fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

// ---------------------------------------------------------------------------
// Reconstruction (SSIM + L1)

/// Per-pixel `theta (1 - SSIM) / 2 + (1 - theta) |I - I~|` (L1 averaged over
/// channels).
pub fn reconstruction_map<T: Real>(
    image: &Plane<T>,
    reconstruction: &Plane<T>,
    theta: f64,
    k: SsimConstants,
) -> Result<Plane<T>> {
    check_theta(theta)?;
    let s = ssim_map(image, reconstruction, k)?;
    let (channels, h, w) = image.shape();
    let area = h * w;
    let th = T::lit(theta);
    let half = T::lit(0.5);
    let l1_scale = (T::one() - th) / T::lit(channels as f64);
    let mut out = Plane::zeros(1, h, w);
    let (a, b) = (image.data(), reconstruction.data());
    let dst = out.data_mut();
    for p in 0..area {
        let mut l1 = T::zero();
        for c in 0..channels {
            l1 += (a[c * area + p] - b[c * area + p]).abs();
        }
        dst[p] = th * (T::one() - s.data()[p]) * half + l1_scale * l1;
    }
    Ok(out)
}

/// Gradient of `sum_p upstream[p] * map[p]` for the map above.
pub fn reconstruction_map_backward<T: Real>(
    image: &Plane<T>,
    reconstruction: &Plane<T>,
    theta: f64,
    k: SsimConstants,
    upstream: &Plane<T>,
) -> Result<(Plane<T>, Plane<T>)> {
    check_theta(theta)?;
    let (channels, h, w) = image.shape();
    let area = h * w;
    let th = T::lit(theta);
    let ssim_up = upstream.map(|u| -u * th * T::lit(0.5));
    let (mut ga, mut gb) = ssim_map_backward(image, reconstruction, k, &ssim_up)?;
    let l1_scale = (T::one() - th) / T::lit(channels as f64);
    let (a, b, u) = (image.data(), reconstruction.data(), upstream.data());
    let (gad, gbd) = (ga.data_mut(), gb.data_mut());
    for c in 0..channels {
        for p in 0..area {
            let i = c * area + p;
            let g = u[p] * l1_scale * sign(a[i] - b[i]);
            gad[i] += g;
            gbd[i] -= g;
        }
    }
    Ok((ga, gb))
}

fn reconstruction_with<T: Real>(
    image: &Plane<T>,
    reconstruction: &Plane<T>,
    theta: f64,
    k: SsimConstants,
) -> Result<T> {
    Ok(reconstruction_map(image, reconstruction, theta, k)?.mean())
}

fn reconstruction_grad_with<T: Real>(
    image: &Plane<T>,
    reconstruction: &Plane<T>,
    theta: f64,
    k: SsimConstants,
) -> Result<(T, Plane<T>, Plane<T>)> {
    let map = reconstruction_map(image, reconstruction, theta, k)?;
    let value = map.mean();
    let up = Plane::filled(1, map.height(), map.width(), T::lit(1.0 / map.area() as f64));
    let (ga, gb) = reconstruction_map_backward(image, reconstruction, theta, k, &up)?;
    Ok((value, ga, gb))
}

/// Photometric reconstruction loss between an image and its reconstruction.
pub fn loss_reconstruction<T: Real>(image: &ImagePlane<T>, reconstruction: &ImagePlane<T>, theta: f64) -> Result<T> {
    reconstruction_with(image, reconstruction, theta, SsimConstants::default())
}

pub fn loss_reconstruction_grad<T: Real>(
    image: &ImagePlane<T>,
    reconstruction: &ImagePlane<T>,
    theta: f64,
) -> Result<(T, Plane<T>, Plane<T>)> {
    reconstruction_grad_with(image, reconstruction, theta, SsimConstants::default())
}

// ---------------------------------------------------------------------------
// Left-right consistency

/// Mean absolute difference between a disparity and its cross-warped version.
pub fn loss_lr<T: Real>(d: &DisparityMap<T>, d_tilde: &DisparityMap<T>) -> Result<T> {
    d.ensure_same_shape(d_tilde, "left-right consistency")?;
    let sum: T = d.data().iter().zip(d_tilde.data()).map(|(&a, &b)| (a - b).abs()).sum();
    Ok(sum / T::lit(d.area() as f64))
}

pub fn loss_lr_grad<T: Real>(d: &DisparityMap<T>, d_tilde: &DisparityMap<T>) -> Result<(T, Plane<T>, Plane<T>)> {
    let value = loss_lr(d, d_tilde)?;
    let inv = T::lit(1.0 / d.area() as f64);
    let gd = Plane::new(
        1,
        d.height(),
        d.width(),
        d.data()
            .iter()
            .zip(d_tilde.data())
            .map(|(&a, &b)| sign(a - b) * inv)
            .collect(),
    )?;
    let gt = gd.map(|v| -v);
    Ok((value, gd, gt))
}

// ---------------------------------------------------------------------------
// Edge-aware smoothness

/// Edge weights on forward differences: `wx` is `h x (w-1)`, `wy` is `(h-1) x w`.
struct EdgeWeights<T> {
    wx: alloc::vec::Vec<T>,
    wy: alloc::vec::Vec<T>,
}

fn check_smooth_size(h: usize, w: usize) -> Result<()> {
    if h < 2 || w < 2 {
        return Err(Error::InvalidDimensions {
            channels: 1,
            height: h,
            width: w,
            len: h * w,
        });
    }
    Ok(())
}

fn image_edge_weights<T: Real>(guide: &Plane<T>) -> EdgeWeights<T> {
    let (channels, h, w) = guide.shape();
    let inv_c = T::lit(1.0 / channels as f64);
    let mut wx = vec![T::zero(); h * (w - 1)];
    let mut wy = vec![T::zero(); (h - 1) * w];
    for c in 0..channels {
        let g = guide.channel(c);
        for y in 0..h {
            for x in 0..w - 1 {
                wx[y * (w - 1) + x] += (g[y * w + x + 1] - g[y * w + x]).abs() * inv_c;
            }
        }
        for y in 0..h - 1 {
            for x in 0..w {
                wy[y * w + x] += (g[(y + 1) * w + x] - g[y * w + x]).abs() * inv_c;
            }
        }
    }
    for v in wx.iter_mut().chain(wy.iter_mut()) {
        *v = (-*v).exp();
    }
    EdgeWeights { wx, wy }
}

fn semantic_edge_weights<T: Real>(s: &SemanticMap, kappa: f64) -> EdgeWeights<T> {
    let (h, w) = (s.height(), s.width());
    let boundary = T::lit((-kappa).exp());
    let pick = |a: u8, b: u8| if a != b { boundary } else { T::one() };
    let mut wx = vec![T::zero(); h * (w - 1)];
    let mut wy = vec![T::zero(); (h - 1) * w];
    for y in 0..h {
        for x in 0..w - 1 {
            wx[y * (w - 1) + x] = pick(s.at(y, x), s.at(y, x + 1));
        }
    }
    for y in 0..h - 1 {
        for x in 0..w {
            wy[y * w + x] = pick(s.at(y, x), s.at(y + 1, x));
        }
    }
    EdgeWeights { wx, wy }
}

/// Value and d/dd of the weighted first-difference penalty.
fn weighted_smoothness<T: Real>(d: &DisparityMap<T>, e: &EdgeWeights<T>) -> (T, Plane<T>) {
    let (_, h, w) = d.shape();
    let nx = T::lit(1.0 / (h * (w - 1)) as f64);
    let ny = T::lit(1.0 / ((h - 1) * w) as f64);
    let dv = d.data();
    let mut grad = Plane::zeros(1, h, w);
    let g = grad.data_mut();
    let (mut sx, mut sy) = (T::zero(), T::zero());
    for y in 0..h {
        for x in 0..w - 1 {
            let diff = dv[y * w + x + 1] - dv[y * w + x];
            let wt = e.wx[y * (w - 1) + x];
            sx += diff.abs() * wt;
            let gs = sign(diff) * wt * nx;
            g[y * w + x + 1] += gs;
            g[y * w + x] -= gs;
        }
    }
    for y in 0..h - 1 {
        for x in 0..w {
            let diff = dv[(y + 1) * w + x] - dv[y * w + x];
            let wt = e.wy[y * w + x];
            sy += diff.abs() * wt;
            let gs = sign(diff) * wt * ny;
            g[(y + 1) * w + x] += gs;
            g[y * w + x] -= gs;
        }
    }
    (sx * nx + sy * ny, grad)
}

/// `mean |dx d| exp(-|dx I|) + mean |dy d| exp(-|dy I|)`, forward differences,
/// guide differences averaged over channels.
pub fn loss_smooth<T: Real>(d: &DisparityMap<T>, guide: &ImagePlane<T>) -> Result<T> {
    Ok(loss_smooth_grad(d, guide)?.0)
}

/// Returns `(value, d/dd, d/dguide)`.
pub fn loss_smooth_grad<T: Real>(d: &DisparityMap<T>, guide: &ImagePlane<T>) -> Result<(T, Plane<T>, Plane<T>)> {
    let (_, h, w) = d.shape();
    guide.ensure_same_size(h, w, "smoothness guide")?;
    check_smooth_size(h, w)?;
    let e = image_edge_weights(guide);
    let (value, gd) = weighted_smoothness(d, &e);

    let channels = guide.channels();
    let nx = T::lit(1.0 / (h * (w - 1)) as f64);
    let ny = T::lit(1.0 / ((h - 1) * w) as f64);
    let inv_c = T::lit(1.0 / channels as f64);
    let dv = d.data();
    let mut gg = Plane::zeros_like(guide);
    for c in 0..channels {
        let src = guide.channel(c).to_vec();
        let out = gg.channel_mut(c);
        for y in 0..h {
            for x in 0..w - 1 {
                let i = y * (w - 1) + x;
                // d/dI of |dd| exp(-mean|dI|)
                let coeff = -(dv[y * w + x + 1] - dv[y * w + x]).abs() * e.wx[i] * nx * inv_c;
                let s = sign(src[y * w + x + 1] - src[y * w + x]);
                out[y * w + x + 1] += coeff * s;
                out[y * w + x] -= coeff * s;
            }
        }
        for y in 0..h - 1 {
            for x in 0..w {
                let i = y * w + x;
                let coeff = -(dv[(y + 1) * w + x] - dv[y * w + x]).abs() * e.wy[i] * ny * inv_c;
                let s = sign(src[(y + 1) * w + x] - src[y * w + x]);
                out[(y + 1) * w + x] += coeff * s;
                out[y * w + x] -= coeff * s;
            }
        }
    }
    Ok((value, gd, gg))
}

/// Smoothness guided by class boundaries: the guide gradient magnitude is
/// `kappa` across a class change and 0 elsewhere.
pub fn loss_semantic<T: Real>(d: &DisparityMap<T>, s: &SemanticMap, kappa: f64) -> Result<T> {
    Ok(loss_semantic_grad(d, s, kappa)?.0)
}

pub fn loss_semantic_grad<T: Real>(d: &DisparityMap<T>, s: &SemanticMap, kappa: f64) -> Result<(T, Plane<T>)> {
    let (_, h, w) = d.shape();
    if s.height() != h || s.width() != w {
        return Err(Error::ShapeMismatch {
            what: "semantic smoothness labels",
            expected: (1, h, w),
            found: (1, s.height(), s.width()),
        });
    }
    check_smooth_size(h, w)?;
    Ok(weighted_smoothness(d, &semantic_edge_weights(s, kappa)))
}

// ---------------------------------------------------------------------------
// Segmentation

/// Mean per-pixel softmax cross-entropy.
pub fn loss_seg<T: Real>(logits: &ClassLogits<T>, gt: &SemanticMap) -> Result<T> {
    Ok(loss_seg_grad(logits, gt)?.0)
}

pub fn loss_seg_grad<T: Real>(logits: &ClassLogits<T>, gt: &SemanticMap) -> Result<(T, Plane<T>)> {
    let (k, h, w) = logits.shape();
    if gt.height() != h || gt.width() != w {
        return Err(Error::ShapeMismatch {
            what: "segmentation labels",
            expected: (1, h, w),
            found: (1, gt.height(), gt.width()),
        });
    }
    if gt.classes() != k {
        return Err(Error::ShapeMismatch {
            what: "segmentation class count",
            expected: (gt.classes(), h, w),
            found: (k, h, w),
        });
    }
    if !logits.is_finite() {
        return Err(Error::NonFinite("class logits"));
    }
    let area = h * w;
    let inv_n = T::lit(1.0 / area as f64);
    let z = logits.data();
    let mut grad = Plane::zeros_like(logits);
    let g = grad.data_mut();
    let mut total = T::zero();
    for p in 0..area {
        let mut mx = z[p];
        for c in 1..k {
            mx = mx.max(z[c * area + p]);
        }
        let mut denom = T::zero();
        for c in 0..k {
            denom += (z[c * area + p] - mx).exp();
        }
        let label = gt.labels()[p] as usize;
        total += denom.ln() + mx - z[label * area + p];
        for c in 0..k {
            let prob = (z[c * area + p] - mx).exp() / denom;
            let onehot = if c == label { T::one() } else { T::zero() };
            g[c * area + p] = (prob - onehot) * inv_n;
        }
    }
    Ok((total * inv_n, grad))
}

// ---------------------------------------------------------------------------
// Binocular teacher objective

/// Loss value with its unweighted components and the warped intermediates.
#[derive(Clone, Debug)]
pub struct BinocularTerms<T> {
    pub total: T,
    /// `L_re(I_l, I~_l) + L_re(I_r, I~_r)`.
    pub reconstruction: T,
    /// `L_lr(d_l, d~_l) + L_lr(d_r, d~_r)`.
    pub left_right: T,
    /// `L_sm(d_l, I_l) + L_sm(d_r, I_r)`.
    pub smoothness: T,
    pub recon_left: ImagePlane<T>,
    pub recon_right: ImagePlane<T>,
    pub d_tilde_left: DisparityMap<T>,
    pub d_tilde_right: DisparityMap<T>,
}

/// Gradients with respect to both disparities and both views.
#[derive(Clone, Debug)]
pub struct StereoGrad<T> {
    pub d_left: Plane<T>,
    pub d_right: Plane<T>,
    pub i_left: Plane<T>,
    pub i_right: Plane<T>,
}

impl<T: Real> StereoGrad<T> {
    fn zeros(images: (usize, usize, usize)) -> Self {
        let (c, h, w) = images;
        Self {
            d_left: Plane::zeros(1, h, w),
            d_right: Plane::zeros(1, h, w),
            i_left: Plane::zeros(c, h, w),
            i_right: Plane::zeros(c, h, w),
        }
    }
}

fn check_stereo<T: Real>(
    d_l: &DisparityMap<T>,
    d_r: &DisparityMap<T>,
    i_l: &ImagePlane<T>,
    i_r: &ImagePlane<T>,
) -> Result<()> {
    i_l.ensure_same_shape(i_r, "stereo views")?;
    d_l.ensure_same_size(i_l.height(), i_l.width(), "left disparity")?;
    d_r.ensure_same_size(i_l.height(), i_l.width(), "right disparity")?;
    Ok(())
}

pub fn loss_binocular<T: Real>(
    d_l: &DisparityMap<T>,
    d_r: &DisparityMap<T>,
    i_l: &ImagePlane<T>,
    i_r: &ImagePlane<T>,
    w: &LossWeights,
) -> Result<BinocularTerms<T>> {
    check_stereo(d_l, d_r, i_l, i_r)?;
    let recon_left = warp_image(i_r, d_l, WarpDirection::LeftFromRight)?;
    let recon_right = warp_image(i_l, d_r, WarpDirection::RightFromLeft)?;
    let d_tilde_left = DisparityMap::new(warp_image(d_r, d_l, WarpDirection::LeftFromRight)?)?;
    let d_tilde_right = DisparityMap::new(warp_image(d_l, d_r, WarpDirection::RightFromLeft)?)?;
    let reconstruction =
        loss_reconstruction(i_l, &recon_left, w.theta)? + loss_reconstruction(i_r, &recon_right, w.theta)?;
    let left_right = loss_lr(d_l, &d_tilde_left)? + loss_lr(d_r, &d_tilde_right)?;
    let smoothness = loss_smooth(d_l, i_l)? + loss_smooth(d_r, i_r)?;
    let total = T::lit(w.alpha1) * reconstruction + T::lit(w.alpha2) * left_right + T::lit(w.alpha3) * smoothness;
    Ok(BinocularTerms {
        total,
        reconstruction,
        left_right,
        smoothness,
        recon_left,
        recon_right,
        d_tilde_left,
        d_tilde_right,
    })
}

pub fn loss_binocular_grad<T: Real>(
    d_l: &DisparityMap<T>,
    d_r: &DisparityMap<T>,
    i_l: &ImagePlane<T>,
    i_r: &ImagePlane<T>,
    w: &LossWeights,
) -> Result<(BinocularTerms<T>, StereoGrad<T>)> {
    let terms = loss_binocular(d_l, d_r, i_l, i_r, w)?;
    let mut g = StereoGrad::zeros(i_l.shape());
    let (a1, a2, a3) = (T::lit(w.alpha1), T::lit(w.alpha2), T::lit(w.alpha3));

    // reconstruction: I~_l = <I_r>_{d_l}, I~_r = <I_l>_{d_r}
    let (_, g_il, g_rl) = loss_reconstruction_grad(i_l, &terms.recon_left, w.theta)?;
    g.i_left.add_scaled(&g_il, a1);
    let wg = warp_image_backward(i_r, d_l, WarpDirection::LeftFromRight, &g_rl)?;
    g.i_right.add_scaled(&wg.source, a1);
    g.d_left.add_scaled(&wg.disparity, a1);

    let (_, g_ir, g_rr) = loss_reconstruction_grad(i_r, &terms.recon_right, w.theta)?;
    g.i_right.add_scaled(&g_ir, a1);
    let wg = warp_image_backward(i_l, d_r, WarpDirection::RightFromLeft, &g_rr)?;
    g.i_left.add_scaled(&wg.source, a1);
    g.d_right.add_scaled(&wg.disparity, a1);

    // left-right consistency: d~_l = <d_r>_{d_l}, d~_r = <d_l>_{d_r}
    let (_, g_d, g_dt) = loss_lr_grad(d_l, &terms.d_tilde_left)?;
    g.d_left.add_scaled(&g_d, a2);
    let wg = warp_image_backward(d_r, d_l, WarpDirection::LeftFromRight, &g_dt)?;
    g.d_right.add_scaled(&wg.source, a2);
    g.d_left.add_scaled(&wg.disparity, a2);

    let (_, g_d, g_dt) = loss_lr_grad(d_r, &terms.d_tilde_right)?;
    g.d_right.add_scaled(&g_d, a2);
    let wg = warp_image_backward(d_l, d_r, WarpDirection::RightFromLeft, &g_dt)?;
    g.d_left.add_scaled(&wg.source, a2);
    g.d_right.add_scaled(&wg.disparity, a2);

    // smoothness
    let (_, g_d, g_i) = loss_smooth_grad(d_l, i_l)?;
    g.d_left.add_scaled(&g_d, a3);
    g.i_left.add_scaled(&g_i, a3);
    let (_, g_d, g_i) = loss_smooth_grad(d_r, i_r)?;
    g.d_right.add_scaled(&g_d, a3);
    g.i_right.add_scaled(&g_i, a3);

    Ok((terms, g))
}

#[derive(Clone, Debug)]
pub struct TeacherTerms<T> {
    pub total: T,
    pub binocular: BinocularTerms<T>,
    pub semantic: T,
}

/// `gamma1 L_bi + gamma2 L_semantic(d_l, s_l)`.
pub fn loss_teacher<T: Real>(
    d_l: &DisparityMap<T>,
    d_r: &DisparityMap<T>,
    i_l: &ImagePlane<T>,
    i_r: &ImagePlane<T>,
    s_l: &SemanticMap,
    w: &LossWeights,
) -> Result<TeacherTerms<T>> {
    let binocular = loss_binocular(d_l, d_r, i_l, i_r, w)?;
    let semantic = loss_semantic(d_l, s_l, w.kappa)?;
    Ok(TeacherTerms {
        total: T::lit(w.gamma1) * binocular.total + T::lit(w.gamma2) * semantic,
        binocular,
        semantic,
    })
}

pub fn loss_teacher_grad<T: Real>(
    d_l: &DisparityMap<T>,
    d_r: &DisparityMap<T>,
    i_l: &ImagePlane<T>,
    i_r: &ImagePlane<T>,
    s_l: &SemanticMap,
    w: &LossWeights,
) -> Result<(TeacherTerms<T>, StereoGrad<T>)> {
    let (binocular, bg) = loss_binocular_grad(d_l, d_r, i_l, i_r, w)?;
    let (semantic, sg) = loss_semantic_grad(d_l, s_l, w.kappa)?;
    let g1 = T::lit(w.gamma1);
    let mut g = StereoGrad::zeros(i_l.shape());
    g.d_left.add_scaled(&bg.d_left, g1);
    g.d_left.add_scaled(&sg, T::lit(w.gamma2));
    g.d_right.add_scaled(&bg.d_right, g1);
    g.i_left.add_scaled(&bg.i_left, g1);
    g.i_right.add_scaled(&bg.i_right, g1);
    let total = g1 * binocular.total + T::lit(w.gamma2) * semantic;
    Ok((
        TeacherTerms {
            total,
            binocular,
            semantic,
        },
        g,
    ))
}

// ---------------------------------------------------------------------------
// Student objective

/// Reconstruction loss applied to disparity maps; SSIM stabilizers use the
/// disparity range `d_max`.
pub fn loss_distill<T: Real>(d_s: &DisparityMap<T>, d_t: &DisparityMap<T>, theta: f64, d_max: f64) -> Result<T> {
    reconstruction_with(d_s, d_t, theta, SsimConstants::for_range(d_max))
}

pub fn loss_distill_grad<T: Real>(
    d_s: &DisparityMap<T>,
    d_t: &DisparityMap<T>,
    theta: f64,
    d_max: f64,
) -> Result<(T, Plane<T>, Plane<T>)> {
    reconstruction_grad_with(d_s, d_t, theta, SsimConstants::for_range(d_max))
}

#[derive(Clone, Debug)]
pub struct UnmoTerms<T> {
    pub value: T,
    pub reconstruction: ImagePlane<T>,
}

/// Gradients of the occlusion-masked reconstruction loss.
#[derive(Clone, Debug)]
pub struct UnmoGrad<T> {
    pub d_s: Plane<T>,
    pub i_s: Plane<T>,
    pub i_other: Plane<T>,
}

fn check_mask<T: Real>(mask: &OcclusionMask, image: &Plane<T>) -> Result<()> {
    if mask.height() != image.height() || mask.width() != image.width() {
        return Err(Error::ShapeMismatch {
            what: "occlusion mask",
            expected: (1, image.height(), image.width()),
            found: (1, mask.height(), mask.width()),
        });
    }
    Ok(())
}

fn masked_upstream<T: Real>(mask: &OcclusionMask) -> (Plane<T>, usize) {
    let count = mask.count_ones();
    let inv = if count == 0 {
        T::zero()
    } else {
        T::lit(1.0 / count as f64)
    };
    let data = mask
        .data()
        .iter()
        .map(|&m| if m != 0 { inv } else { T::zero() })
        .collect();
    (
        Plane::new(1, mask.height(), mask.width(), data).expect("mask dimensions"),
        count,
    )
}

/// Reconstruction of the student view from the opposite view, averaged over
/// the pixels the mask keeps (0 when the mask is empty).
pub fn loss_unmo<T: Real>(
    d_s: &DisparityMap<T>,
    i_s: &ImagePlane<T>,
    i_other: &ImagePlane<T>,
    mask: &OcclusionMask,
    theta: f64,
) -> Result<UnmoTerms<T>> {
    i_s.ensure_same_shape(i_other, "student views")?;
    check_mask(mask, i_s)?;
    let reconstruction = warp_image(i_other, d_s, WarpDirection::LeftFromRight)?;
    let map = reconstruction_map(i_s, &reconstruction, theta, SsimConstants::default())?;
    let (up, _) = masked_upstream::<T>(mask);
    let value = map.data().iter().zip(up.data()).map(|(&m, &u)| m * u).sum();
    Ok(UnmoTerms { value, reconstruction })
}

pub fn loss_unmo_grad<T: Real>(
    d_s: &DisparityMap<T>,
    i_s: &ImagePlane<T>,
    i_other: &ImagePlane<T>,
    mask: &OcclusionMask,
    theta: f64,
) -> Result<(UnmoTerms<T>, UnmoGrad<T>)> {
    let terms = loss_unmo(d_s, i_s, i_other, mask, theta)?;
    let (up, _) = masked_upstream::<T>(mask);
    let (g_is, g_rec) = reconstruction_map_backward(i_s, &terms.reconstruction, theta, SsimConstants::default(), &up)?;
    let wg = warp_image_backward(i_other, d_s, WarpDirection::LeftFromRight, &g_rec)?;
    Ok((
        terms,
        UnmoGrad {
            d_s: wg.disparity,
            i_s: g_is,
            i_other: wg.source,
        },
    ))
}

#[derive(Clone, Debug)]
pub struct StudentTerms<T> {
    pub total: T,
    pub distill: T,
    pub unmo: T,
    pub semantic: T,
}

/// Gradients of the student objective. `d_t` is a fixed target during
/// training but its gradient is reported for verification.
#[derive(Clone, Debug)]
pub struct StudentGrad<T> {
    pub d_s: Plane<T>,
    pub d_t: Plane<T>,
    pub i_s: Plane<T>,
    pub i_other: Plane<T>,
}

/// `gamma3 L_distill + gamma4 L_unmo + gamma5 L_semantic(d_s, S_t)`.
pub fn loss_student<T: Real>(
    d_s: &DisparityMap<T>,
    d_t: &DisparityMap<T>,
    i_s: &ImagePlane<T>,
    i_other: &ImagePlane<T>,
    mask: &OcclusionMask,
    s_t: &SemanticMap,
    w: &LossWeights,
    d_max: f64,
) -> Result<StudentTerms<T>> {
    let distill = loss_distill(d_s, d_t, w.theta, d_max)?;
    let unmo = loss_unmo(d_s, i_s, i_other, mask, w.theta)?.value;
    let semantic = loss_semantic(d_s, s_t, w.kappa)?;
    Ok(StudentTerms {
        total: T::lit(w.gamma3) * distill + T::lit(w.gamma4) * unmo + T::lit(w.gamma5) * semantic,
        distill,
        unmo,
        semantic,
    })
}

pub fn loss_student_grad<T: Real>(
    d_s: &DisparityMap<T>,
    d_t: &DisparityMap<T>,
    i_s: &ImagePlane<T>,
    i_other: &ImagePlane<T>,
    mask: &OcclusionMask,
    s_t: &SemanticMap,
    w: &LossWeights,
    d_max: f64,
) -> Result<(StudentTerms<T>, StudentGrad<T>)> {
    let (g3, g4, g5) = (T::lit(w.gamma3), T::lit(w.gamma4), T::lit(w.gamma5));
    let (distill, gds, gdt) = loss_distill_grad(d_s, d_t, w.theta, d_max)?;
    let (unmo, ug) = loss_unmo_grad(d_s, i_s, i_other, mask, w.theta)?;
    let (semantic, sg) = loss_semantic_grad(d_s, s_t, w.kappa)?;
    let mut d_s_grad = Plane::zeros_like(d_s.as_plane());
    d_s_grad.add_scaled(&gds, g3);
    d_s_grad.add_scaled(&ug.d_s, g4);
    d_s_grad.add_scaled(&sg, g5);
    let mut d_t_grad = gdt;
    d_t_grad.scale(g3);
    let mut i_s_grad = ug.i_s;
    i_s_grad.scale(g4);
    let mut i_other_grad = ug.i_other;
    i_other_grad.scale(g4);
    Ok((
        StudentTerms {
            total: g3 * distill + g4 * unmo.value + g5 * semantic,
            distill,
            unmo: unmo.value,
            semantic,
        },
        StudentGrad {
            d_s: d_s_grad,
            d_t: d_t_grad,
            i_s: i_s_grad,
            i_other: i_other_grad,
        },
    ))
}

// ---------------------------------------------------------------------------
// Monocular photometric baseline (no pseudo supervision)

#[derive(Clone, Debug)]
pub struct PhotometricTerms<T> {
    pub total: T,
    pub reconstruction: T,
    pub smoothness: T,
}

/// Unsupervised monocular objective `alpha1 L_re(I_s, <I_other>_{d_s}) +
/// alpha3 L_sm(d_s, I_s)`.
pub fn loss_monocular_photometric_grad<T: Real>(
    d_s: &DisparityMap<T>,
    i_s: &ImagePlane<T>,
    i_other: &ImagePlane<T>,
    w: &LossWeights,
) -> Result<(PhotometricTerms<T>, Plane<T>)> {
    let ones = OcclusionMask::ones(i_s.height(), i_s.width());
    let (rec, ug) = loss_unmo_grad(d_s, i_s, i_other, &ones, w.theta)?;
    let (smooth, g_sm, _) = loss_smooth_grad(d_s, i_s)?;
    let (a1, a3) = (T::lit(w.alpha1), T::lit(w.alpha3));
    let mut g = Plane::zeros_like(d_s.as_plane());
    g.add_scaled(&ug.d_s, a1);
    g.add_scaled(&g_sm, a3);
    Ok((
        PhotometricTerms {
            total: a1 * rec.value + a3 * smooth,
            reconstruction: rec.value,
            smoothness: smooth,
        },
        g,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    fn image(c: usize, h: usize, w: usize, seed: f64) -> Plane<f64> {
        Plane::from_fn(c, h, w, |c, y, x| {
            0.5 + 0.4 * ((seed + 1.3 * c as f64 + 0.7 * y as f64 + 1.9 * x as f64).sin())
        })
    }

    #[test]
    fn reconstruction_identity_and_l1_limit() {
        let a = image(3, 5, 5, 0.0);
        let b = image(3, 5, 5, 2.0);
        assert!(loss_reconstruction(&a, &a, 0.5).unwrap().abs() < 1e-12);
        let l1: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / 75.0;
        assert!((loss_reconstruction(&a, &b, 0.0).unwrap() - l1).abs() < 1e-12);
        assert!(loss_reconstruction(&a, &b, 1.5).is_err());
    }

    #[test]
    fn lr_loss_arithmetic() {
        let a = DisparityMap::filled(3, 3, 0.20);
        let b = DisparityMap::filled(3, 3, 0.25);
        assert!((loss_lr::<f64>(&a, &b).unwrap() - 0.05).abs() < 1e-12);
        assert_eq!(loss_lr(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn smoothness_limits() {
        let guide = image(3, 4, 5, 1.0);
        let c = DisparityMap::filled(4, 5, 0.1);
        assert_eq!(loss_smooth(&c, &guide).unwrap(), 0.0);
        let d = DisparityMap::from_fn(4, 5, |y, x| 0.01 * (y * y + 3 * x) as f64);
        let flat = Plane::filled(3, 4, 5, 0.3);
        let mut sx = 0.0;
        for y in 0..4 {
            for x in 0..4 {
                sx += (d.at(y, x + 1) - d.at(y, x)).abs();
            }
        }
        let mut sy = 0.0;
        for y in 0..3 {
            for x in 0..5 {
                sy += (d.at(y + 1, x) - d.at(y, x)).abs();
            }
        }
        let expect = sx / 16.0 + sy / 15.0;
        assert!((loss_smooth(&d, &flat).unwrap() - expect).abs() < 1e-14);
    }

    #[test]
    fn semantic_single_class_matches_flat_guide() {
        let d = DisparityMap::from_fn(4, 6, |y, x| 0.02 * ((y * 5 + x * 3) % 7) as f64);
        let s = SemanticMap::uniform(4, 6, 3, 2).unwrap();
        let flat = Plane::filled(3, 4, 6, 0.6);
        let a = loss_semantic(&d, &s, DEFAULT_KAPPA).unwrap();
        let b = loss_smooth(&d, &flat).unwrap();
        assert!((a - b).abs() < 1e-15);
        assert_eq!(loss_semantic(&DisparityMap::filled(4, 6, 0.2), &s, 10.0).unwrap(), 0.0);
    }

    #[test]
    fn semantic_boundary_discounts_aligned_step() {
        let (h, w) = (4, 8);
        let d = DisparityMap::from_fn(h, w, |_, x| if x < 4 { 0.05 } else { 0.15 });
        let split = SemanticMap::new(h, w, 2, (0..h * w).map(|i| (i % w >= 4) as u8).collect()).unwrap();
        let single = SemanticMap::uniform(h, w, 2, 0).unwrap();
        assert!(loss_semantic(&d, &split, 10.0).unwrap() < loss_semantic(&d, &single, 10.0).unwrap());
    }

    #[test]
    fn cross_entropy_limits() {
        let gt = SemanticMap::new(2, 2, 3, vec![0, 1, 2, 1]).unwrap();
        let uniform = Plane::<f64>::zeros(3, 2, 2);
        assert!((loss_seg(&uniform, &gt).unwrap() - 3f64.ln()).abs() < 1e-12);
        let confident = Plane::from_fn(3, 2, 2, |c, y, x| if c == gt.at(y, x) as usize { 800.0 } else { 0.0 });
        assert!(loss_seg::<f64>(&confident, &gt).unwrap().abs() < 1e-12);
        let wrong = SemanticMap::new(2, 2, 4, vec![0, 1, 3, 1]).unwrap();
        assert!(loss_seg(&uniform, &wrong).is_err());
    }

    #[test]
    fn unmo_mask_limits() {
        let i_s = image(3, 5, 8, 0.3);
        let i_o = image(3, 5, 8, 0.9);
        let d = DisparityMap::filled(5, 8, 0.1);
        let ones = OcclusionMask::ones(5, 8);
        let rec = warp_image(&i_o, &d, WarpDirection::LeftFromRight).unwrap();
        let full = loss_reconstruction(&i_s, &rec, 0.5).unwrap();
        let masked = loss_unmo(&d, &i_s, &i_o, &ones, 0.5).unwrap().value;
        assert!((full - masked).abs() < 1e-14);
        let zeros = OcclusionMask::zeros(5, 8);
        assert_eq!(loss_unmo(&d, &i_s, &i_o, &zeros, 0.5).unwrap().value, 0.0);
    }

    #[test]
    fn unmo_masking_worst_pixels_never_increases() {
        let i_s = image(3, 6, 8, 0.1);
        let i_o = image(3, 6, 8, 2.4);
        let d = DisparityMap::from_fn(6, 8, |y, x| 0.02 + 0.01 * ((x + y) % 3) as f64);
        let rec = warp_image(&i_o, &d, WarpDirection::LeftFromRight).unwrap();
        let map = reconstruction_map(&i_s, &rec, 0.5, SsimConstants::default()).unwrap();
        let mut order: Vec<usize> = (0..48).collect();
        order.sort_by(|&a, &b| map.data()[b].partial_cmp(&map.data()[a]).unwrap());
        let mut mask = OcclusionMask::ones(6, 8);
        let mut prev = loss_unmo(&d, &i_s, &i_o, &mask, 0.5).unwrap().value;
        for &p in order.iter().take(40) {
            mask.set(p / 8, p % 8, false);
            let v = loss_unmo(&d, &i_s, &i_o, &mask, 0.5).unwrap().value;
            assert!(v <= prev + 1e-15);
            prev = v;
        }
    }

    #[test]
    fn weights_validate() {
        assert!(LossWeights::default().validate().is_ok());
        let bad = LossWeights {
            gamma4: -1.0,
            ..LossWeights::default()
        };
        assert!(bad.validate().is_err());
    }
}
