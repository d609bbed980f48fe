//! Horizontal epipolar warping, occlusion masks and disparity/depth conversion.

use crate::error::{Error, Result};
use crate::plane::{DisparityMap, OcclusionMask, Plane};
use crate::real::Real;

/// Which view is reconstructed from which.
///
/// For a rectified pair a scene point at `x` in the left view appears at
/// `x - d` in the right view, so the left view is rebuilt by sampling the
/// right image at `x - d_l(x)` and the right view by sampling the left image
/// at `x + d_r(x)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WarpDirection {
    LeftFromRight,
    RightFromLeft,
}

impl WarpDirection {
    #[inline]
    fn sign<T: Real>(self) -> T {
        match self {
            WarpDirection::LeftFromRight => -T::one(),
            WarpDirection::RightFromLeft => T::one(),
        }
    }
}

/// Linear interpolation footprint of one output pixel.
#[derive(Clone, Copy)]
struct Tap<T> {
    x0: usize,
    x1: usize,
    frac: T,
    /// d(sample x)/d(disparity); zero once the coordinate is clamped.
    dx_dd: T,
}

#[inline]
fn tap<T: Real>(x: usize, disparity: T, width: usize, sign: T) -> Tap<T> {
    let w = T::lit(width as f64);
    let last = T::lit((width - 1) as f64);
    let xs = T::lit(x as f64) + sign * disparity * w;
    if xs <= T::zero() {
        Tap {
            x0: 0,
            x1: 0,
            frac: T::zero(),
            dx_dd: T::zero(),
        }
    } else if xs >= last {
        Tap {
            x0: width - 1,
            x1: width - 1,
            frac: T::zero(),
            dx_dd: T::zero(),
        }
    } else {
        let fl = xs.floor();
        let x0 = fl.as_f64() as usize;
        Tap {
            x0,
            x1: (x0 + 1).min(width - 1),
            frac: xs - fl,
            dx_dd: sign * w,
        }
    }
}

fn check_inputs<T: Real>(source: &Plane<T>, disparity: &DisparityMap<T>) -> Result<()> {
    disparity.ensure_same_size(source.height(), source.width(), "warp disparity")?;
    if source.width() < 2 {
        return Err(Error::InvalidDimensions {
            channels: source.channels(),
            height: source.height(),
            width: source.width(),
            len: source.data().len(),
        });
    }
    if !disparity.is_finite() {
        return Err(Error::NonFinite("warp disparity"));
    }
    Ok(())
}

/// Samples `source` along each scan line at the disparity-shifted coordinate
/// with linear interpolation; coordinates outside the image clamp to the border.
pub fn warp_image<T: Real>(
    source: &Plane<T>,
    disparity: &DisparityMap<T>,
    direction: WarpDirection,
) -> Result<Plane<T>> {
    check_inputs(source, disparity)?;
    let (channels, height, width) = source.shape();
    let sign = direction.sign::<T>();
    let mut out = Plane::zeros_like(source);
    let area = height * width;
    let src = source.data();
    let dst = out.data_mut();
    for y in 0..height {
        for x in 0..width {
            let p = y * width + x;
            let t = tap(x, disparity.data()[p], width, sign);
            for c in 0..channels {
                let row = c * area + y * width;
                let s0 = src[row + t.x0];
                let s1 = src[row + t.x1];
                dst[c * area + p] = s0 + t.frac * (s1 - s0);
            }
        }
    }
    Ok(out)
}

/// Gradients of a scalar through [`warp_image`].
#[derive(Clone, Debug)]
pub struct WarpGrad<T> {
    pub source: Plane<T>,
    pub disparity: Plane<T>,
}

/// Back-propagates `grad_out` (d loss / d warped image) to the source image
/// and the disparity map.
pub fn warp_image_backward<T: Real>(
    source: &Plane<T>,
    disparity: &DisparityMap<T>,
    direction: WarpDirection,
    grad_out: &Plane<T>,
) -> Result<WarpGrad<T>> {
    check_inputs(source, disparity)?;
    source.ensure_same_shape(grad_out, "warp gradient")?;
    let (channels, height, width) = source.shape();
    let sign = direction.sign::<T>();
    let area = height * width;
    let mut g_src = Plane::zeros_like(source);
    let mut g_disp = Plane::zeros(1, height, width);
    let src = source.data();
    let go = grad_out.data();
    for y in 0..height {
        for x in 0..width {
            let p = y * width + x;
            let t = tap(x, disparity.data()[p], width, sign);
            let mut gd = T::zero();
            for c in 0..channels {
                let row = c * area + y * width;
                let g = go[c * area + p];
                let gs = g_src.data_mut();
                gs[row + t.x0] += g * (T::one() - t.frac);
                gs[row + t.x1] += g * t.frac;
                gd += g * (src[row + t.x1] - src[row + t.x0]);
            }
            g_disp.data_mut()[p] = gd * t.dx_dd;
        }
    }
    Ok(WarpGrad {
        source: g_src,
        disparity: g_disp,
    })
}

/// Warps one disparity map by another, e.g. `d~_l = <d_r>_{d_l}`.
pub fn warp_disparity<T: Real>(
    source: &DisparityMap<T>,
    sampling: &DisparityMap<T>,
    direction: WarpDirection,
) -> Result<DisparityMap<T>> {
    DisparityMap::new(warp_image(source, sampling, direction)?)
}

/// Default consistency threshold, in normalized disparity units.
pub const OCCLUSION_THRESHOLD: f64 = 0.01;

/// `1(|d - d~| <= tau)`: 1 where a disparity and its cross-warped
/// counterpart agree.
pub fn occlusion_mask<T: Real>(d: &DisparityMap<T>, d_tilde: &DisparityMap<T>, tau: T) -> Result<OcclusionMask> {
    d.ensure_same_shape(d_tilde, "occlusion mask inputs")?;
    if !(tau > T::zero()) {
        return Err(Error::OutOfRange {
            name: "occlusion threshold",
            value: tau.as_f64(),
        });
    }
    let (_, h, w) = d.shape();
    Ok(OcclusionMask::from_fn(h, w, |y, x| {
        (d.at(y, x) - d_tilde.at(y, x)).abs() <= tau
    }))
}

/// Rectified stereo rig: baseline in meters, focal length in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraModel {
    baseline: f64,
    focal: f64,
}

impl CameraModel {
    pub fn new(baseline: f64, focal: f64) -> Result<Self> {
        if !(baseline > 0.0 && baseline.is_finite()) {
            return Err(Error::OutOfRange {
                name: "baseline",
                value: baseline,
            });
        }
        if !(focal > 0.0 && focal.is_finite()) {
            return Err(Error::OutOfRange {
                name: "focal length",
                value: focal,
            });
        }
        Ok(Self { baseline, focal })
    }

    pub fn baseline(&self) -> f64 {
        self.baseline
    }

    pub fn focal(&self) -> f64 {
        self.focal
    }

    /// `b * f`, in meter-pixels.
    pub fn bf(&self) -> f64 {
        self.baseline * self.focal
    }

    /// Pixel disparity of a fronto-parallel point at `depth` meters.
    pub fn pixel_disparity(&self, depth: f64) -> f64 {
        self.bf() / depth
    }
}

/// Per-pixel depth `b f / (d * width)` in meters.
pub fn disparity_to_depth<T: Real>(
    d: &DisparityMap<T>,
    camera: &CameraModel,
    image_width: usize,
) -> Result<Plane<f64>> {
    let bf = camera.bf();
    let w = image_width as f64;
    let (_, h, width) = d.shape();
    let mut out = Plane::zeros(1, h, width);
    for y in 0..h {
        for x in 0..width {
            let v = d.at(y, x).as_f64();
            if !(v > 0.0) {
                return Err(Error::NonPositiveDisparity { value: v, x, y });
            }
            out.set(0, y, x, bf / (v * w));
        }
    }
    Ok(out)
}

/// Inverse of [`disparity_to_depth`].
pub fn depth_to_disparity<T: Real>(
    depth: &Plane<f64>,
    camera: &CameraModel,
    image_width: usize,
) -> Result<DisparityMap<T>> {
    let bf = camera.bf();
    let w = image_width as f64;
    let (_, h, width) = depth.shape();
    let mut data = alloc::vec::Vec::with_capacity(h * width);
    for &z in depth.channel(0) {
        if !(z > 0.0 && z.is_finite()) {
            return Err(Error::OutOfRange {
                name: "depth",
                value: z,
            });
        }
        data.push(T::lit(bf / (z * w)));
    }
    DisparityMap::from_vec(h, width, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    #[test]
    fn zero_disparity_is_exact_identity() {
        let img = Plane::<f64>::from_fn(3, 4, 5, |c, y, x| ((c * 7 + y * 3 + x) as f64 * 0.37).sin());
        let zero = DisparityMap::filled(4, 5, 0.0);
        for dir in [WarpDirection::LeftFromRight, WarpDirection::RightFromLeft] {
            assert_eq!(warp_image(&img, &zero, dir).unwrap(), img);
        }
    }

    #[test]
    fn ramp_shift_by_two_pixels_clamps_border() {
        // 2 rows of the ramp [0..7]/7, shift 2 px of an 8 px image.
        let ramp: Vec<f64> = (0..16).map(|i| (i % 8) as f64 / 7.0).collect();
        let img = Plane::new(1, 2, 8, ramp).unwrap();
        let d = DisparityMap::filled(2, 8, 2.0 / 8.0);
        let out = warp_image(&img, &d, WarpDirection::LeftFromRight).unwrap();
        for y in 0..2 {
            for x in 0..8 {
                let expect = (x as i64 - 2).max(0) as f64 / 7.0;
                assert!((out.get(0, y, x) - expect).abs() < 1e-15, "x={x}");
            }
        }
        let back = warp_image(&img, &d, WarpDirection::RightFromLeft).unwrap();
        for x in 0..8 {
            let expect = (x + 2).min(7) as f64 / 7.0;
            assert!((back.get(0, 1, x) - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_image_is_invariant() {
        let img = Plane::<f64>::filled(3, 3, 6, 0.42);
        let d = DisparityMap::from_fn(3, 6, |y, x| 0.05 * (y + x) as f64);
        let out = warp_image(&img, &d, WarpDirection::LeftFromRight).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.42).abs() < 1e-15));
    }

    #[test]
    fn warp_rejects_bad_inputs() {
        let img = Plane::<f64>::zeros(3, 4, 5);
        let d = DisparityMap::filled(4, 4, 0.1);
        assert!(matches!(
            warp_image(&img, &d, WarpDirection::LeftFromRight),
            Err(Error::ShapeMismatch { .. })
        ));
        let mut d = DisparityMap::filled(4, 5, 0.1);
        d.data_mut()[3] = f64::INFINITY;
        assert_eq!(
            warp_image(&img, &d, WarpDirection::LeftFromRight),
            Err(Error::NonFinite("warp disparity"))
        );
    }

    #[test]
    fn warp_disparity_of_constants() {
        let c = DisparityMap::filled(4, 6, 0.125);
        let out = warp_disparity(&c, &c, WarpDirection::LeftFromRight).unwrap();
        assert_eq!(out, c);
        let zero = DisparityMap::filled(4, 6, 0.0);
        let src = DisparityMap::from_fn(4, 6, |y, x| 0.01 * (y * 6 + x) as f64);
        assert_eq!(warp_disparity(&src, &zero, WarpDirection::RightFromLeft).unwrap(), src);
    }

    #[test]
    fn occlusion_threshold_is_inclusive() {
        let d = DisparityMap::from_vec(1, 3, vec![0.01, 0.02, 0.3]).unwrap();
        let dt = DisparityMap::from_vec(1, 3, vec![0.0, 0.0, 0.3]).unwrap();
        let m = occlusion_mask(&d, &dt, OCCLUSION_THRESHOLD).unwrap();
        assert_eq!(m.data(), &[1, 0, 1]);
        assert_eq!(occlusion_mask(&d, &d, 0.01).unwrap(), OcclusionMask::ones(1, 3));
        assert!(occlusion_mask(&d, &dt, 0.0).is_err());
    }

    #[test]
    fn depth_conversion() {
        let cam = CameraModel::new(1.0, 100.0).unwrap();
        // 10 px shift on a 100 px wide image
        let d = DisparityMap::filled(2, 100, 0.1f64);
        let z = disparity_to_depth(&d, &cam, 100).unwrap();
        assert!(z.data().iter().all(|&v| (v - 10.0).abs() < 1e-12));
        let d2 = DisparityMap::filled(2, 100, 0.2f64);
        let z2 = disparity_to_depth(&d2, &cam, 100).unwrap();
        assert!((z2.get(0, 0, 0) - 5.0).abs() < 1e-12);

        let mut bad = DisparityMap::filled(2, 3, 0.1f64);
        bad.data_mut()[4] = 0.0;
        assert_eq!(
            disparity_to_depth(&bad, &cam, 3),
            Err(Error::NonPositiveDisparity { value: 0.0, x: 1, y: 1 })
        );
        assert!(CameraModel::new(0.0, 1.0).is_err());
        assert!(CameraModel::new(1.0, -1.0).is_err());
    }

    #[test]
    fn depth_round_trip() {
        let cam = CameraModel::new(0.54, 721.0).unwrap();
        let depth = Plane::from_fn(1, 3, 7, |_, y, x| 1.0 + 3.7 * (y * 7 + x) as f64);
        let d: DisparityMap<f64> = depth_to_disparity(&depth, &cam, 7).unwrap();
        let back = disparity_to_depth(&d, &cam, 7).unwrap();
        for (a, b) in back.data().iter().zip(depth.data()) {
            assert!(((a - b) / b).abs() < 1e-9);
        }
    }
}
