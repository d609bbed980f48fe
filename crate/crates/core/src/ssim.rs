//! Single-scale SSIM over a 3x3 uniform window, with its exact gradient.
//!
//! Window statistics are taken over a mirror-reflected neighbourhood
//! (`-1 -> 1`, `w -> w - 2`), so the similarity map keeps the image size.
//! Channel maps are averaged into one per-pixel similarity.

use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::plane::Plane;
use crate::real::Real;

pub const WINDOW: usize = 3;

/// Stabilizers `C1 = (0.01 L)^2`, `C2 = (0.03 L)^2` for dynamic range `L`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimConstants {
    pub c1: f64,
    pub c2: f64,
}

impl SsimConstants {
    pub fn for_range(dynamic_range: f64) -> Self {
        Self {
            c1: (0.01 * dynamic_range).powi(2),
            c2: (0.03 * dynamic_range).powi(2),
        }
    }
}

impl Default for SsimConstants {
    fn default() -> Self {
        Self::for_range(1.0)
    }
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    if i < 0 {
        (-i) as usize
    } else if i as usize >= n {
        2 * (n - 1) - i as usize
    } else {
        i as usize
    }
}

/// 3x3 mean of one channel with mirror padding.
fn box_mean<T: Real>(src: &[T], h: usize, w: usize, out: &mut [T]) {
    let ninth = T::lit(1.0 / 9.0);
    for y in 0..h {
        let ys = [reflect(y as isize - 1, h), y, reflect(y as isize + 1, h)];
        for x in 0..w {
            let xs = [reflect(x as isize - 1, w), x, reflect(x as isize + 1, w)];
            let mut acc = T::zero();
            for &yy in &ys {
                let row = &src[yy * w..];
                acc += row[xs[0]] + row[xs[1]] + row[xs[2]];
            }
            out[y * w + x] = acc * ninth;
        }
    }
}

/// Transpose of [`box_mean`]: scatters each pixel's coefficient to its window.
fn box_mean_transpose<T: Real>(coef: &[T], h: usize, w: usize, out: &mut [T]) {
    let ninth = T::lit(1.0 / 9.0);
    for v in out.iter_mut() {
        *v = T::zero();
    }
    for y in 0..h {
        let ys = [reflect(y as isize - 1, h), y, reflect(y as isize + 1, h)];
        for x in 0..w {
            let xs = [reflect(x as isize - 1, w), x, reflect(x as isize + 1, w)];
            let g = coef[y * w + x] * ninth;
            for &yy in &ys {
                for &xx in &xs {
                    out[yy * w + xx] += g;
                }
            }
        }
    }
}

fn check<T: Real>(a: &Plane<T>, b: &Plane<T>) -> Result<()> {
    a.ensure_same_shape(b, "ssim inputs")?;
    if a.height() < WINDOW || a.width() < WINDOW {
        return Err(Error::WindowTooLarge {
            window: WINDOW,
            height: a.height(),
            width: a.width(),
        });
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::NonFinite("ssim inputs"));
    }
    Ok(())
}

struct Moments<T> {
    mx: Vec<T>,
    my: Vec<T>,
    exx: Vec<T>,
    eyy: Vec<T>,
    exy: Vec<T>,
}

fn moments<T: Real>(a: &[T], b: &[T], h: usize, w: usize) -> Moments<T> {
    let n = h * w;
    let mut m = Moments {
        mx: vec![T::zero(); n],
        my: vec![T::zero(); n],
        exx: vec![T::zero(); n],
        eyy: vec![T::zero(); n],
        exy: vec![T::zero(); n],
    };
    let mut tmp = vec![T::zero(); n];
    box_mean(a, h, w, &mut m.mx);
    box_mean(b, h, w, &mut m.my);
    for i in 0..n {
        tmp[i] = a[i] * a[i];
    }
    box_mean(&tmp, h, w, &mut m.exx);
    for i in 0..n {
        tmp[i] = b[i] * b[i];
    }
    box_mean(&tmp, h, w, &mut m.eyy);
    for i in 0..n {
        tmp[i] = a[i] * b[i];
    }
    box_mean(&tmp, h, w, &mut m.exy);
    m
}

/// Per-pixel SSIM in `[-1, 1]`, averaged over channels (single channel output).
pub fn ssim_map<T: Real>(a: &Plane<T>, b: &Plane<T>, k: SsimConstants) -> Result<Plane<T>> {
    check(a, b)?;
    let (channels, h, w) = a.shape();
    let (c1, c2) = (T::lit(k.c1), T::lit(k.c2));
    let two = T::lit(2.0);
    let inv_c = T::lit(1.0 / channels as f64);
    let mut out = Plane::zeros(1, h, w);
    for c in 0..channels {
        let m = moments(a.channel(c), b.channel(c), h, w);
        let dst = out.data_mut();
        for i in 0..h * w {
            let (mx, my) = (m.mx[i], m.my[i]);
            let num = (two * mx * my + c1) * (two * (m.exy[i] - mx * my) + c2);
            let den = (mx * mx + my * my + c1) * (m.exx[i] - mx * mx + m.eyy[i] - my * my + c2);
            dst[i] += num / den * inv_c;
        }
    }
    Ok(out)
}

/// Given `grad_map = d loss / d ssim_map`, returns `(d loss / d a, d loss / d b)`.
pub fn ssim_map_backward<T: Real>(
    a: &Plane<T>,
    b: &Plane<T>,
    k: SsimConstants,
    grad_map: &Plane<T>,
) -> Result<(Plane<T>, Plane<T>)> {
    check(a, b)?;
    let (channels, h, w) = a.shape();
    grad_map.ensure_same_size(h, w, "ssim gradient")?;
    let n = h * w;
    let (c1, c2) = (T::lit(k.c1), T::lit(k.c2));
    let two = T::lit(2.0);
    let inv_c = T::lit(1.0 / channels as f64);
    let mut ga = Plane::zeros_like(a);
    let mut gb = Plane::zeros_like(b);
    let mut coef = [
        vec![T::zero(); n],
        vec![T::zero(); n],
        vec![T::zero(); n],
        vec![T::zero(); n],
        vec![T::zero(); n],
    ];
    let mut spread = vec![T::zero(); n];
    let g = grad_map.data();
    for c in 0..channels {
        let (av, bv) = (a.channel(c), b.channel(c));
        let m = moments(av, bv, h, w);
        for i in 0..n {
            let (mx, my) = (m.mx[i], m.my[i]);
            let n1 = two * mx * my + c1;
            let n2 = two * (m.exy[i] - mx * my) + c2;
            let d1 = mx * mx + my * my + c1;
            let d2 = m.exx[i] - mx * mx + m.eyy[i] - my * my + c2;
            let den = d1 * d2;
            let s = n1 * n2 / den;
            let up = g[i] * inv_c;
            // dS/dmx = (2my n2 - 2my n1) / den - s (2mx d2 - 2mx d1) / den
            coef[0][i] = up * (two * my * (n2 - n1) - s * two * mx * (d2 - d1)) / den;
            coef[1][i] = up * (two * mx * (n2 - n1) - s * two * my * (d2 - d1)) / den;
            // dS/dexx = dS/deyy = -s / d2 ; dS/dexy = 2 n1 / den
            coef[2][i] = -up * s / d2;
            coef[3][i] = -up * s / d2;
            coef[4][i] = up * two * n1 / den;
        }
        let gac = ga.channel_mut(c);
        box_mean_transpose(&coef[0], h, w, &mut spread);
        for i in 0..n {
            gac[i] += spread[i];
        }
        box_mean_transpose(&coef[2], h, w, &mut spread);
        for i in 0..n {
            gac[i] += two * av[i] * spread[i];
        }
        box_mean_transpose(&coef[4], h, w, &mut spread);
        for i in 0..n {
            gac[i] += bv[i] * spread[i];
        }
        let gbc = gb.channel_mut(c);
        for i in 0..n {
            gbc[i] += av[i] * spread[i];
        }
        box_mean_transpose(&coef[1], h, w, &mut spread);
        for i in 0..n {
            gbc[i] += spread[i];
        }
        box_mean_transpose(&coef[3], h, w, &mut spread);
        for i in 0..n {
            gbc[i] += two * bv[i] * spread[i];
        }
    }
    Ok((ga, gb))
}
