//! Layer primitives with explicit backward passes.
//!
//! Activations are [`Plane`]s (channel-major); 3x3 convolutions run as
//! im2col followed by a GEMM.

use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::plane::Plane;
use crate::real::Real;

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

fn im2col<T: Real>(input: &[T], channels: usize, h: usize, w: usize, col: &mut [T]) {
    let hw = h * w;
    for ci in 0..channels {
        let src_plane = &input[ci * hw..(ci + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let r = (ci * TAPS + ky * KERNEL + kx) * hw;
                let dst = &mut col[r..r + hw];
                for y in 0..h {
                    let row = &mut dst[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        row.fill(T::zero());
                        continue;
                    }
                    let src = &src_plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            row[0] = T::zero();
                            row[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => row.copy_from_slice(src),
                        _ => {
                            row[..w - 1].copy_from_slice(&src[1..]);
                            row[w - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates column gradients back onto the input.
fn col2im<T: Real>(col: &[T], channels: usize, h: usize, w: usize, out: &mut [T]) {
    let hw = h * w;
    for ci in 0..channels {
        let dst_plane = &mut out[ci * hw..(ci + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let r = (ci * TAPS + ky * KERNEL + kx) * hw;
                let src = &col[r..r + hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let row = &src[y * w..(y + 1) * w];
                    let dst = &mut dst_plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            for x in 1..w {
                                dst[x - 1] += row[x];
                            }
                        }
                        1 => {
                            for x in 0..w {
                                dst[x] += row[x];
                            }
                        }
                        _ => {
                            for x in 0..w - 1 {
                                dst[x + 1] += row[x];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Same-size 3x3 convolution with zero padding. `weight` is laid out
/// `[out][in][ky][kx]`.
pub fn conv3x3<T: Real>(input: &Plane<T>, weight: &[T], bias: &[T]) -> Plane<T> {
    let (cin, h, w) = input.shape();
    let cout = bias.len();
    let k = cin * TAPS;
    assert_eq!(weight.len(), cout * k, "conv weight shape");
    let hw = h * w;
    let mut col = vec![T::zero(); k * hw];
    im2col(input.data(), cin, h, w, &mut col);
    let mut out = Plane::zeros(cout, h, w);
    {
        let o = out.data_mut();
        for (co, &b) in bias.iter().enumerate() {
            o[co * hw..(co + 1) * hw].fill(b);
        }
        T::gemm(cout, k, hw, T::one(), weight, false, &col, false, T::one(), o);
    }
    out
}

pub struct ConvGrad<T> {
    pub input: Option<Plane<T>>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub fn conv3x3_backward<T: Real>(
    input: &Plane<T>,
    weight: &[T],
    grad_out: &Plane<T>,
    need_input_grad: bool,
) -> ConvGrad<T> {
    let (cin, h, w) = input.shape();
    let cout = grad_out.channels();
    let k = cin * TAPS;
    let hw = h * w;
    let mut col = vec![T::zero(); k * hw];
    im2col(input.data(), cin, h, w, &mut col);
    let go = grad_out.data();
    let mut gw = vec![T::zero(); cout * k];
    T::gemm(cout, hw, k, T::one(), go, false, &col, true, T::zero(), &mut gw);
    let gb = (0..cout)
        .map(|co| go[co * hw..(co + 1) * hw].iter().copied().sum())
        .collect();
    let input_grad = need_input_grad.then(|| {
        T::gemm(k, cout, hw, T::one(), weight, true, go, false, T::zero(), &mut col);
        let mut gi = Plane::zeros(cin, h, w);
        col2im(&col, cin, h, w, gi.data_mut());
        gi
    });
    ConvGrad {
        input: input_grad,
        weight: gw,
        bias: gb,
    }
}

/// In-place ELU (alpha = 1).
pub fn elu<T: Real>(x: &mut Plane<T>) {
    for v in x.data_mut() {
        if *v <= T::zero() {
            *v = v.exp_m1();
        }
    }
}

/// Multiplies `grad` by the ELU derivative, recovered from the activation output.
pub fn elu_backward<T: Real>(output: &Plane<T>, grad: &mut Plane<T>) {
    for (g, &y) in grad.data_mut().iter_mut().zip(output.data()) {
        if y <= T::zero() {
            *g *= y + T::one();
        }
    }
}

/// 2x2 average pooling, stride 2 (even sizes required).
pub fn avg_pool2<T: Real>(x: &Plane<T>) -> Plane<T> {
    let (c, h, w) = x.shape();
    assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even sizes");
    let (oh, ow) = (h / 2, w / 2);
    let q = T::lit(0.25);
    Plane::from_fn(c, oh, ow, |ci, y, xx| {
        (x.get(ci, 2 * y, 2 * xx)
            + x.get(ci, 2 * y, 2 * xx + 1)
            + x.get(ci, 2 * y + 1, 2 * xx)
            + x.get(ci, 2 * y + 1, 2 * xx + 1))
            * q
    })
}

pub fn avg_pool2_backward<T: Real>(grad_out: &Plane<T>) -> Plane<T> {
    let (c, oh, ow) = grad_out.shape();
    let q = T::lit(0.25);
    Plane::from_fn(c, oh * 2, ow * 2, |ci, y, x| grad_out.get(ci, y / 2, x / 2) * q)
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample_nearest2<T: Real>(x: &Plane<T>) -> Plane<T> {
    let (c, h, w) = x.shape();
    Plane::from_fn(c, h * 2, w * 2, |ci, y, xx| x.get(ci, y / 2, xx / 2))
}

pub fn upsample_nearest2_backward<T: Real>(grad_out: &Plane<T>) -> Plane<T> {
    let (c, h, w) = grad_out.shape();
    Plane::from_fn(c, h / 2, w / 2, |ci, y, x| {
        grad_out.get(ci, 2 * y, 2 * x)
            + grad_out.get(ci, 2 * y, 2 * x + 1)
            + grad_out.get(ci, 2 * y + 1, 2 * x)
            + grad_out.get(ci, 2 * y + 1, 2 * x + 1)
    })
}

/// Half-pixel-centred linear interpolation taps for a 2x upsampling of `n` samples.
fn linear_taps<T: Real>(n: usize) -> Vec<(usize, usize, T)> {
    (0..2 * n)
        .map(|o| {
            let src = (o as f64 + 0.5) / 2.0 - 0.5;
            if src <= 0.0 {
                (0, 0, T::zero())
            } else {
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(n - 1);
                (i0, i1, T::lit(src - i0 as f64))
            }
        })
        .collect()
}

/// Bilinear 2x upsampling (half-pixel centres, edge clamped).
pub fn upsample_bilinear2<T: Real>(x: &Plane<T>) -> Plane<T> {
    let (c, h, w) = x.shape();
    let ty = linear_taps::<T>(h);
    let tx = linear_taps::<T>(w);
    // rows first
    let mut tmp = Plane::zeros(c, 2 * h, w);
    for ci in 0..c {
        for (oy, &(y0, y1, f)) in ty.iter().enumerate() {
            for xx in 0..w {
                let (a, b) = (x.get(ci, y0, xx), x.get(ci, y1, xx));
                tmp.set(ci, oy, xx, a + f * (b - a));
            }
        }
    }
    let mut out = Plane::zeros(c, 2 * h, 2 * w);
    for ci in 0..c {
        for oy in 0..2 * h {
            for (ox, &(x0, x1, f)) in tx.iter().enumerate() {
                let (a, b) = (tmp.get(ci, oy, x0), tmp.get(ci, oy, x1));
                out.set(ci, oy, ox, a + f * (b - a));
            }
        }
    }
    out
}

pub fn upsample_bilinear2_backward<T: Real>(grad_out: &Plane<T>) -> Plane<T> {
    let (c, oh, ow) = grad_out.shape();
    let (h, w) = (oh / 2, ow / 2);
    let ty = linear_taps::<T>(h);
    let tx = linear_taps::<T>(w);
    let mut tmp = Plane::<T>::zeros(c, oh, w);
    for ci in 0..c {
        for oy in 0..oh {
            for (ox, &(x0, x1, f)) in tx.iter().enumerate() {
                let g = grad_out.get(ci, oy, ox);
                let v0 = tmp.get(ci, oy, x0) + g * (T::one() - f);
                tmp.set(ci, oy, x0, v0);
                let v1 = tmp.get(ci, oy, x1) + g * f;
                tmp.set(ci, oy, x1, v1);
            }
        }
    }
    let mut out = Plane::zeros(c, h, w);
    for ci in 0..c {
        for (oy, &(y0, y1, f)) in ty.iter().enumerate() {
            for xx in 0..w {
                let g = tmp.get(ci, oy, xx);
                let v0 = out.get(ci, y0, xx) + g * (T::one() - f);
                out.set(ci, y0, xx, v0);
                let v1 = out.get(ci, y1, xx) + g * f;
                out.set(ci, y1, xx, v1);
            }
        }
    }
    out
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Splits a channel-concatenated gradient back into two parts.
pub fn split_channels<T: Real>(grad: &Plane<T>, first: usize) -> (Plane<T>, Plane<T>) {
    let (c, h, w) = grad.shape();
    let a = h * w * first;
    let head = Plane::new(first, h, w, grad.data()[..a].to_vec()).expect("split");
    let tail = Plane::new(c - first, h, w, grad.data()[a..].to_vec()).expect("split");
    (head, tail)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(input: &Plane<f64>, weight: &[f64], bias: &[f64]) -> Plane<f64> {
        let (cin, h, w) = input.shape();
        Plane::from_fn(bias.len(), h, w, |co, y, x| {
            let mut acc = bias[co];
            for ci in 0..cin {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let sy = y as isize + ky as isize - 1;
                        let sx = x as isize + kx as isize - 1;
                        if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                            acc +=
                                weight[((co * cin + ci) * 3 + ky) * 3 + kx] * input.get(ci, sy as usize, sx as usize);
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn conv_matches_direct_sum() {
        let input = Plane::from_fn(2, 4, 5, |c, y, x| ((c * 31 + y * 7 + x) as f64 * 0.61).sin());
        let weight: Vec<f64> = (0..3 * 2 * 9).map(|i| ((i as f64) * 0.37).cos()).collect();
        let bias = [0.1, -0.2, 0.3];
        let a = conv3x3(&input, &weight, &bias);
        let b = naive_conv(&input, &weight, &bias);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x) - b, g> = <x, conv^T g>  and  <W, dW> identity via linearity
        let input = Plane::from_fn(2, 4, 6, |c, y, x| ((c * 13 + y * 5 + x) as f64 * 0.41).sin());
        let weight: Vec<f64> = (0..3 * 2 * 9).map(|i| ((i as f64) * 0.23).sin()).collect();
        let bias = [0.0; 3];
        let g = Plane::from_fn(3, 4, 6, |c, y, x| ((c + 2 * y + 3 * x) as f64 * 0.7).cos());
        let out = conv3x3(&input, &weight, &bias);
        let lhs: f64 = out.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let back = conv3x3_backward(&input, &weight, &g, true);
        let gi = back.input.unwrap();
        let rhs: f64 = input.data().iter().zip(gi.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
        let rhs_w: f64 = weight.iter().zip(&back.weight).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs_w).abs() < 1e-10);
    }

    #[test]
    fn resampling_adjoints() {
        let x = Plane::from_fn(2, 4, 6, |c, y, xx| ((c * 3 + y * 11 + xx) as f64 * 0.3).sin());
        let g8 = Plane::from_fn(2, 8, 12, |c, y, xx| ((c + y * 2 + xx * 5) as f64 * 0.17).cos());
        let dot = |a: &Plane<f64>, b: &Plane<f64>| a.data().iter().zip(b.data()).map(|(p, q)| p * q).sum::<f64>();
        let up = upsample_bilinear2(&x);
        assert!((dot(&up, &g8) - dot(&x, &upsample_bilinear2_backward(&g8))).abs() < 1e-12);
        let upn = upsample_nearest2(&x);
        assert!((dot(&upn, &g8) - dot(&x, &upsample_nearest2_backward(&g8))).abs() < 1e-12);
        let pooled = avg_pool2(&g8);
        assert!((dot(&pooled, &x) - dot(&g8, &avg_pool2_backward(&x))).abs() < 1e-12);
    }

    #[test]
    fn bilinear_upsample_preserves_constants_and_ramps() {
        let c = Plane::<f64>::filled(1, 3, 3, 0.7);
        assert!(upsample_bilinear2(&c).data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
        let ramp = Plane::<f64>::from_fn(1, 1, 4, |_, _, x| x as f64);
        let up = upsample_bilinear2(&ramp);
        assert_eq!(&up.data()[..8], &[0.0, 0.25, 0.75, 1.25, 1.75, 2.25, 2.75, 3.0]);
    }
}
