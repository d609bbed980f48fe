//! Dense planar containers: images, disparity maps, masks and label maps.
//!
//! Planes are stored channel-major (`c, y, x`), which is the layout the
//! convolution kernels consume directly.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Deref;

use crate::error::{Error, Result, Shape};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Plane<T> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

/// An RGB (or any multi-channel) image with values nominally in `[0, 1]`.
pub type ImagePlane<T> = Plane<T>;

/// Per-pixel class scores, one channel per class.
pub type ClassLogits<T> = Plane<T>;

impl<T: Real> Plane<T> {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 || data.len() != channels * height * width {
            return Err(Error::InvalidDimensions {
                channels,
                height,
                width,
                len: data.len(),
            });
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: T) -> Self {
        assert!(channels > 0 && height > 0 && width > 0, "empty plane");
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, T::zero())
    }

    pub fn zeros_like(other: &Self) -> Self {
        Self::zeros(other.channels, other.height, other.width)
    }

    /// Builds a plane from `f(c, y, x)`.
    pub fn from_fn(channels: usize, height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut p = Self::zeros(channels, height, width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    p.data[(c * height + y) * width + x] = f(c, y, x);
                }
            }
        }
        p
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        (self.channels, self.height, self.width)
    }

    /// Pixels per channel.
    #[inline]
    pub fn area(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: T) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    #[inline]
    pub fn channel(&self, c: usize) -> &[T] {
        let a = self.area();
        &self.data[c * a..(c + 1) * a]
    }

    #[inline]
    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let a = self.area();
        &mut self.data[c * a..(c + 1) * a]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> T {
        self.data.iter().copied().sum::<T>() / T::lit(self.data.len() as f64)
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Self, scale: T) {
        assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: T) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// Mirrors every row (`x -> width - 1 - x`).
    pub fn flip_horizontal(&self) -> Self {
        let w = self.width;
        let mut out = self.clone();
        for (dst, src) in out.data.chunks_mut(w).zip(self.data.chunks(w)) {
            for (x, v) in dst.iter_mut().enumerate() {
                *v = src[w - 1 - x];
            }
        }
        out
    }

    /// Stacks planes of equal height/width along the channel axis.
    pub fn concat(planes: &[&Self]) -> Result<Self> {
        let first = planes.first().ok_or(Error::InvalidDimensions {
            channels: 0,
            height: 0,
            width: 0,
            len: 0,
        })?;
        let (h, w) = (first.height, first.width);
        let mut data = Vec::new();
        let mut channels = 0;
        for p in planes {
            if p.height != h || p.width != w {
                return Err(Error::ShapeMismatch {
                    what: "concat",
                    expected: (p.channels, h, w),
                    found: p.shape(),
                });
            }
            channels += p.channels;
            data.extend_from_slice(&p.data);
        }
        Self::new(channels, h, w, data)
    }

    /// Converts element type (e.g. training in f32, checking in f64).
    pub fn cast<U: Real>(&self) -> Plane<U> {
        Plane {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub(crate) fn ensure_same_shape(&self, other: &Self, what: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                what,
                expected: self.shape(),
                found: other.shape(),
            });
        }
        Ok(())
    }

    pub(crate) fn ensure_same_size(&self, height: usize, width: usize, what: &'static str) -> Result<()> {
        if self.height != height || self.width != width {
            return Err(Error::ShapeMismatch {
                what,
                expected: (self.channels, height, width),
                found: self.shape(),
            });
        }
        Ok(())
    }
}

/// Single-channel disparity in units of image width (pixel shift = value x width).
#[derive(Clone, Debug, PartialEq)]
pub struct DisparityMap<T>(Plane<T>);

impl<T: Real> DisparityMap<T> {
    pub fn new(plane: Plane<T>) -> Result<Self> {
        if plane.channels != 1 {
            return Err(Error::ShapeMismatch {
                what: "disparity map",
                expected: (1, plane.height, plane.width),
                found: plane.shape(),
            });
        }
        if !plane.is_finite() {
            return Err(Error::NonFinite("disparity map"));
        }
        Ok(Self(plane))
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        Self::new(Plane::new(1, height, width, data)?)
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self(Plane::filled(1, height, width, value))
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        Self(Plane::from_fn(1, height, width, |_, y, x| f(y, x)))
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> T {
        self.0.data[y * self.0.width + x]
    }

    pub fn as_plane(&self) -> &Plane<T> {
        &self.0
    }

    pub fn into_plane(self) -> Plane<T> {
        self.0
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.0.data
    }

    pub fn flip_horizontal(&self) -> Self {
        Self(self.0.flip_horizontal())
    }

    pub fn cast<U: Real>(&self) -> DisparityMap<U> {
        DisparityMap(self.0.cast())
    }
}

impl<T> Deref for DisparityMap<T> {
    type Target = Plane<T>;

    fn deref(&self) -> &Plane<T> {
        &self.0
    }
}

/// Binary per-pixel mask: 1 = reconstructable, 0 = occluded or difficult.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct OcclusionMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl OcclusionMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::InvalidDimensions {
                channels: 1,
                height,
                width,
                len: data.len(),
            });
        }
        if let Some(&v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::OutOfRange {
                name: "occlusion mask value",
                value: v as f64,
            });
        }
        Ok(Self { height, width, data })
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![1; height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x) as u8);
            }
        }
        Self { height, width, data }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn is_set(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn set(&mut self, y: usize, x: usize, value: bool) {
        self.data[y * self.width + x] = value as u8;
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Fraction of pixels on which two masks agree.
    pub fn agreement(&self, other: &Self) -> f64 {
        assert_eq!((self.height, self.width), (other.height, other.width));
        let same = self.data.iter().zip(&other.data).filter(|(a, b)| a == b).count();
        same as f64 / self.data.len() as f64
    }

    pub fn flip_horizontal(&self) -> Self {
        let w = self.width;
        let mut out = self.clone();
        for (dst, src) in out.data.chunks_mut(w).zip(self.data.chunks(w)) {
            for (x, v) in dst.iter_mut().enumerate() {
                *v = src[w - 1 - x];
            }
        }
        out
    }
}

/// Integer class identifiers in `[0, classes)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SemanticMap {
    height: usize,
    width: usize,
    classes: usize,
    labels: Vec<u8>,
}

impl SemanticMap {
    pub fn new(height: usize, width: usize, classes: usize, labels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || labels.len() != height * width {
            return Err(Error::InvalidDimensions {
                channels: 1,
                height,
                width,
                len: labels.len(),
            });
        }
        if classes == 0 || classes > 256 {
            return Err(Error::OutOfRange {
                name: "class count",
                value: classes as f64,
            });
        }
        if let Some(&id) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::InvalidClass {
                id: id as usize,
                classes,
            });
        }
        Ok(Self {
            height,
            width,
            classes,
            labels,
        })
    }

    pub fn uniform(height: usize, width: usize, classes: usize, class: u8) -> Result<Self> {
        Self::new(height, width, classes, vec![class; height * width])
    }

    /// Per-pixel argmax over class scores (ties resolve to the lowest id).
    pub fn argmax<T: Real>(logits: &Plane<T>) -> Self {
        let (k, h, w) = logits.shape();
        let area = h * w;
        let data = logits.data();
        let labels = (0..area)
            .map(|p| {
                let mut best = 0;
                for c in 1..k {
                    if data[c * area + p] > data[best * area + p] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect();
        Self {
            height: h,
            width: w,
            classes: k,
            labels,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn flip_horizontal(&self) -> Self {
        let w = self.width;
        let mut out = self.clone();
        for (dst, src) in out.labels.chunks_mut(w).zip(self.labels.chunks(w)) {
            for (x, v) in dst.iter_mut().enumerate() {
                *v = src[w - 1 - x];
            }
        }
        out
    }

    /// Fraction of pixels with equal labels.
    pub fn accuracy(&self, other: &Self) -> f64 {
        assert_eq!((self.height, self.width), (other.height, other.width));
        let same = self.labels.iter().zip(&other.labels).filter(|(a, b)| a == b).count();
        same as f64 / self.labels.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_dimensions() {
        assert!(Plane::<f64>::new(1, 2, 2, vec![0.0; 3]).is_err());
        assert!(Plane::<f64>::new(0, 2, 2, vec![]).is_err());
        assert!(DisparityMap::<f64>::new(Plane::zeros(2, 2, 2)).is_err());
        assert!(DisparityMap::<f64>::from_vec(1, 2, vec![0.1, f64::NAN]).is_err());
    }

    #[test]
    fn mask_and_labels_validate_values() {
        assert!(OcclusionMask::new(1, 2, vec![0, 2]).is_err());
        assert_eq!(
            SemanticMap::new(1, 2, 3, vec![0, 3]),
            Err(Error::InvalidClass { id: 3, classes: 3 })
        );
    }

    #[test]
    fn flip_is_involution() {
        let p: Plane<f64> = Plane::from_fn(2, 3, 4, |c, y, x| (c * 100 + y * 10 + x) as f64);
        assert_eq!(p.flip_horizontal().get(1, 2, 0), 123.0);
        assert_eq!(p.flip_horizontal().flip_horizontal(), p);
    }

    #[test]
    fn argmax_prefers_lowest_id_on_ties() {
        let logits = Plane::new(3, 1, 2, vec![1.0, 0.0, 1.0, 2.0, 0.5, 2.0]).unwrap();
        assert_eq!(SemanticMap::argmax(&logits).labels(), &[0, 1]);
    }
}
