//! Training-time augmentation: horizontal flip with view swap and
//! photometric jitter shared by both views.

use rand::Rng;

use crate::plane::ImagePlane;
use crate::real::Real;
use crate::synth::StereoSample;

/// One draw of augmentation parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub flip: bool,
    pub gamma: f64,
    pub brightness: f64,
    pub color: [f64; 3],
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self {
            flip: false,
            gamma: 1.0,
            brightness: 1.0,
            color: [1.0; 3],
        }
    }

    /// Flip with probability 0.5, gamma in [0.8, 1.2], brightness in
    /// [0.5, 2.0], per-channel color scale in [0.8, 1.2].
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, allow_flip: bool) -> Self {
        let flip = rng.random_bool(0.5) && allow_flip;
        Self {
            flip,
            gamma: rng.random_range(0.8..=1.2),
            brightness: rng.random_range(0.5..=2.0),
            color: [0; 3].map(|_| rng.random_range(0.8..=1.2)),
        }
    }

    pub fn is_photometric_identity(&self) -> bool {
        self.gamma == 1.0 && self.brightness == 1.0 && self.color == [1.0; 3]
    }

    /// `clamp(color_c * brightness * I^gamma, 0, 1)`.
    pub fn photometric<T: Real>(&self, image: &ImagePlane<T>) -> ImagePlane<T> {
        if self.is_photometric_identity() {
            return image.clone();
        }
        let mut out = image.clone();
        let gamma = T::lit(self.gamma);
        for c in 0..out.channels() {
            let s = T::lit(self.brightness * self.color[c % 3]);
            for v in out.channel_mut(c) {
                *v = (s * v.powf(gamma)).min(T::one()).max(T::zero());
            }
        }
        out
    }
}

/// Applies `p` to a stereo sample. Flipping mirrors both views and swaps
/// them, together with every per-view ground-truth map.
pub fn augment(sample: &StereoSample, p: &AugmentParams) -> StereoSample {
    let mut out = if p.flip {
        StereoSample {
            left: sample.right.flip_horizontal(),
            right: sample.left.flip_horizontal(),
            disparity_left: sample.disparity_right.flip_horizontal(),
            disparity_right: sample.disparity_left.flip_horizontal(),
            semantic_left: sample.semantic_right.flip_horizontal(),
            semantic_right: sample.semantic_left.flip_horizontal(),
            occlusion_left: sample.occlusion_right.flip_horizontal(),
            occlusion_right: sample.occlusion_left.flip_horizontal(),
            camera: sample.camera,
        }
    } else {
        sample.clone()
    };
    out.left = p.photometric(&out.left);
    out.right = p.photometric(&out.right);
    out
}

/// Draws parameters from `rng` and applies them.
pub fn augment_random<R: Rng + ?Sized>(sample: &StereoSample, rng: &mut R) -> (StereoSample, AugmentParams) {
    let p = AugmentParams::sample(rng, true);
    (augment(sample, &p), p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_sample, SceneConfig};
    use rand::SeedableRng;

    #[test]
    fn identity_is_noop() {
        let s = generate_sample(&SceneConfig::default(), 0).unwrap();
        assert_eq!(augment(&s, &AugmentParams::identity()), s);
    }

    #[test]
    fn double_flip_is_identity() {
        let s = generate_sample(&SceneConfig::default(), 1).unwrap();
        let p = AugmentParams {
            flip: true,
            ..AugmentParams::identity()
        };
        let once = augment(&s, &p);
        assert_eq!(once.left, s.right.flip_horizontal());
        assert_eq!(augment(&once, &p), s);
    }

    #[test]
    fn outputs_stay_in_unit_range() {
        let s = generate_sample(&SceneConfig::default(), 2).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..8 {
            let (a, p) = augment_random(&s, &mut rng);
            assert!((0.8..=1.2).contains(&p.gamma) && (0.5..=2.0).contains(&p.brightness));
            assert!(a
                .left
                .data()
                .iter()
                .chain(a.right.data())
                .all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
