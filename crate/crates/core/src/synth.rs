//! Layered synthetic stereo scenes with analytic ground truth.
//!
//! A scene is a textured fronto-parallel background wall plus a few
//! fronto-parallel rectangles standing on an implicit ground plane. Every
//! layer has an integer pixel disparity `round(bf / D)` and its depth is
//! snapped to `bf / disparity`, so warping the right view by the ground truth
//! reproduces the left view exactly on un-occluded pixels.
//!
//! Appearance follows semantics: each class has its own palette, world-space
//! texture wavelength and physical size, so a monocular network can read
//! depth from apparent size, texture scale and ground contact height.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::TAU;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::CameraModel;
use crate::plane::{DisparityMap, ImagePlane, OcclusionMask, Plane, SemanticMap};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Object depth range in meters.
    pub object_depth: (f64, f64),
    /// Background wall depth range in meters.
    pub background_depth: (f64, f64),
    pub camera: CameraModel,
    /// Camera height above the ground plane, meters.
    pub camera_height: f64,
    /// Semantic classes including the background (class 0).
    pub classes: usize,
    /// Peak amplitude of the procedural texture.
    pub texture_contrast: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 128,
            min_objects: 1,
            max_objects: 4,
            object_depth: (2.5, 8.0),
            background_depth: (10.0, 10.0),
            camera: CameraModel::new(0.5, 80.0).expect("valid camera"),
            camera_height: 0.6,
            classes: 5,
            texture_contrast: 0.35,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(format!("scene: {msg}")));
        if self.height < 2 || self.width < 2 {
            return bad("image must be at least 2x2");
        }
        if self.min_objects > self.max_objects {
            return bad("min_objects exceeds max_objects");
        }
        if self.classes < 2 || self.classes > 256 {
            return bad("classes must be in 2..=256");
        }
        if self.max_objects > self.classes - 1 {
            return bad("every object needs its own non-background class");
        }
        for (name, (lo, hi)) in [
            ("object_depth", self.object_depth),
            ("background_depth", self.background_depth),
        ] {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(Error::InvalidConfig(format!("scene: {name} must be a positive range")));
            }
        }
        if self.background_depth.0 < self.object_depth.1 {
            return bad("background must lie behind every object");
        }
        if !(self.camera_height >= 0.0) || !(self.texture_contrast >= 0.0 && self.texture_contrast <= 0.5) {
            return bad("camera_height must be >= 0 and texture_contrast in [0, 0.5]");
        }
        let (dmin, dmax) = self.pixel_disparity_range(self.object_depth);
        if dmin < 1 || dmax >= self.width / 2 {
            return bad("object disparities must lie in [1, width / 2) pixels");
        }
        if self.pixel_disparity_range(self.background_depth).0 < 1 {
            return bad("background disparity rounds to zero pixels");
        }
        Ok(())
    }

    /// Integer pixel disparities reachable within a depth range.
    fn pixel_disparity_range(&self, depth: (f64, f64)) -> (usize, usize) {
        let bf = self.camera.bf();
        let lo = (bf / depth.1).ceil().max(0.0) as usize;
        let hi = (bf / depth.0).floor().max(0.0) as usize;
        (lo, hi.max(lo))
    }

    fn horizon(&self) -> f64 {
        self.height as f64 / 2.0
    }
}

/// Per-class appearance, derived deterministically from the class id.
#[derive(Clone, Copy, Debug)]
struct ClassStyle {
    color: [f64; 3],
    /// Texture wavelength in meters on the object surface.
    wavelength: f64,
    /// Physical width and height range in meters.
    size: (f64, f64),
    aspect: f64,
}

fn class_style(class: usize) -> ClassStyle {
    if class == 0 {
        return ClassStyle {
            color: [0.45, 0.5, 0.6],
            wavelength: 0.8,
            size: (0.0, 0.0),
            aspect: 1.0,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_c1a5 ^ class as u64);
    let hue = (class as f64 * 0.618_033_988_75).fract();
    let color = [0.0, 1.0 / 3.0, 2.0 / 3.0].map(|o| 0.5 + 0.3 * (TAU * (hue + o)).cos());
    let wavelength = 0.3 + 0.1 * (class % 4) as f64 + rng.random_range(0.0..0.05);
    let base = 0.6 + 0.15 * (class % 3) as f64;
    ClassStyle {
        color,
        wavelength,
        size: (base, base * 1.4),
        aspect: rng.random_range(0.7..1.6),
    }
}

/// Procedural texture of one layer in surface (meter) coordinates.
#[derive(Clone, Debug)]
struct Texture {
    color: [f64; 3],
    waves: Vec<Wave>,
    slope: [f64; 2],
}

#[derive(Clone, Copy, Debug)]
struct Wave {
    ku: f64,
    kv: f64,
    phase: f64,
    weight: [f64; 3],
}

impl Texture {
    /// Two oriented waves per octave over four octaves of the class
    /// wavelength, with amplitude falling for finer octaves.
    fn random(style: &ClassStyle, contrast: f64, rng: &mut ChaCha8Rng) -> Self {
        let octave_gain = [0.2, 0.26, 0.3, 0.34];
        let total: f64 = octave_gain.iter().sum::<f64>() * 2.0;
        let mut waves = Vec::with_capacity(8);
        for (octave, gain) in octave_gain.iter().enumerate() {
            for _ in 0..2 {
                let lambda = style.wavelength * (1u32 << octave) as f64 * rng.random_range(0.8..1.25);
                let angle = rng.random_range(0.0..TAU);
                let k = TAU / lambda;
                let amp = 2.0 * contrast * gain / total;
                waves.push(Wave {
                    ku: k * angle.cos(),
                    kv: k * angle.sin(),
                    phase: rng.random_range(0.0..TAU),
                    weight: [0; 3].map(|_| amp * rng.random_range(0.5..1.0)),
                });
            }
        }
        let jitter = [0; 3].map(|_| rng.random_range(-0.05..0.05));
        Self {
            color: [0, 1, 2].map(|c| style.color[c] + jitter[c]),
            waves,
            slope: [rng.random_range(-0.04..0.04), rng.random_range(-0.04..0.04)],
        }
    }

    fn sample(&self, u: f64, v: f64) -> [f64; 3] {
        let mut out = self.color;
        let ramp = self.slope[0] * u + self.slope[1] * v;
        for w in &self.waves {
            let s = (w.ku * u + w.kv * v + w.phase).sin();
            for c in 0..3 {
                out[c] += w.weight[c] * s;
            }
        }
        out.map(|c| (c + ramp).clamp(0.0, 1.0))
    }
}

/// One fronto-parallel layer; `x0..x1`, `y0..y1` are left-view pixel bounds.
#[derive(Clone, Debug)]
struct Layer {
    class: u8,
    shift: usize,
    depth: f64,
    x0: isize,
    x1: isize,
    y0: isize,
    y1: isize,
    texture: Texture,
}

impl Layer {
    fn covers_left(&self, x: isize, y: isize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    fn covers_right(&self, x: isize, y: isize) -> bool {
        self.covers_left(x + self.shift as isize, y)
    }

    /// Texture at left-view pixel column `x` (possibly outside the frame).
    fn color(&self, x: isize, y: isize, cfg: &SceneConfig) -> [f64; 3] {
        let scale = self.depth / cfg.camera.focal();
        let u = (x - self.x0) as f64 * scale;
        let v = (y as f64 - cfg.horizon()) * scale;
        self.texture.sample(u, v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StereoSample {
    pub left: ImagePlane<f32>,
    pub right: ImagePlane<f32>,
    pub disparity_left: DisparityMap<f32>,
    pub disparity_right: DisparityMap<f32>,
    pub semantic_left: SemanticMap,
    pub semantic_right: SemanticMap,
    /// 1 where the left pixel is visible in the right view.
    pub occlusion_left: OcclusionMask,
    /// 1 where the right pixel is visible in the left view.
    pub occlusion_right: OcclusionMask,
    pub camera: CameraModel,
}

impl StereoSample {
    /// Ground-truth left depth in meters.
    pub fn depth_left(&self) -> Plane<f64> {
        let bf = self.camera.bf();
        let w = self.left.width() as f64;
        self.disparity_left.as_plane().cast::<f64>().map(|d| bf / (d * w))
    }
}

fn build_layers(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Vec<Layer> {
    let (h, w) = (cfg.height as f64, cfg.width as f64);
    let bf = cfg.camera.bf();
    let f = cfg.camera.focal();
    let (bg_lo, bg_hi) = cfg.pixel_disparity_range(cfg.background_depth);
    let bg_shift = rng.random_range(bg_lo..=bg_hi);
    let bg_style = class_style(0);
    let mut layers = vec![Layer {
        class: 0,
        shift: bg_shift,
        depth: bf / bg_shift as f64,
        x0: 0,
        x1: isize::MAX / 4,
        y0: isize::MIN / 4,
        y1: isize::MAX / 4,
        texture: Texture::random(&bg_style, cfg.texture_contrast, rng),
    }];

    let count = rng.random_range(cfg.min_objects..=cfg.max_objects);
    let mut classes: Vec<u8> = (1..cfg.classes as u16).map(|c| c as u8).collect();
    let (d_lo, d_hi) = cfg.pixel_disparity_range(cfg.object_depth);
    for _ in 0..count {
        let class = classes.swap_remove(rng.random_range(0..classes.len()));
        let style = class_style(class as usize);
        let shift = rng.random_range(d_lo..=d_hi);
        let depth = bf / shift as f64;
        let width_m = rng.random_range(style.size.0..style.size.1);
        let height_m = width_m * style.aspect;
        let pw = ((f * width_m / depth).round() as isize).clamp(2, cfg.width as isize - shift as isize);
        let ph = ((f * height_m / depth).round() as isize).max(2);
        let bottom = (cfg.horizon() + f * cfg.camera_height / depth).round().min(h) as isize;
        let x_max = (w as isize - pw).max(shift as isize);
        let x0 = rng.random_range(shift as i64..=x_max as i64) as isize;
        layers.push(Layer {
            class,
            shift,
            depth,
            x0,
            x1: x0 + pw,
            y0: bottom - ph,
            y1: bottom,
            texture: Texture::random(&style, cfg.texture_contrast, rng),
        });
    }
    // Far to near; ties keep sampling order.
    layers.sort_by_key(|a| a.shift);
    layers
}

/// Images are stored at 8-bit precision so files reproduce them exactly.
fn quantize(v: f64) -> f32 {
    (v * 255.0).round() as u8 as f32 / 255.0
}

/// Index of the nearest layer covering a pixel.
fn owner(layers: &[Layer], x: isize, y: isize, right_view: bool) -> usize {
    layers
        .iter()
        .rposition(|l| {
            if right_view {
                l.covers_right(x, y)
            } else {
                l.covers_left(x, y)
            }
        })
        .expect("background covers every pixel")
}

/// Deterministic sample `index` of the scene distribution.
pub fn generate_sample(cfg: &SceneConfig, index: u64) -> Result<StereoSample> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let layers = build_layers(cfg, &mut rng);
    let (h, w) = (cfg.height, cfg.width);
    let n = h * w;
    let mut left = Plane::zeros(3, h, w);
    let mut right = Plane::zeros(3, h, w);
    let mut disp = [vec![0f32; n], vec![0f32; n]];
    let mut sem = [vec![0u8; n], vec![0u8; n]];
    let mut occ = [vec![0u8; n], vec![0u8; n]];
    let wf = w as f32;
    for y in 0..h {
        let yi = y as isize;
        for x in 0..w {
            let xi = x as isize;
            let i = y * w + x;

            let ol = owner(&layers, xi, yi, false);
            let layer = &layers[ol];
            let rgb = layer.color(xi, yi, cfg);
            for c in 0..3 {
                left.set(c, y, x, quantize(rgb[c]));
            }
            disp[0][i] = layer.shift as f32 / wf;
            sem[0][i] = layer.class;
            let xr = xi - layer.shift as isize;
            occ[0][i] = u8::from(xr >= 0 && owner(&layers, xr, yi, true) == ol);

            let or = owner(&layers, xi, yi, true);
            let layer = &layers[or];
            let xl = xi + layer.shift as isize;
            let rgb = layer.color(xl, yi, cfg);
            for c in 0..3 {
                right.set(c, y, x, quantize(rgb[c]));
            }
            disp[1][i] = layer.shift as f32 / wf;
            sem[1][i] = layer.class;
            occ[1][i] = u8::from(xl < w as isize && owner(&layers, xl, yi, false) == or);
        }
    }
    let [dl, dr] = disp;
    let [sl, sr] = sem;
    let [ol, or] = occ;
    Ok(StereoSample {
        left,
        right,
        disparity_left: DisparityMap::from_vec(h, w, dl)?,
        disparity_right: DisparityMap::from_vec(h, w, dr)?,
        semantic_left: SemanticMap::new(h, w, cfg.classes, sl)?,
        semantic_right: SemanticMap::new(h, w, cfg.classes, sr)?,
        occlusion_left: OcclusionMask::new(h, w, ol)?,
        occlusion_right: OcclusionMask::new(h, w, or)?,
        camera: cfg.camera,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{warp_image, WarpDirection};

    fn cfg() -> SceneConfig {
        SceneConfig {
            seed: 11,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn deterministic_per_index() {
        let a = generate_sample(&cfg(), 3).unwrap();
        let b = generate_sample(&cfg(), 3).unwrap();
        let c = generate_sample(&cfg(), 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.left, c.left);
    }

    #[test]
    fn zero_objects_gives_flat_wall() {
        let c = SceneConfig {
            min_objects: 0,
            max_objects: 0,
            ..cfg()
        };
        let s = generate_sample(&c, 0).unwrap();
        let shift = (c.camera.bf() / 10.0).round() as usize;
        assert!(s.disparity_left.data().iter().all(|&d| d == shift as f32 / 128.0));
        for y in 0..c.height {
            for x in 0..c.width {
                assert_eq!(s.occlusion_left.is_set(y, x), x >= shift);
            }
        }
    }

    #[test]
    fn round_trip_warp_is_exact_where_visible() {
        for idx in 0..5 {
            let s = generate_sample(&cfg(), idx).unwrap();
            let rec = warp_image(&s.right, &s.disparity_left, WarpDirection::LeftFromRight).unwrap();
            let rec_r = warp_image(&s.left, &s.disparity_right, WarpDirection::RightFromLeft).unwrap();
            for y in 0..64 {
                for x in 0..128 {
                    for c in 0..3 {
                        if s.occlusion_left.is_set(y, x) {
                            assert_eq!(rec.get(c, y, x), s.left.get(c, y, x));
                        }
                        if s.occlusion_right.is_set(y, x) {
                            assert_eq!(rec_r.get(c, y, x), s.right.get(c, y, x));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_degenerate_config() {
        let c = SceneConfig { width: 0, ..cfg() };
        assert!(generate_sample(&c, 0).is_err());
        let c = SceneConfig {
            max_objects: 5,
            ..cfg()
        };
        assert!(generate_sample(&c, 0).is_err());
    }
}
