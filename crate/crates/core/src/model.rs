//! Miniature task-conditioned encoder-decoder.
//!
//! Trunk: a full-resolution stem, then three encoder levels at 1/2, 1/4 and
//! 1/8 resolution (2x2 average pooling in between, two convolutions per
//! level), and a decoder that climbs back to 1/2 resolution, concatenating
//! the encoder skip at each level. Heads are 3x3 convolutions at 1/2
//! resolution whose outputs are bilinearly upsampled to full resolution.
//! Every hidden layer uses ELU; there is no normalization.
//!
//! The teacher sees `(I_l, I_r, c)` stacked as 7 planes and carries three heads: segmentation scores, left disparity and right
//! disparity. The student sees a single RGB image and keeps only the last
//! (right-disparity) head.
//!
//! Parameter-free matching-cost planes computed from the two image slots
//! enter the teacher through a separate 3x3 convolution added to the stem
//! pre-activation.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::geometry::WarpDirection;
use crate::nn::{
    avg_pool2, avg_pool2_backward, conv3x3, conv3x3_backward, elu, elu_backward, sigmoid, split_channels,
    upsample_bilinear2, upsample_bilinear2_backward, upsample_nearest2, upsample_nearest2_backward, KERNEL,
};
use crate::plane::{ClassLogits, DisparityMap, ImagePlane, Plane};
use crate::real::Real;

/// Lower bound added to disparity outputs so depth stays finite.
pub const DISPARITY_EPS: f64 = 1e-4;

/// Image channels per view.
pub const IMAGE_CHANNELS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArchConfig {
    /// Channel widths of the 1/2, 1/4 and 1/8 levels (the stem uses the first).
    pub widths: [usize; 3],
    /// Semantic classes predicted by the teacher's segmentation head.
    pub classes: usize,
    /// Upper bound of predicted disparities (fraction of image width).
    pub d_max: f64,
    /// Disparity produced by the freshly initialized heads.
    pub init_disparity: f64,
    /// Pixel shifts `0..cost_shifts` of the teacher's matching-cost planes
    /// (per reference view); 0 disables them.
    pub cost_shifts: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            widths: [16, 32, 64],
            classes: 5,
            d_max: 0.3,
            init_disparity: 0.05,
            cost_shifts: 18,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.contains(&0) {
            return Err(Error::InvalidConfig(String::from("channel widths must be positive")));
        }
        if self.classes < 2 || self.classes > 256 {
            return Err(Error::OutOfRange {
                name: "classes",
                value: self.classes as f64,
            });
        }
        if !(self.d_max > DISPARITY_EPS && self.d_max <= 1.0) {
            return Err(Error::OutOfRange {
                name: "d_max",
                value: self.d_max,
            });
        }
        if !(self.init_disparity > DISPARITY_EPS && self.init_disparity < self.d_max) {
            return Err(Error::OutOfRange {
                name: "init_disparity",
                value: self.init_disparity,
            });
        }
        Ok(())
    }
}

/// Constant input plane selecting the teacher's task: 0 = segmentation, 1 = depth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TaskLabel {
    Segmentation,
    Depth,
}

impl TaskLabel {
    pub fn plane_value(self) -> f64 {
        match self {
            TaskLabel::Segmentation => 0.0,
            TaskLabel::Depth => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NetworkKind {
    Teacher,
    Student,
}

impl NetworkKind {
    /// Planes entering the stem: the teacher stacks both views and the task plane.
    pub fn input_channels(self) -> usize {
        match self {
            NetworkKind::Teacher => 2 * IMAGE_CHANNELS + 1,
            NetworkKind::Student => IMAGE_CHANNELS,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NetworkKind::Teacher => "teacher",
            NetworkKind::Student => "student",
        }
    }
}

/// One 3x3 convolution layer of the architecture.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: &'static str,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl LayerSpec {
    pub fn parameter_count(&self) -> usize {
        self.out_channels * (self.in_channels * KERNEL * KERNEL + 1)
    }
}

const STEM: usize = 0;
const ENC1A: usize = 1;
const ENC1B: usize = 2;
const ENC2A: usize = 3;
const ENC2B: usize = 4;
const ENC3A: usize = 5;
const ENC3B: usize = 6;
const DEC2: usize = 7;
const DEC1: usize = 8;
const TRUNK_LAYERS: usize = 9;

/// Input height and width must be multiples of this.
pub const SIZE_MULTIPLE: usize = 8;

pub const COST: &str = "cost";
pub const HEAD_SEG: &str = "head.seg";
pub const HEAD_LEFT: &str = "head.left";
pub const HEAD_RIGHT: &str = "head.right";

pub fn layer_specs(kind: NetworkKind, arch: &ArchConfig) -> Vec<LayerSpec> {
    let [w1, w2, w3] = arch.widths;
    let layer = |name, in_channels, out_channels| LayerSpec {
        name,
        in_channels,
        out_channels,
    };
    let mut specs = vec![
        layer("stem", kind.input_channels(), w1),
        layer("enc1a", w1, w1),
        layer("enc1b", w1, w1),
        layer("enc2a", w1, w2),
        layer("enc2b", w2, w2),
        layer("enc3a", w2, w3),
        layer("enc3b", w3, w3),
        layer("dec2", w3 + w2, w2),
        layer("dec1", w2 + w1, w1),
    ];
    if kind == NetworkKind::Teacher {
        if arch.cost_shifts > 0 {
            specs.push(layer(COST, 2 * arch.cost_shifts, w1));
        }
        specs.push(layer(HEAD_SEG, w1, arch.classes));
        specs.push(layer(HEAD_LEFT, w1, 1));
    }
    specs.push(layer(HEAD_RIGHT, w1, 1));
    specs
}

/// Total trainable scalars: sum over layers of `out * (in * 9 + 1)`.
pub fn parameter_count(kind: NetworkKind, arch: &ArchConfig) -> usize {
    layer_specs(kind, arch).iter().map(LayerSpec::parameter_count).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// Named weight arrays of one network, in layer order (`weight`, `bias` per layer).
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParameters<T> {
    kind: NetworkKind,
    arch: ArchConfig,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> NetworkParameters<T> {
    /// Rebuilds parameters from stored tensors, checking names and shapes
    /// against the architecture.
    pub fn from_tensors(kind: NetworkKind, arch: ArchConfig, tensors: Vec<Tensor<T>>) -> Result<Self> {
        arch.validate()?;
        let expected = Self::zeros(kind, arch);
        if expected.tensors.len() != tensors.len() {
            return Err(Error::ParameterMismatch(format!(
                "expected {} tensors, found {}",
                expected.tensors.len(),
                tensors.len()
            )));
        }
        for (e, t) in expected.tensors.iter().zip(&tensors) {
            if e.name != t.name || e.shape != t.shape || t.data.len() != e.data.len() {
                return Err(Error::ParameterMismatch(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    t.name, t.shape, e.name, e.shape
                )));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("network parameters"));
            }
        }
        Ok(Self { kind, arch, tensors })
    }

    pub fn zeros(kind: NetworkKind, arch: ArchConfig) -> Self {
        let mut tensors = Vec::new();
        for spec in layer_specs(kind, &arch) {
            tensors.push(Tensor {
                name: format!("{}.weight", spec.name),
                shape: vec![spec.out_channels, spec.in_channels, KERNEL, KERNEL],
                data: vec![T::zero(); spec.out_channels * spec.in_channels * KERNEL * KERNEL],
            });
            tensors.push(Tensor {
                name: format!("{}.bias", spec.name),
                shape: vec![spec.out_channels],
                data: vec![T::zero(); spec.out_channels],
            });
        }
        Self { kind, arch, tensors }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.kind, self.arch)
    }

    pub fn kind(&self) -> NetworkKind {
        self.kind
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Self, scale: T) {
        assert_eq!(self.tensors.len(), other.tensors.len());
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, &y) in a.data.iter_mut().zip(&b.data) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for t in &mut self.tensors {
            for v in &mut t.data {
                *v *= s;
            }
        }
    }

    pub fn cast<U: Real>(&self) -> NetworkParameters<U> {
        NetworkParameters {
            kind: self.kind,
            arch: self.arch,
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|v| U::lit(v.as_f64())).collect(),
                })
                .collect(),
        }
    }

    fn layer_index(&self, name: &str) -> usize {
        layer_specs(self.kind, &self.arch)
            .iter()
            .position(|s| s.name == name)
            .unwrap_or_else(|| panic!("{} has no layer {name}", self.kind.name()))
    }

    fn conv(&self, layer: usize, input: &Plane<T>) -> Plane<T> {
        conv3x3(input, &self.tensors[2 * layer].data, &self.tensors[2 * layer + 1].data)
    }

    fn conv_elu(&self, layer: usize, input: &Plane<T>) -> Plane<T> {
        let mut out = self.conv(layer, input);
        elu(&mut out);
        out
    }

    /// Accumulates a layer's gradients into `grads` and returns d/d input.
    fn conv_backward(
        &self,
        layer: usize,
        input: &Plane<T>,
        grad_out: &Plane<T>,
        grads: &mut Self,
        need_input: bool,
    ) -> Option<Plane<T>> {
        let g = conv3x3_backward(input, &self.tensors[2 * layer].data, grad_out, need_input);
        for (a, b) in grads.tensors[2 * layer].data.iter_mut().zip(&g.weight) {
            *a += *b;
        }
        for (a, b) in grads.tensors[2 * layer + 1].data.iter_mut().zip(&g.bias) {
            *a += *b;
        }
        g.input
    }
}

/// Deterministic initialization: uniform LeCun-scaled weights, zero biases,
/// down-scaled disparity heads biased to `arch.init_disparity`.
pub fn init_parameters<T: Real>(seed: u64, kind: NetworkKind, arch: &ArchConfig) -> Result<NetworkParameters<T>> {
    arch.validate()?;
    let mut params = NetworkParameters::<T>::zeros(kind, *arch);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs = layer_specs(kind, arch);
    let init_logit = {
        let s = (arch.init_disparity - DISPARITY_EPS) / (arch.d_max - DISPARITY_EPS);
        (s / (1.0 - s)).ln()
    };
    for (i, spec) in specs.iter().enumerate() {
        let fan_in = (spec.in_channels * KERNEL * KERNEL) as f64;
        let is_disp_head = spec.name == HEAD_LEFT || spec.name == HEAD_RIGHT;
        let bound = (3.0 / fan_in).sqrt() * if is_disp_head { 0.1 } else { 1.0 };
        for v in &mut params.tensors[2 * i].data {
            *v = T::lit(rng.random_range(-bound..bound));
        }
        if is_disp_head {
            params.tensors[2 * i + 1].data.fill(T::lit(init_logit));
        }
    }
    Ok(params)
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    input: Plane<T>,
    cost: Option<(usize, Plane<T>)>,
    stem: Plane<T>,
    pool0: Plane<T>,
    enc1a: Plane<T>,
    enc1b: Plane<T>,
    pool1: Plane<T>,
    enc2a: Plane<T>,
    enc2b: Plane<T>,
    pool2: Plane<T>,
    enc3a: Plane<T>,
    enc3b: Plane<T>,
    cat2: Plane<T>,
    dec2: Plane<T>,
    cat1: Plane<T>,
    /// Decoder output feeding every head.
    top: Plane<T>,
    /// Sigmoid activations of the disparity heads, by layer index.
    disparity_gates: Vec<(usize, Plane<T>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TeacherOutput<T> {
    Depth {
        left: DisparityMap<T>,
        right: DisparityMap<T>,
    },
    Segmentation(ClassLogits<T>),
}

/// Upstream gradients for the heads that produced a forward pass.
#[derive(Clone, Copy, Debug)]
pub enum OutputGrad<'a, T> {
    Depth { left: &'a Plane<T>, right: &'a Plane<T> },
    Segmentation(&'a Plane<T>),
    Student(&'a Plane<T>),
}

fn check_image<T: Real>(image: &Plane<T>, what: &'static str) -> Result<()> {
    if image.channels() != IMAGE_CHANNELS {
        return Err(Error::ShapeMismatch {
            what,
            expected: (IMAGE_CHANNELS, image.height(), image.width()),
            found: image.shape(),
        });
    }
    let m = SIZE_MULTIPLE;
    if !image.height().is_multiple_of(m) || !image.width().is_multiple_of(m) || image.height() < m || image.width() < m
    {
        return Err(Error::InvalidConfig(format!(
            "{what}: {}x{} is not a positive multiple of {m}",
            image.height(),
            image.width()
        )));
    }
    if !image.is_finite() {
        return Err(Error::NonFinite(what));
    }
    Ok(())
}

fn trunk<T: Real>(params: &NetworkParameters<T>, input: Plane<T>, cost: Option<Plane<T>>) -> ForwardCache<T> {
    let mut stem = params.conv(STEM, &input);
    let cost = cost.map(|c| {
        let layer = params.layer_index(COST);
        stem.add_scaled(&params.conv(layer, &c), T::one());
        (layer, c)
    });
    elu(&mut stem);
    let pool0 = avg_pool2(&stem);
    let enc1a = params.conv_elu(ENC1A, &pool0);
    let enc1b = params.conv_elu(ENC1B, &enc1a);
    let pool1 = avg_pool2(&enc1b);
    let enc2a = params.conv_elu(ENC2A, &pool1);
    let enc2b = params.conv_elu(ENC2B, &enc2a);
    let pool2 = avg_pool2(&enc2b);
    let enc3a = params.conv_elu(ENC3A, &pool2);
    let enc3b = params.conv_elu(ENC3B, &enc3a);
    let cat2 = Plane::concat(&[&upsample_nearest2(&enc3b), &enc2b]).expect("decoder skip sizes");
    let dec2 = params.conv_elu(DEC2, &cat2);
    let cat1 = Plane::concat(&[&upsample_nearest2(&dec2), &enc1b]).expect("decoder skip sizes");
    let top = params.conv_elu(DEC1, &cat1);
    ForwardCache {
        input,
        cost,
        stem,
        pool0,
        enc1a,
        enc1b,
        pool1,
        enc2a,
        enc2b,
        pool2,
        enc3a,
        enc3b,
        cat2,
        dec2,
        cat1,
        top,
        disparity_gates: Vec::new(),
    }
}

fn disparity_head<T: Real>(
    params: &NetworkParameters<T>,
    cache: &mut ForwardCache<T>,
    layer: usize,
) -> DisparityMap<T> {
    let raw = upsample_bilinear2(&params.conv(layer, &cache.top));
    let gate = raw.map(sigmoid);
    let eps = T::lit(DISPARITY_EPS);
    let span = T::lit(params.arch.d_max) - eps;
    let d = gate.map(|s| span * s + eps);
    cache.disparity_gates.push((layer, gate));
    DisparityMap::new(d).expect("bounded activation is finite")
}

fn teacher_input<T: Real>(
    i_l: &ImagePlane<T>,
    i_r: &ImagePlane<T>,
    task: TaskLabel,
    shifts: usize,
) -> Result<(Plane<T>, Option<Plane<T>>)> {
    check_image(i_l, "left image")?;
    if shifts >= i_l.width() {
        return Err(Error::InvalidConfig(format!(
            "cost_shifts {shifts} must be below the image width {}",
            i_l.width()
        )));
    }
    let second = match task {
        TaskLabel::Depth => {
            check_image(i_r, "right image")?;
            i_l.ensure_same_shape(i_r, "stereo views")?;
            i_r
        }
        TaskLabel::Segmentation => i_l,
    };
    let label = Plane::filled(1, i_l.height(), i_l.width(), T::lit(task.plane_value()));
    let input = Plane::concat(&[i_l, second, &label])?;
    if shifts == 0 {
        return Ok((input, None));
    }
    let left_cost = matching_cost(i_l, second, shifts, WarpDirection::LeftFromRight);
    let right_cost = matching_cost(second, i_l, shifts, WarpDirection::RightFromLeft);
    Ok((input, Some(Plane::concat(&[&left_cost, &right_cost])?)))
}

/// Plane `k` holds the channel-mean absolute difference between `reference`
/// and `other` shifted by `k` pixels along the epipolar direction, with the
/// shifted coordinate clamped to the border.
pub fn matching_cost<T: Real>(
    reference: &ImagePlane<T>,
    other: &ImagePlane<T>,
    shifts: usize,
    direction: WarpDirection,
) -> Plane<T> {
    let (c, h, w) = reference.shape();
    let norm = T::lit(1.0 / c as f64);
    let mut out = Plane::zeros(shifts, h, w);
    for k in 0..shifts {
        for y in 0..h {
            for x in 0..w {
                let xs = match direction {
                    WarpDirection::LeftFromRight => x.saturating_sub(k),
                    WarpDirection::RightFromLeft => (x + k).min(w - 1),
                };
                let mut acc = T::zero();
                for ch in 0..c {
                    acc += (reference.get(ch, y, x) - other.get(ch, y, xs)).abs();
                }
                out.set(k, y, x, acc * norm);
            }
        }
    }
    out
}

/// Teacher prediction for the given task. For segmentation the right image
/// slot carries a copy of `i_l` and `i_r` is ignored.
pub fn teacher_forward<T: Real>(
    params: &NetworkParameters<T>,
    i_l: &ImagePlane<T>,
    i_r: &ImagePlane<T>,
    task: TaskLabel,
) -> Result<TeacherOutput<T>> {
    Ok(teacher_forward_cached(params, i_l, i_r, task)?.0)
}

pub fn teacher_forward_cached<T: Real>(
    params: &NetworkParameters<T>,
    i_l: &ImagePlane<T>,
    i_r: &ImagePlane<T>,
    task: TaskLabel,
) -> Result<(TeacherOutput<T>, ForwardCache<T>)> {
    if params.kind != NetworkKind::Teacher {
        return Err(Error::ParameterMismatch(String::from(
            "teacher forward needs teacher parameters",
        )));
    }
    let (input, cost) = teacher_input(i_l, i_r, task, params.arch.cost_shifts)?;
    let mut cache = trunk(params, input, cost);
    let out = match task {
        TaskLabel::Depth => {
            let left = disparity_head(params, &mut cache, params.layer_index(HEAD_LEFT));
            let right = disparity_head(params, &mut cache, params.layer_index(HEAD_RIGHT));
            TeacherOutput::Depth { left, right }
        }
        TaskLabel::Segmentation => {
            let seg = params.layer_index(HEAD_SEG);
            TeacherOutput::Segmentation(upsample_bilinear2(&params.conv(seg, &cache.top)))
        }
    };
    Ok((out, cache))
}

/// Monocular disparity of `image` (same resolution as the input).
pub fn student_forward<T: Real>(params: &NetworkParameters<T>, image: &ImagePlane<T>) -> Result<DisparityMap<T>> {
    Ok(student_forward_cached(params, image)?.0)
}

pub fn student_forward_cached<T: Real>(
    params: &NetworkParameters<T>,
    image: &ImagePlane<T>,
) -> Result<(DisparityMap<T>, ForwardCache<T>)> {
    if params.kind != NetworkKind::Student {
        return Err(Error::ParameterMismatch(String::from(
            "student forward needs student parameters",
        )));
    }
    check_image(image, "student image")?;
    let mut cache = trunk(params, image.clone(), None);
    let d = disparity_head(params, &mut cache, params.layer_index(HEAD_RIGHT));
    Ok((d, cache))
}

/// Back-propagates head gradients through the network; returns parameter gradients.
pub fn backward<T: Real>(
    params: &NetworkParameters<T>,
    cache: &ForwardCache<T>,
    grad: OutputGrad<'_, T>,
) -> Result<NetworkParameters<T>> {
    let mut grads = params.zeros_like();
    let mut g_top = Plane::zeros_like(&cache.top);
    let span = T::lit(params.arch.d_max - DISPARITY_EPS);

    let mut disparity_head_back = |layer: usize, g_out: &Plane<T>, grads: &mut NetworkParameters<T>| -> Result<()> {
        let gate = cache
            .disparity_gates
            .iter()
            .find(|(l, _)| *l == layer)
            .map(|(_, g)| g)
            .ok_or_else(|| Error::ParameterMismatch(String::from("gradient for a head that did not run")))?;
        gate.ensure_same_shape(g_out, "disparity head gradient")?;
        let mut g_raw = g_out.clone();
        for (g, &s) in g_raw.data_mut().iter_mut().zip(gate.data()) {
            *g *= span * s * (T::one() - s);
        }
        let g_half = upsample_bilinear2_backward(&g_raw);
        let gi = params
            .conv_backward(layer, &cache.top, &g_half, grads, true)
            .expect("input grad");
        g_top.add_scaled(&gi, T::one());
        Ok(())
    };

    match (params.kind, grad) {
        (NetworkKind::Teacher, OutputGrad::Depth { left, right }) => {
            disparity_head_back(params.layer_index(HEAD_LEFT), left, &mut grads)?;
            disparity_head_back(params.layer_index(HEAD_RIGHT), right, &mut grads)?;
        }
        (NetworkKind::Student, OutputGrad::Student(g)) => {
            disparity_head_back(params.layer_index(HEAD_RIGHT), g, &mut grads)?;
        }
        (NetworkKind::Teacher, OutputGrad::Segmentation(g)) => {
            let layer = params.layer_index(HEAD_SEG);
            let expect = (params.arch.classes, cache.input.height(), cache.input.width());
            if g.shape() != expect {
                return Err(Error::ShapeMismatch {
                    what: "segmentation gradient",
                    expected: expect,
                    found: g.shape(),
                });
            }
            let g_half = upsample_bilinear2_backward(g);
            let gi = params
                .conv_backward(layer, &cache.top, &g_half, &mut grads, true)
                .expect("input grad");
            g_top.add_scaled(&gi, T::one());
        }
        _ => {
            return Err(Error::ParameterMismatch(String::from(
                "output gradient does not match network kind",
            )))
        }
    }

    let [w1, w2, w3] = params.arch.widths;
    let through =
        |layer: usize, input: &Plane<T>, out: &Plane<T>, mut g: Plane<T>, grads: &mut NetworkParameters<T>| {
            elu_backward(out, &mut g);
            params.conv_backward(layer, input, &g, grads, true).expect("input grad")
        };

    let g_cat1 = through(DEC1, &cache.cat1, &cache.top, g_top, &mut grads);
    let (g_up, mut g_enc1b) = split_channels(&g_cat1, w2);
    let g_cat2 = through(
        DEC2,
        &cache.cat2,
        &cache.dec2,
        upsample_nearest2_backward(&g_up),
        &mut grads,
    );
    let (g_up, mut g_enc2b) = split_channels(&g_cat2, w3);

    let g = through(
        ENC3B,
        &cache.enc3a,
        &cache.enc3b,
        upsample_nearest2_backward(&g_up),
        &mut grads,
    );
    let g_pool2 = through(ENC3A, &cache.pool2, &cache.enc3a, g, &mut grads);
    g_enc2b.add_scaled(&avg_pool2_backward(&g_pool2), T::one());
    let g = through(ENC2B, &cache.enc2a, &cache.enc2b, g_enc2b, &mut grads);
    let g_pool1 = through(ENC2A, &cache.pool1, &cache.enc2a, g, &mut grads);
    g_enc1b.add_scaled(&avg_pool2_backward(&g_pool1), T::one());
    let g = through(ENC1B, &cache.enc1a, &cache.enc1b, g_enc1b, &mut grads);
    let g_pool0 = through(ENC1A, &cache.pool0, &cache.enc1a, g, &mut grads);

    let mut g_stem = avg_pool2_backward(&g_pool0);
    elu_backward(&cache.stem, &mut g_stem);
    params.conv_backward(STEM, &cache.input, &g_stem, &mut grads, false);
    if let Some((layer, cost)) = &cache.cost {
        params.conv_backward(*layer, cost, &g_stem, &mut grads, false);
    }
    debug_assert_eq!(TRUNK_LAYERS, DEC1 + 1);
    debug_assert_eq!(cache.stem.channels(), w1);
    Ok(grads)
}
