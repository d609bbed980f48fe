//! Per-sample objectives of both training stages, evaluated through the
//! networks with parameter gradients.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::geometry::{occlusion_mask, warp_disparity, WarpDirection};
use crate::losses::{
    loss_binocular_grad, loss_monocular_photometric_grad, loss_seg_grad, loss_student_grad, loss_teacher_grad,
    LossWeights,
};
use crate::model::{
    backward, student_forward, student_forward_cached, teacher_forward, teacher_forward_cached, NetworkParameters,
    OutputGrad, TaskLabel, TeacherOutput,
};
use crate::plane::{DisparityMap, ImagePlane, OcclusionMask, SemanticMap};
use crate::real::Real;

/// Scalar loss value with named components, for logging.
#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub total: f64,
    pub components: Vec<(&'static str, f64)>,
}

impl LossRecord {
    pub fn component(&self, name: &str) -> Option<f64> {
        self.components.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }
}

fn depth_output<T: Real>(out: TeacherOutput<T>) -> (DisparityMap<T>, DisparityMap<T>) {
    match out {
        TeacherOutput::Depth { left, right } => (left, right),
        TeacherOutput::Segmentation(_) => unreachable!("depth task yields disparities"),
    }
}

fn seg_output<T: Real>(out: TeacherOutput<T>) -> crate::plane::ClassLogits<T> {
    match out {
        TeacherOutput::Segmentation(s) => s,
        TeacherOutput::Depth { .. } => unreachable!("segmentation task yields logits"),
    }
}

/// Depth-task objective of the teacher. Without `semantic` this is the
/// binocular loss; with it, the teacher loss guided by that segmentation.
pub fn teacher_depth_grad<T: Real>(
    params: &NetworkParameters<T>,
    i_l: &ImagePlane<T>,
    i_r: &ImagePlane<T>,
    w: &LossWeights,
    semantic: Option<&SemanticMap>,
) -> Result<(LossRecord, NetworkParameters<T>)> {
    let (out, cache) = teacher_forward_cached(params, i_l, i_r, TaskLabel::Depth)?;
    let (d_l, d_r) = depth_output(out);
    let (record, g_l, g_r) = match semantic {
        None => {
            let (t, g) = loss_binocular_grad(&d_l, &d_r, i_l, i_r, w)?;
            let record = LossRecord {
                total: t.total.as_f64(),
                components: vec![
                    ("reconstruction", t.reconstruction.as_f64()),
                    ("left_right", t.left_right.as_f64()),
                    ("smoothness", t.smoothness.as_f64()),
                ],
            };
            (record, g.d_left, g.d_right)
        }
        Some(s) => {
            let (t, g) = loss_teacher_grad(&d_l, &d_r, i_l, i_r, s, w)?;
            let record = LossRecord {
                total: t.total.as_f64(),
                components: vec![
                    ("reconstruction", t.binocular.reconstruction.as_f64()),
                    ("left_right", t.binocular.left_right.as_f64()),
                    ("smoothness", t.binocular.smoothness.as_f64()),
                    ("semantic", t.semantic.as_f64()),
                ],
            };
            (record, g.d_left, g.d_right)
        }
    };
    let grads = backward(
        params,
        &cache,
        OutputGrad::Depth {
            left: &g_l,
            right: &g_r,
        },
    )?;
    Ok((record, grads))
}

/// Segmentation-task cross-entropy of the teacher.
pub fn teacher_seg_grad<T: Real>(
    params: &NetworkParameters<T>,
    image: &ImagePlane<T>,
    labels: &SemanticMap,
) -> Result<(LossRecord, NetworkParameters<T>)> {
    let (out, cache) = teacher_forward_cached(params, image, image, TaskLabel::Segmentation)?;
    let logits = seg_output(out);
    let (loss, g) = loss_seg_grad(&logits, labels)?;
    let grads = backward(params, &cache, OutputGrad::Segmentation(&g))?;
    Ok((
        LossRecord {
            total: loss.as_f64(),
            components: vec![("cross_entropy", loss.as_f64())],
        },
        grads,
    ))
}

pub fn teacher_disparities<T: Real>(
    params: &NetworkParameters<T>,
    i_l: &ImagePlane<T>,
    i_r: &ImagePlane<T>,
) -> Result<(DisparityMap<T>, DisparityMap<T>)> {
    Ok(depth_output(teacher_forward(params, i_l, i_r, TaskLabel::Depth)?))
}

/// Argmax of the teacher's segmentation scores for `image`.
pub fn teacher_segment<T: Real>(params: &NetworkParameters<T>, image: &ImagePlane<T>) -> Result<SemanticMap> {
    let logits = seg_output(teacher_forward(params, image, image, TaskLabel::Segmentation)?);
    Ok(SemanticMap::argmax(&logits))
}

/// Supervision the teacher provides for one training sample.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabel {
    pub disparity: DisparityMap<f32>,
    pub occlusion: OcclusionMask,
    pub semantic: SemanticMap,
}

/// `d_t = d_l`, `M_oc = 1(|d_l - <d_r>_{d_l}| <= tau)`, `S_t = argmax F_t(I_l, seg)`.
pub fn pseudo_label(
    params: &NetworkParameters<f32>,
    i_l: &ImagePlane<f32>,
    i_r: &ImagePlane<f32>,
    tau: f64,
) -> Result<PseudoLabel> {
    let (d_l, d_r) = teacher_disparities(params, i_l, i_r)?;
    let d_tilde = warp_disparity(&d_r, &d_l, WarpDirection::LeftFromRight)?;
    let occlusion = occlusion_mask(&d_l, &d_tilde, tau as f32)?;
    let semantic = teacher_segment(params, i_l)?;
    Ok(PseudoLabel {
        disparity: d_l,
        occlusion,
        semantic,
    })
}

/// What the student is trained against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StudentObjective {
    /// Distillation + occlusion-masked reconstruction + semantic smoothness.
    Pseudo,
    /// Unsupervised photometric reconstruction + edge-aware smoothness only.
    Photometric,
}

/// `pseudo` must be given for [`StudentObjective::Pseudo`].
pub fn student_grad<T: Real>(
    params: &NetworkParameters<T>,
    i_s: &ImagePlane<T>,
    i_other: &ImagePlane<T>,
    pseudo: Option<(&DisparityMap<T>, &OcclusionMask, &SemanticMap)>,
    objective: StudentObjective,
    w: &LossWeights,
) -> Result<(LossRecord, NetworkParameters<T>)> {
    let (d_s, cache) = student_forward_cached(params, i_s)?;
    let (record, g) = match (objective, pseudo) {
        (StudentObjective::Pseudo, Some((d_t, mask, s_t))) => {
            let (t, g) = loss_student_grad(&d_s, d_t, i_s, i_other, mask, s_t, w, params.arch().d_max)?;
            let record = LossRecord {
                total: t.total.as_f64(),
                components: vec![
                    ("distill", t.distill.as_f64()),
                    ("unmo", t.unmo.as_f64()),
                    ("semantic", t.semantic.as_f64()),
                ],
            };
            (record, g.d_s)
        }
        (StudentObjective::Pseudo, None) => {
            return Err(crate::error::Error::InvalidConfig(alloc::string::String::from(
                "pseudo-supervised student step needs pseudo labels",
            )))
        }
        (StudentObjective::Photometric, _) => {
            let (t, g) = loss_monocular_photometric_grad(&d_s, i_s, i_other, w)?;
            let record = LossRecord {
                total: t.total.as_f64(),
                components: vec![
                    ("reconstruction", t.reconstruction.as_f64()),
                    ("smoothness", t.smoothness.as_f64()),
                ],
            };
            (record, g)
        }
    };
    let grads = backward(params, &cache, OutputGrad::Student(&g))?;
    Ok((record, grads))
}

pub fn student_disparity<T: Real>(params: &NetworkParameters<T>, image: &ImagePlane<T>) -> Result<DisparityMap<T>> {
    student_forward(params, image)
}
