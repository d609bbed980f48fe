//! Epoch loops of the two training stages, free of any I/O.
//!
//! Every epoch draws its sample order and augmentation from a ChaCha8
//! stream keyed by `(seed, epoch)`, so an epoch is a pure function of the
//! parameters and optimizer state it starts from.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::augment::{augment, AugmentParams};
use crate::error::{Error, Result};
use crate::geometry::disparity_to_depth;
use crate::losses::LossWeights;
use crate::metrics::{evaluate, DepthCap, EvalReport};
use crate::model::{init_parameters, ArchConfig, NetworkKind, NetworkParameters};
use crate::optim::{Adam, AdamConfig, LrSchedule};
use crate::plane::{ImagePlane, OcclusionMask};
use crate::synth::StereoSample;
use crate::train::{
    student_disparity, student_grad, teacher_depth_grad, teacher_disparities, teacher_seg_grad, teacher_segment,
    LossRecord, PseudoLabel, StudentObjective,
};

/// Optimizer and schedule settings shared by both stages.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub lr: LrSchedule,
    pub augment: bool,
    pub seed: u64,
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig(String::from("batch_size must be positive")));
        }
        self.adam.validate()?;
        if !(self.lr.factor >= 1.0 && self.lr.factor.is_finite()) {
            return Err(Error::OutOfRange {
                name: "lr_factor",
                value: self.lr.factor,
            });
        }
        if self.lr.base != self.adam.lr {
            return Err(Error::InvalidConfig(String::from(
                "schedule base must equal the Adam learning rate",
            )));
        }
        Ok(())
    }

    fn epoch_rng(&self, epoch: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch as u64);
        rng
    }

    fn batches(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        order.chunks(self.batch_size).map(|c| c.to_vec()).collect()
    }
}

/// Teacher training phases in epoch order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TeacherPhase {
    /// Alternating depth (binocular loss) and segmentation batches.
    Joint,
    /// As `Joint`, with the depth loss guided by the teacher's own segmentation.
    Semantic,
    /// Depth batches only, still semantically guided.
    OverTrain,
}

impl TeacherPhase {
    pub fn name(self) -> &'static str {
        match self {
            TeacherPhase::Joint => "joint",
            TeacherPhase::Semantic => "semantic",
            TeacherPhase::OverTrain => "over_train",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TeacherPlan {
    /// Regular epochs (joint then semantic).
    pub epochs: usize,
    /// The semantic phase covers epochs after this one.
    pub semantic_start_epoch: usize,
    pub over_train_epochs: usize,
}

impl TeacherPlan {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig(String::from("teacher epochs must be positive")));
        }
        if self.semantic_start_epoch > self.epochs {
            return Err(Error::InvalidConfig(format!(
                "semantic_start_epoch {} exceeds epochs {}",
                self.semantic_start_epoch, self.epochs
            )));
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.epochs + self.over_train_epochs
    }

    /// Phase of 1-based `epoch`, `None` past the end.
    pub fn phase(&self, epoch: usize) -> Option<TeacherPhase> {
        match epoch {
            0 => None,
            e if e <= self.semantic_start_epoch => Some(TeacherPhase::Joint),
            e if e <= self.epochs => Some(TeacherPhase::Semantic),
            e if e <= self.total_epochs() => Some(TeacherPhase::OverTrain),
            _ => None,
        }
    }
}

/// Mean losses of one task over an epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskStats {
    pub task: &'static str,
    pub loss: LossRecord,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub phase: &'static str,
    pub lr: f64,
    pub tasks: Vec<TaskStats>,
}

#[derive(Default)]
struct Running {
    total: f64,
    components: Vec<(&'static str, f64)>,
    count: usize,
}

impl Running {
    fn add(&mut self, r: &LossRecord) {
        if self.components.is_empty() {
            self.components = r.components.iter().map(|(n, _)| (*n, 0.0)).collect();
        }
        self.total += r.total;
        for ((_, acc), (_, v)) in self.components.iter_mut().zip(&r.components) {
            *acc += v;
        }
        self.count += 1;
    }

    fn finish(self, task: &'static str) -> TaskStats {
        let n = self.count.max(1) as f64;
        TaskStats {
            task,
            loss: LossRecord {
                total: self.total / n,
                components: self.components.into_iter().map(|(k, v)| (k, v / n)).collect(),
            },
        }
    }
}

fn check_finite(r: &LossRecord, what: &'static str) -> Result<()> {
    if r.total.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Averages per-sample gradients into one Adam step.
struct BatchStep {
    grads: NetworkParameters<f32>,
    n: usize,
}

impl BatchStep {
    fn new(params: &NetworkParameters<f32>) -> Self {
        Self {
            grads: params.zeros_like(),
            n: 0,
        }
    }

    fn add(&mut self, g: &NetworkParameters<f32>) {
        self.grads.add_scaled(g, 1.0);
        self.n += 1;
    }

    fn apply(mut self, adam: &mut Adam, params: &mut NetworkParameters<f32>, lr: f64) -> Result<()> {
        self.grads.scale(1.0 / self.n as f32);
        adam.update(params, &self.grads, lr)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TeacherTrainer {
    pub params: NetworkParameters<f32>,
    pub adam: Adam,
    pub schedule: Schedule,
    pub plan: TeacherPlan,
    pub weights: LossWeights,
    /// Epochs completed so far.
    pub epoch: usize,
}

impl TeacherTrainer {
    pub fn new(
        arch: &ArchConfig,
        init_seed: u64,
        schedule: Schedule,
        plan: TeacherPlan,
        weights: LossWeights,
    ) -> Result<Self> {
        schedule.validate()?;
        plan.validate()?;
        weights.validate()?;
        let params = init_parameters(init_seed, NetworkKind::Teacher, arch)?;
        let adam = Adam::new(schedule.adam, &params);
        Ok(Self {
            params,
            adam,
            schedule,
            plan,
            weights,
            epoch: 0,
        })
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.plan.total_epochs()
    }

    /// Runs the next epoch over `data`.
    pub fn train_epoch(&mut self, data: &[StereoSample]) -> Result<EpochStats> {
        if data.is_empty() {
            return Err(Error::InvalidConfig(String::from("teacher training set is empty")));
        }
        let epoch = self.epoch + 1;
        let phase = self
            .plan
            .phase(epoch)
            .ok_or_else(|| Error::InvalidConfig(format!("teacher plan ends at epoch {}", self.plan.total_epochs())))?;
        let lr = self.schedule.lr.lr_at(epoch);
        let mut rng = self.schedule.epoch_rng(epoch);
        let mut depth = Running::default();
        let mut seg = Running::default();
        for batch in self.schedule.batches(data.len(), &mut rng) {
            let samples: Vec<StereoSample> = batch
                .iter()
                .map(|&i| {
                    let p = if self.schedule.augment {
                        AugmentParams::sample(&mut rng, true)
                    } else {
                        AugmentParams::identity()
                    };
                    augment(&data[i], &p)
                })
                .collect();

            let mut step = BatchStep::new(&self.params);
            for s in &samples {
                let guide = match phase {
                    TeacherPhase::Joint => None,
                    _ => Some(teacher_segment(&self.params, &s.left)?),
                };
                let (r, g) = teacher_depth_grad(&self.params, &s.left, &s.right, &self.weights, guide.as_ref())?;
                check_finite(&r, "teacher depth loss")?;
                depth.add(&r);
                step.add(&g);
            }
            step.apply(&mut self.adam, &mut self.params, lr)?;

            if phase != TeacherPhase::OverTrain {
                let mut step = BatchStep::new(&self.params);
                for s in &samples {
                    let (r, g) = teacher_seg_grad(&self.params, &s.left, &s.semantic_left)?;
                    check_finite(&r, "teacher segmentation loss")?;
                    seg.add(&r);
                    step.add(&g);
                }
                step.apply(&mut self.adam, &mut self.params, lr)?;
            }
        }
        self.epoch = epoch;
        let mut tasks = alloc::vec![depth.finish("depth")];
        if seg.count > 0 {
            tasks.push(seg.finish("segmentation"));
        }
        Ok(EpochStats {
            epoch,
            phase: phase.name(),
            lr,
            tasks,
        })
    }
}

/// What the student is allowed to see of a training sample.
#[derive(Clone, Debug, PartialEq)]
pub struct StereoPair {
    pub left: ImagePlane<f32>,
    pub right: ImagePlane<f32>,
}

impl StereoPair {
    pub fn of(sample: &StereoSample) -> Self {
        Self {
            left: sample.left.clone(),
            right: sample.right.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudentTrainer {
    pub params: NetworkParameters<f32>,
    pub adam: Adam,
    pub schedule: Schedule,
    pub epochs: usize,
    pub objective: StudentObjective,
    pub weights: LossWeights,
    pub epoch: usize,
}

impl StudentTrainer {
    pub fn new(
        arch: &ArchConfig,
        init_seed: u64,
        schedule: Schedule,
        epochs: usize,
        objective: StudentObjective,
        weights: LossWeights,
    ) -> Result<Self> {
        schedule.validate()?;
        weights.validate()?;
        if epochs == 0 {
            return Err(Error::InvalidConfig(String::from("student epochs must be positive")));
        }
        let params = init_parameters(init_seed, NetworkKind::Student, arch)?;
        let adam = Adam::new(schedule.adam, &params);
        Ok(Self {
            params,
            adam,
            schedule,
            epochs,
            objective,
            weights,
            epoch: 0,
        })
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.epochs
    }

    /// Runs the next epoch. Pseudo labels are aligned with `pairs` by index
    /// and required for [`StudentObjective::Pseudo`]. Augmentation is
    /// photometric only, since the labels belong to the unflipped left view.
    pub fn train_epoch(&mut self, pairs: &[StereoPair], pseudo: Option<&[PseudoLabel]>) -> Result<EpochStats> {
        if pairs.is_empty() {
            return Err(Error::InvalidConfig(String::from("student training set is empty")));
        }
        if let Some(p) = pseudo {
            if p.len() != pairs.len() {
                return Err(Error::InvalidConfig(format!(
                    "{} pseudo labels for {} training pairs",
                    p.len(),
                    pairs.len()
                )));
            }
        }
        if self.objective == StudentObjective::Pseudo && pseudo.is_none() {
            return Err(Error::InvalidConfig(String::from(
                "pseudo-supervised student needs pseudo labels",
            )));
        }
        if self.is_finished() {
            return Err(Error::InvalidConfig(format!(
                "student plan ends at epoch {}",
                self.epochs
            )));
        }
        let epoch = self.epoch + 1;
        let lr = self.schedule.lr.lr_at(epoch);
        let mut rng = self.schedule.epoch_rng(epoch);
        let mut stats = Running::default();
        for batch in self.schedule.batches(pairs.len(), &mut rng) {
            let mut step = BatchStep::new(&self.params);
            for &i in &batch {
                let p = if self.schedule.augment {
                    AugmentParams::sample(&mut rng, false)
                } else {
                    AugmentParams::identity()
                };
                let left = p.photometric(&pairs[i].left);
                let right = p.photometric(&pairs[i].right);
                let label = pseudo.map(|l| &l[i]);
                let view = label.map(|l| (&l.disparity, &l.occlusion, &l.semantic));
                let (r, g) = student_grad(&self.params, &left, &right, view, self.objective, &self.weights)?;
                check_finite(&r, "student loss")?;
                stats.add(&r);
                step.add(&g);
            }
            step.apply(&mut self.adam, &mut self.params, lr)?;
        }
        self.epoch = epoch;
        Ok(EpochStats {
            epoch,
            phase: "student",
            lr,
            tasks: alloc::vec![stats.finish("depth")],
        })
    }
}

/// Depth metrics of disparity predictions over every pixel of each sample,
/// averaged per image.
pub fn evaluate_disparities(
    samples: &[StereoSample],
    mut predict: impl FnMut(&StereoSample) -> Result<crate::plane::DisparityMap<f32>>,
) -> Result<EvalReport> {
    let mut reports = Vec::with_capacity(samples.len());
    for s in samples {
        let d = predict(s)?;
        let pred = disparity_to_depth(&d, &s.camera, s.left.width())?;
        let gt = s.depth_left();
        let valid = OcclusionMask::ones(gt.height(), gt.width());
        reports.push(evaluate(&pred, &gt, &valid, DepthCap::default())?);
    }
    EvalReport::mean_of(&reports)
}

pub fn evaluate_teacher(params: &NetworkParameters<f32>, samples: &[StereoSample]) -> Result<EvalReport> {
    evaluate_disparities(samples, |s| Ok(teacher_disparities(params, &s.left, &s.right)?.0))
}

pub fn evaluate_student(params: &NetworkParameters<f32>, samples: &[StereoSample]) -> Result<EvalReport> {
    evaluate_disparities(samples, |s| student_disparity(params, &s.left))
}
