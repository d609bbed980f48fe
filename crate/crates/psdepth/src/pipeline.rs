//! The pipeline stages behind each subcommand, reading and writing the
//! directory layout rooted at `RunConfig::out`:
//!
//! ```text
//! data/{train,val}/      generated datasets
//! teacher/               log.csv, epoch_NNNN.ckpt, regular.ckpt, final.ckpt
//! pseudo/                pseudo labels for data/train
//! student/               log.csv, epoch_NNNN.ckpt, final.ckpt
//! ```
//!
//! Every stage writes the resolved configuration next to its outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use psdepth_core::geometry::disparity_to_depth;
use psdepth_core::gradcheck::{check_losses, check_network, CheckReport, NetworkProbe};
use psdepth_core::metrics::{evaluate, DepthCap, EvalReport};
use psdepth_core::model::{NetworkKind, NetworkParameters};
use psdepth_core::synth::{generate_sample, StereoSample};
use psdepth_core::train::{pseudo_label, student_disparity, teacher_disparities};
use psdepth_core::trainer::{EpochStats, StereoPair, StudentTrainer, TeacherTrainer};
use psdepth_core::{DisparityMap, OcclusionMask, Plane};

use crate::checkpoint::{ArchManifest, Checkpoint, Metadata};
use crate::config::{RunConfig, Split, RESOLVED_CONFIG};
use crate::dataset::{
    read_dataset, read_pseudo_labels, sample_file, write_dataset, write_pseudo_labels, Dataset, PseudoLabelSet,
};
use crate::error::{Error, Result};
use crate::log::LossLog;
use crate::pnm::{read_pfm, read_ppm, write_pfm, write_ppm};

pub const REGULAR_CHECKPOINT: &str = "regular.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const LOG_FILE: &str = "log.csv";

fn write_resolved(cfg: &RunConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(RESOLVED_CONFIG);
    fs::write(&path, cfg.to_toml()).map_err(|e| Error::io(&path, e))
}

pub fn epoch_checkpoint(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch_{epoch:04}.ckpt"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenSummary {
    pub train: PathBuf,
    pub val: PathBuf,
    pub train_digest: String,
    pub val_digest: String,
}

/// Generates the train split from indices `0..train_samples` and the
/// validation split from the indices after it.
pub fn gen_data(cfg: &RunConfig) -> Result<GenSummary> {
    let scene = cfg.data.scene()?;
    let digest = cfg.data.digest();
    let n_train = cfg.data.train_samples as u64;
    let n_val = cfg.data.val_samples as u64;
    let make = |range: std::ops::Range<u64>| -> Result<Vec<StereoSample>> {
        range.map(|i| Ok(generate_sample(&scene, i)?)).collect()
    };
    let train_dir = cfg.data_dir(Split::Train);
    let val_dir = cfg.data_dir(Split::Val);
    let train = write_dataset(&train_dir, &make(0..n_train)?, scene.classes, &digest)?;
    let val_digest = if n_val > 0 {
        write_dataset(&val_dir, &make(n_train..n_train + n_val)?, scene.classes, &digest)?.content_digest
    } else {
        String::new()
    };
    write_resolved(cfg, &cfg.out.join("data"))?;
    Ok(GenSummary {
        train: train_dir,
        val: val_dir,
        train_digest: train.content_digest,
        val_digest,
    })
}

pub fn load_split(cfg: &RunConfig, split: Split) -> Result<Dataset> {
    let data = read_dataset(&cfg.data_dir(split))?;
    if data.classes != cfg.data.classes {
        return Err(Error::Config(format!(
            "dataset has {} classes but data.classes is {}",
            data.classes, cfg.data.classes
        )));
    }
    Ok(data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub epochs: usize,
    pub final_losses: Vec<(String, f64)>,
    pub seconds: f64,
}

fn final_losses(stats: &EpochStats) -> Vec<(String, f64)> {
    stats.tasks.iter().map(|t| (t.task.to_string(), t.loss.total)).collect()
}

fn diverged(epoch: usize, err: psdepth_core::Error, last_good: &Option<PathBuf>) -> Error {
    match err {
        psdepth_core::Error::NonFinite(what) => Error::Diverged {
            epoch,
            what: what.to_string(),
            last_good: last_good
                .as_ref()
                .map_or_else(|| String::from("none"), |p| p.display().to_string()),
        },
        other => Error::Core(other),
    }
}

fn check_resume(ck: &Checkpoint, kind: NetworkKind, cfg: &RunConfig, path: &Path) -> Result<()> {
    if ck.kind() != kind {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            msg: format!("expected a {} checkpoint, found {}", kind.name(), ck.kind().name()),
        });
    }
    if ck.metadata.arch != ArchManifest::from(&cfg.arch()) {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            msg: String::from("architecture differs from the configuration"),
        });
    }
    if ck.adam.is_none() {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            msg: String::from("checkpoint carries no optimizer state to resume from"),
        });
    }
    Ok(())
}

fn teacher_checkpoint(t: &TeacherTrainer, cfg: &RunConfig, dataset: &str, losses: Vec<(String, f64)>) -> Checkpoint {
    let phase = t.plan.phase(t.epoch).map_or("init", |p| p.name());
    Checkpoint {
        metadata: Metadata {
            kind: NetworkKind::Teacher.name().to_string(),
            arch: ArchManifest::from(t.params.arch()),
            epoch: t.epoch,
            seed: cfg.teacher.seed,
            phase: phase.to_string(),
            loss_weights: cfg.loss,
            dataset_digest: dataset.to_string(),
            final_losses: losses,
        },
        params: t.params.clone(),
        adam: Some(t.adam.clone()),
    }
}

/// Trains the teacher on `data/train`, optionally resuming from a checkpoint
/// written by an earlier run of the same configuration.
pub fn train_teacher(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainOutcome> {
    let start = Instant::now();
    let data = load_split(cfg, Split::Train)?;
    let dir = cfg.teacher_dir();
    write_resolved(cfg, &dir)?;
    let mut trainer = TeacherTrainer::new(
        &cfg.arch(),
        cfg.teacher.seed,
        cfg.teacher.optim.schedule(cfg.teacher.seed),
        cfg.teacher.plan(),
        cfg.weights(),
    )?;
    let mut last_good = None;
    let mut losses = Vec::new();
    if let Some(path) = resume {
        let ck = Checkpoint::load(path)?;
        check_resume(&ck, NetworkKind::Teacher, cfg, path)?;
        trainer.epoch = ck.metadata.epoch;
        trainer.params = ck.params;
        trainer.adam = ck.adam.expect("checked");
        losses = ck.metadata.final_losses;
        last_good = Some(path.to_path_buf());
    }
    let log_path = dir.join(LOG_FILE);
    let mut log = LossLog::open(&log_path, resume.is_some(), trainer.epoch)?;
    let every = cfg.teacher.checkpoint_every;
    while !trainer.is_finished() {
        let epoch = trainer.epoch + 1;
        let stats = trainer
            .train_epoch(&data.samples)
            .map_err(|e| diverged(epoch, e, &last_good))?;
        log.append(&stats)?;
        losses = final_losses(&stats);
        let ck = || teacher_checkpoint(&trainer, cfg, &data.content_digest, losses.clone());
        if every > 0 && epoch % every == 0 {
            let p = epoch_checkpoint(&dir, epoch);
            ck().save(&p)?;
            last_good = Some(p);
        }
        if epoch == cfg.teacher.epochs {
            ck().save(&dir.join(REGULAR_CHECKPOINT))?;
        }
    }
    let path = dir.join(FINAL_CHECKPOINT);
    teacher_checkpoint(&trainer, cfg, &data.content_digest, losses.clone()).save(&path)?;
    Ok(TrainOutcome {
        checkpoint: path,
        log: log_path,
        epochs: trainer.epoch,
        final_losses: losses,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn load_kind(path: &Path, kind: NetworkKind) -> Result<Checkpoint> {
    let ck = Checkpoint::load(path)?;
    if ck.kind() != kind {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            msg: format!("expected a {} checkpoint, found {}", kind.name(), ck.kind().name()),
        });
    }
    Ok(ck)
}

/// Exports pseudo labels for `data/train` from a teacher checkpoint
/// (default `teacher/final.ckpt`).
pub fn export_pseudo(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<PathBuf> {
    let default = cfg.teacher_dir().join(FINAL_CHECKPOINT);
    let path = checkpoint.unwrap_or(&default);
    let ck = load_kind(path, NetworkKind::Teacher)?;
    let data = load_split(cfg, Split::Train)?;
    let labels = data
        .samples
        .iter()
        .map(|s| pseudo_label(&ck.params, &s.left, &s.right, cfg.teacher.tau))
        .collect::<psdepth_core::Result<Vec<_>>>()?;
    let dir = cfg.pseudo_dir();
    write_pseudo_labels(
        &dir,
        &PseudoLabelSet {
            labels,
            teacher_digest: ck.digest(),
            dataset_digest: data.content_digest,
        },
    )?;
    write_resolved(cfg, &dir)?;
    Ok(dir)
}

fn student_checkpoint(s: &StudentTrainer, cfg: &RunConfig, dataset: &str, losses: Vec<(String, f64)>) -> Checkpoint {
    Checkpoint {
        metadata: Metadata {
            kind: NetworkKind::Student.name().to_string(),
            arch: ArchManifest::from(s.params.arch()),
            epoch: s.epoch,
            seed: cfg.student.seed,
            phase: String::from("student"),
            loss_weights: cfg.loss,
            dataset_digest: dataset.to_string(),
            final_losses: losses,
        },
        params: s.params.clone(),
        adam: Some(s.adam.clone()),
    }
}

/// Trains the student on the stereo pairs of `data/train` and, for the
/// pseudo-supervised objective, the labels under `pseudo/`. Ground-truth
/// disparity, semantics and occlusion are never handed to the trainer.
pub fn train_student(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainOutcome> {
    let start = Instant::now();
    let data = load_split(cfg, Split::Train)?;
    let pairs: Vec<StereoPair> = data.samples.iter().map(StereoPair::of).collect();
    drop(data.samples);
    let pseudo = match cfg.student.objective {
        crate::config::ObjectiveName::Pseudo => {
            let set = read_pseudo_labels(&cfg.pseudo_dir())?;
            if set.dataset_digest != data.content_digest {
                return Err(Error::Config(format!(
                    "pseudo labels in {} belong to a different training set",
                    cfg.pseudo_dir().display()
                )));
            }
            Some(set.labels)
        }
        crate::config::ObjectiveName::Photometric => None,
    };
    let dir = cfg.student_dir();
    write_resolved(cfg, &dir)?;
    let mut trainer = StudentTrainer::new(
        &cfg.arch(),
        cfg.student.seed,
        cfg.student.optim.schedule(cfg.student.seed),
        cfg.student.epochs,
        cfg.student.objective.into(),
        cfg.weights(),
    )?;
    let mut last_good = None;
    let mut losses = Vec::new();
    if let Some(path) = resume {
        let ck = Checkpoint::load(path)?;
        check_resume(&ck, NetworkKind::Student, cfg, path)?;
        trainer.epoch = ck.metadata.epoch;
        trainer.params = ck.params;
        trainer.adam = ck.adam.expect("checked");
        losses = ck.metadata.final_losses;
        last_good = Some(path.to_path_buf());
    }
    let log_path = dir.join(LOG_FILE);
    let mut log = LossLog::open(&log_path, resume.is_some(), trainer.epoch)?;
    let every = cfg.student.checkpoint_every;
    while !trainer.is_finished() {
        let epoch = trainer.epoch + 1;
        let stats = trainer
            .train_epoch(&pairs, pseudo.as_deref())
            .map_err(|e| diverged(epoch, e, &last_good))?;
        log.append(&stats)?;
        losses = final_losses(&stats);
        if every > 0 && epoch % every == 0 {
            let p = epoch_checkpoint(&dir, epoch);
            student_checkpoint(&trainer, cfg, &data.content_digest, losses.clone()).save(&p)?;
            last_good = Some(p);
        }
    }
    let path = dir.join(FINAL_CHECKPOINT);
    student_checkpoint(&trainer, cfg, &data.content_digest, losses.clone()).save(&path)?;
    Ok(TrainOutcome {
        checkpoint: path,
        log: log_path,
        epochs: trainer.epoch,
        final_losses: losses,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn cap(cfg: &RunConfig) -> DepthCap {
    DepthCap {
        min_depth: cfg.eval.min_depth,
        max_depth: cfg.eval.max_depth,
    }
}

/// Metrics of a teacher or student checkpoint on the configured split.
pub fn eval_checkpoint(cfg: &RunConfig, path: &Path) -> Result<EvalReport> {
    let ck = Checkpoint::load(path)?;
    let data = load_split(cfg, cfg.eval.split)?;
    let params = ck.params;
    let cap = cap(cfg);
    let report = match params.kind() {
        NetworkKind::Teacher => evaluate_capped(&data.samples, cap, |s| {
            Ok(teacher_disparities(&params, &s.left, &s.right)?.0)
        })?,
        NetworkKind::Student => evaluate_capped(&data.samples, cap, |s| student_disparity(&params, &s.left))?,
    };
    Ok(report)
}

fn evaluate_capped(
    samples: &[StereoSample],
    cap: DepthCap,
    mut predict: impl FnMut(&StereoSample) -> psdepth_core::Result<DisparityMap<f32>>,
) -> Result<EvalReport> {
    let mut reports = Vec::with_capacity(samples.len());
    for s in samples {
        let d = predict(s)?;
        reports.push(depth_report(&d, s, cap)?);
    }
    Ok(EvalReport::mean_of(&reports)?)
}

fn depth_report(d: &DisparityMap<f32>, s: &StereoSample, cap: DepthCap) -> Result<EvalReport> {
    let pred = disparity_to_depth(d, &s.camera, s.left.width())?;
    let gt = s.depth_left();
    let valid = OcclusionMask::ones(gt.height(), gt.width());
    Ok(evaluate(&pred, &gt, &valid, cap)?)
}

/// Metrics of disparity files `pred_dir/disp/NNNN.pfm` against the split.
pub fn eval_predictions(cfg: &RunConfig, pred_dir: &Path) -> Result<EvalReport> {
    let data = load_split(cfg, cfg.eval.split)?;
    let cap = cap(cfg);
    let mut reports = Vec::with_capacity(data.samples.len());
    for (i, s) in data.samples.iter().enumerate() {
        let path = sample_file(pred_dir, "disp", i, "pfm");
        let plane = read_pfm(&path)?;
        let d = DisparityMap::new(plane).map_err(|e| Error::format(&path, e.to_string()))?;
        reports.push(depth_report(&d, s, cap).map_err(|e| Error::format(&path, e.to_string()))?);
    }
    Ok(EvalReport::mean_of(&reports)?)
}

pub fn report_csv(report: &EvalReport) -> String {
    let v = report.values();
    format!(
        "{}\n{},{},{}\n",
        EvalReport::COLUMNS.join(","),
        v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(","),
        report.valid_pixel_count,
        report.cap
    )
}

/// Human-readable table in the usual column order.
pub fn report_table(report: &EvalReport) -> String {
    let names = [
        "Abs Rel", "Sq Rel", "RMSE", "RMSE log", "d<1.25", "d<1.25^2", "d<1.25^3",
    ];
    let head: Vec<String> = names.iter().map(|n| format!("{n:>10}")).collect();
    let vals: Vec<String> = report.values().iter().map(|v| format!("{v:>10.4}")).collect();
    format!(
        "{}\n{}\n({} valid pixels, depth capped at {} m)\n",
        head.join(""),
        vals.join(""),
        report.valid_pixel_count,
        report.cap
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferOutput {
    pub disparity: PathBuf,
    pub depth: PathBuf,
    pub preview: Option<PathBuf>,
}

/// Runs a student checkpoint on one PPM image.
pub fn infer(cfg: &RunConfig, checkpoint: &Path, image: &Path, out_dir: &Path, preview: bool) -> Result<InferOutput> {
    let ck = load_kind(checkpoint, NetworkKind::Student)?;
    let img = read_ppm(image)?;
    let d = student_disparity(&ck.params, &img).map_err(|e| Error::format(image, e.to_string()))?;
    let camera = cfg.data.scene()?.camera;
    let depth = disparity_to_depth(&d, &camera, img.width())?;
    let stem = image
        .file_stem()
        .map_or_else(|| String::from("image"), |s| s.to_string_lossy().into_owned());
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let disparity_path = out_dir.join(format!("{stem}_disp.pfm"));
    let depth_path = out_dir.join(format!("{stem}_depth.pfm"));
    write_pfm(&disparity_path, d.as_plane())?;
    write_pfm(&depth_path, &depth.cast::<f32>())?;
    let preview_path = if preview {
        let p = out_dir.join(format!("{stem}_disp.ppm"));
        write_ppm(&p, &colorize(d.as_plane(), ck.params.arch().d_max as f32))?;
        Some(p)
    } else {
        None
    };
    write_resolved(cfg, out_dir)?;
    Ok(InferOutput {
        disparity: disparity_path,
        depth: depth_path,
        preview: preview_path,
    })
}

/// Blue (far) to yellow (near) ramp of disparity over `[0, max]`.
pub fn colorize(d: &Plane<f32>, max: f32) -> Plane<f32> {
    Plane::from_fn(3, d.height(), d.width(), |c, y, x| {
        let t = (d.get(0, y, x) / max).clamp(0.0, 1.0);
        match c {
            0 => t,
            1 => t.sqrt() * 0.9,
            _ => 1.0 - t,
        }
    })
}

/// The finite-difference suite at the configured fixture count.
pub fn gradcheck(cfg: &RunConfig) -> Result<Vec<CheckReport>> {
    let g = &cfg.gradcheck;
    let mut reports = check_losses(g.fixtures, g.seed);
    for probe in [
        NetworkProbe::TeacherDepth,
        NetworkProbe::TeacherSegmentation,
        NetworkProbe::Student,
    ] {
        reports.push(check_network(
            probe,
            g.height,
            g.width,
            g.fixtures,
            g.coordinates,
            g.seed,
        )?);
    }
    Ok(reports)
}

/// Typed access to a checkpoint's network.
pub fn load_network(path: &Path, kind: NetworkKind) -> Result<NetworkParameters<f32>> {
    Ok(load_kind(path, kind)?.params)
}
