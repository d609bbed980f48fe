//! Acceptance report: one PASS/FAIL line per criterion, on the default
//! configuration. Exits nonzero if any criterion fails.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use psdepth::checkpoint::Checkpoint;
use psdepth::config::{ObjectiveName, RunConfig, Split};
use psdepth::dataset::{read_dataset, sample_file};
use psdepth::log::read_totals;
use psdepth::pipeline::{
    eval_checkpoint, export_pseudo, gen_data, gradcheck, train_student, train_teacher, FINAL_CHECKPOINT,
    REGULAR_CHECKPOINT,
};
use psdepth::Error;
use psdepth_core::oracle::{check_geometry, check_metrics};
use psdepth_core::synth::generate_sample;

const GRADCHECK_SECONDS: f64 = 120.0;
const ROUND_TRIP_TOLERANCE: f64 = 1e-3;
const METRIC_TOLERANCE: f64 = 1e-10;
const TEACHER_ABS_REL: f64 = 0.15;
const TEACHER_SECONDS: f64 = 20.0 * 60.0;
const ABLATION_TIE: f64 = 0.005;
const DISTILL_FACTOR: f64 = 2.0;
const LOSS_TOLERANCE: f64 = 1e-6;
const SEEDS: [u64; 3] = [1, 2, 3];

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, n: usize, pass: bool, detail: String) {
        self.failed += usize::from(!pass);
        println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
        std::io::stdout().flush().ok();
    }
}

fn progress(msg: &str) {
    eprintln!("[acceptance] {msg}");
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            fs::copy(entry.path(), target).unwrap();
        }
    }
}

fn abs_rel(cfg: &RunConfig, ckpt: &Path, split: Split) -> f64 {
    let mut c = cfg.clone();
    c.eval.split = split;
    eval_checkpoint(&c, ckpt).unwrap().abs_rel
}

struct SeedRun {
    teacher_seconds: f64,
    regular_train: f64,
    over_train: f64,
    teacher_val: f64,
    /// Validation Abs Rel of the full, PGT-only and photometric students.
    students: [f64; 3],
}

fn student_variant(base: &RunConfig, root: &Path, name: &str, seed: u64) -> RunConfig {
    let mut cfg = base.clone();
    cfg.out = root.join(name);
    cfg.student.seed = 100 + seed;
    match name {
        "full" => {}
        "pgt" => {
            cfg.loss.gamma4 = 0.0;
            cfg.loss.gamma5 = 0.0;
        }
        _ => cfg.student.objective = ObjectiveName::Photometric,
    }
    copy_dir(&base.out.join("data"), &cfg.out.join("data"));
    if cfg.student.objective == ObjectiveName::Pseudo {
        copy_dir(&base.pseudo_dir(), &cfg.pseudo_dir());
    }
    cfg
}

fn run_seed(root: &Path, seed: u64) -> SeedRun {
    let mut cfg = RunConfig {
        out: root.join(format!("seed{seed}")),
        ..RunConfig::default()
    };
    cfg.teacher.seed = seed;
    gen_data(&cfg).unwrap();
    progress(&format!("seed {seed}: training teacher"));
    let t = train_teacher(&cfg, None).unwrap();
    let regular = cfg.teacher_dir().join(REGULAR_CHECKPOINT);
    let last = cfg.teacher_dir().join(FINAL_CHECKPOINT);
    let run = SeedRun {
        teacher_seconds: t.seconds,
        regular_train: abs_rel(&cfg, &regular, Split::Train),
        over_train: abs_rel(&cfg, &last, Split::Train),
        teacher_val: abs_rel(&cfg, &last, Split::Val),
        students: [0.0; 3],
    };
    progress(&format!(
        "seed {seed}: teacher {:.0}s, train Abs Rel regular {:.4} over-trained {:.4}, val {:.4}",
        run.teacher_seconds, run.regular_train, run.over_train, run.teacher_val
    ));
    export_pseudo(&cfg, None).unwrap();
    let mut students = [0.0; 3];
    for (i, name) in ["full", "pgt", "photometric"].iter().enumerate() {
        let scfg = student_variant(&cfg, &cfg.out, name, seed);
        let o = train_student(&scfg, None).unwrap();
        students[i] = abs_rel(&scfg, &o.checkpoint, Split::Val);
        progress(&format!(
            "seed {seed}: student {name} val Abs Rel {:.4} ({:.0}s)",
            students[i], o.seconds
        ));
    }
    SeedRun { students, ..run }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn tiny_config(out: PathBuf) -> RunConfig {
    let mut cfg = RunConfig {
        out,
        ..RunConfig::default()
    };
    cfg.data.height = 32;
    cfg.data.width = 64;
    cfg.data.focal = 40.0;
    cfg.data.train_samples = 8;
    cfg.data.val_samples = 4;
    cfg.teacher.epochs = 3;
    cfg.teacher.semantic_start_epoch = 2;
    cfg.teacher.over_train_epochs = 1;
    cfg.teacher.optim.milestones = vec![2];
    cfg.student.epochs = 2;
    cfg.student.optim.milestones = vec![];
    cfg
}

fn bytes(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

/// Runs every stage twice and compares logs and artifacts.
fn determinism(root: &Path) -> (bool, String) {
    let runs: Vec<RunConfig> = (0..2).map(|i| tiny_config(root.join(format!("det{i}")))).collect();
    let mut totals = Vec::new();
    for cfg in &runs {
        gen_data(cfg).unwrap();
        let t = train_teacher(cfg, None).unwrap();
        export_pseudo(cfg, None).unwrap();
        let s = train_student(cfg, None).unwrap();
        totals.push((read_totals(&t.log).unwrap(), read_totals(&s.log).unwrap()));
    }
    let mut max_diff = 0.0f64;
    for (a, b) in totals[0]
        .0
        .iter()
        .chain(&totals[0].1)
        .zip(totals[1].0.iter().chain(&totals[1].1))
    {
        max_diff = max_diff.max((a.2 - b.2).abs());
    }
    let artifacts = [
        "data/train/index.txt",
        "data/val/index.txt",
        "teacher/regular.ckpt",
        "teacher/final.ckpt",
        "pseudo/index.txt",
        "pseudo/disp/0007.pfm",
        "student/final.ckpt",
    ];
    let differing: Vec<&str> = artifacts
        .iter()
        .copied()
        .filter(|f| bytes(&runs[0].out.join(f)) != bytes(&runs[1].out.join(f)))
        .collect();
    let evals: Vec<_> = runs
        .iter()
        .map(|c| eval_checkpoint(c, &c.student_dir().join(FINAL_CHECKPOINT)).unwrap())
        .collect();
    let pass = max_diff <= LOSS_TOLERANCE && differing.is_empty() && evals[0] == evals[1];
    (
        pass,
        format!(
            "max logged loss difference {max_diff:.1e} (tol {LOSS_TOLERANCE:.0e}), {} of {} artifacts differ, eval reports equal: {}",
            differing.len(),
            artifacts.len(),
            evals[0] == evals[1]
        ),
    )
}

/// Round trips on the trained default run and corrupted copies of its files.
fn persistence(cfg: &RunConfig, scratch: &Path) -> (bool, String) {
    let mut checks: Vec<(&str, bool)> = Vec::new();
    let data = read_dataset(&cfg.data_dir(Split::Train)).unwrap();
    let scene = cfg.data.scene().unwrap();
    let regenerated = data
        .samples
        .iter()
        .enumerate()
        .all(|(i, s)| *s == generate_sample(&scene, i as u64).unwrap());
    checks.push(("dataset round trip", regenerated));

    let ck_path = cfg.teacher_dir().join(FINAL_CHECKPOINT);
    let raw = bytes(&ck_path);
    let ck = Checkpoint::load(&ck_path).unwrap();
    checks.push(("checkpoint round trip", ck.encode() == raw));

    let bad_ck = scratch.join("flipped.ckpt");
    let mut flipped = raw.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x10;
    fs::write(&bad_ck, &flipped).unwrap();
    checks.push((
        "flipped checkpoint byte",
        matches!(Checkpoint::load(&bad_ck), Err(Error::Checkpoint { path, .. }) if path == bad_ck),
    ));
    fs::write(&bad_ck, &raw[..raw.len() - 100]).unwrap();
    checks.push((
        "truncated checkpoint",
        matches!(Checkpoint::load(&bad_ck), Err(Error::Checkpoint { path, .. }) if path == bad_ck),
    ));

    let copy = scratch.join("train");
    copy_dir(&cfg.data_dir(Split::Train), &copy);
    let pfm = sample_file(&copy, "disp", 3, "pfm");
    let good = bytes(&pfm);
    fs::write(&pfm, &good[..good.len() - 4]).unwrap();
    checks.push((
        "truncated disparity file",
        matches!(read_dataset(&copy), Err(Error::Format { path, .. }) if path == pfm),
    ));
    let mut tweaked = good.clone();
    let last = tweaked.len() - 1;
    tweaked[last] ^= 0x01;
    fs::write(&pfm, &tweaked).unwrap();
    checks.push((
        "altered disparity value",
        matches!(read_dataset(&copy), Err(Error::Format { ref msg, .. }) if msg.contains("content digest")),
    ));
    fs::write(&pfm, &good).unwrap();
    let left = sample_file(&copy, "left", 5, "ppm");
    fs::remove_file(&left).unwrap();
    checks.push((
        "missing image",
        matches!(read_dataset(&copy), Err(e) if e.to_string().contains("left")),
    ));

    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    (
        failed.is_empty(),
        format!(
            "{} of {} round-trip and corruption checks hold{}",
            checks.len() - failed.len(),
            checks.len(),
            if failed.is_empty() {
                String::new()
            } else {
                format!(" (failed: {})", failed.join(", "))
            }
        ),
    )
}

fn main() {
    let root = tempfile::tempdir().unwrap();
    let mut report = Report { failed: 0 };
    let started = Instant::now();

    let t0 = Instant::now();
    let checks = gradcheck(&RunConfig::default()).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let worst_loss = checks
        .iter()
        .filter(|c| c.tolerance == psdepth_core::gradcheck::LOSS_TOLERANCE)
        .map(|c| c.max_rel_error)
        .fold(0.0, f64::max);
    let worst_net = checks
        .iter()
        .filter(|c| c.tolerance == psdepth_core::gradcheck::NETWORK_TOLERANCE)
        .map(|c| c.max_rel_error)
        .fold(0.0, f64::max);
    let fixtures = checks.iter().map(|c| c.fixtures).min().unwrap_or(0);
    report.line(
        1,
        checks.iter().all(|c| c.passed()) && fixtures >= 5 && secs < GRADCHECK_SECONDS,
        format!(
            "{} checks on >= {fixtures} fixtures, worst loss rel err {worst_loss:.2e} (< 1e-4), worst network rel err {worst_net:.2e} (< 1e-3), {secs:.1}s (< {GRADCHECK_SECONDS:.0}s)",
            checks.len()
        ),
    );

    let g = check_geometry(50, 40, 100, 17).unwrap();
    report.line(
        2,
        g.passed(ROUND_TRIP_TOLERANCE),
        format!(
            "identity failures {}/{}, round-trip error {:.2e} (< {ROUND_TRIP_TOLERANCE:.0e}) over {} samples, mask mismatches {}/{}",
            g.identity_failures, g.identity_fixtures, g.round_trip_error, g.round_trip_samples, g.mask_failures, g.mask_pairs
        ),
    );

    let m = check_metrics(50, 23).unwrap();
    report.line(
        3,
        m.passed(METRIC_TOLERANCE),
        format!(
            "max deviation {:.1e} (< {METRIC_TOLERANCE:.0e}) on {} fixtures, pred=gt exact: {}, pred=1.25gt exact: {}",
            m.max_error, m.fixtures, m.identity_exact, m.scaled_exact
        ),
    );

    let (det_pass, det_detail) = determinism(root.path());

    let mut runs = Vec::new();
    for seed in SEEDS {
        runs.push(run_seed(root.path(), seed));
        if seed == SEEDS[0] {
            let r = &runs[0];
            report.line(
                4,
                r.regular_train < TEACHER_ABS_REL && r.teacher_seconds < TEACHER_SECONDS,
                format!(
                    "teacher train Abs Rel {:.4} (< {TEACHER_ABS_REL}), training {:.0}s including over-training (< {TEACHER_SECONDS:.0}s)",
                    r.regular_train, r.teacher_seconds
                ),
            );
        }
    }

    let improved = runs.iter().filter(|r| r.over_train <= r.regular_train).count();
    let pairs: Vec<String> = runs
        .iter()
        .map(|r| format!("{:.4}->{:.4}", r.regular_train, r.over_train))
        .collect();
    report.line(
        5,
        improved == SEEDS.len(),
        format!(
            "over-trained <= regular train Abs Rel in {improved}/{} seeds ({})",
            SEEDS.len(),
            pairs.join(", ")
        ),
    );

    let means: Vec<f64> = (0..3).map(|i| mean(runs.iter().map(|r| r.students[i]))).collect();
    report.line(
        6,
        means[0] <= means[1] + ABLATION_TIE && means[1] <= means[2] + ABLATION_TIE,
        format!(
            "mean val Abs Rel full {:.4} <= PGT-only {:.4} <= photometric {:.4} (tie tolerance {ABLATION_TIE})",
            means[0], means[1], means[2]
        ),
    );

    let ratios: Vec<f64> = runs.iter().map(|r| r.students[0] / r.teacher_val).collect();
    let worst = ratios.iter().cloned().fold(0.0, f64::max);
    report.line(
        7,
        worst <= DISTILL_FACTOR,
        format!(
            "student/teacher val Abs Rel ratio at most {worst:.3} (<= {DISTILL_FACTOR}); mean student {:.4}, mean teacher {:.4}",
            means[0],
            mean(runs.iter().map(|r| r.teacher_val))
        ),
    );

    report.line(8, det_pass, det_detail);

    let first = RunConfig {
        out: root.path().join("seed1"),
        ..RunConfig::default()
    };
    let scratch = root.path().join("corrupt");
    fs::create_dir_all(&scratch).unwrap();
    let (p_pass, p_detail) = persistence(&first, &scratch);
    report.line(9, p_pass, p_detail);

    println!(
        "acceptance: {} of 9 criteria pass ({:.0}s)",
        9 - report.failed,
        started.elapsed().as_secs_f64()
    );
    drop(root);
    if report.failed > 0 {
        std::process::exit(1);
    }
}
