mod common;

use std::fs;
use std::path::Path;

use psdepth::config::{self, RunConfig};
use psdepth::log::read_totals;
use psdepth::pipeline::{epoch_checkpoint, export_pseudo, gen_data, train_student, train_teacher};
use psdepth::Error;

fn tiny(root: &Path, sets: &[&str]) -> RunConfig {
    let file = common::write_tiny(root);
    let sets: Vec<String> = sets.iter().map(|s| s.to_string()).collect();
    config::load(Some(&file), std::iter::empty(), &sets).unwrap()
}

fn full_run(root: &Path) -> RunConfig {
    let cfg = tiny(root, &[]);
    gen_data(&cfg).unwrap();
    train_teacher(&cfg, None).unwrap();
    export_pseudo(&cfg, None).unwrap();
    train_student(&cfg, None).unwrap();
    cfg
}

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn repeated_stages_are_bit_exact() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ca, cb) = (full_run(a.path()), full_run(b.path()));
    for f in [
        "teacher/final.ckpt",
        "teacher/regular.ckpt",
        "teacher/epoch_0002.ckpt",
        "teacher/log.csv",
        "pseudo/disp/0003.pfm",
        "pseudo/index.txt",
        "student/final.ckpt",
        "student/log.csv",
        "data/train/index.txt",
    ] {
        assert_eq!(read(&ca.out.join(f)), read(&cb.out.join(f)), "{f}");
    }
    let la = read_totals(&ca.teacher_dir().join("log.csv")).unwrap();
    assert_eq!(la.len(), 5);
    assert_eq!(la, read_totals(&cb.teacher_dir().join("log.csv")).unwrap());
}

#[test]
fn resuming_matches_an_uninterrupted_run() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ca = full_run(a.path());
    let cb = full_run(b.path());
    let log_before = read(&cb.teacher_dir().join("log.csv"));
    fs::remove_file(cb.teacher_dir().join("final.ckpt")).unwrap();
    let o = train_teacher(&cb, Some(&epoch_checkpoint(&cb.teacher_dir(), 1))).unwrap();
    assert_eq!(o.epochs, 3);
    assert_eq!(read(&cb.teacher_dir().join("log.csv")), log_before);
    assert_eq!(
        read(&ca.teacher_dir().join("final.ckpt")),
        read(&cb.teacher_dir().join("final.ckpt"))
    );

    train_student(&cb, Some(&epoch_checkpoint(&cb.student_dir(), 2))).unwrap();
    assert_eq!(
        read(&ca.student_dir().join("final.ckpt")),
        read(&cb.student_dir().join("final.ckpt"))
    );
    assert_eq!(
        read(&ca.student_dir().join("log.csv")),
        read(&cb.student_dir().join("log.csv"))
    );

    let err = train_student(&cb, Some(&epoch_checkpoint(&cb.teacher_dir(), 1))).unwrap_err();
    assert!(err.to_string().contains("expected a student checkpoint"), "{err}");
}

#[test]
fn divergence_is_reported_with_the_last_good_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let good = tiny(dir.path(), &[]);
    gen_data(&good).unwrap();
    train_teacher(&good, None).unwrap();
    let cfg = tiny(dir.path(), &["teacher.optim.lr=1e30"]);
    let last = epoch_checkpoint(&cfg.teacher_dir(), 1);
    match train_teacher(&cfg, Some(&last)).unwrap_err() {
        Error::Diverged { epoch, last_good, .. } => {
            assert_eq!(epoch, 2);
            assert_eq!(last_good, last.display().to_string());
            assert!(last.is_file());
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn student_rejects_labels_of_another_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = full_run(dir.path());
    let other = tiny(dir.path(), &["data.seed=8"]);
    gen_data(&other).unwrap();
    let err = train_student(&cfg, None).unwrap_err();
    assert!(err.to_string().contains("different training set"), "{err}");
}
