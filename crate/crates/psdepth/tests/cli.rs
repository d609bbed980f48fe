mod common;

use std::fs;

use common::{psdepth, stderr, stdout, write_tiny};

fn cfg_args(cfg: &std::path::Path) -> Vec<String> {
    vec![String::from("--config"), cfg.display().to_string()]
}

fn run(cfg: &std::path::Path, extra: &[&str]) -> std::process::Output {
    let mut args = cfg_args(cfg);
    args.extend(extra.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    psdepth(&refs)
}

fn ok(o: std::process::Output) -> String {
    assert!(
        o.status.success(),
        "exit {:?}\n{}\n{}",
        o.status,
        stdout(&o),
        stderr(&o)
    );
    stdout(&o)
}

#[test]
fn eval_with_ground_truth_as_prediction_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny(dir.path());
    ok(run(&cfg, &["gen-data"]));
    let val = dir.path().join("run/data/val");
    ok(run(&cfg, &["eval", "--pred", val.to_str().unwrap()]));
    let csv = fs::read_to_string(dir.path().join("run/eval_val.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let values: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    for (name, v) in header.iter().zip(&values).take(7) {
        let want = if name.starts_with('a') && *name != "abs_rel" {
            1.0
        } else {
            0.0
        };
        assert_eq!(*v, want, "{name}");
    }
    assert_eq!(values[7], (3 * 16 * 32) as f64);
}

#[test]
fn gradcheck_passes_on_default_config() {
    let o = psdepth(&["gradcheck"]);
    let out = ok(o);
    assert!(!out.contains("FAIL"), "{out}");
    assert!(out.lines().filter(|l| l.starts_with("PASS")).count() >= 10, "{out}");
}

#[test]
fn full_pipeline_and_infer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny(dir.path());
    ok(run(&cfg, &["gen-data"]));
    let t = ok(run(&cfg, &["train-teacher"]));
    assert!(t.contains("3 epochs"), "{t}");
    let run_dir = dir.path().join("run");
    for f in [
        "teacher/regular.ckpt",
        "teacher/final.ckpt",
        "teacher/epoch_0001.ckpt",
        "teacher/log.csv",
    ] {
        assert!(run_dir.join(f).is_file(), "{f}");
    }
    ok(run(&cfg, &["export-pseudo"]));
    assert!(run_dir.join("pseudo/disp/0005.pfm").is_file());
    ok(run(&cfg, &["train-student"]));
    let student = run_dir.join("student/final.ckpt");
    let e = ok(run(&cfg, &["eval", "--checkpoint", student.to_str().unwrap()]));
    assert!(e.contains("Abs Rel"), "{e}");
    for stage in ["data", "teacher", "pseudo", "student"] {
        assert!(run_dir.join(stage).join("config.resolved.toml").is_file(), "{stage}");
    }

    let image = run_dir.join("data/val/left/0000.ppm");
    ok(run(
        &cfg,
        &[
            "infer",
            "--checkpoint",
            student.to_str().unwrap(),
            "--preview",
            image.to_str().unwrap(),
        ],
    ));
    let disp = psdepth::pnm::read_pfm(&run_dir.join("infer/0000_disp.pfm")).unwrap();
    assert_eq!((disp.height(), disp.width()), (16, 32));
    let d_max = psdepth::config::RunConfig::default().arch.d_max as f32;
    assert!(disp.data().iter().all(|&v| v > 0.0 && v <= d_max));
    let depth = psdepth::pnm::read_pfm(&run_dir.join("infer/0000_depth.pfm")).unwrap();
    assert!(depth.data().iter().all(|v| v.is_finite() && *v > 0.0));
    assert!(run_dir.join("infer/0000_disp.ppm").is_file());

    let teacher = run_dir.join("teacher/final.ckpt");
    let o = run(
        &cfg,
        &[
            "infer",
            "--checkpoint",
            teacher.to_str().unwrap(),
            image.to_str().unwrap(),
        ],
    );
    assert!(!o.status.success());
    assert!(stderr(&o).contains("expected a student checkpoint"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_is_a_hard_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[teacher]\nepochz = 3\n").unwrap();
    let o = run(&cfg, &["gen-data"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("epochz"), "{}", stderr(&o));

    let o = psdepth(&["--set", "student.lr=1", "gen-data"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("lr"), "{}", stderr(&o));
}

#[test]
fn missing_checkpoint_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny(dir.path());
    let missing = dir.path().join("nowhere.ckpt");
    let o = run(&cfg, &["export-pseudo", "--checkpoint", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(missing.to_str().unwrap()), "{}", stderr(&o));
}

#[test]
fn flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny(dir.path());
    let out = dir.path().join("elsewhere");
    ok(run(
        &cfg,
        &[
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "99",
            "--set",
            "data.val_samples=1",
            "gen-data",
        ],
    ));
    let resolved = fs::read_to_string(out.join("data/config.resolved.toml")).unwrap();
    let back: psdepth::config::RunConfig = toml::from_str(&resolved).unwrap();
    assert_eq!(back.data.seed, 99);
    assert_eq!(back.data.val_samples, 1);
    assert_eq!(back.out, out);
    assert!(!dir.path().join("run").exists());
}
