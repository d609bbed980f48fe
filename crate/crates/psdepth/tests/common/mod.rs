#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

/// A configuration small enough to train in seconds.
pub fn tiny_toml(out: &Path) -> String {
    format!(
        r#"out = {out:?}

[data]
height = 16
width = 32
train_samples = 6
val_samples = 3
focal = 20.0

[arch]
widths = [4, 6, 8]
cost_shifts = 4

[teacher]
epochs = 2
semantic_start_epoch = 1
over_train_epochs = 1
checkpoint_every = 1

[teacher.optim]
milestones = [2]
batch_size = 2

[student]
epochs = 3
checkpoint_every = 1

[student.optim]
milestones = []
batch_size = 2

[gradcheck]
fixtures = 5
"#,
        out = out.display().to_string()
    )
}

pub fn write_tiny(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.toml");
    std::fs::write(&path, tiny_toml(&dir.join("run"))).unwrap();
    path
}

pub fn psdepth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psdepth"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}
