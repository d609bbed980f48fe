//! Run configuration: TOML file, environment and `--set` overrides.
//!
//! Layers apply in order: built-in defaults, the config file, environment
//! variables `PSDEPTH_<SECTION>__<KEY>` (e.g. `PSDEPTH_TEACHER__EPOCHS=5`),
//! then `--set section.key=value` arguments. Unknown keys at any layer are
//! errors.

use std::path::{Path, PathBuf};

use psdepth_core::geometry::CameraModel;
use psdepth_core::losses::LossWeights;
use psdepth_core::model::ArchConfig;
use psdepth_core::optim::{AdamConfig, LrSchedule};
use psdepth_core::synth::SceneConfig;
use psdepth_core::train::StudentObjective;
use psdepth_core::trainer::{Schedule, TeacherPlan};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const ENV_PREFIX: &str = "PSDEPTH_";
pub const RESOLVED_CONFIG: &str = "config.resolved.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root of every output directory.
    pub out: PathBuf,
    pub data: DataConfig,
    pub arch: ArchSection,
    pub loss: LossSection,
    pub teacher: TeacherConfig,
    pub student: StudentConfig,
    pub eval: EvalConfig,
    pub gradcheck: GradcheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("run"),
            data: DataConfig::default(),
            arch: ArchSection::default(),
            loss: LossSection::default(),
            teacher: TeacherConfig::default(),
            student: StudentConfig::default(),
            eval: EvalConfig::default(),
            gradcheck: GradcheckConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub height: usize,
    pub width: usize,
    pub train_samples: usize,
    pub val_samples: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub object_depth: [f64; 2],
    pub background_depth: [f64; 2],
    pub baseline: f64,
    pub focal: f64,
    pub camera_height: f64,
    pub classes: usize,
    pub texture_contrast: f64,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        let s = SceneConfig::default();
        Self {
            height: s.height,
            width: s.width,
            train_samples: 200,
            val_samples: 40,
            min_objects: s.min_objects,
            max_objects: s.max_objects,
            object_depth: [s.object_depth.0, s.object_depth.1],
            background_depth: [s.background_depth.0, s.background_depth.1],
            baseline: s.camera.baseline(),
            focal: s.camera.focal(),
            camera_height: s.camera_height,
            classes: s.classes,
            texture_contrast: s.texture_contrast,
            seed: 7,
        }
    }
}

impl DataConfig {
    pub fn scene(&self) -> Result<SceneConfig> {
        let scene = SceneConfig {
            height: self.height,
            width: self.width,
            min_objects: self.min_objects,
            max_objects: self.max_objects,
            object_depth: (self.object_depth[0], self.object_depth[1]),
            background_depth: (self.background_depth[0], self.background_depth[1]),
            camera: CameraModel::new(self.baseline, self.focal)?,
            camera_height: self.camera_height,
            classes: self.classes,
            texture_contrast: self.texture_contrast,
            seed: self.seed,
        };
        scene.validate()?;
        Ok(scene)
    }

    /// SHA-256 of the section's canonical TOML, recorded in dataset indexes.
    pub fn digest(&self) -> String {
        digest_of(self)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchSection {
    pub widths: [usize; 3],
    pub d_max: f64,
    pub init_disparity: f64,
    pub cost_shifts: usize,
}

impl Default for ArchSection {
    fn default() -> Self {
        let a = ArchConfig::default();
        Self {
            widths: a.widths,
            d_max: a.d_max,
            init_disparity: a.init_disparity,
            cost_shifts: a.cost_shifts,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub theta: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub gamma4: f64,
    pub gamma5: f64,
    pub kappa: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        Self::from(LossWeights::default())
    }
}

impl From<LossWeights> for LossSection {
    fn from(w: LossWeights) -> Self {
        Self {
            theta: w.theta,
            alpha1: w.alpha1,
            alpha2: w.alpha2,
            alpha3: w.alpha3,
            gamma1: w.gamma1,
            gamma2: w.gamma2,
            gamma3: w.gamma3,
            gamma4: w.gamma4,
            gamma5: w.gamma5,
            kappa: w.kappa,
        }
    }
}

impl From<LossSection> for LossWeights {
    fn from(w: LossSection) -> Self {
        Self {
            theta: w.theta,
            alpha1: w.alpha1,
            alpha2: w.alpha2,
            alpha3: w.alpha3,
            gamma1: w.gamma1,
            gamma2: w.gamma2,
            gamma3: w.gamma3,
            gamma4: w.gamma4,
            gamma5: w.gamma5,
            kappa: w.kappa,
        }
    }
}

/// Optimizer settings shared by both stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Epochs after which the learning rate is divided by `lr_factor`.
    pub milestones: Vec<usize>,
    pub lr_factor: f64,
    pub batch_size: usize,
    pub augment: bool,
}

impl OptimConfig {
    fn with_milestones(milestones: Vec<usize>) -> Self {
        let adam = AdamConfig::default();
        Self {
            lr: 1e-3,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            milestones,
            lr_factor: 10.0,
            batch_size: 4,
            augment: true,
        }
    }

    pub fn schedule(&self, seed: u64) -> Schedule {
        Schedule {
            batch_size: self.batch_size,
            adam: AdamConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
            },
            lr: LrSchedule {
                base: self.lr,
                milestones: self.milestones.clone(),
                factor: self.lr_factor,
            },
            augment: self.augment,
            seed,
        }
    }
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self::with_milestones(Vec::new())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherConfig {
    /// Regular epochs: joint, then semantically guided.
    pub epochs: usize,
    pub semantic_start_epoch: usize,
    pub over_train_epochs: usize,
    pub seed: u64,
    pub checkpoint_every: usize,
    /// Occlusion threshold used when exporting pseudo labels.
    pub tau: f64,
    pub optim: OptimConfig,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            epochs: 25,
            semantic_start_epoch: 15,
            over_train_epochs: 10,
            seed: 1,
            checkpoint_every: 5,
            tau: psdepth_core::geometry::OCCLUSION_THRESHOLD,
            optim: OptimConfig::with_milestones(vec![15, 20]),
        }
    }
}

impl TeacherConfig {
    pub fn plan(&self) -> TeacherPlan {
        TeacherPlan {
            epochs: self.epochs,
            semantic_start_epoch: self.semantic_start_epoch,
            over_train_epochs: self.over_train_epochs,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveName {
    Pseudo,
    Photometric,
}

impl From<ObjectiveName> for StudentObjective {
    fn from(o: ObjectiveName) -> Self {
        match o {
            ObjectiveName::Pseudo => StudentObjective::Pseudo,
            ObjectiveName::Photometric => StudentObjective::Photometric,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudentConfig {
    pub epochs: usize,
    pub objective: ObjectiveName,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub optim: OptimConfig,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            objective: ObjectiveName::Pseudo,
            seed: 101,
            checkpoint_every: 5,
            optim: OptimConfig::with_milestones(vec![9, 12]),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub split: Split,
    pub min_depth: f64,
    pub max_depth: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let cap = psdepth_core::metrics::DepthCap::default();
        Self {
            split: Split::Val,
            min_depth: cap.min_depth,
            max_depth: cap.max_depth,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    pub fixtures: usize,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub coordinates: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            fixtures: 5,
            seed: 42,
            height: 16,
            width: 32,
            coordinates: 6,
        }
    }
}

impl RunConfig {
    pub fn arch(&self) -> ArchConfig {
        ArchConfig {
            widths: self.arch.widths,
            classes: self.data.classes,
            d_max: self.arch.d_max,
            init_disparity: self.arch.init_disparity,
            cost_shifts: self.arch.cost_shifts,
        }
    }

    pub fn weights(&self) -> LossWeights {
        self.loss.into()
    }

    /// Checks every section before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.data.scene()?;
        if self.data.train_samples == 0 {
            return Err(Error::Config(String::from("data.train_samples must be positive")));
        }
        self.arch().validate()?;
        self.weights().validate()?;
        self.teacher.plan().validate()?;
        self.teacher.optim.schedule(self.teacher.seed).validate()?;
        if !(self.teacher.tau > 0.0) {
            return Err(Error::Config(format!(
                "teacher.tau must be positive, got {}",
                self.teacher.tau
            )));
        }
        if self.student.epochs == 0 {
            return Err(Error::Config(String::from("student.epochs must be positive")));
        }
        self.student.optim.schedule(self.student.seed).validate()?;
        if !(self.eval.min_depth > 0.0 && self.eval.max_depth > self.eval.min_depth) {
            return Err(Error::Config(String::from(
                "eval depth range must satisfy 0 < min_depth < max_depth",
            )));
        }
        if self.gradcheck.fixtures == 0 {
            return Err(Error::Config(String::from("gradcheck.fixtures must be positive")));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn data_dir(&self, split: Split) -> PathBuf {
        self.out.join("data").join(split.dir_name())
    }

    pub fn teacher_dir(&self) -> PathBuf {
        self.out.join("teacher")
    }

    pub fn pseudo_dir(&self) -> PathBuf {
        self.out.join("pseudo")
    }

    pub fn student_dir(&self) -> PathBuf {
        self.out.join("student")
    }
}

pub fn digest_of<T: Serialize>(value: &T) -> String {
    let text = toml::to_string(value).expect("config serializes");
    format!("{:x}", Sha256::digest(text.as_bytes()))
}

fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(root: &mut toml::Table, path: &[&str], value: toml::Value, origin: &str) -> Result<()> {
    let (last, parents) = path
        .split_last()
        .ok_or_else(|| Error::Config(format!("{origin}: empty key")))?;
    let mut table = root;
    for key in parents {
        let entry = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{origin}: {key} is not a section")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

/// Applies `key=value` with a dotted key, e.g. `teacher.optim.lr=1e-3`.
pub fn apply_set(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--set {assignment:?}: expected key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("--set {assignment:?}: malformed key")));
    }
    set_path(root, &path, parse_value(raw.trim()), "--set")
}

/// Applies one environment variable; names without the prefix are ignored.
pub fn apply_env(root: &mut toml::Table, name: &str, raw: &str) -> Result<()> {
    let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
        return Ok(());
    };
    let lower = rest.to_ascii_lowercase();
    let path: Vec<&str> = lower.split("__").collect();
    if path.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("environment variable {name}: malformed key")));
    }
    set_path(root, &path, parse_value(raw), name)
}

/// Resolves the layered configuration.
pub fn load(
    file: Option<&Path>,
    env: impl IntoIterator<Item = (String, String)>,
    sets: &[String],
) -> Result<RunConfig> {
    let mut root = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => toml::Table::new(),
    };
    let mut env: Vec<(String, String)> = env.into_iter().collect();
    env.sort();
    for (name, value) in &env {
        apply_env(&mut root, name, value)?;
    }
    for s in sets {
        apply_set(&mut root, s)?;
    }
    let config: RunConfig = toml::Value::Table(root)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn layers_apply_in_order() {
        let env = vec![
            ("PSDEPTH_TEACHER__EPOCHS".to_string(), "20".to_string()),
            ("PSDEPTH_STUDENT__EPOCHS".to_string(), "3".to_string()),
            ("HOME".to_string(), "/root".to_string()),
        ];
        let c = load(None, env, &["student.epochs=4".to_string(), "out=\"x\"".to_string()]).unwrap();
        assert_eq!(c.teacher.epochs, 20);
        assert_eq!(c.student.epochs, 4);
        assert_eq!(c.out, PathBuf::from("x"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = load(None, Vec::new(), &["teacher.epoch=3".to_string()]).unwrap_err();
        assert!(err.to_string().contains("epoch"), "{err}");
        let err = load(None, vec![("PSDEPTH_NOPE".to_string(), "1".to_string())], &[]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn bare_words_become_strings() {
        let c = load(None, Vec::new(), &["student.objective=photometric".to_string()]).unwrap();
        assert_eq!(c.student.objective, ObjectiveName::Photometric);
        assert!(load(None, Vec::new(), &["teacher.epochs=0".to_string()]).is_err());
    }
}
