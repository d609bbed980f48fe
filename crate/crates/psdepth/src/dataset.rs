//! Dataset and pseudo-label directories.
//!
//! A dataset directory holds one file per sample and view under
//! `left/ right/ disp/ disp_r/ sem/ sem_r/ occ/ occ_r/` (`NNNN.ppm`,
//! `.pfm`, `.pgm`) plus an `index.txt` manifest. The manifest records the
//! sample count, image size, class count, camera, the digest of the scene
//! configuration that produced the data and a SHA-256 over every file, which
//! is verified on read.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use psdepth_core::geometry::CameraModel;
use psdepth_core::synth::StereoSample;
use psdepth_core::train::PseudoLabel;
use psdepth_core::{DisparityMap, OcclusionMask, SemanticMap};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pnm::{read_pfm, read_pgm, read_ppm, write_pfm, write_pgm, write_ppm};

pub const INDEX_FILE: &str = "index.txt";
const DATASET_MAGIC: &str = "psdepth-dataset 1";
const PSEUDO_MAGIC: &str = "psdepth-pseudo 1";

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<StereoSample>,
    pub classes: usize,
    pub config_digest: String,
    /// SHA-256 over every sample file, in index order.
    pub content_digest: String,
}

pub fn sample_file(dir: &Path, sub: &str, index: usize, ext: &str) -> PathBuf {
    dir.join(sub).join(format!("{index:04}.{ext}"))
}

fn mask_bytes(m: &OcclusionMask) -> Vec<u8> {
    m.data().iter().map(|&v| v * 255).collect()
}

fn read_mask(path: &Path, h: usize, w: usize) -> Result<OcclusionMask> {
    let r = read_pgm(path)?;
    check_size(path, r.height, r.width, h, w)?;
    let data = r
        .data
        .iter()
        .map(|&v| match v {
            0 => Ok(0),
            255 => Ok(1),
            other => Err(Error::format(path, format!("mask value {other} is neither 0 nor 255"))),
        })
        .collect::<Result<Vec<u8>>>()?;
    Ok(OcclusionMask::new(h, w, data)?)
}

fn read_labels(path: &Path, h: usize, w: usize, classes: usize) -> Result<SemanticMap> {
    let r = read_pgm(path)?;
    check_size(path, r.height, r.width, h, w)?;
    SemanticMap::new(h, w, classes, r.data).map_err(|e| Error::format(path, e.to_string()))
}

fn read_disparity(path: &Path, h: usize, w: usize) -> Result<DisparityMap<f32>> {
    let p = read_pfm(path)?;
    check_size(path, p.height(), p.width(), h, w)?;
    DisparityMap::new(p).map_err(|e| Error::format(path, e.to_string()))
}

fn check_size(path: &Path, h: usize, w: usize, eh: usize, ew: usize) -> Result<()> {
    if (h, w) != (eh, ew) {
        return Err(Error::format(
            path,
            format!("size {h}x{w} does not match the index ({eh}x{ew})"),
        ));
    }
    Ok(())
}

fn hash_files(files: &[PathBuf]) -> Result<String> {
    let mut hasher = Sha256::new();
    for f in files {
        hasher.update(fs::read(f).map_err(|e| Error::io(f, e))?);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

fn count_files(dir: &Path) -> Result<usize> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut n = 0;
    for e in entries {
        let e = e.map_err(|e| Error::io(dir, e))?;
        if e.file_type().map_err(|err| Error::io(&e.path(), err))?.is_file() {
            n += 1;
        }
    }
    Ok(n)
}

/// Parsed `key value` lines of a manifest after its magic line.
struct Index {
    path: PathBuf,
    entries: Vec<(String, String)>,
}

impl Index {
    fn read(dir: &Path, magic: &str) -> Result<Self> {
        let path = dir.join(INDEX_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut lines = text.lines();
        if lines.next() != Some(magic) {
            return Err(Error::format(&path, format!("first line must be {magic:?}")));
        }
        let mut entries = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once(' ')
                .ok_or_else(|| Error::format(&path, format!("malformed line {line:?}")))?;
            entries.push((k.to_string(), v.trim().to_string()));
        }
        Ok(Self { path, entries })
    }

    fn get(&self, key: &str) -> Result<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::format(&self.path, format!("missing key {key:?}")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key)?;
        v.parse()
            .map_err(|_| Error::format(&self.path, format!("invalid value {v:?} for {key:?}")))
    }
}

const DATASET_FILES: [(&str, &str); 8] = [
    ("left", "ppm"),
    ("right", "ppm"),
    ("disp", "pfm"),
    ("disp_r", "pfm"),
    ("sem", "pgm"),
    ("sem_r", "pgm"),
    ("occ", "pgm"),
    ("occ_r", "pgm"),
];

fn dataset_files(dir: &Path, n: usize) -> Vec<PathBuf> {
    (0..n)
        .flat_map(|i| {
            DATASET_FILES
                .iter()
                .map(move |(sub, ext)| sample_file(dir, sub, i, ext))
        })
        .collect()
}

/// Writes `samples` (all of one size and camera) into `dir`.
pub fn write_dataset(dir: &Path, samples: &[StereoSample], classes: usize, config_digest: &str) -> Result<Dataset> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Config(String::from("refusing to write an empty dataset")))?;
    let (h, w) = (first.left.height(), first.left.width());
    for (i, s) in samples.iter().enumerate() {
        let p = sample_file(dir, "left", i, "ppm");
        write_ppm(&p, &s.left)?;
        write_ppm(&sample_file(dir, "right", i, "ppm"), &s.right)?;
        write_pfm(&sample_file(dir, "disp", i, "pfm"), s.disparity_left.as_plane())?;
        write_pfm(&sample_file(dir, "disp_r", i, "pfm"), s.disparity_right.as_plane())?;
        write_pgm(&sample_file(dir, "sem", i, "pgm"), h, w, s.semantic_left.labels())?;
        write_pgm(&sample_file(dir, "sem_r", i, "pgm"), h, w, s.semantic_right.labels())?;
        write_pgm(&sample_file(dir, "occ", i, "pgm"), h, w, &mask_bytes(&s.occlusion_left))?;
        write_pgm(
            &sample_file(dir, "occ_r", i, "pgm"),
            h,
            w,
            &mask_bytes(&s.occlusion_right),
        )?;
        if s.camera != first.camera || s.left.height() != h || s.left.width() != w {
            return Err(Error::format(&p, "samples of one dataset must share size and camera"));
        }
    }
    let content_digest = hash_files(&dataset_files(dir, samples.len()))?;
    let mut index = String::new();
    writeln!(index, "{DATASET_MAGIC}").unwrap();
    writeln!(index, "samples {}", samples.len()).unwrap();
    writeln!(index, "height {h}").unwrap();
    writeln!(index, "width {w}").unwrap();
    writeln!(index, "classes {classes}").unwrap();
    writeln!(index, "baseline {:?}", first.camera.baseline()).unwrap();
    writeln!(index, "focal {:?}", first.camera.focal()).unwrap();
    writeln!(index, "config_digest {config_digest}").unwrap();
    writeln!(index, "content_digest {content_digest}").unwrap();
    let path = dir.join(INDEX_FILE);
    fs::write(&path, index).map_err(|e| Error::io(&path, e))?;
    Ok(Dataset {
        samples: samples.to_vec(),
        classes,
        config_digest: config_digest.to_string(),
        content_digest,
    })
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let index = Index::read(dir, DATASET_MAGIC)?;
    let n: usize = index.parse("samples")?;
    let h: usize = index.parse("height")?;
    let w: usize = index.parse("width")?;
    let classes: usize = index.parse("classes")?;
    let camera = CameraModel::new(index.parse("baseline")?, index.parse("focal")?)
        .map_err(|e| Error::format(&index.path, e.to_string()))?;
    for (sub, _) in DATASET_FILES {
        let found = count_files(&dir.join(sub))?;
        if found != n {
            return Err(Error::format(
                &index.path,
                format!("index lists {n} samples but {sub}/ holds {found} files"),
            ));
        }
    }
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let left_path = sample_file(dir, "left", i, "ppm");
        let left = read_ppm(&left_path)?;
        check_size(&left_path, left.height(), left.width(), h, w)?;
        let right_path = sample_file(dir, "right", i, "ppm");
        let right = read_ppm(&right_path)?;
        check_size(&right_path, right.height(), right.width(), h, w)?;
        samples.push(StereoSample {
            left,
            right,
            disparity_left: read_disparity(&sample_file(dir, "disp", i, "pfm"), h, w)?,
            disparity_right: read_disparity(&sample_file(dir, "disp_r", i, "pfm"), h, w)?,
            semantic_left: read_labels(&sample_file(dir, "sem", i, "pgm"), h, w, classes)?,
            semantic_right: read_labels(&sample_file(dir, "sem_r", i, "pgm"), h, w, classes)?,
            occlusion_left: read_mask(&sample_file(dir, "occ", i, "pgm"), h, w)?,
            occlusion_right: read_mask(&sample_file(dir, "occ_r", i, "pgm"), h, w)?,
            camera,
        });
    }
    let content_digest = hash_files(&dataset_files(dir, n))?;
    if content_digest != index.get("content_digest")? {
        return Err(Error::format(
            &index.path,
            "content digest does not match the sample files",
        ));
    }
    Ok(Dataset {
        samples,
        classes,
        config_digest: index.get("config_digest")?.to_string(),
        content_digest,
    })
}

const PSEUDO_FILES: [(&str, &str); 3] = [("disp", "pfm"), ("occ", "pgm"), ("sem", "pgm")];

fn pseudo_files(dir: &Path, n: usize) -> Vec<PathBuf> {
    (0..n)
        .flat_map(|i| PSEUDO_FILES.iter().map(move |(sub, ext)| sample_file(dir, sub, i, ext)))
        .collect()
}

/// Pseudo labels exported by a teacher, aligned with a dataset by index.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabelSet {
    pub labels: Vec<PseudoLabel>,
    /// Digest of the teacher checkpoint that produced the labels.
    pub teacher_digest: String,
    /// Content digest of the dataset the labels belong to.
    pub dataset_digest: String,
}

pub fn write_pseudo_labels(dir: &Path, set: &PseudoLabelSet) -> Result<()> {
    let first = set
        .labels
        .first()
        .ok_or_else(|| Error::Config(String::from("refusing to write an empty pseudo-label set")))?;
    let (h, w) = (first.disparity.height(), first.disparity.width());
    for (i, l) in set.labels.iter().enumerate() {
        write_pfm(&sample_file(dir, "disp", i, "pfm"), l.disparity.as_plane())?;
        write_pgm(&sample_file(dir, "occ", i, "pgm"), h, w, &mask_bytes(&l.occlusion))?;
        write_pgm(&sample_file(dir, "sem", i, "pgm"), h, w, l.semantic.labels())?;
    }
    let mut index = String::new();
    writeln!(index, "{PSEUDO_MAGIC}").unwrap();
    writeln!(index, "samples {}", set.labels.len()).unwrap();
    writeln!(index, "height {h}").unwrap();
    writeln!(index, "width {w}").unwrap();
    writeln!(index, "classes {}", first.semantic.classes()).unwrap();
    writeln!(index, "teacher_digest {}", set.teacher_digest).unwrap();
    writeln!(index, "dataset_digest {}", set.dataset_digest).unwrap();
    writeln!(
        index,
        "content_digest {}",
        hash_files(&pseudo_files(dir, set.labels.len()))?
    )
    .unwrap();
    let path = dir.join(INDEX_FILE);
    fs::write(&path, index).map_err(|e| Error::io(&path, e))
}

pub fn read_pseudo_labels(dir: &Path) -> Result<PseudoLabelSet> {
    let index = Index::read(dir, PSEUDO_MAGIC)?;
    let n: usize = index.parse("samples")?;
    let h: usize = index.parse("height")?;
    let w: usize = index.parse("width")?;
    let classes: usize = index.parse("classes")?;
    for (sub, _) in PSEUDO_FILES {
        let found = count_files(&dir.join(sub))?;
        if found != n {
            return Err(Error::format(
                &index.path,
                format!("index lists {n} labels but {sub}/ holds {found} files"),
            ));
        }
    }
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        labels.push(PseudoLabel {
            disparity: read_disparity(&sample_file(dir, "disp", i, "pfm"), h, w)?,
            occlusion: read_mask(&sample_file(dir, "occ", i, "pgm"), h, w)?,
            semantic: read_labels(&sample_file(dir, "sem", i, "pgm"), h, w, classes)?,
        });
    }
    if hash_files(&pseudo_files(dir, n))? != index.get("content_digest")? {
        return Err(Error::format(
            &index.path,
            "content digest does not match the label files",
        ));
    }
    Ok(PseudoLabelSet {
        labels,
        teacher_digest: index.get("teacher_digest")?.to_string(),
        dataset_digest: index.get("dataset_digest")?.to_string(),
    })
}
