//! On-disk layout of point clouds, dental models and templates.
//!
//! A model directory holds one `<FDI>.xyz` file per tooth (one `x y z` triple per line, written
//! with shortest round-trip precision) and a `manifest.json`. A cohort directory holds one model
//! directory per subject plus the template in `template/` and, for synthetic cohorts,
//! subject-frame ground truth in `truth/<subject>/`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::correspondence::{DentalModel, DentalTemplate};
use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};
use crate::tooth::ToothLabel;

pub const MANIFEST: &str = "manifest.json";
pub const TEMPLATE_DIR: &str = "template";
pub const TRUTH_DIR: &str = "truth";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Subject,
    Template,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub subject_id: String,
    pub labels: Vec<ToothLabel>,
    /// Point `k` of every tooth matches template point `k`.
    pub corresponded: bool,
    pub frame: Frame,
}

pub fn format_xyz(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 60);
    for p in cloud.points() {
        out.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
    }
    out
}

pub fn parse_xyz(text: &str, path: &Path) -> Result<PointCloud> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        message: format!("line {line}: {message}"),
    };
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(err(i + 1, format!("expected 3 values, found {}", fields.len())));
        }
        let mut xyz = [0.0f64; 3];
        for (v, f) in xyz.iter_mut().zip(&fields) {
            *v = f
                .parse()
                .map_err(|_| err(i + 1, format!("{f:?} is not a number")))?;
            if !v.is_finite() {
                return Err(err(i + 1, format!("non-finite value {f}")));
            }
        }
        points.push(Point3::new(xyz[0], xyz[1], xyz[2]));
    }
    if points.is_empty() {
        return Err(err(0, "no points".into()));
    }
    PointCloud::new(points)
}

pub fn read_xyz(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_xyz(&text, path)
}

pub fn write_xyz(path: &Path, cloud: &PointCloud) -> Result<()> {
    fs::write(path, format_xyz(cloud)).map_err(|e| Error::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn tooth_file(dir: &Path, label: ToothLabel) -> PathBuf {
    dir.join(format!("{label}.xyz"))
}

pub fn write_teeth_dir(
    dir: &Path,
    subject_id: &str,
    teeth: &BTreeMap<ToothLabel, PointCloud>,
    corresponded: bool,
    frame: Frame,
) -> Result<()> {
    create_dir(dir)?;
    for (&label, cloud) in teeth {
        write_xyz(&tooth_file(dir, label), cloud)?;
    }
    write_json(
        &dir.join(MANIFEST),
        &ModelManifest {
            subject_id: subject_id.to_string(),
            labels: teeth.keys().copied().collect(),
            corresponded,
            frame,
        },
    )
}

pub fn read_teeth_dir(dir: &Path) -> Result<(ModelManifest, BTreeMap<ToothLabel, PointCloud>)> {
    let manifest: ModelManifest = read_json(&dir.join(MANIFEST))?;
    let mut teeth = BTreeMap::new();
    for &label in &manifest.labels {
        if teeth.insert(label, read_xyz(&tooth_file(dir, label))?).is_some() {
            return Err(Error::DuplicateLabel(label));
        }
    }
    Ok((manifest, teeth))
}

pub fn write_model(dir: &Path, model: &DentalModel, corresponded: bool, frame: Frame) -> Result<()> {
    write_teeth_dir(dir, &model.subject_id, model.teeth(), corresponded, frame)
}

pub fn read_model(dir: &Path) -> Result<(ModelManifest, DentalModel)> {
    let (manifest, teeth) = read_teeth_dir(dir)?;
    let model = DentalModel::new(manifest.subject_id.clone(), teeth)?;
    Ok((manifest, model))
}

pub fn write_template(dir: &Path, template: &DentalTemplate) -> Result<()> {
    write_teeth_dir(dir, "template", template.teeth(), true, Frame::Template)
}

pub fn read_template(dir: &Path) -> Result<DentalTemplate> {
    let (_, teeth) = read_teeth_dir(dir)?;
    DentalTemplate::new(teeth)
}

/// Subject directories of a cohort (any subdirectory with a manifest other than the template and
/// truth directories), sorted by name.
pub fn subject_dirs(cohort: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(cohort).map_err(|e| Error::io(cohort, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(cohort, e))?;
        let path = entry.path();
        let name = entry.file_name();
        if name == TEMPLATE_DIR || name == TRUTH_DIR {
            continue;
        }
        if path.is_dir() && path.join(MANIFEST).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

pub fn read_cohort(cohort: &Path) -> Result<Vec<(ModelManifest, DentalModel)>> {
    subject_dirs(cohort)?.iter().map(|d| read_model(d)).collect()
}
