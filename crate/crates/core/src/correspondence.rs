//! Point-to-point correspondence of dental models with the template.
//!
//! A model is first aligned rigidly to the template using the centroids of teeth present in
//! both. Each template tooth is then deformed onto the aligned subject tooth with CPD and every
//! deformed point is replaced by its nearest subject point. The result has the template's point
//! count and ordering, so point `k` of every corresponded tooth refers to the same anatomical
//! location.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cpd::{cpd_nonrigid, CpdConfig};
use crate::error::{Error, Result};
use crate::geometry::{apply_transform, procrustes_points, Point3, PointCloud, RigidTransform};
use crate::kdtree::NeighborIndex;
use crate::tooth::ToothLabel;

/// Reference dentition: one cloud per tooth type with a fixed canonical point order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DentalTemplate {
    teeth: BTreeMap<ToothLabel, PointCloud>,
}

impl DentalTemplate {
    pub fn new(teeth: BTreeMap<ToothLabel, PointCloud>) -> Result<Self> {
        if teeth.len() != 28 {
            let missing: Vec<String> = ToothLabel::all()
                .filter(|l| !teeth.contains_key(l))
                .map(|l| l.to_string())
                .collect();
            return Err(Error::Invariant(format!(
                "template needs all 28 teeth; missing {}",
                missing.join(",")
            )));
        }
        Ok(Self { teeth })
    }

    pub fn tooth(&self, label: ToothLabel) -> &PointCloud {
        &self.teeth[&label]
    }

    /// Point count Tᵢ of a tooth type.
    pub fn point_count(&self, label: ToothLabel) -> usize {
        self.teeth[&label].len()
    }

    pub fn teeth(&self) -> &BTreeMap<ToothLabel, PointCloud> {
        &self.teeth
    }
}

/// Labelled tooth clouds of one subject, in the subject's own frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DentalModel {
    pub subject_id: String,
    teeth: BTreeMap<ToothLabel, PointCloud>,
}

impl DentalModel {
    pub fn new(subject_id: impl Into<String>, teeth: BTreeMap<ToothLabel, PointCloud>) -> Result<Self> {
        if teeth.is_empty() {
            return Err(Error::InvalidInput("dental model has no teeth".into()));
        }
        Ok(Self {
            subject_id: subject_id.into(),
            teeth,
        })
    }

    pub fn teeth(&self) -> &BTreeMap<ToothLabel, PointCloud> {
        &self.teeth
    }

    pub fn tooth(&self, label: ToothLabel) -> Option<&PointCloud> {
        self.teeth.get(&label)
    }

    pub fn labels(&self) -> BTreeSet<ToothLabel> {
        self.teeth.keys().copied().collect()
    }

    /// Copy of the model without the given teeth.
    pub fn without(&self, removed: &BTreeSet<ToothLabel>) -> Result<Self> {
        Self::new(
            self.subject_id.clone(),
            self.teeth
                .iter()
                .filter(|(l, _)| !removed.contains(l))
                .map(|(l, c)| (*l, c.clone()))
                .collect(),
        )
    }

    pub fn transformed(&self, t: &RigidTransform) -> Self {
        Self {
            subject_id: self.subject_id.clone(),
            teeth: self
                .teeth
                .iter()
                .map(|(l, c)| (*l, apply_transform(t, c)))
                .collect(),
        }
    }

    pub fn into_teeth(self) -> BTreeMap<ToothLabel, PointCloud> {
        self.teeth
    }
}

/// Tooth cloud whose point `k` corresponds to template point `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrespondedTooth {
    pub label: ToothLabel,
    pub cloud: PointCloud,
}

impl CorrespondedTooth {
    /// Checks the cloud against the template's point count for its label.
    pub fn new(label: ToothLabel, cloud: PointCloud, template: &DentalTemplate) -> Result<Self> {
        let expected = template.point_count(label);
        if cloud.len() != expected {
            return Err(Error::CardinalityMismatch {
                left: cloud.len(),
                right: expected,
            });
        }
        Ok(Self { label, cloud })
    }
}

/// Rigid transform taking model coordinates into the template frame, fitted on the centroids of
/// `use_labels`.
pub fn align_model_to_template(
    model: &DentalModel,
    template: &DentalTemplate,
    use_labels: &BTreeSet<ToothLabel>,
) -> Result<RigidTransform> {
    align_centroids(model.teeth(), template, use_labels)
}

pub(crate) fn align_centroids(
    teeth: &BTreeMap<ToothLabel, PointCloud>,
    template: &DentalTemplate,
    use_labels: &BTreeSet<ToothLabel>,
) -> Result<RigidTransform> {
    let mut source = Vec::with_capacity(use_labels.len());
    let mut target = Vec::with_capacity(use_labels.len());
    for &label in use_labels {
        let tooth = teeth.get(&label).ok_or(Error::UnknownLabel(label))?;
        source.push(tooth.centroid());
        target.push(template.tooth(label).centroid());
    }
    match source.len() {
        0 | 1 => Err(Error::TooFewLabels {
            needed: 2,
            got: source.len(),
        }),
        2 => Err(Error::Degenerate(
            "two tooth centroids do not determine a rotation".into(),
        )),
        _ => procrustes_points(&source, &target),
    }
}

/// Deforms `template_tooth` onto `subject_tooth` and snaps each deformed point to its nearest
/// subject point. Output points are copies of subject points in template order.
pub fn correspond_tooth(
    template_tooth: &PointCloud,
    subject_tooth: &PointCloud,
    cfg: &CpdConfig,
) -> Result<PointCloud> {
    let deformed = cpd_nonrigid(template_tooth, subject_tooth, cfg)?.deformed;
    let index = NeighborIndex::build(subject_tooth);
    let points: Vec<Point3> = deformed
        .points()
        .iter()
        .map(|p| *index.point(index.nearest(p).0))
        .collect();
    PointCloud::new(points)
}

/// Corresponded teeth of a model, expressed in the template frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondedModel {
    pub subject_id: String,
    /// Model → template transform used to bring the model into the template frame.
    pub alignment: RigidTransform,
    pub teeth: BTreeMap<ToothLabel, CorrespondedTooth>,
}

/// Corresponds the given teeth of `aligned` (already in the template frame).
pub fn correspond_teeth(
    aligned: &BTreeMap<ToothLabel, PointCloud>,
    template: &DentalTemplate,
    labels: &[ToothLabel],
    cfg: &CpdConfig,
) -> Result<BTreeMap<ToothLabel, CorrespondedTooth>> {
    labels
        .par_iter()
        .map(|&label| {
            let subject = aligned.get(&label).ok_or(Error::UnknownLabel(label))?;
            let cloud = correspond_tooth(template.tooth(label), subject, cfg)?;
            Ok((label, CorrespondedTooth { label, cloud }))
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().collect())
}

/// Aligns a model on all of its teeth and corresponds every tooth.
pub fn correspond_model(
    model: &DentalModel,
    template: &DentalTemplate,
    cfg: &CpdConfig,
) -> Result<CorrespondedModel> {
    let labels = model.labels();
    if labels.len() < 2 {
        return Err(Error::TooFewLabels {
            needed: 2,
            got: labels.len(),
        });
    }
    let alignment = align_model_to_template(model, template, &labels)?;
    let aligned = model.transformed(&alignment);
    let order: Vec<ToothLabel> = labels.into_iter().collect();
    let teeth = correspond_teeth(aligned.teeth(), template, &order, cfg)?;
    Ok(CorrespondedModel {
        subject_id: model.subject_id.clone(),
        alignment,
        teeth,
    })
}

/// Brings a model whose teeth are already corresponded (e.g. ground truth) into the template
/// frame by the same centroid alignment `correspond_model` uses.
pub fn align_corresponded(
    model: &DentalModel,
    template: &DentalTemplate,
) -> Result<CorrespondedModel> {
    let labels = model.labels();
    let alignment = align_model_to_template(model, template, &labels)?;
    let mut teeth = BTreeMap::new();
    for (&label, cloud) in model.teeth() {
        let moved = apply_transform(&alignment, cloud);
        teeth.insert(label, CorrespondedTooth::new(label, moved, template)?);
    }
    Ok(CorrespondedModel {
        subject_id: model.subject_id.clone(),
        alignment,
        teeth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn toy_template() -> DentalTemplate {
        // small tetrahedral clusters placed on a ring
        let mut teeth = BTreeMap::new();
        for (i, label) in ToothLabel::all().enumerate() {
            let angle = i as f64 * std::f64::consts::TAU / 28.0;
            let c = Vector3::new(20.0 * angle.cos(), 20.0 * angle.sin(), (i % 3) as f64);
            let pts = [
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.0, 1.5, 0.0],
                [0.0, 0.0, 2.0],
                [0.7, 0.7, 0.7],
            ]
            .iter()
            .map(|p| Point3::new(p[0] + c.x, p[1] + c.y, p[2] + c.z))
            .collect();
            teeth.insert(label, PointCloud::new(pts).unwrap());
        }
        DentalTemplate::new(teeth).unwrap()
    }

    fn l(f: u8) -> ToothLabel {
        ToothLabel::new(f).unwrap()
    }

    #[test]
    fn template_requires_all_teeth() {
        let mut teeth = toy_template().teeth().clone();
        teeth.remove(&l(36));
        assert!(matches!(DentalTemplate::new(teeth), Err(Error::Invariant(_))));
    }

    #[test]
    fn identity_alignment() {
        let t = toy_template();
        let model = DentalModel::new("s", t.teeth().clone()).unwrap();
        let labels: BTreeSet<_> = [l(11), l(26), l(44)].into_iter().collect();
        let a = align_model_to_template(&model, &t, &labels).unwrap();
        assert!((a.rotation() - nalgebra::Matrix3::identity()).amax() < 1e-12);
        assert!(a.translation().norm() < 1e-12);
    }

    #[test]
    fn recovers_inverse_motion() {
        let t = toy_template();
        let motion =
            RigidTransform::from_axis_angle(Vector3::new(0.3, -1.0, 0.2), 0.4, Vector3::new(3.0, -7.0, 1.0));
        let model = DentalModel::new("s", t.teeth().clone()).unwrap().transformed(&motion);
        let a = align_model_to_template(&model, &t, &model.labels()).unwrap();
        let inv = motion.inverse();
        assert!((a.rotation() - inv.rotation()).amax() < 1e-12);
        assert!((a.translation() - inv.translation()).amax() < 1e-9);
    }

    #[test]
    fn alignment_error_paths() {
        let t = toy_template();
        let model = DentalModel::new("s", t.teeth().clone()).unwrap();
        let one: BTreeSet<_> = [l(11)].into_iter().collect();
        assert!(matches!(
            align_model_to_template(&model, &t, &one),
            Err(Error::TooFewLabels { .. })
        ));
        let two: BTreeSet<_> = [l(11), l(21)].into_iter().collect();
        assert!(matches!(
            align_model_to_template(&model, &t, &two),
            Err(Error::Degenerate(_))
        ));
        let partial = model.without(&[l(36)].into_iter().collect()).unwrap();
        let with_missing: BTreeSet<_> = [l(11), l(21), l(36)].into_iter().collect();
        assert!(matches!(
            align_model_to_template(&partial, &t, &with_missing),
            Err(Error::UnknownLabel(_))
        ));
    }

    #[test]
    fn correspond_fixed_point() {
        let t = toy_template();
        let tooth = t.tooth(l(16));
        let out = correspond_tooth(tooth, tooth, &CpdConfig::default()).unwrap();
        assert_eq!(&out, tooth);
    }

    #[test]
    fn correspond_model_drops_missing_tooth() {
        let t = toy_template();
        let model = DentalModel::new("s", t.teeth().clone())
            .unwrap()
            .without(&[l(36)].into_iter().collect())
            .unwrap();
        let out = correspond_model(&model, &t, &CpdConfig::default()).unwrap();
        assert_eq!(out.teeth.len(), 27);
        assert!(!out.teeth.contains_key(&l(36)));
        for (label, tooth) in &out.teeth {
            for (a, b) in tooth.cloud.points().iter().zip(t.tooth(*label).points()) {
                assert!((a - b).norm() < 1e-9);
            }
        }
    }
}
