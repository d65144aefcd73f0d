//! Per-tooth coordinate dictionaries.
//!
//! The dictionary of tooth type `i` is a `3·Tᵢ × N` matrix: column `j` holds the interleaved
//! `(x, y, z)` coordinates of subject `j`'s corresponded tooth, and rows `3k..3k+2` hold point
//! `k` across all subjects. Columns are raw template-frame coordinates (no centring, no
//! normalisation) so that one coefficient vector can be transferred between dictionaries.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::correspondence::{CorrespondedModel, CorrespondedTooth};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::tooth::ToothLabel;

#[derive(Debug, Clone, PartialEq)]
pub struct ToothDictionary {
    label: ToothLabel,
    data: DMatrix<f64>,
    subject_ids: Vec<String>,
}

impl ToothDictionary {
    pub fn from_matrix(label: ToothLabel, data: DMatrix<f64>, subject_ids: Vec<String>) -> Result<Self> {
        if data.nrows() == 0 || !data.nrows().is_multiple_of(3) {
            return Err(Error::Invariant(format!(
                "dictionary {label}: row count {} is not a positive multiple of 3",
                data.nrows()
            )));
        }
        if data.ncols() == 0 || data.ncols() != subject_ids.len() {
            return Err(Error::Invariant(format!(
                "dictionary {label}: {} columns for {} subjects",
                data.ncols(),
                subject_ids.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("dictionary"));
        }
        Ok(Self {
            label,
            data,
            subject_ids,
        })
    }

    pub fn label(&self) -> ToothLabel {
        self.label
    }

    /// Tᵢ
    pub fn t_points(&self) -> usize {
        self.data.nrows() / 3
    }

    /// N
    pub fn n_subjects(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    /// Subject `j`'s tooth read back from column `j`.
    pub fn column_cloud(&self, j: usize) -> Result<PointCloud> {
        PointCloud::from_interleaved(self.data.column(j).as_slice())
    }

    /// `D·c` as a point cloud.
    pub fn synthesize(&self, coefficients: &DVector<f64>) -> Result<PointCloud> {
        if coefficients.len() != self.n_subjects() {
            return Err(Error::CardinalityMismatch {
                left: coefficients.len(),
                right: self.n_subjects(),
            });
        }
        PointCloud::from_interleaved((&self.data * coefficients).as_slice())
    }
}

/// Builds one dictionary; columns follow the order of `teeth`.
pub fn build_dictionary(subject_ids: &[String], teeth: &[&CorrespondedTooth]) -> Result<ToothDictionary> {
    let first = teeth
        .first()
        .ok_or_else(|| Error::InvalidInput("cannot build a dictionary from zero subjects".into()))?;
    if subject_ids.len() != teeth.len() {
        return Err(Error::CardinalityMismatch {
            left: subject_ids.len(),
            right: teeth.len(),
        });
    }
    let label = first.label;
    let t = first.cloud.len();
    let mut data = DMatrix::zeros(3 * t, teeth.len());
    for (j, tooth) in teeth.iter().enumerate() {
        if tooth.label != label {
            return Err(Error::LabelMismatch {
                expected: label,
                got: tooth.label,
            });
        }
        if tooth.cloud.len() != t {
            return Err(Error::CardinalityMismatch {
                left: tooth.cloud.len(),
                right: t,
            });
        }
        for (k, p) in tooth.cloud.points().iter().enumerate() {
            data[(3 * k, j)] = p.x;
            data[(3 * k + 1, j)] = p.y;
            data[(3 * k + 2, j)] = p.z;
        }
    }
    ToothDictionary::from_matrix(label, data, subject_ids.to_vec())
}

/// The 28 dictionaries of one cohort, sharing a subject ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct DictionarySet {
    dictionaries: BTreeMap<ToothLabel, ToothDictionary>,
    subject_ids: Vec<String>,
}

impl DictionarySet {
    pub fn new(dictionaries: BTreeMap<ToothLabel, ToothDictionary>) -> Result<Self> {
        if dictionaries.len() != 28 {
            return Err(Error::Invariant(format!(
                "dictionary set has {} tooth entries, expected 28",
                dictionaries.len()
            )));
        }
        let subject_ids = dictionaries
            .values()
            .next()
            .map(|d| d.subject_ids.clone())
            .unwrap_or_default();
        for d in dictionaries.values() {
            if d.subject_ids != subject_ids {
                return Err(Error::Invariant(format!(
                    "dictionary {} has a different subject ordering",
                    d.label
                )));
            }
        }
        for (label, d) in &dictionaries {
            if *label != d.label {
                return Err(Error::LabelMismatch {
                    expected: *label,
                    got: d.label,
                });
            }
        }
        Ok(Self {
            dictionaries,
            subject_ids,
        })
    }

    /// Builds all 28 dictionaries from template-frame corresponded models (columns in input order).
    pub fn from_cohort(models: &[CorrespondedModel]) -> Result<Self> {
        let ids: Vec<String> = models.iter().map(|m| m.subject_id.clone()).collect();
        let mut dictionaries = BTreeMap::new();
        for label in ToothLabel::all() {
            let teeth = models
                .iter()
                .map(|m| {
                    m.teeth.get(&label).ok_or_else(|| {
                        Error::InvalidInput(format!(
                            "training subject {} lacks tooth {label}",
                            m.subject_id
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            dictionaries.insert(label, build_dictionary(&ids, &teeth)?);
        }
        Self::new(dictionaries)
    }

    pub fn get(&self, label: ToothLabel) -> Result<&ToothDictionary> {
        self.dictionaries.get(&label).ok_or(Error::UnknownLabel(label))
    }

    pub fn dictionaries(&self) -> &BTreeMap<ToothLabel, ToothDictionary> {
        &self.dictionaries
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn n_subjects(&self) -> usize {
        self.subject_ids.len()
    }
}

/// Vertical concatenation of the dictionaries of `labels`, in that order.
pub fn stack_dictionaries(set: &DictionarySet, labels: &[ToothLabel]) -> Result<DMatrix<f64>> {
    if labels.is_empty() {
        return Err(Error::InvalidInput("no labels to stack".into()));
    }
    let parts = labels
        .iter()
        .map(|&l| set.get(l))
        .collect::<Result<Vec<_>>>()?;
    let rows: usize = parts.iter().map(|d| d.data.nrows()).sum();
    let mut out = DMatrix::zeros(rows, set.n_subjects());
    let mut offset = 0;
    for d in parts {
        out.rows_mut(offset, d.data.nrows()).copy_from(&d.data);
        offset += d.data.nrows();
    }
    Ok(out)
}

/// Interleaved coordinates of several clouds stacked in order; the target-side counterpart of
/// [`stack_dictionaries`].
pub fn stack_clouds<'a>(clouds: impl IntoIterator<Item = &'a PointCloud>) -> DVector<f64> {
    let values: Vec<f64> = clouds.into_iter().flat_map(|c| c.to_interleaved()).collect();
    DVector::from_vec(values)
}
