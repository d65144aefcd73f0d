//! Iterative prediction of missing teeth.
//!
//! Each iteration aligns the model to the template, corresponds the adjacent teeth, codes them
//! sparsely against their stacked dictionaries and applies the same coefficients to the
//! dictionary of every missing tooth. From the second iteration on, the alignment also uses the
//! previous predictions.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::adjacency::resolve_adjacent;
use crate::bpdn::{solve_bpdn, BpdnConfig, Epsilon, InfeasiblePolicy, SparseCode};
use crate::correspondence::{
    align_centroids, correspond_teeth, CorrespondedTooth, DentalModel, DentalTemplate,
};
use crate::cpd::CpdConfig;
use crate::dictionary::{stack_clouds, stack_dictionaries, DictionarySet};
use crate::error::{Error, Result};
use crate::geometry::{apply_transform, PointCloud, RigidTransform};
use crate::tooth::ToothLabel;

/// Predictions that move less than this between iterations (mean, mm) stop the loop.
pub const CONVERGENCE_MM: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionConfig {
    pub t: u32,
    pub iterations: usize,
    pub cpd: CpdConfig,
    pub bpdn: BpdnConfig,
}

impl Default for PredictionConfig {
    fn default() -> Self {
        Self {
            t: 1,
            iterations: 3,
            cpd: CpdConfig::default(),
            bpdn: BpdnConfig {
                epsilon: Epsilon::Relative(0.01),
                on_infeasible: InfeasiblePolicy::Relax { margin: 0.01 },
                ..BpdnConfig::default()
            },
        }
    }
}

impl PredictionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be >= 1".into()));
        }
        if self.t == 0 {
            return Err(Error::InvalidConfig("adjacency radius t must be >= 1".into()));
        }
        self.cpd.validate()?;
        self.bpdn.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Subject → template transform used in this iteration.
    pub alignment: RigidTransform,
    pub residual_norm: f64,
    pub epsilon: f64,
    pub relaxed: bool,
    /// Mean movement of the subject-frame predictions since the previous iteration.
    pub movement_mm: Option<f64>,
    /// Mean prediction error against the supplied ground truth.
    pub truth_error_mm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub template_frame: BTreeMap<ToothLabel, CorrespondedTooth>,
    pub subject_frame: BTreeMap<ToothLabel, CorrespondedTooth>,
    pub sparse_code: SparseCode,
    pub adjacent_labels: Vec<ToothLabel>,
    pub per_iteration: Vec<IterationRecord>,
}

impl PredictionResult {
    pub fn final_alignment(&self) -> &RigidTransform {
        &self.per_iteration.last().expect("at least one iteration").alignment
    }
}

pub fn predict(
    model: &DentalModel,
    missing: &BTreeSet<ToothLabel>,
    dicts: &DictionarySet,
    template: &DentalTemplate,
    config: &PredictionConfig,
) -> Result<PredictionResult> {
    predict_with_truth(model, missing, dicts, template, config, None)
}

/// [`predict`] that also records the error against subject-frame ground truth per iteration.
pub fn predict_with_truth(
    model: &DentalModel,
    missing: &BTreeSet<ToothLabel>,
    dicts: &DictionarySet,
    template: &DentalTemplate,
    config: &PredictionConfig,
    truth: Option<&BTreeMap<ToothLabel, CorrespondedTooth>>,
) -> Result<PredictionResult> {
    config.validate()?;
    let present = model.labels();
    let adjacent = resolve_adjacent(missing, &present, config.t)?;
    for label in ToothLabel::all() {
        let rows = dicts.get(label)?.t_points();
        if rows != template.point_count(label) {
            return Err(Error::CardinalityMismatch {
                left: rows,
                right: template.point_count(label),
            });
        }
    }
    if let Some(truth) = truth {
        if let Some(&l) = missing.iter().find(|l| !truth.contains_key(l)) {
            return Err(Error::InvalidInput(format!("no ground truth for tooth {l}")));
        }
    }

    let d_adj = stack_dictionaries(dicts, &adjacent)?;
    let all_labels: BTreeSet<ToothLabel> = present.union(missing).copied().collect();
    let mut alignment = align_centroids(model.teeth(), template, &present)?;
    let mut records = Vec::new();
    let mut previous: Option<BTreeMap<ToothLabel, CorrespondedTooth>> = None;
    let mut last = None;

    for iteration in 1..=config.iterations {
        let aligned: BTreeMap<ToothLabel, PointCloud> = adjacent
            .iter()
            .map(|&l| (l, apply_transform(&alignment, &model.teeth()[&l])))
            .collect();
        let corresponded = correspond_teeth(&aligned, template, &adjacent, &config.cpd)?;
        let a_adj = stack_clouds(adjacent.iter().map(|l| &corresponded[l].cloud));
        if a_adj.len() != d_adj.nrows() {
            return Err(Error::Invariant(format!(
                "stacked target has {} rows, stacked dictionary {}",
                a_adj.len(),
                d_adj.nrows()
            )));
        }
        let code = solve_bpdn(&d_adj, &a_adj, &config.bpdn)?;
        let coefficients = code.coefficient_vector();

        let inverse = alignment.inverse();
        let mut template_frame = BTreeMap::new();
        let mut subject_frame = BTreeMap::new();
        for &label in missing {
            let cloud = dicts.get(label)?.synthesize(&coefficients)?;
            let back = apply_transform(&inverse, &cloud);
            template_frame.insert(label, CorrespondedTooth::new(label, cloud, template)?);
            subject_frame.insert(label, CorrespondedTooth::new(label, back, template)?);
        }

        let movement = previous.as_ref().map(|prev| mean_distance(prev, &subject_frame));
        let truth_error = truth.map(|t| mean_distance(&subject_frame, t));
        records.push(IterationRecord {
            alignment,
            residual_norm: code.residual_norm,
            epsilon: code.epsilon,
            relaxed: code.relaxed,
            movement_mm: movement,
            truth_error_mm: truth_error,
        });
        let done = iteration == config.iterations || movement.is_some_and(|m| m < CONVERGENCE_MM);

        if !done {
            // merge the predictions with the real teeth and realign on the full dentition
            let mut merged = model.teeth().clone();
            for (l, t) in &subject_frame {
                merged.insert(*l, t.cloud.clone());
            }
            alignment = align_centroids(&merged, template, &all_labels)?;
        }
        previous = Some(subject_frame.clone());
        last = Some((template_frame, subject_frame, code));
        if done {
            break;
        }
    }

    let (template_frame, subject_frame, sparse_code) = last.expect("at least one iteration");
    Ok(PredictionResult {
        template_frame,
        subject_frame,
        sparse_code,
        adjacent_labels: adjacent,
        per_iteration: records,
    })
}

/// Mean point distance over every tooth of `a` against the same tooth of `b`.
fn mean_distance(
    a: &BTreeMap<ToothLabel, CorrespondedTooth>,
    b: &BTreeMap<ToothLabel, CorrespondedTooth>,
) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (l, t) in a {
        for (p, q) in t.cloud.points().iter().zip(b[l].cloud.points()) {
            sum += (p - q).norm();
            count += 1;
        }
    }
    sum / count as f64
}
