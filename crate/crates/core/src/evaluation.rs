//! Error metrics, experiment catalogs and reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correspondence::{
    align_centroids, align_corresponded, correspond_model, CorrespondedModel, CorrespondedTooth,
    DentalModel, DentalTemplate,
};
use crate::cpd::CpdConfig;
use crate::dictionary::DictionarySet;
use crate::error::{Error, Result};
use crate::geometry::{apply_transform, chamfer_mean, procrustes_rigid};
use crate::predict::{predict_with_truth, PredictionConfig};
use crate::tooth::{parse_label_list, ToothLabel};

fn check_pair(predicted: &CorrespondedTooth, truth: &CorrespondedTooth) -> Result<()> {
    if predicted.label != truth.label {
        return Err(Error::LabelMismatch {
            expected: truth.label,
            got: predicted.label,
        });
    }
    if predicted.cloud.len() != truth.cloud.len() {
        return Err(Error::CardinalityMismatch {
            left: predicted.cloud.len(),
            right: truth.cloud.len(),
        });
    }
    Ok(())
}

/// Mean distance between corresponding points (position and shape).
pub fn prediction_error(predicted: &CorrespondedTooth, truth: &CorrespondedTooth) -> Result<f64> {
    check_pair(predicted, truth)?;
    let sum: f64 = predicted
        .cloud
        .points()
        .iter()
        .zip(truth.cloud.points())
        .map(|(p, q)| (p - q).norm())
        .sum();
    Ok(sum / truth.cloud.len() as f64)
}

/// Chamfer distance after rigidly aligning the prediction to the truth (shape only).
///
/// The Procrustes fit minimises squared distances, which does not always lower a mean distance,
/// so the identity is kept as a second candidate and the smaller Chamfer value wins. This keeps
/// the shape error at or below [`prediction_error`].
pub fn shape_error(predicted: &CorrespondedTooth, truth: &CorrespondedTooth) -> Result<f64> {
    check_pair(predicted, truth)?;
    let t = procrustes_rigid(&predicted.cloud, &truth.cloud)?;
    let aligned = chamfer_mean(&apply_transform(&t, &predicted.cloud), &truth.cloud);
    Ok(aligned.min(chamfer_mean(&predicted.cloud, &truth.cloud)))
}

/// Test subject: raw model plus subject-frame ground truth.
#[derive(Debug, Clone)]
pub struct EvalSubject {
    pub model: DentalModel,
    pub truth: BTreeMap<ToothLabel, CorrespondedTooth>,
}

impl EvalSubject {
    pub fn subject_id(&self) -> &str {
        &self.model.subject_id
    }
}

/// A set of teeth removed together, kept in catalog order for reporting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pattern {
    pub teeth: Vec<ToothLabel>,
}

impl Pattern {
    pub fn new(teeth: Vec<ToothLabel>) -> Result<Self> {
        if teeth.is_empty() {
            return Err(Error::InvalidInput("empty missing-teeth pattern".into()));
        }
        let unique: BTreeSet<ToothLabel> = teeth.iter().copied().collect();
        if unique.len() != teeth.len() {
            return Err(Error::InvalidInput(format!("pattern {teeth:?} repeats a tooth")));
        }
        Ok(Self { teeth })
    }

    pub fn name(&self) -> String {
        self.teeth
            .iter()
            .map(|l| l.to_string())
            .collect::<Vec<_>>()
            .join("-")
    }

    pub fn set(&self) -> BTreeSet<ToothLabel> {
        self.teeth.iter().copied().collect()
    }
}

fn catalog(rows: &[&[u8]]) -> Vec<Pattern> {
    rows.iter()
        .map(|r| {
            Pattern::new(r.iter().map(|&f| ToothLabel::new(f).expect("catalog label")).collect())
                .expect("catalog pattern")
        })
        .collect()
}

/// Upper-row runs from the midline, 2 to 7 teeth.
pub fn table2_patterns() -> Vec<Pattern> {
    catalog(&[
        &[12, 11],
        &[13, 12, 11],
        &[14, 13, 12, 11],
        &[15, 14, 13, 12, 11],
        &[16, 15, 14, 13, 12, 11],
        &[17, 16, 15, 14, 13, 12, 11],
    ])
}

/// Matching runs in both rows of the right side, 2 to 14 teeth.
pub fn table3_patterns() -> Vec<Pattern> {
    catalog(&[
        &[11, 41],
        &[12, 11, 41, 42],
        &[13, 12, 11, 41, 42, 43],
        &[14, 13, 12, 11, 41, 42, 43, 44],
        &[15, 14, 13, 12, 11, 41, 42, 43, 44, 45],
        &[16, 15, 14, 13, 12, 11, 41, 42, 43, 44, 45, 46],
        &[17, 16, 15, 14, 13, 12, 11, 41, 42, 43, 44, 45, 46, 47],
    ])
}

pub fn single_missing_patterns() -> Vec<Pattern> {
    ToothLabel::all()
        .map(|l| Pattern { teeth: vec![l] })
        .collect()
}

/// One pattern per non-empty line, comma-separated FDI codes; `#` starts a comment.
pub fn parse_patterns(text: &str) -> Result<Vec<Pattern>> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(|l| Pattern::new(parse_label_list(l)?))
        .collect()
}

pub fn named_patterns(name: &str) -> Option<Vec<Pattern>> {
    match name {
        "table2" => Some(table2_patterns()),
        "table3" => Some(table3_patterns()),
        "single" => Some(single_missing_patterns()),
        _ => None,
    }
}

/// Seeded split of `ids` into `n_train` training and the remaining test ids (each sorted).
pub fn split_train_test(ids: &[String], n_train: usize, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    if n_train == 0 || n_train >= ids.len() {
        return Err(Error::InvalidInput(format!(
            "cannot take {n_train} training subjects out of {}",
            ids.len()
        )));
    }
    let mut shuffled = ids.to_vec();
    shuffled.sort();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = shuffled[..n_train].to_vec();
    let mut test = shuffled[n_train..].to_vec();
    train.sort();
    test.sort();
    Ok((train, test))
}

/// How training teeth are put into correspondence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DictionarySource {
    /// Already corresponded clouds, aligned by their tooth centroids.
    GroundTruth,
    /// Raw clouds through the CPD correspondence pipeline.
    Correspondence,
}

pub fn training_models(
    models: &[DentalModel],
    template: &DentalTemplate,
    source: DictionarySource,
    cpd: &CpdConfig,
) -> Result<Vec<CorrespondedModel>> {
    models
        .par_iter()
        .map(|m| match source {
            DictionarySource::GroundTruth => align_corresponded(m, template),
            DictionarySource::Correspondence => correspond_model(m, template, cpd),
        })
        .collect()
}

pub fn build_training_dictionaries(
    models: &[DentalModel],
    template: &DentalTemplate,
    source: DictionarySource,
    cpd: &CpdConfig,
) -> Result<DictionarySet> {
    DictionarySet::from_cohort(&training_models(models, template, source, cpd)?)
}

/// Predictor used for an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Sparse(PredictionConfig),
    /// Template tooth placed with the alignment on the remaining teeth.
    TemplateCopy,
}

/// Template-copy baseline in the subject frame.
pub fn predict_template_copy(
    model: &DentalModel,
    missing: &BTreeSet<ToothLabel>,
    template: &DentalTemplate,
) -> Result<BTreeMap<ToothLabel, CorrespondedTooth>> {
    let alignment = align_centroids(model.teeth(), template, &model.labels())?;
    let back = alignment.inverse();
    missing
        .iter()
        .map(|&l| {
            let cloud = apply_transform(&back, template.tooth(l));
            Ok((l, CorrespondedTooth { label: l, cloud }))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub pattern: String,
    pub tooth: ToothLabel,
    pub subject_id: String,
    pub prediction_error_mm: f64,
    pub shape_error_mm: f64,
}

/// One prediction run (pattern × subject).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub pattern: String,
    pub subject_id: String,
    pub adjacent: Vec<ToothLabel>,
    /// Mean error over the pattern's teeth after each iteration.
    pub iteration_errors_mm: Vec<f64>,
    pub relaxed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub pattern: String,
    pub tooth: ToothLabel,
    pub count: usize,
    pub prediction_mean_mm: f64,
    pub prediction_sd_mm: f64,
    pub shape_mean_mm: f64,
    pub shape_sd_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub patterns: Vec<Pattern>,
    pub rows: Vec<MetricRow>,
    pub runs: Vec<RunRecord>,
    pub aggregates: Vec<Aggregate>,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl MetricsReport {
    fn new(patterns: Vec<Pattern>, mut rows: Vec<MetricRow>, runs: Vec<RunRecord>) -> Self {
        let order: BTreeMap<String, usize> =
            patterns.iter().enumerate().map(|(i, p)| (p.name(), i)).collect();
        rows.sort_by(|a, b| {
            (order[&a.pattern], &a.subject_id)
                .cmp(&(order[&b.pattern], &b.subject_id))
                .then_with(|| {
                    let pa = patterns[order[&a.pattern]].teeth.iter().position(|&t| t == a.tooth);
                    let pb = patterns[order[&b.pattern]].teeth.iter().position(|&t| t == b.tooth);
                    pa.cmp(&pb)
                })
        });
        let mut aggregates = Vec::new();
        for p in &patterns {
            let name = p.name();
            for &tooth in &p.teeth {
                let selected: Vec<&MetricRow> = rows
                    .iter()
                    .filter(|r| r.pattern == name && r.tooth == tooth)
                    .collect();
                if selected.is_empty() {
                    continue;
                }
                let pred: Vec<f64> = selected.iter().map(|r| r.prediction_error_mm).collect();
                let shape: Vec<f64> = selected.iter().map(|r| r.shape_error_mm).collect();
                let (pm, ps) = mean_sd(&pred);
                let (sm, ss) = mean_sd(&shape);
                aggregates.push(Aggregate {
                    pattern: name.clone(),
                    tooth,
                    count: selected.len(),
                    prediction_mean_mm: pm,
                    prediction_sd_mm: ps,
                    shape_mean_mm: sm,
                    shape_sd_mm: ss,
                });
            }
        }
        Self {
            patterns,
            rows,
            runs,
            aggregates,
        }
    }

    /// Mean prediction error over every row.
    pub fn mean_prediction_error(&self) -> f64 {
        self.rows.iter().map(|r| r.prediction_error_mm).sum::<f64>() / self.rows.len() as f64
    }

    pub fn mean_shape_error(&self) -> f64 {
        self.rows.iter().map(|r| r.shape_error_mm).sum::<f64>() / self.rows.len() as f64
    }

    /// Mean prediction error over the rows of one pattern.
    pub fn pattern_mean(&self, pattern: &Pattern) -> Option<f64> {
        let name = pattern.name();
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.pattern == name)
            .map(|r| r.prediction_error_mm)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Mean over runs of the error after `iteration` (1-based, clamped to the last one run).
    pub fn mean_error_after(&self, iteration: usize) -> f64 {
        let v: Vec<f64> = self
            .runs
            .iter()
            .filter_map(|r| {
                let i = iteration.min(r.iteration_errors_mm.len());
                r.iteration_errors_mm.get(i.checked_sub(1)?).copied()
            })
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e.into(),
        })?;
        w.write_record(["pattern", "tooth", "subject_id", "prediction_error_mm", "shape_error_mm"])?;
        for r in &self.rows {
            w.write_record([
                r.pattern.clone(),
                r.tooth.to_string(),
                r.subject_id.clone(),
                r.prediction_error_mm.to_string(),
                r.shape_error_mm.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Aligned text table: per pattern, a row of tooth numbers followed by error rows.
    /// Single-tooth patterns give one line per tooth instead.
    pub fn summary_table(&self) -> String {
        let mut out = String::new();
        if self.patterns.iter().all(|p| p.teeth.len() == 1) {
            let _ = writeln!(
                out,
                "{:<6}{:>6}{:>14}{:>8}{:>10}{:>8}",
                "tooth", "n", "prediction mm", "sd", "shape mm", "sd"
            );
            for a in &self.aggregates {
                let _ = writeln!(
                    out,
                    "{:<6}{:>6}{:>14.3}{:>8.3}{:>10.3}{:>8.3}",
                    a.tooth.to_string(),
                    a.count,
                    a.prediction_mean_mm,
                    a.prediction_sd_mm,
                    a.shape_mean_mm,
                    a.shape_sd_mm
                );
            }
            out.push('\n');
        }
        for p in self.patterns.iter().filter(|p| p.teeth.len() > 1) {
            let name = p.name();
            let aggs: Vec<&Aggregate> = self.aggregates.iter().filter(|a| a.pattern == name).collect();
            if aggs.is_empty() {
                continue;
            }
            let _ = writeln!(out, "pattern {name} ({} subjects)", aggs[0].count);
            let mut line = |title: &str, f: &dyn Fn(&Aggregate) -> String| {
                let _ = write!(out, "{title:<16}");
                for a in &aggs {
                    let _ = write!(out, "{:>8}", f(a));
                }
                out.push('\n');
            };
            line("tooth", &|a| a.tooth.to_string());
            line("prediction mm", &|a| format!("{:.3}", a.prediction_mean_mm));
            line("  sd", &|a| format!("{:.3}", a.prediction_sd_mm));
            line("shape mm", &|a| format!("{:.3}", a.shape_mean_mm));
            line("  sd", &|a| format!("{:.3}", a.shape_sd_mm));
            out.push('\n');
        }
        if !self.rows.is_empty() {
            let _ = writeln!(
                out,
                "overall: prediction {:.3} mm, shape {:.3} mm over {} teeth",
                self.mean_prediction_error(),
                self.mean_shape_error(),
                self.rows.len()
            );
        }
        out
    }
}

/// Runs every pattern on every test subject.
pub fn run_pattern_experiments(
    subjects: &[EvalSubject],
    template: &DentalTemplate,
    dicts: &DictionarySet,
    patterns: &[Pattern],
    method: &Method,
) -> Result<MetricsReport> {
    let training: BTreeSet<&str> = dicts.subject_ids().iter().map(String::as_str).collect();
    if let Some(s) = subjects.iter().find(|s| training.contains(s.subject_id())) {
        return Err(Error::InvalidInput(format!(
            "test subject {} is also a training subject",
            s.subject_id()
        )));
    }
    run_unchecked(subjects, template, dicts, patterns, method)
}

/// [`run_pattern_experiments`] over the 28 single-missing patterns.
pub fn run_single_missing_sweep(
    subjects: &[EvalSubject],
    template: &DentalTemplate,
    dicts: &DictionarySet,
    method: &Method,
) -> Result<MetricsReport> {
    run_pattern_experiments(subjects, template, dicts, &single_missing_patterns(), method)
}

/// Like [`run_pattern_experiments`] but allows test subjects that are also in the dictionary.
pub fn run_in_dictionary(
    subjects: &[EvalSubject],
    template: &DentalTemplate,
    dicts: &DictionarySet,
    patterns: &[Pattern],
    method: &Method,
) -> Result<MetricsReport> {
    run_unchecked(subjects, template, dicts, patterns, method)
}

fn run_unchecked(
    subjects: &[EvalSubject],
    template: &DentalTemplate,
    dicts: &DictionarySet,
    patterns: &[Pattern],
    method: &Method,
) -> Result<MetricsReport> {
    let mut sorted: Vec<&EvalSubject> = subjects.iter().collect();
    sorted.sort_by(|a, b| a.subject_id().cmp(b.subject_id()));
    let jobs: Vec<(&Pattern, &EvalSubject)> = patterns
        .iter()
        .flat_map(|p| sorted.iter().map(move |s| (p, *s)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|(p, s)| run_one(p, s, template, dicts, method))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for (r, run) in results {
        rows.extend(r);
        runs.push(run);
    }
    Ok(MetricsReport::new(patterns.to_vec(), rows, runs))
}

fn run_one(
    pattern: &Pattern,
    subject: &EvalSubject,
    template: &DentalTemplate,
    dicts: &DictionarySet,
    method: &Method,
) -> Result<(Vec<MetricRow>, RunRecord)> {
    let missing = pattern.set();
    let model = subject.model.without(&missing)?;
    let name = pattern.name();
    let (predicted, run) = match method {
        Method::Sparse(config) => {
            let result =
                predict_with_truth(&model, &missing, dicts, template, config, Some(&subject.truth))?;
            let run = RunRecord {
                pattern: name.clone(),
                subject_id: subject.subject_id().to_string(),
                adjacent: result.adjacent_labels.clone(),
                iteration_errors_mm: result
                    .per_iteration
                    .iter()
                    .filter_map(|r| r.truth_error_mm)
                    .collect(),
                relaxed: result.per_iteration.iter().any(|r| r.relaxed),
            };
            (result.subject_frame, run)
        }
        Method::TemplateCopy => {
            let predicted = predict_template_copy(&model, &missing, template)?;
            let run = RunRecord {
                pattern: name.clone(),
                subject_id: subject.subject_id().to_string(),
                adjacent: Vec::new(),
                iteration_errors_mm: Vec::new(),
                relaxed: false,
            };
            (predicted, run)
        }
    };
    let mut rows = Vec::new();
    for &tooth in &pattern.teeth {
        let truth = subject
            .truth
            .get(&tooth)
            .ok_or_else(|| Error::InvalidInput(format!("no ground truth for tooth {tooth}")))?;
        let pred = &predicted[&tooth];
        let prediction_error_mm = prediction_error(pred, truth)?;
        let shape_error_mm = shape_error(pred, truth)?;
        if shape_error_mm > prediction_error_mm + 1e-9 {
            return Err(Error::Invariant(format!(
                "tooth {tooth} of {}: shape error {shape_error_mm} above prediction error {prediction_error_mm}",
                subject.subject_id()
            )));
        }
        rows.push(MetricRow {
            pattern: name.clone(),
            tooth,
            subject_id: subject.subject_id().to_string(),
            prediction_error_mm,
            shape_error_mm,
        });
    }
    Ok((rows, run))
}
