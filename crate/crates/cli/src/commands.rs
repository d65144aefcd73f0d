use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use toothsparse::bpdn::{BpdnConfig, Epsilon, InfeasiblePolicy};
use toothsparse::correspondence::{
    align_corresponded, correspond_model, CorrespondedModel, CorrespondedTooth, DentalTemplate,
};
use toothsparse::cpd::CpdConfig;
use toothsparse::dictionary::DictionarySet;
use toothsparse::evaluation::{
    named_patterns, parse_patterns, run_pattern_experiments, single_missing_patterns,
    split_train_test, EvalSubject, Method, MetricsReport, Pattern,
};
use toothsparse::io::{
    create_dir, read_cohort, read_model, read_teeth_dir, read_template, subject_dirs,
    write_json, write_model, write_teeth_dir, write_template, Frame, TEMPLATE_DIR, TRUTH_DIR,
};
use toothsparse::predict::{predict, PredictionConfig, PredictionResult};
use toothsparse::synth::{generate_cohort, SynthConfig};
use toothsparse::tds::{load_dictionary_set, save_dictionary_set};
use toothsparse::tooth::parse_label_list;
use toothsparse::{PointCloud, ToothLabel};

use crate::manifest::{now_ms, RunManifest, RUN_MANIFEST};
use crate::Failure;

type CliResult = Result<(), Failure>;

#[derive(Debug, Parser)]
#[command(name = "toothsparse", version, about = "Predict missing teeth by sparse coding of adjacent teeth")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic cohort with its template and ground truth.
    Synth(SynthArgs),
    /// Align and correspond every subject of a cohort to the template.
    Correspond(CorrespondArgs),
    /// Build a dictionary-set file from corresponded subjects.
    BuildDict(BuildDictArgs),
    /// Predict missing teeth of one model.
    Predict(PredictArgs),
    /// Run prediction experiments over the test subjects of a cohort.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 133)]
    subjects: usize,
    /// Number of active deformation modes.
    #[arg(long, default_value_t = 8)]
    rank: usize,
    /// Gaussian surface noise, mm.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Multiplier on the default points per tooth.
    #[arg(long, default_value_t = 1.0)]
    point_scale: f64,
    /// Fraction of raw points replaced by fresh surface samples.
    #[arg(long, default_value_t = 0.0)]
    resample: f64,
}

#[derive(Debug, Clone, Args)]
struct CpdArgs {
    #[arg(long, default_value_t = CpdConfig::default().beta)]
    cpd_beta: f64,
    #[arg(long, default_value_t = CpdConfig::default().lambda)]
    cpd_lambda: f64,
    #[arg(long, default_value_t = CpdConfig::default().outlier_weight)]
    cpd_w: f64,
    #[arg(long, default_value_t = CpdConfig::default().max_iterations)]
    cpd_max_iter: usize,
}

impl CpdArgs {
    fn config(&self) -> CpdConfig {
        CpdConfig {
            beta: self.cpd_beta,
            lambda: self.cpd_lambda,
            outlier_weight: self.cpd_w,
            max_iterations: self.cpd_max_iter,
            ..CpdConfig::default()
        }
    }
}

#[derive(Debug, Args)]
struct CorrespondArgs {
    #[arg(long)]
    cohort: PathBuf,
    /// Template directory.
    #[arg(long)]
    template: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    cpd: CpdArgs,
}

#[derive(Debug, Args)]
struct BuildDictArgs {
    #[arg(long)]
    corresponded: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Needed when the corresponded clouds are in subject frames.
    #[arg(long)]
    template: Option<PathBuf>,
    /// Keep a seeded random subset of this many subjects.
    #[arg(long)]
    train: Option<usize>,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

#[derive(Debug, Clone, Args)]
struct PredictOpts {
    #[arg(long, default_value_t = 3)]
    iters: usize,
    #[arg(long, default_value_t = 1)]
    t: u32,
    /// ε as a fraction of the target norm.
    #[arg(long, conflicts_with = "eps_abs")]
    eps_rel: Option<f64>,
    /// ε in mm.
    #[arg(long)]
    eps_abs: Option<f64>,
    /// Fail instead of raising ε when it is below the least-squares residual.
    #[arg(long)]
    strict_eps: bool,
    #[command(flatten)]
    cpd: CpdArgs,
}

impl PredictOpts {
    fn config(&self) -> PredictionConfig {
        let defaults = PredictionConfig::default();
        let epsilon = match (self.eps_rel, self.eps_abs) {
            (_, Some(v)) => Epsilon::Absolute(v),
            (Some(v), None) => Epsilon::Relative(v),
            (None, None) => defaults.bpdn.epsilon,
        };
        let on_infeasible = if self.strict_eps {
            InfeasiblePolicy::Fail
        } else {
            defaults.bpdn.on_infeasible
        };
        PredictionConfig {
            t: self.t,
            iterations: self.iters,
            cpd: self.cpd.config(),
            bpdn: BpdnConfig {
                epsilon,
                on_infeasible,
                ..defaults.bpdn
            },
        }
    }
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Comma-separated FDI labels, e.g. 14,15.
    #[arg(long)]
    missing: String,
    #[arg(long)]
    dict: PathBuf,
    /// Template directory.
    #[arg(long)]
    template: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    opts: PredictOpts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Mode {
    SingleSweep,
    Patterns,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long, value_enum)]
    mode: Mode,
    /// `table2`, `table3`, `single` or a pattern file.
    #[arg(long)]
    patterns: Option<String>,
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long)]
    dict: PathBuf,
    /// Defaults to the cohort's template directory.
    #[arg(long)]
    template: Option<PathBuf>,
    /// Subject-frame ground truth; defaults to the cohort's truth directory.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Predict by copying the aligned template tooth instead.
    #[arg(long)]
    baseline: bool,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    opts: PredictOpts,
}

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Correspond(a) => correspond(a),
        Command::BuildDict(a) => build_dict(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Evaluate(a) => evaluate(a),
    }
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

#[derive(Serialize)]
struct SubjectRecord<'a> {
    subject_id: &'a str,
    latent: &'a [f64],
    jitter: &'a toothsparse::RigidTransform,
}

fn synth(a: SynthArgs) -> CliResult {
    let started = now_ms();
    let config = SynthConfig {
        n_subjects: a.subjects,
        latent_rank: a.rank,
        noise_sigma: a.noise,
        resample_fraction: a.resample,
        seed: a.seed,
        ..SynthConfig::default()
    }
    .with_point_scale(a.point_scale);
    if !(a.point_scale > 0.0 && a.point_scale.is_finite()) {
        return Err(Failure::usage("--point-scale must be positive"));
    }
    let (template, subjects) = generate_cohort(&config)?;

    create_dir(&a.out)?;
    write_template(&a.out.join(TEMPLATE_DIR), &template)?;
    let truth_root = a.out.join(TRUTH_DIR);
    for s in &subjects {
        let id = &s.model.subject_id;
        write_model(&a.out.join(id), &s.model, false, Frame::Subject)?;
        let truth: BTreeMap<ToothLabel, PointCloud> =
            s.truth.iter().map(|(l, t)| (*l, t.cloud.clone())).collect();
        write_teeth_dir(&truth_root.join(id), id, &truth, true, Frame::Subject)?;
    }
    let records: Vec<SubjectRecord> = subjects
        .iter()
        .map(|s| SubjectRecord {
            subject_id: &s.model.subject_id,
            latent: &s.latent,
            jitter: &s.jitter,
        })
        .collect();
    write_json(&truth_root.join("latents.json"), &records)?;

    let mut m = RunManifest::new("synth", to_value(&config), started).output(&a.out);
    m.seed = Some(a.seed);
    m.write(&a.out.join(RUN_MANIFEST))?;
    Ok(())
}

fn correspond(a: CorrespondArgs) -> CliResult {
    let started = now_ms();
    let cpd = a.cpd.config();
    cpd.validate()?;
    let template = read_template(&a.template)?;
    let cohort = read_cohort(&a.cohort)?;
    if cohort.is_empty() {
        return Err(Failure::data(format!("no subjects in {}", a.cohort.display())));
    }
    let done: Vec<CorrespondedModel> = cohort
        .par_iter()
        .map(|(_, model)| correspond_model(model, &template, &cpd))
        .collect::<toothsparse::Result<_>>()?;

    create_dir(&a.out)?;
    for c in &done {
        let dir = a.out.join(&c.subject_id);
        let teeth = c.teeth.iter().map(|(l, t)| (*l, t.cloud.clone())).collect();
        write_teeth_dir(&dir, &c.subject_id, &teeth, true, Frame::Template)?;
        write_json(&dir.join("alignment.json"), &c.alignment)?;
    }
    RunManifest::new("correspond", json!({ "cpd": cpd }), started)
        .input(&a.cohort)
        .input(&a.template)
        .output(&a.out)
        .write(&a.out.join(RUN_MANIFEST))?;
    Ok(())
}

fn build_dict(a: BuildDictArgs) -> CliResult {
    let started = now_ms();
    let template = a.template.as_deref().map(read_template).transpose()?;
    let mut models = Vec::new();
    for dir in subject_dirs(&a.corresponded)? {
        let (manifest, model) = read_model(&dir)?;
        if !manifest.corresponded {
            return Err(Failure::data(format!(
                "{} is not corresponded; run `correspond` first",
                dir.display()
            )));
        }
        let c = match (manifest.frame, &template) {
            (Frame::Template, _) => CorrespondedModel {
                subject_id: model.subject_id.clone(),
                alignment: Default::default(),
                teeth: model
                    .into_teeth()
                    .into_iter()
                    .map(|(label, cloud)| (label, CorrespondedTooth { label, cloud }))
                    .collect(),
            },
            (Frame::Subject, Some(t)) => align_corresponded(&model, t)?,
            (Frame::Subject, None) => {
                return Err(Failure::usage(format!(
                    "{} is in its subject frame; pass --template",
                    dir.display()
                )))
            }
        };
        models.push(c);
    }
    if models.is_empty() {
        return Err(Failure::data(format!("no subjects in {}", a.corresponded.display())));
    }

    let mut held_out = Vec::new();
    if let Some(n) = a.train {
        let ids: Vec<String> = models.iter().map(|m| m.subject_id.clone()).collect();
        let (train, test) = split_train_test(&ids, n, a.split_seed)?;
        let keep: BTreeSet<&String> = train.iter().collect();
        models.retain(|m| keep.contains(&m.subject_id));
        held_out = test;
    }
    let set = DictionarySet::from_cohort(&models)?;
    save_dictionary_set(&set, &a.out)?;

    let config = json!({
        "train": a.train,
        "split_seed": a.split_seed,
        "subject_ids": set.subject_ids(),
        "held_out": held_out,
    });
    let mut m = RunManifest::new("build-dict", config, started)
        .input(&a.corresponded)
        .output(&a.out);
    if let Some(t) = &a.template {
        m = m.input(t);
    }
    if a.train.is_some() {
        m.seed = Some(a.split_seed);
    }
    m.write(&a.out.with_extension("run.json"))?;
    Ok(())
}

#[derive(Serialize)]
struct CodeRecord<'a> {
    subject_ids: &'a [String],
    #[serde(flatten)]
    code: &'a toothsparse::bpdn::SparseCode,
}

#[derive(Serialize)]
struct Diagnostics<'a> {
    subject_id: &'a str,
    missing: Vec<ToothLabel>,
    /// Missing teeth that were present in the input model and ignored.
    dropped_from_model: Vec<ToothLabel>,
    adjacent: &'a [ToothLabel],
    converged: bool,
    iterations: &'a [toothsparse::predict::IterationRecord],
}

fn write_prediction(out: &Path, subject_id: &str, result: &PredictionResult) -> toothsparse::Result<()> {
    let clouds = |m: &BTreeMap<ToothLabel, CorrespondedTooth>| -> BTreeMap<ToothLabel, PointCloud> {
        m.iter().map(|(l, t)| (*l, t.cloud.clone())).collect()
    };
    write_teeth_dir(out, subject_id, &clouds(&result.subject_frame), true, Frame::Subject)?;
    write_teeth_dir(
        &out.join("template_frame"),
        subject_id,
        &clouds(&result.template_frame),
        true,
        Frame::Template,
    )
}

fn predict_cmd(a: PredictArgs) -> CliResult {
    let started = now_ms();
    let missing: BTreeSet<ToothLabel> = parse_label_list(&a.missing)?.into_iter().collect();
    if missing.is_empty() {
        return Err(Failure::usage("--missing needs at least one tooth label"));
    }
    let config = a.opts.config();
    config.validate()?;
    let (_, model) = read_model(&a.model)?;
    let dicts = load_dictionary_set(&a.dict)?;
    let template = read_template(&a.template)?;

    let dropped: Vec<ToothLabel> = model.labels().intersection(&missing).copied().collect();
    let model = model.without(&missing)?;
    let result = predict(&model, &missing, &dicts, &template, &config)?;

    write_prediction(&a.out, &model.subject_id, &result)?;
    write_json(
        &a.out.join("sparse_code.json"),
        &CodeRecord {
            subject_ids: dicts.subject_ids(),
            code: &result.sparse_code,
        },
    )?;
    let converged = result.sparse_code.converged;
    write_json(
        &a.out.join("diagnostics.json"),
        &Diagnostics {
            subject_id: &model.subject_id,
            missing: missing.iter().copied().collect(),
            dropped_from_model: dropped,
            adjacent: &result.adjacent_labels,
            converged,
            iterations: &result.per_iteration,
        },
    )?;
    RunManifest::new("predict", to_value(&config), started)
        .input(&a.model)
        .input(&a.dict)
        .input(&a.template)
        .output(&a.out)
        .write(&a.out.join(RUN_MANIFEST))?;

    if !converged {
        return Err(Failure::numerical("sparse coding did not converge; outputs were written"));
    }
    Ok(())
}

fn load_patterns(a: &EvaluateArgs) -> Result<Vec<Pattern>, Failure> {
    match a.mode {
        Mode::SingleSweep => Ok(single_missing_patterns()),
        Mode::Patterns => {
            let spec = a
                .patterns
                .as_deref()
                .ok_or_else(|| Failure::usage("--mode patterns needs --patterns"))?;
            if let Some(p) = named_patterns(spec) {
                return Ok(p);
            }
            let path = Path::new(spec);
            let text = std::fs::read_to_string(path).map_err(|e| {
                Failure::usage(format!("{spec:?} is neither a built-in pattern set nor a readable file: {e}"))
            })?;
            let patterns = parse_patterns(&text)?;
            if patterns.is_empty() {
                return Err(Failure::data(format!("no patterns in {spec}")));
            }
            Ok(patterns)
        }
    }
}

#[derive(Serialize)]
struct EvaluationReport<'a> {
    mode: Mode,
    method: &'a Method,
    training_subjects: &'a [String],
    test_subjects: Vec<&'a str>,
    mean_prediction_error_mm: f64,
    mean_shape_error_mm: f64,
    pattern_means_mm: BTreeMap<String, f64>,
    aggregates: &'a [toothsparse::evaluation::Aggregate],
    runs: &'a [toothsparse::evaluation::RunRecord],
}

fn evaluate(a: EvaluateArgs) -> CliResult {
    let started = now_ms();
    let patterns = load_patterns(&a)?;
    let config = a.opts.config();
    config.validate()?;
    let method = if a.baseline {
        Method::TemplateCopy
    } else {
        Method::Sparse(config)
    };
    let template_dir = a.template.clone().unwrap_or_else(|| a.cohort.join(TEMPLATE_DIR));
    let truth_dir = a.truth.clone().unwrap_or_else(|| a.cohort.join(TRUTH_DIR));
    let template = read_template(&template_dir)?;
    let dicts = load_dictionary_set(&a.dict)?;

    let training: BTreeSet<&str> = dicts.subject_ids().iter().map(String::as_str).collect();
    let mut subjects = Vec::new();
    for (manifest, model) in read_cohort(&a.cohort)? {
        if training.contains(manifest.subject_id.as_str()) {
            continue;
        }
        subjects.push(eval_subject(&truth_dir, model, &template)?);
    }
    if subjects.is_empty() {
        return Err(Failure::usage(format!(
            "every subject in {} is in the dictionary; nothing to test",
            a.cohort.display()
        )));
    }

    let report = run_pattern_experiments(&subjects, &template, &dicts, &patterns, &method)?;
    write_reports(&a, &report, &method, dicts.subject_ids(), &subjects)?;

    RunManifest::new(
        "evaluate",
        json!({ "mode": a.mode, "method": method, "patterns": report.patterns }),
        started,
    )
    .input(&a.cohort)
    .input(&a.dict)
    .input(&template_dir)
    .input(&truth_dir)
    .output(&a.out)
    .write(&a.out.join(RUN_MANIFEST))?;
    Ok(())
}

fn eval_subject(
    truth_dir: &Path,
    model: toothsparse::correspondence::DentalModel,
    template: &DentalTemplate,
) -> Result<EvalSubject, Failure> {
    let dir = truth_dir.join(&model.subject_id);
    if !dir.is_dir() {
        return Err(Failure::data(format!(
            "no ground truth for {} in {}",
            model.subject_id,
            truth_dir.display()
        )));
    }
    let (manifest, teeth) = read_teeth_dir(&dir)?;
    if !manifest.corresponded || manifest.frame != Frame::Subject {
        return Err(Failure::data(format!(
            "{} must hold corresponded subject-frame clouds",
            dir.display()
        )));
    }
    let truth = teeth
        .into_iter()
        .map(|(l, c)| Ok((l, CorrespondedTooth::new(l, c, template)?)))
        .collect::<toothsparse::Result<_>>()?;
    Ok(EvalSubject { model, truth })
}

fn write_reports(
    a: &EvaluateArgs,
    report: &MetricsReport,
    method: &Method,
    training: &[String],
    subjects: &[EvalSubject],
) -> toothsparse::Result<()> {
    create_dir(&a.out)?;
    report.write_csv(&a.out.join("metrics.csv"))?;
    std::fs::write(a.out.join("summary.txt"), report.summary_table())
        .map_err(|e| toothsparse::Error::io(a.out.join("summary.txt"), e))?;
    let pattern_means_mm = report
        .patterns
        .iter()
        .filter_map(|p| report.pattern_mean(p).map(|m| (p.name(), m)))
        .collect();
    write_json(
        &a.out.join("report.json"),
        &EvaluationReport {
            mode: a.mode,
            method,
            training_subjects: training,
            test_subjects: subjects.iter().map(|s| s.subject_id()).collect(),
            mean_prediction_error_mm: report.mean_prediction_error(),
            mean_shape_error_mm: report.mean_shape_error(),
            pattern_means_mm,
            aggregates: &report.aggregates,
            runs: &report.runs,
        },
    )
}
