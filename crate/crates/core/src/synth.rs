//! Synthetic dental cohorts with known ground truth.
//!
//! The template is 28 superellipsoid crowns placed along a parametric arch (upper row at +z,
//! lower row at −z, patient's right at −x). Subjects are the template deformed by a linear
//! combination of analytic modes and moved by a rigid jitter. Ground truth is the noise-free
//! deformed template; the raw clouds add Gaussian noise, partial resampling and shuffling.
//!
//! Every mode is made neutral with respect to the centroid alignment: its mean tooth-centroid
//! displacement is zero and its centroid displacement field has no infinitesimal rotation
//! component. Aligning a noise-free subject on all 28 teeth therefore returns exactly the
//! deformed template, so cohorts are linear in the latent vector once aligned.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correspondence::{CorrespondedTooth, DentalModel, DentalTemplate};
use crate::error::{Error, Result};
use crate::geometry::{apply_transform, Point3, PointCloud, RigidTransform};
use crate::tooth::{ToothKind, ToothLabel};

/// Number of analytic deformation modes; the largest admissible latent rank.
pub const MODE_COUNT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// mm between the distal ends of the upper arch
    pub width: f64,
    /// mm from the incisors to the line through the ends
    pub depth: f64,
    /// Shape exponent of `y = depth·(1 − |x/half_width|^exponent)`.
    pub exponent: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            width: 50.0,
            depth: 42.0,
            exponent: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterConfig {
    pub rotation_deg: f64,
    pub translation_mm: f64,
}

impl Default for JitterConfig {
    fn default() -> Self {
        Self {
            rotation_deg: 3.0,
            translation_mm: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub latent_rank: usize,
    pub noise_sigma: f64,
    pub points_per_tooth: BTreeMap<ToothLabel, usize>,
    pub arch: ArchConfig,
    pub jitter: JitterConfig,
    /// Fraction of each raw cloud replaced by fresh surface samples.
    pub resample_fraction: f64,
    /// Shuffle the point order of raw clouds.
    pub permute: bool,
    pub seed: u64,
}

pub fn default_points(label: ToothLabel) -> usize {
    match label.kind() {
        ToothKind::Incisor => 150,
        ToothKind::Canine => 180,
        ToothKind::Premolar => 220,
        ToothKind::Molar => 300,
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects: 133,
            latent_rank: 8,
            noise_sigma: 0.0,
            points_per_tooth: ToothLabel::all().map(|l| (l, default_points(l))).collect(),
            arch: ArchConfig::default(),
            jitter: JitterConfig::default(),
            resample_fraction: 0.0,
            permute: true,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Same number of points on every tooth.
    pub fn with_uniform_points(mut self, t: usize) -> Self {
        self.points_per_tooth = ToothLabel::all().map(|l| (l, t)).collect();
        self
    }

    /// Points per tooth scaled from the defaults (rounded, at least 4).
    pub fn with_point_scale(mut self, factor: f64) -> Self {
        self.points_per_tooth = ToothLabel::all()
            .map(|l| (l, ((default_points(l) as f64 * factor).round() as usize).max(4)))
            .collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_subjects == 0 {
            return bad("n_subjects must be at least 1".into());
        }
        if self.latent_rank > MODE_COUNT {
            return bad(format!(
                "latent rank {} exceeds the {MODE_COUNT} available modes",
                self.latent_rank
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma {} must be finite and ≥ 0", self.noise_sigma));
        }
        if !(0.0..=1.0).contains(&self.resample_fraction) {
            return bad(format!("resample_fraction {} outside [0, 1]", self.resample_fraction));
        }
        for label in ToothLabel::all() {
            match self.points_per_tooth.get(&label) {
                Some(&t) if t >= 4 => {}
                Some(&t) => return bad(format!("tooth {label}: {t} points, need at least 4")),
                None => return bad(format!("no point count for tooth {label}")),
            }
        }
        let a = &self.arch;
        if !(a.width > 0.0 && a.depth > 0.0 && a.exponent > 0.0) {
            return bad(format!("invalid arch parameters {a:?}"));
        }
        let j = &self.jitter;
        if !(j.rotation_deg >= 0.0 && j.translation_mm >= 0.0) {
            return bad(format!("invalid jitter {j:?}"));
        }
        Ok(())
    }
}

/// Crown dimensions in mm (mesiodistal, buccolingual, height) by position 1..=7.
const UPPER_DIMS: [[f64; 3]; 7] = [
    [8.6, 7.0, 10.5],
    [6.6, 6.2, 9.0],
    [7.6, 8.0, 10.0],
    [7.0, 9.2, 8.5],
    [6.6, 9.0, 7.8],
    [10.2, 11.2, 7.5],
    [9.2, 11.0, 7.2],
];
const LOWER_DIMS: [[f64; 3]; 7] = [
    [5.3, 5.8, 9.0],
    [5.9, 6.0, 9.3],
    [6.9, 7.5, 10.5],
    [7.0, 7.8, 8.5],
    [7.1, 8.2, 8.0],
    [11.0, 10.4, 7.5],
    [10.5, 10.0, 7.2],
];
const ROW_HEIGHT: f64 = 6.0;

#[derive(Debug, Clone, Copy)]
struct ToothFrame {
    centre: Point3,
    /// Unit mesiodistal direction, pointing distally.
    tangent: Vector3<f64>,
    /// Unit buccal direction.
    normal: Vector3<f64>,
    semi_axes: Vector3<f64>,
    exponent: f64,
    upper: bool,
    /// Centroid of the template cloud.
    centroid: Point3,
}

fn mirror(p: &Point3) -> Point3 {
    Point3::new(-p.x, p.y, p.z)
}

fn mirror_vec(v: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(-v.x, v.y, v.z)
}

fn signed_pow(v: f64, e: f64) -> f64 {
    v.signum() * v.abs().powf(e)
}

/// Quasi-uniform unit vectors (Fibonacci lattice).
fn fibonacci_directions(n: usize) -> Vec<Vector3<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            Vector3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Frames of the left-side teeth (x > 0) of one row along `y = depth·(1 − (x/h)^e)`.
fn row_frames(arch: &ArchConfig, upper: bool) -> Vec<ToothFrame> {
    let (dims, scale) = if upper {
        (&UPPER_DIMS, 1.0)
    } else {
        (&LOWER_DIMS, 0.92)
    };
    let half = 0.5 * arch.width * scale;
    let depth = arch.depth * scale;
    let e = arch.exponent;
    let curve = |u: f64| Vector3::new(half * u, depth * (1.0 - u.powf(e)), 0.0);

    // cumulative arc length on a fine grid
    let steps = 20_000;
    let u_max = 2.0;
    let mut us = Vec::with_capacity(steps + 1);
    let mut lengths = Vec::with_capacity(steps + 1);
    let mut acc = 0.0;
    let mut prev = curve(0.0);
    for s in 0..=steps {
        let u = u_max * s as f64 / steps as f64;
        let p = curve(u);
        acc += (p - prev).norm();
        prev = p;
        us.push(u);
        lengths.push(acc);
    }
    let u_at = |len: f64| {
        let i = lengths.partition_point(|&l| l < len).clamp(1, steps);
        let f = (len - lengths[i - 1]) / (lengths[i] - lengths[i - 1]).max(f64::MIN_POSITIVE);
        us[i - 1] + f * (us[i] - us[i - 1])
    };

    let z = if upper { ROW_HEIGHT } else { -ROW_HEIGHT };
    let mut start = 0.0;
    dims.iter()
        .enumerate()
        .map(|(pos, d)| {
            let u = u_at(start + 0.5 * d[0]);
            start += d[0];
            let c = curve(u);
            let du = 1e-6;
            let tangent = (curve(u + du) - curve((u - du).max(0.0))).normalize();
            let normal = Vector3::new(-tangent.y, tangent.x, 0.0);
            let exponent = match pos + 1 {
                1 | 2 => 0.7,
                3 => 0.8,
                4 | 5 => 0.6,
                _ => 0.5,
            };
            ToothFrame {
                centre: Point3::new(c.x, c.y, z),
                tangent,
                normal,
                semi_axes: Vector3::new(0.475 * d[0], 0.5 * d[1], 0.5 * d[2]),
                exponent,
                upper,
                centroid: Point3::origin(),
            }
        })
        .collect()
}

/// Surface point of the undeformed crown in direction `n` (unit vector, tooth-local axes).
fn surface_point(frames: &BTreeMap<ToothLabel, ToothFrame>, label: ToothLabel, n: &Vector3<f64>) -> Point3 {
    if matches!(label.quadrant(), 1 | 4) {
        return mirror(&surface_point(frames, label.mirrored(), n));
    }
    let f = &frames[&label];
    let e = f.exponent;
    let occlusal = if f.upper { -1.0 } else { 1.0 };
    // crowns widen towards the occlusal surface
    let taper = 1.0 + 0.15 * occlusal * n.z;
    let u = Vector3::new(
        signed_pow(n.x, e) * f.semi_axes.x * taper,
        signed_pow(n.y, e) * f.semi_axes.y,
        signed_pow(n.z, e) * f.semi_axes.z,
    );
    f.centre + f.tangent * u.x + f.normal * u.y + Vector3::z() * u.z
}

/// The deterministic template together with the neutralised deformation modes.
#[derive(Debug, Clone)]
pub struct ArchModel {
    frames: BTreeMap<ToothLabel, ToothFrame>,
    template: DentalTemplate,
    depth: f64,
    /// Per mode: removed translation and infinitesimal rotation.
    neutral: Vec<(Vector3<f64>, Vector3<f64>)>,
    pivot: Point3,
}

impl ArchModel {
    pub fn new(config: &SynthConfig) -> Result<Self> {
        config.validate()?;
        let upper = row_frames(&config.arch, true);
        let lower = row_frames(&config.arch, false);
        let mut frames = BTreeMap::new();
        for label in ToothLabel::all() {
            let row = if label.is_upper() { &upper } else { &lower };
            let f = row[label.position() as usize - 1];
            let f = if matches!(label.quadrant(), 1 | 4) {
                ToothFrame {
                    centre: mirror(&f.centre),
                    tangent: mirror_vec(&f.tangent),
                    normal: mirror_vec(&f.normal),
                    ..f
                }
            } else {
                f
            };
            frames.insert(label, f);
        }

        let mut teeth = BTreeMap::new();
        for label in ToothLabel::all() {
            let dirs = fibonacci_directions(config.points_per_tooth[&label]);
            let pts: Vec<Point3> = dirs.iter().map(|n| surface_point(&frames, label, n)).collect();
            teeth.insert(label, PointCloud::new(pts)?);
        }
        let template = DentalTemplate::new(teeth)?;
        for (l, f) in frames.iter_mut() {
            f.centroid = template.tooth(*l).centroid();
        }
        let mut model = Self {
            frames,
            template,
            depth: config.arch.depth,
            neutral: vec![(Vector3::zeros(), Vector3::zeros()); MODE_COUNT],
            pivot: Point3::origin(),
        };
        model.neutralise();
        Ok(model)
    }

    pub fn template(&self) -> &DentalTemplate {
        &self.template
    }

    fn surface_point(&self, label: ToothLabel, n: &Vector3<f64>) -> Point3 {
        surface_point(&self.frames, label, n)
    }

    fn raw_mode(&self, k: usize, label: ToothLabel, p: &Point3) -> Vector3<f64> {
        let f = &self.frames[&label];
        let local = p - f.centroid;
        match k {
            // arch widening
            0 => Vector3::new(0.04 * p.x, 0.0, 0.0),
            // arch depth
            1 => Vector3::new(0.0, 0.03 * (p.y - 0.5 * self.depth), 0.0),
            // left/right crown size gradient
            2 => local * (0.1 * (p.x / 15.0).tanh()),
            // crown size, stronger in the upper row
            3 => local * if f.upper { 0.15 } else { 0.05 },
            // mesiodistal tilt, growing towards the back of the arch
            4 => f.tangent * (0.03 * f64::from(label.position()) * local.z),
            // curve of Spee
            5 => Vector3::new(0.0, 0.0, 1.5 * (1.0 - p.y / self.depth).powi(2)),
            // crown height
            6 => Vector3::new(0.0, 0.0, 0.1 * local.z),
            // buccolingual width
            7 => f.normal * (0.1 * local.dot(&f.normal)),
            // anteroposterior skew
            8 => Vector3::new(0.0, 0.03 * p.x, 0.0),
            // incisor protrusion
            _ => Vector3::new(0.0, (-(p.x / 12.0).powi(2)).exp(), 0.0),
        }
    }

    /// Displacement of mode `k` at template-surface point `p` of tooth `label`.
    pub fn mode_displacement(&self, k: usize, label: ToothLabel, p: &Point3) -> Vector3<f64> {
        let (t, w) = &self.neutral[k];
        self.raw_mode(k, label, p) - t - w.cross(&(p - self.pivot))
    }

    fn neutralise(&mut self) {
        let centroids: BTreeMap<ToothLabel, Point3> = self
            .template
            .teeth()
            .iter()
            .map(|(l, c)| (*l, c.centroid()))
            .collect();
        let pivot = Point3::from(
            centroids.values().map(|c| c.coords).sum::<Vector3<f64>>() / centroids.len() as f64,
        );
        let mut spread = Matrix3::zeros();
        for c in centroids.values() {
            let d = c - pivot;
            spread += d * d.transpose();
        }
        let lhs = Matrix3::identity() * spread.trace() - spread;
        let lhs_inv = lhs.try_inverse().expect("tooth centroids span the plane");
        self.pivot = pivot;
        for k in 0..MODE_COUNT {
            let shifts: Vec<(Vector3<f64>, Vector3<f64>)> = self
                .template
                .teeth()
                .iter()
                .map(|(&l, cloud)| {
                    let mean = cloud
                        .points()
                        .iter()
                        .map(|p| self.raw_mode(k, l, p))
                        .sum::<Vector3<f64>>()
                        / cloud.len() as f64;
                    (mean, centroids[&l] - pivot)
                })
                .collect();
            let t = shifts.iter().map(|(d, _)| d).sum::<Vector3<f64>>() / shifts.len() as f64;
            let mut h = Matrix3::zeros();
            for (d, c) in &shifts {
                h += (d - t) * c.transpose();
            }
            let a = (h - h.transpose()) * 0.5;
            let axial = Vector3::new(a[(2, 1)], a[(0, 2)], a[(1, 0)]);
            let w = lhs_inv * (axial * 2.0);
            self.neutral[k] = (t, w);
        }
    }

    /// Deformed point for template-surface point `p` and latent vector `z`.
    fn deform(&self, label: ToothLabel, p: &Point3, z: &[f64]) -> Point3 {
        let mut q = *p;
        for (k, zk) in z.iter().enumerate() {
            q += self.mode_displacement(k, label, p) * *zk;
        }
        q
    }

    /// Noise-free teeth of latent vector `z` in the template frame.
    pub fn deformed_teeth(&self, z: &[f64]) -> Result<BTreeMap<ToothLabel, PointCloud>> {
        self.template
            .teeth()
            .iter()
            .map(|(&l, cloud)| Ok((l, cloud.map_points(|p| self.deform(l, p, z))?)))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SynthSubject {
    /// Raw clouds in the subject frame (permuted and partly resampled).
    pub model: DentalModel,
    /// Corresponded teeth in the subject frame.
    pub truth: BTreeMap<ToothLabel, CorrespondedTooth>,
    pub latent: Vec<f64>,
    /// Template frame → subject frame.
    pub jitter: RigidTransform,
}

impl SynthSubject {
    pub fn truth_model(&self) -> Result<DentalModel> {
        DentalModel::new(
            self.model.subject_id.clone(),
            self.truth.iter().map(|(l, t)| (*l, t.cloud.clone())).collect(),
        )
    }
}

pub fn generate_template(config: &SynthConfig) -> Result<DentalTemplate> {
    Ok(ArchModel::new(config)?.template)
}

pub fn subject_id(index: usize) -> String {
    format!("s{:04}", index + 1)
}

pub fn generate_cohort(config: &SynthConfig) -> Result<(DentalTemplate, Vec<SynthSubject>)> {
    let model = ArchModel::new(config)?;
    let subjects = (0..config.n_subjects)
        .into_par_iter()
        .map(|i| generate_subject(&model, config, i))
        .collect::<Result<Vec<_>>>()?;
    Ok((model.template, subjects))
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

fn generate_subject(model: &ArchModel, config: &SynthConfig, index: usize) -> Result<SynthSubject> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);

    let latent: Vec<f64> = (0..config.latent_rank)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let axis = random_unit(&mut rng);
    let angle = config.jitter.rotation_deg.to_radians() * rng.random_range(-1.0..=1.0);
    let tr = config.jitter.translation_mm;
    let shift = Vector3::new(
        tr * rng.random_range(-1.0..=1.0),
        tr * rng.random_range(-1.0..=1.0),
        tr * rng.random_range(-1.0..=1.0),
    );
    let jitter = RigidTransform::from_axis_angle(axis, angle, shift);
    let sigma = config.noise_sigma;

    let noisy = |rng: &mut ChaCha8Rng, p: Point3| {
        if sigma > 0.0 {
            p + Vector3::new(
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
            ) * sigma
        } else {
            p
        }
    };

    let mut truth = BTreeMap::new();
    let mut raw = BTreeMap::new();
    for (&label, cloud) in model.template.teeth() {
        // truth is the noise-free surface, only the observation is noisy (isotropic, so
        // adding it after the jitter is equivalent)
        let points: Vec<Point3> = cloud
            .points()
            .iter()
            .map(|p| jitter.apply_point(&model.deform(label, p, &latent)))
            .collect();
        let mut observed: Vec<Point3> = points
            .iter()
            .map(|p| noisy(&mut rng, *p))
            .collect();
        let n_resample = (config.resample_fraction * points.len() as f64).round() as usize;
        if n_resample > 0 {
            let chosen = rand::seq::index::sample(&mut rng, points.len(), n_resample);
            for i in chosen.iter() {
                let s = model.surface_point(label, &random_unit(&mut rng));
                let q = noisy(&mut rng, model.deform(label, &s, &latent));
                observed[i] = jitter.apply_point(&q);
            }
        }
        if config.permute {
            observed.shuffle(&mut rng);
        }
        truth.insert(
            label,
            CorrespondedTooth::new(label, PointCloud::new(points)?, &model.template)?,
        );
        raw.insert(label, PointCloud::new(observed)?);
    }
    Ok(SynthSubject {
        model: DentalModel::new(subject_id(index), raw)?,
        truth,
        latent,
        jitter,
    })
}

/// Subject-frame ground truth moved back to the template frame with the known jitter.
pub fn truth_in_template_frame(subject: &SynthSubject) -> BTreeMap<ToothLabel, PointCloud> {
    let back = subject.jitter.inverse();
    subject
        .truth
        .iter()
        .map(|(l, t)| (*l, apply_transform(&back, &t.cloud)))
        .collect()
}
