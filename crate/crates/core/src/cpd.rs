//! Non-rigid coherent point drift (CPD) registration.
//!
//! The source cloud `Y` (M points) is moved by a smooth displacement `G·W`, where `G` is the
//! Gaussian Gram matrix of the source, so that it explains the target cloud `X` (N points) as a
//! Gaussian mixture with a uniform outlier component. Parameters are fitted by EM.
//!
//! Both clouds are centred on their own centroids and divided by the source diameter before
//! fitting, so `beta` is expressed in units of tooth size. The result is mapped back to the
//! target's coordinates.

use nalgebra::{Cholesky, DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpdConfig {
    /// Gaussian kernel width, in units of the normalised (unit-diameter) source.
    pub beta: f64,
    /// Weight of the motion-coherence regulariser.
    pub lambda: f64,
    /// Uniform outlier weight in `[0, 1)`.
    pub outlier_weight: f64,
    pub max_iterations: usize,
    /// Relative objective change at which EM stops.
    pub tolerance: f64,
}

impl Default for CpdConfig {
    fn default() -> Self {
        Self {
            beta: 2.0,
            lambda: 3.0,
            outlier_weight: 0.1,
            max_iterations: 100,
            tolerance: 1e-6,
        }
    }
}

impl CpdConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.beta > 0.0
            && self.beta.is_finite()
            && self.lambda > 0.0
            && self.lambda.is_finite()
            && (0.0..1.0).contains(&self.outlier_weight)
            && self.max_iterations >= 1
            && self.tolerance > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid CPD config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpdResult {
    /// Source points after deformation, in source order.
    pub deformed: PointCloud,
    /// Final mixture variance in mm².
    pub final_variance: f64,
    pub iterations_used: usize,
    /// Penalised negative log-likelihood (normalised units, constants dropped) at each E-step.
    pub objective_trace: Vec<f64>,
}

/// Stop once the normalised variance collapses below this value.
const SIGMA2_FLOOR: f64 = 1e-14;

pub fn cpd_nonrigid(source: &PointCloud, target: &PointCloud, config: &CpdConfig) -> Result<CpdResult> {
    run(source, target, config, |_| {})
}

/// Posterior of one E-step.
pub(crate) struct EStep {
    /// `posterior[(m, n)]`: probability that target point n was generated by source point m.
    pub posterior: DMatrix<f64>,
    /// Outlier probability of every target point.
    #[cfg_attr(not(test), allow(dead_code))]
    pub outlier: Vec<f64>,
    /// `−Σₙ log(Σₘ exp(−‖xₙ−tₘ‖²/2σ²) + c)`
    pub log_term: f64,
}

pub(crate) fn e_step(target: &[Vector3<f64>], moved: &[Vector3<f64>], sigma2: f64, w: f64) -> EStep {
    let m = moved.len();
    let n = target.len();
    let dim = 3.0;
    let log_c = if w > 0.0 {
        Some(
            0.5 * dim * (2.0 * std::f64::consts::PI * sigma2).ln() + (w / (1.0 - w)).ln()
                + (m as f64 / n as f64).ln(),
        )
    } else {
        None
    };
    let mut posterior = DMatrix::zeros(m, n);
    let mut outlier = vec![0.0; n];
    let mut log_term = 0.0;
    let mut expo = vec![0.0; m];
    let inv = 1.0 / (2.0 * sigma2);
    for (j, x) in target.iter().enumerate() {
        let mut amax = f64::NEG_INFINITY;
        for (i, t) in moved.iter().enumerate() {
            let a = -(x - t).norm_squared() * inv;
            expo[i] = a;
            amax = amax.max(a);
        }
        let sum: f64 = expo.iter().map(|a| (a - amax).exp()).sum();
        let lse = amax + sum.ln();
        let log_den = match log_c {
            Some(lc) => {
                let hi = lse.max(lc);
                hi + ((lse - hi).exp() + (lc - hi).exp()).ln()
            }
            None => lse,
        };
        for i in 0..m {
            posterior[(i, j)] = (expo[i] - log_den).exp();
        }
        outlier[j] = log_c.map_or(0.0, |lc| (lc - log_den).exp());
        log_term -= log_den;
    }
    EStep {
        posterior,
        outlier,
        log_term,
    }
}

fn gaussian_gram(points: &[Vector3<f64>], beta: f64) -> DMatrix<f64> {
    let m = points.len();
    let inv = 1.0 / (2.0 * beta * beta);
    let mut g = DMatrix::zeros(m, m);
    for i in 0..m {
        g[(i, i)] = 1.0;
        for j in 0..i {
            let v = (-(points[i] - points[j]).norm_squared() * inv).exp();
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

fn normalise(cloud: &PointCloud, centre: &Point3, scale: f64) -> Vec<Vector3<f64>> {
    cloud
        .points()
        .iter()
        .map(|p| (p - centre) / scale)
        .collect()
}

/// EM loop; `observe` sees every E-step (used by tests to check the posterior).
pub(crate) fn run(
    source: &PointCloud,
    target: &PointCloud,
    config: &CpdConfig,
    mut observe: impl FnMut(&EStep),
) -> Result<CpdResult> {
    config.validate()?;
    let src_centre = source.centroid();
    let tgt_centre = target.centroid();
    let mut scale = source.diameter();
    if scale <= 0.0 {
        scale = target.diameter();
    }
    if scale <= 0.0 {
        scale = 1.0;
    }
    let y = normalise(source, &src_centre, scale);
    let x = normalise(target, &tgt_centre, scale);
    let m = y.len();
    let n = x.len();

    let g = gaussian_gram(&y, config.beta);
    let mut w = DMatrix::<f64>::zeros(m, 3);
    let mut moved = y.clone();

    let mut sigma2 = {
        let sum_x: f64 = x.iter().map(|p| p.norm_squared()).sum();
        let sum_y: f64 = y.iter().map(|p| p.norm_squared()).sum();
        let mean_x: Vector3<f64> = x.iter().sum();
        let mean_y: Vector3<f64> = y.iter().sum();
        // Σₘₙ ‖xₙ − yₘ‖² expanded to avoid the M×N loop
        let total = m as f64 * sum_x + n as f64 * sum_y - 2.0 * mean_x.dot(&mean_y);
        total / (3.0 * m as f64 * n as f64)
    };

    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut prev_obj: Option<f64> = None;

    while iterations < config.max_iterations && sigma2 > SIGMA2_FLOOR {
        let es = e_step(&x, &moved, sigma2, config.outlier_weight);
        observe(&es);
        let gw = &g * &w;
        let reg = 0.5 * config.lambda * gw.dot(&w);
        let obj = es.log_term + 1.5 * n as f64 * sigma2.ln() + reg;
        trace.push(obj);
        if let Some(prev) = prev_obj {
            if (prev - obj).abs() <= config.tolerance * prev.abs().max(f64::MIN_POSITIVE) {
                break;
            }
        }
        prev_obj = Some(obj);

        // M-step
        let p = &es.posterior;
        let p1: Vec<f64> = (0..m).map(|i| p.row(i).sum()).collect();
        let pt1: Vec<f64> = (0..n).map(|j| p.column(j).sum()).collect();
        let np: f64 = p1.iter().sum();
        let mut px = vec![Vector3::zeros(); m];
        for j in 0..n {
            let xj = x[j];
            for (i, acc) in px.iter_mut().enumerate() {
                *acc += p[(i, j)] * xj;
            }
        }

        // (G + λσ²·diag(P1)⁻¹)·W = diag(P1)⁻¹·PX − Y, solved in the symmetric form
        // (D^½ G D^½ + λσ² I)·Z = D^-½ (PX − D·Y), W = D^½ Z.
        let reg_value = config.lambda * sigma2;
        let sqrt_d: Vec<f64> = p1.iter().map(|v| v.max(0.0).sqrt()).collect();
        let mut b = g.clone();
        for i in 0..m {
            for j in 0..m {
                b[(i, j)] *= sqrt_d[i] * sqrt_d[j];
            }
            b[(i, i)] += reg_value;
        }
        let mut rhs = DMatrix::<f64>::zeros(m, 3);
        for i in 0..m {
            if sqrt_d[i] > 0.0 {
                let r = (px[i] - p1[i] * y[i]) / sqrt_d[i];
                for d in 0..3 {
                    rhs[(i, d)] = r[d];
                }
            }
        }
        let chol = Cholesky::new(b).ok_or(Error::SingularSystem {
            regularization: reg_value,
        })?;
        let z = chol.solve(&rhs);
        for i in 0..m {
            for d in 0..3 {
                w[(i, d)] = sqrt_d[i] * z[(i, d)];
            }
        }
        if !w.iter().all(|v| v.is_finite()) {
            return Err(Error::SingularSystem {
                regularization: reg_value,
            });
        }
        let gw = &g * &w;
        for i in 0..m {
            moved[i] = y[i] + Vector3::new(gw[(i, 0)], gw[(i, 1)], gw[(i, 2)]);
        }

        let xpx: f64 = pt1.iter().zip(&x).map(|(a, p)| a * p.norm_squared()).sum();
        let cross: f64 = px.iter().zip(&moved).map(|(a, t)| a.dot(t)).sum();
        let tpt: f64 = p1.iter().zip(&moved).map(|(a, t)| a * t.norm_squared()).sum();
        sigma2 = ((xpx - 2.0 * cross + tpt) / (3.0 * np)).abs();
        iterations += 1;
        if !sigma2.is_finite() {
            return Err(Error::SingularSystem {
                regularization: reg_value,
            });
        }
    }

    let deformed = PointCloud::new(
        moved
            .iter()
            .map(|v| Point3::from(v * scale + tgt_centre.coords))
            .collect(),
    )?;
    Ok(CpdResult {
        deformed,
        final_variance: sigma2 * scale * scale,
        iterations_used: iterations,
        objective_trace: trace,
    })
}
