//! Basis pursuit denoising: `min ‖c‖₁ subject to ‖D·c − a‖₂ ≤ ε`.
//!
//! The problem is first reduced with a thin QR factorisation `D = Q·R`: since
//! `‖D·c − a‖² = ‖R·c − Qᵀa‖² + ‖(I − QQᵀ)a‖²`, it is equivalent to a problem with `min(m, N)`
//! rows and a shrunken radius, and infeasible exactly when ε is below the least-squares
//! residual. `R` is further replaced by `Σ·Vᵀ` from its SVD with numerically zero singular values
//! dropped, which keeps the rows orthogonal. The reduced problem is solved by ADMM with the
//! splitting
//!
//! ```text
//! minimise ι_C(x) + ‖y‖₁   subject to   x = y,   C = {x : ‖R·x − b‖ ≤ ε}
//! ```
//!
//! where the x-update projects onto C (a one-dimensional root find, since the rows of R are
//! orthogonal) and the y-update is soft-thresholding. The penalty ρ is rebalanced from the primal/dual residual ratio.
//! Every few iterations the support and signs of the iterate are used to solve the restricted
//! problem in closed form; that candidate is accepted once a dual certificate proves it optimal.
//! A final correction restores exact feasibility of an uncertified iterate.

use nalgebra::{Cholesky, DMatrix, DVector, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "lowercase")]
pub enum Epsilon {
    /// Millimetres.
    Absolute(f64),
    /// Fraction of the target vector's 2-norm.
    Relative(f64),
}

impl Epsilon {
    pub fn resolve(&self, target_norm: f64) -> f64 {
        match *self {
            Epsilon::Absolute(v) => v,
            Epsilon::Relative(v) => v * target_norm,
        }
    }

    fn value(&self) -> f64 {
        match *self {
            Epsilon::Absolute(v) | Epsilon::Relative(v) => v,
        }
    }
}

/// What to do when ε is below the least-squares residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "lowercase")]
pub enum InfeasiblePolicy {
    /// Report [`Error::Infeasible`].
    Fail,
    /// Raise ε to `(1 + margin)` times the least-squares residual.
    Relax { margin: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BpdnConfig {
    pub epsilon: Epsilon,
    pub max_iterations: usize,
    pub primal_tolerance: f64,
    pub dual_tolerance: f64,
    pub on_infeasible: InfeasiblePolicy,
}

impl Default for BpdnConfig {
    fn default() -> Self {
        Self {
            epsilon: Epsilon::Relative(0.01),
            max_iterations: 20_000,
            primal_tolerance: 1e-9,
            dual_tolerance: 1e-9,
            on_infeasible: InfeasiblePolicy::Fail,
        }
    }
}

impl BpdnConfig {
    pub fn validate(&self) -> Result<()> {
        let eps = self.epsilon.value();
        let margin_ok = match self.on_infeasible {
            InfeasiblePolicy::Fail => true,
            InfeasiblePolicy::Relax { margin } => margin >= 0.0 && margin.is_finite(),
        };
        if eps >= 0.0
            && eps.is_finite()
            && self.max_iterations >= 1
            && self.primal_tolerance > 0.0
            && self.dual_tolerance > 0.0
            && margin_ok
        {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid BPDN config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseCode {
    pub coefficients: Vec<f64>,
    /// `‖D·c − a‖₂`
    pub residual_norm: f64,
    pub l1_norm: f64,
    pub iterations_used: usize,
    pub converged: bool,
    /// Absolute ε actually enforced.
    pub epsilon: f64,
    pub least_squares_residual: f64,
    /// ε was raised to the least-squares residual.
    pub relaxed: bool,
    /// Sum of coefficients (diagnostic only, not constrained).
    pub coefficient_sum: f64,
}

impl SparseCode {
    pub fn coefficient_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.coefficients)
    }

    /// Feasibility slack allowed on top of ε.
    pub fn slack(epsilon: f64) -> f64 {
        1e-6 * (1.0 + epsilon)
    }
}

/// Adapt ρ every this many iterations.
const RHO_INTERVAL: usize = 10;
const RHO_RATIO: f64 = 10.0;
const RHO_FACTOR: f64 = 2.0;
/// Singular values below this fraction of the largest are treated as zero in corrections.
const PINV_TOL: f64 = 1e-12;
/// Dictionary directions with singular values below this fraction of the largest are dropped.
const RANK_TOL: f64 = 1e-10;

pub fn solve_bpdn(dict: &DMatrix<f64>, target: &DVector<f64>, config: &BpdnConfig) -> Result<SparseCode> {
    config.validate()?;
    let (m, n) = dict.shape();
    if m == 0 || n == 0 {
        return Err(Error::InvalidInput("empty dictionary".into()));
    }
    if target.len() != m {
        return Err(Error::CardinalityMismatch {
            left: target.len(),
            right: m,
        });
    }
    if !dict.iter().chain(target.iter()).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("sparse coding input"));
    }

    let a_norm = target.norm();
    let mut epsilon = config.epsilon.resolve(a_norm);

    // Thin QR, then the SVD of the small triangular factor: D = Q·U·Σ·Vᵀ. Directions with
    // numerically zero singular values are dropped.
    let qr = dict.clone().qr();
    let q = qr.q();
    let b_full = q.transpose() * target;
    let outside_q = (target - &q * &b_full).norm();
    let svd = SVD::new(qr.r(), true, true);
    let (Some(u), Some(vt)) = (svd.u.as_ref(), svd.v_t.as_ref()) else {
        return Err(Error::Degenerate("SVD of the dictionary factor failed".into()));
    };
    let s_max = svd.singular_values.max();
    let kept: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > RANK_TOL * s_max)
        .collect();
    let u_r = u.select_columns(kept.iter());
    let beta = u_r.transpose() * &b_full;
    let ls_residual = outside_q.hypot((&b_full - &u_r * &beta).norm());

    let mut relaxed = false;
    // residuals within the feasibility slack are rounding noise, not infeasibility
    if ls_residual > epsilon + SparseCode::slack(epsilon) {
        match config.on_infeasible {
            InfeasiblePolicy::Fail => {
                return Err(Error::Infeasible {
                    epsilon,
                    least_squares_residual: ls_residual,
                })
            }
            InfeasiblePolicy::Relax { margin } => {
                epsilon = ls_residual * (1.0 + margin);
                relaxed = true;
            }
        }
    }

    let finish = |coef: DVector<f64>, iterations: usize, admm_converged: bool| {
        let residual_norm = (dict * &coef - target).norm();
        let converged = admm_converged && residual_norm <= epsilon + SparseCode::slack(epsilon);
        SparseCode {
            l1_norm: coef.abs().sum(),
            coefficient_sum: coef.sum(),
            coefficients: coef.as_slice().to_vec(),
            residual_norm,
            iterations_used: iterations,
            converged,
            epsilon,
            least_squares_residual: ls_residual,
            relaxed,
        }
    };

    if epsilon >= a_norm {
        // zero is feasible and has the smallest possible l1 norm
        return Ok(finish(DVector::zeros(n), 0, true));
    }

    if kept.is_empty() {
        return Err(Error::Infeasible {
            epsilon,
            least_squares_residual: a_norm,
        });
    }
    // Normalise so that ‖R‖₂ = 1 and ‖a‖₂ = 1; the solution scales back by a_norm / s_max.
    let sig = DVector::from_iterator(kept.len(), kept.iter().map(|&i| svd.singular_values[i] / s_max));
    let vt_r = vt.select_rows(kept.iter());
    let mut r = vt_r.clone();
    for (i, mut row) in r.row_iter_mut().enumerate() {
        row *= sig[i];
    }
    let b = &beta / a_norm;
    let eps_reduced = {
        let e = epsilon / a_norm;
        let ls = ls_residual / a_norm;
        (e * e - ls * ls).max(0.0).sqrt()
    };

    let reduced = Reduced { r, sig, vt: vt_r, b };
    let (y, iterations, admm_converged) = admm(&reduced, eps_reduced, config);
    let y = restore_feasibility(&reduced, eps_reduced, y);
    let coef = y * (a_norm / s_max);
    Ok(finish(coef, iterations, admm_converged))
}

/// Reduced problem `min ‖x‖₁ s.t. ‖R·x − b‖ ≤ ε` with `R = diag(sig)·vt` and orthonormal rows
/// in `vt`.
struct Reduced {
    r: DMatrix<f64>,
    sig: DVector<f64>,
    vt: DMatrix<f64>,
    b: DVector<f64>,
}

impl Reduced {
    /// Euclidean projection of `v` onto `{x : ‖R·x − b‖ ≤ eps}`.
    ///
    /// Only the component of `v` in the row space of `R` moves; in the coordinates `w = Vᵀx` the
    /// projection is `wᵢ = (w0ᵢ + μσᵢbᵢ)/(1 + μσᵢ²)` with the multiplier μ found by Newton's
    /// method on `1/‖res(μ)‖ − 1/eps`, which converges monotonically from μ = 0.
    fn project(&self, v: &DVector<f64>, eps: f64) -> DVector<f64> {
        let w0 = &self.vt * v;
        let e = self.sig.component_mul(&w0) - &self.b;
        if e.norm() <= eps {
            return v.clone();
        }
        let w = if eps == 0.0 {
            self.b.component_div(&self.sig)
        } else {
            let mut mu = 0.0;
            for _ in 0..100 {
                let mut g2 = 0.0;
                let mut dg = 0.0;
                for (ei, si) in e.iter().zip(self.sig.iter()) {
                    let d = 1.0 + mu * si * si;
                    g2 += (ei / d).powi(2);
                    dg += ei * ei * si * si / (d * d * d);
                }
                let g = g2.sqrt();
                if (g - eps).abs() <= 1e-15 * eps {
                    break;
                }
                let step = (1.0 / g - 1.0 / eps) / (dg / (g * g2));
                if !step.is_finite() || step.abs() <= 1e-16 * mu.max(1.0) {
                    break;
                }
                mu -= step;
            }
            DVector::from_iterator(
                w0.len(),
                (0..w0.len()).map(|i| {
                    let si = self.sig[i];
                    (w0[i] + mu * si * self.b[i]) / (1.0 + mu * si * si)
                }),
            )
        };
        v + self.vt.transpose() * (w - w0)
    }

    /// Minimum-norm solution of `R·x = v`.
    fn pseudo_solve(&self, v: &DVector<f64>) -> DVector<f64> {
        self.vt.transpose() * v.component_div(&self.sig)
    }
}

fn soft_threshold(v: f64, k: f64) -> f64 {
    if v > k {
        v - k
    } else if v < -k {
        v + k
    } else {
        0.0
    }
}

fn admm(p: &Reduced, eps: f64, config: &BpdnConfig) -> (DVector<f64>, usize, bool) {
    let (r, b) = (&p.r, &p.b);
    let n = r.ncols();
    let rt = r.transpose();

    let mut rho = 1.0;
    let mut y = DVector::zeros(n);
    let mut u = DVector::zeros(n);
    let sqrt_n = (n as f64).sqrt();

    for iter in 1..=config.max_iterations {
        let x = p.project(&(&y - &u), eps);
        let y_old = std::mem::replace(&mut y, (&x + &u).map(|e| soft_threshold(e, 1.0 / rho)));
        let residual = &x - &y;
        u += &residual;

        let primal = residual.norm();
        let dual = rho * (&y - &y_old).norm();
        let eps_pri = config.primal_tolerance * (sqrt_n + x.norm().max(y.norm()));
        let eps_dual = config.dual_tolerance * (sqrt_n + rho * u.norm());
        if primal <= eps_pri && dual <= eps_dual {
            return (y, iter, true);
        }

        if iter % RHO_INTERVAL == 0 {
            if let Some(exact) = polish(r, &rt, b, eps, &y) {
                return (exact, iter, true);
            }
            if primal > RHO_RATIO * dual {
                rho *= RHO_FACTOR;
                u /= RHO_FACTOR;
            } else if dual > RHO_RATIO * primal {
                rho /= RHO_FACTOR;
                u *= RHO_FACTOR;
            }
        }
    }
    if let Some(exact) = polish(r, &rt, b, eps, &y) {
        return (exact, config.max_iterations, true);
    }
    (y, config.max_iterations, false)
}

/// Guesses the optimal support and signs from the ADMM iterate, solves the problem restricted to
/// them in closed form and returns the result only if it carries a dual optimality certificate:
/// a multiplier `λ` with `(Rᵀλ)_S = sign(x_S)` and `‖Rᵀλ‖_∞ ≤ 1`.
fn polish(
    r: &DMatrix<f64>,
    rt: &DMatrix<f64>,
    b: &DVector<f64>,
    eps: f64,
    y: &DVector<f64>,
) -> Option<DVector<f64>> {
    let (k, n) = r.shape();
    let ymax = y.amax();
    if ymax == 0.0 {
        return None;
    }
    let mut last: Option<Vec<usize>> = None;
    for tau in [0.0, 1e-10, 1e-8, 1e-6, 1e-4, 1e-2] {
        let support: Vec<usize> = (0..n).filter(|&i| y[i].abs() > tau * ymax).collect();
        if support.is_empty() || support.len() > k || last.as_ref() == Some(&support) {
            continue;
        }
        last = Some(support.clone());
        let signs = DVector::from_iterator(support.len(), support.iter().map(|&i| y[i].signum()));
        let rs = r.select_columns(support.iter());
        let rst = rs.transpose();
        let Some(chol) = Cholesky::new(&rst * &rs) else {
            continue;
        };
        let x_ls = chol.solve(&(&rst * b));
        let ls_res = (&rs * &x_ls - b).norm();
        let eps_s2 = eps * eps - ls_res * ls_res;
        if eps_s2 < -1e-20 {
            continue;
        }
        let h = chol.solve(&signs);
        let (xs, lambda) = if eps_s2.max(0.0).sqrt() <= 1e-12 {
            if eps > 1e-12 {
                // constraint active but only through the least-squares residual; no certificate
                continue;
            }
            let lambda = &rs * &h;
            (x_ls, lambda)
        } else {
            let q = signs.dot(&h);
            if q <= 0.0 {
                continue;
            }
            let t = (eps_s2 / q).sqrt();
            let xs = &x_ls - &h * t;
            let lambda = (b - &rs * &xs) / t;
            (xs, lambda)
        };
        if xs.iter().zip(signs.iter()).any(|(v, s)| v * s <= 0.0) {
            continue;
        }
        if (rt * &lambda).amax() > 1.0 + 1e-9 {
            continue;
        }
        let mut x = DVector::zeros(n);
        for (v, &i) in xs.iter().zip(&support) {
            x[i] = *v;
        }
        if (r * &x - b).norm() > eps + 1e-3 * SparseCode::slack(eps) {
            continue;
        }
        return Some(x);
    }
    None
}

/// Moves `y` by a minimum-norm step so that `‖R·y − b‖ ≤ eps`, preferring a step supported on the
/// current non-zeros so sparsity is kept.
fn restore_feasibility(p: &Reduced, eps: f64, y: DVector<f64>) -> DVector<f64> {
    let (r, b) = (&p.r, &p.b);
    let residual = r * &y - b;
    let norm = residual.norm();
    let budget = eps + 1e-3 * SparseCode::slack(eps);
    if norm <= budget {
        return y;
    }
    let wanted = if norm > 0.0 { &residual * (eps / norm) } else { residual.clone() };
    let step_rhs = wanted - &residual;

    let support: Vec<usize> = (0..y.len()).filter(|&i| y[i] != 0.0).collect();
    if !support.is_empty() {
        let cols = r.select_columns(support.iter());
        let svd = SVD::new(cols, true, true);
        if let Ok(delta) = svd.solve(&step_rhs, PINV_TOL * svd.singular_values.max()) {
            let mut candidate = y.clone();
            for (d, &i) in delta.iter().zip(&support) {
                candidate[i] += d;
            }
            if (r * &candidate - b).norm() <= budget {
                return candidate;
            }
        }
    }
    y + p.pseudo_solve(&step_rhs)
}
