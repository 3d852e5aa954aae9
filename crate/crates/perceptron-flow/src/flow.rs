//! Deterministic integration of the learning-dynamics flow: the coupled ODEs
//! for the ensemble-mean weight vector and its covariance,
//!
//! ```text
//! d⟨w⟩/dt   = f(⟨w⟩) + ½ Σ_jk Cov_jk ∂_j∂_k f(⟨w⟩)      (optional 2nd-order term)
//! dCov/dt   = J·Cov + Cov·Jᵀ,   J_jk = ∂f_j/∂w_k |_{⟨w⟩}
//! ```
//!
//! where f is the closed-form drift from [`crate::drift`]. Time is continuous
//! learning time (discrete steps × learning rate). Integration is fixed-step
//! classical Runge–Kutta 4 — the drift is smooth and bounded, so a fixed step
//! keeps runs exactly reproducible and the step-halving tests quantify the
//! O(dt⁴) error directly.
//!
//! The Jacobian and Hessian contractions are formed by central finite
//! differences of the drift rather than hand-derived second derivatives; the
//! refinement tests bound the resulting error. The covariance equation is
//! linear in Cov, so a zero initial covariance stays exactly zero and the
//! second-order mean correction vanishes for point (delta) initializations —
//! hence `hessian_correction` defaults to off.
//!
//! The module also locates the aligned fixed point ⟨w*⟩ ∥ μ of the symmetric
//! task by a bracketing bisection on the one-dimensional residual along μ.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drift::{drift, RuleConfig};
use crate::specfun::normal_cdf;
use crate::task::{IsotropicTaskParams, TaskSpec};

use std::f64::consts::PI;

/// Norm beyond which the mean flow is declared divergent (legitimately
/// reached when λ = σ = 0, where no finite fixed point exists).
pub const DIVERGENCE_NORM: f64 = 1e6;

/// Eigenvalue floor for initial covariances: values in [−1e−9, 0) are treated
/// as rounding noise and clipped to zero; anything lower is rejected.
pub const COV_EIGENVALUE_TOL: f64 = -1e-9;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("covariance is not positive semidefinite (eigenvalue {min_eigenvalue:.3e})")]
    CovarianceNotPsd { min_eigenvalue: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid flow configuration: {0}")]
    InvalidConfig(String),
    #[error("no finite fixed point exists (requires lambda > 0 or sigma > 0)")]
    NoFixedPoint,
    #[error("fixed-point residual has no sign change on the search bracket")]
    BracketNotFound,
}

/// First two moments of the weight distribution at one instant.
#[derive(Debug, Clone)]
pub struct WeightState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub t: f64,
}

impl WeightState {
    /// Builds a state, validating that `cov` is symmetric PSD. Eigenvalues in
    /// [−1e−9, 0) are clipped to zero; more negative ones are an error.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, t: f64) -> Result<Self, FlowError> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(FlowError::DimensionMismatch { expected: n, got: cov.nrows() });
        }
        assert!(t >= 0.0, "negative time");
        let sym = (&cov + cov.transpose()) * 0.5;
        let eig = sym.clone().symmetric_eigen();
        let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if min_eig < COV_EIGENVALUE_TOL {
            return Err(FlowError::CovarianceNotPsd { min_eigenvalue: min_eig });
        }
        let cov = if min_eig < 0.0 {
            let mut vals = eig.eigenvalues.clone();
            for v in vals.iter_mut() {
                *v = v.max(0.0);
            }
            &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
        } else {
            sym
        };
        Ok(WeightState { mean, cov, t })
    }

    /// Point mass at `mean` (zero covariance) at t = 0.
    pub fn delta(mean: DVector<f64>) -> Self {
        let n = mean.len();
        WeightState { mean, cov: DMatrix::zeros(n, n), t: 0.0 }
    }
}

/// Integrator configuration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FlowConfig {
    /// Runge–Kutta step size.
    pub dt: f64,
    /// Integration horizon.
    pub t_max: f64,
    /// Include the second-order (covariance-contracted Hessian) term in the
    /// mean equation. Zero effect whenever the covariance is zero.
    pub hessian_correction: bool,
    /// Central-difference step for the drift Jacobian/Hessian.
    pub jacobian_step: f64,
    /// Record every k-th integrator step (the final step is always recorded).
    pub record_every: usize,
}

impl FlowConfig {
    pub fn new(dt: f64, t_max: f64) -> Self {
        FlowConfig { dt, t_max, hessian_correction: false, jacobian_step: 1e-5, record_every: 1 }
    }

    pub fn with_record_every(mut self, k: usize) -> Self {
        self.record_every = k;
        self
    }

    pub fn with_hessian_correction(mut self, on: bool) -> Self {
        self.hessian_correction = on;
        self
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        if !(self.dt > 0.0 && self.t_max > 0.0 && self.dt <= self.t_max) {
            return Err(FlowError::InvalidConfig(format!(
                "need 0 < dt <= t_max, got dt={} t_max={}",
                self.dt, self.t_max
            )));
        }
        if !(1e-8..=1e-2).contains(&self.jacobian_step) {
            return Err(FlowError::InvalidConfig(format!(
                "jacobian_step {} outside [1e-8, 1e-2]",
                self.jacobian_step
            )));
        }
        if self.record_every == 0 {
            return Err(FlowError::InvalidConfig("record_every must be positive".into()));
        }
        Ok(())
    }
}

/// Recorded flow history. Scalar diagnostics are derived from the mean weight
/// at recording time; the positive-class mean μ⁺ is the reference direction
/// for `alignment` and `mu_dot_w`. Alignment is defined as 0 when either
/// vector is zero. `accuracy` entries are NaN where the classification
/// accuracy is undefined (noiseless inputs exactly on the decision boundary).
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    /// Present iff the covariance was integrated.
    pub covs: Option<Vec<DMatrix<f64>>>,
    pub alignment: Vec<f64>,
    pub norm: Vec<f64>,
    pub mu_dot_w: Vec<f64>,
    /// Present iff the covariance was integrated.
    pub trace_cov: Option<Vec<f64>>,
    pub accuracy: Vec<f64>,
    /// True if the divergence guard stopped the integration early.
    pub diverged: bool,
    /// Largest ‖½ΣCov∂∂f‖ encountered (0 when the correction is disabled).
    pub max_hessian_correction: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_mean(&self) -> &DVector<f64> {
        self.means.last().expect("empty trajectory")
    }

    pub fn final_cov(&self) -> Option<&DMatrix<f64>> {
        self.covs.as_ref().map(|c| c.last().expect("empty trajectory"))
    }

    /// CSV export: `t, alignment, norm, mu_dot_w, tr_cov, accuracy` plus the
    /// mean components when `include_means` is set. tr_cov is empty-valued
    /// when the covariance was not integrated.
    pub fn to_csv(&self, include_means: bool) -> String {
        let mut out = String::from("t,alignment,norm,mu_dot_w,tr_cov,accuracy");
        if include_means {
            let n = self.means.first().map_or(0, |m| m.len());
            for i in 0..n {
                out.push_str(&format!(",w{i}"));
            }
        }
        out.push('\n');
        for i in 0..self.len() {
            let tr = match &self.trace_cov {
                Some(tc) => format!("{:.17e}", tc[i]),
                None => String::new(),
            };
            out.push_str(&format!(
                "{:.17e},{:.17e},{:.17e},{:.17e},{},{:.17e}",
                self.times[i], self.alignment[i], self.norm[i], self.mu_dot_w[i], tr, self.accuracy[i]
            ));
            if include_means {
                for v in self.means[i].iter() {
                    out.push_str(&format!(",{v:.17e}"));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Cosine of the angle between `v` and `reference`; 0 when either is zero.
pub fn alignment_with(reference: &DVector<f64>, v: &DVector<f64>) -> f64 {
    let nr = reference.norm();
    let nv = v.norm();
    if nr == 0.0 || nv == 0.0 {
        0.0
    } else {
        reference.dot(v) / (nr * nv)
    }
}

/// Drift Jacobian J_jk = ∂f_j/∂w_k by central finite differences.
pub fn drift_jacobian_fd(
    task: &TaskSpec,
    rule: &RuleConfig,
    w: &DVector<f64>,
    h: f64,
) -> DMatrix<f64> {
    let n = w.len();
    let mut jac = DMatrix::zeros(n, n);
    let mut wp = w.clone();
    for k in 0..n {
        wp[k] = w[k] + h;
        let fp = drift(task, &wp, rule);
        wp[k] = w[k] - h;
        let fm = drift(task, &wp, rule);
        wp[k] = w[k];
        let col = (fp - fm) / (2.0 * h);
        jac.column_mut(k).copy_from(&col);
    }
    jac
}

/// Second-order mean correction ½ Σ_jk Cov_jk ∂_j∂_k f, with the Hessian
/// contracted by central finite differences.
fn hessian_correction_fd(
    task: &TaskSpec,
    rule: &RuleConfig,
    w: &DVector<f64>,
    cov: &DMatrix<f64>,
    h: f64,
) -> DVector<f64> {
    let n = w.len();
    let mut corr = DVector::zeros(n);
    let mut wp = w.clone();
    for j in 0..n {
        for k in j..n {
            let weight = if j == k { cov[(j, k)] } else { 2.0 * cov[(j, k)] };
            if weight == 0.0 {
                continue;
            }
            let hjk = if j == k {
                // ∂²f/∂w_j² = (f(w+h) − 2f(w) + f(w−h))/h².
                wp[j] = w[j] + h;
                let fp = drift(task, &wp, rule);
                wp[j] = w[j] - h;
                let fm = drift(task, &wp, rule);
                wp[j] = w[j];
                let f0 = drift(task, w, rule);
                (fp + fm - f0 * 2.0) / (h * h)
            } else {
                wp[j] = w[j] + h;
                wp[k] = w[k] + h;
                let fpp = drift(task, &wp, rule);
                wp[k] = w[k] - h;
                let fpm = drift(task, &wp, rule);
                wp[j] = w[j] - h;
                let fmm = drift(task, &wp, rule);
                wp[k] = w[k] + h;
                let fmp = drift(task, &wp, rule);
                wp[j] = w[j];
                wp[k] = w[k];
                (fpp - fpm - fmp + fmm) / (4.0 * h * h)
            };
            corr.axpy(0.5 * weight, &hjk, 1.0);
        }
    }
    corr
}

/// Integrates the mean-only flow d⟨w⟩/dt = f(⟨w⟩) from a point mass at `w0`.
/// For point initializations the covariance equation keeps Cov ≡ 0, so the
/// second-order correction is identically zero and only the mean is tracked.
pub fn integrate_mean_flow(
    task: &TaskSpec,
    rule: &RuleConfig,
    w0: &DVector<f64>,
    cfg: &FlowConfig,
) -> Result<Trajectory, FlowError> {
    cfg.validate()?;
    check_dim(task, w0.len())?;
    assert!(w0.iter().all(|v| v.is_finite()), "non-finite initial weights");
    let mut rec = Recorder::new(task, false);
    let mut w = w0.clone();
    let mut t = 0.0;
    rec.push(t, &w, None);
    let steps = step_count(cfg);
    let mut diverged = false;
    for step in 1..=steps {
        let rhs = |wv: &DVector<f64>| drift(task, wv, rule);
        let k1 = rhs(&w);
        let k2 = rhs(&(&w + &k1 * (0.5 * cfg.dt)));
        let k3 = rhs(&(&w + &k2 * (0.5 * cfg.dt)));
        let k4 = rhs(&(&w + &k3 * cfg.dt));
        w += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (cfg.dt / 6.0);
        t = step as f64 * cfg.dt;
        if w.norm() > DIVERGENCE_NORM {
            diverged = true;
            rec.push(t, &w, None);
            break;
        }
        if step % cfg.record_every == 0 || step == steps {
            rec.push(t, &w, None);
        }
    }
    Ok(rec.finish(diverged, 0.0))
}

/// Jointly integrates mean and covariance from `state0`. The covariance is
/// re-symmetrized after every step; the Jacobian is refreshed at each of the
/// four Runge–Kutta stages.
pub fn integrate_cov_flow(
    task: &TaskSpec,
    rule: &RuleConfig,
    state0: &WeightState,
    cfg: &FlowConfig,
) -> Result<Trajectory, FlowError> {
    cfg.validate()?;
    check_dim(task, state0.mean.len())?;
    let mut rec = Recorder::new(task, true);
    let mut w = state0.mean.clone();
    let mut cov = state0.cov.clone();
    let mut t = state0.t;
    let t0 = t;
    rec.push(t, &w, Some(&cov));
    let steps = step_count(cfg);
    let mut diverged = false;
    let mut max_corr: f64 = 0.0;
    let h = cfg.jacobian_step;
    for step in 1..=steps {
        let rhs = |wv: &DVector<f64>, cv: &DMatrix<f64>| -> (DVector<f64>, DMatrix<f64>) {
            let mut dw = drift(task, wv, rule);
            if cfg.hessian_correction {
                let corr = hessian_correction_fd(task, rule, wv, cv, h);
                dw += &corr;
            }
            let jac = drift_jacobian_fd(task, rule, wv, h);
            let jc = &jac * cv;
            let dcov = &jc + jc.transpose();
            (dw, dcov)
        };
        let (kw1, kc1) = rhs(&w, &cov);
        let (kw2, kc2) = rhs(&(&w + &kw1 * (0.5 * cfg.dt)), &(&cov + &kc1 * (0.5 * cfg.dt)));
        let (kw3, kc3) = rhs(&(&w + &kw2 * (0.5 * cfg.dt)), &(&cov + &kc2 * (0.5 * cfg.dt)));
        let (kw4, kc4) = rhs(&(&w + &kw3 * cfg.dt), &(&cov + &kc3 * cfg.dt));
        if cfg.hessian_correction {
            // Report the correction magnitude at the step's base point.
            let corr = hessian_correction_fd(task, rule, &w, &cov, h);
            max_corr = max_corr.max(corr.norm());
        }
        w += (kw1 + kw2 * 2.0 + kw3 * 2.0 + kw4) * (cfg.dt / 6.0);
        cov += (kc1 + kc2 * 2.0 + kc3 * 2.0 + kc4) * (cfg.dt / 6.0);
        cov = (&cov + cov.transpose()) * 0.5;
        t = t0 + step as f64 * cfg.dt;
        if w.norm() > DIVERGENCE_NORM {
            diverged = true;
            rec.push(t, &w, Some(&cov));
            break;
        }
        if step % cfg.record_every == 0 || step == steps {
            rec.push(t, &w, Some(&cov));
        }
    }
    Ok(rec.finish(diverged, max_corr))
}

/// Right-hand side of the noiseless (σ = 0) supervised trace-covariance ODE:
///
///   d/dt tr Cov = −½ e^{−π(μ·w)²/16} · μᵀCov μ − 2λ tr Cov.
///
/// The drift Jacobian at σ = 0 is J = −φ′(μ·w)·μμᵀ − λI, and tr(JC + CJᵀ)
/// = −2φ′(μ·w)·μᵀCμ − 2λ trC with φ′(z) = ¼e^{−πz²/16}, fixing the leading
/// coefficient at ½.
pub fn trcov_closed_form_rate(
    mu: &DVector<f64>,
    w: &DVector<f64>,
    cov: &DMatrix<f64>,
    lambda: f64,
) -> f64 {
    let a = mu.dot(w);
    let quad = (mu.transpose() * cov * mu)[(0, 0)];
    -0.5 * (-PI * a * a / 16.0).exp() * quad - 2.0 * lambda * cov.trace()
}

/// A located fixed point of the mean flow for a symmetric task: the mean
/// settles on the line through μ, so the state is characterized by its norm.
#[derive(Debug, Clone)]
pub struct FixedPoint {
    /// |⟨w*⟩|.
    pub norm: f64,
    /// μ/|μ|.
    pub direction: DVector<f64>,
    /// Residual of the 1-D reduced equation at the returned root.
    pub residual: f64,
}

/// Drift component along μ̂ at w = c·μ̂ — the 1-D residual whose root is the
/// fixed-point radius. Exposed for the uniqueness scan and diagnostics.
pub fn fixed_point_residual(
    params: &IsotropicTaskParams,
    rule: &RuleConfig,
    c: f64,
) -> f64 {
    let task = params.to_task_spec();
    let mu_hat = params.mu.normalize();
    let w = &mu_hat * c;
    mu_hat.dot(&drift(&task, &w, rule))
}

/// Locates |⟨w*⟩| for the symmetric task by bisection on the reduced
/// residual along μ. Requires λ > 0 or σ > 0; otherwise the flow has no
/// finite fixed point and `NoFixedPoint` is returned.
pub fn find_fixed_point(
    params: &IsotropicTaskParams,
    rule: &RuleConfig,
) -> Result<FixedPoint, FlowError> {
    if rule.lambda <= 0.0 && params.sigma == 0.0 {
        return Err(FlowError::NoFixedPoint);
    }
    const C_LO: f64 = 1e-8;
    const C_HI: f64 = 1e3;
    let res = |c: f64| fixed_point_residual(params, rule, c);
    // Log-spaced scan to bracket the sign change (the reduced residual is
    // positive at 0⁺, where the drift pushes outward along μ).
    let scan = 400;
    let mut lo = C_LO;
    let mut r_lo = res(lo);
    if r_lo < 0.0 {
        return Err(FlowError::BracketNotFound);
    }
    let mut hi = None;
    for i in 1..=scan {
        let c = C_LO * (C_HI / C_LO).powf(i as f64 / scan as f64);
        let r = res(c);
        if r < 0.0 {
            hi = Some((c, r));
            break;
        }
        lo = c;
        r_lo = r;
    }
    let (mut hi, mut r_hi) = hi.ok_or(FlowError::BracketNotFound)?;
    // Bisection; the residual is smooth, so this is robust and plenty fast.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let r_mid = res(mid);
        if r_mid >= 0.0 {
            lo = mid;
            r_lo = r_mid;
        } else {
            hi = mid;
            r_hi = r_mid;
        }
        if hi - lo < 1e-15 * hi.max(1.0) {
            break;
        }
    }
    let (root, residual) = if r_lo.abs() <= r_hi.abs() { (lo, r_lo) } else { (hi, r_hi) };
    Ok(FixedPoint { norm: root, direction: params.mu.normalize(), residual })
}

fn check_dim(task: &TaskSpec, n: usize) -> Result<(), FlowError> {
    if task.dim() != n {
        return Err(FlowError::DimensionMismatch { expected: task.dim(), got: n });
    }
    Ok(())
}

fn step_count(cfg: &FlowConfig) -> usize {
    // Round to the nearest step so t_max = k·dt hits exactly k steps despite
    // floating-point division noise.
    ((cfg.t_max / cfg.dt).round() as usize).max(1)
}

/// Accumulates recorded rows and the per-row scalar diagnostics.
struct Recorder<'a> {
    task: &'a TaskSpec,
    times: Vec<f64>,
    means: Vec<DVector<f64>>,
    covs: Option<Vec<DMatrix<f64>>>,
    alignment: Vec<f64>,
    norm: Vec<f64>,
    mu_dot_w: Vec<f64>,
    trace_cov: Option<Vec<f64>>,
    accuracy: Vec<f64>,
}

impl<'a> Recorder<'a> {
    fn new(task: &'a TaskSpec, with_cov: bool) -> Self {
        Recorder {
            task,
            times: Vec::new(),
            means: Vec::new(),
            covs: with_cov.then(Vec::new),
            alignment: Vec::new(),
            norm: Vec::new(),
            mu_dot_w: Vec::new(),
            trace_cov: with_cov.then(Vec::new),
            accuracy: Vec::new(),
        }
    }

    fn push(&mut self, t: f64, w: &DVector<f64>, cov: Option<&DMatrix<f64>>) {
        self.times.push(t);
        self.alignment.push(alignment_with(self.task.mu_pos(), w));
        self.norm.push(w.norm());
        self.mu_dot_w.push(self.task.mu_pos().dot(w));
        self.accuracy.push(self.task.model_accuracy(w).unwrap_or(f64::NAN));
        self.means.push(w.clone());
        if let (Some(covs), Some(c)) = (self.covs.as_mut(), cov) {
            covs.push(c.clone());
            self.trace_cov.as_mut().unwrap().push(c.trace());
        }
    }

    fn finish(self, diverged: bool, max_hessian_correction: f64) -> Trajectory {
        Trajectory {
            times: self.times,
            means: self.means,
            covs: self.covs,
            alignment: self.alignment,
            norm: self.norm,
            mu_dot_w: self.mu_dot_w,
            trace_cov: self.trace_cov,
            accuracy: self.accuracy,
            diverged,
            max_hessian_correction,
        }
    }
}

/// Convenience: Φ at the aligned fixed point is the model accuracy there;
/// used by the command-line layer when reporting fixed-point summaries. The
/// radius cancels for aligned weights, leaving Φ(|μ|/√(σ²(1+ε))).
pub fn fixed_point_accuracy(params: &IsotropicTaskParams) -> f64 {
    if params.sigma == 0.0 {
        return 1.0;
    }
    let var_par = params.sigma * params.sigma * (1.0 + params.epsilon);
    normal_cdf(params.mu.norm() / var_par.sqrt())
}
