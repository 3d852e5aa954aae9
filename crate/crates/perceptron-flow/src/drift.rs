//! Closed-form expected weight updates ("drift fields") for both learning
//! rules, assembled from Gaussian integrals of the erf sigmoid.
//!
//! With φ(z) = ½(1 + Erf(√π z/4)) and x ~ N(μ, Σ), the integrals reduce to
//! elementary functions of three projections of the rescaled weights
//! w̃ = w·√(π/8):
//!
//! ```text
//! a = μ·w̃,   b² = w̃ᵀΣw̃,   ā = a/√(1+b²),
//! g = e^{−a²/(2(1+b²))} / √(2π(1+b²)),   k = 1/√(1+2b²).
//!
//! ⟨φ⟩      = Φ(ā)
//! ⟨φ·x⟩    = μ·Φ(ā) + (Σw̃)·g
//! ⟨φ²⟩     = Φ(ā) − 2T(ā, k)
//! ⟨φ²·x⟩   = μ·⟨φ²⟩ + 2(Σw̃)·g·Φ(ā·k)
//! ```
//!
//! where Φ is the standard normal CDF and T is Owen's T function.
//!
//! The supervised drift is the expected cross-entropy SGD update
//! ⟨(ỹ − φ(w·x))x⟩ − λw taken over both classes with priors ½/½; the
//! reinforcement drift is the expected REINFORCE update
//! ⟨ŷδφ(−ŷw·x)x⟩ − λw, which collapses to the difference of
//! ⟨φ(w·x)φ(−w·x)x⟩ between the classes and is expressible with Owen's T.
//! Both closed forms are cross-checked in the test suite against brute-force
//! Monte Carlo estimates of the literal update rules and against each other
//! (the RL drift has two algebraically equivalent assemblies).

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::specfun::{erf_sigmoid, normal_cdf, owens_t};
use crate::task::{Covariance, TaskSpec};

use std::f64::consts::PI;

/// Rescaling constant √(π/8) relating w̃ to w.
#[inline]
pub fn w_tilde_scale() -> f64 {
    (PI / 8.0).sqrt()
}

/// Which learning rule the drift (or simulator) follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    Sl,
    Rl,
}

/// Output nonlinearity. The drift formulas are derived for the erf sigmoid;
/// the logistic option exists for the simulator, which mirrors the common
/// practice of training with a standard logistic output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    ErfSigmoid,
    Logistic,
}

impl Activation {
    #[inline]
    pub fn eval(self, z: f64) -> f64 {
        match self {
            Activation::ErfSigmoid => erf_sigmoid(z),
            Activation::Logistic => 1.0 / (1.0 + (-z).exp()),
        }
    }
}

/// Learning-rule configuration shared by theory and simulation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RuleConfig {
    pub rule: Rule,
    /// Regularization strength λ ≥ 0.
    pub lambda: f64,
    /// Simulator activation; drift computations always use the erf sigmoid.
    pub activation: Activation,
}

impl RuleConfig {
    pub fn new(rule: Rule, lambda: f64) -> Self {
        assert!(lambda >= 0.0, "negative regularization");
        RuleConfig { rule, lambda, activation: Activation::ErfSigmoid }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }
}

/// The per-class projection quantities entering every Gaussian moment, plus
/// the derived factors shared between them.
#[derive(Debug, Clone)]
pub struct ProjectionStats {
    /// w̃ = w·√(π/8).
    pub w_tilde: DVector<f64>,
    /// a = μ·w̃.
    pub a: f64,
    /// b = √(w̃ᵀΣw̃) ≥ 0 (zero iff w̃ is in Σ's null space).
    pub b: f64,
    /// Σ·w̃.
    pub sigma_w: DVector<f64>,
    /// ā = a/√(1+b²).
    pub a_bar: f64,
    /// g = e^{−a²/(2(1+b²))}/√(2π(1+b²)).
    pub g: f64,
    /// k = 1/√(1+2b²), the second Owen's-T argument.
    pub k: f64,
}

impl ProjectionStats {
    pub fn new(mu: &DVector<f64>, cov: &Covariance, w: &DVector<f64>) -> Self {
        let w_tilde = w * w_tilde_scale();
        let a = mu.dot(&w_tilde);
        let sigma_w = cov.apply(&w_tilde);
        // w̃ᵀΣw̃ via the already-computed Σw̃ (clamped against rounding).
        let b2 = w_tilde.dot(&sigma_w).max(0.0);
        let one_plus_b2 = 1.0 + b2;
        let a_bar = a / one_plus_b2.sqrt();
        let g = (-0.5 * a_bar * a_bar).exp() / (2.0 * PI * one_plus_b2).sqrt();
        let k = 1.0 / (1.0 + 2.0 * b2).sqrt();
        ProjectionStats { w_tilde, a, b: b2.sqrt(), sigma_w, a_bar, g, k }
    }
}

/// ⟨φ(w·x)⟩ for x ~ N(μ, Σ).
pub fn gauss_phi_mean(mu: &DVector<f64>, cov: &Covariance, w: &DVector<f64>) -> f64 {
    let p = ProjectionStats::new(mu, cov, w);
    normal_cdf(p.a_bar)
}

/// ⟨φ(w·x)·x⟩ for x ~ N(μ, Σ).
pub fn gauss_phi_x_mean(mu: &DVector<f64>, cov: &Covariance, w: &DVector<f64>) -> DVector<f64> {
    let p = ProjectionStats::new(mu, cov, w);
    mu * normal_cdf(p.a_bar) + &p.sigma_w * p.g
}

/// ⟨φ²(w·x)⟩ for x ~ N(μ, Σ).
pub fn gauss_phi2_mean(mu: &DVector<f64>, cov: &Covariance, w: &DVector<f64>) -> f64 {
    let p = ProjectionStats::new(mu, cov, w);
    normal_cdf(p.a_bar) - 2.0 * owens_t(p.a_bar, p.k)
}

/// ⟨φ²(w·x)·x⟩ for x ~ N(μ, Σ).
pub fn gauss_phi2_x_mean(mu: &DVector<f64>, cov: &Covariance, w: &DVector<f64>) -> DVector<f64> {
    let p = ProjectionStats::new(mu, cov, w);
    let phi2 = normal_cdf(p.a_bar) - 2.0 * owens_t(p.a_bar, p.k);
    mu * phi2 + &p.sigma_w * (2.0 * p.g * normal_cdf(p.a_bar * p.k))
}

/// Expected supervised (cross-entropy SGD) update at fixed w:
///
///   ⟨f⟩ = ½μ⁺(1−Φ(ā₊)) − ½(Σ⁺w̃)g₊ − ½μ⁻Φ(ā₋) − ½(Σ⁻w̃)g₋ − λw.
pub fn sl_drift(task: &TaskSpec, w: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let p = ProjectionStats::new(task.mu_pos(), task.cov_pos(), w);
    let n = ProjectionStats::new(task.mu_neg(), task.cov_neg(), w);
    let mut f = task.mu_pos() * (0.5 * (1.0 - normal_cdf(p.a_bar)));
    f.axpy(-0.5 * p.g, &p.sigma_w, 1.0);
    f.axpy(-0.5 * normal_cdf(n.a_bar), task.mu_neg(), 1.0);
    f.axpy(-0.5 * n.g, &n.sigma_w, 1.0);
    f.axpy(-lambda, w, 1.0);
    f
}

/// Expected REINFORCE update at fixed w, in the Owen's-T closed form:
///
///   ⟨f⟩ = Σ_y (±1)·[ (Σʸw̃)gᵧ(1 − 2Φ(āᵧkᵧ)) + 2μʸT(āᵧ, kᵧ) ] − λw.
pub fn rl_drift(task: &TaskSpec, w: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let mut f = rl_class_term(task.mu_pos(), task.cov_pos(), w);
    f -= rl_class_term(task.mu_neg(), task.cov_neg(), w);
    f.axpy(-lambda, w, 1.0);
    f
}

/// ⟨φ(w·x)φ(−w·x)·x⟩ for one class, closed form.
fn rl_class_term(mu: &DVector<f64>, cov: &Covariance, w: &DVector<f64>) -> DVector<f64> {
    let p = ProjectionStats::new(mu, cov, w);
    let mut term = mu * (2.0 * owens_t(p.a_bar, p.k));
    term.axpy(p.g * (1.0 - 2.0 * normal_cdf(p.a_bar * p.k)), &p.sigma_w, 1.0);
    term
}

/// The same REINFORCE drift assembled the long way from the moment
/// integrals, ⟨φx⟩ − ⟨φ²x⟩ per class. Kept as an independent route for
/// cross-validation; `rl_drift` is the production form.
pub fn rl_drift_from_moments(task: &TaskSpec, w: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let pos = gauss_phi_x_mean(task.mu_pos(), task.cov_pos(), w)
        - gauss_phi2_x_mean(task.mu_pos(), task.cov_pos(), w);
    let neg = gauss_phi_x_mean(task.mu_neg(), task.cov_neg(), w)
        - gauss_phi2_x_mean(task.mu_neg(), task.cov_neg(), w);
    let mut f = pos - neg;
    f.axpy(-lambda, w, 1.0);
    f
}

/// Dispatch on the configured rule.
pub fn drift(task: &TaskSpec, w: &DVector<f64>, cfg: &RuleConfig) -> DVector<f64> {
    match cfg.rule {
        Rule::Sl => sl_drift(task, w, cfg.lambda),
        Rule::Rl => rl_drift(task, w, cfg.lambda),
    }
}

/// Reduced scalar rates for the symmetric isotropic task (μ± = ±μ,
/// Σ = σ²I, λ = 0): returns (d(μ·⟨w⟩)/dt, d|⟨w⟩|²/dt) evaluated literally
/// from independent scalar expressions rather than by projecting the vector
/// drift (the test suite checks the two agree).
pub fn isotropic_sl_rates(mu: &DVector<f64>, sigma: f64, w: &DVector<f64>) -> (f64, f64) {
    let w_tilde = w * w_tilde_scale();
    let awt = mu.dot(&w_tilde);
    let s2 = sigma * sigma;
    let root = (1.0 + s2 * w_tilde.norm_squared()).sqrt();
    let gauss = (-awt * awt / (2.0 * root * root)).exp();
    let one_minus_phi = 1.0 - normal_cdf(awt / root);
    let mu_rate = mu.norm_squared() * one_minus_phi
        - s2 * awt * gauss / ((2.0 * PI).sqrt() * root);
    let norm_rate =
        2.0 * w.dot(mu) * one_minus_phi - 0.5 * s2 * w.norm_squared() * gauss / root;
    (mu_rate, norm_rate)
}

/// Reduced scalar rates for REINFORCE on the same symmetric isotropic task
/// (λ = 0), using Owen's T and the error function literally.
pub fn isotropic_rl_rates(mu: &DVector<f64>, sigma: f64, w: &DVector<f64>) -> (f64, f64) {
    let w_tilde = w * w_tilde_scale();
    let awt = mu.dot(&w_tilde);
    let s2 = sigma * sigma;
    let b2 = s2 * w_tilde.norm_squared();
    let root = (1.0 + b2).sqrt();
    let k = 1.0 / (1.0 + 2.0 * b2).sqrt();
    let t = owens_t(awt / root, k);
    let gauss = (-awt * awt / (2.0 * root * root)).exp();
    let erf_term = crate::specfun::erf(awt / (root * (2.0 + 4.0 * b2).sqrt()));
    let mu_rate = 4.0 * mu.norm_squared() * t
        - 2.0 * s2 * awt * gauss * erf_term / ((2.0 * PI).sqrt() * root);
    let norm_rate = 8.0 * w.dot(mu) * t - s2 * w.norm_squared() * gauss * erf_term / root;
    (mu_rate, norm_rate)
}
