//! Shared oracle machinery for the integration suites: Monte Carlo drift
//! estimators built directly from the discrete update rules, independent
//! quadrature references, and random problem generators. Everything here is
//! deliberately written from the definitions — not by calling the library's
//! closed forms — so agreement between the two routes is evidence.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use perceptron_flow::drift::Activation;
use perceptron_flow::task::TaskSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Monte Carlo estimate of a vector-valued expectation with per-component
/// standard errors.
pub struct McEstimate {
    pub mean: DVector<f64>,
    pub se: DVector<f64>,
    pub samples: usize,
}

impl McEstimate {
    /// Largest |deviation|/SE across components against a reference vector.
    pub fn max_sigma_deviation(&self, reference: &DVector<f64>) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.mean.len() {
            let se = self.se[i].max(1e-300);
            worst = worst.max((self.mean[i] - reference[i]).abs() / se);
        }
        worst
    }
}

/// Which update rule the Monte Carlo estimator should follow.
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum McRule {
    Supervised,
    Reinforce,
}

/// Estimates the expected one-step update direction at fixed weights by
/// averaging the literal update rules over fresh draws:
///
/// * supervised: (ỹ − ŷ)x − λw with ỹ = (y+1)/2, ŷ = act(w·x);
/// * reinforcement: ŷ·(yŷ)·act(−ŷ·w·x)·x − λw with the action ŷ = ±1 drawn
///   from p(ŷ=+1) = act(w·x). The baseline is omitted: for any constant b
///   the term b·ŷ·act(−ŷ·w·x)·x has zero conditional mean over ŷ, so the
///   expectation is unchanged.
///
/// Work is split into chunks with per-chunk RNG streams so the estimate is
/// deterministic for a given seed regardless of thread scheduling.
pub fn mc_drift(
    task: &TaskSpec,
    rule: McRule,
    lambda: f64,
    activation: Activation,
    w: &DVector<f64>,
    samples: usize,
    seed: u64,
) -> McEstimate {
    let n = w.len();
    let chunks: usize = 256;
    let per_chunk = samples.div_ceil(chunks);
    let total = per_chunk * chunks;

    let partials: Vec<(DVector<f64>, DVector<f64>)> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk as u64);
            let mut sum = DVector::zeros(n);
            let mut sum_sq = DVector::zeros(n);
            let mut x = DVector::zeros(n);
            for _ in 0..per_chunk {
                let y = task.sample_into(&mut rng, &mut x);
                let z = w.dot(&x);
                let scale = match rule {
                    McRule::Supervised => {
                        let y_target = if y > 0 { 1.0 } else { 0.0 };
                        y_target - activation.eval(z)
                    }
                    McRule::Reinforce => {
                        let p_plus = activation.eval(z).clamp(0.0, 1.0);
                        let y_hat: f64 = if rng.gen_bool(p_plus) { 1.0 } else { -1.0 };
                        let reward = f64::from(y) * y_hat;
                        y_hat * reward * activation.eval(-y_hat * z)
                    }
                };
                for i in 0..n {
                    let g = scale * x[i] - lambda * w[i];
                    sum[i] += g;
                    sum_sq[i] += g * g;
                }
            }
            (sum, sum_sq)
        })
        .collect();

    let mut sum = DVector::zeros(n);
    let mut sum_sq = DVector::zeros(n);
    for (s, q) in partials {
        sum += s;
        sum_sq += q;
    }
    let nf = total as f64;
    let mean = &sum / nf;
    let se = DVector::from_fn(n, |i, _| {
        let var = ((sum_sq[i] - nf * mean[i] * mean[i]) / (nf - 1.0)).max(0.0);
        (var / nf).sqrt()
    });
    McEstimate { mean, se, samples: total }
}

/// Random dense task: means with uniform components, strictly positive
/// definite covariances built as scaled Gram matrices plus a ridge.
pub fn random_dense_task(rng: &mut impl Rng, n: usize) -> TaskSpec {
    let mu_pos = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let mu_neg = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let mut covs = Vec::new();
    for _ in 0..2 {
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0f64));
        let scale = rng.gen_range(0.1..1.0);
        let cov = (&a * a.transpose()) * (scale / n as f64)
            + DMatrix::identity(n, n) * (0.05 * scale);
        covs.push(cov);
    }
    let sigma_neg = covs.pop().unwrap();
    let sigma_pos = covs.pop().unwrap();
    TaskSpec::from_dense(mu_pos, mu_neg, sigma_pos, sigma_neg).unwrap()
}

pub fn random_weights(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0))
}

// ---------------------------------------------------------------------------
// Adaptive Simpson quadrature (independent of the library's integrator)
// ---------------------------------------------------------------------------

fn simpson_recurse(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson_recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + simpson_recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

/// Adaptive Simpson integral of `f` over [a, b] to absolute tolerance `tol`.
pub fn adaptive_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_recurse(&f, a, b, fa, fm, fb, whole, tol, 40)
}

/// Direct quadrature of the defining integral
///   T(h, a) = (1/2π)·∫₀^a exp(−h²(1+x²)/2)/(1+x²) dx.
pub fn owens_t_reference(h: f64, a: f64) -> f64 {
    let integrand = |x: f64| (-0.5 * h * h * (1.0 + x * x)).exp() / (1.0 + x * x);
    adaptive_simpson(integrand, 0.0, a, 1e-13) / std::f64::consts::TAU
}

// ---------------------------------------------------------------------------
// Expected cross-entropy loss by tensor quadrature (2-D tasks)
// ---------------------------------------------------------------------------

/// The binary cross-entropy objective in its canonical integral form:
/// ℓ(z, ỹ) = A(z) − ỹ·z with A′ = φ, so that dℓ/dz = φ(z) − ỹ exactly. For
/// the logistic link A(z) = ln(1+eᶻ) and this is literally
/// −ỹ·ln ŷ − (1−ỹ)·ln(1−ŷ); for the erf sigmoid the same pairing gives
///   A(z) = z·φ(z) + (2/π)·(e^{−πz²/16} − 1),
/// which is the objective whose SGD produces the (ỹ−ŷ)x update rule.
fn ce_pointwise_loss(z: f64, y_target: f64) -> f64 {
    let a = z * perceptron_flow::specfun::erf_sigmoid(z)
        + 2.0 / std::f64::consts::PI
            * ((-std::f64::consts::PI * z * z / 16.0).exp() - 1.0);
    a - y_target * z
}

/// Expected cross-entropy loss with L2 penalty for a 2-D task, evaluated by
/// dense tensor-product Simpson quadrature in whitened coordinates:
///   L(w) = Σ_y ½·E_x[ℓ(w·x, ỹ)] + (λ/2)|w|².
pub fn expected_ce_loss(task: &TaskSpec, lambda: f64, w: &DVector<f64>) -> f64 {
    assert_eq!(task.dim(), 2, "quadrature reference is written for 2-D tasks");
    let half_width = 8.5;
    let intervals = 800usize;
    let h = 2.0 * half_width / intervals as f64;

    // 1-D Simpson weights and standard-normal density folded together.
    let nodes: Vec<f64> = (0..=intervals).map(|i| -half_width + i as f64 * h).collect();
    let weights: Vec<f64> = (0..=intervals)
        .map(|i| {
            let simpson = if i == 0 || i == intervals {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let u = nodes[i];
            simpson * h / 3.0 * (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt()
        })
        .collect();

    let mut total = 0.5 * lambda * w.dot(w);
    for label in [1i8, -1] {
        let mu = task.mean_for(label);
        let chol = task
            .cov_for(label)
            .to_matrix()
            .cholesky()
            .expect("reference quadrature needs positive-definite covariances");
        let l = chol.l();
        // w·x with x = μ + L·u: constant part plus u-coefficients.
        let z0 = w.dot(mu);
        let c = l.transpose() * w;
        let y_target = if label > 0 { 1.0 } else { 0.0 };
        let mut class_loss = 0.0;
        for (i, &u1) in nodes.iter().enumerate() {
            let mut inner = 0.0;
            for (j, &u2) in nodes.iter().enumerate() {
                let z = z0 + c[0] * u1 + c[1] * u2;
                inner += weights[j] * ce_pointwise_loss(z, y_target);
            }
            class_loss += weights[i] * inner;
        }
        total += 0.5 * class_loss;
    }
    total
}

/// Central finite-difference gradient of the quadrature loss.
pub fn expected_ce_loss_gradient(task: &TaskSpec, lambda: f64, w: &DVector<f64>) -> DVector<f64> {
    let step = 1e-4;
    DVector::from_fn(w.len(), |i, _| {
        let mut hi = w.clone();
        let mut lo = w.clone();
        hi[i] += step;
        lo[i] -= step;
        (expected_ce_loss(task, lambda, &hi) - expected_ce_loss(task, lambda, &lo)) / (2.0 * step)
    })
}
