//! Monte Carlo simulation of the literal stochastic update rules, used to
//! validate the closed-form drift and the deterministic flow equations.
//!
//! Supervised rule (cross-entropy SGD on one pattern):
//!
//! ```text
//! w ← w + η·((ỹ − ŷ)·x − λw),   ỹ = ½(y+1) ∈ {0,1},  ŷ = act(w·x)
//! ```
//!
//! Reinforcement rule (REINFORCE with a scalar reward baseline):
//!
//! ```text
//! ŷ ~ ±1 with P(ŷ=+1) = act(w·x),   r = y·ŷ,   δ = r − b,
//! w ← w + η·(ŷ·δ·act(−ŷ·w·x)·x − λw)
//! ```
//!
//! where `b` estimates ⟨yŷ⟩ — either an exponential moving average of
//! observed rewards, the exact Gaussian-model value, or zero. The baseline
//! affects only the variance of the update, never its mean, which the test
//! suite verifies.
//!
//! Runs within an ensemble are independent; each gets its own counter-mode
//! RNG stream derived from `(seed, run_index)`, so results are bit-identical
//! regardless of thread scheduling and individual runs can be reproduced in
//! isolation.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drift::{gauss_phi_mean, Activation, Rule};
use crate::flow::{alignment_with, DIVERGENCE_NORM};
use crate::task::TaskSpec;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation configuration: {0}")]
    InvalidConfig(String),
    #[error("ensemble covariance requires at least 2 runs, got {0}")]
    CovarianceNeedsRuns(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Reward-baseline estimator for the reinforcement rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMode {
    /// Exponential moving average of observed rewards (online estimator).
    Ema,
    /// Exact ⟨yŷ⟩ under the Gaussian input model at the current weights.
    Analytic,
    /// No baseline (b = 0).
    None,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub mode: BaselineMode,
    /// EMA decay in (0,1); only read in EMA mode.
    pub ema_decay: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { mode: BaselineMode::Ema, ema_decay: 0.99 }
    }
}

impl BaselineConfig {
    pub fn analytic() -> Self {
        BaselineConfig { mode: BaselineMode::Analytic, ema_decay: 0.99 }
    }

    pub fn none() -> Self {
        BaselineConfig { mode: BaselineMode::None, ema_decay: 0.99 }
    }

    fn validate(&self) -> Result<(), SimError> {
        if self.mode == BaselineMode::Ema && !(0.0 < self.ema_decay && self.ema_decay < 1.0) {
            return Err(SimError::InvalidConfig(format!(
                "EMA decay {} outside (0,1)",
                self.ema_decay
            )));
        }
        Ok(())
    }
}

/// Ensemble simulation configuration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SimConfig {
    /// Learning rate η > 0.
    pub eta: f64,
    /// Update steps per run.
    pub steps: usize,
    /// Ensemble size.
    pub runs: usize,
    /// Master seed; run i uses stream i of this seed.
    pub seed: u64,
    /// Output nonlinearity. Logistic is the default for empirical runs; the
    /// erf sigmoid matches the closed-form theory exactly.
    pub activation: Activation,
    pub baseline: BaselineConfig,
    /// Record every k-th step (step 0 and the final step always recorded).
    pub record_every: usize,
}

impl SimConfig {
    pub fn new(eta: f64, steps: usize, runs: usize, seed: u64) -> Self {
        SimConfig {
            eta,
            steps,
            runs,
            seed,
            activation: Activation::Logistic,
            baseline: BaselineConfig::default(),
            record_every: 1,
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_baseline(mut self, baseline: BaselineConfig) -> Self {
        self.baseline = baseline;
        self
    }

    pub fn with_record_every(mut self, k: usize) -> Self {
        self.record_every = k;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.eta > 0.0) {
            return Err(SimError::InvalidConfig(format!("eta must be positive, got {}", self.eta)));
        }
        if self.steps == 0 || self.runs == 0 || self.record_every == 0 {
            return Err(SimError::InvalidConfig(
                "steps, runs and record_every must be positive".into(),
            ));
        }
        self.baseline.validate()
    }
}

/// Per-run recorded weight vectors, the raw material for ensemble statistics.
#[derive(Debug, Clone)]
pub struct RawRuns {
    /// Recorded step indices (shared by all runs).
    pub steps: Vec<usize>,
    /// Continuous times t = η·step.
    pub times: Vec<f64>,
    /// `weights[run][record]`.
    pub weights: Vec<Vec<DVector<f64>>>,
    /// Per-run overflow flag; a frozen run keeps its last valid weights.
    pub diverged: Vec<bool>,
}

/// Ensemble summary at each recorded step. Scalar observables are computed
/// per run and then averaged (the bands are across-run standard deviations);
/// `alignment_of_mean` tracks the direction of the ensemble-mean weight
/// vector itself. `accuracy_*` is NaN where the accuracy is undefined.
#[derive(Debug, Clone)]
pub struct EnsembleTrajectory {
    pub steps: Vec<usize>,
    pub times: Vec<f64>,
    pub mean: Vec<DVector<f64>>,
    /// Unbiased per-coordinate variance across runs (for standard errors).
    pub coord_variance: Vec<DVector<f64>>,
    /// Full sample covariance per record, when requested.
    pub cov: Option<Vec<DMatrix<f64>>>,
    pub alignment_mean: Vec<f64>,
    pub alignment_std: Vec<f64>,
    pub norm_mean: Vec<f64>,
    pub norm_std: Vec<f64>,
    pub accuracy_mean: Vec<f64>,
    pub accuracy_std: Vec<f64>,
    pub alignment_of_mean: Vec<f64>,
    pub runs: usize,
    /// True if any run hit the overflow guard.
    pub diverged: bool,
}

impl EnsembleTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Standard error of the ensemble-mean weight, per coordinate.
    pub fn mean_standard_error(&self, record: usize) -> DVector<f64> {
        self.coord_variance[record].map(|v| (v / self.runs as f64).sqrt())
    }

    /// CSV export: per-record times with the averaged observables and their
    /// across-run standard-deviation bands.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "t,step,alignment_mean,alignment_std,norm_mean,norm_std,accuracy_mean,accuracy_std,alignment_of_mean\n",
        );
        for i in 0..self.len() {
            out.push_str(&format!(
                "{:.17e},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
                self.times[i],
                self.steps[i],
                self.alignment_mean[i],
                self.alignment_std[i],
                self.norm_mean[i],
                self.norm_std[i],
                self.accuracy_mean[i],
                self.accuracy_std[i],
                self.alignment_of_mean[i],
            ));
        }
        out
    }
}

/// One supervised update in place: w ← w + η((ỹ − ŷ)x − λw).
#[inline]
pub fn sl_step(
    w: &mut DVector<f64>,
    x: &DVector<f64>,
    y: i8,
    eta: f64,
    lambda: f64,
    activation: Activation,
) {
    let y_target = if y > 0 { 1.0 } else { 0.0 };
    let y_hat = activation.eval(w.dot(x));
    w.axpy(eta * (y_target - y_hat), x, 1.0 - eta * lambda);
}

/// One reinforcement update in place; samples the action from the current
/// policy, applies w ← w + η(ŷδ·act(−ŷw·x)x − λw) with δ = yŷ − baseline,
/// and returns the observed reward yŷ for baseline bookkeeping.
#[inline]
pub fn rl_step(
    w: &mut DVector<f64>,
    x: &DVector<f64>,
    y: i8,
    eta: f64,
    lambda: f64,
    activation: Activation,
    baseline: f64,
    rng: &mut impl Rng,
) -> f64 {
    let z = w.dot(x);
    let p_plus = activation.eval(z);
    let y_hat: f64 = if rng.gen_bool(p_plus.clamp(0.0, 1.0)) { 1.0 } else { -1.0 };
    let reward = f64::from(y) * y_hat;
    let delta = reward - baseline;
    let gate = activation.eval(-y_hat * z);
    w.axpy(eta * y_hat * delta * gate, x, 1.0 - eta * lambda);
    reward
}

/// Exact ⟨yŷ⟩ under the Gaussian input model with the erf-sigmoid policy:
/// Φ(ā₊) − Φ(ā₋). (Used by the Analytic baseline mode; with a logistic
/// policy it is the model value of the matched erf-sigmoid policy.)
pub fn analytic_reward_mean(task: &TaskSpec, w: &DVector<f64>) -> f64 {
    gauss_phi_mean(task.mu_pos(), task.cov_pos(), w)
        - gauss_phi_mean(task.mu_neg(), task.cov_neg(), w)
}

/// Simulates an ensemble and returns the raw per-run weight records.
/// Runs execute in parallel; record `r` of run `i` is identical to a
/// single-threaded execution because each run owns RNG stream `i`.
pub fn simulate_runs(
    task: &TaskSpec,
    rule: Rule,
    lambda: f64,
    w0: &DVector<f64>,
    cfg: &SimConfig,
) -> Result<RawRuns, SimError> {
    cfg.validate()?;
    if task.dim() != w0.len() {
        return Err(SimError::DimensionMismatch { expected: task.dim(), got: w0.len() });
    }
    assert!(lambda >= 0.0, "negative regularization");
    let record_steps = record_schedule(cfg.steps, cfg.record_every);
    let per_run: Vec<(Vec<DVector<f64>>, bool)> = (0..cfg.runs)
        .into_par_iter()
        .map(|run| simulate_one(task, rule, lambda, w0, cfg, run as u64, &record_steps))
        .collect();
    let times = record_steps.iter().map(|&s| s as f64 * cfg.eta).collect();
    let (weights, diverged) = per_run.into_iter().unzip();
    Ok(RawRuns { steps: record_steps, times, weights, diverged })
}

/// Supervised ensemble with aggregated statistics.
pub fn run_sl(
    task: &TaskSpec,
    lambda: f64,
    w0: &DVector<f64>,
    cfg: &SimConfig,
) -> Result<EnsembleTrajectory, SimError> {
    let raw = simulate_runs(task, Rule::Sl, lambda, w0, cfg)?;
    ensemble_stats(task, &raw, false)
}

/// Reinforcement ensemble with aggregated statistics.
pub fn run_rl(
    task: &TaskSpec,
    lambda: f64,
    w0: &DVector<f64>,
    cfg: &SimConfig,
) -> Result<EnsembleTrajectory, SimError> {
    let raw = simulate_runs(task, Rule::Rl, lambda, w0, cfg)?;
    ensemble_stats(task, &raw, false)
}

/// Aggregates raw runs into ensemble statistics. `with_cov` additionally
/// computes the full sample covariance at every record (quadratic in the
/// dimension — intended for small systems), and requires ≥ 2 runs.
pub fn ensemble_stats(
    task: &TaskSpec,
    raw: &RawRuns,
    with_cov: bool,
) -> Result<EnsembleTrajectory, SimError> {
    let runs = raw.weights.len();
    if runs == 0 {
        return Err(SimError::InvalidConfig("no runs to aggregate".into()));
    }
    if with_cov && runs < 2 {
        return Err(SimError::CovarianceNeedsRuns(runs));
    }
    let records = raw.steps.len();
    let n = raw.weights[0][0].len();
    let rf = runs as f64;
    let mu = task.mu_pos();

    let mut out = EnsembleTrajectory {
        steps: raw.steps.clone(),
        times: raw.times.clone(),
        mean: Vec::with_capacity(records),
        coord_variance: Vec::with_capacity(records),
        cov: with_cov.then(|| Vec::with_capacity(records)),
        alignment_mean: Vec::with_capacity(records),
        alignment_std: Vec::with_capacity(records),
        norm_mean: Vec::with_capacity(records),
        norm_std: Vec::with_capacity(records),
        accuracy_mean: Vec::with_capacity(records),
        accuracy_std: Vec::with_capacity(records),
        alignment_of_mean: Vec::with_capacity(records),
        runs,
        diverged: raw.diverged.iter().any(|&d| d),
    };

    for r in 0..records {
        let mut mean = DVector::zeros(n);
        for run in &raw.weights {
            mean += &run[r];
        }
        mean /= rf;

        let mut var = DVector::zeros(n);
        if runs > 1 {
            for run in &raw.weights {
                var += (&run[r] - &mean).map(|d| d * d);
            }
            var /= rf - 1.0;
        }

        if let Some(covs) = out.cov.as_mut() {
            let mut cov = DMatrix::zeros(n, n);
            for run in &raw.weights {
                let d = &run[r] - &mean;
                cov.ger(1.0 / (rf - 1.0), &d, &d, 1.0);
            }
            covs.push(cov);
        }

        let (al_m, al_s) = mean_std(raw.weights.iter().map(|run| alignment_with(mu, &run[r])));
        let (no_m, no_s) = mean_std(raw.weights.iter().map(|run| run[r].norm()));
        let (ac_m, ac_s) = mean_std(
            raw.weights
                .iter()
                .map(|run| task.model_accuracy(&run[r]).unwrap_or(f64::NAN)),
        );
        out.alignment_of_mean.push(alignment_with(mu, &mean));
        out.mean.push(mean);
        out.coord_variance.push(var);
        out.alignment_mean.push(al_m);
        out.alignment_std.push(al_s);
        out.norm_mean.push(no_m);
        out.norm_std.push(no_s);
        out.accuracy_mean.push(ac_m);
        out.accuracy_std.push(ac_s);
    }
    Ok(out)
}

fn mean_std(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let vals: Vec<f64> = values.collect();
    let nf = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / nf;
    if vals.len() < 2 {
        return (mean, 0.0);
    }
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
    (mean, var.sqrt())
}

fn record_schedule(steps: usize, every: usize) -> Vec<usize> {
    let mut rec: Vec<usize> = (0..=steps).step_by(every).collect();
    if *rec.last().unwrap() != steps {
        rec.push(steps);
    }
    rec
}

fn simulate_one(
    task: &TaskSpec,
    rule: Rule,
    lambda: f64,
    w0: &DVector<f64>,
    cfg: &SimConfig,
    run_index: u64,
    record_steps: &[usize],
) -> (Vec<DVector<f64>>, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(run_index);
    let n = w0.len();
    let mut w = w0.clone();
    let mut x = DVector::zeros(n);
    let mut baseline = 0.0f64;
    let mut records = Vec::with_capacity(record_steps.len());
    let mut next_record = 0usize;
    let mut diverged = false;
    if record_steps[next_record] == 0 {
        records.push(w.clone());
        next_record += 1;
    }
    for step in 1..=cfg.steps {
        if !diverged {
            let y = task.sample_into(&mut rng, &mut x);
            match rule {
                Rule::Sl => sl_step(&mut w, &x, y, cfg.eta, lambda, cfg.activation),
                Rule::Rl => {
                    let b = match cfg.baseline.mode {
                        BaselineMode::Ema => baseline,
                        BaselineMode::Analytic => analytic_reward_mean(task, &w),
                        BaselineMode::None => 0.0,
                    };
                    let reward =
                        rl_step(&mut w, &x, y, cfg.eta, lambda, cfg.activation, b, &mut rng);
                    if cfg.baseline.mode == BaselineMode::Ema {
                        baseline = cfg.baseline.ema_decay * baseline
                            + (1.0 - cfg.baseline.ema_decay) * reward;
                    }
                }
            }
            if w.norm() > DIVERGENCE_NORM {
                diverged = true;
            }
        }
        if next_record < record_steps.len() && record_steps[next_record] == step {
            records.push(w.clone());
            next_record += 1;
        }
    }
    (records, diverged)
}
