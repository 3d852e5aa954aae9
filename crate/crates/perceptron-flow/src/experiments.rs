//! Figure-level experiment drivers: learning speed vs input noise, noise
//! anisotropy, covariance decay, the fixed-point curve, and continual
//! learning (catastrophic forgetting).
//!
//! Every driver is deterministic given its configuration (including seeds)
//! and returns plain data structures with CSV export, so the command-line
//! layer stays a thin shell.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drift::{Activation, Rule, RuleConfig};
use crate::flow::{
    alignment_with, find_fixed_point, integrate_cov_flow, integrate_mean_flow, FlowConfig,
    FlowError, WeightState,
};
use crate::simulate::{rl_step, sl_step, BaselineConfig, BaselineMode, SimError};
use crate::task::{IsotropicTaskParams, TaskError, TaskSpec};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("alignment never reached {threshold} before t_max = {t_max}")]
    NotReached { threshold: f64, t_max: f64 },
    #[error("task {task_index} not learned to threshold within {steps} steps")]
    TaskNeverLearned { task_index: usize, steps: usize },
    #[error("invalid experiment configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Task(#[from] TaskError),
}

/// Result of a one-parameter sweep: a strictly increasing grid and one scalar
/// outcome per point (`None` where the outcome was not reached/defined).
#[derive(Debug, Clone)]
pub struct SweepResult {
    /// Name of the swept parameter (CSV column header).
    pub parameter: String,
    /// Name of the outcome (CSV column header).
    pub outcome_name: String,
    pub grid: Vec<f64>,
    pub outcomes: Vec<Option<f64>>,
    pub rule: Rule,
}

impl SweepResult {
    fn new(parameter: &str, outcome_name: &str, rule: Rule) -> Self {
        SweepResult {
            parameter: parameter.into(),
            outcome_name: outcome_name.into(),
            grid: Vec::new(),
            outcomes: Vec::new(),
            rule,
        }
    }

    fn push(&mut self, param: f64, outcome: Option<f64>) {
        if let Some(last) = self.grid.last() {
            assert!(param > *last, "sweep grid must be strictly increasing");
        }
        self.grid.push(param);
        self.outcomes.push(outcome);
    }

    /// Outcomes unwrapped; panics if any point was not reached.
    pub fn values(&self) -> Vec<f64> {
        self.outcomes
            .iter()
            .map(|o| o.expect("sweep point did not produce an outcome"))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{},{}\n", self.parameter, self.outcome_name);
        for (p, o) in self.grid.iter().zip(&self.outcomes) {
            match o {
                Some(v) => out.push_str(&format!("{p:.17e},{v:.17e}\n")),
                None => out.push_str(&format!("{p:.17e},\n")),
            }
        }
        out
    }
}

/// Ordinary least-squares line fit with the coefficient of determination.
/// With fewer residual degrees of freedom than data (2 points) or a constant
/// response, R² is defined as 1 when the residuals vanish.
#[derive(Debug, Clone, Copy)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn ols_line(xs: &[f64], ys: &[f64]) -> LineFit {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2, "need at least two points to fit a line");
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (slope * x + intercept);
            e * e
        })
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res.abs() < 1e-30 {
        1.0
    } else {
        0.0
    };
    LineFit { slope, intercept, r_squared }
}

/// Deterministic non-aligned starting point for flow experiments:
/// w0 = 0.5·v with v a unit vector at 60° to μ (the orthogonal component
/// points along the coordinate axis least aligned with μ). For μ = 0 every
/// direction is equivalent and the first axis is used.
pub fn default_initial_weights(mu: &DVector<f64>) -> DVector<f64> {
    let n = mu.len();
    assert!(n >= 2, "need at least two dimensions for a non-aligned start");
    if mu.norm() == 0.0 {
        let mut w0 = DVector::zeros(n);
        w0[0] = 0.5;
        return w0;
    }
    let mu_hat = mu.normalize();
    let j = (0..n)
        .min_by(|&a, &b| mu_hat[a].abs().partial_cmp(&mu_hat[b].abs()).unwrap())
        .unwrap();
    let mut perp = DVector::zeros(n);
    perp[j] = 1.0;
    perp.axpy(-mu_hat[j], &mu_hat, 1.0);
    perp.normalize_mut();
    let angle = 60f64.to_radians();
    (mu_hat * angle.cos() + perp * angle.sin()) * 0.5
}

/// First time the flow's alignment with μ reaches `threshold`, linearly
/// interpolated between recorded points. Starts from
/// [`default_initial_weights`].
pub fn time_to_alignment(
    params: &IsotropicTaskParams,
    rule: &RuleConfig,
    threshold: f64,
    flow_cfg: &FlowConfig,
) -> Result<f64, ExperimentError> {
    if !(0.0 < threshold && threshold < 1.0) {
        return Err(ExperimentError::InvalidConfig(format!(
            "threshold {threshold} outside (0,1)"
        )));
    }
    let task = params.to_task_spec();
    let w0 = default_initial_weights(&params.mu);
    let traj = integrate_mean_flow(&task, rule, &w0, flow_cfg)?;
    for i in 0..traj.len() {
        if traj.alignment[i] >= threshold {
            if i == 0 {
                return Ok(traj.times[0]);
            }
            let (a0, a1) = (traj.alignment[i - 1], traj.alignment[i]);
            let (t0, t1) = (traj.times[i - 1], traj.times[i]);
            return Ok(t0 + (threshold - a0) / (a1 - a0) * (t1 - t0));
        }
    }
    Err(ExperimentError::NotReached { threshold, t_max: flow_cfg.t_max })
}

/// Default σ grid for the learning-speed experiment.
pub fn default_sigma_grid() -> Vec<f64> {
    vec![0.25, 0.5, 1.0, 2.0]
}

/// Default flow settings for time-to-threshold experiments. The record
/// interval is fine enough that the interpolated crossing time is stable to
/// well under 1e−3 against further refinement.
pub fn default_speed_flow_config() -> FlowConfig {
    FlowConfig::new(0.01, 200.0).with_record_every(4)
}

/// Time-to-80%-alignment across an input-noise grid (learning speed vs σ).
pub fn noise_sweep(
    mu: &DVector<f64>,
    rule: &RuleConfig,
    sigma_grid: &[f64],
    threshold: f64,
    flow_cfg: &FlowConfig,
) -> Result<SweepResult, ExperimentError> {
    let mut result = SweepResult::new("sigma", "time_to_threshold", rule.rule);
    for &sigma in sigma_grid {
        let params = IsotropicTaskParams::new(mu.clone(), sigma, 0.0)?;
        let outcome = match time_to_alignment(&params, rule, threshold, flow_cfg) {
            Ok(t) => Some(t),
            Err(ExperimentError::NotReached { .. }) => None,
            Err(e) => return Err(e),
        };
        result.push(sigma, outcome);
    }
    Ok(result)
}

/// Time-to-threshold across a noise-anisotropy grid at fixed total noise
/// power: ε > 0 shifts variance into the decoding direction μ, ε < 0 out of
/// it, with tr Σ = σ²N for every ε.
pub fn anisotropy_sweep(
    mu: &DVector<f64>,
    rule: &RuleConfig,
    sigma: f64,
    epsilon_grid: &[f64],
    threshold: f64,
    flow_cfg: &FlowConfig,
) -> Result<SweepResult, ExperimentError> {
    let mut result = SweepResult::new("epsilon", "time_to_threshold", rule.rule);
    for &eps in epsilon_grid {
        let params = IsotropicTaskParams::new(mu.clone(), sigma, eps)?;
        let outcome = match time_to_alignment(&params, rule, threshold, flow_cfg) {
            Ok(t) => Some(t),
            Err(ExperimentError::NotReached { .. }) => None,
            Err(e) => return Err(e),
        };
        result.push(eps, outcome);
    }
    Ok(result)
}

/// Central-difference sensitivity of the time-to-threshold to ε at ε = 0.
pub fn anisotropy_slope_at_zero(
    mu: &DVector<f64>,
    rule: &RuleConfig,
    sigma: f64,
    delta: f64,
    threshold: f64,
    flow_cfg: &FlowConfig,
) -> Result<f64, ExperimentError> {
    let tp = time_to_alignment(
        &IsotropicTaskParams::new(mu.clone(), sigma, delta)?,
        rule,
        threshold,
        flow_cfg,
    )?;
    let tm = time_to_alignment(
        &IsotropicTaskParams::new(mu.clone(), sigma, -delta)?,
        rule,
        threshold,
        flow_cfg,
    )?;
    Ok((tp - tm) / (2.0 * delta))
}

/// Covariance-decay sweep: integrates the joint mean/covariance flow per σ
/// and fits an exponential rate to tr Cov(t) on the tail of the window
/// (last 50% of recorded points, least squares on log values). Records with
/// tr Cov below the underflow guard are excluded from the fit.
pub fn covariance_decay(
    mu: &DVector<f64>,
    rule: &RuleConfig,
    sigma_grid: &[f64],
    cov0: &DMatrix<f64>,
    flow_cfg: &FlowConfig,
) -> Result<SweepResult, ExperimentError> {
    if rule.lambda <= 0.0 {
        return Err(ExperimentError::InvalidConfig(
            "covariance decay requires lambda > 0".into(),
        ));
    }
    const UNDERFLOW: f64 = 1e-250;
    let mut result = SweepResult::new("sigma", "decay_rate", rule.rule);
    for &sigma in sigma_grid {
        let params = IsotropicTaskParams::new(mu.clone(), sigma, 0.0)?;
        let task = params.to_task_spec();
        let w0 = default_initial_weights(mu);
        let state0 = WeightState::new(w0, cov0.clone(), 0.0)?;
        let traj = integrate_cov_flow(&task, rule, &state0, flow_cfg)?;
        let tc = traj.trace_cov.as_ref().expect("covariance was integrated");
        // Pre-underflow window, then its last half.
        let valid = tc.iter().take_while(|&&v| v > UNDERFLOW).count();
        if valid < 4 {
            result.push(sigma, None);
            continue;
        }
        let start = valid / 2;
        let xs: Vec<f64> = traj.times[start..valid].to_vec();
        let ys: Vec<f64> = tc[start..valid].iter().map(|v| v.ln()).collect();
        let fit = ols_line(&xs, &ys);
        result.push(sigma, Some(-fit.slope));
    }
    Ok(result)
}

/// Continual-learning configuration. An ensemble of perceptrons (one per
/// random initialization) is trained in lockstep through a sequence of
/// tasks with independent random unit means; each task is trained until the
/// alignment of the ensemble-mean weight vector with that task's mean
/// reaches `threshold`, and the alignment of the ensemble mean with μ₀ is
/// recorded after every task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForgettingConfig {
    pub rule: Rule,
    pub num_tasks: usize,
    pub sigma: f64,
    pub lambda: f64,
    pub eta: f64,
    pub dim: usize,
    /// Ensemble size (number of random initializations).
    pub runs: usize,
    /// Per-task alignment threshold on the ensemble-mean weights.
    pub threshold: f64,
    pub seed: u64,
    /// Abort if a task is not learned within this many steps.
    pub max_steps_per_task: usize,
    pub activation: Activation,
    pub baseline: BaselineConfig,
    /// Bootstrap resamples for the decay-constant confidence interval.
    pub bootstrap_resamples: usize,
    /// Alignment magnitudes below this are treated as noise floor: the decay
    /// fit uses the longest prefix of the curve above the floor (at least
    /// two points), and log values are clamped at 1e−4.
    pub noise_floor: f64,
}

impl ForgettingConfig {
    /// Reference continual-learning parameters: N = 500, λ = 10, η = 10⁻²,
    /// 50 initializations, 10 tasks, 80% alignment threshold.
    pub fn defaults(rule: Rule, sigma: f64) -> Self {
        ForgettingConfig {
            rule,
            num_tasks: 10,
            sigma,
            lambda: 10.0,
            eta: 1e-2,
            dim: 500,
            runs: 50,
            threshold: 0.8,
            seed: 20_260_817,
            max_steps_per_task: 200_000,
            activation: Activation::ErfSigmoid,
            baseline: BaselineConfig::default(),
            bootstrap_resamples: 200,
            noise_floor: 0.05,
        }
    }
}

/// Forgetting-experiment output.
#[derive(Debug, Clone)]
pub struct ForgettingResult {
    /// Alignment of the ensemble-mean weights with μ₀ after each task
    /// (index 0 = right after learning Task 0).
    pub curve: Vec<f64>,
    /// Steps needed to learn each task.
    pub crossing_steps: Vec<usize>,
    /// Fitted exponential decay constant (−slope of ln curve vs task index).
    pub decay_constant: f64,
    pub r_squared: f64,
    /// Bootstrap 95% confidence interval for the decay constant.
    pub ci_low: f64,
    pub ci_high: f64,
    /// Number of leading curve points used in the fit.
    pub fit_points: usize,
    /// Per-run weight snapshots after each task: `snapshots[task][run]`.
    pub snapshots: Vec<Vec<DVector<f64>>>,
    /// μ₀ (the reference direction for the curve).
    pub mu0: DVector<f64>,
}

impl ForgettingResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("task,alignment_mu0,crossing_steps\n");
        for (k, (a, s)) in self.curve.iter().zip(&self.crossing_steps).enumerate() {
            out.push_str(&format!("{k},{a:.17e},{s}\n"));
        }
        out
    }
}

/// Runs the continual-learning experiment (see [`ForgettingConfig`]).
pub fn forgetting_run(cfg: &ForgettingConfig) -> Result<ForgettingResult, ExperimentError> {
    if cfg.num_tasks < 2 {
        return Err(ExperimentError::InvalidConfig("need at least two tasks".into()));
    }
    if !(0.0 < cfg.threshold && cfg.threshold < 1.0) {
        return Err(ExperimentError::InvalidConfig(format!(
            "threshold {} outside (0,1)",
            cfg.threshold
        )));
    }
    if cfg.runs == 0 || cfg.dim < 2 {
        return Err(ExperimentError::InvalidConfig("need runs ≥ 1 and dim ≥ 2".into()));
    }

    // Task means: independent uniform unit vectors (stream 0 of the seed).
    let mut task_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let means: Vec<DVector<f64>> =
        (0..cfg.num_tasks).map(|_| random_unit_vector(&mut task_rng, cfg.dim)).collect();
    let mu0 = means[0].clone();

    // Per-run state: random initial weights of typical unit norm (stream
    // i+1), an RNG for the sample draws, and a reward baseline.
    let mut run_rngs: Vec<ChaCha8Rng> = (0..cfg.runs)
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
            r.set_stream(i as u64 + 1);
            r
        })
        .collect();
    let mut weights: Vec<DVector<f64>> = run_rngs
        .iter_mut()
        .map(|rng| {
            DVector::from_fn(cfg.dim, |_, _| {
                let z: f64 = StandardNormal.sample(rng);
                z / (cfg.dim as f64).sqrt()
            })
        })
        .collect();
    let mut baselines = vec![0.0f64; cfg.runs];

    let mut curve = Vec::with_capacity(cfg.num_tasks);
    let mut crossing_steps = Vec::with_capacity(cfg.num_tasks);
    let mut snapshots = Vec::with_capacity(cfg.num_tasks);
    let mut x = DVector::zeros(cfg.dim);

    for (k, mu_k) in means.iter().enumerate() {
        let task = TaskSpec::symmetric_isotropic(mu_k.clone(), cfg.sigma);
        let mut learned = false;
        let mut steps = 0usize;
        while steps < cfg.max_steps_per_task {
            steps += 1;
            for run in 0..cfg.runs {
                let rng = &mut run_rngs[run];
                let y = task.sample_into(rng, &mut x);
                let w = &mut weights[run];
                match cfg.rule {
                    Rule::Sl => sl_step(w, &x, y, cfg.eta, cfg.lambda, cfg.activation),
                    Rule::Rl => {
                        let b = match cfg.baseline.mode {
                            BaselineMode::Ema => baselines[run],
                            BaselineMode::Analytic => {
                                crate::simulate::analytic_reward_mean(&task, w)
                            }
                            BaselineMode::None => 0.0,
                        };
                        let reward =
                            rl_step(w, &x, y, cfg.eta, cfg.lambda, cfg.activation, b, rng);
                        if cfg.baseline.mode == BaselineMode::Ema {
                            baselines[run] = cfg.baseline.ema_decay * baselines[run]
                                + (1.0 - cfg.baseline.ema_decay) * reward;
                        }
                    }
                }
            }
            let mean_w = ensemble_mean(&weights);
            if alignment_with(mu_k, &mean_w) >= cfg.threshold {
                learned = true;
                break;
            }
        }
        if !learned {
            return Err(ExperimentError::TaskNeverLearned { task_index: k, steps });
        }
        let mean_w = ensemble_mean(&weights);
        curve.push(alignment_with(&mu0, &mean_w));
        crossing_steps.push(steps);
        snapshots.push(weights.clone());
    }

    let (decay_constant, r_squared, fit_points) =
        fit_forgetting_decay(&curve, cfg.noise_floor);

    // Bootstrap over ensemble members: resample runs with replacement,
    // rebuild the ensemble-mean curve from the frozen per-task snapshots,
    // and refit. Percentile 95% interval.
    let mut boot_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x00b0_0057);
    let mut slopes = Vec::with_capacity(cfg.bootstrap_resamples);
    for _ in 0..cfg.bootstrap_resamples {
        let picks: Vec<usize> =
            (0..cfg.runs).map(|_| rand::Rng::gen_range(&mut boot_rng, 0..cfg.runs)).collect();
        let mut bcurve = Vec::with_capacity(cfg.num_tasks);
        for snap in &snapshots {
            let mut mean = DVector::zeros(cfg.dim);
            for &p in &picks {
                mean += &snap[p];
            }
            mean /= cfg.runs as f64;
            bcurve.push(alignment_with(&mu0, &mean));
        }
        let (d, _, _) = fit_forgetting_decay(&bcurve, cfg.noise_floor);
        slopes.push(d);
    }
    slopes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (ci_low, ci_high) = if slopes.is_empty() {
        (decay_constant, decay_constant)
    } else {
        (percentile(&slopes, 0.025), percentile(&slopes, 0.975))
    };

    Ok(ForgettingResult {
        curve,
        crossing_steps,
        decay_constant,
        r_squared,
        ci_low,
        ci_high,
        fit_points,
        snapshots,
        mu0,
    })
}

/// Exponential-decay fit of a forgetting curve: OLS on ln(alignment) vs task
/// index over the longest prefix above the noise floor (minimum two points);
/// values are clamped at 1e−4 before the log so that floor-dominated points
/// cannot produce −∞. Returns (decay constant, R², points used).
pub fn fit_forgetting_decay(curve: &[f64], noise_floor: f64) -> (f64, f64, usize) {
    let above = curve.iter().take_while(|&&v| v >= noise_floor).count();
    let n = above.clamp(2, curve.len());
    let xs: Vec<f64> = (0..n).map(|k| k as f64).collect();
    let ys: Vec<f64> = curve[..n].iter().map(|&v| v.max(1e-4).ln()).collect();
    let fit = ols_line(&xs, &ys);
    (-fit.slope, fit.r_squared, n)
}

/// |⟨w*⟩| across a regularization grid (the fixed-point curve).
pub fn fixed_point_curve(
    params: &IsotropicTaskParams,
    rule: Rule,
    lambda_grid: &[f64],
) -> Result<SweepResult, ExperimentError> {
    let mut result = SweepResult::new("lambda", "w_star_norm", rule);
    for &lambda in lambda_grid {
        let rc = RuleConfig::new(rule, lambda);
        match find_fixed_point(params, &rc) {
            Ok(fp) => result.push(lambda, Some(fp.norm)),
            Err(FlowError::NoFixedPoint) => result.push(lambda, None),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(result)
}

fn ensemble_mean(weights: &[DVector<f64>]) -> DVector<f64> {
    let mut mean = DVector::zeros(weights[0].len());
    for w in weights {
        mean += w;
    }
    mean / weights.len() as f64
}

fn random_unit_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    let v = DVector::from_fn(n, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z
    });
    v.normalize()
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = q * (sorted.len() - 1) as f64;
    let lo = idx.floor() as usize;
    let hi = idx.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (idx - lo as f64) * (sorted[hi] - sorted[lo])
    }
}
