//! Subcommand drivers. Each resolves its configuration (defaults ← config
//! file ← flags), runs the library, writes CSV + SVG + a regeneration
//! manifest into the output directory, and prints a one-line summary.
//!
//! All tasks use a unit coding direction μ = e₀ in `dim` dimensions with the
//! symmetric two-class Gaussian input model; σ sets the isotropic noise
//! scale and ε redistributes variance into (+) or out of (−) the coding
//! direction at fixed total power.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use perceptron_flow::drift::{Activation, Rule, RuleConfig};
use perceptron_flow::experiments::{
    anisotropy_slope_at_zero, anisotropy_sweep, covariance_decay, default_initial_weights,
    fixed_point_curve, forgetting_run, noise_sweep, ForgettingConfig,
};
use perceptron_flow::flow::{
    find_fixed_point, integrate_cov_flow, integrate_mean_flow, FlowConfig, Trajectory, WeightState,
};
use perceptron_flow::mnist::{
    default_data_dir, fetch_mnist, load_binary_mnist, run_mnist_comparison,
    verify_canonical_checksums, FeatureMode, GaborBankConfig, MnistRunConfig,
};
use perceptron_flow::simulate::{run_rl, run_sl, BaselineConfig, BaselineMode, SimConfig};
use perceptron_flow::specfun::{erf_sigmoid, erf_sigmoid_deriv, normal_cdf, owens_t};
use perceptron_flow::task::IsotropicTaskParams;

use crate::error::CliError;
use crate::manifest::RunManifest;
use crate::plot::{render_plot, PlotSpec};
use crate::resolve::resolve;

/// Global options shared by every subcommand.
pub struct Context {
    pub out_dir: PathBuf,
    pub config_file: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl Context {
    fn config_file(&self) -> Option<&Path> {
        self.config_file.as_deref()
    }

    /// Writes the named files plus `<name>_manifest.json` and echoes where.
    fn emit<C: Serialize>(
        &self,
        name: &str,
        config: &C,
        seed: Option<u64>,
        files: &[(&str, &str)],
    ) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.out_dir)?;
        for (file_name, content) in files {
            std::fs::write(self.out_dir.join(file_name), content)?;
        }
        let names: Vec<&str> = files.iter().map(|(n, _)| *n).collect();
        RunManifest::new(name, config, seed, &names)?.write(&self.out_dir, name)?;
        let listing: Vec<String> =
            names.iter().map(|n| n.to_string()).chain([format!("{name}_manifest.json")]).collect();
        println!("wrote {} in {}", listing.join(", "), self.out_dir.display());
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Shared argument enums

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleArg {
    /// Supervised cross-entropy updates.
    Sl,
    /// REINFORCE policy-gradient updates.
    Rl,
}

impl From<RuleArg> for Rule {
    fn from(r: RuleArg) -> Rule {
        match r {
            RuleArg::Sl => Rule::Sl,
            RuleArg::Rl => Rule::Rl,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationArg {
    /// Erf-based sigmoid (matches the analytic drifts exactly).
    Erf,
    /// Standard logistic output.
    Logistic,
}

impl From<ActivationArg> for Activation {
    fn from(a: ActivationArg) -> Activation {
        match a {
            ActivationArg::Erf => Activation::ErfSigmoid,
            ActivationArg::Logistic => Activation::Logistic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineArg {
    /// Exponential moving average of observed rewards.
    Ema,
    /// Exact reward mean under the Gaussian input model.
    Analytic,
    /// No baseline.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureModeArg {
    /// Gabor filter-bank energies (5 scales × 8 orientations × 6×6 grid).
    Gabor,
    /// Raw pixel intensities.
    Pixels,
}

impl From<FeatureModeArg> for FeatureMode {
    fn from(m: FeatureModeArg) -> FeatureMode {
        match m {
            FeatureModeArg::Gabor => FeatureMode::Gabor,
            FeatureModeArg::Pixels => FeatureMode::Pixels,
        }
    }
}

fn baseline_config(b: BaselineArg, ema_decay: f64) -> BaselineConfig {
    match b {
        BaselineArg::Ema => BaselineConfig { mode: BaselineMode::Ema, ema_decay },
        BaselineArg::Analytic => BaselineConfig::analytic(),
        BaselineArg::None => BaselineConfig::none(),
    }
}

fn unit_mu(dim: usize) -> Result<DVector<f64>, CliError> {
    if dim < 2 {
        return Err(CliError::config(format!("dim must be at least 2, got {dim}")));
    }
    let mut mu = DVector::zeros(dim);
    mu[0] = 1.0;
    Ok(mu)
}

fn check_increasing(grid: &[f64], what: &str) -> Result<(), CliError> {
    if grid.is_empty() {
        return Err(CliError::config(format!("{what} grid is empty")));
    }
    if !grid.windows(2).all(|p| p[1] > p[0]) {
        return Err(CliError::config(format!(
            "{what} grid must be strictly increasing, got {grid:?}"
        )));
    }
    Ok(())
}

fn check_not_diverged(traj: &Trajectory) -> Result<(), CliError> {
    if traj.diverged {
        return Err(CliError::numerical(
            "flow diverged before t_max (weights left the guard region); \
             reduce dt, shorten the horizon, or add regularization",
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// flow

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowRunConfig {
    pub rule: RuleArg,
    pub sigma: f64,
    pub epsilon: f64,
    pub lambda: f64,
    pub dim: usize,
    pub dt: f64,
    pub t_max: f64,
    pub record_every: usize,
    /// Initial weight covariance cov₀·I; 0 integrates the mean flow only.
    pub cov0: f64,
    /// Include the covariance-curvature correction in the mean equation.
    pub hessian: bool,
    /// Emit the mean weight components as extra CSV columns.
    pub include_means: bool,
}

impl Default for FlowRunConfig {
    fn default() -> Self {
        FlowRunConfig {
            rule: RuleArg::Sl,
            sigma: 1.0,
            epsilon: 0.0,
            lambda: 0.0,
            dim: 2,
            dt: 0.01,
            t_max: 50.0,
            record_every: 10,
            cov0: 0.0,
            hessian: false,
            include_means: false,
        }
    }
}

/// Integrate the mean (and optionally covariance) flow equations.
#[derive(Debug, Args, Serialize)]
pub struct FlowFlags {
    /// Update rule.
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    rule: Option<RuleArg>,
    /// Isotropic input-noise scale σ.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma: Option<f64>,
    /// Noise anisotropy ε ∈ (−1, 1) toward (+) or away from (−) μ.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
    /// Weight-decay strength λ.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    /// Input dimension (μ = e₀).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
    /// Integrator step size.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dt: Option<f64>,
    /// Integration horizon.
    #[arg(long = "tmax")]
    #[serde(skip_serializing_if = "Option::is_none")]
    t_max: Option<f64>,
    /// Record every k-th step.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    record_every: Option<usize>,
    /// Initial weight covariance cov₀·I (0 = mean flow only).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    cov0: Option<f64>,
    /// Include the covariance-curvature correction in the mean equation.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    hessian: Option<bool>,
    /// Emit mean weight components as extra CSV columns.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    include_means: Option<bool>,
}

pub fn run_flow(ctx: &Context, flags: &FlowFlags) -> Result<(), CliError> {
    let cfg: FlowRunConfig = resolve(&FlowRunConfig::default(), ctx.config_file(), flags)?;
    let mu = unit_mu(cfg.dim)?;
    let params = IsotropicTaskParams::new(mu.clone(), cfg.sigma, cfg.epsilon)?;
    let task = params.to_task_spec();
    let rule = RuleConfig::new(cfg.rule.into(), cfg.lambda);
    let flow_cfg = FlowConfig::new(cfg.dt, cfg.t_max)
        .with_record_every(cfg.record_every)
        .with_hessian_correction(cfg.hessian);
    let w0 = default_initial_weights(&mu);
    let traj = if cfg.cov0 > 0.0 {
        let cov0 = DMatrix::identity(cfg.dim, cfg.dim) * cfg.cov0;
        integrate_cov_flow(&task, &rule, &WeightState::new(w0, cov0, 0.0)?, &flow_cfg)?
    } else {
        integrate_mean_flow(&task, &rule, &w0, &flow_cfg)?
    };
    check_not_diverged(&traj)?;

    let csv = traj.to_csv(cfg.include_means);
    let mut spec = PlotSpec::new("Mean-weight flow", "t", "value", "t")
        .with_series("alignment", "alignment")
        .with_series("accuracy", "accuracy");
    if cfg.cov0 > 0.0 {
        spec = spec.with_series("tr_cov", "tr Cov");
    }
    let svg = render_plot(&csv, &spec)?;
    println!(
        "flow: t = {:.3}, alignment {:.6}, |w| {:.6}, accuracy {:.6}",
        traj.times.last().unwrap(),
        traj.alignment.last().unwrap(),
        traj.norm.last().unwrap(),
        traj.accuracy.last().unwrap(),
    );
    ctx.emit("flow", &cfg, None, &[("flow.csv", &csv), ("flow.svg", &svg)])
}

// ---------------------------------------------------------------------------
// simulate

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateRunConfig {
    pub rule: RuleArg,
    pub sigma: f64,
    pub epsilon: f64,
    pub lambda: f64,
    pub dim: usize,
    pub eta: f64,
    pub steps: usize,
    pub runs: usize,
    pub seed: u64,
    pub record_every: usize,
    pub activation: ActivationArg,
    pub baseline: BaselineArg,
    pub ema_decay: f64,
}

impl Default for SimulateRunConfig {
    fn default() -> Self {
        SimulateRunConfig {
            rule: RuleArg::Sl,
            sigma: 1.0,
            epsilon: 0.0,
            lambda: 0.0,
            dim: 500,
            eta: 1e-3,
            steps: 10_000,
            runs: 10,
            seed: 1,
            record_every: 100,
            activation: ActivationArg::Erf,
            baseline: BaselineArg::Ema,
            ema_decay: 0.99,
        }
    }
}

/// Run a seeded SGD/REINFORCE ensemble and record its statistics.
#[derive(Debug, Args, Serialize)]
pub struct SimulateFlags {
    /// Update rule.
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    rule: Option<RuleArg>,
    /// Isotropic input-noise scale σ.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma: Option<f64>,
    /// Noise anisotropy ε ∈ (−1, 1).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
    /// Weight-decay strength λ.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    /// Input dimension (μ = e₀).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
    /// Learning rate η.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    eta: Option<f64>,
    /// Number of update steps.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    steps: Option<usize>,
    /// Ensemble size.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    runs: Option<usize>,
    /// Record every k-th step.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    record_every: Option<usize>,
    /// Output nonlinearity.
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    activation: Option<ActivationArg>,
    /// Reward baseline (reinforcement rule only).
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    baseline: Option<BaselineArg>,
    /// EMA decay for the reward baseline.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    ema_decay: Option<f64>,
}

pub fn run_simulate(ctx: &Context, flags: &SimulateFlags) -> Result<(), CliError> {
    let mut cfg: SimulateRunConfig =
        resolve(&SimulateRunConfig::default(), ctx.config_file(), flags)?;
    if let Some(seed) = ctx.seed {
        cfg.seed = seed;
    }
    let mu = unit_mu(cfg.dim)?;
    let task = IsotropicTaskParams::new(mu.clone(), cfg.sigma, cfg.epsilon)?.to_task_spec();
    let w0 = default_initial_weights(&mu);
    let sim_cfg = SimConfig::new(cfg.eta, cfg.steps, cfg.runs, cfg.seed)
        .with_record_every(cfg.record_every)
        .with_activation(cfg.activation.into())
        .with_baseline(baseline_config(cfg.baseline, cfg.ema_decay));
    let ensemble = match cfg.rule {
        RuleArg::Sl => run_sl(&task, cfg.lambda, &w0, &sim_cfg)?,
        RuleArg::Rl => run_rl(&task, cfg.lambda, &w0, &sim_cfg)?,
    };
    if ensemble.diverged {
        return Err(CliError::numerical(
            "a simulation run overflowed; reduce eta or add regularization",
        ));
    }

    let csv = ensemble.to_csv();
    let spec = PlotSpec::new("Ensemble simulation", "t", "value", "t")
        .with_series("alignment_of_mean", "alignment of mean")
        .with_series("alignment_mean", "mean alignment")
        .with_series("accuracy_mean", "mean accuracy");
    let svg = render_plot(&csv, &spec)?;
    println!(
        "simulate: {} runs × {} steps, final alignment of mean {:.6}, mean accuracy {:.6}",
        cfg.runs,
        cfg.steps,
        ensemble.alignment_of_mean.last().unwrap(),
        ensemble.accuracy_mean.last().unwrap(),
    );
    ctx.emit("simulate", &cfg, Some(cfg.seed), &[("simulate.csv", &csv), ("simulate.svg", &svg)])
}

// ---------------------------------------------------------------------------
// fixed-point

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedPointRunConfig {
    pub rule: RuleArg,
    pub sigma: f64,
    pub lambda: f64,
    /// Sweep |w*| over a log-spaced λ grid instead of a single solve.
    pub curve: bool,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub points: usize,
}

impl Default for FixedPointRunConfig {
    fn default() -> Self {
        FixedPointRunConfig {
            rule: RuleArg::Sl,
            sigma: 0.0,
            lambda: 0.1,
            curve: false,
            lambda_min: 1e-3,
            lambda_max: 1.0,
            points: 12,
        }
    }
}

/// Locate the drift fixed point |w*|, or sweep it over λ.
#[derive(Debug, Args, Serialize)]
pub struct FixedPointFlags {
    /// Update rule.
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    rule: Option<RuleArg>,
    /// Isotropic input-noise scale σ.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma: Option<f64>,
    /// Weight-decay strength λ (single-solve mode).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    /// Sweep |w*| over a log-spaced λ grid and write CSV/SVG.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    curve: Option<bool>,
    /// Smallest λ of the sweep grid.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda_min: Option<f64>,
    /// Largest λ of the sweep grid.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda_max: Option<f64>,
    /// Number of sweep grid points.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    points: Option<usize>,
}

pub fn run_fixed_point(ctx: &Context, flags: &FixedPointFlags) -> Result<(), CliError> {
    let cfg: FixedPointRunConfig =
        resolve(&FixedPointRunConfig::default(), ctx.config_file(), flags)?;
    let params = IsotropicTaskParams::new(unit_mu(2)?, cfg.sigma, 0.0)?;
    if !cfg.curve {
        let rule = RuleConfig::new(cfg.rule.into(), cfg.lambda);
        let fp = find_fixed_point(&params, &rule)?;
        println!("|w*| = {:.12e}  residual = {:.3e}", fp.norm, fp.residual);
        return Ok(());
    }

    if !(cfg.points >= 2 && cfg.lambda_min > 0.0 && cfg.lambda_min < cfg.lambda_max) {
        return Err(CliError::config(format!(
            "need points >= 2 and 0 < lambda_min < lambda_max, got {} in [{}, {}]",
            cfg.points, cfg.lambda_min, cfg.lambda_max
        )));
    }
    let ratio = cfg.lambda_max / cfg.lambda_min;
    let grid: Vec<f64> = (0..cfg.points)
        .map(|i| cfg.lambda_min * ratio.powf(i as f64 / (cfg.points - 1) as f64))
        .collect();
    let sweep = fixed_point_curve(&params, cfg.rule.into(), &grid)?;
    let csv = sweep.to_csv();
    let spec = PlotSpec::new("Fixed-point norm vs regularization", "λ", "|w*|", "lambda")
        .with_series("w_star_norm", "|w*|")
        .with_log_x(true)
        .with_markers(true);
    let svg = render_plot(&csv, &spec)?;
    let shown: Vec<String> = sweep
        .outcomes
        .iter()
        .map(|o| o.map_or("—".into(), |v| format!("{v:.4}")))
        .collect();
    println!("fixed-point curve over λ ∈ [{:.1e}, {:.1e}]: |w*| = [{}]",
        cfg.lambda_min, cfg.lambda_max, shown.join(", "));
    ctx.emit(
        "fixed_point",
        &cfg,
        None,
        &[("fixed_point.csv", &csv), ("fixed_point.svg", &svg)],
    )
}

// ---------------------------------------------------------------------------
// sweep-noise / sweep-anisotropy

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSweepRunConfig {
    pub rule: RuleArg,
    pub grid: Vec<f64>,
    pub threshold: f64,
    pub dt: f64,
    pub t_max: f64,
    pub record_every: usize,
}

impl Default for NoiseSweepRunConfig {
    fn default() -> Self {
        NoiseSweepRunConfig {
            rule: RuleArg::Sl,
            grid: vec![0.25, 0.5, 1.0, 2.0],
            threshold: 0.8,
            dt: 0.01,
            t_max: 200.0,
            record_every: 4,
        }
    }
}

/// Sweep time-to-threshold alignment over the input-noise scale σ.
#[derive(Debug, Args, Serialize)]
pub struct NoiseSweepFlags {
    /// Update rule.
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    rule: Option<RuleArg>,
    /// Comma-separated σ grid (strictly increasing).
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    grid: Option<Vec<f64>>,
    /// Alignment threshold to time.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    threshold: Option<f64>,
    /// Integrator step size.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dt: Option<f64>,
    /// Integration horizon per grid point.
    #[arg(long = "tmax")]
    #[serde(skip_serializing_if = "Option::is_none")]
    t_max: Option<f64>,
    /// Record every k-th step.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    record_every: Option<usize>,
}

pub fn run_sweep_noise(ctx: &Context, flags: &NoiseSweepFlags) -> Result<(), CliError> {
    let cfg: NoiseSweepRunConfig =
        resolve(&NoiseSweepRunConfig::default(), ctx.config_file(), flags)?;
    check_increasing(&cfg.grid, "sigma")?;
    let flow_cfg = FlowConfig::new(cfg.dt, cfg.t_max).with_record_every(cfg.record_every);
    let rule = RuleConfig::new(cfg.rule.into(), 0.0);
    let sweep = noise_sweep(&unit_mu(2)?, &rule, &cfg.grid, cfg.threshold, &flow_cfg)?;
    let csv = sweep.to_csv();
    let spec = PlotSpec::new(
        "Time to threshold vs input noise",
        "σ",
        "time to threshold",
        "sigma",
    )
    .with_series("time_to_threshold", "time to threshold")
    .with_markers(true);
    let svg = render_plot(&csv, &spec)?;
    print_sweep("sweep-noise", &sweep.grid, &sweep.outcomes);
    ctx.emit("noise_sweep", &cfg, None, &[("noise_sweep.csv", &csv), ("noise_sweep.svg", &svg)])
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnisotropySweepRunConfig {
    pub rule: RuleArg,
    pub sigma: f64,
    pub grid: Vec<f64>,
    pub threshold: f64,
    /// Central-difference step for the reported slope at ε = 0.
    pub slope_delta: f64,
    pub dt: f64,
    pub t_max: f64,
    pub record_every: usize,
}

impl Default for AnisotropySweepRunConfig {
    fn default() -> Self {
        AnisotropySweepRunConfig {
            rule: RuleArg::Sl,
            sigma: 1.0,
            grid: vec![-0.5, -0.25, 0.0, 0.25, 0.5],
            threshold: 0.8,
            slope_delta: 0.05,
            dt: 0.01,
            t_max: 200.0,
            record_every: 4,
        }
    }
}

/// Sweep time-to-threshold over the noise-anisotropy parameter ε.
#[derive(Debug, Args, Serialize)]
pub struct AnisotropySweepFlags {
    /// Update rule.
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    rule: Option<RuleArg>,
    /// Isotropic noise scale σ at ε = 0.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma: Option<f64>,
    /// Comma-separated ε grid (strictly increasing, within (−1, 1)).
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    grid: Option<Vec<f64>>,
    /// Alignment threshold to time.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    threshold: Option<f64>,
    /// Central-difference step for the slope at ε = 0.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    slope_delta: Option<f64>,
    /// Integrator step size.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dt: Option<f64>,
    /// Integration horizon per grid point.
    #[arg(long = "tmax")]
    #[serde(skip_serializing_if = "Option::is_none")]
    t_max: Option<f64>,
    /// Record every k-th step.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    record_every: Option<usize>,
}

pub fn run_sweep_anisotropy(ctx: &Context, flags: &AnisotropySweepFlags) -> Result<(), CliError> {
    let cfg: AnisotropySweepRunConfig =
        resolve(&AnisotropySweepRunConfig::default(), ctx.config_file(), flags)?;
    check_increasing(&cfg.grid, "epsilon")?;
    let flow_cfg = FlowConfig::new(cfg.dt, cfg.t_max).with_record_every(cfg.record_every);
    let rule = RuleConfig::new(cfg.rule.into(), 0.0);
    let mu = unit_mu(2)?;
    let sweep = anisotropy_sweep(&mu, &rule, cfg.sigma, &cfg.grid, cfg.threshold, &flow_cfg)?;
    let slope =
        anisotropy_slope_at_zero(&mu, &rule, cfg.sigma, cfg.slope_delta, cfg.threshold, &flow_cfg)?;
    let csv = sweep.to_csv();
    let spec = PlotSpec::new(
        "Time to threshold vs noise anisotropy",
        "ε",
        "time to threshold",
        "epsilon",
    )
    .with_series("time_to_threshold", "time to threshold")
    .with_markers(true);
    let svg = render_plot(&csv, &spec)?;
    print_sweep("sweep-anisotropy", &sweep.grid, &sweep.outcomes);
    println!("slope of time-to-threshold at ε = 0: {slope:.4}");
    ctx.emit(
        "anisotropy_sweep",
        &cfg,
        None,
        &[("anisotropy_sweep.csv", &csv), ("anisotropy_sweep.svg", &svg)],
    )
}

fn print_sweep(name: &str, grid: &[f64], outcomes: &[Option<f64>]) {
    let rows: Vec<String> = grid
        .iter()
        .zip(outcomes)
        .map(|(g, o)| match o {
            Some(v) => format!("{g}: {v:.4}"),
            None => format!("{g}: not reached"),
        })
        .collect();
    println!("{name}: {}", rows.join(", "));
}

// ---------------------------------------------------------------------------
// cov-decay

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovDecayRunConfig {
    pub rule: RuleArg,
    pub lambda: f64,
    pub grid: Vec<f64>,
    /// Initial weight covariance cov₀·I.
    pub cov0: f64,
    pub dim: usize,
    pub dt: f64,
    pub t_max: f64,
    pub record_every: usize,
}

impl Default for CovDecayRunConfig {
    fn default() -> Self {
        CovDecayRunConfig {
            rule: RuleArg::Sl,
            lambda: 0.1,
            grid: vec![0.0, 0.5, 1.0],
            cov0: 0.01,
            dim: 2,
            dt: 0.005,
            t_max: 20.0,
            record_every: 20,
        }
    }
}

/// Fit the exponential decay rate of the weight covariance per noise level.
#[derive(Debug, Args, Serialize)]
pub struct CovDecayFlags {
    /// Update rule.
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    rule: Option<RuleArg>,
    /// Weight-decay strength λ (must be positive).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    /// Comma-separated σ grid (strictly increasing).
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    grid: Option<Vec<f64>>,
    /// Initial weight covariance cov₀·I.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    cov0: Option<f64>,
    /// Input dimension (μ = e₀).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
    /// Integrator step size.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dt: Option<f64>,
    /// Integration horizon.
    #[arg(long = "tmax")]
    #[serde(skip_serializing_if = "Option::is_none")]
    t_max: Option<f64>,
    /// Record every k-th step.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    record_every: Option<usize>,
}

pub fn run_cov_decay(ctx: &Context, flags: &CovDecayFlags) -> Result<(), CliError> {
    let cfg: CovDecayRunConfig = resolve(&CovDecayRunConfig::default(), ctx.config_file(), flags)?;
    check_increasing(&cfg.grid, "sigma")?;
    let mu = unit_mu(cfg.dim)?;
    let cov0 = DMatrix::identity(cfg.dim, cfg.dim) * cfg.cov0;
    let flow_cfg = FlowConfig::new(cfg.dt, cfg.t_max).with_record_every(cfg.record_every);
    let rule = RuleConfig::new(cfg.rule.into(), cfg.lambda);
    let sweep = covariance_decay(&mu, &rule, &cfg.grid, &cov0, &flow_cfg)?;
    let csv = sweep.to_csv();
    let spec = PlotSpec::new("Covariance decay rate vs input noise", "σ", "decay rate", "sigma")
        .with_series("decay_rate", "fitted rate")
        .with_markers(true);
    let svg = render_plot(&csv, &spec)?;
    print_sweep("cov-decay", &sweep.grid, &sweep.outcomes);
    ctx.emit("cov_decay", &cfg, None, &[("cov_decay.csv", &csv), ("cov_decay.svg", &svg)])
}

// ---------------------------------------------------------------------------
// forget

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForgetRunConfig {
    pub rule: RuleArg,
    pub sigma: f64,
    pub tasks: usize,
    pub dim: usize,
    pub runs: usize,
    pub eta: f64,
    pub lambda: f64,
    pub threshold: f64,
    pub seed: u64,
    pub max_steps: usize,
    pub activation: ActivationArg,
    pub baseline: BaselineArg,
    pub ema_decay: f64,
    pub bootstrap: usize,
    pub noise_floor: f64,
}

impl Default for ForgetRunConfig {
    fn default() -> Self {
        let base = ForgettingConfig::defaults(Rule::Sl, 1.0);
        ForgetRunConfig {
            rule: RuleArg::Sl,
            sigma: base.sigma,
            tasks: base.num_tasks,
            dim: base.dim,
            runs: base.runs,
            eta: base.eta,
            lambda: base.lambda,
            threshold: base.threshold,
            seed: base.seed,
            max_steps: base.max_steps_per_task,
            activation: ActivationArg::Erf,
            baseline: BaselineArg::Ema,
            ema_decay: 0.99,
            bootstrap: base.bootstrap_resamples,
            noise_floor: base.noise_floor,
        }
    }
}

/// Sequential-task training: how fast is the first task forgotten?
#[derive(Debug, Args, Serialize)]
pub struct ForgetFlags {
    /// Update rule.
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    rule: Option<RuleArg>,
    /// Isotropic input-noise scale σ.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma: Option<f64>,
    /// Number of sequentially learned tasks.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    tasks: Option<usize>,
    /// Input dimension.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
    /// Ensemble size (random initializations).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    runs: Option<usize>,
    /// Learning rate η.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    eta: Option<f64>,
    /// Weight-decay strength λ.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    /// Per-task alignment threshold.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    threshold: Option<f64>,
    /// Abort a task after this many steps without reaching the threshold.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    max_steps: Option<usize>,
    /// Output nonlinearity.
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    activation: Option<ActivationArg>,
    /// Reward baseline (reinforcement rule only).
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    baseline: Option<BaselineArg>,
    /// EMA decay for the reward baseline.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    ema_decay: Option<f64>,
    /// Bootstrap resamples for the decay-constant confidence interval.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    bootstrap: Option<usize>,
    /// Noise floor below which curve points are excluded from the fit.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    noise_floor: Option<f64>,
}

pub fn run_forget(ctx: &Context, flags: &ForgetFlags) -> Result<(), CliError> {
    let mut cfg: ForgetRunConfig = resolve(&ForgetRunConfig::default(), ctx.config_file(), flags)?;
    if let Some(seed) = ctx.seed {
        cfg.seed = seed;
    }
    let lib_cfg = ForgettingConfig {
        rule: cfg.rule.into(),
        num_tasks: cfg.tasks,
        sigma: cfg.sigma,
        lambda: cfg.lambda,
        eta: cfg.eta,
        dim: cfg.dim,
        runs: cfg.runs,
        threshold: cfg.threshold,
        seed: cfg.seed,
        max_steps_per_task: cfg.max_steps,
        activation: cfg.activation.into(),
        baseline: baseline_config(cfg.baseline, cfg.ema_decay),
        bootstrap_resamples: cfg.bootstrap,
        noise_floor: cfg.noise_floor,
    };
    let result = forgetting_run(&lib_cfg)?;
    let csv = result.to_csv();
    let spec = PlotSpec::new(
        "Forgetting of the first task",
        "tasks learned since",
        "alignment with first task",
        "task",
    )
    .with_series("alignment_mu0", "alignment")
    .with_log_y(true)
    .with_markers(true);
    let svg = render_plot(&csv, &spec)?;
    println!(
        "forget: decay constant {:.4} per task (95% CI [{:.4}, {:.4}], R² {:.3} on {} points)",
        result.decay_constant, result.ci_low, result.ci_high, result.r_squared, result.fit_points,
    );
    ctx.emit("forget", &cfg, Some(cfg.seed), &[("forget.csv", &csv), ("forget.svg", &svg)])
}

// ---------------------------------------------------------------------------
// mnist

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MnistCliConfig {
    pub mode: FeatureModeArg,
    /// Dataset directory; unset uses $PERCEPTRON_FLOW_DATA or the cache dir.
    pub data_dir: Option<String>,
    /// Download and verify the dataset before running.
    pub fetch: bool,
    pub lambda: f64,
    pub eta: f64,
    /// Total SGD steps; 0 means two passes over the training subset.
    pub steps: usize,
    pub repeats: usize,
    pub seed: u64,
    pub checkpoints: usize,
    pub gabor_scales: usize,
    pub gabor_orientations: usize,
    pub gabor_kernel_size: usize,
    pub gabor_downsample: usize,
}

impl Default for MnistCliConfig {
    fn default() -> Self {
        let base = MnistRunConfig::defaults(FeatureMode::Gabor);
        let bank = GaborBankConfig::default();
        MnistCliConfig {
            mode: FeatureModeArg::Gabor,
            data_dir: None,
            fetch: false,
            lambda: base.lambda,
            eta: base.eta,
            steps: base.steps,
            repeats: base.repeats,
            seed: base.seed,
            checkpoints: base.checkpoints,
            gabor_scales: bank.scales,
            gabor_orientations: bank.orientations,
            gabor_kernel_size: bank.kernel_size,
            gabor_downsample: bank.downsample,
        }
    }
}

/// Compare the analytic accuracy curve against real SGD on digits 0 vs 1.
#[derive(Debug, Args, Serialize)]
pub struct MnistFlags {
    /// Feature representation.
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<FeatureModeArg>,
    /// Dataset directory (IDX files).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    data_dir: Option<String>,
    /// Download and checksum-verify the dataset first.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    fetch: Option<bool>,
    /// Weight-decay strength λ.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    /// Learning rate η.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    eta: Option<f64>,
    /// Total SGD steps (0 = two passes over the training subset).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    steps: Option<usize>,
    /// Number of independent SGD repeats.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    repeats: Option<usize>,
    /// Number of measurement checkpoints along the curve.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    checkpoints: Option<usize>,
    /// Gabor bank: number of spatial-frequency scales.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    gabor_scales: Option<usize>,
    /// Gabor bank: number of orientations.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    gabor_orientations: Option<usize>,
    /// Gabor bank: square kernel side length (odd).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    gabor_kernel_size: Option<usize>,
    /// Gabor bank: stride of the pooling grid.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    gabor_downsample: Option<usize>,
}

pub fn run_mnist(ctx: &Context, flags: &MnistFlags) -> Result<(), CliError> {
    let mut cfg: MnistCliConfig = resolve(&MnistCliConfig::default(), ctx.config_file(), flags)?;
    if let Some(seed) = ctx.seed {
        cfg.seed = seed;
    }
    let dir = cfg.data_dir.as_ref().map(PathBuf::from).unwrap_or_else(default_data_dir);
    if cfg.fetch {
        println!("fetching dataset into {}", dir.display());
        fetch_mnist(&dir)?;
    }
    if let Err(e) = verify_canonical_checksums(&dir) {
        return Err(CliError::config(format!(
            "dataset not usable under {}: {e}; run with --fetch or point --data-dir at the IDX files",
            dir.display()
        )));
    }
    let data = load_binary_mnist(&dir)?;

    let lib_cfg = MnistRunConfig {
        mode: cfg.mode.into(),
        gabor: GaborBankConfig {
            scales: cfg.gabor_scales,
            orientations: cfg.gabor_orientations,
            kernel_size: cfg.gabor_kernel_size,
            downsample: cfg.gabor_downsample,
        },
        lambda: cfg.lambda,
        eta: cfg.eta,
        steps: cfg.steps,
        repeats: cfg.repeats,
        seed: cfg.seed,
        checkpoints: cfg.checkpoints,
    };
    let cmp = run_mnist_comparison(&data, &lib_cfg)?;

    let csv = cmp.to_csv();
    let accuracy_spec = PlotSpec::new("Test accuracy: theory vs SGD", "SGD step", "accuracy", "step")
        .with_series("theory_accuracy", "theory")
        .with_series("empirical_accuracy_mean", "SGD mean");
    let alignment_spec = PlotSpec::new("Alignment: theory vs SGD", "SGD step", "alignment", "step")
        .with_series("theory_alignment", "theory")
        .with_series("empirical_alignment_mean", "SGD mean");
    let accuracy_svg = render_plot(&csv, &accuracy_spec)?;
    let alignment_svg = render_plot(&csv, &alignment_spec)?;
    println!(
        "mnist ({:?}, {} features, {} train / {} test): final accuracy theory {:.4} vs SGD {:.4}, \
         model-vs-data accuracy gap {:.4}",
        cfg.mode,
        cmp.feature_dim,
        cmp.train_samples,
        cmp.test_samples,
        cmp.theory.accuracy.last().unwrap(),
        cmp.empirical.accuracy_mean.last().unwrap(),
        cmp.fit_accuracy_gap,
    );
    ctx.emit(
        "mnist",
        &cfg,
        Some(cfg.seed),
        &[
            ("mnist.csv", &csv),
            ("mnist_accuracy.svg", &accuracy_svg),
            ("mnist_alignment.svg", &alignment_svg),
        ],
    )
}

// ---------------------------------------------------------------------------
// specfun-check

/// Verifies the special-function identities on dense grids and prints the
/// worst deviations; exits nonzero if any identity is violated.
pub fn run_specfun_check() -> Result<(), CliError> {
    let mut failures = 0;
    let mut report = |name: &str, max_dev: f64, tol: f64| {
        let ok = max_dev <= tol;
        if !ok {
            failures += 1;
        }
        println!("{}  {name}: max deviation {max_dev:.3e} (tolerance {tol:.0e})",
            if ok { "ok  " } else { "FAIL" });
    };

    let mut dev = 0.0f64;
    for i in 0..=600 {
        let z = -30.0 + 0.1 * i as f64;
        dev = dev.max((erf_sigmoid(z) + erf_sigmoid(-z) - 1.0).abs());
    }
    report("sigmoid complement φ(z) + φ(−z) = 1", dev, 1e-14);

    dev = 0.0;
    for i in 0..=320 {
        let z = -8.0 + 0.05 * i as f64;
        let rescaled = erf_sigmoid(z * (8.0 / std::f64::consts::PI).sqrt());
        dev = dev.max((normal_cdf(z) - rescaled).abs());
    }
    report("normal CDF as rescaled sigmoid", dev, 1e-12);

    dev = 0.0;
    for i in 0..=300 {
        let z = -6.0 + 0.04 * i as f64;
        let h = 1e-5;
        let fd = (erf_sigmoid(z + h) - erf_sigmoid(z - h)) / (2.0 * h);
        dev = dev.max((erf_sigmoid_deriv(z) - fd).abs());
    }
    report("sigmoid derivative vs central difference", dev, 1e-8);

    let mut sym = 0.0f64;
    let mut unit = 0.0f64;
    for i in 0..=80 {
        let h = -4.0 + 0.1 * i as f64;
        for j in 0..=60 {
            let a = -3.0 + 0.1 * j as f64;
            sym = sym.max((owens_t(h, -a) + owens_t(h, a)).abs());
            sym = sym.max((owens_t(-h, a) - owens_t(h, a)).abs());
        }
        let identity = 0.5 * normal_cdf(h) * (1.0 - normal_cdf(h));
        unit = unit.max((owens_t(h, 1.0) - identity).abs());
    }
    report("Owen's T antisymmetry in a, symmetry in h", sym, 1e-13);
    report("Owen's T at a = 1 vs CDF product", unit, 1e-10);

    if failures > 0 {
        return Err(CliError::numerical(format!("{failures} special-function identities violated")));
    }
    println!("all special-function identities hold");
    Ok(())
}
