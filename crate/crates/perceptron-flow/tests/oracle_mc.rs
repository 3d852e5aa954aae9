//! Monte Carlo oracles: closed-form drifts, model accuracy, and the
//! simulator's update steps are compared against direct sampling of their
//! defining expectations. Tolerances are 3 standard errors with pinned
//! seeds, so the suite is deterministic.

mod common;

use common::{mc_drift, random_dense_task, random_weights, McRule};
use nalgebra::DVector;
use perceptron_flow::drift::{drift, rl_drift, sl_drift, Activation, Rule, RuleConfig};
use perceptron_flow::simulate::{
    analytic_reward_mean, rl_step, run_rl, sl_step, BaselineConfig, SimConfig,
};
use perceptron_flow::task::TaskSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn closed_form_drifts_match_sampled_update_means() {
    // Fast guard at 10⁶ samples over six random instances; the full 20 ×
    // 10⁷ sweep runs in the acceptance gate.
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let mut case = 0u64;
    for n in [2usize, 5, 10] {
        for _ in 0..2 {
            let task = random_dense_task(&mut rng, n);
            let w = random_weights(&mut rng, n);
            let lambda = rng.gen_range(0.0..0.5);
            let sl = mc_drift(
                &task,
                McRule::Supervised,
                lambda,
                Activation::ErfSigmoid,
                &w,
                1_000_000,
                900 + case,
            );
            let worst = sl.max_sigma_deviation(&sl_drift(&task, &w, lambda));
            assert!(worst <= 3.0, "SL case {case} (N={n}): {worst:.2} SE");
            let rl = mc_drift(
                &task,
                McRule::Reinforce,
                lambda,
                Activation::ErfSigmoid,
                &w,
                1_000_000,
                1900 + case,
            );
            let worst = rl.max_sigma_deviation(&rl_drift(&task, &w, lambda));
            assert!(worst <= 3.0, "RL case {case} (N={n}): {worst:.2} SE");
            case += 1;
        }
    }
}

#[test]
fn model_accuracy_matches_monte_carlo_classification() {
    // Exact Gaussian half-space accuracy vs the empirical sign(w·x) hit rate
    // over 10⁶ labelled samples, within 3 binomial standard errors.
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for case in 0..3 {
        let task = random_dense_task(&mut rng, 10);
        let w = random_weights(&mut rng, 10);
        let exact = task.model_accuracy(&w).unwrap();
        let samples: usize = 1_000_000;
        let mut hits = 0u64;
        let mut sample_rng = ChaCha8Rng::seed_from_u64(5000 + case);
        let mut x = DVector::zeros(10);
        for _ in 0..samples {
            let y = task.sample_into(&mut sample_rng, &mut x);
            let z = w.dot(&x);
            if z != 0.0 && (z > 0.0) == (y > 0) {
                hits += 1;
            }
        }
        let rate = hits as f64 / samples as f64;
        let se = (exact * (1.0 - exact) / samples as f64).sqrt().max(1e-9);
        let dev = (rate - exact).abs() / se;
        assert!(dev <= 3.0, "case {case}: accuracy off by {dev:.2} binomial SE");
    }
}

#[test]
fn one_step_update_mean_is_eta_times_drift() {
    // The simulator's step functions, averaged over 10⁷ fresh draws at fixed
    // w, must reproduce η·drift(w) for both rules within 3 SE per component.
    let mut task_rng = ChaCha8Rng::seed_from_u64(303);
    let task = random_dense_task(&mut task_rng, 5);
    let w0 = random_weights(&mut task_rng, 5);
    let (eta, lambda) = (0.05, 0.1);
    let samples: usize = 10_000_000;

    for rule in [Rule::Sl, Rule::Rl] {
        let expected = eta * drift(&task, &w0, &RuleConfig::new(rule, lambda));
        let mut rng = ChaCha8Rng::seed_from_u64(404 + rule as u64);
        let mut sum = DVector::<f64>::zeros(5);
        let mut sum_sq = DVector::<f64>::zeros(5);
        let mut x = DVector::zeros(5);
        for _ in 0..samples {
            let y = task.sample_into(&mut rng, &mut x);
            let mut w = w0.clone();
            match rule {
                Rule::Sl => sl_step(&mut w, &x, y, eta, lambda, Activation::ErfSigmoid),
                Rule::Rl => {
                    // Zero baseline: constants do not move the mean update.
                    rl_step(&mut w, &x, y, eta, lambda, Activation::ErfSigmoid, 0.0, &mut rng);
                }
            }
            let delta = &w - &w0;
            for i in 0..5 {
                sum[i] += delta[i];
                sum_sq[i] += delta[i] * delta[i];
            }
        }
        let nf = samples as f64;
        for i in 0..5 {
            let mean = sum[i] / nf;
            let var = ((sum_sq[i] - nf * mean * mean) / (nf - 1.0)).max(0.0);
            let se = (var / nf).sqrt().max(1e-300);
            let dev = (mean - expected[i]).abs() / se;
            assert!(dev <= 3.0, "{rule:?} component {i}: {dev:.2} SE");
        }
    }
}

#[test]
fn reward_baseline_choice_does_not_move_the_mean_trajectory() {
    // Analytic vs moving-average baselines change the variance of the
    // policy-gradient update, never its mean: ensemble means must agree
    // within 3 combined standard errors at every record.
    let task = TaskSpec::symmetric_isotropic(DVector::from_row_slice(&[1.0, 0.3, -0.2]), 0.8);
    let w0 = DVector::from_row_slice(&[0.2, -0.1, 0.05]);
    let base = SimConfig::new(0.02, 400, 4000, 606)
        .with_activation(Activation::ErfSigmoid)
        .with_record_every(100);
    let ema = run_rl(&task, 0.05, &w0, &base.clone().with_baseline(BaselineConfig::default()))
        .unwrap();
    let analytic = run_rl(
        &task,
        0.05,
        &w0,
        &SimConfig { seed: 707, ..base }.with_baseline(BaselineConfig::analytic()),
    )
    .unwrap();
    for r in 0..ema.len() {
        let se_a = ema.mean_standard_error(r);
        let se_b = analytic.mean_standard_error(r);
        for i in 0..3 {
            let se = (se_a[i] * se_a[i] + se_b[i] * se_b[i]).sqrt().max(1e-300);
            let dev = (ema.mean[r][i] - analytic.mean[r][i]).abs() / se;
            assert!(dev <= 3.0, "record {r} component {i}: {dev:.2} SE");
        }
    }
    // The analytic baseline itself must equal the sampled reward mean at the
    // initial weights (cross-check of its closed form): estimate ⟨yŷ⟩.
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut x = DVector::zeros(3);
    let samples = 2_000_000;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..samples {
        let y = task.sample_into(&mut rng, &mut x);
        let p_plus = Activation::ErfSigmoid.eval(w0.dot(&x)).clamp(0.0, 1.0);
        let y_hat: f64 = if rng.gen_bool(p_plus) { 1.0 } else { -1.0 };
        let r = f64::from(y) * y_hat;
        sum += r;
        sum_sq += r * r;
    }
    let mean = sum / samples as f64;
    let var = (sum_sq - samples as f64 * mean * mean) / (samples as f64 - 1.0);
    let se = (var / samples as f64).sqrt();
    let dev = (mean - analytic_reward_mean(&task, &w0)).abs() / se;
    assert!(dev <= 3.0, "analytic reward mean off by {dev:.2} SE");
}

#[test]
fn halving_eta_preserves_the_continuous_time_trajectory() {
    // η → η/2 with twice the steps must give the same ensemble-mean
    // trajectory against continuous time t = η·step, within 3 combined SE
    // (plus the O(η) discretization bias, which at these rates is well
    // below the statistical resolution).
    let task = TaskSpec::symmetric_isotropic(DVector::from_row_slice(&[1.0, 0.0, 0.0, 0.0]), 0.5);
    let w0 = DVector::from_row_slice(&[0.3, 0.2, 0.0, -0.1]);
    let coarse = SimConfig::new(0.02, 500, 3000, 909)
        .with_activation(Activation::ErfSigmoid)
        .with_record_every(125);
    let fine = SimConfig::new(0.01, 1000, 3000, 910)
        .with_activation(Activation::ErfSigmoid)
        .with_record_every(250);
    let a = perceptron_flow::simulate::run_sl(&task, 0.2, &w0, &coarse).unwrap();
    let b = perceptron_flow::simulate::run_sl(&task, 0.2, &w0, &fine).unwrap();
    assert_eq!(a.times, b.times, "record grids must line up in continuous time");
    for r in 1..a.len() {
        let se_a = a.mean_standard_error(r);
        let se_b = b.mean_standard_error(r);
        for i in 0..4 {
            let se = (se_a[i] * se_a[i] + se_b[i] * se_b[i]).sqrt().max(1e-300);
            let dev = (a.mean[r][i] - b.mean[r][i]).abs() / se;
            assert!(dev <= 3.0, "t={} component {i}: {dev:.2} SE", a.times[r]);
        }
    }
}
