//! The binary Gaussian classification task.
//!
//! Inputs are drawn from one of two multivariate normals with equal priors:
//! y = ±1 with probability ½ each, then x | y ~ N(μ^y, Σ^y). A linear
//! decision rule sign(w·x) has an exact accuracy under this model (two
//! half-space integrals), which is what the theory curves report.
//!
//! Covariances are kept in a structure-aware representation: the isotropic
//! and axis-split (anisotropic about μ) cases used by the sweeps admit O(N)
//! sampling and matrix-vector products, while empirical covariances (MNIST)
//! use a dense symmetric-eigendecomposition factor. The eigendecomposition
//! route — rather than Cholesky — is deliberate: empirical covariances are
//! rank-deficient, and PSD-with-zero-eigenvalues must be accepted.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::specfun::normal_cdf;

/// Relative floor for the PSD check: eigenvalues below
/// −1e−10·max(1, λ_max) reject the matrix; anything negative above that is
/// treated as rounding debris and clipped to zero.
const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("covariance is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("accuracy undefined: w is orthogonal to a class mean and its covariance is singular along w")]
    DegenerateAccuracy,
    #[error("anisotropy epsilon {0} outside (-1, 1)")]
    EpsilonOutOfRange(f64),
}

/// Structure-aware covariance: logically an N×N PSD matrix, stored in the
/// cheapest faithful form.
#[derive(Debug, Clone)]
pub enum Covariance {
    /// σ²·I (σ² may be zero).
    Isotropic { dim: usize, variance: f64 },
    /// var_par on the axis `dir` (unit vector), var_perp on its orthogonal
    /// complement: Σ = var_par·P∥ + var_perp·P⊥.
    AxisSplit {
        dir: DVector<f64>,
        var_par: f64,
        var_perp: f64,
    },
    /// Dense PSD matrix with a factor F satisfying F·Fᵀ = Σ when sampling is
    /// needed. `factor` is `None` for covariances known PSD by construction
    /// (empirical Gram matrices) where the eigendecomposition would be pure
    /// overhead; such covariances support everything except `add_noise`.
    Dense {
        matrix: DMatrix<f64>,
        factor: Option<DMatrix<f64>>,
    },
}

impl Covariance {
    pub fn isotropic(dim: usize, variance: f64) -> Self {
        assert!(variance >= 0.0, "negative variance");
        Covariance::Isotropic { dim, variance }
    }

    /// Builds the dense representation, validating PSD-ness via symmetric
    /// eigendecomposition and clipping rounding-level negative eigenvalues.
    pub fn dense(matrix: DMatrix<f64>) -> Result<Self, TaskError> {
        assert_eq!(matrix.nrows(), matrix.ncols(), "covariance must be square");
        let sym = 0.5 * (&matrix + matrix.transpose());
        let eig = sym.clone().symmetric_eigen();
        let max_eig = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if min_eig < -PSD_TOL * max_eig.max(1.0) {
            return Err(TaskError::NotPositiveSemidefinite {
                min_eigenvalue: min_eig,
            });
        }
        let mut factor = eig.eigenvectors.clone();
        for (j, lam) in eig.eigenvalues.iter().enumerate() {
            let s = lam.max(0.0).sqrt();
            factor.column_mut(j).scale_mut(s);
        }
        Ok(Covariance::Dense { matrix: sym, factor: Some(factor) })
    }

    /// Dense covariance that is PSD by construction (a Gram matrix such as
    /// an empirical covariance XᵀX/(n−1)). Skips the O(N³) validation —
    /// the matrix is only symmetrized — and does not support sampling.
    pub fn dense_gram(matrix: DMatrix<f64>) -> Self {
        assert_eq!(matrix.nrows(), matrix.ncols(), "covariance must be square");
        let sym = 0.5 * (&matrix + matrix.transpose());
        Covariance::Dense { matrix: sym, factor: None }
    }

    pub fn dim(&self) -> usize {
        match self {
            Covariance::Isotropic { dim, .. } => *dim,
            Covariance::AxisSplit { dir, .. } => dir.len(),
            Covariance::Dense { matrix, .. } => matrix.nrows(),
        }
    }

    /// Σ·v.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Covariance::Isotropic { variance, .. } => v * *variance,
            Covariance::AxisSplit { dir, var_par, var_perp } => {
                let along = dir.dot(v);
                v * *var_perp + dir * (along * (var_par - var_perp))
            }
            Covariance::Dense { matrix, .. } => matrix * v,
        }
    }

    /// vᵀ·Σ·v (clamped at zero against rounding).
    pub fn quad_form(&self, v: &DVector<f64>) -> f64 {
        let q = match self {
            Covariance::Isotropic { variance, .. } => variance * v.norm_squared(),
            Covariance::AxisSplit { dir, var_par, var_perp } => {
                let along = dir.dot(v);
                var_perp * v.norm_squared() + (var_par - var_perp) * along * along
            }
            Covariance::Dense { matrix, .. } => (matrix * v).dot(v),
        };
        q.max(0.0)
    }

    /// Adds one sample of N(0, Σ) to `out`.
    pub fn add_noise(&self, rng: &mut impl Rng, out: &mut DVector<f64>) {
        match self {
            Covariance::Isotropic { dim, variance } => {
                if *variance > 0.0 {
                    let sd = variance.sqrt();
                    for i in 0..*dim {
                        out[i] += sd * rng.sample::<f64, _>(StandardNormal);
                    }
                }
            }
            Covariance::AxisSplit { dir, var_par, var_perp } => {
                let n = dir.len();
                let mut z = DVector::<f64>::zeros(n);
                for i in 0..n {
                    z[i] = rng.sample::<f64, _>(StandardNormal);
                }
                let along = dir.dot(&z);
                let s_perp = var_perp.sqrt();
                let s_par = var_par.sqrt();
                out.axpy(s_perp, &z, 1.0);
                out.axpy((s_par - s_perp) * along, dir, 1.0);
            }
            Covariance::Dense { factor, .. } => {
                let factor = factor
                    .as_ref()
                    .expect("sampling requires a factored covariance (use Covariance::dense)");
                let k = factor.ncols();
                let mut z = DVector::<f64>::zeros(k);
                for i in 0..k {
                    z[i] = rng.sample::<f64, _>(StandardNormal);
                }
                out.gemv(1.0, factor, &z, 1.0);
            }
        }
    }

    /// Materializes the full matrix (tests, serialization, Jacobians).
    pub fn to_matrix(&self) -> DMatrix<f64> {
        match self {
            Covariance::Isotropic { dim, variance } => {
                DMatrix::identity(*dim, *dim) * *variance
            }
            Covariance::AxisSplit { dir, var_par, var_perp } => {
                let n = dir.len();
                let mut m = DMatrix::identity(n, n) * *var_perp;
                m.ger(var_par - var_perp, dir, dir, 1.0);
                m
            }
            Covariance::Dense { matrix, .. } => matrix.clone(),
        }
    }
}

/// The binary Gaussian task: class means and covariances, priors fixed ½/½.
#[derive(Debug, Clone)]
pub struct TaskSpec {
    mu_pos: DVector<f64>,
    mu_neg: DVector<f64>,
    cov_pos: Covariance,
    cov_neg: Covariance,
}

impl TaskSpec {
    pub fn new(
        mu_pos: DVector<f64>,
        mu_neg: DVector<f64>,
        cov_pos: Covariance,
        cov_neg: Covariance,
    ) -> Result<Self, TaskError> {
        let n = mu_pos.len();
        for got in [mu_neg.len(), cov_pos.dim(), cov_neg.dim()] {
            if got != n {
                return Err(TaskError::DimensionMismatch { expected: n, got });
            }
        }
        Ok(TaskSpec { mu_pos, mu_neg, cov_pos, cov_neg })
    }

    pub fn from_dense(
        mu_pos: DVector<f64>,
        mu_neg: DVector<f64>,
        sigma_pos: DMatrix<f64>,
        sigma_neg: DMatrix<f64>,
    ) -> Result<Self, TaskError> {
        TaskSpec::new(
            mu_pos,
            mu_neg,
            Covariance::dense(sigma_pos)?,
            Covariance::dense(sigma_neg)?,
        )
    }

    /// The symmetric task μ± = ±μ with shared isotropic noise σ²·I.
    pub fn symmetric_isotropic(mu: DVector<f64>, sigma: f64) -> Self {
        let n = mu.len();
        let cov = Covariance::isotropic(n, sigma * sigma);
        TaskSpec {
            mu_pos: mu.clone(),
            mu_neg: -mu,
            cov_pos: cov.clone(),
            cov_neg: cov,
        }
    }

    pub fn dim(&self) -> usize {
        self.mu_pos.len()
    }

    pub fn mu_pos(&self) -> &DVector<f64> {
        &self.mu_pos
    }

    pub fn mu_neg(&self) -> &DVector<f64> {
        &self.mu_neg
    }

    pub fn cov_pos(&self) -> &Covariance {
        &self.cov_pos
    }

    pub fn cov_neg(&self) -> &Covariance {
        &self.cov_neg
    }

    pub fn mean_for(&self, label: i8) -> &DVector<f64> {
        if label > 0 { &self.mu_pos } else { &self.mu_neg }
    }

    pub fn cov_for(&self, label: i8) -> &Covariance {
        if label > 0 { &self.cov_pos } else { &self.cov_neg }
    }

    /// Draws one labelled sample with the supplied generator, writing x into
    /// `x_out` (overwritten) and returning the label.
    pub fn sample_into(&self, rng: &mut impl Rng, x_out: &mut DVector<f64>) -> i8 {
        let label: i8 = if rng.gen_bool(0.5) { 1 } else { -1 };
        x_out.copy_from(self.mean_for(label));
        self.cov_for(label).add_noise(rng, x_out);
        label
    }

    /// Draws `count` labelled samples deterministically from `seed`.
    pub fn sample(&self, seed: u64, count: usize) -> Vec<(DVector<f64>, i8)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let mut x = DVector::zeros(self.dim());
            let y = self.sample_into(&mut rng, &mut x);
            out.push((x, y));
        }
        out
    }

    /// Exact accuracy of the deterministic classifier sign(w·x) under the
    /// Gaussian model:
    ///   ½·Φ((μ⁺·w)/√(wᵀΣ⁺w)) + ½·Φ(−(μ⁻·w)/√(wᵀΣ⁻w)).
    ///
    /// w = 0 classifies every point as a tie; with the tie counted wrong for
    /// both classes the symmetric-prior average is exactly ½, which is what
    /// is returned. A singular covariance along w degenerates the class term
    /// to a step function (0 or 1) unless the mean also lies on the
    /// hyperplane, in which case the value is undefined and an error is
    /// reported.
    pub fn model_accuracy(&self, w: &DVector<f64>) -> Result<f64, TaskError> {
        if w.norm_squared() == 0.0 {
            return Ok(0.5);
        }
        let pos = half_space_prob(self.mu_pos.dot(w), self.cov_pos.quad_form(w))?;
        let neg = half_space_prob(-self.mu_neg.dot(w), self.cov_neg.quad_form(w))?;
        Ok(0.5 * pos + 0.5 * neg)
    }
}

/// P(projected Gaussian > 0) for projection mean `m` and variance `v`.
fn half_space_prob(m: f64, v: f64) -> Result<f64, TaskError> {
    if v > 0.0 {
        Ok(normal_cdf(m / v.sqrt()))
    } else if m > 0.0 {
        Ok(1.0)
    } else if m < 0.0 {
        Ok(0.0)
    } else {
        Err(TaskError::DegenerateAccuracy)
    }
}

/// The canonical symmetric task family: μ± = ±μ, isotropic scale σ, and an
/// anisotropy split ε that moves variance into (ε > 0) or out of (ε < 0) the
/// decoding direction while keeping the total variance budget fixed:
///
///   Σ = σ²·[ I + ε·( P∥ − P⊥/(N−1) ) ]
///     = σ²(1+ε)·P∥ + σ²(1 − ε/(N−1))·P⊥.
///
/// At N = 2 this is exactly the (σ∥², σ⊥²) = σ²(1±ε) split; for any N the
/// trace is σ²N for every ε.
#[derive(Debug, Clone)]
pub struct IsotropicTaskParams {
    pub mu: DVector<f64>,
    pub sigma: f64,
    pub epsilon: f64,
}

impl IsotropicTaskParams {
    pub fn new(mu: DVector<f64>, sigma: f64, epsilon: f64) -> Result<Self, TaskError> {
        if !(-1.0..1.0).contains(&epsilon) {
            return Err(TaskError::EpsilonOutOfRange(epsilon));
        }
        Ok(IsotropicTaskParams { mu, sigma, epsilon })
    }

    pub fn to_task_spec(&self) -> TaskSpec {
        let n = self.mu.len();
        let s2 = self.sigma * self.sigma;
        if self.epsilon == 0.0 || self.sigma == 0.0 {
            return TaskSpec::symmetric_isotropic(self.mu.clone(), self.sigma);
        }
        let dir = &self.mu / self.mu.norm();
        let cov = Covariance::AxisSplit {
            dir,
            var_par: s2 * (1.0 + self.epsilon),
            var_perp: s2 * (1.0 - self.epsilon / (n as f64 - 1.0)),
        };
        TaskSpec {
            mu_pos: self.mu.clone(),
            mu_neg: -self.mu.clone(),
            cov_pos: cov.clone(),
            cov_neg: cov,
        }
    }
}

/// JSON-facing task description: either the symmetric shorthand
/// {dim, mu, sigma, epsilon} or fully general means + covariance matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TaskConfig {
    Symmetric {
        mu: Vec<f64>,
        sigma: f64,
        #[serde(default)]
        epsilon: f64,
    },
    General {
        mu_pos: Vec<f64>,
        mu_neg: Vec<f64>,
        sigma_pos: Vec<Vec<f64>>,
        sigma_neg: Vec<Vec<f64>>,
    },
}

impl TaskConfig {
    pub fn to_task_spec(&self) -> Result<TaskSpec, TaskError> {
        match self {
            TaskConfig::Symmetric { mu, sigma, epsilon } => {
                let mu = DVector::from_row_slice(mu);
                Ok(IsotropicTaskParams::new(mu, *sigma, *epsilon)?.to_task_spec())
            }
            TaskConfig::General { mu_pos, mu_neg, sigma_pos, sigma_neg } => {
                let n = mu_pos.len();
                let dense = |rows: &Vec<Vec<f64>>| -> Result<DMatrix<f64>, TaskError> {
                    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                        return Err(TaskError::DimensionMismatch {
                            expected: n,
                            got: rows.len(),
                        });
                    }
                    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
                };
                TaskSpec::from_dense(
                    DVector::from_row_slice(mu_pos),
                    DVector::from_row_slice(mu_neg),
                    dense(sigma_pos)?,
                    dense(sigma_neg)?,
                )
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    fn unit_x(n: usize) -> DVector<f64> {
        let mut v = DVector::zeros(n);
        v[0] = 1.0;
        v
    }

    #[test]
    fn zero_covariance_sampling_is_deterministic_means() {
        let task = TaskSpec::symmetric_isotropic(unit_x(3), 0.0);
        for (x, y) in task.sample(7, 50) {
            let expect = task.mean_for(y);
            assert_eq!(&x, expect, "degenerate class-{y} sample must equal its mean");
        }
    }

    #[test]
    fn identical_seed_identical_samples() {
        let task = TaskSpec::symmetric_isotropic(unit_x(4), 0.7);
        let a = task.sample(99, 20);
        let b = task.sample(99, 20);
        for ((xa, ya), (xb, yb)) in a.iter().zip(&b) {
            assert_eq!(ya, yb);
            assert_eq!(xa, xb);
        }
    }

    #[test]
    fn sample_mean_matches_class_mean() {
        // Law-of-large-numbers check on the positive class, 10⁶ draws.
        let n = 4;
        let mu = DVector::from_row_slice(&[0.3, -0.2, 0.9, 0.05]);
        let task = TaskSpec::symmetric_isotropic(mu.clone(), 0.8);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut count = 0usize;
        let mut sum = DVector::<f64>::zeros(n);
        let mut x = DVector::zeros(n);
        while count < 1_000_000 {
            let y = task.sample_into(&mut rng, &mut x);
            if y > 0 {
                sum += &x;
                count += 1;
            }
        }
        let mean = sum / count as f64;
        let se = 0.8 / (count as f64).sqrt();
        for i in 0..n {
            assert!(
                (mean[i] - mu[i]).abs() < 5.0 * se,
                "component {i}: sample mean {} vs {} (5·SE = {})",
                mean[i],
                mu[i],
                5.0 * se
            );
        }
    }

    #[test]
    fn axis_split_matches_dense_covariance() {
        let mu = DVector::from_row_slice(&[0.6, 0.8, 0.0]);
        let params = IsotropicTaskParams::new(mu, 0.9, 0.5).unwrap();
        let task = params.to_task_spec();
        let dense = task.cov_pos().to_matrix();
        // Trace is preserved at σ²·N for any ε.
        assert_abs_diff_eq!(dense.trace(), 0.81 * 3.0, epsilon = 1e-12);
        // Quadratic form along μ’s unit vector gives σ²(1+ε).
        let dir = task.mu_pos() / task.mu_pos().norm();
        assert_abs_diff_eq!(task.cov_pos().quad_form(&dir), 0.81 * 1.5, epsilon = 1e-12);
        // apply() agrees with the materialized matrix on random vectors.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let v = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
            let fast = task.cov_pos().apply(&v);
            let slow = &dense * &v;
            assert!((fast - slow).norm() < 1e-12);
        }
    }

    #[test]
    fn dense_construction_rejects_indefinite_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        match Covariance::dense(m) {
            Err(TaskError::NotPositiveSemidefinite { min_eigenvalue }) => {
                assert!(min_eigenvalue < -0.4);
            }
            other => panic!("expected PSD rejection, got {other:?}"),
        }
    }

    #[test]
    fn dense_construction_clips_rounding_negatives() {
        // Rank-one PSD matrix perturbed at the rounding level.
        let v = DVector::from_row_slice(&[1.0, 2.0, -1.0]);
        let mut m = DMatrix::zeros(3, 3);
        m.ger(1.0, &v, &v, 1.0);
        m[(0, 0)] -= 1e-13;
        let cov = Covariance::dense(m).expect("rounding-level negative must be clipped");
        if let Covariance::Dense { factor: Some(factor), matrix } = &cov {
            let rebuilt = factor * factor.transpose();
            assert!((rebuilt - matrix).norm() < 1e-9);
        } else {
            panic!("factored dense expected");
        }
    }

    #[test]
    fn gram_covariance_supports_everything_but_sampling() {
        let v = DVector::from_row_slice(&[1.0, 2.0, -1.0]);
        let mut m = DMatrix::zeros(3, 3);
        m.ger(1.0, &v, &v, 1.0);
        let gram = Covariance::dense_gram(m.clone());
        let full = Covariance::dense(m).unwrap();
        let probe = DVector::from_row_slice(&[0.3, -0.5, 0.2]);
        assert!((gram.apply(&probe) - full.apply(&probe)).norm() < 1e-12);
        assert_abs_diff_eq!(gram.quad_form(&probe), full.quad_form(&probe), epsilon = 1e-12);
        assert!((gram.to_matrix() - full.to_matrix()).norm() < 1e-12);
    }

    #[test]
    fn accuracy_half_when_w_orthogonal_to_means() {
        let task = TaskSpec::symmetric_isotropic(unit_x(3), 1.0);
        let mut w = DVector::zeros(3);
        w[1] = 2.0;
        assert_abs_diff_eq!(task.model_accuracy(&w).unwrap(), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn accuracy_aligned_unit_mean_sigma_one_is_phi_one() {
        let task = TaskSpec::symmetric_isotropic(unit_x(5), 1.0);
        let w = unit_x(5) * 3.7;
        assert_abs_diff_eq!(
            task.model_accuracy(&w).unwrap(),
            normal_cdf(1.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn accuracy_scale_invariant_in_w() {
        let mu = DVector::from_row_slice(&[0.3, -0.4, 0.2, 0.6]);
        let task = TaskSpec::symmetric_isotropic(mu, 0.7);
        let w = DVector::from_row_slice(&[0.9, 0.1, -0.3, 0.2]);
        let base = task.model_accuracy(&w).unwrap();
        for c in [1e-3, 0.5, 42.0] {
            assert_abs_diff_eq!(task.model_accuracy(&(&w * c)).unwrap(), base, epsilon = 1e-13);
        }
    }

    #[test]
    fn accuracy_zero_weight_tie_rule() {
        let task = TaskSpec::symmetric_isotropic(unit_x(2), 0.3);
        assert_eq!(task.model_accuracy(&DVector::zeros(2)).unwrap(), 0.5);
    }

    #[test]
    fn accuracy_degenerate_cases() {
        let task = TaskSpec::symmetric_isotropic(unit_x(2), 0.0);
        // Singular covariance but means off the hyperplane: hard 0/1 halves.
        let w = unit_x(2);
        assert_eq!(task.model_accuracy(&w).unwrap(), 1.0);
        // Means on the hyperplane with zero variance along w: undefined.
        let mut w_perp = DVector::zeros(2);
        w_perp[1] = 1.0;
        assert!(matches!(
            task.model_accuracy(&w_perp),
            Err(TaskError::DegenerateAccuracy)
        ));
    }

    #[test]
    fn symmetric_task_accuracy_complement() {
        let mu = DVector::from_row_slice(&[0.5, 0.2, -0.7]);
        let task = TaskSpec::symmetric_isotropic(mu, 1.3);
        let w = DVector::from_row_slice(&[0.1, -0.9, 0.4]);
        let a = task.model_accuracy(&w).unwrap();
        let b = task.model_accuracy(&(-&w)).unwrap();
        assert_abs_diff_eq!(a + b, 1.0, epsilon = 1e-13);
    }

    #[test]
    fn task_config_round_trip() {
        let json = r#"{"mu": [1.0, 0.0], "sigma": 0.5, "epsilon": 0.25}"#;
        let cfg: TaskConfig = serde_json::from_str(json).unwrap();
        let task = cfg.to_task_spec().unwrap();
        assert_eq!(task.dim(), 2);
        let along = task.cov_pos().quad_form(task.mu_pos());
        assert_abs_diff_eq!(along, 0.25 * 1.25, epsilon = 1e-12);

        let general = r#"{
            "mu_pos": [0.2, 0.1], "mu_neg": [-0.2, -0.1],
            "sigma_pos": [[1.0, 0.0], [0.0, 2.0]],
            "sigma_neg": [[0.5, 0.1], [0.1, 0.5]]
        }"#;
        let cfg: TaskConfig = serde_json::from_str(general).unwrap();
        let task = cfg.to_task_spec().unwrap();
        assert_eq!(task.cov_neg().to_matrix()[(0, 1)], 0.1);
    }
}
