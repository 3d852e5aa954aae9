//! Real-data validation on MNIST digits 0 and 1: load the canonical IDX
//! files, optionally expand each image through a Gabor filter bank, fit one
//! Gaussian per class, and compare
//!
//! * the **theory curve** — the supervised flow ODE integrated with the
//!   empirical class means/covariances, with accuracy computed by Gaussian
//!   half-space integrals — against
//! * the **empirical curve** — an actual online SGD perceptron trained on
//!   the same features, test accuracy measured on the held-out split.
//!
//! Digit `1` is the positive class. Following the fitting convention, all
//! feature vectors are globally translated so the pooled training mean is
//! zero; the same shift is applied to the test set. Both curves start from
//! w = 0 so they share their initial condition, and "alignment" always means
//! the cosine between w and the (shifted) digit-1 class mean.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::drift::Activation;
use crate::flow::{alignment_with, integrate_mean_flow, FlowConfig, FlowError};
use crate::simulate::sl_step;
use crate::task::{Covariance, TaskError, TaskSpec};

use std::f64::consts::PI;
use std::io::Read;
use std::path::{Path, PathBuf};

/// The four canonical MNIST files: name, gzip archive name, and SHA-256 of
/// the decompressed IDX payload.
pub const CANONICAL_FILES: [(&str, &str, &str); 4] = [
    (
        "train-images-idx3-ubyte",
        "train-images-idx3-ubyte.gz",
        "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db",
    ),
    (
        "train-labels-idx1-ubyte",
        "train-labels-idx1-ubyte.gz",
        "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5",
    ),
    (
        "t10k-images-idx3-ubyte",
        "t10k-images-idx3-ubyte.gz",
        "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7",
    ),
    (
        "t10k-labels-idx1-ubyte",
        "t10k-labels-idx1-ubyte.gz",
        "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2",
    ),
];

const MIRROR_BASE: &str = "https://ossci-datasets.s3.amazonaws.com/mnist";

#[derive(Debug, Error)]
pub enum MnistError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: invalid IDX data at byte {offset}: {message}")]
    Format { path: String, offset: usize, message: String },
    #[error("{file}: checksum mismatch (expected {expected}, got {got})")]
    ChecksumMismatch { file: String, expected: String, got: String },
    #[error("download of {file} failed: {message}")]
    Fetch { file: String, message: String },
    #[error("class {0} has fewer than 2 samples")]
    MissingClass(i8),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("flow integration diverged")]
    Diverged,
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Task(#[from] TaskError),
}

fn io_err(path: &Path, source: std::io::Error) -> MnistError {
    MnistError::Io { path: path.display().to_string(), source }
}

// ---------------------------------------------------------------------------
// IDX input/output
// ---------------------------------------------------------------------------

/// Images from one IDX file, pixel values scaled to [0, 1].
#[derive(Debug, Clone)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub images: Vec<Vec<f64>>,
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32, MnistError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| MnistError::Format {
            path: path.display().to_string(),
            offset,
            message: "unexpected end of file".into(),
        })
}

/// Reads an IDX image file (magic 0x00000803, big-endian dimensions).
pub fn load_idx_images(path: &Path) -> Result<IdxImages, MnistError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != 0x0000_0803 {
        return Err(MnistError::Format {
            path: path.display().to_string(),
            offset: 0,
            message: format!("bad magic {magic:#010x}, expected 0x00000803"),
        });
    }
    let count = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let expected = 16 + count * rows * cols;
    if bytes.len() < expected {
        return Err(MnistError::Format {
            path: path.display().to_string(),
            offset: bytes.len(),
            message: format!("file truncated: need {expected} bytes for {count} images"),
        });
    }
    let images = (0..count)
        .map(|i| {
            let start = 16 + i * rows * cols;
            bytes[start..start + rows * cols].iter().map(|&b| f64::from(b) / 255.0).collect()
        })
        .collect();
    Ok(IdxImages { rows, cols, images })
}

/// Reads an IDX label file (magic 0x00000801).
pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>, MnistError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != 0x0000_0801 {
        return Err(MnistError::Format {
            path: path.display().to_string(),
            offset: 0,
            message: format!("bad magic {magic:#010x}, expected 0x00000801"),
        });
    }
    let count = be_u32(&bytes, 4, path)? as usize;
    if bytes.len() < 8 + count {
        return Err(MnistError::Format {
            path: path.display().to_string(),
            offset: bytes.len(),
            message: format!("file truncated: need {} bytes for {count} labels", 8 + count),
        });
    }
    Ok(bytes[8..8 + count].to_vec())
}

/// Writes images (values in [0,1], quantized to bytes) in IDX format.
pub fn write_idx_images(
    path: &Path,
    rows: usize,
    cols: usize,
    images: &[Vec<f64>],
) -> Result<(), MnistError> {
    let mut bytes = Vec::with_capacity(16 + images.len() * rows * cols);
    bytes.extend_from_slice(&0x0000_0803u32.to_be_bytes());
    bytes.extend_from_slice(&(images.len() as u32).to_be_bytes());
    bytes.extend_from_slice(&(rows as u32).to_be_bytes());
    bytes.extend_from_slice(&(cols as u32).to_be_bytes());
    for img in images {
        assert_eq!(img.len(), rows * cols, "image size mismatch");
        bytes.extend(img.iter().map(|&v| (v * 255.0).round() as u8));
    }
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

/// Writes labels in IDX format.
pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<(), MnistError> {
    let mut bytes = Vec::with_capacity(8 + labels.len());
    bytes.extend_from_slice(&0x0000_0801u32.to_be_bytes());
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    bytes.extend_from_slice(labels);
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

// ---------------------------------------------------------------------------
// Dataset acquisition
// ---------------------------------------------------------------------------

/// Images of digits 0/1 with labels mapped to −1/+1 (digit 1 positive).
#[derive(Debug, Clone)]
pub struct LabeledImages {
    pub rows: usize,
    pub cols: usize,
    pub images: Vec<Vec<f64>>,
    pub labels: Vec<i8>,
}

/// The binary 0-vs-1 task with the official train/test split.
#[derive(Debug, Clone)]
pub struct BinaryMnist {
    pub train: LabeledImages,
    pub test: LabeledImages,
}

/// Dataset directory: `$PERCEPTRON_FLOW_DATA`, else
/// `$HOME/.cache/perceptron-flow/mnist`.
pub fn default_data_dir() -> PathBuf {
    if let Ok(dir) = std::env::var("PERCEPTRON_FLOW_DATA") {
        return PathBuf::from(dir);
    }
    let home = std::env::var("HOME").unwrap_or_else(|_| ".".into());
    PathBuf::from(home).join(".cache/perceptron-flow/mnist")
}

fn filter_binary(idx: IdxImages, labels: &[u8], path: &Path) -> Result<LabeledImages, MnistError> {
    if idx.images.len() != labels.len() {
        return Err(MnistError::Format {
            path: path.display().to_string(),
            offset: 0,
            message: format!(
                "image/label count mismatch: {} images vs {} labels",
                idx.images.len(),
                labels.len()
            ),
        });
    }
    let mut images = Vec::new();
    let mut out_labels = Vec::new();
    for (img, &lab) in idx.images.into_iter().zip(labels) {
        match lab {
            0 => {
                images.push(img);
                out_labels.push(-1);
            }
            1 => {
                images.push(img);
                out_labels.push(1);
            }
            _ => {}
        }
    }
    Ok(LabeledImages { rows: idx.rows, cols: idx.cols, images, labels: out_labels })
}

/// Loads the 0/1 subsets of the canonical files from `dir`.
pub fn load_binary_mnist(dir: &Path) -> Result<BinaryMnist, MnistError> {
    let train_images = load_idx_images(&dir.join(CANONICAL_FILES[0].0))?;
    let train_labels = load_idx_labels(&dir.join(CANONICAL_FILES[1].0))?;
    let test_images = load_idx_images(&dir.join(CANONICAL_FILES[2].0))?;
    let test_labels = load_idx_labels(&dir.join(CANONICAL_FILES[3].0))?;
    Ok(BinaryMnist {
        train: filter_binary(train_images, &train_labels, &dir.join(CANONICAL_FILES[0].0))?,
        test: filter_binary(test_images, &test_labels, &dir.join(CANONICAL_FILES[2].0))?,
    })
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Verifies the SHA-256 digests of the four canonical files in `dir`.
pub fn verify_canonical_checksums(dir: &Path) -> Result<(), MnistError> {
    for (name, _, expected) in CANONICAL_FILES {
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| io_err(&path, e))?;
        let got = sha256_hex(&bytes);
        if got != expected {
            return Err(MnistError::ChecksumMismatch {
                file: name.into(),
                expected: expected.into(),
                got,
            });
        }
    }
    Ok(())
}

/// Downloads any missing/corrupt canonical file into `dir` (gzip archives
/// from a public mirror, decompressed and checksum-verified before writing).
pub fn fetch_mnist(dir: &Path) -> Result<(), MnistError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for (name, archive, expected) in CANONICAL_FILES {
        let target = dir.join(name);
        if let Ok(bytes) = std::fs::read(&target) {
            if sha256_hex(&bytes) == expected {
                continue;
            }
        }
        let url = format!("{MIRROR_BASE}/{archive}");
        let fetch_err = |message: String| MnistError::Fetch { file: name.into(), message };
        let response = ureq::get(&url).call().map_err(|e| fetch_err(e.to_string()))?;
        let mut compressed = Vec::new();
        response
            .into_reader()
            .read_to_end(&mut compressed)
            .map_err(|e| fetch_err(e.to_string()))?;
        let mut decoder = flate2::read::GzDecoder::new(compressed.as_slice());
        let mut bytes = Vec::new();
        decoder.read_to_end(&mut bytes).map_err(|e| fetch_err(e.to_string()))?;
        let got = sha256_hex(&bytes);
        if got != expected {
            return Err(MnistError::ChecksumMismatch {
                file: name.into(),
                expected: expected.into(),
                got,
            });
        }
        std::fs::write(&target, bytes).map_err(|e| io_err(&target, e))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Gabor filter bank
// ---------------------------------------------------------------------------

/// Log-spaced multi-scale, multi-orientation Gabor bank evaluated on a
/// regular grid of patch centers. Defaults give 5 scales × 8 orientations ×
/// a 6×6 grid = 1440 features on 28×28 images.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GaborBankConfig {
    pub scales: usize,
    pub orientations: usize,
    /// Odd kernel side length.
    pub kernel_size: usize,
    /// Grid stride between patch centers (offset = stride/2).
    pub downsample: usize,
}

impl Default for GaborBankConfig {
    fn default() -> Self {
        GaborBankConfig { scales: 5, orientations: 8, kernel_size: 39, downsample: 5 }
    }
}

impl GaborBankConfig {
    fn grid(&self, extent: usize) -> Vec<usize> {
        (self.downsample / 2..extent).step_by(self.downsample).collect()
    }

    /// Feature dimension for images of the given size.
    pub fn num_filters(&self, rows: usize, cols: usize) -> usize {
        self.scales * self.orientations * self.grid(rows).len() * self.grid(cols).len()
    }

    pub fn validate(&self, rows: usize, cols: usize) -> Result<(), MnistError> {
        if self.scales == 0 || self.orientations == 0 {
            return Err(MnistError::Config("need at least one scale and orientation".into()));
        }
        if self.kernel_size % 2 == 0 {
            return Err(MnistError::Config(format!(
                "kernel size {} must be odd",
                self.kernel_size
            )));
        }
        if self.downsample == 0 || self.grid(rows).is_empty() || self.grid(cols).is_empty() {
            return Err(MnistError::Config(format!(
                "downsample {} leaves no patch centers on a {rows}×{cols} image",
                self.downsample
            )));
        }
        Ok(())
    }
}

/// One complex Gabor kernel, sampled on the square window.
struct GaborKernel {
    re: Vec<f64>,
    im: Vec<f64>,
    size: usize,
}

impl GaborKernel {
    /// Frequency-normalized form with peak frequency f, aspect parameters
    /// γ = η = √2, at orientation θ:
    ///   ψ(x, y) = (f²/(πγη))·exp(−f²(x′²/γ² + y′²/η²))·exp(i·2πf·x′)
    /// with (x′, y′) the coordinates rotated by θ.
    fn build(f: f64, theta: f64, size: usize) -> Self {
        let gamma = 2.0f64.sqrt();
        let eta = 2.0f64.sqrt();
        let half = (size / 2) as isize;
        let amp = f * f / (PI * gamma * eta);
        let (sin_t, cos_t) = theta.sin_cos();
        let mut re = vec![0.0; size * size];
        let mut im = vec![0.0; size * size];
        for dy in -half..=half {
            for dx in -half..=half {
                let (x, y) = (dx as f64, dy as f64);
                let xp = x * cos_t + y * sin_t;
                let yp = -x * sin_t + y * cos_t;
                let envelope =
                    amp * (-f * f * (xp * xp / (gamma * gamma) + yp * yp / (eta * eta))).exp();
                let phase = 2.0 * PI * f * xp;
                let idx = ((dy + half) * size as isize + (dx + half)) as usize;
                re[idx] = envelope * phase.cos();
                im[idx] = envelope * phase.sin();
            }
        }
        GaborKernel { re, im, size }
    }

    /// |response| of the kernel centered at (cx, cy), zero-padded boundary.
    fn magnitude_at(&self, img: &[f64], rows: usize, cols: usize, cx: usize, cy: usize) -> f64 {
        let half = (self.size / 2) as isize;
        let (mut acc_re, mut acc_im) = (0.0, 0.0);
        for dy in -half..=half {
            let y = cy as isize + dy;
            if y < 0 || y >= rows as isize {
                continue;
            }
            let krow = ((dy + half) * self.size as isize) as usize;
            let irow = y as usize * cols;
            for dx in -half..=half {
                let x = cx as isize + dx;
                if x < 0 || x >= cols as isize {
                    continue;
                }
                let px = img[irow + x as usize];
                if px == 0.0 {
                    continue;
                }
                let k = krow + (dx + half) as usize;
                acc_re += px * self.re[k];
                acc_im += px * self.im[k];
            }
        }
        (acc_re * acc_re + acc_im * acc_im).sqrt()
    }
}

/// Builds the kernels in feature order: scale-major, then orientation.
/// Peak frequencies are log-spaced downward from ¼ cycles/pixel by √2.
fn build_bank(cfg: &GaborBankConfig) -> Vec<GaborKernel> {
    let f_max = 0.25;
    let mut kernels = Vec::with_capacity(cfg.scales * cfg.orientations);
    for u in 0..cfg.scales {
        let f = f_max / 2.0f64.powf(u as f64 / 2.0);
        for v in 0..cfg.orientations {
            let theta = v as f64 * PI / cfg.orientations as f64;
            kernels.push(GaborKernel::build(f, theta, cfg.kernel_size));
        }
    }
    kernels
}

/// Feature vectors (filter-response magnitudes) for a batch of images.
/// Feature layout: scale-major, orientation, then row-major grid position.
pub fn gabor_features(
    images: &[Vec<f64>],
    rows: usize,
    cols: usize,
    cfg: &GaborBankConfig,
) -> Result<Vec<DVector<f64>>, MnistError> {
    cfg.validate(rows, cols)?;
    let kernels = build_bank(cfg);
    let grid_y = cfg.grid(rows);
    let grid_x = cfg.grid(cols);
    let dim = kernels.len() * grid_y.len() * grid_x.len();
    let feats = images
        .par_iter()
        .map(|img| {
            assert_eq!(img.len(), rows * cols, "image size mismatch");
            let mut out = DVector::zeros(dim);
            let mut i = 0;
            for kernel in &kernels {
                for &cy in &grid_y {
                    for &cx in &grid_x {
                        out[i] = kernel.magnitude_at(img, rows, cols, cx, cy);
                        i += 1;
                    }
                }
            }
            out
        })
        .collect();
    Ok(feats)
}

/// Raw-pixel features (images flattened as-is).
pub fn pixel_features(images: &[Vec<f64>]) -> Vec<DVector<f64>> {
    images.iter().map(|img| DVector::from_column_slice(img)).collect()
}

// ---------------------------------------------------------------------------
// Gaussian fit
// ---------------------------------------------------------------------------

/// Per-class Gaussian model of the feature distribution, after the global
/// zero-mean shift. Class 0 is digit '0' (label −1), class 1 is digit '1'
/// (label +1); shifted features are `x − global_shift`.
#[derive(Debug, Clone)]
pub struct GaussianFit {
    pub mu0: DVector<f64>,
    pub mu1: DVector<f64>,
    pub sigma0: DMatrix<f64>,
    pub sigma1: DMatrix<f64>,
    /// The pooled training mean that was subtracted from every vector.
    pub global_shift: DVector<f64>,
}

impl GaussianFit {
    pub fn dim(&self) -> usize {
        self.mu0.len()
    }

    /// The fitted task: digit 1 is the positive class. Covariances are Gram
    /// matrices (PSD by construction), so no eigendecomposition is run.
    pub fn to_task_spec(&self) -> Result<TaskSpec, TaskError> {
        TaskSpec::new(
            self.mu1.clone(),
            self.mu0.clone(),
            Covariance::dense_gram(self.sigma1.clone()),
            Covariance::dense_gram(self.sigma0.clone()),
        )
    }
}

/// Subtracts the fit's global shift from a batch of feature vectors.
pub fn apply_shift(features: &[DVector<f64>], shift: &DVector<f64>) -> Vec<DVector<f64>> {
    features.iter().map(|x| x - shift).collect()
}

/// Fits per-class means and unbiased covariances after translating all
/// features so the pooled mean is zero. Labels are −1/+1.
pub fn fit_gaussians(
    features: &[DVector<f64>],
    labels: &[i8],
) -> Result<GaussianFit, MnistError> {
    assert_eq!(features.len(), labels.len(), "feature/label count mismatch");
    if features.is_empty() {
        return Err(MnistError::Config("no samples to fit".into()));
    }
    let dim = features[0].len();
    let mut pooled = DVector::zeros(dim);
    for x in features {
        pooled += x;
    }
    pooled /= features.len() as f64;

    let mut class_stats = Vec::new();
    for class_label in [-1i8, 1] {
        let idx: Vec<usize> =
            (0..labels.len()).filter(|&i| labels[i] == class_label).collect();
        if idx.len() < 2 {
            return Err(MnistError::MissingClass(class_label));
        }
        let nf = idx.len() as f64;
        let mut mean = DVector::zeros(dim);
        for &i in &idx {
            mean += &features[i];
        }
        mean /= nf;
        mean -= &pooled;
        // Covariance from the matrix of centered rows: Σ = XᵀX/(n−1). The
        // shift cancels in the centering, so it can be ignored here.
        let mut centered = DMatrix::zeros(idx.len(), dim);
        for (row, &i) in idx.iter().enumerate() {
            let shifted = &features[i] - &pooled;
            for c in 0..dim {
                centered[(row, c)] = shifted[c] - mean[c];
            }
        }
        let cov = centered.transpose() * &centered / (nf - 1.0);
        class_stats.push((mean, cov));
    }
    let (mu0, sigma0) = class_stats.remove(0);
    let (mu1, sigma1) = class_stats.remove(0);
    Ok(GaussianFit { mu0, mu1, sigma0, sigma1, global_shift: pooled })
}

// ---------------------------------------------------------------------------
// Theory and empirical curves
// ---------------------------------------------------------------------------

/// Deterministic flow prediction sampled at SGD-step checkpoints.
#[derive(Debug, Clone)]
pub struct MnistCurve {
    /// Checkpoint positions in units of SGD steps.
    pub sgd_steps: Vec<f64>,
    pub accuracy: Vec<f64>,
    pub alignment: Vec<f64>,
}

/// Integrates the supervised flow with the fitted Gaussian task from w = 0
/// and reports accuracy/alignment at multiples of `checkpoint_every` steps.
/// `dt_max` caps the integrator step (continuous-time units).
pub fn theory_curve_with_dt(
    fit: &GaussianFit,
    lambda: f64,
    eta: f64,
    steps: usize,
    checkpoint_every: usize,
    dt_max: f64,
) -> Result<MnistCurve, MnistError> {
    if eta <= 0.0 || steps == 0 || checkpoint_every == 0 {
        return Err(MnistError::Config(
            "eta, steps and checkpoint_every must be positive".into(),
        ));
    }
    let task = fit.to_task_spec()?;
    let t_checkpoint = eta * checkpoint_every as f64;
    let substeps = (t_checkpoint / dt_max).ceil().max(1.0) as usize;
    let dt = t_checkpoint / substeps as f64;
    let cfg = FlowConfig::new(dt, eta * steps as f64).with_record_every(substeps);
    let rule = crate::drift::RuleConfig::new(crate::drift::Rule::Sl, lambda);
    let traj = integrate_mean_flow(&task, &rule, &DVector::zeros(fit.dim()), &cfg)?;
    if traj.diverged {
        return Err(MnistError::Diverged);
    }
    Ok(MnistCurve {
        sgd_steps: traj.times.iter().map(|t| t / eta).collect(),
        accuracy: traj.accuracy.clone(),
        alignment: traj.alignment.clone(),
    })
}

/// [`theory_curve_with_dt`] at the default integrator resolution.
pub fn theory_curve(
    fit: &GaussianFit,
    lambda: f64,
    eta: f64,
    steps: usize,
    checkpoint_every: usize,
) -> Result<MnistCurve, MnistError> {
    theory_curve_with_dt(fit, lambda, eta, steps, checkpoint_every, 0.05)
}

/// Fraction of samples classified correctly by sign(w·x); exact ties (w·x =
/// 0) count half, so w = 0 scores exactly ½.
pub fn test_accuracy(w: &DVector<f64>, features: &[DVector<f64>], labels: &[i8]) -> f64 {
    let mut correct = 0.0;
    for (x, &y) in features.iter().zip(labels) {
        let z = w.dot(x);
        if z == 0.0 {
            correct += 0.5;
        } else if (z > 0.0) == (y > 0) {
            correct += 1.0;
        }
    }
    correct / features.len() as f64
}

/// Online-SGD training configuration for the empirical curve.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EmpiricalConfig {
    pub lambda: f64,
    /// η ≥ 0 (zero freezes the weights — useful as a control).
    pub eta: f64,
    pub steps: usize,
    pub repeats: usize,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub activation: Activation,
}

/// Empirical accuracy/alignment checkpoints, aggregated over repeats.
#[derive(Debug, Clone)]
pub struct EmpiricalCurve {
    pub sgd_steps: Vec<usize>,
    pub accuracy_mean: Vec<f64>,
    pub accuracy_std: Vec<f64>,
    pub alignment_mean: Vec<f64>,
    pub alignment_std: Vec<f64>,
    /// `[repeat][checkpoint]` test accuracies behind the aggregates.
    pub per_repeat_accuracy: Vec<Vec<f64>>,
    /// Final weight vector of each repeat.
    pub final_weights: Vec<DVector<f64>>,
}

/// Trains perceptrons by online SGD on shuffled data (reshuffled every
/// epoch, independently per repeat) and measures held-out accuracy and
/// alignment with `mu1` at checkpoints. Features must already be shifted.
pub fn empirical_curve(
    train: &[DVector<f64>],
    train_labels: &[i8],
    test: &[DVector<f64>],
    test_labels: &[i8],
    mu1: &DVector<f64>,
    cfg: &EmpiricalConfig,
) -> Result<EmpiricalCurve, MnistError> {
    if train.is_empty() || test.is_empty() {
        return Err(MnistError::Config("empty train or test set".into()));
    }
    if cfg.steps == 0 || cfg.repeats == 0 || cfg.checkpoint_every == 0 {
        return Err(MnistError::Config(
            "steps, repeats and checkpoint_every must be positive".into(),
        ));
    }
    if cfg.eta < 0.0 {
        return Err(MnistError::Config(format!("negative learning rate {}", cfg.eta)));
    }
    let dim = train[0].len();
    let n = train.len();
    let mut checkpoints: Vec<usize> = (0..=cfg.steps).step_by(cfg.checkpoint_every).collect();
    if *checkpoints.last().unwrap() != cfg.steps {
        checkpoints.push(cfg.steps);
    }

    struct RepeatOutcome {
        accuracy: Vec<f64>,
        alignment: Vec<f64>,
        final_w: DVector<f64>,
    }

    let outcomes: Vec<RepeatOutcome> = (0..cfg.repeats)
        .into_par_iter()
        .map(|repeat| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(repeat as u64);
            let mut order: Vec<usize> = (0..n).collect();
            let mut w = DVector::zeros(dim);
            let mut accuracy = Vec::with_capacity(checkpoints.len());
            let mut alignment = Vec::with_capacity(checkpoints.len());
            let mut next = 0usize;
            if checkpoints[next] == 0 {
                accuracy.push(test_accuracy(&w, test, test_labels));
                alignment.push(alignment_with(mu1, &w));
                next += 1;
            }
            for step in 1..=cfg.steps {
                let pos = (step - 1) % n;
                if pos == 0 {
                    order.shuffle(&mut rng);
                }
                let i = order[pos];
                sl_step(&mut w, &train[i], train_labels[i], cfg.eta, cfg.lambda, cfg.activation);
                if next < checkpoints.len() && checkpoints[next] == step {
                    accuracy.push(test_accuracy(&w, test, test_labels));
                    alignment.push(alignment_with(mu1, &w));
                    next += 1;
                }
            }
            RepeatOutcome { accuracy, alignment, final_w: w }
        })
        .collect();

    let mut curve = EmpiricalCurve {
        sgd_steps: checkpoints.clone(),
        accuracy_mean: Vec::new(),
        accuracy_std: Vec::new(),
        alignment_mean: Vec::new(),
        alignment_std: Vec::new(),
        per_repeat_accuracy: outcomes.iter().map(|o| o.accuracy.clone()).collect(),
        final_weights: outcomes.iter().map(|o| o.final_w.clone()).collect(),
    };
    for c in 0..checkpoints.len() {
        let (am, asd) = mean_std(outcomes.iter().map(|o| o.accuracy[c]));
        let (lm, lsd) = mean_std(outcomes.iter().map(|o| o.alignment[c]));
        curve.accuracy_mean.push(am);
        curve.accuracy_std.push(asd);
        curve.alignment_mean.push(lm);
        curve.alignment_std.push(lsd);
    }
    Ok(curve)
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

// ---------------------------------------------------------------------------
// End-to-end comparison
// ---------------------------------------------------------------------------

/// Feature pipeline for the comparison run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    Gabor,
    Pixels,
}

/// End-to-end run configuration with reference defaults: λ = 1, η = 10⁻³,
/// 10 repeats, two passes over the training set, ~50 checkpoints.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MnistRunConfig {
    pub mode: FeatureMode,
    pub gabor: GaborBankConfig,
    pub lambda: f64,
    pub eta: f64,
    /// Total SGD steps; 0 means two epochs of the 0/1 training subset.
    pub steps: usize,
    pub repeats: usize,
    pub seed: u64,
    /// Number of checkpoints along the curve.
    pub checkpoints: usize,
}

impl MnistRunConfig {
    pub fn defaults(mode: FeatureMode) -> Self {
        MnistRunConfig {
            mode,
            gabor: GaborBankConfig::default(),
            lambda: 1.0,
            eta: 1e-3,
            steps: 0,
            repeats: 10,
            seed: 7,
            checkpoints: 50,
        }
    }
}

/// Everything the comparison produces.
#[derive(Debug, Clone)]
pub struct MnistComparison {
    pub theory: MnistCurve,
    pub empirical: EmpiricalCurve,
    /// |Gaussian-model accuracy − held-out accuracy| at the same final
    /// weights (repeat 0): the size of the Gaussianity gap.
    pub fit_accuracy_gap: f64,
    pub feature_dim: usize,
    pub train_samples: usize,
    pub test_samples: usize,
}

impl MnistComparison {
    /// Checkpoint-aligned CSV of both curves.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "step,theory_accuracy,theory_alignment,empirical_accuracy_mean,empirical_accuracy_std,empirical_alignment_mean,empirical_alignment_std\n",
        );
        for i in 0..self.theory.sgd_steps.len() {
            out.push_str(&format!(
                "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
                self.empirical.sgd_steps[i],
                self.theory.accuracy[i],
                self.theory.alignment[i],
                self.empirical.accuracy_mean[i],
                self.empirical.accuracy_std[i],
                self.empirical.alignment_mean[i],
                self.empirical.alignment_std[i],
            ));
        }
        out
    }
}

/// Full pipeline: features → Gaussian fit → theory curve and SGD ensemble on
/// identical shifted features and checkpoints.
pub fn run_mnist_comparison(
    data: &BinaryMnist,
    cfg: &MnistRunConfig,
) -> Result<MnistComparison, MnistError> {
    let (train_feats, test_feats) = match cfg.mode {
        FeatureMode::Gabor => (
            gabor_features(&data.train.images, data.train.rows, data.train.cols, &cfg.gabor)?,
            gabor_features(&data.test.images, data.test.rows, data.test.cols, &cfg.gabor)?,
        ),
        FeatureMode::Pixels => {
            (pixel_features(&data.train.images), pixel_features(&data.test.images))
        }
    };
    let fit = fit_gaussians(&train_feats, &data.train.labels)?;
    let train_shifted = apply_shift(&train_feats, &fit.global_shift);
    let test_shifted = apply_shift(&test_feats, &fit.global_shift);
    drop(train_feats);
    drop(test_feats);

    let steps = if cfg.steps == 0 { 2 * train_shifted.len() } else { cfg.steps };
    let checkpoint_every = (steps / cfg.checkpoints).max(1);
    let theory = theory_curve(&fit, cfg.lambda, cfg.eta, steps, checkpoint_every)?;
    let empirical = empirical_curve(
        &train_shifted,
        &data.train.labels,
        &test_shifted,
        &data.test.labels,
        &fit.mu1,
        &EmpiricalConfig {
            lambda: cfg.lambda,
            eta: cfg.eta,
            steps,
            repeats: cfg.repeats,
            seed: cfg.seed,
            checkpoint_every,
            activation: Activation::Logistic,
        },
    )?;
    assert_eq!(theory.sgd_steps.len(), empirical.sgd_steps.len());

    // Gaussianity gap: model vs held-out accuracy at the same weights.
    let probe_w = &empirical.final_weights[0];
    let task = fit.to_task_spec()?;
    let model_acc = task.model_accuracy(probe_w)?;
    let test_acc = test_accuracy(probe_w, &test_shifted, &data.test.labels);
    Ok(MnistComparison {
        fit_accuracy_gap: (model_acc - test_acc).abs(),
        feature_dim: fit.dim(),
        train_samples: train_shifted.len(),
        test_samples: test_shifted.len(),
        theory,
        empirical,
    })
}

/// Segment-wise trend agreement of two alignment curves on the tail of the
/// run (from `start_frac` of the steps): the tail is cut into `segments`
/// equal spans, and each span's net alignment change must have the same sign
/// in both curves, with changes below `flat_tol` compatible with any sign.
pub fn alignment_trend_agreement(
    theory: &[f64],
    empirical: &[f64],
    start_frac: f64,
    segments: usize,
    flat_tol: f64,
) -> bool {
    assert_eq!(theory.len(), empirical.len());
    let n = theory.len();
    let start = ((n as f64 * start_frac) as usize).min(n - 2);
    let span = n - start;
    if span < segments + 1 {
        return true;
    }
    for s in 0..segments {
        let lo = start + s * (span - 1) / segments;
        let hi = start + (s + 1) * (span - 1) / segments;
        let dt = theory[hi] - theory[lo];
        let de = empirical[hi] - empirical[lo];
        let compatible = dt.abs() < flat_tol
            || de.abs() < flat_tol
            || (dt > 0.0) == (de > 0.0);
        if !compatible {
            return false;
        }
    }
    true
}
