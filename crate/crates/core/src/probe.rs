//! Per-layer Lasso probes that predict reasoning length from `<think>`-position
//! activations.
//!
//! The training objective is
//!
//! ```text
//! (1 / 2n) * ||Y - (H W + b)||^2 + alpha * ||W||_1
//! ```
//!
//! with an unpenalized intercept `b`. The `1/2n` scaling follows the usual
//! Lasso convention so that `alpha` means the same thing at any sample size;
//! without it the default `alpha = 10` would weaken as `n` grows. Features are
//! used as-is, without standardization, so learned weights live in the same
//! coordinates as the activations (and as the difference-in-means directions).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;
use crate::trace::{split_dataset, TraceDataset};

pub const PROBE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetPolicy {
    #[default]
    MeanOverRollouts,
    FirstRollout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeTrainConfig {
    pub alpha: f64,
    pub max_iterations: usize,
    /// Convergence threshold on the largest coordinate change in one sweep.
    pub tolerance: f64,
    pub target_policy: TargetPolicy,
    /// Recorded for provenance; cyclic coordinate descent itself is not random.
    pub seed: u64,
}

impl Default for ProbeTrainConfig {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            max_iterations: 10_000,
            tolerance: 1e-6,
            target_policy: TargetPolicy::MeanOverRollouts,
            seed: 0,
        }
    }
}

impl ProbeTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be >= 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config(format!("tolerance must be > 0, got {}", self.tolerance)));
        }
        Ok(())
    }
}

/// Activation matrix `H` (row-major, `n x d`) with its regression targets.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    features: Vec<f64>,
    targets: Vec<f64>,
    n_cols: usize,
    pub layer: usize,
}

impl DesignMatrix {
    pub fn new(features: Vec<f64>, targets: Vec<f64>, n_cols: usize, layer: usize) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::Empty("design matrix has no rows".into()));
        }
        if n_cols == 0 || features.len() != targets.len() * n_cols {
            return Err(Error::DimensionMismatch {
                expected: targets.len() * n_cols,
                actual: features.len(),
            });
        }
        if features.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("design matrix for layer {layer}")));
        }
        Ok(Self {
            features,
            targets,
            n_cols,
            layer,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.targets.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }
}

/// A trained affine probe `y = <h, W> + b` for one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    pub layer: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub alpha: f64,
    pub n_train: usize,
    pub converged: bool,
    pub iterations_used: usize,
}

impl LinearProbe {
    pub fn predict_row<T: Copy + Into<f64>>(&self, row: &[T]) -> Result<f64> {
        if row.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                actual: row.len(),
            });
        }
        Ok(row.iter().zip(&self.weights).map(|(&x, w)| x.into() * w).sum::<f64>() + self.bias)
    }

    pub fn nonzero_weights(&self) -> usize {
        self.weights.iter().filter(|w| **w != 0.0).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeMetrics {
    /// `None` when predictions or targets are constant (correlation undefined).
    pub pearson_r: Option<f64>,
    pub rmse: f64,
    pub n_test: usize,
    pub nonzero_weight_count: usize,
}

pub fn assemble_design(dataset: &TraceDataset, layer: usize, policy: TargetPolicy) -> Result<DesignMatrix> {
    let meta = dataset.metadata();
    if layer >= meta.n_layers {
        return Err(Error::LayerOutOfRange {
            layer,
            n_layers: meta.n_layers,
        });
    }
    if dataset.is_empty() {
        return Err(Error::Empty("dataset has no records".into()));
    }
    let d = meta.d_model;
    let mut features = Vec::with_capacity(dataset.len() * d);
    let mut targets = Vec::with_capacity(dataset.len());
    for rec in dataset.records() {
        features.extend(rec.layer(layer, d).iter().map(|&v| v as f64));
        targets.push(match policy {
            TargetPolicy::MeanOverRollouts => rec.mean_reasoning_tokens(),
            TargetPolicy::FirstRollout => rec.reasoning_token_counts[0] as f64,
        });
    }
    DesignMatrix::new(features, targets, d, layer)
}

/// Full output of the coordinate-descent solver.
#[derive(Debug, Clone)]
pub struct LassoFit {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub sweeps: usize,
    pub converged: bool,
    /// Objective value after each full sweep.
    pub objective_trace: Vec<f64>,
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Cyclic coordinate descent on the centered problem; the intercept is
/// recovered from the column means afterwards, which is exact for an
/// unpenalized intercept.
pub fn coordinate_descent(design: &DesignMatrix, config: &ProbeTrainConfig) -> Result<LassoFit> {
    config.validate()?;
    let n = design.n_rows();
    let d = design.n_cols();
    if n < 2 {
        return Err(Error::Empty(format!("lasso needs at least 2 rows, got {n}")));
    }
    let nf = n as f64;

    let y_mean = stats::mean(design.targets());
    let mut x_mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in x_mean.iter_mut().zip(design.row(i)) {
            *m += v;
        }
    }
    x_mean.iter_mut().for_each(|m| *m /= nf);

    // column-major centered copy
    let mut cols = vec![0.0; n * d];
    for i in 0..n {
        for (j, v) in design.row(i).iter().enumerate() {
            cols[j * n + i] = v - x_mean[j];
        }
    }
    let col = |j: usize| &cols[j * n..(j + 1) * n];
    let col_sq: Vec<f64> = (0..d).map(|j| stats::dot(col(j), col(j)) / nf).collect();

    let mut residual: Vec<f64> = design.targets().iter().map(|y| y - y_mean).collect();
    let mut w = vec![0.0; d];
    let alpha = config.alpha;
    let objective = |r: &[f64], w: &[f64]| stats::dot(r, r) / (2.0 * nf) + alpha * w.iter().map(|v| v.abs()).sum::<f64>();

    let mut trace = vec![objective(&residual, &w)];
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < config.max_iterations {
        sweeps += 1;
        let mut max_delta = 0.0f64;
        for j in 0..d {
            if col_sq[j] == 0.0 {
                continue;
            }
            let xj = col(j);
            let rho = stats::dot(xj, &residual) / nf + col_sq[j] * w[j];
            let updated = soft_threshold(rho, alpha) / col_sq[j];
            let delta = updated - w[j];
            if delta != 0.0 {
                for (r, x) in residual.iter_mut().zip(xj) {
                    *r -= delta * x;
                }
                w[j] = updated;
            }
            max_delta = max_delta.max(delta.abs());
        }
        trace.push(objective(&residual, &w));
        if max_delta <= config.tolerance {
            converged = true;
            break;
        }
    }

    let bias = y_mean - stats::dot(&x_mean, &w);
    Ok(LassoFit {
        weights: w,
        bias,
        sweeps,
        converged,
        objective_trace: trace,
    })
}

pub fn train_lasso(design: &DesignMatrix, config: &ProbeTrainConfig) -> Result<LinearProbe> {
    let fit = coordinate_descent(design, config)?;
    Ok(LinearProbe {
        layer: design.layer,
        weights: fit.weights,
        bias: fit.bias,
        alpha: config.alpha,
        n_train: design.n_rows(),
        converged: fit.converged,
        iterations_used: fit.sweeps,
    })
}

/// Objective value of `(weights, bias)` on `design`.
pub fn lasso_objective(design: &DesignMatrix, weights: &[f64], bias: f64, alpha: f64) -> f64 {
    let n = design.n_rows() as f64;
    let sse: f64 = (0..design.n_rows())
        .map(|i| {
            let pred = stats::dot(design.row(i), weights) + bias;
            (design.targets()[i] - pred).powi(2)
        })
        .sum();
    sse / (2.0 * n) + alpha * weights.iter().map(|w| w.abs()).sum::<f64>()
}

/// Predictions for a row-major feature matrix whose width equals the probe's.
pub fn predict(probe: &LinearProbe, features: &[f64]) -> Result<Vec<f64>> {
    let d = probe.weights.len();
    if d == 0 || features.len() % d != 0 {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: features.len(),
        });
    }
    features.chunks_exact(d).map(|row| probe.predict_row(row)).collect()
}

pub fn evaluate(probe: &LinearProbe, test: &DesignMatrix) -> Result<ProbeMetrics> {
    let preds = predict(probe, test.features())?;
    let y = test.targets();
    let mse = preds.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / y.len() as f64;
    Ok(ProbeMetrics {
        pearson_r: stats::pearson(&preds, y),
        rmse: mse.sqrt(),
        n_test: y.len(),
        nonzero_weight_count: probe.nonzero_weights(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerProbe {
    pub layer: usize,
    pub probe: LinearProbe,
    pub metrics: ProbeMetrics,
}

/// Trains one probe per layer on a shared train/test split and scores each
/// on the held-out part.
pub fn layerwise_probe(
    dataset: &TraceDataset,
    config: &ProbeTrainConfig,
    test_fraction: f64,
    seed: u64,
) -> Result<Vec<LayerProbe>> {
    config.validate()?;
    let (train, test) = split_dataset(dataset, test_fraction, seed)?;
    (0..dataset.metadata().n_layers)
        .into_par_iter()
        .map(|layer| {
            let train_design = assemble_design(&train, layer, config.target_policy)?;
            let test_design = assemble_design(&test, layer, config.target_policy)?;
            let probe = train_lasso(&train_design, config)?;
            let metrics = evaluate(&probe, &test_design)?;
            Ok(LayerProbe { layer, probe, metrics })
        })
        .collect()
}

/// Layer with the highest held-out Pearson r; undefined correlations rank last
/// and ties go to the shallower layer.
pub fn best_layer(probes: &[LayerProbe]) -> Option<usize> {
    highest_r(probes.iter().map(|p| (p.layer, p.metrics.pearson_r)))
}

/// Layer with the largest defined correlation; earliest layer on ties.
fn highest_r(layers: impl Iterator<Item = (usize, Option<f64>)>) -> Option<usize> {
    layers
        .filter_map(|(l, r)| r.map(|r| (l, r)))
        .fold(None, |best: Option<(usize, f64)>, (l, r)| match best {
            Some((_, br)) if br >= r => best,
            _ => Some((l, r)),
        })
        .map(|(l, _)| l)
}

/// On-disk probe collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeFile {
    pub schema_version: u32,
    pub target_policy: TargetPolicy,
    pub test_fraction: Option<f64>,
    pub split_seed: Option<u64>,
    pub probes: Vec<ProbeEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeEntry {
    pub layer: usize,
    pub alpha: f64,
    pub bias: f64,
    pub weights: Vec<f64>,
    pub n_train: usize,
    pub converged: bool,
    #[serde(default)]
    pub iterations_used: usize,
    pub metrics: Option<ProbeMetrics>,
}

impl ProbeEntry {
    pub fn from_layer_probe(lp: &LayerProbe) -> Self {
        let p = &lp.probe;
        Self {
            layer: p.layer,
            alpha: p.alpha,
            bias: p.bias,
            weights: p.weights.clone(),
            n_train: p.n_train,
            converged: p.converged,
            iterations_used: p.iterations_used,
            metrics: Some(lp.metrics.clone()),
        }
    }

    pub fn probe(&self) -> LinearProbe {
        LinearProbe {
            layer: self.layer,
            weights: self.weights.clone(),
            bias: self.bias,
            alpha: self.alpha,
            n_train: self.n_train,
            converged: self.converged,
            iterations_used: self.iterations_used,
        }
    }
}

impl ProbeFile {
    pub fn from_layerwise(results: &[LayerProbe], config: &ProbeTrainConfig, test_fraction: f64, seed: u64) -> Self {
        Self {
            schema_version: PROBE_SCHEMA_VERSION,
            target_policy: config.target_policy,
            test_fraction: Some(test_fraction),
            split_seed: Some(seed),
            probes: results.iter().map(ProbeEntry::from_layer_probe).collect(),
        }
    }

    pub fn get(&self, layer: usize) -> Option<&ProbeEntry> {
        self.probes.iter().find(|p| p.layer == layer)
    }

    /// Layer with the best recorded Pearson r.
    pub fn best_layer(&self) -> Option<usize> {
        highest_r(self.probes.iter().map(|p| (p.layer, p.metrics.as_ref().and_then(|m| m.pearson_r))))
    }
}
