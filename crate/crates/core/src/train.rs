//! SGD training of a linear unmixing map against the axis-alignment
//! criterion.
//!
//! Inputs are standardized per column, the map starts from random
//! orthonormal rows, and training stops when the best epoch-mean loss has
//! not improved relatively by `plateau_tol` over `plateau_window` epochs.
//! No constraint is imposed on the rows during training; reports
//! normalize them for display only.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::criterion::{loss_total, LossValue, LossWeights};
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;

/// Learned linear unmixing map with its input standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnmixingModel {
    /// `d x D` map applied to standardized inputs.
    #[serde(with = "crate::ser")]
    pub w: Array2<f64>,
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
}

impl UnmixingModel {
    /// Standardize rows of `x` and map them to codes.
    pub fn apply(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let d_in = self.w.ncols();
        if x.ncols() != d_in {
            return Err(Error::DimensionMismatch {
                expected: d_in,
                got: x.ncols(),
            });
        }
        let mut std = x.clone();
        for (j, mut col) in std.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| (v - self.input_mean[j]) / self.input_scale[j]);
        }
        Ok(std.dot(&self.w.t()))
    }

    /// Copy with rows scaled to unit norm, for display.
    pub fn row_normalized(&self) -> Array2<f64> {
        let mut w = self.w.clone();
        for mut row in w.rows_mut() {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                row.mapv_inplace(|v| v / n);
            }
        }
        w
    }
}

/// Optimizer hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_window")]
    pub plateau_window: usize,
    #[serde(default = "default_tol")]
    pub plateau_tol: f64,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: f64,
    pub seed: u64,
    #[serde(default)]
    pub loss_weights: LossWeights,
}

fn default_lr() -> f64 {
    0.1
}
fn default_momentum() -> f64 {
    0.9
}
fn default_batch() -> usize {
    5000
}
fn default_epochs() -> usize {
    200
}
fn default_window() -> usize {
    10
}
fn default_tol() -> f64 {
    1e-3
}
fn default_bandwidth() -> f64 {
    0.1
}

impl TrainConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            learning_rate: default_lr(),
            momentum: default_momentum(),
            batch_size: default_batch(),
            max_epochs: default_epochs(),
            plateau_window: default_window(),
            plateau_tol: default_tol(),
            bandwidth: default_bandwidth(),
            seed,
            loss_weights: LossWeights::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(
                "momentum must lie in [0, 1)".into(),
            ));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument("batch size must be at least 2".into()));
        }
        if !(self.bandwidth > 0.0) {
            return Err(Error::InvalidArgument("bandwidth must be positive".into()));
        }
        self.loss_weights.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Plateau,
    MaxEpochs,
}

/// Record of a training run; the model is the one from the best epoch.
#[derive(Debug, Clone)]
pub struct TrainTrace {
    pub step_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
    pub model: UnmixingModel,
    pub stop_reason: StopReason,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_loss: f64,
}

/// Standardization output; constant columns keep scale 1 and are listed.
#[derive(Debug, Clone)]
pub struct Standardized {
    pub data: Array2<f64>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub constant_columns: Vec<usize>,
}

/// Per-column zero mean, unit (population) standard deviation.
pub fn standardize(x: &Array2<f64>) -> Result<Standardized> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "standardization needs at least 2 rows".into(),
        ));
    }
    let cols = x.ncols();
    let mut mean = vec![0.0; cols];
    let mut scale = vec![0.0; cols];
    let mut constant_columns = Vec::new();
    for j in 0..cols {
        let col = x.column(j);
        let m = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / n as f64;
        mean[j] = m;
        if var > 0.0 {
            scale[j] = var.sqrt();
        } else {
            scale[j] = 1.0;
            constant_columns.push(j);
        }
    }
    let mut data = x.clone();
    for (j, mut col) in data.columns_mut().into_iter().enumerate() {
        col.mapv_inplace(|v| (v - mean[j]) / scale[j]);
    }
    Ok(Standardized {
        data,
        mean,
        scale,
        constant_columns,
    })
}

/// Undo [`standardize`].
pub fn destandardize(data: &Array2<f64>, mean: &[f64], scale: &[f64]) -> Array2<f64> {
    let mut out = data.clone();
    for (j, mut col) in out.columns_mut().into_iter().enumerate() {
        col.mapv_inplace(|v| v * scale[j] + mean[j]);
    }
    out
}

/// One momentum SGD update of the map on a standardized batch. Returns
/// the batch loss.
pub fn sgd_step<F>(
    w: &mut Array2<f64>,
    velocity: &mut Array2<f64>,
    batch: &Array2<f64>,
    learning_rate: f64,
    momentum: f64,
    loss_fn: F,
) -> Result<f64>
where
    F: FnOnce(&Array2<f64>) -> Result<LossValue>,
{
    let codes = batch.dot(&w.t());
    let lv = loss_fn(&codes)?;
    if !lv.value.is_finite() || lv.grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite loss or gradient".into()));
    }
    let grad_w = lv.grad.t().dot(batch);
    velocity.zip_mut_with(&grad_w, |v, &g| *v = momentum * *v - learning_rate * g);
    w.zip_mut_with(velocity, |w, &v| *w += v);
    Ok(lv.value)
}

/// Train with the configured loss from a seeded orthonormal start.
pub fn train_linear(x: &Array2<f64>, config: &TrainConfig, latent_dim: usize) -> Result<TrainTrace> {
    let mut rng = rng::derived(config.seed, "init", 0);
    let w0 = linalg::orthonormal_rows(latent_dim, x.ncols(), &mut rng);
    train_linear_from(x, config, w0, |codes, _step| {
        loss_total(codes, &config.loss_weights, config.bandwidth, None, None)
    })
}

/// Training loop with an explicit initial map and a per-step loss.
pub fn train_linear_from<F>(
    x: &Array2<f64>,
    config: &TrainConfig,
    w0: Array2<f64>,
    mut loss_fn: F,
) -> Result<TrainTrace>
where
    F: FnMut(&Array2<f64>, u64) -> Result<LossValue>,
{
    config.validate()?;
    let n = x.nrows();
    if n < config.batch_size {
        return Err(Error::InvalidArgument(format!(
            "dataset has {n} rows, batch size is {}",
            config.batch_size
        )));
    }
    let std = standardize(x)?;
    let latent_dim = w0.nrows();
    let dim_in = x.ncols();
    if w0.ncols() != dim_in {
        return Err(Error::DimensionMismatch {
            expected: dim_in,
            got: w0.ncols(),
        });
    }

    let mut w = w0;
    let mut velocity = Array2::zeros((latent_dim, dim_in));
    let mut step_losses = Vec::new();
    let mut epoch_losses = Vec::new();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_w = w.clone();
    let mut stale_epochs = 0usize;
    let mut stop_reason = StopReason::MaxEpochs;
    let mut step: u64 = 0;
    let steps_per_epoch = n / config.batch_size;
    let mut epochs_run = 0;

    for epoch in 0..config.max_epochs {
        let mut order_rng = rng::derived(config.seed, "shuffle", epoch as u64);
        let order = rng::shuffled_indices(n, &mut order_rng);
        let mut epoch_sum = 0.0;
        for b in 0..steps_per_epoch {
            let idx = &order[b * config.batch_size..(b + 1) * config.batch_size];
            let mut batch = Array2::zeros((config.batch_size, dim_in));
            for (r, &i) in idx.iter().enumerate() {
                batch.row_mut(r).assign(&std.data.row(i));
            }
            let loss = sgd_step(
                &mut w,
                &mut velocity,
                &batch,
                config.learning_rate,
                config.momentum,
                |codes| loss_fn(codes, step),
            )
            .map_err(|e| Error::Numeric(format!("step {step}: {e}")))?;
            step_losses.push(loss);
            epoch_sum += loss;
            step += 1;
        }
        let epoch_mean = epoch_sum / steps_per_epoch as f64;
        epoch_losses.push(epoch_mean);
        epochs_run = epoch + 1;

        let margin = config.plateau_tol * best_loss.abs().max(1e-9);
        let improved = epoch_mean < best_loss - margin;
        if epoch_mean < best_loss {
            best_loss = epoch_mean;
            best_epoch = epoch;
            best_w = w.clone();
        }
        if improved {
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= config.plateau_window {
                stop_reason = StopReason::Plateau;
                break;
            }
        }
    }

    Ok(TrainTrace {
        step_losses,
        epoch_losses,
        model: UnmixingModel {
            w: best_w,
            input_mean: std.mean,
            input_scale: std.scale,
        },
        stop_reason,
        epochs_run,
        best_epoch,
        best_loss,
    })
}
