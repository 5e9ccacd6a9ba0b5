//! Comparison methods: PCA whitening, FastICA and factorized-support
//! training.
//!
//! FastICA runs the symmetric (parallel) fixed-point iteration with
//! symmetric decorrelation; the factorized-support baseline trains a
//! linear map against the directed hard Hausdorff surrogate from
//! [`crate::criterion::loss_hfs_hard`].

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::criterion::loss_hfs_hard;
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;
use crate::train::{train_linear_from, TrainConfig, TrainTrace};

/// Projection to `d` unit-variance principal components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhitenModel {
    pub mean: Vec<f64>,
    /// `d x D`: `y = (x - mean) W^T`.
    #[serde(with = "crate::ser")]
    pub matrix: Array2<f64>,
    /// `D x d` back-projection: `x ~ y B^T + mean`.
    #[serde(with = "crate::ser")]
    pub back: Array2<f64>,
}

/// Fit whitening on rows of `x`, keeping the `d` leading components.
pub fn whiten_fit(x: &Array2<f64>, d: usize) -> Result<WhitenModel> {
    let n = x.nrows();
    let dim = x.ncols();
    if n <= dim {
        return Err(Error::InvalidArgument(format!(
            "whitening needs more rows ({n}) than columns ({dim})"
        )));
    }
    if d == 0 || d > dim {
        return Err(Error::InvalidArgument(format!(
            "cannot keep {d} of {dim} components"
        )));
    }
    let mean: Vec<f64> = (0..dim)
        .map(|j| x.column(j).iter().sum::<f64>() / n as f64)
        .collect();
    let mut cov = Array2::zeros((dim, dim));
    for row in x.rows() {
        for a in 0..dim {
            let ra = row[a] - mean[a];
            for b in a..dim {
                cov[[a, b]] += ra * (row[b] - mean[b]);
            }
        }
    }
    for a in 0..dim {
        for b in a..dim {
            cov[[a, b]] /= n as f64;
            cov[[b, a]] = cov[[a, b]];
        }
    }
    let (vals, vecs) = linalg::symmetric_eig_desc(&cov);
    if vals[d - 1] <= 1e-12 * vals[0].max(1e-300) {
        return Err(Error::Numeric(format!(
            "covariance is rank deficient: eigenvalue {} of component {d} vanishes",
            vals[d - 1]
        )));
    }
    let mut matrix = Array2::zeros((d, dim));
    let mut back = Array2::zeros((dim, d));
    for k in 0..d {
        let s = vals[k].sqrt();
        for j in 0..dim {
            matrix[[k, j]] = vecs[[j, k]] / s;
            back[[j, k]] = vecs[[j, k]] * s;
        }
    }
    Ok(WhitenModel { mean, matrix, back })
}

pub fn whiten_apply(model: &WhitenModel, x: &Array2<f64>) -> Result<Array2<f64>> {
    let dim = model.matrix.ncols();
    if x.ncols() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: x.ncols(),
        });
    }
    let mut centered = x.clone();
    for (j, mut col) in centered.columns_mut().into_iter().enumerate() {
        col.mapv_inplace(|v| v - model.mean[j]);
    }
    Ok(centered.dot(&model.matrix.t()))
}

/// Map whitened rows back to the input space.
pub fn whiten_invert(model: &WhitenModel, y: &Array2<f64>) -> Array2<f64> {
    let mut x = y.dot(&model.back.t());
    for (j, mut col) in x.columns_mut().into_iter().enumerate() {
        col.mapv_inplace(|v| v + model.mean[j]);
    }
    x
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IcaNonlinearity {
    Tanh,
    Cube,
}

/// Orthogonal rotation fitted on whitened data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcaModel {
    #[serde(with = "crate::ser")]
    pub rotation: Array2<f64>,
    pub nonlinearity: IcaNonlinearity,
    pub iterations: usize,
    pub converged: bool,
}

impl IcaModel {
    pub fn apply(&self, whitened: &Array2<f64>) -> Array2<f64> {
        whitened.dot(&self.rotation.t())
    }
}

/// `W <- (W W^T)^{-1/2} W` via the symmetric eigendecomposition.
fn sym_decorrelate(w: &Array2<f64>) -> Result<Array2<f64>> {
    let gram = w.dot(&w.t());
    let (vals, vecs) = linalg::symmetric_eig_desc(&gram);
    let floor = 1e-12 * vals[0].max(1e-300);
    let mut scaled = Array2::zeros(vecs.raw_dim());
    for k in 0..vals.len() {
        let inv_s = 1.0 / vals[k].max(floor).sqrt();
        for j in 0..vals.len() {
            scaled[[j, k]] = vecs[[j, k]] * inv_s;
        }
    }
    let out = scaled.dot(&vecs.t()).dot(w);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite decorrelation".into()));
    }
    Ok(out)
}

/// Symmetric fixed-point FastICA on whitened rows.
pub fn fastica_fit(
    whitened: &Array2<f64>,
    nonlinearity: IcaNonlinearity,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<IcaModel> {
    let n = whitened.nrows();
    let d = whitened.ncols();
    if n < 2 {
        return Err(Error::InvalidArgument("need at least 2 rows".into()));
    }
    let mut rng = rng::derived(seed, "ica_init", 0);
    let init = Array2::from_shape_fn((d, d), |_| StandardNormal.sample(&mut rng));
    let mut w = sym_decorrelate(&init)?;

    let mut converged = false;
    let mut iterations = 0;
    for it in 0..max_iter {
        iterations = it + 1;
        let s = whitened.dot(&w.t());
        let (g, g_mean): (Array2<f64>, Vec<f64>) = match nonlinearity {
            IcaNonlinearity::Tanh => {
                let g = s.mapv(f64::tanh);
                let gm = (0..d)
                    .map(|k| {
                        g.column(k).iter().map(|&t| 1.0 - t * t).sum::<f64>() / n as f64
                    })
                    .collect();
                (g, gm)
            }
            IcaNonlinearity::Cube => {
                let g = s.mapv(|v| v * v * v);
                let gm = (0..d)
                    .map(|k| {
                        s.column(k).iter().map(|&v| 3.0 * v * v).sum::<f64>() / n as f64
                    })
                    .collect();
                (g, gm)
            }
        };
        let mut w_new = g.t().dot(whitened) / n as f64;
        for k in 0..d {
            for j in 0..d {
                w_new[[k, j]] -= g_mean[k] * w[[k, j]];
            }
        }
        if w_new.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite update at iteration {it}")));
        }
        let w_next = sym_decorrelate(&w_new)?;
        let lim = (0..d)
            .map(|k| {
                let dot: f64 = w_next.row(k).iter().zip(w.row(k)).map(|(&a, &b)| a * b).sum();
                (dot.abs() - 1.0).abs()
            })
            .fold(0.0f64, f64::max);
        w = w_next;
        if lim < tol {
            converged = true;
            break;
        }
    }
    Ok(IcaModel {
        rotation: w,
        nonlinearity,
        iterations,
        converged,
    })
}

/// Train a linear unmixing map against the factorized-support surrogate.
/// Each step recombines the batch with its own derived seed.
pub fn hfs_fit(x: &Array2<f64>, config: &TrainConfig, latent_dim: usize) -> Result<TrainTrace> {
    let mut init_rng = rng::derived(config.seed, "init", 0);
    let w0 = linalg::orthonormal_rows(latent_dim, x.ncols(), &mut init_rng);
    let seed = config.seed;
    train_linear_from(x, config, w0, move |codes, step| {
        loss_hfs_hard(codes, rng::derive(seed, "hfs_step", step))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use crate::rng::seeded;
    use rand::Rng;

    fn max_abs_off_identity(m: &Array2<f64>) -> f64 {
        let d = m.nrows();
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((m[[i, j]] - want).abs());
            }
        }
        worst
    }

    fn population_cov(x: &Array2<f64>) -> Array2<f64> {
        let n = x.nrows();
        let d = x.ncols();
        let mean: Vec<f64> = (0..d)
            .map(|j| x.column(j).iter().sum::<f64>() / n as f64)
            .collect();
        let mut cov = Array2::zeros((d, d));
        for row in x.rows() {
            for a in 0..d {
                for b in 0..d {
                    cov[[a, b]] += (row[a] - mean[a]) * (row[b] - mean[b]);
                }
            }
        }
        cov / n as f64
    }

    #[test]
    fn whitening_gives_identity_covariance_on_training_data() {
        let mut rng = seeded(1);
        let x = Array2::from_shape_fn((500, 2), |(_, j)| {
            let v: f64 = StandardNormal.sample(&mut rng);
            if j == 0 {
                3.0 * v + 1.0
            } else {
                0.5 * v - 2.0
            }
        });
        let model = whiten_fit(&x, 2).unwrap();
        let y = whiten_apply(&model, &x).unwrap();
        assert!(max_abs_off_identity(&population_cov(&y)) < 1e-8);
    }

    #[test]
    fn whitening_isotropic_gaussian_is_near_rescaled_identity() {
        let mut rng = seeded(2);
        let sigma = 1.7;
        let x = Array2::from_shape_fn((10_000, 2), |_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            sigma * v
        });
        let model = whiten_fit(&x, 2).unwrap();
        let y = whiten_apply(&model, &x).unwrap();
        assert!(max_abs_off_identity(&population_cov(&y)) < 1e-8);
        // W W^T ~ I / sigma^2 up to sampling noise
        let gram = model.matrix.dot(&model.matrix.t()) * (sigma * sigma);
        assert!(max_abs_off_identity(&gram) < 1e-1);
    }

    #[test]
    fn dewhitening_round_trip() {
        let mut rng = seeded(3);
        let x = Array2::from_shape_fn((200, 3), |(_, j)| {
            let v: f64 = StandardNormal.sample(&mut rng);
            (j as f64 + 1.0) * v + j as f64
        });
        let model = whiten_fit(&x, 3).unwrap();
        let y = whiten_apply(&model, &x).unwrap();
        let back = whiten_invert(&model, &y);
        for (a, b) in x.iter().zip(back.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn whitening_affine_equivariant() {
        let mut rng = seeded(4);
        let x = Array2::from_shape_fn((800, 2), |_| rng.random_range(-1.0..1.0f64));
        let a = ndarray::array![[2.0, 0.7], [-0.3, 1.4]];
        let mixed = x.dot(&a.t());
        let model = whiten_fit(&mixed, 2).unwrap();
        let y = whiten_apply(&model, &mixed).unwrap();
        assert!(max_abs_off_identity(&population_cov(&y)) < 1e-8);
    }

    #[test]
    fn whitening_rejects_rank_deficient() {
        let x = Array2::from_shape_fn((100, 2), |(i, _)| i as f64);
        assert!(whiten_fit(&x, 2).is_err());
    }

    fn uniform_sources(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = seeded(seed);
        let half_width = 3.0f64.sqrt();
        Array2::from_shape_fn((n, 2), |_| rng.random_range(-half_width..half_width))
    }

    #[test]
    fn fastica_recovers_rotated_uniform_sources() {
        let sources = uniform_sources(20_000, 6);
        let rot = crate::synth::DiffeoSpec::rotation_2d(0.6);
        let x = rot.apply_forward(&sources).unwrap();
        let wh = whiten_fit(&x, 2).unwrap();
        let xw = whiten_apply(&wh, &x).unwrap();
        let model = fastica_fit(&xw, IcaNonlinearity::Tanh, 1e-6, 500, 7).unwrap();
        assert!(model.converged);
        let rec = model.apply(&xw);
        // correlation-matching oracle: each recovered component must match
        // one source up to sign with |corr| >= 0.99
        let mut used = [false; 2];
        for k in 0..2 {
            let rk: Vec<f64> = rec.column(k).to_vec();
            let mut best = (0usize, 0.0f64);
            for s in 0..2 {
                let sv: Vec<f64> = sources.column(s).to_vec();
                let c = crate::synth::pearson_correlation(&rk, &sv).abs();
                if c > best.1 {
                    best = (s, c);
                }
            }
            assert!(
                best.1 >= 0.99,
                "component {k} best |corr| {} with source {}",
                best.1,
                best.0
            );
            assert!(!used[best.0], "two components matched the same source");
            used[best.0] = true;
        }
    }

    #[test]
    fn fastica_identity_on_axis_aligned_input() {
        let sources = uniform_sources(20_000, 8);
        let wh = whiten_fit(&sources, 2).unwrap();
        let xw = whiten_apply(&wh, &sources).unwrap();
        let model = fastica_fit(&xw, IcaNonlinearity::Tanh, 1e-6, 500, 9).unwrap();
        for k in 0..2 {
            let row_max = model
                .rotation
                .row(k)
                .iter()
                .fold(0.0f64, |a, v| a.max(v.abs()));
            assert!(row_max >= 0.99, "row {k} max |entry| {row_max}");
        }
    }

    #[test]
    fn fastica_rotation_stays_orthogonal() {
        let sources = uniform_sources(5_000, 10);
        let wh = whiten_fit(&sources, 2).unwrap();
        let xw = whiten_apply(&wh, &sources).unwrap();
        for nl in [IcaNonlinearity::Tanh, IcaNonlinearity::Cube] {
            let model = fastica_fit(&xw, nl, 1e-6, 50, 11).unwrap();
            let gram = model.rotation.dot(&model.rotation.t());
            assert!(max_abs_off_identity(&gram) < 1e-8);
        }
    }

    #[test]
    fn fastica_gaussian_sources_still_returns_model() {
        // Gaussian sources are unidentifiable; the fit must still return a
        // valid orthogonal rotation, whatever the convergence flag says
        let mut rng = seeded(12);
        let x = Array2::from_shape_fn((5_000, 2), |_| StandardNormal.sample(&mut rng));
        let wh = whiten_fit(&x, 2).unwrap();
        let xw = whiten_apply(&wh, &x).unwrap();
        let model = fastica_fit(&xw, IcaNonlinearity::Tanh, 1e-9, 8, 13).unwrap();
        let gram = model.rotation.dot(&model.rotation.t());
        assert!(max_abs_off_identity(&gram) < 1e-8);
    }

    #[test]
    fn hfs_fit_deterministic() {
        let mut rng = seeded(14);
        let x = Array2::from_shape_fn((80, 2), |_| rng.random_range(-1.0..1.0f64));
        let mut cfg = TrainConfig::with_seed(15);
        cfg.learning_rate = 1e-4;
        cfg.momentum = 0.0;
        cfg.batch_size = 40;
        cfg.max_epochs = 4;
        let a = hfs_fit(&x, &cfg, 2).unwrap();
        let b = hfs_fit(&x, &cfg, 2).unwrap();
        assert_eq!(a.model.w, b.model.w);
        assert_eq!(a.step_losses, b.step_losses);
    }
}
