//! Probe the axis-alignment training dynamics on one dataset: loss at the
//! ground-truth solution, loss trajectory, map conditioning, and the
//! effect of learning rate / momentum / training seed.
//!
//!     cargo run --release -p gridalign-core --example train_probe -- <data_seed> [lr] [momentum] [train_seed]

use gridalign_core::criterion::{loss_grad_axis, LossValue};
use gridalign_core::density::{self_field, self_field_vjp};
use gridalign_core::eval::alignment_index;
use gridalign_core::rng;
use gridalign_core::synth::{boost_diagonal, make_grid_spec, sample_latents, DiffeoSpec};
use gridalign_core::train::{standardize, train_linear, train_linear_from, TrainConfig};
use ndarray::Array2;

/// Axis-alignment loss with the importance weights held constant in the
/// gradient: the cotangent on each field row is purely tangential.
fn loss_grad_axis_detached(codes: &Array2<f64>, bandwidth: f64) -> LossValue {
    let field = self_field(codes, bandwidth).unwrap();
    let n = codes.nrows();
    let d = codes.ncols();
    let mags = field.magnitudes();
    let total: f64 = mags.iter().sum();
    if total <= 0.0 {
        return LossValue { value: 0.0, grad: Array2::zeros((n, d)) };
    }
    let mut sup = 0.0;
    let mut cot = Array2::zeros((n, d));
    for i in 0..n {
        let m = mags[i];
        if m == 0.0 {
            continue;
        }
        let row = field.vectors.row(i);
        let mut j = 0;
        for b in 1..d {
            if row[b].abs() > row[j].abs() {
                j = b;
            }
        }
        let s = if row[j] >= 0.0 { 1.0 } else { -1.0 };
        sup += s * row[j];
        let r = s * row[j] / m;
        for b in 0..d {
            let vbar = row[b] / m;
            cot[[i, b]] = -(1.0 / total) * (if b == j { s } else { 0.0 } - r * vbar);
        }
    }
    let grad = self_field_vjp(codes, bandwidth, &field, &cot);
    LossValue { value: -sup / total, grad }
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let data_seed: u64 = args.first().map_or(48, |a| a.parse().unwrap());
    let lr: f64 = args.get(1).map_or(0.1, |a| a.parse().unwrap());
    let momentum: f64 = args.get(2).map_or(0.9, |a| a.parse().unwrap());
    let train_seed: u64 = args.get(3).map_or(0, |a| a.parse().unwrap());

    let spec = boost_diagonal(
        &make_grid_spec(
            2,
            &[4, 4],
            &[[0.0, 4.0], [0.0, 4.0]],
            rng::derive(data_seed, "grid", 0),
        )
        .unwrap(),
        std::env::var("BOOST").map_or(6.0, |v| v.parse().unwrap()),
    )
    .unwrap();
    let z = sample_latents(&spec, 50_000, rng::derive(data_seed, "samples", 0)).unwrap();
    let mix = DiffeoSpec::random_linear(2, 100.0, &mut rng::derived(data_seed, "mix", 0));
    let x = mix.apply_forward(&z).unwrap();
    let mix_matrix = match &mix {
        DiffeoSpec::Linear { matrix } => matrix.clone(),
        _ => unreachable!(),
    };

    // loss of the ground-truth unmixing (standardized true latents), on one batch
    let zs = standardize(&z).unwrap().data;
    let batch = zs.slice(ndarray::s![..5000, ..]).to_owned();
    let truth_loss = loss_grad_axis(&batch, 0.1).unwrap().value;
    println!("loss at ground truth (first 5000 rows): {truth_loss:.5}");

    let detached = std::env::var("DETACHED").is_ok();
    let batch_std = std::env::var("BATCH_STD").is_ok();
    let mut cfg = TrainConfig::with_seed(rng::derive(data_seed, "train", train_seed));
    cfg.learning_rate = lr;
    cfg.momentum = momentum;
    if std::env::var("PATIENCE").is_ok() {
        cfg.plateau_tol = 1e-4;
        cfg.plateau_window = 20;
        cfg.max_epochs = 300;
    }
    let t0 = std::time::Instant::now();
    let trace = if detached || batch_std {
        let bw = cfg.bandwidth;
        use rand::Rng;
        let angle = rng::derived(cfg.seed, "init", 0).random_range(0.0..std::f64::consts::TAU);
        let w0 = match DiffeoSpec::rotation_2d(angle) {
            DiffeoSpec::Rotation { matrix } => matrix,
            _ => unreachable!(),
        };
        let whiten = std::env::var("BATCH_WHITEN").is_ok();
        train_linear_from(&x, &cfg, w0, |codes, _| {
            if !batch_std && !whiten {
                return Ok(loss_grad_axis_detached(codes, bw));
            }
            let n = codes.nrows();
            let d = codes.ncols();
            let transform: Array2<f64> = if whiten {
                // inverse symmetric square root of the batch covariance
                let mean: Vec<f64> = (0..d)
                    .map(|j| codes.column(j).iter().sum::<f64>() / n as f64)
                    .collect();
                let mut cov = Array2::zeros((d, d));
                for row in codes.rows() {
                    for a in 0..d {
                        for b in 0..d {
                            cov[[a, b]] += (row[a] - mean[a]) * (row[b] - mean[b]);
                        }
                    }
                }
                cov /= n as f64;
                let eig = nalgebra::SymmetricEigen::new(nalgebra::DMatrix::from_fn(
                    d,
                    d,
                    |i, j| cov[[i, j]],
                ));
                let floor = 1e-12 * eig.eigenvalues.max().max(1e-300);
                let mut s = Array2::zeros((d, d));
                for a in 0..d {
                    for b in 0..d {
                        for k in 0..d {
                            s[[a, b]] += eig.eigenvectors[(a, k)]
                                * eig.eigenvectors[(b, k)]
                                / eig.eigenvalues[k].max(floor).sqrt();
                        }
                    }
                }
                s
            } else {
                let mut s = Array2::zeros((d, d));
                for j in 0..d {
                    let col = codes.column(j);
                    let m = col.iter().sum::<f64>() / n as f64;
                    let var =
                        col.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / n as f64;
                    s[[j, j]] = 1.0 / var.sqrt().max(1e-12);
                }
                s
            };
            let wcodes = codes.dot(&transform);
            let mut lv = if detached {
                loss_grad_axis_detached(&wcodes, bw)
            } else {
                loss_grad_axis(&wcodes, bw).unwrap()
            };
            lv.grad = lv.grad.dot(&transform.t());
            Ok(lv)
        })
        .unwrap()
    } else {
        train_linear(&x, &cfg, 2).unwrap()
    };
    let align = alignment_index(&trace.model.w, &mix_matrix).unwrap();
    println!(
        "lr={lr} momentum={momentum} train_seed={train_seed}: best={:.5} at epoch {} of {}, align={align:.4}  [{:?}]",
        trace.best_loss,
        trace.best_epoch,
        trace.epochs_run,
        t0.elapsed()
    );
    print!("epoch losses: ");
    for (e, l) in trace.epoch_losses.iter().enumerate() {
        print!("{e}:{l:.4} ");
    }
    println!();
    let w = &trace.model.w;
    println!(
        "W = [[{:+.3}, {:+.3}], [{:+.3}, {:+.3}]]",
        w[[0, 0]],
        w[[0, 1]],
        w[[1, 0]],
        w[[1, 1]]
    );
}
