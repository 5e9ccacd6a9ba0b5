//! Training losses over latent codes, with analytic gradients.
//!
//! Every loss evaluates the self-density gradient field of the code
//! matrix (the kernel reference set is the code batch itself) and returns
//! both the scalar value and its exact gradient with respect to the
//! codes. Gradients chain through everything the value depends on —
//! the field, the importance weights and the neighbor weights — with one
//! exception: argmax/argmin coordinate selections and max-component signs
//! are locally constant, so they are held fixed (the usual subgradient
//! convention). Away from selection ties, every gradient here matches
//! central finite differences of the value.
//!
//! The axis-alignment criterion has two algebraically equal forms,
//! `-sum_i alpha_i ||Vbar_i||_inf` and
//! `-(sum_i ||V_i||_inf) / (sum_i ||V_i||_2)`; the second is what the
//! code computes.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::density::{self_field, self_field_vjp, GradientField, SelfField};
use crate::error::{Error, Result};
use crate::rng;
use crate::synth::DiffeoSpec;

/// Scalar loss and its gradient with respect to the code matrix.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub value: f64,
    pub grad: Array2<f64>,
}

/// Weights of the combined loss and the neighborhood scale of the
/// pairwise terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// gradient local alignment
    #[serde(default)]
    pub lambda1: f64,
    /// gradient axis alignment
    #[serde(default = "one")]
    pub lambda2: f64,
    /// points local axis alignment
    #[serde(default)]
    pub lambda3: f64,
    /// points-gradient orthogonality
    #[serde(default)]
    pub lambda4: f64,
    /// reconstruction
    #[serde(default)]
    pub lambda5: f64,
    /// neighborhood scale of the pairwise weights
    #[serde(default = "default_sigma2")]
    pub sigma2: f64,
}

fn one() -> f64 {
    1.0
}

fn default_sigma2() -> f64 {
    0.5
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.0,
            lambda2: 1.0,
            lambda3: 0.0,
            lambda4: 0.0,
            lambda5: 0.0,
            sigma2: default_sigma2(),
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda1,
            self.lambda2,
            self.lambda3,
            self.lambda4,
            self.lambda5,
        ];
        if all.iter().any(|l| *l < 0.0 || !l.is_finite()) {
            return Err(Error::InvalidArgument(
                "loss weights must be non-negative".into(),
            ));
        }
        if !(self.sigma2 > 0.0) {
            return Err(Error::InvalidArgument("sigma2 must be positive".into()));
        }
        Ok(())
    }
}

/// Row norms, normalized rows and importance weights of a field.
struct FieldStats {
    /// Euclidean row norms of the field.
    norms: Vec<f64>,
    /// Normalized rows; zero rows stay zero.
    unit: Array2<f64>,
    /// Importance weights `norms / sum(norms)`.
    alpha: Vec<f64>,
    /// `sum(norms)`.
    total: f64,
}

fn field_stats(field: &SelfField) -> FieldStats {
    let n = field.vectors.nrows();
    let d = field.vectors.ncols();
    let mut norms = Vec::with_capacity(n);
    let mut unit = Array2::zeros((n, d));
    for (i, row) in field.vectors.rows().into_iter().enumerate() {
        let m = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        norms.push(m);
        if m > 0.0 {
            unit.row_mut(i)
                .iter_mut()
                .zip(row)
                .for_each(|(o, &v)| *o = v / m);
        }
    }
    let total: f64 = norms.iter().sum();
    let alpha = if total > 0.0 {
        norms.iter().map(|&m| m / total).collect()
    } else {
        vec![0.0; n]
    };
    FieldStats { norms, unit, alpha, total }
}

fn require_batch(codes: &Array2<f64>) -> Result<()> {
    if codes.nrows() < 2 {
        return Err(Error::InvalidArgument(
            "loss needs at least 2 code rows".into(),
        ));
    }
    Ok(())
}

/// Index and sign of the largest-magnitude component, lowest index on
/// ties.
fn argmax_abs(row: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (j, v) in row.iter().enumerate().skip(1) {
        if v.abs() > row[best].abs() {
            best = j;
        }
    }
    (best, if row[best] >= 0.0 { 1.0 } else { -1.0 })
}

/// Axis-alignment criterion `-(sum ||V||_inf) / (sum ||V||_2)`.
pub fn loss_grad_axis(codes: &Array2<f64>, bandwidth: f64) -> Result<LossValue> {
    require_batch(codes)?;
    let field = self_field(codes, bandwidth)?;
    let stats = field_stats(&field);
    let n = codes.nrows();
    let d = codes.ncols();

    if stats.total <= 0.0 {
        return Ok(LossValue {
            value: 0.0,
            grad: Array2::zeros((n, d)),
        });
    }

    let mut sup = 0.0;
    let mut picks = Vec::with_capacity(n);
    for row in field.vectors.rows() {
        let (j, s) = argmax_abs(row.as_slice().unwrap());
        sup += s * row[j];
        picks.push((j, s));
    }
    let total = stats.total;
    let value = -sup / total;

    // d value / d V_i = -s_i e_{j_i} / T + (sup / T^2) Vbar_i
    let mut cot = Array2::zeros((n, d));
    for i in 0..n {
        if stats.norms[i] == 0.0 {
            continue;
        }
        let (j, s) = picks[i];
        cot[[i, j]] = -s / total;
        let coef = sup / (total * total);
        for b in 0..d {
            cot[[i, b]] += coef * stats.unit[[i, b]];
        }
    }
    let grad = self_field_vjp(codes, bandwidth, &field, &cot);
    Ok(LossValue { value, grad })
}

/// Normalized pairwise neighbor weights
/// `beta_ii' = alpha_i alpha_i' exp(-||z_i - z_i'||^2 / (2 sigma2^2))`,
/// zero diagonal, scaled to sum 1. Degenerate all-zero weights fall back
/// to uniform off-diagonal.
pub fn neighbor_weights(
    codes: &Array2<f64>,
    field: &GradientField,
    sigma2: f64,
) -> Result<Array2<f64>> {
    require_batch(codes)?;
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidArgument("sigma2 must be positive".into()));
    }
    let n = codes.nrows();
    let alpha = crate::density::importance_weights(field);
    let mut beta = Array2::zeros((n, n));
    let mut sum = 0.0;
    for i in 0..n {
        for ip in 0..n {
            if i == ip {
                continue;
            }
            let dist2: f64 = codes
                .row(i)
                .iter()
                .zip(codes.row(ip))
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum();
            let k = (-dist2 / (2.0 * sigma2 * sigma2)).exp();
            let b = alpha[i] * alpha[ip] * k;
            beta[[i, ip]] = b;
            sum += b;
        }
    }
    if sum <= 0.0 {
        let u = 1.0 / (n * (n - 1)) as f64;
        for i in 0..n {
            for ip in 0..n {
                beta[[i, ip]] = if i == ip { 0.0 } else { u };
            }
        }
        return Ok(beta);
    }
    beta.mapv_inplace(|b| b / sum);
    Ok(beta)
}

#[derive(Clone, Copy, PartialEq)]
enum PairKind {
    /// `-sum beta_bar <Vbar_i, Vbar_i'>`
    GradLocal,
    /// `sum beta_bar min_j ((z_ij - z_i'j) / ||z_i - z_i'||)^2`
    PointsLocal,
    /// `sum beta_bar <Vbar_i, (z_i' - z_i)/||z_i' - z_i||>^2`
    PointsGrad,
}

impl PairKind {
    fn sign(self) -> f64 {
        match self {
            PairKind::GradLocal => -1.0,
            PairKind::PointsLocal | PairKind::PointsGrad => 1.0,
        }
    }

    fn skips_zero_distance(self) -> bool {
        matches!(self, PairKind::PointsLocal | PairKind::PointsGrad)
    }
}

/// Payload of one ordered pair `(r, i)`.
fn pair_g(kind: PairKind, unit: &Array2<f64>, codes: &Array2<f64>, r: usize, i: usize) -> f64 {
    match kind {
        PairKind::GradLocal => unit
            .row(r)
            .iter()
            .zip(unit.row(i))
            .map(|(&a, &b)| a * b)
            .sum(),
        PairKind::PointsLocal => {
            let d = codes.ncols();
            let mut dist2 = 0.0;
            for j in 0..d {
                let dj = codes[[r, j]] - codes[[i, j]];
                dist2 += dj * dj;
            }
            let mut best = f64::INFINITY;
            for j in 0..d {
                let dj = codes[[r, j]] - codes[[i, j]];
                let v = dj * dj / dist2;
                if v < best {
                    best = v;
                }
            }
            best
        }
        PairKind::PointsGrad => {
            let d = codes.ncols();
            let mut dist2 = 0.0;
            for j in 0..d {
                let dj = codes[[i, j]] - codes[[r, j]];
                dist2 += dj * dj;
            }
            let dist = dist2.sqrt();
            let mut dot = 0.0;
            for j in 0..d {
                dot += unit[[r, j]] * (codes[[i, j]] - codes[[r, j]]) / dist;
            }
            dot * dot
        }
    }
}

/// Shared engine of the three pairwise losses: value `sign * Phi / B`
/// with `Phi = sum_{i != i'} beta_ii' g_ii'` and `B = sum beta_ii'`, and
/// the exact gradient through the field, the importance weights, the
/// pairwise kernel and the payload itself.
fn pair_loss(
    codes: &Array2<f64>,
    bandwidth: f64,
    sigma2: f64,
    kind: PairKind,
) -> Result<LossValue> {
    require_batch(codes)?;
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidArgument("sigma2 must be positive".into()));
    }
    let field = self_field(codes, bandwidth)?;
    let stats = field_stats(&field);
    let n = codes.nrows();
    let d = codes.ncols();
    let s2k = sigma2 * sigma2;
    let sign = kind.sign();

    let kernel = |r: usize, i: usize| -> f64 {
        let mut dist2 = 0.0;
        for j in 0..d {
            let dj = codes[[r, j]] - codes[[i, j]];
            dist2 += dj * dj;
        }
        (-dist2 / (2.0 * s2k)).exp()
    };
    let zero_dist = |r: usize, i: usize| -> bool {
        (0..d).all(|j| codes[[r, j]] == codes[[i, j]])
    };
    let skip = |r: usize, i: usize| kind.skips_zero_distance() && zero_dist(r, i);

    // pass 1: global sums and per-row aggregates
    let mut big_b = 0.0;
    let mut phi = 0.0;
    // d Phi / d alpha_q and d B / d alpha_q collectors
    let mut pt = vec![0.0; n];
    let mut bt = vec![0.0; n];
    // V-bar path vectors (GradLocal: P_r; PointsGrad: Q_r)
    let mut vbar_path = Array2::<f64>::zeros((n, d));
    for r in 0..n {
        for i in 0..n {
            if i == r || skip(r, i) {
                continue;
            }
            let k = kernel(r, i);
            let beta = stats.alpha[r] * stats.alpha[i] * k;
            let g_ri = pair_g(kind, &stats.unit, codes, r, i);
            let g_ir = pair_g(kind, &stats.unit, codes, i, r);
            big_b += beta;
            phi += beta * g_ri;
            pt[r] += stats.alpha[i] * k * (g_ri + g_ir);
            bt[r] += 2.0 * stats.alpha[i] * k;
            match kind {
                PairKind::GradLocal => {
                    for j in 0..d {
                        vbar_path[[r, j]] += beta * stats.unit[[i, j]];
                    }
                }
                PairKind::PointsGrad => {
                    let mut dist2 = 0.0;
                    for j in 0..d {
                        let dj = codes[[i, j]] - codes[[r, j]];
                        dist2 += dj * dj;
                    }
                    let dist = dist2.sqrt();
                    let mut dot = 0.0;
                    for j in 0..d {
                        dot += stats.unit[[r, j]] * (codes[[i, j]] - codes[[r, j]]) / dist;
                    }
                    for j in 0..d {
                        vbar_path[[r, j]] +=
                            beta * dot * (codes[[i, j]] - codes[[r, j]]) / dist;
                    }
                }
                PairKind::PointsLocal => {}
            }
        }
    }

    if big_b <= 0.0 {
        return Ok(LossValue {
            value: 0.0,
            grad: Array2::zeros((n, d)),
        });
    }
    let value = sign * phi / big_b;

    // cotangents on the field rows: V-bar path plus importance path
    let mut cot = Array2::zeros((n, d));
    let dl_dalpha: Vec<f64> = (0..n)
        .map(|q| sign * (pt[q] / big_b - phi * bt[q] / (big_b * big_b)))
        .collect();
    let alpha_dot: f64 = (0..n).map(|q| stats.alpha[q] * dl_dalpha[q]).sum();
    for r in 0..n {
        if stats.norms[r] == 0.0 {
            continue;
        }
        // V-bar path: dL/dVbar_r = sign * 2 vbar_path_r / B, projected
        // through dVbar/dV = (I - Vbar Vbar^T) / ||V||
        let w: Vec<f64> = (0..d)
            .map(|j| sign * 2.0 * vbar_path[[r, j]] / big_b)
            .collect();
        let wdot: f64 = (0..d).map(|j| w[j] * stats.unit[[r, j]]).sum();
        for j in 0..d {
            cot[[r, j]] += (w[j] - wdot * stats.unit[[r, j]]) / stats.norms[r];
        }
        // importance path
        let coef = (dl_dalpha[r] - alpha_dot) / stats.total;
        for j in 0..d {
            cot[[r, j]] += coef * stats.unit[[r, j]];
        }
    }
    let mut grad = self_field_vjp(codes, bandwidth, &field, &cot);

    // pass 2: direct code dependence via the pairwise kernel and payload
    for r in 0..n {
        for i in 0..n {
            if i == r || skip(r, i) {
                continue;
            }
            let k = kernel(r, i);
            let beta = stats.alpha[r] * stats.alpha[i] * k;
            let g_ri = pair_g(kind, &stats.unit, codes, r, i);
            let g_ir = pair_g(kind, &stats.unit, codes, i, r);
            // kernel path: K depends on z_r through both ordered pairs
            let kcoef = sign
                * (stats.alpha[r] * stats.alpha[i] * (g_ri + g_ir) / big_b
                    - phi * 2.0 * stats.alpha[r] * stats.alpha[i] / (big_b * big_b));
            for j in 0..d {
                grad[[r, j]] += kcoef * k * (codes[[i, j]] - codes[[r, j]]) / s2k;
            }
            // payload path
            match kind {
                PairKind::GradLocal => {}
                PairKind::PointsLocal => {
                    let mut dist2 = 0.0;
                    for j in 0..d {
                        let dj = codes[[r, j]] - codes[[i, j]];
                        dist2 += dj * dj;
                    }
                    let mut jstar = 0;
                    let mut best = f64::INFINITY;
                    for j in 0..d {
                        let dj = codes[[r, j]] - codes[[i, j]];
                        let v = dj * dj;
                        if v < best {
                            best = v;
                            jstar = j;
                        }
                    }
                    let dstar = codes[[r, jstar]] - codes[[i, jstar]];
                    // both ordered pairs contribute the same derivative
                    let scale = sign * 2.0 * beta / big_b;
                    for j in 0..d {
                        let dj = codes[[r, j]] - codes[[i, j]];
                        let mut dr = -2.0 * dstar * dstar * dj / (dist2 * dist2);
                        if j == jstar {
                            dr += 2.0 * dstar / dist2;
                        }
                        grad[[r, j]] += scale * dr;
                    }
                }
                PairKind::PointsGrad => {
                    let mut dist2 = 0.0;
                    for j in 0..d {
                        let dj = codes[[i, j]] - codes[[r, j]];
                        dist2 += dj * dj;
                    }
                    let dist = dist2.sqrt();
                    // (r, i): z_r is the base of D_ri
                    let mut dot_r = 0.0;
                    for j in 0..d {
                        dot_r += stats.unit[[r, j]] * (codes[[i, j]] - codes[[r, j]]) / dist;
                    }
                    let scale_ri = sign * beta / big_b;
                    for j in 0..d {
                        let dj = (codes[[i, j]] - codes[[r, j]]) / dist;
                        grad[[r, j]] +=
                            scale_ri * (-2.0 * dot_r) * (stats.unit[[r, j]] - dot_r * dj) / dist;
                    }
                    // (i, r): z_r is the target of D_ir = -D_ri
                    let mut dot_i = 0.0;
                    for j in 0..d {
                        dot_i += stats.unit[[i, j]] * (codes[[r, j]] - codes[[i, j]]) / dist;
                    }
                    let beta_ir = stats.alpha[i] * stats.alpha[r] * k;
                    let scale_ir = sign * beta_ir / big_b;
                    for j in 0..d {
                        let dj = (codes[[r, j]] - codes[[i, j]]) / dist;
                        grad[[r, j]] +=
                            scale_ir * 2.0 * dot_i * (stats.unit[[i, j]] - dot_i * dj) / dist;
                    }
                }
            }
        }
    }
    Ok(LossValue { value, grad })
}

/// Local gradient-alignment term: neighboring high-gradient points should
/// have parallel gradients.
pub fn loss_grad_local(codes: &Array2<f64>, bandwidth: f64, sigma2: f64) -> Result<LossValue> {
    pair_loss(codes, bandwidth, sigma2, PairKind::GradLocal)
}

/// Local point-alignment term: neighboring high-gradient points should
/// share a coordinate.
pub fn loss_points_local(codes: &Array2<f64>, bandwidth: f64, sigma2: f64) -> Result<LossValue> {
    pair_loss(codes, bandwidth, sigma2, PairKind::PointsLocal)
}

/// Point-gradient orthogonality term: gradients should be orthogonal to
/// the offsets towards neighboring points.
pub fn loss_points_grad(codes: &Array2<f64>, bandwidth: f64, sigma2: f64) -> Result<LossValue> {
    pair_loss(codes, bandwidth, sigma2, PairKind::PointsGrad)
}

/// Decoder of the reconstruction term.
#[derive(Debug, Clone)]
pub enum Decoder {
    /// Linear decoder `x ~ A z`.
    Matrix(Array2<f64>),
    /// Closed-form diffeomorphism.
    Diffeo(DiffeoSpec),
}

/// Mean squared reconstruction error `mean_i ||dec(z_i) - x_i||^2`.
pub fn loss_reconstruction(
    codes: &Array2<f64>,
    decoder: &Decoder,
    targets: &Array2<f64>,
) -> Result<LossValue> {
    let n = codes.nrows();
    let d = codes.ncols();
    if targets.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: targets.nrows(),
        });
    }
    let out_dim = match decoder {
        Decoder::Matrix(a) => {
            if a.ncols() != d {
                return Err(Error::DimensionMismatch { expected: d, got: a.ncols() });
            }
            a.nrows()
        }
        Decoder::Diffeo(spec) => {
            if spec.dim() != d {
                return Err(Error::DimensionMismatch { expected: d, got: spec.dim() });
            }
            d
        }
    };
    if targets.ncols() != out_dim {
        return Err(Error::DimensionMismatch {
            expected: out_dim,
            got: targets.ncols(),
        });
    }

    let mut value = 0.0;
    let mut grad = Array2::zeros((n, d));
    for i in 0..n {
        let z = codes.row(i);
        let decoded: Vec<f64> = match decoder {
            Decoder::Matrix(a) => (0..out_dim)
                .map(|r| (0..d).map(|c| a[[r, c]] * z[c]).sum())
                .collect(),
            Decoder::Diffeo(spec) => spec.forward_point(z.as_slice().unwrap()),
        };
        let resid: Vec<f64> = decoded
            .iter()
            .zip(targets.row(i))
            .map(|(&y, &t)| y - t)
            .collect();
        value += resid.iter().map(|r| r * r).sum::<f64>();
        let back: Vec<f64> = match decoder {
            Decoder::Matrix(a) => (0..d)
                .map(|c| (0..out_dim).map(|r| a[[r, c]] * resid[r]).sum())
                .collect(),
            Decoder::Diffeo(spec) => spec.vjp(z.as_slice().unwrap(), &resid),
        };
        for (o, &b) in grad.row_mut(i).iter_mut().zip(&back) {
            *o = 2.0 * b / n as f64;
        }
    }
    Ok(LossValue {
        value: value / n as f64,
        grad,
    })
}

/// Weighted sum of the loss terms; zero-weight components are skipped.
pub fn loss_total(
    codes: &Array2<f64>,
    weights: &LossWeights,
    bandwidth: f64,
    decoder: Option<&Decoder>,
    targets: Option<&Array2<f64>>,
) -> Result<LossValue> {
    weights.validate()?;
    let n = codes.nrows();
    let d = codes.ncols();
    let mut total = LossValue {
        value: 0.0,
        grad: Array2::zeros((n, d)),
    };
    let add = |lv: LossValue, lambda: f64, total: &mut LossValue| {
        total.value += lambda * lv.value;
        total.grad.zip_mut_with(&lv.grad, |t, &g| *t += lambda * g);
    };
    if weights.lambda1 > 0.0 {
        add(
            loss_grad_local(codes, bandwidth, weights.sigma2)?,
            weights.lambda1,
            &mut total,
        );
    }
    if weights.lambda2 > 0.0 {
        add(loss_grad_axis(codes, bandwidth)?, weights.lambda2, &mut total);
    }
    if weights.lambda3 > 0.0 {
        add(
            loss_points_local(codes, bandwidth, weights.sigma2)?,
            weights.lambda3,
            &mut total,
        );
    }
    if weights.lambda4 > 0.0 {
        add(
            loss_points_grad(codes, bandwidth, weights.sigma2)?,
            weights.lambda4,
            &mut total,
        );
    }
    if weights.lambda5 > 0.0 {
        let (decoder, targets) = match (decoder, targets) {
            (Some(dec), Some(t)) => (dec, t),
            _ => {
                return Err(Error::InvalidArgument(
                    "reconstruction term needs a decoder and targets".into(),
                ))
            }
        };
        add(
            loss_reconstruction(codes, decoder, targets)?,
            weights.lambda5,
            &mut total,
        );
    }
    Ok(total)
}

/// Coordinatewise recombination of two seeded batch shuffles: even
/// coordinates come from the first shuffle, odd ones from the second.
pub fn recombine(codes: &Array2<f64>, seed: u64) -> Array2<f64> {
    let n = codes.nrows();
    let d = codes.ncols();
    let mut rng_p = rng::derived(seed, "recombine", 0);
    let mut rng_q = rng::derived(seed, "recombine", 1);
    let p = rng::shuffled_indices(n, &mut rng_p);
    let q = rng::shuffled_indices(n, &mut rng_q);
    Array2::from_shape_fn((n, d), |(r, j)| {
        let src = if j % 2 == 0 { p[r] } else { q[r] };
        codes[[src, j]]
    })
}

/// Directed hard Hausdorff distance `max_{y in from} min_{z in to}
/// ||y - z||`, with the extremal pair.
pub fn hausdorff_hard_directed(
    from: &Array2<f64>,
    to: &Array2<f64>,
) -> (f64, usize, usize) {
    let d = from.ncols();
    let mut best = (0.0f64, 0usize, 0usize);
    for (r, y) in from.rows().into_iter().enumerate() {
        let mut min_d2 = f64::INFINITY;
        let mut min_c = 0;
        for (c, z) in to.rows().into_iter().enumerate() {
            let mut d2 = 0.0;
            for j in 0..d {
                let dj = y[j] - z[j];
                d2 += dj * dj;
            }
            if d2 < min_d2 {
                min_d2 = d2;
                min_c = c;
            }
        }
        if min_d2 > best.0 {
            best = (min_d2, r, min_c);
        }
    }
    (best.0.sqrt(), best.1, best.2)
}

/// Factorized-support surrogate: directed hard Hausdorff distance from
/// the recombined batch to the code set. The extremal recombined point is
/// itself assembled from code rows, so the gradient reaches both the
/// nearest code point and the recombination sources.
pub fn loss_hfs_hard(codes: &Array2<f64>, seed: u64) -> Result<LossValue> {
    require_batch(codes)?;
    let n = codes.nrows();
    let d = codes.ncols();
    let mut rng_p = rng::derived(seed, "recombine", 0);
    let mut rng_q = rng::derived(seed, "recombine", 1);
    let p = rng::shuffled_indices(n, &mut rng_p);
    let q = rng::shuffled_indices(n, &mut rng_q);
    let recombined = Array2::from_shape_fn((n, d), |(r, j)| {
        let src = if j % 2 == 0 { p[r] } else { q[r] };
        codes[[src, j]]
    });
    let (value, rstar, cstar) = hausdorff_hard_directed(&recombined, codes);
    let mut grad = Array2::zeros((n, d));
    if value > 0.0 {
        for j in 0..d {
            let diff_j = (recombined[[rstar, j]] - codes[[cstar, j]]) / value;
            grad[[cstar, j]] -= diff_j;
            let src = if j % 2 == 0 { p[rstar] } else { q[rstar] };
            grad[[src, j]] += diff_j;
        }
    }
    Ok(LossValue { value, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use crate::rng::seeded;
    use ndarray::{array, Array1};
    use rand::Rng;

    fn line_codes(n: usize, direction: [f64; 2]) -> Array2<f64> {
        // irregular spacing so interior gradients do not vanish
        let mut ts = Vec::with_capacity(n);
        let mut t = 0.0;
        for i in 0..n {
            t += 0.3 + 0.1 * ((i * 7919) % 13) as f64 / 13.0;
            ts.push(t);
        }
        Array2::from_shape_fn((n, 2), |(i, j)| ts[i] * direction[j])
    }

    #[test]
    fn grad_axis_axis_aligned_is_minus_one() {
        let codes = line_codes(24, [0.0, 1.0]);
        let lv = loss_grad_axis(&codes, 0.25).unwrap();
        assert_abs_diff_eq!(lv.value, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn grad_axis_diagonal_is_minus_inv_sqrt2() {
        let codes = line_codes(24, [std::f64::consts::FRAC_1_SQRT_2; 2]);
        let lv = loss_grad_axis(&codes, 0.25).unwrap();
        assert_abs_diff_eq!(lv.value, -std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
    }

    #[test]
    fn grad_axis_algebraic_identity() {
        // value computed as -(sum sup-norm)/(sum 2-norm) must equal the
        // importance-weighted sum of normalized sup norms
        let mut rng = seeded(31);
        for trial in 0..20 {
            let n = 30;
            let codes = Array2::from_shape_fn((n, 2), |_| rng.random_range(-1.0..1.0));
            let lv = loss_grad_axis(&codes, 0.3).unwrap();
            let field = self_field(&codes, 0.3).unwrap();
            let gf = field.to_gradient_field();
            let alpha = crate::density::importance_weights(&gf);
            let weighted: f64 = (0..n)
                .map(|i| {
                    let m = gf.magnitudes[i];
                    if m == 0.0 {
                        return 0.0;
                    }
                    let sup = gf
                        .vectors
                        .row(i)
                        .iter()
                        .fold(0.0f64, |a, v| a.max(v.abs()));
                    alpha[i] * sup / m
                })
                .sum();
            assert_abs_diff_eq!(lv.value, -weighted, epsilon = 1e-12);
            assert!(lv.value <= -std::f64::consts::FRAC_1_SQRT_2 - (-1e-12));
            assert!(lv.value >= -1.0 - 1e-12, "trial {trial}: {}", lv.value);
        }
    }

    #[test]
    fn grad_axis_rotation_increases_loss() {
        let codes = line_codes(30, [1.0, 0.0]);
        let base = loss_grad_axis(&codes, 0.25).unwrap().value;
        let rot = crate::synth::DiffeoSpec::rotation_2d(std::f64::consts::FRAC_PI_4);
        let rotated = rot.apply_forward(&codes).unwrap();
        let after = loss_grad_axis(&rotated, 0.25).unwrap().value;
        assert!(after > base + 0.1, "rotation did not increase loss: {base} -> {after}");
    }

    fn fd_check<F>(codes: &Array2<f64>, analytic: &Array2<f64>, value_fn: F, tol: f64)
    where
        F: Fn(&Array2<f64>) -> f64,
    {
        let h = 1e-6;
        let gnorm = analytic.iter().map(|g| g * g).sum::<f64>().sqrt();
        for r in 0..codes.nrows() {
            for j in 0..codes.ncols() {
                let mut zp = codes.clone();
                let mut zm = codes.clone();
                zp[[r, j]] += h;
                zm[[r, j]] -= h;
                let fd = (value_fn(&zp) - value_fn(&zm)) / (2.0 * h);
                let scale = analytic[[r, j]].abs().max(0.05 * gnorm).max(1e-4);
                assert!(
                    (analytic[[r, j]] - fd).abs() / scale < tol,
                    "fd mismatch at ({r},{j}): analytic {} vs fd {}",
                    analytic[[r, j]],
                    fd
                );
            }
        }
    }

    fn random_codes(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = seeded(seed);
        Array2::from_shape_fn((n, 2), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn grad_axis_gradient_matches_fd() {
        let codes = random_codes(20, 41);
        let lv = loss_grad_axis(&codes, 0.3).unwrap();
        fd_check(
            &codes,
            &lv.grad,
            |z| loss_grad_axis(z, 0.3).unwrap().value,
            1e-4,
        );
    }

    #[test]
    fn grad_local_gradient_matches_fd() {
        let codes = random_codes(14, 43);
        let lv = loss_grad_local(&codes, 0.3, 0.6).unwrap();
        fd_check(
            &codes,
            &lv.grad,
            |z| loss_grad_local(z, 0.3, 0.6).unwrap().value,
            1e-4,
        );
    }

    #[test]
    fn points_local_gradient_matches_fd() {
        let codes = random_codes(14, 47);
        let lv = loss_points_local(&codes, 0.3, 0.6).unwrap();
        fd_check(
            &codes,
            &lv.grad,
            |z| loss_points_local(z, 0.3, 0.6).unwrap().value,
            1e-4,
        );
    }

    #[test]
    fn points_grad_gradient_matches_fd() {
        let codes = random_codes(14, 53);
        let lv = loss_points_grad(&codes, 0.3, 0.6).unwrap();
        fd_check(
            &codes,
            &lv.grad,
            |z| loss_points_grad(z, 0.3, 0.6).unwrap().value,
            1e-4,
        );
    }

    #[test]
    fn neighbor_weight_conventions() {
        let codes = array![[0.0, 0.0], [0.4, 0.0]];
        let field = GradientField {
            vectors: array![[1.0, 0.0], [0.0, 1.0]],
            magnitudes: vec![1.0, 1.0],
        };
        let b = neighbor_weights(&codes, &field, 0.5).unwrap();
        assert_abs_diff_eq!(b[[0, 1]], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(b[[1, 0]], 0.5, epsilon = 1e-12);
        assert_eq!(b[[0, 0]], 0.0);

        // symmetry and decay on a larger set
        let codes = random_codes(8, 59);
        let f = self_field(&codes, 0.3).unwrap().to_gradient_field();
        let b = neighbor_weights(&codes, &f, 0.4).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                assert_abs_diff_eq!(b[[i, j]], b[[j, i]], epsilon = 1e-12);
            }
        }

        // far-separated pair gets vanishing weight relative to near pair
        let codes = array![[0.0, 0.0], [0.1, 0.0], [100.0, 0.0]];
        let f = GradientField {
            vectors: array![[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]],
            magnitudes: vec![1.0, 1.0, 1.0],
        };
        let b = neighbor_weights(&codes, &f, 0.5).unwrap();
        assert!(b[[0, 2]] < 1e-8 * b[[0, 1]]);

        // degenerate all-zero weights (every pairwise kernel underflows):
        // uniform off-diagonal fallback
        let zf = GradientField {
            vectors: array![[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]],
            magnitudes: vec![1.0; 3],
        };
        let far = array![[0.0, 0.0], [1e6, 0.0], [0.0, 1e6]];
        let b = neighbor_weights(&far, &zf, 0.5).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 0.0 } else { 1.0 / 6.0 };
                assert_abs_diff_eq!(b[[i, j]], want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn grad_local_two_facing_gradients() {
        // two points: self-density gradients point at each other, so the
        // single pair cosine is -1 and the loss is +1
        let codes = array![[0.0, 0.0], [0.6, 0.0]];
        let lv = loss_grad_local(&codes, 0.3, 0.6).unwrap();
        assert_abs_diff_eq!(lv.value, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn grad_local_value_matches_direct_formula() {
        // independent route: neighbor weights times pairwise cosines
        let codes = random_codes(10, 77);
        let lv = loss_grad_local(&codes, 0.3, 0.6).unwrap();
        let field = self_field(&codes, 0.3).unwrap();
        let gf = field.to_gradient_field();
        let b = neighbor_weights(&codes, &gf, 0.6).unwrap();
        let mut direct = 0.0;
        for i in 0..10 {
            for ip in 0..10 {
                if i == ip {
                    continue;
                }
                let (mi, mip) = (gf.magnitudes[i], gf.magnitudes[ip]);
                if mi == 0.0 || mip == 0.0 {
                    continue;
                }
                let cos: f64 = gf
                    .vectors
                    .row(i)
                    .iter()
                    .zip(gf.vectors.row(ip))
                    .map(|(&a, &c)| a * c)
                    .sum::<f64>()
                    / (mi * mip);
                direct -= b[[i, ip]] * cos;
            }
        }
        assert_abs_diff_eq!(lv.value, direct, epsilon = 1e-12);
    }

    #[test]
    fn points_local_shared_coordinate() {
        let codes = array![[0.0, 0.3], [0.9, 0.3]];
        let lv = loss_points_local(&codes, 0.3, 0.6).unwrap();
        assert_abs_diff_eq!(lv.value, 0.0, epsilon = 1e-12);

        let diag = array![[0.0, 0.0], [0.7, 0.7]];
        let lv = loss_points_local(&diag, 0.3, 0.6).unwrap();
        assert_abs_diff_eq!(lv.value, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn points_grad_orthogonal_and_parallel() {
        // two points side by side: self-density gradients point towards
        // each other, parallel to the displacement
        let codes = array![[0.0, 0.0], [0.5, 0.0]];
        let lv = loss_points_grad(&codes, 0.3, 0.6).unwrap();
        assert_abs_diff_eq!(lv.value, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn reconstruction_examples() {
        let codes = array![[0.1, -0.2], [0.4, 0.9], [-1.0, 0.3]];
        // identity decoder, exact targets
        let dec = Decoder::Matrix(Array2::eye(2));
        let lv = loss_reconstruction(&codes, &dec, &codes).unwrap();
        assert_abs_diff_eq!(lv.value, 0.0, epsilon = 1e-15);

        // identity decoder, constant offset
        let c = [0.3, -0.7];
        let targets = {
            let mut t = codes.clone();
            for mut row in t.rows_mut() {
                row[0] += c[0];
                row[1] += c[1];
            }
            t
        };
        let lv = loss_reconstruction(&codes, &dec, &targets).unwrap();
        assert_abs_diff_eq!(lv.value, c[0] * c[0] + c[1] * c[1], epsilon = 1e-14);
    }

    #[test]
    fn reconstruction_gradient_matches_fd() {
        let mut rng = seeded(67);
        let codes = random_codes(10, 63);
        let a = Array2::from_shape_fn((2, 2), |_| rng.random_range(-1.0..1.0));
        let targets = random_codes(10, 65);
        let dec = Decoder::Matrix(a.clone());
        let lv = loss_reconstruction(&codes, &dec, &targets).unwrap();
        fd_check(
            &codes,
            &lv.grad,
            |z| loss_reconstruction(z, &dec, &targets).unwrap().value,
            1e-6,
        );

        let spec = crate::synth::DiffeoSpec::Monotone {
            maps: vec![
                crate::synth::Monotone1d::CubicLinear { linear: 0.8 },
                crate::synth::Monotone1d::Affine { scale: 1.4, offset: 0.2 },
            ],
        };
        let dec = Decoder::Diffeo(spec);
        let lv = loss_reconstruction(&codes, &dec, &targets).unwrap();
        fd_check(
            &codes,
            &lv.grad,
            |z| loss_reconstruction(z, &dec, &targets).unwrap().value,
            1e-6,
        );
    }

    #[test]
    fn total_loss_composition() {
        let codes = random_codes(12, 71);
        let zero = LossWeights {
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 0.0,
            lambda4: 0.0,
            lambda5: 0.0,
            sigma2: 0.5,
        };
        let lv = loss_total(&codes, &zero, 0.3, None, None).unwrap();
        assert_eq!(lv.value, 0.0);
        assert!(lv.grad.iter().all(|&g| g == 0.0));

        let only_axis = LossWeights {
            lambda2: 1.0,
            ..zero.clone()
        };
        let lv = loss_total(&codes, &only_axis, 0.3, None, None).unwrap();
        let direct = loss_grad_axis(&codes, 0.3).unwrap();
        assert_eq!(lv.value, direct.value);
        assert_eq!(lv.grad, direct.grad);

        // doubling every weight doubles value and gradient
        let w1 = LossWeights {
            lambda1: 0.5,
            lambda2: 1.0,
            lambda3: 0.25,
            lambda4: 0.75,
            lambda5: 0.0,
            sigma2: 0.5,
        };
        let w2 = LossWeights {
            lambda1: 1.0,
            lambda2: 2.0,
            lambda3: 0.5,
            lambda4: 1.5,
            lambda5: 0.0,
            sigma2: 0.5,
        };
        let a = loss_total(&codes, &w1, 0.3, None, None).unwrap();
        let b = loss_total(&codes, &w2, 0.3, None, None).unwrap();
        assert_abs_diff_eq!(b.value, 2.0 * a.value, epsilon = 1e-12);
        for (x, y) in a.grad.iter().zip(b.grad.iter()) {
            assert_abs_diff_eq!(*y, 2.0 * *x, epsilon = 1e-12);
        }
    }

    #[test]
    fn hfs_factorized_support_is_zero() {
        // product set: every recombination lands back in the set
        let vals = [0.0, 1.0, 2.0, 3.0];
        let mut rows = Vec::new();
        for &a in &vals {
            for &b in &vals {
                rows.push([a, b]);
            }
        }
        let codes = Array2::from_shape_fn((rows.len(), 2), |(i, j)| rows[i][j]);
        let lv = loss_hfs_hard(&codes, 5).unwrap();
        assert_eq!(lv.value, 0.0);
        assert!(lv.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn hfs_diagonal_is_positive() {
        let t = Array1::linspace(0.0, 3.0, 16);
        let codes = Array2::from_shape_fn((16, 2), |(i, _)| t[i]);
        let lv = loss_hfs_hard(&codes, 7).unwrap();
        assert!(lv.value > 0.1, "diagonal support scored {}", lv.value);
    }

    #[test]
    fn hfs_value_non_increasing_with_recombined_appended() {
        // direct evaluation oracle on explicit sets
        let codes = random_codes(40, 73);
        let recombined = recombine(&codes, 11);
        let (base, _, _) = hausdorff_hard_directed(&recombined, &codes);
        let mut widened = Array2::zeros((80, 2));
        for i in 0..40 {
            widened.row_mut(i).assign(&codes.row(i));
            widened.row_mut(40 + i).assign(&recombined.row(i));
        }
        let (after, _, _) = hausdorff_hard_directed(&recombined, &widened);
        assert!(after <= base + 1e-15);
        assert_eq!(after, 0.0);
    }

    #[test]
    fn hfs_gradient_matches_fd() {
        let codes = random_codes(12, 79);
        let lv = loss_hfs_hard(&codes, 3).unwrap();
        fd_check(
            &codes,
            &lv.grad,
            |z| loss_hfs_hard(z, 3).unwrap().value,
            1e-4,
        );
    }

    #[test]
    fn losses_reject_single_row() {
        let one = Array2::zeros((1, 2));
        assert!(loss_grad_axis(&one, 0.3).is_err());
        assert!(loss_grad_local(&one, 0.3, 0.5).is_err());
        assert!(loss_hfs_hard(&one, 0).is_err());
    }
}
