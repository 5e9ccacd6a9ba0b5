//! Gaussian kernel density estimation with analytic derivatives.
//!
//! The estimate is an isotropic-Gaussian mixture over a reference set,
//! evaluated with log-sum-exp stabilization. Besides plain queries
//! ([`log_density`], [`grad_log_density`], [`hessian_log_density`]) the
//! module provides the self-density gradient field of a code matrix
//! (reference set = query set) and the transposed Jacobian-vector product
//! of that field with respect to the codes, which the training losses
//! chain through. Kernel log-weights more than 40 below the row maximum
//! are dropped from every softmax sum.

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Log-weights this far below the row maximum are dropped.
const LOG_WEIGHT_CUTOFF: f64 = 40.0;

/// Gaussian kernel density estimate: reference points and bandwidth.
#[derive(Debug, Clone)]
pub struct KdeModel {
    points: Array2<f64>,
    bandwidth: f64,
}

impl KdeModel {
    pub fn new(points: Array2<f64>, bandwidth: f64) -> Result<Self> {
        if points.nrows() == 0 {
            return Err(Error::InvalidArgument("empty reference set".into()));
        }
        if !(bandwidth > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "bandwidth must be positive, got {bandwidth}"
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite reference point".into()));
        }
        Ok(Self { points, bandwidth })
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }
}

/// Log-density gradients at query points with their Euclidean norms.
#[derive(Debug, Clone)]
pub struct GradientField {
    pub vectors: Array2<f64>,
    pub magnitudes: Vec<f64>,
}

impl GradientField {
    fn from_vectors(vectors: Array2<f64>) -> Self {
        let magnitudes = vectors
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        Self { vectors, magnitudes }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum()
}

/// log of the kernel mixture at `z`.
pub fn log_density(model: &KdeModel, z: &[f64]) -> Result<f64> {
    let d = model.dim();
    if z.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: z.len() });
    }
    let sigma2 = model.bandwidth * model.bandwidth;
    let pts = model.points.as_slice().unwrap();
    let m = model.points.nrows();

    let mut max_l = f64::NEG_INFINITY;
    for k in 0..m {
        let l = -sq_dist(z, &pts[k * d..(k + 1) * d]) / (2.0 * sigma2);
        if l > max_l {
            max_l = l;
        }
    }
    let mut sum = 0.0;
    for k in 0..m {
        let l = -sq_dist(z, &pts[k * d..(k + 1) * d]) / (2.0 * sigma2);
        if l - max_l >= -LOG_WEIGHT_CUTOFF {
            sum += (l - max_l).exp();
        }
    }
    let norm = (m as f64).ln() + 0.5 * d as f64 * (2.0 * std::f64::consts::PI * sigma2).ln();
    Ok(max_l + sum.ln() - norm)
}

/// Gradient of the log-density at one query point.
pub fn grad_at(model: &KdeModel, z: &[f64]) -> Result<Vec<f64>> {
    let d = model.dim();
    if z.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: z.len() });
    }
    let sigma2 = model.bandwidth * model.bandwidth;
    let pts = model.points.as_slice().unwrap();
    let m = model.points.nrows();

    let mut max_l = f64::NEG_INFINITY;
    for k in 0..m {
        let l = -sq_dist(z, &pts[k * d..(k + 1) * d]) / (2.0 * sigma2);
        if l > max_l {
            max_l = l;
        }
    }
    let mut sum = 0.0;
    let mut acc = vec![0.0; d];
    for k in 0..m {
        let p = &pts[k * d..(k + 1) * d];
        let l = -sq_dist(z, p) / (2.0 * sigma2);
        if l - max_l < -LOG_WEIGHT_CUTOFF {
            continue;
        }
        let e = (l - max_l).exp();
        sum += e;
        for j in 0..d {
            acc[j] += e * (p[j] - z[j]);
        }
    }
    acc.iter_mut().for_each(|a| *a /= sum * sigma2);
    Ok(acc)
}

/// Analytic log-density gradients at every query row.
pub fn grad_log_density(model: &KdeModel, queries: &Array2<f64>) -> Result<GradientField> {
    let d = model.dim();
    if queries.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: queries.ncols(),
        });
    }
    let n = queries.nrows();
    let q = queries.as_slice().unwrap();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| grad_at(model, &q[i * d..(i + 1) * d]).unwrap())
        .collect();
    let mut vectors = Array2::zeros((n, d));
    for (i, row) in rows.iter().enumerate() {
        vectors.row_mut(i).iter_mut().zip(row).for_each(|(o, &v)| *o = v);
    }
    Ok(GradientField::from_vectors(vectors))
}

/// Analytic Hessian of the log-density at `z`; exactly symmetric.
pub fn hessian_log_density(model: &KdeModel, z: &[f64]) -> Result<Array2<f64>> {
    let d = model.dim();
    if z.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: z.len() });
    }
    let sigma2 = model.bandwidth * model.bandwidth;
    let pts = model.points.as_slice().unwrap();
    let m = model.points.nrows();

    let mut max_l = f64::NEG_INFINITY;
    for k in 0..m {
        let l = -sq_dist(z, &pts[k * d..(k + 1) * d]) / (2.0 * sigma2);
        if l > max_l {
            max_l = l;
        }
    }
    let mut sum = 0.0;
    let mut mean_u = vec![0.0; d];
    let mut second = Array2::<f64>::zeros((d, d));
    for k in 0..m {
        let p = &pts[k * d..(k + 1) * d];
        let l = -sq_dist(z, p) / (2.0 * sigma2);
        if l - max_l < -LOG_WEIGHT_CUTOFF {
            continue;
        }
        let e = (l - max_l).exp();
        sum += e;
        let u: Vec<f64> = (0..d).map(|j| (p[j] - z[j]) / sigma2).collect();
        for a in 0..d {
            mean_u[a] += e * u[a];
            for b in 0..d {
                second[[a, b]] += e * u[a] * u[b];
            }
        }
    }
    mean_u.iter_mut().for_each(|v| *v /= sum);
    let mut h = second / sum;
    for a in 0..d {
        for b in 0..d {
            h[[a, b]] -= mean_u[a] * mean_u[b];
        }
        h[[a, a]] -= 1.0 / sigma2;
    }
    // mirror the upper triangle so symmetry is exact in floating point
    for a in 0..d {
        for b in (a + 1)..d {
            h[[b, a]] = h[[a, b]];
        }
    }
    Ok(h)
}

/// Normalized gradient magnitudes; uniform when the field vanishes.
pub fn importance_weights(field: &GradientField) -> Vec<f64> {
    let total: f64 = field.magnitudes.iter().sum();
    let n = field.magnitudes.len();
    if total <= 0.0 {
        return vec![1.0 / n as f64; n];
    }
    field.magnitudes.iter().map(|&m| m / total).collect()
}

/// Self-density gradient field of a code matrix: the reference set is the
/// code set itself (each point kept in its own kernel sum, so the row
/// maximum of the log-weights is the self term at zero).
#[derive(Debug, Clone)]
pub struct SelfField {
    pub vectors: Array2<f64>,
    /// Per-row softmax denominators `S_i = sum_k exp(l_ik)`.
    pub denoms: Vec<f64>,
}

impl SelfField {
    pub fn magnitudes(&self) -> Vec<f64> {
        self.vectors
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    }

    pub fn to_gradient_field(&self) -> GradientField {
        GradientField::from_vectors(self.vectors.clone())
    }
}

/// Compute the self-density gradient field of `codes`.
pub fn self_field(codes: &Array2<f64>, bandwidth: f64) -> Result<SelfField> {
    if codes.nrows() < 2 {
        return Err(Error::InvalidArgument(
            "self-density needs at least 2 points".into(),
        ));
    }
    if !(bandwidth > 0.0) {
        return Err(Error::InvalidArgument("bandwidth must be positive".into()));
    }
    let n = codes.nrows();
    let d = codes.ncols();
    let sigma2 = bandwidth * bandwidth;
    let flat = codes.as_slice().unwrap();

    let per_row: Vec<(Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let zi = &flat[i * d..(i + 1) * d];
            let mut s = 0.0;
            let mut acc = vec![0.0; d];
            for k in 0..n {
                let zk = &flat[k * d..(k + 1) * d];
                let l = -sq_dist(zi, zk) / (2.0 * sigma2);
                if l < -LOG_WEIGHT_CUTOFF {
                    continue;
                }
                let e = l.exp();
                s += e;
                for j in 0..d {
                    acc[j] += e * (zk[j] - zi[j]);
                }
            }
            acc.iter_mut().for_each(|a| *a /= s * sigma2);
            (acc, s)
        })
        .collect();

    let mut vectors = Array2::zeros((n, d));
    let mut denoms = Vec::with_capacity(n);
    for (i, (v, s)) in per_row.iter().enumerate() {
        vectors.row_mut(i).iter_mut().zip(v).for_each(|(o, &x)| *o = x);
        denoms.push(*s);
    }
    Ok(SelfField { vectors, denoms })
}

/// Transposed Jacobian-vector product of the self-density field: given
/// cotangents `c_i` for each field row `V_i`, accumulate
/// `sum_i (dV_i/dz_r)^T c_i` for every code row `r`.
///
/// Row `i`'s field depends on `z_r` both through the query (`r = i`) and
/// through the reference role of `z_r` in every other row's kernel sum;
/// both paths are included, which is what makes the training losses'
/// analytic gradients match finite differences of their values.
pub fn self_field_vjp(
    codes: &Array2<f64>,
    bandwidth: f64,
    field: &SelfField,
    cotangents: &Array2<f64>,
) -> Array2<f64> {
    let n = codes.nrows();
    let d = codes.ncols();
    let sigma2 = bandwidth * bandwidth;
    let flat = codes.as_slice().unwrap();
    let v = field.vectors.as_slice().unwrap();
    let c = cotangents.as_slice().unwrap();

    // per-row dot(V_i, c_i), reused by every partner row
    let vc: Vec<f64> = (0..n)
        .map(|i| (0..d).map(|j| v[i * d + j] * c[i * d + j]).sum())
        .collect();

    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|r| {
            let zr = &flat[r * d..(r + 1) * d];
            let cr = &c[r * d..(r + 1) * d];
            let vr = &v[r * d..(r + 1) * d];
            let s_r = field.denoms[r];
            let mut out = vec![0.0; d];
            let mut u = vec![0.0; d];
            for i in 0..n {
                if i == r {
                    continue;
                }
                let zi = &flat[i * d..(i + 1) * d];
                let l = -sq_dist(zr, zi) / (2.0 * sigma2);
                if l < -LOG_WEIGHT_CUTOFF {
                    continue;
                }
                let e = l.exp();
                // u = u_{r,i} = (z_i - z_r) / sigma^2
                for j in 0..d {
                    u[j] = (zi[j] - zr[j]) / sigma2;
                }
                // query r, reference i: second-moment term of the row-r Jacobian
                let w_ri = e / s_r;
                let u_dot_cr: f64 = (0..d).map(|j| u[j] * cr[j]).sum();
                // query i, reference r: cross term with u_{i,r} = -u
                let w_ir = e / field.denoms[i];
                let ci = &c[i * d..(i + 1) * d];
                let u_ir_dot_ci: f64 = (0..d).map(|j| -u[j] * ci[j]).sum();
                let coeff = w_ir * (vc[i] - u_ir_dot_ci);
                for j in 0..d {
                    out[j] += w_ri * u_dot_cr * u[j];
                    out[j] += coeff * (-u[j]) + w_ir * ci[j] / sigma2;
                }
            }
            let vr_dot_cr: f64 = (0..d).map(|j| vr[j] * cr[j]).sum();
            let w_rr = 1.0 / s_r;
            for j in 0..d {
                out[j] -= vr[j] * vr_dot_cr;
                out[j] -= (1.0 - w_rr) * cr[j] / sigma2;
            }
            out
        })
        .collect();

    let mut grad = Array2::zeros((n, d));
    for (r, row) in rows.iter().enumerate() {
        grad.row_mut(r).iter_mut().zip(row).for_each(|(o, &x)| *o = x);
    }
    grad
}

/// Gradient-magnitude heatmap on a regular grid over `bbox` in the plane
/// of the two selected axes; all other coordinates are fixed at the
/// per-coordinate median of the reference set.
#[derive(Debug, Clone)]
pub struct Heatmap {
    /// Row-major, shape `(ny, nx)`; row `iy` pairs with `ys[iy]`.
    pub values: Array2<f64>,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

pub fn gradient_magnitude_heatmap(
    model: &KdeModel,
    bbox: &[[f64; 2]; 2],
    resolution: (usize, usize),
    axes: (usize, usize),
) -> Result<Heatmap> {
    let (nx, ny) = resolution;
    if nx < 2 || ny < 2 {
        return Err(Error::InvalidArgument(format!(
            "heatmap resolution must be at least 2 per axis, got ({nx}, {ny})"
        )));
    }
    let d = model.dim();
    let (ax, ay) = axes;
    if ax >= d || ay >= d || ax == ay {
        return Err(Error::InvalidArgument(format!(
            "invalid heatmap axes ({ax}, {ay}) for dimension {d}"
        )));
    }
    let mut base = vec![0.0; d];
    for j in 0..d {
        let mut col: Vec<f64> = model.points.column(j).to_vec();
        col.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let m = col.len();
        base[j] = if m % 2 == 1 {
            col[m / 2]
        } else {
            0.5 * (col[m / 2 - 1] + col[m / 2])
        };
    }
    let lin = |lo: f64, hi: f64, n: usize, k: usize| lo + (hi - lo) * k as f64 / (n - 1) as f64;
    let xs: Vec<f64> = (0..nx).map(|k| lin(bbox[0][0], bbox[0][1], nx, k)).collect();
    let ys: Vec<f64> = (0..ny).map(|k| lin(bbox[1][0], bbox[1][1], ny, k)).collect();

    let cells: Vec<Vec<f64>> = ys
        .par_iter()
        .map(|&y| {
            let mut z = base.clone();
            z[ay] = y;
            xs.iter()
                .map(|&x| {
                    z[ax] = x;
                    let g = grad_at(model, &z).unwrap();
                    g.iter().map(|v| v * v).sum::<f64>().sqrt()
                })
                .collect()
        })
        .collect();
    let mut values = Array2::zeros((ny, nx));
    for (iy, row) in cells.iter().enumerate() {
        values.row_mut(iy).iter_mut().zip(row).for_each(|(o, &v)| *o = v);
    }
    Ok(Heatmap { values, xs, ys })
}
