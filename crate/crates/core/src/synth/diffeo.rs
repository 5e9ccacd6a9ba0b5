//! Closed-form diffeomorphisms used as mixing maps.
//!
//! Every spec provides a forward map, an inverse, the log absolute
//! Jacobian determinant, and a transposed Jacobian-vector product, all in
//! closed form (the cubic inverse runs a safeguarded Newton iteration to
//! 1e-12). Compositions chain these pieces.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::DiscreteCoordination;
use crate::linalg;
use crate::rng::Prng;
use rand::Rng;

const MAX_LINEAR_CONDITION: f64 = 1e6;

/// Strictly increasing scalar map with a closed-form derivative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Monotone1d {
    /// `scale * z + offset`, `scale > 0`.
    Affine { scale: f64, offset: f64 },
    /// `z^3 + linear * z`, `linear > 0`.
    CubicLinear { linear: f64 },
    /// `out_scale * tanh(in_scale * z + in_offset) + out_offset`,
    /// `out_scale > 0`, `in_scale > 0`.
    TanhAffine {
        out_scale: f64,
        in_scale: f64,
        in_offset: f64,
        out_offset: f64,
    },
}

impl Monotone1d {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Monotone1d::Affine { scale, .. } => *scale > 0.0,
            Monotone1d::CubicLinear { linear } => *linear > 0.0,
            Monotone1d::TanhAffine {
                out_scale, in_scale, ..
            } => *out_scale > 0.0 && *in_scale > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "monotone map must have strictly positive derivative: {self:?}"
            )))
        }
    }

    pub fn forward(&self, z: f64) -> f64 {
        match self {
            Monotone1d::Affine { scale, offset } => scale * z + offset,
            Monotone1d::CubicLinear { linear } => z * z * z + linear * z,
            Monotone1d::TanhAffine {
                out_scale,
                in_scale,
                in_offset,
                out_offset,
            } => out_scale * (in_scale * z + in_offset).tanh() + out_offset,
        }
    }

    pub fn inverse(&self, y: f64) -> Result<f64> {
        match self {
            Monotone1d::Affine { scale, offset } => Ok((y - offset) / scale),
            Monotone1d::CubicLinear { linear } => Ok(invert_cubic(*linear, y)),
            Monotone1d::TanhAffine {
                out_scale,
                in_scale,
                in_offset,
                out_offset,
            } => {
                let t = (y - out_offset) / out_scale;
                if t.abs() >= 1.0 {
                    return Err(Error::Numeric(format!(
                        "tanh inverse out of range: |{t}| >= 1"
                    )));
                }
                Ok((t.atanh() - in_offset) / in_scale)
            }
        }
    }

    /// log of the (positive) derivative at `z`.
    pub fn log_deriv(&self, z: f64) -> f64 {
        match self {
            Monotone1d::Affine { scale, .. } => scale.ln(),
            Monotone1d::CubicLinear { linear } => (3.0 * z * z + linear).ln(),
            Monotone1d::TanhAffine {
                out_scale,
                in_scale,
                in_offset,
                ..
            } => {
                let t = (in_scale * z + in_offset).tanh();
                (out_scale * in_scale).ln() + (1.0 - t * t).ln()
            }
        }
    }

    pub fn deriv(&self, z: f64) -> f64 {
        match self {
            Monotone1d::Affine { scale, .. } => *scale,
            Monotone1d::CubicLinear { linear } => 3.0 * z * z + linear,
            Monotone1d::TanhAffine {
                out_scale,
                in_scale,
                in_offset,
                ..
            } => {
                let t = (in_scale * z + in_offset).tanh();
                out_scale * in_scale * (1.0 - t * t)
            }
        }
    }
}

/// Solve `x^3 + a x = y` (`a > 0`, single real root) by Newton with a
/// bisection fallback, to 1e-12.
fn invert_cubic(a: f64, y: f64) -> f64 {
    let f = |x: f64| x * x * x + a * x - y;
    // bracket: |root| <= max(cbrt(|y|), |y|/a)
    let bound = (y.abs().cbrt()).max(y.abs() / a) + 1.0;
    let (mut lo, mut hi) = (-bound, bound);
    let mut x = y.cbrt();
    for _ in 0..200 {
        let fx = f(x);
        if fx.abs() <= 1e-12 * (1.0 + y.abs()) {
            return x;
        }
        if fx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let step = fx / (3.0 * x * x + a);
        let mut next = x - step;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= f64::EPSILON * x.abs() {
            return next;
        }
        x = next;
    }
    x
}

/// Invertible mixing map with closed-form inverse and Jacobian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiffeoSpec {
    /// `x = M z` with `M` square and well conditioned.
    Linear {
        #[serde(with = "crate::ser")]
        matrix: Array2<f64>,
    },
    /// Independent strictly increasing map per coordinate.
    Monotone { maps: Vec<Monotone1d> },
    /// Orthogonal map; the Jacobian log-determinant is exactly zero.
    Rotation {
        #[serde(with = "crate::ser")]
        matrix: Array2<f64>,
    },
    /// Chain applied left to right.
    Composition { parts: Vec<DiffeoSpec> },
}

/// Axis bookkeeping of an axis-respecting map: input axis `i` lands on
/// output axis `perm[i]`, with orientation `sign[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisStructure {
    pub perm: Vec<usize>,
    pub sign: Vec<i8>,
}

impl DiffeoSpec {
    pub fn identity(d: usize) -> Self {
        DiffeoSpec::Linear {
            matrix: Array2::eye(d),
        }
    }

    pub fn linear(matrix: Array2<f64>) -> Result<Self> {
        let s = DiffeoSpec::Linear { matrix };
        s.validate(s.dim())?;
        Ok(s)
    }

    pub fn rotation_2d(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        DiffeoSpec::Rotation {
            matrix: ndarray::array![[c, -s], [s, c]],
        }
    }

    /// Exact signed permutation: output axis `perm[i]` takes input axis
    /// `i` multiplied by `sign[i]`.
    pub fn signed_permutation(perm: &[usize], sign: &[i8]) -> Result<Self> {
        let d = perm.len();
        let mut seen = vec![false; d];
        for &p in perm {
            if p >= d || seen[p] {
                return Err(Error::InvalidArgument("invalid permutation".into()));
            }
            seen[p] = true;
        }
        let mut m = Array2::zeros((d, d));
        for (i, &j) in perm.iter().enumerate() {
            m[[j, i]] = f64::from(sign[i]);
        }
        Ok(DiffeoSpec::Linear { matrix: m })
    }

    /// Random square matrix with i.i.d. normal entries, re-drawn until
    /// the condition number is below `cond_limit`.
    pub fn random_linear(d: usize, cond_limit: f64, rng: &mut Prng) -> Self {
        use rand_distr::{Distribution, StandardNormal};
        loop {
            let m = Array2::from_shape_fn((d, d), |_| StandardNormal.sample(rng));
            if linalg::condition_number(&m) < cond_limit {
                return DiffeoSpec::Linear { matrix: m };
            }
        }
    }

    /// Random axis-respecting composition: per-axis monotone warps
    /// followed by a random signed permutation. `coord_bound` is the
    /// largest coordinate magnitude the map must handle; tanh stages are
    /// sized to stay away from saturation on that range.
    pub fn random_monotone_composition(d: usize, coord_bound: f64, rng: &mut Prng) -> Self {
        let maps = (0..d)
            .map(|_| match rng.random_range(0..3u8) {
                0 => Monotone1d::Affine {
                    scale: rng.random_range(0.5..2.0),
                    offset: rng.random_range(-1.0..1.0),
                },
                1 => Monotone1d::CubicLinear {
                    linear: rng.random_range(0.3..2.0),
                },
                _ => Monotone1d::TanhAffine {
                    out_scale: rng.random_range(2.0..5.0),
                    in_scale: rng.random_range(0.5..1.0) * 2.0 / coord_bound.max(1.0),
                    in_offset: rng.random_range(-0.2..0.2),
                    out_offset: rng.random_range(-1.0..1.0),
                },
            })
            .collect();
        let mut perm: Vec<usize> = (0..d).collect();
        for i in (1..d).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        let sign: Vec<i8> = (0..d)
            .map(|_| if rng.random_range(0..2u8) == 0 { 1 } else { -1 })
            .collect();
        DiffeoSpec::Composition {
            parts: vec![
                DiffeoSpec::Monotone { maps },
                DiffeoSpec::signed_permutation(&perm, &sign).unwrap(),
            ],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DiffeoSpec::Linear { matrix } | DiffeoSpec::Rotation { matrix } => matrix.nrows(),
            DiffeoSpec::Monotone { maps } => maps.len(),
            DiffeoSpec::Composition { parts } => parts.first().map_or(0, DiffeoSpec::dim),
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        match self {
            DiffeoSpec::Linear { matrix } => {
                if matrix.nrows() != d || matrix.ncols() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: matrix.nrows().max(matrix.ncols()),
                    });
                }
                let cond = linalg::condition_number(matrix);
                if !(cond < MAX_LINEAR_CONDITION) {
                    return Err(Error::Numeric(format!(
                        "linear map condition number {cond:.3e} exceeds {MAX_LINEAR_CONDITION:.0e}"
                    )));
                }
                Ok(())
            }
            DiffeoSpec::Rotation { matrix } => {
                if matrix.nrows() != d || matrix.ncols() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: matrix.nrows().max(matrix.ncols()),
                    });
                }
                let gram = matrix.t().dot(matrix);
                for i in 0..d {
                    for j in 0..d {
                        let want = if i == j { 1.0 } else { 0.0 };
                        if (gram[[i, j]] - want).abs() > 1e-10 {
                            return Err(Error::InvalidArgument(
                                "rotation matrix is not orthogonal".into(),
                            ));
                        }
                    }
                }
                Ok(())
            }
            DiffeoSpec::Monotone { maps } => {
                if maps.len() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: maps.len(),
                    });
                }
                maps.iter().try_for_each(Monotone1d::validate)
            }
            DiffeoSpec::Composition { parts } => {
                if parts.is_empty() {
                    return Err(Error::InvalidArgument("empty composition".into()));
                }
                parts.iter().try_for_each(|p| p.validate(d))
            }
        }
    }

    pub fn forward_point(&self, z: &[f64]) -> Vec<f64> {
        match self {
            DiffeoSpec::Linear { matrix } | DiffeoSpec::Rotation { matrix } => (0..matrix
                .nrows())
                .map(|j| (0..z.len()).map(|i| matrix[[j, i]] * z[i]).sum())
                .collect(),
            DiffeoSpec::Monotone { maps } => {
                maps.iter().zip(z).map(|(m, &zi)| m.forward(zi)).collect()
            }
            DiffeoSpec::Composition { parts } => {
                let mut cur = z.to_vec();
                for p in parts {
                    cur = p.forward_point(&cur);
                }
                cur
            }
        }
    }

    pub fn inverse_point(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            DiffeoSpec::Linear { matrix } | DiffeoSpec::Rotation { matrix } => {
                let inv = self.inverse_matrix(matrix)?;
                Ok((0..inv.nrows())
                    .map(|j| (0..x.len()).map(|i| inv[[j, i]] * x[i]).sum())
                    .collect())
            }
            DiffeoSpec::Monotone { maps } => maps
                .iter()
                .zip(x)
                .map(|(m, &xi)| m.inverse(xi))
                .collect(),
            DiffeoSpec::Composition { parts } => {
                let mut cur = x.to_vec();
                for p in parts.iter().rev() {
                    cur = p.inverse_point(&cur)?;
                }
                Ok(cur)
            }
        }
    }

    fn inverse_matrix(&self, matrix: &Array2<f64>) -> Result<Array2<f64>> {
        match self {
            DiffeoSpec::Rotation { .. } => Ok(matrix.t().to_owned()),
            _ => linalg::inverse(matrix),
        }
    }

    /// Row-wise forward map of an `n x d` sample matrix.
    pub fn apply_forward(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        let d = self.dim();
        if z.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: z.ncols(),
            });
        }
        let mut out = Array2::zeros((z.nrows(), d));
        for (i, row) in z.rows().into_iter().enumerate() {
            let y = self.forward_point(row.as_slice().unwrap());
            out.row_mut(i).iter_mut().zip(&y).for_each(|(o, &v)| *o = v);
        }
        Ok(out)
    }

    /// Row-wise inverse map of an `n x d` sample matrix.
    pub fn apply_inverse(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let d = self.dim();
        if x.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.ncols(),
            });
        }
        let mut out = Array2::zeros((x.nrows(), d));
        for (i, row) in x.rows().into_iter().enumerate() {
            let z = self.inverse_point(row.as_slice().unwrap())?;
            out.row_mut(i).iter_mut().zip(&z).for_each(|(o, &v)| *o = v);
        }
        Ok(out)
    }

    /// log |det J| of the forward map at `z`. For compositions this is
    /// the sum of the parts' terms evaluated along the chain.
    pub fn log_abs_det_jacobian(&self, z: &[f64]) -> f64 {
        match self {
            DiffeoSpec::Linear { matrix } => linalg::log_abs_det(matrix),
            DiffeoSpec::Rotation { .. } => 0.0,
            DiffeoSpec::Monotone { maps } => {
                maps.iter().zip(z).map(|(m, &zi)| m.log_deriv(zi)).sum()
            }
            DiffeoSpec::Composition { parts } => {
                let mut cur = z.to_vec();
                let mut total = 0.0;
                for p in parts {
                    total += p.log_abs_det_jacobian(&cur);
                    cur = p.forward_point(&cur);
                }
                total
            }
        }
    }

    /// Transposed Jacobian-vector product `J(z)^T v` of the forward map.
    pub fn vjp(&self, z: &[f64], v: &[f64]) -> Vec<f64> {
        match self {
            DiffeoSpec::Linear { matrix } | DiffeoSpec::Rotation { matrix } => (0..matrix
                .ncols())
                .map(|i| (0..v.len()).map(|j| matrix[[j, i]] * v[j]).sum())
                .collect(),
            DiffeoSpec::Monotone { maps } => maps
                .iter()
                .zip(z.iter().zip(v))
                .map(|(m, (&zi, &vi))| m.deriv(zi) * vi)
                .collect(),
            DiffeoSpec::Composition { parts } => {
                let mut points = Vec::with_capacity(parts.len());
                let mut cur = z.to_vec();
                for p in parts {
                    points.push(cur.clone());
                    cur = p.forward_point(&cur);
                }
                let mut cot = v.to_vec();
                for (p, at) in parts.iter().zip(points.iter()).rev() {
                    cot = p.vjp(at, &cot);
                }
                cot
            }
        }
    }

    /// Axis structure if the map is axis-respecting (every linear stage a
    /// signed scaled permutation, monotone stages always); error
    /// otherwise.
    pub fn axis_structure(&self) -> Result<AxisStructure> {
        match self {
            DiffeoSpec::Monotone { maps } => Ok(AxisStructure {
                perm: (0..maps.len()).collect(),
                sign: vec![1; maps.len()],
            }),
            DiffeoSpec::Linear { matrix } | DiffeoSpec::Rotation { matrix } => {
                signed_permutation_structure(matrix)
            }
            DiffeoSpec::Composition { parts } => {
                let d = self.dim();
                let mut perm: Vec<usize> = (0..d).collect();
                let mut sign = vec![1i8; d];
                for p in parts {
                    let st = p.axis_structure()?;
                    let mut nperm = vec![0usize; d];
                    let mut nsign = vec![1i8; d];
                    for i in 0..d {
                        nperm[i] = st.perm[perm[i]];
                        nsign[i] = sign[i] * st.sign[perm[i]];
                    }
                    perm = nperm;
                    sign = nsign;
                }
                Ok(AxisStructure { perm, sign })
            }
        }
    }

    /// Per-axis pushforward of quantization thresholds through an
    /// axis-respecting map. Returns the output-axis coordination together
    /// with the map's axis structure. `probe` supplies the off-axis
    /// coordinates at which threshold images are read (any point in the
    /// domain works since coordinates do not interact).
    pub fn push_thresholds(
        &self,
        a: &DiscreteCoordination,
        probe: &[f64],
    ) -> Result<(DiscreteCoordination, AxisStructure)> {
        let st = self.axis_structure()?;
        let d = a.dim();
        if probe.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: probe.len(),
            });
        }
        let mut out_axes: Vec<Vec<f64>> = vec![Vec::new(); d];
        for i in 0..d {
            let j = st.perm[i];
            let mut imgs: Vec<f64> = a
                .axis(i)
                .values()
                .iter()
                .map(|&tau| {
                    let mut z = probe.to_vec();
                    z[i] = tau;
                    self.forward_point(&z)[j]
                })
                .collect();
            imgs.sort_by(|x, y| x.partial_cmp(y).unwrap());
            out_axes[j] = imgs;
        }
        Ok((DiscreteCoordination::from_values(out_axes)?, st))
    }
}

fn signed_permutation_structure(matrix: &Array2<f64>) -> Result<AxisStructure> {
    let d = matrix.nrows();
    let max_abs = matrix.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-9 * max_abs;
    let mut perm = vec![usize::MAX; d];
    let mut sign = vec![1i8; d];
    let mut row_used = vec![false; d];
    for i in 0..d {
        let mut hits = 0;
        for j in 0..d {
            if matrix[[j, i]].abs() > tol {
                hits += 1;
                perm[i] = j;
                sign[i] = if matrix[[j, i]] > 0.0 { 1 } else { -1 };
            }
        }
        if hits != 1 || row_used[perm[i]] {
            return Err(Error::NotAxisRespecting(format!(
                "column {i} of the linear stage touches {hits} output axes"
            )));
        }
        row_used[perm[i]] = true;
    }
    Ok(AxisStructure { perm, sign })
}
