//! Verification harnesses.
//!
//! [`verify_quantized_recovery`] checks, by exhaustive enumeration over
//! samples, that an axis-respecting map (coordinatewise strictly monotone
//! stages composed with signed permutations) preserves quantized cells
//! exactly: quantizing an input coordinate against the source thresholds
//! equals quantizing the mapped coordinate against the pushed thresholds,
//! in the matched direction, for every sample. Zero violations is the
//! requirement, not a tolerance.
//!
//! [`verify_pushforward_density`] checks the change-of-variables relation
//! numerically for a generic map: the kernel density estimate built on
//! mapped samples must agree with the source estimate pulled back through
//! the inverse map and scaled by the inverse Jacobian determinant, at
//! test points away from density jumps.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::density::{log_density, KdeModel};
use crate::error::{Error, Result};
use crate::grid::{quantize, quantize_signed, DiscreteCoordination};
use crate::rng;
use crate::synth::{DiffeoSpec, GridSpec};

/// Outcome of the exact recovery check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryCheck {
    pub pass: bool,
    pub violations: usize,
    pub samples: usize,
    /// Input axis `i` landed on output axis `perm[i]`.
    pub perm: Vec<usize>,
    pub sign: Vec<i8>,
    /// Pushed thresholds on the output axes.
    pub pushed: DiscreteCoordination,
}

/// Exact quantized-cell preservation under an axis-respecting map.
///
/// Samples are drawn uniformly over a box padded around the thresholds.
/// Errors if the map is not axis-respecting (a generic map needs the full
/// learned pipeline instead, not this exact check).
pub fn verify_quantized_recovery(
    a: &DiscreteCoordination,
    h: &DiffeoSpec,
    n: usize,
    seed: u64,
) -> Result<RecoveryCheck> {
    let d = a.dim();
    if h.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: h.dim() });
    }
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    let mut lo = Vec::with_capacity(d);
    let mut hi = Vec::with_capacity(d);
    for t in a.axes() {
        let vals = t.values();
        let (mn, mx) = (vals[0], vals[vals.len() - 1]);
        let pad = 0.5 * (mx - mn).max(1.0);
        lo.push(mn - pad);
        hi.push(mx + pad);
    }
    let probe: Vec<f64> = lo.iter().zip(&hi).map(|(&l, &h)| 0.5 * (l + h)).collect();
    let (pushed, st) = h.push_thresholds(a, &probe)?;

    let mut rng = rng::derived(seed, "recovery_samples", 0);
    let mut violations = 0usize;
    let mut z = vec![0.0; d];
    for _ in 0..n {
        for j in 0..d {
            z[j] = lo[j] + rng.random::<f64>() * (hi[j] - lo[j]);
        }
        let zp = h.forward_point(&z);
        for i in 0..d {
            let q = quantize(z[i], a.axis(i));
            let j = st.perm[i];
            let qp = quantize_signed(zp[j], pushed.axis(j), st.sign[i]);
            if q != qp {
                violations += 1;
            }
        }
    }
    Ok(RecoveryCheck {
        pass: violations == 0,
        violations,
        samples: n,
        perm: st.perm,
        sign: st.sign,
        pushed,
    })
}

/// Outcome of the numeric change-of-variables check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PushforwardReport {
    pub mean_abs_rel_err: f64,
    pub max_abs_rel_err: f64,
    pub n_used: usize,
    pub n_excluded: usize,
}

/// Compare the kernel density of mapped samples against the source
/// density pulled back through the map, at test points given in the
/// mapped space. Points within `margin_bandwidths * bandwidth` of a
/// density jump (any threshold plane or support boundary, measured in
/// both spaces) are excluded.
pub fn verify_pushforward_density(
    h: &DiffeoSpec,
    z_samples: &Array2<f64>,
    grid: &GridSpec,
    bandwidth: f64,
    test_points: &Array2<f64>,
    margin_bandwidths: f64,
) -> Result<PushforwardReport> {
    let d = grid.dim();
    if z_samples.ncols() != d || test_points.ncols() != d || h.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: z_samples.ncols().max(test_points.ncols()),
        });
    }
    let mapped = h.apply_forward(z_samples)?;
    let kde_z = KdeModel::new(z_samples.clone(), bandwidth)?;
    let kde_zp = KdeModel::new(mapped, bandwidth)?;
    let margin = margin_bandwidths * bandwidth;

    // jump planes: interior thresholds and the support boundary
    let mut planes: Vec<(usize, f64)> = Vec::new();
    for i in 0..d {
        for &t in grid.coordination.axis(i).values() {
            planes.push((i, t));
        }
        planes.push((i, grid.ranges[i][0]));
        planes.push((i, grid.ranges[i][1]));
    }

    let mut total = 0.0;
    let mut worst = 0.0f64;
    let mut used = 0usize;
    let mut excluded = 0usize;
    for row in test_points.rows() {
        let zp = row.as_slice().unwrap();
        let z = h.inverse_point(zp)?;
        let mut near_jump = false;
        for &(i, tau) in &planes {
            if (z[i] - tau).abs() <= margin {
                near_jump = true;
                break;
            }
            let mut proj = z.clone();
            proj[i] = tau;
            let img = h.forward_point(&proj);
            let dist2: f64 = img
                .iter()
                .zip(zp)
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum();
            if dist2.sqrt() <= margin {
                near_jump = true;
                break;
            }
        }
        if near_jump {
            excluded += 1;
            continue;
        }
        let log_ref = log_density(&kde_z, &z)? - h.log_abs_det_jacobian(&z);
        let log_est = log_density(&kde_zp, zp)?;
        let rel = ((log_est - log_ref).exp() - 1.0).abs();
        total += rel;
        worst = worst.max(rel);
        used += 1;
    }
    if used == 0 {
        return Err(Error::InvalidArgument(
            "every test point sat within the exclusion margin of a jump".into(),
        ));
    }
    Ok(PushforwardReport {
        mean_abs_rel_err: total / used as f64,
        max_abs_rel_err: worst,
        n_used: used,
        n_excluded: excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{boost_diagonal, make_grid_spec, sample_latents, Monotone1d};

    fn coordination_4x4() -> DiscreteCoordination {
        DiscreteCoordination::from_values(vec![vec![0.8, 2.0, 3.1], vec![0.5, 1.9, 3.4]])
            .unwrap()
    }

    #[test]
    fn recovery_identity() {
        let a = coordination_4x4();
        let check =
            verify_quantized_recovery(&a, &DiffeoSpec::identity(2), 10_000, 1).unwrap();
        assert!(check.pass);
        assert_eq!(check.violations, 0);
        assert_eq!(check.perm, vec![0, 1]);
    }

    #[test]
    fn recovery_swap_and_warp() {
        // (z1, z2) -> (tanh-affine(z2), cubic(z1)): swap plus monotone warps
        let a = coordination_4x4();
        let h = DiffeoSpec::Composition {
            parts: vec![
                DiffeoSpec::Monotone {
                    maps: vec![
                        Monotone1d::CubicLinear { linear: 0.9 },
                        Monotone1d::TanhAffine {
                            out_scale: 3.0,
                            in_scale: 0.3,
                            in_offset: 0.0,
                            out_offset: 0.5,
                        },
                    ],
                },
                DiffeoSpec::signed_permutation(&[1, 0], &[1, 1]).unwrap(),
            ],
        };
        let check = verify_quantized_recovery(&a, &h, 100_000, 2).unwrap();
        assert!(check.pass, "violations: {}", check.violations);
        assert_eq!(check.perm, vec![1, 0]);
    }

    #[test]
    fn recovery_reversal_and_warp() {
        let a = coordination_4x4();
        let h = DiffeoSpec::Composition {
            parts: vec![
                DiffeoSpec::Monotone {
                    maps: vec![
                        Monotone1d::Affine { scale: 1.7, offset: -0.4 },
                        Monotone1d::CubicLinear { linear: 0.5 },
                    ],
                },
                DiffeoSpec::signed_permutation(&[0, 1], &[-1, 1]).unwrap(),
            ],
        };
        let check = verify_quantized_recovery(&a, &h, 100_000, 3).unwrap();
        assert!(check.pass, "violations: {}", check.violations);
        assert_eq!(check.sign, vec![-1, 1]);
    }

    #[test]
    fn recovery_rejects_generic_rotation() {
        let a = coordination_4x4();
        let rot = DiffeoSpec::rotation_2d(std::f64::consts::PI / 6.0);
        assert!(matches!(
            verify_quantized_recovery(&a, &rot, 100, 4),
            Err(Error::NotAxisRespecting(_))
        ));
    }

    fn test_setup(seed: u64, n: usize) -> (GridSpec, Array2<f64>, Array2<f64>) {
        let spec = boost_diagonal(
            &make_grid_spec(2, &[4, 4], &[[0.0, 4.0], [0.0, 4.0]], seed).unwrap(),
            6.0,
        )
        .unwrap();
        let z = sample_latents(&spec, n, seed + 7).unwrap();
        // generous candidate count: the jump margins exclude most of the plane
        let fresh = sample_latents(&spec, 4000, seed + 13).unwrap();
        (spec, z, fresh)
    }

    #[test]
    fn pushforward_identity_is_exact() {
        let (spec, z, fresh) = test_setup(5, 5_000);
        let id = DiffeoSpec::identity(2);
        let test_points = id.apply_forward(&fresh).unwrap();
        let rep =
            verify_pushforward_density(&id, &z, &spec, 0.1, &test_points, 3.0).unwrap();
        assert!(rep.n_used > 50);
        assert!(
            rep.mean_abs_rel_err < 1e-10,
            "identity disagreement: {}",
            rep.mean_abs_rel_err
        );
    }

    #[test]
    fn pushforward_linear_scaling() {
        let (spec, z, fresh) = test_setup(6, 20_000);
        let two_i = DiffeoSpec::Linear {
            matrix: ndarray::array![[2.0, 0.0], [0.0, 2.0]],
        };
        let test_points = two_i.apply_forward(&fresh).unwrap();
        let rep =
            verify_pushforward_density(&two_i, &z, &spec, 0.1, &test_points, 3.0).unwrap();
        assert!(rep.n_used > 50);
        assert!(
            rep.mean_abs_rel_err < 0.15,
            "scaling disagreement: {}",
            rep.mean_abs_rel_err
        );
    }

    #[test]
    fn pushforward_rotation_of_monotone() {
        let (spec, z, fresh) = test_setup(7, 20_000);
        let h = DiffeoSpec::Composition {
            parts: vec![
                DiffeoSpec::Monotone {
                    maps: vec![
                        Monotone1d::Affine { scale: 0.8, offset: 0.1 },
                        Monotone1d::TanhAffine {
                            out_scale: 6.0,
                            in_scale: 0.25,
                            in_offset: -0.4,
                            out_offset: 0.0,
                        },
                    ],
                },
                DiffeoSpec::rotation_2d(0.5),
            ],
        };
        let test_points = h.apply_forward(&fresh).unwrap();
        let rep = verify_pushforward_density(&h, &z, &spec, 0.1, &test_points, 3.0).unwrap();
        assert!(rep.n_used > 30, "only {} points used", rep.n_used);
        assert!(
            rep.mean_abs_rel_err < 0.15,
            "pushforward disagreement: {}",
            rep.mean_abs_rel_err
        );
    }
}
