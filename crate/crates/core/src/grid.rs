//! Quantization operations and grid-structure data types.
//!
//! A latent density whose non-removable jumps lie on coordinate
//! hyperplanes defines, per axis, an ascending list of jump positions.
//! Those positions double as quantization thresholds: a scalar is mapped
//! to the number of thresholds it sits at or above. This module holds the
//! threshold containers, the quantization operations (plain, reversed and
//! signed), per-sample cell indexing, and the backbone check that decides
//! whether a set of axis-aligned separators pins down a full grid
//! structure.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ascending quantization thresholds for one axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Thresholds(Vec<f64>);

impl Thresholds {
    /// Build from an ascending, non-empty list.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Self::validate_values(&values, 0)?;
        Ok(Self(values))
    }

    fn validate_values(values: &[f64], axis: usize) -> Result<()> {
        if values.is_empty() {
            return Err(Error::InvalidThresholds {
                axis,
                reason: "empty threshold list".into(),
            });
        }
        for (k, w) in values.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidThresholds {
                    axis,
                    reason: format!("not strictly increasing at index {k}: {} !< {}", w[0], w[1]),
                });
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidThresholds {
                axis,
                reason: "non-finite threshold".into(),
            });
        }
        Ok(())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-axis ascending threshold tuples defining an axis-aligned grid.
///
/// Serializes to `{"axes": [[t, ...], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteCoordination {
    axes: Vec<Thresholds>,
}

impl DiscreteCoordination {
    pub fn new(axes: Vec<Thresholds>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidArgument("coordination needs d >= 1".into()));
        }
        let c = Self { axes };
        c.check_cell_count()?;
        Ok(c)
    }

    /// Build from raw per-axis value lists, validating each axis.
    pub fn from_values(axes: Vec<Vec<f64>>) -> Result<Self> {
        let axes = axes
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                Thresholds::validate_values(&v, i)?;
                Ok(Thresholds(v))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(axes)
    }

    /// Grids beyond 2^31 cells are rejected as impractical.
    fn check_cell_count(&self) -> Result<()> {
        let mut cells: u64 = 1;
        for t in &self.axes {
            cells = cells.saturating_mul(t.len() as u64 + 1);
            if cells > (1 << 31) {
                return Err(Error::InvalidArgument(format!(
                    "grid has more than 2^31 cells (d = {})",
                    self.axes.len()
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Thresholds] {
        &self.axes
    }

    pub fn axis(&self, i: usize) -> &Thresholds {
        &self.axes[i]
    }

    /// Threshold counts per axis.
    pub fn counts(&self) -> Vec<usize> {
        self.axes.iter().map(Thresholds::len).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(s)?;
        let axes = raw
            .get("axes")
            .and_then(|a| a.as_array())
            .ok_or_else(|| Error::Serialization("missing \"axes\" array".into()))?;
        let values: Vec<Vec<f64>> = axes
            .iter()
            .map(|ax| {
                ax.as_array()
                    .map(|v| v.iter().filter_map(serde_json::Value::as_f64).collect())
                    .ok_or_else(|| Error::Serialization("axis is not an array".into()))
            })
            .collect::<Result<_>>()?;
        Self::from_values(values)
    }
}

/// Axis-aligned separator with its bounding-box extent inside the support.
///
/// The extent interval on the separator's own axis is degenerate
/// `[position, position]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparatorExtent {
    pub axis: usize,
    pub position: f64,
    /// Per-axis closed intervals `[lo, hi]`.
    pub extent: Vec<[f64; 2]>,
}

impl SeparatorExtent {
    pub fn new(axis: usize, position: f64, mut extent: Vec<[f64; 2]>) -> Result<Self> {
        if axis >= extent.len() {
            return Err(Error::InvalidArgument(format!(
                "separator axis {axis} outside extent dimension {}",
                extent.len()
            )));
        }
        if extent.iter().any(|iv| !(iv[0] <= iv[1])) {
            return Err(Error::InvalidArgument("extent interval with lo > hi".into()));
        }
        extent[axis] = [position, position];
        Ok(Self { axis, position, extent })
    }

    fn contains_point(&self, z: &[f64]) -> bool {
        self.extent
            .iter()
            .zip(z)
            .all(|(iv, &zi)| iv[0] <= zi && zi <= iv[1])
    }

    fn spans_on_axis(&self, axis: usize, position: f64) -> bool {
        let iv = self.extent[axis];
        iv[0] <= position && position <= iv[1]
    }
}

/// Cell address of a sample: per-axis quantization levels.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CellIndex(pub Vec<usize>);

impl CellIndex {
    pub fn indices(&self) -> &[usize] {
        &self.0
    }
}

/// Number of thresholds at or below `z`: `sum_k 1[z >= t_k]`.
///
/// Total, monotone non-decreasing in `z`, with range `0..=t.len()`.
pub fn quantize(z: f64, t: &Thresholds) -> usize {
    t.values().iter().filter(|&&tk| z >= tk).count()
}

/// Order-reversed quantization: `sum_k 1[z <= t_k]`.
pub fn quantize_reversed(z: f64, t: &Thresholds) -> usize {
    t.values().iter().filter(|&&tk| z <= tk).count()
}

/// `quantize` when `sign` is +1, `quantize_reversed` when -1.
pub fn quantize_signed(z: f64, t: &Thresholds, sign: i8) -> usize {
    if sign >= 0 {
        quantize(z, t)
    } else {
        quantize_reversed(z, t)
    }
}

/// Componentwise quantization of a point against a coordination.
pub fn cell_index(z: &[f64], a: &DiscreteCoordination) -> Result<CellIndex> {
    if z.len() != a.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: z.len(),
        });
    }
    Ok(CellIndex(
        z.iter()
            .zip(a.axes())
            .map(|(&zi, t)| quantize(zi, t))
            .collect(),
    ))
}

/// Violation found by [`validate_coordination`].
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinationViolation {
    pub axis: usize,
    pub reason: String,
}

/// Check every axis for non-empty, strictly increasing thresholds.
///
/// Returns all violations, naming the offending axis; empty means ok.
pub fn validate_coordination(axes: &[Vec<f64>]) -> Vec<CoordinationViolation> {
    let mut violations = Vec::new();
    for (i, v) in axes.iter().enumerate() {
        if let Err(Error::InvalidThresholds { axis, reason }) = Thresholds::validate_values(v, i) {
            violations.push(CoordinationViolation { axis, reason });
        }
    }
    violations
}

/// Outcome of [`has_backbone`]: the chosen separators and their common
/// point when a backbone exists, or the reason none was found.
#[derive(Debug, Clone)]
pub enum BackboneResult {
    Found { chosen: Vec<usize>, point: Vec<f64> },
    NotFound { reason: String },
}

impl BackboneResult {
    pub fn is_backbone(&self) -> bool {
        matches!(self, BackboneResult::Found { .. })
    }
}

/// Search for a backbone: one separator per axis such that their
/// positions meet at a common point inside every chosen extent, and each
/// chosen separator spans the positions of all separators on every other
/// axis. Brute force over one-per-axis combinations.
pub fn has_backbone(separators: &[SeparatorExtent], d: usize) -> Result<BackboneResult> {
    if separators.iter().any(|s| s.axis >= d) {
        return Err(Error::InvalidArgument(
            "separator axis outside dimension".into(),
        ));
    }
    let mut by_axis: Vec<Vec<usize>> = vec![Vec::new(); d];
    for (idx, s) in separators.iter().enumerate() {
        by_axis[s.axis].push(idx);
    }
    for (i, group) in by_axis.iter().enumerate() {
        if group.is_empty() {
            return Ok(BackboneResult::NotFound {
                reason: format!("no separator on axis {i}"),
            });
        }
    }

    let mut choice = vec![0usize; d];
    loop {
        let chosen: Vec<usize> = (0..d).map(|i| by_axis[i][choice[i]]).collect();
        let point: Vec<f64> = chosen.iter().map(|&idx| separators[idx].position).collect();

        let meets = chosen
            .iter()
            .all(|&idx| separators[idx].contains_point(&point));
        let spans_all = meets
            && chosen.iter().all(|&idx| {
                let sep = &separators[idx];
                separators
                    .iter()
                    .filter(|other| other.axis != sep.axis)
                    .all(|other| sep.spans_on_axis(other.axis, other.position))
            });
        if spans_all {
            return Ok(BackboneResult::Found { chosen, point });
        }

        // next one-per-axis combination
        let mut axis = 0;
        loop {
            if axis == d {
                return Ok(BackboneResult::NotFound {
                    reason: "no one-per-axis combination meets at a common point spanning all \
                             separators"
                        .into(),
                });
            }
            choice[axis] += 1;
            if choice[axis] < by_axis[axis].len() {
                break;
            }
            choice[axis] = 0;
            axis += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(vals: &[f64]) -> Thresholds {
        Thresholds::new(vals.to_vec()).unwrap()
    }

    #[test]
    fn quantize_worked_example() {
        let th = t(&[0.5, 2.0]);
        assert_eq!(quantize(1.0, &th), 1);
        assert_eq!(quantize(0.3, &th), 0);
        assert_eq!(quantize(3.0, &th), 2);
        // boundary conventions: >= for Q, <= for the reversed variant
        assert_eq!(quantize(0.5, &th), 1);
        assert_eq!(quantize_reversed(2.0, &th), 1);
    }

    #[test]
    fn quantize_reversed_examples() {
        let th = t(&[0.5, 2.0]);
        assert_eq!(quantize_reversed(0.3, &th), 2);
        assert_eq!(quantize_reversed(3.0, &th), 0);
    }

    #[test]
    fn quantize_signed_examples() {
        let th = t(&[0.5, 2.0]);
        assert_eq!(quantize_signed(1.0, &th, 1), 1);
        assert_eq!(quantize_signed(1.0, &th, -1), 1);
        assert_eq!(quantize_signed(2.0, &th, -1), 1);
    }

    #[test]
    fn cell_index_examples() {
        let a = DiscreteCoordination::from_values(vec![vec![0.5, 2.0], vec![1.0]]).unwrap();
        assert_eq!(cell_index(&[1.0, 0.2], &a).unwrap().indices(), &[1, 0]);
        assert_eq!(cell_index(&[-1.0, -1.0], &a).unwrap().indices(), &[0, 0]);
        assert_eq!(cell_index(&[3.0, 1.5], &a).unwrap().indices(), &[2, 1]);
        assert!(matches!(
            cell_index(&[1.0], &a),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn validate_coordination_reports_offending_axis() {
        assert!(validate_coordination(&[vec![0.5, 2.0], vec![1.0]]).is_empty());

        let v = validate_coordination(&[vec![2.0, 0.5], vec![1.0]]);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].axis, 0);

        let v = validate_coordination(&[vec![], vec![1.0]]);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].axis, 0);
    }

    #[test]
    fn coordination_json_round_trip() {
        let a = DiscreteCoordination::from_values(vec![vec![0.5, 2.0], vec![1.0]]).unwrap();
        let json = a.to_json().unwrap();
        assert!(json.contains("\"axes\""));
        let b = DiscreteCoordination::from_json(&json).unwrap();
        assert_eq!(a, b);
    }

    fn full_grid_separators() -> Vec<SeparatorExtent> {
        // complete 2D grid on [0,4]^2: vertical at x=1,2,3; horizontal at y=2
        let full = |axis, pos| {
            SeparatorExtent::new(axis, pos, vec![[0.0, 4.0], [0.0, 4.0]]).unwrap()
        };
        vec![full(0, 1.0), full(0, 2.0), full(0, 3.0), full(1, 2.0)]
    }

    #[test]
    fn backbone_full_grid() {
        let seps = full_grid_separators();
        let r = has_backbone(&seps, 2).unwrap();
        assert!(r.is_backbone());
        if let BackboneResult::Found { point, .. } = r {
            assert_eq!(point.len(), 2);
        }
    }

    #[test]
    fn backbone_fails_when_horizontal_stops_short() {
        // horizontal separator extent stops before the right-most vertical
        let full = |pos| SeparatorExtent::new(0, pos, vec![[0.0, 4.0], [0.0, 4.0]]).unwrap();
        let seps = vec![
            full(1.0),
            full(2.0),
            full(3.0),
            SeparatorExtent::new(1, 2.0, vec![[0.0, 2.5], [0.0, 4.0]]).unwrap(),
        ];
        let r = has_backbone(&seps, 2).unwrap();
        assert!(!r.is_backbone());
    }

    #[test]
    fn backbone_missing_axis() {
        let seps = vec![SeparatorExtent::new(0, 1.0, vec![[0.0, 4.0], [0.0, 4.0]]).unwrap()];
        match has_backbone(&seps, 2).unwrap() {
            BackboneResult::NotFound { reason } => assert!(reason.contains("axis 1")),
            BackboneResult::Found { .. } => panic!("expected no backbone"),
        }
    }

    #[test]
    fn backbone_axis_relabel_equivariance() {
        // swapping the two axes consistently must not change the outcome
        let swap = |s: &SeparatorExtent| {
            SeparatorExtent::new(1 - s.axis, s.position, vec![s.extent[1], s.extent[0]]).unwrap()
        };
        for seps in [full_grid_separators(), {
            let mut v = full_grid_separators();
            v[3] = SeparatorExtent::new(1, 2.0, vec![[0.0, 2.5], [0.0, 4.0]]).unwrap();
            v
        }] {
            let swapped: Vec<_> = seps.iter().map(swap).collect();
            assert_eq!(
                has_backbone(&seps, 2).unwrap().is_backbone(),
                has_backbone(&swapped, 2).unwrap().is_backbone()
            );
        }
    }

    #[test]
    fn rejects_oversized_grid() {
        let axes: Vec<Vec<f64>> = (0..11)
            .map(|_| (0..1023).map(|k| k as f64).collect())
            .collect();
        assert!(DiscreteCoordination::from_values(axes).is_err());
    }
}
