//! Evaluation: threshold detection from learned codes, matching recovered
//! cells to ground truth up to axis permutation and order reversal, and
//! the verification harnesses.
//!
//! Threshold detection keeps the top fraction of points by log-density
//! gradient magnitude, assigns each to its dominant gradient axis, masks
//! points near the empirical support boundary (the support edge is itself
//! a density jump and would otherwise contaminate the clusters), and runs
//! seeded 1D k-means per axis; the sorted cluster centers are the
//! detected thresholds.

pub mod verify;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::density::self_field;
use crate::error::{Error, Result};
use crate::grid::DiscreteCoordination;
use crate::linalg;
use crate::rng::{self, Prng};

/// Detection knobs besides the per-axis cluster counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectParams {
    #[serde(default = "default_bandwidth")]
    pub bandwidth: f64,
    /// Fraction of points kept by gradient magnitude.
    #[serde(default = "default_top_fraction")]
    pub top_fraction: f64,
    /// Support-boundary mask width in bandwidth units.
    #[serde(default = "default_edge_margin")]
    pub edge_margin: f64,
    pub seed: u64,
}

fn default_bandwidth() -> f64 {
    0.1
}
fn default_top_fraction() -> f64 {
    0.1
}
fn default_edge_margin() -> f64 {
    2.0
}

impl DetectParams {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            bandwidth: default_bandwidth(),
            top_fraction: default_top_fraction(),
            edge_margin: default_edge_margin(),
            seed,
        }
    }
}

/// Detected thresholds with a per-axis cluster-spread diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedThresholds {
    pub coordination: DiscreteCoordination,
    /// RMS within-cluster spread divided by the axis range.
    pub spread_ratio: Vec<f64>,
}

impl DetectedThresholds {
    /// Axes whose cluster spread exceeds `range / k`: the clusters do not
    /// look like localized density jumps.
    pub fn low_confidence_axes(&self, k_per_axis: &[usize]) -> Vec<usize> {
        self.spread_ratio
            .iter()
            .enumerate()
            .filter(|&(j, &r)| r > 1.0 / k_per_axis[j] as f64)
            .map(|(j, _)| j)
            .collect()
    }
}

/// Seeded Lloyd iteration in one dimension; `restarts` inits, lowest
/// inertia wins. Returns sorted centers and the inertia.
pub fn kmeans_1d(xs: &[f64], k: usize, restarts: usize, seed: u64) -> Result<(Vec<f64>, f64)> {
    if k == 0 || xs.len() < k {
        return Err(Error::InvalidArgument(format!(
            "cannot fit {k} clusters to {} points",
            xs.len()
        )));
    }
    let range = xs.iter().cloned().fold(f64::INFINITY, f64::min)
        ..xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (range.end - range.start).max(f64::MIN_POSITIVE);

    let mut best: Option<(Vec<f64>, f64)> = None;
    for r in 0..restarts {
        let mut rng = rng::derived(seed, "kmeans_restart", r as u64);
        let (centers, inertia) = lloyd_1d(xs, k, span, &mut rng);
        if best.as_ref().is_none_or(|(_, bi)| inertia < *bi) {
            best = Some((centers, inertia));
        }
    }
    let (mut centers, inertia) = best.unwrap();
    centers.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok((centers, inertia))
}

fn lloyd_1d(xs: &[f64], k: usize, span: f64, rng: &mut Prng) -> (Vec<f64>, f64) {
    let n = xs.len();
    let pick = rng::shuffled_indices(n, rng);
    let mut centers: Vec<f64> = pick[..k].iter().map(|&i| xs[i]).collect();
    let mut assign = vec![0usize; n];
    for _ in 0..100 {
        let mut changed = false;
        for (i, &x) in xs.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = (x - centers[0]).abs();
            for (c, &ctr) in centers.iter().enumerate().skip(1) {
                let d = (x - ctr).abs();
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (i, &x) in xs.iter().enumerate() {
            sums[assign[i]] += x;
            counts[assign[i]] += 1;
        }
        let mut moved = 0.0f64;
        for c in 0..k {
            if counts[c] == 0 {
                // re-seed an empty cluster at the worst-fit point
                let far = xs
                    .iter()
                    .enumerate()
                    .max_by(|(_, a), (_, b)| {
                        let da = (**a - centers[assign_of(xs, &centers, **a)]).abs();
                        let db = (**b - centers[assign_of(xs, &centers, **b)]).abs();
                        da.partial_cmp(&db).unwrap()
                    })
                    .map(|(i, _)| i)
                    .unwrap();
                centers[c] = xs[far];
                moved = f64::INFINITY;
                continue;
            }
            let next = sums[c] / counts[c] as f64;
            moved = moved.max((next - centers[c]).abs());
            centers[c] = next;
        }
        if !changed && moved <= 1e-12 * span {
            break;
        }
    }
    let inertia: f64 = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| (x - centers[assign[i]]) * (x - centers[assign[i]]))
        .sum();
    (centers, inertia)
}

fn assign_of(_xs: &[f64], centers: &[f64], x: f64) -> usize {
    let mut best = 0usize;
    let mut best_d = (x - centers[0]).abs();
    for (c, &ctr) in centers.iter().enumerate().skip(1) {
        let d = (x - ctr).abs();
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

/// Detect per-axis quantization thresholds in a code matrix.
pub fn detect_thresholds(
    codes: &Array2<f64>,
    k_per_axis: &[usize],
    params: &DetectParams,
) -> Result<DetectedThresholds> {
    let n = codes.nrows();
    let d = codes.ncols();
    if k_per_axis.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: k_per_axis.len(),
        });
    }
    if k_per_axis.iter().any(|&k| k == 0) {
        return Err(Error::InvalidArgument(
            "every axis needs at least one threshold".into(),
        ));
    }
    let total_k: usize = k_per_axis.iter().sum();
    let kept_n = ((params.top_fraction * n as f64).ceil() as usize).min(n);
    if kept_n < 10 * total_k {
        return Err(Error::InvalidArgument(format!(
            "top fraction keeps {kept_n} points, need at least {}",
            10 * total_k
        )));
    }

    let field = self_field(codes, params.bandwidth)?;
    let mags = field.magnitudes();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| mags[b].partial_cmp(&mags[a]).unwrap().then(a.cmp(&b)));
    let kept = &order[..kept_n];

    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for row in codes.rows() {
        for j in 0..d {
            lo[j] = lo[j].min(row[j]);
            hi[j] = hi[j].max(row[j]);
        }
    }
    let margin = params.edge_margin * params.bandwidth;

    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); d];
    for &i in kept {
        let v = field.vectors.row(i);
        let mut axis = 0usize;
        for j in 1..d {
            if v[j].abs() > v[axis].abs() {
                axis = j;
            }
        }
        let coord = codes[[i, axis]];
        if coord - lo[axis] < margin || hi[axis] - coord < margin {
            continue;
        }
        buckets[axis].push(coord);
    }

    let mut axes = Vec::with_capacity(d);
    let mut spread_ratio = Vec::with_capacity(d);
    for j in 0..d {
        let k = k_per_axis[j];
        if buckets[j].len() < k.max(2) {
            return Err(Error::AxisUnderpopulated {
                axis: j,
                got: buckets[j].len(),
                need: k.max(2),
            });
        }
        // same sub-seed on every axis: detection then commutes exactly
        // with axis permutations of the input
        let (centers, inertia) =
            kmeans_1d(&buckets[j], k, 10, rng::derive(params.seed, "kmeans", 0))?;
        let rms = (inertia / buckets[j].len() as f64).sqrt();
        spread_ratio.push(rms / (hi[j] - lo[j]).max(f64::MIN_POSITIVE));
        axes.push(centers);
    }
    Ok(DetectedThresholds {
        coordination: DiscreteCoordination::from_values(axes)?,
        spread_ratio,
    })
}

/// Best axis permutation and reversal matching predicted cells to true
/// cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// True axis `i` corresponds to predicted axis `permutation[i]`.
    pub permutation: Vec<usize>,
    /// Order reversal per true axis.
    pub reversal: Vec<i8>,
    /// Per true axis: predicted label -> remapped label.
    pub per_axis_label_maps: Vec<Vec<usize>>,
    /// Fraction of samples whose remapped cell equals the true cell.
    pub agreement: f64,
}

impl MatchResult {
    /// Remap one predicted cell row into true-axis order and labels.
    pub fn remap(&self, pred: &[usize]) -> Vec<usize> {
        (0..self.permutation.len())
            .map(|i| self.per_axis_label_maps[i][pred[self.permutation[i]]])
            .collect()
    }
}

fn permutations(d: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..d).collect();
    fn heap(k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(cur.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, cur, out);
            if k % 2 == 0 {
                cur.swap(i, k - 1);
            } else {
                cur.swap(0, k - 1);
            }
        }
    }
    heap(d, &mut cur, &mut out);
    out.sort();
    out
}

/// Exhaustive search over all `d! * 2^d` axis permutations and reversals,
/// maximizing full-cell agreement; ties resolve to the lexicographically
/// smallest `(permutation, reversal)` with `+1` ordered before `-1`.
pub fn match_and_score(
    true_cells: &Array2<usize>,
    pred_cells: &Array2<usize>,
    k_true: &[usize],
    k_pred: &[usize],
) -> Result<MatchResult> {
    let n = true_cells.nrows();
    let d = true_cells.ncols();
    if pred_cells.nrows() != n || pred_cells.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: pred_cells.ncols(),
        });
    }
    if d > 8 {
        return Err(Error::InvalidArgument(format!(
            "exhaustive matching is limited to d <= 8, got {d}; a greedy mode is not provided"
        )));
    }
    {
        let mut st: Vec<usize> = k_true.to_vec();
        let mut sp: Vec<usize> = k_pred.to_vec();
        st.sort_unstable();
        sp.sort_unstable();
        if st != sp {
            let ta = (0..d).find(|&i| !k_pred.contains(&k_true[i])).unwrap_or(0);
            return Err(Error::CardinalityMismatch {
                true_axis: ta,
                pred_axis: ta,
                true_k: k_true[ta],
                pred_k: *k_pred.get(ta).unwrap_or(&0),
            });
        }
    }

    let words = n.div_ceil(64);
    // match masks per (true axis, pred axis, direction)
    let mut masks: Vec<Vec<Option<Vec<u64>>>> = vec![vec![None, None]; d * d];
    for i in 0..d {
        for j in 0..d {
            if k_true[i] != k_pred[j] {
                continue;
            }
            let kk = k_true[i];
            for (si, sgn) in [1i8, -1i8].iter().enumerate() {
                let mut bits = vec![0u64; words];
                for r in 0..n {
                    let p = pred_cells[[r, j]];
                    let remapped = if *sgn == 1 { p } else { kk - p };
                    if true_cells[[r, i]] == remapped {
                        bits[r / 64] |= 1u64 << (r % 64);
                    }
                }
                masks[i * d + j][si] = Some(bits);
            }
        }
    }

    let mut best: Option<(usize, Vec<usize>, Vec<i8>)> = None;
    let mut acc = vec![0u64; words];
    for perm in permutations(d) {
        if (0..d).any(|i| k_true[i] != k_pred[perm[i]]) {
            continue;
        }
        for sbits in 0..(1usize << d) {
            let signs: Vec<i8> = (0..d)
                .map(|i| if sbits >> i & 1 == 0 { 1 } else { -1 })
                .collect();
            acc.iter_mut().for_each(|w| *w = u64::MAX);
            for i in 0..d {
                let si = usize::from(signs[i] == -1);
                let bits = masks[i * d + perm[i]][si].as_ref().unwrap();
                for (a, b) in acc.iter_mut().zip(bits) {
                    *a &= b;
                }
            }
            // clear padding bits past n
            if n % 64 != 0 {
                let keep = (1u64 << (n % 64)) - 1;
                *acc.last_mut().unwrap() &= keep;
            }
            let count: usize = acc.iter().map(|w| w.count_ones() as usize).sum();
            if best.as_ref().is_none_or(|(bc, _, _)| count > *bc) {
                best = Some((count, perm.clone(), signs));
            }
        }
    }
    let (count, permutation, reversal) = best.ok_or_else(|| Error::CardinalityMismatch {
        true_axis: 0,
        pred_axis: 0,
        true_k: k_true[0],
        pred_k: k_pred[0],
    })?;

    let per_axis_label_maps = (0..d)
        .map(|i| {
            let kk = k_true[i];
            (0..=kk)
                .map(|v| if reversal[i] == 1 { v } else { kk - v })
                .collect()
        })
        .collect();
    Ok(MatchResult {
        permutation,
        reversal,
        per_axis_label_maps,
        agreement: count as f64 / n as f64,
    })
}

/// Per-true-cell match counts under a fixed matching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellConfusion {
    pub cell: Vec<usize>,
    pub total: usize,
    pub matched: usize,
}

pub fn confusion_summary(
    true_cells: &Array2<usize>,
    pred_cells: &Array2<usize>,
    matching: &MatchResult,
    k_true: &[usize],
) -> Vec<CellConfusion> {
    let d = k_true.len();
    let counts: Vec<usize> = k_true.iter().map(|&k| k + 1).collect();
    let n_cells: usize = counts.iter().product();
    let linear = |cell: &[usize]| -> usize {
        cell.iter().zip(&counts).fold(0, |acc, (&c, &m)| acc * m + c)
    };
    let mut table: Vec<CellConfusion> = (0..n_cells)
        .map(|mut lin| {
            let mut cell = vec![0usize; d];
            for i in (0..d).rev() {
                cell[i] = lin % counts[i];
                lin /= counts[i];
            }
            CellConfusion { cell, total: 0, matched: 0 }
        })
        .collect();
    for r in 0..true_cells.nrows() {
        let t: Vec<usize> = true_cells.row(r).to_vec();
        let p = matching.remap(pred_cells.row(r).as_slice().unwrap());
        let entry = &mut table[linear(&t)];
        entry.total += 1;
        if t == p {
            entry.matched += 1;
        }
    }
    table
}

/// Mean agreement of seeded row-shuffled predictions, re-matched each
/// time: the chance level against which the real agreement is read.
pub fn null_agreement(
    true_cells: &Array2<usize>,
    pred_cells: &Array2<usize>,
    k_true: &[usize],
    k_pred: &[usize],
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let n = pred_cells.nrows();
    let mut total = 0.0;
    for t in 0..trials {
        let mut rng = rng::derived(seed, "null_shuffle", t as u64);
        let order = rng::shuffled_indices(n, &mut rng);
        let mut shuffled = Array2::zeros(pred_cells.raw_dim());
        for (r, &src) in order.iter().enumerate() {
            shuffled.row_mut(r).assign(&pred_cells.row(src));
        }
        total += match_and_score(true_cells, &shuffled, k_true, k_pred)?.agreement;
    }
    Ok(total / trials as f64)
}

/// Mean over rows of the largest absolute entry of the row-normalized
/// product `W M`: 1 exactly when the composite map is a signed scaled
/// permutation. Rank-deficient products score 0.
pub fn alignment_index(w: &Array2<f64>, m: &Array2<f64>) -> Result<f64> {
    if w.ncols() != m.nrows() {
        return Err(Error::DimensionMismatch {
            expected: w.ncols(),
            got: m.nrows(),
        });
    }
    let p = w.dot(m);
    if p.nrows() != p.ncols() {
        return Err(Error::DimensionMismatch {
            expected: p.nrows(),
            got: p.ncols(),
        });
    }
    if !linalg::condition_number(&p).is_finite() {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for row in p.rows() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        let max = row.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        acc += max / norm;
    }
    Ok(acc / p.nrows() as f64)
}
