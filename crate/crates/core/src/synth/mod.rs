//! Synthetic latent distributions with grid-structured densities.
//!
//! A [`GridSpec`] carries per-axis ranges, interior thresholds and a flat
//! table of per-cell prior probabilities. Sampling draws a cell from the
//! priors and then a point uniformly inside the open cell box, so the
//! density is piecewise constant and every separator is a genuine jump.

pub mod diffeo;

pub use diffeo::{AxisStructure, DiffeoSpec, Monotone1d};

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{cell_index, DiscreteCoordination};
use crate::rng::{open_unit, Prng};

/// Generative spec for a grid-structured latent density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Per-axis `[lo, hi]` support ranges.
    pub ranges: Vec<[f64; 2]>,
    pub coordination: DiscreteCoordination,
    /// Flat cell priors, last axis fastest.
    pub priors: Vec<f64>,
}

impl GridSpec {
    pub fn dim(&self) -> usize {
        self.ranges.len()
    }

    /// Cells per axis (threshold count + 1).
    pub fn cells_per_axis(&self) -> Vec<usize> {
        self.coordination.counts().iter().map(|k| k + 1).collect()
    }

    pub fn n_cells(&self) -> usize {
        self.cells_per_axis().iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.ranges.len() != self.coordination.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.ranges.len(),
                got: self.coordination.dim(),
            });
        }
        for (i, (r, t)) in self.ranges.iter().zip(self.coordination.axes()).enumerate() {
            if !(r[1] > r[0]) {
                return Err(Error::InvalidArgument(format!(
                    "degenerate range on axis {i}: [{}, {}]",
                    r[0], r[1]
                )));
            }
            if t.values().iter().any(|&v| v <= r[0] || v >= r[1]) {
                return Err(Error::InvalidThresholds {
                    axis: i,
                    reason: "threshold outside the open axis range".into(),
                });
            }
        }
        if self.priors.len() != self.n_cells() {
            return Err(Error::InvalidArgument(format!(
                "prior table has {} entries, grid has {} cells",
                self.priors.len(),
                self.n_cells()
            )));
        }
        if self.priors.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(Error::InvalidArgument("negative or non-finite prior".into()));
        }
        let sum: f64 = self.priors.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "priors sum to {sum}, expected 1 within 1e-12"
            )));
        }
        Ok(())
    }

    /// Flat index of a cell, last axis fastest.
    pub fn linear_cell(&self, cell: &[usize]) -> usize {
        let counts = self.cells_per_axis();
        cell.iter()
            .zip(&counts)
            .fold(0, |acc, (&c, &n)| acc * n + c)
    }

    /// Multi-index of a flat cell index.
    pub fn cell_of_linear(&self, mut lin: usize) -> Vec<usize> {
        let counts = self.cells_per_axis();
        let mut cell = vec![0usize; counts.len()];
        for i in (0..counts.len()).rev() {
            cell[i] = lin % counts[i];
            lin /= counts[i];
        }
        cell
    }

    /// Per-axis `[lo, hi]` box of a cell.
    pub fn cell_box(&self, cell: &[usize]) -> Vec<[f64; 2]> {
        cell.iter()
            .enumerate()
            .map(|(i, &c)| {
                let t = self.coordination.axis(i).values();
                let lo = if c == 0 { self.ranges[i][0] } else { t[c - 1] };
                let hi = if c == t.len() { self.ranges[i][1] } else { t[c] };
                [lo, hi]
            })
            .collect()
    }

    /// Per-sample cell indices of a latent matrix.
    pub fn cells_of(&self, z: &Array2<f64>) -> Result<Array2<usize>> {
        let mut out = Array2::zeros((z.nrows(), self.dim()));
        for (i, row) in z.rows().into_iter().enumerate() {
            let c = cell_index(row.as_slice().unwrap(), &self.coordination)?;
            for (o, &v) in out.row_mut(i).iter_mut().zip(c.indices()) {
                *o = v;
            }
        }
        Ok(out)
    }
}

/// Draw a grid spec: thresholds uniform inside each range (re-drawn on
/// collision), priors i.i.d. standard uniform then normalized.
pub fn make_grid_spec(
    d: usize,
    cells_per_axis: &[usize],
    ranges: &[[f64; 2]],
    seed: u64,
) -> Result<GridSpec> {
    if cells_per_axis.len() != d || ranges.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: cells_per_axis.len().min(ranges.len()),
        });
    }
    if let Some(i) = cells_per_axis.iter().position(|&c| c < 2) {
        return Err(Error::InvalidArgument(format!(
            "axis {i} needs at least 2 cells, got {}",
            cells_per_axis[i]
        )));
    }
    if let Some(i) = ranges.iter().position(|r| !(r[1] > r[0])) {
        return Err(Error::InvalidArgument(format!(
            "degenerate range on axis {i}"
        )));
    }
    let mut rng = Prng::seed_from_u64(seed);
    let mut axes = Vec::with_capacity(d);
    for i in 0..d {
        let k = cells_per_axis[i] - 1;
        let [lo, hi] = ranges[i];
        let vals = loop {
            let mut vals: Vec<f64> = (0..k)
                .map(|_| lo + open_unit(&mut rng) * (hi - lo))
                .collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            if vals.windows(2).all(|w| w[1] > w[0]) {
                break vals;
            }
        };
        axes.push(vals);
    }
    let coordination = DiscreteCoordination::from_values(axes)?;
    let n_cells: usize = cells_per_axis.iter().product();
    let mut priors: Vec<f64> = (0..n_cells).map(|_| rng.random::<f64>()).collect();
    let sum: f64 = priors.iter().sum();
    priors.iter_mut().for_each(|p| *p /= sum);
    let spec = GridSpec {
        ranges: ranges.to_vec(),
        coordination,
        priors,
    };
    spec.validate()?;
    Ok(spec)
}

/// Multiply the priors of all-equal-index cells by `factor` and
/// renormalize. Requires a square grid and `factor >= 1`.
pub fn boost_diagonal(spec: &GridSpec, factor: f64) -> Result<GridSpec> {
    let counts = spec.cells_per_axis();
    if counts.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::InvalidArgument(
            "diagonal boost needs a square grid".into(),
        ));
    }
    if !(factor >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "boost factor must be >= 1, got {factor}"
        )));
    }
    let mut out = spec.clone();
    for c in 0..counts[0] {
        let cell = vec![c; counts.len()];
        let lin = spec.linear_cell(&cell);
        out.priors[lin] *= factor;
    }
    let sum: f64 = out.priors.iter().sum();
    out.priors.iter_mut().for_each(|p| *p /= sum);
    Ok(out)
}

/// Draw `n` latent rows: a cell from the priors, then a point uniformly
/// inside the open cell box. Row `r` uses its own counter-indexed stream
/// of the seed, so output is independent of any row partitioning.
pub fn sample_latents(spec: &GridSpec, n: usize, seed: u64) -> Result<Array2<f64>> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    let d = spec.dim();
    let mut cdf = Vec::with_capacity(spec.priors.len());
    let mut acc = 0.0;
    for &p in &spec.priors {
        acc += p;
        cdf.push(acc);
    }
    let mut out = Array2::zeros((n, d));
    for r in 0..n {
        let mut rng = Prng::seed_from_u64(seed);
        rng.set_stream(r as u64 + 1);
        let u: f64 = rng.random();
        let lin = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        let cell = spec.cell_of_linear(lin);
        let cbox = spec.cell_box(&cell);
        for (o, b) in out.row_mut(r).iter_mut().zip(&cbox) {
            *o = b[0] + open_unit(&mut rng) * (b[1] - b[0]);
        }
    }
    Ok(out)
}

/// Pearson correlation of two equally long samples.
pub fn pearson_correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    cov / (vx.sqrt() * vy.sqrt())
}
