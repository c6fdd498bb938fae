//! Classical solvers producing reference and low-fidelity data.

mod adr;
mod bvp;
mod rk4;

pub use adr::{fd_adr_solve, fd_adr_solve_from, Advection, AdrSetup, AdrSolution};
pub use bvp::{bvp_solve, bvp_solve_hydraulic, BvpSolution};
pub use rk4::{rk4_integrate, TimeSeries};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Values on a tensor-product grid. The last axis varies fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub axes: Vec<Vec<f64>>,
    /// One state vector per grid point.
    pub values: Vec<Vec<f64>>,
    pub meta: GridMeta,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GridMeta {
    /// Step along each axis.
    pub steps: Vec<f64>,
    pub label: String,
}

impl GridField {
    pub fn new(axes: Vec<Vec<f64>>, values: Vec<Vec<f64>>, meta: GridMeta) -> Result<Self> {
        let n: usize = axes.iter().map(Vec::len).product();
        if n != values.len() {
            return Err(Error::Shape(format!("{} grid points but {} values", n, values.len())));
        }
        for a in &axes {
            if a.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Shape("grid axis is not strictly increasing".into()));
            }
        }
        Ok(GridField { axes, values, meta })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.axes).fold(0, |acc, (&i, a)| acc * a.len() + i)
    }

    pub fn get(&self, idx: &[usize]) -> &[f64] {
        &self.values[self.flat_index(idx)]
    }

    /// Coordinates of every grid point, in storage order.
    pub fn points(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.len());
        let mut idx = vec![0; self.axes.len()];
        for _ in 0..self.len() {
            out.push(idx.iter().zip(&self.axes).map(|(&i, a)| a[i]).collect());
            for d in (0..idx.len()).rev() {
                idx[d] += 1;
                if idx[d] < self.axes[d].len() {
                    break;
                }
                idx[d] = 0;
            }
        }
        out
    }

    /// Multilinear interpolation; points outside the grid are an error.
    pub fn interpolate(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.axes.len() {
            return Err(Error::Shape(format!("{}-d point on a {}-d grid", x.len(), self.axes.len())));
        }
        let mut cell = Vec::with_capacity(x.len());
        for (d, (&xi, a)) in x.iter().zip(&self.axes).enumerate() {
            let (lo, hi) = (a[0], a[a.len() - 1]);
            let tol = 1e-12 * (hi - lo).abs().max(1.0);
            if xi < lo - tol || xi > hi + tol {
                return Err(Error::Domain(format!("coordinate {xi} outside [{lo}, {hi}] on axis {d}")));
            }
            if a.len() == 1 {
                cell.push((0, 0.0));
                continue;
            }
            let j = a.partition_point(|&v| v <= xi).clamp(1, a.len() - 1) - 1;
            let w = ((xi - a[j]) / (a[j + 1] - a[j])).clamp(0.0, 1.0);
            cell.push((j, w));
        }
        let width = self.values.first().map_or(0, Vec::len);
        let mut out = vec![0.0; width];
        for corner in 0..(1usize << x.len()) {
            let mut weight = 1.0;
            let mut idx = Vec::with_capacity(x.len());
            for (d, &(j, w)) in cell.iter().enumerate() {
                let up = corner >> d & 1 == 1;
                if up && self.axes[d].len() == 1 {
                    weight = 0.0;
                }
                weight *= if up { w } else { 1.0 - w };
                idx.push(if up { (j + 1).min(self.axes[d].len() - 1) } else { j });
            }
            if weight != 0.0 {
                for (o, v) in out.iter_mut().zip(self.get(&idx)) {
                    *o += weight * v;
                }
            }
        }
        Ok(out)
    }
}

/// How a noise level `N(0, s)` is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseLevel {
    /// `s` is the variance.
    #[default]
    Variance,
    StdDev,
}

impl NoiseLevel {
    pub fn std_dev(self, s: f64) -> f64 {
        match self {
            NoiseLevel::Variance => s.sqrt(),
            NoiseLevel::StdDev => s,
        }
    }
}

/// Adds i.i.d. `N(0, σ²)` noise to every value.
pub fn add_noise(field: &GridField, sigma: f64, seed: u64) -> Result<GridField> {
    let mut out = field.clone();
    out.values = add_noise_values(&field.values, sigma, seed)?;
    Ok(out)
}

pub fn add_noise_values(values: &[Vec<f64>], sigma: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("noise level must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(values.to_vec());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(values
        .iter()
        .map(|row| row.iter().map(|v| v + normal.sample(&mut rng)).collect())
        .collect())
}

/// Solves a tridiagonal system in place (Thomas algorithm): `lower[i]`
/// multiplies `x[i-1]`, `upper[i]` multiplies `x[i+1]`.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) -> Result<()> {
    let n = diag.len();
    if lower.len() != n || upper.len() != n || rhs.len() != n {
        return Err(Error::Shape("tridiagonal bands differ in length".into()));
    }
    let mut c = vec![0.0; n];
    let mut denom = diag[0];
    for i in 0..n {
        if i > 0 {
            denom = diag[i] - lower[i] * c[i - 1];
            rhs[i] -= lower[i] * rhs[i - 1];
        }
        if denom == 0.0 || !denom.is_finite() {
            return Err(Error::Solver(format!("singular tridiagonal system at row {i}")));
        }
        c[i] = upper[i] / denom;
        rhs[i] /= denom;
    }
    for i in (0..n.saturating_sub(1)).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
    Ok(())
}

pub(crate) fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}
