use crate::autodiff::Jet;
use crate::error::{Error, Result};
use crate::problems::van_genuchten_k;

use super::{linspace, solve_tridiagonal, GridField, GridMeta};

const TOL: f64 = 1e-10;
const MAX_NEWTON: usize = 200;

/// Converged head profile of the steady unsaturated-flow problem.
#[derive(Debug, Clone, PartialEq)]
pub struct BvpSolution {
    pub field: GridField,
    /// Discrete flux `−K(h_{i+1/2})(h_{i+1}−h_i)/Δx` on each cell.
    pub fluxes: Vec<f64>,
    /// Max-norm residual after each Newton iteration.
    pub history: Vec<f64>,
}

impl BvpSolution {
    pub fn mean_flux(&self) -> f64 {
        self.fluxes.iter().sum::<f64>() / self.fluxes.len() as f64
    }
}

/// Van Genuchten boundary-value problem at parameters `(α₀, m)`.
pub fn bvp_solve_hydraulic(alpha: f64, m: f64, h0: f64, h1: f64, length: f64, dx: f64) -> Result<BvpSolution> {
    if !(alpha > 0.0 && m > 0.0 && m < 1.0) {
        return Err(Error::Domain(format!("need α₀ > 0 and 0 < m < 1, got α₀ = {alpha}, m = {m}")));
    }
    let k = move |h: f64| {
        let j = van_genuchten_k(&Jet::variable(h, 0, 1), &Jet::constant(alpha, 1), &Jet::constant(m, 1));
        (j.value, j.d1(0))
    };
    bvp_solve(k, h0, h1, length, dx)
}

/// `d/dx(−K(h) dh/dx) = 0`, `h(0) = h0`, `h(L) = h1` by conservative finite
/// differences (conductivity at cell midpoints) and damped Newton.
/// `k` returns `(K(h), K'(h))`.
pub fn bvp_solve(k: impl Fn(f64) -> (f64, f64), h0: f64, h1: f64, length: f64, dx: f64) -> Result<BvpSolution> {
    if !(dx > 0.0 && length > 0.0) {
        return Err(Error::Config(format!("need positive length and mesh size, got L = {length}, Δx = {dx}")));
    }
    let cells = (length / dx).round() as usize;
    if cells < 2 || ((cells as f64) * dx - length).abs() > 1e-9 * length {
        return Err(Error::Config(format!("mesh size {dx} does not divide length {length}")));
    }
    let xs = linspace(0.0, length, cells + 1);
    let mut h: Vec<f64> = xs.iter().map(|x| h0 + (h1 - h0) * x / length).collect();

    let fluxes = |h: &[f64]| -> Vec<f64> {
        h.windows(2)
            .map(|w| -k(0.5 * (w[0] + w[1])).0 * (w[1] - w[0]) / dx)
            .collect()
    };
    // Interior residuals F_{i+1/2} − F_{i−1/2}.
    let residual = |h: &[f64]| -> Vec<f64> { fluxes(h).windows(2).map(|f| f[1] - f[0]).collect() };
    let norm = |r: &[f64]| r.iter().fold(0.0f64, |a, v| a.max(v.abs()));

    let n = cells - 1;
    let mut r = residual(&h);
    let mut history = vec![norm(&r)];
    let mut iter = 0;
    while norm(&r) >= TOL {
        if iter == MAX_NEWTON {
            return Err(Error::Solver(format!(
                "Newton did not converge in {MAX_NEWTON} iterations; residual history {history:?}"
            )));
        }
        iter += 1;
        // dF_{c}/dh_c and dF_{c}/dh_{c+1} for each cell c.
        let (dl, dr): (Vec<f64>, Vec<f64>) = h
            .windows(2)
            .map(|w| {
                let (kv, dk) = k(0.5 * (w[0] + w[1]));
                let g = (w[1] - w[0]) / dx;
                (-0.5 * dk * g + kv / dx, -0.5 * dk * g - kv / dx)
            })
            .unzip();
        let mut lower = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n];
        for i in 0..n {
            // Unknown i is node i+1; residual i couples cells i and i+1.
            diag[i] = dl[i + 1] - dr[i];
            if i > 0 {
                lower[i] = -dl[i];
            }
            if i + 1 < n {
                upper[i] = dr[i + 1];
            }
        }
        let mut step: Vec<f64> = r.iter().map(|v| -v).collect();
        solve_tridiagonal(&lower, &diag, &upper, &mut step)?;
        let current = norm(&r);
        let mut damping = 1.0;
        loop {
            let mut trial = h.clone();
            for (t, s) in trial[1..=n].iter_mut().zip(&step) {
                *t += damping * s;
            }
            let rt = residual(&trial);
            if norm(&rt) < current || damping < 1e-6 {
                h = trial;
                r = rt;
                break;
            }
            damping *= 0.5;
        }
        history.push(norm(&r));
    }
    let field = GridField::new(
        vec![xs],
        h.iter().map(|&v| vec![v]).collect(),
        GridMeta {
            steps: vec![dx],
            label: "hydraulic head".into(),
        },
    )?;
    Ok(BvpSolution {
        fluxes: fluxes(&h),
        field,
        history,
    })
}
