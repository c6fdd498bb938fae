use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{linspace, solve_tridiagonal, GridField, GridMeta};

const NEWTON_TOL: f64 = 1e-12;
const MAX_NEWTON: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Advection {
    #[default]
    Central,
    Upwind,
}

/// Reactive transport `ψ∂C/∂t + q∂C/∂x = ψD∂²C/∂x² ∓ reaction` on `[0, L] × [0, T]`
/// with Dirichlet inflow at `x = 0` and zero gradient at `x = L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdrSetup {
    pub porosity: f64,
    pub darcy_velocity: f64,
    pub diffusion: f64,
    pub length: f64,
    pub duration: f64,
    pub kf: f64,
    pub ar: f64,
    pub dx: f64,
    pub dt: f64,
    /// Inflow concentrations `(C_A, C_B)`.
    pub inlet: [f64; 2],
    pub advection: Advection,
}

impl AdrSetup {
    pub fn new(kf: f64, ar: f64, dx: f64, dt: f64) -> Self {
        AdrSetup {
            porosity: 0.4,
            darcy_velocity: 0.5,
            diffusion: 1e-8,
            length: 5.0,
            duration: 1.0,
            kf,
            ar,
            dx,
            dt,
            inlet: [1.0, 0.0],
            advection: Advection::Central,
        }
    }
}

/// Concentrations at every node (`x` index) of every time level.
#[derive(Debug, Clone, PartialEq)]
pub struct AdrSolution {
    pub xs: Vec<f64>,
    pub ts: Vec<f64>,
    pub ca: Vec<Vec<f64>>,
    pub cb: Vec<Vec<f64>>,
}

impl AdrSolution {
    /// Field over `(x, t)` with values `(C_A, C_B)`.
    pub fn to_field(&self, label: &str) -> Result<GridField> {
        let mut values = Vec::with_capacity(self.xs.len() * self.ts.len());
        for i in 0..self.xs.len() {
            for n in 0..self.ts.len() {
                values.push(vec![self.ca[n][i], self.cb[n][i]]);
            }
        }
        let step = |v: &[f64]| if v.len() > 1 { v[1] - v[0] } else { 0.0 };
        GridField::new(
            vec![self.xs.clone(), self.ts.clone()],
            values,
            GridMeta {
                steps: vec![step(&self.xs), step(&self.ts)],
                label: label.to_string(),
            },
        )
    }
}

/// Benchmark initial state (`C_A = 1`, `C_B = 0`) with default constants.
pub fn fd_adr_solve(kf: f64, ar: f64, dx: f64, dt: f64) -> Result<AdrSolution> {
    let setup = AdrSetup::new(kf, ar, dx, dt);
    let n = nodes(&setup)?;
    fd_adr_solve_from(&setup, &vec![1.0; n], &vec![0.0; n])
}

fn nodes(s: &AdrSetup) -> Result<usize> {
    if !(s.dx > 0.0 && s.dt > 0.0 && s.length > 0.0 && s.duration > 0.0) {
        return Err(Error::Config("mesh size, time step, length and duration must be positive".into()));
    }
    let cells = (s.length / s.dx).round() as usize;
    if cells < 2 || (cells as f64 * s.dx - s.length).abs() > 1e-9 * s.length {
        return Err(Error::Config(format!("mesh size {} does not divide length {}", s.dx, s.length)));
    }
    Ok(cells + 1)
}

/// Second-order finite differences in space, BDF2 in time (one BDF1 step to
/// start), Newton on the `C_A` equation at each step; `C_B` is then linear.
pub fn fd_adr_solve_from(setup: &AdrSetup, initial_a: &[f64], initial_b: &[f64]) -> Result<AdrSolution> {
    let n_nodes = nodes(setup)?;
    if initial_a.len() != n_nodes || initial_b.len() != n_nodes {
        return Err(Error::Shape(format!("initial profiles need {n_nodes} nodes")));
    }
    if setup.ar <= 0.0 {
        return Err(Error::Domain(format!("reaction order must be positive, got {}", setup.ar)));
    }
    let steps = (setup.duration / setup.dt).round() as usize;
    if steps == 0 || (steps as f64 * setup.dt - setup.duration).abs() > 1e-9 * setup.duration {
        return Err(Error::Config(format!("time step {} does not divide duration {}", setup.dt, setup.duration)));
    }
    let xs = linspace(0.0, setup.length, n_nodes);
    let ts = linspace(0.0, setup.duration, steps + 1);
    let op = Operator::new(setup, n_nodes);

    let mut ca = vec![initial_a.to_vec()];
    let mut cb = vec![initial_b.to_vec()];
    for step in 1..=steps {
        // BDF weights: a0·c^{n+1} + hist.
        let (a0, hist_a, hist_b) = if step == 1 {
            (1.0, ca[0].iter().map(|v| -v).collect::<Vec<_>>(), cb[0].iter().map(|v| -v).collect())
        } else {
            let combine = |c: &[Vec<f64>]| -> Vec<f64> {
                c[step - 1].iter().zip(&c[step - 2]).map(|(n, p)| -2.0 * n + 0.5 * p).collect()
            };
            (1.5, combine(&ca), combine(&cb))
        };
        let a = op.step_a(a0, &hist_a, &ca[step - 1], step)?;
        let b = op.step_b(a0, &hist_b, &a)?;
        ca.push(a);
        cb.push(b);
    }
    Ok(AdrSolution { xs, ts, ca, cb })
}

struct Operator<'a> {
    s: &'a AdrSetup,
    n: usize,
    /// Coefficients of `c_{i-1}`, `c_i`, `c_{i+1}` in the transport operator.
    west: f64,
    centre: f64,
    east: f64,
}

impl<'a> Operator<'a> {
    fn new(s: &'a AdrSetup, n: usize) -> Self {
        let diff = s.porosity * s.diffusion / (s.dx * s.dx);
        let (west, centre, east) = match s.advection {
            Advection::Central => {
                let a = s.darcy_velocity / (2.0 * s.dx);
                (-a - diff, 2.0 * diff, a - diff)
            }
            Advection::Upwind => {
                let a = s.darcy_velocity / s.dx;
                (-a - diff, a + 2.0 * diff, -diff)
            }
        };
        Operator {
            s,
            n,
            west,
            centre,
            east,
        }
    }

    /// Bands and constant part of `ψ a0/dt·c + A(c)` over unknowns `1..n`,
    /// with `c_0` fixed and the mirror node folded into the last row.
    fn bands(&self, a0: f64, inlet: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let m = self.n - 1;
        let mass = self.s.porosity * a0 / self.s.dt;
        let mut lower = vec![self.west; m];
        let diag = vec![self.centre + mass; m];
        let mut upper = vec![self.east; m];
        let mut constant = vec![0.0; m];
        lower[0] = 0.0;
        constant[0] = self.west * inlet;
        upper[m - 1] = 0.0;
        lower[m - 1] += self.east;
        (lower, diag, upper, constant)
    }

    fn apply(lower: &[f64], diag: &[f64], upper: &[f64], c: &[f64]) -> Vec<f64> {
        let m = diag.len();
        (0..m)
            .map(|i| {
                let mut v = diag[i] * c[i];
                if i > 0 {
                    v += lower[i] * c[i - 1];
                }
                if i + 1 < m {
                    v += upper[i] * c[i + 1];
                }
                v
            })
            .collect()
    }

    fn reaction(&self, c: f64) -> (f64, f64) {
        let (kf, ar, psi) = (self.s.kf, self.s.ar, self.s.porosity);
        if c <= 0.0 || kf == 0.0 {
            return (0.0, 0.0);
        }
        (psi * kf * c.powf(ar), psi * kf * ar * c.powf(ar - 1.0))
    }

    fn step_a(&self, a0: f64, hist: &[f64], guess: &[f64], step: usize) -> Result<Vec<f64>> {
        let inlet = self.s.inlet[0];
        let (lower, diag, upper, constant) = self.bands(a0, inlet);
        let mass = self.s.porosity / self.s.dt;
        let mut c = guess[1..].to_vec();
        for _ in 0..MAX_NEWTON {
            let lin = Self::apply(&lower, &diag, &upper, &c);
            let mut jd = diag.clone();
            let mut r = Vec::with_capacity(c.len());
            for i in 0..c.len() {
                let (rv, dv) = self.reaction(c[i]);
                r.push(-(lin[i] + constant[i] + mass * hist[i + 1] + rv));
                jd[i] += dv;
            }
            let err = r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if !err.is_finite() {
                break;
            }
            if err < NEWTON_TOL {
                let mut out = vec![inlet];
                out.extend(c);
                return Ok(out);
            }
            solve_tridiagonal(&lower, &jd, &upper, &mut r)?;
            for (ci, d) in c.iter_mut().zip(&r) {
                *ci += d;
            }
            if r.iter().fold(0.0f64, |a, v| a.max(v.abs())) < NEWTON_TOL {
                let mut out = vec![inlet];
                out.extend(c);
                return Ok(out);
            }
        }
        Err(Error::Solver(format!("Newton failed at time step {step}")))
    }

    fn step_b(&self, a0: f64, hist: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        let inlet = self.s.inlet[1];
        let (lower, diag, upper, constant) = self.bands(a0, inlet);
        let mass = self.s.porosity / self.s.dt;
        let mut rhs: Vec<f64> = (0..self.n - 1)
            .map(|i| {
                let produced = self.reaction(a[i + 1]).0 / self.s.ar;
                produced - constant[i] - mass * hist[i + 1]
            })
            .collect();
        solve_tridiagonal(&lower, &diag, &upper, &mut rhs)?;
        let mut out = vec![inlet];
        out.extend(rhs);
        Ok(out)
    }
}
