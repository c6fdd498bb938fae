use std::f64::consts::PI;

use crate::autodiff::{Jet, Scalar};
use crate::error::{Error, Result};
use crate::training::Physics;

/// Incompressible flow in the unit cavity; outputs `(u, v, p)`, inputs `(x, y)`
/// or `(x, y, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NavierStokes {
    pub unsteady: bool,
    /// Fixed Reynolds number, or `None` when it is inferred (first parameter).
    pub reynolds: Option<f64>,
    pub time_span: f64,
}

pub const EXACT_INVERSE_RE: f64 = 1000.0;
pub const RE_INIT_RANGE: (f64, f64) = (200.0, 5000.0);

impl NavierStokes {
    pub fn steady(reynolds: f64) -> Result<Self> {
        check_re(reynolds)?;
        Ok(NavierStokes {
            unsteady: false,
            reynolds: Some(reynolds),
            time_span: 0.0,
        })
    }

    pub fn unsteady(reynolds: f64, time_span: f64) -> Result<Self> {
        check_re(reynolds)?;
        if time_span <= 0.0 {
            return Err(Error::Config(format!("time span must be positive, got {time_span}")));
        }
        Ok(NavierStokes {
            unsteady: true,
            reynolds: Some(reynolds),
            time_span,
        })
    }

    pub fn inverse() -> Self {
        NavierStokes {
            unsteady: false,
            reynolds: None,
            time_span: 0.0,
        }
    }

    /// Horizontal lid velocity at `x` (and `t` when unsteady).
    pub fn lid_velocity(&self, x: f64, t: f64) -> f64 {
        let base = 16.0 * x * x * (1.0 - x) * (1.0 - x);
        if self.unsteady {
            base + (2.0 * PI * t).sin() * (2.0 * PI * x).sin()
        } else {
            base
        }
    }
}

pub fn check_re(re: f64) -> Result<()> {
    if re > 0.0 && re.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("Reynolds number must be positive, got {re}")))
    }
}

impl Physics for NavierStokes {
    fn input_dims(&self) -> usize {
        if self.unsteady {
            3
        } else {
            2
        }
    }

    fn outputs(&self) -> usize {
        3
    }

    fn residual_derivatives(&self) -> (Vec<usize>, Vec<usize>) {
        let first = if self.unsteady { vec![0, 1, 2] } else { vec![0, 1] };
        (first, vec![0, 1])
    }

    fn residual<S: Scalar>(&self, _x: &[S], y: &[Jet<S>], params: &[S]) -> Vec<S> {
        let (u, v, p) = (&y[0], &y[1], &y[2]);
        let nu = match self.reynolds {
            Some(re) => u.value.lift(1.0 / re),
            None => params[0].recip(),
        };
        let momentum = |c: &Jet<S>, dp: S| {
            let mut r = u.value.clone() * c.d1(0) + v.value.clone() * c.d1(1) + dp - nu.clone() * (c.d2(0) + c.d2(1));
            if self.unsteady {
                r = c.d1(2) + r;
            }
            r
        };
        vec![u.d1(0) + v.d1(1), momentum(u, p.d1(0)), momentum(v, p.d1(1))]
    }
}
