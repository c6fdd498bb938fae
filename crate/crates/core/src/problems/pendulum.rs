use crate::autodiff::{Jet, Scalar};
use crate::training::Physics;

/// Damped gravity pendulum `s₁' = s₂`, `s₂' = −(b/m)s₂ − (g/L) sin s₁`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pendulum {
    pub mass: f64,
    pub length: f64,
    pub damping: f64,
    pub gravity: f64,
    pub initial: [f64; 2],
    pub time_span: f64,
}

impl Pendulum {
    pub fn new(time_span: f64) -> Self {
        Pendulum {
            mass: 1.0,
            length: 1.0,
            damping: 0.05,
            gravity: 9.81,
            initial: [1.0, 1.0],
            time_span,
        }
    }

    /// Right-hand side of the first-order system.
    pub fn rhs(&self, _t: f64, s: &[f64]) -> Vec<f64> {
        vec![
            s[1],
            -self.damping / self.mass * s[1] - self.gravity / self.length * s[0].sin(),
        ]
    }
}

impl Physics for Pendulum {
    fn input_dims(&self) -> usize {
        1
    }

    fn outputs(&self) -> usize {
        2
    }

    fn residual_derivatives(&self) -> (Vec<usize>, Vec<usize>) {
        (vec![0], vec![])
    }

    fn residual<S: Scalar>(&self, _x: &[S], y: &[Jet<S>], _params: &[S]) -> Vec<S> {
        let (s1, s2) = (&y[0], &y[1]);
        vec![
            s1.d1(0) - s2.value.clone(),
            s2.d1(0) + s2.value.scale(self.damping / self.mass) + s1.value.sin().scale(self.gravity / self.length),
        ]
    }
}
