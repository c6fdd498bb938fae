use crate::autodiff::{Jet, Scalar};
use crate::training::Physics;

/// Gray-Scott reaction-diffusion on the half domain `(x, t) ∈ [0, L] × [0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayScott {
    pub ru: f64,
    pub rv: f64,
    pub feed: f64,
    pub kill: f64,
    pub half_length: f64,
    pub time_span: f64,
}

impl GrayScott {
    pub fn new(time_span: f64) -> Self {
        GrayScott {
            ru: 1.0,
            rv: 0.1,
            feed: 0.1,
            kill: 0.0,
            half_length: 50.0,
            time_span,
        }
    }

    /// Initial state `(u, v)` at position `x`.
    pub fn initial(&self, x: f64) -> (f64, f64) {
        let l = self.half_length;
        let s = (std::f64::consts::PI * (x - l) / (2.0 * l)).sin().powi(2);
        (1.0 - 0.5 * s, 0.25 * s)
    }
}

impl Physics for GrayScott {
    fn input_dims(&self) -> usize {
        2
    }

    fn outputs(&self) -> usize {
        2
    }

    fn residual_derivatives(&self) -> (Vec<usize>, Vec<usize>) {
        (vec![0, 1], vec![0])
    }

    fn residual<S: Scalar>(&self, _x: &[S], y: &[Jet<S>], _params: &[S]) -> Vec<S> {
        let (u, v) = (&y[0], &y[1]);
        let uvv = u.value.clone() * v.value.square();
        vec![
            u.d1(1) - u.d2(0).scale(self.ru) + uvv.clone() - (-u.value.clone()).offset(1.0).scale(self.feed),
            v.d1(1) - v.d2(0).scale(self.rv) - uvv + v.value.scale(self.feed + self.kill),
        ]
    }
}
