use crate::autodiff::{Jet, Scalar};
use crate::training::Physics;

/// Reactive transport of `a_r A → B` on `(x, t) ∈ [0, 5] × [0, 1]`;
/// parameters are `(k_f, a_r)` with `k_f = a_r k_{f,r}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChemReact {
    pub porosity: f64,
    pub darcy_velocity: f64,
    pub diffusion: f64,
    pub length: f64,
    pub duration: f64,
}

pub const EXACT_KF: f64 = 1.577;
pub const EXACT_AR: f64 = 2.0;

impl Default for ChemReact {
    fn default() -> Self {
        ChemReact {
            porosity: 0.4,
            darcy_velocity: 0.5,
            diffusion: 1e-8,
            length: 5.0,
            duration: 1.0,
        }
    }
}

impl ChemReact {
    /// Reaction rate `C_A^{a_r}`, with negative concentrations clamped to 0.
    pub fn rate<S: Scalar>(ca: &S, ar: &S) -> S {
        ca.powf(ar)
    }

    /// Closed-form `C_A` for `a_r = 2` without diffusion, used as a sanity oracle.
    pub fn advective_solution(&self, kf: f64, x: f64, t: f64) -> (f64, f64) {
        let speed = self.darcy_velocity / self.porosity;
        let age = t.min(x / speed);
        let ca = 1.0 / (1.0 + kf * age);
        (ca, 0.5 * (1.0 - ca))
    }
}

impl Physics for ChemReact {
    fn input_dims(&self) -> usize {
        2
    }

    fn outputs(&self) -> usize {
        2
    }

    fn residual_derivatives(&self) -> (Vec<usize>, Vec<usize>) {
        (vec![0, 1], vec![0])
    }

    fn residual<S: Scalar>(&self, _x: &[S], y: &[Jet<S>], params: &[S]) -> Vec<S> {
        let (kf, ar) = (&params[0], &params[1]);
        let psi = self.porosity;
        let transport = |c: &Jet<S>| {
            c.d1(1).scale(psi) + c.d1(0).scale(self.darcy_velocity) - c.d2(0).scale(psi * self.diffusion)
        };
        let rate = Self::rate(&y[0].value, ar);
        vec![
            transport(&y[0]) + (kf.clone() * rate.clone()).scale(psi),
            transport(&y[1]) - (kf.clone() / ar.clone() * rate).scale(psi),
        ]
    }
}
