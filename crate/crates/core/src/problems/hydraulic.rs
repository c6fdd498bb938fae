use crate::autodiff::{Jet, Scalar};
use crate::training::Physics;

pub const SATURATED_K: f64 = 1.04;

/// Van Genuchten conductivity `K(h)` for `h ≤ 0`.
///
/// Positive heads are treated as saturated (`S_e = 1`).
pub fn van_genuchten_k<S: Scalar>(h: &S, alpha: &S, m: &S) -> S {
    let suction = (-h.clone()).relu() * alpha.clone();
    let n = (-m.clone()).offset(1.0).recip();
    let se = suction.powf(&n).offset(1.0).powf(&(-m.clone()));
    let inner = se.powf(&m.recip());
    let bracket = (-inner).offset(1.0).powf(m);
    se.sqrt() * (-bracket).offset(1.0).square().scale(SATURATED_K)
}

/// Plain-number conductivity; logs when `h` lies in the saturated range.
pub fn van_genuchten_k_f64(h: f64, alpha: f64, m: f64) -> f64 {
    if h > 0.0 {
        log::warn!("positive head {h} treated as saturated");
    }
    van_genuchten_k(&h, &alpha, &m)
}

/// Conductivity law used by the residuals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Conductivity {
    VanGenuchten,
    /// `K ≡ K_s`, independent of head and parameters.
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HydraulicForm {
    /// `−K(h) h' − q₀ = 0` with known inlet flux.
    Flux { q0: f64 },
    /// `−(K'(h) h'² + K(h) h'') = 0`, written in `ξ = x / L` (a factor `L²`)
    /// so that the residual is not negligible next to the head data.
    Differential,
}

/// Steady unsaturated flow on `[0, L]`; parameters are `(α₀, m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hydraulic {
    pub form: HydraulicForm,
    pub conductivity: Conductivity,
    pub h0: f64,
    pub h1: f64,
    pub length: f64,
}

pub const ALPHA_RANGE: (f64, f64) = (0.015, 0.057);
pub const M_RANGE: (f64, f64) = (0.31, 0.40);
pub const EXACT_ALPHA: f64 = 0.036;
pub const EXACT_M: f64 = 0.36;

impl Hydraulic {
    pub fn new(form: HydraulicForm) -> Self {
        Hydraulic {
            form,
            conductivity: Conductivity::VanGenuchten,
            h0: -3.0,
            h1: -10.0,
            length: 200.0,
        }
    }

    pub fn k<S: Scalar>(&self, h: &S, alpha: &S, m: &S) -> S {
        match self.conductivity {
            Conductivity::VanGenuchten => van_genuchten_k(h, alpha, m),
            Conductivity::Constant => h.lift(SATURATED_K),
        }
    }
}

impl Physics for Hydraulic {
    fn input_dims(&self) -> usize {
        1
    }

    fn outputs(&self) -> usize {
        1
    }

    fn residual_derivatives(&self) -> (Vec<usize>, Vec<usize>) {
        match self.form {
            HydraulicForm::Flux { .. } => (vec![0], vec![]),
            HydraulicForm::Differential => (vec![0], vec![0]),
        }
    }

    fn residual<S: Scalar>(&self, _x: &[S], y: &[Jet<S>], params: &[S]) -> Vec<S> {
        let h = &y[0];
        let (alpha, m) = (&params[0], &params[1]);
        match self.form {
            HydraulicForm::Flux { q0 } => vec![-(self.k(&h.value, alpha, m) * h.d1(0)).offset(q0)],
            HydraulicForm::Differential => {
                // K'(h)·h' comes out of the jet of K along x.
                let hx = Jet {
                    value: h.value.clone(),
                    first: h.first.clone(),
                    second: vec![None; h.second.len()],
                };
                let dims = hx.dims();
                let k = self.k(&hx, &Jet::constant(alpha.clone(), dims), &Jet::constant(m.clone(), dims));
                vec![-(k.d1(0) * h.d1(0) + k.value * h.d2(0)).scale(self.length * self.length)]
            }
        }
    }
}
