//! Exact derivatives: forward-mode jets for input derivatives and a
//! reverse-mode tape for parameter gradients.

mod jet;
mod scalar;
mod tape;

pub use jet::{Jet, JetValue};
pub use scalar::Scalar;
pub use tape::{Activation, JetLayout, Tape, Var};

use ndarray::Array2;

use crate::error::{Error, Result};

/// A function of input coordinates built from [`Scalar`] primitives.
pub trait JetFunction {
    fn eval<S: Scalar>(&self, x: &[S]) -> Vec<S>;

    /// Highest derivative order every primitive in `eval` supports exactly.
    fn max_order(&self) -> usize {
        2
    }
}

/// A function of parameters and input coordinates.
pub trait ParamFunction {
    fn n_params(&self) -> usize;

    fn eval<S: Scalar>(&self, theta: &[S], x: &[S]) -> Vec<S>;

    fn max_order(&self) -> usize {
        2
    }
}

fn check_order(order: usize, max: usize) -> Result<()> {
    if !(1..=2).contains(&order) {
        return Err(Error::Config(format!("derivative order must be 1 or 2, got {order}")));
    }
    if order > max {
        return Err(Error::UnsupportedPrimitive(format!(
            "order {order} requested but the function supports order {max} only"
        )));
    }
    Ok(())
}

fn seed(x: &[f64]) -> Vec<JetValue> {
    x.iter()
        .enumerate()
        .map(|(i, &v)| Jet::variable(v, i, x.len()))
        .collect()
}

fn truncate(mut out: Vec<JetValue>, order: usize) -> Vec<JetValue> {
    if order < 2 {
        for j in &mut out {
            j.second.iter_mut().for_each(|s| *s = None);
        }
    }
    out
}

/// First (and with `order == 2` pure second) derivatives of every output
/// of `f` at `x`.
pub fn jet_eval<F: JetFunction>(f: &F, x: &[f64], order: usize) -> Result<Vec<JetValue>> {
    check_order(order, f.max_order())?;
    let out = f.eval(&seed(x));
    check_jets(&out)?;
    Ok(truncate(out, order))
}

/// [`jet_eval`] for a closure written directly over jets.
pub fn jet_eval_fn(
    f: impl Fn(&[JetValue]) -> Vec<JetValue>,
    x: &[f64],
    order: usize,
) -> Result<Vec<JetValue>> {
    check_order(order, 2)?;
    let out = f(&seed(x));
    check_jets(&out)?;
    Ok(truncate(out, order))
}

fn check_jets(out: &[JetValue]) -> Result<()> {
    for (k, j) in out.iter().enumerate() {
        let finite = j.value.is_finite()
            && j.first.iter().chain(&j.second).flatten().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite {
                node: k,
                op: "jet_output",
            });
        }
    }
    Ok(())
}

/// Splits a `1×P` parameter node into scalar handles.
pub fn param_entries<'t>(theta: Var<'t, f64>) -> Vec<Var<'t, f64>> {
    let tape = theta.tape();
    let p = theta.shape().1;
    (0..p).map(|i| tape.slice(theta, 0..1, i..i + 1)).collect()
}

/// Value and gradient of a tape-recorded scalar function of `theta`.
///
/// `loss_eval` receives `θ` as a `1×P` parameter node.
pub fn grad_params<F>(theta: &[f64], loss_eval: F) -> Result<(f64, Vec<f64>)>
where
    F: for<'t> FnOnce(&'t Tape<f64>, Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    if let Some(i) = theta.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            node: i,
            op: "theta",
        });
    }
    let tape = Tape::new();
    let p = tape.param(Array2::from_shape_vec((1, theta.len()), theta.to_vec()).unwrap(), 0);
    let loss = loss_eval(&tape, p)?;
    let value = loss.item();
    let grad = tape.gradient(loss, theta.len())?;
    Ok((value, grad))
}

/// Value and gradient of `Σ_k Σ_c r_c(x_k)²` with respect to `theta`, where the
/// residual components are built from jets of `f` whose entries are tape variables.
pub fn grad_params_of_residual<F, R>(
    f: &F,
    theta: &[f64],
    points: &[Vec<f64>],
    order: usize,
    residual: R,
) -> Result<(f64, Vec<f64>)>
where
    F: ParamFunction,
    R: for<'t> Fn(&[f64], &[Jet<Var<'t, f64>>]) -> Vec<Var<'t, f64>>,
{
    check_order(order, f.max_order())?;
    if theta.len() != f.n_params() {
        return Err(Error::Shape(format!(
            "theta has {} entries, function expects {}",
            theta.len(),
            f.n_params()
        )));
    }
    grad_params(theta, |tape, p| {
        let th = param_entries(p);
        let mut total = tape.scalar(0.0);
        for x in points {
            let xs: Vec<Jet<Var<'_, f64>>> = x
                .iter()
                .enumerate()
                .map(|(i, &v)| Jet::variable(tape.scalar(v), i, x.len()))
                .collect();
            let ths: Vec<Jet<Var<'_, f64>>> = th.iter().map(|&t| Jet::constant(t, x.len())).collect();
            let out = f.eval(&ths, &xs);
            for r in residual(x, &out) {
                total = total + r * r;
            }
        }
        Ok(total)
    })
}
