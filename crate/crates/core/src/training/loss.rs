use std::rc::Rc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Jet, JetLayout, Scalar, Tape, Var};
use crate::error::{Error, Result};
use crate::float::Real;
use crate::network::{split_output, Fidelity, MultiFidelityNet};

/// Governing equations of a problem, written once over any [`Scalar`].
pub trait Physics {
    fn input_dims(&self) -> usize;

    fn outputs(&self) -> usize;

    /// Input dimensions needing first and pure second derivatives in the residual.
    fn residual_derivatives(&self) -> (Vec<usize>, Vec<usize>);

    /// Residual components at `x` given output jets `y` and raw physical parameters.
    fn residual<S: Scalar>(&self, x: &[S], y: &[Jet<S>], params: &[S]) -> Vec<S>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TermKind {
    Residual,
    Boundary,
    Labeled,
}

/// What a loss term measures at each of its points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Constraint {
    /// The problem residual should vanish.
    Residual,
    /// Selected output components should equal the targets.
    Value { components: Vec<usize> },
    /// `∂y_c/∂x_dim` of selected components should equal the targets.
    Derivative { components: Vec<usize>, dim: usize },
}

/// One summand `(1/N) Σ_i M(w_i)·e_i` of the composite loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTerm {
    pub name: String,
    pub kind: TermKind,
    pub fidelity: Fidelity,
    pub constraint: Constraint,
    pub points: Vec<Vec<f64>>,
    /// One row per point, one entry per constrained component. Empty for residual terms.
    #[serde(default)]
    pub targets: Vec<Vec<f64>>,
    /// Whether the per-point weights take part in the ascent.
    #[serde(default = "yes")]
    pub adaptive: bool,
}

fn yes() -> bool {
    true
}

impl LossTerm {
    pub fn residual(name: &str, fidelity: Fidelity, points: Vec<Vec<f64>>) -> Self {
        LossTerm {
            name: name.into(),
            kind: TermKind::Residual,
            fidelity,
            constraint: Constraint::Residual,
            points,
            targets: Vec::new(),
            adaptive: true,
        }
    }

    pub fn values(
        name: &str,
        kind: TermKind,
        fidelity: Fidelity,
        components: Vec<usize>,
        points: Vec<Vec<f64>>,
        targets: Vec<Vec<f64>>,
    ) -> Self {
        LossTerm {
            name: name.into(),
            kind,
            fidelity,
            constraint: Constraint::Value { components },
            points,
            targets,
            adaptive: true,
        }
    }

    pub fn derivative(
        name: &str,
        fidelity: Fidelity,
        components: Vec<usize>,
        dim: usize,
        points: Vec<Vec<f64>>,
        targets: Vec<Vec<f64>>,
    ) -> Self {
        LossTerm {
            name: name.into(),
            kind: TermKind::Boundary,
            fidelity,
            constraint: Constraint::Derivative { components, dim },
            points,
            targets,
            adaptive: true,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn components(&self) -> &[usize] {
        match &self.constraint {
            Constraint::Residual => &[],
            Constraint::Value { components } | Constraint::Derivative { components, .. } => components,
        }
    }

    pub fn validate(&self, input_dims: usize, outputs: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("loss term '{}': {m}", self.name)));
        if self.points.is_empty() {
            return bad("empty point set".into());
        }
        if let Some(p) = self.points.iter().position(|p| p.len() != input_dims) {
            return bad(format!("point {p} does not have {input_dims} coordinates"));
        }
        match &self.constraint {
            Constraint::Residual => {
                if !self.targets.is_empty() {
                    return bad("residual terms take no targets".into());
                }
            }
            Constraint::Value { components } | Constraint::Derivative { components, .. } => {
                if components.is_empty() || components.iter().any(|&c| c >= outputs) {
                    return bad(format!("invalid output components {components:?}"));
                }
                if self.targets.len() != self.points.len()
                    || self.targets.iter().any(|t| t.len() != components.len())
                {
                    return bad("targets must give one value per point and component".into());
                }
                if let Constraint::Derivative { dim, .. } = &self.constraint {
                    if *dim >= input_dims {
                        return bad(format!("derivative dimension {dim} out of range"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Affine map between the trained (scaled) value `s ∈ [-1, 1]` and the physical value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamScaling {
    pub lo: f64,
    pub hi: f64,
}

impl ParamScaling {
    pub fn to_raw(&self, s: f64) -> f64 {
        self.lo + (s + 1.0) * (self.hi - self.lo) / 2.0
    }

    pub fn to_scaled(&self, raw: f64) -> f64 {
        ((raw - self.lo) - (self.hi - raw)) / (self.hi - self.lo)
    }

    fn apply<S: Scalar>(&self, s: &S) -> S {
        s.offset(1.0).scale((self.hi - self.lo) / 2.0).offset(self.lo)
    }
}

/// An unknown physical parameter trained alongside the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseParam {
    pub name: String,
    /// Physical value at the start of training.
    pub init: f64,
    #[serde(default)]
    pub scaling: Option<ParamScaling>,
}

impl InverseParam {
    pub fn trained_init(&self) -> f64 {
        self.scaling.map_or(self.init, |s| s.to_scaled(self.init))
    }

    pub fn raw(&self, trained: f64) -> f64 {
        self.scaling.map_or(trained, |s| s.to_raw(trained))
    }

    pub fn raw_scalar<S: Scalar>(&self, trained: &S) -> S {
        self.scaling.map_or_else(|| trained.clone(), |s| s.apply(trained))
    }
}

/// Points per evaluation chunk for a width-50 network. Each chunk is recorded
/// on its own tape so the working set stays cache-sized; chunk results are
/// summed in a fixed order.
pub const CHUNK_POINTS: usize = 256;
const CHUNK_CELLS: usize = CHUNK_POINTS * 50;

/// Chunk size used by [`prepare_terms`]: about `CHUNK_CELLS` activations per layer.
pub fn chunk_points(net: &MultiFidelityNet) -> usize {
    let width = net.config.hidden.iter().copied().max().unwrap_or(1).max(1);
    (CHUNK_CELLS / width).max(CHUNK_POINTS)
}

/// One chunk of a term's points laid out for batched evaluation.
pub struct PreparedChunk<T: Real> {
    pub range: std::ops::Range<usize>,
    pub layout: JetLayout,
    pub input: Rc<Array2<T>>,
    coords: Vec<Rc<Array2<T>>>,
    targets: Vec<Rc<Array2<T>>>,
}

/// Point sets of one term; built once per training run.
pub struct PreparedTerm<T: Real> {
    pub chunks: Vec<PreparedChunk<T>>,
}

pub fn prepare_terms<T: Real, P: Physics>(
    net: &MultiFidelityNet,
    physics: &P,
    terms: &[LossTerm],
) -> Result<Vec<PreparedTerm<T>>> {
    prepare_terms_chunked(net, physics, terms, chunk_points(net))
}

pub fn prepare_terms_chunked<T: Real, P: Physics>(
    net: &MultiFidelityNet,
    physics: &P,
    terms: &[LossTerm],
    chunk: usize,
) -> Result<Vec<PreparedTerm<T>>> {
    if terms.is_empty() {
        return Err(Error::Config("no loss terms".into()));
    }
    if chunk == 0 {
        return Err(Error::Config("chunk size must be positive".into()));
    }
    if physics.input_dims() != net.input_dims() || physics.outputs() != net.outputs {
        return Err(Error::Config(format!(
            "network maps {} → {}, problem needs {} → {}",
            net.input_dims(),
            net.outputs,
            physics.input_dims(),
            physics.outputs()
        )));
    }
    terms
        .iter()
        .map(|t| {
            t.validate(net.input_dims(), net.outputs)?;
            let chunks = (0..t.len())
                .step_by(chunk)
                .map(|start| {
                    let range = start..(start + chunk).min(t.len());
                    let n = range.len();
                    let layout = match &t.constraint {
                        Constraint::Residual => {
                            let (first, second) = physics.residual_derivatives();
                            JetLayout::new(n, first, second)?
                        }
                        Constraint::Value { .. } => JetLayout::values(n),
                        Constraint::Derivative { dim, .. } => JetLayout::new(n, vec![*dim], vec![])?,
                    };
                    let input = Rc::new(net.prepare_batch::<T>(&t.points[range.clone()], &layout)?);
                    let col = |f: &dyn Fn(usize) -> f64| {
                        Rc::new(Array2::from_shape_fn((n, 1), |(i, _)| T::from_f64(f(range.start + i))))
                    };
                    let coords = match t.constraint {
                        Constraint::Residual => (0..net.input_dims()).map(|d| col(&|i| t.points[i][d])).collect(),
                        _ => Vec::new(),
                    };
                    let targets = (0..t.components().len()).map(|k| col(&|i| t.targets[i][k])).collect();
                    Ok(PreparedChunk {
                        range,
                        layout,
                        input,
                        coords,
                        targets,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(PreparedTerm { chunks })
        })
        .collect()
}

/// Result of one evaluation of the composite loss.
#[derive(Debug, Clone, Default)]
pub struct LossEval {
    pub total: f64,
    /// Weighted contribution of each term.
    pub per_term: Vec<f64>,
    /// Squared error `e_i` at every point of every term.
    pub point_errors: Vec<Vec<f64>>,
    pub grad: Vec<f64>,
}

/// Per-point squared errors `e_i` of one chunk of a term as an `n × 1` column.
pub fn term_errors<'t, T: Real, P: Physics>(
    net: &MultiFidelityNet,
    physics: &P,
    term: &LossTerm,
    prep: &PreparedChunk<T>,
    tape: &'t Tape<T>,
    params: &crate::network::NetParams<'t, T>,
    inverse: &[Var<'t, T>],
) -> Var<'t, T> {
    let x = tape.constant_shared(prep.input.clone());
    let y = net.forward_tape(params, x, &prep.layout, term.fidelity);
    let jets = split_output(y, &prep.layout, net.input_dims());
    let sq_sum = |parts: Vec<Var<'t, T>>| {
        let mut it = parts.into_iter();
        let first = it.next().expect("at least one component");
        let mut acc = first * first;
        for r in it {
            acc = acc + r * r;
        }
        acc
    };
    match &term.constraint {
        Constraint::Residual => {
            let xs: Vec<Var<'t, T>> = prep.coords.iter().map(|c| tape.constant_shared(c.clone())).collect();
            sq_sum(physics.residual(&xs, &jets, inverse))
        }
        Constraint::Value { components } => {
            let parts = components
                .iter()
                .zip(&prep.targets)
                .map(|(&c, t)| jets[c].value - tape.constant_shared(t.clone()))
                .collect();
            sq_sum(parts)
        }
        Constraint::Derivative { components, dim } => {
            let parts = components
                .iter()
                .zip(&prep.targets)
                .map(|(&c, t)| jets[c].d1(*dim) - tape.constant_shared(t.clone()))
                .collect();
            sq_sum(parts)
        }
    }
}

/// `L = Σ_terms (1/N) Σ_i w_i² e_i` recorded on a fresh tape; `theta` holds the
/// network parameters followed by the trained inverse parameters.
#[allow(clippy::too_many_arguments)]
pub fn assemble_loss<T: Real, P: Physics>(
    net: &MultiFidelityNet,
    physics: &P,
    terms: &[LossTerm],
    prepared: &[PreparedTerm<T>],
    inverse: &[InverseParam],
    theta: &[f64],
    weights: &[Vec<f64>],
    with_grad: bool,
) -> Result<LossEval> {
    let np = net.n_params();
    if theta.len() != np + inverse.len() {
        return Err(Error::Shape(format!(
            "parameter vector has {} entries, expected {}",
            theta.len(),
            np + inverse.len()
        )));
    }
    let mut total = 0.0;
    let mut per_term = vec![0.0; terms.len()];
    let mut errors: Vec<Vec<f64>> = terms.iter().map(|t| vec![0.0; t.len()]).collect();
    let mut grad = if with_grad { vec![0.0; theta.len()] } else { Vec::new() };
    for (k, (term, prep)) in terms.iter().zip(prepared).enumerate() {
        let n = term.len() as f64;
        for chunk in &prep.chunks {
            let tape = Tape::<T>::new();
            let params = net.register(&tape, theta);
            let raw: Vec<Var<'_, T>> = inverse
                .iter()
                .enumerate()
                .map(|(j, p)| {
                    let v = tape.param(Array2::from_elem((1, 1), T::from_f64(theta[np + j])), np + j);
                    p.raw_scalar(&v)
                })
                .collect();
            let e = term_errors(net, physics, term, chunk, &tape, &params, &raw);
            let w: Vec<T> = weights[k][chunk.range.clone()]
                .iter()
                .map(|&w| T::from_f64(w * w / n))
                .collect();
            let lt = tape.weighted_sum(e, &w);
            let value = Real::to_f64(lt.item());
            total += value;
            per_term[k] += value;
            for (slot, &v) in errors[k][chunk.range.clone()].iter_mut().zip(e.value().iter()) {
                *slot = Real::to_f64(v);
            }
            if with_grad {
                for (g, d) in grad.iter_mut().zip(tape.gradient(lt, theta.len())?) {
                    *g += Real::to_f64(d);
                }
            }
        }
    }
    Ok(LossEval {
        total,
        per_term,
        point_errors: errors,
        grad,
    })
}
