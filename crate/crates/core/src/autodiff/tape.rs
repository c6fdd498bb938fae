use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Range, Sub};
use std::rc::Rc;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, ArrayViewMut2, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::scalar::Scalar;
use crate::error::{Error, Result};
use crate::float::Real;

/// Pointwise activation used inside dense layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Swish,
    Tanh,
    Sigmoid,
    Sin,
    /// First-order rule only; second derivatives are rejected.
    Relu,
}

impl Activation {
    pub fn max_order(self) -> usize {
        match self {
            Activation::Relu => 1,
            _ => 2,
        }
    }

    pub fn apply<S: Scalar>(self, x: &S) -> S {
        match self {
            Activation::Swish => x.swish(),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => x.sigmoid(),
            Activation::Sin => x.sin(),
            Activation::Relu => x.relu(),
        }
    }

    /// `(f, f', f'', f''')` at `x`; entries past `order + 1` are left at zero.
    #[inline]
    fn derivs<T: Real>(self, x: T, order: usize) -> [T; 4] {
        let one = T::one();
        let two = one + one;
        match self {
            Activation::Swish => {
                let s = sigmoid(x);
                let ds = s * (one - s);
                let f0 = x * s;
                let f1 = s * (one + x * (one - s));
                if order == 0 {
                    return [f0, f1, T::zero(), T::zero()];
                }
                let k = two + x * (one - two * s);
                let f2 = ds * k;
                let f3 = if order >= 2 {
                    ds * (one - two * s) * k + ds * (one - two * s - two * x * ds)
                } else {
                    T::zero()
                };
                [f0, f1, f2, f3]
            }
            Activation::Tanh => {
                let t = x.tanh();
                let f1 = one - t * t;
                let f2 = -two * t * f1;
                let f3 = -two * f1 * f1 - two * t * f2;
                [t, f1, f2, f3]
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                let f1 = s * (one - s);
                let f2 = f1 * (one - two * s);
                let f3 = f2 * (one - two * s) - two * f1 * f1;
                [s, f1, f2, f3]
            }
            Activation::Sin => {
                let (sn, cs) = x.sin_cos();
                [sn, cs, -sn, -cs]
            }
            Activation::Relu => {
                if x > T::zero() {
                    [x, one, T::zero(), T::zero()]
                } else {
                    [T::zero(); 4]
                }
            }
        }
    }
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    let one = T::one();
    if x >= T::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    }
}

/// Row-block structure of a jet-stacked matrix.
///
/// A batch of `points` rows is stacked as `[value; ∂_{first[0]}; …; ∂²_{second[0]}; …]`,
/// each block `points` rows tall. Every dimension in `second` must also be in `first`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct JetLayout {
    pub points: usize,
    pub first: Vec<usize>,
    pub second: Vec<usize>,
}

impl JetLayout {
    pub fn values(points: usize) -> Self {
        JetLayout {
            points,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn new(points: usize, first: Vec<usize>, second: Vec<usize>) -> Result<Self> {
        for d in &second {
            if !first.contains(d) {
                return Err(Error::Config(format!(
                    "second derivative in dimension {d} requires its first derivative"
                )));
            }
        }
        Ok(JetLayout {
            points,
            first,
            second,
        })
    }

    pub fn blocks(&self) -> usize {
        1 + self.first.len() + self.second.len()
    }

    pub fn rows(&self) -> usize {
        self.points * self.blocks()
    }

    pub fn order(&self) -> usize {
        if !self.second.is_empty() {
            2
        } else if !self.first.is_empty() {
            1
        } else {
            0
        }
    }

    fn block(&self, b: usize) -> Range<usize> {
        b * self.points..(b + 1) * self.points
    }

    pub fn value_rows(&self) -> Range<usize> {
        self.block(0)
    }

    /// Rows holding `∂/∂x_dim`, if tracked.
    pub fn first_rows(&self, dim: usize) -> Option<Range<usize>> {
        self.first
            .iter()
            .position(|&d| d == dim)
            .map(|k| self.block(1 + k))
    }

    /// Rows holding `∂²/∂x_dim²`, if tracked.
    pub fn second_rows(&self, dim: usize) -> Option<Range<usize>> {
        self.second
            .iter()
            .position(|&d| d == dim)
            .map(|j| self.block(1 + self.first.len() + j))
    }

    /// For second-derivative block `j`, the tangent block index it pairs with.
    fn tangent_of_second(&self, j: usize) -> usize {
        let dim = self.second[j];
        1 + self.first.iter().position(|&d| d == dim).unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Sin,
    Cos,
    Exp,
    Ln,
    Tanh,
    Sigmoid,
    Swish,
    Sqrt,
    Abs,
    Relu,
    Recip,
    Square,
}

impl Unary {
    #[inline]
    fn eval<T: Real>(self, x: T) -> T {
        match self {
            Unary::Sin => x.sin(),
            Unary::Cos => x.cos(),
            Unary::Exp => x.exp(),
            Unary::Ln => x.ln(),
            Unary::Tanh => x.tanh(),
            Unary::Sigmoid => sigmoid(x),
            Unary::Swish => x * sigmoid(x),
            Unary::Sqrt => x.sqrt(),
            Unary::Abs => x.abs(),
            Unary::Relu => {
                if x > T::zero() {
                    x
                } else {
                    T::zero()
                }
            }
            Unary::Recip => x.recip(),
            Unary::Square => x * x,
        }
    }

    /// Derivative given input `x` and output `y`.
    #[inline]
    fn deriv<T: Real>(self, x: T, y: T) -> T {
        let one = T::one();
        match self {
            Unary::Sin => x.cos(),
            Unary::Cos => -x.sin(),
            Unary::Exp => y,
            Unary::Ln => x.recip(),
            Unary::Tanh => one - y * y,
            Unary::Sigmoid => y * (one - y),
            Unary::Swish => {
                let s = sigmoid(x);
                s * (one + x * (one - s))
            }
            Unary::Sqrt => (y + y).recip(),
            Unary::Abs => {
                if x > T::zero() {
                    one
                } else if x < T::zero() {
                    -one
                } else {
                    T::zero()
                }
            }
            Unary::Relu => {
                if x > T::zero() {
                    one
                } else {
                    T::zero()
                }
            }
            Unary::Recip => -y * y,
            Unary::Square => x + x,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Unary::Sin => "sin",
            Unary::Cos => "cos",
            Unary::Exp => "exp",
            Unary::Ln => "ln",
            Unary::Tanh => "tanh",
            Unary::Sigmoid => "sigmoid",
            Unary::Swish => "swish",
            Unary::Sqrt => "sqrt",
            Unary::Abs => "abs",
            Unary::Relu => "relu",
            Unary::Recip => "recip",
            Unary::Square => "square",
        }
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Param { offset: usize },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, T),
    Offset(usize),
    Unary(usize, Unary),
    PowC(usize, T),
    Pow(usize, usize),
    MatMulT(usize, usize),
    AddBias { x: usize, b: usize, rows: usize },
    ScaleCols { x: usize, lambda: usize, df: T },
    ColAffine { x: usize, scale: Vec<T> },
    JetAct {
        x: usize,
        layout: JetLayout,
        derivs: Vec<Array2<T>>,
    },
    JetGate {
        z: usize,
        u: usize,
        v: usize,
        layout: JetLayout,
    },
    Slice {
        x: usize,
        rows: Range<usize>,
        cols: Range<usize>,
    },
    WeightedSum { x: usize, weights: Vec<T> },
    Sum(usize),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param { .. } => "param",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(_) => "neg",
            Op::Scale(..) => "scale",
            Op::Offset(_) => "offset",
            Op::Unary(_, u) => u.name(),
            Op::PowC(..) => "powc",
            Op::Pow(..) => "pow",
            Op::MatMulT(..) => "matmul",
            Op::AddBias { .. } => "add_bias",
            Op::ScaleCols { .. } => "scale_cols",
            Op::ColAffine { .. } => "col_affine",
            Op::JetAct { .. } => "jet_activation",
            Op::JetGate { .. } => "jet_gate",
            Op::Slice { .. } => "slice",
            Op::WeightedSum { .. } => "weighted_sum",
            Op::Sum(_) => "sum",
        }
    }
}

struct Node<T> {
    op: Op<T>,
    value: Rc<Array2<T>>,
    needs_grad: bool,
}

/// Append-only record of batched matrix operations for reverse-mode
/// differentiation with respect to parameter nodes.
pub struct Tape<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a tape node.
#[derive(Clone, Copy)]
pub struct Var<'t, T: Real> {
    tape: &'t Tape<T>,
    idx: usize,
}

impl<T: Real> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({})", self.idx)
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize), op: &str) -> (usize, usize) {
    if a == b || b == (1, 1) {
        a
    } else if a == (1, 1) {
        b
    } else {
        panic!("{op}: incompatible shapes {a:?} and {b:?}");
    }
}

fn zip_with<T: Real>(a: &Array2<T>, b: &Array2<T>, op: &str, f: impl Fn(T, T) -> T) -> Array2<T> {
    let shape = broadcast_shape(a.dim(), b.dim(), op);
    let av = a.broadcast(shape).unwrap();
    let bv = b.broadcast(shape).unwrap();
    Zip::from(&av).and(&bv).map_collect(|&x, &y| f(x, y))
}


impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op<T>, value: Array2<T>, needs_grad: bool) -> Var<'_, T> {
        self.push_rc(op, Rc::new(value), needs_grad)
    }

    fn push_rc(&self, op: Op<T>, value: Rc<Array2<T>>, needs_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var {
            tape: self,
            idx: nodes.len() - 1,
        }
    }

    fn val(&self, idx: usize) -> Rc<Array2<T>> {
        self.nodes.borrow()[idx].value.clone()
    }

    fn ng(&self, idx: usize) -> bool {
        self.nodes.borrow()[idx].needs_grad
    }

    pub fn constant(&self, value: Array2<T>) -> Var<'_, T> {
        self.push(Op::Leaf, value, false)
    }

    pub fn constant_shared(&self, value: Rc<Array2<T>>) -> Var<'_, T> {
        self.push_rc(Op::Leaf, value, false)
    }

    pub fn scalar(&self, c: f64) -> Var<'_, T> {
        self.constant(Array2::from_elem((1, 1), T::from_f64(c)))
    }

    /// Column of constants (`n × 1`).
    pub fn column(&self, values: &[f64]) -> Var<'_, T> {
        let a = Array2::from_shape_fn((values.len(), 1), |(i, _)| T::from_f64(values[i]));
        self.constant(a)
    }

    /// Trainable leaf whose row-major entries map to `grad[offset..]`.
    pub fn param(&self, value: Array2<T>, offset: usize) -> Var<'_, T> {
        self.push(Op::Param { offset }, value, true)
    }

    fn binary(&self, a: usize, b: usize, op: Op<T>, f: impl Fn(T, T) -> T) -> Var<'_, T> {
        let name = op.name();
        let v = zip_with(&self.val(a), &self.val(b), name, f);
        let ng = self.ng(a) || self.ng(b);
        self.push(op, v, ng)
    }

    fn unary_op(&self, a: usize, u: Unary) -> Var<'_, T> {
        let v = self.val(a).mapv(|x| u.eval(x));
        self.push(Op::Unary(a, u), v, self.ng(a))
    }

    /// `x · wᵀ` for `x: R×k`, `w: m×k`.
    pub fn matmul_t<'t>(&'t self, x: Var<'t, T>, w: Var<'t, T>) -> Var<'t, T> {
        let (xv, wv) = (self.val(x.idx), self.val(w.idx));
        assert_eq!(
            xv.ncols(),
            wv.ncols(),
            "matmul: x is {:?}, w is {:?}",
            xv.dim(),
            wv.dim()
        );
        let y = xv.dot(&wv.t());
        let ng = self.ng(x.idx) || self.ng(w.idx);
        self.push(Op::MatMulT(x.idx, w.idx), y, ng)
    }

    /// Adds the row vector `b` (`1×m`) to the first `rows` rows of `x`.
    pub fn add_bias<'t>(&'t self, x: Var<'t, T>, b: Var<'t, T>, rows: usize) -> Var<'t, T> {
        let (xv, bv) = (self.val(x.idx), self.val(b.idx));
        assert_eq!(bv.dim(), (1, xv.ncols()), "add_bias shape");
        let mut y = (*xv).clone();
        y.slice_mut(s![..rows, ..])
            .zip_mut_with(&bv.broadcast((rows, xv.ncols())).unwrap(), |y, &b| *y += b);
        let ng = self.ng(x.idx) || self.ng(b.idx);
        self.push(
            Op::AddBias {
                x: x.idx,
                b: b.idx,
                rows,
            },
            y,
            ng,
        )
    }

    /// Multiplies every row of `x` by `1 + df·λ` (`λ: 1×m`).
    pub fn scale_cols<'t>(&'t self, x: Var<'t, T>, lambda: Var<'t, T>, df: T) -> Var<'t, T> {
        let (xv, lv) = (self.val(x.idx), self.val(lambda.idx));
        assert_eq!(lv.dim(), (1, xv.ncols()), "scale_cols shape");
        let factor = lv.mapv(|l| T::one() + df * l);
        let y = &*xv * &factor;
        let ng = self.ng(x.idx) || self.ng(lambda.idx);
        self.push(
            Op::ScaleCols {
                x: x.idx,
                lambda: lambda.idx,
                df,
            },
            y,
            ng,
        )
    }

    /// `y[r, c] = x[r, c]·scale[c] + shift[c]` with the shift applied to the first `rows` rows.
    pub fn col_affine<'t>(&'t self, x: Var<'t, T>, scale: &[T], shift: &[T], rows: usize) -> Var<'t, T> {
        let xv = self.val(x.idx);
        assert_eq!(scale.len(), xv.ncols());
        assert_eq!(shift.len(), xv.ncols());
        let mut y = (*xv).clone();
        for (r, mut row) in y.axis_iter_mut(Axis(0)).enumerate() {
            for (c, e) in row.iter_mut().enumerate() {
                *e = *e * scale[c] + if r < rows { shift[c] } else { T::zero() };
            }
        }
        self.push(
            Op::ColAffine {
                x: x.idx,
                scale: scale.to_vec(),
            },
            y,
            self.ng(x.idx),
        )
    }

    /// Activation applied to a jet-stacked matrix, propagating tangents and
    /// pure second derivatives by the chain rule.
    pub fn jet_act<'t>(&'t self, x: Var<'t, T>, act: Activation, layout: &JetLayout) -> Var<'t, T> {
        let xv = self.val(x.idx);
        assert_eq!(xv.nrows(), layout.rows(), "jet_act rows");
        // The backward sweep needs one derivative beyond the forward order.
        let order = layout.order();
        let n = layout.points;
        let nd = order + 2;
        let packed = xv.slice(s![0..n, ..]).map(|&z| act.derivs(z, order));
        let mut derivs: Vec<Array2<T>> = (0..nd).map(|k| packed.map(|f| f[k])).collect();
        let mut y = Array2::zeros(xv.dim());
        y.slice_mut(s![0..n, ..]).assign(&derivs[0]);
        for k in 0..layout.first.len() {
            let r = layout.block(1 + k);
            Zip::from(y.slice_mut(s![r.clone(), ..]))
                .and(xv.slice(s![r, ..]))
                .and(&derivs[1])
                .for_each(|y, &t, &f1| *y = f1 * t);
        }
        for j in 0..layout.second.len() {
            let r = layout.block(1 + layout.first.len() + j);
            let rt = layout.block(layout.tangent_of_second(j));
            Zip::from(y.slice_mut(s![r.clone(), ..]))
                .and(xv.slice(s![r, ..]))
                .and(xv.slice(s![rt, ..]))
                .and(&derivs[1])
                .and(&derivs[2])
                .for_each(|y, &sec, &t, &f1, &f2| *y = f2 * t * t + f1 * sec);
        }
        // Value block no longer needed for backward; drop f.
        derivs[0] = Array2::zeros((0, 0));
        self.push(
            Op::JetAct {
                x: x.idx,
                layout: layout.clone(),
                derivs,
            },
            y,
            self.ng(x.idx),
        )
    }

    /// Gated mixing `(1 − z) ⊗ u + z ⊗ v` on jet-stacked matrices.
    pub fn jet_gate<'t>(
        &'t self,
        z: Var<'t, T>,
        u: Var<'t, T>,
        v: Var<'t, T>,
        layout: &JetLayout,
    ) -> Var<'t, T> {
        let (zv, uv, vv) = (self.val(z.idx), self.val(u.idx), self.val(v.idx));
        assert_eq!(zv.dim(), uv.dim(), "jet_gate shape");
        assert_eq!(zv.dim(), vv.dim(), "jet_gate shape");
        let one = T::one();
        let two = one + one;
        let n = layout.points;
        let mut y = Array2::zeros(zv.dim());
        let (z0, u0, v0) = (
            zv.slice(s![0..n, ..]),
            uv.slice(s![0..n, ..]),
            vv.slice(s![0..n, ..]),
        );
        Zip::from(y.slice_mut(s![0..n, ..]))
            .and(&z0)
            .and(&u0)
            .and(&v0)
            .for_each(|y, &z, &u, &v| *y = (one - z) * u + z * v);
        for k in 0..layout.first.len() {
            let r = layout.block(1 + k);
            Zip::from(y.slice_mut(s![r.clone(), ..]))
                .and(zv.slice(s![r.clone(), ..]))
                .and(uv.slice(s![r.clone(), ..]))
                .and(vv.slice(s![r, ..]))
                .and(&z0)
                .and(&u0)
                .for_each(|y, &zt, &ut, &vt, &z, &u| {
                    *y = (one - z) * ut + z * vt + zt * (-u);
                });
            Zip::from(y.slice_mut(s![layout.block(1 + k), ..]))
                .and(zv.slice(s![layout.block(1 + k), ..]))
                .and(&v0)
                .for_each(|y, &zt, &v| *y += zt * v);
        }
        for j in 0..layout.second.len() {
            let r = layout.block(1 + layout.first.len() + j);
            let rt = layout.block(layout.tangent_of_second(j));
            Zip::from(y.slice_mut(s![r.clone(), ..]))
                .and(zv.slice(s![r.clone(), ..]))
                .and(uv.slice(s![r.clone(), ..]))
                .and(vv.slice(s![r, ..]))
                .and(&z0)
                .and(&u0)
                .for_each(|y, &zs, &us, &vs, &z, &u| {
                    *y = (one - z) * us + z * vs - zs * u;
                });
            Zip::from(y.slice_mut(s![layout.block(1 + layout.first.len() + j), ..]))
                .and(zv.slice(s![layout.block(1 + layout.first.len() + j), ..]))
                .and(&v0)
                .and(zv.slice(s![rt.clone(), ..]))
                .and(uv.slice(s![rt.clone(), ..]))
                .and(vv.slice(s![rt, ..]))
                .for_each(|y, &zs, &v, &zt, &ut, &vt| *y += zs * v + two * zt * (vt - ut));
        }
        let ng = self.ng(z.idx) || self.ng(u.idx) || self.ng(v.idx);
        self.push(
            Op::JetGate {
                z: z.idx,
                u: u.idx,
                v: v.idx,
                layout: layout.clone(),
            },
            y,
            ng,
        )
    }

    pub fn slice<'t>(&'t self, x: Var<'t, T>, rows: Range<usize>, cols: Range<usize>) -> Var<'t, T> {
        let xv = self.val(x.idx);
        let y = xv.slice(s![rows.clone(), cols.clone()]).to_owned();
        self.push(
            Op::Slice {
                x: x.idx,
                rows,
                cols,
            },
            y,
            self.ng(x.idx),
        )
    }

    /// `Σ_r weights[r]·x[r, 0]` for a column `x`.
    pub fn weighted_sum<'t>(&'t self, x: Var<'t, T>, weights: &[T]) -> Var<'t, T> {
        let xv = self.val(x.idx);
        assert_eq!(xv.ncols(), 1, "weighted_sum expects a column");
        assert_eq!(xv.nrows(), weights.len(), "weighted_sum length");
        let s = xv
            .column(0)
            .iter()
            .zip(weights)
            .fold(T::zero(), |acc, (&x, &w)| acc + w * x);
        self.push(
            Op::WeightedSum {
                x: x.idx,
                weights: weights.to_vec(),
            },
            Array2::from_elem((1, 1), s),
            self.ng(x.idx),
        )
    }

    pub fn sum<'t>(&'t self, x: Var<'t, T>) -> Var<'t, T> {
        let s = self.val(x.idx).sum();
        self.push(Op::Sum(x.idx), Array2::from_elem((1, 1), s), self.ng(x.idx))
    }

    fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        let nodes = self.nodes.borrow();
        nodes
            .iter()
            .enumerate()
            .find(|(_, n)| n.value.iter().any(|v| !v.is_finite()))
            .map(|(i, n)| (i, n.op.name()))
    }

    /// Reverse sweep from the scalar `loss`, returning the gradient with
    /// respect to all parameter nodes laid out over `n_params` slots.
    pub fn gradient(&self, loss: Var<'_, T>, n_params: usize) -> Result<Vec<T>> {
        let lv = self.val(loss.idx);
        assert_eq!(lv.dim(), (1, 1), "gradient of a non-scalar node");
        if !lv[[0, 0]].is_finite() {
            let (node, op) = self.first_non_finite().unwrap_or((loss.idx, "loss"));
            return Err(Error::NonFinite { node, op });
        }
        let grad = self.sweep(loss.idx, n_params, false)?;
        if grad.iter().any(|g| !g.is_finite()) {
            if let Some((node, op)) = self.first_non_finite() {
                return Err(Error::NonFinite { node, op });
            }
            self.sweep(loss.idx, n_params, true)?;
            return Err(Error::NonFinite {
                node: loss.idx,
                op: "gradient",
            });
        }
        Ok(grad)
    }

    fn sweep(&self, root: usize, n_params: usize, check: bool) -> Result<Vec<T>> {
        let nodes = self.nodes.borrow();
        // Adjoints are implicitly zero until first written.
        let mut adj: Vec<Option<Array2<T>>> = vec![None; root + 1];
        adj[root] = Some(Array2::ones((1, 1)));
        let mut grad = vec![T::zero(); n_params];
        let one = T::one();
        let two = one + one;

        fn acc<T: Real>(adj: &mut [Option<Array2<T>>], nodes: &[Node<T>], i: usize, g: Array2<T>) {
            if !nodes[i].needs_grad {
                return;
            }
            let g = if g.dim() != nodes[i].value.dim() {
                debug_assert_eq!(nodes[i].value.dim(), (1, 1));
                Array2::from_elem((1, 1), g.sum())
            } else {
                g
            };
            match &mut adj[i] {
                Some(a) => *a += &g,
                slot @ None => *slot = Some(g),
            }
        }

        fn acc_with<T: Real>(
            adj: &mut [Option<Array2<T>>],
            nodes: &[Node<T>],
            i: usize,
            f: impl FnOnce(ArrayViewMut2<T>),
        ) {
            if !nodes[i].needs_grad {
                return;
            }
            let slot = adj[i].get_or_insert_with(|| Array2::zeros(nodes[i].value.dim()));
            f(slot.view_mut());
        }

        for i in (0..=root).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &nodes[i];
            if !node.needs_grad {
                continue;
            }
            if check && g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    node: i,
                    op: node.op.name(),
                });
            }
            let x_of = |j: usize| -> &Array2<T> { &nodes[j].value };
            match &node.op {
                Op::Leaf => {}
                Op::Param { offset } => {
                    for (k, v) in g.iter().enumerate() {
                        grad[offset + k] += *v;
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut adj, &nodes, *a, g.clone());
                    acc(&mut adj, &nodes, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, &nodes, *a, g.clone());
                    acc(&mut adj, &nodes, *b, g.mapv(|v| -v));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (x_of(*a), x_of(*b));
                    if nodes[*a].needs_grad {
                        acc(&mut adj, &nodes, *a, zip_with(&g, bv, "mul", |g, b| g * b));
                    }
                    if nodes[*b].needs_grad {
                        acc(&mut adj, &nodes, *b, zip_with(&g, av, "mul", |g, a| g * a));
                    }
                }
                Op::Div(a, b) => {
                    let bv = x_of(*b);
                    if nodes[*a].needs_grad {
                        acc(&mut adj, &nodes, *a, zip_with(&g, bv, "div", |g, b| g / b));
                    }
                    if nodes[*b].needs_grad {
                        let y = &node.value;
                        let gy = zip_with(&g, y, "div", |g, y| g * y);
                        acc(&mut adj, &nodes, *b, zip_with(&gy, bv, "div", |gy, b| -gy / b));
                    }
                }
                Op::Neg(a) => acc(&mut adj, &nodes, *a, g.mapv(|v| -v)),
                Op::Scale(a, c) => {
                    let c = *c;
                    acc(&mut adj, &nodes, *a, g.mapv(|v| v * c));
                }
                Op::Offset(a) => acc(&mut adj, &nodes, *a, g),
                Op::Unary(a, u) => {
                    let xv = x_of(*a);
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(xv)
                        .and(&*node.value)
                        .for_each(|d, &x, &y| *d = *d * u.deriv(x, y));
                    acc(&mut adj, &nodes, *a, d);
                }
                Op::PowC(a, c) => {
                    let c = *c;
                    let xv = x_of(*a);
                    let mut d = g;
                    Zip::from(&mut d).and(xv).for_each(|d, &x| {
                        *d = if x > T::zero() {
                            *d * c * x.powf(c - one)
                        } else {
                            T::zero()
                        }
                    });
                    acc(&mut adj, &nodes, *a, d);
                }
                Op::Pow(a, p) => {
                    let (xv, pv) = (x_of(*a), x_of(*p));
                    let shape = g.dim();
                    let xb = xv.broadcast(shape).unwrap();
                    let pb = pv.broadcast(shape).unwrap();
                    if nodes[*a].needs_grad {
                        let d = Zip::from(&g).and(&xb).and(&pb).map_collect(|&g, &x, &p| {
                            if x > T::zero() {
                                g * p * x.powf(p - one)
                            } else {
                                T::zero()
                            }
                        });
                        acc(&mut adj, &nodes, *a, d);
                    }
                    if nodes[*p].needs_grad {
                        let d = Zip::from(&g)
                            .and(&xb)
                            .and(&*node.value)
                            .map_collect(|&g, &x, &y| {
                                if x > T::zero() {
                                    g * y * x.ln()
                                } else {
                                    T::zero()
                                }
                            });
                        acc(&mut adj, &nodes, *p, d);
                    }
                }
                Op::MatMulT(x, w) => {
                    let (xv, wv) = (x_of(*x), x_of(*w));
                    if nodes[*x].needs_grad {
                        match &mut adj[*x] {
                            Some(dx) => general_mat_mul(one, &g, wv, one, dx),
                            slot @ None => *slot = Some(g.dot(wv)),
                        }
                    }
                    if nodes[*w].needs_grad {
                        match &mut adj[*w] {
                            Some(dw) => general_mat_mul(one, &g.t(), xv, one, dw),
                            slot @ None => *slot = Some(g.t().dot(xv)),
                        }
                    }
                }
                Op::AddBias { x, b, rows } => {
                    if nodes[*b].needs_grad {
                        let db = g.slice(s![..*rows, ..]).sum_axis(Axis(0)).insert_axis(Axis(0));
                        acc(&mut adj, &nodes, *b, db);
                    }
                    acc(&mut adj, &nodes, *x, g);
                }
                Op::ScaleCols { x, lambda, df } => {
                    let (xv, lv) = (x_of(*x), x_of(*lambda));
                    if nodes[*lambda].needs_grad {
                        let df = *df;
                        let dl = (&g * xv).sum_axis(Axis(0)).insert_axis(Axis(0)).mapv(|v| v * df);
                        acc(&mut adj, &nodes, *lambda, dl);
                    }
                    if nodes[*x].needs_grad {
                        let factor = lv.mapv(|l| one + *df * l);
                        acc(&mut adj, &nodes, *x, &g * &factor);
                    }
                }
                Op::ColAffine { x, scale } => {
                    let sc = ArrayView2::from_shape((1, scale.len()), scale).unwrap();
                    acc(&mut adj, &nodes, *x, &g * &sc);
                }
                Op::JetAct { x, layout, derivs } => {
                    let xv = x_of(*x);
                    let dx = jet_act_backward(&g, xv, layout, derivs);
                    acc(&mut adj, &nodes, *x, dx);
                }
                Op::JetGate { z, u, v, layout } => {
                    let (dz, du, dv) = jet_gate_backward(&g, x_of(*z), x_of(*u), x_of(*v), layout, two);
                    acc(&mut adj, &nodes, *z, dz);
                    acc(&mut adj, &nodes, *u, du);
                    acc(&mut adj, &nodes, *v, dv);
                }
                Op::Slice { x, rows, cols } => {
                    acc_with(&mut adj, &nodes, *x, |mut dx| {
                        dx.slice_mut(s![rows.clone(), cols.clone()]).zip_mut_with(&g, |d, &g| *d += g);
                    });
                }
                Op::WeightedSum { x, weights } => {
                    let g0 = g[[0, 0]];
                    let d = Array2::from_shape_fn((weights.len(), 1), |(r, _)| g0 * weights[r]);
                    acc(&mut adj, &nodes, *x, d);
                }
                Op::Sum(x) => {
                    let g0 = g[[0, 0]];
                    let d = Array2::from_elem(nodes[*x].value.dim(), g0);
                    acc(&mut adj, &nodes, *x, d);
                }
            }
        }
        Ok(grad)
    }
}

fn jet_act_backward<T: Real>(
    g: &Array2<T>,
    x: &Array2<T>,
    layout: &JetLayout,
    derivs: &[Array2<T>],
) -> Array2<T> {
    let two = T::one() + T::one();
    let n = layout.points;
    let nf = layout.first.len();
    let f1 = &derivs[1];
    let mut dx = Array2::zeros(x.dim());
    // Value block: f' ȳ_v.
    Zip::from(dx.slice_mut(s![0..n, ..]))
        .and(g.slice(s![0..n, ..]))
        .and(f1)
        .for_each(|d, &g, &f1| *d = f1 * g);
    for k in 0..nf {
        let r = layout.block(1 + k);
        let f2 = &derivs[2];
        // ∂x_t: f' ȳ_t ; ∂x_v: f'' x_t ȳ_t
        let (mut dv, mut dt) = dx.multi_slice_mut((s![0..n, ..], s![r.clone(), ..]));
        Zip::from(&mut dv)
            .and(&mut dt)
            .and(g.slice(s![r.clone(), ..]))
            .and(x.slice(s![r, ..]))
            .and(f1)
            .and(f2)
            .for_each(|dv, dt, &gt, &t, &f1, &f2| {
                *dt = f1 * gt;
                *dv += f2 * t * gt;
            });
    }
    for j in 0..layout.second.len() {
        let r = layout.block(1 + nf + j);
        let rt = layout.block(layout.tangent_of_second(j));
        let (f2, f3) = (&derivs[2], &derivs[3]);
        let (mut dv, mut dt, mut ds) =
            dx.multi_slice_mut((s![0..n, ..], s![rt.clone(), ..], s![r.clone(), ..]));
        // Zip supports at most 6 producers; split the update in two passes.
        Zip::from(&mut dv)
            .and(g.slice(s![r.clone(), ..]))
            .and(x.slice(s![layout.block(layout.tangent_of_second(j)), ..]))
            .and(x.slice(s![r.clone(), ..]))
            .and(f2)
            .and(f3)
            .for_each(|dv, &gs, &t, &sec, &f2, &f3| *dv += (f3 * t * t + f2 * sec) * gs);
        Zip::from(&mut dt)
            .and(&mut ds)
            .and(g.slice(s![r, ..]))
            .and(x.slice(s![layout.block(layout.tangent_of_second(j)), ..]))
            .and(f1)
            .and(f2)
            .for_each(|dt, ds, &gs, &t, &f1, &f2| {
                *dt += two * f2 * t * gs;
                *ds = f1 * gs;
            });
    }
    dx
}

fn jet_gate_backward<T: Real>(
    g: &Array2<T>,
    z: &Array2<T>,
    u: &Array2<T>,
    v: &Array2<T>,
    layout: &JetLayout,
    two: T,
) -> (Array2<T>, Array2<T>, Array2<T>) {
    let one = T::one();
    let n = layout.points;
    let nf = layout.first.len();
    let mut dz = Array2::zeros(z.dim());
    let mut du = Array2::zeros(u.dim());
    let mut dv = Array2::zeros(v.dim());
    let (z0, u0, v0) = (
        z.slice(s![0..n, ..]),
        u.slice(s![0..n, ..]),
        v.slice(s![0..n, ..]),
    );
    // Same-block terms: ȳ_b (1−z0), ȳ_b z0 to u_b, v_b; (v0−u0) ȳ_b to z_b.
    for b in 0..layout.blocks() {
        let r = layout.block(b);
        Zip::from(dz.slice_mut(s![r.clone(), ..]))
            .and(du.slice_mut(s![r.clone(), ..]))
            .and(dv.slice_mut(s![r.clone(), ..]))
            .and(g.slice(s![r, ..]))
            .and(&z0)
            .and(&v0)
            .for_each(|dz, du, dv, &g, &z, &v| {
                *du = (one - z) * g;
                *dv = z * g;
                *dz = v * g;
            });
        Zip::from(dz.slice_mut(s![layout.block(b), ..]))
            .and(g.slice(s![layout.block(b), ..]))
            .and(&u0)
            .for_each(|dz, &g, &u| *dz -= u * g);
    }
    // Cross terms into the value block from higher blocks: z_b enters with (v0 − u0).
    for b in 1..layout.blocks() {
        let r = layout.block(b);
        Zip::from(du.slice_mut(s![0..n, ..]))
            .and(dv.slice_mut(s![0..n, ..]))
            .and(z.slice(s![r.clone(), ..]))
            .and(g.slice(s![r.clone(), ..]))
            .for_each(|du, dv, &zb, &g| {
                *du -= zb * g;
                *dv += zb * g;
            });
        Zip::from(dz.slice_mut(s![0..n, ..]))
            .and(u.slice(s![r.clone(), ..]))
            .and(v.slice(s![r.clone(), ..]))
            .and(g.slice(s![r, ..]))
            .for_each(|dz, &ub, &vb, &g| *dz += (vb - ub) * g);
    }
    // Second blocks couple to their tangent blocks: 2 z_t (v_t − u_t).
    for j in 0..layout.second.len() {
        let r = layout.block(1 + nf + j);
        let rt = layout.block(layout.tangent_of_second(j));
        let gs = g.slice(s![r, ..]);
        let (zt, ut, vt) = (
            z.slice(s![rt.clone(), ..]),
            u.slice(s![rt.clone(), ..]),
            v.slice(s![rt.clone(), ..]),
        );
        Zip::from(dz.slice_mut(s![rt.clone(), ..]))
            .and(&gs)
            .and(&ut)
            .and(&vt)
            .for_each(|dz, &g, &u, &v| *dz += two * (v - u) * g);
        Zip::from(du.slice_mut(s![rt.clone(), ..]))
            .and(dv.slice_mut(s![rt, ..]))
            .and(&gs)
            .and(&zt)
            .for_each(|du, dv, &g, &z| {
                *du -= two * z * g;
                *dv += two * z * g;
            });
    }
    (dz, du, dv)
}

impl<'t, T: Real> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn index(&self) -> usize {
        self.idx
    }

    pub fn value(&self) -> Rc<Array2<T>> {
        self.tape.val(self.idx)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value().dim()
    }

    /// The single entry of a `1×1` node.
    pub fn item(&self) -> T {
        let v = self.value();
        assert_eq!(v.dim(), (1, 1), "item() on a non-scalar node");
        v[[0, 0]]
    }

    pub fn column_values(&self) -> Vec<T> {
        self.value().iter().copied().collect()
    }

    pub fn pow(&self, p: Var<'t, T>) -> Var<'t, T> {
        self.tape
            .binary(self.idx, p.idx, Op::Pow(self.idx, p.idx), |x, p| {
                if x > T::zero() {
                    x.powf(p)
                } else {
                    T::zero()
                }
            })
    }
}

impl<'t, T: Real> Add for Var<'t, T> {
    type Output = Var<'t, T>;
    fn add(self, rhs: Self) -> Self {
        self.tape.binary(self.idx, rhs.idx, Op::Add(self.idx, rhs.idx), |a, b| a + b)
    }
}

impl<'t, T: Real> Sub for Var<'t, T> {
    type Output = Var<'t, T>;
    fn sub(self, rhs: Self) -> Self {
        self.tape.binary(self.idx, rhs.idx, Op::Sub(self.idx, rhs.idx), |a, b| a - b)
    }
}

impl<'t, T: Real> Mul for Var<'t, T> {
    type Output = Var<'t, T>;
    fn mul(self, rhs: Self) -> Self {
        self.tape.binary(self.idx, rhs.idx, Op::Mul(self.idx, rhs.idx), |a, b| a * b)
    }
}

impl<'t, T: Real> Div for Var<'t, T> {
    type Output = Var<'t, T>;
    fn div(self, rhs: Self) -> Self {
        self.tape.binary(self.idx, rhs.idx, Op::Div(self.idx, rhs.idx), |a, b| a / b)
    }
}

impl<'t, T: Real> Neg for Var<'t, T> {
    type Output = Var<'t, T>;
    fn neg(self) -> Self {
        let v = self.value().mapv(|x| -x);
        self.tape.push(Op::Neg(self.idx), v, self.tape.ng(self.idx))
    }
}

impl<T: Real> Scalar for Var<'_, T> {
    fn lift(&self, c: f64) -> Self {
        self.tape.scalar(c)
    }

    fn scale(&self, c: f64) -> Self {
        let c = T::from_f64(c);
        let v = self.value().mapv(|x| x * c);
        self.tape.push(Op::Scale(self.idx, c), v, self.tape.ng(self.idx))
    }

    fn offset(&self, c: f64) -> Self {
        let c = T::from_f64(c);
        let v = self.value().mapv(|x| x + c);
        self.tape.push(Op::Offset(self.idx), v, self.tape.ng(self.idx))
    }

    fn sin(&self) -> Self {
        self.tape.unary_op(self.idx, Unary::Sin)
    }
    fn cos(&self) -> Self {
        self.tape.unary_op(self.idx, Unary::Cos)
    }
    fn exp(&self) -> Self {
        self.tape.unary_op(self.idx, Unary::Exp)
    }
    fn ln(&self) -> Self {
        self.tape.unary_op(self.idx, Unary::Ln)
    }
    fn tanh(&self) -> Self {
        self.tape.unary_op(self.idx, Unary::Tanh)
    }
    fn sigmoid(&self) -> Self {
        self.tape.unary_op(self.idx, Unary::Sigmoid)
    }
    fn swish(&self) -> Self {
        self.tape.unary_op(self.idx, Unary::Swish)
    }
    fn sqrt(&self) -> Self {
        self.tape.unary_op(self.idx, Unary::Sqrt)
    }
    fn abs(&self) -> Self {
        self.tape.unary_op(self.idx, Unary::Abs)
    }
    fn relu(&self) -> Self {
        self.tape.unary_op(self.idx, Unary::Relu)
    }
    fn recip(&self) -> Self {
        self.tape.unary_op(self.idx, Unary::Recip)
    }
    fn square(&self) -> Self {
        self.tape.unary_op(self.idx, Unary::Square)
    }
    fn powi(&self, n: i32) -> Self {
        // Repeated products keep integer powers sign-correct.
        match n {
            0 => self.lift(1.0),
            1 => *self,
            2 => self.square(),
            _ => {
                let mut acc = *self;
                for _ in 1..n.abs() {
                    acc = acc * *self;
                }
                if n < 0 {
                    acc.recip()
                } else {
                    acc
                }
            }
        }
    }
    fn powc(&self, c: f64) -> Self {
        let ct = T::from_f64(c);
        let v = self.value().mapv(|x| if x > T::zero() { x.powf(ct) } else { T::zero() });
        self.tape.push(Op::PowC(self.idx, ct), v, self.tape.ng(self.idx))
    }
    fn powf(&self, p: &Self) -> Self {
        self.pow(*p)
    }
}
