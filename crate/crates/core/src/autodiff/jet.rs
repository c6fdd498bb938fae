use std::ops::{Add, Div, Mul, Neg, Sub};

use super::scalar::Scalar;

/// Truncated Taylor jet: a value with its first and pure second derivatives
/// with respect to each input coordinate.
///
/// A `None` derivative is a structural zero, which keeps constants and
/// untracked directions free of work.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet<S> {
    pub value: S,
    pub first: Vec<Option<S>>,
    pub second: Vec<Option<S>>,
}

pub type JetValue = Jet<f64>;

impl<S: Scalar> Jet<S> {
    pub fn constant(value: S, dims: usize) -> Self {
        Jet {
            value,
            first: vec![None; dims],
            second: vec![None; dims],
        }
    }

    /// Seed for input coordinate `i`: value `x`, first derivative `e_i`,
    /// second derivative zero.
    pub fn variable(value: S, i: usize, dims: usize) -> Self {
        let mut j = Self::constant(value, dims);
        j.first[i] = Some(j.value.lift(1.0));
        j
    }

    pub fn dims(&self) -> usize {
        self.first.len().max(self.second.len())
    }

    /// `∂/∂x_i`, materializing structural zeros.
    pub fn d1(&self, i: usize) -> S {
        self.first
            .get(i)
            .cloned()
            .flatten()
            .unwrap_or_else(|| self.value.lift(0.0))
    }

    /// `∂²/∂x_i²`, materializing structural zeros.
    pub fn d2(&self, i: usize) -> S {
        self.second
            .get(i)
            .cloned()
            .flatten()
            .unwrap_or_else(|| self.value.lift(0.0))
    }

    /// Composition `g ∘ self` given `g(v)`, `g'(v)` and a lazily evaluated `g''(v)`.
    pub fn chain(&self, g0: S, g1: S, g2: impl FnOnce() -> S) -> Self {
        let dims = self.dims();
        let mut first = vec![None; dims];
        let mut second = vec![None; dims];
        let needs_g2 = self.first.iter().any(Option::is_some);
        let g2 = if needs_g2 { Some(g2()) } else { None };
        for i in 0..dims {
            let t = self.first.get(i).and_then(|t| t.as_ref());
            let s = self.second.get(i).and_then(|s| s.as_ref());
            if let Some(t) = t {
                first[i] = Some(g1.clone() * t.clone());
            }
            let curv = t.map(|t| g2.clone().unwrap() * t.clone() * t.clone());
            let lin = s.map(|s| g1.clone() * s.clone());
            second[i] = add_opt(curv, lin);
        }
        Jet {
            value: g0,
            first,
            second,
        }
    }

    /// `self^p` where the exponent carries no input dependence.
    pub fn powf_scalar(&self, p: &S) -> Self {
        let v = &self.value;
        let pm1 = p.offset(-1.0);
        let g0 = v.powf(p);
        let g1 = p.clone() * v.powf(&pm1);
        self.chain(g0, g1, || p.clone() * pm1.clone() * v.powf(&p.offset(-2.0)))
    }
}

fn add_opt<S: Scalar>(a: Option<S>, b: Option<S>) -> Option<S> {
    match (a, b) {
        (Some(a), Some(b)) => Some(a + b),
        (Some(a), None) => Some(a),
        (None, b) => b,
    }
}

fn sub_opt<S: Scalar>(a: Option<S>, b: Option<S>) -> Option<S> {
    match (a, b) {
        (Some(a), Some(b)) => Some(a - b),
        (Some(a), None) => Some(a),
        (None, Some(b)) => Some(-b),
        (None, None) => None,
    }
}

fn mul_opt<S: Scalar>(a: Option<&S>, b: &S) -> Option<S> {
    a.map(|a| a.clone() * b.clone())
}

fn get<S: Clone>(v: &[Option<S>], i: usize) -> Option<S> {
    v.get(i).cloned().flatten()
}

impl<S: Scalar> Add for Jet<S> {
    type Output = Jet<S>;
    fn add(self, rhs: Jet<S>) -> Jet<S> {
        let dims = self.dims().max(rhs.dims());
        Jet {
            value: self.value + rhs.value,
            first: (0..dims)
                .map(|i| add_opt(get(&self.first, i), get(&rhs.first, i)))
                .collect(),
            second: (0..dims)
                .map(|i| add_opt(get(&self.second, i), get(&rhs.second, i)))
                .collect(),
        }
    }
}

impl<S: Scalar> Sub for Jet<S> {
    type Output = Jet<S>;
    fn sub(self, rhs: Jet<S>) -> Jet<S> {
        let dims = self.dims().max(rhs.dims());
        Jet {
            value: self.value - rhs.value,
            first: (0..dims)
                .map(|i| sub_opt(get(&self.first, i), get(&rhs.first, i)))
                .collect(),
            second: (0..dims)
                .map(|i| sub_opt(get(&self.second, i), get(&rhs.second, i)))
                .collect(),
        }
    }
}

impl<S: Scalar> Mul for Jet<S> {
    type Output = Jet<S>;
    fn mul(self, rhs: Jet<S>) -> Jet<S> {
        let dims = self.dims().max(rhs.dims());
        let (a, b) = (&self, &rhs);
        let mut first = Vec::with_capacity(dims);
        let mut second = Vec::with_capacity(dims);
        for i in 0..dims {
            let (at, bt) = (get(&a.first, i), get(&b.first, i));
            let (as_, bs) = (get(&a.second, i), get(&b.second, i));
            first.push(add_opt(
                mul_opt(at.as_ref(), &b.value),
                mul_opt(bt.as_ref(), &a.value),
            ));
            let cross = match (&at, &bt) {
                (Some(x), Some(y)) => Some((x.clone() * y.clone()).scale(2.0)),
                _ => None,
            };
            second.push(add_opt(
                add_opt(
                    mul_opt(as_.as_ref(), &b.value),
                    mul_opt(bs.as_ref(), &a.value),
                ),
                cross,
            ));
        }
        Jet {
            value: self.value * rhs.value,
            first,
            second,
        }
    }
}

impl<S: Scalar> Div for Jet<S> {
    type Output = Jet<S>;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, rhs: Jet<S>) -> Jet<S> {
        self * rhs.recip()
    }
}

impl<S: Scalar> Neg for Jet<S> {
    type Output = Jet<S>;
    fn neg(self) -> Jet<S> {
        Jet {
            value: -self.value,
            first: self.first.into_iter().map(|t| t.map(|t| -t)).collect(),
            second: self.second.into_iter().map(|t| t.map(|t| -t)).collect(),
        }
    }
}

impl<S: Scalar> Scalar for Jet<S> {
    fn lift(&self, c: f64) -> Self {
        Jet::constant(self.value.lift(c), self.dims())
    }

    fn scale(&self, c: f64) -> Self {
        Jet {
            value: self.value.scale(c),
            first: self.first.iter().map(|t| t.as_ref().map(|t| t.scale(c))).collect(),
            second: self
                .second
                .iter()
                .map(|t| t.as_ref().map(|t| t.scale(c)))
                .collect(),
        }
    }

    fn offset(&self, c: f64) -> Self {
        Jet {
            value: self.value.offset(c),
            first: self.first.clone(),
            second: self.second.clone(),
        }
    }

    fn sin(&self) -> Self {
        let v = &self.value;
        self.chain(v.sin(), v.cos(), || -v.sin())
    }

    fn cos(&self) -> Self {
        let v = &self.value;
        self.chain(v.cos(), -v.sin(), || -v.cos())
    }

    fn exp(&self) -> Self {
        let e = self.value.exp();
        self.chain(e.clone(), e.clone(), || e)
    }

    fn ln(&self) -> Self {
        let v = &self.value;
        let r = v.recip();
        self.chain(v.ln(), r.clone(), || -(r.square()))
    }

    fn tanh(&self) -> Self {
        let t = self.value.tanh();
        let d = (t.clone() * t.clone()).scale(-1.0).offset(1.0);
        self.chain(t.clone(), d.clone(), || (d * t).scale(-2.0))
    }

    fn sigmoid(&self) -> Self {
        let s = self.value.sigmoid();
        let d = s.clone() * (s.clone().scale(-1.0).offset(1.0));
        self.chain(s.clone(), d.clone(), || d * s.scale(-2.0).offset(1.0))
    }

    fn swish(&self) -> Self {
        let x = &self.value;
        let s = x.sigmoid();
        let ds = s.clone() * s.clone().scale(-1.0).offset(1.0);
        let g0 = x.clone() * s.clone();
        let g1 = s.clone() + x.clone() * ds.clone();
        // swish'' = σ(1−σ)(2 + x(1−2σ))
        self.chain(g0, g1, || ds * (x.clone() * s.scale(-2.0).offset(1.0)).offset(2.0))
    }

    fn sqrt(&self) -> Self {
        let r = self.value.sqrt();
        let d = r.recip().scale(0.5);
        self.chain(r.clone(), d.clone(), || (d / self.value.clone()).scale(-0.5))
    }

    fn abs(&self) -> Self {
        let v = &self.value;
        let sign = v.powc(0.0) - (-v.clone()).powc(0.0);
        self.chain(v.abs(), sign, || v.lift(0.0))
    }

    fn relu(&self) -> Self {
        let r = self.value.relu();
        let step = self.value.powc(0.0);
        let zero = self.value.lift(0.0);
        self.chain(r, step, || zero)
    }

    fn recip(&self) -> Self {
        let r = self.value.recip();
        let r2 = r.square();
        self.chain(r.clone(), -r2.clone(), || (r2 * r).scale(2.0))
    }

    fn square(&self) -> Self {
        let v = &self.value;
        self.chain(v.square(), v.scale(2.0), || v.lift(2.0))
    }

    fn powi(&self, n: i32) -> Self {
        let v = &self.value;
        let nf = n as f64;
        self.chain(v.powi(n), v.powi(n - 1).scale(nf), || {
            v.powi(n - 2).scale(nf * (nf - 1.0))
        })
    }

    fn powc(&self, c: f64) -> Self {
        let v = &self.value;
        self.chain(v.powc(c), v.powc(c - 1.0).scale(c), || {
            v.powc(c - 2.0).scale(c * (c - 1.0))
        })
    }

    fn powf(&self, p: &Self) -> Self {
        // f = x^p, A = x^(p-1), B = x^(p-2), L = ln x (all zero for x <= 0).
        let dims = self.dims().max(p.dims());
        let x = &self.value;
        let pv = &p.value;
        let f = x.powf(pv);
        let a = x.powf(&pv.offset(-1.0));
        let b = x.powf(&pv.offset(-2.0));
        let l = log_guard(x);
        let mut first = Vec::with_capacity(dims);
        let mut second = Vec::with_capacity(dims);
        for i in 0..dims {
            let (xt, xs) = (get(&self.first, i), get(&self.second, i));
            let (pt, ps) = (get(&p.first, i), get(&p.second, i));
            let d1 = add_opt(
                xt.as_ref().map(|t| pv.clone() * a.clone() * t.clone()),
                pt.as_ref().map(|t| f.clone() * l.clone() * t.clone()),
            );
            let mut d2 = None;
            if let Some(t) = &xt {
                d2 = add_opt(
                    d2,
                    Some(pv.clone() * pv.offset(-1.0) * b.clone() * t.clone() * t.clone()),
                );
            }
            if let Some(s) = &xs {
                d2 = add_opt(d2, Some(pv.clone() * a.clone() * s.clone()));
            }
            if let (Some(t), Some(q)) = (&xt, &pt) {
                let k = a.clone() * (pv.clone() * l.clone()).offset(1.0);
                d2 = add_opt(d2, Some((k * t.clone() * q.clone()).scale(2.0)));
            }
            if let Some(q) = &pt {
                d2 = add_opt(d2, Some(f.clone() * l.clone() * l.clone() * q.clone() * q.clone()));
            }
            if let Some(qs) = &ps {
                d2 = add_opt(d2, Some(f.clone() * l.clone() * qs.clone()));
            }
            first.push(d1);
            second.push(d2);
        }
        Jet {
            value: f,
            first,
            second,
        }
    }
}

/// `ln x` for `x > 0`, zero otherwise (matches the positive-part power).
fn log_guard<S: Scalar>(x: &S) -> S {
    // x.relu() is zero where x <= 0; ln(relu(x) + [x<=0]) = 0 there.
    let indicator = x.lift(1.0) - x.powc(0.0);
    (x.relu() + indicator).ln()
}
