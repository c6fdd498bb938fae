use std::ops::{Add, Div, Mul, Neg, Sub};

/// Arithmetic shared by plain numbers, jets, and tape variables.
///
/// Residual and boundary operators are written once against this trait and
/// evaluated per point (`f64`), with input derivatives (`Jet<f64>`), or
/// batched on a tape (`Var`) when parameter gradients are needed.
///
/// `powf`/`powc` use positive-part semantics: `x^p` for `x > 0`, and `0` with
/// zero derivatives for `x <= 0`.
pub trait Scalar:
    Clone
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// A constant in the same evaluation context as `self`.
    fn lift(&self, c: f64) -> Self;
    fn scale(&self, c: f64) -> Self;
    fn offset(&self, c: f64) -> Self;

    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn tanh(&self) -> Self;
    fn sigmoid(&self) -> Self;
    fn swish(&self) -> Self;
    fn sqrt(&self) -> Self;
    fn abs(&self) -> Self;
    fn relu(&self) -> Self;
    fn recip(&self) -> Self;
    fn square(&self) -> Self;
    fn powi(&self, n: i32) -> Self;
    fn powc(&self, c: f64) -> Self;
    fn powf(&self, p: &Self) -> Self;
}

#[inline]
pub(crate) fn sigmoid_f64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

macro_rules! impl_scalar_float {
    ($t:ty) => {
        impl Scalar for $t {
            #[inline]
            fn lift(&self, c: f64) -> Self {
                c as $t
            }
            #[inline]
            fn scale(&self, c: f64) -> Self {
                self * c as $t
            }
            #[inline]
            fn offset(&self, c: f64) -> Self {
                self + c as $t
            }
            #[inline]
            fn sin(&self) -> Self {
                <$t>::sin(*self)
            }
            #[inline]
            fn cos(&self) -> Self {
                <$t>::cos(*self)
            }
            #[inline]
            fn exp(&self) -> Self {
                <$t>::exp(*self)
            }
            #[inline]
            fn ln(&self) -> Self {
                <$t>::ln(*self)
            }
            #[inline]
            fn tanh(&self) -> Self {
                <$t>::tanh(*self)
            }
            #[inline]
            fn sigmoid(&self) -> Self {
                sigmoid_f64(*self as f64) as $t
            }
            #[inline]
            fn swish(&self) -> Self {
                *self * self.sigmoid()
            }
            #[inline]
            fn sqrt(&self) -> Self {
                <$t>::sqrt(*self)
            }
            #[inline]
            fn abs(&self) -> Self {
                <$t>::abs(*self)
            }
            #[inline]
            fn relu(&self) -> Self {
                if *self > 0.0 {
                    *self
                } else {
                    0.0
                }
            }
            #[inline]
            fn recip(&self) -> Self {
                1.0 / *self
            }
            #[inline]
            fn square(&self) -> Self {
                *self * *self
            }
            #[inline]
            fn powi(&self, n: i32) -> Self {
                <$t>::powi(*self, n)
            }
            #[inline]
            fn powc(&self, c: f64) -> Self {
                if *self > 0.0 {
                    <$t>::powf(*self, c as $t)
                } else {
                    0.0
                }
            }
            #[inline]
            fn powf(&self, p: &Self) -> Self {
                if *self > 0.0 {
                    <$t>::powf(*self, *p)
                } else {
                    0.0
                }
            }
        }
    };
}

impl_scalar_float!(f64);
impl_scalar_float!(f32);
