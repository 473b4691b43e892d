//! Scalar abstraction shared by the `f64` backprop and its forward-mode
//! (dual number) lift used for Hessian-vector products.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use crate::activation::Activation;

pub trait Real:
    Copy
    + Default
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + AddAssign
{
    fn constant(x: f64) -> Self;
    fn scale(self, s: f64) -> Self;
    fn activate(self, act: Activation) -> Self;
    fn activate_d1(self, act: Activation) -> Self;
}

impl Real for f64 {
    #[inline]
    fn constant(x: f64) -> Self {
        x
    }
    #[inline]
    fn scale(self, s: f64) -> Self {
        self * s
    }
    #[inline]
    fn activate(self, act: Activation) -> Self {
        act.value(self)
    }
    #[inline]
    fn activate_d1(self, act: Activation) -> Self {
        act.d1(self)
    }
}

/// `re + eps * e` with `e^2 = 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dual {
    pub re: f64,
    pub eps: f64,
}

impl Dual {
    pub fn new(re: f64, eps: f64) -> Self {
        Self { re, eps }
    }
}

impl Add for Dual {
    type Output = Dual;
    #[inline]
    fn add(self, o: Dual) -> Dual {
        Dual::new(self.re + o.re, self.eps + o.eps)
    }
}

impl Sub for Dual {
    type Output = Dual;
    #[inline]
    fn sub(self, o: Dual) -> Dual {
        Dual::new(self.re - o.re, self.eps - o.eps)
    }
}

impl Mul for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, o: Dual) -> Dual {
        Dual::new(self.re * o.re, self.re * o.eps + self.eps * o.re)
    }
}

impl Neg for Dual {
    type Output = Dual;
    #[inline]
    fn neg(self) -> Dual {
        Dual::new(-self.re, -self.eps)
    }
}

impl AddAssign for Dual {
    #[inline]
    fn add_assign(&mut self, o: Dual) {
        self.re += o.re;
        self.eps += o.eps;
    }
}

impl Real for Dual {
    #[inline]
    fn constant(x: f64) -> Self {
        Dual::new(x, 0.0)
    }
    #[inline]
    fn scale(self, s: f64) -> Self {
        Dual::new(self.re * s, self.eps * s)
    }
    #[inline]
    fn activate(self, act: Activation) -> Self {
        Dual::new(act.value(self.re), act.d1(self.re) * self.eps)
    }
    #[inline]
    fn activate_d1(self, act: Activation) -> Self {
        Dual::new(act.d1(self.re), act.d2(self.re) * self.eps)
    }
}
