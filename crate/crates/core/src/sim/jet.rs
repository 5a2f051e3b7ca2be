//! Second-order forward-mode derivatives of scalar functions of time.

use std::ops::{Add, Mul, Neg, Sub};

/// Value with its first and second time derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet2 {
    pub v: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Jet2 {
    pub const fn constant(v: f64) -> Self {
        Self { v, d1: 0.0, d2: 0.0 }
    }

    /// `a·t + b` evaluated at `t`.
    pub fn affine(t: f64, a: f64, b: f64) -> Self {
        Self { v: a * t + b, d1: a, d2: 0.0 }
    }

    pub fn sin(self) -> Self {
        let (s, c) = self.v.sin_cos();
        Self { v: s, d1: c * self.d1, d2: c * self.d2 - s * self.d1 * self.d1 }
    }

    pub fn cos(self) -> Self {
        let (s, c) = self.v.sin_cos();
        Self { v: c, d1: -s * self.d1, d2: -s * self.d2 - c * self.d1 * self.d1 }
    }

    /// Quintic smoothstep `6u⁵ - 15u⁴ + 10u³`, clamped outside `[0, 1]`.
    /// First and second derivatives vanish at both ends.
    pub fn smoothstep(self) -> Self {
        if self.v <= 0.0 {
            return Self::constant(0.0);
        }
        if self.v >= 1.0 {
            return Self::constant(1.0);
        }
        let u = self.v;
        let f = u * u * u * (10.0 + u * (-15.0 + 6.0 * u));
        let f1 = 30.0 * u * u * (1.0 - u) * (1.0 - u);
        let f2 = 60.0 * u * (1.0 - u) * (1.0 - 2.0 * u);
        Self { v: f, d1: f1 * self.d1, d2: f2 * self.d1 * self.d1 + f1 * self.d2 }
    }
}

impl Add for Jet2 {
    type Output = Jet2;
    fn add(self, o: Jet2) -> Jet2 {
        Jet2 { v: self.v + o.v, d1: self.d1 + o.d1, d2: self.d2 + o.d2 }
    }
}

impl Sub for Jet2 {
    type Output = Jet2;
    fn sub(self, o: Jet2) -> Jet2 {
        Jet2 { v: self.v - o.v, d1: self.d1 - o.d1, d2: self.d2 - o.d2 }
    }
}

impl Mul for Jet2 {
    type Output = Jet2;
    fn mul(self, o: Jet2) -> Jet2 {
        Jet2 {
            v: self.v * o.v,
            d1: self.d1 * o.v + self.v * o.d1,
            d2: self.d2 * o.v + 2.0 * self.d1 * o.d1 + self.v * o.d2,
        }
    }
}

impl Mul<f64> for Jet2 {
    type Output = Jet2;
    fn mul(self, k: f64) -> Jet2 {
        Jet2 { v: self.v * k, d1: self.d1 * k, d2: self.d2 * k }
    }
}

impl Add<f64> for Jet2 {
    type Output = Jet2;
    fn add(self, k: f64) -> Jet2 {
        Jet2 { v: self.v + k, ..self }
    }
}

impl Neg for Jet2 {
    type Output = Jet2;
    fn neg(self) -> Jet2 {
        self * -1.0
    }
}
