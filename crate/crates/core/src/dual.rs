//! Forward-mode dual numbers for exact Jacobians of the pendulum model.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar abstraction shared by `f64` and [`Dual`], enough to write the
/// pendulum dynamics and the RK4 step once.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn cst(v: f64) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn value(self) -> f64;

    fn scale(self, k: f64) -> Self {
        self * Self::cst(k)
    }
}

impl Real for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn scale(self, k: f64) -> Self {
        self * k
    }
}

/// Value plus `N` directional derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<const N: usize> {
    pub re: f64,
    pub eps: [f64; N],
}

impl<const N: usize> Dual<N> {
    pub fn constant(re: f64) -> Self {
        Self { re, eps: [0.0; N] }
    }

    /// Independent variable `i`.
    pub fn variable(re: f64, i: usize) -> Self {
        let mut eps = [0.0; N];
        eps[i] = 1.0;
        Self { re, eps }
    }

    #[inline]
    fn chain(self, f: f64, df: f64) -> Self {
        let mut eps = self.eps;
        for e in eps.iter_mut() {
            *e *= df;
        }
        Self { re: f, eps }
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        let mut eps = self.eps;
        for (a, b) in eps.iter_mut().zip(rhs.eps.iter()) {
            *a += b;
        }
        Self { re: self.re + rhs.re, eps }
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        let mut eps = self.eps;
        for (a, b) in eps.iter_mut().zip(rhs.eps.iter()) {
            *a -= b;
        }
        Self { re: self.re - rhs.re, eps }
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut eps = [0.0; N];
        for i in 0..N {
            eps[i] = self.eps[i] * rhs.re + self.re * rhs.eps[i];
        }
        Self { re: self.re * rhs.re, eps }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let inv = 1.0 / rhs.re;
        let q = self.re * inv;
        let mut eps = [0.0; N];
        for i in 0..N {
            eps[i] = (self.eps[i] - q * rhs.eps[i]) * inv;
        }
        Self { re: q, eps }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.chain(-self.re, -1.0)
    }
}

impl<const N: usize> Real for Dual<N> {
    #[inline]
    fn cst(v: f64) -> Self {
        Self::constant(v)
    }
    #[inline]
    fn sin(self) -> Self {
        let (s, c) = self.re.sin_cos();
        self.chain(s, c)
    }
    #[inline]
    fn cos(self) -> Self {
        let (s, c) = self.re.sin_cos();
        self.chain(c, -s)
    }
    #[inline]
    fn value(self) -> f64 {
        self.re
    }
    #[inline]
    fn scale(self, k: f64) -> Self {
        self.chain(self.re * k, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_and_quotient_rules() {
        let x = Dual::<2>::variable(1.3, 0);
        let y = Dual::<2>::variable(-0.7, 1);
        let f = (x * y.sin()) / (x + y.cos());
        let g = |a: f64, b: f64| (a * b.sin()) / (a + b.cos());
        let h = 1e-6;
        let dx = (g(1.3 + h, -0.7) - g(1.3 - h, -0.7)) / (2.0 * h);
        let dy = (g(1.3, -0.7 + h) - g(1.3, -0.7 - h)) / (2.0 * h);
        assert!((f.re - g(1.3, -0.7)).abs() < 1e-15);
        assert!((f.eps[0] - dx).abs() < 1e-9);
        assert!((f.eps[1] - dy).abs() < 1e-9);
    }
}
