//! Scalar helpers and small 2x2 linear algebra.
//!
//! All transcendental functions route through `libm` so results are the same
//! with and without `std`.

use core::ops::{Add, Mul, Sub};

#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn ln_1p(x: f64) -> f64 {
    libm::log1p(x)
}

pub const PI: f64 = core::f64::consts::PI;

/// Row-major 2x2 matrix, `m[row][col]`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Mat2(pub [[f64; 2]; 2]);

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2([[1.0, 0.0], [0.0, 1.0]]);
    pub const ZERO: Mat2 = Mat2([[0.0, 0.0], [0.0, 0.0]]);

    #[inline]
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Mat2([[a, b], [c, d]])
    }

    #[inline]
    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    /// Inverse, or `None` when the determinant vanishes.
    pub fn inverse(&self) -> Option<Mat2> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        let m = &self.0;
        Some(Mat2([
            [m[1][1] / d, -m[0][1] / d],
            [-m[1][0] / d, m[0][0] / d],
        ]))
    }

    #[inline]
    pub fn transpose(&self) -> Mat2 {
        let m = &self.0;
        Mat2([[m[0][0], m[1][0]], [m[0][1], m[1][1]]])
    }

    #[inline]
    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1],
            m[1][0] * v[0] + m[1][1] * v[1],
        ]
    }

    /// `self^T v`.
    #[inline]
    pub fn apply_t(&self, v: [f64; 2]) -> [f64; 2] {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[1][0] * v[1],
            m[0][1] * v[0] + m[1][1] * v[1],
        ]
    }

    pub fn max_abs(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .fold(0.0_f64, |acc, x| acc.max(x.abs()))
    }

    /// Largest eigenvalue of a symmetric matrix.
    pub fn sym_max_eig(&self) -> f64 {
        let m = &self.0;
        let tr = m[0][0] + m[1][1];
        let diff = m[0][0] - m[1][1];
        let off = 0.5 * (m[0][1] + m[1][0]);
        0.5 * tr + sqrt(0.25 * diff * diff + off * off)
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    fn mul(self, rhs: Mat2) -> Mat2 {
        let a = &self.0;
        let b = &rhs.0;
        let mut out = [[0.0; 2]; 2];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        Mat2(out)
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, rhs: Mat2) -> Mat2 {
        let mut out = self.0;
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell += rhs.0[i][j];
            }
        }
        Mat2(out)
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, rhs: Mat2) -> Mat2 {
        let mut out = self.0;
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell -= rhs.0[i][j];
            }
        }
        Mat2(out)
    }
}

impl Mul<f64> for Mat2 {
    type Output = Mat2;
    fn mul(self, s: f64) -> Mat2 {
        let mut out = self.0;
        out.iter_mut().flatten().for_each(|x| *x *= s);
        Mat2(out)
    }
}

/// `Θ(x) = log(1 + log(1 + x))`.
pub fn theta(x: f64) -> f64 {
    ln_1p(ln_1p(x))
}

/// `Θ'(x) = 1 / ((1 + x)(1 + log(1 + x)))`.
pub fn theta_prime(x: f64) -> f64 {
    1.0 / ((1.0 + x) * (1.0 + ln_1p(x)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_roundtrip() {
        let m = Mat2::new(2.0, 1.0, -0.5, 3.0);
        let p = m * m.inverse().unwrap();
        assert!((p - Mat2::IDENTITY).max_abs() < 1e-15);
        assert!(Mat2::ZERO.inverse().is_none());
    }

    #[test]
    fn theta_derivative_matches_difference() {
        for &x in &[0.0, 0.3, 2.0, 50.0] {
            let h = 1e-6;
            let fd = (theta(x + h) - theta((x - h).max(0.0))) / (x + h - (x - h).max(0.0));
            assert!((fd - theta_prime(x)).abs() < 1e-6, "x={x}");
        }
    }

    #[test]
    fn sym_max_eig_diagonal() {
        assert_eq!(Mat2::new(3.0, 0.0, 0.0, 1.0).sym_max_eig(), 3.0);
    }
}
