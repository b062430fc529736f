//! Hamilton quaternions and the Cauchy–Riemann type operators
//! `∂ = ∂₀ − i∂₁ − j∂₂ − k∂₃` and `∂̄ = ∂₀ + i∂₁ + j∂₂ + k∂₃` acting on
//! quaternion-valued Gaussian-polynomial functions by left multiplication.

use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::testfn::TestFunction;

/// `w + x i + y j + z k`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const ONE: Self = Self::new(1.0, 0.0, 0.0, 0.0);
    pub const I: Self = Self::new(0.0, 1.0, 0.0, 0.0);
    pub const J: Self = Self::new(0.0, 0.0, 1.0, 0.0);
    pub const K: Self = Self::new(0.0, 0.0, 0.0, 1.0);
    pub const ZERO: Self = Self::new(0.0, 0.0, 0.0, 0.0);

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn from_array(c: [f64; 4]) -> Self {
        Self::new(c[0], c[1], c[2], c[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// The basis unit `e_μ` with `e_0 = 1, e_1 = i, e_2 = j, e_3 = k`.
    pub fn basis(mu: usize) -> Self {
        let mut c = [0.0; 4];
        c[mu] = 1.0;
        Self::from_array(c)
    }

    pub fn conj(self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn norm_sqr(self) -> f64 {
        self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z
    }

    pub fn norm(self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn scale(self, s: f64) -> Self {
        Self::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    /// Squared norm of the imaginary part.
    pub fn vector_norm_sqr(self) -> f64 {
        self.x * self.x + self.y * self.y + self.z * self.z
    }
}

/// Hamilton product.
pub fn quaternion_mul(p: Quaternion, q: Quaternion) -> Quaternion {
    Quaternion::new(
        p.w * q.w - p.x * q.x - p.y * q.y - p.z * q.z,
        p.w * q.x + p.x * q.w + p.y * q.z - p.z * q.y,
        p.w * q.y - p.x * q.z + p.y * q.w + p.z * q.x,
        p.w * q.z + p.x * q.y - p.y * q.x + p.z * q.w,
    )
}

impl Mul for Quaternion {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        quaternion_mul(self, rhs)
    }
}

impl Add for Quaternion {
    type Output = Self;
    fn add(self, r: Self) -> Self {
        Self::new(self.w + r.w, self.x + r.x, self.y + r.y, self.z + r.z)
    }
}

impl Sub for Quaternion {
    type Output = Self;
    fn sub(self, r: Self) -> Self {
        Self::new(self.w - r.w, self.x - r.x, self.y - r.y, self.z - r.z)
    }
}

impl Neg for Quaternion {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(-1.0)
    }
}

/// Quaternion-valued function on ℝ⁴ with Gaussian-polynomial components
/// (real parts are used on evaluation).
#[derive(Debug, Clone, PartialEq)]
pub struct QuaternionFunction {
    components: [TestFunction; 4],
}

impl QuaternionFunction {
    pub fn new(components: [TestFunction; 4]) -> Result<Self> {
        if components.iter().any(|c| c.dim() != 4) {
            return Err(Error::Shape("quaternion functions live on ℝ⁴".into()));
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[TestFunction; 4] {
        &self.components
    }

    pub fn eval(&self, x: &[f64]) -> Quaternion {
        Quaternion::from_array(std::array::from_fn(|m| self.components[m].eval(x).re))
    }

    /// `Σ_μ s_μ e_μ ∂_μ F` with `s = (1, sign, sign, sign)`.
    fn first_order(&self, sign: f64) -> Result<Self> {
        let mut acc: [Option<TestFunction>; 4] = Default::default();
        for mu in 0..4 {
            let s = if mu == 0 { 1.0 } else { sign };
            let mut alpha = [0u32; 4];
            alpha[mu] = 1;
            for nu in 0..4 {
                let prod = Quaternion::basis(mu) * Quaternion::basis(nu);
                let (rho, coeff) = prod
                    .to_array()
                    .iter()
                    .enumerate()
                    .find(|(_, c)| **c != 0.0)
                    .map(|(r, c)| (r, *c))
                    .expect("basis products are units");
                let term = self.components[nu]
                    .derivative(&alpha)?
                    .scaled(Complex64::new(s * coeff, 0.0));
                acc[rho] = Some(match acc[rho].take() {
                    Some(prev) => prev.plus(&term)?,
                    None => term,
                });
            }
        }
        Ok(Self {
            components: acc.map(|c| c.expect("every component receives terms")),
        })
    }

    /// `∂̄F = ∂₀F + i∂₁F + j∂₂F + k∂₃F`.
    pub fn dbar(&self) -> Result<Self> {
        self.first_order(1.0)
    }

    /// `∂F = ∂₀F − i∂₁F − j∂₂F − k∂₃F`.
    pub fn d(&self) -> Result<Self> {
        self.first_order(-1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testfn::Polynomial;
    use proptest::prelude::*;

    fn q() -> impl Strategy<Value = Quaternion> {
        (-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0)
            .prop_map(|(a, b, c, d)| Quaternion::new(a, b, c, d))
    }

    fn close(a: Quaternion, b: Quaternion, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn defining_relations() {
        let (one, i, j, k) = (Quaternion::ONE, Quaternion::I, Quaternion::J, Quaternion::K);
        assert_eq!(i * j, k);
        assert_eq!(j * k, i);
        assert_eq!(k * i, j);
        assert_eq!(j * i, -k);
        for u in [i, j, k] {
            assert_eq!(u * u, -one);
        }
        let p = Quaternion::new(0.3, -1.0, 2.0, 0.5);
        assert_eq!(p * one, p);
        assert_eq!((one + i) * (one + j), Quaternion::new(1.0, 1.0, 1.0, 1.0));
    }

    proptest! {
        #[test]
        fn associative(a in q(), b in q(), c in q()) {
            prop_assert!(close((a * b) * c, a * (b * c), 1e-12));
        }

        #[test]
        fn norm_is_multiplicative(a in q(), b in q()) {
            prop_assert!(((a * b).norm() - a.norm() * b.norm()).abs() < 1e-12);
        }

        #[test]
        fn conj_reverses_products(a in q(), b in q()) {
            prop_assert!(close((a * b).conj(), b.conj() * a.conj(), 1e-12));
        }
    }

    fn sample_field() -> QuaternionFunction {
        let base = |c: [f64; 4], w: f64, p: Vec<(Vec<u32>, f64)>| {
            TestFunction::gaussian(&c, w)
                .unwrap()
                .with_polynomial(Polynomial::from_terms(
                    p.into_iter().map(|(k, v)| (k, Complex64::new(v, 0.0))),
                ))
                .unwrap()
        };
        QuaternionFunction::new([
            base(
                [0.1, 0.0, -0.2, 0.3],
                0.9,
                vec![(vec![0, 0, 0, 0], 1.0), (vec![1, 1, 0, 0], 0.5)],
            ),
            base([0.0, 0.4, 0.0, 0.0], 1.1, vec![(vec![0, 0, 1, 0], -0.7)]),
            base(
                [-0.3, 0.0, 0.2, 0.0],
                0.8,
                vec![(vec![0, 0, 0, 0], 0.4), (vec![0, 0, 0, 2], 0.2)],
            ),
            base([0.2, -0.1, 0.1, 0.0], 1.0, vec![(vec![1, 0, 0, 0], 1.3)]),
        ])
        .unwrap()
    }

    fn fd_laplacian(f: &QuaternionFunction, x: &[f64], h: f64) -> Quaternion {
        let mut acc = f.eval(x).scale(-8.0);
        for mu in 0..4 {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[mu] += h;
            xm[mu] -= h;
            acc = acc + f.eval(&xp) + f.eval(&xm);
        }
        acc.scale(1.0 / (h * h))
    }

    #[test]
    fn d_dbar_is_laplacian() {
        let f = sample_field();
        let ddbar = f.dbar().unwrap().d().unwrap();
        let dbard = f.d().unwrap().dbar().unwrap();
        for x in [
            [0.2, -0.1, 0.4, 0.0],
            [-0.5, 0.3, 0.1, 0.7],
            [1.0, 0.5, -0.6, -0.2],
        ] {
            let exact = ddbar.eval(&x);
            let fd = fd_laplacian(&f, &x, 1e-3);
            assert!(
                (exact - fd).norm() <= 1e-4 * exact.norm().max(1e-2),
                "{exact:?} vs {fd:?}"
            );
            assert!(close(exact, dbard.eval(&x), 1e-10));
        }
    }
}
