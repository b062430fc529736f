//! Lévy–Khinchine exponents with finite atomic jump measures.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{cubature, Tolerance};
use crate::quaternion::Quaternion;
use crate::testfn::TestFunction;

/// A point mass `rate · δ_position` of the jump measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub position: f64,
    pub rate: f64,
}

#[derive(Deserialize)]
struct RawTriple {
    #[serde(default)]
    a: f64,
    #[serde(default)]
    sigma2: f64,
    #[serde(default)]
    atoms: Vec<Atom>,
}

/// Drift `a`, Gaussian variance `σ²` and a finite atomic jump measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTriple")]
pub struct LevyTriple {
    a: f64,
    sigma2: f64,
    atoms: Vec<Atom>,
}

impl TryFrom<RawTriple> for LevyTriple {
    type Error = Error;
    fn try_from(r: RawTriple) -> Result<Self> {
        Self::new(r.a, r.sigma2, r.atoms)
    }
}

/// `e^{iz} − 1` without cancellation for small `z`.
fn expm1_i(z: f64) -> Complex64 {
    let s = (0.5 * z).sin();
    Complex64::new(-2.0 * s * s, z.sin())
}

/// `e^{iz} − 1 − iz` without cancellation for small `z`.
fn expm1_i_minus_linear(z: f64) -> Complex64 {
    if z.abs() > 0.1 {
        return expm1_i(z) - Complex64::new(0.0, z);
    }
    // Taylor series: Σ_{m≥2} (iz)^m / m!
    let mut term = Complex64::new(0.0, z);
    let mut acc = Complex64::new(0.0, 0.0);
    for m in 2..30 {
        term *= Complex64::new(0.0, z) / m as f64;
        acc += term;
        if term.norm() < 1e-18 * acc.norm() {
            break;
        }
    }
    acc
}

impl LevyTriple {
    pub fn new(a: f64, sigma2: f64, atoms: Vec<Atom>) -> Result<Self> {
        if !a.is_finite() {
            return Err(Error::Config("drift must be finite".into()));
        }
        if !(sigma2.is_finite() && sigma2 >= 0.0) {
            return Err(Error::Config(format!(
                "sigma2 = {sigma2} must be finite and nonnegative"
            )));
        }
        for atom in &atoms {
            if !(atom.position.is_finite() && atom.position != 0.0) {
                return Err(Error::Config(format!(
                    "atom position {} must be finite and nonzero",
                    atom.position
                )));
            }
            if !(atom.rate.is_finite() && atom.rate > 0.0) {
                return Err(Error::Config(format!(
                    "atom rate {} must be finite and positive",
                    atom.rate
                )));
            }
        }
        Ok(Self { a, sigma2, atoms })
    }

    pub fn gaussian(sigma2: f64) -> Result<Self> {
        Self::new(0.0, sigma2, vec![])
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    /// `ψ(t) = iat − σ²t²/2 + Σ λ (e^{ist} − 1 − ist/(1+s²))`.
    pub fn psi(&self, t: f64) -> Complex64 {
        let mut acc = Complex64::new(-0.5 * self.sigma2 * t * t, self.a * t);
        for &Atom { position: s, rate } in &self.atoms {
            let z = s * t;
            // e^{iz} − 1 − iz/(1+s²) = (e^{iz} − 1 − iz) + iz s²/(1+s²)
            acc +=
                rate * (expm1_i_minus_linear(z) + Complex64::new(0.0, z * s * s / (1.0 + s * s)));
        }
        acc
    }

    /// Drift of the Gaussian part once the jump compensator is folded in:
    /// `a − Σ λ s/(1+s²)`.
    pub fn compensated_drift(&self) -> f64 {
        self.a
            - self
                .atoms
                .iter()
                .map(|at| at.rate * at.position / (1.0 + at.position * at.position))
                .sum::<f64>()
    }

    /// Cumulant coefficient `c_n`, i.e. `i^{-n} ψ^{(n)}(0)`.
    pub fn cumulant(&self, n: u32) -> Result<f64> {
        let jumps = |f: &dyn Fn(f64) -> f64| {
            self.atoms
                .iter()
                .map(|at| at.rate * f(at.position))
                .sum::<f64>()
        };
        match n {
            0 => Err(Error::Domain("cumulant order starts at 1".into())),
            1 => Ok(self.a + jumps(&|s| s.powi(3) / (1.0 + s * s))),
            2 => Ok(self.sigma2 + jumps(&|s| s * s)),
            _ => Ok(jumps(&|s| s.powi(n as i32))),
        }
    }

    /// `exp(∫ ψ(φ(x)) dx)` for a real test function, by nested adaptive quadrature.
    pub fn characteristic_functional(
        &self,
        phi: &TestFunction,
        quad: &FunctionalQuadrature,
    ) -> Result<Complex64> {
        if !phi.is_real() {
            return Err(Error::Domain(
                "characteristic functional needs a real test function".into(),
            ));
        }
        let (lo, hi) = phi.bounding_box(quad.spread);
        let est = cubature(&|x: &[f64]| self.psi(phi.eval(x).re), &lo, &hi, quad.tol)
            .require(quad.tol.rel)?;
        Ok(est.value.exp())
    }
}

/// Integration domain and accuracy for characteristic functionals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FunctionalQuadrature {
    /// Half-width of the integration box in units of the Gaussian widths.
    pub spread: f64,
    pub tol: Tolerance,
}

impl Default for FunctionalQuadrature {
    fn default() -> Self {
        Self {
            spread: 9.0,
            tol: Tolerance::new(1e-12, 1e-10).with_budget(400),
        }
    }
}

#[derive(Deserialize)]
struct RawQuaternionData {
    #[serde(default)]
    beta: f64,
    sigma0: f64,
    sigma: f64,
    #[serde(default)]
    atoms: Vec<Atom>,
}

/// Exponent data of the quaternion-valued noise: jumps sit on the real axis
/// (the centre of ℍ), so atoms carry a real position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawQuaternionData")]
pub struct QuaternionLevyData {
    beta: f64,
    sigma0: f64,
    sigma: f64,
    atoms: Vec<Atom>,
}

impl TryFrom<RawQuaternionData> for QuaternionLevyData {
    type Error = Error;
    fn try_from(r: RawQuaternionData) -> Result<Self> {
        Self::new(r.beta, r.sigma0, r.sigma, r.atoms)
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

impl QuaternionLevyData {
    pub fn new(beta: f64, sigma0: f64, sigma: f64, atoms: Vec<Atom>) -> Result<Self> {
        if !beta.is_finite() {
            return Err(Error::Config("beta must be finite".into()));
        }
        for (name, v) in [("sigma0", sigma0), ("sigma", sigma)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} = {v} must be positive")));
            }
        }
        // Reuse the scalar validation for the atoms.
        LevyTriple::new(0.0, 0.0, atoms.clone())?;
        Ok(Self {
            beta,
            sigma0,
            sigma,
            atoms,
        })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Drift of the real component once the small-jump compensation
    /// `−Σ_{|y|<1} λ y` is folded in.
    pub fn compensated_drift(&self) -> f64 {
        self.beta
            - self
                .atoms
                .iter()
                .filter(|a| a.position.abs() < 1.0)
                .map(|a| a.rate * a.position)
                .sum::<f64>()
    }

    /// Exponent at `x = x⁰ − x¹i − x²j − x³k`, passed as its coordinate
    /// quaternion `(x⁰, x¹, x², x³)`. Only `x⁰` pairs with real-axis jumps.
    pub fn psi(&self, x: Quaternion) -> Complex64 {
        let x0 = x.w;
        let mut acc = Complex64::new(
            -0.5 * self.sigma0 * x0 * x0 - 0.5 * self.sigma * x.vector_norm_sqr(),
            self.beta * x0,
        );
        for &Atom { position: y, rate } in &self.atoms {
            let z = x0 * y;
            let small = if y.abs() < 1.0 { 1.0 } else { 0.0 };
            // −(1 + iz·1{|y|<1} − e^{iz})
            acc += rate * (expm1_i(z) - Complex64::new(0.0, small * z));
        }
        acc
    }

    /// `c₀ = σ₀ + ∫ (x⁰)² dν`.
    pub fn c0(&self) -> f64 {
        self.sigma0
            + self
                .atoms
                .iter()
                .map(|a| a.rate * a.position * a.position)
                .sum::<f64>()
    }

    /// `c = σ + ⅓∫|x⃗|² dν`; the jump part vanishes for real-axis atoms.
    pub fn c(&self) -> f64 {
        self.sigma
    }

    /// `c^n_l = C(n,l)/(l+1) ∫ (x⁰)^{n−l} |x⃗|^l dν` for `n ≥ 3`.
    pub fn c_nl(&self, n: u32, l: u32) -> Result<f64> {
        if n < 3 || l > n {
            return Err(Error::Domain(format!(
                "c^n_l needs n ≥ 3 and l ≤ n, got n = {n}, l = {l}"
            )));
        }
        if l > 0 {
            return Ok(0.0);
        }
        Ok(binomial(n, l) / (l as f64 + 1.0)
            * self
                .atoms
                .iter()
                .map(|a| a.rate * a.position.powi(n as i32))
                .sum::<f64>())
    }

    /// Smallest fitted exponent `p` in `|ψ(x)| ~ |x|^p` over a few directions
    /// and scales near the origin. Reported, not enforced.
    pub fn small_x_order(&self) -> f64 {
        let dirs = [
            Quaternion::ONE,
            Quaternion::I,
            Quaternion::new(1.0, 1.0, 0.0, 0.0).scale(std::f64::consts::FRAC_1_SQRT_2),
            Quaternion::new(0.5, 0.5, 0.5, 0.5),
        ];
        let (r1, r2) = (1e-4, 1e-3);
        dirs.iter()
            .map(|&d| {
                let p1 = self.psi(d.scale(r1)).norm();
                let p2 = self.psi(d.scale(r2)).norm();
                (p2 / p1).ln() / (r2 / r1).ln()
            })
            .fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn mixed() -> LevyTriple {
        LevyTriple::new(
            0.3,
            0.5,
            vec![
                Atom {
                    position: 1.0,
                    rate: 0.7,
                },
                Atom {
                    position: -0.5,
                    rate: 1.2,
                },
                Atom {
                    position: 2.0,
                    rate: 0.3,
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn psi_examples() {
        let g = LevyTriple::gaussian(1.0).unwrap();
        assert!((g.psi(2.0) - Complex64::new(-2.0, 0.0)).norm() < 1e-15);
        let d = LevyTriple::new(1.0, 0.0, vec![]).unwrap();
        assert!((d.psi(3.0) - Complex64::new(0.0, 3.0)).norm() < 1e-15);
        let j = LevyTriple::new(
            0.0,
            0.0,
            vec![Atom {
                position: 1.0,
                rate: 1.0,
            }],
        )
        .unwrap();
        let expected = Complex64::new(0.0, 1.0).exp() - 1.0 - Complex64::new(0.0, 0.5);
        assert!((j.psi(1.0) - expected).norm() < 1e-15);
    }

    #[test]
    fn cumulant_examples() {
        let g = LevyTriple::gaussian(0.8).unwrap();
        assert_eq!(g.cumulant(2).unwrap(), 0.8);
        assert_eq!(g.cumulant(3).unwrap(), 0.0);
        let one = LevyTriple::new(
            0.0,
            0.0,
            vec![Atom {
                position: 1.0,
                rate: 1.0,
            }],
        )
        .unwrap();
        assert_eq!(one.cumulant(1).unwrap(), 0.5);
        assert_eq!(one.cumulant(2).unwrap(), 1.0);
        for n in 3..8 {
            assert_eq!(one.cumulant(n).unwrap(), 1.0);
        }
        let neg = LevyTriple::new(
            0.0,
            0.0,
            vec![Atom {
                position: -2.0,
                rate: 3.0,
            }],
        )
        .unwrap();
        assert_eq!(neg.cumulant(3).unwrap(), -24.0);
        assert!(neg.cumulant(0).is_err());
    }

    #[test]
    fn validation() {
        assert!(LevyTriple::new(0.0, -1.0, vec![]).is_err());
        assert!(LevyTriple::new(
            0.0,
            0.0,
            vec![Atom {
                position: 0.0,
                rate: 1.0
            }]
        )
        .is_err());
        assert!(LevyTriple::new(
            0.0,
            0.0,
            vec![Atom {
                position: 1.0,
                rate: 0.0
            }]
        )
        .is_err());
    }

    /// Central finite-difference weights (Fornberg) for the m-th derivative at 0
    /// on the integer stencil -r..=r.
    fn fd_weights(m: usize, r: i32) -> Vec<f64> {
        let xs: Vec<f64> = (-r..=r).map(|k| k as f64).collect();
        let n = xs.len();
        let mut c = vec![vec![0.0; m + 1]; n];
        c[0][0] = 1.0;
        let mut c1 = 1.0;
        for i in 1..n {
            let mut c2 = 1.0;
            for j in 0..i {
                let c3 = xs[i] - xs[j];
                c2 *= c3;
                for k in (0..=m.min(i)).rev() {
                    let prev_i = if k > 0 { c[i - 1][k - 1] } else { 0.0 };
                    if j == i - 1 {
                        c[i][k] = c1 * (k as f64 * prev_i - xs[i - 1] * c[i - 1][k]) / c2;
                    }
                    let prev_j = if k > 0 { c[j][k - 1] } else { 0.0 };
                    c[j][k] = (xs[i] * c[j][k] - k as f64 * prev_j) / c3;
                }
            }
            c1 = c2;
        }
        c.iter().map(|row| row[m]).collect()
    }

    proptest! {
        #[test]
        fn taylor_coefficients_are_cumulants(t in 4.0f64..8.0, n in 1u32..=5) {
            let l = mixed();
            let h = 1e-3;
            let r = (n as i32 + 5) / 2 + 2;
            let w = fd_weights(n as usize, r);
            let deriv: Complex64 = (-r..=r).zip(&w).map(|(k, &wk)| wk * l.psi(k as f64 * h * t)).sum::<Complex64>() / h.powi(n as i32);
            let lhs = deriv * Complex64::new(0.0, -1.0).powu(n);
            let rhs = l.cumulant(n).unwrap() * t.powi(n as i32);
            prop_assert!((lhs - rhs).norm() <= 1e-4 * rhs.abs(), "n={} lhs={} rhs={}", n, lhs, rhs);
        }

        #[test]
        fn psi_symmetries(t in -20.0f64..20.0) {
            let l = mixed();
            prop_assert_eq!(l.psi(0.0), Complex64::new(0.0, 0.0));
            prop_assert!((l.psi(-t) - l.psi(t).conj()).norm() < 1e-12);
            prop_assert!(l.psi(t).re <= 0.0);
        }

        #[test]
        fn functional_has_modulus_at_most_one(cx in -1.0f64..1.0, w in 0.3f64..1.5, amp in -2.0f64..2.0) {
            let phi = TestFunction::gaussian(&[cx], w).unwrap().scaled(Complex64::new(amp, 0.0));
            let v = mixed().characteristic_functional(&phi, &FunctionalQuadrature::default()).unwrap();
            prop_assert!(v.norm() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn functional_of_zero_is_one() {
        let phi = TestFunction::gaussian(&[0.0, 0.0], 1.0)
            .unwrap()
            .scaled(Complex64::new(0.0, 0.0));
        let v = mixed()
            .characteristic_functional(&phi, &FunctionalQuadrature::default())
            .unwrap();
        assert!((v - 1.0).norm() < 1e-14);
    }

    #[test]
    fn gaussian_functional_closed_form() {
        // ∫ (A e^{-|x|²/2w²})² dx = A² (π w²)^{d/2}
        let (amp, w, s2) = (1.3, 0.7, 0.9);
        let phi = TestFunction::gaussian(&[0.2, -0.1], w)
            .unwrap()
            .scaled(Complex64::new(amp, 0.0));
        let v = LevyTriple::gaussian(s2)
            .unwrap()
            .characteristic_functional(&phi, &FunctionalQuadrature::default())
            .unwrap();
        let exact = (-0.5 * s2 * amp * amp * PI * w * w).exp();
        assert!(
            (v.re - exact).abs() < 1e-8 && v.im.abs() < 1e-12,
            "{v} vs {exact}"
        );
    }

    #[test]
    fn drift_functional_closed_form() {
        let (a, w) = (0.8, 0.6);
        let phi = TestFunction::gaussian(&[0.4], w).unwrap();
        let v = LevyTriple::new(a, 0.0, vec![])
            .unwrap()
            .characteristic_functional(&phi, &FunctionalQuadrature::default())
            .unwrap();
        let exact = Complex64::new(0.0, a * (2.0 * PI).sqrt() * w).exp();
        assert!((v - exact).norm() < 1e-9);
    }

    #[test]
    fn complex_test_function_rejected() {
        let phi = TestFunction::gaussian(&[0.0], 1.0)
            .unwrap()
            .with_frequency(&[1.0])
            .unwrap();
        assert!(mixed()
            .characteristic_functional(&phi, &FunctionalQuadrature::default())
            .is_err());
    }

    #[test]
    fn quaternion_coefficients() {
        let q = QuaternionLevyData::new(
            0.0,
            0.5,
            0.25,
            vec![
                Atom {
                    position: 0.5,
                    rate: 2.0,
                },
                Atom {
                    position: -1.5,
                    rate: 0.4,
                },
            ],
        )
        .unwrap();
        assert!((q.c0() - (0.5 + 2.0 * 0.25 + 0.4 * 2.25)).abs() < 1e-15);
        assert_eq!(q.c(), 0.25);
        let c30 = 2.0 * 0.125 + 0.4 * (-3.375);
        assert!((q.c_nl(3, 0).unwrap() - c30).abs() < 1e-14);
        assert_eq!(q.c_nl(4, 2).unwrap(), 0.0);
        assert!(q.c_nl(2, 0).is_err());
        assert_eq!(q.psi(Quaternion::ZERO), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn quaternion_small_x_order_fit() {
        // No net linear term: atoms outside the unit ball carry no compensator.
        let q = QuaternionLevyData::new(
            0.0,
            0.5,
            0.25,
            vec![Atom {
                position: 1.5,
                rate: 0.4,
            }],
        )
        .unwrap();
        let p = q.small_x_order();
        assert!(p < 1.05, "uncompensated jump drift is linear, got {p}");
        let q = QuaternionLevyData::new(
            -0.6,
            0.5,
            0.25,
            vec![Atom {
                position: 1.5,
                rate: 0.4,
            }],
        )
        .unwrap();
        let p = q.small_x_order();
        assert!(
            (p - 2.0).abs() < 0.05,
            "balanced drift leaves the quadratic part, got {p}"
        );
    }
}
