//! Gaussian-polynomial test functions with closed-form derivatives.
//!
//! A [`TestFunction`] on ℝ^D is a finite sum of terms
//! `P(u) · exp(i ν·u − Σ_j u_j² / (2 w_j²))` with `u = x − center`.
//! Derivatives stay inside the family, so every Schwartz seminorm is
//! computable from closed forms.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Polynomial in the shifted coordinates, keyed by exponent vector.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Polynomial {
    terms: BTreeMap<Vec<u32>, Complex64>,
}

impl Polynomial {
    pub fn constant(dim: usize, c: Complex64) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(vec![0; dim], c);
        Self { terms }
    }

    pub fn from_terms(terms: impl IntoIterator<Item = (Vec<u32>, Complex64)>) -> Self {
        let mut p = Self::default();
        for (k, c) in terms {
            p.add_term(k, c);
        }
        p
    }

    fn add_term(&mut self, powers: Vec<u32>, c: Complex64) {
        if c == Complex64::new(0.0, 0.0) {
            return;
        }
        let slot = self.terms.entry(powers).or_insert(Complex64::new(0.0, 0.0));
        *slot += c;
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[u32], Complex64)> {
        self.terms.iter().map(|(k, &c)| (k.as_slice(), c))
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|k| k.iter().sum()).max().unwrap_or(0)
    }

    pub fn eval(&self, u: &[f64]) -> Complex64 {
        self.terms
            .iter()
            .map(|(k, &c)| {
                c * k
                    .iter()
                    .zip(u)
                    .map(|(&p, &x)| x.powi(p as i32))
                    .product::<f64>()
            })
            .sum()
    }

    /// Upper bound of `|P(u)|` when `|u_j| ≤ umax[j]`.
    pub fn abs_bound(&self, umax: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(k, c)| {
                c.norm()
                    * k.iter()
                        .zip(umax)
                        .map(|(&p, &x)| x.powi(p as i32))
                        .product::<f64>()
            })
            .sum()
    }

    /// Sum of coefficient moduli per total degree.
    pub fn coefficient_mass_by_degree(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.degree() as usize + 1];
        for (k, c) in &self.terms {
            out[k.iter().sum::<u32>() as usize] += c.norm();
        }
        out
    }

    /// True for a single monomial (including constants).
    pub fn is_monomial(&self) -> bool {
        self.terms.len() <= 1
    }

    fn partial(&self, axis: usize) -> Self {
        let mut out = Self::default();
        for (k, &c) in &self.terms {
            if k[axis] > 0 {
                let mut kk = k.clone();
                kk[axis] -= 1;
                out.add_term(kk, c * k[axis] as f64);
            }
        }
        out
    }

    fn times_coordinate(&self, axis: usize, scale: Complex64) -> Self {
        let mut out = Self::default();
        for (k, &c) in &self.terms {
            let mut kk = k.clone();
            kk[axis] += 1;
            out.add_term(kk, c * scale);
        }
        out
    }

    fn scaled(&self, s: Complex64) -> Self {
        Self {
            terms: self
                .terms
                .iter()
                .map(|(k, &c)| (k.clone(), c * s))
                .collect(),
        }
    }

    fn plus(mut self, other: &Self) -> Self {
        for (k, &c) in &other.terms {
            self.add_term(k.clone(), c);
        }
        self
    }
}

/// One `P(u) e^{iν·u} e^{-Σ u²/2w²}` term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussTerm {
    pub center: Vec<f64>,
    pub widths: Vec<f64>,
    pub frequency: Vec<f64>,
    pub poly: Polynomial,
}

impl GaussTerm {
    pub fn eval(&self, x: &[f64]) -> Complex64 {
        let mut u = [0.0f64; 16];
        let u = &mut u[..x.len()];
        let mut quad = 0.0;
        let mut phase = 0.0;
        for j in 0..x.len() {
            u[j] = x[j] - self.center[j];
            quad += u[j] * u[j] / (self.widths[j] * self.widths[j]);
            phase += self.frequency[j] * u[j];
        }
        self.poly.eval(u) * Complex64::from_polar((-0.5 * quad).exp(), phase)
    }

    fn fourier(&self, k: &[f64]) -> Complex64 {
        let max_power = self
            .poly
            .terms()
            .flat_map(|(p, _)| p.iter().copied())
            .max()
            .unwrap_or(0) as usize;
        // moments[j][p] = ∫ u^p e^{i q u} e^{−u²/2w²} du with q = ν_j − k_j,
        // from I_{p+1} = w² (p I_{p−1} + i q I_p).
        let moments: Vec<Vec<Complex64>> = (0..k.len())
            .map(|j| {
                let w = self.widths[j];
                let q = self.frequency[j] - k[j];
                let mut m = Vec::with_capacity(max_power + 1);
                m.push(Complex64::new(
                    (2.0 * std::f64::consts::PI).sqrt() * w * (-0.5 * q * q * w * w).exp(),
                    0.0,
                ));
                for p in 0..max_power {
                    let prev = if p > 0 {
                        m[p - 1] * p as f64
                    } else {
                        Complex64::new(0.0, 0.0)
                    };
                    let next = (prev + Complex64::new(0.0, q) * m[p]) * (w * w);
                    m.push(next);
                }
                m
            })
            .collect();
        let shift: f64 = k.iter().zip(&self.center).map(|(a, b)| a * b).sum();
        let body: Complex64 = self
            .poly
            .terms()
            .map(|(p, c)| {
                c * p
                    .iter()
                    .enumerate()
                    .map(|(j, &e)| moments[j][e as usize])
                    .product::<Complex64>()
            })
            .sum();
        body * Complex64::from_polar(1.0, -shift)
    }

    fn partial(&self, axis: usize) -> Self {
        let w2 = self.widths[axis] * self.widths[axis];
        let poly = self
            .poly
            .partial(axis)
            .plus(&self.poly.scaled(Complex64::new(0.0, self.frequency[axis])))
            .plus(
                &self
                    .poly
                    .times_coordinate(axis, Complex64::new(-1.0 / w2, 0.0)),
            );
        Self {
            poly,
            ..self.clone()
        }
    }
}

/// Maximum coordinate dimension supported by the stack buffers in evaluation.
pub const MAX_TEST_DIM: usize = 16;

/// Finite sum of Gaussian-polynomial terms on ℝ^D.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    dim: usize,
    terms: Vec<GaussTerm>,
}

impl TestFunction {
    /// `exp(-|x - center|² / (2 width²))`.
    pub fn gaussian(center: &[f64], width: f64) -> Result<Self> {
        Self::anisotropic(center, &vec![width; center.len()])
    }

    pub fn anisotropic(center: &[f64], widths: &[f64]) -> Result<Self> {
        let dim = center.len();
        if dim == 0 || dim > MAX_TEST_DIM {
            return Err(Error::Domain(format!(
                "test function dimension {dim} outside 1..={MAX_TEST_DIM}"
            )));
        }
        if widths.len() != dim {
            return Err(Error::Shape("widths and center differ in length".into()));
        }
        if widths.iter().any(|w| !(w.is_finite() && *w > 0.0))
            || center.iter().any(|c| !c.is_finite())
        {
            return Err(Error::Domain(
                "widths must be positive and centers finite".into(),
            ));
        }
        Ok(Self {
            dim,
            terms: vec![GaussTerm {
                center: center.to_vec(),
                widths: widths.to_vec(),
                frequency: vec![0.0; dim],
                poly: Polynomial::constant(dim, Complex64::new(1.0, 0.0)),
            }],
        })
    }

    /// Replaces the polynomial of every term.
    pub fn with_polynomial(mut self, poly: Polynomial) -> Result<Self> {
        if poly.terms().any(|(k, _)| k.len() != self.dim) {
            return Err(Error::Shape(
                "polynomial exponent vectors must match the dimension".into(),
            ));
        }
        for t in &mut self.terms {
            t.poly = poly.clone();
        }
        Ok(self)
    }

    /// Multiplies every term by `e^{iν·u}`.
    pub fn with_frequency(mut self, frequency: &[f64]) -> Result<Self> {
        if frequency.len() != self.dim {
            return Err(Error::Shape("frequency must match the dimension".into()));
        }
        for t in &mut self.terms {
            t.frequency = frequency.to_vec();
        }
        Ok(self)
    }

    pub fn scaled(mut self, s: Complex64) -> Self {
        for t in &mut self.terms {
            t.poly = t.poly.scaled(s);
        }
        self
    }

    pub fn plus(mut self, other: &Self) -> Result<Self> {
        if other.dim != self.dim {
            return Err(Error::Shape(
                "cannot add test functions of different dimension".into(),
            ));
        }
        self.terms.extend(other.terms.iter().cloned());
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[GaussTerm] {
        &self.terms
    }

    pub fn eval(&self, x: &[f64]) -> Complex64 {
        debug_assert_eq!(x.len(), self.dim);
        self.terms.iter().map(|t| t.eval(x)).sum()
    }

    /// True when the function is real-valued everywhere.
    pub fn is_real(&self) -> bool {
        self.terms.iter().all(|t| {
            t.frequency.iter().all(|&f| f == 0.0) && t.poly.terms().all(|(_, c)| c.im == 0.0)
        })
    }

    /// `D^α φ`, exact.
    pub fn derivative(&self, alpha: &[u32]) -> Result<Self> {
        if alpha.len() != self.dim {
            return Err(Error::Shape(
                "multi-index length must match the dimension".into(),
            ));
        }
        let mut terms = self.terms.clone();
        for (axis, &order) in alpha.iter().enumerate() {
            for _ in 0..order {
                terms = terms.iter().map(|t| t.partial(axis)).collect();
            }
        }
        Ok(Self {
            dim: self.dim,
            terms,
        })
    }

    /// Complex conjugate, also a member of the family.
    pub fn conj(&self) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|t| GaussTerm {
                frequency: t.frequency.iter().map(|f| -f).collect(),
                poly: Polynomial::from_terms(t.poly.terms().map(|(k, c)| (k.to_vec(), c.conj()))),
                ..t.clone()
            })
            .collect();
        Self {
            dim: self.dim,
            terms,
        }
    }

    /// `x ↦ φ(x − by)`.
    pub fn translated(&self, by: &[f64]) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|t| {
                let mut t = t.clone();
                for (c, b) in t.center.iter_mut().zip(by) {
                    *c += b;
                }
                t
            })
            .collect();
        Self {
            dim: self.dim,
            terms,
        }
    }

    /// `x ↦ φ(-x)`.
    pub fn reflected(&self) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|t| GaussTerm {
                center: t.center.iter().map(|c| -c).collect(),
                widths: t.widths.clone(),
                frequency: t.frequency.iter().map(|f| -f).collect(),
                poly: Polynomial::from_terms(t.poly.terms().map(|(k, c)| {
                    let odd = k.iter().sum::<u32>() % 2 == 1;
                    (k.to_vec(), if odd { -c } else { c })
                })),
            })
            .collect();
        Self {
            dim: self.dim,
            terms,
        }
    }

    /// `x ↦ e^{iν·x} φ(x)`.
    pub fn times_plane_wave(&self, nu: &[f64]) -> Result<Self> {
        if nu.len() != self.dim {
            return Err(Error::Shape(
                "plane-wave vector must match the dimension".into(),
            ));
        }
        let terms = self
            .terms
            .iter()
            .map(|t| {
                let phase: f64 = nu.iter().zip(&t.center).map(|(a, b)| a * b).sum();
                GaussTerm {
                    frequency: t.frequency.iter().zip(nu).map(|(f, v)| f + v).collect(),
                    poly: t.poly.scaled(Complex64::from_polar(1.0, phase)),
                    ..t.clone()
                }
            })
            .collect();
        Ok(Self {
            dim: self.dim,
            terms,
        })
    }

    /// `x ↦ φ(y)` with `y_i = signs[i] · x_{perm[i]}`; `perm` must be a
    /// permutation of the axes.
    pub fn signed_permutation(&self, perm: &[usize], signs: &[f64]) -> Result<Self> {
        let mut seen = vec![false; self.dim];
        if perm.len() != self.dim || signs.len() != self.dim {
            return Err(Error::Shape(
                "permutation and signs must match the dimension".into(),
            ));
        }
        for &p in perm {
            if p >= self.dim || seen[p] {
                return Err(Error::Domain("not a permutation of the axes".into()));
            }
            seen[p] = true;
        }
        if signs.iter().any(|s| s.abs() != 1.0) {
            return Err(Error::Domain("signs must be ±1".into()));
        }
        let terms = self
            .terms
            .iter()
            .map(|t| {
                let mut center = vec![0.0; self.dim];
                let mut widths = vec![0.0; self.dim];
                let mut frequency = vec![0.0; self.dim];
                for i in 0..self.dim {
                    let a = perm[i];
                    center[a] = signs[i] * t.center[i];
                    widths[a] = t.widths[i];
                    frequency[a] = signs[i] * t.frequency[i];
                }
                let poly = Polynomial::from_terms(t.poly.terms().map(|(k, c)| {
                    let mut kk = vec![0u32; self.dim];
                    let mut sign = 1.0;
                    for i in 0..self.dim {
                        kk[perm[i]] = k[i];
                        if k[i] % 2 == 1 {
                            sign *= signs[i];
                        }
                    }
                    (kk, c * sign)
                }));
                GaussTerm {
                    center,
                    widths,
                    frequency,
                    poly,
                }
            })
            .collect();
        Ok(Self {
            dim: self.dim,
            terms,
        })
    }

    /// `x ↦ x_axis · φ(x)`.
    pub fn times_coordinate(&self, axis: usize) -> Result<Self> {
        if axis >= self.dim {
            return Err(Error::Shape(format!("axis {axis} out of range")));
        }
        let terms = self
            .terms
            .iter()
            .map(|t| GaussTerm {
                poly: t
                    .poly
                    .times_coordinate(axis, Complex64::new(1.0, 0.0))
                    .plus(&t.poly.scaled(Complex64::new(t.center[axis], 0.0))),
                ..t.clone()
            })
            .collect();
        Ok(Self {
            dim: self.dim,
            terms,
        })
    }

    /// Splits a single-term function with a monomial polynomial into factors
    /// on consecutive blocks of `block` coordinates, so that the tensor
    /// product of the factors is `self`.
    pub fn split_blocks(&self, block: usize) -> Option<Vec<TestFunction>> {
        if block == 0
            || !self.dim.is_multiple_of(block)
            || self.terms.len() != 1
            || !self.terms[0].poly.is_monomial()
        {
            return None;
        }
        let t = &self.terms[0];
        let (powers, coeff) = t
            .poly
            .terms()
            .next()
            .map(|(k, c)| (k.to_vec(), c))
            .unwrap_or((vec![0; self.dim], Complex64::new(0.0, 0.0)));
        Some(
            (0..self.dim / block)
                .map(|l| {
                    let r = l * block..(l + 1) * block;
                    let c = if l == 0 {
                        coeff
                    } else {
                        Complex64::new(1.0, 0.0)
                    };
                    let mut poly = BTreeMap::new();
                    poly.insert(powers[r.clone()].to_vec(), c);
                    TestFunction {
                        dim: block,
                        terms: vec![GaussTerm {
                            center: t.center[r.clone()].to_vec(),
                            widths: t.widths[r.clone()].to_vec(),
                            frequency: t.frequency[r].to_vec(),
                            poly: Polynomial { terms: poly },
                        }],
                    }
                })
                .collect(),
        )
    }

    /// `φ̂(k) = ∫ φ(x) e^{−ik·x} dx`, in closed form.
    pub fn fourier(&self, k: &[f64]) -> Complex64 {
        debug_assert_eq!(k.len(), self.dim);
        self.terms.iter().map(|t| t.fourier(k)).sum()
    }

    /// A box outside of which every term is below `exp(-spread²/2)` of its peak
    /// Gaussian factor.
    pub fn bounding_box(&self, spread: f64) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for t in &self.terms {
            let extra = spread + (t.poly.degree() as f64).sqrt();
            for j in 0..self.dim {
                lo[j] = lo[j].min(t.center[j] - extra * t.widths[j]);
                hi[j] = hi[j].max(t.center[j] + extra * t.widths[j]);
            }
        }
        (lo, hi)
    }
}

/// Product of test functions in separate variable blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorProduct {
    factors: Vec<TestFunction>,
}

impl TensorProduct {
    pub fn new(factors: Vec<TestFunction>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::Domain(
                "tensor product needs at least one factor".into(),
            ));
        }
        let total: usize = factors.iter().map(|f| f.dim()).sum();
        if total > MAX_TEST_DIM {
            return Err(Error::SizeLimit {
                what: "tensor product dimension",
                value: total,
                max: MAX_TEST_DIM,
            });
        }
        Ok(Self { factors })
    }

    pub fn factors(&self) -> &[TestFunction] {
        &self.factors
    }

    pub fn dim(&self) -> usize {
        self.factors.iter().map(|f| f.dim()).sum()
    }

    pub fn eval(&self, x: &[f64]) -> Complex64 {
        let mut offset = 0;
        let mut acc = Complex64::new(1.0, 0.0);
        for f in &self.factors {
            acc *= f.eval(&x[offset..offset + f.dim()]);
            offset += f.dim();
        }
        acc
    }

    /// Expands into a single function on the joint space.
    pub fn to_joint(&self) -> TestFunction {
        let mut terms: Vec<GaussTerm> = vec![GaussTerm {
            center: vec![],
            widths: vec![],
            frequency: vec![],
            poly: Polynomial::constant(0, Complex64::new(1.0, 0.0)),
        }];
        for f in &self.factors {
            let mut next = Vec::with_capacity(terms.len() * f.terms.len());
            for a in &terms {
                for b in &f.terms {
                    let poly = Polynomial::from_terms(a.poly.terms().flat_map(|(ka, ca)| {
                        b.poly.terms().map(move |(kb, cb)| {
                            let mut k = ka.to_vec();
                            k.extend_from_slice(kb);
                            (k, ca * cb)
                        })
                    }));
                    next.push(GaussTerm {
                        center: [a.center.as_slice(), &b.center].concat(),
                        widths: [a.widths.as_slice(), &b.widths].concat(),
                        frequency: [a.frequency.as_slice(), &b.frequency].concat(),
                        poly,
                    });
                }
            }
            terms = next;
        }
        TestFunction {
            dim: self.dim(),
            terms,
        }
    }
}
