//! One-dimensional quadrature rules and their nested use on boxes.
//!
//! * adaptive Gauss–Kronrod (7/15) with user breakpoints,
//! * tanh-sinh with level halving, for endpoint singularities,
//! * fixed Gauss–Legendre rules.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Values a quadrature can accumulate.
pub trait QuadValue:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self>
{
    fn zero() -> Self;
    fn magnitude(&self) -> f64;
}

impl QuadValue for f64 {
    fn zero() -> Self {
        0.0
    }
    fn magnitude(&self) -> f64 {
        self.abs()
    }
}

impl QuadValue for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn magnitude(&self) -> f64 {
        self.norm()
    }
}

/// An integral value with an error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate<T> {
    pub value: T,
    pub error: f64,
    pub converged: bool,
}

impl<T: QuadValue> Estimate<T> {
    /// Turns a non-converged estimate into a tolerance error.
    pub fn require(self, tol: f64) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::Tolerance {
                tol,
                residual: self.error,
            })
        }
    }
}

/// Stopping rule shared by the adaptive routines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    /// Interval budget (Gauss–Kronrod) or level budget (tanh-sinh).
    pub budget: usize,
}

impl Tolerance {
    pub fn new(abs: f64, rel: f64) -> Self {
        Self {
            abs,
            rel,
            budget: 2000,
        }
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = budget;
        self
    }

    fn target(&self, value: f64) -> f64 {
        self.abs.max(self.rel * value)
    }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
// Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<T: QuadValue>(f: &mut impl FnMut(f64) -> T, a: f64, b: f64) -> (T, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for i in 0..7 {
        let dx = h * XGK[i];
        let s = f(c - dx) + f(c + dx);
        kron = kron + s * WGK[i];
        if i % 2 == 1 {
            gauss = gauss + s * WG[i / 2];
        }
    }
    let kron = kron * h;
    let gauss = gauss * h;
    (kron, (kron - gauss).magnitude())
}

struct Piece<T> {
    a: f64,
    b: f64,
    value: T,
    error: f64,
}

impl<T> PartialEq for Piece<T> {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl<T> Eq for Piece<T> {}
impl<T> PartialOrd for Piece<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T> Ord for Piece<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Globally adaptive Gauss–Kronrod on `[a, b]`, split first at `breaks`.
pub fn gauss_kronrod<T: QuadValue>(
    mut f: impl FnMut(f64) -> T,
    a: f64,
    b: f64,
    breaks: &[f64],
    tol: Tolerance,
) -> Estimate<T> {
    if a == b {
        return Estimate {
            value: T::zero(),
            error: 0.0,
            converged: true,
        };
    }
    let (lo, hi, flip) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let mut cuts = vec![lo];
    let mut inner: Vec<f64> = breaks
        .iter()
        .copied()
        .filter(|&x| x > lo && x < hi)
        .collect();
    inner.sort_by(f64::total_cmp);
    inner.dedup();
    cuts.extend(inner);
    cuts.push(hi);

    let mut heap = BinaryHeap::new();
    let mut total = T::zero();
    let mut err = 0.0;
    for w in cuts.windows(2) {
        let (value, error) = gk15(&mut f, w[0], w[1]);
        total = total + value;
        err += error;
        heap.push(Piece {
            a: w[0],
            b: w[1],
            value,
            error,
        });
    }
    while err > tol.target(total.magnitude()) && heap.len() < tol.budget {
        let worst = heap.pop().expect("heap is nonempty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Interval cannot be split further in floating point.
            heap.push(worst);
            break;
        }
        let (v1, e1) = gk15(&mut f, worst.a, mid);
        let (v2, e2) = gk15(&mut f, mid, worst.b);
        total = total - worst.value + v1 + v2;
        err += e1 + e2 - worst.error;
        heap.push(Piece {
            a: worst.a,
            b: mid,
            value: v1,
            error: e1,
        });
        heap.push(Piece {
            a: mid,
            b: worst.b,
            value: v2,
            error: e2,
        });
    }
    // Re-sum to shed accumulated cancellation in the running totals.
    let mut value = T::zero();
    let mut error = 0.0;
    for p in heap.iter() {
        value = value + p.value;
        error += p.error;
    }
    Estimate {
        value: value * flip,
        error,
        converged: error <= tol.target(value.magnitude()),
    }
}

/// Gauss–Kronrod on `[a, ∞)` through `x = a + t/(1-t)`.
pub fn gauss_kronrod_half_line<T: QuadValue>(
    mut f: impl FnMut(f64) -> T,
    a: f64,
    tol: Tolerance,
) -> Estimate<T> {
    gauss_kronrod(
        |t| {
            let s = 1.0 - t;
            if s <= 0.0 {
                return T::zero();
            }
            f(a + t / s) * (1.0 / (s * s))
        },
        0.0,
        1.0,
        &[],
        tol,
    )
}

/// Tanh-sinh quadrature on `[a, b]`; the integrand is never evaluated at the
/// endpoints. The error estimate is the change between the last two levels.
pub fn tanh_sinh<T: QuadValue>(
    mut f: impl FnMut(f64) -> T,
    a: f64,
    b: f64,
    tol: Tolerance,
) -> Estimate<T> {
    tanh_sinh_with_distances(
        |x, _, _| if x == a || x == b { T::zero() } else { f(x) },
        a,
        b,
        tol,
    )
}

/// Like [`tanh_sinh`], but the integrand also receives the exact distances
/// `x − a` and `b − x`, which keeps strong endpoint singularities accurate.
pub fn tanh_sinh_with_distances<T: QuadValue>(
    mut f: impl FnMut(f64, f64, f64) -> T,
    a: f64,
    b: f64,
    tol: Tolerance,
) -> Estimate<T> {
    if a == b {
        return Estimate {
            value: T::zero(),
            error: 0.0,
            converged: true,
        };
    }
    let len = b - a;
    let half_pi = std::f64::consts::FRAC_PI_2;
    // Beyond this |t| the nodes sit within ~1e-300 of the endpoints.
    let t_max = 6.5;
    let mut node = |t: f64| -> Option<T> {
        let u = half_pi * t.sinh();
        let (from_a, from_b) = if u >= 0.0 {
            let e = (-2.0 * u).exp();
            (len / (1.0 + e), len * e / (1.0 + e))
        } else {
            let e = (2.0 * u).exp();
            (len * e / (1.0 + e), len / (1.0 + e))
        };
        let x = if from_a <= from_b {
            a + from_a
        } else {
            b - from_b
        };
        if from_a == 0.0 || from_b == 0.0 {
            return None;
        }
        let cu = u.cosh();
        let w = 0.5 * len * half_pi * t.cosh() / (cu * cu);
        if w == 0.0 || !w.is_finite() {
            return None;
        }
        Some(f(x, from_a, from_b) * w)
    };

    let mut h = 0.5;
    let mut sum = node(0.0).unwrap_or(T::zero());
    let mut k = 1;
    while k as f64 * h <= t_max {
        let t = k as f64 * h;
        for s in [t, -t] {
            if let Some(v) = node(s) {
                sum = sum + v;
            }
        }
        k += 1;
    }
    let mut value = sum * h;
    let mut error = f64::INFINITY;
    for _ in 0..tol.budget.min(12) {
        h *= 0.5;
        let mut k = 1;
        while k as f64 * h <= t_max {
            let t = k as f64 * h;
            for s in [t, -t] {
                if let Some(v) = node(s) {
                    sum = sum + v;
                }
            }
            k += 2;
        }
        let next = sum * h;
        error = (next - value).magnitude();
        value = next;
        if error <= tol.target(value.magnitude()) {
            return Estimate {
                value,
                error,
                converged: true,
            };
        }
    }
    Estimate {
        value,
        error,
        converged: false,
    }
}

/// Tanh-sinh over consecutive pieces between sorted breakpoints.
pub fn tanh_sinh_pieces<T: QuadValue>(
    mut f: impl FnMut(f64) -> T,
    points: &[f64],
    tol: Tolerance,
) -> Estimate<T> {
    let mut value = T::zero();
    let mut error = 0.0;
    let mut converged = true;
    for w in points.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let e = tanh_sinh(&mut f, w[0], w[1], tol);
        value = value + e.value;
        error += e.error;
        converged &= e.converged;
    }
    Estimate {
        value,
        error,
        converged,
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let (p, pm1) = if n == 1 { (x, 1.0) } else { (p1, p0) };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Nested adaptive Gauss–Kronrod over a box. Inner integrals use the same
/// relative tolerance; the outer error estimate folds in the inner ones.
pub fn cubature<T: QuadValue>(
    f: &impl Fn(&[f64]) -> T,
    lo: &[f64],
    hi: &[f64],
    tol: Tolerance,
) -> Estimate<T> {
    assert_eq!(lo.len(), hi.len(), "box corners differ in dimension");
    let mut point = vec![0.0; lo.len()];
    nested(f, lo, hi, tol, 0, &mut point)
}

fn nested<T: QuadValue>(
    f: &impl Fn(&[f64]) -> T,
    lo: &[f64],
    hi: &[f64],
    tol: Tolerance,
    axis: usize,
    point: &mut [f64],
) -> Estimate<T> {
    let d = lo.len();
    if d == 0 {
        return Estimate {
            value: f(&[]),
            error: 0.0,
            converged: true,
        };
    }
    let mut inner_err = 0.0;
    let mut inner_ok = true;
    let outer = gauss_kronrod(
        |x| {
            point[axis] = x;
            if axis + 1 == d {
                f(point)
            } else {
                let mut p = point.to_vec();
                let e = nested(f, lo, hi, tol, axis + 1, &mut p);
                inner_err = f64::max(inner_err, e.error);
                inner_ok &= e.converged;
                e.value
            }
        },
        lo[axis],
        hi[axis],
        &[],
        tol,
    );
    let width = hi[axis] - lo[axis];
    Estimate {
        value: outer.value,
        error: outer.error + inner_err * width.abs(),
        converged: outer.converged && inner_ok,
    }
}
