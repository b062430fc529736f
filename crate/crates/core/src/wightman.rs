//! Momentum-space truncated Wightman distributions.
//!
//! Momenta are stored per variable as `(k⁰, k⃗)` with `k² = (k⁰)² − |k⃗|²`.
//! With the transform used here the scalar truncated distribution lives on
//! `Σ k_l = 0`, where every partial sum `k_1 + … + k_l` lies in the closed
//! backward cone.
//!
//! Scalar quadrature: in the term carrying `μ(k_j)`, the momentum `k_j` is
//! eliminated. Every other momentum sits beyond its mass shell and is written
//! `k = (±√(|k⃗|² + m₀² + t), k⃗)` with `t = s^{1/(1−α)}`, which turns
//! `μ^±(k) dk⁰` into a smooth density in `s`. The remaining singular factor
//! `|k_j² − m₀²|^{−α}` is integrated along the innermost `s` with tanh-sinh
//! pieces ending on its zeros, which are known in closed form.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::green::GreenSpec;
use crate::lattice::Lattice;
use crate::levy::LevyTriple;
use crate::quad::{cubature, gauss_legendre, Tolerance};
use crate::schwinger::g_n_scalar;
use crate::testfn::{TensorProduct, TestFunction, MAX_TEST_DIM};

/// Cutoff `λ·|k⁰|` beyond which Laplace weights `e^{−λ|k⁰|}` are dropped.
const LAPLACE_CUTOFF: f64 = 36.0;
/// Cell boundaries of Laplace-weighted energies, in units of `1/λ`.
const LAPLACE_SCALES: [f64; 8] = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, LAPLACE_CUTOFF];
/// Box spread used to certify that a test function avoids the backward cones.
pub const SUPPORT_SPREAD: f64 = 8.0;
const CHUNK: usize = 256;

/// A momentum `(k⁰, k⃗)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinkowskiPoint {
    pub energy: f64,
    pub spatial: Vec<f64>,
}

impl MinkowskiPoint {
    pub fn new(energy: f64, spatial: Vec<f64>) -> Self {
        Self { energy, spatial }
    }

    /// Reads `(k⁰, k⃗)` from a slice.
    pub fn from_slice(k: &[f64]) -> Self {
        Self::new(k[0], k[1..].to_vec())
    }

    pub fn dim(&self) -> usize {
        self.spatial.len() + 1
    }

    /// `(k⁰)² − |k⃗|²`.
    pub fn square(&self) -> f64 {
        self.energy * self.energy - self.spatial.iter().map(|x| x * x).sum::<f64>()
    }
}

/// Which of `μ⁺`, `μ⁻`, `μ` to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Plus,
    Minus,
    Zero,
}

fn check_exponent(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 0.5 {
        Ok(())
    } else {
        Err(Error::Domain(format!("α = {alpha} outside (0, 1/2]")))
    }
}

fn momentum_norm(d: usize) -> f64 {
    (2.0 * PI).powf(-(d as f64) / 2.0)
}

fn cos_pi(alpha: f64) -> f64 {
    if alpha == 0.5 {
        0.0
    } else {
        (PI * alpha).cos()
    }
}

/// `(cos πα · 1{x>0} + 1{x<0}) |x|^{−α}` for `x = k² − m₀²`.
fn off_shell_factor(x: f64, alpha: f64, cos_factor: f64) -> f64 {
    if x > 0.0 {
        if cos_factor == 0.0 {
            0.0
        } else {
            cos_factor * x.powf(-alpha)
        }
    } else {
        (-x).powf(-alpha)
    }
}

/// The spectral densities `μ^±_α` and `μ_α` at a point off the mass shell.
pub fn mu_eval(k: &MinkowskiPoint, branch: Branch, alpha: f64, m0: f64) -> Result<f64> {
    check_exponent(alpha)?;
    if !(m0 >= 0.0 && m0.is_finite()) {
        return Err(Error::Domain(format!(
            "mass {m0} must be finite and nonnegative"
        )));
    }
    let x = k.square() - m0 * m0;
    if x == 0.0 {
        return Err(Error::Singular(format!("k² = m₀² = {}", m0 * m0)));
    }
    let norm = momentum_norm(k.dim());
    let shell = |forward: bool| {
        if x > 0.0 && (k.energy > 0.0) == forward && k.energy != 0.0 {
            norm * (PI * alpha).sin() * x.powf(-alpha)
        } else {
            0.0
        }
    };
    Ok(match branch {
        Branch::Plus => shell(true),
        Branch::Minus => shell(false),
        Branch::Zero => norm * off_shell_factor(x, alpha, cos_pi(alpha)),
    })
}

/// The scalar model's data as seen in momentum space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarWightman {
    pub levy: LevyTriple,
    pub d: usize,
    pub alpha: f64,
    pub m0: f64,
}

impl ScalarWightman {
    pub fn new(levy: LevyTriple, d: usize, alpha: f64, m0: f64) -> Result<Self> {
        check_exponent(alpha)?;
        if !(2..=4).contains(&d) {
            return Err(Error::Domain(format!(
                "space-time dimension {d} outside 2..=4"
            )));
        }
        if !(m0 > 0.0 && m0.is_finite()) {
            return Err(Error::Domain(format!("mass {m0} must be positive")));
        }
        Ok(Self { levy, d, alpha, m0 })
    }

    fn variables(&self, phi: &TestFunction) -> Result<usize> {
        if !phi.dim().is_multiple_of(self.d) {
            return Err(Error::Shape(format!(
                "test function of dimension {} on ({})^n",
                phi.dim(),
                self.d
            )));
        }
        Ok(phi.dim() / self.d)
    }

    /// `c_n 2^{n−1} (2π)^d`.
    fn prefactor(&self, n: usize) -> Result<f64> {
        Ok(
            self.levy.cumulant(n as u32)?
                * 2f64.powi(n as i32 - 1)
                * (2.0 * PI).powi(self.d as i32),
        )
    }

    /// For `α = ½` the two-point function is the free field's.
    fn is_free_pair(&self, n: usize) -> bool {
        n == 2 && self.alpha == 0.5
    }
}

/// Refinement controls shared by the momentum-space quadratures.
///
/// Level `L` splits every base cell into `2^L` cells of `points_per_cell`
/// Gauss–Legendre nodes; the result is accepted when two consecutive levels
/// differ by at most `max(abs_tol, rel_tol·|value|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperplaneQuadrature {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub points_per_cell: usize,
    pub base_cells: usize,
    pub max_level: usize,
    /// Test functions are integrated over `bounding_box(spread)`.
    pub spread: f64,
}

impl Default for HyperplaneQuadrature {
    fn default() -> Self {
        Self {
            rel_tol: 1e-3,
            abs_tol: 1e-12,
            points_per_cell: 6,
            base_cells: 2,
            max_level: 3,
            spread: 6.0,
        }
    }
}

impl HyperplaneQuadrature {
    pub fn validate(&self) -> Result<()> {
        let ok = self.rel_tol > 0.0
            && self.abs_tol > 0.0
            && self.points_per_cell >= 2
            && self.base_cells >= 1
            && (1..=8).contains(&self.max_level)
            && self.spread > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid quadrature settings {self:?}"
            )))
        }
    }

    fn target(&self, magnitude: f64) -> f64 {
        self.abs_tol.max(self.rel_tol * magnitude)
    }

    fn tolerance(&self) -> Tolerance {
        Tolerance::new(self.abs_tol, self.rel_tol).with_budget(20_000)
    }
}

/// A refined quadrature value with its Cauchy residual and per-level history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub value: Complex64,
    pub tolerance: f64,
    pub history: Vec<Complex64>,
}

impl Evaluation {
    fn exact(value: Complex64) -> Self {
        Self {
            value,
            tolerance: 0.0,
            history: vec![value],
        }
    }

    fn scaled(mut self, s: f64) -> Self {
        self.value *= s;
        self.tolerance *= s.abs();
        for h in &mut self.history {
            *h *= s;
        }
        self
    }
}

fn refine(
    quad: &HyperplaneQuadrature,
    mut at_level: impl FnMut(usize) -> Complex64,
) -> Result<Evaluation> {
    quad.validate()?;
    let mut history = vec![at_level(0)];
    let mut residual = f64::INFINITY;
    for level in 1..=quad.max_level {
        let v = at_level(level);
        residual = (v - history[level - 1]).norm();
        history.push(v);
        if residual <= quad.target(v.norm()) {
            return Ok(Evaluation {
                value: v,
                tolerance: residual,
                history,
            });
        }
    }
    let last = history.last().copied().unwrap_or_default();
    Err(Error::Tolerance {
        tol: quad.target(last.norm()),
        residual,
    })
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
fn unit_gauss(q: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(q);
    (
        x.iter().map(|x| 0.5 * (x + 1.0)).collect(),
        w.iter().map(|w| 0.5 * w).collect(),
    )
}

/// Composite rule over `breaks`, each cell split into `sub` equal parts.
fn composite(breaks: &[f64], sub: usize, gl: &(Vec<f64>, Vec<f64>)) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for w in breaks.windows(2) {
        let h = (w[1] - w[0]) / sub as f64;
        for s in 0..sub {
            let a = w[0] + h * s as f64;
            for (x, wt) in gl.0.iter().zip(&gl.1) {
                nodes.push(a + h * x);
                weights.push(h * wt);
            }
        }
    }
    (nodes, weights)
}

fn uniform_breaks(lo: f64, hi: f64, cells: usize) -> Vec<f64> {
    (0..=cells)
        .map(|i| lo + (hi - lo) * i as f64 / cells as f64)
        .collect()
}

/// Tanh-sinh nodes on `[0, 1]` as `(x, x, 1 − x, weight)`, step `h`.
fn unit_tanh_sinh(h: f64) -> Vec<(f64, f64, f64, f64)> {
    let half_pi = 0.5 * PI;
    let steps = (3.5 / h).round() as i64;
    (-steps..=steps)
        .filter_map(|i| {
            let t = i as f64 * h;
            let u = half_pi * t.sinh();
            let (from_a, from_b) = if u >= 0.0 {
                let e = (-2.0 * u).exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            } else {
                let e = (2.0 * u).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            };
            let cu = u.cosh();
            let w = h * 0.5 * half_pi * t.cosh() / (cu * cu);
            (from_a > 0.0 && from_b > 0.0 && w > 0.0).then_some((from_a, from_a, from_b, w))
        })
        .collect()
}

/// Smearing data for the hyperplane integral.
trait MomentumWeight: Sync {
    /// Value at the flattened momenta `k` in the term that eliminates `j`.
    fn value(&self, j: usize, k: &[f64]) -> Complex64;
    fn energy_cells(&self, l: usize, j: usize) -> usize;
    /// Fills `out` with increasing energy magnitudes `≥ shell` covering the
    /// relevant range of variable `l`; false when that range is empty.
    fn energy_breaks(&self, l: usize, j: usize, sign: f64, shell: f64, out: &mut [f64]) -> bool;
    /// Cell boundaries of spatial component `axis ≥ 1` of variable `l`.
    fn spatial_breaks(&self, l: usize, j: usize, axis: usize) -> Vec<f64>;
}

struct SmearingWeight<'a> {
    phi: &'a TestFunction,
    d: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    cells: Vec<usize>,
}

impl<'a> SmearingWeight<'a> {
    fn new(phi: &'a TestFunction, d: usize, quad: &HyperplaneQuadrature) -> Self {
        let (lo, hi) = phi.bounding_box(quad.spread);
        let n = phi.dim() / d;
        // A phase e^{iν̄·Σk} is constant on the hyperplane, so only the
        // deviation of each block's frequency from the block mean oscillates.
        let mut cells = vec![quad.base_cells; phi.dim()];
        for t in phi.terms() {
            for a in 0..d {
                let mean = (0..n).map(|l| t.frequency[l * d + a]).sum::<f64>() / n as f64;
                for l in 0..n {
                    let i = l * d + a;
                    // Rounding in the mean must not add a cell.
                    let extra = ((t.frequency[i] - mean).abs() * (hi[i] - lo[i]) / PI - 1e-9)
                        .ceil()
                        .max(0.0) as usize;
                    cells[i] = cells[i].max(quad.base_cells + extra);
                }
            }
        }
        Self {
            phi,
            d,
            lo,
            hi,
            cells,
        }
    }
}

impl MomentumWeight for SmearingWeight<'_> {
    fn value(&self, _j: usize, k: &[f64]) -> Complex64 {
        self.phi.eval(k)
    }

    fn energy_cells(&self, l: usize, _j: usize) -> usize {
        self.cells[l * self.d]
    }

    fn energy_breaks(&self, l: usize, _j: usize, sign: f64, shell: f64, out: &mut [f64]) -> bool {
        let (lo, hi) = (self.lo[l * self.d], self.hi[l * self.d]);
        let (a, b) = if sign > 0.0 {
            (lo.max(shell), hi)
        } else {
            ((-hi).max(shell), -lo)
        };
        if b <= a {
            return false;
        }
        let cells = out.len() - 1;
        for (i, o) in out.iter_mut().enumerate() {
            *o = a + (b - a) * i as f64 / cells as f64;
        }
        true
    }

    fn spatial_breaks(&self, l: usize, _j: usize, axis: usize) -> Vec<f64> {
        let i = l * self.d + axis;
        uniform_breaks(self.lo[i], self.hi[i], self.cells[i])
    }
}

/// `exp(−Σ k⁰_l y⁰_l + i Σ k⃗_l·y⃗_l)`, evaluated relative to the eliminated
/// variable so that it only involves time differences.
struct LaplaceWeight<'a> {
    ys: &'a [Vec<f64>],
    d: usize,
}

impl LaplaceWeight<'_> {
    fn rate(&self, l: usize, j: usize) -> f64 {
        (self.ys[l][0] - self.ys[j][0]).abs()
    }
}

impl MomentumWeight for LaplaceWeight<'_> {
    fn value(&self, j: usize, k: &[f64]) -> Complex64 {
        let d = self.d;
        let mut exponent = 0.0;
        let mut phase = 0.0;
        for (l, y) in self.ys.iter().enumerate() {
            if l == j {
                continue;
            }
            exponent -= k[l * d] * (y[0] - self.ys[j][0]);
            for a in 1..d {
                phase += k[l * d + a] * (y[a] - self.ys[j][a]);
            }
        }
        Complex64::from_polar(exponent.exp(), phase)
    }

    fn energy_cells(&self, _l: usize, _j: usize) -> usize {
        LAPLACE_SCALES.len() - 1
    }

    fn energy_breaks(&self, l: usize, j: usize, _sign: f64, shell: f64, out: &mut [f64]) -> bool {
        let rate = self.rate(l, j);
        for (o, s) in out.iter_mut().zip(LAPLACE_SCALES) {
            *o = shell + s / rate;
        }
        true
    }

    fn spatial_breaks(&self, l: usize, j: usize, _axis: usize) -> Vec<f64> {
        let rate = self.rate(l, j);
        let mut b: Vec<f64> = LAPLACE_SCALES.iter().rev().map(|s| -s / rate).collect();
        b.extend(LAPLACE_SCALES.iter().skip(1).map(|s| s / rate));
        b
    }
}

/// Constants of the shell parametrization.
#[derive(Debug, Clone, Copy)]
struct Shell {
    d: usize,
    alpha: f64,
    m0: f64,
    /// `p = 1/(1−α)`, so that `t = s^p`.
    p: f64,
    /// `μ^± dk⁰ = density · ds / (2|k⁰|)`.
    density: f64,
    norm: f64,
    cos_factor: f64,
}

impl Shell {
    fn new(d: usize, alpha: f64, m0: f64) -> Self {
        let p = 1.0 / (1.0 - alpha);
        let norm = momentum_norm(d);
        Self {
            d,
            alpha,
            m0,
            p,
            density: norm * (PI * alpha).sin() * p,
            norm,
            cos_factor: cos_pi(alpha),
        }
    }

    /// `s` for energy magnitude `b` on a shell of energy `e ≤ b`.
    fn to_s(&self, b: f64, e: f64) -> f64 {
        ((b - e) * (b + e)).max(0.0).powf(1.0 - self.alpha)
    }
}

enum Axis {
    Spatial {
        l: usize,
        axis: usize,
        nodes: Vec<f64>,
        weights: Vec<f64>,
    },
    Energy {
        l: usize,
        cells: usize,
    },
}

struct Term<'a, W: MomentumWeight> {
    n: usize,
    j: usize,
    shell: Shell,
    weight: &'a W,
    sub: usize,
    gl: &'a (Vec<f64>, Vec<f64>),
    ts: &'a [(f64, f64, f64, f64)],
    free: Vec<usize>,
    inner: usize,
    axes: Vec<Axis>,
    sizes: Vec<usize>,
}

/// One candidate zero of `k_j² − m₀²` along the inner shell coordinate.
#[derive(Clone, Copy)]
struct Near {
    root: usize,
    s_root: f64,
    delta: f64,
}

impl<'a, W: MomentumWeight> Term<'a, W> {
    fn sign(&self, l: usize) -> f64 {
        if l < self.j {
            -1.0
        } else {
            1.0
        }
    }

    fn spatial_energy(&self, k: &[f64], l: usize) -> f64 {
        let d = self.shell.d;
        let s2: f64 = k[l * d + 1..(l + 1) * d].iter().map(|x| x * x).sum();
        (s2 + self.shell.m0 * self.shell.m0).sqrt()
    }

    fn point(
        &self,
        flat: usize,
        k: &mut [f64],
        breaks: &mut Vec<f64>,
        pts: &mut Vec<(f64, Option<usize>)>,
    ) -> Complex64 {
        let d = self.shell.d;
        let q = self.gl.0.len();
        let mut w = 1.0;
        let mut rem = flat;
        for (axis, &size) in self.axes.iter().zip(&self.sizes) {
            let idx = rem % size;
            rem /= size;
            match axis {
                Axis::Spatial {
                    l,
                    axis,
                    nodes,
                    weights,
                } => {
                    k[l * d + axis] = nodes[idx];
                    w *= weights[idx];
                }
                Axis::Energy { l, cells } => {
                    let e = self.spatial_energy(k, *l);
                    let sign = self.sign(*l);
                    breaks.resize(cells + 1, 0.0);
                    if !self.weight.energy_breaks(*l, self.j, sign, e, breaks) {
                        return Complex64::new(0.0, 0.0);
                    }
                    let node = idx % q;
                    let rest = idx / q;
                    let piece = rest % self.sub;
                    let cell = rest / self.sub;
                    let sa = self.shell.to_s(breaks[cell], e);
                    let sb = self.shell.to_s(breaks[cell + 1], e);
                    let h = (sb - sa) / self.sub as f64;
                    let s = sa + h * (piece as f64 + self.gl.0[node]);
                    let k0 = sign * (e * e + s.powf(self.shell.p)).sqrt();
                    k[l * d] = k0;
                    w *= h * self.gl.1[node] * self.shell.density / (2.0 * k0.abs());
                }
            }
        }
        if w == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        w * self.inner_integral(k, breaks, pts)
    }

    fn inner_integral(
        &self,
        k: &mut [f64],
        breaks: &mut Vec<f64>,
        pts: &mut Vec<(f64, Option<usize>)>,
    ) -> Complex64 {
        let d = self.shell.d;
        let ls = self.inner;
        let sign = self.sign(ls);
        let e = self.spatial_energy(k, ls);
        let cells = self.weight.energy_cells(ls, self.j);
        breaks.resize(cells + 1, 0.0);
        if !self.weight.energy_breaks(ls, self.j, sign, e, breaks) {
            return Complex64::new(0.0, 0.0);
        }
        let mut pvec = [0.0f64; 4];
        for &l in &self.free {
            if l != ls {
                for (a, p) in pvec.iter_mut().enumerate().take(d) {
                    *p += k[l * d + a];
                }
            }
        }
        let m2 = self.shell.m0 * self.shell.m0;
        let dsq: f64 = (1..d)
            .map(|a| (pvec[a] + k[ls * d + a]).powi(2))
            .sum::<f64>()
            + m2;
        let dd = dsq.sqrt();
        let roots = [-pvec[0] + dd, -pvec[0] - dd];

        pts.clear();
        for c in 0..cells {
            let sa = self.shell.to_s(breaks[c], e);
            let sb = self.shell.to_s(breaks[c + 1], e);
            for i in 0..self.sub {
                pts.push((sa + (sb - sa) * i as f64 / self.sub as f64, None));
            }
        }
        pts.push((self.shell.to_s(breaks[cells], e), None));
        for (ri, &rho) in roots.iter().enumerate() {
            let mag = sign * rho;
            if mag >= breaks[0] && mag < breaks[cells] {
                pts.push((self.shell.to_s(mag, e), Some(ri)));
            }
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts.dedup_by(|later, kept| {
            if later.0 != kept.0 {
                return false;
            }
            kept.1 = kept.1.or(later.1);
            true
        });

        let f = |s: f64, near: Option<Near>, wt: f64, k: &mut [f64]| -> Complex64 {
            let k0 = sign * (e * e + s.powf(self.shell.p)).sqrt();
            let mut fac = [k0 - roots[0], k0 - roots[1]];
            if let Some(nr) = near {
                let p = self.shell.p;
                let dt = if nr.s_root > 0.0 {
                    nr.s_root.powf(p) * (p * (nr.delta / nr.s_root).ln_1p()).exp_m1()
                } else {
                    nr.delta.powf(p)
                };
                fac[nr.root] = sign * dt / (k0.abs() + roots[nr.root].abs());
            }
            let x = fac[0] * fac[1];
            if x == 0.0 {
                return Complex64::new(0.0, 0.0);
            }
            let mu = self.shell.norm * off_shell_factor(x, self.shell.alpha, self.shell.cos_factor);
            if mu == 0.0 {
                return Complex64::new(0.0, 0.0);
            }
            k[ls * d] = k0;
            for a in 0..d {
                k[self.j * d + a] = -(pvec[a] + k[ls * d + a]);
            }
            self.weight.value(self.j, &k[..self.n * d])
                * (wt * self.shell.density / (2.0 * k0.abs()) * mu)
        };

        let mut acc = Complex64::new(0.0, 0.0);
        for win in pts.windows(2) {
            let ((a, ra), (b, rb)) = (win[0], win[1]);
            if b <= a {
                continue;
            }
            if self.shell.cos_factor == 0.0 {
                // μ vanishes above the shell; skip pieces lying there.
                let mid = 0.5 * (a + b);
                let k0 = sign * (e * e + mid.powf(self.shell.p)).sqrt();
                if (k0 - roots[0]) * (k0 - roots[1]) > 0.0 {
                    continue;
                }
            }
            let len = b - a;
            if ra.is_none() && rb.is_none() {
                for (x, wt) in self.gl.0.iter().zip(&self.gl.1) {
                    acc += f(a + len * x, None, len * wt, k);
                }
            } else {
                for &(x, da, db, wt) in self.ts {
                    let near = match (ra, rb) {
                        (Some(r), _) if rb.is_none() || da <= db => Near {
                            root: r,
                            s_root: a,
                            delta: len * da,
                        },
                        (_, Some(r)) => Near {
                            root: r,
                            s_root: b,
                            delta: -len * db,
                        },
                        _ => unreachable!("one endpoint is a root"),
                    };
                    acc += f(a + len * x, Some(near), len * wt, k);
                }
            }
        }
        acc
    }

    fn integrate(&self) -> Complex64 {
        let total: usize = self.sizes.iter().product();
        if total == 0 {
            return Complex64::new(0.0, 0.0);
        }
        let partials: Vec<Complex64> = (0..total.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut k = [0.0f64; MAX_TEST_DIM];
                let mut breaks = Vec::new();
                let mut pts = Vec::new();
                (c * CHUNK..((c + 1) * CHUNK).min(total))
                    .map(|flat| self.point(flat, &mut k, &mut breaks, &mut pts))
                    .sum()
            })
            .collect();
        partials.iter().sum()
    }
}

/// `Σ_j ∫ ∏_{l<j} μ⁻ · μ(k_j) · ∏_{l>j} μ⁺ · weight` over `Σ k = 0`, without
/// the `c_n 2^{n−1}(2π)^d` prefactor.
fn hyperplane_integral<W: MomentumWeight>(
    n: usize,
    shell: Shell,
    weight: &W,
    level: usize,
    q: usize,
) -> Complex64 {
    let gl = unit_gauss(q);
    let ts = unit_tanh_sinh(0.5 / (1u64 << level) as f64);
    let sub = 1usize << level;
    let d = shell.d;
    (0..n)
        .map(|j| {
            let free: Vec<usize> = (0..n).filter(|&l| l != j).collect();
            let inner = *free.last().expect("n ≥ 2");
            let mut axes = Vec::new();
            for &l in &free {
                for axis in 1..d {
                    let (nodes, weights) = composite(&weight.spatial_breaks(l, j, axis), sub, &gl);
                    axes.push(Axis::Spatial {
                        l,
                        axis,
                        nodes,
                        weights,
                    });
                }
                if l != inner {
                    axes.push(Axis::Energy {
                        l,
                        cells: weight.energy_cells(l, j),
                    });
                }
            }
            let sizes = axes
                .iter()
                .map(|a| match a {
                    Axis::Spatial { nodes, .. } => nodes.len(),
                    Axis::Energy { cells, .. } => cells * sub * q,
                })
                .collect();
            Term {
                n,
                j,
                shell,
                weight,
                sub,
                gl: &gl,
                ts: &ts,
                free,
                inner,
                axes,
                sizes,
            }
            .integrate()
        })
        .sum()
}

/// `Ŵ^T_n(φ)` for the scalar model; `n` is `φ.dim() / d`.
pub fn w_hat_trunc_scalar(
    model: &ScalarWightman,
    phi: &TestFunction,
    quad: &HyperplaneQuadrature,
) -> Result<Evaluation> {
    quad.validate()?;
    let n = model.variables(phi)?;
    if n < 2 {
        return Err(Error::Domain(
            "truncated distributions on the hyperplane need n ≥ 2".into(),
        ));
    }
    let pref = model.prefactor(n)?;
    if pref == 0.0 {
        return Ok(Evaluation::exact(Complex64::new(0.0, 0.0)));
    }
    if model.is_free_pair(n) {
        return free_pair_smeared(model, phi, quad);
    }
    let shell = Shell::new(model.d, model.alpha, model.m0);
    let weight = SmearingWeight::new(phi, model.d, quad);
    refine(quad, |level| {
        hyperplane_integral(n, shell, &weight, level, quad.points_per_cell)
    })
    .map(|e| e.scaled(pref))
}

/// `Ŵ^T_1(φ) = c₁ m₀^{−2α} (2π)^{d/2} φ(0)`, the transformed constant mean.
pub fn w_hat_one_point(model: &ScalarWightman, phi: &TestFunction) -> Result<Complex64> {
    if model.variables(phi)? != 1 {
        return Err(Error::Shape(
            "one-point function needs a test function on ℝ^d".into(),
        ));
    }
    let c1 = model.levy.cumulant(1)?;
    let origin = vec![0.0; model.d];
    Ok(phi.eval(&origin)
        * (c1 * model.m0.powf(-2.0 * model.alpha) * (2.0 * PI).powf(model.d as f64 / 2.0)))
}

/// `2π c₂ ∫ dk⃗ φ((−ω, k⃗), (ω, −k⃗)) / (2ω)` with `ω = √(|k⃗|² + m₀²)`.
fn free_pair_smeared(
    model: &ScalarWightman,
    phi: &TestFunction,
    quad: &HyperplaneQuadrature,
) -> Result<Evaluation> {
    let d = model.d;
    let m2 = model.m0 * model.m0;
    let (lo, hi) = phi.bounding_box(quad.spread);
    let mut blo = Vec::with_capacity(d - 1);
    let mut bhi = Vec::with_capacity(d - 1);
    for a in 1..d {
        let l = lo[a].max(-hi[d + a]);
        let h = hi[a].min(-lo[d + a]);
        if h <= l {
            return Ok(Evaluation::exact(Complex64::new(0.0, 0.0)));
        }
        blo.push(l);
        bhi.push(h);
    }
    let f = |kv: &[f64]| {
        let omega = (kv.iter().map(|x| x * x).sum::<f64>() + m2).sqrt();
        let mut k = [0.0f64; 8];
        k[0] = -omega;
        k[d] = omega;
        for a in 1..d {
            k[a] = kv[a - 1];
            k[d + a] = -kv[a - 1];
        }
        phi.eval(&k[..2 * d]) / (2.0 * omega)
    };
    let est = cubature(&f, &blo, &bhi, quad.tolerance()).require(quad.abs_tol)?;
    let c2 = model.levy.cumulant(2)?;
    Ok(Evaluation::exact(est.value)
        .scaled(2.0 * PI * c2)
        .with_tolerance(2.0 * PI * c2.abs() * est.error))
}

impl Evaluation {
    fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }
}

/// Position-space and momentum-space values of `S^T_n` at ordered points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplaceBridge {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
    pub rhs_tolerance: f64,
}

/// Compares `c_n G^{(n)}(y)` on `lat` with
/// `(2π)^{−dn/2} ∫ e^{−Σk⁰y⁰ + iΣk⃗·y⃗} Ŵ^T_n(k) dk` for `y⁰₁ < … < y⁰_n`.
pub fn laplace_bridge_check(
    model: &ScalarWightman,
    ys: &[Vec<f64>],
    lat: &Lattice,
    quad: &HyperplaneQuadrature,
) -> Result<LaplaceBridge> {
    let n = ys.len();
    if !(2..=3).contains(&n) {
        return Err(Error::Precondition(format!(
            "Laplace comparison is set up for n ∈ {{2, 3}}, got {n}"
        )));
    }
    if model.d != 2 || lat.d() != 2 {
        return Err(Error::Precondition(
            "Laplace comparison runs in d = 2".into(),
        ));
    }
    if ys.iter().any(|y| y.len() != model.d) {
        return Err(Error::Shape("points must have d coordinates".into()));
    }
    if ys.windows(2).any(|w| !(w[0][0] < w[1][0])) {
        return Err(Error::Precondition(
            "Euclidean times must be strictly increasing".into(),
        ));
    }
    let spec = GreenSpec::new(model.d, model.alpha, model.m0)?;
    let c = model.levy.cumulant(n as u32)?;
    let lhs = c * g_n_scalar(ys, &spec, lat)?;
    let rhs = laplace_rhs(model, ys, quad)?;
    let gap = if rhs.value.re == 0.0 {
        if lhs == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (lhs - rhs.value.re).abs() / rhs.value.re.abs()
    };
    Ok(LaplaceBridge {
        lhs,
        rhs: rhs.value.re,
        gap,
        rhs_tolerance: rhs.tolerance,
    })
}

/// Momentum side of the Laplace comparison.
pub fn laplace_rhs(
    model: &ScalarWightman,
    ys: &[Vec<f64>],
    quad: &HyperplaneQuadrature,
) -> Result<Evaluation> {
    let n = ys.len();
    let d = model.d;
    let norm = (2.0 * PI).powf(-((d * n) as f64) / 2.0);
    let pref = model.prefactor(n)?;
    if pref == 0.0 {
        return Ok(Evaluation::exact(Complex64::new(0.0, 0.0)));
    }
    if model.is_free_pair(n) {
        let tau = ys[1][0] - ys[0][0];
        let dy: Vec<f64> = (1..d).map(|a| ys[0][a] - ys[1][a]).collect();
        let m2 = model.m0 * model.m0;
        let bound = LAPLACE_CUTOFF / tau;
        let f = |kv: &[f64]| {
            let omega = (kv.iter().map(|x| x * x).sum::<f64>() + m2).sqrt();
            let phase: f64 = kv.iter().zip(&dy).map(|(k, y)| k * y).sum();
            Complex64::from_polar((-omega * tau).exp() / (2.0 * omega), phase)
        };
        let lo = vec![-bound; d - 1];
        let hi = vec![bound; d - 1];
        let est = cubature(&f, &lo, &hi, quad.tolerance()).require(quad.abs_tol)?;
        let c2 = model.levy.cumulant(2)?;
        let s = norm * 2.0 * PI * c2;
        return Ok(Evaluation::exact(est.value)
            .scaled(s)
            .with_tolerance(s.abs() * est.error));
    }
    let shell = Shell::new(d, model.alpha, model.m0);
    let weight = LaplaceWeight { ys, d };
    refine(quad, |level| {
        hyperplane_integral(n, shell, &weight, level, quad.points_per_cell)
    })
    .map(|e| e.scaled(norm * pref))
}

/// Smallest margin by which the box of some partial sum `k_1 + … + k_l`
/// (`l < n`) stays out of the closed backward cone `q⁰ ≤ −|q⃗|`. Positive
/// values certify that the scalar distribution vanishes on `φ`.
pub fn backward_cone_clearance(phi: &TestFunction, d: usize, spread: f64) -> f64 {
    let (lo, hi) = phi.bounding_box(spread);
    let n = phi.dim() / d;
    let mut qlo = vec![0.0; d];
    let mut qhi = vec![0.0; d];
    let mut best = f64::NEG_INFINITY;
    for l in 0..n.saturating_sub(1) {
        for a in 0..d {
            qlo[a] += lo[l * d + a];
            qhi[a] += hi[l * d + a];
        }
        let dist = (1..d)
            .map(|a| qlo[a].max(-qhi[a]).max(0.0).powi(2))
            .sum::<f64>()
            .sqrt();
        best = best.max(qlo[0] + dist);
    }
    best
}

/// Largest |Ŵ^T_n(φ)| over a family of test functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportReport {
    pub max_abs: f64,
    pub tolerance: f64,
    pub values: Vec<Complex64>,
}

/// Evaluates a family whose members avoid the backward cones; the contract is
/// `max_abs ≤ tolerance`.
pub fn spectral_support_check(
    model: &ScalarWightman,
    family: &[TestFunction],
    quad: &HyperplaneQuadrature,
) -> Result<SupportReport> {
    for (i, phi) in family.iter().enumerate() {
        let (lo, hi) = phi.bounding_box(quad.spread);
        let cell = lo
            .iter()
            .zip(&hi)
            .map(|(l, h)| (h - l) / (quad.base_cells * quad.points_per_cell) as f64)
            .fold(0.0, f64::max);
        let clearance = backward_cone_clearance(phi, model.d, SUPPORT_SPREAD);
        if clearance < cell {
            return Err(Error::Precondition(format!(
                "test function {i} clears the backward cones by {clearance:.3}, less than one cell ({cell:.3})"
            )));
        }
    }
    let values: Vec<Complex64> = family
        .iter()
        .map(|phi| w_hat_trunc_scalar(model, phi, quad).map(|e| e.value))
        .collect::<Result<_>>()?;
    Ok(SupportReport {
        max_abs: values.iter().map(|v| v.norm()).fold(0.0, f64::max),
        tolerance: quad.abs_tol,
        values,
    })
}

/// One row of a cluster-decay table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterRow {
    pub lambda: f64,
    pub value: Complex64,
    pub magnitude: f64,
    pub tolerance: f64,
}

/// `|Ŵ^T_{m+n}(φ ⊗ T_{λa}ψ)|` over `lambdas`, where translation by `b` acts in
/// momentum space as `e^{−i⟨Σk, b⟩}` with the Minkowski pairing.
pub fn cluster_decay(
    model: &ScalarWightman,
    phi: &TestFunction,
    psi: &TestFunction,
    a: &MinkowskiPoint,
    lambdas: &[f64],
    quad: &HyperplaneQuadrature,
) -> Result<Vec<ClusterRow>> {
    let d = model.d;
    if a.dim() != d {
        return Err(Error::Shape(format!(
            "translation of dimension {} in d = {d}",
            a.dim()
        )));
    }
    if a.square() >= 0.0 {
        return Err(Error::Precondition(format!(
            "translation must be spacelike, a² = {}",
            a.square()
        )));
    }
    model.variables(phi)?;
    let n_psi = model.variables(psi)?;
    lambdas
        .iter()
        .map(|&lambda| {
            let mut nu = vec![0.0; psi.dim()];
            for l in 0..n_psi {
                nu[l * d] = -lambda * a.energy;
                for (i, x) in a.spatial.iter().enumerate() {
                    nu[l * d + 1 + i] = lambda * x;
                }
            }
            let moved = psi.times_plane_wave(&nu)?;
            let joint = TensorProduct::new(vec![phi.clone(), moved])?.to_joint();
            let e = w_hat_trunc_scalar(model, &joint, quad)?;
            Ok(ClusterRow {
                lambda,
                value: e.value,
                magnitude: e.value.norm(),
                tolerance: e.tolerance,
            })
        })
        .collect()
}

/// Polynomial multiplier of degree at most one in each momentum variable,
/// applied to a test function before it is paired with the vector measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentumMultiplier {
    pub d: usize,
    /// Each monomial picks at most one component per variable.
    pub monomials: Vec<(Vec<Option<usize>>, Complex64)>,
}

impl MomentumMultiplier {
    pub fn apply(&self, phi: &TestFunction) -> Result<TestFunction> {
        let n = phi.dim() / self.d;
        if !phi.dim().is_multiple_of(self.d) {
            return Err(Error::Shape(
                "test function does not split into momentum variables".into(),
            ));
        }
        let mut out: Option<TestFunction> = None;
        for (picks, c) in &self.monomials {
            if picks.len() != n || picks.iter().flatten().any(|&mu| mu >= self.d) {
                return Err(Error::Shape("monomial does not match the variables".into()));
            }
            let mut term = phi.clone().scaled(*c);
            for (l, pick) in picks.iter().enumerate() {
                if let Some(mu) = pick {
                    term = term.times_coordinate(l * self.d + mu)?;
                }
            }
            out = Some(match out {
                None => term,
                Some(acc) => acc.plus(&term)?,
            });
        }
        out.ok_or_else(|| Error::Domain("empty multiplier".into()))
    }
}

/// Orthonormal pair completing the unit vector `e`.
fn complete_basis(e: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let helper = if e[0].abs() < 0.9 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    let dot = helper[0] * e[0] + helper[1] * e[1] + helper[2] * e[2];
    let mut u = [
        helper[0] - dot * e[0],
        helper[1] - dot * e[1],
        helper[2] - dot * e[2],
    ];
    let nu = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    for x in &mut u {
        *x /= nu;
    }
    let v = [
        e[1] * u[2] - e[2] * u[1],
        e[2] * u[0] - e[0] * u[2],
        e[0] * u[1] - e[1] * u[0],
    ];
    (u, v)
}

fn norm3(v: &[f64]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Radial range of the spatial part of variable `l` over the box.
fn radial_range(lo: &[f64], hi: &[f64], l: usize) -> (f64, f64) {
    let mut near = 0.0;
    let mut far = 0.0;
    for a in 1..4 {
        let (x0, x1) = (lo[4 * l + a], hi[4 * l + a]);
        let gap = if x0 > 0.0 {
            x0
        } else if x1 < 0.0 {
            -x1
        } else {
            0.0
        };
        near += gap * gap;
        far += x0.abs().max(x1.abs()).powi(2);
    }
    (near.sqrt(), far.sqrt())
}

struct VectorLayout {
    n: usize,
    /// Variable removed by momentum conservation.
    eliminated: usize,
    /// Variable integrated in prolate spheroidal coordinates.
    prolate: usize,
    spherical: Vec<usize>,
    middle: bool,
}

/// `M^n_j(φ)` for the massless vector model; `φ` lives on `ℝ^{4n}` and `j`
/// runs over `0..=n`. Shell energies are `ω = |k⃗|`.
///
/// A single Gauss rule per coordinate is used, `base_cells` cells each;
/// level `L` raises the order to `points_per_cell + 2L`.
pub fn m_n_j_eval(
    n: usize,
    j: usize,
    phi: &TestFunction,
    quad: &HyperplaneQuadrature,
) -> Result<Evaluation> {
    quad.validate()?;
    if n < 3 {
        return Err(Error::Domain(
            "the shell representation is used for n ≥ 3".into(),
        ));
    }
    if j > n {
        return Err(Error::Domain(format!("j = {j} exceeds n = {n}")));
    }
    if phi.dim() != 4 * n {
        return Err(Error::Shape(format!(
            "test function of dimension {} for n = {n} on ℝ⁴",
            phi.dim()
        )));
    }
    let layout = if j == 0 || j == n {
        let eliminated = if j == 0 { 0 } else { n - 1 };
        let free: Vec<usize> = (0..n).filter(|&l| l != eliminated).collect();
        let prolate = *free.last().expect("n ≥ 3");
        VectorLayout {
            n,
            eliminated,
            prolate,
            spherical: free[..free.len() - 1].to_vec(),
            middle: false,
        }
    } else {
        // Pair (j, j+1) in one-based labels.
        let eliminated = j - 1;
        let prolate = j;
        VectorLayout {
            n,
            eliminated,
            prolate,
            spherical: (0..n)
                .filter(|&l| l != eliminated && l != prolate)
                .collect(),
            middle: true,
        }
    };
    let (lo, hi) = phi.bounding_box(quad.spread);
    let scale = (2.0 * PI).powi(3 - n as i32);
    let forward = j == 0;
    refine(quad, |level| {
        scale * vector_integral(&layout, phi, &lo, &hi, forward, level, quad)
    })
}

fn vector_integral(
    layout: &VectorLayout,
    phi: &TestFunction,
    lo: &[f64],
    hi: &[f64],
    forward: bool,
    level: usize,
    quad: &HyperplaneQuadrature,
) -> Complex64 {
    // The integrand is analytic in these coordinates, so refinement raises
    // the Gauss order instead of splitting cells.
    let gl = unit_gauss(quad.points_per_cell + 2 * level);
    let sub = quad.base_cells;
    let unit = composite(&[0.0, 1.0], sub, &gl);
    let polar = composite(&[0.0, PI], sub, &gl);
    let azimuth = composite(&[0.0, 2.0 * PI], sub, &gl);
    // Angles rather than cosines keep the Cartesian components analytic.
    // Per spherical variable (r, θ, ϕ); the prolate one uses (v, θ', ϕ) with
    // ξ = cosh v, η = cos θ'; the middle measures add the parameter s.
    let mut grids: Vec<&(Vec<f64>, Vec<f64>)> = Vec::new();
    let radial: Vec<(Vec<f64>, Vec<f64>)> = layout
        .spherical
        .iter()
        .map(|&l| {
            let (r0, r1) = radial_range(lo, hi, l);
            composite(&[r0, r1], sub, &gl)
        })
        .collect();
    for r in &radial {
        grids.extend([r, &polar, &azimuth]);
    }
    grids.extend([&unit, &polar, &azimuth]);
    if layout.middle {
        grids.push(&unit);
    }
    let sizes: Vec<usize> = grids.iter().map(|g| g.0.len()).collect();
    let total: usize = sizes.iter().product();
    let r_prolate = radial_range(lo, hi, layout.prolate).1;
    let r_elim = radial_range(lo, hi, layout.eliminated).1;
    let n = layout.n;

    let point = |flat: usize, k: &mut [f64]| -> Complex64 {
        let mut idx = [0usize; 3 * MAX_TEST_DIM];
        let mut rem = flat;
        for (i, &s) in sizes.iter().enumerate() {
            idx[i] = rem % s;
            rem /= s;
        }
        let at = |i: usize| (grids[i].0[idx[i]], grids[i].1[idx[i]]);
        let mut w = 1.0;
        let mut pvec = [0.0f64; 3];
        for (c, &l) in layout.spherical.iter().enumerate() {
            let (r, wr) = at(3 * c);
            let (th, wt) = at(3 * c + 1);
            let (ph, wp) = at(3 * c + 2);
            let (st, ct) = th.sin_cos();
            let v = [r * st * ph.cos(), r * st * ph.sin(), r * ct];
            k[4 * l + 1..4 * l + 4].copy_from_slice(&v);
            for a in 0..3 {
                pvec[a] += v[a];
            }
            // r² sin θ from the volume, 1/(2r) from the shell.
            w *= 0.5 * r * st * wr * wt * wp;
        }
        let base = 3 * layout.spherical.len();
        let c_half = 0.5 * norm3(&pvec);
        if c_half <= 1e-300 {
            return Complex64::new(0.0, 0.0);
        }
        let xi_max = (r_prolate + c_half).min(0.5 * (r_prolate + r_elim)) / c_half;
        if xi_max <= 1.0 {
            return Complex64::new(0.0, 0.0);
        }
        let v_max = xi_max.acosh();
        let (y, wy) = at(base);
        let (th, we) = at(base + 1);
        let (ph, wp) = at(base + 2);
        let (sh, xi) = ((y * v_max).sinh(), (y * v_max).cosh());
        let (st, eta) = th.sin_cos();
        let axis = [
            pvec[0] / (2.0 * c_half),
            pvec[1] / (2.0 * c_half),
            pvec[2] / (2.0 * c_half),
        ];
        let (u, v) = complete_basis(axis);
        let rho = c_half * sh * st;
        let z = c_half * xi * eta;
        let mut kv = [0.0f64; 3];
        for a in 0..3 {
            // Center −P/2; the focus at the origin sits at z = +c.
            kv[a] = -0.5 * pvec[a] + z * axis[a] + rho * (ph.cos() * u[a] + ph.sin() * v[a]);
        }
        let l = layout.prolate;
        k[4 * l + 1..4 * l + 4].copy_from_slice(&kv);
        let r_v = c_half * (xi - eta);
        let r_e = c_half * (xi + eta);
        // dV / (r_v r_e) = c dξ dη dϕ.
        w *= c_half * sh * v_max * st * wy * we * wp;
        let e = layout.eliminated;
        for a in 0..3 {
            k[4 * e + 1 + a] = -(pvec[a] + kv[a]);
        }
        if layout.middle {
            let (s, ws) = at(base + 3);
            let mut a_sum = 0.0;
            let mut b_sum = 0.0;
            for &m in &layout.spherical {
                let r = norm3(&k[4 * m + 1..4 * m + 4]);
                if m < e {
                    k[4 * m] = -r;
                    a_sum -= r;
                } else {
                    k[4 * m] = r;
                    b_sum += r;
                }
            }
            let k_tilde = -((r_e - a_sum) * s + (r_v + b_sum) * (1.0 - s) + a_sum);
            k[4 * e] = k_tilde;
            k[4 * l] = -a_sum - b_sum - k_tilde;
            // 1/(4 r_v r_e), of which 1/(r_v r_e) sits in the volume factor.
            w *= 0.25 * ws;
        } else {
            let sign = if forward { 1.0 } else { -1.0 };
            let mut shell_sum = r_v;
            k[4 * l] = sign * r_v;
            for &m in &layout.spherical {
                let r = norm3(&k[4 * m + 1..4 * m + 4]);
                k[4 * m] = sign * r;
                shell_sum += r;
            }
            k[4 * e] = -sign * shell_sum;
            // 1/(2 r_v) from the shell, 1/(2|K|(k⁰ ∓ |K|)) from the eliminated momentum.
            w *= -sign * 0.25 / (shell_sum + r_e);
        }
        phi.eval(&k[..4 * n]) * w
    };

    let partials: Vec<Complex64> = (0..total.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut k = [0.0f64; MAX_TEST_DIM];
            (c * CHUNK..((c + 1) * CHUNK).min(total))
                .map(|flat| point(flat, &mut k))
                .sum()
        })
        .collect();
    partials.iter().sum()
}

/// `k_l ↦ (−k⁰_{n+1−l}, k⃗_{n+1−l})`: reverses the variable order and flips
/// every energy. Maps the measure for `j` onto the one for `n − j`.
pub fn time_reflection(phi: &TestFunction, d: usize) -> Result<TestFunction> {
    let n = phi.dim() / d;
    let mut perm = vec![0; phi.dim()];
    let mut signs = vec![1.0; phi.dim()];
    for l in 0..n {
        for a in 0..d {
            perm[l * d + a] = (n - 1 - l) * d + a;
            if a == 0 {
                signs[l * d] = -1.0;
            }
        }
    }
    phi.signed_permutation(&perm, &signs)
}

/// `φ*(k_1,…,k_n) = conj φ(−k_n,…,−k_1)`, the momentum-space adjoint.
pub fn adjoint(phi: &TestFunction, d: usize) -> Result<TestFunction> {
    let n = phi.dim() / d;
    let mut perm = vec![0; phi.dim()];
    for l in 0..n {
        for a in 0..d {
            perm[l * d + a] = (n - 1 - l) * d + a;
        }
    }
    Ok(phi
        .signed_permutation(&perm, &vec![-1.0; phi.dim()])?
        .conj())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::Atom;

    fn atom_model() -> ScalarWightman {
        let levy = LevyTriple::new(
            0.0,
            0.5,
            vec![
                Atom {
                    position: 1.0,
                    rate: 1.0,
                },
                Atom {
                    position: -0.5,
                    rate: 2.0,
                },
                Atom {
                    position: 1.5,
                    rate: 0.3,
                },
            ],
        )
        .unwrap();
        ScalarWightman::new(levy, 2, 0.5, 1.0).unwrap()
    }

    fn gaussian_model(alpha: f64) -> ScalarWightman {
        ScalarWightman::new(LevyTriple::gaussian(1.0).unwrap(), 2, alpha, 1.0).unwrap()
    }

    /// Product of isotropic Gaussians centered at `centers` (one per variable).
    fn product(centers: &[[f64; 2]], width: f64) -> TestFunction {
        let flat: Vec<f64> = centers.iter().flatten().copied().collect();
        TestFunction::gaussian(&flat, width).unwrap()
    }

    /// Centers on the support: k₁ backward, k₃ forward, k₂ balancing.
    fn on_support() -> TestFunction {
        product(&[[-1.6, 0.3], [0.1, -0.5], [1.5, 0.2]], 0.45)
    }

    fn quick() -> HyperplaneQuadrature {
        HyperplaneQuadrature {
            rel_tol: 2e-3,
            max_level: 3,
            points_per_cell: 5,
            base_cells: 2,
            ..Default::default()
        }
    }

    #[test]
    fn mu_branches() {
        let spacelike = MinkowskiPoint::new(0.5, vec![1.0]);
        let past = MinkowskiPoint::new(-2.0, vec![0.5]);
        assert_eq!(mu_eval(&spacelike, Branch::Plus, 0.3, 1.0).unwrap(), 0.0);
        assert_eq!(mu_eval(&past, Branch::Plus, 0.3, 1.0).unwrap(), 0.0);
        assert!(mu_eval(&past, Branch::Minus, 0.3, 1.0).unwrap() > 0.0);
        let origin = MinkowskiPoint::new(0.0, vec![0.0]);
        assert!(
            (mu_eval(&origin, Branch::Zero, 0.3, 1.0).unwrap() - 1.0 / (2.0 * PI)).abs() < 1e-15
        );
        let origin4 = MinkowskiPoint::new(0.0, vec![0.0; 3]);
        assert!(
            (mu_eval(&origin4, Branch::Zero, 0.5, 1.0).unwrap() - (2.0 * PI).powi(-2)).abs()
                < 1e-15
        );
        let on_shell = MinkowskiPoint::new(1.0, vec![0.0]);
        assert!(matches!(
            mu_eval(&on_shell, Branch::Zero, 0.3, 1.0),
            Err(Error::Singular(_))
        ));
        assert!(matches!(
            mu_eval(&origin, Branch::Zero, 0.7, 1.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn rejects_bad_exponent() {
        assert!(ScalarWightman::new(LevyTriple::gaussian(1.0).unwrap(), 2, 0.0, 1.0).is_err());
        assert!(ScalarWightman::new(LevyTriple::gaussian(1.0).unwrap(), 2, 0.6, 1.0).is_err());
    }

    #[test]
    fn vanishes_off_the_cones() {
        let model = atom_model();
        // k₁ deep in the forward cone: the first partial sum is excluded.
        let phi = product(&[[4.0, 0.0], [-2.0, 0.5], [-2.0, -0.5]], 0.2);
        assert!(backward_cone_clearance(&phi, 2, SUPPORT_SPREAD) > 0.0);
        let v = w_hat_trunc_scalar(&model, &phi, &quick()).unwrap();
        assert!(v.value.norm() <= 1e-12, "{v:?}");
        let control = w_hat_trunc_scalar(&model, &on_support(), &quick()).unwrap();
        assert!(control.value.norm() > 1e-4, "{control:?}");
    }

    #[test]
    fn total_momentum_phase_is_invisible() {
        let model = atom_model();
        let phi = on_support();
        let nu = [0.7, -1.3, 0.7, -1.3, 0.7, -1.3];
        let shifted = phi.times_plane_wave(&nu).unwrap();
        let q = quick();
        let a = w_hat_trunc_scalar(&model, &phi, &q).unwrap();
        let b = w_hat_trunc_scalar(&model, &shifted, &q).unwrap();
        assert!(
            (a.value - b.value).norm() <= 1e-10 * a.value.norm(),
            "{a:?} {b:?}"
        );
    }

    #[test]
    fn hermiticity() {
        let model = atom_model();
        let phi = on_support()
            .times_plane_wave(&[0.4, 0.0, 0.0, -0.8, 0.0, 0.3])
            .unwrap();
        let q = quick();
        let direct = w_hat_trunc_scalar(&model, &phi, &q).unwrap();
        let starred = w_hat_trunc_scalar(&model, &adjoint(&phi, 2).unwrap(), &q).unwrap();
        let tol = 3.0 * (direct.tolerance + starred.tolerance) + 1e-3 * direct.value.norm();
        assert!(
            (starred.value - direct.value.conj()).norm() <= tol,
            "{direct:?} {starred:?}"
        );
    }

    /// Brute-force oracle: midpoint sums over a dense grid in the shell
    /// coordinates, with the singular factor from `mu_eval` and no knowledge
    /// of where it blows up.
    fn dense_grid_oracle(model: &ScalarWightman, phi: &TestFunction, points: usize) -> f64 {
        let (lo, hi) = phi.bounding_box(6.0);
        let alpha = model.alpha;
        let m0 = model.m0;
        let p = 1.0 / (1.0 - alpha);
        let density = (PI * alpha).sin() * p / (2.0 * PI);
        let n = 3;
        let mut total = 0.0;
        for j in 0..n {
            let free: Vec<usize> = (0..n).filter(|&l| l != j).collect();
            let sign = |l: usize| if l < j { -1.0 } else { 1.0 };
            let h: Vec<f64> = free
                .iter()
                .map(|&l| (hi[2 * l + 1] - lo[2 * l + 1]) / points as f64)
                .collect();
            let mut sum = 0.0;
            for i0 in 0..points {
                let x0 = lo[2 * free[0] + 1] + (i0 as f64 + 0.5) * h[0];
                let e0 = (x0 * x0 + m0 * m0).sqrt();
                let sgn0 = sign(free[0]);
                let (a0, b0) = if sgn0 > 0.0 {
                    (lo[2 * free[0]].max(e0), hi[2 * free[0]])
                } else {
                    ((-hi[2 * free[0]]).max(e0), -lo[2 * free[0]])
                };
                if b0 <= a0 {
                    continue;
                }
                let (sa0, sb0) = (
                    ((a0 * a0 - e0 * e0).max(0.0)).powf(1.0 - alpha),
                    (b0 * b0 - e0 * e0).powf(1.0 - alpha),
                );
                for i1 in 0..points {
                    let s0 = sa0 + (i1 as f64 + 0.5) * (sb0 - sa0) / points as f64;
                    let k00 = sgn0 * (e0 * e0 + s0.powf(p)).sqrt();
                    let w0 = h[0] * (sb0 - sa0) / points as f64 * density / (2.0 * k00.abs());
                    for i2 in 0..points {
                        let x1 = lo[2 * free[1] + 1] + (i2 as f64 + 0.5) * h[1];
                        let e1 = (x1 * x1 + m0 * m0).sqrt();
                        let sgn1 = sign(free[1]);
                        let (a1, b1) = if sgn1 > 0.0 {
                            (lo[2 * free[1]].max(e1), hi[2 * free[1]])
                        } else {
                            ((-hi[2 * free[1]]).max(e1), -lo[2 * free[1]])
                        };
                        if b1 <= a1 {
                            continue;
                        }
                        let (sa1, sb1) = (
                            ((a1 * a1 - e1 * e1).max(0.0)).powf(1.0 - alpha),
                            (b1 * b1 - e1 * e1).powf(1.0 - alpha),
                        );
                        for i3 in 0..points {
                            let s1 = sa1 + (i3 as f64 + 0.5) * (sb1 - sa1) / points as f64;
                            let k10 = sgn1 * (e1 * e1 + s1.powf(p)).sqrt();
                            let w1 =
                                h[1] * (sb1 - sa1) / points as f64 * density / (2.0 * k10.abs());
                            let kj = MinkowskiPoint::new(-(k00 + k10), vec![-(x0 + x1)]);
                            let Ok(mu) = mu_eval(&kj, Branch::Zero, alpha, m0) else {
                                continue;
                            };
                            let mut k = [0.0; 6];
                            k[2 * free[0]] = k00;
                            k[2 * free[0] + 1] = x0;
                            k[2 * free[1]] = k10;
                            k[2 * free[1] + 1] = x1;
                            k[2 * j] = kj.energy;
                            k[2 * j + 1] = kj.spatial[0];
                            sum += w0 * w1 * mu * phi.eval(&k).re;
                        }
                    }
                }
            }
            total += sum;
        }
        total * model.prefactor(3).unwrap()
    }

    #[test]
    fn three_point_matches_dense_grid() {
        let model = atom_model();
        let phi = on_support();
        let v = w_hat_trunc_scalar(&model, &phi, &quick()).unwrap();
        let oracle = dense_grid_oracle(&model, &phi, 56);
        let rel = (v.value.re - oracle).abs() / oracle.abs();
        assert!(
            rel < 0.02,
            "quadrature {} vs oracle {oracle} ({rel:.4})",
            v.value.re
        );
        assert!(v.value.im.abs() < 1e-10 * v.value.re.abs());
    }

    #[test]
    fn free_pair_equals_the_limit_formula() {
        // At α = ½ the two-point function sits on the mass shell.
        let model = gaussian_model(0.5);
        let phi = product(&[[-1.3, 0.4], [1.3, -0.4]], 0.5);
        let q = HyperplaneQuadrature {
            spread: 8.0,
            rel_tol: 1e-11,
            abs_tol: 1e-14,
            ..quick()
        };
        let v = w_hat_trunc_scalar(&model, &phi, &q).unwrap();
        let direct = crate::quad::gauss_kronrod(
            |k: f64| {
                let w = (k * k + 1.0).sqrt();
                phi.eval(&[-w, k, w, -k]).re / (2.0 * w)
            },
            -8.0,
            8.0,
            &[],
            Tolerance::new(1e-14, 1e-12),
        );
        assert!(
            (v.value.re - 2.0 * PI * direct.value).abs() < 1e-9,
            "{v:?} {}",
            2.0 * PI * direct.value
        );
    }

    #[test]
    fn general_pair_converges_for_small_alpha() {
        let model = gaussian_model(0.3);
        let phi = product(&[[-1.3, 0.4], [1.3, -0.4]], 0.5);
        let v = w_hat_trunc_scalar(&model, &phi, &quick()).unwrap();
        assert!(v.value.re > 0.0);
        assert!(v.tolerance <= 2e-3 * v.value.norm());
    }

    #[test]
    fn gaussian_three_point_is_zero() {
        let model = gaussian_model(0.5);
        let v = w_hat_trunc_scalar(&model, &on_support(), &quick()).unwrap();
        assert_eq!(v.value, Complex64::new(0.0, 0.0));
    }

    #[test]
    fn laplace_two_point_and_time_translation() {
        let model = gaussian_model(0.5);
        let lat = Lattice::new(2, 128, 0.0625).unwrap();
        let q = HyperplaneQuadrature {
            rel_tol: 1e-8,
            abs_tol: 1e-14,
            ..Default::default()
        };
        let ys = vec![vec![0.0, 0.0], vec![0.75, 0.5]];
        let b = laplace_bridge_check(&model, &ys, &lat, &q).unwrap();
        assert!(b.gap < 1e-2, "{b:?}");
        let moved: Vec<Vec<f64>> = ys.iter().map(|y| vec![y[0] - 0.5, y[1]]).collect();
        let c = laplace_bridge_check(&model, &moved, &lat, &q).unwrap();
        assert!((b.lhs - c.lhs).abs() <= 1e-10 * b.lhs.abs());
        assert!((b.rhs - c.rhs).abs() <= 1e-10 * b.rhs.abs());
        assert!((b.gap - c.gap).abs() <= 1e-10);
        let unordered = vec![ys[1].clone(), ys[0].clone()];
        assert!(matches!(
            laplace_bridge_check(&model, &unordered, &lat, &q),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn cluster_rows() {
        let model = gaussian_model(0.5);
        let phi = TestFunction::gaussian(&[-1.3, 0.2], 0.5).unwrap();
        let psi = TestFunction::gaussian(&[1.3, -0.2], 0.5).unwrap();
        let a = MinkowskiPoint::new(0.0, vec![1.0]);
        let q = HyperplaneQuadrature {
            spread: 8.0,
            ..Default::default()
        };
        let rows = cluster_decay(&model, &phi, &psi, &a, &[0.0, 2.0, 8.0], &q).unwrap();
        let joint = TensorProduct::new(vec![phi.clone(), psi.clone()])
            .unwrap()
            .to_joint();
        let direct = w_hat_trunc_scalar(&model, &joint, &q).unwrap();
        assert!((rows[0].value - direct.value).norm() < 1e-14);
        assert!(rows[2].magnitude < 0.1 * rows[0].magnitude);
        let timelike = MinkowskiPoint::new(2.0, vec![1.0]);
        assert!(matches!(
            cluster_decay(&model, &phi, &psi, &timelike, &[1.0], &q),
            Err(Error::Precondition(_))
        ));

        let three = cluster_decay(&gaussian_model(0.5), &joint, &psi, &a, &[0.0, 4.0], &q).unwrap();
        assert!(three.iter().all(|r| r.magnitude == 0.0));
    }

    fn vector_phi(centers: &[[f64; 4]], width: f64) -> TestFunction {
        let flat: Vec<f64> = centers.iter().flatten().copied().collect();
        TestFunction::gaussian(&flat, width).unwrap()
    }

    #[test]
    fn vector_measures_reflect() {
        let phi = vector_phi(
            &[
                [-1.2, 0.3, -0.2, 0.1],
                [0.4, 0.2, 0.3, -0.2],
                [0.8, -0.4, 0.1, 0.3],
            ],
            0.8,
        );
        let q = HyperplaneQuadrature {
            rel_tol: 2e-2,
            points_per_cell: 8,
            base_cells: 1,
            max_level: 2,
            spread: 5.0,
            ..Default::default()
        };
        let reflected = time_reflection(&phi, 4).unwrap();
        let m0 = m_n_j_eval(3, 0, &phi, &q).unwrap();
        let m3 = m_n_j_eval(3, 3, &reflected, &q).unwrap();
        assert!(m0.value.re < 0.0);
        // The denominators k⁰ ∓ |k⃗| flip sign under the reflection.
        assert!(
            (m0.value + m3.value).norm() <= 0.02 * m0.value.norm(),
            "{m0:?} {m3:?}"
        );
        let m1 = m_n_j_eval(3, 1, &phi, &q).unwrap();
        let m2 = m_n_j_eval(3, 2, &reflected, &q).unwrap();
        assert!(
            (m1.value - m2.value).norm() <= 0.02 * m1.value.norm(),
            "{m1:?} {m2:?}"
        );
    }

    #[test]
    fn vector_measure_vanishes_off_the_forward_shells() {
        // Variables 2 and 3 far in the backward cone: no forward shell nearby.
        let phi = vector_phi(
            &[
                [6.0, 0.0, 0.0, 0.0],
                [-3.0, 0.0, 0.0, 0.0],
                [-3.0, 0.0, 0.0, 0.0],
            ],
            0.3,
        );
        let q = HyperplaneQuadrature {
            points_per_cell: 4,
            base_cells: 1,
            max_level: 1,
            ..Default::default()
        };
        let m0 = m_n_j_eval(3, 0, &phi, &q).unwrap();
        assert!(m0.value.norm() < 1e-12, "{m0:?}");
    }

    #[test]
    fn multiplier_applies_monomials() {
        let phi = TestFunction::gaussian(&[0.1, 0.2, 0.3, 0.4], 1.0).unwrap();
        let m = MomentumMultiplier {
            d: 2,
            monomials: vec![
                (vec![Some(0), Some(1)], Complex64::new(2.0, 0.0)),
                (vec![None, None], Complex64::new(1.0, 0.0)),
            ],
        };
        let x = [0.5, -0.2, 0.7, 1.1];
        let out = m.apply(&phi).unwrap();
        assert!((out.eval(&x) - phi.eval(&x) * (2.0 * 0.5 * 1.1 + 1.0)).norm() < 1e-14);
    }
}
