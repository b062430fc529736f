//! Hilbert space structure checks: weighted sup norms of test functions, the
//! singular bounding integrals behind the per-order constants `a_n`, the
//! constant chain `a → b → c`, and finite-dimensional Gram realizations with
//! their majorization test and Krein reduction.

use std::cell::Cell;
use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::f64::consts::PI;

use faer::{Mat, Side};
use num_complex::Complex64;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levy::LevyTriple;
use crate::partition::enumerate_partitions;
use crate::quad::{gauss_kronrod_half_line, tanh_sinh_pieces, Estimate, Tolerance};
use crate::testfn::{TensorProduct, TestFunction};
use crate::wightman::{
    adjoint, w_hat_one_point, w_hat_trunc_scalar, HyperplaneQuadrature, ScalarWightman,
};

// ---------------------------------------------------------------------------
// Weighted sup norms
// ---------------------------------------------------------------------------

/// `‖φ‖_{K,N} = sup_x ∏_l (1+|x_l|²)^{N/2} max_{|α_l|≤K} |D^α φ(x)|`, with
/// `x_l ∈ ℝ^d` the variable blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchwartzNormSpec {
    pub k: u32,
    pub n: u32,
}

impl SchwartzNormSpec {
    /// `K = 0`, `N = 2d`, the norm used by the per-order bounds.
    pub fn certification(d: usize) -> Self {
        Self {
            k: 0,
            n: 2 * d as u32,
        }
    }
}

/// Guaranteed enclosure `lower ≤ ‖φ‖ ≤ upper`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormBracket {
    pub lower: f64,
    pub upper: f64,
}

impl NormBracket {
    pub fn relative_width(&self) -> f64 {
        if self.upper == 0.0 {
            0.0
        } else {
            (self.upper - self.lower) / self.upper
        }
    }
}

const NORM_GAP: f64 = 0.01;
const NORM_CELL_BUDGET: usize = 200_000;

/// Branch and bound over the test function's bounding box, plus a Gaussian
/// tail bound outside it. Products of single-block factors are bracketed
/// block by block.
pub fn schwartz_norm(phi: &TestFunction, d: usize, spec: SchwartzNormSpec) -> Result<NormBracket> {
    if d == 0 || !phi.dim().is_multiple_of(d) {
        return Err(Error::Shape(format!(
            "dimension {} is not a multiple of {d}",
            phi.dim()
        )));
    }
    match phi.split_blocks(d) {
        Some(blocks) if blocks.len() > 1 => {
            let gap = (1.0 + NORM_GAP).powf(1.0 / blocks.len() as f64) - 1.0;
            let mut out = NormBracket {
                lower: 1.0,
                upper: 1.0,
            };
            for b in &blocks {
                let nb = weighted_sup(b, d, spec, gap)?;
                out.lower *= nb.lower;
                out.upper *= nb.upper;
            }
            Ok(out)
        }
        _ => weighted_sup(phi, d, spec, NORM_GAP),
    }
}

fn block_orders(d: usize, k: u32) -> Vec<Vec<u32>> {
    let mut out: Vec<Vec<u32>> = vec![vec![]];
    for _ in 0..d {
        out = out
            .into_iter()
            .flat_map(|a| {
                let used: u32 = a.iter().sum();
                (0..=k - used).map(move |e| {
                    let mut b = a.clone();
                    b.push(e);
                    b
                })
            })
            .collect();
    }
    out
}

fn derivative_orders(blocks: usize, d: usize, k: u32) -> Vec<Vec<u32>> {
    let per_block = block_orders(d, k);
    let mut out: Vec<Vec<u32>> = vec![vec![]];
    for _ in 0..blocks {
        out = out
            .into_iter()
            .flat_map(|a| {
                per_block.iter().map(move |b| {
                    let mut c = a.clone();
                    c.extend_from_slice(b);
                    c
                })
            })
            .collect();
    }
    out
}

fn weighted_sup(
    f: &TestFunction,
    d: usize,
    spec: SchwartzNormSpec,
    gap: f64,
) -> Result<NormBracket> {
    let power = spec.n as f64 / 2.0;
    let derivs = derivative_orders(f.dim() / d, d, spec.k)
        .iter()
        .map(|a| f.derivative(a))
        .collect::<Result<Vec<_>>>()?;
    let weighted = derivs
        .iter()
        .map(|g| {
            let dim = g.dim();
            let unit = |i: usize| {
                let mut e = vec![0; dim];
                e[i] += 1;
                e
            };
            let grads = (0..dim)
                .map(|i| g.derivative(&unit(i)))
                .collect::<Result<Vec<_>>>()?;
            let hess = (0..dim)
                .flat_map(|i| (i..dim).map(move |j| (i, j)))
                .map(|(i, j)| {
                    let mut e = unit(i);
                    e[j] += 1;
                    g.derivative(&e)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Weighted {
                f: g,
                grads,
                hess,
                block: d,
                power,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut lower = 0.0f64;
    for w in &weighted {
        for seed in w.seeds() {
            lower = lower.max(w.value(&seed));
        }
    }
    let mut upper = 0.0f64;
    for w in &weighted {
        upper = upper.max(w.branch_and_bound(&mut lower, gap));
    }
    Ok(NormBracket {
        lower,
        upper: upper.max(lower),
    })
}

struct Weighted<'a> {
    f: &'a TestFunction,
    grads: Vec<TestFunction>,
    /// Second derivatives `∂_i∂_j f` for `i ≤ j`, row by row.
    hess: Vec<TestFunction>,
    block: usize,
    power: f64,
}

struct NormCell {
    lo: Vec<f64>,
    hi: Vec<f64>,
    upper: f64,
}

impl PartialEq for NormCell {
    fn eq(&self, other: &Self) -> bool {
        self.upper == other.upper
    }
}
impl Eq for NormCell {}
impl PartialOrd for NormCell {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for NormCell {
    fn cmp(&self, other: &Self) -> Ordering {
        self.upper.total_cmp(&other.upper)
    }
}

impl Weighted<'_> {
    fn weight(&self, x: &[f64]) -> f64 {
        x.chunks(self.block)
            .map(|b| (1.0 + b.iter().map(|v| v * v).sum::<f64>()).powf(self.power))
            .product()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.f.eval(x).norm() * self.weight(x)
    }

    fn seeds(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.f.dim()]];
        out.extend(self.f.terms().iter().map(|t| t.center.clone()));
        out
    }

    fn weight_max(&self, lo: &[f64], hi: &[f64]) -> f64 {
        lo.chunks(self.block)
            .zip(hi.chunks(self.block))
            .map(|(l, h)| {
                (1.0 + l
                    .iter()
                    .zip(h)
                    .map(|(a, b)| (a * a).max(b * b))
                    .sum::<f64>())
                .powf(self.power)
            })
            .product()
    }

    /// Bounds on the squared weight `A = ∏_l (1+|x_l|²)^{2p}` over the cell:
    /// `sup A`, `sup|∂_i A|` and `sup|∂_i∂_j A|`.
    fn squared_weight_bounds(&self, lo: &[f64], hi: &[f64]) -> (f64, Vec<f64>, Mat<f64>) {
        let dim = lo.len();
        let pw = 2.0 * self.power;
        let blocks = dim / self.block;
        let (mut far, mut near) = (vec![0.0; blocks], vec![0.0; blocks]);
        for i in 0..dim {
            let l = i / self.block;
            far[l] += (lo[i] * lo[i]).max(hi[i] * hi[i]);
            near[l] += if lo[i] <= 0.0 && hi[i] >= 0.0 {
                0.0
            } else {
                (lo[i] * lo[i]).min(hi[i] * hi[i])
            };
        }
        let pow = |l: usize, e: f64| {
            if e >= 0.0 {
                (1.0 + far[l]).powf(e)
            } else {
                (1.0 + near[l]).powf(e)
            }
        };
        let amax: Vec<f64> = (0..blocks).map(|l| pow(l, pw)).collect();
        let others = |skip: &[usize]| -> f64 {
            (0..blocks)
                .filter(|l| !skip.contains(l))
                .map(|l| amax[l])
                .product()
        };
        let xmax: Vec<f64> = (0..dim).map(|i| lo[i].abs().max(hi[i].abs())).collect();
        let d1: Vec<f64> = (0..dim)
            .map(|i| 2.0 * pw * xmax[i] * pow(i / self.block, pw - 1.0))
            .collect();
        let grad: Vec<f64> = (0..dim)
            .map(|i| d1[i] * others(&[i / self.block]))
            .collect();
        let hess = Mat::from_fn(dim, dim, |i, j| {
            let (li, lj) = (i / self.block, j / self.block);
            if li == lj {
                let diag = if i == j {
                    2.0 * pw * pow(li, pw - 1.0)
                } else {
                    0.0
                };
                let cross = 4.0 * pw * (pw - 1.0).abs() * xmax[i] * xmax[j] * pow(li, pw - 2.0);
                (diag + cross) * others(&[li])
            } else {
                d1[i] * d1[j] * others(&[li, lj])
            }
        });
        (others(&[]), grad, hess)
    }

    /// Upper bound of `|g|` on the cell from per-term Gaussian and polynomial maxima.
    fn body_bound(g: &TestFunction, lo: &[f64], hi: &[f64]) -> f64 {
        let half: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (b - a)).collect();
        g.terms()
            .iter()
            .map(|t| {
                let mut q = 0.0;
                for i in 0..lo.len() {
                    let dist = (lo[i] - t.center[i]).max(t.center[i] - hi[i]).max(0.0);
                    q += dist * dist / (t.widths[i] * t.widths[i]);
                }
                let gauss = (-0.5 * q).exp();
                if gauss == 0.0 {
                    return 0.0;
                }
                // |P(u + δ)| ≤ Σ |c_β| ∏ (|u_i| + h_i)^{β_i} for |δ_i| ≤ h_i.
                let poly: f64 = t
                    .poly
                    .terms()
                    .map(|(beta, coef)| {
                        let mut m = coef.norm();
                        for (i, &e) in beta.iter().enumerate() {
                            if e > 0 {
                                let u = (0.5 * (lo[i] + hi[i]) - t.center[i]).abs();
                                m *= (u + half[i]).powi(e as i32);
                            }
                        }
                        m
                    })
                    .sum();
                gauss * poly
            })
            .sum()
    }

    /// The smaller of the product bound and a second-order bound on
    /// `G = w²|f|²`: `G(c) + Σ h_i |∂_iG(c)| + ½ Σ h_i h_j sup|∂_i∂_jG|`.
    fn cell_upper(&self, lo: &[f64], hi: &[f64], at_center: f64) -> f64 {
        let dim = lo.len();
        let fmax = Self::body_bound(self.f, lo, hi);
        let crude = self.weight_max(lo, hi) * fmax;
        if crude <= at_center {
            return crude.max(at_center);
        }
        let c: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let h: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (b - a)).collect();
        // Exact value and gradient of G at the center.
        let fc = self.f.eval(&c);
        let ac = self.weight(&c).powi(2);
        let b0 = fc.norm_sqr();
        let mut first = 0.0;
        for i in 0..dim {
            let l = i / self.block;
            let r2: f64 = c[l * self.block..(l + 1) * self.block]
                .iter()
                .map(|v| v * v)
                .sum();
            let a_i = ac * 4.0 * self.power * c[i] / (1.0 + r2);
            let b_i = 2.0 * (fc.conj() * self.grads[i].eval(&c)).re;
            first += h[i] * (a_i * b0 + ac * b_i).abs();
        }
        // Second derivatives over the cell.
        let (amax, agrad, ahess) = self.squared_weight_bounds(lo, hi);
        let gmax: Vec<f64> = self
            .grads
            .iter()
            .map(|g| Self::body_bound(g, lo, hi))
            .collect();
        let mut second = 0.0;
        let mut k = 0;
        for i in 0..dim {
            for j in i..dim {
                let hij = Self::body_bound(&self.hess[k], lo, hi);
                k += 1;
                let b_ij = 2.0 * (gmax[i] * gmax[j] + fmax * hij);
                let m = ahess[(i, j)] * fmax * fmax
                    + agrad[i] * 2.0 * fmax * gmax[j]
                    + agrad[j] * 2.0 * fmax * gmax[i]
                    + amax * b_ij;
                second += if i == j { 0.5 } else { 1.0 } * h[i] * h[j] * m;
            }
        }
        crude.min((ac * b0 + first + second).sqrt())
    }

    /// Bound on the weighted function outside `bounding_box(spread)`: half of
    /// the Gaussian exponent gives `e^{−S²/4}`, the other half absorbs the
    /// weight and the polynomial through `sup ρ^q e^{−ρ²/4W²} = (2qW²/e)^{q/2}`.
    fn tail(&self, spread: f64) -> f64 {
        let p = self.power;
        let kp = 2f64.powf(p - 1.0).max(1.0);
        let m = |q: f64, w: f64| {
            if q == 0.0 {
                1.0
            } else {
                (2.0 * q * w * w / std::f64::consts::E).powf(0.5 * q)
            }
        };
        let blocks = self.f.dim() / self.block;
        let sum: f64 = self
            .f
            .terms()
            .iter()
            .map(|t| {
                t.poly
                    .terms()
                    .map(|(beta, c)| {
                        c.norm()
                            * (0..blocks)
                                .map(|l| {
                                    let r = l * self.block..(l + 1) * self.block;
                                    let a = 1.0
                                        + 2.0
                                            * t.center[r.clone()]
                                                .iter()
                                                .map(|v| v * v)
                                                .sum::<f64>();
                                    let w = t.widths[r.clone()].iter().cloned().fold(0.0, f64::max);
                                    let q = beta[r].iter().sum::<u32>() as f64;
                                    kp * (a.powf(p) * m(q, w) + 2f64.powf(p) * m(q + 2.0 * p, w))
                                })
                                .product::<f64>()
                    })
                    .sum::<f64>()
            })
            .sum();
        (-0.25 * spread * spread).exp() * sum
    }

    fn branch_and_bound(&self, lower: &mut f64, gap: f64) -> f64 {
        let mut spread = 3.0;
        while spread < 60.0 && self.tail(spread) > 1e-3 * *lower {
            spread += 0.5;
        }
        let tail = self.tail(spread);
        let (lo, hi) = self.f.bounding_box(spread);
        let scale: Vec<f64> = (0..lo.len())
            .map(|i| {
                self.f
                    .terms()
                    .iter()
                    .map(|t| t.widths[i])
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let mut heap = BinaryHeap::new();
        let center: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let at_center = self.value(&center);
        *lower = lower.max(at_center);
        heap.push(NormCell {
            upper: self.cell_upper(&lo, &hi, at_center),
            lo,
            hi,
        });
        let mut visited = 0;
        while let Some(top) = heap.peek() {
            if top.upper <= *lower * (1.0 + gap) || visited >= NORM_CELL_BUDGET {
                return top.upper.max(*lower).max(tail);
            }
            let cell = heap.pop().expect("peeked");
            visited += 1;
            let axis = (0..cell.lo.len())
                .max_by(|&a, &b| {
                    ((cell.hi[a] - cell.lo[a]) / scale[a])
                        .total_cmp(&((cell.hi[b] - cell.lo[b]) / scale[b]))
                })
                .expect("non-empty cell");
            let mid = 0.5 * (cell.lo[axis] + cell.hi[axis]);
            for (l, h) in [(cell.lo[axis], mid), (mid, cell.hi[axis])] {
                let mut clo = cell.lo.clone();
                let mut chi = cell.hi.clone();
                clo[axis] = l;
                chi[axis] = h;
                let center: Vec<f64> = clo.iter().zip(&chi).map(|(a, b)| 0.5 * (a + b)).collect();
                let at_center = self.value(&center);
                *lower = lower.max(at_center);
                let upper = self.cell_upper(&clo, &chi, at_center);
                if upper > *lower {
                    heap.push(NormCell {
                        lo: clo,
                        hi: chi,
                        upper,
                    });
                }
            }
        }
        lower.max(tail)
    }
}

// ---------------------------------------------------------------------------
// Bounding integrals
// ---------------------------------------------------------------------------

/// Parameter grids for the sup estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundGrid {
    /// Points per axis on the coarse pass; the fine pass halves the spacing.
    pub points_per_axis: usize,
    /// Initial half-width of the parameter box.
    pub half_width: f64,
    /// Box doublings allowed while the maximum sits on the boundary.
    pub max_expansions: usize,
    /// Relative tolerance of the one-dimensional integrals.
    pub rel_tol: f64,
    /// Allowed relative change between the coarse and fine passes.
    pub stability: f64,
    /// Splitting exponent `γ` of the analytic ceiling for the mixed integral.
    pub gamma: f64,
}

impl Default for BoundGrid {
    fn default() -> Self {
        Self {
            points_per_axis: 11,
            half_width: 10.0,
            max_expansions: 2,
            rel_tol: 1e-7,
            stability: 0.02,
            gamma: 0.25,
        }
    }
}

impl BoundGrid {
    pub fn validate(&self) -> Result<()> {
        let ok = self.points_per_axis >= 2
            && self.half_width > 0.0
            && self.rel_tol > 0.0
            && self.stability > 0.0
            && self.gamma > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid bound grid {self:?}")))
        }
    }

    fn tolerance(&self) -> Tolerance {
        Tolerance::new(1e-14, self.rel_tol)
    }
}

/// A grid maximum with its refinement record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupEstimate {
    pub value: f64,
    pub argmax: Vec<f64>,
    /// Extent of the final box (half-width, or upper end for one-sided boxes).
    pub extent: f64,
    /// Coarse and fine maxima of every box that was examined.
    pub history: Vec<f64>,
    /// `(fine − coarse)/fine` on the final box.
    pub refinement_change: f64,
    pub stable: bool,
}

struct Pass {
    coarse: f64,
    fine: f64,
    index: Vec<usize>,
    point: Vec<f64>,
}

/// Maximum over the coarse grid and the grid with half the spacing. `keep`
/// selects the fine-grid indices that must be evaluated (symmetry reduction).
fn two_pass_sup<F>(
    f: &F,
    lo: &[f64],
    hi: &[f64],
    pts: usize,
    keep: &(dyn Fn(&[usize]) -> bool + Sync),
) -> Result<Pass>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let dims = lo.len();
    let fine = 2 * pts - 1;
    let total = fine.pow(dims as u32);
    let indices: Vec<Vec<usize>> = (0..total)
        .map(|mut flat| {
            (0..dims)
                .map(|_| {
                    let i = flat % fine;
                    flat /= fine;
                    i
                })
                .collect::<Vec<_>>()
        })
        .filter(|idx| keep(idx))
        .collect();
    let point = |idx: &[usize]| -> Vec<f64> {
        idx.iter()
            .enumerate()
            .map(|(a, &i)| lo[a] + (hi[a] - lo[a]) * i as f64 / (fine - 1) as f64)
            .collect()
    };
    let values: Vec<f64> = indices
        .par_iter()
        .map(|idx| f(&point(idx)))
        .collect::<Result<_>>()?;
    let mut coarse = f64::NEG_INFINITY;
    let mut best = f64::NEG_INFINITY;
    let mut best_idx = 0;
    for (n, (idx, &v)) in indices.iter().zip(&values).enumerate() {
        if !v.is_finite() {
            return Err(Error::Tolerance {
                tol: 0.0,
                residual: f64::INFINITY,
            });
        }
        if v > best {
            best = v;
            best_idx = n;
        }
        if idx.iter().all(|i| i % 2 == 0) {
            coarse = coarse.max(v);
        }
    }
    Ok(Pass {
        coarse,
        fine: best,
        point: point(&indices[best_idx]),
        index: indices[best_idx].clone(),
    })
}

impl SupEstimate {
    fn from_pass(pass: &Pass, extent: f64, history: Vec<f64>, stability: f64) -> Self {
        let change = if pass.fine > 0.0 {
            (pass.fine - pass.coarse) / pass.fine
        } else {
            0.0
        };
        Self {
            value: pass.fine,
            argmax: pass.point.clone(),
            extent,
            history,
            refinement_change: change,
            stable: change <= stability,
        }
    }
}

/// `∫ f` over ℝ with tanh-sinh pieces between the sorted breakpoints and
/// Gauss–Kronrod tails. `f` may be singular at the points of `singular`;
/// `smooth` marks features (peaks) and is dropped near singular points.
/// Convergence is judged on the summed error against the total.
fn line_integral(
    f: impl Fn(f64) -> f64,
    singular: &[f64],
    smooth: &[f64],
    tol: Tolerance,
) -> Estimate<f64> {
    let mut pts: Vec<f64> = singular.to_vec();
    pts.extend(
        smooth
            .iter()
            .filter(|s| singular.iter().all(|p| (*s - p).abs() > 0.5)),
    );
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let lo = pts[0] - 1.0;
    let hi = pts[pts.len() - 1] + 1.0;
    pts.insert(0, lo);
    pts.push(hi);
    let body = tanh_sinh_pieces(&f, &pts, tol);
    let right = gauss_kronrod_half_line(&f, hi, tol);
    let left = gauss_kronrod_half_line(|x| f(-x), -lo, tol);
    let value = body.value + right.value + left.value;
    let error = body.error + right.error + left.error;
    Estimate {
        value,
        error,
        converged: (body.converged && right.converged && left.converged)
            || error <= tol.abs.max(tol.rel * value.abs()),
    }
}

/// Area of the unit sphere in `ℝ^m`, `m ≤ 3`.
fn sphere_area(m: usize) -> f64 {
    match m {
        1 => 2.0,
        2 => 2.0 * PI,
        _ => 4.0 * PI,
    }
}

/// `∫_{ℝ^{d−1}} (1+|k⃗|²)^{−(d−1)} dk⃗`.
pub fn spatial_factor(d: usize) -> Result<f64> {
    if !(2..=4).contains(&d) {
        return Err(Error::Domain(format!("dimension {d} outside 2..=4")));
    }
    let m = d - 1;
    let est = gauss_kronrod_half_line(
        |r| r.powi(m as i32 - 1) * (1.0 + r * r).powi(-(m as i32)),
        0.0,
        Tolerance::new(1e-15, 1e-12),
    )
    .require(1e-12)?;
    Ok(sphere_area(m) * est.value)
}

/// `∫_ℝ |k² − ω²|^{−α} / (1+k²) dk`.
pub fn energy_integral(omega: f64, alpha: f64, tol: Tolerance) -> Result<f64> {
    let est = line_integral(
        |k| ((k * k - omega * omega).abs()).powf(-alpha) / (1.0 + k * k),
        &[-omega, omega],
        &[0.0],
        tol,
    );
    Ok(est.require(tol.rel)?.value)
}

/// `∫_ℝ |x|^{−α} |x+t|^{−α} / (1 + (x+a)²) dx`.
pub fn mixed_inner(t: f64, a: f64, alpha: f64, tol: Tolerance) -> Result<f64> {
    let est = line_integral(
        |x| x.abs().powf(-alpha) * (x + t).abs().powf(-alpha) / (1.0 + (x + a) * (x + a)),
        &[0.0, -t],
        &[-a],
        tol,
    );
    Ok(est.require(tol.rel)?.value)
}

/// `∬ |x y (x+y+c)|^{−α} / ((1+(x+a)²)(1+(y+b)²)) dx dy`.
pub fn mixed_integral(a: f64, b: f64, c: f64, alpha: f64, tol: Tolerance) -> Result<f64> {
    let inner_ok = Cell::new(true);
    let est = line_integral(
        |y| {
            let t = y + c;
            let inner = line_integral(
                |x| x.abs().powf(-alpha) * (x + t).abs().powf(-alpha) / (1.0 + (x + a) * (x + a)),
                &[0.0, -t],
                &[-a],
                tol,
            );
            if !inner.converged {
                inner_ok.set(false);
            }
            y.abs().powf(-alpha) * inner.value / (1.0 + (y + b) * (y + b))
        },
        &[0.0, -c],
        &[-b],
        tol,
    );
    if !inner_ok.get() {
        return Err(Error::Tolerance {
            tol: tol.rel,
            residual: f64::NAN,
        });
    }
    Ok(est.require(tol.rel)?.value)
}

/// Analytic ceiling for the mixed sup from splitting `|k|^{−α}` at `γ`:
/// `C₁(2/(1−α)+π) + C₂(4/(1−α−γ)+2π)`.
pub fn mixed_ceiling(alpha: f64, gamma: f64) -> Result<f64> {
    if !(1.0 - alpha - gamma > 0.0 && 1.0 + gamma - 2.0 * alpha > 0.0) {
        return Err(Error::Domain(format!(
            "splitting exponent {gamma} unusable at α = {alpha}"
        )));
    }
    let c1 = 2.0 * PI / (0.5 * PI * alpha).cos();
    let e = 1.0 + gamma - 2.0 * alpha;
    let c2 = 2f64.powf(1.0 - gamma) * (1.0 + 2f64.powf(e)) / e;
    Ok(c1 * (2.0 / (1.0 - alpha) + PI) + c2 * (4.0 / (1.0 - alpha - gamma) + 2.0 * PI))
}

/// The factors of the per-order constant, shared by every `n ≥ 3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarBoundFactors {
    pub d: usize,
    pub alpha: f64,
    pub m0: f64,
    /// `∫ dk⃗ (1+|k⃗|²)^{−(d−1)}`.
    pub spatial: f64,
    /// `sup_{ω ≥ m₀} ∫ |k²−ω²|^{−α}/(1+k²) dk`.
    pub energy: SupEstimate,
    /// `sup_{a,b,c}` of [`mixed_integral`].
    pub mixed: SupEstimate,
    /// `8 m₀^{−3α}` times the mixed sup.
    pub third: f64,
    /// Analytic ceiling of the mixed sup.
    pub ceiling: f64,
}

impl ScalarBoundFactors {
    /// `a_n = n|c_n| 2^{n−1} (2π)^{d−dn/2} F₁^{n−1} F₂^{n−3} F₃`.
    pub fn a_n(&self, n: usize, c_n: f64) -> Result<f64> {
        if n < 3 {
            return Err(Error::Domain("the factor form of a_n needs n ≥ 3".into()));
        }
        for s in [&self.energy, &self.mixed] {
            if !s.stable {
                return Err(Error::Tolerance {
                    tol: 0.0,
                    residual: s.refinement_change,
                });
            }
        }
        let d = self.d as f64;
        let nf = n as f64;
        Ok(nf
            * c_n.abs()
            * 2f64.powi(n as i32 - 1)
            * (2.0 * PI).powf(d - d * nf / 2.0)
            * self.spatial.powi(n as i32 - 1)
            * self.energy.value.powi(n as i32 - 3)
            * self.third)
    }
}

fn check_model_params(d: usize, alpha: f64, m0: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 0.5) {
        return Err(Error::Domain(format!("α = {alpha} outside (0, ½]")));
    }
    if !(m0 > 0.0 && m0.is_finite()) {
        return Err(Error::Domain(format!("mass {m0} must be positive")));
    }
    if !(2..=4).contains(&d) {
        return Err(Error::Domain(format!("dimension {d} outside 2..=4")));
    }
    Ok(())
}

/// Energy sup over `ω ∈ [m₀, Ω]`; `Ω` doubles until the tail bound
/// `Ω^{−α}·2(2/(1−α)+π)` for `ω ≥ Ω` is below the grid maximum.
pub fn energy_sup(alpha: f64, m0: f64, grid: &BoundGrid) -> Result<SupEstimate> {
    grid.validate()?;
    let tol = grid.tolerance();
    let f = |w: &[f64]| energy_integral(w[0], alpha, tol);
    let tail = |omega: f64| omega.powf(-alpha) * 2.0 * (2.0 / (1.0 - alpha) + PI);
    let mut span = grid.half_width;
    let mut history = Vec::new();
    for _ in 0..40 {
        let top = m0 + span;
        let pass = two_pass_sup(&f, &[m0], &[top], grid.points_per_axis, &|_| true)?;
        history.extend([pass.coarse, pass.fine]);
        if tail(top) <= pass.fine {
            return Ok(SupEstimate::from_pass(&pass, top, history, grid.stability));
        }
        span *= 2.0;
    }
    Err(Error::Tolerance {
        tol: 0.0,
        residual: tail(m0 + span),
    })
}

/// Sup of [`mixed_integral`] over a cube in `(a,b,c)`, evaluated on one
/// representative per orbit of `(a,b,c) ↦ (b,a,c)` and `(a,b,c) ↦ −(a,b,c)`.
/// The cube doubles while the maximum lies on its boundary.
pub fn mixed_sup(alpha: f64, grid: &BoundGrid) -> Result<SupEstimate> {
    grid.validate()?;
    let tol = grid.tolerance();
    let f = |p: &[f64]| mixed_integral(p[0], p[1], p[2], alpha, tol);
    let fine = 2 * grid.points_per_axis - 1;
    let keep = move |idx: &[usize]| {
        let (i, j, k) = (idx[0], idx[1], idx[2]);
        let r = |v: usize| fine - 1 - v;
        let orbit = [(i, j, k), (j, i, k), (r(i), r(j), r(k)), (r(j), r(i), r(k))];
        orbit.iter().all(|o| (i, j, k) <= *o)
    };
    let mut half = grid.half_width;
    let mut history = Vec::new();
    for expansion in 0..=grid.max_expansions {
        let pass = two_pass_sup(&f, &[-half; 3], &[half; 3], grid.points_per_axis, &keep)?;
        history.extend([pass.coarse, pass.fine]);
        let on_boundary = pass.index.iter().any(|&i| i == 0 || i == fine - 1);
        if !on_boundary || expansion == grid.max_expansions {
            return Ok(SupEstimate::from_pass(&pass, half, history, grid.stability));
        }
        half *= 2.0;
    }
    unreachable!("the loop returns on its last iteration")
}

pub fn scalar_bound_factors(
    d: usize,
    alpha: f64,
    m0: f64,
    grid: &BoundGrid,
) -> Result<ScalarBoundFactors> {
    check_model_params(d, alpha, m0)?;
    let spatial = spatial_factor(d)?;
    let energy = energy_sup(alpha, m0, grid)?;
    let mixed = mixed_sup(alpha, grid)?;
    let ceiling = mixed_ceiling(alpha, grid.gamma)?;
    Ok(ScalarBoundFactors {
        d,
        alpha,
        m0,
        spatial,
        third: 8.0 * m0.powf(-3.0 * alpha) * mixed.value,
        energy,
        mixed,
        ceiling,
    })
}

/// `a_1 = |c₁| m₀^{−2α} (2π)^{d/2}`.
pub fn a_one(model: &ScalarWightman) -> Result<f64> {
    Ok(model.levy.cumulant(1)?.abs()
        * model.m0.powf(-2.0 * model.alpha)
        * (2.0 * PI).powf(model.d as f64 / 2.0))
}

/// Constant of the two-point bound with `K = 0`, `N = 2d`.
///
/// At `α = ½`: `2π|c₂| ∫ dk⃗ (1+ω²+|k⃗|²)^{−2d}/(2ω)`. Otherwise
/// `4|c₂| ∫ |k²−m₀²|^{−2α} (1+|k|²)^{−d} dk`.
pub fn a_two(model: &ScalarWightman, grid: &BoundGrid) -> Result<f64> {
    let c2 = model.levy.cumulant(2)?.abs();
    if c2 == 0.0 {
        return Ok(0.0);
    }
    let d = model.d;
    let m2 = model.m0 * model.m0;
    let tol = grid.tolerance();
    let radial = if model.alpha == 0.5 {
        gauss_kronrod_half_line(
            |r| {
                let w2 = r * r + m2;
                r.powi(d as i32 - 2) * (1.0 + w2 + r * r).powi(-2 * d as i32) / (2.0 * w2.sqrt())
            },
            0.0,
            tol,
        )
        .require(tol.rel)?
        .value
            * 2.0
            * PI
    } else {
        let inner_ok = Cell::new(true);
        let v = gauss_kronrod_half_line(
            |r| {
                let w = (r * r + m2).sqrt();
                let e = line_integral(
                    |k0| {
                        (k0 * k0 - w * w).abs().powf(-2.0 * model.alpha)
                            * (1.0 + k0 * k0 + r * r).powi(-(d as i32))
                    },
                    &[-w, w],
                    &[],
                    tol,
                );
                if !e.converged {
                    inner_ok.set(false);
                }
                r.powi(d as i32 - 2) * e.value
            },
            0.0,
            tol,
        )
        .require(tol.rel)?
        .value;
        if !inner_ok.get() {
            return Err(Error::Tolerance {
                tol: tol.rel,
                residual: f64::NAN,
            });
        }
        4.0 * v
    };
    Ok(c2 * sphere_area(d - 1) * radial)
}

/// The constant `a_n` of `|Ŵ^T_n(φ)| ≤ a_n ‖φ‖_{0,2d}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarBound {
    pub n: usize,
    pub a_n: f64,
    /// Present when the singular integrals were needed (`n ≥ 3`, `c_n ≠ 0`).
    pub factors: Option<ScalarBoundFactors>,
}

pub fn bound_integral_scalar(
    n: usize,
    model: &ScalarWightman,
    grid: &BoundGrid,
) -> Result<ScalarBound> {
    let a_n = match n {
        0 => return Err(Error::Domain("orders start at 1".into())),
        1 => a_one(model)?,
        2 => a_two(model, grid)?,
        _ => {
            let c_n = model.levy.cumulant(n as u32)?;
            if c_n == 0.0 {
                0.0
            } else {
                let factors = scalar_bound_factors(model.d, model.alpha, model.m0, grid)?;
                let a_n = factors.a_n(n, c_n)?;
                return Ok(ScalarBound {
                    n,
                    a_n,
                    factors: Some(factors),
                });
            }
        }
    };
    Ok(ScalarBound {
        n,
        a_n,
        factors: None,
    })
}

/// Constants `Ĉ^n_j` of `|M^n_j(φ)| ≤ Ĉ ‖φ‖_{0,3}` in three dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorBound {
    pub n: usize,
    pub j: usize,
    /// `∫ |k⃗|^{−γ} (1+|k⃗|²)^{−3/2} dk⃗` for `γ = 1, 2`.
    pub radial: [f64; 2],
    /// `sup_a⃗` of [`vector_mixed`].
    pub mixed: SupEstimate,
    /// Analytic ceiling `4π²` of the mixed sup.
    pub ceiling: f64,
    pub constant: f64,
}

/// `∫ |k⃗|^{−γ} (1+|k⃗|²)^{−3/2} dk⃗` over ℝ³.
pub fn vector_radial(gamma: f64) -> Result<f64> {
    let est = gauss_kronrod_half_line(
        |l| l.powf(2.0 - gamma) * (1.0 + l * l).powf(-1.5),
        0.0,
        Tolerance::new(1e-15, 1e-12),
    )
    .require(1e-12)?;
    Ok(4.0 * PI * est.value)
}

/// The mixed factor as a function of `|a⃗|`:
/// `(2π/c) ∫_c^∞ [g(u+c) − g(u−c)] du` with `g(t) = t/√(1+t²)` and
/// `c = |a⃗|/2`; at `a⃗ = 0` it is `4π`.
pub fn vector_mixed(a: f64) -> Result<f64> {
    let c = 0.5 * a.abs();
    // g(x) − g(y) = (x² − y²)/((x√(1+y²) + y√(1+x²)) √(1+x²) √(1+y²)), x,y = u ± c
    let integrand = |u: f64| {
        let (x, y) = (u + c, u - c);
        let (sx, sy) = ((1.0 + x * x).sqrt(), (1.0 + y * y).sqrt());
        u / ((x * sy + y * sx) * sx * sy)
    };
    let est = gauss_kronrod_half_line(integrand, c, Tolerance::new(1e-15, 1e-12)).require(1e-12)?;
    Ok(8.0 * PI * est.value)
}

pub fn bound_integral_vector(n: usize, j: usize, grid: &BoundGrid) -> Result<VectorBound> {
    if n < 3 || j > n {
        return Err(Error::Domain(format!(
            "vector bound needs n ≥ 3 and j ≤ n (got n = {n}, j = {j})"
        )));
    }
    grid.validate()?;
    let radial = [vector_radial(1.0)?, vector_radial(2.0)?];
    let f = |p: &[f64]| vector_mixed(p[0]);
    let mut top = grid.half_width;
    let mut history = Vec::new();
    let mixed = loop {
        let pass = two_pass_sup(&f, &[0.0], &[top], grid.points_per_axis, &|_| true)?;
        history.extend([pass.coarse, pass.fine]);
        let at_edge = pass.index[0] == 2 * grid.points_per_axis - 2;
        if !at_edge || history.len() > 2 * grid.max_expansions {
            break SupEstimate::from_pass(&pass, top, history, grid.stability);
        }
        top *= 2.0;
    };
    let radial_part = if j == 0 || j == n {
        radial[0].powi(n as i32 - 3) * radial[1]
    } else {
        radial[0].powi(n as i32 - 2)
    };
    let constant =
        (2.0 * PI).powi(3 - n as i32) * 2f64.powi(-(n as i32)) * radial_part * mixed.value;
    Ok(VectorBound {
        n,
        j,
        radial,
        mixed,
        ceiling: 4.0 * PI * PI,
        constant,
    })
}

// ---------------------------------------------------------------------------
// Constant chain
// ---------------------------------------------------------------------------

/// `b_n = Σ_{partitions of n} ∏_blocks a_{|B|}` and
/// `c_n = max(max_{j ≤ 2n} b_j, 1)`, stored from `n = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantChain {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl ConstantChain {
    /// `b_n`, with `b_0 = 1`.
    pub fn b(&self, n: usize) -> f64 {
        if n == 0 {
            1.0
        } else {
            self.b[n - 1]
        }
    }

    /// `c_n`, with `c_0 = 1` for the vacuum.
    pub fn c(&self, n: usize) -> f64 {
        if n == 0 {
            1.0
        } else {
            self.c[n - 1]
        }
    }
}

pub fn constant_chain(a: &[f64]) -> Result<ConstantChain> {
    if let Some(bad) = a.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::Domain(format!(
            "bound constant {bad} must be finite and nonnegative"
        )));
    }
    let mut b = Vec::with_capacity(a.len());
    for n in 1..=a.len() {
        let sum = enumerate_partitions(n)?
            .iter()
            .map(|p| {
                p.blocks()
                    .iter()
                    .map(|blk| a[blk.len() - 1])
                    .product::<f64>()
            })
            .sum();
        b.push(sum);
    }
    let c = majorizing_constants(&b);
    Ok(ConstantChain {
        a: a.to_vec(),
        b,
        c,
    })
}

/// `c_n = max(max_{j ≤ min(2n, len)} b_j, 1)`.
pub fn majorizing_constants(b: &[f64]) -> Vec<f64> {
    (1..=b.len())
        .map(|n| {
            b[..(2 * n).min(b.len())]
                .iter()
                .cloned()
                .fold(1.0, f64::max)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Gram realizations
// ---------------------------------------------------------------------------

/// A Borchers monomial `f_1 ⊗ … ⊗ f_m` of one-particle momentum functions.
pub type Monomial = Vec<TestFunction>;

const HERMITICITY_GUARD: f64 = 1e-8;
const KERNEL_TOL: f64 = 1e-10;
const MAX_MONOMIAL_DEGREE: usize = 3;

/// Hermitian form `W` and candidate majorant `P` on a finite family.
#[derive(Debug, Clone, PartialEq)]
pub struct GramPair {
    w: CMat,
    p: CMat,
    labels: Vec<Monomial>,
}

pub type CMat = Mat<Complex64>;

fn max_abs(m: &CMat) -> f64 {
    let mut out = 0.0f64;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            out = out.max(m[(i, j)].norm());
        }
    }
    out
}

fn adj(m: &CMat) -> CMat {
    m.adjoint().to_owned()
}

fn hermitian_part(m: &CMat) -> CMat {
    CMat::from_fn(m.nrows(), m.ncols(), |i, j| {
        (m[(i, j)] + m[(j, i)].conj()) * 0.5
    })
}

fn check_hermitian(m: &CMat) -> Result<()> {
    let asym = max_abs(&(m - adj(m)));
    if asym > HERMITICITY_GUARD * max_abs(m).max(1.0) {
        return Err(Error::Hermiticity(asym));
    }
    Ok(())
}

impl GramPair {
    /// Labels may be empty; otherwise there is one per row.
    pub fn new(w: CMat, p: CMat, labels: Vec<Monomial>) -> Result<Self> {
        let n = w.nrows();
        if w.ncols() != n
            || p.nrows() != n
            || p.ncols() != n
            || (!labels.is_empty() && labels.len() != n)
        {
            return Err(Error::Shape(
                "W, P and labels must agree in dimension".into(),
            ));
        }
        check_hermitian(&w)?;
        check_hermitian(&p)?;
        Ok(Self {
            w: hermitian_part(&w),
            p: hermitian_part(&p),
            labels,
        })
    }

    pub fn w(&self) -> &CMat {
        &self.w
    }

    pub fn p(&self) -> &CMat {
        &self.p
    }

    pub fn labels(&self) -> &[Monomial] {
        &self.labels
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }
}

/// Eigenvalues (ascending) and orthonormal eigenvectors of the Hermitian part.
fn hermitian_eigen(m: &CMat) -> Result<(Vec<f64>, CMat)> {
    if m.nrows() == 0 {
        return Ok((Vec::new(), CMat::zeros(0, 0)));
    }
    let e = hermitian_part(m)
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Singular(format!("Hermitian eigendecomposition failed: {e:?}")))?;
    let s = e.S();
    Ok(((0..m.nrows()).map(|k| s[k].re).collect(), e.U().to_owned()))
}

fn spectral_function(values: &[f64], vectors: &CMat, f: impl Fn(f64) -> f64) -> CMat {
    let fv: Vec<f64> = values.iter().map(|&v| f(v)).collect();
    let scaled = CMat::from_fn(vectors.nrows(), vectors.ncols(), |i, k| {
        vectors[(i, k)] * fv[k]
    });
    &scaled * adj(vectors)
}

fn spectral_norm(m: &CMat) -> Result<f64> {
    Ok(hermitian_eigen(m)?
        .0
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max))
}

/// `(P^{1/2}, P^{−1/2})`, or the smallest eigenvalue when `P` is not positive.
fn majorant_roots(p: &CMat) -> Result<(CMat, CMat)> {
    let (vals, vecs) = hermitian_eigen(p)?;
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(Error::InvalidMajorant(min));
    }
    Ok((
        spectral_function(&vals, &vecs, f64::sqrt),
        spectral_function(&vals, &vecs, |v| 1.0 / v.sqrt()),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Majorization {
    /// `‖P^{−1/2} W P^{−1/2}‖`.
    pub ratio: f64,
    pub pass: bool,
}

pub fn majorization_check(g: &GramPair) -> Result<Majorization> {
    if g.dim() == 0 {
        return Ok(Majorization {
            ratio: 0.0,
            pass: true,
        });
    }
    let (_, inv_root) = majorant_roots(&g.p)?;
    let ratio = spectral_norm(&(&inv_root * &g.w * &inv_root))?;
    Ok(Majorization {
        ratio,
        pass: ratio <= 1.0 + 1e-10,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KreinResult {
    /// `T_K = sign T` on the complement of `ker T`, in the basis `complement`.
    pub t: CMat,
    /// `T = P^{−1/2} W P^{−1/2}`.
    pub metric: CMat,
    /// Orthonormal columns spanning the complement of `ker T`.
    pub complement: CMat,
    pub degenerate_dim: usize,
    /// `‖T‖ ‖T^{−1}‖` on the complement.
    pub spectral_norm_ratio: f64,
    /// `‖T_K² − I‖`.
    pub square_defect: f64,
    /// `max |W − P^{1/2} Q |T|^{1/2} T_K |T|^{1/2} Q* P^{1/2}|`, relative to `max(1, max|W|)`.
    pub reconstruction_error: f64,
    /// Majorization ratio of `W` against `P_K = P^{1/2}|T|P^{1/2}` on the complement.
    pub remajorization_ratio: f64,
}

pub fn krein_reduce(g: &GramPair) -> Result<KreinResult> {
    let m = majorization_check(g)?;
    if !m.pass {
        return Err(Error::Precondition(format!(
            "majorization ratio {} exceeds 1",
            m.ratio
        )));
    }
    let dim = g.dim();
    let (root, inv_root) = majorant_roots(&g.p)?;
    let metric = hermitian_part(&(&inv_root * &g.w * &inv_root));
    let (vals, vecs) = hermitian_eigen(&metric)?;
    let kept: Vec<usize> = (0..dim).filter(|&i| vals[i].abs() > KERNEL_TOL).collect();
    let r = kept.len();
    let q = CMat::from_fn(dim, r, |i, c| vecs[(i, kept[c])]);
    let reduced = hermitian_part(&(adj(&q) * &metric * &q));
    let (mu, u) = hermitian_eigen(&reduced)?;
    let t = spectral_function(&mu, &u, f64::signum);
    let abs = spectral_function(&mu, &u, f64::abs);
    let abs_root = spectral_function(&mu, &u, |v| v.abs().sqrt());
    let square_defect = if r == 0 {
        0.0
    } else {
        spectral_norm(&(&t * &t - CMat::identity(r, r)))?
    };
    let rebuilt = &root * &q * &abs_root * &t * &abs_root * adj(&q) * &root;
    let reconstruction_error = max_abs(&(&g.w - rebuilt)) / max_abs(&g.w).max(1.0);
    let remajorization_ratio = if r == 0 {
        1.0
    } else {
        let coords = &inv_root * &q;
        let p_k = &root * &q * &abs * adj(&q) * &root;
        let w_r = adj(&coords) * &g.w * &coords;
        let p_r = adj(&coords) * p_k * &coords;
        majorization_check(&GramPair::new(w_r, p_r, Vec::new())?)?.ratio
    };
    let spectral_norm_ratio = if r == 0 {
        1.0
    } else {
        let big = mu.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let small = mu.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
        big / small
    };
    Ok(KreinResult {
        t,
        metric,
        complement: q,
        degenerate_dim: dim - r,
        spectral_norm_ratio,
        square_defect,
        reconstruction_error,
        remajorization_ratio,
    })
}

/// Full Wightman values of monomials from the truncated ones, with a cache
/// keyed by the ordered factor sequence.
pub struct MonomialWightman<'a> {
    model: &'a ScalarWightman,
    quad: HyperplaneQuadrature,
    registry: Vec<TestFunction>,
    cache: HashMap<Vec<usize>, (Complex64, f64)>,
}

impl<'a> MonomialWightman<'a> {
    pub fn new(model: &'a ScalarWightman, quad: HyperplaneQuadrature) -> Self {
        Self {
            model,
            quad,
            registry: Vec::new(),
            cache: HashMap::new(),
        }
    }

    fn id(&mut self, f: &TestFunction) -> Result<usize> {
        if f.dim() != self.model.d {
            return Err(Error::Shape(format!(
                "monomial factor of dimension {} in d = {}",
                f.dim(),
                self.model.d
            )));
        }
        if let Some(i) = self.registry.iter().position(|g| g == f) {
            return Ok(i);
        }
        self.registry.push(f.clone());
        Ok(self.registry.len() - 1)
    }

    /// `Ŵ^T_m(f_1 ⊗ … ⊗ f_m)` and its quadrature tolerance.
    pub fn truncated(&mut self, factors: &[TestFunction]) -> Result<(Complex64, f64)> {
        let ids = factors
            .iter()
            .map(|f| self.id(f))
            .collect::<Result<Vec<_>>>()?;
        self.truncated_ids(&ids)
    }

    fn truncated_ids(&mut self, ids: &[usize]) -> Result<(Complex64, f64)> {
        if let Some(&v) = self.cache.get(ids) {
            return Ok(v);
        }
        let value = match ids.len() {
            0 => (Complex64::new(1.0, 0.0), 0.0),
            1 => (w_hat_one_point(self.model, &self.registry[ids[0]])?, 0.0),
            _ => {
                let joint =
                    TensorProduct::new(ids.iter().map(|&i| self.registry[i].clone()).collect())?
                        .to_joint();
                let e = w_hat_trunc_scalar(self.model, &joint, &self.quad)?;
                (e.value, e.tolerance)
            }
        };
        self.cache.insert(ids.to_vec(), value);
        Ok(value)
    }

    /// `Ŵ_m(f_1 ⊗ … ⊗ f_m) = Σ_partitions ∏_blocks Ŵ^T`, with the tolerance
    /// propagated as `∏(|v|+e) − ∏|v|`.
    pub fn full(&mut self, factors: &[TestFunction]) -> Result<(Complex64, f64)> {
        if factors.is_empty() {
            return Ok((Complex64::new(1.0, 0.0), 0.0));
        }
        let ids = factors
            .iter()
            .map(|f| self.id(f))
            .collect::<Result<Vec<_>>>()?;
        let mut value = Complex64::new(0.0, 0.0);
        let mut tolerance = 0.0;
        for p in enumerate_partitions(ids.len())? {
            let mut v = Complex64::new(1.0, 0.0);
            let mut hi = 1.0;
            let mut mag = 1.0;
            for block in p.blocks() {
                let sub: Vec<usize> = block.iter().map(|&i| ids[i - 1]).collect();
                let (bv, be) = self.truncated_ids(&sub)?;
                v *= bv;
                hi *= bv.norm() + be;
                mag *= bv.norm();
            }
            value += v;
            tolerance += hi - mag;
        }
        Ok((value, tolerance))
    }
}

/// `F* = f_m* ⊗ … ⊗ f_1*` with `f*(k) = conj f(−k)`.
pub fn star(m: &[TestFunction], d: usize) -> Result<Monomial> {
    m.iter().rev().map(|f| adjoint(f, d)).collect()
}

/// `p̂(F) = c_m ∏ ‖f_i‖_{0,2d}` for a monomial of degree `m`.
pub fn monomial_seminorm(m: &[TestFunction], chain: &ConstantChain, d: usize) -> Result<f64> {
    let mut norm = chain.c(m.len());
    for f in m {
        norm *= schwartz_norm(f, d, SchwartzNormSpec::certification(d))?.upper;
    }
    Ok(norm)
}

/// `W_ij = W(F_i* ⊗ F_j)` and `P = D·diag(p_i²)` for a basis of `D`
/// monomials. The factor `D` makes `P` dominate `W` whenever every entry obeys
/// `|W_ij| ≤ p_i p_j`.
pub fn build_gram_pair(
    model: &ScalarWightman,
    basis: &[Monomial],
    seminorms: &[f64],
    quad: &HyperplaneQuadrature,
) -> Result<GramPair> {
    let mut eval = MonomialWightman::new(model, *quad);
    build_gram_pair_with(&mut eval, basis, seminorms)
}

fn build_gram_pair_with(
    eval: &mut MonomialWightman,
    basis: &[Monomial],
    seminorms: &[f64],
) -> Result<GramPair> {
    let dim = basis.len();
    if seminorms.len() != dim {
        return Err(Error::Shape("one seminorm per basis element".into()));
    }
    if let Some(m) = basis.iter().find(|m| m.len() > MAX_MONOMIAL_DEGREE) {
        return Err(Error::SizeLimit {
            what: "monomial degree",
            value: m.len(),
            max: MAX_MONOMIAL_DEGREE,
        });
    }
    if let Some(p) = seminorms.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
        return Err(Error::InvalidMajorant(*p));
    }
    let d = eval.model.d;
    let stars = basis
        .iter()
        .map(|m| star(m, d))
        .collect::<Result<Vec<_>>>()?;
    let mut w = CMat::zeros(dim, dim);
    let mut tol = Mat::<f64>::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            let mut seq = stars[i].clone();
            seq.extend(basis[j].iter().cloned());
            let (v, e) = eval.full(&seq)?;
            w[(i, j)] = v;
            tol[(i, j)] = e;
        }
    }
    for i in 0..dim {
        for j in 0..i {
            let asym = (w[(i, j)] - w[(j, i)].conj()).norm();
            let guard = HERMITICITY_GUARD * w[(i, j)].norm().max(1.0) + tol[(i, j)] + tol[(j, i)];
            if asym > guard {
                return Err(Error::Hermiticity(asym));
            }
        }
        if w[(i, i)].im.abs() > HERMITICITY_GUARD * w[(i, i)].norm().max(1.0) + tol[(i, i)] {
            return Err(Error::Hermiticity(w[(i, i)].im.abs()));
        }
    }
    let p = CMat::from_fn(dim, dim, |i, j| {
        if i == j {
            Complex64::new(dim as f64 * seminorms[i] * seminorms[i], 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    Ok(GramPair {
        w: hermitian_part(&w),
        p,
        labels: basis.to_vec(),
    })
}

/// Outcome of a randomized search for a negative direction of `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeSearch {
    /// True only when the smallest eigenvalue is below minus its error bound.
    pub found: bool,
    pub min_eigenvalue: f64,
    /// Frobenius norm of the entry tolerances of the witness matrix.
    pub error_bound: f64,
    pub basis: Vec<Monomial>,
    pub trials: usize,
}

/// Draws `trials` random subsets of `subset_size` candidates and reports the
/// most negative Gram eigenvalue seen. `found = false` means no negative
/// direction was certified, not that `W` is positive.
pub fn search_negative_direction(
    model: &ScalarWightman,
    candidates: &[Monomial],
    subset_size: usize,
    trials: usize,
    seed: u64,
    quad: &HyperplaneQuadrature,
) -> Result<NegativeSearch> {
    if subset_size == 0 || subset_size > candidates.len() {
        return Err(Error::Domain(format!(
            "subset size {subset_size} with {} candidates",
            candidates.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut eval = MonomialWightman::new(model, *quad);
    let d = model.d;
    let mut best = NegativeSearch {
        found: false,
        min_eigenvalue: f64::INFINITY,
        error_bound: 0.0,
        basis: Vec::new(),
        trials,
    };
    for _ in 0..trials {
        let picks = sample(&mut rng, candidates.len(), subset_size).into_vec();
        let basis: Vec<Monomial> = picks.iter().map(|&i| candidates[i].clone()).collect();
        let stars = basis
            .iter()
            .map(|m| star(m, d))
            .collect::<Result<Vec<_>>>()?;
        let mut w = CMat::zeros(subset_size, subset_size);
        let mut err2 = 0.0;
        for i in 0..subset_size {
            for j in 0..subset_size {
                let mut seq = stars[i].clone();
                seq.extend(basis[j].iter().cloned());
                let (v, e) = eval.full(&seq)?;
                w[(i, j)] = v;
                err2 += e * e;
            }
        }
        let min = hermitian_eigen(&w)?
            .0
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        if min < best.min_eigenvalue {
            best.min_eigenvalue = min;
            best.error_bound = err2.sqrt();
            best.basis = basis;
        }
    }
    best.found = best.min_eigenvalue < -best.error_bound;
    Ok(best)
}

// ---------------------------------------------------------------------------
// Certificate
// ---------------------------------------------------------------------------

/// Test functions checked by [`hssc_certify`].
#[derive(Debug, Clone, Default)]
pub struct CertifyFamily {
    /// `by_order[n−1]` holds functions on `ℝ^{dn}`.
    pub by_order: Vec<Vec<TestFunction>>,
    /// Pairs `(φ, η)` of monomials for `|W(φ* ⊗ η)| ≤ p̂(φ) p̂(η)`.
    pub pairs: Vec<(Monomial, Monomial)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderReport {
    pub n: usize,
    pub a_n: f64,
    pub checked: usize,
    /// `1 − (|Ŵ^T_n(φ)| + tol)/(a_n ‖φ‖)`, minimized over the family.
    pub worst_margin: f64,
    pub worst_index: Option<usize>,
    pub margins: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub index: usize,
    pub m: usize,
    pub n: usize,
    /// `|W_{m+n}(φ* ⊗ η)|`.
    pub full: f64,
    /// `p̂_m(φ) p̂_n(η)`.
    pub bound: f64,
    /// `|Ŵ^T_{m+n}(φ* ⊗ η)|`.
    pub truncated: f64,
    /// `b_{m+n} ‖φ‖ ‖η‖`.
    pub truncated_bound: f64,
    pub margin: f64,
    pub truncated_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub d: usize,
    pub alpha: f64,
    pub m0: f64,
    pub n_max: usize,
    pub norm: SchwartzNormSpec,
    pub chain: ConstantChain,
    pub factors: Option<ScalarBoundFactors>,
    pub orders: Vec<OrderReport>,
    pub pairs: Vec<PairReport>,
    pub worst_margin: f64,
    pub pass: bool,
    pub witness: Option<String>,
    pub scope: String,
}

fn margin(value: f64, tolerance: f64, bound: f64) -> f64 {
    if bound > 0.0 {
        1.0 - (value + tolerance) / bound
    } else if value + tolerance == 0.0 {
        1.0
    } else {
        f64::NEG_INFINITY
    }
}

/// `a_1..a_{n_max}`, with the shared singular factors when some `n ≥ 3` has
/// `c_n ≠ 0`.
pub fn bound_constants(
    model: &ScalarWightman,
    n_max: usize,
    grid: &BoundGrid,
) -> Result<(Vec<f64>, Option<ScalarBoundFactors>)> {
    let mut factors: Option<ScalarBoundFactors> = None;
    let mut a = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let a_n = match n {
            1 => a_one(model)?,
            2 => a_two(model, grid)?,
            _ => {
                let c_n = model.levy.cumulant(n as u32)?;
                if c_n == 0.0 {
                    0.0
                } else {
                    if factors.is_none() {
                        factors = Some(scalar_bound_factors(model.d, model.alpha, model.m0, grid)?);
                    }
                    factors.as_ref().expect("computed above").a_n(n, c_n)?
                }
            }
        };
        a.push(a_n);
    }
    Ok((a, factors))
}

fn lower_norm_product(m: &[TestFunction], d: usize) -> Result<f64> {
    m.iter().try_fold(1.0, |acc, f| {
        Ok(acc * schwartz_norm(f, d, SchwartzNormSpec::certification(d))?.lower)
    })
}

/// Computes `a_1..a_{n_max}`, the chain `b, c`, and checks every function
/// and pair of `family` against the resulting bounds.
pub fn hssc_certify(
    model: &ScalarWightman,
    n_max: usize,
    family: &CertifyFamily,
    grid: &BoundGrid,
    quad: &HyperplaneQuadrature,
) -> Result<Certificate> {
    if n_max == 0 || family.by_order.len() > n_max {
        return Err(Error::Domain(format!(
            "n_max = {n_max} does not cover the family"
        )));
    }
    if let Some((p, q)) = family.pairs.iter().find(|(p, q)| p.len() + q.len() > n_max) {
        return Err(Error::Domain(format!(
            "pair of degrees {} + {} exceeds n_max",
            p.len(),
            q.len()
        )));
    }
    let d = model.d;
    let spec = SchwartzNormSpec::certification(d);
    let (a, factors) = bound_constants(model, n_max, grid)?;
    let chain = constant_chain(&a)?;
    let mut witness = None;
    let mut worst = f64::INFINITY;

    let mut orders = Vec::new();
    for (i, fns) in family.by_order.iter().enumerate() {
        let n = i + 1;
        let mut report = OrderReport {
            n,
            a_n: a[i],
            checked: fns.len(),
            worst_margin: f64::INFINITY,
            worst_index: None,
            margins: Vec::with_capacity(fns.len()),
        };
        for (k, phi) in fns.iter().enumerate() {
            if phi.dim() != n * d {
                return Err(Error::Shape(format!(
                    "order-{n} function has dimension {}",
                    phi.dim()
                )));
            }
            let (v, tol) = if n == 1 {
                (w_hat_one_point(model, phi)?, 0.0)
            } else {
                let e = w_hat_trunc_scalar(model, phi, quad)?;
                (e.value, e.tolerance)
            };
            // The lower end of the bracket keeps the bound conservative.
            let norm = schwartz_norm(phi, d, spec)?.lower;
            let mg = margin(v.norm(), tol, a[i] * norm);
            report.margins.push(mg);
            if mg < report.worst_margin {
                report.worst_margin = mg;
                report.worst_index = Some(k);
            }
        }
        if report.worst_margin < worst {
            worst = report.worst_margin;
            if worst < 0.0 {
                witness = report
                    .worst_index
                    .map(|k| format!("order {n}, function {k}"));
            }
        }
        orders.push(report);
    }

    let mut eval = MonomialWightman::new(model, *quad);
    let mut pairs = Vec::new();
    for (index, (phi, eta)) in family.pairs.iter().enumerate() {
        let (m, n) = (phi.len(), eta.len());
        let norm_phi = lower_norm_product(phi, d)?;
        let norm_eta = lower_norm_product(eta, d)?;
        let mut seq = star(phi, d)?;
        seq.extend(eta.iter().cloned());
        let (full, full_tol) = eval.full(&seq)?;
        let (trunc, trunc_tol) = if seq.is_empty() {
            (Complex64::new(0.0, 0.0), 0.0)
        } else {
            eval.truncated(&seq)?
        };
        let bound = chain.c(m) * chain.c(n) * norm_phi * norm_eta;
        let truncated_bound = if seq.is_empty() {
            1.0
        } else {
            chain.b(m + n) * norm_phi * norm_eta
        };
        let report = PairReport {
            index,
            m,
            n,
            full: full.norm(),
            bound,
            truncated: trunc.norm(),
            truncated_bound,
            margin: margin(full.norm(), full_tol, bound),
            truncated_margin: margin(trunc.norm(), trunc_tol, truncated_bound),
        };
        let mg = report.margin.min(report.truncated_margin);
        if mg < worst {
            worst = mg;
            if worst < 0.0 {
                witness = Some(format!("pair {index} (degrees {m}, {n})"));
            }
        }
        pairs.push(report);
    }
    let pass = worst >= 0.0;
    Ok(Certificate {
        d,
        alpha: model.alpha,
        m0: model.m0,
        n_max,
        norm: spec,
        chain,
        factors,
        orders,
        pairs,
        worst_margin: worst,
        pass,
        witness: if pass { None } else { witness },
        scope: "bounds hold on the listed functions and pairs; the Hilbert structure is certified on their finite span only"
            .into(),
    })
}

/// Largest `n ≤ n_max` with `c_n ≠ 0`, or 0.
pub fn highest_active_order(levy: &LevyTriple, n_max: usize) -> Result<usize> {
    let mut top = 0;
    for n in 1..=n_max {
        if levy.cumulant(n as u32)? != 0.0 {
            top = n;
        }
    }
    Ok(top)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::Atom;
    use crate::testfn::Polynomial;
    use proptest::prelude::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn unit_gaussian_norm() {
        let phi = TestFunction::gaussian(&[0.0], 1.0).unwrap();
        let b = schwartz_norm(&phi, 1, SchwartzNormSpec { k: 0, n: 0 }).unwrap();
        assert!(
            b.lower <= 1.0 && b.upper >= 1.0 && b.relative_width() <= 0.01,
            "{b:?}"
        );
    }

    fn bumpy() -> TestFunction {
        let p =
            Polynomial::from_terms([(vec![1, 0], c(1.0)), (vec![0, 2], Complex64::new(0.0, 0.5))]);
        TestFunction::anisotropic(&[0.4, -0.2], &[0.8, 0.6])
            .unwrap()
            .with_polynomial(p)
            .unwrap()
            .with_frequency(&[1.0, 0.3])
            .unwrap()
            .plus(
                &TestFunction::gaussian(&[-1.0, 0.5], 0.5)
                    .unwrap()
                    .scaled(c(-0.7)),
            )
            .unwrap()
    }

    #[test]
    fn norm_brackets_a_dense_grid_maximum() {
        let phi = bumpy();
        let spec = SchwartzNormSpec { k: 0, n: 4 };
        let b = schwartz_norm(&phi, 2, spec).unwrap();
        let w = Weighted {
            f: &phi,
            grads: vec![],
            hess: vec![],
            block: 2,
            power: 2.0,
        };
        let mut grid_max = 0.0f64;
        let steps = 800;
        for i in 0..=steps {
            for j in 0..=steps {
                let x = [
                    -6.0 + 12.0 * i as f64 / steps as f64,
                    -6.0 + 12.0 * j as f64 / steps as f64,
                ];
                grid_max = grid_max.max(w.value(&x));
            }
        }
        assert!(grid_max <= b.upper, "{grid_max} vs {b:?}");
        assert!(b.lower <= grid_max * 1.001, "{grid_max} vs {b:?}");
        assert!(b.relative_width() <= 0.01, "{b:?}");
    }

    #[test]
    fn tail_bound_dominates_outside_the_box() {
        let phi = bumpy();
        let w = Weighted {
            f: &phi,
            grads: vec![],
            hess: vec![],
            block: 2,
            power: 2.0,
        };
        let spread = 3.0;
        let tail = w.tail(spread);
        let (lo, hi) = phi.bounding_box(spread);
        for i in 0..400 {
            let t = i as f64 * 0.05;
            let x = [hi[0] + t * 0.3, lo[1] + 2.0 * (t * 1.3).sin()];
            let y = [lo[0] - t * 0.2, hi[1] + t];
            assert!(w.value(&x) <= tail && w.value(&y) <= tail);
        }
    }

    #[test]
    fn norm_of_tensor_products_factorizes() {
        let phi = TestFunction::anisotropic(&[0.3, -0.5], &[0.7, 1.1])
            .unwrap()
            .with_frequency(&[0.5, 0.0])
            .unwrap();
        let eta = TestFunction::gaussian(&[-0.8, 0.2], 0.6)
            .unwrap()
            .with_polynomial(Polynomial::from_terms([(vec![1, 1], c(2.0))]))
            .unwrap();
        let spec = SchwartzNormSpec::certification(2);
        let a = schwartz_norm(&phi, 2, spec).unwrap();
        let b = schwartz_norm(&eta, 2, spec).unwrap();
        // An extra zero term forces the joint branch and bound.
        let joint = TensorProduct::new(vec![phi.clone(), eta.clone()])
            .unwrap()
            .to_joint()
            .plus(
                &TestFunction::gaussian(&[0.0; 4], 1.0)
                    .unwrap()
                    .scaled(c(0.0)),
            )
            .unwrap();
        let j = schwartz_norm(&joint, 2, spec).unwrap();
        assert!(
            j.lower <= a.upper * b.upper && a.lower * b.lower <= j.upper,
            "{j:?} {a:?} {b:?}"
        );
        // The joint search runs out of cells before the 1% gap; the bracket stays valid.
        assert!(j.relative_width() <= 0.05);
    }

    #[test]
    fn higher_norms_dominate() {
        let phi = bumpy();
        let low = schwartz_norm(&phi, 2, SchwartzNormSpec { k: 0, n: 0 }).unwrap();
        let high = schwartz_norm(&phi, 2, SchwartzNormSpec { k: 1, n: 2 }).unwrap();
        assert!(low.lower <= high.upper && low.upper <= high.upper * 1.01);
    }

    #[test]
    fn spatial_factor_closed_forms() {
        assert!((spatial_factor(2).unwrap() - PI).abs() < 1e-10);
        assert!((spatial_factor(3).unwrap() - PI).abs() < 1e-10);
        assert!((spatial_factor(4).unwrap() - PI * PI / 4.0).abs() < 1e-10);
        assert!(spatial_factor(5).is_err());
    }

    #[test]
    fn energy_integral_respects_its_tail_bound() {
        let tol = Tolerance::new(1e-14, 1e-9);
        for alpha in [0.2, 0.5] {
            let mut prev = f64::INFINITY;
            for omega in [1.0, 2.0, 5.0, 20.0, 80.0] {
                let v = energy_integral(omega, alpha, tol).unwrap();
                let tail = omega.powf(-alpha) * 2.0 * (2.0 / (1.0 - alpha) + PI);
                assert!(v <= tail && v < prev, "α={alpha} ω={omega}: {v}");
                prev = v;
            }
        }
        let s = energy_sup(0.5, 1.0, &BoundGrid::default()).unwrap();
        assert_eq!(s.argmax, vec![1.0]);
        assert!(s.stable);
    }

    #[test]
    fn mixed_integral_symmetries_and_far_regime() {
        let tol = Tolerance::new(1e-14, 1e-9);
        let v = mixed_integral(0.7, -1.2, 0.4, 0.5, tol).unwrap();
        let swapped = mixed_integral(-1.2, 0.7, 0.4, 0.5, tol).unwrap();
        let negated = mixed_integral(-0.7, 1.2, -0.4, 0.5, tol).unwrap();
        assert!((v - swapped).abs() < 1e-7 * v && (v - negated).abs() < 1e-7 * v);
        // For |t| ≥ 2 the inner integral stays below 2∫|x|^{−α}/(1+x²) = 2π/cos(πα/2).
        for alpha in [0.25, 0.5] {
            let cap = 2.0 * PI / (0.5 * PI * alpha).cos();
            for t in [2.0, -3.0, 10.0, 40.0] {
                for a in [0.0, 1.0, -t, 5.0] {
                    assert!(mixed_inner(t, a, alpha, tol).unwrap() <= cap);
                }
            }
        }
    }

    #[test]
    fn coarse_mixed_sup_is_below_the_ceiling() {
        let grid = BoundGrid {
            points_per_axis: 3,
            half_width: 2.0,
            ..Default::default()
        };
        let s = mixed_sup(0.5, &grid).unwrap();
        let ceiling = mixed_ceiling(0.5, 0.25).unwrap();
        assert!((ceiling - 391.66).abs() < 0.1, "{ceiling}");
        assert!(s.value.is_finite() && s.value < ceiling);
        assert!(s.history.windows(2).step_by(2).all(|w| w[1] >= w[0]));
        assert_eq!(s.argmax, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn vector_factors() {
        for gamma in [1.0, 2.0] {
            assert!((vector_radial(gamma).unwrap() - 4.0 * PI).abs() < 1e-9);
        }
        for a in [0.01, 0.5, 3.0, 40.0] {
            let c = 0.5 * a;
            let closed = 2.0 * PI / c * (1.0 + 2.0 * c - (1.0 + 4.0 * c * c).sqrt());
            assert!((vector_mixed(a).unwrap() - closed).abs() < 1e-9 * closed);
        }
        for j in [0, 1, 3] {
            let v = bound_integral_vector(3, j, &BoundGrid::default()).unwrap();
            assert!((v.constant - 2.0 * PI * PI).abs() < 1e-8, "{v:?}");
            assert!(v.mixed.value <= v.ceiling);
        }
        assert!(bound_integral_vector(2, 0, &BoundGrid::default()).is_err());
        assert!(bound_integral_vector(3, 4, &BoundGrid::default()).is_err());
    }

    #[test]
    fn chain_of_unit_constants_counts_partitions() {
        let chain = constant_chain(&[1.0; 6]).unwrap();
        assert_eq!(chain.b, vec![1.0, 2.0, 5.0, 15.0, 52.0, 203.0]);
        assert_eq!(majorizing_constants(&[1.0, 2.0, 3.0, 4.0])[0], 2.0);
        assert!(constant_chain(&[1.0, -1.0]).is_err());
        assert!(constant_chain(&[1.0; 13]).is_err());
    }

    proptest! {
        #[test]
        fn chain_majorizes_sums(a in proptest::collection::vec(0.0f64..3.0, 1..9)) {
            let chain = constant_chain(&a).unwrap();
            // b_n = Σ_k C(n−1, k−1) a_k b_{n−k}
            let mut b = vec![1.0];
            for n in 1..=a.len() {
                let mut binom = 1.0;
                let mut s = 0.0;
                for k in 1..=n {
                    s += binom * a[k - 1] * b[n - k];
                    binom *= (n - k) as f64 / k as f64;
                }
                b.push(s);
            }
            for n in 1..=a.len() {
                prop_assert!((chain.b(n) - b[n]).abs() <= 1e-12 * b[n].max(1.0));
                prop_assert!(chain.c(n) >= 1.0 && chain.c(n) >= chain.c(n - 1));
                for m in 0..=a.len() - n {
                    prop_assert!(chain.b(m + n) <= chain.c(m) * chain.c(n) * (1.0 + 1e-12));
                }
            }
        }
    }

    fn scaled(m: &CMat, s: f64) -> CMat {
        CMat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * s)
    }

    fn diag(v: &[f64]) -> CMat {
        CMat::from_fn(
            v.len(),
            v.len(),
            |i, j| if i == j { c(v[i]) } else { c(0.0) },
        )
    }

    #[test]
    fn majorization_examples() {
        let p = diag(&[2.0, 1.0, 3.0]);
        let same =
            majorization_check(&GramPair::new(p.clone(), p.clone(), vec![]).unwrap()).unwrap();
        assert!((same.ratio - 1.0).abs() < 1e-12 && same.pass);
        let signed = majorization_check(
            &GramPair::new(diag(&[1.0, -1.0]), diag(&[1.0, 1.0]), vec![]).unwrap(),
        )
        .unwrap();
        assert!((signed.ratio - 1.0).abs() < 1e-12 && signed.pass);
        let double =
            majorization_check(&GramPair::new(scaled(&p, 2.0), p.clone(), vec![]).unwrap())
                .unwrap();
        assert!((double.ratio - 2.0).abs() < 1e-12 && !double.pass);
        let bad = GramPair::new(diag(&[1.0, 1.0]), diag(&[1.0, -0.5]), vec![]).unwrap();
        assert!(matches!(
            majorization_check(&bad),
            Err(Error::InvalidMajorant(_))
        ));
        let mut skew = diag(&[1.0, 1.0]);
        skew[(0, 1)] = c(0.5);
        assert!(matches!(
            GramPair::new(skew, diag(&[1.0, 1.0]), vec![]),
            Err(Error::Hermiticity(_))
        ));
        assert!(krein_reduce(&GramPair::new(scaled(&p, 2.0), p, vec![]).unwrap()).is_err());
    }

    #[test]
    fn krein_examples() {
        let p = diag(&[2.0, 1.0, 3.0]);
        let k = krein_reduce(&GramPair::new(p.clone(), p, vec![]).unwrap()).unwrap();
        assert_eq!(k.degenerate_dim, 0);
        assert!(max_abs(&(&k.t - CMat::identity(3, 3))) < 1e-12);
        let k =
            krein_reduce(&GramPair::new(diag(&[1.0, -1.0, 0.0]), diag(&[1.0; 3]), vec![]).unwrap())
                .unwrap();
        assert_eq!(k.degenerate_dim, 1);
        let mut signs = hermitian_eigen(&k.t).unwrap().0;
        signs.sort_by(f64::total_cmp);
        assert!((signs[0] + 1.0).abs() < 1e-12 && (signs[1] - 1.0).abs() < 1e-12);
        assert!(k.reconstruction_error < 1e-12);
    }

    fn random_matrix(dim: usize, seed: u64) -> CMat {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CMat::from_fn(dim, dim, |_, _| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn krein_on_random_majorized_pairs(dim in 1usize..9, rank in 0usize..9, seed in any::<u64>()) {
            let a = random_matrix(dim, seed);
            let p = &a * adj(&a) + scaled(&CMat::identity(dim, dim), 0.1);
            let b = random_matrix(dim, seed ^ 0x5eed);
            let mut w = hermitian_part(&b);
            // Remove part of the spectrum to create a kernel.
            let (vals, vecs) = hermitian_eigen(&w).unwrap();
            let keep = rank.min(dim);
            w = spectral_function(&vals, &vecs, |v| v) - {
                let cut: Vec<f64> = vals.iter().enumerate().map(|(i, &v)| if i < dim - keep { v } else { 0.0 }).collect();
                spectral_function(&cut, &vecs, |v| v)
            };
            let (root, _) = majorant_roots(&p).unwrap();
            w = &root * w * &root;
            let ratio = majorization_check(&GramPair::new(w.clone(), p.clone(), vec![]).unwrap()).unwrap().ratio;
            if ratio > 0.0 {
                w = scaled(&w, 0.9 / ratio);
            }
            let g = GramPair::new(w, p, vec![]).unwrap();
            let k = krein_reduce(&g).unwrap();
            prop_assert_eq!(k.degenerate_dim, dim - keep);
            prop_assert!(k.square_defect <= 1e-10);
            prop_assert!(k.reconstruction_error <= 1e-9);
            if keep > 0 {
                prop_assert!((k.remajorization_ratio - 1.0).abs() <= 1e-9);
            }
        }
    }

    fn gaussian_model() -> ScalarWightman {
        ScalarWightman::new(LevyTriple::gaussian(1.3).unwrap(), 2, 0.5, 1.0).unwrap()
    }

    fn shell_functions() -> Vec<TestFunction> {
        [[1.4, 0.5], [1.8, -0.9], [2.5, 1.6]]
            .iter()
            .map(|c| TestFunction::gaussian(c, 0.7).unwrap())
            .collect()
    }

    #[test]
    fn vacuum_gram_pair() {
        let g = build_gram_pair(
            &gaussian_model(),
            &[vec![]],
            &[1.0],
            &HyperplaneQuadrature::default(),
        )
        .unwrap();
        assert_eq!(g.w()[(0, 0)], c(1.0));
        assert_eq!(g.p()[(0, 0)], c(1.0));
    }

    #[test]
    fn free_gram_matrix_is_the_two_point_gram() {
        let model = gaussian_model();
        let quad = HyperplaneQuadrature {
            rel_tol: 1e-9,
            ..Default::default()
        };
        let fs = shell_functions();
        let basis: Vec<Monomial> = fs.iter().map(|f| vec![f.clone()]).collect();
        let g = build_gram_pair(&model, &basis, &[1.0; 3], &quad).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let joint = TensorProduct::new(vec![adjoint(&fs[i], 2).unwrap(), fs[j].clone()])
                    .unwrap()
                    .to_joint();
                let direct = w_hat_trunc_scalar(&model, &joint, &quad).unwrap().value;
                assert!((g.w()[(i, j)] - direct).norm() <= 1e-9 * direct.norm().max(1e-6));
            }
        }
        let min = hermitian_eigen(g.w())
            .unwrap()
            .0
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        assert!(min >= -1e-9, "{min}");
        assert!(g.w()[(0, 0)].re > 0.0);
        assert!(matches!(
            build_gram_pair(&model, &[vec![fs[0].clone(); 4]], &[1.0], &quad),
            Err(Error::SizeLimit { .. })
        ));
    }

    #[test]
    fn gaussian_certificate_passes_and_is_scale_free() {
        let model = gaussian_model();
        let quad = HyperplaneQuadrature {
            rel_tol: 1e-8,
            ..Default::default()
        };
        let fs = shell_functions();
        let family = |s: f64| CertifyFamily {
            by_order: vec![
                fs.iter().map(|f| f.clone().scaled(c(s))).collect(),
                vec![
                    TensorProduct::new(vec![adjoint(&fs[0], 2).unwrap(), fs[1].clone()])
                        .unwrap()
                        .to_joint()
                        .scaled(c(s)),
                ],
            ],
            pairs: vec![
                (
                    vec![fs[0].clone().scaled(c(s))],
                    vec![fs[1].clone().scaled(c(s))],
                ),
                (
                    vec![],
                    vec![fs[2].clone().scaled(c(s)), fs[0].clone().scaled(c(s))],
                ),
                (
                    vec![fs[0].clone().scaled(c(s))],
                    vec![fs[2].clone().scaled(c(s)), fs[1].clone().scaled(c(s))],
                ),
            ],
        };
        let cert = hssc_certify(&model, 4, &family(1.0), &BoundGrid::default(), &quad).unwrap();
        assert!(cert.pass, "{cert:?}");
        assert!(cert.factors.is_none());
        assert_eq!(cert.chain.a[0], 0.0);
        assert_eq!(&cert.chain.a[2..], &[0.0, 0.0]);
        let scaled = hssc_certify(&model, 4, &family(10.0), &BoundGrid::default(), &quad).unwrap();
        for (a, b) in cert.pairs.iter().zip(&scaled.pairs) {
            assert!(
                (a.margin - b.margin).abs() < 1e-10,
                "{} {}",
                a.margin,
                b.margin
            );
        }
        assert!(hssc_certify(&model, 2, &family(1.0), &BoundGrid::default(), &quad).is_err());
    }

    #[test]
    fn scalar_bound_orders() {
        let levy = LevyTriple::new(
            0.2,
            0.5,
            vec![Atom {
                position: 1.0,
                rate: 1.0,
            }],
        )
        .unwrap();
        let model = ScalarWightman::new(levy.clone(), 2, 0.5, 1.0).unwrap();
        let a1 = bound_integral_scalar(1, &model, &BoundGrid::default()).unwrap();
        let c1 = levy.cumulant(1).unwrap();
        assert!((a1.a_n - c1.abs() * 2.0 * PI).abs() < 1e-12);
        // At α = ½, a_2 = 2π|c₂| · 2∫ dk (1+ω²+k²)^{−4}/(2ω).
        let a2 = bound_integral_scalar(2, &model, &BoundGrid::default())
            .unwrap()
            .a_n;
        let direct = gauss_kronrod_half_line(
            |k| {
                let w2 = k * k + 1.0;
                (1.0 + w2 + k * k).powi(-4) / w2.sqrt()
            },
            0.0,
            Tolerance::new(1e-15, 1e-12),
        )
        .value;
        assert!((a2 - 2.0 * PI * 1.5 * direct).abs() < 1e-9 * a2);
        let general = ScalarWightman::new(levy, 2, 0.3, 1.0).unwrap();
        assert!(
            bound_integral_scalar(2, &general, &BoundGrid::default())
                .unwrap()
                .a_n
                > 0.0
        );
        assert!(bound_integral_scalar(0, &model, &BoundGrid::default()).is_err());
    }
}
