//! Truncated Schwinger functions in closed form.
//!
//! Scalar model: `S^T_n(φ₁,…,φ_n) = c_n ∫ ∏_j (G_α∗φ_j)(x) dx`, which is the
//! pairing of `⊗φ_j` with `G^{(n)}(x₁,…,x_n) = ∫ ∏_j G_α(x − x_j) dx` without
//! ever forming the n-point kernel.
//!
//! Vector model on ℝ⁴: `g^{(2)}(y₁,y₂) = −ln|y₁ − y₂| / (8π)` and
//! `g^{(n)} = ∫ ∏_j g(x − y_j) dx` for `n ≥ 3`.

use std::f64::consts::PI;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Convolver, Padding, ScalarModel};
use crate::green::{
    g_kernel, g_kernel_at, green_alpha_lattice, shell_integral, unit_cell_inverse_square_integral,
    GreenSpec,
};
use crate::lattice::{Lattice, LatticeField};
use crate::levy::QuaternionLevyData;
use crate::quaternion::QuaternionFunction;
use crate::testfn::TestFunction;

const CHUNK: usize = 1 << 12;

/// `Σ_{i<len} f(i)` in fixed chunks, so the rounding does not depend on the
/// thread count.
fn chunked_sum(len: usize, f: impl Fn(usize) -> f64 + Sync) -> f64 {
    let partials: Vec<f64> = (0..len.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| (c * CHUNK..((c + 1) * CHUNK).min(len)).map(&f).sum())
        .collect();
    partials.iter().sum()
}

/// Per-axis site indices of a point that must sit on a lattice site within
/// the inner half of the box.
fn inner_site(lat: &Lattice, x: &[f64]) -> Result<Vec<usize>> {
    if x.len() != lat.d() {
        return Err(Error::Shape(format!(
            "point of dimension {} on a {}-d lattice",
            x.len(),
            lat.d()
        )));
    }
    let n = lat.sites_per_axis();
    x.iter()
        .map(|&c| {
            let u = c / lat.spacing();
            if (u - u.round()).abs() > 1e-9 {
                return Err(Error::Domain(format!(
                    "coordinate {c} is not on the lattice"
                )));
            }
            let offset = u.round() as i64;
            if offset.unsigned_abs() as usize >= n / 4 {
                return Err(Error::Domain(format!(
                    "coordinate {c} lies in the padding margin"
                )));
            }
            Ok((offset + (n / 2) as i64) as usize)
        })
        .collect()
}

/// `G^{(n)}(x₁,…,x_n) ≈ Σ_x ∏_j G_α(x − x_j) Δx^d`, summed over the lattice
/// doubled in every direction. Points must be lattice sites in the inner half
/// of `lat`.
pub fn g_n_scalar(points: &[Vec<f64>], spec: &GreenSpec, lat: &Lattice) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::Domain("need at least one point".into()));
    }
    let sites: Vec<Vec<usize>> = points
        .iter()
        .map(|p| inner_site(lat, p))
        .collect::<Result<_>>()?;
    let work = Padding::Doubled.work_lattice(lat)?;
    let kernel = green_alpha_lattice(&work, spec)?;
    let big = work.sites_per_axis();
    let shift = lat.sites_per_axis() / 2;
    let d = lat.d();
    let values = kernel.values();
    let sum = chunked_sum(work.len(), |flat| {
        let mut idx = [0usize; 4];
        work.unflatten(flat, &mut idx[..d]);
        let mut prod = 1.0;
        for s in &sites {
            let mut disp = [0usize; 4];
            for a in 0..d {
                // Work index of the point is s + shift; centered displacement index.
                disp[a] = (idx[a] + big + big / 2 - s[a] - shift) % big;
            }
            prod *= values[work.flatten(&disp[..d])];
        }
        prod
    });
    Ok(sum * lat.cell_volume())
}

/// `c_n Σ_x ∏_j (G_α∗φ_j)(x) Δx^d` over the sites of the model lattice, with
/// the convolutions padded as the model specifies. This is exactly the
/// expectation of the lattice Monte Carlo estimator.
pub fn s_t_eval(model: &ScalarModel, phis: &[TestFunction]) -> Result<f64> {
    let conv = model.green_convolver()?;
    let smeared = smear_all(model, &conv, phis)?;
    let c_n = model.levy.cumulant(phis.len() as u32)?;
    if c_n == 0.0 {
        return Ok(0.0);
    }
    Ok(c_n * product_sum(&smeared, model.lattice.cell_volume()))
}

/// `G_α∗φ_j` on the model lattice for every test function.
pub fn smear_all(
    model: &ScalarModel,
    conv: &Convolver,
    phis: &[TestFunction],
) -> Result<Vec<LatticeField<f64>>> {
    if phis.is_empty() {
        return Err(Error::Domain("need at least one test function".into()));
    }
    phis.iter()
        .map(|p| {
            model.check_resolvable(p)?;
            conv.apply(&model.lattice.sample_real(p)?)
        })
        .collect()
}

fn product_sum(fields: &[LatticeField<f64>], v: f64) -> f64 {
    let len = fields[0].values().len();
    chunked_sum(len, |s| {
        fields.iter().map(|f| f.values()[s]).product::<f64>()
    }) * v
}

/// `g^{(n)}(y₁,…,y_n)` of the vector model. `n = 2` uses the closed form;
/// `n ≥ 3` sums `∏_j g(x − y_j) Δx⁴` over the sites of the 4-d lattice `lat`
/// (cell-averaged `g` where `x = y_j`) and adds the far-field tail beyond the
/// box. Points must be lattice sites in the inner half of `lat`.
pub fn g_n_vector(ys: &[[f64; 4]], lat: &Lattice) -> Result<f64> {
    if ys.len() < 2 {
        return Err(Error::Domain("g^(n) is defined for n ≥ 2".into()));
    }
    for (i, a) in ys.iter().enumerate() {
        for b in &ys[i + 1..] {
            if a == b {
                return Err(Error::Singular(format!("coincident points {a:?}")));
            }
        }
    }
    if ys.len() == 2 {
        let r = dist(&ys[0], &ys[1]);
        return Ok(-r.ln() / (8.0 * PI));
    }
    if lat.d() != 4 {
        return Err(Error::Config(format!(
            "g^(n) needs a 4-d lattice, got d = {}",
            lat.d()
        )));
    }
    let sites: Vec<usize> = ys
        .iter()
        .map(|y| inner_site(lat, y).map(|i| lat.flatten(&i)))
        .collect::<Result<_>>()?;
    let h = lat.spacing();
    let at_site = unit_cell_inverse_square_integral() / (4.0 * PI * PI * h * h);
    let sum = chunked_sum(lat.len(), |s| {
        let mut x = [0.0; 4];
        lat.position(s, &mut x);
        ys.iter()
            .zip(&sites)
            .map(|(y, &site)| {
                if site == s {
                    at_site
                } else {
                    let d: [f64; 4] = std::array::from_fn(|a| x[a] - y[a]);
                    g_kernel_at(&d)
                }
            })
            .product::<f64>()
    });
    let n = ys.len();
    // Outside the box ∏ g ≈ (4π²)^{−n} |x − ȳ|^{−2n}; integrate that over the
    // complement of the cube of half-width L/2 around the centroid.
    let half = 0.5 * lat.extent();
    let tail = (4.0 * PI * PI).powi(-(n as i32))
        * half.powi(4 - 2 * n as i32)
        * outside_unit_cube(2 * n as u32);
    Ok(sum * h.powi(4) + tail)
}

fn dist(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `∫_{ℝ⁴ ∖ [−1,1]⁴} |x|^{−p} dx` for `p > 4`.
fn outside_unit_cube(p: u32) -> f64 {
    let p = p as f64;
    // [−2,2]⁴ ∖ [−1,1]⁴ is the half-width-½ shell scaled by 4; the complement
    // is the geometric sum of dyadic shells.
    let shell = shell_integral(1, 10, |r2| r2.powf(-0.5 * p)) * 4f64.powf(4.0 - p);
    shell / (1.0 - 2f64.powf(4.0 - p))
}

/// `∫_{[−½,½]⁴} ln|u| du`.
fn unit_cell_log_integral() -> f64 {
    static VALUE: OnceLock<f64> = OnceLock::new();
    // The half-size cube contributes (I − ln 2)/16.
    *VALUE.get_or_init(|| {
        (shell_integral(1, 10, |r2| 0.5 * r2.ln()) - 2f64.ln() / 16.0) / (15.0 / 16.0)
    })
}

/// Lattice sampling of `g^{(2)}(x) = −ln|x| / (8π)` with the cell average at
/// the origin.
pub fn g2_kernel(lat: &Lattice) -> Result<LatticeField<f64>> {
    if lat.d() != 4 {
        return Err(Error::Config(format!(
            "g^(2) needs a 4-d lattice, got d = {}",
            lat.d()
        )));
    }
    let h = lat.spacing();
    let origin = lat.origin();
    let mut x = [0.0; 4];
    let values = (0..lat.len())
        .map(|s| {
            if s == origin {
                -(h.ln() + unit_cell_log_integral()) / (8.0 * PI)
            } else {
                lat.position(s, &mut x);
                -(x.iter().map(|v| v * v).sum::<f64>().ln()) / (16.0 * PI)
            }
        })
        .collect();
    LatticeField::new(*lat, values)
}

/// `div φ = Σ_μ ∂_μ φ^μ`, the real part of `∂φ`.
pub fn divergence(phi: &QuaternionFunction) -> Result<TestFunction> {
    let mut acc: Option<TestFunction> = None;
    for (mu, comp) in phi.components().iter().enumerate() {
        let mut alpha = [0u32; 4];
        alpha[mu] = 1;
        let term = comp.derivative(&alpha)?;
        acc = Some(match acc {
            Some(prev) => prev.plus(&term)?,
            None => term,
        });
    }
    Ok(acc.expect("four components"))
}

/// Coefficients of a bilinear first-order operator
/// `D(φ₁⊗φ₂)(x₁,x₂) = Σ C[μ][a][ν][b] ∂_μ φ₁^a(x₁) ∂_ν φ₂^b(x₂)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairOperator {
    pub coefficients: [[[[f64; 4]; 4]; 4]; 4],
}

/// The vector model on a 4-d lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorModel {
    pub data: QuaternionLevyData,
    pub lattice: Lattice,
    #[serde(default)]
    pub padding: Padding,
    /// Required for `n = 2`; no closed form is known, so it is never defaulted.
    #[serde(default)]
    pub pair_operator: Option<PairOperator>,
}

impl VectorModel {
    fn sample(&self, f: &TestFunction) -> Result<LatticeField<f64>> {
        // Complex coefficients enter only through the real part.
        Ok(self.lattice.sample(f)?.map(|z| z.re))
    }

    fn convolver(&self, kernel: fn(&Lattice) -> Result<LatticeField<f64>>) -> Result<Convolver> {
        let work = self.padding.work_lattice(&self.lattice)?;
        Convolver::new(&kernel(&work)?, &self.lattice)
    }

    /// `⟨f₁⊗f₂, g^{(2)}⟩` on the lattice.
    fn pair_with_log(&self, conv: &Convolver, f1: &TestFunction, f2: &TestFunction) -> Result<f64> {
        let a = self.sample(f1)?;
        let b = conv.apply(&self.sample(f2)?)?;
        Ok(a.pairing(&b))
    }
}

/// Truncated Schwinger function of the vector model for `n ≥ 2`.
///
/// With jumps on the real axis only `c^n_0` survives for `n ≥ 3`, so
/// `S^T_n = c^n_0 Σ_x ∏_j (g∗div φ_j)(x) Δx⁴`. For `n = 2` the result is
/// `c₀⟨div φ₁⊗div φ₂, g^{(2)}⟩ + c⟨D(φ₁⊗φ₂), g^{(2)}⟩`, which needs the
/// model's pair operator.
pub fn s_t_vector(model: &VectorModel, phis: &[QuaternionFunction]) -> Result<f64> {
    let n = phis.len();
    if n < 2 {
        return Err(Error::Domain(
            "vector truncated functions are computed for n ≥ 2".into(),
        ));
    }
    let divs: Vec<TestFunction> = phis.iter().map(divergence).collect::<Result<_>>()?;
    if n == 2 {
        let op = model.pair_operator.as_ref().ok_or_else(|| {
            Error::Precondition("n = 2 needs the first-order pair operator coefficients".into())
        })?;
        let conv = model.convolver(g2_kernel)?;
        let mut total = model.data.c0() * model.pair_with_log(&conv, &divs[0], &divs[1])?;
        for (mu, by_a) in op.coefficients.iter().enumerate() {
            for (a, by_nu) in by_a.iter().enumerate() {
                for (nu, by_b) in by_nu.iter().enumerate() {
                    for (b, &c) in by_b.iter().enumerate() {
                        if c == 0.0 {
                            continue;
                        }
                        let mut am = [0u32; 4];
                        am[mu] = 1;
                        let mut an = [0u32; 4];
                        an[nu] = 1;
                        let f1 = phis[0].components()[a].derivative(&am)?;
                        let f2 = phis[1].components()[b].derivative(&an)?;
                        total += model.data.c() * c * model.pair_with_log(&conv, &f1, &f2)?;
                    }
                }
            }
        }
        return Ok(total);
    }
    for l in (2..=n as u32).step_by(2) {
        if model.data.c_nl(n as u32, l)? != 0.0 {
            return Err(Error::Precondition(format!(
                "c^{n}_{l} ≠ 0 needs the pair operator terms"
            )));
        }
    }
    let c = model.data.c_nl(n as u32, 0)?;
    if c == 0.0 {
        return Ok(0.0);
    }
    let conv = model.convolver(g_kernel)?;
    let smeared: Vec<LatticeField<f64>> = divs
        .iter()
        .map(|f| conv.apply(&model.sample(f)?))
        .collect::<Result<_>>()?;
    Ok(c * product_sum(&smeared, model.lattice.cell_volume()))
}
