//! Green kernels: the fractional kernel `(−Δ + m₀²)^{−α}` on ℝ^d and the
//! four-dimensional kernels `g = 1/(4π²|x|²)` and `−∂̄g` used by the
//! quaternion-valued model.

use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{fft_nd, recenter, Lattice, LatticeField};
use crate::quad::gauss_legendre;
use crate::quaternion::Quaternion;

#[derive(Deserialize)]
struct RawGreenSpec {
    d: usize,
    alpha: f64,
    m0: f64,
}

/// Dimension, fractional power and mass of the kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGreenSpec")]
pub struct GreenSpec {
    d: usize,
    alpha: f64,
    m0: f64,
}

impl TryFrom<RawGreenSpec> for GreenSpec {
    type Error = Error;
    fn try_from(r: RawGreenSpec) -> Result<Self> {
        Self::new(r.d, r.alpha, r.m0)
    }
}

impl GreenSpec {
    pub fn new(d: usize, alpha: f64, m0: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 0.5) {
            return Err(Error::Domain(format!("alpha = {alpha} outside (0, 1/2]")));
        }
        Self::any_power(d, alpha, m0)
    }

    /// Same kernel family without the `α ≤ ½` restriction; products of kernels
    /// (e.g. `Ĝ_α² = Ĝ_{2α}`) need larger powers.
    pub(crate) fn any_power(d: usize, alpha: f64, m0: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::Domain("dimension must be positive".into()));
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::Domain(format!("alpha = {alpha} must be positive")));
        }
        if !(m0.is_finite() && m0 > 0.0) {
            return Err(Error::Domain(format!("m0 = {m0} must be positive")));
        }
        Ok(Self { d, alpha, m0 })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn m0(&self) -> f64 {
        self.m0
    }

    /// The kernel with doubled power, `Ĝ_{2α} = Ĝ_α²`.
    pub fn doubled(&self) -> Self {
        Self {
            alpha: 2.0 * self.alpha,
            ..*self
        }
    }
}

/// `(|k|² + m₀²)^{−α}`.
pub fn green_alpha_momentum(k: &[f64], spec: &GreenSpec) -> f64 {
    let k2: f64 = k.iter().map(|x| x * x).sum();
    (k2 + spec.m0 * spec.m0).powf(-spec.alpha)
}

/// Real-space lattice kernel: the inverse DFT of the symbol sampled on the
/// dual lattice. `Σ_x G(x) Δx^d` equals the zero-momentum symbol `m₀^{−2α}`.
pub fn green_alpha_lattice(lat: &Lattice, spec: &GreenSpec) -> Result<LatticeField<f64>> {
    if spec.d != lat.d() {
        return Err(Error::Config(format!(
            "kernel dimension {} on a {}-d lattice",
            spec.d,
            lat.d()
        )));
    }
    if spec.m0 * lat.extent() < 4.0 {
        return Err(Error::Config(format!(
            "lattice extent {} does not resolve mass {} (need m0·L ≥ 4)",
            lat.extent(),
            spec.m0
        )));
    }
    let n = lat.len();
    let d = lat.d();
    let mut idx = [0usize; 4];
    let mut k = [0.0f64; 4];
    let mut data: Vec<Complex64> = (0..n)
        .map(|flat| {
            lat.unflatten(flat, &mut idx[..d]);
            for a in 0..d {
                k[a] = lat.dual_momentum(idx[a]);
            }
            Complex64::new(green_alpha_momentum(&k[..d], spec), 0.0)
        })
        .collect();
    fft_nd(&mut data, &lat.dims(), true);
    let scale = 1.0 / lat.extent().powi(d as i32);
    let origin_first: Vec<f64> = data.iter().map(|z| z.re * scale).collect();
    let mut centered = recenter(&origin_first, lat);
    // The symbol is even, so the kernel is too; enforce it bit for bit.
    for s in 0..n {
        let m = lat.mirror(s);
        if m > s {
            let avg = 0.5 * (centered[s] + centered[m]);
            centered[s] = avg;
            centered[m] = avg;
        }
    }
    LatticeField::new(*lat, centered)
}

/// `g(x) = 1/(4π²|x|²)` on ℝ⁴.
pub fn g_kernel_at(x: &[f64]) -> f64 {
    let r2: f64 = x.iter().map(|v| v * v).sum();
    1.0 / (4.0 * PI * PI * r2)
}

/// `−∂̄g(x) = (x⁰ + x¹i + x²j + x³k) / (2π²|x|⁴)`.
pub fn dbar_g_at(x: &[f64]) -> Quaternion {
    let r2: f64 = x.iter().map(|v| v * v).sum();
    let s = 1.0 / (2.0 * PI * PI * r2 * r2);
    Quaternion::new(x[0] * s, x[1] * s, x[2] * s, x[3] * s)
}

/// `∫_{[−½,½]⁴} |u|^{−2} du`.
///
/// The integrand is homogeneous of degree −2, so the inner half-cube carries
/// a quarter of the total: `I = shell / (1 − ¼)`, and the shell (the 240
/// quarter-width subcells away from the centre) is smooth.
pub fn unit_cell_inverse_square_integral() -> f64 {
    static VALUE: OnceLock<f64> = OnceLock::new();
    *VALUE.get_or_init(|| shell_integral(1, 10, |r2| 1.0 / r2) / (1.0 - 0.25))
}

/// Integral of a radial function `f(|u|²)` over `[−½,½]⁴` minus the central
/// cube of side `2^{−levels}`, using `order`-point Gauss–Legendre per subcell
/// of side `1/cells` where `cells = 2^{levels+1}`.
pub(crate) fn shell_integral(levels: u32, order: usize, f: impl Fn(f64) -> f64) -> f64 {
    let cells = 1usize << (levels + 1);
    let side = 1.0 / cells as f64;
    let (x, w) = gauss_legendre(order);
    let (inner_lo, inner_hi) = (cells / 2 - 1, cells / 2 + 1);
    let mut total = 0.0;
    for c in 0..cells.pow(4) {
        let ci = [
            c / cells.pow(3),
            (c / cells.pow(2)) % cells,
            (c / cells) % cells,
            c % cells,
        ];
        if ci.iter().all(|&i| i >= inner_lo && i < inner_hi) {
            continue;
        }
        let lo: [f64; 4] = std::array::from_fn(|a| -0.5 + ci[a] as f64 * side);
        let mut acc = 0.0;
        for (i0, w0) in x.iter().zip(&w) {
            let u0 = lo[0] + 0.5 * side * (i0 + 1.0);
            for (i1, w1) in x.iter().zip(&w) {
                let u1 = lo[1] + 0.5 * side * (i1 + 1.0);
                for (i2, w2) in x.iter().zip(&w) {
                    let u2 = lo[2] + 0.5 * side * (i2 + 1.0);
                    let partial = u0 * u0 + u1 * u1 + u2 * u2;
                    let w012 = w0 * w1 * w2;
                    for (i3, w3) in x.iter().zip(&w) {
                        let u3 = lo[3] + 0.5 * side * (i3 + 1.0);
                        acc += w012 * w3 * f(partial + u3 * u3);
                    }
                }
            }
        }
        total += acc * (0.5 * side).powi(4);
    }
    total
}

fn require_4d(lat: &Lattice) -> Result<()> {
    if lat.d() != 4 {
        return Err(Error::Config(format!(
            "quaternion kernels need a 4-d lattice, got d = {}",
            lat.d()
        )));
    }
    Ok(())
}

/// Lattice sampling of `g`; the origin holds the cell average of `g`.
pub fn g_kernel(lat: &Lattice) -> Result<LatticeField<f64>> {
    require_4d(lat)?;
    let h = lat.spacing();
    let origin = lat.origin();
    let mut x = [0.0; 4];
    let values = (0..lat.len())
        .map(|s| {
            if s == origin {
                unit_cell_inverse_square_integral() / (4.0 * PI * PI * h * h)
            } else {
                lat.position(s, &mut x);
                g_kernel_at(&x)
            }
        })
        .collect();
    LatticeField::new(*lat, values)
}

/// Lattice sampling of `−∂̄g`. The kernel is odd, so its origin-cell average is
/// zero.
pub fn dbar_g_kernel(lat: &Lattice) -> Result<LatticeField<Quaternion>> {
    require_4d(lat)?;
    let origin = lat.origin();
    let mut x = [0.0; 4];
    let values = (0..lat.len())
        .map(|s| {
            if s == origin {
                Quaternion::ZERO
            } else {
                lat.position(s, &mut x);
                dbar_g_at(&x)
            }
        })
        .collect();
    LatticeField::new(*lat, values)
}
