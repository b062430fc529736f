//! Periodic hypercubic lattices, fields on them, and n-dimensional FFTs.
//!
//! Site `i` along an axis sits at `(i − n/2)·Δx`, so the origin is the site
//! with every index equal to `n/2`.

use num_complex::Complex64;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::testfn::TestFunction;

/// Upper bound on the number of sites of a single lattice.
pub const MAX_SITES: usize = 1 << 24;

#[derive(Deserialize)]
struct RawLattice {
    d: usize,
    sites_per_axis: usize,
    spacing: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLattice")]
pub struct Lattice {
    d: usize,
    sites_per_axis: usize,
    spacing: f64,
}

impl TryFrom<RawLattice> for Lattice {
    type Error = Error;
    fn try_from(r: RawLattice) -> Result<Self> {
        Self::new(r.d, r.sites_per_axis, r.spacing)
    }
}

impl Lattice {
    pub fn new(d: usize, sites_per_axis: usize, spacing: f64) -> Result<Self> {
        if d == 0 || d > 4 {
            return Err(Error::Config(format!(
                "lattice dimension {d} outside 1..=4"
            )));
        }
        if sites_per_axis < 2 || !sites_per_axis.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "sites per axis must be even and ≥ 2, got {sites_per_axis}"
            )));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::Config(format!("spacing {spacing} must be positive")));
        }
        let total = (sites_per_axis as u128).pow(d as u32);
        if total > MAX_SITES as u128 {
            return Err(Error::SizeLimit {
                what: "lattice sites",
                value: usize::try_from(total).unwrap_or(usize::MAX),
                max: MAX_SITES,
            });
        }
        Ok(Self {
            d,
            sites_per_axis,
            spacing,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn sites_per_axis(&self) -> usize {
        self.sites_per_axis
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.sites_per_axis.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Side length `n·Δx`.
    pub fn extent(&self) -> f64 {
        self.sites_per_axis as f64 * self.spacing
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.d as i32)
    }

    pub fn dims(&self) -> Vec<usize> {
        vec![self.sites_per_axis; self.d]
    }

    /// Coordinate of index `i` along any axis.
    pub fn coordinate(&self, i: usize) -> f64 {
        (i as f64 - (self.sites_per_axis / 2) as f64) * self.spacing
    }

    /// Row-major flat index (last axis fastest) to per-axis indices.
    pub fn unflatten(&self, mut flat: usize, out: &mut [usize]) {
        for a in (0..self.d).rev() {
            out[a] = flat % self.sites_per_axis;
            flat /= self.sites_per_axis;
        }
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.sites_per_axis + i)
    }

    pub fn position(&self, flat: usize, out: &mut [f64]) {
        let mut idx = [0usize; 4];
        self.unflatten(flat, &mut idx[..self.d]);
        for a in 0..self.d {
            out[a] = self.coordinate(idx[a]);
        }
    }

    /// Flat index of the site at the origin.
    pub fn origin(&self) -> usize {
        self.flatten(&vec![self.sites_per_axis / 2; self.d])
    }

    /// Flat index of the site at `−x` for the site at `x`, wrapping periodically.
    pub fn mirror(&self, flat: usize) -> usize {
        let n = self.sites_per_axis;
        let mut idx = [0usize; 4];
        self.unflatten(flat, &mut idx[..self.d]);
        for i in idx.iter_mut().take(self.d) {
            *i = (n - *i) % n;
        }
        self.flatten(&idx[..self.d])
    }

    /// Dual momentum of FFT bin `m` along an axis: `2π m / L` with `m` wrapped
    /// into `[-n/2, n/2)`.
    pub fn dual_momentum(&self, m: usize) -> f64 {
        let n = self.sites_per_axis as i64;
        let mm = m as i64;
        let signed = if mm < n / 2 { mm } else { mm - n };
        2.0 * std::f64::consts::PI * signed as f64 / self.extent()
    }

    /// Samples a test function at every site.
    pub fn sample(&self, f: &TestFunction) -> Result<LatticeField<Complex64>> {
        if f.dim() != self.d {
            return Err(Error::Shape(format!(
                "test function on ℝ^{} sampled on a {}-d lattice",
                f.dim(),
                self.d
            )));
        }
        let mut x = [0.0; 4];
        let values = (0..self.len())
            .map(|s| {
                self.position(s, &mut x);
                f.eval(&x[..self.d])
            })
            .collect();
        Ok(LatticeField {
            lattice: *self,
            values,
        })
    }

    /// Samples a real test function; fails on complex-valued input.
    pub fn sample_real(&self, f: &TestFunction) -> Result<LatticeField<f64>> {
        if !f.is_real() {
            return Err(Error::Domain("expected a real test function".into()));
        }
        let c = self.sample(f)?;
        Ok(c.map(|z| z.re))
    }
}

/// One value per lattice site.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeField<T> {
    lattice: Lattice,
    values: Vec<T>,
}

impl<T: Copy> LatticeField<T> {
    pub fn new(lattice: Lattice, values: Vec<T>) -> Result<Self> {
        if values.len() != lattice.len() {
            return Err(Error::Shape(format!(
                "{} values for {} sites",
                values.len(),
                lattice.len()
            )));
        }
        Ok(Self { lattice, values })
    }

    pub fn filled(lattice: Lattice, value: T) -> Self {
        Self {
            values: vec![value; lattice.len()],
            lattice,
        }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> LatticeField<U> {
        LatticeField {
            lattice: self.lattice,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl LatticeField<f64> {
    /// `Σ_x a(x) b(x) Δx^d`.
    pub fn pairing(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            * self.lattice.cell_volume()
    }

    pub fn to_complex(&self) -> LatticeField<Complex64> {
        self.map(|v| Complex64::new(v, 0.0))
    }
}

impl LatticeField<Complex64> {
    pub fn pairing(&self, other: &Self) -> Complex64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum::<Complex64>()
            * self.lattice.cell_volume()
    }
}

/// Planned n-dimensional DFT over row-major arrays. Plans are shareable
/// across threads; each call allocates its own scratch.
#[derive(Clone)]
pub struct FftNd {
    dims: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl std::fmt::Debug for FftNd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftNd").field("dims", &self.dims).finish()
    }
}

impl FftNd {
    pub fn new(dims: &[usize]) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            dims: dims.to_vec(),
            forward: dims.iter().map(|&n| planner.plan_fft_forward(n)).collect(),
            inverse: dims.iter().map(|&n| planner.plan_fft_inverse(n)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// In-place transform; the inverse is unnormalized.
    pub fn process(&self, data: &mut [Complex64], inverse: bool) {
        let total = self.len();
        assert_eq!(total, data.len(), "array size does not match dims");
        let plans = if inverse {
            &self.inverse
        } else {
            &self.forward
        };
        let mut stride = total;
        let mut line = Vec::new();
        let mut scratch = Vec::new();
        for (&n, fft) in self.dims.iter().zip(plans) {
            stride /= n;
            scratch.resize(fft.get_inplace_scratch_len(), Complex64::new(0.0, 0.0));
            line.resize(n, Complex64::new(0.0, 0.0));
            let block = n * stride;
            for outer in (0..total).step_by(block) {
                for inner in 0..stride {
                    let base = outer + inner;
                    if stride == 1 {
                        fft.process_with_scratch(&mut data[base..base + n], &mut scratch);
                    } else {
                        for (k, slot) in line.iter_mut().enumerate() {
                            *slot = data[base + k * stride];
                        }
                        fft.process_with_scratch(&mut line, &mut scratch);
                        for (k, v) in line.iter().enumerate() {
                            data[base + k * stride] = *v;
                        }
                    }
                }
            }
        }
    }
}

/// One-off n-dimensional DFT; see [`FftNd`].
pub fn fft_nd(data: &mut [Complex64], dims: &[usize], inverse: bool) {
    FftNd::new(dims).process(data, inverse);
}

/// Moves the origin site (index n/2 on each axis) to index 0, or back.
pub fn recenter<T: Copy>(values: &[T], lattice: &Lattice) -> Vec<T> {
    let n = lattice.sites_per_axis();
    let half = n / 2;
    let mut out = values.to_vec();
    let mut idx = [0usize; 4];
    for (flat, v) in values.iter().enumerate() {
        lattice.unflatten(flat, &mut idx[..lattice.d()]);
        for i in idx.iter_mut().take(lattice.d()) {
            *i = (*i + half) % n;
        }
        out[lattice.flatten(&idx[..lattice.d()])] = *v;
    }
    out
}
