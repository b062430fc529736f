//! Lattice white noise, convolution with Green kernels, and Monte Carlo
//! estimation of smeared moments.
//!
//! Noise is stored as a density: a site value is the cell integral divided by
//! the cell volume `v`, so `Σ_x F(x) φ(x) v` approximates `⟨φ, F⟩`.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::green::{green_alpha_lattice, GreenSpec};
use crate::lattice::{recenter, FftNd, Lattice, LatticeField};
use crate::levy::{LevyTriple, QuaternionLevyData};
use crate::partition::{cumulants_from_moments, CorrelationTable, Parity};
use crate::quaternion::Quaternion;
use crate::stats::{BatchSums, McEstimate, MIN_BATCHES};
use crate::testfn::TestFunction;

/// Largest number of smeared fields in one moment table.
pub const MAX_MC_ORDER: usize = 6;

fn stream(seed: u64, replicate: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

fn poisson_count(rng: &mut ChaCha20Rng, mean: f64) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    // Poisson::new only fails for non-positive or non-finite means.
    Poisson::new(mean).map(|p| p.sample(rng)).unwrap_or(0.0)
}

/// One realization of the white noise with Lévy triple `levy`. Each cell
/// integral is infinitely divisible with exponent `v·ψ`: a Gaussian part plus
/// one Poisson count per atom.
pub fn sample_white_noise(
    lat: &Lattice,
    levy: &LevyTriple,
    seed: u64,
    replicate: u64,
) -> LatticeField<f64> {
    let mut rng = stream(seed, replicate);
    let v = lat.cell_volume();
    let gauss = Normal::new(levy.compensated_drift() * v, (levy.sigma2() * v).sqrt())
        .expect("finite parameters");
    let values = (0..lat.len())
        .map(|_| {
            let mut cell = if levy.sigma2() > 0.0 {
                gauss.sample(&mut rng)
            } else {
                levy.compensated_drift() * v
            };
            for atom in levy.atoms() {
                cell += atom.position * poisson_count(&mut rng, atom.rate * v);
            }
            cell / v
        })
        .collect();
    LatticeField::new(*lat, values).expect("one value per site")
}

/// One realization of the quaternion-valued noise: the real component carries
/// the drift, `σ₀` and the real-axis jumps, the three imaginary components are
/// independent Gaussians of variance `σ` per unit volume.
pub fn sample_quaternion_noise(
    lat: &Lattice,
    data: &QuaternionLevyData,
    seed: u64,
    replicate: u64,
) -> LatticeField<Quaternion> {
    let mut rng = stream(seed, replicate);
    let v = lat.cell_volume();
    let drift = data.compensated_drift() * v;
    let real = Normal::new(drift, (data.sigma0() * v).sqrt()).expect("finite parameters");
    let imag = Normal::new(0.0, (data.sigma() * v).sqrt()).expect("finite parameters");
    let values = (0..lat.len())
        .map(|_| {
            let mut w = real.sample(&mut rng);
            for atom in data.atoms() {
                w += atom.position * poisson_count(&mut rng, atom.rate * v);
            }
            let (x, y, z) = (
                imag.sample(&mut rng),
                imag.sample(&mut rng),
                imag.sample(&mut rng),
            );
            Quaternion::new(w, x, y, z).scale(1.0 / v)
        })
        .collect();
    LatticeField::new(*lat, values).expect("one value per site")
}

/// How the periodic lattice is extended before FFT convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Plain circular convolution on the lattice itself.
    Circular,
    /// Zero-pad to twice the sites per axis, so no displacement wraps.
    #[default]
    Doubled,
}

impl Padding {
    /// Lattice on which the kernel has to be sampled.
    pub fn work_lattice(self, lat: &Lattice) -> Result<Lattice> {
        match self {
            Padding::Circular => Ok(*lat),
            Padding::Doubled => Lattice::new(lat.d(), 2 * lat.sites_per_axis(), lat.spacing()),
        }
    }
}

#[derive(Debug, Clone)]
struct Geometry {
    target: Lattice,
    work: Lattice,
    fft: FftNd,
}

impl Geometry {
    fn new(kernel_lattice: &Lattice, target: &Lattice) -> Result<Self> {
        let same_axis =
            kernel_lattice.d() == target.d() && kernel_lattice.spacing() == target.spacing();
        let ok = same_axis
            && (kernel_lattice.sites_per_axis() == target.sites_per_axis()
                || kernel_lattice.sites_per_axis() == 2 * target.sites_per_axis());
        if !ok {
            return Err(Error::Shape(format!(
                "kernel lattice {kernel_lattice:?} is neither the field lattice {target:?} nor its doubling"
            )));
        }
        Ok(Self {
            target: *target,
            work: *kernel_lattice,
            fft: FftNd::new(&kernel_lattice.dims()),
        })
    }

    fn padded(&self) -> bool {
        self.work.sites_per_axis() != self.target.sites_per_axis()
    }

    /// Places target values in the work array so that coordinates coincide.
    fn embed(&self, values: impl Iterator<Item = f64>) -> Vec<Complex64> {
        if !self.padded() {
            return values.map(|v| Complex64::new(v, 0.0)).collect();
        }
        let mut out = vec![Complex64::new(0.0, 0.0); self.work.len()];
        let shift = self.target.sites_per_axis() / 2;
        let d = self.target.d();
        let mut idx = [0usize; 4];
        for (flat, v) in values.enumerate() {
            self.target.unflatten(flat, &mut idx[..d]);
            for i in idx.iter_mut().take(d) {
                *i += shift;
            }
            out[self.work.flatten(&idx[..d])] = Complex64::new(v, 0.0);
        }
        out
    }

    fn crop(&self, work: &[Complex64]) -> Vec<f64> {
        if !self.padded() {
            return work.iter().map(|z| z.re).collect();
        }
        let shift = self.target.sites_per_axis() / 2;
        let d = self.target.d();
        let mut idx = [0usize; 4];
        (0..self.target.len())
            .map(|flat| {
                self.target.unflatten(flat, &mut idx[..d]);
                for i in idx.iter_mut().take(d) {
                    *i += shift;
                }
                work[self.work.flatten(&idx[..d])].re
            })
            .collect()
    }

    /// FFT of a kernel given in centered layout on the work lattice.
    fn kernel_hat(&self, centered: impl Iterator<Item = f64>) -> Vec<Complex64> {
        let raw: Vec<f64> = centered.collect();
        let mut data: Vec<Complex64> = recenter(&raw, &self.work)
            .into_iter()
            .map(|v| Complex64::new(v, 0.0))
            .collect();
        self.fft.process(&mut data, false);
        data
    }

    fn forward(&self, values: impl Iterator<Item = f64>) -> Vec<Complex64> {
        let mut data = self.embed(values);
        self.fft.process(&mut data, false);
        data
    }

    /// Inverse FFT with the `v / N` normalization of a Riemann-sum convolution.
    fn backward(&self, mut data: Vec<Complex64>) -> Vec<f64> {
        self.fft.process(&mut data, true);
        let scale = self.target.cell_volume() / self.work.len() as f64;
        for z in &mut data {
            *z *= scale;
        }
        self.crop(&data)
    }
}

/// Precomputed FFT convolution `X(x) = Σ_y K(x − y) F(y) v` with a fixed real
/// kernel. The kernel lattice is either the field lattice (circular) or its
/// doubling (zero-padded).
#[derive(Debug, Clone)]
pub struct Convolver {
    geometry: Geometry,
    kernel_hat: Vec<Complex64>,
}

impl Convolver {
    pub fn new(kernel: &LatticeField<f64>, target: &Lattice) -> Result<Self> {
        let geometry = Geometry::new(kernel.lattice(), target)?;
        let kernel_hat = geometry.kernel_hat(kernel.values().iter().copied());
        Ok(Self {
            geometry,
            kernel_hat,
        })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.geometry.target
    }

    pub fn apply(&self, f: &LatticeField<f64>) -> Result<LatticeField<f64>> {
        if f.lattice() != &self.geometry.target {
            return Err(Error::Shape("field and convolver lattices differ".into()));
        }
        let mut hat = self.geometry.forward(f.values().iter().copied());
        for (a, k) in hat.iter_mut().zip(&self.kernel_hat) {
            *a *= k;
        }
        LatticeField::new(self.geometry.target, self.geometry.backward(hat))
    }
}

/// Scalar convolution; see [`Convolver`].
pub fn convolve(f: &LatticeField<f64>, kernel: &LatticeField<f64>) -> Result<LatticeField<f64>> {
    Convolver::new(kernel, f.lattice())?.apply(f)
}

/// Hamilton-product convolution `X(x) = Σ_y K(x − y) F(y) v`.
pub fn convolve_quaternion(
    f: &LatticeField<Quaternion>,
    kernel: &LatticeField<Quaternion>,
) -> Result<LatticeField<Quaternion>> {
    let geometry = Geometry::new(kernel.lattice(), f.lattice())?;
    let k_hat: Vec<Vec<Complex64>> = (0..4)
        .map(|mu| geometry.kernel_hat(kernel.values().iter().map(|q| q.to_array()[mu])))
        .collect();
    let f_hat: Vec<Vec<Complex64>> = (0..4)
        .map(|mu| geometry.forward(f.values().iter().map(|q| q.to_array()[mu])))
        .collect();
    let len = geometry.work.len();
    let mut out_hat = vec![vec![Complex64::new(0.0, 0.0); len]; 4];
    for mu in 0..4 {
        for nu in 0..4 {
            let prod = (Quaternion::basis(mu) * Quaternion::basis(nu)).to_array();
            let (rho, sign) = prod
                .iter()
                .enumerate()
                .find(|(_, c)| **c != 0.0)
                .map(|(r, c)| (r, *c))
                .expect("basis products are signed basis elements");
            for s in 0..len {
                out_hat[rho][s] += sign * k_hat[mu][s] * f_hat[nu][s];
            }
        }
    }
    let comps: Vec<Vec<f64>> = out_hat.into_iter().map(|h| geometry.backward(h)).collect();
    let values = (0..f.lattice().len())
        .map(|s| Quaternion::new(comps[0][s], comps[1][s], comps[2][s], comps[3][s]))
        .collect();
    LatticeField::new(*f.lattice(), values)
}

/// The scalar model on a lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarModel {
    pub levy: LevyTriple,
    pub green: GreenSpec,
    pub lattice: Lattice,
    #[serde(default)]
    pub padding: Padding,
}

impl ScalarModel {
    /// Convolution by `G_α` with the model's padding.
    pub fn green_convolver(&self) -> Result<Convolver> {
        let work = self.padding.work_lattice(&self.lattice)?;
        let kernel = green_alpha_lattice(&work, &self.green)?;
        Convolver::new(&kernel, &self.lattice)
    }

    /// Rejects test functions narrower than half a lattice spacing or whose
    /// mass reaches the lattice boundary.
    pub fn check_resolvable(&self, phi: &TestFunction) -> Result<()> {
        if phi.dim() != self.lattice.d() {
            return Err(Error::Shape(format!(
                "test function on ℝ^{} for a {}-d model",
                phi.dim(),
                self.lattice.d()
            )));
        }
        let dx = self.lattice.spacing();
        if phi
            .terms()
            .iter()
            .flat_map(|t| t.widths.iter())
            .any(|&w| w < 0.5 * dx)
        {
            return Err(Error::Domain(format!(
                "test function narrower than half the spacing {dx}"
            )));
        }
        let (lo, hi) = phi.bounding_box(6.0);
        let half = 0.5 * self.lattice.extent();
        if lo.iter().chain(&hi).any(|&c| c.abs() >= half) {
            return Err(Error::Domain(format!(
                "test function support leaves the box of half-width {half}"
            )));
        }
        Ok(())
    }
}

/// Monte Carlo estimates per nonempty index tuple, addressed like a
/// [`CorrelationTable`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateTable {
    n: usize,
    // Indexed by subset mask; slot 0 unused.
    entries: Vec<McEstimate>,
}

impl EstimateTable {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get_mask(&self, mask: u32) -> McEstimate {
        self.entries[mask as usize]
    }

    pub fn get(&self, tuple: &[usize]) -> Result<McEstimate> {
        let mut mask = 0u32;
        for &i in tuple {
            if i == 0 || i > self.n || mask & (1 << (i - 1)) != 0 {
                return Err(Error::Domain(format!(
                    "bad tuple {tuple:?} for n = {}",
                    self.n
                )));
            }
            mask |= 1 << (i - 1);
        }
        if mask == 0 {
            return Err(Error::Domain("empty tuple".into()));
        }
        Ok(self.entries[mask as usize])
    }

    pub fn full(&self) -> McEstimate {
        self.entries[(1 << self.n) - 1]
    }

    pub fn means(&self) -> CorrelationTable {
        let mut t = CorrelationTable::zeros(self.n).expect("n within table limits");
        for mask in 1..(1u32 << self.n) {
            t.set_mask(mask, self.entries[mask as usize].mean);
        }
        t
    }

    /// (tuple, estimate) pairs ordered by mask.
    pub fn entries(&self) -> impl Iterator<Item = (Vec<usize>, McEstimate)> + '_ {
        (1..(1u32 << self.n)).map(move |mask| {
            let tuple = (0..self.n)
                .filter(|j| mask & (1 << j) != 0)
                .map(|j| j + 1)
                .collect();
            (tuple, self.entries[mask as usize])
        })
    }
}

/// Raw moments `E ∏_{j∈I} X(φ_j)` and truncated moments for every index
/// subset `I`, with jackknife errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchwingerEstimate {
    pub moments: EstimateTable,
    pub truncated: EstimateTable,
}

fn table_from(n: usize, values: Vec<McEstimate>) -> EstimateTable {
    let mut entries = Vec::with_capacity(1 << n);
    entries.push(McEstimate {
        mean: Complex64::new(0.0, 0.0),
        std_error: 0.0,
        n_samples: values.first().map_or(0, |e| e.n_samples),
    });
    entries.extend(values);
    EstimateTable { n, entries }
}

fn subset_products(x: &[f64], out: &mut [Complex64]) {
    out[0] = Complex64::new(1.0, 0.0);
    for mask in 1..out.len() {
        let low = mask.trailing_zeros() as usize;
        out[mask] = out[mask & (mask - 1)] * x[low];
    }
}

/// Monte Carlo moments of `X(φ_j) = Σ_x (G∗F)(x) φ_j(x) v` with the default
/// number of batches.
pub fn estimate_schwinger(
    model: &ScalarModel,
    phis: &[TestFunction],
    n_samples: usize,
    seed: u64,
) -> Result<SchwingerEstimate> {
    estimate_schwinger_batched(model, phis, n_samples, seed, MIN_BATCHES)
}

/// As [`estimate_schwinger`] with an explicit batch count. Sample `i` uses
/// random stream `(seed, i)`, so results do not depend on the thread count.
pub fn estimate_schwinger_batched(
    model: &ScalarModel,
    phis: &[TestFunction],
    n_samples: usize,
    seed: u64,
    batches: usize,
) -> Result<SchwingerEstimate> {
    let n = phis.len();
    if n == 0 || n > MAX_MC_ORDER {
        return Err(Error::SizeLimit {
            what: "Monte Carlo moment order",
            value: n,
            max: MAX_MC_ORDER,
        });
    }
    if batches < MIN_BATCHES || n_samples < batches {
        return Err(Error::Config(format!(
            "{n_samples} samples in {batches} batches; need at least {MIN_BATCHES} nonempty batches"
        )));
    }
    for phi in phis {
        model.check_resolvable(phi)?;
    }
    let sampled: Vec<LatticeField<f64>> = phis
        .iter()
        .map(|p| model.lattice.sample_real(p))
        .collect::<Result<_>>()?;
    let conv = model.green_convolver()?;
    let smeared: Vec<Vec<f64>> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let noise = sample_white_noise(&model.lattice, &model.levy, seed, i as u64);
            let x = conv.apply(&noise).expect("lattices match");
            sampled.iter().map(|p| x.pairing(p)).collect()
        })
        .collect();

    let width = 1usize << n;
    let mut acc = BatchSums::new(width);
    let mut products = vec![Complex64::new(0.0, 0.0); width];
    for b in 0..batches {
        let (lo, hi) = (b * n_samples / batches, (b + 1) * n_samples / batches);
        let mut sum = vec![Complex64::new(0.0, 0.0); width];
        for x in &smeared[lo..hi] {
            subset_products(x, &mut products);
            for (s, p) in sum.iter_mut().zip(&products) {
                *s += p;
            }
        }
        acc.push_batch(sum, hi - lo)?;
    }
    let moments = acc.jackknife(|m| m[1..].to_vec())?;
    let truncated = acc.jackknife(|m| {
        let mut t = CorrelationTable::zeros(n).expect("n within table limits");
        for mask in 1..width as u32 {
            t.set_mask(mask, m[mask as usize]);
        }
        let c = cumulants_from_moments(&t, Parity::Bosonic);
        (1..width as u32).map(|mask| c.get_mask(mask)).collect()
    })?;
    Ok(SchwingerEstimate {
        moments: table_from(n, moments),
        truncated: table_from(n, truncated),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::green::dbar_g_kernel;
    use crate::levy::Atom;

    fn atom_triple() -> LevyTriple {
        LevyTriple::new(
            0.1,
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
                    rate: 0.2,
                },
            ],
        )
        .unwrap()
    }

    fn mean_and_se(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (var / n).sqrt())
    }

    #[test]
    fn gaussian_site_variance() {
        let lat = Lattice::new(2, 320, 0.2).unwrap();
        let noise = sample_white_noise(&lat, &LevyTriple::gaussian(2.0).unwrap(), 11, 0);
        let v = lat.cell_volume();
        let sq: Vec<f64> = noise.values().iter().map(|x| x * x).collect();
        let (m, se) = mean_and_se(&sq);
        let exact = 2.0 / v;
        assert!((m - exact).abs() <= 3.0 * se, "{m} vs {exact} ± {se}");
    }

    #[test]
    fn atom_counts_have_poisson_mean() {
        let lat = Lattice::new(1, 100_000, 0.5).unwrap();
        let levy = LevyTriple::new(
            0.0,
            0.0,
            vec![Atom {
                position: 1.0,
                rate: 0.8,
            }],
        )
        .unwrap();
        let noise = sample_white_noise(&lat, &levy, 5, 3);
        let v = lat.cell_volume();
        // Undo the density scaling and the compensating drift.
        let counts: Vec<f64> = noise
            .values()
            .iter()
            .map(|x| x * v - levy.compensated_drift() * v)
            .collect();
        assert!(counts.iter().all(|c| (c - c.round()).abs() < 1e-9));
        let (m, se) = mean_and_se(&counts);
        assert!((m - 0.8 * v).abs() <= 3.0 * se, "{m} vs {}", 0.8 * v);
    }

    #[test]
    fn smeared_second_cumulant_is_c2_l2_norm() {
        let lat = Lattice::new(1, 256, 0.1).unwrap();
        let levy = atom_triple();
        let phi = lat
            .sample_real(&TestFunction::gaussian(&[0.3], 1.0).unwrap())
            .unwrap();
        let xs: Vec<f64> = (0..4000)
            .map(|r| sample_white_noise(&lat, &levy, 77, r).pairing(&phi))
            .collect();
        let (m, _) = mean_and_se(&xs);
        let centred: Vec<f64> = xs.iter().map(|x| (x - m).powi(2)).collect();
        let (var, se) = mean_and_se(&centred);
        let exact = levy.cumulant(2).unwrap() * phi.pairing(&phi);
        assert!((var - exact).abs() <= 3.0 * se, "{var} vs {exact} ± {se}");
    }

    #[test]
    fn streams_are_deterministic_and_distinct() {
        let lat = Lattice::new(2, 16, 0.3).unwrap();
        let levy = atom_triple();
        let a = sample_white_noise(&lat, &levy, 9, 4);
        assert_eq!(a, sample_white_noise(&lat, &levy, 9, 4));
        assert_ne!(a, sample_white_noise(&lat, &levy, 9, 5));
        assert_ne!(a, sample_white_noise(&lat, &levy, 10, 4));
    }

    fn random_field(lat: &Lattice, seed: u64) -> LatticeField<f64> {
        sample_white_noise(lat, &LevyTriple::gaussian(1.0).unwrap(), seed, 0)
    }

    #[test]
    fn unit_atom_reproduces_translated_kernel() {
        let lat = Lattice::new(2, 16, 0.5).unwrap();
        let kernel = random_field(&lat, 1);
        let v = lat.cell_volume();
        let at = lat.flatten(&[5, 11]);
        let mut f = LatticeField::filled(lat, 0.0);
        f.values_mut()[at] = 1.0 / v;
        let x = convolve(&f, &kernel).unwrap();
        let half = lat.sites_per_axis() / 2;
        for s in 0..lat.len() {
            let mut idx = [0usize; 2];
            lat.unflatten(s, &mut idx);
            // Kernel index of displacement x − x₀, wrapped.
            let k = [
                (idx[0] + 16 + half - 5) % 16,
                (idx[1] + 16 + half - 11) % 16,
            ];
            assert!((x.values()[s] - kernel.values()[lat.flatten(&k)]).abs() < 1e-12);
        }
    }

    #[test]
    fn padded_convolution_matches_direct_sum() {
        let lat = Lattice::new(2, 8, 0.4).unwrap();
        let big = Padding::Doubled.work_lattice(&lat).unwrap();
        let kernel = random_field(&big, 2);
        let f = random_field(&lat, 3);
        let x = convolve(&f, &kernel).unwrap();
        let v = lat.cell_volume();
        let mut pos = [0.0; 2];
        let mut pos_y = [0.0; 2];
        for s in (0..lat.len()).step_by(5) {
            lat.position(s, &mut pos);
            let mut direct = 0.0;
            for t in 0..lat.len() {
                lat.position(t, &mut pos_y);
                let idx: Vec<usize> = (0..2)
                    .map(|a| ((pos[a] - pos_y[a]) / 0.4).round() as i64 + 8)
                    .map(|i| i as usize)
                    .collect();
                direct += kernel.values()[big.flatten(&idx)] * f.values()[t] * v;
            }
            assert!((x.values()[s] - direct).abs() < 1e-10 * (1.0 + direct.abs()));
        }
    }

    #[test]
    fn convolution_is_linear() {
        let lat = Lattice::new(2, 16, 0.5).unwrap();
        let kernel = random_field(&Padding::Doubled.work_lattice(&lat).unwrap(), 4);
        let (f1, f2) = (random_field(&lat, 5), random_field(&lat, 6));
        let sum = LatticeField::new(
            lat,
            f1.values()
                .iter()
                .zip(f2.values())
                .map(|(a, b)| a + b)
                .collect(),
        )
        .unwrap();
        let conv = Convolver::new(&kernel, &lat).unwrap();
        let (a, b, c) = (
            conv.apply(&f1).unwrap(),
            conv.apply(&f2).unwrap(),
            conv.apply(&sum).unwrap(),
        );
        for s in 0..lat.len() {
            assert!((c.values()[s] - a.values()[s] - b.values()[s]).abs() < 1e-12);
        }
    }

    #[test]
    fn parseval_identity() {
        let lat = Lattice::new(2, 32, 0.25).unwrap();
        let kernel = random_field(&lat, 7);
        let f = random_field(&lat, 8);
        let x = convolve(&f, &kernel).unwrap();
        let lhs = x.pairing(&x);
        let v = lat.cell_volume();
        let to_hat = |vals: &[f64]| {
            let mut d: Vec<Complex64> = vals.iter().map(|&r| Complex64::new(r, 0.0)).collect();
            crate::lattice::fft_nd(&mut d, &lat.dims(), false);
            d
        };
        let k_hat = to_hat(&recenter(kernel.values(), &lat));
        let f_hat = to_hat(f.values());
        let rhs: f64 = k_hat
            .iter()
            .zip(&f_hat)
            .map(|(k, f)| k.norm_sqr() * f.norm_sqr())
            .sum::<f64>()
            * v.powi(3)
            / lat.len() as f64;
        assert!((lhs - rhs).abs() <= 1e-10 * rhs, "{lhs} vs {rhs}");
    }

    #[test]
    fn quaternion_convolution_matches_direct_hamilton_sum() {
        let lat = Lattice::new(4, 4, 0.5).unwrap();
        let kernel = dbar_g_kernel(&lat).unwrap();
        let data = QuaternionLevyData::new(
            0.2,
            1.0,
            0.5,
            vec![Atom {
                position: 0.7,
                rate: 1.0,
            }],
        )
        .unwrap();
        let f = sample_quaternion_noise(&lat, &data, 1, 2);
        let x = convolve_quaternion(&f, &kernel).unwrap();
        let v = lat.cell_volume();
        let n = lat.sites_per_axis();
        for s in (0..lat.len()).step_by(37) {
            let mut xi = [0usize; 4];
            lat.unflatten(s, &mut xi);
            let mut direct = Quaternion::ZERO;
            for t in 0..lat.len() {
                let mut yi = [0usize; 4];
                lat.unflatten(t, &mut yi);
                let k: Vec<usize> = (0..4)
                    .map(|a| (xi[a] + 2 * n - yi[a] + n / 2) % n)
                    .collect();
                direct = direct + (kernel.values()[lat.flatten(&k)] * f.values()[t]).scale(v);
            }
            assert!((x.values()[s] - direct).norm() < 1e-10 * (1.0 + direct.norm()));
        }
    }

    #[test]
    fn convolution_lattice_mismatch_is_shape_error() {
        let lat = Lattice::new(2, 16, 0.5).unwrap();
        let other = Lattice::new(2, 12, 0.5).unwrap();
        assert!(matches!(
            convolve(&random_field(&lat, 1), &random_field(&other, 1)),
            Err(Error::Shape(_))
        ));
    }

    fn small_model(levy: LevyTriple) -> ScalarModel {
        ScalarModel {
            levy,
            green: GreenSpec::new(2, 0.5, 1.0).unwrap(),
            lattice: Lattice::new(2, 32, 0.4).unwrap(),
            padding: Padding::Doubled,
        }
    }

    fn three_gaussians() -> Vec<TestFunction> {
        vec![
            TestFunction::gaussian(&[0.0, 0.0], 0.6).unwrap(),
            TestFunction::gaussian(&[0.8, 0.0], 0.6).unwrap(),
            TestFunction::gaussian(&[0.0, -0.8], 0.6).unwrap(),
        ]
    }

    #[test]
    fn gaussian_third_cumulant_vanishes() {
        let model = small_model(LevyTriple::gaussian(1.0).unwrap());
        let est = estimate_schwinger(&model, &three_gaussians(), 2000, 3).unwrap();
        let t = est.truncated.full();
        assert!(t.agrees_with(Complex64::new(0.0, 0.0), 3.0, 0.0), "{t:?}");
        assert!(t.std_error > 0.0);
    }

    #[test]
    fn estimates_are_translation_invariant() {
        let model = small_model(atom_triple());
        let phis = three_gaussians();
        let shifted: Vec<TestFunction> = phis.iter().map(|p| p.translated(&[0.8, 0.4])).collect();
        let a = estimate_schwinger(&model, &phis, 2000, 21).unwrap();
        let b = estimate_schwinger(&model, &shifted, 2000, 22).unwrap();
        for (tuple, ea) in a.truncated.entries() {
            let eb = b.truncated.get(&tuple).unwrap();
            let se = (ea.std_error.powi(2) + eb.std_error.powi(2)).sqrt();
            assert!(
                (ea.mean - eb.mean).norm() <= 3.0 * se,
                "{tuple:?}: {ea:?} vs {eb:?}"
            );
        }
    }

    #[test]
    fn estimates_do_not_depend_on_thread_count() {
        let model = small_model(atom_triple());
        let phis = three_gaussians();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| estimate_schwinger(&model, &phis, 200, 5).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn sample_budget_below_batch_minimum_is_config_error() {
        let model = small_model(atom_triple());
        assert!(matches!(
            estimate_schwinger(&model, &three_gaussians(), 10, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn unresolvable_test_function_is_rejected() {
        let model = small_model(atom_triple());
        let narrow = TestFunction::gaussian(&[0.0, 0.0], 0.1).unwrap();
        assert!(matches!(
            model.check_resolvable(&narrow),
            Err(Error::Domain(_))
        ));
        let far = TestFunction::gaussian(&[4.0, 0.0], 0.6).unwrap();
        assert!(matches!(
            model.check_resolvable(&far),
            Err(Error::Domain(_))
        ));
    }
}
