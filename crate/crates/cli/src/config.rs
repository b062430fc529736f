//! Experiment configuration: a TOML document validated before any task runs.

use std::path::PathBuf;

use clap::ValueEnum;
use cwn_core::field::{Padding, ScalarModel};
use cwn_core::green::GreenSpec;
use cwn_core::hssc::{BoundGrid, CertifyFamily, Monomial};
use cwn_core::lattice::Lattice;
use cwn_core::levy::{LevyTriple, QuaternionLevyData};
use cwn_core::testfn::{TensorProduct, TestFunction};
use cwn_core::wightman::{HyperplaneQuadrature, MinkowskiPoint, ScalarWightman};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// A configuration problem, always naming the offending field.
#[derive(Debug, thiserror::Error)]
#[error("{field}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

type Checked<T> = Result<T, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Sample,
    Schwinger,
    Wightman,
    LaplaceCheck,
    Bounds,
    Certify,
    Krein,
    Cluster,
    Spectral,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Sample => "sample",
            Task::Schwinger => "schwinger",
            Task::Wightman => "wightman",
            Task::LaplaceCheck => "laplace-check",
            Task::Bounds => "bounds",
            Task::Certify => "certify",
            Task::Krein => "krein",
            Task::Cluster => "cluster",
            Task::Spectral => "spectral",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    /// Tasks executed by `cwnlab run`, in order.
    #[serde(default)]
    pub tasks: Vec<Task>,
    pub model: ModelSection,
    pub lattice: Option<LatticeSection>,
    #[serde(default)]
    pub quadrature: HyperplaneQuadrature,
    #[serde(default)]
    pub bound_grid: BoundGrid,
    pub sample: Option<SampleTask>,
    pub schwinger: Option<SampleTask>,
    pub wightman: Option<WightmanTask>,
    pub laplace: Option<LaplaceTask>,
    pub bounds: Option<BoundsTask>,
    pub certify: Option<CertifyTask>,
    pub krein: Option<KreinTask>,
    pub cluster: Option<ClusterTask>,
    pub spectral: Option<WightmanTask>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Scalar,
    Vector,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default)]
    pub kind: ModelKind,
    pub d: usize,
    #[serde(default = "half")]
    pub alpha: f64,
    #[serde(default = "one")]
    pub m0: f64,
    pub levy: Option<LevyTriple>,
    pub quaternion: Option<QuaternionLevyData>,
}

fn half() -> f64 {
    0.5
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSection {
    pub sites_per_axis: usize,
    pub spacing: f64,
    #[serde(default)]
    pub padding: Padding,
}

/// A Gaussian bump `scale · e^{i⟨ν,x⟩} exp(−Σ (x_i − c_i)²/(2w_i²))`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussSpec {
    pub center: Vec<f64>,
    pub width: Option<f64>,
    pub widths: Option<Vec<f64>>,
    pub frequency: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub scale: f64,
}

/// Tensor product of one Gaussian per variable.
pub type ProductSpec = Vec<GaussSpec>;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleTask {
    pub n_samples: usize,
    pub batches: Option<usize>,
    pub functions: Vec<GaussSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WightmanTask {
    pub functions: Vec<ProductSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaplaceTask {
    /// Each configuration lists the points `y_1..y_n` with increasing times.
    pub configurations: Vec<Vec<Vec<f64>>>,
    #[serde(default = "default_max_gap")]
    pub max_gap: f64,
}

fn default_max_gap() -> f64 {
    1e-2
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsTask {
    pub orders: Vec<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSpec {
    pub left: Vec<ProductSpec>,
    pub right: Vec<ProductSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyTask {
    pub n_max: usize,
    /// `by_order[n−1]` lists functions of `n` variables.
    #[serde(default)]
    pub by_order: Vec<Vec<ProductSpec>>,
    #[serde(default)]
    pub pairs: Vec<PairSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpec {
    pub subset_size: usize,
    pub trials: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KreinTask {
    /// Monomials spanning the Gram matrix; an empty list is the vacuum.
    pub basis: Vec<Vec<ProductSpec>>,
    pub search: Option<SearchSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterTask {
    pub phi: ProductSpec,
    pub psi: ProductSpec,
    /// Spacelike translation direction `(a⁰, a⃗)`.
    pub direction: Vec<f64>,
    pub lambdas: Vec<f64>,
}

fn positive(field: &str, v: f64) -> Checked<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::new(
            field,
            format!("must be a positive finite number, got {v}"),
        ))
    }
}

fn nonempty<T>(field: &str, v: &[T]) -> Checked<()> {
    if v.is_empty() {
        Err(ConfigError::new(field, "must not be empty"))
    } else {
        Ok(())
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Checked<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map_or_else(|| "config".to_string(), |s| field_at(text, s.start));
            ConfigError::new(field, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks that hold for every task; task sections are checked when run.
    fn validate(&self) -> Checked<()> {
        let m = &self.model;
        if !(2..=4).contains(&m.d) {
            return Err(ConfigError::new(
                "model.d",
                format!("must lie in 2..=4, got {}", m.d),
            ));
        }
        match m.kind {
            ModelKind::Scalar => {
                if !(m.alpha > 0.0 && m.alpha <= 0.5) {
                    return Err(ConfigError::new(
                        "model.alpha",
                        format!("must lie in (0, 1/2], got {}", m.alpha),
                    ));
                }
                positive("model.m0", m.m0)?;
            }
            ModelKind::Vector => {
                if m.d != 4 {
                    return Err(ConfigError::new(
                        "model.d",
                        "the vector model lives in d = 4",
                    ));
                }
            }
        }
        let q = &self.quadrature;
        positive("quadrature.rel_tol", q.rel_tol)?;
        positive("quadrature.abs_tol", q.abs_tol)?;
        positive("quadrature.spread", q.spread)?;
        q.validate()
            .map_err(|e| ConfigError::new("quadrature", e.to_string()))?;
        let g = &self.bound_grid;
        positive("bound_grid.rel_tol", g.rel_tol)?;
        positive("bound_grid.stability", g.stability)?;
        positive("bound_grid.gamma", g.gamma)?;
        g.validate()
            .map_err(|e| ConfigError::new("bound_grid", e.to_string()))?;
        if let Some(l) = &self.laplace {
            positive("laplace.max_gap", l.max_gap)?;
        }
        Ok(())
    }

    pub fn scalar_levy(&self) -> Checked<LevyTriple> {
        if self.model.kind != ModelKind::Scalar {
            return Err(ConfigError::new(
                "model.kind",
                "this task needs the scalar model",
            ));
        }
        self.model.levy.clone().ok_or_else(|| {
            ConfigError::new("model.levy", "missing Lévy triple for the scalar model")
        })
    }

    pub fn wightman_model(&self) -> Checked<ScalarWightman> {
        let m = &self.model;
        ScalarWightman::new(self.scalar_levy()?, m.d, m.alpha, m.m0)
            .map_err(|e| ConfigError::new("model", e.to_string()))
    }

    pub fn lattice(&self) -> Checked<(Lattice, Padding)> {
        let l = self
            .lattice
            .as_ref()
            .ok_or_else(|| ConfigError::new("lattice", "missing section"))?;
        let lat = Lattice::new(self.model.d, l.sites_per_axis, l.spacing)
            .map_err(|e| ConfigError::new("lattice", e.to_string()))?;
        Ok((lat, l.padding))
    }

    pub fn scalar_model(&self) -> Checked<ScalarModel> {
        let m = &self.model;
        let levy = self.scalar_levy()?;
        let green = GreenSpec::new(m.d, m.alpha, m.m0)
            .map_err(|e| ConfigError::new("model", e.to_string()))?;
        let (lattice, padding) = self.lattice()?;
        Ok(ScalarModel {
            levy,
            green,
            lattice,
            padding,
        })
    }

    pub fn section<'a, T>(&self, value: &'a Option<T>, name: &str) -> Checked<&'a T> {
        value
            .as_ref()
            .ok_or_else(|| ConfigError::new(name, "missing section for this task"))
    }
}

/// Dotted key of the table enclosing byte `offset`, used to name fields in
/// parse errors.
fn field_at(text: &str, offset: usize) -> String {
    let before = &text[..offset.min(text.len())];
    let header = before
        .lines()
        .rev()
        .find_map(|l| {
            let t = l.trim();
            t.strip_prefix("[[")
                .and_then(|r| r.strip_suffix("]]"))
                .or_else(|| t.strip_prefix('[').and_then(|r| r.strip_suffix(']')))
                .map(str::trim)
        })
        .unwrap_or("");
    let line = before.rsplit('\n').next().unwrap_or("");
    let key = text[offset.min(text.len())..]
        .lines()
        .next()
        .map(|rest| format!("{line}{rest}"))
        .and_then(|l| l.split_once('=').map(|(k, _)| k.trim().to_string()))
        .filter(|k| !k.starts_with('['));
    match (header.is_empty(), key) {
        (true, Some(k)) => k,
        (false, Some(k)) => format!("{header}.{k}"),
        (false, None) => header.to_string(),
        (true, None) => "config".to_string(),
    }
}

impl GaussSpec {
    pub fn build(&self, field: &str) -> Checked<TestFunction> {
        let err = |e: cwn_core::Error| ConfigError::new(field, e.to_string());
        let f = match (&self.width, &self.widths) {
            (Some(w), None) => TestFunction::gaussian(&self.center, *w).map_err(err)?,
            (None, Some(ws)) => TestFunction::anisotropic(&self.center, ws).map_err(err)?,
            _ => {
                return Err(ConfigError::new(
                    field,
                    "give exactly one of `width` and `widths`",
                ))
            }
        };
        let f = match &self.frequency {
            Some(nu) => f.with_frequency(nu).map_err(err)?,
            None => f,
        };
        positive(&format!("{field}.scale"), self.scale.abs())
            .map(|_| f.scaled(Complex64::new(self.scale, 0.0)))
    }
}

pub fn build_product(spec: &[GaussSpec], field: &str) -> Checked<TestFunction> {
    nonempty(field, spec)?;
    let factors = spec
        .iter()
        .enumerate()
        .map(|(i, g)| g.build(&format!("{field}[{i}]")))
        .collect::<Checked<Vec<_>>>()?;
    if factors.len() == 1 {
        return Ok(factors.into_iter().next().expect("one factor"));
    }
    TensorProduct::new(factors)
        .map(|t| t.to_joint())
        .map_err(|e| ConfigError::new(field, e.to_string()))
}

pub fn build_products(specs: &[ProductSpec], field: &str) -> Checked<Vec<TestFunction>> {
    specs
        .iter()
        .enumerate()
        .map(|(i, p)| build_product(p, &format!("{field}[{i}]")))
        .collect()
}

pub fn build_monomial(spec: &[ProductSpec], field: &str) -> Checked<Monomial> {
    build_products(spec, field)
}

impl SampleTask {
    pub fn functions(&self, field: &str) -> Checked<Vec<TestFunction>> {
        if self.n_samples < 2 {
            return Err(ConfigError::new(
                format!("{field}.n_samples"),
                "need at least two samples",
            ));
        }
        nonempty(&format!("{field}.functions"), &self.functions)?;
        self.functions
            .iter()
            .enumerate()
            .map(|(i, g)| g.build(&format!("{field}.functions[{i}]")))
            .collect()
    }
}

impl CertifyTask {
    pub fn family(&self) -> Checked<CertifyFamily> {
        let by_order = self
            .by_order
            .iter()
            .enumerate()
            .map(|(n, fs)| build_products(fs, &format!("certify.by_order[{n}]")))
            .collect::<Checked<Vec<_>>>()?;
        let pairs = self
            .pairs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                Ok((
                    build_monomial(&p.left, &format!("certify.pairs[{i}].left"))?,
                    build_monomial(&p.right, &format!("certify.pairs[{i}].right"))?,
                ))
            })
            .collect::<Checked<Vec<_>>>()?;
        Ok(CertifyFamily { by_order, pairs })
    }
}

impl ClusterTask {
    pub fn direction(&self, d: usize) -> Checked<MinkowskiPoint> {
        if self.direction.len() != d {
            return Err(ConfigError::new(
                "cluster.direction",
                format!("needs {d} components"),
            ));
        }
        nonempty("cluster.lambdas", &self.lambdas)?;
        Ok(MinkowskiPoint::from_slice(&self.direction))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7
[model]
d = 2
alpha = 0.5
m0 = 1.0
[model.levy]
sigma2 = 1.0
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.quadrature, HyperplaneQuadrature::default());
        assert!(cfg.tasks.is_empty());
        assert!(cfg.wightman_model().is_ok());
        assert_eq!(cfg.lattice().unwrap_err().field, "lattice");
    }

    #[test]
    fn errors_name_the_field() {
        let bad_alpha = MINIMAL.replace("alpha = 0.5", "alpha = 0.7");
        assert_eq!(
            ExperimentConfig::parse(&bad_alpha).unwrap_err().field,
            "model.alpha"
        );
        let typo = MINIMAL.replace("m0 = 1.0", "mass = 1.0");
        let e = ExperimentConfig::parse(&typo).unwrap_err();
        assert!(e.field.starts_with("model"), "{e}");
        assert!(e.message.contains("mass"), "{e}");
        let tol = format!("{MINIMAL}[quadrature]\nrel_tol = -1.0\n");
        assert_eq!(
            ExperimentConfig::parse(&tol).unwrap_err().field,
            "quadrature.rel_tol"
        );
        let wrong_type = MINIMAL.replace("d = 2", "d = \"two\"");
        assert_eq!(
            ExperimentConfig::parse(&wrong_type).unwrap_err().field,
            "model.d"
        );
    }

    #[test]
    fn gauss_specs_need_one_width() {
        let g = GaussSpec {
            center: vec![0.0, 0.0],
            width: None,
            widths: None,
            frequency: None,
            scale: 1.0,
        };
        assert!(g.build("f").is_err());
        let g = GaussSpec {
            width: Some(0.5),
            ..g
        };
        assert_eq!(g.build("f").unwrap().dim(), 2);
        assert_eq!(build_product(&[g.clone(), g], "p").unwrap().dim(), 4);
    }
}
