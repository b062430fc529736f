//! One function per subcommand. Each reads its section of the configuration,
//! runs the pipeline and writes its artifacts.

use cwn_core::field::{
    estimate_schwinger, estimate_schwinger_batched, ScalarModel, SchwingerEstimate,
};
use cwn_core::hssc::{
    bound_constants, bound_integral_scalar, bound_integral_vector, build_gram_pair, constant_chain,
    hssc_certify, krein_reduce, majorization_check, monomial_seminorm, search_negative_direction,
    Majorization,
};
use cwn_core::schwinger::s_t_eval;
use cwn_core::testfn::TestFunction;
use cwn_core::wightman::{
    cluster_decay, laplace_bridge_check, spectral_support_check, w_hat_one_point,
    w_hat_trunc_scalar, HyperplaneQuadrature,
};
use num_complex::Complex64;
use serde::Serialize;
use serde_json::json;

use crate::config::{
    build_monomial, build_product, build_products, ConfigError, ExperimentConfig, ModelKind,
    SampleTask, Task,
};
use crate::output::TaskOutput;

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Compute(#[from] cwn_core::Error),
    /// The pipeline ran and wrote its results, but a checked criterion failed.
    #[error("check failed: {0}")]
    Check(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl TaskError {
    pub fn kind(&self) -> &'static str {
        match self {
            TaskError::Config(_) => "config",
            TaskError::Compute(cwn_core::Error::Config(_)) => "config",
            TaskError::Compute(_) => "compute",
            TaskError::Check(_) => "check",
            TaskError::Io(_) => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        if self.kind() == "config" {
            2
        } else {
            1
        }
    }
}

type Outcome = Result<(), TaskError>;

pub fn run(task: Task, cfg: &ExperimentConfig, out: &mut TaskOutput) -> Outcome {
    match task {
        Task::Sample => sample(cfg, out),
        Task::Schwinger => schwinger(cfg, out),
        Task::Wightman => wightman(cfg, out),
        Task::LaplaceCheck => laplace(cfg, out),
        Task::Bounds => bounds(cfg, out),
        Task::Certify => certify(cfg, out),
        Task::Krein => krein(cfg, out),
        Task::Cluster => cluster(cfg, out),
        Task::Spectral => spectral(cfg, out),
    }
}

fn tuple_label(t: &[usize]) -> String {
    t.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

fn pair(z: Complex64) -> [f64; 2] {
    [z.re, z.im]
}

#[derive(Serialize)]
struct SampleRow {
    kind: &'static str,
    tuple: String,
    mean: f64,
    mean_im: f64,
    std_error: f64,
    n: usize,
}

/// Lattice model, test functions and Monte Carlo estimate of a sampling section.
fn monte_carlo(
    cfg: &ExperimentConfig,
    section: &Option<SampleTask>,
    name: &str,
) -> Result<(ScalarModel, Vec<TestFunction>, SchwingerEstimate), TaskError> {
    let task = cfg.section(section, name)?;
    let model = cfg.scalar_model()?;
    let phis = task.functions(name)?;
    for (i, phi) in phis.iter().enumerate() {
        model
            .check_resolvable(phi)
            .map_err(|e| ConfigError::new(format!("{name}.functions[{i}]"), e.to_string()))?;
    }
    let est = match task.batches {
        Some(b) => estimate_schwinger_batched(&model, &phis, task.n_samples, cfg.seed, b)?,
        None => estimate_schwinger(&model, &phis, task.n_samples, cfg.seed)?,
    };
    Ok((model, phis, est))
}

fn sample(cfg: &ExperimentConfig, out: &mut TaskOutput) -> Outcome {
    let (_, _, est) = monte_carlo(cfg, &cfg.sample, "sample")?;
    let rows: Vec<SampleRow> = [("moment", &est.moments), ("truncated", &est.truncated)]
        .into_iter()
        .flat_map(|(kind, table)| {
            table.entries().map(move |(t, e)| SampleRow {
                kind,
                tuple: tuple_label(&t),
                mean: e.mean.re,
                mean_im: e.mean.im,
                std_error: e.std_error,
                n: e.n_samples,
            })
        })
        .collect();
    out.csv("samples.csv", &rows)?;
    Ok(())
}

#[derive(Serialize)]
struct SchwingerRow {
    tuple: String,
    analytic: f64,
    mc_mean: f64,
    mc_std_error: f64,
    n: usize,
    z_score: f64,
}

fn schwinger(cfg: &ExperimentConfig, out: &mut TaskOutput) -> Outcome {
    let (model, phis, est) = monte_carlo(cfg, &cfg.schwinger, "schwinger")?;
    let rows = est
        .truncated
        .entries()
        .map(|(t, e)| {
            let subset: Vec<_> = t.iter().map(|&i| phis[i - 1].clone()).collect();
            let analytic = s_t_eval(&model, &subset)?;
            Ok(SchwingerRow {
                tuple: tuple_label(&t),
                analytic,
                mc_mean: e.mean.re,
                mc_std_error: e.std_error,
                n: e.n_samples,
                z_score: (e.mean.re - analytic) / e.std_error,
            })
        })
        .collect::<Result<Vec<_>, cwn_core::Error>>()?;
    out.csv("schwinger.csv", &rows)?;
    Ok(())
}

fn wightman(cfg: &ExperimentConfig, out: &mut TaskOutput) -> Outcome {
    let task = cfg.section(&cfg.wightman, "wightman")?;
    let model = cfg.wightman_model()?;
    let phis = build_products(&task.functions, "wightman.functions")?;
    let mut records = Vec::with_capacity(phis.len());
    for (i, phi) in phis.iter().enumerate() {
        let n = phi.dim() / model.d;
        let (op, value, tolerance, history) = if n == 1 {
            let v = w_hat_one_point(&model, phi)?;
            ("w_hat_one_point", v, 0.0, vec![pair(v)])
        } else {
            let e = w_hat_trunc_scalar(&model, phi, &cfg.quadrature)?;
            (
                "w_hat_trunc",
                e.value,
                e.tolerance,
                e.history.iter().map(|&z| pair(z)).collect(),
            )
        };
        records.push(json!({
            "op": op,
            "parameters": {"index": i, "n": n, "d": model.d, "alpha": model.alpha, "m0": model.m0},
            "value": pair(value),
            "tolerance": tolerance,
            "history": history,
        }));
    }
    out.jsonl("wightman.jsonl", &records)?;
    Ok(())
}

#[derive(Serialize)]
struct LaplaceRow {
    index: usize,
    n: usize,
    points: String,
    lhs: f64,
    rhs: f64,
    gap: f64,
    rhs_tolerance: f64,
    pass: bool,
}

fn laplace(cfg: &ExperimentConfig, out: &mut TaskOutput) -> Outcome {
    let task = cfg.section(&cfg.laplace, "laplace")?;
    let model = cfg.wightman_model()?;
    let (lat, _) = cfg.lattice()?;
    if task.configurations.is_empty() {
        return Err(ConfigError::new("laplace.configurations", "must not be empty").into());
    }
    let mut rows = Vec::with_capacity(task.configurations.len());
    for (i, ys) in task.configurations.iter().enumerate() {
        let b = laplace_bridge_check(&model, ys, &lat, &cfg.quadrature)?;
        let points = ys
            .iter()
            .map(|y| y.iter().map(f64::to_string).collect::<Vec<_>>().join(","))
            .collect::<Vec<_>>()
            .join(";");
        rows.push(LaplaceRow {
            index: i,
            n: ys.len(),
            points,
            lhs: b.lhs,
            rhs: b.rhs,
            gap: b.gap,
            rhs_tolerance: b.rhs_tolerance,
            pass: b.gap <= task.max_gap,
        });
    }
    out.csv("laplace.csv", &rows)?;
    let failed: Vec<_> = rows.iter().filter(|r| !r.pass).map(|r| r.index).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(TaskError::Check(format!(
            "configurations {failed:?} exceed the gap {}",
            task.max_gap
        )))
    }
}

#[derive(Serialize)]
struct BoundRow {
    n: usize,
    j: Option<usize>,
    constant: f64,
}

fn bounds(cfg: &ExperimentConfig, out: &mut TaskOutput) -> Outcome {
    let task = cfg.section(&cfg.bounds, "bounds")?;
    if task.orders.is_empty() {
        return Err(ConfigError::new("bounds.orders", "must not be empty").into());
    }
    let mut records = Vec::new();
    let mut rows = Vec::new();
    match cfg.model.kind {
        ModelKind::Scalar => {
            let model = cfg.wightman_model()?;
            for &n in &task.orders {
                let b = bound_integral_scalar(n, &model, &cfg.bound_grid)?;
                rows.push(BoundRow {
                    n,
                    j: None,
                    constant: b.a_n,
                });
                records.push(
                    json!({"op": "bound_integral_scalar", "parameters": {"n": n}, "result": b}),
                );
            }
        }
        ModelKind::Vector => {
            if let Some(q) = &cfg.model.quaternion {
                records.push(
                    json!({"op": "small_x_order", "parameters": q, "result": q.small_x_order()}),
                );
            }
            for &n in &task.orders {
                for j in 0..=n {
                    let b = bound_integral_vector(n, j, &cfg.bound_grid)?;
                    rows.push(BoundRow {
                        n,
                        j: Some(j),
                        constant: b.constant,
                    });
                    records.push(json!({"op": "bound_integral_vector", "parameters": {"n": n, "j": j}, "result": b}));
                }
            }
        }
    }
    out.csv("bounds.csv", &rows)?;
    out.jsonl("bounds.jsonl", &records)?;
    Ok(())
}

#[derive(Serialize)]
struct MarginRow {
    kind: &'static str,
    order: usize,
    index: usize,
    margin: f64,
}

fn certify(cfg: &ExperimentConfig, out: &mut TaskOutput) -> Outcome {
    let task = cfg.section(&cfg.certify, "certify")?;
    let model = cfg.wightman_model()?;
    let family = task.family()?;
    let cert = hssc_certify(
        &model,
        task.n_max,
        &family,
        &cfg.bound_grid,
        &cfg.quadrature,
    )?;
    let mut rows: Vec<MarginRow> = cert
        .orders
        .iter()
        .flat_map(|o| {
            o.margins
                .iter()
                .enumerate()
                .map(move |(index, &margin)| MarginRow {
                    kind: "order",
                    order: o.n,
                    index,
                    margin,
                })
        })
        .collect();
    rows.extend(cert.pairs.iter().map(|p| MarginRow {
        kind: "pair",
        order: p.m + p.n,
        index: p.index,
        margin: p.margin,
    }));
    out.json("certificate.json", &cert)?;
    out.csv("margins.csv", &rows)?;
    if cert.pass {
        Ok(())
    } else {
        Err(TaskError::Check(format!(
            "certificate fails with worst margin {} ({})",
            cert.worst_margin,
            cert.witness.as_deref().unwrap_or("no witness")
        )))
    }
}

#[derive(Serialize)]
struct GramRow {
    i: usize,
    j: usize,
    w: f64,
    w_im: f64,
    p: f64,
    p_im: f64,
}

fn krein(cfg: &ExperimentConfig, out: &mut TaskOutput) -> Outcome {
    let task = cfg.section(&cfg.krein, "krein")?;
    let model = cfg.wightman_model()?;
    let basis = task
        .basis
        .iter()
        .enumerate()
        .map(|(i, m)| build_monomial(m, &format!("krein.basis[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;
    let top = basis
        .iter()
        .map(|m| m.iter().map(|f| f.dim() / model.d).sum::<usize>())
        .max()
        .unwrap_or(0);
    let (a, _) = bound_constants(&model, top.max(1), &cfg.bound_grid)?;
    let chain = constant_chain(&a)?;
    let seminorms = basis
        .iter()
        .map(|m| monomial_seminorm(m, &chain, model.d))
        .collect::<Result<Vec<_>, _>>()?;
    let g = build_gram_pair(&model, &basis, &seminorms, &cfg.quadrature)?;
    let rows: Vec<GramRow> = (0..g.dim())
        .flat_map(|i| (0..g.dim()).map(move |j| (i, j)))
        .map(|(i, j)| GramRow {
            i,
            j,
            w: g.w()[(i, j)].re,
            w_im: g.w()[(i, j)].im,
            p: g.p()[(i, j)].re,
            p_im: g.p()[(i, j)].im,
        })
        .collect();
    out.csv("gram.csv", &rows)?;
    let majorization: Majorization = majorization_check(&g)?;
    let reduction = if majorization.pass {
        Some(krein_reduce(&g)?)
    } else {
        None
    };
    let search = match &task.search {
        Some(s) => Some(search_negative_direction(
            &model,
            &basis,
            s.subset_size,
            s.trials,
            cfg.seed,
            &cfg.quadrature,
        )?),
        None => None,
    };
    out.json(
        "krein.json",
        &json!({
            "dim": g.dim(),
            "seminorms": seminorms,
            "chain": chain,
            "majorization": majorization,
            "reduction": reduction.as_ref().map(|k| json!({
                "degenerate_dim": k.degenerate_dim,
                "spectral_norm_ratio": k.spectral_norm_ratio,
                "square_defect": k.square_defect,
                "reconstruction_error": k.reconstruction_error,
                "remajorization_ratio": k.remajorization_ratio,
            })),
            "negative_search": search.as_ref().map(|s| json!({
                "found": s.found,
                "min_eigenvalue": s.min_eigenvalue,
                "error_bound": s.error_bound,
                "trials": s.trials,
                "witness_degrees": s.basis.iter().map(Vec::len).collect::<Vec<_>>(),
            })),
        }),
    )?;
    if majorization.pass {
        Ok(())
    } else {
        Err(TaskError::Check(format!(
            "P does not majorize W (ratio {})",
            majorization.ratio
        )))
    }
}

#[derive(Serialize)]
struct ClusterCsvRow {
    lambda: f64,
    value: f64,
    value_im: f64,
    magnitude: f64,
    tolerance: f64,
}

fn cluster(cfg: &ExperimentConfig, out: &mut TaskOutput) -> Outcome {
    let task = cfg.section(&cfg.cluster, "cluster")?;
    let model = cfg.wightman_model()?;
    let phi = build_product(&task.phi, "cluster.phi")?;
    let psi = build_product(&task.psi, "cluster.psi")?;
    let a = task.direction(model.d)?;
    let rows: Vec<ClusterCsvRow> =
        cluster_decay(&model, &phi, &psi, &a, &task.lambdas, &cfg.quadrature)?
            .into_iter()
            .map(|r| ClusterCsvRow {
                lambda: r.lambda,
                value: r.value.re,
                value_im: r.value.im,
                magnitude: r.magnitude,
                tolerance: r.tolerance,
            })
            .collect();
    out.csv("cluster.csv", &rows)?;
    Ok(())
}

#[derive(Serialize)]
struct SpectralRow {
    index: usize,
    value: f64,
    value_im: f64,
    magnitude: f64,
}

fn spectral(cfg: &ExperimentConfig, out: &mut TaskOutput) -> Outcome {
    let task = cfg.section(&cfg.spectral, "spectral")?;
    let model = cfg.wightman_model()?;
    let family = build_products(&task.functions, "spectral.functions")?;
    let quad: &HyperplaneQuadrature = &cfg.quadrature;
    let report = spectral_support_check(&model, &family, quad)?;
    let rows: Vec<SpectralRow> = report
        .values
        .iter()
        .enumerate()
        .map(|(index, v)| SpectralRow {
            index,
            value: v.re,
            value_im: v.im,
            magnitude: v.norm(),
        })
        .collect();
    out.csv("spectral.csv", &rows)?;
    let pass = report.max_abs <= report.tolerance;
    out.json(
        "spectral.json",
        &json!({"max_abs": report.max_abs, "tolerance": report.tolerance, "pass": pass}),
    )?;
    if pass {
        Ok(())
    } else {
        Err(TaskError::Check(format!(
            "max |Ŵ^T| = {} exceeds the tolerance {}",
            report.max_abs, report.tolerance
        )))
    }
}
