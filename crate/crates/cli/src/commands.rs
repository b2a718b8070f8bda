//! One function per subcommand. Each writes its artifacts into `out` and
//! returns the list of files written.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use electroinv::coefficients::{Bump, ModelBundle};
use electroinv::elliptic::{solve_dirichlet, LinearEllipticProblem};
use electroinv::forward::{forward_solve, nonuniqueness_with_sources, SourceDemoState};
use electroinv::inverse::{
    fit_diffusion, reconstruct_phi_boundary, reconstruct_phi_interior, DiffusionFitProblem, FitDatum, Reference,
};
use electroinv::measure::{boundary_nonuniqueness, lab::write_jsonl, linearisation_rate, Laboratory};
use electroinv::mesh::{BoundaryField, Grid, GridSpec, ScalarField};

use crate::config::RunConfig;
use crate::{CliError, Command, Outcome};

pub fn dispatch(cmd: Command, cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    match cmd {
        Command::Forward => forward(cfg, out),
        Command::Measure => measure(cfg, out),
        Command::VerifyLinearisation => verify_linearisation(cfg, out),
        Command::ReconstructPhi => reconstruct_phi(cfg, out),
        Command::FitD => fit_d(cfg, out),
        Command::DemoBoundaryNonuniqueness => demo_boundary(cfg, out),
        Command::DemoSourceNonuniqueness => demo_source(cfg, out),
        Command::Convergence => convergence(cfg, out),
    }
}

/// JSON report wrapper carrying the run seed.
#[derive(Serialize)]
struct Seeded<'a, T: Serialize> {
    seed: u64,
    #[serde(flatten)]
    body: &'a T,
}

fn write_json<T: Serialize>(out: &Path, name: &str, seed: u64, body: &T) -> Result<String, CliError> {
    let text = serde_json::to_string_pretty(&Seeded { seed, body })?;
    fs::write(out.join(name), text + "\n")?;
    Ok(name.to_string())
}

fn grid(cfg: &RunConfig) -> Result<Arc<Grid>, CliError> {
    Ok(Arc::new(cfg.grid.build()?))
}

fn bundle(cfg: &RunConfig) -> Result<ModelBundle, CliError> {
    Ok(cfg.model.build()?)
}

fn lab_on(cfg: &RunConfig, g: Arc<Grid>) -> Result<Laboratory, CliError> {
    Ok(Laboratory::new(g, bundle(cfg)?).with_options(cfg.solver.clone()).with_noise(cfg.noise.clone()))
}

fn need_experiments(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.experiments.is_empty() {
        return Err(CliError::Config("experiments: at least one [[experiments]] entry is required".into()));
    }
    Ok(())
}

fn missing(section: &str) -> CliError {
    CliError::Config(format!("[{section}] section is required for this command"))
}

fn forward(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    need_experiments(cfg)?;
    let g = grid(cfg)?;
    let b = bundle(cfg)?;
    let mut outputs = vec![];
    let mut iterations = vec![];
    for (k, req) in cfg.experiments.iter().enumerate() {
        let gamma = req.gamma.iter().map(|p| p.on(&g)).collect::<Result<Vec<_>, _>>()?;
        let tau = req.tau.on(&g)?;
        let state = forward_solve(&b, &gamma, &tau, &cfg.solver)?;
        let name = format!("state/exp{k:03}");
        state.write_dir(&out.join(&name))?;
        iterations.push(state.report.outer_iterations);
        outputs.push(name);
    }
    Ok(Outcome {
        summary: format!("forward: {} state(s) written, outer iterations {iterations:?}", outputs.len()),
        outputs,
        failure: None,
    })
}

fn measure(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    need_experiments(cfg)?;
    let lab = lab_on(cfg, grid(cfg)?)?;
    let measurements = lab.run_batch(&cfg.experiments).into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut w = BufWriter::new(File::create(out.join("measurements.jsonl"))?);
    write_jsonl(&measurements, &mut w)?;
    w.flush()?;
    Ok(Outcome {
        outputs: vec!["measurements.jsonl".into()],
        summary: format!("measure: {} experiment(s) recorded", measurements.len()),
        failure: None,
    })
}

fn verify_linearisation(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let l = cfg.linearisation.as_ref().ok_or_else(|| missing("linearisation"))?;
    let g = grid(cfg)?;
    let eta0 = l.eta0.on(&g)?;
    let f = l.f.iter().map(|p| p.on(&g)).collect::<Result<Vec<_>, _>>()?;
    let report = linearisation_rate(&bundle(cfg)?, &l.mu, &eta0, &f, &l.rate)?;
    let name = write_json(out, "rate_report.json", cfg.seed, &report)?;
    let slope = report.slope.map_or("unavailable".to_string(), |s| format!("{s:.4}"));
    Ok(Outcome {
        outputs: vec![name],
        summary: format!("verify-linearisation: slope {slope}, {} failed point(s)", report.failures.len()),
        failure: None,
    })
}

#[derive(Serialize)]
struct OffsetReport {
    count: usize,
    mean: f64,
    std: f64,
    max_deviation: f64,
    tolerance: f64,
    within_tolerance: bool,
    boundary_entries: usize,
    interior_entries: usize,
    skipped_levels: usize,
    failures: Vec<String>,
}

fn reconstruct_phi(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let r = cfg.reconstruct.as_ref().ok_or_else(|| missing("reconstruct"))?;
    let g = grid(cfg)?;
    let lab = lab_on(cfg, g.clone())?;
    let x0 = match r.x0 {
        Some(id) if g.boundary_index(id).is_some() => id,
        Some(id) => return Err(CliError::Config(format!("reconstruct.x0: node {id} is not on the boundary"))),
        None => g.boundary_ids()[0],
    };
    let reference = Reference { z0: r.z0.clone(), x0 };

    let support_z: Vec<Vec<f64>> = r.t_grid.iter().map(|&t| [r.mu.as_slice(), &[t]].concat()).collect();
    let support = reconstruct_phi_boundary(&lab, &support_z, g.boundary_ids(), &reference)?;
    let xs: Vec<usize> = g.boundary_ids().iter().step_by(r.x_stride).copied().collect();
    let mut table = reconstruct_phi_boundary(&lab, &r.z_samples, &xs, &reference)?;
    let boundary_entries = table.len();
    let mut skipped = 0;
    for y in &r.probes {
        let rec = reconstruct_phi_interior(&lab, &support, &r.mu, &r.s_levels, y)?;
        skipped += rec.skipped.len();
        table.merge(rec.table)?;
    }

    let mut w = BufWriter::new(File::create(out.join("support_table.csv"))?);
    support.write_csv(&mut w)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(out.join("table.csv"))?);
    table.write_csv(&mut w)?;
    w.flush()?;

    let truth_model = cfg.model.build()?.potential;
    let stats = table.offsets(|p, t, x| truth_model.eval(p, t, x));
    let mut failures = support.failures.clone();
    failures.extend(table.failures.iter().cloned());
    let report = OffsetReport {
        count: stats.count,
        mean: stats.mean,
        std: stats.std,
        max_deviation: stats.max_deviation,
        tolerance: r.offset_tol,
        within_tolerance: stats.std <= r.offset_tol,
        boundary_entries,
        interior_entries: table.len() - boundary_entries,
        skipped_levels: skipped,
        failures,
    };
    let name = write_json(out, "offsets.json", cfg.seed, &report)?;
    let summary = format!(
        "reconstruct-phi: {} entries, offset mean {:.6}, std {:.3e} (tolerance {:.1e})",
        stats.count, stats.mean, stats.std, r.offset_tol
    );
    Ok(Outcome {
        outputs: vec!["support_table.csv".into(), "table.csv".into(), name],
        failure: (!report.within_tolerance).then(|| format!("offset spread {:.3e} exceeds tolerance {:.1e}", stats.std, r.offset_tol)),
        summary,
    })
}

fn refined(spec: &GridSpec, factor: usize) -> GridSpec {
    GridSpec { n: spec.n.iter().map(|n| (n - 1) * factor + 1).collect(), ..spec.clone() }
}

#[derive(Serialize)]
struct FitOutput<'a> {
    family: &'a electroinv::inverse::DiffusionFamily,
    data_grid: &'a GridSpec,
    experiments: usize,
    #[serde(flatten)]
    report: &'a electroinv::inverse::FitReport,
}

fn fit_d(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let f = cfg.fit.as_ref().ok_or_else(|| missing("fit"))?;
    need_experiments(cfg)?;
    let data_spec = refined(&cfg.grid, f.data_refinement);
    let data_lab = lab_on(cfg, Arc::new(data_spec.build()?))?;
    let data = cfg
        .experiments
        .iter()
        .zip(data_lab.run_batch(&cfg.experiments))
        .map(|(req, m)| Ok(FitDatum { request: req.clone(), measurement: m? }))
        .collect::<Result<Vec<_>, CliError>>()?;
    let problem = DiffusionFitProblem {
        grid: grid(cfg)?,
        base: bundle(cfg)?,
        family: f.family,
        theta_init: f.theta_init.clone(),
        theta_box: f.theta_box.clone(),
        data,
        picard: cfg.solver.clone(),
    };
    let report = fit_diffusion(&problem, &f.options)?;
    let body = FitOutput { family: &f.family, data_grid: &data_spec, experiments: cfg.experiments.len(), report: &report };
    let name = write_json(out, "fit_report.json", cfg.seed, &body)?;
    Ok(Outcome {
        outputs: vec![name],
        summary: format!(
            "fit-d: theta {:?}, loss {:.3e}, {} iteration(s), {}",
            report.theta, report.loss, report.iterations, report.reason
        ),
        failure: None,
    })
}

#[derive(Serialize)]
struct BumpOutput<'a> {
    bump: &'a Bump,
    boundary_discrepancy: f64,
    min_interior_difference: f64,
    #[serde(flatten)]
    report: &'a electroinv::measure::BumpDemoReport,
}

fn demo_boundary(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let c = cfg.bump.as_ref().ok_or_else(|| missing("bump"))?;
    need_experiments(cfg)?;
    let g = grid(cfg)?;
    let bump = Bump { centre: c.centre.clone(), radius: c.radius, amp: c.amp };
    let report = boundary_nonuniqueness(&g, &bundle(cfg)?, &bump, c.tilde.build()?, &cfg.experiments, &cfg.solver)?;
    let body = BumpOutput {
        bump: &bump,
        boundary_discrepancy: report.boundary_discrepancy(),
        min_interior_difference: report.min_interior_difference(),
        report: &report,
    };
    let name = write_json(out, "bump_report.json", cfg.seed, &body)?;
    Ok(Outcome {
        outputs: vec![name],
        summary: format!(
            "demo-boundary-nonuniqueness: boundary discrepancy {:.3e}, interior difference {:.3e}",
            body.boundary_discrepancy, body.min_interior_difference
        ),
        failure: None,
    })
}

#[derive(Serialize)]
struct Residuals {
    residual_max: f64,
    residual_l2: f64,
}

impl From<&SourceDemoState> for Residuals {
    fn from(s: &SourceDemoState) -> Self {
        Self { residual_max: s.residual_max, residual_l2: s.residual_l2 }
    }
}

#[derive(Serialize)]
struct SourceOutput {
    grid: GridSpec,
    zero: Residuals,
    eigen: Residuals,
    /// Largest nodal difference between the two states.
    separation: f64,
}

fn demo_source(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let g = grid(cfg)?;
    let (zero, eigen) = nonuniqueness_with_sources(&g)?;
    zero.state.write_dir(&out.join("source_zero"))?;
    eigen.state.write_dir(&out.join("source_eigen"))?;
    let body = SourceOutput {
        grid: g.spec(),
        zero: (&zero).into(),
        eigen: (&eigen).into(),
        separation: zero.state.c[0].max_abs_diff(&eigen.state.c[0]),
    };
    let name = write_json(out, "source_demo.json", cfg.seed, &body)?;
    Ok(Outcome {
        outputs: vec![name, "source_zero".into(), "source_eigen".into()],
        summary: format!(
            "demo-source-nonuniqueness: residuals {:.3e} (zero) and {:.3e} (eigen), separation {:.3}",
            body.zero.residual_max, body.eigen.residual_max, body.separation
        ),
        failure: None,
    })
}

fn manufactured_exact(x: &[f64]) -> f64 {
    x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1])
}

/// `|| I_h u - u* ||_L2` over the unit square, bilinear interpolant, 3x3 Gauss points per cell.
pub fn continuum_l2_error(g: &Grid, values: &[f64], exact: impl Fn(&[f64]) -> f64) -> Result<f64, CliError> {
    let gauss = [(-(0.6f64.sqrt()), 5.0 / 9.0), (0.0, 8.0 / 9.0), (0.6f64.sqrt(), 5.0 / 9.0)];
    let n = g.nodes_per_axis();
    let h = g.spacing();
    let lo = g.lower();
    let mut sum = 0.0;
    for i in 0..n[0] - 1 {
        for j in 0..n[1] - 1 {
            for (gx, wx) in gauss {
                for (gy, wy) in gauss {
                    let x = [lo[0] + (i as f64 + 0.5 + 0.5 * gx) * h[0], lo[1] + (j as f64 + 0.5 + 0.5 * gy) * h[1]];
                    let e = g.interpolate(values, &x)? - exact(&x);
                    sum += wx * wy * 0.25 * h[0] * h[1] * e * e;
                }
            }
        }
    }
    Ok(sum.sqrt())
}

/// `-div((1 + x) grad u) = f` on the unit square with `u = x(1-x)y(1-y)`.
fn convergence(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let mut rows = vec![];
    for &n in &cfg.convergence.sizes {
        let g = Arc::new(Grid::unit(2, n)?);
        let a = ScalarField::from_fn(g.clone(), |x| 1.0 + x[0])?;
        let f = ScalarField::from_fn(g.clone(), |x| {
            let (x, y) = (x[0], x[1]);
            -((1.0 - 2.0 * x) * y * (1.0 - y) + (1.0 + x) * (-2.0 * y * (1.0 - y) - 2.0 * x * (1.0 - x)))
        })?;
        let p = LinearEllipticProblem::new(a, f, BoundaryField::constant(g.clone(), 0.0), 1.0)?;
        let (u, _) = solve_dirichlet(&p, cfg.solver.inner_tol)?;
        let exact = ScalarField::from_fn(g.clone(), manufactured_exact)?;
        let l2 = continuum_l2_error(&g, u.values(), manufactured_exact)?;
        rows.push((n, g.spacing()[0], u.max_abs_diff(&exact), l2));
    }
    let mut w = BufWriter::new(File::create(out.join("convergence.csv"))?);
    writeln!(w, "n,h,nodal_max_error,l2_error,l2_ratio,observed_order")?;
    let mut orders = vec![];
    for (k, &(n, h, nodal, l2)) in rows.iter().enumerate() {
        let (ratio, order) = match k {
            0 => (String::new(), String::new()),
            _ => {
                let (h0, e0) = (rows[k - 1].1, rows[k - 1].3);
                let order = (e0 / l2).ln() / (h0 / h).ln();
                orders.push(order);
                (format!("{:e}", e0 / l2), format!("{order:e}"))
            }
        };
        writeln!(w, "{n},{h:e},{nodal:e},{l2:e},{ratio},{order}")?;
    }
    w.flush()?;
    Ok(Outcome {
        outputs: vec!["convergence.csv".into()],
        summary: format!("convergence: observed L2 orders {orders:.3?}"),
        failure: None,
    })
}
