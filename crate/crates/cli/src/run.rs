//! Experiment pipeline: solve, measure, write artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use mixreg_core::barriers::{build_exp_barrier, build_psi_barrier, verify_exp_barrier, verify_psi_barrier};
use mixreg_core::kernels::theta_by_quadrature;
use mixreg_core::overdetermined::{
    moving_plane_scan, normal_derivative_trace, serrin_solve, symmetry_report, NormalTrace, ScanOptions,
};
use mixreg_core::regularity::regularity_suite;
use mixreg_core::solver::{assemble, solve_hjb, solve_linear, solve_semilinear};
use mixreg_core::{
    check_assumption, Beyond, DiscreteOperator, Domain, GridFunction, Kernel, PicardOptions, PolicyOptions,
    SolveReport, SuiteOptions,
};
use serde::Serialize;

use crate::config::{ExperimentConfig, ProblemKind, SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Regularity,
    Barriers,
    Serrin,
    CheckKernel,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Solve => "solve",
            Self::Regularity => "regularity",
            Self::Barriers => "barriers",
            Self::Serrin => "serrin",
            Self::CheckKernel => "check-kernel",
        }
    }
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub schema_version: i64,
    pub command: String,
    pub seed: u64,
    /// Non-finite values are written as `null`.
    pub metrics: BTreeMap<String, Option<f64>>,
    /// `"pass"` or `"fail"` per check.
    pub flags: BTreeMap<String, String>,
    pub passed: bool,
}

impl Summary {
    fn new(command: Command, seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.name().to_string(),
            seed,
            metrics: BTreeMap::new(),
            flags: BTreeMap::new(),
            passed: true,
        }
    }

    fn metric(&mut self, name: &str, v: f64) {
        self.metrics.insert(name.to_string(), v.is_finite().then_some(v));
    }

    fn flag(&mut self, name: &str, ok: bool) {
        self.passed &= ok;
        self.flags.insert(name.to_string(), if ok { "pass" } else { "fail" }.to_string());
    }

    pub fn metric_value(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied().flatten()
    }

    pub fn flag_passed(&self, name: &str) -> Option<bool> {
        self.flags.get(name).map(|s| s == "pass")
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    schema_version: i64,
    command: &'a str,
    status: &'a str,
    error: Option<String>,
    files: &'a [String],
}

/// Writes files into the output directory and remembers their names.
struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
}

impl Artifacts {
    fn text(&mut self, name: &str, contents: &str) -> anyhow::Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.text(name, &s)
    }

    fn manifest(&mut self, command: Command, error: Option<String>) -> anyhow::Result<()> {
        let mut files = self.files.clone();
        files.sort();
        let m = Manifest {
            schema_version: SCHEMA_VERSION,
            command: command.name(),
            status: if error.is_none() { "complete" } else { "failed" },
            error,
            files: &files,
        };
        let s = serde_json::to_string_pretty(&m)? + "\n";
        fs::write(self.dir.join("MANIFEST.json"), s).context("writing MANIFEST.json")
    }
}

/// Runs one command and writes its artifacts into `out`. A `MANIFEST.json`
/// with status `complete` or `failed` is written in every case.
pub fn run(config: &ExperimentConfig, command: Command, out: &Path) -> anyhow::Result<Summary> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut art = Artifacts {
        dir: out.to_path_buf(),
        files: Vec::new(),
    };
    match pipeline(config, command, &mut art) {
        Ok(summary) => {
            art.manifest(command, None)?;
            Ok(summary)
        }
        Err(e) => {
            art.manifest(command, Some(format!("{e:#}")))?;
            Err(e)
        }
    }
}

fn pipeline(cfg: &ExperimentConfig, command: Command, art: &mut Artifacts) -> anyhow::Result<Summary> {
    let domain = cfg.build_domain()?;
    let kernel = cfg.build_kernel()?;
    let mut summary = Summary::new(command, cfg.seed);
    art.text("config.toml", &cfg.render())?;
    let d = &cfg.diagnostics;
    match command {
        Command::CheckKernel => check_kernel(cfg, &kernel, art, &mut summary)?,
        Command::Barriers => barriers(cfg, &domain, &kernel, art, &mut summary)?,
        Command::Serrin => {
            let p = &cfg.problem;
            if p.kind == ProblemKind::Hjb {
                bail!("serrin experiments need a linear, semilinear or serrin problem");
            }
            if cfg.operator.c0 != 0.0 {
                bail!("serrin experiments use c0 = 0");
            }
            let ham = hamiltonian(cfg);
            let src = source(cfg);
            let opts = PicardOptions {
                tol: p.tol,
                max_iter: p.max_iter,
                ..PicardOptions::default()
            };
            let rep = serrin_solve(&domain, &kernel, cfg.operator.a, cfg.grid.h, &ham, &src, d.boundary_samples, opts)?;
            let op = assemble(&domain, &kernel, cfg.operator.a, cfg.grid.h, 0.0)?;
            record_solve(&op, &domain, &rep.solve, art, &mut summary)?;
            overdetermined(cfg, &domain, &rep.solve.solution, Some(rep.trace), art, &mut summary)?;
        }
        Command::Solve | Command::Regularity => {
            let op = assemble(&domain, &kernel, cfg.operator.a, cfg.grid.h, cfg.operator.c0)?;
            let rep = solve(cfg, &op)?;
            let trace = record_solve(&op, &domain, &rep, art, &mut summary)?;
            if command == Command::Regularity || d.regularity {
                regularity(cfg, &domain, &rep.solution, art, &mut summary)?;
            }
            if command == Command::Solve && d.overdetermined {
                overdetermined(cfg, &domain, &rep.solution, trace, art, &mut summary)?;
            }
            if command == Command::Solve && d.barriers {
                barriers(cfg, &domain, &kernel, art, &mut summary)?;
            }
        }
    }
    art.json("summary.json", &summary)?;
    Ok(summary)
}

fn hamiltonian(cfg: &ExperimentConfig) -> impl Fn(f64) -> f64 {
    let (l, q) = (cfg.problem.h_linear, cfg.problem.h_quadratic);
    move |g| l * g + q * g * g
}

fn source(cfg: &ExperimentConfig) -> impl Fn(f64) -> f64 {
    let (f, s) = (cfg.problem.f, cfg.problem.f_slope);
    move |u| f + s * u
}

fn solve(cfg: &ExperimentConfig, op: &DiscreteOperator) -> anyhow::Result<SolveReport> {
    let p = &cfg.problem;
    let rep = match p.kind {
        ProblemKind::Linear => solve_linear(op, &|_| p.f, Beyond::Zero)?,
        ProblemKind::Semilinear | ProblemKind::Serrin => {
            let opts = PicardOptions {
                tol: p.tol,
                max_iter: p.max_iter,
                ..PicardOptions::default()
            };
            solve_semilinear(op, &hamiltonian(cfg), &source(cfg), Beyond::Zero, opts)?
        }
        ProblemKind::Hjb => {
            let opts = PolicyOptions {
                tol: p.tol,
                max_sweeps: p.max_iter,
            };
            solve_hjb(op, &p.controls, Beyond::Zero, opts)?
        }
    };
    Ok(rep)
}

/// Writes the solution and its solve metrics; returns the normal trace on
/// planar domains.
fn record_solve(
    op: &DiscreteOperator,
    domain: &Domain,
    rep: &SolveReport,
    art: &mut Artifacts,
    s: &mut Summary,
) -> anyhow::Result<Option<NormalTrace>> {
    art.text("solution.csv", &rep.solution_csv(op))?;
    art.json("solve.json", rep)?;
    let u0 = rep.solution.interpolate(domain.center())?;
    s.metric("u0", u0);
    s.metric("sup_u", rep.solution.sup_norm());
    s.metric("residual", rep.residual);
    s.metric("krylov_iterations", rep.iterations as f64);
    s.metric("outer_iterations", rep.outer_iterations as f64);
    s.flag("converged", rep.contracted);
    if rep.certificate.applicable {
        s.flag("max_principle", rep.certificate.holds);
    }
    if domain.dim() != 2 {
        return Ok(None);
    }
    let trace = normal_derivative_trace(&rep.solution, domain, 256)?;
    s.metric("normal_mean", trace.mean);
    s.metric("normal_dev", trace.relative_deviation);
    Ok(Some(trace))
}

fn scale_csv(rows: &[mixreg_core::regularity::ScaleRow]) -> String {
    let mut out = String::from("scale,sup,inf,osc,ratio,nodes\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{},{}", r.scale, r.sup, r.inf, r.osc, r.ratio, r.nodes);
    }
    out
}

fn bucket_csv(fit: &mixreg_core::regularity::HolderFit) -> String {
    let mut out = String::from("distance,pairs,max_increment\n");
    for b in &fit.buckets {
        let _ = writeln!(out, "{},{},{}", b.distance, b.pairs, b.max_increment);
    }
    out
}

fn regularity(
    cfg: &ExperimentConfig,
    domain: &Domain,
    u: &GridFunction,
    art: &mut Artifacts,
    s: &mut Summary,
) -> anyhow::Result<()> {
    let mut opts = SuiteOptions::for_domain(domain);
    opts.kappa = cfg.operator.kappa;
    let rep = regularity_suite(u, domain, opts)?;
    art.json("regularity.json", &rep)?;
    art.text("oscillation.csv", &scale_csv(&rep.tau_fit.rows))?;
    art.text("harnack.csv", &scale_csv(&rep.harnack_table))?;
    art.text("kappa_buckets.csv", &bucket_csv(&rep.kappa_fit))?;
    art.text("gamma_buckets.csv", &bucket_csv(&rep.gamma_fit))?;
    let mut sig = String::from("sigma,max_gradient,nodes\n");
    for r in &rep.sigma_scaling_table.rows {
        let _ = writeln!(sig, "{},{},{}", r.sigma, r.max_gradient, r.nodes);
    }
    art.text("sigma_scaling.csv", &sig)?;
    let r2 = cfg.tolerances.fit_r2;
    let tau = rep.tau_fit.tau;
    let kappa = rep.kappa_fit.fit;
    let gamma = rep.gamma_fit.fit;
    let sigma = rep.sigma_scaling_table.fit;
    s.metric("lipschitz", rep.lipschitz_estimate);
    s.metric("tau_fit", tau.exponent);
    s.metric("tau_r2", tau.r2);
    s.metric("kappa_fit", kappa.exponent);
    s.metric("kappa_r2", kappa.r2);
    s.metric("gamma_fit", gamma.exponent);
    s.metric("gamma_r2", gamma.r2);
    s.metric("harnack_max_ratio", rep.max_harnack_ratio());
    s.metric("sigma_exponent", sigma.exponent);
    s.metric("sigma_r2", sigma.r2);
    s.metric("excluded_nodes", rep.excluded_nodes as f64);
    s.flag("tau_positive", tau.exponent > 0.0 && (tau.exponent.is_infinite() || tau.r2 >= r2));
    s.flag("oscillation_monotone", rep.tau_fit.monotone);
    s.flag("kappa_positive", kappa.exponent > 0.0);
    s.flag("gamma_positive", gamma.exponent > 0.0);
    s.flag("harnack_bounded", rep.max_harnack_ratio() <= cfg.tolerances.harnack_ratio);
    s.flag("sigma_consistent", sigma.exponent >= kappa.exponent - 1.0 - 0.1);
    Ok(())
}

fn overdetermined(
    cfg: &ExperimentConfig,
    domain: &Domain,
    u: &GridFunction,
    trace: Option<NormalTrace>,
    art: &mut Artifacts,
    s: &mut Summary,
) -> anyhow::Result<()> {
    if domain.dim() != 2 {
        bail!("overdetermined diagnostics need a planar domain");
    }
    let d = &cfg.diagnostics;
    let trace = match trace {
        Some(t) if t.points.len() == d.boundary_samples => t,
        _ => normal_derivative_trace(u, domain, d.boundary_samples)?,
    };
    let mut csv = String::from("x,y,dudn\n");
    for (p, v) in trace.points.iter().zip(&trace.values) {
        let _ = writeln!(csv, "{},{},{}", p[0], p[1], v);
    }
    art.text("normal_trace.csv", &csv)?;
    s.metric("normal_mean", trace.mean);
    s.metric("normal_dev", trace.relative_deviation);
    s.flag("serrin_constancy", trace.relative_deviation <= cfg.tolerances.normal_dev);
    let opts = ScanOptions {
        tol: cfg.tolerances.min_v,
        ..ScanOptions::default()
    };
    let mut scans = Vec::new();
    for (i, &e) in d.directions.iter().enumerate() {
        let scan = moving_plane_scan(u, domain, e, opts)?;
        let mut csv = String::from("lambda,min_v,max_abs_v,nodes,situation_a,situation_b\n");
        for r in &scan.rows {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{}",
                r.lambda,
                r.min_v,
                r.max_abs_v,
                r.nodes,
                u8::from(r.situation_a),
                u8::from(r.situation_b)
            );
        }
        art.text(&format!("scan_{i}.csv"), &csv)?;
        s.metric(&format!("lambda0_{i}"), scan.lambda0.unwrap_or(f64::NAN));
        s.metric(&format!("min_v_above_{i}"), scan.min_v_above);
        s.flag(&format!("moving_plane_{i}"), scan.nonnegative_above);
        scans.push(scan);
    }
    let sym = symmetry_report(u, domain, Some(&trace))?;
    let mut csv = String::from("r,mean,spread\n");
    for p in &sym.profile {
        let _ = writeln!(csv, "{},{},{}", p.r, p.mean, p.spread);
    }
    art.text("radial_profile.csv", &csv)?;
    s.metric("angular_deviation", sym.angular_deviation);
    s.metric("monotonicity_violations", sym.monotonicity_violations as f64);
    s.flag("radial_monotone", sym.monotonicity_violations == 0);
    #[derive(Serialize)]
    struct Report<'a> {
        trace: &'a NormalTrace,
        scans: &'a [mixreg_core::MovingPlaneScan],
        symmetry: &'a mixreg_core::SymmetryReport,
    }
    art.json(
        "serrin.json",
        &Report {
            trace: &trace,
            scans: &scans,
            symmetry: &sym,
        },
    )
}

fn barriers(
    cfg: &ExperimentConfig,
    domain: &Domain,
    kernel: &Kernel,
    art: &mut Artifacts,
    s: &mut Summary,
) -> anyhow::Result<()> {
    let d = &cfg.diagnostics;
    let a = cfg.operator.a;
    let mut reports = BTreeMap::new();
    for &r in &d.barrier_radii {
        let b = build_exp_barrier(r, domain.dim(), cfg.operator.a0, kernel)?;
        let rep = verify_exp_barrier(&b, kernel, a, d.barrier_h_ratio, d.barrier_nodes)?;
        s.metric(&format!("exp_barrier_violation_r{r}"), rep.max_violation);
        s.flag(&format!("exp_barrier_r{r}"), rep.holds);
        reports.insert(format!("exp_r{r}"), rep);
    }
    if domain.dim() == 2 {
        let b = build_psi_barrier(d.psi_q, &kernel.dominating, domain.rho() / 2.0)?;
        let r = 0.25;
        let h = b.sigma1 * r / 8.0 / 40.0;
        let rep = verify_psi_barrier(&b, domain, kernel, a, r, domain.boundary_point(0.0), h, 12)?;
        s.metric("psi_barrier_violation", rep.max_violation);
        s.flag("psi_barrier", rep.holds);
        reports.insert("psi".to_string(), rep);
    }
    art.json("barriers.json", &reports)
}

fn check_kernel(cfg: &ExperimentConfig, k: &Kernel, art: &mut Artifacts, s: &mut Summary) -> anyhow::Result<()> {
    let assumption = check_assumption(k, cfg.diagnostics.assumption_samples, cfg.seed, None);
    #[derive(Serialize)]
    struct ThetaRow {
        xi: f64,
        closed_form: f64,
        quadrature: f64,
        relative_error: f64,
    }
    let mut theta = Vec::new();
    let mut worst = 0.0f64;
    for xi in [0.05, 0.25, 0.5, 0.75, 0.95] {
        let closed_form = k.dominating.theta(xi)?;
        let quadrature = theta_by_quadrature(&k.dominating, xi)?;
        let relative_error = (closed_form - quadrature).abs() / quadrature.abs().max(f64::MIN_POSITIVE);
        worst = worst.max(relative_error);
        theta.push(ThetaRow {
            xi,
            closed_form,
            quadrature,
            relative_error,
        });
    }
    #[derive(Serialize)]
    struct Report<'a> {
        dim: usize,
        alpha: f64,
        lambda: f64,
        levy_mass: f64,
        kappa1: f64,
        radial: bool,
        strictly_decreasing: bool,
        beta: Option<f64>,
        assumption: &'a mixreg_core::AssumptionReport,
        theta: &'a [ThetaRow],
    }
    art.json(
        "kernel.json",
        &Report {
            dim: k.dim,
            alpha: k.alpha,
            lambda: k.lambda,
            levy_mass: k.levy_mass,
            kappa1: k.dominating.kappa1,
            radial: k.radial,
            strictly_decreasing: k.strictly_decreasing,
            beta: k.beta,
            assumption: &assumption,
            theta: &theta,
        },
    )?;
    s.metric("max_ratio_a", assumption.max_ratio_a);
    s.metric("rho_estimate", assumption.rho_estimate);
    s.metric("theta_max_relative_error", worst);
    s.flag("assumption", assumption.violations == 0);
    s.flag("theta_agreement", worst <= 1e-6);
    Ok(())
}
