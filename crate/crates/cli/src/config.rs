//! Experiment configuration: a single TOML document with explicit
//! defaults. Parsing collects every problem it finds instead of stopping
//! at the first one.

use std::fmt;

use mixreg_core::{Control, Domain, Kernel, Point, Shape};
use serde::Serialize;
use toml::{Table, Value};

/// Version of the configuration, CSV and JSON layouts.
pub const SCHEMA_VERSION: i64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub schema_version: i64,
    pub seed: u64,
    pub output_dir: Option<String>,
    pub domain: DomainConfig,
    pub kernel: KernelConfig,
    pub operator: OperatorConfig,
    pub problem: ProblemConfig,
    pub grid: GridConfig,
    pub diagnostics: Diagnostics,
    pub tolerances: Tolerances,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainConfig {
    pub shape: Shape,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelConfig {
    Fractional {
        alpha: f64,
        lambda: f64,
        truncation: Option<f64>,
    },
    Subordinate {
        mu1: f64,
        mu2: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatorConfig {
    pub a: f64,
    pub a0: f64,
    pub c0: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Linear,
    Semilinear,
    Hjb,
    Serrin,
}

impl ProblemKind {
    fn name(self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Semilinear => "semilinear",
            Self::Hjb => "hjb",
            Self::Serrin => "serrin",
        }
    }
}

/// `L u + H(|Du|) = f + f_slope·u` with `H(g) = h_linear·g + h_quadratic·g²`;
/// HJB problems use `controls` instead.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    pub f: f64,
    pub f_slope: f64,
    pub h_linear: f64,
    pub h_quadratic: f64,
    pub controls: Vec<Vec<Control>>,
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridConfig {
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub regularity: bool,
    pub barriers: bool,
    pub overdetermined: bool,
    pub boundary_samples: usize,
    pub directions: Vec<Point>,
    pub barrier_radii: Vec<f64>,
    pub barrier_h_ratio: usize,
    pub barrier_nodes: usize,
    pub psi_q: f64,
    pub assumption_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tolerances {
    pub normal_dev: f64,
    pub harnack_ratio: f64,
    pub min_v: f64,
    pub fit_r2: f64,
}

/// Every problem found while parsing, in document order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub errors: Vec<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration:")?;
        for e in &self.errors {
            write!(f, "\n  - {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

/// Takes typed keys out of one table, recording type errors; whatever is
/// left over when it finishes is reported as unknown.
struct Section<'e> {
    path: String,
    table: Table,
    errors: &'e mut Vec<String>,
}

impl<'e> Section<'e> {
    fn new(path: &str, table: Table, errors: &'e mut Vec<String>) -> Self {
        Self {
            path: path.to_string(),
            table,
            errors,
        }
    }

    fn key(&self, k: &str) -> String {
        if self.path.is_empty() {
            k.to_string()
        } else {
            format!("{}.{k}", self.path)
        }
    }

    fn type_error(&mut self, k: &str, expected: &str) {
        let key = self.key(k);
        self.errors.push(format!("`{key}` must be {expected}"));
    }

    fn f64(&mut self, k: &str) -> Option<f64> {
        match self.table.remove(k)? {
            Value::Float(x) => Some(x),
            Value::Integer(i) => Some(i as f64),
            _ => {
                self.type_error(k, "a number");
                None
            }
        }
    }

    fn f64_or(&mut self, k: &str, default: f64) -> f64 {
        self.f64(k).unwrap_or(default)
    }

    fn int(&mut self, k: &str) -> Option<i64> {
        match self.table.remove(k)? {
            Value::Integer(i) => Some(i),
            _ => {
                self.type_error(k, "an integer");
                None
            }
        }
    }

    fn count_or(&mut self, k: &str, default: usize) -> usize {
        match self.int(k) {
            Some(i) if i >= 0 => i as usize,
            Some(_) => {
                self.type_error(k, "a nonnegative integer");
                default
            }
            None => default,
        }
    }

    fn bool_or(&mut self, k: &str, default: bool) -> bool {
        match self.table.remove(k) {
            None => default,
            Some(Value::Boolean(b)) => b,
            Some(_) => {
                self.type_error(k, "true or false");
                default
            }
        }
    }

    fn string(&mut self, k: &str) -> Option<String> {
        match self.table.remove(k)? {
            Value::String(s) => Some(s),
            _ => {
                self.type_error(k, "a string");
                None
            }
        }
    }

    fn numbers(v: &Value) -> Option<Vec<f64>> {
        v.as_array()?
            .iter()
            .map(|x| x.as_float().or_else(|| x.as_integer().map(|i| i as f64)))
            .collect()
    }

    fn point(&mut self, k: &str) -> Option<Point> {
        let v = self.table.remove(k)?;
        match Self::numbers(&v) {
            Some(xs) if xs.len() == 2 => Some([xs[0], xs[1]]),
            _ => {
                self.type_error(k, "an array of two numbers");
                None
            }
        }
    }

    fn list(&mut self, k: &str) -> Option<Vec<f64>> {
        let v = self.table.remove(k)?;
        let out = Self::numbers(&v);
        if out.is_none() {
            self.type_error(k, "an array of numbers");
        }
        out
    }

    fn points(&mut self, k: &str) -> Option<Vec<Point>> {
        let v = self.table.remove(k)?;
        let out: Option<Vec<Point>> = v.as_array().and_then(|a| {
            a.iter()
                .map(|p| Self::numbers(p).filter(|x| x.len() == 2).map(|x| [x[0], x[1]]))
                .collect()
        });
        if out.is_none() {
            self.type_error(k, "an array of two-number arrays");
        }
        out
    }

    fn subsection(&mut self, k: &str) -> Option<Table> {
        match self.table.remove(k)? {
            Value::Table(t) => Some(t),
            _ => {
                self.type_error(k, "a table");
                None
            }
        }
    }

    fn finish(self) {
        for k in self.table.keys() {
            let key = if self.path.is_empty() {
                k.clone()
            } else {
                format!("{}.{k}", self.path)
            };
            self.errors.push(format!("unknown key `{key}`"));
        }
    }
}

fn range(errors: &mut Vec<String>, ok: bool, msg: impl Into<String>) {
    if !ok {
        errors.push(msg.into());
    }
}

fn parse_domain(t: Table, errors: &mut Vec<String>) -> Option<DomainConfig> {
    let mut s = Section::new("domain", t, errors);
    let kind = s.string("shape");
    let dim = s.count_or("dim", 2);
    let center = s.point("center").unwrap_or([0.0, 0.0]);
    let shape = match kind.as_deref() {
        Some("ball") => {
            let radius = s.f64_or("radius", 1.0);
            Some(Shape::Ball { center, radius })
        }
        Some("ellipse") => match s.point("semi_axes") {
            Some(semi_axes) => Some(Shape::Ellipse { center, semi_axes }),
            None => {
                s.errors.push("`domain.semi_axes` is required for an ellipse".into());
                None
            }
        },
        Some("star") => {
            let r0 = s.f64_or("r0", 1.0);
            let modes = match s.points("modes") {
                Some(ms) => {
                    let mut out = Vec::with_capacity(ms.len());
                    for [m, eps] in ms {
                        if m >= 0.0 && m.fract() == 0.0 {
                            out.push((m as u32, eps));
                        } else {
                            s.errors.push(format!("`domain.modes` index {m} must be a nonnegative integer"));
                        }
                    }
                    out
                }
                None => Vec::new(),
            };
            Some(Shape::Star { center, r0, modes })
        }
        Some(other) => {
            s.errors
                .push(format!("`domain.shape` must be ball, ellipse or star (got `{other}`)"));
            None
        }
        None => {
            s.errors.push("`domain.shape` is required".into());
            None
        }
    };
    s.finish();
    let shape = shape?;
    range(errors, dim == 1 || dim == 2, format!("domain.dim must be 1 or 2 (got {dim})"));
    if dim == 1 && !matches!(shape, Shape::Ball { .. }) {
        errors.push("one-dimensional domains must be balls (intervals)".into());
        return None;
    }
    if let Err(e) = Domain::from_shape(shape.clone(), dim) {
        errors.push(format!("domain: {e}"));
        return None;
    }
    Some(DomainConfig { shape, dim })
}

fn parse_kernel(t: Table, errors: &mut Vec<String>) -> Option<KernelConfig> {
    let mut s = Section::new("kernel", t, errors);
    let family = s.string("family");
    let k = match family.as_deref() {
        Some("fractional") => {
            let alpha = s.f64("alpha");
            let lambda = s.f64_or("lambda", 1.0);
            let truncation = s.f64("truncation");
            if alpha.is_none() {
                s.errors.push("`kernel.alpha` is required for the fractional family".into());
            }
            alpha.map(|alpha| KernelConfig::Fractional {
                alpha,
                lambda,
                truncation,
            })
        }
        Some("subordinate") => {
            let mu1 = s.f64("mu1");
            let mu2 = s.f64("mu2");
            if mu1.is_none() || mu2.is_none() {
                s.errors.push("`kernel.mu1` and `kernel.mu2` are required for the subordinate family".into());
            }
            mu1.zip(mu2).map(|(mu1, mu2)| KernelConfig::Subordinate { mu1, mu2 })
        }
        Some(other) => {
            s.errors
                .push(format!("`kernel.family` must be fractional or subordinate (got `{other}`)"));
            None
        }
        None => {
            s.errors.push("`kernel.family` is required".into());
            None
        }
    };
    s.finish();
    let k = k?;
    let before = errors.len();
    match &k {
        KernelConfig::Fractional {
            alpha,
            lambda,
            truncation,
        } => {
            range(errors, *alpha > 0.0 && *alpha < 2.0, "alpha must lie in (0,2)");
            range(errors, *lambda > 0.0, "lambda must be positive");
            if let Some(t) = truncation {
                range(errors, *t > 0.0, "truncation must be positive");
            }
        }
        KernelConfig::Subordinate { mu1, mu2 } => {
            range(errors, *mu1 > 0.0 && *mu1 < 1.0, "mu1 must lie in (0,1)");
            range(errors, *mu2 > 0.0 && *mu2 < 1.0, "mu2 must lie in (0,1)");
        }
    }
    (errors.len() == before).then_some(k)
}

fn parse_operator(t: Table, errors: &mut Vec<String>) -> OperatorConfig {
    let mut s = Section::new("operator", t, errors);
    let o = OperatorConfig {
        a: s.f64_or("a", 0.0),
        a0: s.f64_or("a0", 1.0),
        c0: s.f64_or("c0", 0.0),
        kappa: s.f64_or("kappa", 0.05),
    };
    s.finish();
    range(errors, o.a0 >= 0.0, "a0 must be nonnegative");
    range(errors, o.a >= 0.0 && o.a <= o.a0, format!("a must lie in [0, a0] = [0, {}]", o.a0));
    range(errors, o.c0 >= 0.0, "c0 must be nonnegative");
    range(errors, o.kappa > 0.0 && o.kappa < 1.0 / 16.0, "kappa must lie in (0,1/16)");
    o
}

fn parse_controls(v: Value, errors: &mut Vec<String>) -> Vec<Vec<Control>> {
    let mut out = Vec::new();
    let Some(outer) = v.as_array() else {
        errors.push("`problem.controls` must be an array of arrays of {drift, source} tables".into());
        return out;
    };
    for (i, set) in outer.iter().enumerate() {
        let Some(inner) = set.as_array() else {
            errors.push(format!("`problem.controls[{i}]` must be an array"));
            continue;
        };
        let mut row = Vec::new();
        for (j, c) in inner.iter().enumerate() {
            let Some(t) = c.as_table() else {
                errors.push(format!("`problem.controls[{i}][{j}]` must be a table"));
                continue;
            };
            let mut s = Section::new(&format!("problem.controls[{i}][{j}]"), t.clone(), errors);
            let drift = s.point("drift").unwrap_or([0.0, 0.0]);
            let source = s.f64_or("source", 0.0);
            s.finish();
            row.push(Control { drift, source });
        }
        out.push(row);
    }
    out
}

fn parse_problem(t: Table, errors: &mut Vec<String>) -> ProblemConfig {
    let mut s = Section::new("problem", t, errors);
    let kind = match s.string("kind").as_deref() {
        None | Some("linear") => ProblemKind::Linear,
        Some("semilinear") => ProblemKind::Semilinear,
        Some("hjb") => ProblemKind::Hjb,
        Some("serrin") => ProblemKind::Serrin,
        Some(other) => {
            s.errors.push(format!(
                "`problem.kind` must be linear, semilinear, hjb or serrin (got `{other}`)"
            ));
            ProblemKind::Linear
        }
    };
    let f = s.f64_or("f", -1.0);
    let f_slope = s.f64_or("f_slope", 0.0);
    let h_linear = s.f64_or("h_linear", 0.0);
    let h_quadratic = s.f64_or("h_quadratic", 0.0);
    let tol = s.f64_or("tol", 1e-8);
    let max_iter = s.count_or("max_iter", 200);
    let controls = s.table.remove("controls");
    s.finish();
    let controls = controls.map(|v| parse_controls(v, errors)).unwrap_or_default();
    let p = ProblemConfig {
        kind,
        f,
        f_slope,
        h_linear,
        h_quadratic,
        controls,
        tol,
        max_iter,
    };
    range(errors, p.tol > 0.0, "problem.tol must be positive");
    range(errors, p.max_iter > 0, "problem.max_iter must be positive");
    let nonlinear = p.f_slope != 0.0 || p.h_linear != 0.0 || p.h_quadratic != 0.0;
    range(
        errors,
        !nonlinear || matches!(kind, ProblemKind::Semilinear | ProblemKind::Serrin),
        format!(
            "f_slope, h_linear and h_quadratic apply to semilinear and serrin problems, not {}",
            kind.name()
        ),
    );
    match kind {
        ProblemKind::Hjb => range(errors, !p.controls.is_empty(), "hjb problems need a non-empty `problem.controls`"),
        _ => range(errors, p.controls.is_empty(), "`problem.controls` applies to hjb problems only"),
    }
    p
}

fn parse_grid(t: Table, errors: &mut Vec<String>) -> GridConfig {
    let mut s = Section::new("grid", t, errors);
    let g = GridConfig {
        h: s.f64_or("h", 1.0 / 64.0),
    };
    s.finish();
    range(errors, g.h > 0.0, "grid.h must be positive");
    g
}

fn parse_diagnostics(t: Table, errors: &mut Vec<String>) -> Diagnostics {
    let mut s = Section::new("diagnostics", t, errors);
    let d = Diagnostics {
        regularity: s.bool_or("regularity", false),
        barriers: s.bool_or("barriers", false),
        overdetermined: s.bool_or("overdetermined", false),
        boundary_samples: s.count_or("boundary_samples", 256),
        directions: s.points("directions").unwrap_or_else(|| vec![[1.0, 0.0], [1.0, 1.0]]),
        barrier_radii: s.list("barrier_radii").unwrap_or_else(|| vec![0.25, 0.5, 1.0]),
        barrier_h_ratio: s.count_or("barrier_h_ratio", 64),
        barrier_nodes: s.count_or("barrier_nodes", 200),
        psi_q: s.f64_or("psi_q", 2.0),
        assumption_samples: s.count_or("assumption_samples", 2000),
    };
    s.finish();
    range(errors, d.boundary_samples > 0, "diagnostics.boundary_samples must be positive");
    range(
        errors,
        d.directions.iter().all(|e| e[0].hypot(e[1]) > 0.0),
        "diagnostics.directions must be non-zero vectors",
    );
    range(
        errors,
        d.barrier_radii.iter().all(|&r| r > 0.0 && r <= 1.0),
        "diagnostics.barrier_radii must lie in (0,1]",
    );
    range(errors, d.barrier_h_ratio >= 4, "diagnostics.barrier_h_ratio must be at least 4");
    range(errors, d.barrier_nodes > 0, "diagnostics.barrier_nodes must be positive");
    range(errors, d.psi_q > 0.0, "diagnostics.psi_q must be positive");
    range(errors, d.assumption_samples > 0, "diagnostics.assumption_samples must be positive");
    d
}

fn parse_tolerances(t: Table, errors: &mut Vec<String>) -> Tolerances {
    let mut s = Section::new("tolerances", t, errors);
    let tol = Tolerances {
        normal_dev: s.f64_or("normal_dev", 0.02),
        harnack_ratio: s.f64_or("harnack_ratio", 2.0),
        min_v: s.f64_or("min_v", 1e-3),
        fit_r2: s.f64_or("fit_r2", 0.9),
    };
    s.finish();
    range(errors, tol.normal_dev > 0.0, "tolerances.normal_dev must be positive");
    range(errors, tol.harnack_ratio >= 1.0, "tolerances.harnack_ratio must be at least 1");
    range(errors, tol.min_v >= 0.0, "tolerances.min_v must be nonnegative");
    range(errors, (0.0..=1.0).contains(&tol.fit_r2), "tolerances.fit_r2 must lie in [0,1]");
    tol
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let table: Table = toml::from_str(text).map_err(|e| ConfigError {
        errors: vec![format!("malformed document: {}", e.message())],
    })?;
    let mut errors = Vec::new();
    let mut top = Section::new("", table, &mut errors);
    let schema_version = top.int("schema_version").unwrap_or(SCHEMA_VERSION);
    let seed = top.int("seed").unwrap_or(0);
    let output_dir = top.string("output_dir");
    let domain = top.subsection("domain");
    let kernel = top.subsection("kernel");
    let sections: Vec<Table> = ["operator", "problem", "grid", "diagnostics", "tolerances"]
        .iter()
        .map(|k| top.subsection(k).unwrap_or_default())
        .collect();
    top.finish();
    range(
        &mut errors,
        schema_version == SCHEMA_VERSION,
        format!("schema_version {schema_version} is not supported (expected {SCHEMA_VERSION})"),
    );
    range(&mut errors, seed >= 0, "seed must be nonnegative");
    if domain.is_none() {
        errors.push("missing section [domain]".into());
    }
    if kernel.is_none() {
        errors.push("missing section [kernel]".into());
    }
    let domain = domain.and_then(|t| parse_domain(t, &mut errors));
    let kernel = kernel.and_then(|t| parse_kernel(t, &mut errors));
    let [operator, problem, grid, diagnostics, tolerances]: [Table; 5] =
        sections.try_into().expect("five sections");
    let operator = parse_operator(operator, &mut errors);
    let problem = parse_problem(problem, &mut errors);
    let grid = parse_grid(grid, &mut errors);
    let diagnostics = parse_diagnostics(diagnostics, &mut errors);
    let tolerances = parse_tolerances(tolerances, &mut errors);
    if let (Some(d), Some(k)) = (&domain, &kernel) {
        if let Err(e) = build_kernel(k, d.dim) {
            errors.push(format!("kernel: {e}"));
        }
    }
    match (domain, kernel) {
        (Some(domain), Some(kernel)) if errors.is_empty() => Ok(ExperimentConfig {
            schema_version,
            seed: seed as u64,
            output_dir,
            domain,
            kernel,
            operator,
            problem,
            grid,
            diagnostics,
            tolerances,
        }),
        _ => Err(ConfigError { errors }),
    }
}

pub fn build_kernel(k: &KernelConfig, dim: usize) -> mixreg_core::Result<Kernel> {
    match *k {
        KernelConfig::Fractional {
            alpha,
            lambda,
            truncation,
        } => Kernel::fractional(alpha, lambda, truncation, dim),
        KernelConfig::Subordinate { mu1, mu2 } => Kernel::subordinate(mu1, mu2, dim),
    }
}

fn float_array(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| Value::Float(x)).collect())
}

impl ExperimentConfig {
    pub fn build_domain(&self) -> mixreg_core::Result<Domain> {
        Domain::from_shape(self.domain.shape.clone(), self.domain.dim)
    }

    pub fn build_kernel(&self) -> mixreg_core::Result<Kernel> {
        build_kernel(&self.kernel, self.domain.dim)
    }

    /// Renders the configuration as a document that parses back to it.
    pub fn render(&self) -> String {
        let mut top = Table::new();
        top.insert("schema_version".into(), Value::Integer(self.schema_version));
        top.insert("seed".into(), Value::Integer(self.seed as i64));
        if let Some(o) = &self.output_dir {
            top.insert("output_dir".into(), Value::String(o.clone()));
        }
        let mut d = Table::new();
        d.insert("dim".into(), Value::Integer(self.domain.dim as i64));
        match &self.domain.shape {
            Shape::Ball { center, radius } => {
                d.insert("shape".into(), Value::String("ball".into()));
                d.insert("center".into(), float_array(center));
                d.insert("radius".into(), Value::Float(*radius));
            }
            Shape::Ellipse { center, semi_axes } => {
                d.insert("shape".into(), Value::String("ellipse".into()));
                d.insert("center".into(), float_array(center));
                d.insert("semi_axes".into(), float_array(semi_axes));
            }
            Shape::Star { center, r0, modes } => {
                d.insert("shape".into(), Value::String("star".into()));
                d.insert("center".into(), float_array(center));
                d.insert("r0".into(), Value::Float(*r0));
                d.insert(
                    "modes".into(),
                    Value::Array(modes.iter().map(|&(m, e)| float_array(&[m as f64, e])).collect()),
                );
            }
        }
        top.insert("domain".into(), Value::Table(d));
        let mut k = Table::new();
        match self.kernel {
            KernelConfig::Fractional {
                alpha,
                lambda,
                truncation,
            } => {
                k.insert("family".into(), Value::String("fractional".into()));
                k.insert("alpha".into(), Value::Float(alpha));
                k.insert("lambda".into(), Value::Float(lambda));
                if let Some(t) = truncation {
                    k.insert("truncation".into(), Value::Float(t));
                }
            }
            KernelConfig::Subordinate { mu1, mu2 } => {
                k.insert("family".into(), Value::String("subordinate".into()));
                k.insert("mu1".into(), Value::Float(mu1));
                k.insert("mu2".into(), Value::Float(mu2));
            }
        }
        top.insert("kernel".into(), Value::Table(k));
        let o = &self.operator;
        let mut t = Table::new();
        for (name, v) in [("a", o.a), ("a0", o.a0), ("c0", o.c0), ("kappa", o.kappa)] {
            t.insert(name.into(), Value::Float(v));
        }
        top.insert("operator".into(), Value::Table(t));
        let p = &self.problem;
        let mut t = Table::new();
        t.insert("kind".into(), Value::String(p.kind.name().into()));
        for (name, v) in [
            ("f", p.f),
            ("f_slope", p.f_slope),
            ("h_linear", p.h_linear),
            ("h_quadratic", p.h_quadratic),
            ("tol", p.tol),
        ] {
            t.insert(name.into(), Value::Float(v));
        }
        t.insert("max_iter".into(), Value::Integer(p.max_iter as i64));
        if !p.controls.is_empty() {
            let sets = p
                .controls
                .iter()
                .map(|set| {
                    Value::Array(
                        set.iter()
                            .map(|c| {
                                let mut ct = Table::new();
                                ct.insert("drift".into(), float_array(&c.drift));
                                ct.insert("source".into(), Value::Float(c.source));
                                Value::Table(ct)
                            })
                            .collect(),
                    )
                })
                .collect();
            t.insert("controls".into(), Value::Array(sets));
        }
        top.insert("problem".into(), Value::Table(t));
        let mut t = Table::new();
        t.insert("h".into(), Value::Float(self.grid.h));
        top.insert("grid".into(), Value::Table(t));
        let d = &self.diagnostics;
        let mut t = Table::new();
        t.insert("regularity".into(), Value::Boolean(d.regularity));
        t.insert("barriers".into(), Value::Boolean(d.barriers));
        t.insert("overdetermined".into(), Value::Boolean(d.overdetermined));
        t.insert("boundary_samples".into(), Value::Integer(d.boundary_samples as i64));
        t.insert(
            "directions".into(),
            Value::Array(d.directions.iter().map(|e| float_array(e)).collect()),
        );
        t.insert("barrier_radii".into(), float_array(&d.barrier_radii));
        t.insert("barrier_h_ratio".into(), Value::Integer(d.barrier_h_ratio as i64));
        t.insert("barrier_nodes".into(), Value::Integer(d.barrier_nodes as i64));
        t.insert("psi_q".into(), Value::Float(d.psi_q));
        t.insert("assumption_samples".into(), Value::Integer(d.assumption_samples as i64));
        top.insert("diagnostics".into(), Value::Table(t));
        let tol = &self.tolerances;
        let mut t = Table::new();
        for (name, v) in [
            ("normal_dev", tol.normal_dev),
            ("harnack_ratio", tol.harnack_ratio),
            ("min_v", tol.min_v),
            ("fit_r2", tol.fit_r2),
        ] {
            t.insert(name.into(), Value::Float(v));
        }
        top.insert("tolerances".into(), Value::Table(t));
        toml::to_string(&top).expect("tables of plain values always render")
    }
}
