//! Serrin-type overdetermined experiment: normal-derivative constancy,
//! the moving-plane scan with anti-symmetric difference fields, and the
//! narrow-domain, Hopf and corner-growth checks.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::fit::linear_fit;
use crate::geometry::{add, dot, norm, scale, sub, Domain, Point, Shape};
use crate::kernels::Kernel;
use crate::lattice::{Beyond, GridFunction};
use crate::solver::{assemble, solve_semilinear, PicardOptions, SolveReport};

/// Reflection across the hyperplane `T = {x·e = λ}`; `H = {x·e > λ}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReflectionFrame {
    pub e: Point,
    pub lambda: f64,
}

impl ReflectionFrame {
    pub fn new(e: Point, lambda: f64) -> Result<Self> {
        let n = norm(e);
        if !(n > 0.0) || !n.is_finite() || !lambda.is_finite() {
            return Err(invalid("direction", "e must be a finite non-zero vector"));
        }
        Ok(Self {
            e: scale(e, 1.0 / n),
            lambda,
        })
    }

    /// `x − 2(x·e)e + 2λe`.
    pub fn reflect(&self, x: Point) -> Point {
        add(sub(x, scale(self.e, 2.0 * dot(x, self.e))), scale(self.e, 2.0 * self.lambda))
    }

    /// Signed distance to `T`, positive in `H`.
    pub fn offset(&self, x: Point) -> f64 {
        dot(x, self.e) - self.lambda
    }

    pub fn in_half_space(&self, x: Point) -> bool {
        self.offset(x) > 0.0
    }

    /// The same hyperplane with the opposite half-space.
    pub fn flipped(&self) -> Self {
        Self {
            e: scale(self.e, -1.0),
            lambda: -self.lambda,
        }
    }
}

/// `u(x)` by bilinear interpolation inside the band, the extension rule
/// beyond it.
fn sample(u: &GridFunction, x: Point) -> f64 {
    u.interpolate(x).unwrap_or_else(|_| u.beyond().eval(x))
}

/// `v(x) = u(x) − u(x̄)` at every lattice node.
pub fn antisymmetric_field(u: &GridFunction, frame: &ReflectionFrame) -> GridFunction {
    let lat = u.lattice();
    let values = (0..lat.len())
        .into_par_iter()
        .map(|i| u.value(i) - sample(u, frame.reflect(lat.coords(i))))
        .collect();
    GridFunction::new(lat.clone(), values, Beyond::Zero).expect("finite differences of finite values")
}

/// Normal derivative samples along `∂Ω`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalTrace {
    pub points: Vec<Point>,
    pub values: Vec<f64>,
    pub mean: f64,
    pub max_deviation: f64,
    /// `max |∂u/∂n − c̄| / |c̄|`.
    pub relative_deviation: f64,
}

/// One-sided second-order inward derivative `(4u(t) − u(2t))/(2t)` with
/// `t = 2h` at `m` boundary points, using `u = 0` on `∂Ω`.
pub fn normal_derivative_trace(u: &GridFunction, domain: &Domain, m: usize) -> Result<NormalTrace> {
    if domain.dim() != 2 {
        return Err(invalid("dim", "normal traces are sampled on planar domains"));
    }
    if m == 0 {
        return Err(invalid("samples", "need at least one boundary point"));
    }
    let t = 2.0 * u.lattice().h();
    let points = domain.boundary_samples(m);
    let values = points
        .par_iter()
        .map(|&p| {
            let n = domain.inward_normal(p)?;
            let u1 = u.interpolate(add(p, scale(n, t)))?;
            let u2 = u.interpolate(add(p, scale(n, 2.0 * t)))?;
            Ok((4.0 * u1 - u2) / (2.0 * t))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = values.iter().sum::<f64>() / m as f64;
    let max_deviation = values.iter().fold(0.0f64, |a, v| a.max((v - mean).abs()));
    Ok(NormalTrace {
        points,
        values,
        mean,
        max_deviation,
        relative_deviation: if mean != 0.0 { max_deviation / mean.abs() } else { f64::INFINITY },
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SerrinReport {
    pub solve: SolveReport,
    pub trace: NormalTrace,
}

/// Solves `Δu + aIu + H(|Du|) = f(u)` in Ω with `u = 0` outside and
/// measures the normal-derivative constancy.
#[allow(clippy::too_many_arguments)]
pub fn serrin_solve(
    domain: &Domain,
    k: &Kernel,
    a: f64,
    h: f64,
    hamiltonian: &dyn Fn(f64) -> f64,
    source: &dyn Fn(f64) -> f64,
    samples: usize,
    opts: PicardOptions,
) -> Result<SerrinReport> {
    if a > 0.0 && !k.radial {
        return Err(Error::KernelHypothesis("kernel must be radial"));
    }
    if a > 0.0 && !k.strictly_decreasing {
        return Err(Error::KernelHypothesis("kernel must be strictly decreasing"));
    }
    let op = assemble(domain, k, a, h, 0.0)?;
    let solve = solve_semilinear(&op, hamiltonian, source, Beyond::Zero, opts)?;
    let u = &solve.solution;
    if let Some(&idx) = op
        .unknowns()
        .iter()
        .min_by(|&&i, &&j| u.value(i).total_cmp(&u.value(j)))
    {
        if u.value(idx) <= 0.0 {
            return Err(Error::NotPositive {
                min: u.value(idx),
                at: op.lattice().coords(idx),
            });
        }
    }
    let trace = normal_derivative_trace(u, domain, samples)?;
    Ok(SerrinReport { solve, trace })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Situation {
    /// The reflected cap touches `∂Ω` away from `T`.
    A,
    /// `T` is orthogonal to `∂Ω` at a point of `∂Ω ∩ T`.
    B,
}

/// One scan position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanRow {
    pub lambda: f64,
    pub min_v: f64,
    pub max_abs_v: f64,
    pub nodes: usize,
    pub situation_a: bool,
    pub situation_b: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MovingPlaneScan {
    pub direction: Point,
    /// `l = sup_Ω x·e`.
    pub l: f64,
    pub step: f64,
    pub rows: Vec<ScanRow>,
    pub lambda0: Option<f64>,
    pub situation: Option<Situation>,
    /// Witness of the triggering situation.
    pub witness: Option<Point>,
    /// Smallest `v` over all positions strictly above `λ0`.
    pub min_v_above: f64,
    pub tol: f64,
    pub nonnegative_above: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanOptions {
    /// λ decrement; defaults to `h/4`.
    pub step: Option<f64>,
    /// Boundary samples for the geometric detectors.
    pub boundary_samples: usize,
    pub tol: f64,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            step: None,
            boundary_samples: 4096,
            tol: 1e-3,
        }
    }
}

/// Sweeps `T_{λ,e}` from `l = sup x·e` downwards, recording
/// `min v_{λ,e}` on the reflected cap `D_λ` and stopping at the first
/// position where situation A or B is detected.
pub fn moving_plane_scan(u: &GridFunction, domain: &Domain, e: Point, opts: ScanOptions) -> Result<MovingPlaneScan> {
    if domain.dim() != 2 {
        return Err(invalid("dim", "the moving-plane scan runs on planar domains"));
    }
    let lat = u.lattice();
    let h = lat.h();
    let base = ReflectionFrame::new(e, 0.0)?;
    let e = base.e;
    let m = opts.boundary_samples.max(16);
    let ts: Vec<f64> = (0..m).map(|i| 2.0 * std::f64::consts::PI * i as f64 / m as f64).collect();
    let bpts: Vec<Point> = ts.iter().map(|&t| domain.boundary_point(t)).collect();
    let l = bpts.iter().map(|&p| dot(p, e)).fold(f64::NEG_INFINITY, f64::max);
    let bottom = bpts.iter().map(|&p| dot(p, e)).fold(f64::INFINITY, f64::min);
    let step = opts.step.unwrap_or(h / 4.0);
    if !(step > 0.0) {
        return Err(invalid("step", "must be positive"));
    }
    let band = lat.bounding_box();
    let inside_band = |x: Point| x[0] >= band.0[0] && x[0] <= band.1[0] && x[1] >= band.0[1] && x[1] <= band.1[1];
    // For balls and ellipses −level(x) ≤ δ(x) inside Ω, which spares most
    // exact projections in the situation A detector.
    let level_bounds_distance = matches!(domain.shape(), Shape::Ball { .. } | Shape::Ellipse { .. });
    let interior: Vec<usize> = (0..lat.len()).filter(|&i| domain.contains(lat.coords(i))).collect();

    let mut rows = Vec::new();
    let mut lambda0 = None;
    let mut situation = None;
    let mut witness = None;
    let mut min_v_above = f64::INFINITY;
    let mut k = 1;
    loop {
        let lambda = l - k as f64 * step;
        if lambda <= bottom {
            break;
        }
        let frame = ReflectionFrame { e, lambda };
        // v on D_λ: nodes below T whose mirror image lies in the cap.
        let vals: Vec<f64> = interior
            .par_iter()
            .filter_map(|&i| {
                let x = lat.coords(i);
                if frame.offset(x) >= 0.0 {
                    return None;
                }
                let xr = frame.reflect(x);
                if !domain.contains(xr) {
                    return None;
                }
                Some(if inside_band(xr) {
                    u.interpolate(xr).map(|ur| u.value(i) - ur)
                } else {
                    Err(Error::OutsideDataBand(xr))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let min_v = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let max_abs_v = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));

        // Situation A: a cap boundary point at distance ≥ 2h from T whose
        // mirror image lies within h·min(1, d_T) of ∂Ω.
        let a_hit = bpts
            .par_iter()
            .filter(|&&p| frame.offset(p) >= 2.0 * h)
            .find_map_first(|&p| {
                let d_t = frame.offset(p);
                let pr = frame.reflect(p);
                let thr = h * d_t.min(1.0);
                if !domain.contains(pr) {
                    return Some(pr);
                }
                if level_bounds_distance && -domain.level(pr) > thr {
                    return None;
                }
                (domain.signed_distance(pr).unwrap_or(0.0) <= thr).then_some(pr)
            });
        // Situation B: |n·e| ≤ h at a crossing of ∂Ω with T.
        let mut b_hit = None;
        for i in 0..m {
            let j = (i + 1) % m;
            let (g0, g1) = (frame.offset(bpts[i]), frame.offset(bpts[j]));
            if g0 == 0.0 || g0.signum() != g1.signum() {
                let (mut lo, mut hi) = (ts[i], if j == 0 { 2.0 * std::f64::consts::PI } else { ts[j] });
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if frame.offset(domain.boundary_point(mid)).signum() == g0.signum() {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let p0 = domain.boundary_point(0.5 * (lo + hi));
                let n = domain.normal_at_projection(p0)?;
                if dot(n, e).abs() <= h {
                    b_hit = Some(p0);
                    break;
                }
            }
        }
        rows.push(ScanRow {
            lambda,
            min_v,
            max_abs_v,
            nodes: vals.len(),
            situation_a: a_hit.is_some(),
            situation_b: b_hit.is_some(),
        });
        if a_hit.is_some() || b_hit.is_some() {
            lambda0 = Some(lambda);
            situation = Some(if a_hit.is_some() { Situation::A } else { Situation::B });
            witness = a_hit.or(b_hit);
            break;
        }
        if !vals.is_empty() {
            min_v_above = min_v_above.min(min_v);
        }
        k += 1;
    }
    Ok(MovingPlaneScan {
        direction: e,
        l,
        step,
        rows,
        lambda0,
        situation,
        witness,
        min_v_above,
        tol: opts.tol,
        nonnegative_above: !(min_v_above < -opts.tol),
    })
}

/// Discrete narrow-domain certificate for an anti-symmetric field on `H`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NarrowDomainCertificate {
    /// `|D|` as node count times `h^n`.
    pub measure: f64,
    pub small: bool,
    /// `v ≥ −tol` on `(H ∩ Ω) \ D`, the narrow-domain hypothesis.
    pub hypothesis_holds: bool,
    /// `sup_{H∩Ω} v⁻`.
    pub sup_negative_part: f64,
    /// `‖c⁺‖_{L∞(D)} ‖v⁻‖_{Lⁿ(D)}`.
    pub bound_factor: f64,
    /// `sup v⁻ / bound_factor` when the factor is positive.
    pub fitted_c: Option<f64>,
    pub beta: f64,
    pub tol: f64,
    /// `v ≥ −tol` on all of `H ∩ Ω`.
    pub holds: bool,
}

/// Checks `v ≥ −tol` on `H ∩ Ω` for `v` anti-symmetric with respect to
/// `frame`, reporting the measured `sup v⁻` against the right-hand side
/// `‖c⁺‖_{L∞(D)}‖v⁻‖_{Lⁿ(D)}`.
#[allow(clippy::too_many_arguments)]
pub fn narrow_domain_check(
    v: &GridFunction,
    domain: &Domain,
    frame: &ReflectionFrame,
    region: &[usize],
    c: &dyn Fn(Point) -> f64,
    beta: f64,
    smallness: f64,
    tol: f64,
) -> Result<NarrowDomainCertificate> {
    let lat = v.lattice();
    let h = lat.h();
    let dim = lat.dim();
    if let Some(&i) = region.iter().find(|&&i| !frame.in_half_space(lat.coords(i))) {
        return Err(Error::RegionOutsideHalfSpace(format!(
            "x·e > {} fails at {:?}",
            frame.lambda,
            lat.coords(i)
        )));
    }
    let mut in_region = vec![false; lat.len()];
    for &i in region {
        in_region[i] = true;
    }
    let mut sup_neg: f64 = 0.0;
    let mut hypothesis = true;
    for i in 0..lat.len() {
        let x = lat.coords(i);
        if !(frame.in_half_space(x) && domain.contains(x)) {
            continue;
        }
        let neg = (-v.value(i)).max(0.0);
        sup_neg = sup_neg.max(neg);
        if !in_region[i] && neg > tol {
            hypothesis = false;
        }
    }
    let cell = h.powi(dim as i32);
    let c_plus = region.iter().fold(0.0f64, |m, &i| m.max(c(lat.coords(i)).max(0.0)));
    let ln_norm = region
        .iter()
        .map(|&i| (-v.value(i)).max(0.0).powi(dim as i32) * cell)
        .sum::<f64>()
        .powf(1.0 / dim as f64);
    let bound_factor = c_plus * ln_norm;
    let measure = region.len() as f64 * cell;
    Ok(NarrowDomainCertificate {
        measure,
        small: measure <= smallness,
        hypothesis_holds: hypothesis,
        sup_negative_part: sup_neg,
        bound_factor,
        fitted_c: (bound_factor > 0.0).then(|| sup_neg / bound_factor),
        beta,
        tol,
        holds: sup_neg <= tol,
    })
}

/// The coefficient `c = (f(u(x)) − f(u(x̄)))/(u(x) − u(x̄))`, falling back
/// to the derivative (or a secant with step floor 1e-12) when the values
/// coincide.
pub fn difference_quotient(f: &dyn Fn(f64) -> f64, df: Option<&dyn Fn(f64) -> f64>, ux: f64, uxr: f64) -> f64 {
    let d = ux - uxr;
    if d.abs() > 1e-12 {
        return (f(ux) - f(uxr)) / d;
    }
    match df {
        Some(g) => g(ux),
        None => (f(ux + 1e-12) - f(ux)) / 1e-12,
    }
}

/// Lipschitz constant of `H` on `[0, g_max]`, sampled on 1025 points.
pub fn drift_bound(hamiltonian: &dyn Fn(f64) -> f64, g_max: f64) -> f64 {
    let n = 1024;
    let xs: Vec<f64> = (0..=n).map(|i| g_max * i as f64 / n as f64).collect();
    xs.windows(2)
        .map(|w| {
            if w[1] > w[0] {
                (hamiltonian(w[1]) - hamiltonian(w[0])).abs() / (w[1] - w[0])
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max)
}

/// Drops `t` values below the `2h` floor, noting it in `warnings`.
fn floored(ts: &[f64], floor: f64, warnings: &mut Vec<String>) -> Vec<f64> {
    let kept: Vec<f64> = ts.iter().copied().filter(|&t| t >= floor * (1.0 - 1e-12)).collect();
    if kept.len() < ts.len() {
        warnings.push(format!("{} t values below {floor:e} dropped", ts.len() - kept.len()));
    }
    kept
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HopfReport {
    pub ts: Vec<f64>,
    pub ratios: Vec<f64>,
    /// Minimum of the ratios over the three smallest `t`.
    pub liminf: f64,
    pub degenerate: bool,
    pub warnings: Vec<String>,
}

/// `v(x0 + t n)/t` along the inward direction `n` on a decreasing grid.
pub fn hopf_ratio(v: &dyn Fn(Point) -> f64, x0: Point, n: Point, ts: &[f64], h: f64, tol: f64) -> Result<HopfReport> {
    let mut warnings = Vec::new();
    let mut ts = floored(ts, 2.0 * h, &mut warnings);
    ts.sort_by(|a, b| b.total_cmp(a));
    if ts.is_empty() {
        return Err(invalid("t", "no t values at or above 2h"));
    }
    let nn = norm(n);
    if !(nn > 0.0) {
        return Err(invalid("normal", "must be non-zero"));
    }
    let n = scale(n, 1.0 / nn);
    let ratios: Vec<f64> = ts.iter().map(|&t| v(add(x0, scale(n, t))) / t).collect();
    let tail = &ratios[ratios.len().saturating_sub(3)..];
    let liminf = tail.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(HopfReport {
        degenerate: liminf.abs() <= tol,
        ts,
        ratios,
        liminf,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CornerFit {
    pub ts: Vec<f64>,
    pub values: Vec<f64>,
    /// Fitted `p` in `v(tη̄) ≈ A t^p`; absent when `v` vanishes.
    pub p: Option<f64>,
    pub a: f64,
    pub r2: Option<f64>,
    /// `max |v(tη̄)| / t²` over the grid.
    pub quadratic_coefficient: f64,
    pub vanishing: bool,
    pub warnings: Vec<String>,
}

/// Evaluates `v(p0 + tη̄)` with `η̄ = τ − e`, where `τ` is the inward
/// tangent direction along `T`, and fits `A t^p`.
#[allow(clippy::too_many_arguments)]
pub fn corner_growth(
    v: &dyn Fn(Point) -> f64,
    p0: Point,
    e: Point,
    tau: Point,
    ts: &[f64],
    h: f64,
    tol: f64,
) -> Result<CornerFit> {
    let mut warnings = Vec::new();
    let ts = floored(ts, 2.0 * h, &mut warnings);
    if ts.len() < 2 {
        return Err(invalid("t", "need at least two t values at or above 2h"));
    }
    let eta = sub(tau, e);
    let values: Vec<f64> = ts.iter().map(|&t| v(add(p0, scale(eta, t)))).collect();
    let quadratic_coefficient = ts.iter().zip(&values).fold(0.0f64, |m, (t, v)| m.max(v.abs() / (t * t)));
    let vanishing = values.iter().all(|v| v.abs() <= tol);
    if vanishing || values.iter().any(|&v| v == 0.0) {
        return Ok(CornerFit {
            ts,
            values,
            p: None,
            a: 0.0,
            r2: None,
            quadratic_coefficient,
            vanishing,
            warnings,
        });
    }
    let sign = values[0].signum();
    let lx: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let ly: Vec<f64> = values.iter().map(|v| v.abs().ln()).collect();
    let fit = linear_fit(&lx, &ly)?;
    Ok(CornerFit {
        ts,
        values,
        p: Some(fit.slope),
        a: sign * fit.intercept.exp(),
        r2: Some(fit.r2),
        quadratic_coefficient,
        vanishing,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RadialSample {
    pub r: f64,
    pub mean: f64,
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SymmetryReport {
    pub center: Point,
    /// `max_r (max_θ u − min_θ u) / sup |u|`.
    pub angular_deviation: f64,
    pub profile: Vec<RadialSample>,
    /// Rings whose mean does not decrease strictly outwards.
    pub monotonicity_violations: usize,
    pub normal_deviation: Option<f64>,
    pub trivial: bool,
}

const RING_ANGLES: usize = 64;

fn ring(u: &GridFunction, c: Point, r: f64) -> (f64, f64, f64) {
    let (mut sum, mut lo, mut hi) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
    for j in 0..RING_ANGLES {
        let th = 2.0 * std::f64::consts::PI * j as f64 / RING_ANGLES as f64;
        let x = sample(u, add(c, [r * th.cos(), r * th.sin()]));
        sum += x;
        lo = lo.min(x);
        hi = hi.max(x);
    }
    (sum / RING_ANGLES as f64, lo, hi)
}

/// Fits the centre minimising the angular variance of `u` on circles,
/// then reports the angular spread and radial monotonicity about it.
pub fn symmetry_report(u: &GridFunction, domain: &Domain, trace: Option<&NormalTrace>) -> Result<SymmetryReport> {
    if domain.dim() != 2 {
        return Err(invalid("dim", "symmetry is measured on planar domains"));
    }
    let h = u.lattice().h();
    let sup = u.sup_norm();
    let normal_deviation = trace.map(|t| t.relative_deviation);
    if sup <= 1e-14 {
        return Ok(SymmetryReport {
            center: domain.center(),
            angular_deviation: 0.0,
            profile: Vec::new(),
            monotonicity_violations: 0,
            normal_deviation,
            trivial: true,
        });
    }
    let r_fit = 0.9 * domain.inradius();
    let rings = 16;
    let variance = |c: Point| -> f64 {
        (1..=rings)
            .map(|j| {
                let r = r_fit * j as f64 / rings as f64;
                let vals: Vec<f64> = (0..RING_ANGLES)
                    .map(|k| {
                        let th = 2.0 * std::f64::consts::PI * k as f64 / RING_ANGLES as f64;
                        sample(u, add(c, [r * th.cos(), r * th.sin()]))
                    })
                    .collect();
                let m = vals.iter().sum::<f64>() / vals.len() as f64;
                vals.iter().map(|v| (v - m).powi(2)).sum::<f64>()
            })
            .sum()
    };
    let mut c = domain.center();
    let mut best = variance(c);
    let mut step = 4.0 * h;
    while step > 1e-3 * h {
        let mut improved = false;
        for dir in [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]] {
            let y = add(c, scale(dir, step));
            let f = variance(y);
            if f < best {
                best = f;
                c = y;
                improved = true;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    // Rings stop 2h short of the boundary so that bilinear stencils never
    // mix in exterior nodes.
    let r_max = (domain.inradius() - norm(sub(c, domain.center())) - 2.0 * h).max(0.0);
    let n = (r_max / h).floor() as usize;
    let mut profile = Vec::with_capacity(n + 1);
    for j in 0..=n {
        let r = j as f64 * h;
        let (mean, lo, hi) = if j == 0 {
            let x = sample(u, c);
            (x, x, x)
        } else {
            ring(u, c, r)
        };
        profile.push(RadialSample {
            r,
            mean,
            spread: hi - lo,
        });
    }
    let angular_deviation = profile.iter().fold(0.0f64, |m, s| m.max(s.spread)) / sup;
    let monotonicity_violations = profile.windows(2).filter(|w| w[1].mean >= w[0].mean).count();
    Ok(SymmetryReport {
        center: c,
        angular_deviation,
        profile,
        monotonicity_violations,
        normal_deviation,
        trivial: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Lattice;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ball() -> Domain {
        Domain::ball([0.0, 0.0], 1.0, 2).unwrap()
    }

    fn field(domain: &Domain, h: f64, f: impl Fn(Point) -> f64) -> GridFunction {
        let lat = Lattice::covering(domain.bounding_box(), h, 2, 2);
        GridFunction::from_fn(lat, |x| if domain.contains(x) { f(x) } else { 0.0 }, Beyond::Zero)
    }

    fn torsion(x: Point) -> f64 {
        (1.0 - x[0] * x[0] - x[1] * x[1]) / 4.0
    }

    fn fractional() -> Kernel {
        Kernel::fractional(1.5, 1.0, None, 2).unwrap()
    }

    #[test]
    fn reflection_examples() {
        let f = ReflectionFrame::new([1.0, 0.0], 0.0).unwrap();
        assert_eq!(f.reflect([1.0, 0.0]), [-1.0, 0.0]);
        let g = ReflectionFrame::new([2.0, 0.0], 0.5).unwrap();
        assert_eq!(g.reflect([0.5, 0.3]), [0.5, 0.3]);
        assert!(ReflectionFrame::new([0.0, 0.0], 0.0).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let e = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let fr = ReflectionFrame::new(e, rng.random_range(-1.0..1.0)).unwrap();
            let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let y = fr.reflect(fr.reflect(x));
            assert!((y[0] - x[0]).abs() < 1e-14 && (y[1] - x[1]).abs() < 1e-14);
        }
    }

    #[test]
    fn serrin_on_the_ball_and_ellipse() {
        let h = 1.0 / 64.0;
        let opts = PicardOptions::default();
        let b = serrin_solve(&ball(), &fractional(), 0.0, h, &|_| 0.0, &|_| -1.0, 256, opts).unwrap();
        assert!((b.trace.mean - 0.5).abs() < 0.01 && b.trace.relative_deviation <= 0.02, "{:?}", b.trace.relative_deviation);
        let ell = Domain::ellipse([0.0, 0.0], [1.3, 1.0]).unwrap();
        let e = serrin_solve(&ell, &fractional(), 0.0, h, &|_| 0.0, &|_| -1.0, 256, opts).unwrap();
        assert!(e.trace.relative_deviation >= 10.0 * b.trace.relative_deviation);
    }

    #[test]
    fn serrin_mixed_ball_is_nearly_constant() {
        let r = serrin_solve(&ball(), &fractional(), 0.5, 1.0 / 64.0, &|_| 0.0, &|_| -1.0, 256, PicardOptions::default()).unwrap();
        assert!(r.trace.relative_deviation <= 0.05, "{}", r.trace.relative_deviation);
    }

    #[test]
    fn serrin_rejects_bad_kernels_and_signs() {
        let trunc = Kernel::fractional(1.5, 1.0, Some(0.5), 2).unwrap();
        let opts = PicardOptions::default();
        assert!(matches!(
            serrin_solve(&ball(), &trunc, 0.5, 1.0 / 16.0, &|_| 0.0, &|_| -1.0, 16, opts),
            Err(Error::KernelHypothesis(_))
        ));
        assert!(matches!(
            serrin_solve(&ball(), &fractional(), 0.0, 1.0 / 16.0, &|_| 0.0, &|_| 1.0, 16, opts),
            Err(Error::NotPositive { .. })
        ));
    }

    #[test]
    fn moving_plane_on_the_ball() {
        let d = ball();
        let h = 1.0 / 64.0;
        let u = field(&d, h, torsion);
        let s = moving_plane_scan(&u, &d, [1.0, 0.0], ScanOptions::default()).unwrap();
        let l0 = s.lambda0.unwrap();
        assert!(l0.abs() <= h, "{l0}");
        assert!(s.nonnegative_above && s.min_v_above >= -1e-3);
        // v vanishes at λ = 0; at λ0 = O(h) it is bounded by 2λ0 sup|Du|.
        assert!(s.rows.last().unwrap().max_abs_v <= 2.0 * l0.abs() * 0.5 + 1e-4);
        let diag = moving_plane_scan(&u, &d, [1.0, 1.0], ScanOptions::default()).unwrap();
        assert!(diag.lambda0.unwrap().abs() <= h);
    }

    #[test]
    fn moving_plane_on_the_ellipse() {
        let d = Domain::ellipse([0.0, 0.0], [1.3, 1.0]).unwrap();
        let h = 1.0 / 64.0;
        let u = serrin_solve(&d, &fractional(), 0.0, h, &|_| 0.0, &|_| -1.0, 64, PicardOptions::default())
            .unwrap()
            .solve
            .solution;
        let axis = moving_plane_scan(&u, &d, [1.0, 0.0], ScanOptions::default()).unwrap();
        assert_eq!(axis.situation, Some(Situation::B));
        // |n·e| ≤ h first holds at λ ≈ 1.69h on this ellipse.
        let l0 = axis.lambda0.unwrap();
        assert!(l0.abs() <= 2.0 * h, "{l0}");
        assert!(axis.rows.last().unwrap().max_abs_v <= 2.0 * l0 * 0.65 + 1e-4);
        let oblique = moving_plane_scan(&u, &d, [1.0, 1.0], ScanOptions::default()).unwrap();
        let row = oblique.rows.last().unwrap();
        assert!(oblique.lambda0.unwrap() > h, "{oblique:?}");
        assert!(oblique.nonnegative_above);
        assert!(row.max_abs_v > 1e-3);
    }

    #[test]
    fn moving_plane_is_equivariant_under_rotation() {
        let h = 1.0 / 64.0;
        let d = Domain::ellipse([0.0, 0.0], [1.3, 1.0]).unwrap();
        let u = field(&d, h, |x| 1.0 - (x[0] / 1.3).powi(2) - x[1] * x[1]);
        // A quarter turn maps the lattice onto itself.
        let dr = Domain::ellipse([0.0, 0.0], [1.0, 1.3]).unwrap();
        let ur = field(&dr, h, |x| 1.0 - x[0] * x[0] - (x[1] / 1.3).powi(2));
        let e = [0.6, 0.8];
        let a = moving_plane_scan(&u, &d, e, ScanOptions::default()).unwrap();
        let b = moving_plane_scan(&ur, &dr, [-0.8, 0.6], ScanOptions::default()).unwrap();
        assert!((a.lambda0.unwrap() - b.lambda0.unwrap()).abs() <= h);
        assert_eq!(a.situation, b.situation);
    }

    #[test]
    fn antisymmetric_field_vanishes_iff_symmetric() {
        let d = ball();
        let h = 1.0 / 32.0;
        let frame = ReflectionFrame::new([0.0, 1.0], 0.0).unwrap();
        let sym = field(&d, h, |x| x[0] + x[1] * x[1]);
        let v = antisymmetric_field(&sym, &frame);
        assert!(v.sup_norm() < 1e-12);
        let asym = field(&d, h, |x| x[1] * (1.0 - x[0] * x[0] - x[1] * x[1]));
        let w = antisymmetric_field(&asym, &frame);
        assert!(w.sup_norm() > 0.1);
        let lat = w.lattice();
        for i in 0..lat.len() {
            let x = lat.coords(i);
            if d.contains(x) {
                let j = lat.nearest(frame.reflect(x)).unwrap();
                assert!((w.value(i) + w.value(j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn narrow_domain_examples() {
        let d = ball();
        let h = 1.0 / 64.0;
        let lat = Lattice::covering(d.bounding_box(), h, 2, 2);
        let frame = ReflectionFrame::new([1.0, 0.0], 0.9).unwrap();
        let cap: Vec<usize> = (0..lat.len())
            .filter(|&i| frame.in_half_space(lat.coords(i)) && d.contains(lat.coords(i)))
            .collect();
        let zero = GridFunction::zeros(lat.clone());
        let c = narrow_domain_check(&zero, &d, &frame, &cap, &|_| 1.0, 0.0, 0.1, 1e-9).unwrap();
        assert!(c.holds && c.small && c.fitted_c.is_none());

        // Thin cap of the ball's solution, on the half-space side where
        // the reflected values are smaller.
        let u = field(&d, h, torsion);
        let v = antisymmetric_field(&u, &frame.flipped());
        let lower = frame.flipped();
        let region: Vec<usize> = (0..lat.len())
            .filter(|&i| {
                let x = lat.coords(i);
                lower.in_half_space(x) && d.contains(x) && frame.reflect(x)[0] > 0.9 && d.contains(frame.reflect(x))
            })
            .collect();
        let c = narrow_domain_check(&v, &d, &lower, &region, &|_| 0.0, 0.0, 0.1, 1e-6);
        let c = c.unwrap();
        assert!(c.small);
        let inner: Vec<usize> = region.clone();
        let mut sup_neg: f64 = 0.0;
        for &i in &inner {
            sup_neg = sup_neg.max(-v.value(i));
        }
        assert!(sup_neg <= 1e-6);

        // Negative bump across a large region.
        let big_frame = ReflectionFrame::new([1.0, 0.0], -0.5).unwrap();
        let region: Vec<usize> = (0..lat.len())
            .filter(|&i| big_frame.in_half_space(lat.coords(i)) && d.contains(lat.coords(i)))
            .collect();
        let bump = GridFunction::from_fn(lat.clone(), |x| -(-(x[0] * x[0] + x[1] * x[1]) * 8.0).exp(), Beyond::Zero);
        let c = narrow_domain_check(&bump, &d, &big_frame, &region, &|_| 2.0, 0.0, 0.1, 1e-6).unwrap();
        assert!(!c.small && !c.holds && c.fitted_c.unwrap() > 0.0);
        assert!(matches!(
            narrow_domain_check(&bump, &d, &frame, &region, &|_| 2.0, 0.0, 0.1, 1e-6),
            Err(Error::RegionOutsideHalfSpace(_))
        ));
    }

    #[test]
    fn coefficient_and_drift_bound() {
        let f = |s: f64| s * s;
        assert!((difference_quotient(&f, None, 2.0, 1.0) - 3.0).abs() < 1e-12);
        let df = |s: f64| 2.0 * s;
        assert_eq!(difference_quotient(&f, Some(&df), 1.5, 1.5), 3.0);
        assert!((difference_quotient(&f, None, 1.5, 1.5) - 3.0).abs() < 1e-3);
        assert!((drift_bound(&|g| 0.3 * g, 2.0) - 0.3).abs() < 1e-12);
        assert!((drift_bound(&|g| g * g, 1.0) - 2.0).abs() < 1e-2);
    }

    #[test]
    fn hopf_examples() {
        let d = ball();
        let h = 1.0 / 64.0;
        let u = field(&d, h, torsion);
        let ts: Vec<f64> = (0..8).map(|j| 0.25 / 2f64.powi(j)).collect();
        let r = hopf_ratio(&|x| sample(&u, x), [1.0, 0.0], [-1.0, 0.0], &ts, h, 1e-8).unwrap();
        assert!((r.liminf - 0.5).abs() <= 0.05 && !r.degenerate, "{r:?}");
        assert!(!r.warnings.is_empty());
        let z = hopf_ratio(&|_| 0.0, [1.0, 0.0], [-1.0, 0.0], &ts, h, 1e-8).unwrap();
        assert!(z.degenerate && z.liminf == 0.0);
    }

    #[test]
    fn hopf_on_an_oblique_ellipse_candidate() {
        let d = Domain::ellipse([0.0, 0.0], [1.3, 1.0]).unwrap();
        let h = 1.0 / 64.0;
        let u = serrin_solve(&d, &fractional(), 0.0, h, &|_| 0.0, &|_| -1.0, 64, PicardOptions::default())
            .unwrap()
            .solve
            .solution;
        let s = moving_plane_scan(&u, &d, [1.0, 1.0], ScanOptions::default()).unwrap();
        let frame = ReflectionFrame::new(s.direction, s.lambda0.unwrap()).unwrap();
        // Boundary point of D_λ on ∂Ω with a positive value of v nearby.
        let v = antisymmetric_field(&u, &frame);
        let p = s.witness.unwrap();
        let (x0, _) = d.project(p).unwrap();
        let n = d.inward_normal(x0).unwrap();
        let ts: Vec<f64> = (0..5).map(|j| 16.0 * h / 2f64.powi(j)).collect();
        let r = hopf_ratio(&|x| sample(&v, x), x0, n, &ts, h, 1e-8).unwrap();
        assert!(r.liminf > 0.0, "{r:?}");
    }

    #[test]
    fn corner_examples() {
        let ts: Vec<f64> = (0..6).map(|j| 0.2 / 2f64.powi(j)).collect();
        let h = 1e-3;
        let w = corner_growth(&|x| -x[0] * x[1], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0], &ts, h, 1e-12).unwrap();
        assert!((w.p.unwrap() - 2.0).abs() <= 0.05 && (w.a - 1.0).abs() <= 0.05);
        let v = corner_growth(&|x| -x[0] * x[1].max(0.0).powf(1.3), [0.0, 0.0], [1.0, 0.0], [0.0, 1.0], &ts, h, 1e-12).unwrap();
        assert!((v.p.unwrap() - 2.3).abs() <= 0.05);

        // The ball's solution reflected at the orthogonal tangency.
        let d = ball();
        let hb = 1.0 / 64.0;
        let u = field(&d, hb, torsion);
        let frame = ReflectionFrame::new([1.0, 0.0], 0.0).unwrap();
        let v = antisymmetric_field(&u, &frame);
        let ts: Vec<f64> = (0..4).map(|j| 0.25 / 2f64.powi(j)).collect();
        let c = corner_growth(&|x| sample(&v, x), [0.0, -1.0], [1.0, 0.0], [0.0, 1.0], &ts, hb, 1e-6).unwrap();
        assert!(c.vanishing && c.p.is_none(), "{c:?}");
    }

    #[test]
    fn symmetry_examples() {
        let h = 1.0 / 64.0;
        let b = ball();
        let u = field(&b, h, torsion);
        let rb = symmetry_report(&u, &b, None).unwrap();
        assert!(rb.angular_deviation <= 1e-3 && rb.monotonicity_violations == 0, "{}", rb.angular_deviation);
        assert!(rb.center[0].abs() < h && rb.center[1].abs() < h);
        let e = Domain::ellipse([0.0, 0.0], [1.3, 1.0]).unwrap();
        let ue = serrin_solve(&e, &fractional(), 0.0, h, &|_| 0.0, &|_| -1.0, 64, PicardOptions::default())
            .unwrap()
            .solve
            .solution;
        let re = symmetry_report(&ue, &e, None).unwrap();
        assert!(re.angular_deviation >= 10.0 * rb.angular_deviation);
        let z = symmetry_report(&GridFunction::zeros(u.lattice().clone()), &b, None).unwrap();
        assert!(z.trivial);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn reflection_fixes_the_hyperplane(a in -3.0f64..3.0, t in -3.0f64..3.0, lam in -2.0f64..2.0) {
            let fr = ReflectionFrame::new([a.cos(), a.sin()], lam).unwrap();
            let p = add(scale(fr.e, lam), scale([-fr.e[1], fr.e[0]], t));
            let q = fr.reflect(p);
            prop_assert!((q[0] - p[0]).abs() < 1e-12 && (q[1] - p[1]).abs() < 1e-12);
        }

        #[test]
        fn normal_deviation_is_scale_invariant(s in 0.1f64..10.0) {
            let d = ball();
            let u = field(&d, 1.0 / 32.0, |x| torsion(x) * (1.0 + 0.1 * x[0]));
            let us = u.map(|_, v| s * v);
            let a = normal_derivative_trace(&u, &d, 64).unwrap().relative_deviation;
            let b = normal_derivative_trace(&us, &d, 64).unwrap().relative_deviation;
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-300));
        }
    }
}
