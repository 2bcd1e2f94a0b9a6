//! Empirical regularity measurements on solved grid functions: Lipschitz
//! norm, the quotient `u/δ`, its boundary oscillation decay, boundary
//! Harnack ratios, Hölder exponents and interior gradient scaling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::fit::{linear_fit, LinearFit};
use crate::geometry::{add, dist, scale, CollarRegion, Domain, Point};
use crate::lattice::{Beyond, GridFunction, Lattice};

/// Number of sampled long-range pairs in [`lipschitz_norm`].
const LONG_RANGE_PAIRS: usize = 4000;
/// Minimum pairs per distance bucket in Hölder fits.
pub const MIN_BUCKET_PAIRS: usize = 30;
/// Minimum nodes per oscillation level.
pub const MIN_LEVEL_NODES: usize = 20;
/// Top of the exponent grid; smoother fields saturate here.
pub const EXPONENT_CAP: f64 = 0.95;

/// Sup of difference quotients over axis-neighbour pairs plus a seeded
/// sample of long-range pairs.
pub fn lipschitz_norm(u: &GridFunction) -> f64 {
    let lat = u.lattice();
    let h = lat.h();
    let vals = u.values();
    let mut best: f64 = (0..lat.len())
        .into_par_iter()
        .map(|idx| {
            let mut m: f64 = 0.0;
            for axis in 0..lat.dim() {
                if let Some(n) = lat.neighbor(idx, axis, 1) {
                    m = m.max((vals[n] - vals[idx]).abs() / h);
                }
            }
            m
        })
        .reduce(|| 0.0, f64::max);
    if lat.len() > 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..LONG_RANGE_PAIRS {
            let i = rng.random_range(0..lat.len());
            let j = rng.random_range(0..lat.len());
            let d = dist(lat.coords(i), lat.coords(j));
            if d > 0.0 {
                best = best.max((vals[i] - vals[j]).abs() / d);
            }
        }
    }
    best
}

/// `v = u/δ` with per-node bookkeeping.
#[derive(Debug, Clone)]
pub struct QuotientField {
    pub field: GridFunction,
    /// Distance to the complement (0 outside Ω).
    pub delta: Vec<f64>,
    /// Node lies in Ω.
    pub interior: Vec<bool>,
    /// Node lies in Ω with `δ < h`; its value was extrapolated.
    pub extrapolated: Vec<bool>,
}

impl QuotientField {
    /// Nodes in Ω with `δ ≥ h`, where the quotient is computed directly.
    pub fn reliable(&self, idx: usize) -> bool {
        self.interior[idx] && !self.extrapolated[idx]
    }
    pub fn excluded_count(&self) -> usize {
        self.extrapolated.iter().filter(|&&e| e).count()
    }
}

/// Computes `u/δ` at nodes with `δ ≥ h`; nodes closer to the boundary get
/// a two-point linear extrapolation along the inward normal. Nodes
/// outside Ω carry 0.
pub fn quotient_field(u: &GridFunction, domain: &Domain) -> Result<QuotientField> {
    let lat = u.lattice().clone();
    let h = lat.h();
    let per_node: Vec<Result<(f64, bool, bool, f64)>> = (0..lat.len())
        .into_par_iter()
        .map(|idx| {
            let x = lat.coords(idx);
            if !domain.contains(x) {
                return Ok((0.0, false, false, 0.0));
            }
            let d = domain.signed_distance(x)?;
            // Nodes lying on the level δ = h up to rounding count as reliable.
            if d >= h * (1.0 - 1e-9) {
                return Ok((u.value(idx) / d, true, false, d));
            }
            let (p, _) = domain.project(x)?;
            let n = domain.normal_at_projection(x)?;
            let (t1, t2) = (2.0 * h, 3.0 * h);
            let v1 = u.interpolate(add(p, scale(n, t1)))? / t1;
            let v2 = u.interpolate(add(p, scale(n, t2)))? / t2;
            Ok((v1 + (d - t1) * (v2 - v1) / (t2 - t1), true, true, d))
        })
        .collect();
    let mut values = Vec::with_capacity(lat.len());
    let mut interior = Vec::with_capacity(lat.len());
    let mut extrapolated = Vec::with_capacity(lat.len());
    let mut delta = Vec::with_capacity(lat.len());
    for r in per_node {
        let (v, i, e, d) = r?;
        values.push(v);
        interior.push(i);
        extrapolated.push(e);
        delta.push(d);
    }
    Ok(QuotientField {
        field: GridFunction::new(lat, values, Beyond::Zero)?,
        delta,
        interior,
        extrapolated,
    })
}

/// One row of a per-scale table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScaleRow {
    pub scale: f64,
    pub sup: f64,
    pub inf: f64,
    pub osc: f64,
    pub ratio: f64,
    pub nodes: usize,
}

impl ScaleRow {
    fn from_values(scale: f64, vals: impl Iterator<Item = f64>) -> Self {
        let (mut sup, mut inf, mut nodes) = (f64::NEG_INFINITY, f64::INFINITY, 0);
        for v in vals {
            sup = sup.max(v);
            inf = inf.min(v);
            nodes += 1;
        }
        let ratio = if inf > 0.0 { sup / inf } else { f64::INFINITY };
        Self {
            scale,
            sup,
            inf,
            osc: sup - inf,
            ratio,
            nodes,
        }
    }
}

/// A fitted exponent with its regression quality and the scale range used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentFit {
    /// `+∞` (serialised as null) when the measured quantity vanishes at
    /// every scale.
    pub exponent: f64,
    pub r2: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub points: usize,
    /// The raw slope exceeded [`EXPONENT_CAP`] or the data were flat zero.
    pub saturated: bool,
}

impl ExponentFit {
    fn from_fit(fit: LinearFit, scales: &[f64], cap: Option<f64>) -> Self {
        let (lo, hi) = min_max(scales);
        let (exponent, saturated) = match cap {
            Some(c) if fit.slope > c => (c, true),
            _ => (fit.slope, false),
        };
        Self {
            exponent,
            r2: fit.r2,
            scale_min: lo,
            scale_max: hi,
            points: fit.points,
            saturated,
        }
    }

    fn flat(scales: &[f64], exponent: f64) -> Self {
        let (lo, hi) = min_max(scales);
        Self {
            exponent,
            r2: 1.0,
            scale_min: lo,
            scale_max: hi,
            points: scales.len(),
            saturated: true,
        }
    }
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)))
}

/// Fits `log y` against `log x`, treating an all-zero response as flat.
fn log_log(xs: &[f64], ys: &[f64], cap: Option<f64>, flat: f64) -> Result<ExponentFit> {
    let floor = 1e-14 * ys.iter().fold(0.0f64, |m, y| m.max(y.abs())).max(1e-300);
    if ys.iter().all(|y| y.abs() <= 1e-300) {
        return Ok(ExponentFit::flat(xs, flat));
    }
    let (lx, ly): (Vec<f64>, Vec<f64>) = xs
        .iter()
        .zip(ys)
        .filter(|(_, y)| **y > floor)
        .map(|(x, y)| (x.ln(), y.ln()))
        .unzip();
    if lx.len() < 2 {
        return Ok(ExponentFit::flat(xs, flat));
    }
    let fit = linear_fit(&lx, &ly)?;
    Ok(ExponentFit::from_fit(fit, xs, cap))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OscillationOptions {
    pub rho1: f64,
    pub levels: usize,
    /// `R_k = ρ1 / ratio^k`.
    pub ratio: f64,
}

impl OscillationOptions {
    pub fn for_domain(domain: &Domain) -> Self {
        Self {
            rho1: domain.rho() / 2.0,
            levels: 5,
            ratio: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OscillationFit {
    pub rows: Vec<ScaleRow>,
    pub tau: ExponentFit,
    /// `osc_k` is non-increasing in `k`.
    pub monotone: bool,
    /// Levels dropped for having fewer than [`MIN_LEVEL_NODES`] nodes.
    pub truncated: usize,
    /// Nodes with `δ < h` excluded from the sup/inf scans.
    pub excluded_nodes: usize,
    pub warnings: Vec<String>,
}

/// Oscillation of `v` over `D_{R_k}(x0)` on the ladder `R_k = ρ1/ratio^k`,
/// with `τ` fitted from `log osc_k` against `log R_k`.
pub fn oscillation_decay(v: &QuotientField, x0: Point, opts: OscillationOptions) -> Result<OscillationFit> {
    if opts.levels < 2 {
        return Err(invalid("levels", "need at least two levels"));
    }
    if !(opts.rho1 > 0.0) || !(opts.ratio > 1.0) {
        return Err(invalid("rho1", "ρ1 must be positive and the ratio above 1"));
    }
    let lat = v.field.lattice();
    let vals = v.field.values();
    let mut rows = Vec::new();
    let mut excluded = 0;
    let mut warnings = Vec::new();
    for k in 0..opts.levels {
        let r = opts.rho1 / opts.ratio.powi(k as i32);
        let mut skipped = 0;
        let row = ScaleRow::from_values(
            r,
            (0..lat.len())
                .filter(|&i| v.interior[i] && dist(lat.coords(i), x0) < r)
                .filter(|&i| {
                    let keep = !v.extrapolated[i];
                    skipped += usize::from(!keep);
                    keep
                })
                .map(|i| vals[i]),
        );
        if row.nodes < MIN_LEVEL_NODES {
            warnings.push(format!(
                "level {k} (R = {r:e}) has {} nodes; truncated to {k} levels",
                row.nodes
            ));
            break;
        }
        excluded = excluded.max(skipped);
        rows.push(row);
    }
    if rows.len() < 2 {
        return Err(Error::EmptyRegion("fewer than two oscillation levels have enough nodes"));
    }
    let truncated = opts.levels - rows.len();
    let monotone = rows.windows(2).all(|w| w[1].osc <= w[0].osc * (1.0 + 1e-12));
    let scales: Vec<f64> = rows.iter().map(|r| r.scale).collect();
    let oscs: Vec<f64> = rows.iter().map(|r| r.osc).collect();
    let tau = log_log(&scales, &oscs, None, f64::INFINITY)?;
    Ok(OscillationFit {
        rows,
        tau,
        monotone,
        truncated,
        excluded_nodes: excluded,
        warnings,
    })
}

/// `sup v / inf v` over the `D⁺_{κ'R}` nodes of `region` with `δ ≥ h`.
/// A non-positive infimum yields an infinite ratio.
pub fn boundary_harnack(v: &QuotientField, region: &CollarRegion) -> Result<ScaleRow> {
    let vals = v.field.values();
    let row = ScaleRow::from_values(
        region.radius,
        region.d_plus.iter().filter(|&&i| v.reliable(i)).map(|&i| vals[i]),
    );
    if row.nodes == 0 {
        return Err(Error::EmptyRegion("boundary Harnack region D⁺ has no nodes with δ ≥ h"));
    }
    Ok(row)
}

/// Harnack ratios on the dyadic ladder `R_k = R0/2^k`.
pub fn harnack_ladder(
    v: &QuotientField,
    domain: &Domain,
    x0: Point,
    r0: f64,
    scales: usize,
    kappa: f64,
) -> Result<Vec<ScaleRow>> {
    (0..scales)
        .map(|k| {
            let r = r0 / 2f64.powi(k as i32);
            let region = domain.collar_region(v.field.lattice(), x0, r, kappa)?;
            boundary_harnack(v, &region)
        })
        .collect()
}

/// Largest increment over lattice pairs in one distance bucket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bucket {
    pub distance: f64,
    pub pairs: usize,
    pub max_increment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolderFit {
    pub fit: ExponentFit,
    pub buckets: Vec<Bucket>,
}

/// Dyadic buckets at distance `m h`, `m = 2^j`, populated with the axis
/// offsets `(m,0)` and `(0,m)`, up to `max_distance`.
fn holder_buckets(lat: &Lattice, comps: &[Vec<f64>], valid: &[bool], max_distance: f64) -> Vec<Bucket> {
    let h = lat.h();
    let [nx, ny] = lat.shape();
    let mut out = Vec::new();
    let mut m: isize = 1;
    while (m as f64) * h <= max_distance {
        let offsets: &[(isize, isize)] = if lat.dim() == 1 {
            &[(1, 0)]
        } else {
            &[(1, 0), (0, 1)]
        };
        let (pairs, max_increment) = offsets
            .par_iter()
            .map(|&(ox, oy)| {
                let (mut count, mut best) = (0usize, 0.0f64);
                for idx in 0..lat.len() {
                    if !valid[idx] {
                        continue;
                    }
                    let (i, j) = lat.ij(idx);
                    let (ti, tj) = (i as isize + ox * m, j as isize + oy * m);
                    if ti < 0 || tj < 0 || ti >= nx as isize || tj >= ny as isize {
                        continue;
                    }
                    let t = lat.index(ti as usize, tj as usize);
                    if !valid[t] {
                        continue;
                    }
                    let inc = comps.iter().map(|c| (c[t] - c[idx]).powi(2)).sum::<f64>().sqrt();
                    count += 1;
                    best = best.max(inc);
                }
                (count, best)
            })
            .reduce(|| (0, 0.0), |a, b| (a.0 + b.0, a.1.max(b.1)));
        if pairs >= MIN_BUCKET_PAIRS {
            out.push(Bucket {
                distance: m as f64 * h,
                pairs,
                max_increment,
            });
        }
        m *= 2;
    }
    out
}

/// Fits `m ≈ A·((d + s)^κ − s^κ)` with relative weights, scanning `κ` on a
/// grid of step 1e-3 in `(0, 1]`. Pairs only reach down to `δ = s`, so a
/// profile `δ^κ` shows increments of exactly this shape; `s = 0` recovers
/// the plain power law.
fn floored_power_fit(d: &[f64], m: &[f64], floor: f64, cap: f64) -> Result<ExponentFit> {
    if d.len() < 3 || m.iter().any(|&v| !(v > 0.0)) {
        return log_log(d, m, Some(cap), cap);
    }
    let w: Vec<f64> = m.iter().map(|v| 1.0 / (v * v)).collect();
    let sse_at = |kappa: f64| {
        let x: Vec<f64> = d.iter().map(|v| (v + floor).powf(kappa) - floor.powf(kappa)).collect();
        let sxx: f64 = (0..x.len()).map(|i| w[i] * x[i] * x[i]).sum();
        let sxy: f64 = (0..x.len()).map(|i| w[i] * x[i] * m[i]).sum();
        let a = sxy / sxx;
        (0..x.len()).map(|i| w[i] * (m[i] - a * x[i]).powi(2)).sum::<f64>()
    };
    let mut best = (f64::INFINITY, 1.0);
    for j in 1..=1000 {
        let kappa = j as f64 * 1e-3;
        let sse = sse_at(kappa);
        if sse < best.0 {
            best = (sse, kappa);
        }
    }
    // R² of the equivalent log-log regression against the fitted shape.
    let lx: Vec<f64> = d
        .iter()
        .map(|v| ((v + floor).powf(best.1) - floor.powf(best.1)).ln())
        .collect();
    let ly: Vec<f64> = m.iter().map(|v| v.ln()).collect();
    let r2 = linear_fit(&lx, &ly)?.r2;
    let (lo, hi) = min_max(d);
    Ok(ExponentFit {
        exponent: best.1.min(cap),
        r2,
        scale_min: lo,
        scale_max: hi,
        points: d.len(),
        saturated: best.1 > cap,
    })
}

fn holder_fit(
    lat: &Lattice,
    comps: &[Vec<f64>],
    valid: &[bool],
    max_distance: f64,
    floor: f64,
    cap: f64,
) -> Result<HolderFit> {
    let buckets = holder_buckets(lat, comps, valid, max_distance);
    if buckets.len() < 2 {
        return Err(Error::EmptyRegion("fewer than two distance buckets have enough pairs"));
    }
    let d: Vec<f64> = buckets.iter().map(|b| b.distance).collect();
    let m: Vec<f64> = buckets.iter().map(|b| b.max_increment).collect();
    let flat = 1e-14 * m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let fit = if m.iter().all(|v| v.abs() <= 1e-300) || m.iter().any(|&v| v <= flat) {
        log_log(&d, &m, Some(cap), cap)?
    } else {
        floored_power_fit(&d, &m, floor, cap)?
    };
    Ok(HolderFit { fit, buckets })
}

/// Global Hölder exponent of `u/δ` over nodes with `δ ≥ h`, capped at 1.
pub fn quotient_holder_fit(v: &QuotientField, max_distance: f64) -> Result<HolderFit> {
    let lat = v.field.lattice();
    let valid: Vec<bool> = (0..lat.len()).map(|i| v.reliable(i)).collect();
    holder_fit(lat, &[v.field.values().to_vec()], &valid, max_distance, lat.h(), 1.0)
}

/// Central-difference gradient at nodes whose axis neighbours all satisfy
/// `keep`; other nodes are marked invalid.
fn central_gradient(f: &GridFunction, keep: &[bool]) -> (Vec<Vec<f64>>, Vec<bool>) {
    let lat = f.lattice();
    let h = lat.h();
    let dim = lat.dim();
    let mut comps = vec![vec![0.0; lat.len()]; dim];
    let mut valid = vec![false; lat.len()];
    for idx in 0..lat.len() {
        if !keep[idx] {
            continue;
        }
        let mut ok = true;
        for (axis, comp) in comps.iter_mut().enumerate() {
            match (lat.neighbor(idx, axis, 1), lat.neighbor(idx, axis, -1)) {
                (Some(p), Some(m)) if keep[p] && keep[m] => {
                    comp[idx] = (f.value(p) - f.value(m)) / (2.0 * h);
                }
                _ => ok = false,
            }
        }
        valid[idx] = ok;
    }
    (comps, valid)
}

/// Hölder exponent of `Du` near the boundary from central differences at
/// nodes with `δ ≥ 2h`; saturates at [`EXPONENT_CAP`].
pub fn gradient_holder_fit(u: &GridFunction, domain: &Domain, max_distance: f64) -> Result<HolderFit> {
    let lat = u.lattice();
    let h = lat.h();
    let keep: Vec<bool> = (0..lat.len())
        .into_par_iter()
        .map(|i| {
            let x = lat.coords(i);
            domain.contains(x) && domain.signed_distance(x).map(|d| d >= h).unwrap_or(false)
        })
        .collect();
    let (comps, valid) = central_gradient(u, &keep);
    // Centres must sit at δ ≥ 2h; their neighbours then satisfy δ ≥ h.
    let valid: Vec<bool> = valid
        .iter()
        .enumerate()
        .map(|(i, &ok)| ok && domain.signed_distance(lat.coords(i)).map(|d| d >= 2.0 * h).unwrap_or(false))
        .collect();
    holder_fit(lat, &comps, &valid, max_distance, 2.0 * h, EXPONENT_CAP)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SigmaRow {
    pub sigma: f64,
    pub max_gradient: f64,
    pub nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SigmaScaling {
    pub rows: Vec<SigmaRow>,
    pub fit: ExponentFit,
}

/// The ladder `σ_k = 4h·2^k` below `sigma_max`.
pub fn default_sigmas(h: f64, sigma_max: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut s = 4.0 * h;
    while s < sigma_max {
        out.push(s);
        s *= 2.0;
    }
    out
}

/// `max |Dv|` over `Ω_σ = {δ ≥ σ}` for each `σ`, with the exponent `e`
/// fitted from `log max` against `log σ`.
pub fn interior_gradient_scaling(v: &QuotientField, sigmas: &[f64]) -> Result<SigmaScaling> {
    let lat = v.field.lattice();
    let h = lat.h();
    if sigmas.len() < 2 {
        return Err(invalid("sigmas", "need at least two σ values"));
    }
    if let Some(s) = sigmas.iter().find(|&&s| !(s >= 4.0 * h * (1.0 - 1e-12) && s < 1.0)) {
        return Err(invalid("sigmas", format!("σ = {s} must lie in [4h, 1)")));
    }
    let keep: Vec<bool> = (0..lat.len()).map(|i| v.reliable(i)).collect();
    let (comps, valid) = central_gradient(&v.field, &keep);
    let mut rows = Vec::with_capacity(sigmas.len());
    for &s in sigmas {
        let (mut best, mut nodes) = (0.0f64, 0);
        for i in 0..lat.len() {
            if valid[i] && v.delta[i] >= s {
                let g = comps.iter().map(|c| c[i] * c[i]).sum::<f64>().sqrt();
                best = best.max(g);
                nodes += 1;
            }
        }
        if nodes == 0 {
            return Err(Error::EmptyRegion("Ω_σ has no nodes"));
        }
        rows.push(SigmaRow {
            sigma: s,
            max_gradient: best,
            nodes,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.sigma).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.max_gradient).collect();
    Ok(SigmaScaling {
        fit: log_log(&xs, &ys, None, 0.0)?,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SuiteOptions {
    /// Boundary point anchoring the collar scans.
    pub x0: Point,
    pub oscillation: OscillationOptions,
    /// Largest Harnack radius; the ladder halves it `harnack_scales − 1` times.
    pub harnack_r0: f64,
    pub harnack_scales: usize,
    pub kappa: f64,
    /// Largest pair distance in the Hölder fits.
    pub holder_max_distance: f64,
    pub sigma_max: f64,
}

impl SuiteOptions {
    pub fn for_domain(domain: &Domain) -> Self {
        Self {
            x0: domain.boundary_point(0.0),
            oscillation: OscillationOptions::for_domain(domain),
            harnack_r0: domain.rho() / 2.0,
            harnack_scales: 4,
            kappa: 0.05,
            holder_max_distance: domain.rho(),
            sigma_max: domain.inradius().min(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularityReport {
    pub lipschitz_estimate: f64,
    pub tau_fit: OscillationFit,
    pub kappa_fit: HolderFit,
    pub gamma_fit: HolderFit,
    pub harnack_table: Vec<ScaleRow>,
    pub sigma_scaling_table: SigmaScaling,
    pub excluded_nodes: usize,
}

impl RegularityReport {
    pub fn max_harnack_ratio(&self) -> f64 {
        self.harnack_table.iter().fold(1.0, |m, r| m.max(r.ratio))
    }
}

/// Runs every measurement on a solution vanishing outside Ω.
pub fn regularity_suite(u: &GridFunction, domain: &Domain, opts: SuiteOptions) -> Result<RegularityReport> {
    let v = quotient_field(u, domain)?;
    let h = u.lattice().h();
    Ok(RegularityReport {
        lipschitz_estimate: lipschitz_norm(u),
        tau_fit: oscillation_decay(&v, opts.x0, opts.oscillation)?,
        kappa_fit: quotient_holder_fit(&v, opts.holder_max_distance)?,
        gamma_fit: gradient_holder_fit(u, domain, opts.holder_max_distance)?,
        harnack_table: harnack_ladder(&v, domain, opts.x0, opts.harnack_r0, opts.harnack_scales, opts.kappa)?,
        sigma_scaling_table: interior_gradient_scaling(&v, &default_sigmas(h, opts.sigma_max))?,
        excluded_nodes: v.excluded_count(),
    })
}
