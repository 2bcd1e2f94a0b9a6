//! Lattice discretisation of `I`, `L = Δ + aI`, the scaled operators, the
//! bracket `Z[v,d]` and the boundary profile of `Lδ`.

use std::f64::consts::FRAC_PI_4;

use serde::Serialize;

use crate::continuum::{nonlocal_at, ContinuumOptions};
use crate::error::{invalid, Error, Result};
use crate::fft::Convolver;
use crate::fit::{linear_fit, LinearFit};
use crate::geometry::{add, scale, Domain, Point};
use crate::kernels::Kernel;
use crate::lattice::{Beyond, GridFunction, Lattice};
use crate::quadrature::{adaptive_with_breaks, gauss_legendre, AdaptiveOptions};

/// Per-offset weights `w_j = ∫_{cell_j} k` for `|y_j|_∞ ≥ 2h`, the
/// near-field compensation constant and the mass beyond the stencil.
#[derive(Debug, Clone, Serialize)]
pub struct QuadratureScheme {
    pub dim: usize,
    pub h: f64,
    /// Stencil half-width in cells.
    pub m: usize,
    #[serde(skip)]
    weights: Vec<f64>,
    /// `(1/2n) ∫_{Q_N} |y|² k` over the 3×3 (or 3-cell) near block.
    pub c_near: f64,
    /// `∫` of `k` outside the stencil square.
    pub tail: f64,
    /// `Σ_j w_j`.
    pub w_far_total: f64,
    /// Radius of the near block (`2h` in lattice units of offsets).
    pub r_near: f64,
    pub reach: f64,
    pub support: Option<f64>,
}

fn theta_integral<F: Fn(f64) -> f64>(f: F, breaks: &[f64]) -> Result<f64> {
    adaptive_with_breaks(
        f,
        0.0,
        FRAC_PI_4,
        breaks,
        AdaptiveOptions {
            abs_tol: 1e-15,
            rel_tol: 1e-12,
            max_panels: 2000,
        },
    )
}

/// Angles in `(0, π/4)` where the ray to the square edge `L/cos θ` meets a
/// kernel break radius.
fn edge_breaks(k: &Kernel, half_side: f64) -> Vec<f64> {
    k.breaks()
        .into_iter()
        .filter(|&b| b > half_side && b < half_side * std::f64::consts::SQRT_2)
        .map(|b| (half_side / b).acos())
        .collect()
}

impl QuadratureScheme {
    pub fn new(k: &Kernel, h: f64, m: usize) -> Result<Self> {
        if !(h > 0.0) {
            return Err(invalid("h", "grid spacing must be positive"));
        }
        if m < 2 {
            return Err(invalid("m", "stencil must reach at least two cells"));
        }
        let dim = k.dim;
        let width = 2 * m + 1;
        let mut weights = vec![0.0; if dim == 1 { width } else { width * width }];
        let support = k.support_radius();
        if dim == 1 {
            for di in 2..=m {
                let a = (di as f64 - 0.5) * h;
                let w = k.radial_moment(0.0, a, a + h);
                weights[m + di] = w;
                weights[m - di] = w;
            }
        } else {
            let rules: Vec<(Vec<f64>, Vec<f64>)> = [2, 3, 6, 16].iter().map(|&o| gauss_legendre(o)).collect();
            let breaks = k.breaks();
            for di in 0..=m {
                for dj in 0..=di {
                    if di <= 1 {
                        continue;
                    }
                    let (cx, cy) = (di as f64 * h, dj as f64 * h);
                    let near_x = cx - 0.5 * h;
                    let near_y = (cy - 0.5 * h).max(0.0);
                    let rmin = near_x.hypot(near_y);
                    let rmax = (cx + 0.5 * h).hypot(cy + 0.5 * h);
                    if support.is_some_and(|s| rmin >= s) {
                        continue;
                    }
                    let straddles = breaks.iter().any(|&b| b > rmin && b < rmax);
                    let (xs, ws) = if straddles {
                        &rules[3]
                    } else if di <= 8 {
                        &rules[2]
                    } else if di <= 32 {
                        &rules[1]
                    } else {
                        &rules[0]
                    };
                    let mut w = 0.0;
                    for (xa, wa) in xs.iter().zip(ws) {
                        for (xb, wb) in xs.iter().zip(ws) {
                            let y = [cx + 0.5 * h * xa, cy + 0.5 * h * xb];
                            w += wa * wb * k.eval(y);
                        }
                    }
                    w *= 0.25 * h * h;
                    for (a, b) in [(di, dj), (dj, di)] {
                        for (sa, sb) in [(1isize, 1isize), (-1, 1), (1, -1), (-1, -1)] {
                            let i = (m as isize + sa * a as isize) as usize;
                            let j = (m as isize + sb * b as isize) as usize;
                            weights[j * width + i] = w;
                        }
                    }
                }
            }
        }
        let n = dim as f64;
        let hn = 1.5 * h;
        let half = (m as f64 + 0.5) * h;
        let (c_near, tail) = if dim == 1 {
            (k.radial_moment(2.0, 0.0, hn), 2.0 * k.radial_moment(0.0, half, f64::INFINITY))
        } else {
            let near_int = 8.0 * theta_integral(|t| k.radial_moment(3.0, 0.0, hn / t.cos()), &edge_breaks(k, hn))?;
            let tail = 8.0 * theta_integral(|t| k.radial_moment(1.0, half / t.cos(), f64::INFINITY), &edge_breaks(k, half))?;
            (near_int / (2.0 * n), tail)
        };
        let w_far_total = weights.iter().sum();
        Ok(Self {
            dim,
            h,
            m,
            weights,
            c_near,
            tail,
            w_far_total,
            r_near: 2.0 * h,
            reach: half,
            support,
        })
    }

    /// Scheme whose stencil covers every pair of nodes of `lattice` (or the
    /// kernel support, if smaller).
    pub fn for_lattice(k: &Kernel, lattice: &Lattice) -> Result<Self> {
        if k.dim != lattice.dim() {
            return Err(invalid("dim", "kernel and lattice dimensions differ"));
        }
        let [nx, ny] = lattice.shape();
        let extent = nx.max(ny).saturating_sub(1).max(2);
        let m = match k.support_radius() {
            Some(s) => ((s / lattice.h()).ceil() as usize + 1).min(extent).max(2),
            None => extent,
        };
        Self::new(k, lattice.h(), m)
    }

    pub fn weight(&self, di: isize, dj: isize) -> f64 {
        let m = self.m as isize;
        if di.abs() > m || dj.abs() > m {
            return 0.0;
        }
        let width = 2 * self.m + 1;
        if self.dim == 1 {
            if dj != 0 {
                return 0.0;
            }
            return self.weights[(di + m) as usize];
        }
        self.weights[(dj + m) as usize * width + (di + m) as usize]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `Iu` at one node by direct summation over the stencil.
    pub fn eval_at(&self, u: &GridFunction, idx: usize) -> f64 {
        let lat = u.lattice();
        let (i, j) = lat.ij(idx);
        let (i, j) = (i as isize, j as isize);
        let q = self;
        let m = q.m as isize;
        let c = u.value(idx);
        let mut s = 0.0;
        let jr = if lat.dim() == 1 { 0..=0 } else { -m..=m };
        for dj in jr {
            for di in -m..=m {
                let w = q.weight(di, dj);
                if w != 0.0 {
                    s += w * (u.at(i + di, j + dj) - c);
                }
            }
        }
        let ext = u.beyond().eval(lat.coords(idx));
        s + q.c_near * laplacian_at(u, idx) + q.tail * (ext - c)
    }
}

/// Five-point (three-point in 1-d) Laplacian with the field's extension.
pub fn laplacian_at(u: &GridFunction, idx: usize) -> f64 {
    let lat = u.lattice();
    let (i, j) = lat.ij(idx);
    let (i, j) = (i as isize, j as isize);
    let c = u.value(idx);
    let h2 = lat.h() * lat.h();
    let mut s = u.at(i + 1, j) + u.at(i - 1, j) - 2.0 * c;
    if lat.dim() == 2 {
        s += u.at(i, j + 1) + u.at(i, j - 1) - 2.0 * c;
    }
    s / h2
}

/// Values at every node of the lattice; entries at nodes outside a
/// domain are meaningless and callers restrict to interior nodes.
pub fn laplacian(u: &GridFunction) -> Vec<f64> {
    (0..u.lattice().len()).map(|i| laplacian_at(u, i)).collect()
}

/// `I` on a fixed lattice, with an FFT cache for whole-field evaluation.
#[derive(Debug)]
pub struct NonlocalOperator {
    kernel: Kernel,
    lattice: Lattice,
    scheme: QuadratureScheme,
    conv: Convolver,
}

impl NonlocalOperator {
    pub fn new(kernel: &Kernel, lattice: &Lattice) -> Result<Self> {
        let scheme = QuadratureScheme::for_lattice(kernel, lattice)?;
        Self::with_scheme(kernel, lattice, scheme)
    }

    pub fn with_scheme(kernel: &Kernel, lattice: &Lattice, scheme: QuadratureScheme) -> Result<Self> {
        if (scheme.h - lattice.h()).abs() > 1e-14 * lattice.h() || scheme.dim != lattice.dim() {
            return Err(invalid("scheme", "quadrature scheme does not match the lattice"));
        }
        let [nx, ny] = lattice.shape();
        let conv = Convolver::new(scheme.weights(), scheme.m, nx, ny, lattice.dim());
        Ok(Self {
            kernel: kernel.clone(),
            lattice: lattice.clone(),
            scheme,
            conv,
        })
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }
    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }
    pub fn scheme(&self) -> &QuadratureScheme {
        &self.scheme
    }
    /// Bytes held by the weight table and the FFT cache.
    pub fn bytes(&self) -> usize {
        self.scheme.weights.len() * 8 + self.conv.bytes()
    }

    /// Coefficient of `u(x)` in the far sum plus tail: `Σ w_j + tail`.
    pub fn diagonal_mass(&self) -> f64 {
        self.scheme.w_far_total + self.scheme.tail
    }

    /// `Iu` at every lattice node.
    pub fn apply(&self, u: &GridFunction) -> Vec<f64> {
        assert_eq!(u.lattice(), &self.lattice, "field lives on a different lattice");
        let ext = u.beyond();
        let phi: Vec<f64> = match ext {
            Beyond::Zero => u.values().to_vec(),
            _ => u
                .values()
                .iter()
                .enumerate()
                .map(|(i, v)| v - ext.eval(self.lattice.coords(i)))
                .collect(),
        };
        self.apply_zero_extended(&phi)
    }

    /// `I` of the field equal to `phi` on the lattice and 0 elsewhere.
    pub fn apply_zero_extended(&self, phi: &[f64]) -> Vec<f64> {
        let far = self.conv.apply(phi);
        let g = GridFunction::new(self.lattice.clone(), phi.to_vec(), Beyond::Zero).expect("finite field");
        let q = &self.scheme;
        far.iter()
            .zip(phi)
            .enumerate()
            .map(|(i, (f, p))| f - (q.w_far_total + q.tail) * p + q.c_near * laplacian_at(&g, i))
            .collect()
    }

    /// `Σ_j w_j φ(x+y_j) − (W + tail) φ(x)` for `φ` zero off the lattice:
    /// `I` without the near-field Laplacian term.
    pub fn apply_far(&self, phi: &[f64]) -> Vec<f64> {
        let d = self.diagonal_mass();
        let mut out = self.conv.apply(phi);
        for (o, p) in out.iter_mut().zip(phi) {
            *o -= d * p;
        }
        out
    }

    /// Direct evaluation at one node (no FFT).
    pub fn eval_at(&self, u: &GridFunction, idx: usize) -> f64 {
        self.scheme.eval_at(u, idx)
    }
}

/// `Iu(x)` at an interior node by direct summation.
pub fn nonlocal_eval(op: &NonlocalOperator, domain: &Domain, u: &GridFunction, idx: usize) -> Result<f64> {
    check_reach(op, domain)?;
    if !domain.contains(u.lattice().coords(idx)) {
        return Err(Error::NotInterior(idx));
    }
    Ok(op.eval_at(u, idx))
}

fn check_reach(op: &NonlocalOperator, domain: &Domain) -> Result<()> {
    let q = op.scheme();
    let covered = q.support.is_some_and(|s| s <= q.reach);
    if !covered && q.reach < domain.diameter() {
        return Err(Error::ReachTooSmall {
            reach: q.reach,
            required: domain.diameter(),
        });
    }
    Ok(())
}

/// Interior node indices of `domain` on `lattice`.
pub fn interior_nodes(domain: &Domain, lattice: &Lattice) -> Vec<usize> {
    (0..lattice.len()).filter(|&i| domain.contains(lattice.coords(i))).collect()
}

/// Values of a discrete operator at a list of nodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeValues {
    pub nodes: Vec<usize>,
    pub values: Vec<f64>,
}

impl NodeValues {
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `L_h u = Δ_h u + a I_h u` at the interior nodes of `domain`.
pub fn apply_l(domain: &Domain, a: f64, op: &NonlocalOperator, u: &GridFunction) -> Result<NodeValues> {
    if !(a >= 0.0) {
        return Err(invalid("a", "must be nonnegative"));
    }
    check_reach(op, domain)?;
    let nodes = interior_nodes(domain, u.lattice());
    let iu = if a != 0.0 { Some(op.apply(u)) } else { None };
    let values = nodes
        .iter()
        .map(|&i| laplacian_at(u, i) + iu.as_ref().map_or(0.0, |v| a * v[i]))
        .collect();
    Ok(NodeValues { nodes, values })
}

/// `I_r v(x)`: the nonlocal operator for the rescaled density
/// `r^{n+α} k(r·)`.
pub fn scaled_operator(k: &Kernel, r: f64, lattice: &Lattice) -> Result<NonlocalOperator> {
    NonlocalOperator::new(&k.scaled(r)?, lattice)
}

/// `½ Σ_axes (D⁺v D⁺d + D⁻v D⁻d)`, the gradient pairing consistent with
/// the five-point Laplacian: `Δ_h(vd) − dΔ_h v − vΔ_h d = 2·pairing`.
pub fn gradient_pairing(v: &GridFunction, d: &GridFunction, idx: usize) -> f64 {
    let lat = v.lattice();
    let (i, j) = lat.ij(idx);
    let (i, j) = (i as isize, j as isize);
    let h = lat.h();
    let (v0, d0) = (v.value(idx), d.value(idx));
    let mut s = 0.0;
    let dirs: &[(isize, isize)] = if lat.dim() == 1 { &[(1, 0), (-1, 0)] } else { &[(1, 0), (-1, 0), (0, 1), (0, -1)] };
    for &(di, dj) in dirs {
        s += (v.at(i + di, j + dj) - v0) * (d.at(i + di, j + dj) - d0);
    }
    0.5 * s / (h * h)
}

/// Central-difference gradient dot product `D_c v · D_c d`.
pub fn central_gradient_dot(v: &GridFunction, d: &GridFunction, idx: usize) -> f64 {
    let lat = v.lattice();
    let (i, j) = lat.ij(idx);
    let (i, j) = (i as isize, j as isize);
    let h2 = 2.0 * lat.h();
    let mut s = (v.at(i + 1, j) - v.at(i - 1, j)) * (d.at(i + 1, j) - d.at(i - 1, j));
    if lat.dim() == 2 {
        s += (v.at(i, j + 1) - v.at(i, j - 1)) * (d.at(i, j + 1) - d.at(i, j - 1));
    }
    s / (h2 * h2)
}

/// How the near-field gradient pairing in `Z` is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GradientPairing {
    /// One-sided pairing matching the five-point Laplacian.
    Consistent,
    /// Central differences.
    Central,
}

/// `Z[v,d](x) = ∫ (v(x+y) − v(x))(d(x+y) − d(x)) k(y) dy` at one node.
/// Both fields must have zero or constant extensions.
pub fn z_bracket(op: &NonlocalOperator, v: &GridFunction, d: &GridFunction, idx: usize, pairing: GradientPairing) -> f64 {
    let lat = v.lattice();
    let (i, j) = lat.ij(idx);
    let (i, j) = (i as isize, j as isize);
    let q = op.scheme();
    let m = q.m as isize;
    let (v0, d0) = (v.value(idx), d.value(idx));
    let mut s = 0.0;
    let jr = if lat.dim() == 1 { 0..=0 } else { -m..=m };
    for dj in jr {
        for di in -m..=m {
            let w = q.weight(di, dj);
            if w != 0.0 {
                s += w * (v.at(i + di, j + dj) - v0) * (d.at(i + di, j + dj) - d0);
            }
        }
    }
    let g = match pairing {
        GradientPairing::Consistent => gradient_pairing(v, d, idx),
        GradientPairing::Central => central_gradient_dot(v, d, idx),
    };
    let x = lat.coords(idx);
    let tail = q.tail * (v.beyond().eval(x) - v0) * (d.beyond().eval(x) - d0);
    s + 2.0 * q.c_near * g + tail
}

/// Terms of the product rule `L(vd) = dLv + vLd + 2Dv·Dd + aZ[v,d]` at
/// one node.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ProductRuleTerms {
    pub l_vd: f64,
    pub d_lv: f64,
    pub v_ld: f64,
    pub grad: f64,
    pub z: f64,
    pub residual: f64,
}

pub fn product_rule_terms(
    a: f64,
    op: &NonlocalOperator,
    v: &GridFunction,
    d: &GridFunction,
    idx: usize,
    pairing: GradientPairing,
) -> ProductRuleTerms {
    let vd = GridFunction::new(
        v.lattice().clone(),
        v.values().iter().zip(d.values()).map(|(a, b)| a * b).collect(),
        Beyond::Zero,
    )
    .expect("finite product");
    let l = |u: &GridFunction| laplacian_at(u, idx) + a * op.eval_at(u, idx);
    let l_vd = l(&vd);
    let d_lv = d.value(idx) * l(v);
    let v_ld = v.value(idx) * l(d);
    let g = match pairing {
        GradientPairing::Consistent => gradient_pairing(v, d, idx),
        GradientPairing::Central => central_gradient_dot(v, d, idx),
    };
    let z = z_bracket(op, v, d, idx, pairing);
    let residual = l_vd - d_lv - v_ld - 2.0 * g - a * z;
    ProductRuleTerms {
        l_vd,
        d_lv,
        v_ld,
        grad: 2.0 * g,
        z,
        residual,
    }
}

/// One sample of the `|Lδ|` boundary profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProfileRow {
    pub delta: f64,
    pub abs_l_delta: f64,
    pub ray_id: usize,
}

/// Boundary profile of `|Lδ̃|` along inward rays with the fitted rate.
#[derive(Debug, Clone, Serialize)]
pub struct LDeltaProfile {
    pub rows: Vec<ProfileRow>,
    /// For `α ≠ 1`: slope of `log|Lδ|` against `log δ`. For `α = 1`:
    /// slope of `|Lδ|` against `−log δ`.
    pub fit: LinearFit,
    /// `max / min` of `|Lδ| / (−log δ + C3)` over the rows, `α = 1` only.
    pub log_ratio_spread: Option<f64>,
    pub alpha: f64,
}

impl LDeltaProfile {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("delta,abs_L_delta,ray_id\n");
        for r in &self.rows {
            s.push_str(&format!("{:.12e},{:.12e},{}\n", r.delta, r.abs_l_delta, r.ray_id));
        }
        s
    }
}

/// Samples `|Lδ̃|` with `δ̃` the smoothed distance of collar width `ρ1`
/// at `δ = 2^{-j} ρ1`, `j = j_min..=j_max`, along `rays` inward normals.
/// Evaluated with the continuum quadrature so that `δ` can be far below
/// any lattice spacing.
pub fn l_delta_profile(
    domain: &Domain,
    k: &Kernel,
    a: f64,
    rho1: f64,
    rays: usize,
    levels: (u32, u32),
) -> Result<LDeltaProfile> {
    let sd = domain.smoothed_distance(rho1)?;
    let field = |x: Point| sd.eval(x).unwrap_or(0.0);
    let mut rows = Vec::new();
    let reach = domain.diameter() + 1e-9;
    for ray in 0..rays.max(1) {
        let t = 2.0 * std::f64::consts::PI * ray as f64 / rays.max(1) as f64;
        let x0 = domain.boundary_point(t);
        let n = domain.inward_normal(x0)?;
        for j in levels.0..=levels.1 {
            let delta = rho1 * 0.5f64.powi(j as i32);
            let x = add(x0, scale(n, delta));
            let lap = fd_laplacian(&field, x, 0.25 * delta);
            let mut opts = ContinuumOptions::new(0.5 * delta, reach);
            opts.kinks = vec![delta];
            let iu = nonlocal_at(k, &field, lap, x, &opts)?;
            rows.push(ProfileRow {
                delta,
                abs_l_delta: (lap + a * iu).abs(),
                ray_id: ray,
            });
        }
    }
    let alpha = k.alpha;
    let (fit, spread) = if (alpha - 1.0).abs() < 1e-12 {
        let xs: Vec<f64> = rows.iter().map(|r| -r.delta.ln()).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.abs_l_delta).collect();
        let fit = linear_fit(&xs, &ys)?;
        let c3 = fit.intercept / fit.slope;
        let ratios: Vec<f64> = rows.iter().map(|r| r.abs_l_delta / (-r.delta.ln() + c3)).collect();
        let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().cloned().fold(0.0, f64::max);
        (fit, Some(if lo > 0.0 { hi / lo } else { f64::INFINITY }))
    } else {
        let xs: Vec<f64> = rows.iter().map(|r| r.delta.ln()).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.abs_l_delta.max(1e-300).ln()).collect();
        (linear_fit(&xs, &ys)?, None)
    };
    Ok(LDeltaProfile {
        rows,
        fit,
        log_ratio_spread: spread,
        alpha,
    })
}

/// Five-point Laplacian of a closure with step `s`.
pub fn fd_laplacian(f: &dyn Fn(Point) -> f64, x: Point, s: f64) -> f64 {
    let c = f(x);
    let ex = f([x[0] + s, x[1]]) + f([x[0] - s, x[1]]) - 2.0 * c;
    let ey = f([x[0], x[1] + s]) + f([x[0], x[1] - s]) - 2.0 * c;
    (ex + ey) / (s * s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn unit_disc_lattice(h: f64, margin: usize) -> (Domain, Lattice) {
        let d = Domain::ball([0.0, 0.0], 1.0, 2).unwrap();
        let lat = Lattice::covering(d.bounding_box(), h, 2, margin);
        (d, lat)
    }

    #[test]
    fn weights_are_nonnegative_and_symmetric() {
        let k = Kernel::fractional(1.5, 1.0, None, 2).unwrap();
        let q = QuadratureScheme::new(&k, 0.05, 20).unwrap();
        for di in -20..=20 {
            for dj in -20..=20 {
                let w = q.weight(di, dj);
                assert!(w >= 0.0);
                assert_eq!(w, q.weight(-di, -dj));
                assert_eq!(w, q.weight(dj, di));
            }
        }
        assert_eq!(q.weight(1, 1), 0.0);
        assert!(q.weight(2, 0) > 0.0);
    }

    #[test]
    fn one_dimensional_weights_are_exact_cell_masses() {
        let k = Kernel::fractional(0.5, 1.0, None, 1).unwrap();
        let q = QuadratureScheme::new(&k, 0.1, 10).unwrap();
        // ∫_{0.15}^{0.25} y^{-1.5} dy
        assert_relative_eq!(q.weight(2, 0), 2.0 * (0.15f64.powf(-0.5) - 0.25f64.powf(-0.5)), max_relative = 1e-14);
        assert_relative_eq!(q.tail, 2.0 * 2.0 * 1.05f64.powf(-0.5), max_relative = 1e-13);
    }

    #[test]
    fn near_and_far_masses_partition_second_moment() {
        // Σ_j w_j|y_j|² + 2n·c_near ≈ ∫_{square}|y|²k for a truncated kernel.
        let k = Kernel::fractional(1.0, 1.0, Some(1.0), 2).unwrap();
        let h = 1.0 / 64.0;
        let q = QuadratureScheme::new(&k, h, 66).unwrap();
        assert_eq!(q.tail, 0.0);
        let mut s = 4.0 * q.c_near;
        for di in -66isize..=66 {
            for dj in -66isize..=66 {
                s += q.weight(di, dj) * ((di * di + dj * dj) as f64) * h * h;
            }
        }
        assert!((s - 2.0 * PI).abs() / (2.0 * PI) < 0.01, "{s}");
    }

    #[test]
    fn fft_matches_direct_summation() {
        let (d, lat) = unit_disc_lattice(1.0 / 16.0, 2);
        let k = Kernel::fractional(1.5, 1.0, None, 2).unwrap();
        let op = NonlocalOperator::new(&k, &lat).unwrap();
        let u = GridFunction::from_fn(lat.clone(), |x| d.signed_distance(x).unwrap().powi(2), Beyond::Zero);
        let all = op.apply(&u);
        for idx in (0..lat.len()).step_by(37) {
            assert_relative_eq!(all[idx], op.eval_at(&u, idx), epsilon = 1e-9, max_relative = 1e-10);
        }
    }

    #[test]
    fn affine_fields_are_annihilated() {
        let (d, lat) = unit_disc_lattice(1.0 / 32.0, 2);
        let ext = Beyond::Affine { c: 1.0, g: [3.0, 0.0] };
        let u = GridFunction::from_fn(lat.clone(), |x| 1.0 + 3.0 * x[0], ext);
        for k in [
            Kernel::fractional(0.5, 1.0, None, 2).unwrap(),
            Kernel::fractional(1.0, 1.0, None, 2).unwrap(),
            Kernel::fractional(1.5, 1.0, None, 2).unwrap(),
            Kernel::subordinate(0.3, 0.7, 2).unwrap(),
        ] {
            let op = NonlocalOperator::new(&k, &lat).unwrap();
            let lu = apply_l(&d, 1.0, &op, &u).unwrap();
            assert!(lu.max_abs() <= 1e-10);
            for &i in lu.nodes.iter().step_by(97) {
                assert!(nonlocal_eval(&op, &d, &u, i).unwrap().abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn constants_are_annihilated_exactly() {
        let (_, lat) = unit_disc_lattice(1.0 / 16.0, 2);
        let k = Kernel::fractional(1.5, 1.0, None, 2).unwrap();
        let op = NonlocalOperator::new(&k, &lat).unwrap();
        let u = GridFunction::from_fn(lat.clone(), |_| 2.5, Beyond::Constant(2.5));
        assert!(op.apply(&u).iter().all(|&v| v == 0.0));
        assert_eq!(op.eval_at(&u, lat.len() / 2), 0.0);
    }

    #[test]
    fn quadratic_matches_second_moment() {
        let h = 1.0 / 64.0;
        let k = Kernel::fractional(1.0, 1.0, Some(1.0), 2).unwrap();
        let lat = Lattice::covering(([-2.2, -2.2], [2.2, 2.2]), h, 2, 0);
        let u = GridFunction::from_fn(lat.clone(), |x| x[0] * x[0] + x[1] * x[1], Beyond::Zero);
        let op = NonlocalOperator::new(&k, &lat).unwrap();
        let d = Domain::ball([0.0, 0.0], 1.0, 2).unwrap();
        for x in [[0.0, 0.0], [0.5, -0.25], [-0.75, 0.5]] {
            let idx = lat.nearest(x).unwrap();
            let v = nonlocal_eval(&op, &d, &u, idx).unwrap();
            assert!((v - 2.0 * PI).abs() < 0.01 * 2.0 * PI, "{v}");
            let lu = laplacian_at(&u, idx) + v;
            assert!((lu - (4.0 + 2.0 * PI)).abs() < 0.01 * (4.0 + 2.0 * PI));
        }
    }

    #[test]
    fn torsion_laplacian_without_nonlocal_part() {
        let (d, lat) = unit_disc_lattice(1.0 / 64.0, 2);
        let k = Kernel::fractional(1.5, 1.0, None, 2).unwrap();
        let op = NonlocalOperator::new(&k, &lat).unwrap();
        let u = GridFunction::from_fn(lat.clone(), |x| (1.0 - x[0] * x[0] - x[1] * x[1]).max(0.0) / 4.0, Beyond::Zero);
        let lu = apply_l(&d, 0.0, &op, &u).unwrap();
        // Away from the kink of the zero extension the quadratic is exact.
        for (&i, &v) in lu.nodes.iter().zip(&lu.values) {
            if d.signed_distance(lat.coords(i)).unwrap() > 2.0 * lat.h() {
                assert!((v + 1.0).abs() <= 5e-3);
            }
        }
    }

    #[test]
    fn exterior_node_is_rejected() {
        let (d, lat) = unit_disc_lattice(1.0 / 8.0, 2);
        let k = Kernel::fractional(1.5, 1.0, None, 2).unwrap();
        let op = NonlocalOperator::new(&k, &lat).unwrap();
        let u = GridFunction::zeros(lat.clone());
        assert!(matches!(nonlocal_eval(&op, &d, &u, 0), Err(Error::NotInterior(0))));
        let short = QuadratureScheme::new(&k, lat.h(), 3).unwrap();
        let op = NonlocalOperator::with_scheme(&k, &lat, short).unwrap();
        let c = lat.nearest([0.0, 0.0]).unwrap();
        assert!(matches!(nonlocal_eval(&op, &d, &u, c), Err(Error::ReachTooSmall { .. })));
    }

    #[test]
    fn scaling_identity() {
        // r^{2−α} I_r v(x) = r² Iu(rx) for v(y) = u(ry), u = |x|².
        let k = Kernel::fractional(1.0, 1.0, Some(1.0), 2).unwrap();
        let h = 1.0 / 32.0;
        let r = 0.5;
        let lat = Lattice::covering(([-3.0, -3.0], [3.0, 3.0]), h, 2, 0);
        let v = GridFunction::from_fn(lat.clone(), |y| r * r * (y[0] * y[0] + y[1] * y[1]), Beyond::Zero);
        let op_r = scaled_operator(&k, r, &lat).unwrap();
        let lat_u = lat.scaled(r);
        let u = GridFunction::from_fn(lat_u.clone(), |x| x[0] * x[0] + x[1] * x[1], Beyond::Zero);
        let op = NonlocalOperator::new(&k, &lat_u).unwrap();
        let idx = lat.nearest([0.25, 0.0]).unwrap();
        let lhs = r.powf(2.0 - k.alpha) * op_r.eval_at(&v, idx);
        let rhs = r * r * op.eval_at(&u, idx);
        assert_relative_eq!(lhs, rhs, max_relative = 1e-6);
        // r = 1 is the unscaled operator.
        let op1 = scaled_operator(&k, 1.0, &lat).unwrap();
        let op0 = NonlocalOperator::new(&k, &lat).unwrap();
        assert_eq!(op1.eval_at(&v, idx), op0.eval_at(&v, idx));
    }

    #[test]
    fn z_bracket_examples() {
        let (d, lat) = unit_disc_lattice(1.0 / 32.0, 2);
        let k = Kernel::fractional(1.5, 1.0, None, 2).unwrap();
        let op = NonlocalOperator::new(&k, &lat).unwrap();
        let delta = GridFunction::from_fn(lat.clone(), |x| d.signed_distance(x).unwrap(), Beyond::Zero);
        let one = GridFunction::from_fn(lat.clone(), |_| 1.0, Beyond::Constant(1.0));
        for idx in [lat.nearest([0.3, 0.2]).unwrap(), lat.nearest([0.9, 0.0]).unwrap()] {
            assert_eq!(z_bracket(&op, &one, &delta, idx, GradientPairing::Consistent), 0.0);
            assert!(z_bracket(&op, &delta, &delta, idx, GradientPairing::Consistent) >= 0.0);
        }
    }

    #[test]
    fn discrete_product_rule_is_exact_with_consistent_pairing() {
        let (d, lat) = unit_disc_lattice(1.0 / 32.0, 40);
        let k = Kernel::fractional(1.5, 1.0, Some(1.0), 2).unwrap();
        let op = NonlocalOperator::new(&k, &lat).unwrap();
        let sd = d.smoothed_distance(0.25).unwrap();
        let dd = GridFunction::from_fn(lat.clone(), |x| sd.eval(x).unwrap(), Beyond::Zero);
        let v = GridFunction::from_fn(lat.clone(), |x| x[0].cos(), Beyond::Zero);
        for x in [[0.2, 0.1], [0.8, 0.0], [0.0, -0.5]] {
            let t = product_rule_terms(1.0, &op, &v, &dd, lat.nearest(x).unwrap(), GradientPairing::Consistent);
            assert!(t.residual.abs() < 1e-8, "{t:?}");
        }
    }

    #[test]
    fn central_pairing_is_second_order() {
        let k = Kernel::fractional(1.5, 1.0, Some(1.0), 2).unwrap();
        let d = Domain::ball([0.0, 0.0], 1.0, 2).unwrap();
        let mut errs = Vec::new();
        for h in [1.0 / 16.0, 1.0 / 32.0] {
            let lat = Lattice::covering(d.bounding_box(), h, 2, (1.2 / h) as usize);
            let op = NonlocalOperator::new(&k, &lat).unwrap();
            let sd = d.smoothed_distance(0.25).unwrap();
            let dd = GridFunction::from_fn(lat.clone(), |x| sd.eval(x).unwrap(), Beyond::Zero);
            let v = GridFunction::from_fn(lat.clone(), |x| x[0].cos(), Beyond::Zero);
            let t = product_rule_terms(1.0, &op, &v, &dd, lat.nearest([0.5, 0.0]).unwrap(), GradientPairing::Central);
            errs.push(t.residual.abs());
        }
        assert!(errs[1] < errs[0] / 3.0, "{errs:?}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use std::sync::OnceLock;

        fn setup() -> &'static (Domain, Lattice, NonlocalOperator) {
            static S: OnceLock<(Domain, Lattice, NonlocalOperator)> = OnceLock::new();
            S.get_or_init(|| {
                let (d, lat) = unit_disc_lattice(1.0 / 16.0, 2);
                let k = Kernel::fractional(1.2, 1.0, None, 2).unwrap();
                let op = NonlocalOperator::new(&k, &lat).unwrap();
                (d, lat, op)
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn monotone_in_neighbours(seed in any::<u64>(), node in 0usize..1000) {
                let (_, lat, op) = setup();
                let idx = node % lat.len();
                let mut x = seed;
                let mut next = || { x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); (x >> 11) as f64 / (1u64 << 53) as f64 };
                let u: Vec<f64> = (0..lat.len()).map(|_| next()).collect();
                let mut v: Vec<f64> = u.iter().map(|a| a + next()).collect();
                v[idx] = u[idx];
                let gu = GridFunction::new(lat.clone(), u, Beyond::Zero).unwrap();
                let gv = GridFunction::new(lat.clone(), v, Beyond::Zero).unwrap();
                prop_assert!(op.eval_at(&gu, idx) <= op.eval_at(&gv, idx) + 1e-12);
            }

            #[test]
            fn translation_equivariance(shift_i in -3isize..=3, shift_j in -3isize..=3) {
                let (_, lat, op) = setup();
                let f = |x: Point| (-(x[0] * x[0] + x[1] * x[1]) * 16.0).exp();
                let h = lat.h();
                let u = GridFunction::from_fn(lat.clone(), f, Beyond::Zero);
                let s = GridFunction::from_fn(lat.clone(), |x| f([x[0] - shift_i as f64 * h, x[1] - shift_j as f64 * h]), Beyond::Zero);
                let a = lat.nearest([0.0, 0.0]).unwrap();
                let (i, j) = lat.ij(a);
                let b = lat.index((i as isize + shift_i) as usize, (j as isize + shift_j) as usize);
                // Differences come only from the truncated far tail of the Gaussian.
                prop_assert!((op.eval_at(&u, a) - op.eval_at(&s, b)).abs() < 1e-6);
            }
        }
    }
}
