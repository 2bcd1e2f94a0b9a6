//! Implicit C² domains in one and two dimensions: distance to the
//! complement, inward normals, the smoothed distance and boundary collars.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::Lattice;

/// Points are stored with two coordinates; in one dimension the second is 0.
pub type Point = [f64; 2];

pub(crate) fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}
pub(crate) fn add(a: Point, b: Point) -> Point {
    [a[0] + b[0], a[1] + b[1]]
}
pub(crate) fn scale(a: Point, s: f64) -> Point {
    [a[0] * s, a[1] * s]
}
pub(crate) fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}
pub(crate) fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}
pub(crate) fn dist(a: Point, b: Point) -> f64 {
    norm(sub(a, b))
}

/// Tolerance for "on the boundary" preconditions.
pub const BOUNDARY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Shape {
    /// A disc in 2-d, an interval in 1-d.
    Ball { center: Point, radius: f64 },
    Ellipse { center: Point, semi_axes: [f64; 2] },
    /// `r(θ) = r0 (1 + Σ ε_m cos(mθ))` around `center`.
    Star {
        center: Point,
        r0: f64,
        modes: Vec<(u32, f64)>,
    },
}

/// A bounded smooth domain described implicitly, together with the
/// geometric constants derived from it at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    shape: Shape,
    dim: usize,
    bbox: (Point, Point),
    inradius: f64,
    min_curvature_radius: f64,
    rho: f64,
}

impl Domain {
    pub fn ball(center: Point, radius: f64, dim: usize) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(invalid("radius", "must be positive"));
        }
        Self::from_shape(Shape::Ball { center, radius }, dim)
    }

    pub fn ellipse(center: Point, semi_axes: [f64; 2]) -> Result<Self> {
        if !(semi_axes[0] > 0.0 && semi_axes[1] > 0.0) {
            return Err(invalid("semi_axes", "must be positive"));
        }
        Self::from_shape(Shape::Ellipse { center, semi_axes }, 2)
    }

    pub fn star(center: Point, r0: f64, modes: Vec<(u32, f64)>) -> Result<Self> {
        Self::from_shape(Shape::Star { center, r0, modes }, 2)
    }

    pub fn from_shape(shape: Shape, dim: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(invalid("dim", "only dimensions 1 and 2 are supported"));
        }
        let (bbox, inradius, min_curv) = match &shape {
            Shape::Ball { center, radius } => {
                let r = *radius;
                let lo = if dim == 1 { [center[0] - r, 0.0] } else { [center[0] - r, center[1] - r] };
                let hi = if dim == 1 { [center[0] + r, 0.0] } else { [center[0] + r, center[1] + r] };
                // An interval has no curvature; its "ball condition" radius is unbounded.
                let curv = if dim == 1 { f64::INFINITY } else { r };
                ((lo, hi), r, curv)
            }
            Shape::Ellipse { center, semi_axes } => {
                if dim != 2 {
                    return Err(invalid("dim", "ellipses are two-dimensional"));
                }
                let [a, b] = *semi_axes;
                let lo = [center[0] - a, center[1] - b];
                let hi = [center[0] + a, center[1] + b];
                let (big, small) = if a >= b { (a, b) } else { (b, a) };
                ((lo, hi), small, small * small / big)
            }
            Shape::Star { center, r0, modes } => {
                if dim != 2 {
                    return Err(invalid("dim", "star domains are two-dimensional"));
                }
                if !(*r0 > 0.0) {
                    return Err(invalid("r0", "must be positive"));
                }
                let abs_sum: f64 = modes.iter().map(|m| m.1.abs()).sum();
                let curv_sum: f64 = modes.iter().map(|&(m, e)| e * (m as f64).powi(2)).sum();
                if abs_sum >= 1.0 {
                    return Err(invalid("modes", "Σ|ε_m| must be below 1 so that r(θ) > 0"));
                }
                if curv_sum.abs() >= 0.2 {
                    return Err(invalid("modes", format!("|Σ ε_m m²| = {curv_sum} must be below 0.2")));
                }
                let rmax = r0 * (1.0 + abs_sum);
                let lo = [center[0] - rmax, center[1] - rmax];
                let hi = [center[0] + rmax, center[1] + rmax];
                ((lo, hi), 0.0, 0.0)
            }
        };
        let mut dom = Domain {
            shape,
            dim,
            bbox,
            inradius,
            min_curvature_radius: min_curv,
            rho: 0.0,
        };
        if let Shape::Star { .. } = dom.shape {
            dom.min_curvature_radius = dom.scan_min_curvature_radius();
            dom.inradius = dom.scan_inradius()?;
        }
        dom.rho = 0.5 * dom.inradius.min(dom.min_curvature_radius);
        Ok(dom)
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn bounding_box(&self) -> (Point, Point) {
        self.bbox
    }
    pub fn inradius(&self) -> f64 {
        self.inradius
    }
    pub fn min_curvature_radius(&self) -> f64 {
        self.min_curvature_radius
    }
    /// Radius below which the collar inclusions and two-sided ball
    /// conditions hold: half the smaller of inradius and curvature radius.
    pub fn rho(&self) -> f64 {
        self.rho
    }
    /// Largest coordinate extent of the bounding box (the diameter for
    /// balls and ellipses).
    pub fn diameter(&self) -> f64 {
        let (lo, hi) = self.bbox;
        (hi[0] - lo[0]).max(hi[1] - lo[1])
    }

    /// A point realising the inradius (the centre for balls and ellipses).
    pub fn center(&self) -> Point {
        match &self.shape {
            Shape::Ball { center, .. } | Shape::Ellipse { center, .. } | Shape::Star { center, .. } => *center,
        }
    }

    /// Cheap implicit function, negative inside, zero on the boundary.
    pub fn level(&self, x: Point) -> f64 {
        match &self.shape {
            Shape::Ball { center, radius } => {
                if self.dim == 1 {
                    (x[0] - center[0]).abs() - radius
                } else {
                    dist(x, *center) - radius
                }
            }
            Shape::Ellipse { center, semi_axes } => {
                let p = sub(x, *center);
                let s = ((p[0] / semi_axes[0]).powi(2) + (p[1] / semi_axes[1]).powi(2)).sqrt();
                (s - 1.0) * semi_axes[0].min(semi_axes[1])
            }
            Shape::Star { center, .. } => {
                let p = sub(x, *center);
                let t = p[1].atan2(p[0]);
                norm(p) - self.radial(t)
            }
        }
    }

    pub fn contains(&self, x: Point) -> bool {
        self.level(x) < 0.0
    }

    fn radial(&self, t: f64) -> f64 {
        match &self.shape {
            Shape::Star { r0, modes, .. } => r0 * (1.0 + modes.iter().map(|&(m, e)| e * (m as f64 * t).cos()).sum::<f64>()),
            _ => unreachable!("radial profile only exists for star domains"),
        }
    }

    /// Boundary curve γ(t) and its first two derivatives (2-d only),
    /// parametrised counter-clockwise.
    fn curve(&self, t: f64) -> (Point, Point, Point) {
        let (c, s) = (t.cos(), t.sin());
        match &self.shape {
            Shape::Ball { center, radius } => (
                add(*center, [radius * c, radius * s]),
                [-radius * s, radius * c],
                [-radius * c, -radius * s],
            ),
            Shape::Ellipse { center, semi_axes } => {
                let [a, b] = *semi_axes;
                (add(*center, [a * c, b * s]), [-a * s, b * c], [-a * c, -b * s])
            }
            Shape::Star { center, r0, modes } => {
                let r = self.radial(t);
                let dr = -r0 * modes.iter().map(|&(m, e)| e * m as f64 * (m as f64 * t).sin()).sum::<f64>();
                let ddr = -r0 * modes.iter().map(|&(m, e)| e * (m as f64).powi(2) * (m as f64 * t).cos()).sum::<f64>();
                (
                    add(*center, [r * c, r * s]),
                    [dr * c - r * s, dr * s + r * c],
                    [ddr * c - 2.0 * dr * s - r * c, ddr * s + 2.0 * dr * c - r * s],
                )
            }
        }
    }

    /// Boundary point at parameter `t` (angle for balls/stars, eccentric
    /// anomaly for ellipses). In 1-d, `t < π/2` selects the right endpoint.
    pub fn boundary_point(&self, t: f64) -> Point {
        if self.dim == 1 {
            let (lo, hi) = self.bbox;
            return if t.cos() >= 0.0 { hi } else { lo };
        }
        self.curve(t).0
    }

    /// `m` boundary points equally spaced in the curve parameter.
    pub fn boundary_samples(&self, m: usize) -> Vec<Point> {
        if self.dim == 1 {
            let (lo, hi) = self.bbox;
            return vec![lo, hi];
        }
        (0..m)
            .map(|i| self.boundary_point(2.0 * std::f64::consts::PI * i as f64 / m as f64))
            .collect()
    }

    /// Closest boundary point and its curve parameter.
    pub fn project(&self, x: Point) -> Result<(Point, f64)> {
        if self.dim == 1 {
            let (lo, hi) = self.bbox;
            return Ok(if (x[0] - lo[0]).abs() <= (x[0] - hi[0]).abs() {
                (lo, std::f64::consts::PI)
            } else {
                (hi, 0.0)
            });
        }
        if let Shape::Ball { center, radius } = &self.shape {
            let p = sub(x, *center);
            let r = norm(p);
            let t = if r > 0.0 { p[1].atan2(p[0]) } else { 0.0 };
            return Ok((add(*center, [radius * t.cos(), radius * t.sin()]), t));
        }
        self.project_newton(x)
    }

    fn project_newton(&self, x: Point) -> Result<(Point, f64)> {
        const COARSE: usize = 256;
        let two_pi = 2.0 * std::f64::consts::PI;
        let mut cands: Vec<(f64, f64)> = (0..COARSE)
            .map(|i| {
                let t = two_pi * i as f64 / COARSE as f64;
                (dist(self.curve(t).0, x), t)
            })
            .collect();
        cands.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut best: Option<(f64, Point, f64)> = None;
        let mut last_fail = None;
        for &(_, t0) in cands.iter().take(3) {
            match self.newton_from(x, t0) {
                Ok((p, t)) => {
                    let d = dist(p, x);
                    if best.map_or(true, |b| d < b.0) {
                        best = Some((d, p, t));
                    }
                }
                Err(e) => last_fail = Some(e),
            }
        }
        match (best, last_fail) {
            (Some((_, p, t)), _) => Ok((p, t)),
            (None, Some(e)) => Err(e),
            (None, None) => unreachable!(),
        }
    }

    /// Damped Newton on g(t) = (γ(t) − x)·γ'(t).
    fn newton_from(&self, x: Point, mut t: f64) -> Result<(Point, f64)> {
        let objective = |t: f64| {
            let p = self.curve(t).0;
            dist(p, x)
        };
        let mut residual = f64::INFINITY;
        for _ in 0..100 {
            let (g0, g1, g2) = self.curve(t);
            let d = sub(g0, x);
            let g = dot(d, g1);
            let dg = dot(g1, g1) + dot(d, g2);
            residual = g.abs() / norm(g1);
            if residual < 1e-13 {
                return Ok((g0, t));
            }
            let mut step = if dg > 0.0 { -g / dg } else { -g.signum() * 1e-2 };
            step = step.clamp(-0.5, 0.5);
            let f0 = objective(t);
            let mut damped = false;
            for _ in 0..40 {
                if objective(t + step) <= f0 + 1e-15 {
                    damped = true;
                    break;
                }
                step *= 0.5;
            }
            if !damped {
                // Objective is flat to rounding; accept the current iterate.
                return Ok((g0, t));
            }
            t += step;
            if step.abs() < 1e-15 {
                return Ok((self.curve(t).0, t));
            }
        }
        Err(Error::ProjectionFailed {
            last: self.curve(t).0,
            residual,
        })
    }

    /// Signed distance to the boundary: positive inside, negative outside.
    pub fn signed_distance_full(&self, x: Point) -> Result<f64> {
        let inside = self.contains(x);
        let d = match (&self.shape, self.dim) {
            (Shape::Ball { center, radius }, 1) => return Ok(radius - (x[0] - center[0]).abs()),
            (Shape::Ball { center, radius }, _) => return Ok(radius - dist(x, *center)),
            (_, 1) => unreachable!(),
            _ => dist(self.project(x)?.0, x),
        };
        Ok(if inside { d } else { -d })
    }

    /// δ(x) = dist(x, Ωᶜ), zero outside the domain.
    pub fn signed_distance(&self, x: Point) -> Result<f64> {
        Ok(self.signed_distance_full(x)?.max(0.0))
    }

    /// Unit inward normal at a boundary point.
    pub fn inward_normal(&self, x0: Point) -> Result<Point> {
        let sd = self.signed_distance_full(x0)?;
        if sd.abs() > BOUNDARY_TOL {
            return Err(Error::NotOnBoundary {
                point: x0,
                distance: sd.abs(),
                tol: BOUNDARY_TOL,
            });
        }
        self.normal_at_projection(x0)
    }

    /// Inward normal at the projection of `x` onto the boundary.
    pub fn normal_at_projection(&self, x: Point) -> Result<Point> {
        if self.dim == 1 {
            let c = self.center();
            return Ok(if x[0] >= c[0] { [-1.0, 0.0] } else { [1.0, 0.0] });
        }
        let (_, t) = self.project(x)?;
        let (_, d1, _) = self.curve(t);
        let len = norm(d1);
        if len < 1e-14 {
            return Err(Error::DegenerateNormal(x));
        }
        Ok([-d1[1] / len, d1[0] / len])
    }

    /// Fraction `θ ∈ (0, 1]` along the segment `x → x + step` at which the
    /// boundary is crossed, for `x` inside and `x + step` outside.
    pub fn crossing_fraction(&self, x: Point, step: Point) -> f64 {
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        if let Shape::Ball { center, radius } = &self.shape {
            // |p + θ s|² = R² has a closed form.
            let p = sub(x, *center);
            let (a, b, c) = (dot(step, step), 2.0 * dot(p, step), dot(p, p) - radius * radius);
            let disc = (b * b - 4.0 * a * c).max(0.0);
            let th = (-b + disc.sqrt()) / (2.0 * a);
            return th.clamp(0.0, 1.0);
        }
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if self.level(add(x, scale(step, mid))) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn scan_min_curvature_radius(&self) -> f64 {
        let n = 4096;
        (0..n)
            .map(|i| {
                let t = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                let (_, d1, d2) = self.curve(t);
                let cross = (d1[0] * d2[1] - d1[1] * d2[0]).abs();
                norm(d1).powi(3) / cross.max(1e-300)
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn scan_inradius(&self) -> Result<f64> {
        let (lo, hi) = self.bbox;
        let n = 60;
        let mut best = (0.0, self.center());
        for i in 0..=n {
            for j in 0..=n {
                let x = [
                    lo[0] + (hi[0] - lo[0]) * i as f64 / n as f64,
                    lo[1] + (hi[1] - lo[1]) * j as f64 / n as f64,
                ];
                if self.contains(x) {
                    let d = self.signed_distance(x)?;
                    if d > best.0 {
                        best = (d, x);
                    }
                }
            }
        }
        // Pattern search refinement around the best sample.
        let (mut d, mut x) = best;
        let mut step = (hi[0] - lo[0]) / n as f64;
        while step > 1e-9 {
            let mut improved = false;
            for dir in [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]] {
                let y = add(x, scale(dir, step));
                let dy = self.signed_distance(y)?;
                if dy > d {
                    d = dy;
                    x = y;
                    improved = true;
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        Ok(d)
    }

    /// C² modification of δ that equals δ in the collar `δ < ρ1`.
    pub fn smoothed_distance(&self, rho1: f64) -> Result<SmoothedDistance<'_>> {
        if !(rho1 > 0.0) || rho1 >= self.inradius {
            return Err(invalid(
                "rho1",
                format!("collar width {rho1} must lie in (0, inradius = {})", self.inradius),
            ));
        }
        Ok(SmoothedDistance { domain: self, rho1 })
    }

    /// Builds the boundary collar regions around `x0` on the given lattice.
    pub fn collar_region(&self, lattice: &Lattice, x0: Point, radius: f64, kappa: f64) -> Result<CollarRegion> {
        CollarRegion::build(self, lattice, x0, radius, kappa)
    }
}

/// The distance function composed with a C² monotone blend
/// `S(t) = t` for `t ≤ ρ1`, constant `3ρ1/2` for `t ≥ 2ρ1`; `S'` is a
/// smoothstep on `[ρ1, 2ρ1]`.
#[derive(Debug, Clone, Copy)]
pub struct SmoothedDistance<'a> {
    domain: &'a Domain,
    rho1: f64,
}

impl SmoothedDistance<'_> {
    pub fn rho1(&self) -> f64 {
        self.rho1
    }

    pub fn cap(&self) -> f64 {
        1.5 * self.rho1
    }

    /// Maximal |S''|, attained at the middle of the blend.
    pub fn blend_curvature_bound(&self) -> f64 {
        1.5 / self.rho1
    }

    pub fn profile(&self, t: f64) -> f64 {
        let r = self.rho1;
        if t <= r {
            t
        } else if t >= 2.0 * r {
            1.5 * r
        } else {
            let s = (t - r) / r;
            // ∫ (1 − 3s² + 2s³) ds
            r + r * (s - s.powi(3) + 0.5 * s.powi(4))
        }
    }

    pub fn profile_d1(&self, t: f64) -> f64 {
        let r = self.rho1;
        if t <= r {
            1.0
        } else if t >= 2.0 * r {
            0.0
        } else {
            let s = (t - r) / r;
            1.0 - 3.0 * s * s + 2.0 * s.powi(3)
        }
    }

    pub fn profile_d2(&self, t: f64) -> f64 {
        let r = self.rho1;
        if t <= r || t >= 2.0 * r {
            0.0
        } else {
            let s = (t - r) / r;
            (-6.0 * s + 6.0 * s * s) / r
        }
    }

    pub fn eval(&self, x: Point) -> Result<f64> {
        Ok(self.profile(self.domain.signed_distance(x)?))
    }

    /// Gradient `S'(δ)∇δ`, with `∇δ` the inward normal at the projection.
    pub fn gradient(&self, x: Point) -> Result<Point> {
        let d = self.domain.signed_distance(x)?;
        let s1 = self.profile_d1(d);
        if d <= 0.0 || s1 == 0.0 {
            return Ok([0.0, 0.0]);
        }
        Ok(scale(self.domain.normal_at_projection(x)?, s1))
    }
}

/// Boundary collar `D_R(x0) = B_R(x0) ∩ Ω` and its interior slab
/// `D⁺_{κ'R}(x0)`, as lattice node sets.
#[derive(Debug, Clone, Serialize)]
pub struct CollarRegion {
    pub x0: Point,
    pub normal: Point,
    pub radius: f64,
    pub kappa: f64,
    pub kappa_prime: f64,
    /// Nodes of `D_R`.
    pub d_r: Vec<usize>,
    /// Nodes of `D⁺_{κ'R}`.
    pub d_plus: Vec<usize>,
    /// For nodes `y ∈ D_{R/2}`: `(y, y*, y* + 4κR n(y*))`.
    pub shifted: Vec<(usize, Point, Point)>,
}

/// Largest number of nodes checked per inclusion.
const INCLUSION_SAMPLE: usize = 2000;

impl CollarRegion {
    fn build(domain: &Domain, lattice: &Lattice, x0: Point, radius: f64, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa < 1.0 / 16.0) {
            return Err(invalid("kappa", format!("{kappa} must lie in (0, 1/16)")));
        }
        if !(radius > 0.0) || radius > domain.rho() * (1.0 + 1e-12) {
            return Err(invalid(
                "radius",
                format!("R = {radius} must lie in (0, ρ = {}]", domain.rho()),
            ));
        }
        let normal = domain.inward_normal(x0)?;
        let kappa_prime = 0.5 + 2.0 * kappa;
        let mut d_r = Vec::new();
        let mut d_plus = Vec::new();
        let mut half = Vec::new();
        for idx in 0..lattice.len() {
            let y = lattice.coords(idx);
            if !domain.contains(y) {
                continue;
            }
            let r = dist(y, x0);
            if r < radius {
                d_r.push(idx);
                if r < 0.5 * radius {
                    half.push(idx);
                }
            }
            if r < kappa_prime * radius && dot(sub(y, x0), normal) >= 2.0 * kappa * radius {
                d_plus.push(idx);
            }
        }
        let sd = |p: Point| domain.signed_distance_full(p);

        // Inner-ball inclusion: B_{κR}(y) ⊂ D_R for y ∈ D⁺.
        for &idx in sample(&d_plus) {
            let y = lattice.coords(idx);
            if dist(y, x0) + kappa * radius > radius || sd(y)? < kappa * radius {
                return Err(Error::CollarInclusion {
                    inclusion: "B_{κR}(y) ⊂ D_R",
                    witness: y,
                });
            }
        }
        // Outer-ball inclusion on y ∈ D_{R/2}.
        let mut shifted = Vec::with_capacity(half.len());
        for &idx in &half {
            let y = lattice.coords(idx);
            let (ystar, _) = domain.project(y)?;
            let n = domain.normal_at_projection(y)?;
            let p = add(ystar, scale(n, 4.0 * kappa * radius));
            shifted.push((idx, ystar, p));
        }
        for &(_, _, p) in sample(&shifted) {
            let sp = sd(p)?;
            if dist(p, x0) + 4.0 * kappa * radius > radius || sp < 4.0 * kappa * radius - 1e-12 {
                return Err(Error::CollarInclusion {
                    inclusion: "B_{4κR}(y* + 4κR n) ⊂ D_R",
                    witness: p,
                });
            }
            let in_plus = dist(p, x0) + kappa * radius <= kappa_prime * radius
                && dot(sub(p, x0), normal) - kappa * radius >= 2.0 * kappa * radius - 1e-12
                && sp >= kappa * radius;
            if !in_plus {
                return Err(Error::CollarInclusion {
                    inclusion: "B_{κR}(y* + 4κR n) ⊂ D⁺_{κ'R}",
                    witness: p,
                });
            }
        }
        Ok(CollarRegion {
            x0,
            normal,
            radius,
            kappa,
            kappa_prime,
            d_r,
            d_plus,
            shifted,
        })
    }
}

/// Deterministic strided sub-sample.
fn sample<T>(v: &[T]) -> impl Iterator<Item = &T> {
    let stride = v.len().div_ceil(INCLUSION_SAMPLE).max(1);
    v.iter().step_by(stride)
}
