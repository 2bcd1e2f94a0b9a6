//! Pointwise evaluation of the nonlocal operator and the bracket `Z` for
//! fields given as closures, by nested adaptive quadrature in polar
//! coordinates. Independent of the lattice scheme.

use std::f64::consts::PI;

use crate::error::Result;
use crate::geometry::Point;
use crate::kernels::{omega, Kernel};
use crate::quadrature::{adaptive, adaptive_with_breaks, AdaptiveOptions};

#[derive(Debug, Clone)]
pub struct ContinuumOptions {
    /// Radius of the Taylor-compensated inner ball.
    pub eps: f64,
    /// Beyond this radius the field(s) equal `far_value` identically.
    pub reach: f64,
    pub far_value: f64,
    /// Radii at which the radial integrand has kinks (boundary crossings).
    pub kinks: Vec<f64>,
    pub radial: AdaptiveOptions,
    pub angular: AdaptiveOptions,
}

impl ContinuumOptions {
    pub fn new(eps: f64, reach: f64) -> Self {
        Self {
            eps,
            reach,
            far_value: 0.0,
            kinks: Vec::new(),
            radial: AdaptiveOptions {
                abs_tol: 1e-10,
                rel_tol: 1e-9,
                max_panels: 2000,
            },
            angular: AdaptiveOptions {
                abs_tol: 1e-12,
                rel_tol: 1e-10,
                max_panels: 2000,
            },
        }
    }
}

/// `∫_ε^R k(ρ) ρ^{n-1} ∫_{S} g(ρθ) dθ dρ`, with `g` already symmetrised
/// by the caller if desired.
fn shell_integral(k: &Kernel, g: &dyn Fn(Point) -> f64, opts: &ContinuumOptions) -> Result<f64> {
    let dim = k.dim;
    let outer = match k.support_radius() {
        Some(s) => s.min(opts.reach),
        None => opts.reach,
    };
    if outer <= opts.eps {
        return Ok(0.0);
    }
    let angular = |rho: f64| -> Result<f64> {
        if dim == 1 {
            return Ok(g([rho, 0.0]) + g([-rho, 0.0]));
        }
        // Pair θ with θ + π and integrate over a half-turn.
        adaptive(
            |t| {
                let (c, s) = (t.cos(), t.sin());
                g([rho * c, rho * s]) + g([-rho * c, -rho * s])
            },
            0.0,
            PI,
            opts.angular,
        )
    };
    let mut breaks: Vec<f64> = opts.kinks.iter().chain(k.breaks().iter()).map(|b| b.ln()).collect();
    breaks.retain(|b| b.is_finite());
    let mut err = None;
    let val = adaptive_with_breaks(
        |s| {
            let rho = s.exp();
            match angular(rho) {
                Ok(a) => k.profile(rho) * rho.powi(dim as i32) * a,
                Err(e) => {
                    err.get_or_insert(e);
                    0.0
                }
            }
        },
        opts.eps.ln(),
        outer.ln(),
        &breaks,
        opts.radial,
    )?;
    if let Some(e) = err {
        return Err(e);
    }
    Ok(val)
}

/// `Iφ(x)` for a field that is smooth on `B_ε(x)` with Laplacian `lap`
/// there and equal to `far_value` beyond `reach`.
pub fn nonlocal_at(k: &Kernel, phi: &dyn Fn(Point) -> f64, lap: f64, x: Point, opts: &ContinuumOptions) -> Result<f64> {
    let n = k.dim as f64;
    let px = phi(x);
    let near = omega(k.dim) / (2.0 * n) * lap * k.radial_moment(n + 1.0, 0.0, opts.eps);
    let g = |y: Point| phi([x[0] + y[0], x[1] + y[1]]) - px;
    let mid = shell_integral(k, &g, opts)?;
    let far = (opts.far_value - px) * k.tail_mass(opts.reach);
    Ok(near + mid + far)
}

/// `Z[v,d](x) = ∫ (v(x+y) − v(x))(d(x+y) − d(x)) k(y) dy`; `grad_dot` is
/// `∇v·∇d` at `x`. Both fields must equal `far_value` beyond `reach`.
pub fn bracket_at(
    k: &Kernel,
    v: &dyn Fn(Point) -> f64,
    d: &dyn Fn(Point) -> f64,
    grad_dot: f64,
    x: Point,
    opts: &ContinuumOptions,
) -> Result<f64> {
    let n = k.dim as f64;
    let (vx, dx) = (v(x), d(x));
    let near = omega(k.dim) / n * grad_dot * k.radial_moment(n + 1.0, 0.0, opts.eps);
    let g = |y: Point| {
        let z = [x[0] + y[0], x[1] + y[1]];
        (v(z) - vx) * (d(z) - dx)
    };
    let mid = shell_integral(k, &g, opts)?;
    let far = (opts.far_value - vx) * (opts.far_value - dx) * k.tail_mass(opts.reach);
    Ok(near + mid + far)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quadratic_with_truncated_kernel() {
        let k = Kernel::fractional(1.0, 1.0, Some(1.0), 2).unwrap();
        let phi = |x: Point| x[0] * x[0] + x[1] * x[1];
        let opts = ContinuumOptions::new(0.1, 10.0);
        let v = nonlocal_at(&k, &phi, 4.0, [0.3, -0.2], &opts).unwrap();
        assert_relative_eq!(v, 2.0 * PI, max_relative = 1e-8);
    }

    #[test]
    fn affine_vanishes() {
        let k = Kernel::fractional(1.5, 1.0, Some(2.0), 2).unwrap();
        let phi = |x: Point| 1.0 + 3.0 * x[0];
        let opts = ContinuumOptions::new(0.05, 10.0);
        let v = nonlocal_at(&k, &phi, 0.0, [0.1, 0.1], &opts).unwrap();
        assert!(v.abs() < 1e-9);
    }

    #[test]
    fn one_dimensional_quadratic() {
        let k = Kernel::fractional(0.5, 1.0, Some(1.0), 1).unwrap();
        let phi = |x: Point| x[0] * x[0];
        let opts = ContinuumOptions::new(0.1, 10.0);
        // ∫_{|y|<1} y² |y|^{-1.5} dy = 2/1.5.
        let v = nonlocal_at(&k, &phi, 2.0, [0.4, 0.0], &opts).unwrap();
        assert_relative_eq!(v, 2.0 / 1.5, max_relative = 1e-8);
    }

    #[test]
    fn bracket_of_linear_fields() {
        // Z[x1, x1] = ∫ y1² k = (1/n)∫|y|² k.
        let k = Kernel::fractional(1.0, 1.0, Some(1.0), 2).unwrap();
        let f = |x: Point| x[0];
        let opts = ContinuumOptions::new(0.2, 10.0);
        let z = bracket_at(&k, &f, &f, 1.0, [0.0, 0.0], &opts).unwrap();
        assert_relative_eq!(z, PI, max_relative = 1e-8);
    }
}
