//! Symmetric radial jump kernels built from truncated power laws, their
//! dominating kernels and the tail function Θ.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{norm, sub, Point};
use crate::quadrature::{adaptive_to_infinity, AdaptiveOptions};

/// Surface area of the unit sphere in ℝⁿ.
pub fn omega(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => 2.0 * PI,
        _ => panic!("unsupported dimension {dim}"),
    }
}

/// `coef · ρ^{-n-s}`, active for `ρ < cutoff` (or `ρ ≤ cutoff` when
/// `closed` is set).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerTerm {
    pub coef: f64,
    pub order: f64,
    pub cutoff: Option<f64>,
    #[serde(default)]
    pub closed: bool,
}

impl PowerTerm {
    fn active(&self, rho: f64) -> bool {
        match self.cutoff {
            None => true,
            Some(c) if self.closed => rho <= c,
            Some(c) => rho < c,
        }
    }

    fn eval(&self, rho: f64, dim: usize) -> f64 {
        if self.active(rho) {
            self.coef * rho.powf(-(dim as f64) - self.order)
        } else {
            0.0
        }
    }

    /// `∫_a^b ρ^q · term(ρ) dρ` in closed form.
    fn moment(&self, q: f64, a: f64, b: f64, dim: usize) -> f64 {
        let b = self.cutoff.map_or(b, |c| b.min(c));
        if b <= a {
            return 0.0;
        }
        let e = q - dim as f64 - self.order + 1.0;
        if e.abs() < 1e-14 {
            self.coef * (b.ln() - a.ln())
        } else if b.is_infinite() {
            assert!(e < 0.0, "divergent radial moment at infinity");
            -self.coef * a.powf(e) / e
        } else {
            self.coef * (b.powf(e) - a.powf(e)) / e
        }
    }
}

fn eval_terms(terms: &[PowerTerm], rho: f64, dim: usize) -> f64 {
    terms.iter().map(|t| t.eval(rho, dim)).sum()
}

/// Which construction produced a kernel; kept for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelFamily {
    Fractional { alpha: f64, lambda: f64, truncation: Option<f64> },
    Subordinate { mu1: f64, mu2: f64 },
    Modified { base: Box<KernelFamily>, beta_prime: f64, zeta: f64 },
    Scaled { base: Box<KernelFamily>, r: f64 },
}

/// `k̂(y) = Λ|y|^{-n-α}` on the unit ball and the tail `J` outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominatingKernel {
    pub dim: usize,
    pub alpha: f64,
    pub lambda: f64,
    /// `J`, used for `|y| ≥ 1`.
    pub tail: Vec<PowerTerm>,
    /// `κ1 = ∫_{|z|≥1} J`.
    pub kappa1: f64,
}

impl DominatingKernel {
    pub fn new(dim: usize, alpha: f64, lambda: f64, tail: Vec<PowerTerm>) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(invalid("alpha", "alpha must lie in (0,2)"));
        }
        if !(lambda > 0.0) {
            return Err(invalid("lambda", "must be positive"));
        }
        let mut d = Self {
            dim,
            alpha,
            lambda,
            tail,
            kappa1: 0.0,
        };
        let mass: f64 = d.tail.iter().map(|t| t.moment(dim as f64 - 1.0, 1.0, f64::INFINITY, dim)).sum();
        d.kappa1 = omega(dim) * mass;
        Ok(d)
    }

    pub fn profile(&self, rho: f64) -> f64 {
        if rho < 1.0 {
            self.lambda * rho.powf(-(self.dim as f64) - self.alpha)
        } else {
            eval_terms(&self.tail, rho, self.dim)
        }
    }

    pub fn eval(&self, y: Point) -> f64 {
        self.profile(norm(y))
    }

    /// `Θ(ξ) = ∫_{|z|>ξ} min{1,|z|} k̂(z) dz`.
    pub fn theta(&self, xi: f64) -> Result<f64> {
        if !(xi > 0.0) {
            return Err(invalid("xi", "must be positive"));
        }
        if xi >= 1.0 {
            let dim = self.dim;
            let m: f64 = self.tail.iter().map(|t| t.moment(dim as f64 - 1.0, xi, f64::INFINITY, dim)).sum();
            return Ok(omega(dim) * m);
        }
        let c = omega(self.dim) * self.lambda;
        let a = self.alpha;
        let core = if (a - 1.0).abs() < 1e-12 {
            -c * xi.ln()
        } else if a > 1.0 {
            c / (a - 1.0) * (xi.powf(1.0 - a) - 1.0)
        } else {
            c / (1.0 - a) * (1.0 - xi.powf(1.0 - a))
        };
        Ok(core + self.kappa1)
    }

    /// `∫_0^l Θ(τ) dτ` for `l ≤ 1`.
    pub fn theta_antiderivative(&self, l: f64) -> f64 {
        assert!((0.0..=1.0).contains(&l), "antiderivative is tabulated on [0, 1]");
        if l == 0.0 {
            return 0.0;
        }
        let c = omega(self.dim) * self.lambda;
        let a = self.alpha;
        let core = if (a - 1.0).abs() < 1e-12 {
            c * (l - l * l.ln())
        } else if a > 1.0 {
            c / (a - 1.0) * (l.powf(2.0 - a) / (2.0 - a) - l)
        } else {
            c / (1.0 - a) * (l - l.powf(2.0 - a) / (2.0 - a))
        };
        core + self.kappa1 * l
    }

    /// `∫(|y|²∧1) k̂(y) dy`.
    pub fn levy_mass(&self) -> f64 {
        omega(self.dim) * self.lambda / (2.0 - self.alpha) + self.kappa1
    }
}

/// A radial symmetric jump density `k(y) = Σ c_i |y|^{-n-s_i} 1{|y| < R_i}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub family: KernelFamily,
    pub dim: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub terms: Vec<PowerTerm>,
    pub dominating: DominatingKernel,
    pub radial: bool,
    pub strictly_decreasing: bool,
    /// Largest radius for which comparability is claimed; `None` is ∞.
    pub beta: Option<f64>,
    pub levy_mass: f64,
}

impl Kernel {
    fn check_dim(dim: usize) -> Result<()> {
        if dim == 1 || dim == 2 {
            Ok(())
        } else {
            Err(invalid("dim", "only dimensions 1 and 2 are supported"))
        }
    }

    /// `Λ|y|^{-n-α}`, optionally restricted to `B_{ρ_k}`.
    pub fn fractional(alpha: f64, lambda: f64, truncation: Option<f64>, dim: usize) -> Result<Self> {
        Self::check_dim(dim)?;
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(invalid("alpha", "alpha must lie in (0,2)"));
        }
        if !(lambda > 0.0) {
            return Err(invalid("lambda", "must be positive"));
        }
        if let Some(t) = truncation {
            if !(t > 0.0) {
                return Err(invalid("truncation", "must be positive"));
            }
        }
        let dominating = DominatingKernel::new(
            dim,
            alpha,
            lambda,
            vec![PowerTerm {
                coef: lambda,
                order: alpha,
                cutoff: None,
                closed: false,
            }],
        )?;
        Ok(Self {
            family: KernelFamily::Fractional { alpha, lambda, truncation },
            dim,
            alpha,
            lambda,
            terms: vec![PowerTerm {
                coef: lambda,
                order: alpha,
                cutoff: truncation,
                closed: false,
            }],
            levy_mass: dominating.levy_mass(),
            dominating,
            radial: true,
            strictly_decreasing: truncation.is_none(),
            beta: truncation,
        })
    }

    /// `Ψ(|y|^{-2})/|y|^n` with `Ψ(s) = s^{μ1} + s^{μ2}`.
    pub fn subordinate(mu1: f64, mu2: f64, dim: usize) -> Result<Self> {
        Self::check_dim(dim)?;
        if !(mu1 > 0.0 && mu1 <= mu2 && mu2 < 1.0) {
            return Err(invalid("mu", "need 0 < mu1 <= mu2 < 1"));
        }
        let alpha = 2.0 * mu2;
        let dominating = DominatingKernel::new(
            dim,
            alpha,
            2.0,
            vec![PowerTerm {
                coef: 2.0,
                order: 2.0 * mu1,
                cutoff: None,
                closed: false,
            }],
        )?;
        let term = |mu: f64| PowerTerm {
            coef: 1.0,
            order: 2.0 * mu,
            cutoff: None,
            closed: false,
        };
        Ok(Self {
            family: KernelFamily::Subordinate { mu1, mu2 },
            dim,
            alpha,
            lambda: 2.0,
            terms: vec![term(mu1), term(mu2)],
            levy_mass: dominating.levy_mass(),
            dominating,
            radial: true,
            strictly_decreasing: true,
            beta: None,
        })
    }

    /// `k̃ = k·1{|y| ≤ β'} + |y|^{-n-ζ}`.
    pub fn modified(&self, beta_prime: f64, zeta: f64) -> Result<Self> {
        if !(zeta > 0.0 && zeta < self.alpha.min(1.0)) {
            return Err(invalid("zeta", "zeta must lie in (0, min(1, alpha))"));
        }
        if !(beta_prime > 0.0) {
            return Err(invalid("beta_prime", "must be positive"));
        }
        let mut terms: Vec<PowerTerm> = self
            .terms
            .iter()
            .map(|t| PowerTerm {
                cutoff: Some(t.cutoff.map_or(beta_prime, |c| c.min(beta_prime))),
                closed: t.cutoff.map_or(true, |c| beta_prime < c),
                ..*t
            })
            .collect();
        let extra = PowerTerm {
            coef: 1.0,
            order: zeta,
            cutoff: None,
            closed: false,
        };
        terms.push(extra);
        let mut tail = self.dominating.tail.clone();
        tail.push(extra);
        let dominating = DominatingKernel::new(self.dim, self.alpha, self.lambda + 1.0, tail)?;
        Ok(Self {
            family: KernelFamily::Modified {
                base: Box::new(self.family.clone()),
                beta_prime,
                zeta,
            },
            dim: self.dim,
            alpha: self.alpha,
            lambda: self.lambda + 1.0,
            terms,
            levy_mass: dominating.levy_mass(),
            dominating,
            radial: true,
            strictly_decreasing: true,
            beta: None,
        })
    }

    /// `y ↦ r^{n+α} k(r y)`, dominated by the same `k̂` for `r ≤ 1`.
    pub fn scaled(&self, r: f64) -> Result<Self> {
        if !(r > 0.0 && r <= 1.0) {
            return Err(invalid("r", "scale must lie in (0, 1]"));
        }
        let terms = self
            .terms
            .iter()
            .map(|t| PowerTerm {
                coef: t.coef * r.powf(self.alpha - t.order),
                cutoff: t.cutoff.map(|c| c / r),
                ..*t
            })
            .collect();
        Ok(Self {
            family: KernelFamily::Scaled {
                base: Box::new(self.family.clone()),
                r,
            },
            terms,
            beta: self.beta.map(|b| b / r),
            ..self.clone()
        })
    }

    /// Radial profile `k(ρ)`.
    pub fn profile(&self, rho: f64) -> f64 {
        eval_terms(&self.terms, rho, self.dim)
    }

    pub fn eval(&self, y: Point) -> f64 {
        self.profile(norm(y))
    }

    /// Radius beyond which the kernel vanishes, if any.
    pub fn support_radius(&self) -> Option<f64> {
        self.terms
            .iter()
            .map(|t| t.cutoff)
            .try_fold(0.0_f64, |m, c| c.map(|c| m.max(c)))
    }

    /// Radii where the profile jumps.
    pub fn breaks(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self.terms.iter().filter_map(|t| t.cutoff).collect();
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    }

    /// `∫_a^b ρ^q k(ρ) dρ`.
    pub fn radial_moment(&self, q: f64, a: f64, b: f64) -> f64 {
        self.terms.iter().map(|t| t.moment(q, a, b, self.dim)).sum()
    }

    /// Mass of `k` outside the ball of radius `r`.
    pub fn tail_mass(&self, r: f64) -> f64 {
        omega(self.dim) * self.radial_moment(self.dim as f64 - 1.0, r, f64::INFINITY)
    }
}

/// Monte Carlo report on the two structural kernel hypotheses.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub samples: usize,
    /// Largest observed `r^{n+α} k(ry) / k̂(y)`.
    pub max_ratio_a: f64,
    /// Largest finite observed `k(x−z) / k(y−z)`.
    pub rho_estimate: f64,
    /// Domination failures plus comparability pairs with a vanishing
    /// denominator and positive numerator.
    pub violations: usize,
    /// Comparability pairs where both densities vanish.
    pub skipped: usize,
    pub beta_used: f64,
}

/// Samples the scaling domination and the comparability hypothesis.
/// `beta` overrides the comparability radius (defaults to the kernel's).
pub fn check_assumption(k: &Kernel, samples: usize, seed: u64, beta: Option<f64>) -> AssumptionReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = k.dim;
    let beta = beta.or(k.beta).unwrap_or(10.0);
    let unit = |rng: &mut ChaCha8Rng| -> Point {
        if dim == 1 {
            [if rng.random::<bool>() { 1.0 } else { -1.0 }, 0.0]
        } else {
            let t = rng.random_range(0.0..2.0 * PI);
            [t.cos(), t.sin()]
        }
    };
    let in_ball = |rng: &mut ChaCha8Rng, r: f64| -> Point {
        let d = unit(rng);
        let s = r * rng.random::<f64>().powf(1.0 / dim as f64);
        [d[0] * s, d[1] * s]
    };
    let mut max_a = 0.0_f64;
    let mut violations = 0;
    for _ in 0..samples {
        let r: f64 = rng.random_range(1e-3..=1.0);
        let rho = 10f64.powf(rng.random_range(-3.0..1.0));
        let d = unit(&mut rng);
        let y = [d[0] * rho, d[1] * rho];
        let lhs = r.powf(dim as f64 + k.alpha) * k.eval([y[0] * r, y[1] * r]);
        let ratio = lhs / k.dominating.eval(y);
        max_a = max_a.max(ratio);
        if ratio > 1.0 + 1e-10 {
            violations += 1;
        }
    }
    let mut rho_est = 0.0_f64;
    let mut skipped = 0;
    for _ in 0..samples {
        let r: f64 = rng.random_range(1e-3..=1.0);
        let x = in_ball(&mut rng, 0.5 * r);
        let y = in_ball(&mut rng, 0.5 * r);
        // z outside B_r with |y − z| < β.
        let mut z = None;
        for _ in 0..32 {
            let off = in_ball(&mut rng, beta);
            let cand = [y[0] + off[0], y[1] + off[1]];
            if norm(cand) >= r {
                z = Some(cand);
                break;
            }
        }
        let Some(z) = z else { continue };
        let num = k.eval(sub(x, z));
        let den = k.eval(sub(y, z));
        match (num > 0.0, den > 0.0) {
            (false, false) => skipped += 1,
            (true, false) => violations += 1,
            (_, true) => rho_est = rho_est.max(num / den),
        }
    }
    AssumptionReport {
        samples,
        max_ratio_a: max_a,
        rho_estimate: rho_est,
        violations,
        skipped,
        beta_used: beta,
    }
}

/// Defining integral of Θ by adaptive quadrature; used as a cross-check.
pub fn theta_by_quadrature(dom: &DominatingKernel, xi: f64) -> Result<f64> {
    let dim = dom.dim;
    let w = omega(dim);
    let opts = AdaptiveOptions {
        abs_tol: 1e-13,
        rel_tol: 1e-11,
        max_panels: 8000,
    };
    let inner = if xi < 1.0 {
        crate::quadrature::adaptive_log(|rho| rho * dom.profile(rho) * rho.powi(dim as i32 - 1), xi, 1.0, opts)?
    } else {
        0.0
    };
    let outer = adaptive_to_infinity(|rho| dom.profile(rho) * rho.powi(dim as i32 - 1), xi.max(1.0), opts)?;
    Ok(w * (inner + outer))
}
