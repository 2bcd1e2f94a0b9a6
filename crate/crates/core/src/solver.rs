//! Monotone discretisation of `L = Δ + aI` with drift terms, and solvers for
//! exterior Dirichlet problems: linear, semilinear and Bellman–Isaacs.
//!
//! The local part uses the Shortley–Weller Laplacian: arms that leave the
//! domain are shortened to the boundary crossing and take the exterior
//! datum there. The near-field compensation of `I` is folded into the same
//! stencil, so the local coefficient is `1 + a·c_near`. The far part of `I`
//! acts on `u − g` through the FFT cache.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{norm, Domain, Point};
use crate::kernels::Kernel;
use crate::lattice::{Beyond, GridFunction, Lattice};
use crate::linalg::{gmres, CsrMatrix, GmresOutcome, SkylineLu};
use crate::operator::NonlocalOperator;

/// Relative residual target of every linear solve.
pub const LINEAR_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssembleOptions {
    /// Upper bound on the estimated working memory, in bytes.
    pub memory_cap: usize,
    /// Extra lattice layers around the bounding box.
    pub margin: usize,
    pub restart: usize,
    pub max_iter: usize,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        Self {
            memory_cap: 2 << 30,
            margin: 2,
            restart: 60,
            max_iter: 1500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ArmTarget {
    Unknown(usize),
    Boundary(Point),
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Arm {
    dist: f64,
    target: ArmTarget,
}

/// Where a row coefficient points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Target {
    /// Another unknown, by slot.
    Unknown(usize),
    /// A lattice node outside the domain, by lattice index.
    Node(usize),
    /// A boundary crossing of a shortened arm.
    Boundary(Point),
    /// Everything off the lattice, including the tail mass.
    Outside,
}

/// One row of `L_h`: `(L_h u)_i = diag·u_i + Σ coef·u(target)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub diag: f64,
    pub entries: Vec<(Target, f64)>,
}

impl Row {
    pub fn sum(&self) -> f64 {
        self.diag + self.entries.iter().map(|e| e.1).sum::<f64>()
    }
}

/// `L_h` restricted to the interior nodes of a domain.
#[derive(Debug)]
pub struct DiscreteOperator {
    domain: Domain,
    lattice: Lattice,
    a: f64,
    c0: f64,
    kernel_id: String,
    kappa: f64,
    nonlocal: Option<NonlocalOperator>,
    unknowns: Vec<usize>,
    slot: Vec<Option<usize>>,
    arms: Vec<Arm>,
    options: AssembleOptions,
}

/// Assembles `L_h` on the lattice covering `domain` with spacing `h`.
pub fn assemble(domain: &Domain, k: &Kernel, a: f64, h: f64, c0: f64) -> Result<DiscreteOperator> {
    assemble_with(domain, k, a, h, c0, AssembleOptions::default())
}

pub fn assemble_with(
    domain: &Domain,
    k: &Kernel,
    a: f64,
    h: f64,
    c0: f64,
    options: AssembleOptions,
) -> Result<DiscreteOperator> {
    if !(a >= 0.0) || !a.is_finite() {
        return Err(invalid("a", "must be a finite nonnegative number"));
    }
    if !(c0 >= 0.0) {
        return Err(invalid("c0", "drift bound must be nonnegative"));
    }
    if !(h > 0.0) || h > 0.25 * domain.inradius() {
        return Err(invalid("h", format!("grid spacing must lie in (0, inradius/4 = {})", 0.25 * domain.inradius())));
    }
    if k.dim != domain.dim() {
        return Err(invalid("dim", "kernel and domain dimensions differ"));
    }
    let dim = domain.dim();
    let lattice = Lattice::covering(domain.bounding_box(), h, dim, options.margin);
    let unknowns: Vec<usize> = (0..lattice.len()).filter(|&i| domain.contains(lattice.coords(i))).collect();
    if unknowns.is_empty() {
        return Err(Error::EmptyRegion("no lattice node lies inside the domain"));
    }
    let mut slot = vec![None; lattice.len()];
    for (s, &i) in unknowns.iter().enumerate() {
        slot[i] = Some(s);
    }
    let mut arms = Vec::with_capacity(unknowns.len() * 2 * dim);
    for &idx in &unknowns {
        let x = lattice.coords(idx);
        for axis in 0..dim {
            for dir in [-1isize, 1] {
                let target = lattice.neighbor(idx, axis, dir).and_then(|j| slot[j]);
                arms.push(match target {
                    Some(s) => Arm {
                        dist: h,
                        target: ArmTarget::Unknown(s),
                    },
                    None => {
                        let mut step = [0.0; 2];
                        step[axis] = dir as f64 * h;
                        let th = domain.crossing_fraction(x, step).max(1e-9);
                        let mut p = x;
                        p[axis] += th * step[axis];
                        Arm {
                            dist: th * h,
                            target: ArmTarget::Boundary(p),
                        }
                    }
                });
            }
        }
    }
    let nonlocal = if a > 0.0 {
        let op = NonlocalOperator::new(k, &lattice)?;
        let q = op.scheme();
        if !q.support.is_some_and(|s| s <= q.reach) && q.reach < domain.diameter() {
            return Err(Error::ReachTooSmall {
                reach: q.reach,
                required: domain.diameter(),
            });
        }
        Some(op)
    } else {
        None
    };
    let kappa = 1.0 + nonlocal.as_ref().map_or(0.0, |op| a * op.scheme().c_near);
    let d = DiscreteOperator {
        domain: domain.clone(),
        lattice,
        a,
        c0,
        kernel_id: format!("{:?}", k.family),
        kappa,
        nonlocal,
        unknowns,
        slot,
        arms,
        options,
    };
    let bytes = d.memory_estimate();
    if bytes > options.memory_cap {
        return Err(Error::MemoryCap {
            bytes,
            cap: options.memory_cap,
        });
    }
    Ok(d)
}

/// Drift per unknown, used by the upwind first-order term.
type Drift<'a> = Option<&'a [Point]>;

impl DiscreteOperator {
    pub fn domain(&self) -> &Domain {
        &self.domain
    }
    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }
    pub fn a(&self) -> f64 {
        self.a
    }
    pub fn h(&self) -> f64 {
        self.lattice.h()
    }
    pub fn c0(&self) -> f64 {
        self.c0
    }
    pub fn kernel_id(&self) -> &str {
        &self.kernel_id
    }
    /// Coefficient of the local Laplacian, `1 + a·c_near`.
    pub fn local_coefficient(&self) -> f64 {
        self.kappa
    }
    pub fn nonlocal(&self) -> Option<&NonlocalOperator> {
        self.nonlocal.as_ref()
    }
    /// Lattice indices of the unknowns, in slot order.
    pub fn unknowns(&self) -> &[usize] {
        &self.unknowns
    }
    pub fn len(&self) -> usize {
        self.unknowns.len()
    }
    pub fn is_empty(&self) -> bool {
        self.unknowns.is_empty()
    }
    pub fn slot_of(&self, idx: usize) -> Option<usize> {
        self.slot.get(idx).copied().flatten()
    }

    fn arms_of(&self, s: usize) -> &[Arm] {
        let w = 2 * self.lattice.dim();
        &self.arms[s * w..(s + 1) * w]
    }

    /// Bytes for the FFT cache, the preconditioner factors and the Krylov basis.
    pub fn memory_estimate(&self) -> usize {
        let n = self.unknowns.len();
        let fft = self.nonlocal.as_ref().map_or(0, |op| op.bytes());
        let lu = SkylineLu::estimate_bytes(&self.local_matrix(None));
        fft + lu + 2 * (self.options.restart + 2) * n * 8 + 8 * self.lattice.len() * 8
    }

    fn arm_value(&self, arm: &Arm, all: &[f64], ext: Beyond) -> f64 {
        match arm.target {
            ArmTarget::Unknown(s) => all[self.unknowns[s]],
            ArmTarget::Boundary(p) => ext.eval(p),
        }
    }

    /// `(arm coefficient, arm)` pairs of the Shortley–Weller Laplacian.
    fn laplacian_coefs(&self, s: usize) -> impl Iterator<Item = (f64, &Arm)> + '_ {
        self.arms_of(s).chunks_exact(2).flat_map(|pair| {
            let (dm, dp) = (pair[0].dist, pair[1].dist);
            let sum = dm + dp;
            [(2.0 / (dm * sum), &pair[0]), (2.0 / (dp * sum), &pair[1])]
        })
    }

    /// `(arm coefficient, arm)` pairs of the upwind `b·Du`.
    fn drift_coefs(&self, s: usize, b: Point) -> impl Iterator<Item = (f64, &Arm)> + '_ {
        self.arms_of(s).chunks_exact(2).enumerate().flat_map(move |(axis, pair)| {
            let bp = b[axis].max(0.0);
            let bm = (-b[axis]).max(0.0);
            [(bm / pair[0].dist, &pair[0]), (bp / pair[1].dist, &pair[1])]
        })
    }

    fn eval(&self, all: &[f64], ext: Beyond, drift: Drift) -> Vec<f64> {
        let far = self.nonlocal.as_ref().map(|op| {
            let phi: Vec<f64> = match ext {
                Beyond::Zero => all.to_vec(),
                _ => all
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v - ext.eval(self.lattice.coords(i)))
                    .collect(),
            };
            op.apply_far(&phi)
        });
        self.unknowns
            .par_iter()
            .enumerate()
            .map(|(s, &idx)| {
                let u = all[idx];
                let lap: f64 = self.laplacian_coefs(s).map(|(c, arm)| c * (self.arm_value(arm, all, ext) - u)).sum();
                let mut v = self.kappa * lap;
                if let Some(d) = drift {
                    v += self
                        .drift_coefs(s, d[s])
                        .map(|(c, arm)| c * (self.arm_value(arm, all, ext) - u))
                        .sum::<f64>();
                }
                if let Some(f) = &far {
                    v += self.a * f[idx];
                }
                v
            })
            .collect()
    }

    /// `L_h u` at every unknown, with boundary crossings and the region
    /// off the lattice read from the field's extension.
    pub fn apply(&self, u: &GridFunction) -> Result<Vec<f64>> {
        if u.lattice() != &self.lattice {
            return Err(invalid("u", "field lives on a different lattice"));
        }
        Ok(self.eval(u.values(), u.beyond(), None))
    }

    /// `b·Du` by upwind differences at every unknown.
    pub fn apply_drift(&self, u: &GridFunction, drift: &[Point]) -> Result<Vec<f64>> {
        if u.lattice() != &self.lattice || drift.len() != self.len() {
            return Err(invalid("drift", "one drift vector per unknown is required"));
        }
        let all = u.values();
        let ext = u.beyond();
        Ok((0..self.len())
            .map(|s| {
                let c = all[self.unknowns[s]];
                self.drift_coefs(s, drift[s])
                    .map(|(k, arm)| k * (self.arm_value(arm, all, ext) - c))
                    .sum()
            })
            .collect())
    }

    /// Monotone gradient norm `sqrt(Σ_i max(D_i⁻u, −D_i⁺u, 0)²)` at every unknown.
    pub fn gradient_norm(&self, u: &GridFunction) -> Vec<f64> {
        self.gradient_norm_values(u.values(), u.beyond())
    }

    fn gradient_norm_values(&self, all: &[f64], ext: Beyond) -> Vec<f64> {
        (0..self.len())
            .map(|s| {
                let c = all[self.unknowns[s]];
                self.arms_of(s)
                    .chunks_exact(2)
                    .map(|pair| {
                        let dm = (c - self.arm_value(&pair[0], all, ext)) / pair[0].dist;
                        let dp = (self.arm_value(&pair[1], all, ext) - c) / pair[1].dist;
                        dm.max(-dp).max(0.0).powi(2)
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }

    /// Full coefficient row of unknown `s` (dense in the nonlocal part).
    pub fn row(&self, s: usize) -> Row {
        let mut entries = Vec::new();
        let mut diag = 0.0;
        for (c, arm) in self.laplacian_coefs(s) {
            let t = match arm.target {
                ArmTarget::Unknown(j) => Target::Unknown(j),
                ArmTarget::Boundary(p) => Target::Boundary(p),
            };
            entries.push((t, self.kappa * c));
            diag -= self.kappa * c;
        }
        if let Some(op) = &self.nonlocal {
            let q = op.scheme();
            let (i, j) = self.lattice.ij(self.unknowns[s]);
            let m = q.m as isize;
            let jr = if self.lattice.dim() == 1 { 0..=0 } else { -m..=m };
            let mut outside = q.tail;
            for dj in jr {
                for di in -m..=m {
                    let w = q.weight(di, dj);
                    if w == 0.0 {
                        continue;
                    }
                    match self.lattice.checked_index(i as isize + di, j as isize + dj) {
                        Some(n) => {
                            let t = self.slot[n].map_or(Target::Node(n), Target::Unknown);
                            entries.push((t, self.a * w));
                        }
                        None => outside += w,
                    }
                }
            }
            if outside > 0.0 {
                entries.push((Target::Outside, self.a * outside));
            }
            diag -= self.a * op.diagonal_mass();
        }
        Row { diag, entries }
    }

    /// Local part (plus the nonlocal diagonal) as a sparse matrix on the
    /// unknowns; the preconditioner.
    fn local_matrix(&self, drift: Drift) -> CsrMatrix {
        let dmass = self.nonlocal.as_ref().map_or(0.0, |op| self.a * op.diagonal_mass());
        let rows: Vec<Vec<(usize, f64)>> = (0..self.len())
            .map(|s| {
                let mut r = Vec::with_capacity(5);
                let mut diag = -dmass;
                let mut push = |c: f64, arm: &Arm, r: &mut Vec<(usize, f64)>| {
                    diag -= c;
                    if let ArmTarget::Unknown(j) = arm.target {
                        r.push((j, c));
                    }
                };
                for (c, arm) in self.laplacian_coefs(s) {
                    push(self.kappa * c, arm, &mut r);
                }
                if let Some(d) = drift {
                    for (c, arm) in self.drift_coefs(s, d[s]) {
                        if c != 0.0 {
                            push(c, arm, &mut r);
                        }
                    }
                }
                r.push((s, diag));
                r
            })
            .collect();
        CsrMatrix::from_rows(&rows)
    }

    /// Values on every lattice node: `x` on the unknowns, `g` elsewhere.
    fn embed(&self, x: &[f64], ext: Beyond) -> Vec<f64> {
        let mut all: Vec<f64> = (0..self.lattice.len()).map(|i| ext.eval(self.lattice.coords(i))).collect();
        for (s, &idx) in self.unknowns.iter().enumerate() {
            all[idx] = x[s];
        }
        all
    }

    fn grid(&self, x: &[f64], ext: Beyond) -> GridFunction {
        GridFunction::new(self.lattice.clone(), self.embed(x, ext), ext).expect("solution is finite")
    }

    /// Solves `L_h u + b·Du = rhs` on the unknowns with exterior datum `ext`.
    fn solve_system(
        &self,
        rhs: &[f64],
        ext: Beyond,
        drift: Drift,
        lu: &SkylineLu,
        x0: Option<Vec<f64>>,
    ) -> Result<GmresOutcome> {
        let offset = self.eval(&self.embed(&vec![0.0; self.len()], ext), ext, drift);
        let b: Vec<f64> = rhs.iter().zip(&offset).map(|(r, o)| r - o).collect();
        let scale = sup(rhs).max(sup(&b));
        let mut apply = |v: &[f64], y: &mut [f64]| {
            let out = self.eval(&self.embed(v, Beyond::Zero), Beyond::Zero, drift);
            y.copy_from_slice(&out);
        };
        gmres(
            &mut apply,
            &|r| lu.solve_in_place(r),
            &b,
            x0,
            LINEAR_TOL * scale,
            self.options.restart,
            self.options.max_iter,
        )
    }

    fn factor(&self, drift: Drift) -> Result<SkylineLu> {
        SkylineLu::factor(&self.local_matrix(drift))
    }
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, a| m.max(a.abs()))
}

/// A node where a claimed inequality fails.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub node: usize,
    pub point: Point,
    pub value: f64,
    pub bound: f64,
}

/// Discrete comparison outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    /// Whether the sign hypothesis on the source held.
    pub applicable: bool,
    pub holds: bool,
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    #[serde(skip)]
    pub solution: GridFunction,
    /// `max |residual|` over the unknowns, recomputed from `solution`.
    pub residual: f64,
    /// Krylov iterations summed over all linear solves.
    pub iterations: usize,
    /// Outer (Picard or policy) iterations; 1 for a linear solve.
    pub outer_iterations: usize,
    pub damping: Vec<f64>,
    /// Per outer iteration: update size (Picard), nonlinear residual
    /// (policy iteration) or true residual per restart (linear).
    pub history: Vec<f64>,
    /// Policy changes per sweep (policy iteration only).
    pub policy_changes: Vec<usize>,
    pub contracted: bool,
    pub certificate: Certificate,
}

impl SolveReport {
    /// `x,y,value,interior` for every lattice node.
    pub fn solution_csv(&self, op: &DiscreteOperator) -> String {
        let mut s = String::from("x,y,value,interior\n");
        let lat = self.solution.lattice();
        for (i, v) in self.solution.values().iter().enumerate() {
            let p = lat.coords(i);
            let _ = writeln!(s, "{},{},{},{}", p[0], p[1], v, u8::from(op.slot_of(i).is_some()));
        }
        s
    }
}

/// Maximum principle check for `L_h u = f` (with any monotone drift).
fn max_principle(op: &DiscreteOperator, u: &GridFunction, f: &[f64]) -> Certificate {
    let nonpos = f.iter().all(|&v| v <= 0.0);
    let nonneg = f.iter().all(|&v| v >= 0.0);
    let vals = u.values();
    let ext: Vec<f64> = (0..vals.len()).filter(|&i| op.slot_of(i).is_none()).map(|i| vals[i]).collect();
    let emin = ext.iter().cloned().fold(0.0_f64, f64::min);
    let emax = ext.iter().cloned().fold(0.0_f64, f64::max);
    let tol = 1e-9 * (1.0 + u.sup_norm());
    let mut witness = None;
    for (s, &idx) in op.unknowns().iter().enumerate() {
        let v = vals[idx];
        let bad = if nonpos && v < emin - tol {
            Some(emin)
        } else if nonneg && v > emax + tol {
            Some(emax)
        } else {
            None
        };
        if let Some(bound) = bad {
            let _ = s;
            witness = Some(Witness {
                node: idx,
                point: op.lattice().coords(idx),
                value: v,
                bound,
            });
            break;
        }
    }
    Certificate {
        applicable: nonpos || nonneg,
        holds: witness.is_none(),
        witness,
    }
}

/// Solves `L_h u = f` in the domain, `u = g` outside.
pub fn solve_linear(op: &DiscreteOperator, f: &dyn Fn(Point) -> f64, ext: Beyond) -> Result<SolveReport> {
    let rhs: Vec<f64> = op.unknowns().iter().map(|&i| f(op.lattice().coords(i))).collect();
    solve_linear_values(op, &rhs, ext)
}

/// As [`solve_linear`] with the source given per unknown.
pub fn solve_linear_values(op: &DiscreteOperator, rhs: &[f64], ext: Beyond) -> Result<SolveReport> {
    if rhs.len() != op.len() {
        return Err(invalid("f", "one source value per unknown is required"));
    }
    if rhs.iter().any(|v| !v.is_finite()) {
        return Err(invalid("f", "source must be finite"));
    }
    let lu = op.factor(None)?;
    let out = op.solve_system(rhs, ext, None, &lu, None)?;
    let solution = op.grid(&out.x, ext);
    let lu_vals = op.eval(solution.values(), ext, None);
    let residual = lu_vals.iter().zip(rhs).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    let certificate = max_principle(op, &solution, rhs);
    Ok(SolveReport {
        solution,
        residual,
        iterations: out.iterations,
        outer_iterations: 1,
        damping: Vec::new(),
        history: out.history,
        policy_changes: Vec::new(),
        contracted: true,
        certificate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardOptions {
    pub tol: f64,
    pub omega: f64,
    pub max_iter: usize,
    /// Iterates with a larger sup norm count as divergent.
    pub bound: f64,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            omega: 0.5,
            max_iter: 200,
            bound: 1e8,
        }
    }
}

/// Damped Picard iteration for `L_h u + H(|Du|_h) = f(u)`, `u = g` outside.
pub fn solve_semilinear(
    op: &DiscreteOperator,
    hamiltonian: &dyn Fn(f64) -> f64,
    source: &dyn Fn(f64) -> f64,
    ext: Beyond,
    opts: PicardOptions,
) -> Result<SolveReport> {
    if !(opts.omega > 0.0 && opts.omega <= 1.0) {
        return Err(invalid("omega", "damping must lie in (0, 1]"));
    }
    if !(opts.tol > 0.0) {
        return Err(invalid("tol", "must be positive"));
    }
    let lu = op.factor(None)?;
    let n = op.len();
    let mut x = vec![0.0; n];
    let mut all = op.embed(&x, ext);
    let mut omega = opts.omega;
    let mut damping = Vec::new();
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut prev_step = f64::INFINITY;
    let mut guess: Option<Vec<f64>> = None;
    let mut contracted = false;
    let mut outer = 0;
    let rhs_of = |all: &[f64]| -> Vec<f64> {
        let g = op.gradient_norm_values(all, ext);
        op.unknowns()
            .iter()
            .zip(&g)
            .map(|(&i, &gn)| source(all[i]) - hamiltonian(gn))
            .collect()
    };
    while outer < opts.max_iter {
        outer += 1;
        let rhs = rhs_of(&all);
        let out = op.solve_system(&rhs, ext, None, &lu, guess.take())?;
        iterations += out.iterations;
        let step = x.iter().zip(&out.x).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        if step > prev_step {
            omega = (omega * 0.5).max(1.0 / 1024.0);
        }
        prev_step = step;
        for (xi, ti) in x.iter_mut().zip(&out.x) {
            *xi += omega * (ti - *xi);
        }
        guess = Some(out.x);
        damping.push(omega);
        history.push(omega * step);
        let s = sup(&x);
        if !s.is_finite() || s > opts.bound {
            return Err(Error::Divergence { iteration: outer, sup: s });
        }
        all = op.embed(&x, ext);
        if omega * step <= opts.tol {
            contracted = true;
            break;
        }
    }
    let solution = op.grid(&x, ext);
    let rhs = rhs_of(solution.values());
    let lu_vals = op.eval(solution.values(), ext, None);
    let residual = lu_vals.iter().zip(&rhs).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    let certificate = max_principle(op, &solution, &rhs);
    Ok(SolveReport {
        solution,
        residual,
        iterations,
        outer_iterations: outer,
        damping,
        history,
        policy_changes: Vec::new(),
        contracted,
        certificate,
    })
}

/// One control pair `(b_{μν}, f_{μν})`, constant in space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub drift: Point,
    pub source: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyOptions {
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for PolicyOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_sweeps: 50,
        }
    }
}

type Policy = Vec<(usize, usize)>;

/// Picks `inf_μ sup_ν` per unknown, keeping the previous choice on ties.
fn improve_policy(
    op: &DiscreteOperator,
    controls: &[Vec<Control>],
    all: &[f64],
    ext: Beyond,
    old: Option<&Policy>,
) -> (Policy, Vec<f64>) {
    let mut policy = Vec::with_capacity(op.len());
    let mut values = Vec::with_capacity(op.len());
    for (s, &idx) in op.unknowns().iter().enumerate() {
        let c = all[idx];
        let value_of = |ctl: &Control| -> f64 {
            ctl.source
                + op
                    .drift_coefs(s, ctl.drift)
                    .map(|(k, arm)| k * (op.arm_value(arm, all, ext) - c))
                    .sum::<f64>()
        };
        let prev = old.map(|p| p[s]);
        let tie = |v: f64| 1e-12 * (1.0 + v.abs());
        let mut best: Option<(usize, usize, f64)> = None;
        for (mu, set) in controls.iter().enumerate() {
            let mut inner: Option<(usize, f64)> = None;
            for (nu, ctl) in set.iter().enumerate() {
                let v = value_of(ctl);
                inner = match inner {
                    None => Some((nu, v)),
                    Some((bn, bv)) => {
                        let keep_new = prev == Some((mu, nu)) && v >= bv - tie(bv);
                        let keep_old = prev == Some((mu, bn)) && bv >= v - tie(v);
                        if keep_new || (!keep_old && v > bv + tie(bv)) {
                            Some((nu, v))
                        } else {
                            Some((bn, bv))
                        }
                    }
                };
            }
            let (nu, v) = inner.expect("control sets are nonempty");
            best = match best {
                None => Some((mu, nu, v)),
                Some((bm, bn, bv)) => {
                    let keep_new = prev.is_some_and(|p| p.0 == mu) && v <= bv + tie(bv);
                    let keep_old = prev.is_some_and(|p| p.0 == bm) && bv <= v + tie(v);
                    if keep_new || (!keep_old && v < bv - tie(bv)) {
                        Some((mu, nu, v))
                    } else {
                        Some((bm, bn, bv))
                    }
                }
            };
        }
        let (mu, nu, v) = best.expect("control family is nonempty");
        policy.push((mu, nu));
        values.push(v);
    }
    (policy, values)
}

/// Policy iteration for `L_h u + inf_μ sup_ν {b_{μν}·Du + f_{μν}} = 0`,
/// `u = g` outside.
pub fn solve_hjb(op: &DiscreteOperator, controls: &[Vec<Control>], ext: Beyond, opts: PolicyOptions) -> Result<SolveReport> {
    if controls.is_empty() || controls.iter().any(|c| c.is_empty()) {
        return Err(invalid("controls", "control sets must be nonempty"));
    }
    for c in controls.iter().flatten() {
        if norm(c.drift) > op.c0() * (1.0 + 1e-12) {
            return Err(invalid("controls", format!("drift {:?} exceeds the bound C0 = {}", c.drift, op.c0())));
        }
        if !c.source.is_finite() {
            return Err(invalid("controls", "sources must be finite"));
        }
    }
    let n = op.len();
    let mut x = vec![0.0; n];
    let mut all = op.embed(&x, ext);
    let (mut policy, mut values) = improve_policy(op, controls, &all, ext, None);
    let residual_of = |all: &[f64], values: &[f64]| -> f64 {
        op.eval(all, ext, None).iter().zip(values).fold(0.0_f64, |m, (l, v)| m.max((l + v).abs()))
    };
    let mut history = vec![residual_of(&all, &values)];
    let mut changes = Vec::new();
    let mut seen: Vec<Policy> = vec![policy.clone()];
    let mut iterations = 0;
    let mut sweeps = 0;
    loop {
        if sweeps >= opts.max_sweeps {
            return Err(Error::PolicyCycle {
                sweeps,
                trace: changes,
            });
        }
        sweeps += 1;
        let drift: Vec<Point> = policy.iter().map(|&(m, v)| controls[m][v].drift).collect();
        let rhs: Vec<f64> = policy.iter().map(|&(m, v)| -controls[m][v].source).collect();
        let lu = op.factor(Some(&drift))?;
        let out = op.solve_system(&rhs, ext, Some(&drift), &lu, Some(x.clone()))?;
        iterations += out.iterations;
        x = out.x;
        all = op.embed(&x, ext);
        let (next, next_values) = improve_policy(op, controls, &all, ext, Some(&policy));
        let changed = next.iter().zip(&policy).filter(|(a, b)| a != b).count();
        changes.push(changed);
        values = next_values;
        history.push(residual_of(&all, &values));
        if changed == 0 {
            break;
        }
        if seen.iter().any(|p| *p == next) {
            return Err(Error::PolicyCycle {
                sweeps,
                trace: changes,
            });
        }
        seen.push(next.clone());
        policy = next;
    }
    let solution = op.grid(&x, ext);
    let residual = residual_of(solution.values(), &values);
    let f: Vec<f64> = values.iter().map(|v| -v).collect();
    let certificate = max_principle(op, &solution, &f);
    Ok(SolveReport {
        solution,
        residual,
        iterations,
        outer_iterations: sweeps,
        damping: Vec::new(),
        history,
        policy_changes: changes,
        contracted: residual <= opts.tol.max(LINEAR_TOL * sup(&f) * 10.0),
        certificate,
    })
}

/// Pointwise check `sub ≤ sup + margin` on every lattice node.
pub fn comparison_check(sub: &GridFunction, sup: &GridFunction, op: &DiscreteOperator, margin: f64) -> Certificate {
    let lat = op.lattice();
    if sub.lattice() != lat || sup.lattice() != lat {
        return Certificate {
            applicable: false,
            holds: false,
            witness: None,
        };
    }
    let witness = sub
        .values()
        .iter()
        .zip(sup.values())
        .position(|(a, b)| *a > b + margin)
        .map(|i| Witness {
            node: i,
            point: lat.coords(i),
            value: sub.value(i),
            bound: sup.value(i),
        });
    Certificate {
        applicable: true,
        holds: witness.is_none(),
        witness,
    }
}
