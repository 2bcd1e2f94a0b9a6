//! One-dimensional quadrature: Gauss–Legendre rules and adaptive
//! Gauss–Kronrod (7/15) integration on finite and semi-infinite intervals.

use crate::error::{Error, Result};

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1, "quadrature order must be positive");
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, refined by Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One 15-point Kronrod panel: returns (integral, error estimate).
fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let hw = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = hw * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * hw, ((kron - gauss) * hw).abs())
}

/// Tolerances and limits for [`adaptive`].
#[derive(Debug, Clone, Copy)]
pub struct AdaptiveOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_panels: usize,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-12,
            rel_tol: 1e-10,
            max_panels: 4000,
        }
    }
}

/// Globally adaptive Gauss–Kronrod integration of `f` over `[a, b]`.
///
/// The panel with the largest error estimate is bisected until the total
/// estimate falls below `max(abs_tol, rel_tol * |I|)`. Endpoints are never
/// evaluated, so integrable endpoint singularities are tolerated.
pub fn adaptive<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, opts: AdaptiveOptions) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let (first, err) = gk15(&mut f, a, b);
    let mut panels = vec![(a, b, first, err)];
    let mut total = first;
    let mut total_err = err;
    while total_err > opts.abs_tol.max(opts.rel_tol * total.abs()) {
        if panels.len() >= opts.max_panels {
            // Accept estimates that are tight relative to the magnitude.
            if total_err <= 1e3 * opts.abs_tol.max(opts.rel_tol * total.abs()) {
                break;
            }
            return Err(Error::QuadratureFailed {
                estimate: total,
                error: total_err,
            });
        }
        let (idx, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("at least one panel");
        let (pa, pb, pi, pe) = panels.swap_remove(idx);
        let mid = 0.5 * (pa + pb);
        if mid <= pa || mid >= pb {
            // Panel cannot be split further in floating point.
            panels.push((pa, pb, pi, 0.0));
            total_err -= pe;
            continue;
        }
        let (l, le) = gk15(&mut f, pa, mid);
        let (r, re) = gk15(&mut f, mid, pb);
        total += l + r - pi;
        total_err += le + re - pe;
        panels.push((pa, mid, l, le));
        panels.push((mid, pb, r, re));
        if total_err < 0.0 {
            total_err = panels.iter().map(|p| p.3).sum();
        }
    }
    Ok(panels.iter().map(|p| p.2).sum())
}

/// Integrates `f` over `[a, b]` by splitting at the supplied interior break
/// points (kinks or known singular locations) and integrating each piece.
pub fn adaptive_with_breaks<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    opts: AdaptiveOptions,
) -> Result<f64> {
    let mut pts: Vec<f64> = breaks.iter().copied().filter(|&t| t > a && t < b).collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mut lo = a;
    let mut sum = 0.0;
    for &p in pts.iter().chain(std::iter::once(&b)) {
        sum += adaptive(&mut f, lo, p, opts)?;
        lo = p;
    }
    Ok(sum)
}

/// Integral of `f` over `[a, ∞)` through the map `x = a + t / (1 - t)`.
pub fn adaptive_to_infinity<F: FnMut(f64) -> f64>(mut f: F, a: f64, opts: AdaptiveOptions) -> Result<f64> {
    adaptive(
        |t| {
            let s = 1.0 - t;
            let x = a + t / s;
            if s <= 0.0 || !x.is_finite() {
                return 0.0;
            }
            let v = f(x) / (s * s);
            if v.is_finite() {
                v
            } else {
                0.0
            }
        },
        0.0,
        1.0,
        opts,
    )
}

/// Integral over `[a, b]` with `a > 0` of an integrand that is a smooth
/// function of `log x` (power-law profiles): integrates in `log x` with
/// geometric panels.
pub fn adaptive_log<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, opts: AdaptiveOptions) -> Result<f64> {
    assert!(a > 0.0 && b >= a);
    adaptive(
        |s| {
            let x = s.exp();
            f(x) * x
        },
        a.ln(),
        b.ln(),
        opts,
    )
}

/// Integral over `(0, b]` of an integrand with an integrable power
/// singularity at zero, integrated in `log x` down to `floor` plus the
/// remaining sliver estimated by a single Kronrod panel.
pub fn adaptive_from_zero<F: FnMut(f64) -> f64>(mut f: F, b: f64, opts: AdaptiveOptions) -> Result<f64> {
    if b <= 0.0 {
        return Ok(0.0);
    }
    let floor = b * 1e-14;
    let main = adaptive_log(&mut f, floor, b, opts)?;
    let (sliver, _) = gk15(&mut f, 0.0, floor);
    Ok(main + sliver)
}
