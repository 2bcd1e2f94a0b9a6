//! Sparse profile LU (used as a preconditioner) and restarted GMRES.

use crate::error::{Error, Result};

/// Sparse matrix in row-compressed form.
#[derive(Debug, Clone, Default)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_rows(rows: &[Vec<(usize, f64)>]) -> Self {
        let mut m = CsrMatrix {
            n: rows.len(),
            row_ptr: Vec::with_capacity(rows.len() + 1),
            ..Default::default()
        };
        m.row_ptr.push(0);
        for r in rows {
            let mut r = r.clone();
            r.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (c, v) in r {
                if last == Some(c) {
                    *m.vals.last_mut().expect("entry exists") += v;
                } else {
                    m.cols.push(c);
                    m.vals.push(v);
                    last = Some(c);
                }
            }
            m.row_ptr.push(m.cols.len());
        }
        m
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            y[i] = s;
        }
    }
}

/// LU factors with a variable-band (skyline) profile. The profile is
/// symmetrised from the sparsity pattern, so no fill occurs outside it.
#[derive(Debug, Clone)]
pub struct SkylineLu {
    n: usize,
    first: Vec<usize>,
    /// Row `i` of `L` (strictly lower part), columns `first[i]..i`.
    lower: Vec<Vec<f64>>,
    /// Column `i` of `U` (strictly upper part), rows `first[i]..i`.
    upper: Vec<Vec<f64>>,
    diag: Vec<f64>,
}

impl SkylineLu {
    /// Storage in bytes the factorisation of `a` would need.
    pub fn estimate_bytes(a: &CsrMatrix) -> usize {
        Self::profile(a).iter().enumerate().map(|(i, &f)| 2 * (i - f) * 8).sum::<usize>() + a.n * 8
    }

    fn profile(a: &CsrMatrix) -> Vec<usize> {
        let mut first: Vec<usize> = (0..a.n).collect();
        for i in 0..a.n {
            for k in a.row_ptr[i]..a.row_ptr[i + 1] {
                let j = a.cols[k];
                let (lo, hi) = if i < j { (i, j) } else { (j, i) };
                first[hi] = first[hi].min(lo);
            }
        }
        first
    }

    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.n;
        let first = Self::profile(a);
        let mut lower: Vec<Vec<f64>> = (0..n).map(|i| vec![0.0; i - first[i]]).collect();
        let mut upper: Vec<Vec<f64>> = (0..n).map(|i| vec![0.0; i - first[i]]).collect();
        let mut diag = vec![0.0; n];
        for i in 0..n {
            for k in a.row_ptr[i]..a.row_ptr[i + 1] {
                let j = a.cols[k];
                let v = a.vals[k];
                match j.cmp(&i) {
                    std::cmp::Ordering::Less => lower[i][j - first[i]] = v,
                    std::cmp::Ordering::Greater => upper[j][i - first[j]] = v,
                    std::cmp::Ordering::Equal => diag[i] = v,
                }
            }
        }
        for i in 0..n {
            let fi = first[i];
            for j in fi..i {
                let fj = first[j];
                let lo = fi.max(fj);
                // L[i][j]
                let li = &lower[i];
                let uj = &upper[j];
                let mut s = 0.0;
                for k in lo..j {
                    s += li[k - fi] * uj[k - fj];
                }
                let lij = (lower[i][j - fi] - s) / diag[j];
                lower[i][j - fi] = lij;
                // U[j][i]
                let lj = &lower[j];
                let ui = &upper[i];
                let mut s = 0.0;
                for k in lo..j {
                    s += lj[k - fj] * ui[k - fi];
                }
                upper[i][j - fi] -= s;
            }
            let mut s = 0.0;
            for k in fi..i {
                s += lower[i][k - fi] * upper[i][k - fi];
            }
            diag[i] -= s;
            if diag[i] == 0.0 || !diag[i].is_finite() {
                return Err(Error::SingularPivot(i));
            }
        }
        Ok(Self {
            n,
            first,
            lower,
            upper,
            diag,
        })
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        for i in 0..self.n {
            let fi = self.first[i];
            let s: f64 = self.lower[i].iter().zip(&b[fi..i]).map(|(l, x)| l * x).sum();
            b[i] -= s;
        }
        for i in (0..self.n).rev() {
            b[i] /= self.diag[i];
            let xi = b[i];
            let fi = self.first[i];
            for (bk, u) in b[fi..i].iter_mut().zip(&self.upper[i]) {
                *bk -= u * xi;
            }
        }
    }
}

/// Outcome of a GMRES run.
#[derive(Debug, Clone)]
pub struct GmresOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// True residual sup norm after every restart cycle.
    pub history: Vec<f64>,
    pub residual: f64,
}

/// Right-preconditioned restarted GMRES for `A x = b`, stopping when the
/// true residual satisfies `‖b − Ax‖_∞ ≤ tol`.
pub fn gmres(
    apply: &mut dyn FnMut(&[f64], &mut [f64]),
    precond: &dyn Fn(&mut [f64]),
    b: &[f64],
    x0: Option<Vec<f64>>,
    tol: f64,
    restart: usize,
    max_iter: usize,
) -> Result<GmresOutcome> {
    let n = b.len();
    let mut x = x0.unwrap_or_else(|| vec![0.0; n]);
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut ax = vec![0.0; n];
    let sup = |v: &[f64]| v.iter().fold(0.0_f64, |m, a| m.max(a.abs()));
    let norm2 = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    loop {
        apply(&x, &mut ax);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let rs = sup(&r);
        history.push(rs);
        if rs <= tol || n == 0 {
            return Ok(GmresOutcome {
                x,
                iterations,
                history,
                residual: rs,
            });
        }
        if iterations >= max_iter {
            let tail = history.iter().rev().take(8).rev().cloned().collect();
            return Err(Error::NoConvergence {
                iterations,
                history: tail,
            });
        }
        let beta = norm2(&r);
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|a| a / beta).collect()];
        let mut z: Vec<Vec<f64>> = Vec::new();
        let mut hess: Vec<Vec<f64>> = Vec::new();
        let mut cs: Vec<f64> = Vec::new();
        let mut sn: Vec<f64> = Vec::new();
        let mut g = vec![beta];
        let mut w = vec![0.0; n];
        // The 2-norm bounds the sup norm, so reaching `tol` in 2-norm suffices;
        // a looser trigger ends the cycle to check the true residual.
        let trigger = tol * (n as f64).sqrt() * 0.5;
        for j in 0..restart {
            let mut zj = v[j].clone();
            precond(&mut zj);
            apply(&zj, &mut w);
            iterations += 1;
            let mut hj = vec![0.0; j + 2];
            for (i, vi) in v.iter().enumerate() {
                let hij: f64 = w.iter().zip(vi).map(|(a, b)| a * b).sum();
                hj[i] = hij;
                for (wk, vk) in w.iter_mut().zip(vi) {
                    *wk -= hij * vk;
                }
            }
            let wn = norm2(&w);
            hj[j + 1] = wn;
            for i in 0..j {
                let t = cs[i] * hj[i] + sn[i] * hj[i + 1];
                hj[i + 1] = -sn[i] * hj[i] + cs[i] * hj[i + 1];
                hj[i] = t;
            }
            let d = hj[j].hypot(hj[j + 1]);
            let (c, s) = if d == 0.0 { (1.0, 0.0) } else { (hj[j] / d, hj[j + 1] / d) };
            cs.push(c);
            sn.push(s);
            hj[j] = d;
            hj[j + 1] = 0.0;
            g.push(-s * g[j]);
            g[j] *= c;
            hess.push(hj);
            z.push(zj);
            let est = g[j + 1].abs();
            if wn == 0.0 || est <= trigger || iterations >= max_iter {
                break;
            }
            v.push(w.iter().map(|a| a / wn).collect());
        }
        // Back substitution for the cycle's coefficients.
        let k = hess.len();
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for (l, yl) in y.iter().enumerate().take(k).skip(i + 1) {
                s -= hess[l][i] * yl;
            }
            y[i] = s / hess[i][i];
        }
        for (zi, yi) in z.iter().zip(&y) {
            for (xk, zk) in x.iter_mut().zip(zi) {
                *xk += yi * zk;
            }
        }
    }
}
