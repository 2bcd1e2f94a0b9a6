//! Zero-padded FFT correlation of a lattice field with a symmetric stencil.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Smallest 5-smooth integer not below `n`.
pub(crate) fn good_size(n: usize) -> usize {
    let mut k = n.max(1);
    loop {
        let mut r = k;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return k;
        }
        k += 1;
    }
}

/// Computes `out[i] = Σ_d w[d] · in[i + d]` for a stencil with
/// `w[d] = w[−d]`, treating input outside the lattice as zero.
pub(crate) struct Convolver {
    nx: usize,
    ny: usize,
    px: usize,
    py: usize,
    spectrum: Vec<Complex64>,
    fwd_x: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    fwd_y: Option<Arc<dyn Fft<f64>>>,
    inv_y: Option<Arc<dyn Fft<f64>>>,
}

impl std::fmt::Debug for Convolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Convolver")
            .field("lattice", &(self.nx, self.ny))
            .field("padded", &(self.px, self.py))
            .finish()
    }
}

impl Convolver {
    /// `weights` is laid out `(dj + m)·(2m+1) + (di + m)`, or `di + m` in 1-d.
    pub(crate) fn new(weights: &[f64], m: usize, nx: usize, ny: usize, dim: usize) -> Self {
        let px = good_size(nx + m);
        let py = if dim == 1 { 1 } else { good_size(ny + m) };
        let mut planner = FftPlanner::new();
        let fwd_x = planner.plan_fft_forward(px);
        let inv_x = planner.plan_fft_inverse(px);
        let (fwd_y, inv_y) = if dim == 2 {
            (Some(planner.plan_fft_forward(py)), Some(planner.plan_fft_inverse(py)))
        } else {
            (None, None)
        };
        let mut conv = Self {
            nx,
            ny,
            px,
            py,
            spectrum: Vec::new(),
            fwd_x,
            inv_x,
            fwd_y,
            inv_y,
        };
        let w = 2 * m + 1;
        let mut buf = vec![Complex64::new(0.0, 0.0); px * py];
        let rows = if dim == 1 { 1 } else { w };
        for r in 0..rows {
            let dj = r as isize - if dim == 1 { 0 } else { m as isize };
            let jj = dj.rem_euclid(py as isize) as usize;
            for c in 0..w {
                let di = c as isize - m as isize;
                let ii = di.rem_euclid(px as isize) as usize;
                buf[jj * px + ii].re += weights[r * w + c];
            }
        }
        conv.transform(&mut buf, false);
        conv.spectrum = buf;
        conv
    }

    /// Bytes held by the cached spectrum.
    pub(crate) fn bytes(&self) -> usize {
        self.px * self.py * std::mem::size_of::<Complex64>()
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        let fx = if inverse { &self.inv_x } else { &self.fwd_x };
        for row in buf.chunks_exact_mut(self.px) {
            fx.process(row);
        }
        if let (Some(fy), Some(iy)) = (&self.fwd_y, &self.inv_y) {
            let f = if inverse { iy } else { fy };
            let mut col = vec![Complex64::new(0.0, 0.0); self.py];
            for i in 0..self.px {
                for j in 0..self.py {
                    col[j] = buf[j * self.px + i];
                }
                f.process(&mut col);
                for j in 0..self.py {
                    buf[j * self.px + i] = col[j];
                }
            }
        }
    }

    pub(crate) fn apply(&self, input: &[f64]) -> Vec<f64> {
        assert_eq!(input.len(), self.nx * self.ny);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.px * self.py];
        for j in 0..self.ny {
            for i in 0..self.nx {
                buf[j * self.px + i].re = input[j * self.nx + i];
            }
        }
        self.transform(&mut buf, false);
        for (b, s) in buf.iter_mut().zip(&self.spectrum) {
            *b *= s;
        }
        self.transform(&mut buf, true);
        let scale = 1.0 / (self.px * self.py) as f64;
        let mut out = vec![0.0; self.nx * self.ny];
        for j in 0..self.ny {
            for i in 0..self.nx {
                out[j * self.nx + i] = buf[j * self.px + i].re * scale;
            }
        }
        out
    }
}
