//! Uniform lattices and grid functions with an extension rule beyond the
//! stored band.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{dot, Point};

/// A uniform node lattice `origin + h·(i, j)`, `0 ≤ i < shape[0]`,
/// `0 ≤ j < shape[1]`. In one dimension `shape[1] == 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    dim: usize,
    h: f64,
    origin: Point,
    shape: [usize; 2],
}

impl Lattice {
    pub fn new(dim: usize, h: f64, origin: Point, shape: [usize; 2]) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(invalid("dim", "only dimensions 1 and 2 are supported"));
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(invalid("h", "grid spacing must be positive"));
        }
        if shape[0] == 0 || shape[1] == 0 || (dim == 1 && shape[1] != 1) {
            return Err(invalid("shape", format!("{shape:?} is not a valid {dim}-d lattice shape")));
        }
        Ok(Self { dim, h, origin, shape })
    }

    /// Lattice symmetric about the centre of `bbox`, covering it with
    /// `margin` extra nodes on every side.
    pub fn covering(bbox: (Point, Point), h: f64, dim: usize, margin: usize) -> Self {
        let (lo, hi) = bbox;
        let mut origin = [0.0; 2];
        let mut shape = [1usize; 2];
        for a in 0..dim {
            let c = 0.5 * (lo[a] + hi[a]);
            let half = 0.5 * (hi[a] - lo[a]);
            let m = (half / h - 1e-9).ceil().max(0.0) as usize + margin;
            shape[a] = 2 * m + 1;
            origin[a] = c - m as f64 * h;
        }
        Self::new(dim, h, origin, shape).expect("covering lattice parameters are valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn origin(&self) -> Point {
        self.origin
    }
    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }
    pub fn len(&self) -> usize {
        self.shape[0] * self.shape[1]
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major index; the first axis varies fastest.
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.shape[0] && j < self.shape[1]);
        j * self.shape[0] + i
    }

    pub fn ij(&self, idx: usize) -> (usize, usize) {
        (idx % self.shape[0], idx / self.shape[0])
    }

    /// Index of the node at signed lattice coordinates, if stored.
    pub fn checked_index(&self, i: isize, j: isize) -> Option<usize> {
        if i < 0 || j < 0 || i as usize >= self.shape[0] || j as usize >= self.shape[1] {
            None
        } else {
            Some(self.index(i as usize, j as usize))
        }
    }

    /// Position of the (possibly virtual) node with signed coordinates.
    pub fn point(&self, i: isize, j: isize) -> Point {
        let y = if self.dim == 1 { 0.0 } else { self.origin[1] + j as f64 * self.h };
        [self.origin[0] + i as f64 * self.h, y]
    }

    pub fn coords(&self, idx: usize) -> Point {
        let (i, j) = self.ij(idx);
        self.point(i as isize, j as isize)
    }

    /// Neighbour along `axis` in direction `dir = ±1`.
    pub fn neighbor(&self, idx: usize, axis: usize, dir: isize) -> Option<usize> {
        let (i, j) = self.ij(idx);
        let (i, j) = (i as isize, j as isize);
        if axis == 0 {
            self.checked_index(i + dir, j)
        } else {
            self.checked_index(i, j + dir)
        }
    }

    /// Fractional lattice coordinates of `x`.
    pub fn locate(&self, x: Point) -> [f64; 2] {
        let fy = if self.dim == 1 { 0.0 } else { (x[1] - self.origin[1]) / self.h };
        [(x[0] - self.origin[0]) / self.h, fy]
    }

    /// Nearest stored node.
    pub fn nearest(&self, x: Point) -> Option<usize> {
        let f = self.locate(x);
        self.checked_index(f[0].round() as isize, f[1].round() as isize)
    }

    /// Extent of the stored band.
    pub fn bounding_box(&self) -> (Point, Point) {
        let last = self.point(self.shape[0] as isize - 1, self.shape[1] as isize - 1);
        (self.origin, last)
    }

    /// Largest node-to-node distance on the lattice.
    pub fn diameter(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        (hi[0] - lo[0]).hypot(hi[1] - lo[1])
    }

    /// Same geometry scaled about the origin of coordinates by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self::new(self.dim, self.h * s, [self.origin[0] * s, self.origin[1] * s], self.shape)
            .expect("scaling preserves validity")
    }
}

/// How a grid function continues beyond the stored lattice band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Beyond {
    Zero,
    Constant(f64),
    /// `c + g·x`.
    Affine { c: f64, g: Point },
}

impl Beyond {
    pub fn eval(&self, x: Point) -> f64 {
        match *self {
            Beyond::Zero => 0.0,
            Beyond::Constant(c) => c,
            Beyond::Affine { c, g } => c + dot(g, x),
        }
    }
}

/// Values on every lattice node plus the extension rule outside the band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    lattice: Lattice,
    values: Vec<f64>,
    beyond: Beyond,
}

impl GridFunction {
    pub fn new(lattice: Lattice, values: Vec<f64>, beyond: Beyond) -> Result<Self> {
        if values.len() != lattice.len() {
            return Err(invalid("values", format!("expected {} values, got {}", lattice.len(), values.len())));
        }
        if let Some(p) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid("values", format!("non-finite value at node {p}")));
        }
        Ok(Self { lattice, values, beyond })
    }

    pub fn zeros(lattice: Lattice) -> Self {
        let n = lattice.len();
        Self {
            lattice,
            values: vec![0.0; n],
            beyond: Beyond::Zero,
        }
    }

    pub fn from_fn(lattice: Lattice, f: impl Fn(Point) -> f64, beyond: Beyond) -> Self {
        let values = (0..lattice.len()).map(|i| f(lattice.coords(i))).collect();
        Self { lattice, values, beyond }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
    pub fn beyond(&self) -> Beyond {
        self.beyond
    }
    pub fn value(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    /// Value at signed lattice coordinates, using the extension outside.
    pub fn at(&self, i: isize, j: isize) -> f64 {
        match self.lattice.checked_index(i, j) {
            Some(idx) => self.values[idx],
            None => self.beyond.eval(self.lattice.point(i, j)),
        }
    }

    /// Bilinear (linear in 1-d) interpolation inside the stored band.
    pub fn interpolate(&self, x: Point) -> Result<f64> {
        let f = self.lattice.locate(x);
        let [nx, ny] = self.lattice.shape();
        let tol = 1e-9;
        let inside = |v: f64, n: usize| v >= -tol && v <= (n - 1) as f64 + tol;
        if !inside(f[0], nx) || (self.lattice.dim() == 2 && !inside(f[1], ny)) {
            return Err(Error::OutsideDataBand(x));
        }
        let i0 = (f[0].floor() as isize).clamp(0, nx.saturating_sub(2) as isize);
        let tx = f[0] - i0 as f64;
        if self.lattice.dim() == 1 || ny == 1 {
            return Ok((1.0 - tx) * self.at(i0, 0) + tx * self.at(i0 + 1, 0));
        }
        let j0 = (f[1].floor() as isize).clamp(0, ny.saturating_sub(2) as isize);
        let ty = f[1] - j0 as f64;
        Ok((1.0 - tx) * (1.0 - ty) * self.at(i0, j0)
            + tx * (1.0 - ty) * self.at(i0 + 1, j0)
            + (1.0 - tx) * ty * self.at(i0, j0 + 1)
            + tx * ty * self.at(i0 + 1, j0 + 1))
    }

    pub fn map(&self, f: impl Fn(Point, f64) -> f64) -> Self {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| f(self.lattice.coords(i), v))
            .collect();
        Self {
            lattice: self.lattice.clone(),
            values,
            beyond: self.beyond,
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covering_is_symmetric_about_center() {
        let lat = Lattice::covering(([-1.0, -1.0], [1.0, 1.0]), 0.25, 2, 2);
        assert_eq!(lat.shape(), [13, 13]);
        let c = lat.coords(lat.index(6, 6));
        assert!(c[0].abs() < 1e-15 && c[1].abs() < 1e-15);
        let one = Lattice::covering(([-1.0, 0.0], [1.0, 0.0]), 0.5, 1, 0);
        assert_eq!(one.shape(), [5, 1]);
        assert_eq!(one.coords(4), [1.0, 0.0]);
    }

    #[test]
    fn index_round_trip() {
        let lat = Lattice::new(2, 0.1, [0.0, 0.0], [7, 5]).unwrap();
        for idx in 0..lat.len() {
            let (i, j) = lat.ij(idx);
            assert_eq!(lat.index(i, j), idx);
        }
        assert_eq!(lat.neighbor(0, 0, -1), None);
        assert_eq!(lat.neighbor(0, 1, 1), Some(7));
    }

    #[test]
    fn bilinear_interpolation_is_exact_for_bilinear_fields() {
        let lat = Lattice::covering(([-1.0, -1.0], [1.0, 1.0]), 0.1, 2, 1);
        let g = GridFunction::from_fn(lat, |x| 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1], Beyond::Zero);
        let x = [0.123, -0.456];
        let v = g.interpolate(x).unwrap();
        assert!((v - (1.0 + 0.246 + 0.456 - 0.5 * 0.123 * 0.456)).abs() < 1e-13);
        assert!(g.interpolate([5.0, 0.0]).is_err());
    }

    #[test]
    fn beyond_extension() {
        let lat = Lattice::new(2, 0.5, [0.0, 0.0], [2, 2]).unwrap();
        let g = GridFunction::from_fn(lat, |x| 1.0 + x[0], Beyond::Affine { c: 1.0, g: [1.0, 0.0] });
        assert_eq!(g.at(5, 0), 1.0 + 2.5);
        assert_eq!(g.at(1, 1), 1.5);
    }
}
