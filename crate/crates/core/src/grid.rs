//! Truncated-box discretization and complex field storage.
//!
//! All computational modules share the same uniform grid on `[-L, L]^N`
//! with zero-Dirichlet boundary treatment: fields are extended by zero
//! outside the box, and quadrature is the plain node sum times `h^N`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Maximum supported spatial dimension. Coordinates are carried as
/// `[f64; 3]` with trailing components fixed to zero in 2D.
pub const MAX_DIM: usize = 3;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("dimension must be 2 or 3, got {0}")]
    BadDimension(usize),
    #[error("points per axis must be odd and >= 3, got {0}")]
    BadPointCount(usize),
    #[error("half-width must be positive, got {0}")]
    BadHalfWidth(f64),
    #[error("grid of {0} nodes exceeds the addressable budget")]
    TooManyNodes(u128),
    #[error("field has {got} values, grid has {want} nodes")]
    LengthMismatch { got: usize, want: usize },
    #[error("non-finite value at node {0}")]
    NonFinite(usize),
    #[error("translation offset {0} is not an integer multiple of the spacing")]
    NonLatticeShift(f64),
    #[error("p-exponent must be >= 1 and finite, got {0}")]
    BadExponent(f64),
    #[error("lattice step must be positive, got {0}")]
    BadLatticeStep(f64),
    #[error("covering radius {radius} cannot cover the box with step {step}")]
    BadCoveringRadius { radius: f64, step: f64 },
    #[error("window around {center:?} with radius {radius} misses the box")]
    WindowOutsideBox { center: [f64; 3], radius: f64 },
}

/// Uniform grid on `[-L, L]^N` with an odd number of nodes per axis,
/// so the origin is always a grid node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    dim: usize,
    half_width: f64,
    points_per_axis: usize,
}

/// Soft cap on total node count (~64 GiB of complex values would be
/// far past this; the cap keeps accidental configs from thrashing).
const MAX_NODES: u128 = 1 << 28;

impl GridSpec {
    pub fn new(dim: usize, half_width: f64, points_per_axis: usize) -> Result<Self, GridError> {
        if dim < 2 || dim > MAX_DIM {
            return Err(GridError::BadDimension(dim));
        }
        if points_per_axis < 3 || points_per_axis % 2 == 0 {
            return Err(GridError::BadPointCount(points_per_axis));
        }
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(GridError::BadHalfWidth(half_width));
        }
        let total = (points_per_axis as u128).pow(dim as u32);
        if total > MAX_NODES {
            return Err(GridError::TooManyNodes(total));
        }
        Ok(GridSpec {
            dim,
            half_width,
            points_per_axis,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn points_per_axis(&self) -> usize {
        self.points_per_axis
    }

    /// Grid spacing `h = 2L / (M - 1)`.
    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.points_per_axis - 1) as f64
    }

    pub fn num_nodes(&self) -> usize {
        self.points_per_axis.pow(self.dim as u32)
    }

    /// Quadrature weight `h^N` of a single node.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Multi-index of a flat node index, row-major with axis 0 slowest.
    pub fn multi_index(&self, idx: usize) -> [usize; 3] {
        let m = self.points_per_axis;
        let mut out = [0usize; 3];
        let mut rem = idx;
        for ax in (0..self.dim).rev() {
            out[ax] = rem % m;
            rem /= m;
        }
        out
    }

    pub fn flat_index(&self, mi: &[usize; 3]) -> usize {
        let m = self.points_per_axis;
        let mut idx = 0;
        for ax in 0..self.dim {
            idx = idx * m + mi[ax];
        }
        idx
    }

    /// Physical coordinates of a node.
    pub fn node_coord(&self, idx: usize) -> [f64; 3] {
        let mi = self.multi_index(idx);
        let h = self.spacing();
        let mut x = [0.0; 3];
        for ax in 0..self.dim {
            x[ax] = -self.half_width + h * mi[ax] as f64;
        }
        x
    }

    /// Flat index of the neighbor one step along `axis`, or `None` at the
    /// boundary (Dirichlet: the missing neighbor carries the value 0).
    pub fn neighbor(&self, idx: usize, axis: usize, forward: bool) -> Option<usize> {
        let mut mi = self.multi_index(idx);
        if forward {
            if mi[axis] + 1 >= self.points_per_axis {
                return None;
            }
            mi[axis] += 1;
        } else {
            if mi[axis] == 0 {
                return None;
            }
            mi[axis] -= 1;
        }
        Some(self.flat_index(&mi))
    }

    /// Converts a physical offset into whole-node steps, rejecting
    /// offsets that do not land on the lattice.
    pub fn lattice_steps(&self, y: &[f64; 3]) -> Result<[i64; 3], GridError> {
        let h = self.spacing();
        let mut steps = [0i64; 3];
        for ax in 0..self.dim {
            let s = y[ax] / h;
            let r = s.round();
            if (s - r).abs() > 1e-9 * (1.0 + s.abs()) {
                return Err(GridError::NonLatticeShift(y[ax]));
            }
            steps[ax] = r as i64;
        }
        Ok(steps)
    }
}

/// Complex-valued grid function; the unknown of every minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    grid: GridSpec,
    values: Vec<Complex64>,
}

impl ComplexField {
    pub fn zeros(grid: GridSpec) -> Self {
        ComplexField {
            grid,
            values: vec![Complex64::new(0.0, 0.0); grid.num_nodes()],
        }
    }

    pub fn from_values(grid: GridSpec, values: Vec<Complex64>) -> Result<Self, GridError> {
        if values.len() != grid.num_nodes() {
            return Err(GridError::LengthMismatch {
                got: values.len(),
                want: grid.num_nodes(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(GridError::NonFinite(i));
        }
        Ok(ComplexField { grid, values })
    }

    pub fn from_fn<F: Fn(&[f64; 3]) -> Complex64>(grid: GridSpec, f: F) -> Self {
        let values = (0..grid.num_nodes())
            .map(|i| f(&grid.node_coord(i)))
            .collect();
        ComplexField { grid, values }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn check_finite(&self) -> Result<(), GridError> {
        if let Some(i) = self
            .values
            .iter()
            .position(|v| !v.re.is_finite() || !v.im.is_finite())
        {
            return Err(GridError::NonFinite(i));
        }
        Ok(())
    }

    /// Discrete `L^p` norm `(h^N sum |u|^p)^{1/p}`.
    pub fn lp_norm(&self, p: f64) -> Result<f64, GridError> {
        if !(p >= 1.0) || !p.is_finite() {
            return Err(GridError::BadExponent(p));
        }
        self.check_finite()?;
        let sum: f64 = if p == 2.0 {
            self.values.iter().map(|v| v.norm_sqr()).sum()
        } else {
            self.values.iter().map(|v| v.norm().powf(p)).sum()
        };
        Ok((self.grid.cell_volume() * sum).powf(1.0 / p))
    }

    pub fn l2_norm(&self) -> f64 {
        self.lp_norm(2.0).expect("l2 norm of finite field")
    }

    /// `h^N sum_{|x - center| <= radius} |u(x)|^p`, a localized mass
    /// detector over a covering ball.
    pub fn window_mass(
        &self,
        center: &[f64; 3],
        radius: f64,
        p: f64,
    ) -> Result<f64, GridError> {
        if !(p >= 1.0) || !p.is_finite() {
            return Err(GridError::BadExponent(p));
        }
        let l = self.grid.half_width();
        for ax in 0..self.grid.dim() {
            if center[ax] - radius > l || center[ax] + radius < -l {
                return Err(GridError::WindowOutsideBox {
                    center: *center,
                    radius,
                });
            }
        }
        let r2 = radius * radius;
        let mut sum = 0.0;
        for (i, v) in self.values.iter().enumerate() {
            let x = self.grid.node_coord(i);
            let mut d2 = 0.0;
            for ax in 0..self.grid.dim() {
                d2 += (x[ax] - center[ax]) * (x[ax] - center[ax]);
            }
            if d2 <= r2 {
                sum += if p == 2.0 {
                    v.norm_sqr()
                } else {
                    v.norm().powf(p)
                };
            }
        }
        Ok(self.grid.cell_volume() * sum)
    }

    /// `v(x) = u(x - y)` with zero Dirichlet fill; `y` must lie on the grid
    /// lattice.
    pub fn translate(&self, y: &[f64; 3]) -> Result<ComplexField, GridError> {
        let steps = self.grid.lattice_steps(y)?;
        Ok(self.translate_steps(&steps))
    }

    /// Node-count translation (always lattice-exact).
    pub fn translate_steps(&self, steps: &[i64; 3]) -> ComplexField {
        let grid = self.grid;
        let m = grid.points_per_axis() as i64;
        let mut out = ComplexField::zeros(grid);
        for i in 0..grid.num_nodes() {
            let mi = grid.multi_index(i);
            let mut src = [0usize; 3];
            let mut inside = true;
            for ax in 0..grid.dim() {
                let s = mi[ax] as i64 - steps[ax];
                if s < 0 || s >= m {
                    inside = false;
                    break;
                }
                src[ax] = s as usize;
            }
            if inside {
                out.values[i] = self.values[grid.flat_index(&src)];
            }
        }
        out
    }

    pub fn scaled(&self, c: Complex64) -> ComplexField {
        ComplexField {
            grid: self.grid,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    pub fn add(&self, other: &ComplexField) -> ComplexField {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        ComplexField {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &ComplexField) -> ComplexField {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        ComplexField {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    /// `h^N sum conj(a) b`.
    pub fn inner(&self, other: &ComplexField) -> Complex64 {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        let s: Complex64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.conj() * b)
            .sum();
        s * self.grid.cell_volume()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Real-valued grid function (sampled electric potentials, densities).
#[derive(Debug, Clone, PartialEq)]
pub struct RealField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl RealField {
    pub fn zeros(grid: GridSpec) -> Self {
        RealField {
            grid,
            values: vec![0.0; grid.num_nodes()],
        }
    }

    pub fn from_fn<F: Fn(&[f64; 3]) -> f64>(grid: GridSpec, f: F) -> Self {
        RealField {
            grid,
            values: (0..grid.num_nodes())
                .map(|i| f(&grid.node_coord(i)))
                .collect(),
        }
    }

    pub fn from_values(grid: GridSpec, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.num_nodes() {
            return Err(GridError::LengthMismatch {
                got: values.len(),
                want: grid.num_nodes(),
            });
        }
        Ok(RealField { grid, values })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Lattice `Xi = s Z^N` together with the radius of covering balls.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DiscretizationSpec {
    pub step: f64,
    pub covering_radius: f64,
}

impl DiscretizationSpec {
    pub fn new(step: f64, covering_radius: f64, dim: usize) -> Result<Self, GridError> {
        if !(step > 0.0) {
            return Err(GridError::BadLatticeStep(step));
        }
        // Balls of radius rho centered at s Z^N cover R^N iff
        // rho >= s sqrt(N) / 2 (half the cell diagonal).
        let min_rho = step * (dim as f64).sqrt() / 2.0;
        if covering_radius < min_rho {
            return Err(GridError::BadCoveringRadius {
                radius: covering_radius,
                step,
            });
        }
        Ok(DiscretizationSpec {
            step,
            covering_radius,
        })
    }

    /// All lattice points inside the grid box (0 is always among them).
    pub fn points_in_box(&self, grid: &GridSpec) -> Vec<[f64; 3]> {
        let l = grid.half_width();
        let n = (l / self.step).floor() as i64;
        let mut pts = Vec::new();
        let dim = grid.dim();
        let mut idx = vec![-n; dim];
        loop {
            let mut p = [0.0; 3];
            for ax in 0..dim {
                p[ax] = idx[ax] as f64 * self.step;
            }
            pts.push(p);
            // odometer increment
            let mut ax = dim;
            loop {
                if ax == 0 {
                    return pts;
                }
                ax -= 1;
                if idx[ax] < n {
                    idx[ax] += 1;
                    for a in ax + 1..dim {
                        idx[a] = -n;
                    }
                    break;
                } else if ax == 0 {
                    return pts;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64 as C;
    use proptest::prelude::*;

    fn grid2d() -> GridSpec {
        GridSpec::new(2, 4.0, 17).unwrap()
    }

    #[test]
    fn grid_construction_checks() {
        assert!(GridSpec::new(2, 4.0, 16).is_err()); // even M
        assert!(GridSpec::new(2, 4.0, 1).is_err());
        assert!(GridSpec::new(4, 4.0, 17).is_err());
        assert!(GridSpec::new(2, -1.0, 17).is_err());
        let g = grid2d();
        assert_eq!(g.num_nodes(), 17 * 17);
        assert!((g.spacing() - 0.5).abs() < 1e-15);
        // odd M puts a node exactly at the origin
        let center = g.num_nodes() / 2;
        let x = g.node_coord(center);
        assert_eq!(x[0], 0.0);
        assert_eq!(x[1], 0.0);
    }

    #[test]
    fn lp_norm_zero_field() {
        let u = ComplexField::zeros(grid2d());
        assert_eq!(u.lp_norm(2.0).unwrap(), 0.0);
        assert_eq!(u.lp_norm(3.5).unwrap(), 0.0);
    }

    #[test]
    fn lp_norm_constant_field() {
        // u = c on a box of volume (2L)^N: L2 norm ~ |c| (2L)^{N/2} up to
        // O(h) node weighting at the boundary.
        let g = grid2d();
        let c = C::new(0.3, -0.4);
        let u = ComplexField::from_fn(g, |_| c);
        let expect = c.norm() * (2.0 * g.half_width()).powf(g.dim() as f64 / 2.0);
        let got = u.lp_norm(2.0).unwrap();
        assert!((got - expect).abs() < 0.1 * expect, "{got} vs {expect}");
    }

    #[test]
    fn lp_norm_spike() {
        // single-node spike, p = 3 -> h^{N/3}
        let g = grid2d();
        let mut u = ComplexField::zeros(g);
        let origin = g.num_nodes() / 2;
        u.values_mut()[origin] = C::new(1.0, 0.0);
        let got = u.lp_norm(3.0).unwrap();
        let expect = g.cell_volume().powf(1.0 / 3.0);
        assert!((got - expect).abs() < 1e-14);
    }

    #[test]
    fn lp_norm_rejects_bad_exponent() {
        let u = ComplexField::zeros(grid2d());
        assert!(u.lp_norm(0.5).is_err());
        assert!(u.lp_norm(f64::INFINITY).is_err());
    }

    #[test]
    fn window_mass_spikes() {
        let g = grid2d();
        let origin = g.num_nodes() / 2;
        let mut u = ComplexField::zeros(g);
        u.values_mut()[origin] = C::new(1.0, 0.0);
        let zero = [0.0; 3];
        assert!(
            (u.window_mass(&zero, g.spacing(), 2.0).unwrap() - g.cell_volume()).abs() < 1e-15
        );
        // second spike far away is excluded by a tight window
        let far = g.flat_index(&[16, 8, 0]);
        u.values_mut()[far] = C::new(1.0, 0.0);
        assert!(
            (u.window_mass(&zero, 1.0, 2.0).unwrap() - g.cell_volume()).abs() < 1e-15
        );
        let empty = ComplexField::zeros(g);
        assert_eq!(empty.window_mass(&zero, 2.0, 2.0).unwrap(), 0.0);
        assert!(u.window_mass(&[100.0, 0.0, 0.0], 1.0, 2.0).is_err());
    }

    #[test]
    fn window_mass_monotone_in_radius() {
        let g = grid2d();
        let u = ComplexField::from_fn(g, |x| C::new((-x[0] * x[0] - x[1] * x[1]).exp(), 0.1));
        let zero = [0.0; 3];
        let mut prev = 0.0;
        for r in [0.5, 1.0, 2.0, 4.0] {
            let m = u.window_mass(&zero, r, 2.0).unwrap();
            assert!(m >= prev);
            prev = m;
        }
    }

    #[test]
    fn translate_roundtrip() {
        let g = grid2d();
        // interior-supported bump
        let u = ComplexField::from_fn(g, |x| {
            let r2 = x[0] * x[0] + x[1] * x[1];
            if r2 < 1.0 {
                C::new((-4.0 * r2).exp(), 0.2 * x[0])
            } else {
                C::new(0.0, 0.0)
            }
        });
        let y = [1.0, -0.5, 0.0];
        let v = u.translate(&y).unwrap();
        let back = v.translate(&[-1.0, 0.5, 0.0]).unwrap();
        assert_eq!(u, back);
        // non-lattice shift rejected
        assert!(u.translate(&[0.3, 0.0, 0.0]).is_err());
        // identity
        assert_eq!(u.translate(&[0.0; 3]).unwrap(), u);
    }

    #[test]
    fn translate_moves_spike() {
        let g = grid2d();
        let mut u = ComplexField::zeros(g);
        let origin = g.num_nodes() / 2;
        u.values_mut()[origin] = C::new(1.0, 0.0);
        let v = u.translate(&[0.5, 0.0, 0.0]).unwrap();
        let mi = g.multi_index(origin);
        let target = g.flat_index(&[mi[0] + 1, mi[1], mi[2]]);
        assert_eq!(v.values()[target], C::new(1.0, 0.0));
        assert_eq!(v.values()[origin], C::new(0.0, 0.0));
    }

    #[test]
    fn discretization_covering_mass_bounds() {
        let g = grid2d();
        let xi = DiscretizationSpec::new(1.0, 1.0, 2).unwrap();
        let u = ComplexField::from_fn(g, |x| C::new((-x[0] * x[0] - x[1] * x[1]).exp(), 0.0));
        let p = 2.0;
        let total = u.lp_norm(p).unwrap().powf(p);
        let sum: f64 = xi
            .points_in_box(&g)
            .iter()
            .map(|c| u.window_mass(c, xi.covering_radius, p).unwrap())
            .sum();
        assert!(sum >= total - 1e-12, "cover must capture all mass");
        // multiplicity of the ball cover of s Z^2 with rho = s is at most 4+1
        assert!(sum <= 5.0 * total + 1e-12);
    }

    #[test]
    fn discretization_validation() {
        assert!(DiscretizationSpec::new(0.0, 1.0, 2).is_err());
        assert!(DiscretizationSpec::new(1.0, 0.2, 2).is_err());
        assert!(DiscretizationSpec::new(1.0, 0.8, 2).is_ok());
    }

    proptest! {
        #[test]
        fn lp_norm_homogeneity(re in -2.0f64..2.0, im in -2.0f64..2.0, p in 1.0f64..5.0) {
            let g = grid2d();
            let u = ComplexField::from_fn(g, |x| C::new((x[0] * 1.3).sin(), (x[1] * 0.7).cos()));
            let c = C::new(re, im);
            let lhs = u.scaled(c).lp_norm(p).unwrap();
            let rhs = c.norm() * u.lp_norm(p).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs));
        }

        #[test]
        fn translate_preserves_norm_interior(sx in -2i64..=2, sy in -2i64..=2, p in 1.0f64..4.0) {
            let g = grid2d();
            let u = ComplexField::from_fn(g, |x| {
                let r2 = x[0] * x[0] + x[1] * x[1];
                if r2 < 4.0 { C::new((-2.0 * r2).exp(), 0.3) } else { C::new(0.0, 0.0) }
            });
            let v = u.translate_steps(&[sx, sy, 0]);
            prop_assert!(v.grid() == u.grid());
            let a = u.lp_norm(p).unwrap();
            let b = v.lp_norm(p).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a));
        }
    }
}
