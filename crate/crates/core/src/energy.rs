//! Link-phase (Peierls) discretization of the magnetic energy on a
//! truncated box with zero exterior values.
//!
//! The covariant forward difference along axis `j` is
//! `D_j u(x) = (e^{i theta_j(x)} u(x + h e_j) - u(x)) / h`, where
//! `theta_j(x)` approximates the line integral of `A` along the link. The
//! composed second-order operator is built by summation by parts, so
//! `<D*D u, u> = sum |D u|^2` holds to roundoff.

use crate::gauge::AnyPotential;
use crate::grid::{ComplexField, GridError, GridSpec, RealField};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Quadrature rule for a single link integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LinkRule {
    /// `theta_j(x) = h A_j(x + (h/2) e_j)`; exact for potentials linear in
    /// `x`, which makes discrete gauge covariance exact for constant
    /// fields.
    Midpoint,
    /// Gauss-Legendre of the given order along the link.
    GaussLegendre(usize),
}

/// Precomputed link phases; `theta[idx * dim + axis]` is the phase of the
/// forward link leaving node `idx` along `axis`.
#[derive(Debug, Clone)]
pub struct LinkPhases {
    grid: GridSpec,
    theta: Vec<f64>,
}

impl LinkPhases {
    pub fn build(a: &AnyPotential, grid: &GridSpec, rule: LinkRule) -> Self {
        let dim = grid.dim();
        let h = grid.spacing();
        let gl = match rule {
            LinkRule::GaussLegendre(q) => Some(crate::gauge::Quadrature::gauss_legendre(q)),
            LinkRule::Midpoint => None,
        };
        let gl = &gl;
        let theta: Vec<f64> = (0..grid.num_nodes())
            .into_par_iter()
            .flat_map_iter(|idx| {
                let x = grid.node_coord(idx);
                (0..dim).map(move |axis| {
                    match gl {
                        None => {
                            let mut mid = x;
                            mid[axis] += 0.5 * h;
                            h * a.eval(&mid)[axis]
                        }
                        Some(q) => {
                            h * q.integrate01(
                                |t| {
                                    let mut p = x;
                                    p[axis] += t * h;
                                    a.eval(&p)[axis]
                                },
                                h,
                            )
                        }
                    }
                })
            })
            .collect();
        LinkPhases {
            grid: *grid,
            theta,
        }
    }

    pub fn zero(grid: &GridSpec) -> Self {
        LinkPhases {
            grid: *grid,
            theta: vec![0.0; grid.num_nodes() * grid.dim()],
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn theta(&self, idx: usize, axis: usize) -> f64 {
        self.theta[idx * self.grid.dim() + axis]
    }

    pub fn theta_slice(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }
}

/// Covariant forward differences, one field per axis. Exterior values are
/// zero (Dirichlet truncation), so every node carries `dim` links.
pub fn covariant_gradient(u: &ComplexField, links: &LinkPhases) -> Vec<ComplexField> {
    let grid = *u.grid();
    assert_eq!(&grid, links.grid(), "link phases built on a different grid");
    let h = grid.spacing();
    (0..grid.dim())
        .map(|axis| {
            let values: Vec<Complex64> = (0..grid.num_nodes())
                .into_par_iter()
                .map(|idx| {
                    let fwd = grid
                        .neighbor(idx, axis, true)
                        .map(|n| u.values()[n])
                        .unwrap_or(Complex64::new(0.0, 0.0));
                    let phase = Complex64::from_polar(1.0, links.theta(idx, axis));
                    (phase * fwd - u.values()[idx]) / h
                })
                .collect();
            let mut f = ComplexField::zeros(grid);
            f.values_mut().copy_from_slice(&values);
            f
        })
        .collect()
}

/// Magnetic energy `E_A(u) = h^N sum_links |D u|^2` over all links of the
/// zero-extended field, including the links entering the box from the low
/// boundary (their ghost endpoint is zero, so each contributes
/// `|u|^2 / h^2`). With those included, `E_A(u) = <D*D u, u>` to roundoff.
/// The reduction is a sequential sum in node order so repeated runs are
/// bit-identical.
pub fn energy_ea(u: &ComplexField, links: &LinkPhases) -> f64 {
    let grid = u.grid();
    let grads = covariant_gradient(u, links);
    let vol = grid.cell_volume();
    let h2 = grid.spacing() * grid.spacing();
    let mut acc = 0.0;
    for g in &grads {
        for z in g.values() {
            acc += z.norm_sqr();
        }
    }
    for idx in 0..grid.num_nodes() {
        for axis in 0..grid.dim() {
            if grid.neighbor(idx, axis, false).is_none() {
                acc += u.values()[idx].norm_sqr() / h2;
            }
        }
    }
    vol * acc
}

/// Energy terms of one field. Serialized with the short names used by the
/// result files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyReport {
    /// magnetic (covariant) kinetic energy
    pub e_a: f64,
    /// full functional `E_A(u) + int V |u|^2`
    pub j_av: f64,
    /// plain (A = 0) kinetic energy, for diagnostics
    pub kinetic: f64,
    /// electric term `h^N sum V |u|^2`
    pub electric: f64,
    pub h: f64,
    #[serde(rename = "L")]
    pub half_width: f64,
    #[serde(rename = "M")]
    pub points_per_axis: usize,
}

/// Evaluates `J_{A,V}(u)` and its pieces.
pub fn functional_j(u: &ComplexField, links: &LinkPhases, v: &RealField) -> EnergyReport {
    let grid = u.grid();
    assert_eq!(grid, v.grid(), "electric weight sampled on a different grid");
    let e_a = energy_ea(u, links);
    let plain = LinkPhases::zero(grid);
    let kinetic = energy_ea(u, &plain);
    let mut electric = 0.0;
    for (z, w) in u.values().iter().zip(v.values()) {
        electric += w * z.norm_sqr();
    }
    electric *= grid.cell_volume();
    EnergyReport {
        e_a,
        j_av: e_a + electric,
        kinetic,
        electric,
        h: grid.spacing(),
        half_width: grid.half_width(),
        points_per_axis: grid.points_per_axis(),
    }
}

/// `D*D u` by summation by parts:
/// `(D*D u)(x) = h^{-2} sum_j [2 u(x) - e^{i theta_j(x)} u(x+he_j)
///   - e^{-i theta_j(x-he_j)} u(x-he_j)]`
/// with zero exterior values.
pub fn magnetic_laplacian(u: &ComplexField, links: &LinkPhases) -> ComplexField {
    let grid = *u.grid();
    assert_eq!(&grid, links.grid(), "link phases built on a different grid");
    let h2 = grid.spacing() * grid.spacing();
    let dim = grid.dim();
    let values: Vec<Complex64> = (0..grid.num_nodes())
        .into_par_iter()
        .map(|idx| {
            let mut acc = Complex64::new(0.0, 0.0);
            for axis in 0..dim {
                acc += 2.0 * u.values()[idx];
                if let Some(n) = grid.neighbor(idx, axis, true) {
                    acc -= Complex64::from_polar(1.0, links.theta(idx, axis)) * u.values()[n];
                }
                if let Some(n) = grid.neighbor(idx, axis, false) {
                    acc -= Complex64::from_polar(1.0, -links.theta(n, axis)) * u.values()[n];
                }
            }
            acc / h2
        })
        .collect();
    let mut f = ComplexField::zeros(grid);
    f.values_mut().copy_from_slice(&values);
    f
}

/// `H u = D*D u + V u`.
pub fn apply_hamiltonian(u: &ComplexField, links: &LinkPhases, v: &RealField) -> ComplexField {
    let mut out = magnetic_laplacian(u, links);
    for (o, (z, w)) in out
        .values_mut()
        .iter_mut()
        .zip(u.values().iter().zip(v.values()))
    {
        *o += w * z;
    }
    out
}

/// Weighted l^2 norm of the Euler-Lagrange defect
/// `H u - lambda |u|^{p-2} u`.
pub fn el_residual(
    u: &ComplexField,
    links: &LinkPhases,
    v: &RealField,
    p: f64,
    lambda: f64,
) -> f64 {
    let hu = apply_hamiltonian(u, links, v);
    let vol = u.grid().cell_volume();
    let mut acc = 0.0;
    for (h, z) in hu.values().iter().zip(u.values()) {
        let g = z * z.norm().powf(p - 2.0);
        acc += (h - lambda * g).norm_sqr();
    }
    (vol * acc).sqrt()
}

/// Least-squares multiplier: the `lambda` minimizing
/// `|| H u - lambda |u|^{p-2} u ||_{l^2}`.
pub fn fitted_multiplier(u: &ComplexField, links: &LinkPhases, v: &RealField, p: f64) -> f64 {
    let hu = apply_hamiltonian(u, links, v);
    let mut num = 0.0;
    let mut den = 0.0;
    for (h, z) in hu.values().iter().zip(u.values()) {
        let g = z * z.norm().powf(p - 2.0);
        num += (h.conj() * g).re;
        den += g.norm_sqr();
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiamagneticReport {
    /// links where `|D |u|| > |D^A u|` beyond roundoff
    pub violations: usize,
    /// most negative slack `|D^A u| - |D |u||` found (>= 0 means none)
    pub min_slack: f64,
    pub links_checked: usize,
}

/// Link-by-link diamagnetic comparison: the plain difference of `|u|` never
/// exceeds the covariant difference of `u`. This holds exactly (triangle
/// inequality), so only genuine roundoff slack is tolerated.
pub fn diamagnetic_check(u: &ComplexField, links: &LinkPhases) -> DiamagneticReport {
    let grid = u.grid();
    let scale = u.max_abs().max(1e-300);
    let tol = 1e-13 * scale;
    let mut violations = 0;
    let mut min_slack = f64::INFINITY;
    let mut checked = 0;
    for idx in 0..grid.num_nodes() {
        let ui = u.values()[idx];
        for axis in 0..grid.dim() {
            let fwd = grid
                .neighbor(idx, axis, true)
                .map(|n| u.values()[n])
                .unwrap_or(Complex64::new(0.0, 0.0));
            let cov = (Complex64::from_polar(1.0, links.theta(idx, axis)) * fwd - ui).norm();
            let plain = (fwd.norm() - ui.norm()).abs();
            let slack = cov - plain;
            min_slack = min_slack.min(slack);
            if slack < -tol {
                violations += 1;
            }
            checked += 1;
        }
    }
    DiamagneticReport {
        violations,
        min_slack,
        links_checked: checked,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointwiseBoundsReport {
    pub lower_violations: usize,
    pub upper_violations: usize,
    pub min_lower_slack: f64,
    pub min_upper_slack: f64,
}

/// Link-level version of the two-sided comparison between the covariant
/// and plain kinetic densities:
/// `|D^A u|^2 >= (1/2)|D u|^2 - 8 |A|^2 (|u(x)|^2 + |u(x+he)|^2)` and
/// `|D^A u|^2 <= 2 |D u|^2 + 16 |A|^2 (|u(x)|^2 + |u(x+he)|^2)`,
/// with `|A|` read off the link phase (`|theta| = h |A_mid|`).
pub fn pointwise_bounds_check(u: &ComplexField, links: &LinkPhases) -> PointwiseBoundsReport {
    let grid = u.grid();
    let h = grid.spacing();
    let scale = (u.max_abs() / h).powi(2).max(1e-300);
    let tol = 1e-12 * scale;
    let mut report = PointwiseBoundsReport {
        lower_violations: 0,
        upper_violations: 0,
        min_lower_slack: f64::INFINITY,
        min_upper_slack: f64::INFINITY,
    };
    for idx in 0..grid.num_nodes() {
        let ui = u.values()[idx];
        for axis in 0..grid.dim() {
            let fwd = grid
                .neighbor(idx, axis, true)
                .map(|n| u.values()[n])
                .unwrap_or(Complex64::new(0.0, 0.0));
            let theta = links.theta(idx, axis);
            let a_sq = (theta / h) * (theta / h);
            let cov = (Complex64::from_polar(1.0, theta) * fwd - ui).norm_sqr() / (h * h);
            let plain = (fwd - ui).norm_sqr() / (h * h);
            let mass = ui.norm_sqr() + fwd.norm_sqr();
            let lower = cov - (0.5 * plain - 8.0 * a_sq * mass);
            let upper = (2.0 * plain + 16.0 * a_sq * mass) - cov;
            report.min_lower_slack = report.min_lower_slack.min(lower);
            report.min_upper_slack = report.min_upper_slack.min(upper);
            if lower < -tol {
                report.lower_violations += 1;
            }
            if upper < -tol {
                report.upper_violations += 1;
            }
        }
    }
    report
}

/// `h^N`-weighted inner product `<a, b>` as used by the energy pairing.
pub fn pairing(a: &ComplexField, b: &ComplexField) -> Complex64 {
    a.inner(b)
}

/// Validates grids match; convenience used by solver call sites.
pub fn check_same_grid(a: &GridSpec, b: &GridSpec) -> Result<(), GridError> {
    if a == b {
        Ok(())
    } else {
        Err(GridError::LengthMismatch {
            want: a.num_nodes(),
            got: b.num_nodes(),
        })
    }
}
