//! Magnetic potentials, field strengths, rephasing functions and magnetic
//! shift operators.
//!
//! The central construction is the Poincaré (radial) gauge: for a
//! potential `A` with field `B = dA`, the corrected potential
//! `A_y = A + grad(phi_y)` depends only on `B` and satisfies
//! `|A_y(x)| <= ||B||_inf |x - y|` (with factor 1/2 for this gauge), and
//! `A_y(y) = 0`. Both `phi_y` and `A_y` are evaluated by composite
//! Gauss-Legendre quadrature along the straight segment.

use crate::expr::Expr;
use crate::grid::{ComplexField, GridSpec, RealField};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GaugeError {
    #[error("phase construction is disabled for the Aharonov-Bohm potential (singular segments)")]
    SingularPotential,
    #[error("gauge phase centered at {expected:?} used with shift {got:?}")]
    MismatchedCenter { expected: [f64; 3], got: [f64; 3] },
    #[error("field strength is singular at {0:?}")]
    SingularEvaluation([f64; 3]),
    #[error("custom potential must supply {want} components, got {got}")]
    ComponentCount { want: usize, got: usize },
    #[error(transparent)]
    Grid(#[from] crate::grid::GridError),
}

/// Closed-form vector of expressions with precomputed symbolic gradients.
#[derive(Debug, Clone)]
pub struct CustomVector {
    comps: Vec<Expr>,
    grads: Vec<[Expr; 3]>,
}

impl CustomVector {
    pub fn new(comps: Vec<Expr>) -> Self {
        let grads = comps
            .iter()
            .map(|c| [c.derivative(0), c.derivative(1), c.derivative(2)])
            .collect();
        CustomVector { comps, grads }
    }

    pub fn len(&self) -> usize {
        self.comps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.comps.is_empty()
    }

    fn eval(&self, x: &[f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (m, c) in self.comps.iter().enumerate() {
            out[m] = c.eval(x);
        }
        out
    }

    /// jac[m][n] = d A_m / d x_n
    fn jacobian(&self, x: &[f64; 3]) -> [[f64; 3]; 3] {
        let mut out = [[0.0; 3]; 3];
        for (m, g) in self.grads.iter().enumerate() {
            for n in 0..3 {
                out[m][n] = g[n].eval(x);
            }
        }
        out
    }
}

/// Analytic magnetic potential families.
#[derive(Debug, Clone)]
pub enum MagneticPotential {
    Zero,
    /// `A = (1/2) B x` in the symmetric gauge; in 2D with `b12 = b` this is
    /// `A = (b/2)(-x2, x1)`.
    ConstantField { b12: f64, b13: f64, b23: f64 },
    /// `A = lambda (x2, -x1, 0, ...) / (x1^2 + x2^2)`, curl-free off the
    /// set `x1 = x2 = 0`.
    AharonovBohm { lambda: f64 },
    Custom(CustomVector),
    Perturbed {
        base: Box<MagneticPotential>,
        delta: CustomVector,
    },
}

impl MagneticPotential {
    pub fn eval(&self, x: &[f64; 3]) -> [f64; 3] {
        match self {
            MagneticPotential::Zero => [0.0; 3],
            MagneticPotential::ConstantField { b12, b13, b23 } => [
                -0.5 * (b12 * x[1] + b13 * x[2]),
                0.5 * (b12 * x[0] - b23 * x[2]),
                0.5 * (b13 * x[0] + b23 * x[1]),
            ],
            MagneticPotential::AharonovBohm { lambda } => {
                let rho2 = x[0] * x[0] + x[1] * x[1];
                if rho2 == 0.0 {
                    return [0.0; 3]; // flagged elsewhere; the value is never weighted
                }
                [lambda * x[1] / rho2, -lambda * x[0] / rho2, 0.0]
            }
            MagneticPotential::Custom(c) => c.eval(x),
            MagneticPotential::Perturbed { base, delta } => {
                let a = base.eval(x);
                let d = delta.eval(x);
                [a[0] + d[0], a[1] + d[1], a[2] + d[2]]
            }
        }
    }

    /// jac[m][n] = d A_m / d x_n
    pub fn jacobian(&self, x: &[f64; 3]) -> [[f64; 3]; 3] {
        match self {
            MagneticPotential::Zero => [[0.0; 3]; 3],
            MagneticPotential::ConstantField { b12, b13, b23 } => [
                [0.0, -0.5 * b12, -0.5 * b13],
                [0.5 * b12, 0.0, -0.5 * b23],
                [0.5 * b13, 0.5 * b23, 0.0],
            ],
            MagneticPotential::AharonovBohm { lambda } => {
                let rho2 = x[0] * x[0] + x[1] * x[1];
                if rho2 == 0.0 {
                    return [[0.0; 3]; 3];
                }
                let l = *lambda;
                let r4 = rho2 * rho2;
                // A1 = l x2 / rho2, A2 = -l x1 / rho2
                [
                    [
                        -2.0 * l * x[0] * x[1] / r4,
                        l * (1.0 / rho2 - 2.0 * x[1] * x[1] / r4),
                        0.0,
                    ],
                    [
                        -l * (1.0 / rho2 - 2.0 * x[0] * x[0] / r4),
                        2.0 * l * x[0] * x[1] / r4,
                        0.0,
                    ],
                    [0.0, 0.0, 0.0],
                ]
            }
            MagneticPotential::Custom(c) => c.jacobian(x),
            MagneticPotential::Perturbed { base, delta } => {
                let a = base.jacobian(x);
                let d = delta.jacobian(x);
                let mut out = [[0.0; 3]; 3];
                for m in 0..3 {
                    for n in 0..3 {
                        out[m][n] = a[m][n] + d[m][n];
                    }
                }
                out
            }
        }
    }

    pub fn is_aharonov_bohm(&self) -> bool {
        match self {
            MagneticPotential::AharonovBohm { .. } => true,
            MagneticPotential::Perturbed { base, .. } => base.is_aharonov_bohm(),
            _ => false,
        }
    }
}

/// Antisymmetric field strength `B_{mn} = d_m A_n - d_n A_m`, stored on the
/// index pairs (1,2), (1,3), (2,3).
#[derive(Debug, Clone)]
pub struct FieldStrength {
    constant: [f64; 3],
    exprs: [Option<Expr>; 3],
    /// Aharonov-Bohm marker: the field vanishes off `x1 = x2 = 0` but the
    /// potential is singular there; evaluation on the singular set is a
    /// flagged non-value.
    singular_ab: bool,
}

pub const PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

impl FieldStrength {
    pub fn zero() -> Self {
        FieldStrength {
            constant: [0.0; 3],
            exprs: [None, None, None],
            singular_ab: false,
        }
    }

    pub fn is_singular_at(&self, x: &[f64; 3]) -> bool {
        self.singular_ab && x[0] == 0.0 && x[1] == 0.0
    }

    /// Value of the pair component `k` (pairs ordered (1,2),(1,3),(2,3));
    /// `None` flags an evaluation on the singular set.
    pub fn eval_pair(&self, k: usize, x: &[f64; 3]) -> Option<f64> {
        if self.is_singular_at(x) {
            return None;
        }
        let mut v = self.constant[k];
        if let Some(e) = &self.exprs[k] {
            v += e.eval(x);
        }
        Some(v)
    }

    /// Full antisymmetric component `B_{mn}`.
    pub fn eval(&self, m: usize, n: usize, x: &[f64; 3]) -> Option<f64> {
        if m == n {
            return Some(0.0);
        }
        let (k, sign) = match (m.min(n), m.max(n)) {
            (0, 1) => (0, if m < n { 1.0 } else { -1.0 }),
            (0, 2) => (1, if m < n { 1.0 } else { -1.0 }),
            (1, 2) => (2, if m < n { 1.0 } else { -1.0 }),
            _ => unreachable!(),
        };
        self.eval_pair(k, x).map(|v| sign * v)
    }

    pub fn is_identically_zero(&self) -> bool {
        self.constant == [0.0; 3] && self.exprs.iter().all(|e| e.is_none())
    }
}

/// Field strength `B = dA` of an analytic potential.
pub fn curl(a: &MagneticPotential) -> FieldStrength {
    match a {
        MagneticPotential::Zero => FieldStrength::zero(),
        MagneticPotential::ConstantField { b12, b13, b23 } => FieldStrength {
            constant: [*b12, *b13, *b23],
            exprs: [None, None, None],
            singular_ab: false,
        },
        MagneticPotential::AharonovBohm { .. } => FieldStrength {
            constant: [0.0; 3],
            exprs: [None, None, None],
            singular_ab: true,
        },
        MagneticPotential::Custom(c) => {
            let mut exprs: [Option<Expr>; 3] = [None, None, None];
            for (k, (m, n)) in PAIRS.iter().enumerate() {
                let dm_an = c
                    .comps
                    .get(*n)
                    .map(|e| e.derivative(*m))
                    .unwrap_or(Expr::Num(0.0));
                let dn_am = c
                    .comps
                    .get(*m)
                    .map(|e| e.derivative(*n))
                    .unwrap_or(Expr::Num(0.0));
                exprs[k] = Some(Expr::Sub(Box::new(dm_an), Box::new(dn_am)));
            }
            FieldStrength {
                constant: [0.0; 3],
                exprs,
                singular_ab: false,
            }
        }
        MagneticPotential::Perturbed { base, delta } => {
            let b = curl(base);
            let d = curl(&MagneticPotential::Custom(delta.clone()));
            let mut exprs = b.exprs;
            for k in 0..3 {
                let de = d.exprs[k].clone().unwrap_or(Expr::Num(0.0));
                exprs[k] = Some(match exprs[k].take() {
                    Some(e) => Expr::Add(Box::new(e), Box::new(de)),
                    None => de,
                });
            }
            FieldStrength {
                constant: b.constant,
                exprs,
                singular_ab: b.singular_ab,
            }
        }
    }
}

/// `||B||_inf = sqrt( sum_{m<n} sup |B_{mn}|^2 )`, the sup sampled over the
/// grid nodes of the given box.
pub fn b_sup_norm(b: &FieldStrength, grid: &GridSpec) -> f64 {
    let mut sum = 0.0;
    for k in 0..3 {
        let mut sup: f64 = 0.0;
        match &b.exprs[k] {
            None => sup = b.constant[k].abs(),
            Some(_) => {
                for i in 0..grid.num_nodes() {
                    let x = grid.node_coord(i);
                    if let Some(v) = b.eval_pair(k, &x) {
                        sup = sup.max(v.abs());
                    }
                }
            }
        }
        sum += sup * sup;
    }
    sum.sqrt()
}

/// Fixed-order Gauss-Legendre rule on [0, 1], applied in composite panels
/// so long segments keep their accuracy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Quadrature {
    order: usize,
    #[serde(skip)]
    nodes: Vec<f64>,
    #[serde(skip)]
    weights: Vec<f64>,
    /// Maximum arc length covered by one panel.
    pub panel_length: f64,
}

impl Quadrature {
    pub fn gauss_legendre(order: usize) -> Self {
        assert!(order >= 1 && order <= 64, "quadrature order out of range");
        let (nodes, weights) = legendre_nodes_weights(order);
        Quadrature {
            order,
            nodes,
            weights,
            panel_length: 2.0,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    fn restore(&mut self) {
        if self.nodes.is_empty() {
            let (n, w) = legendre_nodes_weights(self.order.max(1));
            self.nodes = n;
            self.weights = w;
        }
    }

    pub fn after_deserialize(mut self) -> Self {
        self.restore();
        self
    }

    /// Composite integral of `f` over the parameter interval [0, 1], with
    /// the panel count chosen from the physical segment length.
    pub fn integrate01<F: Fn(f64) -> f64>(&self, f: F, segment_length: f64) -> f64 {
        let panels = ((segment_length / self.panel_length).ceil() as usize).max(1);
        self.integrate01_panels(&f, panels)
    }

    fn integrate01_panels<F: Fn(f64) -> f64>(&self, f: &F, panels: usize) -> f64 {
        let w = 1.0 / panels as f64;
        let mut acc = 0.0;
        for p in 0..panels {
            let a = p as f64 * w;
            for (t, ww) in self.nodes.iter().zip(&self.weights) {
                acc += ww * w * f(a + t * w);
            }
        }
        acc
    }

    /// Richardson-style error estimate: difference between the composite
    /// rule and the same rule with doubled panel count.
    pub fn defect01<F: Fn(f64) -> f64>(&self, f: F, segment_length: f64) -> f64 {
        let panels = ((segment_length / self.panel_length).ceil() as usize).max(1);
        (self.integrate01_panels(&f, panels) - self.integrate01_panels(&f, 2 * panels)).abs()
    }
}

/// Legendre nodes and weights on [0, 1] by Newton iteration on P_n.
fn legendre_nodes_weights(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Chebyshev-like initial guess on [-1, 1]
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_eval(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_eval(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // map to [0, 1]
        nodes[n - 1 - i] = 0.5 * (x + 1.0);
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

fn legendre_eval(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let pk = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = pk;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// The Poincaré-gauge representative of a field `B` centered at `y`:
/// `A_y(x)_j = int_0^1 t sum_m B_{mj}(y + t (x - y)) (x - y)_m dt`.
///
/// This is simultaneously the corrected potential `A + grad(phi_y)` of any
/// gauge representative `A` of the same field.
#[derive(Debug, Clone)]
pub struct PoincarePotential {
    pub field: FieldStrength,
    pub center: [f64; 3],
    pub quad: Quadrature,
}

impl PoincarePotential {
    pub fn eval(&self, x: &[f64; 3]) -> [f64; 3] {
        if self.field.is_identically_zero() {
            return [0.0; 3];
        }
        let w = [
            x[0] - self.center[0],
            x[1] - self.center[1],
            x[2] - self.center[2],
        ];
        // constant field: the t-integral is closed form, A_y = (1/2) B (x - y)
        if self.field.exprs.iter().all(|e| e.is_none()) && !self.field.singular_ab {
            let mut out = [0.0; 3];
            for j in 0..3 {
                let mut s = 0.0;
                for m in 0..3 {
                    if m != j {
                        s += self.field.eval(m, j, x).unwrap_or(0.0) * w[m];
                    }
                }
                out[j] = 0.5 * s;
            }
            return out;
        }
        let len = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
        let mut out = [0.0; 3];
        for j in 0..3 {
            out[j] = self.quad.integrate01(
                |t| {
                    let xi = [
                        self.center[0] + t * w[0],
                        self.center[1] + t * w[1],
                        self.center[2] + t * w[2],
                    ];
                    let mut s = 0.0;
                    for m in 0..3 {
                        if m != j {
                            if let Some(b) = self.field.eval(m, j, &xi) {
                                s += b * w[m];
                            }
                        }
                    }
                    t * s
                },
                len,
            );
        }
        out
    }

    /// Sup over sampled nodes of the panel-doubling quadrature defect.
    pub fn quadrature_defect(&self, grid: &GridSpec, stride: usize) -> f64 {
        let mut worst: f64 = 0.0;
        let stride = stride.max(1);
        for i in (0..grid.num_nodes()).step_by(stride) {
            let x = grid.node_coord(i);
            let w = [
                x[0] - self.center[0],
                x[1] - self.center[1],
                x[2] - self.center[2],
            ];
            let len = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
            for j in 0..grid.dim() {
                let d = self.quad.defect01(
                    |t| {
                        let xi = [
                            self.center[0] + t * w[0],
                            self.center[1] + t * w[1],
                            self.center[2] + t * w[2],
                        ];
                        let mut s = 0.0;
                        for m in 0..3 {
                            if m != j {
                                if let Some(b) = self.field.eval(m, j, &xi) {
                                    s += b * w[m];
                                }
                            }
                        }
                        t * s
                    },
                    len,
                );
                worst = worst.max(d);
            }
        }
        worst
    }
}

/// A vector potential assembled from the analytic families by gauge
/// correction, translation and dyadic rescaling.
#[derive(Debug, Clone)]
pub enum AnyPotential {
    Analytic(MagneticPotential),
    Poincare(PoincarePotential),
    /// `x -> inner(x + offset)`, the potential `A_y(. + y)` seen from the
    /// moving frame.
    Shifted {
        inner: Box<AnyPotential>,
        offset: [f64; 3],
    },
    /// `x -> 2^{-j} inner(2^{-j} x + y)`; the transform paired with the
    /// dyadic action `u -> 2^{(N-2)j/2} u(2^j (. - y))` so that magnetic
    /// energies match.
    Rescaled {
        inner: Box<AnyPotential>,
        j: i32,
        y: [f64; 3],
    },
}

impl AnyPotential {
    pub fn zero() -> Self {
        AnyPotential::Analytic(MagneticPotential::Zero)
    }

    pub fn eval(&self, x: &[f64; 3]) -> [f64; 3] {
        match self {
            AnyPotential::Analytic(a) => a.eval(x),
            AnyPotential::Poincare(p) => p.eval(x),
            AnyPotential::Shifted { inner, offset } => {
                inner.eval(&[x[0] + offset[0], x[1] + offset[1], x[2] + offset[2]])
            }
            AnyPotential::Rescaled { inner, j, y } => {
                let s = 2.0_f64.powi(-j);
                let v = inner.eval(&[s * x[0] + y[0], s * x[1] + y[1], s * x[2] + y[2]]);
                [s * v[0], s * v[1], s * v[2]]
            }
        }
    }

    /// Field strength where it is available in closed form.
    pub fn field_strength(&self) -> Option<FieldStrength> {
        match self {
            AnyPotential::Analytic(a) => Some(curl(a)),
            AnyPotential::Poincare(p) => Some(p.field.clone()),
            _ => None,
        }
    }

    pub fn is_aharonov_bohm(&self) -> bool {
        match self {
            AnyPotential::Analytic(a) => a.is_aharonov_bohm(),
            AnyPotential::Poincare(_) => false,
            AnyPotential::Shifted { inner, .. } | AnyPotential::Rescaled { inner, .. } => {
                inner.is_aharonov_bohm()
            }
        }
    }
}

/// Replaces a potential by its own Poincaré-gauge representative centered
/// at the origin. This is a one-time global gauge change; afterwards
/// `poincare_phase(., 0)` vanishes identically.
pub fn pregauge(a: &MagneticPotential, quad: &Quadrature) -> AnyPotential {
    match a {
        // already in the Poincaré gauge at 0
        MagneticPotential::Zero | MagneticPotential::ConstantField { .. } => {
            AnyPotential::Analytic(a.clone())
        }
        // gauge machinery is disabled for the AB family; kept verbatim
        MagneticPotential::AharonovBohm { .. } => AnyPotential::Analytic(a.clone()),
        _ => AnyPotential::Poincare(PoincarePotential {
            field: curl(a),
            center: [0.0; 3],
            quad: quad.clone(),
        }),
    }
}

/// Rephasing function `phi_y(x) = -int_0^1 A(y + t(x-y)) . (x-y) dt`
/// realizing the magnetic shift `g_y`.
#[derive(Debug, Clone)]
pub struct GaugePhase {
    center: [f64; 3],
    potential: Box<AnyPotential>,
    quad: Quadrature,
}

impl GaugePhase {
    pub fn center(&self) -> [f64; 3] {
        self.center
    }

    pub fn eval(&self, x: &[f64; 3]) -> f64 {
        let c = &self.center;
        let w = [x[0] - c[0], x[1] - c[1], x[2] - c[2]];
        let len = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
        if len == 0.0 {
            return 0.0;
        }
        -self.quad.integrate01(
            |t| {
                let xi = [c[0] + t * w[0], c[1] + t * w[1], c[2] + t * w[2]];
                let a = self.potential.eval(&xi);
                a[0] * w[0] + a[1] * w[1] + a[2] * w[2]
            },
            len,
        )
    }

    /// Samples the phase on a grid (callers cache this for shift loops).
    pub fn sample(&self, grid: &GridSpec) -> RealField {
        RealField::from_fn(*grid, |x| self.eval(x))
    }

    pub fn quadrature_defect(&self, grid: &GridSpec, stride: usize) -> f64 {
        let mut worst: f64 = 0.0;
        for i in (0..grid.num_nodes()).step_by(stride.max(1)) {
            let x = grid.node_coord(i);
            let c = &self.center;
            let w = [x[0] - c[0], x[1] - c[1], x[2] - c[2]];
            let len = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
            if len == 0.0 {
                continue;
            }
            let d = self.quad.defect01(
                |t| {
                    let xi = [c[0] + t * w[0], c[1] + t * w[1], c[2] + t * w[2]];
                    let a = self.potential.eval(&xi);
                    a[0] * w[0] + a[1] * w[1] + a[2] * w[2]
                },
                len,
            );
            worst = worst.max(d);
        }
        worst
    }
}

/// Builds the Poincaré-gauge rephasing function of `a` centered at `y`.
/// The Aharonov-Bohm family is rejected: its segments may cross the
/// singular axis.
pub fn poincare_phase(
    a: &AnyPotential,
    y: [f64; 3],
    quad: &Quadrature,
) -> Result<GaugePhase, GaugeError> {
    if a.is_aharonov_bohm() {
        return Err(GaugeError::SingularPotential);
    }
    Ok(GaugePhase {
        center: y,
        potential: Box::new(a.clone()),
        quad: quad.clone(),
    })
}

/// Corrected potential `A_y = A + grad(phi_y)`. In the Poincaré gauge this
/// depends only on the field strength, so the closed form is returned
/// rather than any numerically differenced phase.
pub fn corrected_potential(
    a: &AnyPotential,
    phase: &GaugePhase,
) -> Result<AnyPotential, GaugeError> {
    let field = a
        .field_strength()
        .ok_or(GaugeError::SingularPotential)?;
    if field.singular_ab {
        return Err(GaugeError::SingularPotential);
    }
    Ok(AnyPotential::Poincare(PoincarePotential {
        field,
        center: phase.center,
        quad: phase.quad.clone(),
    }))
}

/// Magnetic shift `(g_y u)(x) = e^{i phi_y(x)} u(x - y)`.
pub fn magnetic_shift(
    u: &ComplexField,
    y: &[f64; 3],
    phase: &GaugePhase,
) -> Result<ComplexField, GaugeError> {
    check_center(phase, y)?;
    let translated = u.translate(y)?;
    let grid = *u.grid();
    let mut out = translated;
    for i in 0..grid.num_nodes() {
        let x = grid.node_coord(i);
        let phi = phase.eval(&x);
        out.values_mut()[i] *= Complex64::from_polar(1.0, phi);
    }
    Ok(out)
}

/// Inverse magnetic shift `(g_y^{-1} v)(x) = e^{-i phi_y(x + y)} v(x + y)`.
pub fn inverse_shift(
    v: &ComplexField,
    y: &[f64; 3],
    phase: &GaugePhase,
) -> Result<ComplexField, GaugeError> {
    check_center(phase, y)?;
    let minus = [-y[0], -y[1], -y[2]];
    let translated = v.translate(&minus)?;
    let grid = *v.grid();
    let mut out = translated;
    for i in 0..grid.num_nodes() {
        let x = grid.node_coord(i);
        let xp = [x[0] + y[0], x[1] + y[1], x[2] + y[2]];
        let phi = phase.eval(&xp);
        out.values_mut()[i] *= Complex64::from_polar(1.0, -phi);
    }
    Ok(out)
}

fn check_center(phase: &GaugePhase, y: &[f64; 3]) -> Result<(), GaugeError> {
    let c = phase.center;
    for ax in 0..3 {
        if (c[ax] - y[ax]).abs() > 1e-12 * (1.0 + y[ax].abs()) {
            return Err(GaugeError::MismatchedCenter {
                expected: c,
                got: *y,
            });
        }
    }
    Ok(())
}

/// Electric potential families.
#[derive(Debug, Clone)]
pub enum ElectricPotential {
    Constant(f64),
    /// `V = base - depth * exp(-|x|^2 / width^2)`.
    Well { base: f64, depth: f64, width: f64 },
    /// Hardy-type `V = -mu / x1^2`; nodes on `x1 = 0` carry zero electric
    /// weight (the singular set has measure zero).
    Hardy { mu: f64 },
    Custom(Expr),
}

impl ElectricPotential {
    /// Pointwise value with the singular-node weight rule applied.
    pub fn eval(&self, x: &[f64; 3]) -> f64 {
        match self {
            ElectricPotential::Constant(c) => *c,
            ElectricPotential::Well { base, depth, width } => {
                let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
                base - depth * (-r2 / (width * width)).exp()
            }
            ElectricPotential::Hardy { mu } => {
                if x[0] == 0.0 {
                    0.0
                } else {
                    -mu / (x[0] * x[0])
                }
            }
            ElectricPotential::Custom(e) => e.eval(x),
        }
    }

    pub fn sample(&self, grid: &GridSpec) -> RealField {
        match self {
            // the cell average of 1/x1^2 diverges in the cells meeting the
            // singular plane; functions in the continuum form domain vanish
            // there, and a zero weight instead admits spike modes that make
            // the discrete form unbounded below. A large positive weight on
            // the singular nodes enforces the vanishing discretely.
            ElectricPotential::Hardy { mu } => {
                let h = grid.spacing();
                let pen = mu.abs().max(0.25) * 1e3 / (h * h);
                RealField::from_fn(*grid, |x| {
                    if x[0] == 0.0 {
                        pen
                    } else {
                        -mu / (x[0] * x[0])
                    }
                })
            }
            _ => RealField::from_fn(*grid, |x| self.eval(x)),
        }
    }
}

/// The full potential pair of a run.
#[derive(Debug, Clone)]
pub struct PotentialSpec {
    pub magnetic: MagneticPotential,
    pub electric: ElectricPotential,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use num_complex::Complex64 as C;

    fn quad() -> Quadrature {
        Quadrature::gauss_legendre(16)
    }

    #[test]
    fn gauss_legendre_exactness() {
        let q = quad();
        // degree-2q-1 polynomial integrated exactly
        let val = q.integrate01(|t| t.powi(7) - 3.0 * t * t + 1.0, 1.0);
        let exact = 1.0 / 8.0 - 1.0 + 1.0;
        assert!((val - exact).abs() < 1e-14);
        let gauss = q.integrate01(|t| (-t * t).exp(), 1.0);
        assert!((gauss - 0.7468241328124271).abs() < 1e-12);
    }

    #[test]
    fn curl_constant_field() {
        let a = MagneticPotential::ConstantField {
            b12: 2.5,
            b13: 0.0,
            b23: 0.0,
        };
        let b = curl(&a);
        let x = [0.7, -1.3, 0.4];
        assert_eq!(b.eval(0, 1, &x), Some(2.5));
        assert_eq!(b.eval(1, 0, &x), Some(-2.5));
        // consistency with the jacobian: B_{mn} = d_m A_n - d_n A_m
        let jac = a.jacobian(&x);
        assert!((jac[1][0] - jac[0][1] - 2.5).abs() < 1e-15);
    }

    #[test]
    fn curl_aharonov_bohm_vanishes_off_axis() {
        let a = MagneticPotential::AharonovBohm { lambda: 0.7 };
        let b = curl(&a);
        assert_eq!(b.eval(0, 1, &[1.0, 2.0, 0.0]), Some(0.0));
        assert_eq!(b.eval(0, 1, &[0.0, 0.0, 1.0]), None); // flagged non-value
        // analytic check: jacobian antisymmetrized vanishes off the axis
        let x = [0.4, -0.9, 0.0];
        let jac = a.jacobian(&x);
        assert!((jac[1][0] - jac[0][1]).abs() < 1e-13);
    }

    #[test]
    fn curl_of_exact_form_is_zero() {
        // A = grad(x1^2 x2) = (2 x1 x2, x1^2, 0)
        let comps = vec![
            Expr::parse("2 * x1 * x2").unwrap(),
            Expr::parse("x1 ^ 2").unwrap(),
        ];
        let a = MagneticPotential::Custom(CustomVector::new(comps));
        let b = curl(&a);
        for x in [[0.3, 1.2, 0.0], [-2.0, 0.5, 0.0]] {
            assert!(b.eval(0, 1, &x).unwrap().abs() < 1e-13);
        }
    }

    #[test]
    fn b_sup_norm_values() {
        let g = GridSpec::new(3, 3.0, 9).unwrap();
        assert_eq!(b_sup_norm(&FieldStrength::zero(), &g), 0.0);
        let b2 = curl(&MagneticPotential::ConstantField {
            b12: -2.0,
            b13: 0.0,
            b23: 0.0,
        });
        assert!((b_sup_norm(&b2, &g) - 2.0).abs() < 1e-15);
        // 3D with B12 = 3, B13 = 4 -> 5
        let b3 = curl(&MagneticPotential::ConstantField {
            b12: 3.0,
            b13: 4.0,
            b23: 0.0,
        });
        assert!((b_sup_norm(&b3, &g) - 5.0).abs() < 1e-15);
    }

    #[test]
    fn poincare_phase_zero_potential() {
        let a = AnyPotential::zero();
        let phase = poincare_phase(&a, [1.0, 2.0, 0.0], &quad()).unwrap();
        for x in [[0.0; 3], [1.5, -2.0, 0.0]] {
            assert_eq!(phase.eval(&x), 0.0);
        }
    }

    #[test]
    fn poincare_phase_constant_field_closed_form() {
        // A = (b/2)(-x2, x1): phi_y(x) = (b/2)(x1 y2 - x2 y1)
        let b = 0.8;
        let a = AnyPotential::Analytic(MagneticPotential::ConstantField {
            b12: b,
            b13: 0.0,
            b23: 0.0,
        });
        let y = [1.5, -2.5, 0.0];
        let phase = poincare_phase(&a, y, &quad()).unwrap();
        for x in [[2.0, 1.0, 0.0], [-3.0, 0.5, 0.0], [0.0; 3]] {
            let expect = 0.5 * b * (x[0] * y[1] - x[1] * y[0]);
            assert!(
                (phase.eval(&x) - expect).abs() < 1e-12,
                "{:?}",
                x
            );
        }
    }

    #[test]
    fn corrected_potential_constant_field() {
        let b = 0.8;
        let a = AnyPotential::Analytic(MagneticPotential::ConstantField {
            b12: b,
            b13: 0.0,
            b23: 0.0,
        });
        let y = [1.5, -2.5, 0.0];
        let phase = poincare_phase(&a, y, &quad()).unwrap();
        let ay = corrected_potential(&a, &phase).unwrap();
        // A_y(x) = (b/2)(-(x2 - y2), x1 - y1); vanishes at y
        let at_y = ay.eval(&y);
        assert!(at_y.iter().all(|c| c.abs() < 1e-10));
        let x = [3.0, 1.0, 0.0];
        let v = ay.eval(&x);
        assert!((v[0] - 0.5 * b * (-(x[1] - y[1]))).abs() < 1e-12);
        assert!((v[1] - 0.5 * b * (x[0] - y[0])).abs() < 1e-12);
        // |A_y(x)| = (b/2)|x - y| <= ||B||_inf |x - y|
        let norm = (v[0] * v[0] + v[1] * v[1]).sqrt();
        let dist = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt();
        assert!(norm <= b.abs() * dist + 1e-10);
        // direct check that A_y = A + grad(phi_y) via finite differences
        let eps = 1e-6;
        for ax in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[ax] += eps;
            xm[ax] -= eps;
            let grad_phi = (phase.eval(&xp) - phase.eval(&xm)) / (2.0 * eps);
            let a_raw = a.eval(&x);
            assert!(
                (a_raw[ax] + grad_phi - v[ax]).abs() < 1e-8,
                "axis {ax}"
            );
        }
    }

    #[test]
    fn corrected_potential_exact_form_vanishes() {
        // curl-free custom potential: A = grad(sin(x1) x2)
        let comps = vec![
            Expr::parse("cos(x1) * x2").unwrap(),
            Expr::parse("sin(x1)").unwrap(),
        ];
        let a = MagneticPotential::Custom(CustomVector::new(comps));
        let any = AnyPotential::Analytic(a);
        let phase = poincare_phase(&any, [0.7, 0.3, 0.0], &quad()).unwrap();
        let ay = corrected_potential(&any, &phase).unwrap();
        for x in [[1.0, 1.0, 0.0], [-2.0, 0.4, 0.0]] {
            let v = ay.eval(&x);
            assert!(v.iter().all(|c| c.abs() < 1e-10), "{:?}", v);
        }
    }

    #[test]
    fn poincare_phase_rejects_aharonov_bohm() {
        let a = AnyPotential::Analytic(MagneticPotential::AharonovBohm { lambda: 1.0 });
        assert!(poincare_phase(&a, [1.0, 0.0, 0.0], &quad()).is_err());
    }

    #[test]
    fn pregauge_makes_phase_at_origin_vanish() {
        let comps = vec![
            Expr::parse("x2 * x2").unwrap(),
            Expr::parse("x1 * 0.3").unwrap(),
        ];
        let raw = MagneticPotential::Custom(CustomVector::new(comps));
        let tilde = pregauge(&raw, &quad());
        let phase0 = poincare_phase(&tilde, [0.0; 3], &quad()).unwrap();
        for x in [[1.0, -2.0, 0.0], [2.5, 2.5, 0.0]] {
            assert!(phase0.eval(&x).abs() < 1e-12, "{}", phase0.eval(&x));
        }
    }

    fn bump_field(grid: GridSpec) -> ComplexField {
        ComplexField::from_fn(grid, |x| {
            let r2 = x[0] * x[0] + x[1] * x[1];
            if r2 < 4.0 {
                C::new((-2.0 * r2).exp(), 0.5 * x[0] * (-2.0 * r2).exp())
            } else {
                C::new(0.0, 0.0)
            }
        })
    }

    #[test]
    fn magnetic_shift_identity_and_inverse() {
        let g = GridSpec::new(2, 6.0, 49).unwrap();
        let u = bump_field(g);
        let a = AnyPotential::Analytic(MagneticPotential::ConstantField {
            b12: 0.4,
            b13: 0.0,
            b23: 0.0,
        });
        // y = 0: identity (phi_0 = 0 in the pregauged setting)
        let phase0 = poincare_phase(&a, [0.0; 3], &quad()).unwrap();
        let shifted0 = magnetic_shift(&u, &[0.0; 3], &phase0).unwrap();
        let d0 = shifted0.sub(&u).max_abs();
        assert!(d0 < 1e-13);
        // |g_y u| = |u(. - y)| pointwise
        let y = [1.0, -0.5, 0.0];
        let phase = poincare_phase(&a, y, &quad()).unwrap();
        let shifted = magnetic_shift(&u, &y, &phase).unwrap();
        let plain = u.translate(&y).unwrap();
        for (s, p) in shifted.values().iter().zip(plain.values()) {
            assert!((s.norm() - p.norm()).abs() < 1e-13);
        }
        // norms preserved
        for p in [2.0, 3.0] {
            assert!(
                (shifted.lp_norm(p).unwrap() - u.lp_norm(p).unwrap()).abs() < 1e-12
            );
        }
        // inverse composition restores interior-supported fields
        let back = inverse_shift(&shifted, &y, &phase).unwrap();
        assert!(back.sub(&u).max_abs() < 1e-12);
        // mismatched center rejected
        assert!(magnetic_shift(&u, &[0.5, 0.0, 0.0], &phase).is_err());
    }

    #[test]
    fn electric_families() {
        let v = ElectricPotential::Well {
            base: 1.0,
            depth: 0.5,
            width: 1.0,
        };
        assert!((v.eval(&[0.0; 3]) - 0.5).abs() < 1e-15);
        assert!((v.eval(&[10.0, 0.0, 0.0]) - 1.0).abs() < 1e-10);
        let hardy = ElectricPotential::Hardy { mu: 0.2 };
        assert_eq!(hardy.eval(&[0.0, 1.0, 0.0]), 0.0); // singular-node rule
        assert!((hardy.eval(&[2.0, 0.0, 0.0]) + 0.05).abs() < 1e-15);
    }
}
