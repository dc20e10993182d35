//! Discrete magnetic variational toolkit: Peierls-phase discretizations of
//! magnetic Schrödinger energies on truncated boxes, ground-state solvers
//! for the associated L^p-constrained minimization, translated limit
//! problems with penalty diagnostics, and profile extraction for
//! minimizing sequences.

pub mod energy;
pub mod expr;
pub mod gauge;
pub mod grid;
pub mod infinity;
pub mod io;
pub mod profiles;
pub mod solver;

pub use gauge::{
    b_sup_norm, corrected_potential, curl, inverse_shift, magnetic_shift, poincare_phase,
    pregauge, AnyPotential, CustomVector, ElectricPotential, FieldStrength, GaugeError,
    GaugePhase, MagneticPotential, PoincarePotential, PotentialSpec, Quadrature,
};
pub use grid::{ComplexField, DiscretizationSpec, GridError, GridSpec, RealField};
pub use io::{read_field, write_field, DumpError, DumpHeader};
