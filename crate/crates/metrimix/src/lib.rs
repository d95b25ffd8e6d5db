//! Structure-preserving simulator and verification harness for metriplectic
//! (GENERIC) dynamics of reactive multicomponent Newtonian fluid mixtures.
//!
//! The evolution has the form `dz/dt = J dH/dz + R dS/dz + B u`, where `J`
//! is skew-adjoint, `R` is self-adjoint positive semi-definite, and the
//! degeneracy conditions `J dS/dz = 0`, `R dH/dz = 0` separate reversible
//! from irreversible dynamics. `B` couples the bulk to boundary ports
//! `(u, y_H, y_S)` so that `dH/dt = <y_H, u>` and `dS/dt >= <y_S, u>`.
//!
//! Modules:
//! - [`discretize`]: pseudo-1D grids, SBP derivatives, quadrature, tensors.
//! - [`thermostate`]: equations of state, phenomenological coefficients
//!   with Onsager-Casimir structure, constitutive fluxes, entropy production.
//! - [`generic_ops`]: functional derivatives, the J/R/B operators in both
//!   potential formulations, ports, and the semi-discrete right-hand side.
//! - [`weakform`]: an independently coded weak-form discretization used as
//!   a cross-check oracle for the operator route.
//! - [`brackets`]: Poisson/dissipation bracket evaluation on test
//!   functionals; anti-symmetry, Leibniz, degeneracy, and Jacobi checks.
//! - [`dynamics`]: time integration with energy/entropy balance monitors.
//! - [`config`] and [`cli`]: scenario files, subcommands, reports.

pub mod brackets;
pub mod cli;
pub mod config;
pub mod discretize;
pub mod dynamics;
pub mod generic_ops;
pub mod report;
pub mod thermostate;
pub mod weakform;
