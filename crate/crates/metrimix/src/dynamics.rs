//! Time integration of the semi-discrete evolution with energy/entropy
//! balance monitoring.
//!
//! Every accepted step records the instantaneous totals `H`, `S`, the port
//! supply pairings `<y_H, u>`, `<y_S, u>`, and the balance residuals
//! `resH = <dH/dz, dz/dt> - <y_H, u>` (zero to rounding by the operator
//! degeneracies) and `resS = <dS/dz, dz/dt> - <y_S, u>` (non-negative: the
//! bulk entropy production).
//!
//! Steps whose result leaves the admissible set (total density below the
//! floor, non-positive temperature) are rejected and retried as two half
//! steps, recursively, up to a depth limit.

use crate::discretize::Grid;
use crate::generic_ops::{
    compute_ports_ctx, rhs_ctx, Cotangent, MixtureState, OperatorContext, OperatorError,
    PortMode, PortSignals, RhsMode,
};
use crate::thermostate::{IdealMixtureEos, PhenomenologicalModel};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Time-stepping scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    /// Classical explicit fourth-order Runge-Kutta.
    Rk4,
    /// Implicit midpoint rule, solved by damped fixed-point iteration.
    ImplicitMidpoint,
}

/// A sinusoidal override of one port input component at one boundary point:
/// `value(t) = offset + amplitude * sin(2 pi frequency t)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcedComponent {
    /// Boundary point index (in the grid's boundary order).
    pub point: usize,
    /// Port input component index.
    pub component: usize,
    pub offset: f64,
    pub amplitude: f64,
    pub frequency: f64,
}

/// How the boundary is driven during a simulation.
#[derive(Debug, Clone)]
pub enum Drive {
    /// No boundary term (periodic grids).
    Isolated,
    /// Ports computed from boundary traces of the running state.
    SelfConsistent,
    /// Self-consistent ports with prescribed time-dependent overrides.
    Forced(Vec<ForcedComponent>),
}

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error("implicit solve failed at t = {t}: residual {residual:.3e} after {iters} iterations")]
    NoConvergence { t: f64, iters: usize, residual: f64 },
    #[error("step at t = {t} rejected beyond the halving depth limit")]
    StepRejected { t: f64 },
}

/// One balance sample along a trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BalanceSample {
    pub t: f64,
    pub h: f64,
    pub s: f64,
    pub yh_u: f64,
    pub ys_u: f64,
    pub res_h: f64,
    pub res_s: f64,
}

/// Result of a simulation run.
#[derive(Debug)]
pub struct Trajectory {
    /// One sample per accepted macro step, including the initial time.
    pub samples: Vec<BalanceSample>,
    pub final_state: MixtureState,
    /// Number of rejected (halved) step attempts.
    pub rejected_steps: usize,
}

fn port_mode_at(drive: &Drive, grid: &Grid, t: f64) -> Option<PortMode> {
    match drive {
        Drive::Isolated => None,
        Drive::SelfConsistent => Some(PortMode::SelfConsistent),
        Drive::Forced(components) => {
            let n_bd = grid.boundary().len();
            let mut overrides: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_bd];
            for f in components {
                let value = f.offset
                    + f.amplitude * (2.0 * std::f64::consts::PI * f.frequency * t).sin();
                overrides[f.point].push((f.component, value));
            }
            Some(PortMode::Forced(overrides))
        }
    }
}

/// Right-hand side and (for open systems) the port signals at a state/time.
fn rhs_at(
    grid: &Grid,
    z: &MixtureState,
    eos: &IdealMixtureEos,
    pheno: &PhenomenologicalModel,
    drive: &Drive,
    t: f64,
) -> Result<(Cotangent, Option<PortSignals>), OperatorError> {
    let ctx = OperatorContext::new(grid, z, eos, pheno)?;
    match port_mode_at(drive, grid, t) {
        None => Ok((rhs_ctx(&ctx, &RhsMode::Isolated)?, None)),
        Some(mode) => {
            let ports = compute_ports_ctx(&ctx, &mode)?;
            let d = rhs_ctx(&ctx, &RhsMode::Open(ports.clone()))?;
            Ok((d, Some(ports)))
        }
    }
}

fn state_axpy(z: &mut MixtureState, alpha: f64, d: &Cotangent) {
    for (a, r) in z.rho.iter_mut().enumerate() {
        for (i, v) in r.iter_mut().enumerate() {
            *v += alpha * d.rho[a][i];
        }
    }
    for c in 0..3 {
        for (i, v) in z.m[c].iter_mut().enumerate() {
            *v += alpha * d.m[c][i];
        }
    }
    for (i, v) in z.thermal.iter_mut().enumerate() {
        *v += alpha * d.th[i];
    }
}

fn advanced(z: &MixtureState, alpha: f64, d: &Cotangent) -> MixtureState {
    let mut out = z.clone();
    state_axpy(&mut out, alpha, d);
    out
}

/// Tolerance for the implicit midpoint fixed-point solve, relative to the
/// stage magnitude.
const IMPLICIT_TOL: f64 = 1e-10;
const IMPLICIT_MAX_ITERS: usize = 400;
const IMPLICIT_DAMPING: f64 = 0.8;
const MAX_HALVING_DEPTH: usize = 12;

fn rk4_step(
    grid: &Grid,
    z: &MixtureState,
    eos: &IdealMixtureEos,
    pheno: &PhenomenologicalModel,
    drive: &Drive,
    t: f64,
    dt: f64,
) -> Result<MixtureState, OperatorError> {
    let (k1, _) = rhs_at(grid, z, eos, pheno, drive, t)?;
    let (k2, _) = rhs_at(grid, &advanced(z, 0.5 * dt, &k1), eos, pheno, drive, t + 0.5 * dt)?;
    let (k3, _) = rhs_at(grid, &advanced(z, 0.5 * dt, &k2), eos, pheno, drive, t + 0.5 * dt)?;
    let (k4, _) = rhs_at(grid, &advanced(z, dt, &k3), eos, pheno, drive, t + dt)?;
    let mut out = z.clone();
    state_axpy(&mut out, dt / 6.0, &k1);
    state_axpy(&mut out, dt / 3.0, &k2);
    state_axpy(&mut out, dt / 3.0, &k3);
    state_axpy(&mut out, dt / 6.0, &k4);
    Ok(out)
}

fn implicit_midpoint_step(
    grid: &Grid,
    z: &MixtureState,
    eos: &IdealMixtureEos,
    pheno: &PhenomenologicalModel,
    drive: &Drive,
    t: f64,
    dt: f64,
) -> Result<MixtureState, DynamicsError> {
    // Solve k = f(t + dt/2, z + (dt/2) k) by damped fixed-point iteration
    // started from the explicit slope.
    let (mut k, _) = rhs_at(grid, z, eos, pheno, drive, t)?;
    let t_mid = t + 0.5 * dt;
    let mut residual = f64::INFINITY;
    for iter in 0..IMPLICIT_MAX_ITERS {
        let (k_new, _) = rhs_at(grid, &advanced(z, 0.5 * dt, &k), eos, pheno, drive, t_mid)?;
        let mut diff = k_new.clone();
        diff.axpy(-1.0, &k);
        let scale = 1.0f64.max(k_new.max_abs());
        residual = diff.max_abs() / scale;
        let mut next = k.clone();
        next.scale(1.0 - IMPLICIT_DAMPING);
        next.axpy(IMPLICIT_DAMPING, &k_new);
        k = next;
        if residual <= IMPLICIT_TOL {
            return Ok(advanced(z, dt, &k));
        }
        let _ = iter;
    }
    Err(DynamicsError::NoConvergence { t, iters: IMPLICIT_MAX_ITERS, residual })
}

/// Verifies the new state is admissible by evaluating the EOS everywhere.
fn admissible(z: &MixtureState, eos: &IdealMixtureEos) -> bool {
    crate::generic_ops::nodal_thermo(z, eos).is_ok()
}

#[allow(clippy::too_many_arguments)]
fn try_step(
    grid: &Grid,
    z: &MixtureState,
    eos: &IdealMixtureEos,
    pheno: &PhenomenologicalModel,
    integrator: Integrator,
    drive: &Drive,
    t: f64,
    dt: f64,
    depth: usize,
    rejected: &mut usize,
) -> Result<MixtureState, DynamicsError> {
    let attempt = match integrator {
        Integrator::Rk4 => rk4_step(grid, z, eos, pheno, drive, t, dt).map_err(Into::into),
        Integrator::ImplicitMidpoint => {
            implicit_midpoint_step(grid, z, eos, pheno, drive, t, dt)
        }
    };
    match attempt {
        Ok(candidate) if admissible(&candidate, eos) => return Ok(candidate),
        // Inadmissible result or inadmissible intermediate stage: treat as
        // a rejected attempt and retry with half steps below.
        Ok(_) | Err(DynamicsError::Operator(OperatorError::Thermo(_))) => {}
        Err(e) => return Err(e),
    }
    if depth >= MAX_HALVING_DEPTH {
        return Err(DynamicsError::StepRejected { t });
    }
    *rejected += 1;
    let half = 0.5 * dt;
    let mid = try_step(grid, z, eos, pheno, integrator, drive, t, half, depth + 1, rejected)?;
    try_step(grid, &mid, eos, pheno, integrator, drive, t + half, half, depth + 1, rejected)
}

/// Balance sample at a state/time: totals, port supplies, and residuals.
pub fn balance_sample(
    grid: &Grid,
    z: &MixtureState,
    eos: &IdealMixtureEos,
    pheno: &PhenomenologicalModel,
    drive: &Drive,
    t: f64,
) -> Result<BalanceSample, OperatorError> {
    let ctx = OperatorContext::new(grid, z, eos, pheno)?;
    let (grad_h, grad_s) = ctx.functional_derivatives();
    let (d, ports) = match port_mode_at(drive, grid, t) {
        None => (rhs_ctx(&ctx, &RhsMode::Isolated)?, None),
        Some(mode) => {
            let ports = compute_ports_ctx(&ctx, &mode)?;
            (rhs_ctx(&ctx, &RhsMode::Open(ports.clone()))?, Some(ports))
        }
    };
    let (yh_u, ys_u) = match &ports {
        Some(p) => (p.pair_yh(), p.pair_ys()),
        None => (0.0, 0.0),
    };
    Ok(BalanceSample {
        t,
        h: ctx.total_energy(),
        s: ctx.total_entropy(),
        yh_u,
        ys_u,
        res_h: grad_h.pair(grid, &d) - yh_u,
        res_s: grad_s.pair(grid, &d) - ys_u,
    })
}

/// Integrates `steps` macro steps of size `dt`, recording a balance sample
/// at the initial time and after every accepted macro step.
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    grid: &Grid,
    z0: &MixtureState,
    eos: &IdealMixtureEos,
    pheno: &PhenomenologicalModel,
    integrator: Integrator,
    drive: &Drive,
    dt: f64,
    steps: usize,
) -> Result<Trajectory, DynamicsError> {
    assert!(dt > 0.0, "time step must be positive");
    let mut z = z0.clone();
    let mut rejected = 0usize;
    let mut samples = Vec::with_capacity(steps + 1);
    samples.push(balance_sample(grid, &z, eos, pheno, drive, 0.0)?);
    for step in 0..steps {
        let t = step as f64 * dt;
        z = try_step(grid, &z, eos, pheno, integrator, drive, t, dt, 0, &mut rejected)?;
        samples.push(balance_sample(grid, &z, eos, pheno, drive, t + dt)?);
    }
    Ok(Trajectory { samples, final_state: z, rejected_steps: rejected })
}

/// Renders a trajectory as CSV with a fixed header and deterministic
/// full-precision formatting.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut out = String::from("t,H,S,yHu,ySu,resH,resS\n");
    for s in &traj.samples {
        out.push_str(&format!(
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
            s.t, s.h, s.s, s.yh_u, s.ys_u, s.res_h, s.res_s
        ));
    }
    out
}
