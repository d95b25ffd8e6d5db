//! Acceptance suite: one test per top-level guarantee, each printing a
//! single PASS/FAIL line (visible with `--nocapture`; failures always
//! surface through the panic message).
//!
//! 1. Dense adjointness: skew transport operator, symmetric PSD
//!    dissipative operator, in both potential formulations.
//! 2. Degeneracy: `J dS/dz = 0` and `R dH/dz = 0` on random states.
//! 3. Isolated conservation: semi-discrete energy conservation and entropy
//!    production; fourth-order fully discrete energy drift.
//! 4. Open-system balance: exact energy booking and entropy inequality
//!    through forced boundary ports.
//! 5. Bracket algebra: anti-symmetry, symmetry, non-negativity, Leibniz,
//!    operator consistency, and the boundary pairing identity.
//! 6. Jacobi identity: rounding-level for linear functionals on spectral
//!    grids; second-order decay for cubic functionals on the central
//!    stencil.
//! 7. Formulation equivalence: both thermal-variable formulations evolve
//!    the same physical trajectory.
//! 8. Oracle equivalence: operator right-hand side vs the independent
//!    weak-form discretization; closed-form gradients vs finite
//!    differences; port outputs vs the adjoint identity.
//! 9. Negative controls: deliberately broken coefficient matrices must
//!    flip `verify` to FAIL (exit code 1).

use metrimix::brackets::{
    boundary_identity_residual, eval_bracket, harmonic_profile, jacobi_residual,
    leibniz_residual, operator_consistency_residual, Block, BracketVariant, JacobiMethod, Scope,
    TestFunctional,
};
use metrimix::cli::{run, Cli, Command, EXIT_CHECK_FAILED, EXIT_OK};
use metrimix::config::Config;
use metrimix::discretize::{Grid, GridKind, Stencil};
use metrimix::dynamics::{simulate, Drive, Integrator};
use metrimix::generic_ops::{
    apply_operator, assemble_dense, compute_ports, convert_state, dense_weight,
    functional_derivatives, random_smooth_state, rhs, Cotangent, MixtureState, OperatorContext,
    OperatorKind, PortMode, RhsMode, Variant,
};
use metrimix::thermostate::{IdealMixtureEos, PhenomenologicalModel, PotentialForm};
use metrimix::weakform::WeakformOracle;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;

// ----- shared model fixtures ----------------------------------------------

fn eos(nu: usize) -> IdealMixtureEos {
    match nu {
        2 => IdealMixtureEos::new(vec![1.0, 2.0], 1.5, vec![0.3, -0.2]),
        3 => IdealMixtureEos::new(vec![1.0, 2.0, 1.5], 1.5, vec![0.3, -0.2, 0.1]),
        _ => unreachable!("fixtures exist for two or three constituents"),
    }
}

fn pheno(nu: usize) -> PhenomenologicalModel {
    match nu {
        2 => PhenomenologicalModel::new(
            0.05,
            0.04,
            0.08,
            vec![0.02, -0.02],
            vec![vec![0.05, -0.05], vec![-0.05, 0.05]],
            vec![vec![1.0], vec![-0.5]],
            vec![1.0, 2.0],
            vec![vec![0.08]],
            vec![0.03],
        )
        .expect("two-constituent coefficient fixture is admissible"),
        3 => PhenomenologicalModel::new(
            0.05,
            0.04,
            0.08,
            vec![0.02, -0.01, -0.01],
            vec![
                vec![0.06, -0.03, -0.03],
                vec![-0.03, 0.05, -0.02],
                vec![-0.03, -0.02, 0.05],
            ],
            vec![vec![1.0], vec![-0.5], vec![0.0]],
            vec![1.0, 2.0, 1.5],
            vec![vec![0.08]],
            vec![0.03],
        )
        .expect("three-constituent coefficient fixture is admissible"),
        _ => unreachable!("fixtures exist for two or three constituents"),
    }
}

/// Smooth analytic state with low-harmonic profiles, resolvable on every
/// refinement level used below.
fn analytic_state(grid: &Grid, nu: usize) -> MixtureState {
    let two_pi = 2.0 * std::f64::consts::PI;
    let f = |x: f64, base: f64, amp: f64, k: f64, ph: f64| {
        base + amp * (two_pi * k * x / grid.length + ph).sin()
    };
    let mut rho = Vec::new();
    for a in 0..nu {
        let base = [1.2, 0.9, 1.0][a];
        let amp = [0.15, 0.1, 0.08][a];
        rho.push(grid.x.iter().map(|&x| f(x, base, amp, 1.0 + a as f64, 0.3 * (a + 1) as f64)).collect());
    }
    MixtureState {
        rho,
        m: [
            grid.x.iter().map(|&x| f(x, 0.0, 0.2, 1.0, 2.0)).collect(),
            grid.x.iter().map(|&x| f(x, 0.0, 0.15, 2.0, 0.4)).collect(),
            grid.x.iter().map(|&x| f(x, 0.0, 0.1, 1.0, 1.5)).collect(),
        ],
        thermal: grid.x.iter().map(|&x| f(x, 0.25, 0.1, 1.0, 0.9)).collect(),
        form: PotentialForm::EnergyForm,
    }
}

/// Quadrature pairing of the element-wise absolute products: the natural
/// magnitude scale for cancellation-sensitive pairings.
fn abs_pair(grid: &Grid, a: &Cotangent, b: &Cotangent) -> f64 {
    let fa = a.flatten();
    let fb = b.flatten();
    let n = grid.n;
    fa.iter()
        .zip(&fb)
        .enumerate()
        .map(|(idx, (x, y))| grid.w[idx % n] * (x * y).abs())
        .sum()
}

fn verdict(label: &str, ok: bool, detail: &str) {
    println!("[{label}] {}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "[{label}] FAIL: {detail}");
}

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn temp_out(tag: &str) -> PathBuf {
    std::env::temp_dir().join(format!("metrimix-acceptance-{tag}-{}", std::process::id()))
}

// ----- 1. dense adjointness ------------------------------------------------

#[test]
fn criterion_1_dense_operator_adjointness_and_positivity() {
    let mut worst_skew = 0.0f64;
    let mut worst_sym = 0.0f64;
    let mut worst_eig = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for nu in [2usize, 3] {
        for n in [8usize, 16] {
            let grid = Grid::new(GridKind::Periodic, Stencil::Central2, n, 2.0).unwrap();
            let eos = eos(nu);
            let pheno = pheno(nu);
            let zs = random_smooth_state(&grid, nu, PotentialForm::EnergyForm, &mut rng);
            let zu = convert_state(&zs, PotentialForm::EntropyForm, &eos).unwrap();
            let w = dense_weight(&grid, nu);
            for (z, variant) in [(&zs, Variant::Energy), (&zu, Variant::Entropy)] {
                let j = assemble_dense(&grid, z, &eos, &pheno, OperatorKind::J, variant, 4096)
                    .unwrap();
                let wj = &w * &j;
                worst_skew = worst_skew.max((&wj + wj.transpose()).norm() / wj.norm());
                let r = assemble_dense(&grid, z, &eos, &pheno, OperatorKind::R, variant, 4096)
                    .unwrap();
                let wr = &w * &r;
                worst_sym = worst_sym.max((&wr - wr.transpose()).norm() / wr.norm());
                let sym = 0.5 * (&wr + wr.transpose());
                let eigs = sym.symmetric_eigenvalues();
                let max_eig = eigs.iter().fold(0.0f64, |m, &e| m.max(e.abs()));
                let min_eig = eigs.iter().fold(f64::INFINITY, |m, &e| m.min(e));
                worst_eig = worst_eig.max(-min_eig / max_eig.max(1.0));
            }
        }
    }
    let ok = worst_skew <= 1e-12 && worst_sym <= 1e-12 && worst_eig <= 1e-10;
    verdict(
        "1 dense adjointness",
        ok,
        &format!(
            "skew residual {worst_skew:.2e} (<= 1e-12), symmetry residual {worst_sym:.2e} \
             (<= 1e-12), eigenvalue deficit {worst_eig:.2e} (<= 1e-10)"
        ),
    );
}

// ----- 2. degeneracy -------------------------------------------------------

#[test]
fn criterion_2_operator_degeneracy_on_random_states() {
    let nu = 2;
    let grid = Grid::new(GridKind::Periodic, Stencil::Central2, 12, 2.0).unwrap();
    let eos = eos(nu);
    let pheno = pheno(nu);
    let mut worst = 0.0f64;
    for (form, variant) in [
        (PotentialForm::EnergyForm, Variant::Energy),
        (PotentialForm::EntropyForm, Variant::Entropy),
    ] {
        let mut rng = ChaCha8Rng::seed_from_u64(202);
        for _ in 0..100 {
            let z = random_smooth_state(&grid, nu, form, &mut rng);
            let (gh, gs, _, _) = functional_derivatives(&grid, &z, &eos, &pheno).unwrap();
            let j_gs = apply_operator(&grid, &z, &eos, &pheno, OperatorKind::J, variant, &gs)
                .unwrap();
            let r_gh = apply_operator(&grid, &z, &eos, &pheno, OperatorKind::R, variant, &gh)
                .unwrap();
            let j_gh = apply_operator(&grid, &z, &eos, &pheno, OperatorKind::J, variant, &gh)
                .unwrap();
            let r_gs = apply_operator(&grid, &z, &eos, &pheno, OperatorKind::R, variant, &gs)
                .unwrap();
            worst = worst.max(j_gs.max_abs() / j_gh.max_abs().max(1.0));
            worst = worst.max(r_gh.max_abs() / r_gs.max_abs().max(1.0));
        }
    }
    verdict(
        "2 degeneracy",
        worst <= 1e-12,
        &format!("max scaled ||J dS/dz||, ||R dH/dz|| over 100 states x 2 formulations: {worst:.2e} (<= 1e-12)"),
    );
}

// ----- 3. isolated conservation -------------------------------------------

#[test]
fn criterion_3_isolated_conservation_and_drift_order() {
    let nu = 2;
    let grid = Grid::new(GridKind::Periodic, Stencil::Central2, 16, 2.0).unwrap();
    let eos = eos(nu);
    let pheno = pheno(nu);
    let mut worst_h = 0.0f64;
    let mut worst_s = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    for _ in 0..100 {
        let z = random_smooth_state(&grid, nu, PotentialForm::EnergyForm, &mut rng);
        let d = rhs(&grid, &z, &eos, &pheno, &RhsMode::Isolated).unwrap();
        let (gh, gs, _, _) = functional_derivatives(&grid, &z, &eos, &pheno).unwrap();
        worst_h = worst_h.max(gh.pair(&grid, &d).abs() / abs_pair(&grid, &gh, &d).max(1.0));
        worst_s = worst_s.max(-gs.pair(&grid, &d) / abs_pair(&grid, &gs, &d).max(1.0));
    }
    // Fully discrete: the energy drift of the explicit fourth-order
    // integrator must vanish at fourth order in the step size.
    let z0 = analytic_state(&grid, nu);
    let horizon = 0.2;
    let mut errors = Vec::new();
    for level in 0..3 {
        let steps = 10 * (1 << level);
        let dt = horizon / steps as f64;
        let traj = simulate(&grid, &z0, &eos, &pheno, Integrator::Rk4, &Drive::Isolated, dt, steps)
            .unwrap();
        errors.push((traj.samples.last().unwrap().h - traj.samples[0].h).abs());
    }
    let slope = (errors[0] / errors[2]).log2() / 2.0;
    let ok = worst_h <= 1e-12 && worst_s <= 1e-12 && (slope - 4.0).abs() <= 0.5;
    verdict(
        "3 isolated conservation",
        ok,
        &format!(
            "max scaled |<dH/dz, rhs>| {worst_h:.2e} (<= 1e-12), entropy deficit {worst_s:.2e} \
             (<= 1e-12), drift slope {slope:.2} (4.0 +/- 0.5)"
        ),
    );
}

// ----- 4. open-system balance ---------------------------------------------

#[test]
fn criterion_4_open_system_port_balance() {
    let cfg = Config::load(&scenario_path("open-forced-heat.toml")).unwrap();
    let grid = cfg.build_grid().unwrap();
    let eos = cfg.build_eos();
    let pheno = cfg.build_pheno().unwrap();
    let drive = cfg.build_drive();
    let z0 = cfg.build_initial(&grid, 0);
    assert_eq!(grid.n, 32, "scenario fixes the resolution");
    assert_eq!(cfg.integrator.steps, 1000, "scenario fixes the horizon");
    let traj = simulate(
        &grid,
        &z0,
        &eos,
        &pheno,
        cfg.integrator.kind,
        &drive,
        cfg.integrator.dt,
        cfg.integrator.steps,
    )
    .unwrap();
    let h_scale = traj.samples[0].h.abs().max(1.0);
    let s_scale = traj.samples[0].s.abs().max(1.0);
    let mut worst_h = 0.0f64;
    let mut worst_s = f64::INFINITY;
    for s in &traj.samples {
        worst_h = worst_h.max(s.res_h.abs() / h_scale);
        worst_s = worst_s.min(s.res_s / s_scale);
    }
    let ok = worst_h <= 1e-10 && worst_s >= -1e-10;
    verdict(
        "4 open balance",
        ok,
        &format!(
            "max scaled |dH/dt - <y_H, u>| {worst_h:.2e} (<= 1e-10), min scaled \
             dS/dt - <y_S, u> {worst_s:.2e} (>= -1e-10) over {} samples",
            traj.samples.len()
        ),
    );
}

// ----- 5. bracket algebra --------------------------------------------------

#[test]
fn criterion_5_bracket_algebra_and_boundary_identity() {
    let nu = 2;
    let eos = eos(nu);
    let pheno = pheno(nu);
    let mut worst_skew = 0.0f64;
    let mut worst_sym = 0.0f64;
    let mut worst_nonneg = 0.0f64;
    let mut worst_leibniz = 0.0f64;
    let mut worst_consistency = 0.0f64;
    for (kind, n) in [(GridKind::Periodic, 16usize), (GridKind::SbpInterval, 16)] {
        let grid = Grid::new(kind, Stencil::Central2, n, 2.0).unwrap();
        let fa = TestFunctional::monomial("a", Block::Rho(0), harmonic_profile(&grid, 1, 0.3), 2);
        let fb = TestFunctional::monomial("b", Block::M(0), harmonic_profile(&grid, 2, 1.1), 2);
        let fc = TestFunctional::monomial("c", Block::Th, harmonic_profile(&grid, 1, 2.0), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(505);
        for bracket in [
            BracketVariant::PoissonEnergy,
            BracketVariant::PoissonEntropy,
            BracketVariant::DissipationEnergy,
            BracketVariant::DissipationEntropy,
        ] {
            let form = bracket.variant().expected_form();
            for _ in 0..10 {
                let z = random_smooth_state(&grid, nu, form, &mut rng);
                let ab = eval_bracket(&grid, &z, &eos, &pheno, bracket, Scope::Full, &fa, &fb)
                    .unwrap();
                let ba = eval_bracket(&grid, &z, &eos, &pheno, bracket, Scope::Full, &fb, &fa)
                    .unwrap();
                let scale = ab.abs().max(ba.abs()).max(1.0);
                if bracket.is_poisson() {
                    worst_skew = worst_skew.max((ab + ba).abs() / scale);
                } else {
                    worst_sym = worst_sym.max((ab - ba).abs() / scale);
                    let aa = eval_bracket(&grid, &z, &eos, &pheno, bracket, Scope::Full, &fa, &fa)
                        .unwrap();
                    worst_nonneg = worst_nonneg.max(-aa / aa.abs().max(1.0));
                }
                let (leib, leib_scale) =
                    leibniz_residual(&grid, &z, &eos, &pheno, bracket, &fa, &fb, &fc).unwrap();
                worst_leibniz = worst_leibniz.max(leib / leib_scale);
                let (cons, cons_scale) =
                    operator_consistency_residual(&grid, &z, &eos, &pheno, bracket, &fa, &fb)
                        .unwrap();
                worst_consistency = worst_consistency.max(cons / cons_scale);
            }
        }
    }
    // Boundary identity: the port pairing <dA/dz, B u> must equal the
    // negated boundary brackets with the generating potentials.
    let grid = Grid::new(GridKind::SbpInterval, Stencil::Central2, 16, 2.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(506);
    let mut worst_boundary = 0.0f64;
    for _ in 0..10 {
        let z = random_smooth_state(&grid, nu, PotentialForm::EnergyForm, &mut rng);
        let phi_state = random_smooth_state(&grid, nu, PotentialForm::EnergyForm, &mut rng);
        let mut phi = Cotangent::zeros(nu, grid.n);
        phi.rho = phi_state.rho.clone();
        phi.m = phi_state.m.clone();
        phi.th = phi_state.thermal.clone();
        let (res, scale) = boundary_identity_residual(&grid, &z, &eos, &pheno, &phi).unwrap();
        worst_boundary = worst_boundary.max(res / scale);
    }
    let ok = worst_skew <= 1e-12
        && worst_sym <= 1e-12
        && worst_nonneg <= 1e-12
        && worst_leibniz <= 1e-12
        && worst_consistency <= 1e-10
        && worst_boundary <= 1e-10;
    verdict(
        "5 bracket algebra",
        ok,
        &format!(
            "anti-symmetry {worst_skew:.2e}, symmetry {worst_sym:.2e}, negativity \
             {worst_nonneg:.2e}, Leibniz {worst_leibniz:.2e} (all <= 1e-12); operator \
             consistency {worst_consistency:.2e}, boundary identity {worst_boundary:.2e} \
             (both <= 1e-10)"
        ),
    );
}

// ----- 6. Jacobi identity --------------------------------------------------

#[test]
fn criterion_6_jacobi_identity() {
    let nu = 2;
    let eos = eos(nu);
    let pheno = pheno(nu);
    // Linear functionals, spectral derivative: every product stays below
    // the aliasing limit, so the continuum cancellations survive exactly.
    let grid = Grid::new(GridKind::Periodic, Stencil::Spectral, 16, 2.0).unwrap();
    let z = analytic_state(&grid, nu);
    let fa = TestFunctional::monomial("a", Block::M(0), harmonic_profile(&grid, 1, 0.2), 1);
    let fb = TestFunctional::monomial("b", Block::M(0), harmonic_profile(&grid, 1, 1.0), 1);
    let fc = TestFunctional::monomial("c", Block::Rho(0), harmonic_profile(&grid, 2, 0.5), 1);
    let spectral =
        jacobi_residual(&grid, &z, &eos, &pheno, [&fa, &fb, &fc], JacobiMethod::ClosedForm)
            .unwrap();
    let spectral_scaled = spectral.residual / spectral.scale;
    // Cubic functionals, second-order stencil: the residual is a pure
    // truncation error and must decay at the stencil's order.
    let residual_at = |n: usize| -> f64 {
        let grid = Grid::new(GridKind::Periodic, Stencil::Central2, n, 2.0).unwrap();
        let z = analytic_state(&grid, nu);
        let fa = TestFunctional::monomial("a", Block::M(0), harmonic_profile(&grid, 1, 0.2), 3);
        let fb = TestFunctional::monomial("b", Block::M(0), harmonic_profile(&grid, 1, 2.2), 3);
        let fc = TestFunctional::monomial("c", Block::Rho(0), harmonic_profile(&grid, 1, 0.5), 3);
        jacobi_residual(&grid, &z, &eos, &pheno, [&fa, &fb, &fc], JacobiMethod::ClosedForm)
            .unwrap()
            .residual
    };
    let r16 = residual_at(16);
    let r32 = residual_at(32);
    let r64 = residual_at(64);
    let ratio_a = r16 / r32;
    let ratio_b = r32 / r64;
    let ok = spectral_scaled <= 1e-8 && r16 > 1e-10 && ratio_a >= 3.5 && ratio_b >= 3.5;
    verdict(
        "6 Jacobi identity",
        ok,
        &format!(
            "spectral linear residual {spectral_scaled:.2e} (<= 1e-8); cubic refinement \
             {r16:.2e} -> {r32:.2e} -> {r64:.2e}, ratios {ratio_a:.2}, {ratio_b:.2} (>= 3.5)"
        ),
    );
}

// ----- 7. formulation equivalence -----------------------------------------

#[test]
fn criterion_7_formulation_equivalence() {
    let nu = 2;
    let grid = Grid::new(GridKind::Periodic, Stencil::Central2, 32, 2.0).unwrap();
    let eos = eos(nu);
    let pheno = pheno(nu);
    let z0 = analytic_state(&grid, nu);
    let u0 = convert_state(&z0, PotentialForm::EntropyForm, &eos).unwrap();
    let dt = 0.001;
    let steps = 100;
    let traj_s =
        simulate(&grid, &z0, &eos, &pheno, Integrator::Rk4, &Drive::Isolated, dt, steps).unwrap();
    let traj_u =
        simulate(&grid, &u0, &eos, &pheno, Integrator::Rk4, &Drive::Isolated, dt, steps).unwrap();
    let zs = traj_s.final_state;
    // Reconstruct the energy-formulation thermal variable from the
    // entropy-formulation endpoint for a like-for-like comparison.
    let zu = convert_state(&traj_u.final_state, PotentialForm::EnergyForm, &eos).unwrap();
    let mut scale = 0.0f64;
    let mut diff = 0.0f64;
    let mut fields: Vec<(&Vec<f64>, &Vec<f64>)> = Vec::new();
    for a in 0..nu {
        fields.push((&zs.rho[a], &zu.rho[a]));
    }
    for c in 0..3 {
        fields.push((&zs.m[c], &zu.m[c]));
    }
    fields.push((&zs.thermal, &zu.thermal));
    for (fs, fu) in fields {
        for (x, y) in fs.iter().zip(fu) {
            scale = scale.max(x.abs()).max(y.abs());
            diff = diff.max((x - y).abs());
        }
    }
    let rel = diff / scale;
    verdict(
        "7 formulation equivalence",
        rel <= 1e-6,
        &format!("relative trajectory gap after {steps} explicit steps: {rel:.2e} (<= 1e-6)"),
    );
}

// ----- 8. oracle equivalence ----------------------------------------------

#[test]
fn criterion_8_independent_oracles() {
    let nu = 2;
    let eos = eos(nu);
    let pheno = pheno(nu);
    // Right-hand side vs the independently coded weak-form discretization,
    // isolated and with self-consistent ports.
    let mut worst_rhs = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    for (kind, count) in [(GridKind::Periodic, 10usize), (GridKind::SbpInterval, 10)] {
        let grid = Grid::new(kind, Stencil::Central2, 16, 2.0).unwrap();
        let oracle = WeakformOracle::new(kind, Stencil::Central2, 16, 2.0);
        for _ in 0..count {
            let z = random_smooth_state(&grid, nu, PotentialForm::EnergyForm, &mut rng);
            let (d, ports) = if grid.boundary().is_empty() {
                (rhs(&grid, &z, &eos, &pheno, &RhsMode::Isolated).unwrap(), None)
            } else {
                let p = compute_ports(&grid, &z, &eos, &pheno, &PortMode::SelfConsistent).unwrap();
                let u = p.u_vectors();
                (rhs(&grid, &z, &eos, &pheno, &RhsMode::Open(p)).unwrap(), Some(u))
            };
            let d_oracle = oracle.rhs_oracle(&z, &eos, &pheno, ports.as_deref()).unwrap();
            let mut gap = d.clone();
            gap.axpy(-1.0, &d_oracle);
            worst_rhs =
                worst_rhs.max(gap.max_abs() / d.max_abs().max(d_oracle.max_abs()).max(1.0));
        }
    }
    // Closed-form potential gradients vs per-DOF central differences.
    let grid = Grid::new(GridKind::Periodic, Stencil::Central2, 8, 2.0).unwrap();
    let z = analytic_state(&grid, nu);
    let (gh, gs, _, _) = functional_derivatives(&grid, &z, &eos, &pheno).unwrap();
    let fd_of = |which: usize| -> Cotangent {
        let mut g = Cotangent::zeros(nu, grid.n);
        let eps = 1e-6;
        for b in 0..nu + 4 {
            for j in 0..grid.n {
                let perturb = |sign: f64| -> f64 {
                    let mut zp = z.clone();
                    let f = match b {
                        b if b < nu => &mut zp.rho[b],
                        b if b < nu + 3 => &mut zp.m[b - nu],
                        _ => &mut zp.thermal,
                    };
                    f[j] += sign * eps;
                    let ctx = OperatorContext::new(&grid, &zp, &eos, &pheno).unwrap();
                    if which == 0 {
                        ctx.total_energy()
                    } else {
                        ctx.total_entropy()
                    }
                };
                let val = (perturb(1.0) - perturb(-1.0)) / (2.0 * eps * grid.w[j]);
                let f = match b {
                    b if b < nu => &mut g.rho[b],
                    b if b < nu + 3 => &mut g.m[b - nu],
                    _ => &mut g.th,
                };
                f[j] = val;
            }
        }
        g
    };
    let mut worst_fd = 0.0f64;
    for (closed, which) in [(&gh, 0usize), (&gs, 1)] {
        let fd = fd_of(which);
        let mut gap = closed.clone();
        gap.axpy(-1.0, &fd);
        worst_fd = worst_fd.max(gap.max_abs() / closed.max_abs().max(1.0));
    }
    // Equation of state: closed-form temperature and chemical potentials vs
    // finite differences of the internal-energy density.
    let mut worst_eos = 0.0f64;
    for i in 0..grid.n {
        let rho: Vec<f64> = (0..nu).map(|a| z.rho[a][i]).collect();
        let s = z.thermal[i];
        let point = eos.eval(&rho, s, PotentialForm::EnergyForm).unwrap();
        let eps = 1e-6;
        let u_at = |rho: &[f64], s: f64| -> f64 {
            eos.eval(rho, s, PotentialForm::EnergyForm).unwrap().u
        };
        let duds = (u_at(&rho, s + eps) - u_at(&rho, s - eps)) / (2.0 * eps);
        worst_eos = worst_eos.max((duds - point.t).abs() / point.t.abs().max(1.0));
        for a in 0..nu {
            let mut rp = rho.clone();
            let mut rm = rho.clone();
            rp[a] += eps;
            rm[a] -= eps;
            let dudr = (u_at(&rp, s) - u_at(&rm, s)) / (2.0 * eps);
            worst_eos = worst_eos.max((dudr - point.mu[a]).abs() / point.mu[a].abs().max(1.0));
        }
    }
    // Test functionals: closed-form gradients vs their finite-difference
    // oracles.
    let mut worst_fun = 0.0f64;
    for f in [
        TestFunctional::monomial("m", Block::Rho(0), harmonic_profile(&grid, 1, 0.3), 3),
        TestFunctional::grad_chi("g", Block::Th, harmonic_profile(&grid, 2, 0.7)),
        TestFunctional::advection("adv", Block::Rho(1), Block::M(0), harmonic_profile(&grid, 1, 1.2)),
    ] {
        let closed = f.gradient(&grid, &z);
        let fd = f.fd_gradient(&grid, &z, 1e-6);
        let mut gap = closed.clone();
        gap.axpy(-1.0, &fd);
        worst_fun = worst_fun.max(gap.max_abs() / closed.max_abs().max(1.0));
    }
    // Ports: the closed-form outputs must satisfy the adjoint identity
    // <y(phi), u> = <phi, B u> for random cotangents and inputs.
    let grid_b = Grid::new(GridKind::SbpInterval, Stencil::Central2, 12, 2.0).unwrap();
    let mut worst_port = 0.0f64;
    {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(809);
        for _ in 0..10 {
            let zb = random_smooth_state(&grid_b, nu, PotentialForm::EnergyForm, &mut rng);
            let ctx = OperatorContext::new(&grid_b, &zb, &eos, &pheno).unwrap();
            let phi_state = random_smooth_state(&grid_b, nu, PotentialForm::EnergyForm, &mut rng);
            let mut phi = Cotangent::zeros(nu, grid_b.n);
            phi.rho = phi_state.rho.clone();
            phi.m = phi_state.m.clone();
            phi.th = phi_state.thermal.clone();
            let u: Vec<Vec<f64>> = (0..2)
                .map(|_| (0..ctx.port_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let y = ctx.port_output_core(&phi);
            let direct: f64 = y
                .iter()
                .zip(&u)
                .map(|(yp, up)| yp.iter().zip(up).map(|(a, b)| a * b).sum::<f64>())
                .sum();
            let adjoint = ctx.b_pairing_core(&phi, &u);
            worst_port =
                worst_port.max((direct - adjoint).abs() / direct.abs().max(adjoint.abs()).max(1.0));
        }
    }
    let ok = worst_rhs <= 1e-10
        && worst_fd <= 1e-6
        && worst_eos <= 1e-6
        && worst_fun <= 1e-6
        && worst_port <= 1e-10;
    verdict(
        "8 independent oracles",
        ok,
        &format!(
            "rhs vs weak form {worst_rhs:.2e} (<= 1e-10); finite-difference gaps: potentials \
             {worst_fd:.2e}, equation of state {worst_eos:.2e}, functionals {worst_fun:.2e} \
             (all <= 1e-6); port adjoint identity {worst_port:.2e} (<= 1e-10)"
        ),
    );
}

// ----- 9. negative controls -----------------------------------------------

#[test]
fn criterion_9_negative_controls_flip_verify_to_fail() {
    let cases = [
        ("negative-diffusion-row-sums.toml", EXIT_CHECK_FAILED),
        ("negative-reaction-psd.toml", EXIT_CHECK_FAILED),
        ("reference-isolated.toml", EXIT_OK),
    ];
    let mut all_ok = true;
    let mut details = Vec::new();
    for (name, expected) in cases {
        let out = temp_out(name);
        let code = run(Cli {
            config: Some(scenario_path(name)),
            out: out.clone(),
            seed: 0,
            tol_scale: 1.0,
            quiet: true,
            command: Command::Verify,
        });
        let _ = std::fs::remove_dir_all(&out);
        if code != expected {
            all_ok = false;
        }
        details.push(format!("{name}: exit {code} (want {expected})"));
    }
    verdict("9 negative controls", all_ok, &details.join("; "));
}
