//! Command-line interface: scenario loading, subcommand dispatch, and
//! machine-readable reporting.
//!
//! Subcommands:
//! - `verify`: full structural invariant suite (adjointness, PSD,
//!   degeneracy, bracket properties, port identities, oracles) with a JSON
//!   report of per-check residuals.
//! - `simulate`: time integration with trajectory CSV and a JSON balance
//!   summary.
//! - `jacobi`: Jacobi-identity refinement study CSV.
//! - `eos-check`: equation-of-state consistency report.
//!
//! Exit codes: 0 when every check passes, 1 on check failure, 2 on
//! configuration errors.

use crate::brackets::{
    boundary_identity_residual, degeneracy_residuals, eval_bracket, harmonic_profile,
    jacobi_residual, leibniz_residual, operator_consistency_residual, Block, BracketVariant,
    JacobiMethod, Scope, TestFunctional,
};
use crate::config::{Config, ModeKind};
use crate::discretize::{Grid, GridKind, Stencil};
use crate::dynamics::{
    balance_sample, simulate, trajectory_csv, BalanceSample, DynamicsError, Trajectory,
};
use crate::generic_ops::{
    apply_operator_ctx, assemble_dense, compute_ports_ctx, convert_state, dense_weight,
    random_smooth_state, rhs_ctx, MixtureState, OperatorContext, OperatorKind,
    PortMode, RhsMode, Variant,
};
use crate::report::{CheckItem, Report};
use crate::thermostate::{validate_model, IdealMixtureEos, PotentialForm};
use crate::weakform::WeakformOracle;
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use serde::Serialize;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG_ERROR: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "metrimix", version, about = "Structure-preserving mixture dynamics: verification and simulation")]
pub struct Cli {
    /// Scenario configuration file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for reports and trajectories.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Seed for randomized checks and random initial profiles.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Global multiplier applied to every tolerance.
    #[arg(long, global = true, default_value_t = 1.0)]
    pub tol_scale: f64,
    /// Suppress terminal output.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run the structural invariant suite and write a JSON report.
    Verify,
    /// Integrate the scenario; write trajectory CSV and a JSON summary.
    Simulate,
    /// Run the Jacobi-identity study; write a refinement CSV.
    Jacobi,
    /// Check equation-of-state consistency; write a JSON report.
    EosCheck,
}

/// JSON wrapper recording the inputs that shaped a report.
#[derive(Serialize)]
struct ReportDocument<'a> {
    command: &'a str,
    seed: u64,
    tol_scale: f64,
    passed: bool,
    checks: &'a Report,
}

#[derive(Serialize)]
struct SimulationSummary {
    seed: u64,
    dt: f64,
    steps: usize,
    rejected_steps: usize,
    h_initial: f64,
    h_final: f64,
    s_initial: f64,
    s_final: f64,
    /// Trapezoidal time integrals of the port supplies.
    yh_integral: f64,
    ys_integral: f64,
    max_abs_res_h: f64,
    min_res_s: f64,
    passed: bool,
    checks: Report,
}

/// Entry point used by the binary; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let config_path = match &cli.config {
        Some(p) => p.clone(),
        None => {
            eprintln!("error: --config PATH is required");
            return EXIT_CONFIG_ERROR;
        }
    };
    let cfg = match Config::load(&config_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG_ERROR;
        }
    };
    if let Err(e) = std::fs::create_dir_all(&cli.out) {
        eprintln!("error: cannot create output directory {}: {e}", cli.out.display());
        return EXIT_CONFIG_ERROR;
    }
    let outcome = match cli.command {
        Command::Verify => run_verify(&cfg, &cli),
        Command::Simulate => run_simulate(&cfg, &cli),
        Command::Jacobi => run_jacobi(&cfg, &cli),
        Command::EosCheck => run_eos_check(&cfg, &cli),
    };
    match outcome {
        Ok(passed) => {
            if passed {
                EXIT_OK
            } else {
                EXIT_CHECK_FAILED
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG_ERROR
        }
    }
}

fn write_report(
    path: &Path,
    command: &str,
    cli: &Cli,
    report: &Report,
) -> Result<(), anyhow::Error> {
    let doc = ReportDocument {
        command,
        seed: cli.seed,
        tol_scale: cli.tol_scale,
        passed: report.passed(),
        checks: report,
    };
    std::fs::write(path, serde_json::to_string_pretty(&doc)? + "\n")?;
    Ok(())
}

fn announce(cli: &Cli, report: &Report) {
    if !cli.quiet {
        print!("{}", report.render_lines());
        println!("overall: {}", if report.passed() { "PASS" } else { "FAIL" });
    }
}

// ----- verify --------------------------------------------------------------

fn run_verify(cfg: &Config, cli: &Cli) -> Result<bool, anyhow::Error> {
    let report = verify_report(cfg, cli.seed, cli.tol_scale)?;
    write_report(&cli.out.join(&cfg.output.report), "verify", cli, &report)?;
    announce(cli, &report);
    Ok(report.passed())
}

/// The full invariant suite for a scenario.
pub fn verify_report(cfg: &Config, seed: u64, ts: f64) -> Result<Report, anyhow::Error> {
    let grid = cfg.build_grid()?;
    let eos = cfg.build_eos();
    let pheno = cfg.build_pheno()?;
    let tol = &cfg.tolerances;
    let mut report = Report::default();

    // Coefficient structure (row sums, symmetry, PSD, Onsager-Casimir).
    for item in validate_model(&pheno, &[0.5, 1.0, 2.0]).checks {
        report.push(item);
    }

    // Dense operator structure: skewness of the transport operator,
    // symmetry and PSD of the dissipation operator, both formulations.
    let dense_grid = dense_check_grid(&grid, cfg.nu())?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for variant in [Variant::Energy, Variant::Entropy] {
        let form = variant.expected_form();
        let z = random_smooth_state(&dense_grid, cfg.nu(), form, &mut rng);
        let w = dense_weight(&dense_grid, cfg.nu());
        let j = assemble_dense(&dense_grid, &z, &eos, &pheno, OperatorKind::J, variant, 2048)?;
        let wj = &w * &j;
        let skew = (&wj + wj.transpose()).norm() / wj.norm().max(1.0);
        report.push(CheckItem::bounded(
            format!("dense-transport-skew-{variant:?}"),
            skew,
            tol.adjointness * ts,
            format!("N = {}, ||WJ|| = {:.3e}", dense_grid.n, wj.norm()),
        ));
        let r = assemble_dense(&dense_grid, &z, &eos, &pheno, OperatorKind::R, variant, 2048)?;
        let wr = &w * &r;
        let sym = (&wr - wr.transpose()).norm() / wr.norm().max(1.0);
        report.push(CheckItem::bounded(
            format!("dense-dissipation-symmetric-{variant:?}"),
            sym,
            tol.adjointness * ts,
            format!("N = {}", dense_grid.n),
        ));
        let symm = 0.5 * (&wr + wr.transpose());
        let min_eig = symm
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        let scale = wr.norm().max(1.0);
        report.push(CheckItem::lower_bounded(
            format!("dense-dissipation-psd-{variant:?}"),
            min_eig / scale,
            tol.psd * ts,
            format!("min eigenvalue {min_eig:.3e}, scale {scale:.3e}"),
        ));
    }

    // Operator degeneracies on random admissible states.
    for variant in [Variant::Energy, Variant::Entropy] {
        let form = variant.expected_form();
        let mut worst_j = 0.0f64;
        let mut worst_r = 0.0f64;
        for _ in 0..20 {
            let z = random_smooth_state(&grid, cfg.nu(), form, &mut rng);
            let ctx = OperatorContext::new(&grid, &z, &eos, &pheno)?;
            let (gh, gs) = ctx.functional_derivatives();
            let jgs = apply_operator_ctx(&ctx, OperatorKind::J, variant, &gs);
            let jgh = apply_operator_ctx(&ctx, OperatorKind::J, variant, &gh);
            let rgh = apply_operator_ctx(&ctx, OperatorKind::R, variant, &gh);
            let rgs = apply_operator_ctx(&ctx, OperatorKind::R, variant, &gs);
            worst_j = worst_j.max(jgs.max_abs() / jgh.max_abs().max(1.0));
            worst_r = worst_r.max(rgh.max_abs() / rgs.max_abs().max(1.0));
        }
        report.push(CheckItem::bounded(
            format!("transport-degeneracy-{variant:?}"),
            worst_j,
            tol.degeneracy * ts,
            "max ||J dS/dz|| over 20 random states, scaled by ||J dH/dz||",
        ));
        report.push(CheckItem::bounded(
            format!("dissipation-degeneracy-{variant:?}"),
            worst_r,
            tol.degeneracy * ts,
            "max ||R dH/dz|| over 20 random states, scaled by ||R dS/dz||",
        ));
    }

    // Semi-discrete balance at the configured initial state.
    let z0 = cfg.build_initial(&grid, seed);
    let drive = cfg.build_drive();
    let sample = balance_sample(&grid, &z0, &eos, &pheno, &drive, 0.0)?;
    let h_scale = sample.h.abs().max(1.0);
    let s_scale = sample.s.abs().max(1.0);
    report.push(CheckItem::bounded(
        "energy-balance-residual",
        sample.res_h.abs() / h_scale,
        tol.balance * ts,
        format!("<dH/dz, rhs> - <y_H, u> at t = 0 (H = {:.6e})", sample.h),
    ));
    report.push(CheckItem::lower_bounded(
        "entropy-production-margin",
        sample.res_s / s_scale,
        tol.balance * ts,
        format!("<dS/dz, rhs> - <y_S, u> at t = 0 (S = {:.6e})", sample.s),
    ));

    // Bracket suite in the scenario's formulation.
    bracket_checks(&mut report, &grid, &eos, &pheno, cfg, seed, ts)?;

    // Independently coded weak-form oracle for the right-hand side.
    let oracle = WeakformOracle::new(grid.kind, grid.stencil, grid.n, grid.length);
    let mut worst_oracle = 0.0f64;
    for _ in 0..5 {
        let z = random_smooth_state(&grid, cfg.nu(), PotentialForm::EnergyForm, &mut rng);
        let ctx = OperatorContext::new(&grid, &z, &eos, &pheno)?;
        let (d, ports) = if grid.boundary().is_empty() {
            (rhs_ctx(&ctx, &RhsMode::Isolated)?, None)
        } else {
            let p = compute_ports_ctx(&ctx, &PortMode::SelfConsistent)?;
            (rhs_ctx(&ctx, &RhsMode::Open(p.clone()))?, Some(p.u_vectors()))
        };
        let reference = oracle.rhs_oracle(&z, &eos, &pheno, ports.as_deref())?;
        let mut diff = d.clone();
        diff.axpy(-1.0, &reference);
        worst_oracle = worst_oracle.max(diff.max_abs() / d.max_abs().max(1.0));
    }
    report.push(CheckItem::bounded(
        "weak-form-oracle",
        worst_oracle,
        tol.consistency * ts,
        "rhs vs independently coded weak-form assembly on 5 random states",
    ));

    // Finite-difference oracles for the potential gradients.
    report.push(potential_gradient_fd_check(&grid, &eos, &pheno, cfg, seed, ts)?);

    Ok(report)
}

/// The dense checks need `(nu + 4) N <= 2048`; coarsen if necessary.
fn dense_check_grid(grid: &Grid, nu: usize) -> Result<Grid, anyhow::Error> {
    let max_n = 2048 / (nu + 4);
    if grid.n <= max_n {
        return Ok(grid.clone());
    }
    let mut n = max_n.max(4);
    if grid.stencil == Stencil::Spectral && n % 2 == 1 {
        n -= 1;
    }
    Ok(Grid::new(grid.kind, grid.stencil, n, grid.length)?)
}

fn bracket_checks(
    report: &mut Report,
    grid: &Grid,
    eos: &IdealMixtureEos,
    pheno: &crate::thermostate::PhenomenologicalModel,
    cfg: &Config,
    seed: u64,
    ts: f64,
) -> Result<(), anyhow::Error> {
    let tol = &cfg.tolerances;
    let form = cfg.initial.form;
    let (poisson, dissipation) = match form {
        PotentialForm::EnergyForm => {
            (BracketVariant::PoissonEnergy, BracketVariant::DissipationEnergy)
        }
        PotentialForm::EntropyForm => {
            (BracketVariant::PoissonEntropy, BracketVariant::DissipationEntropy)
        }
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed.wrapping_add(17));
    let z = random_smooth_state(grid, cfg.nu(), form, &mut rng);
    let fns = vec![
        TestFunctional::monomial("rho0-lin", Block::Rho(0), harmonic_profile(grid, 1, 0.3), 1),
        TestFunctional::monomial("mx-quad", Block::M(0), harmonic_profile(grid, 2, 1.1), 2),
        TestFunctional::monomial("th-cubic", Block::Th, harmonic_profile(grid, 1, 2.0), 3),
        TestFunctional::grad_chi(
            "rho-grad",
            Block::Rho(cfg.nu() - 1),
            harmonic_profile(grid, 2, 0.7),
        ),
    ];
    let mut anti = 0.0f64;
    let mut sym = 0.0f64;
    let mut nonneg = f64::INFINITY;
    let mut degen = 0.0f64;
    for fa in &fns {
        for fb in &fns {
            let ab = eval_bracket(grid, &z, eos, pheno, poisson, Scope::Full, fa, fb)?;
            let ba = eval_bracket(grid, &z, eos, pheno, poisson, Scope::Full, fb, fa)?;
            anti = anti.max((ab + ba).abs() / ab.abs().max(1.0));
            let dab = eval_bracket(grid, &z, eos, pheno, dissipation, Scope::Full, fa, fb)?;
            let dba = eval_bracket(grid, &z, eos, pheno, dissipation, Scope::Full, fb, fa)?;
            sym = sym.max((dab - dba).abs() / dab.abs().max(1.0));
        }
        let faa = eval_bracket(grid, &z, eos, pheno, dissipation, Scope::Full, fa, fa)?;
        nonneg = nonneg.min(faa);
        let res = degeneracy_residuals(grid, &z, eos, pheno, fa)?;
        degen = degen.max(res.max_abs() / res.scale);
    }
    report.push(CheckItem::bounded(
        "bracket-anti-symmetry",
        anti,
        tol.degeneracy * ts,
        "transport bracket, full scope, all functional pairs",
    ));
    report.push(CheckItem::bounded(
        "bracket-symmetry",
        sym,
        tol.degeneracy * ts,
        "dissipation bracket, full scope, all functional pairs",
    ));
    report.push(CheckItem::lower_bounded(
        "bracket-non-negativity",
        nonneg,
        tol.degeneracy * ts,
        "dissipation bracket diagonal",
    ));
    report.push(CheckItem::bounded(
        "bracket-degeneracy",
        degen,
        tol.degeneracy * ts,
        "{A,S} and [A,H] over full, boundary, and bulk scopes",
    ));
    let (leib, leib_scale) =
        leibniz_residual(grid, &z, eos, pheno, poisson, &fns[0], &fns[2], &fns[1])?;
    report.push(CheckItem::bounded(
        "bracket-leibniz",
        leib / leib_scale,
        tol.degeneracy * ts,
        "product-rule residual, transport bracket",
    ));
    let (cons, cons_scale) =
        operator_consistency_residual(grid, &z, eos, pheno, poisson, &fns[1], &fns[2])?;
    report.push(CheckItem::bounded(
        "bracket-operator-consistency",
        cons / cons_scale,
        tol.consistency * ts,
        "bilinear-form route vs operator-application route",
    ));
    // Functional gradient finite-difference oracle.
    let mut worst_fd = 0.0f64;
    for f in &fns {
        let g = f.gradient(grid, &z);
        let fd = f.fd_gradient(grid, &z, 1e-6);
        let mut diff = g.clone();
        diff.axpy(-1.0, &fd);
        worst_fd = worst_fd.max(diff.max_abs() / g.max_abs().max(1.0));
    }
    report.push(CheckItem::bounded(
        "functional-gradient-fd",
        worst_fd,
        tol.fd_oracle * ts,
        "closed-form gradients vs central differences",
    ));
    if !grid.boundary().is_empty() {
        // Port pairing identity with an arbitrary smooth cotangent; the
        // cotangent lives in operator-core coordinates, so use an
        // energy-formulation state.
        let z_core = match form {
            PotentialForm::EnergyForm => z.clone(),
            PotentialForm::EntropyForm => convert_state(&z, PotentialForm::EnergyForm, eos)?,
        };
        let mut phi = fns[0].gradient(grid, &z_core);
        phi.axpy(0.5, &fns[2].gradient(grid, &z_core));
        for i in 0..grid.n {
            phi.th[i] += 0.25;
            phi.m[1][i] += 0.1;
        }
        let (res, scale) = boundary_identity_residual(grid, &z_core, eos, pheno, &phi)?;
        report.push(CheckItem::bounded(
            "boundary-port-identity",
            res / scale,
            tol.consistency * ts,
            "<gradA, B u> vs -{A,H}_bd - [A,S]_bd with self-consistent ports",
        ));
    }
    Ok(())
}

fn potential_gradient_fd_check(
    grid: &Grid,
    eos: &IdealMixtureEos,
    pheno: &crate::thermostate::PhenomenologicalModel,
    cfg: &Config,
    seed: u64,
    ts: f64,
) -> Result<CheckItem, anyhow::Error> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed.wrapping_add(29));
    let z = random_smooth_state(grid, cfg.nu(), cfg.initial.form, &mut rng);
    let ctx = OperatorContext::new(grid, &z, eos, pheno)?;
    let (gh, gs) = ctx.functional_derivatives();
    let eval = |state: &MixtureState| -> Result<(f64, f64), anyhow::Error> {
        let c = OperatorContext::new(grid, state, eos, pheno)?;
        Ok((c.total_energy(), c.total_entropy()))
    };
    let eps = 1e-6;
    let mut worst = 0.0f64;
    let probes = [(0usize, 2usize), (cfg.nu() + 1, 5), (cfg.nu() + 3, 1)];
    for &(block, i) in &probes {
        let mut zp = z.clone();
        let mut zm = z.clone();
        let bump = |state: &mut MixtureState, delta: f64| {
            if block < cfg.nu() {
                state.rho[block][i] += delta;
            } else if block < cfg.nu() + 3 {
                state.m[block - cfg.nu()][i] += delta;
            } else {
                state.thermal[i] += delta;
            }
        };
        bump(&mut zp, eps);
        bump(&mut zm, -eps);
        let (hp, sp) = eval(&zp)?;
        let (hm, sm) = eval(&zm)?;
        let fd_h = (hp - hm) / (2.0 * eps * grid.w[i]);
        let fd_s = (sp - sm) / (2.0 * eps * grid.w[i]);
        let (gh_v, gs_v) = if block < cfg.nu() {
            (gh.rho[block][i], gs.rho[block][i])
        } else if block < cfg.nu() + 3 {
            (gh.m[block - cfg.nu()][i], gs.m[block - cfg.nu()][i])
        } else {
            (gh.th[i], gs.th[i])
        };
        worst = worst.max((gh_v - fd_h).abs() / fd_h.abs().max(1.0));
        worst = worst.max((gs_v - fd_s).abs() / fd_s.abs().max(1.0));
    }
    Ok(CheckItem::bounded(
        "potential-gradient-fd",
        worst,
        cfg.tolerances.fd_oracle * ts,
        "dH/dz and dS/dz vs central differences of the quadrature totals",
    ))
}

// ----- simulate ------------------------------------------------------------

fn run_simulate(cfg: &Config, cli: &Cli) -> Result<bool, anyhow::Error> {
    let grid = cfg.build_grid()?;
    let eos = cfg.build_eos();
    let pheno = cfg.build_pheno()?;
    let z0 = cfg.build_initial(&grid, cli.seed);
    let drive = cfg.build_drive();
    let traj = match simulate(
        &grid,
        &z0,
        &eos,
        &pheno,
        cfg.integrator.kind,
        &drive,
        cfg.integrator.dt,
        cfg.integrator.steps,
    ) {
        Ok(t) => t,
        Err(DynamicsError::Operator(e)) => return Err(e.into()),
        Err(e) => {
            // A valid scenario whose run fails is a check failure, not a
            // configuration error.
            if !cli.quiet {
                eprintln!("simulation failed: {e}");
            }
            return Ok(false);
        }
    };
    let summary = summarize(cfg, cli, &traj);
    std::fs::write(cli.out.join(&cfg.output.trajectory), trajectory_csv(&traj))?;
    std::fs::write(
        cli.out.join(&cfg.output.summary),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    announce(cli, &summary.checks);
    Ok(summary.passed)
}

fn summarize(cfg: &Config, cli: &Cli, traj: &Trajectory) -> SimulationSummary {
    let tol = &cfg.tolerances;
    let ts = cli.tol_scale;
    let first = &traj.samples[0];
    let last = traj.samples.last().unwrap();
    let h_scale = first.h.abs().max(1.0);
    let s_scale = first.s.abs().max(1.0);
    // Composite Simpson over the uniform macro-step samples (trapezoid on a
    // trailing odd interval): fourth-order, matching the integrator, so the
    // integrated balance check is not limited by the time quadrature.
    let quadrature = |value: &dyn Fn(&BalanceSample) -> f64| -> f64 {
        let s = &traj.samples;
        let mut total = 0.0;
        let mut i = 0;
        while i + 2 < s.len() {
            let dt = s[i + 1].t - s[i].t;
            total += dt / 3.0 * (value(&s[i]) + 4.0 * value(&s[i + 1]) + value(&s[i + 2]));
            i += 2;
        }
        if i + 1 < s.len() {
            total += 0.5 * (s[i + 1].t - s[i].t) * (value(&s[i]) + value(&s[i + 1]));
        }
        total
    };
    let yh_integral = quadrature(&|s: &BalanceSample| s.yh_u);
    let ys_integral = quadrature(&|s: &BalanceSample| s.ys_u);
    let max_abs_res_h =
        traj.samples.iter().map(|s| s.res_h.abs()).fold(0.0f64, f64::max);
    let min_res_s = traj.samples.iter().map(|s| s.res_s).fold(f64::INFINITY, f64::min);
    let mut checks = Report::default();
    checks.push(CheckItem::bounded(
        "semi-discrete-energy-balance",
        max_abs_res_h / h_scale,
        tol.balance * ts,
        "max |<dH/dz, rhs> - <y_H, u>| over all samples",
    ));
    checks.push(CheckItem::lower_bounded(
        "semi-discrete-entropy-production",
        min_res_s / s_scale,
        tol.balance * ts,
        "min <dS/dz, rhs> - <y_S, u> over all samples",
    ));
    let energy_gap = (last.h - first.h - yh_integral).abs() / h_scale;
    checks.push(CheckItem::bounded(
        "integrated-energy-balance",
        energy_gap,
        (1e-6f64).max(tol.fd_oracle) * ts,
        "|H(end) - H(0) - integral <y_H, u> dt| (time-quadrature limited)",
    ));
    let entropy_gap = (last.s - first.s - ys_integral) / s_scale;
    checks.push(CheckItem::lower_bounded(
        "integrated-entropy-inequality",
        entropy_gap,
        1e-8 * ts,
        "S(end) - S(0) - integral <y_S, u> dt",
    ));
    if cfg.mode.kind == ModeKind::Isolated {
        let mut min_increment = f64::INFINITY;
        for pair in traj.samples.windows(2) {
            min_increment = min_increment.min(pair[1].s - pair[0].s);
        }
        checks.push(CheckItem::lower_bounded(
            "entropy-monotone",
            min_increment / s_scale,
            tol.balance * ts,
            "min S increment between samples (isolated run)",
        ));
    }
    let passed = checks.passed();
    SimulationSummary {
        seed: cli.seed,
        dt: cfg.integrator.dt,
        steps: cfg.integrator.steps,
        rejected_steps: traj.rejected_steps,
        h_initial: first.h,
        h_final: last.h,
        s_initial: first.s,
        s_final: last.s,
        yh_integral,
        ys_integral,
        max_abs_res_h,
        min_res_s,
        passed,
        checks,
    }
}

// ----- jacobi --------------------------------------------------------------

fn run_jacobi(cfg: &Config, cli: &Cli) -> Result<bool, anyhow::Error> {
    let eos = cfg.build_eos();
    let pheno = cfg.build_pheno()?;
    let tol = &cfg.tolerances;
    let ts = cli.tol_scale;
    let mut report = Report::default();
    let mut csv = String::from("N,residual\n");

    // The state and functionals are rebuilt per resolution from analytic
    // profiles, so residuals measure pure truncation error.
    let state_on = |grid: &Grid| -> Result<MixtureState, anyhow::Error> {
        let z = cfg.build_initial(grid, cli.seed);
        Ok(match z.form {
            PotentialForm::EnergyForm => z,
            PotentialForm::EntropyForm => convert_state(&z, PotentialForm::EnergyForm, &eos)?,
        })
    };
    let cubic_set = |grid: &Grid| -> Vec<TestFunctional> {
        vec![
            // Two momentum-block functionals are needed to excite the
            // discrete vector-field commutator; a single one cancels in
            // the cyclic sum on any grid.
            TestFunctional::monomial("a", Block::M(0), harmonic_profile(grid, 1, 0.2), 3),
            TestFunctional::monomial("b", Block::M(0), harmonic_profile(grid, 1, 2.2), 3),
            TestFunctional::monomial("c", Block::Rho(0), harmonic_profile(grid, 1, 0.5), 3),
        ]
    };

    let mut residuals = Vec::new();
    for n in [16usize, 32, 64] {
        let grid = Grid::new(GridKind::Periodic, Stencil::Central2, n, cfg.grid.length)?;
        let z = state_on(&grid)?;
        let fns = cubic_set(&grid);
        let result =
            jacobi_residual(&grid, &z, &eos, &pheno, [&fns[0], &fns[1], &fns[2]], JacobiMethod::ClosedForm)?;
        csv.push_str(&format!("{n},{:.17e}\n", result.residual));
        residuals.push(result.residual);
    }
    for (idx, pair) in residuals.windows(2).enumerate() {
        let (coarse, fine) = (pair[0], pair[1]);
        let (n0, n1) = (16 << idx, 32 << idx);
        if coarse <= 1e-13 {
            report.push(CheckItem::bounded(
                format!("jacobi-refinement-{n0}-{n1}"),
                coarse,
                1e-13,
                "residual already at rounding level",
            ));
        } else {
            report.push(CheckItem::lower_bounded(
                format!("jacobi-refinement-{n0}-{n1}"),
                coarse / fine - 3.5,
                0.0,
                format!("ratio {:.2} (coarse {coarse:.3e}, fine {fine:.3e})", coarse / fine),
            ));
        }
    }

    // Rounding-level residual for linear functionals on a spectral grid.
    let grid = Grid::new(GridKind::Periodic, Stencil::Spectral, 16, cfg.grid.length)?;
    let z = state_on(&grid)?;
    let fa = TestFunctional::monomial("a", Block::M(0), harmonic_profile(&grid, 1, 0.2), 1);
    let fb = TestFunctional::monomial("b", Block::M(0), harmonic_profile(&grid, 1, 1.0), 1);
    let fc = TestFunctional::monomial("c", Block::Rho(0), harmonic_profile(&grid, 2, 0.5), 1);
    let result = jacobi_residual(&grid, &z, &eos, &pheno, [&fa, &fb, &fc], JacobiMethod::ClosedForm)?;
    report.push(CheckItem::bounded(
        "jacobi-spectral-linear",
        result.residual / result.scale,
        tol.jacobi_spectral * ts,
        "cyclic sum for linear functionals, spectral grid N = 16",
    ));

    std::fs::write(cli.out.join(&cfg.output.jacobi), csv)?;
    write_report(&cli.out.join(&cfg.output.report), "jacobi", cli, &report)?;
    announce(cli, &report);
    Ok(report.passed())
}

// ----- eos-check -----------------------------------------------------------

fn run_eos_check(cfg: &Config, cli: &Cli) -> Result<bool, anyhow::Error> {
    let eos = cfg.build_eos();
    let report = eos_report(&eos, cfg, cli.seed, cli.tol_scale);
    write_report(&cli.out.join(&cfg.output.report), "eos-check", cli, &report)?;
    announce(cli, &report);
    Ok(report.passed())
}

/// Equation-of-state consistency checks on sampled admissible points.
pub fn eos_report(eos: &IdealMixtureEos, cfg: &Config, seed: u64, ts: f64) -> Report {
    use rand::Rng;
    let tol = &cfg.tolerances;
    let nu = cfg.nu();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed.wrapping_add(41));
    let mut points: Vec<(Vec<f64>, f64)> = vec![(cfg.initial.rho.clone(), cfg.initial.thermal)];
    for _ in 0..10 {
        let rho: Vec<f64> = (0..nu).map(|_| rng.gen_range(0.5..2.0)).collect();
        let thermal = match cfg.initial.form {
            PotentialForm::EnergyForm => rng.gen_range(-0.5..0.8),
            PotentialForm::EntropyForm => rng.gen_range(1.0..3.0),
        };
        points.push((rho, thermal));
    }
    let mut report = Report::default();
    let mut pressure = 0.0f64;
    let mut round_trip = 0.0f64;
    let mut fd = 0.0f64;
    for (rho, thermal) in &points {
        let pt = match eos.eval(rho, *thermal, cfg.initial.form) {
            Ok(p) => p,
            Err(e) => {
                report.push(CheckItem::bounded(
                    "eos-admissibility",
                    f64::INFINITY,
                    0.0,
                    format!("sample point rejected: {e}"),
                ));
                continue;
            }
        };
        // Euler/Gibbs relation p = -u + T s + sum_a rho_a mu_a.
        let mut rhs = -pt.u + pt.t * pt.s;
        for a in 0..nu {
            rhs += rho[a] * pt.mu[a];
        }
        let scale = pt.p.abs().max(1.0);
        pressure = pressure.max((pt.p - rhs).abs() / scale);
        // Thermal variable round trip between the two formulations.
        let other = eos.convert_thermal(rho, *thermal, cfg.initial.form).unwrap();
        let back = eos
            .convert_thermal(
                rho,
                other,
                match cfg.initial.form {
                    PotentialForm::EnergyForm => PotentialForm::EntropyForm,
                    PotentialForm::EntropyForm => PotentialForm::EnergyForm,
                },
            )
            .unwrap();
        round_trip = round_trip.max((back - thermal).abs() / thermal.abs().max(1.0));
        // Finite-difference identities du/ds = T and du/drho_a = mu_a at
        // fixed entropy density.
        let (rho_e, s_e) = match cfg.initial.form {
            PotentialForm::EnergyForm => (rho.clone(), *thermal),
            PotentialForm::EntropyForm => (rho.clone(), pt.s),
        };
        let u_of = |rho: &[f64], s: f64| -> f64 {
            eos.eval(rho, s, PotentialForm::EnergyForm).unwrap().u
        };
        let eps = 1e-6;
        let dt_fd = (u_of(&rho_e, s_e + eps) - u_of(&rho_e, s_e - eps)) / (2.0 * eps);
        fd = fd.max((dt_fd - pt.t).abs() / pt.t.abs().max(1.0));
        for a in 0..nu {
            let mut rp = rho_e.clone();
            let mut rm = rho_e.clone();
            rp[a] += eps;
            rm[a] -= eps;
            let mu_fd = (u_of(&rp, s_e) - u_of(&rm, s_e)) / (2.0 * eps);
            fd = fd.max((mu_fd - pt.mu[a]).abs() / pt.mu[a].abs().max(1.0));
        }
    }
    report.push(CheckItem::bounded(
        "eos-pressure-identity",
        pressure,
        tol.consistency * ts,
        "p = -u + T s + sum rho_a mu_a on sampled points",
    ));
    report.push(CheckItem::bounded(
        "eos-thermal-round-trip",
        round_trip,
        tol.consistency * ts,
        "entropy <-> internal-energy conversion is involutive",
    ));
    report.push(CheckItem::bounded(
        "eos-partial-derivatives-fd",
        fd,
        tol.fd_oracle * ts,
        "du/ds = T and du/drho_a = mu_a vs central differences",
    ));
    report
}
