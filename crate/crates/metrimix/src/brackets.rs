//! Bracket-level verification: evaluation of the transport (Poisson) and
//! dissipation brackets on test functionals, with anti-symmetry, symmetry,
//! non-negativity, degeneracy, Leibniz, Jacobi, and boundary-pairing checks.
//!
//! A bracket `{A,B}` is the bilinear operator form evaluated at the
//! functional gradients, `{A,B} = <dA/dz, J dB/dz>` and
//! `[A,B] = <dA/dz, R dB/dz>`. On interval grids the bilinear forms split
//! into a bulk part and an endpoint (boundary) part; the full forms carry
//! the exact structure (anti-symmetry, symmetry, degeneracy), while the
//! boundary parts satisfy the port pairing identity
//! `<dA/dz, B u> = -{A,H}_bd - [A,S]_bd` for self-consistent ports.
//!
//! The Jacobi identity is checked for the transport bracket in the
//! energy-potential formulation; the entropy-potential bracket is its exact
//! nodal change of variables, so the identity transfers verbatim. Two
//! routes compute the gradient of an inner bracket `{B,C}` at a state:
//! a closed form valid for functionals with diagonal nodal Hessians, and a
//! nested finite-difference fallback for arbitrary functionals.

use crate::discretize::{Field, Grid};
use crate::generic_ops::{
    apply_operator_ctx, compute_ports_ctx, Cotangent, MixtureState, OperatorContext,
    OperatorError, OperatorKind, PortMode, Variant,
};
use crate::thermostate::{IdealMixtureEos, PhenomenologicalModel, PotentialForm};
use thiserror::Error;

/// A state block addressed by a test functional.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    /// Partial mass density of constituent `a`.
    Rho(usize),
    /// Momentum component `c` (0 = x, 1 = y, 2 = z).
    M(usize),
    /// Thermal field (entropy density or internal energy density,
    /// depending on the state's formulation).
    Th,
}

fn block_field<'a>(z: &'a MixtureState, b: Block) -> &'a Field {
    match b {
        Block::Rho(a) => &z.rho[a],
        Block::M(c) => &z.m[c],
        Block::Th => &z.thermal,
    }
}

fn block_field_mut<'a>(z: &'a mut MixtureState, b: Block) -> &'a mut Field {
    match b {
        Block::Rho(a) => &mut z.rho[a],
        Block::M(c) => &mut z.m[c],
        Block::Th => &mut z.thermal,
    }
}

fn ct_block<'a>(ct: &'a Cotangent, b: Block) -> &'a Field {
    match b {
        Block::Rho(a) => &ct.rho[a],
        Block::M(c) => &ct.m[c],
        Block::Th => &ct.th,
    }
}

fn ct_block_mut<'a>(ct: &'a mut Cotangent, b: Block) -> &'a mut Field {
    match b {
        Block::Rho(a) => &mut ct.rho[a],
        Block::M(c) => &mut ct.m[c],
        Block::Th => &mut ct.th,
    }
}

/// One additive term of a test functional.
#[derive(Debug, Clone)]
pub enum FunctionalTerm {
    /// `int p(x) z_b(x)^k dx` with a fixed nodal profile `p` and `k >= 1`.
    /// Gradient `k p z^(k-1)` and Hessian `k (k-1) p z^(k-2)` are nodal.
    Monomial { block: Block, profile: Field, power: u32 },
    /// `int p(x) d/dx z_b dx`: gradient is the constant field `dstar(p)`,
    /// Hessian vanishes.
    GradChi { block: Block, profile: Field },
    /// `int p(x) z_b1 d/dx z_b2 dx`: an advection-like form whose Hessian
    /// couples neighbouring nodes (no diagonal closed form).
    Advection { a_block: Block, chi_block: Block, profile: Field },
}

/// A functional of the discrete state built from closed-form terms, with
/// exact gradients (and, where available, diagonal nodal Hessians).
#[derive(Debug, Clone)]
pub struct TestFunctional {
    pub name: String,
    pub terms: Vec<FunctionalTerm>,
}

/// Smooth periodic profile `cos(2 pi k x / L + phase)` sampled on the grid.
pub fn harmonic_profile(grid: &Grid, k: usize, phase: f64) -> Field {
    let two_pi = 2.0 * std::f64::consts::PI;
    grid.x.iter().map(|&x| (two_pi * k as f64 * x / grid.length + phase).cos()).collect()
}

impl TestFunctional {
    pub fn monomial(name: impl Into<String>, block: Block, profile: Field, power: u32) -> Self {
        assert!(power >= 1, "monomial power must be at least 1");
        Self { name: name.into(), terms: vec![FunctionalTerm::Monomial { block, profile, power }] }
    }

    pub fn grad_chi(name: impl Into<String>, block: Block, profile: Field) -> Self {
        Self { name: name.into(), terms: vec![FunctionalTerm::GradChi { block, profile }] }
    }

    pub fn advection(
        name: impl Into<String>,
        a_block: Block,
        chi_block: Block,
        profile: Field,
    ) -> Self {
        Self { name: name.into(), terms: vec![FunctionalTerm::Advection { a_block, chi_block, profile }] }
    }

    /// Quadrature value of the functional at a state.
    pub fn value(&self, grid: &Grid, z: &MixtureState) -> f64 {
        let n = grid.n;
        let mut total = 0.0;
        for term in &self.terms {
            match term {
                FunctionalTerm::Monomial { block, profile, power } => {
                    let f = block_field(z, *block);
                    for i in 0..n {
                        total += grid.w[i] * profile[i] * f[i].powi(*power as i32);
                    }
                }
                FunctionalTerm::GradChi { block, profile } => {
                    let df = grid.deriv(block_field(z, *block));
                    for i in 0..n {
                        total += grid.w[i] * profile[i] * df[i];
                    }
                }
                FunctionalTerm::Advection { a_block, chi_block, profile } => {
                    let f = block_field(z, *a_block);
                    let dchi = grid.deriv(block_field(z, *chi_block));
                    for i in 0..n {
                        total += grid.w[i] * profile[i] * f[i] * dchi[i];
                    }
                }
            }
        }
        total
    }

    /// Closed-form functional gradient (resolved against the quadrature
    /// weight, i.e. a cotangent in the same sense as `dH/dz`).
    pub fn gradient(&self, grid: &Grid, z: &MixtureState) -> Cotangent {
        let n = grid.n;
        let mut g = Cotangent::zeros(z.nu(), n);
        for term in &self.terms {
            match term {
                FunctionalTerm::Monomial { block, profile, power } => {
                    let f = block_field(z, *block);
                    let out = ct_block_mut(&mut g, *block);
                    let k = *power;
                    for i in 0..n {
                        out[i] += k as f64 * profile[i] * f[i].powi(k as i32 - 1);
                    }
                }
                FunctionalTerm::GradChi { block, profile } => {
                    let adj = grid.deriv_adjoint(profile);
                    let out = ct_block_mut(&mut g, *block);
                    for i in 0..n {
                        out[i] += adj[i];
                    }
                }
                FunctionalTerm::Advection { a_block, chi_block, profile } => {
                    let dchi = grid.deriv(block_field(z, *chi_block));
                    {
                        let out = ct_block_mut(&mut g, *a_block);
                        for i in 0..n {
                            out[i] += profile[i] * dchi[i];
                        }
                    }
                    let weighted: Field =
                        (0..n).map(|i| profile[i] * block_field(z, *a_block)[i]).collect();
                    let adj = grid.deriv_adjoint(&weighted);
                    let out = ct_block_mut(&mut g, *chi_block);
                    for i in 0..n {
                        out[i] += adj[i];
                    }
                }
            }
        }
        g
    }

    /// Central finite-difference oracle for the gradient.
    pub fn fd_gradient(&self, grid: &Grid, z: &MixtureState, eps: f64) -> Cotangent {
        let n = grid.n;
        let nu = z.nu();
        let mut g = Cotangent::zeros(nu, n);
        let mut blocks: Vec<Block> = (0..nu).map(Block::Rho).collect();
        blocks.extend((0..3).map(Block::M));
        blocks.push(Block::Th);
        for b in blocks {
            for j in 0..n {
                let mut zp = z.clone();
                let mut zm = z.clone();
                block_field_mut(&mut zp, b)[j] += eps;
                block_field_mut(&mut zm, b)[j] -= eps;
                ct_block_mut(&mut g, b)[j] =
                    (self.value(grid, &zp) - self.value(grid, &zm)) / (2.0 * eps * grid.w[j]);
            }
        }
        g
    }

    /// Diagonal nodal Hessian `d(gradient_bj)/d(z_bj)`, or `None` if some
    /// term has cross-node curvature.
    pub fn diag_hessian(&self, grid: &Grid, z: &MixtureState) -> Option<Cotangent> {
        let n = grid.n;
        let mut h = Cotangent::zeros(z.nu(), n);
        for term in &self.terms {
            match term {
                FunctionalTerm::Monomial { block, profile, power } => {
                    let f = block_field(z, *block);
                    let out = ct_block_mut(&mut h, *block);
                    let k = *power as f64;
                    for i in 0..n {
                        let curvature = if *power >= 2 {
                            k * (k - 1.0) * profile[i] * f[i].powi(*power as i32 - 2)
                        } else {
                            0.0
                        };
                        out[i] += curvature;
                    }
                }
                FunctionalTerm::GradChi { .. } => {}
                FunctionalTerm::Advection { .. } => return None,
            }
        }
        Some(h)
    }
}

/// Which bracket to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BracketVariant {
    /// Transport bracket in the energy-potential formulation.
    PoissonEnergy,
    /// Transport bracket in the entropy-potential formulation.
    PoissonEntropy,
    /// Dissipation bracket in the energy-potential formulation.
    DissipationEnergy,
    /// Dissipation bracket in the entropy-potential formulation.
    DissipationEntropy,
}

impl BracketVariant {
    pub fn variant(self) -> Variant {
        match self {
            BracketVariant::PoissonEnergy | BracketVariant::DissipationEnergy => Variant::Energy,
            BracketVariant::PoissonEntropy | BracketVariant::DissipationEntropy => Variant::Entropy,
        }
    }

    pub fn is_poisson(self) -> bool {
        matches!(self, BracketVariant::PoissonEnergy | BracketVariant::PoissonEntropy)
    }
}

/// Which part of the bilinear form to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    /// The complete form (carries the exact structural identities).
    Full,
    /// Endpoint contributions only (empty on periodic grids).
    Boundary,
    /// `Full - Boundary`.
    Bulk,
}

#[derive(Debug, Error)]
pub enum BracketError {
    #[error(
        "closed-form Jacobi route needs diagonal nodal Hessians; functional '{0}' has cross-node curvature"
    )]
    NonDiagonalHessian(String),
    #[error("the Jacobi check is defined on periodic grids only")]
    NeedsPeriodic,
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// Evaluates a bracket at two gradients given in the state's own
/// coordinates. Entropy-formulation gradients are pulled back to the
/// operator core by the exact nodal change of thermal variable.
pub fn eval_bracket_grads(
    ctx: &OperatorContext,
    bracket: BracketVariant,
    scope: Scope,
    ga: &Cotangent,
    gb: &Cotangent,
) -> f64 {
    let (ga_core, gb_core);
    let (ga_ref, gb_ref) = match bracket.variant() {
        Variant::Energy => (ga, gb),
        Variant::Entropy => {
            ga_core = ctx.lambda_transpose(ga);
            gb_core = ctx.lambda_transpose(gb);
            (&ga_core, &gb_core)
        }
    };
    let full = || {
        if bracket.is_poisson() {
            ctx.j_pairing_core(ga_ref, gb_ref)
        } else {
            ctx.r_pairing_core(ga_ref, gb_ref)
        }
    };
    let boundary = || {
        if bracket.is_poisson() {
            ctx.boundary_poisson_pairing(ga_ref, gb_ref)
        } else {
            ctx.boundary_dissipation_pairing(ga_ref, gb_ref)
        }
    };
    match scope {
        Scope::Full => full(),
        Scope::Boundary => boundary(),
        Scope::Bulk => full() - boundary(),
    }
}

/// Evaluates a bracket of two test functionals at a state.
pub fn eval_bracket(
    grid: &Grid,
    z: &MixtureState,
    eos: &IdealMixtureEos,
    pheno: &PhenomenologicalModel,
    bracket: BracketVariant,
    scope: Scope,
    fa: &TestFunctional,
    fb: &TestFunctional,
) -> Result<f64, OperatorError> {
    let variant = bracket.variant();
    if z.form != variant.expected_form() {
        return Err(OperatorError::VariantMismatch { state: z.form, variant });
    }
    let ctx = OperatorContext::new(grid, z, eos, pheno)?;
    let ga = fa.gradient(grid, z);
    let gb = fb.gradient(grid, z);
    Ok(eval_bracket_grads(&ctx, bracket, scope, &ga, &gb))
}

/// Degeneracy residuals at an arbitrary functional: `{A, S}` (transport
/// bracket against the entropy gradient) and `[A, H]` (dissipation bracket
/// against the energy gradient), per scope, all of which must vanish, plus
/// a magnitude scale from the generating pairings `{A, H}` and `[A, S]`.
pub struct DegeneracyResiduals {
    /// Full-scope `{A, S}`.
    pub poisson_with_s: f64,
    /// Full-scope `[A, H]`.
    pub dissipation_with_h: f64,
    /// Boundary-scope values (zero on periodic grids).
    pub poisson_with_s_boundary: f64,
    pub dissipation_with_h_boundary: f64,
    pub scale: f64,
}

impl DegeneracyResiduals {
    /// Largest degeneracy violation over all scopes (bulk = full - boundary).
    pub fn max_abs(&self) -> f64 {
        let bulk_p = self.poisson_with_s - self.poisson_with_s_boundary;
        let bulk_d = self.dissipation_with_h - self.dissipation_with_h_boundary;
        [
            self.poisson_with_s,
            self.dissipation_with_h,
            self.poisson_with_s_boundary,
            self.dissipation_with_h_boundary,
            bulk_p,
            bulk_d,
        ]
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

pub fn degeneracy_residuals(
    grid: &Grid,
    z: &MixtureState,
    eos: &IdealMixtureEos,
    pheno: &PhenomenologicalModel,
    f: &TestFunctional,
) -> Result<DegeneracyResiduals, OperatorError> {
    let ctx = OperatorContext::new(grid, z, eos, pheno)?;
    let (poisson, dissipation) = match z.form {
        PotentialForm::EnergyForm => (BracketVariant::PoissonEnergy, BracketVariant::DissipationEnergy),
        PotentialForm::EntropyForm => {
            (BracketVariant::PoissonEntropy, BracketVariant::DissipationEntropy)
        }
    };
    let (grad_h, grad_s) = ctx.functional_derivatives();
    let ga = f.gradient(grid, z);
    let poisson_with_s = eval_bracket_grads(&ctx, poisson, Scope::Full, &ga, &grad_s);
    let dissipation_with_h = eval_bracket_grads(&ctx, dissipation, Scope::Full, &ga, &grad_h);
    let poisson_with_s_boundary =
        eval_bracket_grads(&ctx, poisson, Scope::Boundary, &ga, &grad_s);
    let dissipation_with_h_boundary =
        eval_bracket_grads(&ctx, dissipation, Scope::Boundary, &ga, &grad_h);
    let drive_h = eval_bracket_grads(&ctx, poisson, Scope::Full, &ga, &grad_h);
    let drive_s = eval_bracket_grads(&ctx, dissipation, Scope::Full, &ga, &grad_s);
    Ok(DegeneracyResiduals {
        poisson_with_s,
        dissipation_with_h,
        poisson_with_s_boundary,
        dissipation_with_h_boundary,
        scale: 1.0f64.max(drive_h.abs()).max(drive_s.abs()),
    })
}

/// Leibniz (product-rule) residual of a full bracket:
/// `|{AB, C} - A(z){B, C} - B(z){A, C}|` with the product functional's
/// gradient assembled by the chain rule. Returns `(residual, scale)`.
pub fn leibniz_residual(
    grid: &Grid,
    z: &MixtureState,
    eos: &IdealMixtureEos,
    pheno: &PhenomenologicalModel,
    bracket: BracketVariant,
    fa: &TestFunctional,
    fb: &TestFunctional,
    fc: &TestFunctional,
) -> Result<(f64, f64), OperatorError> {
    let variant = bracket.variant();
    if z.form != variant.expected_form() {
        return Err(OperatorError::VariantMismatch { state: z.form, variant });
    }
    let ctx = OperatorContext::new(grid, z, eos, pheno)?;
    let val_a = fa.value(grid, z);
    let val_b = fb.value(grid, z);
    let ga = fa.gradient(grid, z);
    let gb = fb.gradient(grid, z);
    let gc = fc.gradient(grid, z);
    let mut g_prod = Cotangent::zeros(z.nu(), grid.n);
    g_prod.axpy(val_a, &gb);
    g_prod.axpy(val_b, &ga);
    let lhs = eval_bracket_grads(&ctx, bracket, Scope::Full, &g_prod, &gc);
    let bc = eval_bracket_grads(&ctx, bracket, Scope::Full, &gb, &gc);
    let ac = eval_bracket_grads(&ctx, bracket, Scope::Full, &ga, &gc);
    let rhs = val_a * bc + val_b * ac;
    let scale = 1.0f64.max(lhs.abs()).max((val_a * bc).abs()).max((val_b * ac).abs());
    Ok(((lhs - rhs).abs(), scale))
}

/// Boundary pairing identity residual: for an arbitrary cotangent `phi`
/// (in operator-core coordinates) and self-consistent ports,
/// `<phi, B u> = -{phi, H}_bd - [phi, S]_bd` must hold to rounding.
/// Returns `(residual, scale)`.
pub fn boundary_identity_residual(
    grid: &Grid,
    z: &MixtureState,
    eos: &IdealMixtureEos,
    pheno: &PhenomenologicalModel,
    phi: &Cotangent,
) -> Result<(f64, f64), OperatorError> {
    let ctx = OperatorContext::new(grid, z, eos, pheno)?;
    let ports = compute_ports_ctx(&ctx, &PortMode::SelfConsistent)?;
    let lhs = ctx.b_pairing_core(phi, &ports.u_vectors());
    let (gh_core, gs_core) = ctx.core_gradients();
    let poisson_bd = ctx.boundary_poisson_pairing(phi, &gh_core);
    let diss_bd = ctx.boundary_dissipation_pairing(phi, &gs_core);
    let rhs = -poisson_bd - diss_bd;
    let scale = 1.0f64.max(lhs.abs()).max(poisson_bd.abs()).max(diss_bd.abs());
    Ok(((lhs - rhs).abs(), scale))
}

/// How the gradient of an inner bracket `{B, C}` is computed for the
/// Jacobi cyclic sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobiMethod {
    /// Exact differentiation of the discrete bilinear form; needs
    /// functionals with diagonal nodal Hessians.
    ClosedForm,
    /// Central finite differences of the bracket value in every degree of
    /// freedom (step `eps_machine^(1/3)` per component scale).
    NestedFd,
}

/// Jacobi cyclic-sum residual of the transport bracket and its magnitude
/// scale.
pub struct JacobiResult {
    pub residual: f64,
    pub scale: f64,
}

/// One advection family of the transport form: `int a(z) [ phi_Mx d/dx(g
/// psi_Y) - psi_Mx d/dx(g phi_Y) ] dx` with constant `g` and a nodal
/// coefficient `a` that depends on at most one state block (with
/// derivative -1).
struct Family {
    a: Field,
    g: f64,
    y: Block,
    a_dep: Option<Block>,
}

fn families(z: &MixtureState, pheno: &PhenomenologicalModel) -> Vec<Family> {
    let n = z.n_nodes();
    let mut fams = Vec::new();
    for a in 0..z.nu() {
        fams.push(Family {
            a: z.rho[a].iter().map(|v| -v).collect(),
            g: 1.0,
            y: Block::Rho(a),
            a_dep: Some(Block::Rho(a)),
        });
        if pheno.ll[a] != 0.0 {
            fams.push(Family { a: vec![1.0; n], g: pheno.ll[a], y: Block::Rho(a), a_dep: None });
        }
    }
    for c in 0..3 {
        fams.push(Family {
            a: z.m[c].iter().map(|v| -v).collect(),
            g: 1.0,
            y: Block::M(c),
            a_dep: Some(Block::M(c)),
        });
    }
    fams.push(Family {
        a: z.thermal.iter().map(|v| -v).collect(),
        g: 1.0,
        y: Block::Th,
        a_dep: Some(Block::Th),
    });
    fams
}

/// Transport bracket value of two functionals at a state (energy
/// formulation; used by the nested finite-difference route, which must
/// re-evaluate gradients at perturbed states).
fn poisson_value(
    grid: &Grid,
    z: &MixtureState,
    eos: &IdealMixtureEos,
    pheno: &PhenomenologicalModel,
    fb: &TestFunctional,
    fc: &TestFunctional,
) -> Result<f64, OperatorError> {
    let ctx = OperatorContext::new(grid, z, eos, pheno)?;
    let gb = fb.gradient(grid, z);
    let gc = fc.gradient(grid, z);
    Ok(ctx.j_pairing_core(&gb, &gc))
}

/// Exact gradient of `z -> {B, C}(z)` for functionals with diagonal nodal
/// Hessians: differentiates the family coefficients and both functional
/// gradients through the discrete bilinear form.
fn closed_form_inner_gradient(
    grid: &Grid,
    z: &MixtureState,
    pheno: &PhenomenologicalModel,
    gb: &Cotangent,
    gc: &Cotangent,
    hb: &Cotangent,
    hc: &Cotangent,
) -> Cotangent {
    let n = grid.n;
    let mut out = Cotangent::zeros(z.nu(), n);
    let mut sum_c = vec![0.0; n];
    let mut sum_b = vec![0.0; n];
    for fam in families(z, pheno) {
        let gyc: Field = (0..n).map(|i| fam.g * ct_block(gc, fam.y)[i]).collect();
        let gyb: Field = (0..n).map(|i| fam.g * ct_block(gb, fam.y)[i]).collect();
        let dgc = grid.deriv(&gyc);
        let dgb = grid.deriv(&gyb);
        // Dependence through the family coefficient a(z) (derivative -1).
        if let Some(dep) = fam.a_dep {
            let target = ct_block_mut(&mut out, dep);
            for j in 0..n {
                target[j] -= gb.m[0][j] * dgc[j] - gc.m[0][j] * dgb[j];
            }
        }
        // Dependence through the normal-momentum gradient entries
        // (accumulated over families, resolved after the loop).
        for j in 0..n {
            sum_c[j] += fam.a[j] * dgc[j];
            sum_b[j] += fam.a[j] * dgb[j];
        }
        // Dependence through the advected gradient entries.
        let amx_b: Field = (0..n).map(|i| fam.a[i] * gb.m[0][i]).collect();
        let amx_c: Field = (0..n).map(|i| fam.a[i] * gc.m[0][i]).collect();
        let adj_b = grid.deriv_adjoint(&amx_b);
        let adj_c = grid.deriv_adjoint(&amx_c);
        let hb_y = ct_block(hb, fam.y);
        let hc_y = ct_block(hc, fam.y);
        let target = ct_block_mut(&mut out, fam.y);
        for j in 0..n {
            target[j] += fam.g * (hc_y[j] * adj_b[j] - hb_y[j] * adj_c[j]);
        }
    }
    for j in 0..n {
        out.m[0][j] += hb.m[0][j] * sum_c[j] - hc.m[0][j] * sum_b[j];
    }
    out
}

/// Finite-difference gradient of `z -> {B, C}(z)` in every degree of
/// freedom, resolved against the quadrature weight.
fn nested_fd_inner_gradient(
    grid: &Grid,
    z: &MixtureState,
    eos: &IdealMixtureEos,
    pheno: &PhenomenologicalModel,
    fb: &TestFunctional,
    fc: &TestFunctional,
) -> Result<Cotangent, OperatorError> {
    let n = grid.n;
    let nu = z.nu();
    let mut out = Cotangent::zeros(nu, n);
    let mut blocks: Vec<Block> = (0..nu).map(Block::Rho).collect();
    blocks.extend((0..3).map(Block::M));
    blocks.push(Block::Th);
    let cbrt_eps = f64::EPSILON.cbrt();
    for b in blocks {
        for j in 0..n {
            let scale = 1.0f64.max(block_field(z, b)[j].abs());
            let eps = cbrt_eps * scale;
            let mut zp = z.clone();
            let mut zm = z.clone();
            block_field_mut(&mut zp, b)[j] += eps;
            block_field_mut(&mut zm, b)[j] -= eps;
            let gp = poisson_value(grid, &zp, eos, pheno, fb, fc)?;
            let gm = poisson_value(grid, &zm, eos, pheno, fb, fc)?;
            ct_block_mut(&mut out, b)[j] = (gp - gm) / (2.0 * eps * grid.w[j]);
        }
    }
    Ok(out)
}

/// Jacobi cyclic sum `{A,{B,C}} + {B,{C,A}} + {C,{A,B}}` of the transport
/// bracket (energy formulation) at a state.
pub fn jacobi_residual(
    grid: &Grid,
    z: &MixtureState,
    eos: &IdealMixtureEos,
    pheno: &PhenomenologicalModel,
    fns: [&TestFunctional; 3],
    method: JacobiMethod,
) -> Result<JacobiResult, BracketError> {
    if z.form != PotentialForm::EnergyForm {
        return Err(BracketError::Operator(OperatorError::VariantMismatch {
            state: z.form,
            variant: Variant::Energy,
        }));
    }
    if !grid.boundary().is_empty() {
        return Err(BracketError::NeedsPeriodic);
    }
    let ctx = OperatorContext::new(grid, z, eos, pheno).map_err(BracketError::Operator)?;
    let grads: Vec<Cotangent> = fns.iter().map(|f| f.gradient(grid, z)).collect();
    let mut sum = 0.0;
    let mut scale = 1.0f64;
    for (ia, ib, ic) in [(0usize, 1usize, 2usize), (1, 2, 0), (2, 0, 1)] {
        let inner = match method {
            JacobiMethod::ClosedForm => {
                let hb = fns[ib]
                    .diag_hessian(grid, z)
                    .ok_or_else(|| BracketError::NonDiagonalHessian(fns[ib].name.clone()))?;
                let hc = fns[ic]
                    .diag_hessian(grid, z)
                    .ok_or_else(|| BracketError::NonDiagonalHessian(fns[ic].name.clone()))?;
                closed_form_inner_gradient(grid, z, pheno, &grads[ib], &grads[ic], &hb, &hc)
            }
            JacobiMethod::NestedFd => {
                nested_fd_inner_gradient(grid, z, eos, pheno, fns[ib], fns[ic])
                    .map_err(BracketError::Operator)?
            }
        };
        let term = ctx.j_pairing_core(&grads[ia], &inner);
        sum += term;
        scale = scale.max(term.abs());
    }
    Ok(JacobiResult { residual: sum.abs(), scale })
}

/// Convenience: transport bracket consistency between the bilinear-form
/// route and the operator-application route, `|{A,B} - <gA, J gB>_W|`.
pub fn operator_consistency_residual(
    grid: &Grid,
    z: &MixtureState,
    eos: &IdealMixtureEos,
    pheno: &PhenomenologicalModel,
    bracket: BracketVariant,
    fa: &TestFunctional,
    fb: &TestFunctional,
) -> Result<(f64, f64), OperatorError> {
    let variant = bracket.variant();
    if z.form != variant.expected_form() {
        return Err(OperatorError::VariantMismatch { state: z.form, variant });
    }
    let ctx = OperatorContext::new(grid, z, eos, pheno)?;
    let ga = fa.gradient(grid, z);
    let gb = fb.gradient(grid, z);
    let pairing = eval_bracket_grads(&ctx, bracket, Scope::Full, &ga, &gb);
    let kind = if bracket.is_poisson() { OperatorKind::J } else { OperatorKind::R };
    let dual = apply_operator_ctx(&ctx, kind, variant, &gb);
    let applied = ga.pair(grid, &dual);
    let scale = 1.0f64.max(pairing.abs()).max(applied.abs());
    Ok(((pairing - applied).abs(), scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::{GridKind, Stencil};
    use crate::generic_ops::random_smooth_state;
    use rand::SeedableRng;

    fn eos2() -> IdealMixtureEos {
        IdealMixtureEos::new(vec![1.0, 2.0], 1.5, vec![0.3, -0.2])
    }

    fn pheno2() -> PhenomenologicalModel {
        PhenomenologicalModel::new(
            0.7,
            0.4,
            1.1,
            vec![0.2, -0.2],
            vec![vec![0.5, -0.5], vec![-0.5, 0.5]],
            vec![vec![1.0], vec![-0.5]],
            vec![1.0, 2.0],
            vec![vec![0.8]],
            vec![0.3],
        )
        .unwrap()
    }

    fn functional_set(grid: &Grid) -> Vec<TestFunctional> {
        vec![
            TestFunctional::monomial("rho0-lin", Block::Rho(0), harmonic_profile(grid, 1, 0.3), 1),
            TestFunctional::monomial("mx-quad", Block::M(0), harmonic_profile(grid, 2, 1.1), 2),
            TestFunctional::monomial("th-cubic", Block::Th, harmonic_profile(grid, 1, 2.0), 3),
            TestFunctional::grad_chi("rho1-grad", Block::Rho(1), harmonic_profile(grid, 2, 0.7)),
            TestFunctional::advection(
                "mx-advects-th",
                Block::M(0),
                Block::Th,
                harmonic_profile(grid, 1, 1.7),
            ),
        ]
    }

    #[test]
    fn functional_gradients_match_finite_differences() {
        let grid = Grid::new(GridKind::Periodic, Stencil::Central2, 12, 2.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for &form in &[PotentialForm::EnergyForm, PotentialForm::EntropyForm] {
            let z = random_smooth_state(&grid, 2, form, &mut rng);
            for f in functional_set(&grid) {
                let g = f.gradient(&grid, &z);
                let fd = f.fd_gradient(&grid, &z, 1e-6);
                let mut diff = g.clone();
                diff.axpy(-1.0, &fd);
                let scale = 1.0f64.max(g.max_abs());
                assert!(
                    diff.max_abs() <= 1e-6 * scale,
                    "functional '{}' gradient vs fd: {:.3e} (scale {scale:.3e})",
                    f.name,
                    diff.max_abs()
                );
            }
        }
    }

    #[test]
    fn full_brackets_have_exact_symmetry_structure() {
        // Anti-symmetry of the transport bracket and symmetry plus
        // non-negativity of the dissipation bracket, all variants, both
        // grid kinds, full scope.
        let eos = eos2();
        let pheno = pheno2();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for kind in [GridKind::Periodic, GridKind::SbpInterval] {
            let grid = Grid::new(kind, Stencil::Central2, 14, 1.8).unwrap();
            let fns = functional_set(&grid);
            for (poisson, diss, form) in [
                (BracketVariant::PoissonEnergy, BracketVariant::DissipationEnergy, PotentialForm::EnergyForm),
                (BracketVariant::PoissonEntropy, BracketVariant::DissipationEntropy, PotentialForm::EntropyForm),
            ] {
                let z = random_smooth_state(&grid, 2, form, &mut rng);
                for fa in &fns {
                    for fb in &fns {
                        let ab = eval_bracket(&grid, &z, &eos, &pheno, poisson, Scope::Full, fa, fb)
                            .unwrap();
                        let ba = eval_bracket(&grid, &z, &eos, &pheno, poisson, Scope::Full, fb, fa)
                            .unwrap();
                        let scale = 1.0f64.max(ab.abs());
                        assert!(
                            (ab + ba).abs() <= 1e-12 * scale,
                            "{poisson:?} anti-symmetry {}/{}: {ab} vs {ba}",
                            fa.name,
                            fb.name
                        );
                        let dab = eval_bracket(&grid, &z, &eos, &pheno, diss, Scope::Full, fa, fb)
                            .unwrap();
                        let dba = eval_bracket(&grid, &z, &eos, &pheno, diss, Scope::Full, fb, fa)
                            .unwrap();
                        let dscale = 1.0f64.max(dab.abs());
                        assert!(
                            (dab - dba).abs() <= 1e-12 * dscale,
                            "{diss:?} symmetry {}/{}: {dab} vs {dba}",
                            fa.name,
                            fb.name
                        );
                    }
                    let faa = eval_bracket(&grid, &z, &eos, &pheno, diss, Scope::Full, fa, fa)
                        .unwrap();
                    assert!(faa >= -1e-12, "{diss:?} non-negativity at {}: {faa}", fa.name);
                }
            }
        }
    }

    #[test]
    fn bracket_matches_operator_application() {
        let eos = eos2();
        let pheno = pheno2();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let grid = Grid::new(GridKind::SbpInterval, Stencil::Central2, 12, 2.2).unwrap();
        let fns = functional_set(&grid);
        for (bracket, form) in [
            (BracketVariant::PoissonEnergy, PotentialForm::EnergyForm),
            (BracketVariant::DissipationEnergy, PotentialForm::EnergyForm),
            (BracketVariant::PoissonEntropy, PotentialForm::EntropyForm),
            (BracketVariant::DissipationEntropy, PotentialForm::EntropyForm),
        ] {
            let z = random_smooth_state(&grid, 2, form, &mut rng);
            let (res, scale) =
                operator_consistency_residual(&grid, &z, &eos, &pheno, bracket, &fns[1], &fns[2])
                    .unwrap();
            assert!(res <= 1e-12 * scale, "{bracket:?} pairing vs applied: {res:.3e}");
        }
    }

    #[test]
    fn degeneracy_of_full_brackets() {
        let eos = eos2();
        let pheno = pheno2();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for kind in [GridKind::Periodic, GridKind::SbpInterval] {
            let grid = Grid::new(kind, Stencil::Central2, 12, 2.0).unwrap();
            let fns = functional_set(&grid);
            for &form in &[PotentialForm::EnergyForm, PotentialForm::EntropyForm] {
                let z = random_smooth_state(&grid, 2, form, &mut rng);
                for f in &fns {
                    let res = degeneracy_residuals(&grid, &z, &eos, &pheno, f).unwrap();
                    assert!(
                        res.poisson_with_s.abs() <= 1e-12 * res.scale,
                        "{:?} transport degeneracy at {}: {:.3e} (scale {:.3e})",
                        form,
                        f.name,
                        res.poisson_with_s,
                        res.scale
                    );
                    assert!(
                        res.dissipation_with_h.abs() <= 1e-12 * res.scale,
                        "{:?} dissipation degeneracy at {}: {:.3e} (scale {:.3e})",
                        form,
                        f.name,
                        res.dissipation_with_h,
                        res.scale
                    );
                }
            }
        }
    }

    #[test]
    fn boundary_scope_vanishes_on_periodic_grids() {
        let eos = eos2();
        let pheno = pheno2();
        let grid = Grid::new(GridKind::Periodic, Stencil::Central2, 12, 2.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let z = random_smooth_state(&grid, 2, PotentialForm::EnergyForm, &mut rng);
        let fns = functional_set(&grid);
        let bd = eval_bracket(
            &grid,
            &z,
            &eos,
            &pheno,
            BracketVariant::PoissonEnergy,
            Scope::Boundary,
            &fns[0],
            &fns[1],
        )
        .unwrap();
        assert_eq!(bd, 0.0, "no boundary points on a periodic grid");
        let full = eval_bracket(
            &grid,
            &z,
            &eos,
            &pheno,
            BracketVariant::PoissonEnergy,
            Scope::Full,
            &fns[0],
            &fns[1],
        )
        .unwrap();
        let bulk = eval_bracket(
            &grid,
            &z,
            &eos,
            &pheno,
            BracketVariant::PoissonEnergy,
            Scope::Bulk,
            &fns[0],
            &fns[1],
        )
        .unwrap();
        assert_eq!(full, bulk, "bulk equals full when the boundary part is empty");
    }

    #[test]
    fn boundary_pairing_identity_on_interval_grid() {
        let eos = eos2();
        let pheno = pheno2();
        let grid = Grid::new(GridKind::SbpInterval, Stencil::Central2, 16, 2.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for trial in 0..5 {
            let z = random_smooth_state(&grid, 2, PotentialForm::EnergyForm, &mut rng);
            // Arbitrary smooth cotangent assembled from test-functional
            // gradients plus a constant offset.
            let fns = functional_set(&grid);
            let mut phi = fns[trial % fns.len()].gradient(&grid, &z);
            phi.axpy(0.5, &fns[(trial + 2) % fns.len()].gradient(&grid, &z));
            for i in 0..grid.n {
                phi.th[i] += 0.25;
                phi.m[1][i] += 0.1;
            }
            let (res, scale) = boundary_identity_residual(&grid, &z, &eos, &pheno, &phi).unwrap();
            assert!(
                res <= 1e-12 * scale,
                "boundary pairing identity trial {trial}: {res:.3e} (scale {scale:.3e})"
            );
        }
    }

    #[test]
    fn leibniz_rule_holds_for_all_variants() {
        let eos = eos2();
        let pheno = pheno2();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
        let grid = Grid::new(GridKind::SbpInterval, Stencil::Central2, 12, 2.0).unwrap();
        let fns = functional_set(&grid);
        for (bracket, form) in [
            (BracketVariant::PoissonEnergy, PotentialForm::EnergyForm),
            (BracketVariant::DissipationEnergy, PotentialForm::EnergyForm),
            (BracketVariant::PoissonEntropy, PotentialForm::EntropyForm),
            (BracketVariant::DissipationEntropy, PotentialForm::EntropyForm),
        ] {
            let z = random_smooth_state(&grid, 2, form, &mut rng);
            let (res, scale) =
                leibniz_residual(&grid, &z, &eos, &pheno, bracket, &fns[0], &fns[2], &fns[1])
                    .unwrap();
            assert!(res <= 1e-12 * scale, "{bracket:?} Leibniz residual: {res:.3e}");
        }
    }

    #[test]
    fn jacobi_identity_exact_for_linear_functionals_on_spectral_grid() {
        // With band-limited profiles and a spectral derivative, every
        // product stays below the aliasing limit, so the continuum
        // cancellations of the cyclic sum hold to rounding.
        let eos = eos2();
        let pheno = pheno2();
        let grid = Grid::new(GridKind::Periodic, Stencil::Spectral, 16, 2.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let z = random_smooth_state(&grid, 2, PotentialForm::EnergyForm, &mut rng);
        let fa = TestFunctional::monomial("a", Block::M(0), harmonic_profile(&grid, 1, 0.2), 1);
        let fb = TestFunctional::monomial("b", Block::M(0), harmonic_profile(&grid, 1, 1.0), 1);
        let fc = TestFunctional::monomial("c", Block::Rho(0), harmonic_profile(&grid, 2, 0.5), 1);
        let result = jacobi_residual(&grid, &z, &eos, &pheno, [&fa, &fb, &fc], JacobiMethod::ClosedForm)
            .unwrap();
        assert!(
            result.residual <= 1e-10 * result.scale,
            "Jacobi residual {:.3e} (scale {:.3e})",
            result.residual,
            result.scale
        );
    }

    #[test]
    fn jacobi_closed_form_matches_nested_finite_differences() {
        let eos = eos2();
        let pheno = pheno2();
        let grid = Grid::new(GridKind::Periodic, Stencil::Central2, 10, 2.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let z = random_smooth_state(&grid, 2, PotentialForm::EnergyForm, &mut rng);
        let fa = TestFunctional::monomial("a", Block::Rho(0), harmonic_profile(&grid, 1, 0.2), 3);
        let fb = TestFunctional::monomial("b", Block::M(0), harmonic_profile(&grid, 1, 1.0), 2);
        let fc = TestFunctional::monomial("c", Block::Th, harmonic_profile(&grid, 2, 0.5), 3);
        let closed = jacobi_residual(&grid, &z, &eos, &pheno, [&fa, &fb, &fc], JacobiMethod::ClosedForm)
            .unwrap();
        let nested = jacobi_residual(&grid, &z, &eos, &pheno, [&fa, &fb, &fc], JacobiMethod::NestedFd)
            .unwrap();
        let scale = closed.scale.max(nested.scale);
        assert!(
            (closed.residual - nested.residual).abs() <= 1e-5 * scale,
            "closed {:.6e} vs nested {:.6e} (scale {:.3e})",
            closed.residual,
            nested.residual,
            scale
        );
    }

    #[test]
    fn jacobi_residual_converges_under_refinement() {
        // Cubic functionals on a second-order stencil: the cyclic sum is a
        // pure truncation error and must shrink at the stencil's order.
        let eos = eos2();
        let pheno = pheno2();
        let analytic_state = |grid: &Grid| -> MixtureState {
            let two_pi = 2.0 * std::f64::consts::PI;
            let f = |x: f64, base: f64, amp: f64, k: f64, ph: f64| {
                base + amp * (two_pi * k * x / grid.length + ph).sin()
            };
            MixtureState {
                rho: vec![
                    grid.x.iter().map(|&x| f(x, 1.2, 0.15, 1.0, 0.3)).collect(),
                    grid.x.iter().map(|&x| f(x, 0.9, 0.1, 2.0, 1.1)).collect(),
                ],
                m: [
                    grid.x.iter().map(|&x| f(x, 0.0, 0.2, 1.0, 2.0)).collect(),
                    grid.x.iter().map(|&x| f(x, 0.0, 0.15, 2.0, 0.4)).collect(),
                    grid.x.iter().map(|&x| f(x, 0.0, 0.1, 1.0, 1.5)).collect(),
                ],
                thermal: grid.x.iter().map(|&x| f(x, 0.2, 0.15, 1.0, 0.9)).collect(),
                form: PotentialForm::EnergyForm,
            }
        };
        let residual_at = |n: usize| -> f64 {
            let grid = Grid::new(GridKind::Periodic, Stencil::Central2, n, 2.0).unwrap();
            let z = analytic_state(&grid);
            // Two momentum-block functionals force the vector-field
            // commutator, where the difference operator's Leibniz failure
            // shows up; a single momentum functional cancels identically.
            let fa = TestFunctional::monomial("a", Block::M(0), harmonic_profile(&grid, 1, 0.2), 3);
            let fb = TestFunctional::monomial("b", Block::M(0), harmonic_profile(&grid, 1, 2.2), 3);
            let fc = TestFunctional::monomial("c", Block::Rho(0), harmonic_profile(&grid, 1, 0.5), 3);
            jacobi_residual(&grid, &z, &eos, &pheno, [&fa, &fb, &fc], JacobiMethod::ClosedForm)
                .unwrap()
                .residual
        };
        let coarse = residual_at(16);
        let fine = residual_at(32);
        assert!(
            coarse > 1e-10,
            "coarse residual should be a visible truncation error (coarse {coarse:.3e}, fine {fine:.3e})"
        );
        assert!(
            coarse / fine >= 3.5,
            "refinement ratio {:.2} (coarse {coarse:.3e}, fine {fine:.3e})",
            coarse / fine
        );
    }
}
