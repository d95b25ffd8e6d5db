//! Thermodynamic closure: equations of state in both potential forms,
//! phenomenological transport/reaction coefficients with Onsager-Casimir
//! structure, and the pointwise constitutive fluxes with their entropy
//! production.
//!
//! Internal units are dimensionless with the Boltzmann constant equal to 1.

use crate::discretize::{ddot, deviator, sym, trace, Mat3};
use crate::report::{CheckItem, Report};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Which thermal variable is the independent one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialForm {
    /// Internal energy density `u(rho, s)`: thermal variable is `s`.
    EnergyForm,
    /// Entropy density `s(rho, u)`: thermal variable is `u`.
    EntropyForm,
}

#[derive(Debug, Error)]
pub enum ThermoError {
    #[error("non-positive partial density rho[{index}] = {value} (built-in EOS needs rho_alpha > 0)")]
    NonPositiveDensity { index: usize, value: f64 },
    #[error("total density {total} below admissibility floor {floor}")]
    TotalDensityTooSmall { total: f64, floor: f64 },
    #[error("non-positive temperature T = {0}; thermal variable outside the EOS domain")]
    NonPositiveTemperature(f64),
    #[error("dimension mismatch: expected {expected} constituents, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("stoichiometry violates mass conservation in reaction {reaction}: sum_a gamma*m = {residual}")]
    MassConservationViolated { reaction: usize, residual: f64 },
    #[error("reaction coefficient matrix L^kb is not symmetric: |L[{k}][{b}] - L[{b}][{k}]| = {residual}")]
    ReactionMatrixNotSymmetric { k: usize, b: usize, residual: f64 },
    #[error("inadmissible state at node {node}: {source}")]
    InadmissibleNode {
        node: usize,
        #[source]
        source: Box<ThermoError>,
    },
}

/// Built-in ideal-mixture equation of state.
///
/// With number densities `n_a = rho_a / m_a` and `n = sum n_a`:
/// `u = c_v * n * T`, `s = sum_a n_a (c_v ln T - ln n_a + sigma_a)`,
/// `mu_a = (T/m_a)(ln n_a + 1 + c_v - c_v ln T - sigma_a)`, `p = n T`.
/// Both potential directions are closed-form, so the two forms are exact
/// inverses of each other up to rounding.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdealMixtureEos {
    /// Molecular masses, one per constituent, all positive.
    pub masses: Vec<f64>,
    /// Heat-capacity parameter, positive.
    pub c_v: f64,
    /// Per-constituent entropy constants.
    pub sigma: Vec<f64>,
    /// Admissibility floor for the total density.
    pub rho_floor: f64,
}

/// Pointwise thermodynamic quantities derived from the EOS.
#[derive(Debug, Clone)]
pub struct ThermoPoint {
    pub t: f64,
    pub mu: Vec<f64>,
    pub p: f64,
    pub u: f64,
    pub s: f64,
}

impl IdealMixtureEos {
    pub fn new(masses: Vec<f64>, c_v: f64, sigma: Vec<f64>) -> Self {
        assert!(!masses.is_empty(), "need at least one constituent");
        assert_eq!(masses.len(), sigma.len(), "masses and sigma must have equal length");
        assert!(masses.iter().all(|&m| m > 0.0), "molecular masses must be positive");
        assert!(c_v > 0.0, "heat-capacity parameter must be positive");
        Self { masses, c_v, sigma, rho_floor: 1e-10 }
    }

    pub fn n_constituents(&self) -> usize {
        self.masses.len()
    }

    fn check_rho(&self, rho: &[f64]) -> Result<(), ThermoError> {
        if rho.len() != self.masses.len() {
            return Err(ThermoError::DimensionMismatch { expected: self.masses.len(), got: rho.len() });
        }
        for (i, &r) in rho.iter().enumerate() {
            if r <= 0.0 {
                return Err(ThermoError::NonPositiveDensity { index: i, value: r });
            }
        }
        let total: f64 = rho.iter().sum();
        if total < self.rho_floor {
            return Err(ThermoError::TotalDensityTooSmall { total, floor: self.rho_floor });
        }
        Ok(())
    }

    fn number_densities(&self, rho: &[f64]) -> (Vec<f64>, f64) {
        let n_a: Vec<f64> = rho.iter().zip(&self.masses).map(|(r, m)| r / m).collect();
        let n = n_a.iter().sum();
        (n_a, n)
    }

    fn point_from_t(&self, rho: &[f64], t: f64) -> Result<ThermoPoint, ThermoError> {
        if t <= 0.0 {
            return Err(ThermoError::NonPositiveTemperature(t));
        }
        let (n_a, n) = self.number_densities(rho);
        let u = self.c_v * n * t;
        let s: f64 = n_a
            .iter()
            .zip(&self.sigma)
            .map(|(na, sig)| na * (self.c_v * t.ln() - na.ln() + sig))
            .sum();
        let mu: Vec<f64> = n_a
            .iter()
            .zip(self.masses.iter().zip(&self.sigma))
            .map(|(na, (m, sig))| (t / m) * (na.ln() + 1.0 + self.c_v - self.c_v * t.ln() - sig))
            .collect();
        let p = n * t;
        Ok(ThermoPoint { t, mu, p, u, s })
    }

    /// Evaluates the EOS from the thermal variable selected by `form`.
    ///
    /// `EnergyForm` interprets `thermal` as entropy density `s`;
    /// `EntropyForm` interprets it as internal energy density `u`.
    pub fn eval(&self, rho: &[f64], thermal: f64, form: PotentialForm) -> Result<ThermoPoint, ThermoError> {
        self.check_rho(rho)?;
        let (n_a, n) = self.number_densities(rho);
        let t = match form {
            PotentialForm::EntropyForm => thermal / (self.c_v * n),
            PotentialForm::EnergyForm => {
                // Invert s = n c_v ln T - sum n_a ln n_a + sum n_a sigma_a.
                let offset: f64 = n_a
                    .iter()
                    .zip(&self.sigma)
                    .map(|(na, sig)| na * (na.ln() - sig))
                    .sum();
                ((thermal + offset) / (self.c_v * n)).exp()
            }
        };
        self.point_from_t(rho, t)
    }

    /// Converts the thermal variable between entropy density and internal
    /// energy density (round trip is the identity up to rounding).
    pub fn convert_thermal(
        &self,
        rho: &[f64],
        thermal: f64,
        from: PotentialForm,
    ) -> Result<f64, ThermoError> {
        let pt = self.eval(rho, thermal, from)?;
        Ok(match from {
            PotentialForm::EnergyForm => pt.u,
            PotentialForm::EntropyForm => pt.s,
        })
    }
}

/// Transport and reaction coefficients with Onsager-Casimir structure.
///
/// All coefficients are state-independent constants, which makes the
/// zero-row-sum and PSD constraints exactly enforceable and hence the
/// discrete degeneracy identities exact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhenomenologicalModel {
    /// Shear viscosity `zeta >= 0`.
    pub zeta: f64,
    /// Bulk viscosity `lambda >= 0`.
    pub lambda: f64,
    /// Heat conductivity `kappa >= 0`.
    pub kappa: f64,
    /// Thermal-diffusion cross coefficients, one per constituent; zero sum.
    pub b_cross: Vec<f64>,
    /// Diffusion matrix (nu x nu), symmetric with zero row sums.
    pub b_diff: Vec<Vec<f64>>,
    /// Stoichiometric table gamma[alpha][k] (nu x n_reactions).
    pub gamma: Vec<Vec<f64>>,
    /// Molecular masses (shared with the EOS).
    pub masses: Vec<f64>,
    /// Reaction coefficient matrix L^{kb} (n x n, symmetric PSD).
    pub l_kb: Vec<Vec<f64>>,
    /// Reaction-dilation coupling coefficients L^k (n entries).
    pub l_k: Vec<f64>,
    /// Derived: `LL_a = sum_k gamma_a^k m_a L^k` (zero sum).
    pub ll: Vec<f64>,
    /// Derived: `LL_ab = sum_kb gamma_a^k m_a L^kb gamma_b^b m_b`
    /// (symmetric PSD, zero row sums).
    pub ll_mat: Vec<Vec<f64>>,
}

/// Builds the derived reaction coefficients from stoichiometry and the
/// reaction coefficient matrix:
/// `LL_a = sum_k gamma_a^k m_a L^k`, `LL_ab = sum_{k,b} gamma_a^k m_a L^{kb} gamma_b^b m_b`.
pub fn build_reaction_coeffs(
    gamma: &[Vec<f64>],
    masses: &[f64],
    l_kb: &[Vec<f64>],
    l_k: &[f64],
) -> Result<(Vec<f64>, Vec<Vec<f64>>), ThermoError> {
    let nu = masses.len();
    assert_eq!(gamma.len(), nu, "gamma must have one row per constituent");
    let n_r = l_k.len();
    assert!(gamma.iter().all(|row| row.len() == n_r), "gamma rows must match the reaction count");
    assert_eq!(l_kb.len(), n_r, "L^kb must be n x n");

    for k in 0..n_r {
        for b in 0..n_r {
            let resid = (l_kb[k][b] - l_kb[b][k]).abs();
            if resid > 1e-12 * (1.0 + l_kb[k][b].abs()) {
                return Err(ThermoError::ReactionMatrixNotSymmetric { k, b, residual: resid });
            }
        }
        let resid: f64 = (0..nu).map(|a| gamma[a][k] * masses[a]).sum();
        let scale: f64 = (0..nu).map(|a| (gamma[a][k] * masses[a]).abs()).sum::<f64>().max(1.0);
        if resid.abs() > 1e-12 * scale {
            return Err(ThermoError::MassConservationViolated { reaction: k, residual: resid });
        }
    }

    let mut ll = vec![0.0; nu];
    let mut ll_mat = vec![vec![0.0; nu]; nu];
    for a in 0..nu {
        for k in 0..n_r {
            ll[a] += gamma[a][k] * masses[a] * l_k[k];
            for b in 0..nu {
                for kb in 0..n_r {
                    ll_mat[a][b] += gamma[a][k] * masses[a] * l_kb[k][kb] * gamma[b][kb] * masses[b];
                }
            }
        }
    }
    Ok((ll, ll_mat))
}

impl PhenomenologicalModel {
    /// Assembles a model, deriving the reaction coefficients.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        zeta: f64,
        lambda: f64,
        kappa: f64,
        b_cross: Vec<f64>,
        b_diff: Vec<Vec<f64>>,
        gamma: Vec<Vec<f64>>,
        masses: Vec<f64>,
        l_kb: Vec<Vec<f64>>,
        l_k: Vec<f64>,
    ) -> Result<Self, ThermoError> {
        let (ll, ll_mat) = build_reaction_coeffs(&gamma, &masses, &l_kb, &l_k)?;
        Ok(Self { zeta, lambda, kappa, b_cross, b_diff, gamma, masses, l_kb, l_k, ll, ll_mat })
    }

    pub fn n_constituents(&self) -> usize {
        self.masses.len()
    }

    pub fn n_reactions(&self) -> usize {
        self.l_k.len()
    }

    /// A model with every coefficient zero (trivially consistent).
    pub fn inviscid(nu: usize) -> Self {
        Self {
            zeta: 0.0,
            lambda: 0.0,
            kappa: 0.0,
            b_cross: vec![0.0; nu],
            b_diff: vec![vec![0.0; nu]; nu],
            gamma: vec![vec![]; nu],
            masses: vec![1.0; nu],
            l_kb: vec![],
            l_k: vec![],
            ll: vec![0.0; nu],
            ll_mat: vec![vec![0.0; nu]; nu],
        }
    }
}

fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let symm = 0.5 * (m + m.transpose());
    symm.symmetric_eigen().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Validates every structural invariant of the model against the supplied
/// temperature samples, returning a full diagnostics report (it never errors:
/// failed invariants become failed checks).
pub fn validate_model(pheno: &PhenomenologicalModel, t_samples: &[f64]) -> Report {
    let nu = pheno.n_constituents();
    let n_r = pheno.n_reactions();
    let mut report = Report::default();

    report.push(CheckItem::lower_bounded("zeta-nonnegative", pheno.zeta, 0.0, "shear viscosity"));
    report.push(CheckItem::lower_bounded("lambda-nonnegative", pheno.lambda, 0.0, "bulk viscosity"));
    report.push(CheckItem::lower_bounded("kappa-nonnegative", pheno.kappa, 0.0, "heat conductivity"));

    // Zero-row-sum diffusion constraints (forces sum_a J_a = 0).
    let b_cross_sum: f64 = pheno.b_cross.iter().sum();
    let b_cross_scale = pheno.b_cross.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
    report.push(CheckItem::bounded(
        "b-cross-zero-sum",
        b_cross_sum.abs() / b_cross_scale,
        1e-12,
        "sum_b B_b = 0",
    ));
    let mut max_row = 0.0f64;
    for row in &pheno.b_diff {
        let s: f64 = row.iter().sum();
        let sc = row.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        max_row = max_row.max(s.abs() / sc);
    }
    report.push(CheckItem::bounded("b-diff-zero-row-sums", max_row, 1e-12, "sum_b B_ab = 0 per row"));

    // Heat/diffusion coupling matrix [[kappa T^2, B_b],[B_a, B_ab]] must be
    // PSD at every sampled temperature.
    let mut min_eig = f64::INFINITY;
    for &t in t_samples {
        let mut m = DMatrix::zeros(nu + 1, nu + 1);
        m[(0, 0)] = pheno.kappa * t * t;
        for a in 0..nu {
            m[(0, a + 1)] = pheno.b_cross[a];
            m[(a + 1, 0)] = pheno.b_cross[a];
            for b in 0..nu {
                m[(a + 1, b + 1)] = pheno.b_diff[a][b];
            }
        }
        let scale = m.norm().max(1.0);
        min_eig = min_eig.min(min_symmetric_eigenvalue(&m) / scale);
    }
    if t_samples.is_empty() {
        min_eig = 0.0;
    }
    report.push(CheckItem::lower_bounded(
        "heat-diffusion-matrix-psd",
        min_eig,
        1e-10,
        "min scaled eigenvalue of [[kappa T^2, B],[B, B_ab]] over T samples",
    ));

    // Mass conservation of the stoichiometric table.
    let mut max_mass_res = 0.0f64;
    for k in 0..n_r {
        let s: f64 = (0..nu).map(|a| pheno.gamma[a][k] * pheno.masses[a]).sum();
        let sc: f64 = (0..nu).map(|a| (pheno.gamma[a][k] * pheno.masses[a]).abs()).sum::<f64>().max(1.0);
        max_mass_res = max_mass_res.max(s.abs() / sc);
    }
    report.push(CheckItem::bounded(
        "stoichiometric-mass-conservation",
        max_mass_res,
        1e-12,
        "sum_a gamma_a^k m_a = 0 per reaction",
    ));

    // Reaction coefficient matrix L^kb: symmetric PSD.
    let mut l_sym_res = 0.0f64;
    for k in 0..n_r {
        for b in 0..n_r {
            l_sym_res = l_sym_res.max((pheno.l_kb[k][b] - pheno.l_kb[b][k]).abs());
        }
    }
    report.push(CheckItem::bounded("reaction-matrix-symmetric", l_sym_res, 1e-12, "L^kb = L^bk"));
    let l_mat = DMatrix::from_fn(n_r, n_r, |k, b| pheno.l_kb[k][b]);
    let l_scale = l_mat.norm().max(1.0);
    report.push(CheckItem::lower_bounded(
        "reaction-matrix-psd",
        min_symmetric_eigenvalue(&l_mat) / l_scale,
        1e-10,
        "min scaled eigenvalue of L^kb",
    ));

    // Derived reaction coefficients: zero sums and symmetry.
    let ll_sum: f64 = pheno.ll.iter().sum();
    let ll_scale = pheno.ll.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
    report.push(CheckItem::bounded("reaction-ll-zero-sum", ll_sum.abs() / ll_scale, 1e-12, "sum_a LL_a = 0"));
    let mut ll_row = 0.0f64;
    let mut ll_sym = 0.0f64;
    for a in 0..nu {
        let s: f64 = pheno.ll_mat[a].iter().sum();
        let sc = pheno.ll_mat[a].iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        ll_row = ll_row.max(s.abs() / sc);
        for b in 0..nu {
            ll_sym = ll_sym.max((pheno.ll_mat[a][b] - pheno.ll_mat[b][a]).abs());
        }
    }
    report.push(CheckItem::bounded("reaction-ll-matrix-zero-row-sums", ll_row, 1e-12, "sum_b LL_ab = 0 per row"));
    report.push(CheckItem::bounded("reaction-ll-matrix-symmetric", ll_sym, 1e-12, "LL_ab = LL_ba"));

    // Bulk/reaction coupling matrix [[lambda, -LL_b],[LL_a, LL_ab]]: its
    // quadratic form is PSD (the off-diagonal coupling is anti-symmetric,
    // so only the diagonal blocks contribute); check the symmetric part.
    let mut m2 = DMatrix::zeros(nu + 1, nu + 1);
    m2[(0, 0)] = pheno.lambda;
    for a in 0..nu {
        m2[(0, a + 1)] = -pheno.ll[a];
        m2[(a + 1, 0)] = pheno.ll[a];
        for b in 0..nu {
            m2[(a + 1, b + 1)] = pheno.ll_mat[a][b];
        }
    }
    let m2_scale = m2.norm().max(1.0);
    report.push(CheckItem::lower_bounded(
        "bulk-reaction-matrix-psd",
        min_symmetric_eigenvalue(&m2) / m2_scale,
        1e-10,
        "min scaled eigenvalue of sym [[lambda, -LL],[LL, LL_ab]]",
    ));
    // The anti-symmetric (Casimir) coupling: first row is the exact negative
    // of the first column.
    let mut casimir = 0.0f64;
    for a in 0..nu {
        casimir = casimir.max((m2[(0, a + 1)] + m2[(a + 1, 0)]).abs());
    }
    report.push(CheckItem::bounded("casimir-antisymmetric-coupling", casimir, 1e-12, "row = -column coupling of lambda/LL block"));

    report
}

/// Pointwise kinematic/thermodynamic inputs to the constitutive closure.
#[derive(Debug, Clone)]
pub struct ClosureInput {
    pub point: ThermoPoint,
    pub rho: Vec<f64>,
    pub v: [f64; 3],
    pub grad_v: Mat3,
    /// Gradient of 1/T.
    pub grad_inv_t: [f64; 3],
    /// Gradients of mu_alpha / T, one 3-vector per constituent.
    pub grad_mu_over_t: Vec<[f64; 3]>,
}

/// Constitutive fluxes and entropy production at one point.
#[derive(Debug, Clone)]
pub struct LocalFluxes {
    /// Deviatoric (traceless symmetric) viscous stress.
    pub t_dev: Mat3,
    /// Heat flux.
    pub q: [f64; 3],
    /// Diffusion fluxes, one per constituent; they sum to zero.
    pub j_diff: Vec<[f64; 3]>,
    /// Reaction rates, one per reaction.
    pub rates: Vec<f64>,
    /// Dynamic pressure.
    pub pi: f64,
    /// Viscous stress `S = (lambda - 2 zeta/3) div v I + zeta (grad v + grad v^T)`.
    pub s_visc: Mat3,
    /// Total stress `T = -(p + pi) I + T^d`.
    pub t_full: Mat3,
    /// Mass production densities; they sum to zero.
    pub tau: Vec<f64>,
    /// Entropy production density from the flux-force sum.
    pub sigma: f64,
    /// Entropy production density reassembled from the pre-closure form
    /// (total stress contracted with the velocity gradient).
    pub sigma_preclosure: f64,
    /// Non-convective entropy flux `(q - sum_a mu_a J_a)/T`.
    pub phi: [f64; 3],
}

/// Evaluates the linear TIP closures at a point and assembles the entropy
/// production both from the flux-force sum and from the pre-closure form;
/// the two must agree to rounding.
pub fn constitutive_closure(input: &ClosureInput, pheno: &PhenomenologicalModel) -> Result<LocalFluxes, ThermoError> {
    let t = input.point.t;
    if t <= 0.0 {
        return Err(ThermoError::NonPositiveTemperature(t));
    }
    let nu = pheno.n_constituents();
    let n_r = pheno.n_reactions();
    assert_eq!(input.grad_mu_over_t.len(), nu, "need one mu/T gradient per constituent");

    let d_sym = sym(&input.grad_v);
    let div_v = trace(&input.grad_v);

    // Deviatoric stress: 2 zeta (D - div v / 3 I).
    let mut t_dev = deviator(&d_sym);
    for row in t_dev.iter_mut() {
        for val in row.iter_mut() {
            *val *= 2.0 * pheno.zeta;
        }
    }

    // Heat and diffusion fluxes (Fourier/Fick generalizations).
    let mut q = [0.0; 3];
    let mut j_diff = vec![[0.0; 3]; nu];
    for c in 0..3 {
        q[c] = pheno.kappa * t * t * input.grad_inv_t[c];
        for b in 0..nu {
            q[c] -= pheno.b_cross[b] * input.grad_mu_over_t[b][c];
        }
        for (a, j) in j_diff.iter_mut().enumerate() {
            j[c] = pheno.b_cross[a] * input.grad_inv_t[c];
            for b in 0..nu {
                j[c] -= pheno.b_diff[a][b] * input.grad_mu_over_t[b][c];
            }
        }
    }

    // Reaction affinities and rates; dynamic pressure via the Casimir
    // coupling: rates = -L^{kb} A_b + L^k div v, -pi = L^k A_k + lambda div v.
    let affinity: Vec<f64> = (0..n_r)
        .map(|k| (0..nu).map(|a| input.point.mu[a] * pheno.gamma[a][k] * pheno.masses[a]).sum())
        .collect();
    let rates: Vec<f64> = (0..n_r)
        .map(|k| {
            let mut r = pheno.l_k[k] * div_v;
            for b in 0..n_r {
                r -= pheno.l_kb[k][b] * affinity[b];
            }
            r
        })
        .collect();
    let pi = -((0..n_r).map(|k| pheno.l_k[k] * affinity[k]).sum::<f64>() + pheno.lambda * div_v);

    // Mass production densities.
    let tau: Vec<f64> = (0..nu)
        .map(|a| (0..n_r).map(|k| pheno.gamma[a][k] * pheno.masses[a] * rates[k]).sum())
        .collect();

    // Viscous and total stress.
    let mut s_visc = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            s_visc[i][j] = pheno.zeta * (input.grad_v[i][j] + input.grad_v[j][i]);
        }
        s_visc[i][i] += (pheno.lambda - 2.0 * pheno.zeta / 3.0) * div_v;
    }
    let mut t_full = t_dev;
    for i in 0..3 {
        t_full[i][i] += -(input.point.p + pi);
    }

    // Entropy production, flux-force route:
    // (1/T) T^d : D - (pi/T) div v + q . grad(1/T)
    // - sum_a J_a . grad(mu_a/T) - (1/T) sum_k A_k rate_k.
    let mut sigma = ddot(&t_dev, &d_sym) / t - pi / t * div_v;
    for c in 0..3 {
        sigma += q[c] * input.grad_inv_t[c];
        for a in 0..nu {
            sigma -= j_diff[a][c] * input.grad_mu_over_t[a][c];
        }
    }
    for k in 0..n_r {
        sigma -= affinity[k] * rates[k] / t;
    }

    // Pre-closure route: (1/T) T_full : grad v + (p/T) div v + q . grad(1/T)
    // - sum_a J_a . grad(mu_a/T) - (1/T) sum_a tau_a mu_a.
    let mut sigma_pre = ddot(&t_full, &input.grad_v) / t + input.point.p / t * div_v;
    for c in 0..3 {
        sigma_pre += q[c] * input.grad_inv_t[c];
        for a in 0..nu {
            sigma_pre -= j_diff[a][c] * input.grad_mu_over_t[a][c];
        }
    }
    for a in 0..nu {
        sigma_pre -= tau[a] * input.point.mu[a] / t;
    }

    // Entropy flux.
    let mut phi = [0.0; 3];
    for c in 0..3 {
        phi[c] = q[c];
        for a in 0..nu {
            phi[c] -= input.point.mu[a] * j_diff[a][c];
        }
        phi[c] /= t;
    }

    Ok(LocalFluxes { t_dev, q, j_diff, rates, pi, s_visc, t_full, tau, sigma, sigma_preclosure: sigma_pre, phi })
}
