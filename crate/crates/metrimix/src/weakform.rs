//! Independently coded weak-form discretization of the mixture evolution,
//! used as a cross-check oracle for the operator route in
//! [`crate::generic_ops`].
//!
//! This module deliberately shares no operator assembly with the main path:
//! it builds its own dense differentiation matrix and quadrature weights,
//! evaluates the block-by-block integral expressions of the transport,
//! dissipation, and boundary pairings by direct loops, and resolves the
//! resulting linear-in-test-function form into a dual vector through an
//! explicit transpose multiplication. Agreement with the operator route is
//! therefore a genuine consistency check of two discretization code paths.

use crate::discretize::{Field, GridKind, Stencil};
use crate::generic_ops::{Cotangent, MixtureState};
use crate::thermostate::{IdealMixtureEos, PhenomenologicalModel, PotentialForm, ThermoError};
use nalgebra::DMatrix;

/// Self-contained discrete calculus for the oracle path.
pub struct WeakformOracle {
    pub n: usize,
    pub length: f64,
    pub kind: GridKind,
    d: DMatrix<f64>,
    w: Vec<f64>,
}

impl WeakformOracle {
    /// Builds the oracle's own derivative matrix and quadrature weights for
    /// the given mesh description.
    pub fn new(kind: GridKind, stencil: Stencil, n: usize, length: f64) -> Self {
        let mut d = DMatrix::zeros(n, n);
        let w;
        match (kind, stencil) {
            (GridKind::Periodic, Stencil::Central2) => {
                let h = length / n as f64;
                for i in 0..n {
                    d[(i, (i + 1) % n)] = 0.5 / h;
                    d[(i, (i + n - 1) % n)] = -0.5 / h;
                }
                w = vec![h; n];
            }
            (GridKind::Periodic, Stencil::Spectral) => {
                assert!(n % 2 == 0, "spectral oracle needs an even node count");
                let scale = 2.0 * std::f64::consts::PI / length;
                for i in 0..n {
                    for j in 0..n {
                        if i != j {
                            let k = i as isize - j as isize;
                            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                            let arg = std::f64::consts::PI * k as f64 / n as f64;
                            d[(i, j)] = 0.5 * sign / arg.tan() * scale;
                        }
                    }
                }
                w = vec![length / n as f64; n];
            }
            (GridKind::SbpInterval, Stencil::Central2) => {
                let h = length / (n - 1) as f64;
                d[(0, 0)] = -1.0 / h;
                d[(0, 1)] = 1.0 / h;
                for i in 1..n - 1 {
                    d[(i, i + 1)] = 0.5 / h;
                    d[(i, i - 1)] = -0.5 / h;
                }
                d[(n - 1, n - 2)] = -1.0 / h;
                d[(n - 1, n - 1)] = 1.0 / h;
                let mut wi = vec![h; n];
                wi[0] = 0.5 * h;
                wi[n - 1] = 0.5 * h;
                w = wi;
            }
            _ => panic!("unsupported mesh description for the oracle"),
        }
        Self { n, length, kind, d, w }
    }

    fn deriv(&self, f: &[f64]) -> Field {
        let v = DMatrix::from_column_slice(self.n, 1, f);
        (&self.d * v).as_slice().to_vec()
    }

    /// Resolves a weighted coefficient of a test-function derivative into the
    /// dual vector: contribution of `int b * (d phi / dx) dx` to `phi`'s dual
    /// slot, i.e. `(1/w) D^T (w b)`.
    fn dual_of_deriv_coefficient(&self, b: &[f64]) -> Field {
        let wb = DMatrix::from_column_slice(self.n, 1, &b.iter().zip(&self.w).map(|(b, w)| b * w).collect::<Vec<_>>());
        let dt = self.d.transpose() * wb;
        (0..self.n).map(|i| dt[(i, 0)] / self.w[i]).collect()
    }

    /// Evaluates the semi-discrete right-hand side of the s-state mixture
    /// equations from the weak formulation: for every test cotangent, the
    /// pairing with the result equals the block-form transport plus
    /// dissipation (plus boundary) integrals.
    ///
    /// `ports` supplies the boundary input vectors (one per endpoint, in
    /// left-to-right order) for open runs on interval meshes.
    pub fn rhs_oracle(
        &self,
        z: &MixtureState,
        eos: &IdealMixtureEos,
        pheno: &PhenomenologicalModel,
        ports: Option<&[Vec<f64>]>,
    ) -> Result<Cotangent, ThermoError> {
        assert_eq!(z.form, PotentialForm::EnergyForm, "the oracle works in the s-state formulation");
        let n = self.n;
        let nu = z.nu();

        // Nodal thermodynamics and kinematics via independent loops.
        let mut tot = vec![0.0; n];
        for r in &z.rho {
            for i in 0..n {
                tot[i] += r[i];
            }
        }
        let vx: Field = (0..n).map(|i| z.m[0][i] / tot[i]).collect();
        let vy: Field = (0..n).map(|i| z.m[1][i] / tot[i]).collect();
        let vz: Field = (0..n).map(|i| z.m[2][i] / tot[i]).collect();
        let mut t = vec![0.0; n];
        let mut mu = vec![vec![0.0; n]; nu];
        let mut rho_i = vec![0.0; nu];
        for i in 0..n {
            for a in 0..nu {
                rho_i[a] = z.rho[a][i];
            }
            let pt = eos.eval(&rho_i, z.thermal[i], PotentialForm::EnergyForm)?;
            t[i] = pt.t;
            for a in 0..nu {
                mu[a][i] = pt.mu[a];
            }
        }
        let inv_t: Field = t.iter().map(|t| 1.0 / t).collect();
        let mu_over_t: Vec<Field> =
            (0..nu).map(|a| (0..n).map(|i| mu[a][i] / t[i]).collect()).collect();
        let s = &z.thermal;

        // Generator gradients in closed form (s-state).
        let half_v2: Field =
            (0..n).map(|i| 0.5 * (vx[i] * vx[i] + vy[i] * vy[i] + vz[i] * vz[i])).collect();
        let gh_rho: Vec<Field> =
            (0..nu).map(|a| (0..n).map(|i| -half_v2[i] + mu[a][i]).collect()).collect();
        let gh_s = t.clone();
        // gradS is the unit thermal cotangent in the s-state.

        // Velocity gradient entries (slab symmetry: only the x-column of
        // grad v is nonzero) and the symmetric part.
        let dvx = self.deriv(&vx);
        let dvy = self.deriv(&vy);
        let dvz = self.deriv(&vz);
        let div_v = dvx.clone();

        // Dual accumulation: A-coefficients pair with phi directly,
        // B-coefficients pair with d phi / dx.
        let mut a_rho = vec![vec![0.0; n]; nu];
        let mut b_rho = vec![vec![0.0; n]; nu];
        let mut a_m = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let mut b_m = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let mut a_s = vec![0.0; n];
        let mut b_s = vec![0.0; n];

        // ---- transport form at psi = gradH --------------------------------
        // int -rho_a [phi_Mx d(gradH_rho_a) - v_x d(phi_rho_a)]
        //   + [phi_Mx d(LL_a gradH_rho_a) - v_x d(LL_a phi_rho_a)]
        //   - M_c [phi_Mx d(v_c) - v_x d(phi_Mc)]
        //   - s [phi_Mx d(T) - v_x d(phi_s)] dx.
        for a in 0..nu {
            let dg = self.deriv(&gh_rho[a]);
            let llg: Field = gh_rho[a].iter().map(|g| pheno.ll[a] * g).collect();
            let dllg = self.deriv(&llg);
            for i in 0..n {
                a_m[0][i] += -z.rho[a][i] * dg[i] + dllg[i];
                b_rho[a][i] += z.rho[a][i] * vx[i] - pheno.ll[a] * vx[i];
            }
        }
        for (c, dvc) in [&dvx, &dvy, &dvz].into_iter().enumerate() {
            for i in 0..n {
                a_m[0][i] -= z.m[c][i] * dvc[i];
                b_m[c][i] += z.m[c][i] * vx[i];
            }
        }
        let dt_field = self.deriv(&gh_s);
        for i in 0..n {
            a_m[0][i] -= s[i] * dt_field[i];
            b_s[i] += s[i] * vx[i];
        }

        // ---- dissipation form at psi = gradS = [0, .., 0, 1] --------------
        let d_inv_t = self.deriv(&inv_t);
        let d_mu_t: Vec<Field> = (0..nu).map(|a| self.deriv(&mu_over_t[a])).collect();
        // Density rows: -sum_b LL_ab mu_b phi_rho_a
        //   + d(phi_rho_a) [B_a d(1/T) - sum_b B_ab d(mu_b/T)].
        for a in 0..nu {
            for i in 0..n {
                let mut nodal = 0.0;
                let mut grad = pheno.b_cross[a] * d_inv_t[i];
                for b in 0..nu {
                    nodal -= pheno.ll_mat[a][b] * mu[b][i];
                    grad -= pheno.b_diff[a][b] * d_mu_t[b][i];
                }
                a_rho[a][i] += nodal;
                b_rho[a][i] += grad;
            }
        }
        // Momentum rows: -(zeta tr[(grad phi_M + grad phi_M^T) . Dsym]
        //   + (lambda - 2 zeta / 3) div(phi_M) div v), with Dsym the
        //   symmetric velocity gradient; in slab symmetry the contraction is
        //   2 sum_c d(phi_Mc) Dsym[c][0].
        for i in 0..n {
            let dsym_x0 = dvx[i]; // Dsym[0][0]
            let dsym_y0 = 0.5 * dvy[i];
            let dsym_z0 = 0.5 * dvz[i];
            b_m[0][i] -= 2.0 * pheno.zeta * dsym_x0 + (pheno.lambda - 2.0 * pheno.zeta / 3.0) * div_v[i];
            b_m[1][i] -= 2.0 * pheno.zeta * dsym_y0;
            b_m[2][i] -= 2.0 * pheno.zeta * dsym_z0;
        }
        // Thermal row, nodal part:
        // (1/T)(2 zeta tr[Dsym . Dsym] + (lambda - 2 zeta/3)(div v)^2
        //   + sum_ab mu_a LL_ab mu_b) phi_s.
        for i in 0..n {
            let tr_dd = dvx[i] * dvx[i] + 0.5 * dvy[i] * dvy[i] + 0.5 * dvz[i] * dvz[i];
            let mut mulmu = 0.0;
            for a in 0..nu {
                for b in 0..nu {
                    mulmu += mu[a][i] * pheno.ll_mat[a][b] * mu[b][i];
                }
            }
            a_s[i] += inv_t[i]
                * (2.0 * pheno.zeta * tr_dd
                    + (pheno.lambda - 2.0 * pheno.zeta / 3.0) * div_v[i] * div_v[i]
                    + mulmu);
        }
        // Thermal row, product-derivative parts: terms of the shape
        // int d(f phi_s) * g dx resolved as f * (1/w) D^T (w g).
        let product_pair = |f: &Field, g: &Field, a_s: &mut Field| {
            let dual = self.dual_of_deriv_coefficient(g);
            for i in 0..n {
                a_s[i] += f[i] * dual[i];
            }
        };
        let g0: Field = (0..n)
            .map(|i| {
                let mut g = pheno.kappa * t[i] * t[i] * d_inv_t[i];
                for b in 0..nu {
                    g -= pheno.b_cross[b] * d_mu_t[b][i];
                }
                g
            })
            .collect();
        product_pair(&inv_t, &g0, &mut a_s);
        for a in 0..nu {
            let ga: Field = (0..n)
                .map(|i| {
                    let mut g = -pheno.b_cross[a] * d_inv_t[i];
                    for b in 0..nu {
                        g += pheno.b_diff[a][b] * d_mu_t[b][i];
                    }
                    g
                })
                .collect();
            product_pair(&mu_over_t[a], &ga, &mut a_s);
        }

        // ---- boundary form ------------------------------------------------
        if let Some(u_all) = ports {
            assert_eq!(self.kind, GridKind::SbpInterval, "ports need an interval mesh");
            let endpoints = [(0usize, -1.0f64), (n - 1, 1.0)];
            for ((node, normal), u) in endpoints.into_iter().zip(u_all) {
                let i = node;
                let u1 = u[0];
                let u2 = u[1];
                let u3 = u[2];
                for a in 0..nu {
                    a_rho[a][i] += ((pheno.ll[a] - z.rho[a][i]) * u2 - u[3 + a]) / self.w[i];
                }
                for c in 0..3 {
                    let n_c = if c == 0 { normal } else { 0.0 };
                    a_m[c][i] += (u[3 + nu + c] - z.m[c][i] * u2 - n_c * u1) / self.w[i];
                }
                let mut mixed = s[i] * u2 + inv_t[i] * u3;
                for a in 0..nu {
                    mixed -= mu_over_t[a][i] * u[3 + a];
                }
                a_s[i] -= mixed / self.w[i];
            }
        }

        // ---- resolve into the dual vector ---------------------------------
        let mut out = Cotangent::zeros(nu, n);
        for a in 0..nu {
            let dual = self.dual_of_deriv_coefficient(&b_rho[a]);
            for i in 0..n {
                out.rho[a][i] = a_rho[a][i] + dual[i];
            }
        }
        for c in 0..3 {
            let dual = self.dual_of_deriv_coefficient(&b_m[c]);
            for i in 0..n {
                out.m[c][i] = a_m[c][i] + dual[i];
            }
        }
        let dual = self.dual_of_deriv_coefficient(&b_s);
        for i in 0..n {
            out.th[i] = a_s[i] + dual[i];
        }
        Ok(out)
    }
}
