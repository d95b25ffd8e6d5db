//! Scenario configuration: a strict TOML schema (unknown keys rejected)
//! covering the grid, the equation of state, phenomenological coefficients,
//! reactions, the initial state, the evolution mode, the integrator,
//! tolerances, and output file names, plus builders that turn a validated
//! document into runtime objects.

use crate::discretize::{Grid, GridError, GridKind, Stencil};
use crate::dynamics::{Drive, ForcedComponent, Integrator};
use crate::generic_ops::{random_smooth_state, MixtureState};
use crate::thermostate::{IdealMixtureEos, PhenomenologicalModel, PotentialForm, ThermoError};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("invalid grid: {0}")]
    Grid(#[from] GridError),
    #[error("invalid coefficients: {0}")]
    Coefficients(#[from] ThermoError),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub kind: GridKind,
    pub stencil: Stencil,
    pub n: usize,
    pub length: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EosConfig {
    pub masses: Vec<f64>,
    pub c_v: f64,
    pub sigma: Vec<f64>,
}

/// Viscosities, heat conduction, and diffusion couplings. Matrices are
/// flat row-major arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientsConfig {
    pub zeta: f64,
    pub lambda: f64,
    pub kappa: f64,
    pub b_cross: Vec<f64>,
    /// Row-major `nu x nu` diffusion matrix.
    pub b_diff: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReactionsConfig {
    /// Number of reactions (may be zero).
    pub count: usize,
    /// Row-major `nu x count` stoichiometric table.
    #[serde(default)]
    pub gamma: Vec<f64>,
    /// Row-major `count x count` symmetric coefficient matrix.
    #[serde(default)]
    pub l_kb: Vec<f64>,
    /// Reaction-dilation coupling coefficients, `count` entries.
    #[serde(default)]
    pub l_k: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileKind {
    /// Spatially constant fields.
    Uniform,
    /// Base values plus single-harmonic perturbations.
    HarmonicWave,
    /// Seeded smooth random state (low harmonics).
    RandomSmooth,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub form: PotentialForm,
    pub profile: ProfileKind,
    /// Base partial densities, one per constituent.
    pub rho: Vec<f64>,
    /// Base momentum density.
    pub momentum: [f64; 3],
    /// Base thermal value (entropy density or internal energy density).
    pub thermal: f64,
    /// Harmonic amplitudes (harmonic-wave profile only).
    #[serde(default)]
    pub rho_amplitude: Vec<f64>,
    #[serde(default)]
    pub momentum_amplitude: [f64; 3],
    #[serde(default)]
    pub thermal_amplitude: f64,
    #[serde(default = "default_wavenumber")]
    pub wavenumber: usize,
}

fn default_wavenumber() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeKind {
    Isolated,
    Open,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PortsKind {
    SelfConsistent,
    Forced,
}

fn default_ports() -> PortsKind {
    PortsKind::SelfConsistent
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeConfig {
    pub kind: ModeKind,
    #[serde(default = "default_ports")]
    pub ports: PortsKind,
    #[serde(default)]
    pub forcing: Vec<ForcedComponent>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub kind: Integrator,
    pub dt: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Operator degeneracy and adjointness residuals (scaled).
    pub degeneracy: f64,
    pub adjointness: f64,
    /// Semi-discrete balance residuals and operator/bracket consistency.
    pub balance: f64,
    pub consistency: f64,
    /// Smallest-eigenvalue margins.
    pub psd: f64,
    /// Finite-difference oracle agreement.
    pub fd_oracle: f64,
    /// Jacobi residual on spectral grids with closed-form gradients.
    pub jacobi_spectral: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            degeneracy: 1e-12,
            adjointness: 1e-12,
            balance: 1e-10,
            consistency: 1e-10,
            psd: 1e-10,
            fd_oracle: 1e-6,
            jacobi_spectral: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub trajectory: String,
    pub summary: String,
    pub report: String,
    pub jacobi: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            trajectory: "trajectory.csv".into(),
            summary: "summary.json".into(),
            report: "report.json".into(),
            jacobi: "jacobi.csv".into(),
        }
    }
}

/// The validated top-level scenario document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub grid: GridConfig,
    pub eos: EosConfig,
    pub coefficients: CoefficientsConfig,
    pub reactions: ReactionsConfig,
    pub initial: InitialConfig,
    pub mode: ModeConfig,
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: OutputConfig,
}

fn unflatten(flat: &[f64], rows: usize, cols: usize, what: &str) -> Result<Vec<Vec<f64>>, ConfigError> {
    if flat.len() != rows * cols {
        return Err(invalid(format!(
            "{what} must have {rows} x {cols} = {} entries, got {}",
            rows * cols,
            flat.len()
        )));
    }
    Ok((0..rows).map(|r| flat[r * cols..(r + 1) * cols].to_vec()).collect())
}

impl Config {
    /// Parses and validates a TOML document.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads, parses, and validates a config file.
    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn nu(&self) -> usize {
        self.eos.masses.len()
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let nu = self.nu();
        if nu == 0 {
            return Err(invalid("at least one constituent is required"));
        }
        if self.eos.sigma.len() != nu {
            return Err(invalid("eos.sigma must have one entry per constituent"));
        }
        if self.coefficients.b_cross.len() != nu {
            return Err(invalid("coefficients.b_cross must have one entry per constituent"));
        }
        if self.coefficients.b_diff.len() != nu * nu {
            return Err(invalid(format!(
                "coefficients.b_diff must be a row-major {nu} x {nu} matrix"
            )));
        }
        let n_r = self.reactions.count;
        if self.reactions.gamma.len() != nu * n_r {
            return Err(invalid(format!(
                "reactions.gamma must be a row-major {nu} x {n_r} table"
            )));
        }
        if self.reactions.l_kb.len() != n_r * n_r {
            return Err(invalid(format!("reactions.l_kb must be a row-major {n_r} x {n_r} matrix")));
        }
        if self.reactions.l_k.len() != n_r {
            return Err(invalid(format!("reactions.l_k must have {n_r} entries")));
        }
        if self.initial.rho.len() != nu {
            return Err(invalid("initial.rho must have one entry per constituent"));
        }
        if self.initial.profile == ProfileKind::HarmonicWave
            && !self.initial.rho_amplitude.is_empty()
            && self.initial.rho_amplitude.len() != nu
        {
            return Err(invalid("initial.rho_amplitude must have one entry per constituent"));
        }
        if self.integrator.dt <= 0.0 {
            return Err(invalid("integrator.dt must be positive"));
        }
        if self.integrator.steps == 0 {
            return Err(invalid("integrator.steps must be at least 1"));
        }
        match (self.mode.kind, self.grid.kind) {
            (ModeKind::Isolated, GridKind::Periodic) => {}
            (ModeKind::Open, GridKind::SbpInterval) => {}
            (m, g) => {
                return Err(invalid(format!(
                    "mode {m:?} is inconsistent with grid kind {g:?} (isolated needs periodic, open needs sbp-interval)"
                )))
            }
        }
        if self.mode.kind == ModeKind::Isolated && !self.mode.forcing.is_empty() {
            return Err(invalid("isolated mode cannot carry port forcing"));
        }
        for f in &self.mode.forcing {
            if f.point >= 2 {
                return Err(invalid(format!("forcing.point {} out of range (two endpoints)", f.point)));
            }
            if f.component >= nu + 6 {
                return Err(invalid(format!(
                    "forcing.component {} out of range (port dimension {})",
                    f.component,
                    nu + 6
                )));
            }
        }
        Ok(())
    }

    pub fn build_grid(&self) -> Result<Grid, ConfigError> {
        Ok(Grid::new(self.grid.kind, self.grid.stencil, self.grid.n, self.grid.length)?)
    }

    pub fn build_eos(&self) -> IdealMixtureEos {
        IdealMixtureEos::new(self.eos.masses.clone(), self.eos.c_v, self.eos.sigma.clone())
    }

    pub fn build_pheno(&self) -> Result<PhenomenologicalModel, ConfigError> {
        let nu = self.nu();
        let n_r = self.reactions.count;
        Ok(PhenomenologicalModel::new(
            self.coefficients.zeta,
            self.coefficients.lambda,
            self.coefficients.kappa,
            self.coefficients.b_cross.clone(),
            unflatten(&self.coefficients.b_diff, nu, nu, "coefficients.b_diff")?,
            unflatten(&self.reactions.gamma, nu, n_r, "reactions.gamma")?,
            self.eos.masses.clone(),
            unflatten(&self.reactions.l_kb, n_r, n_r, "reactions.l_kb")?,
            self.reactions.l_k.clone(),
        )?)
    }

    pub fn build_drive(&self) -> Drive {
        match self.mode.kind {
            ModeKind::Isolated => Drive::Isolated,
            ModeKind::Open => match self.mode.ports {
                PortsKind::SelfConsistent => Drive::SelfConsistent,
                PortsKind::Forced => Drive::Forced(self.mode.forcing.clone()),
            },
        }
    }

    /// Builds the initial state on a grid; the seed drives the
    /// random-smooth profile (and nothing else).
    pub fn build_initial(&self, grid: &Grid, seed: u64) -> MixtureState {
        let nu = self.nu();
        let n = grid.n;
        let ic = &self.initial;
        match ic.profile {
            ProfileKind::RandomSmooth => {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                random_smooth_state(grid, nu, ic.form, &mut rng)
            }
            ProfileKind::Uniform | ProfileKind::HarmonicWave => {
                let two_pi = 2.0 * std::f64::consts::PI;
                let k = ic.wavenumber as f64;
                // Phase offsets decorrelate the blocks of the wave profile.
                let wave = |base: f64, amp: f64, phase: f64| -> Vec<f64> {
                    grid.x
                        .iter()
                        .map(|&x| base + amp * (two_pi * k * x / grid.length + phase).sin())
                        .collect()
                };
                let amp_rho = |a: usize| -> f64 {
                    if ic.profile == ProfileKind::Uniform {
                        0.0
                    } else {
                        *ic.rho_amplitude.get(a).unwrap_or(&0.0)
                    }
                };
                let amp_m = |c: usize| -> f64 {
                    if ic.profile == ProfileKind::Uniform { 0.0 } else { ic.momentum_amplitude[c] }
                };
                let amp_th =
                    if ic.profile == ProfileKind::Uniform { 0.0 } else { ic.thermal_amplitude };
                let rho =
                    (0..nu).map(|a| wave(ic.rho[a], amp_rho(a), 0.4 * a as f64)).collect();
                let m = [
                    wave(ic.momentum[0], amp_m(0), 1.0),
                    wave(ic.momentum[1], amp_m(1), 1.7),
                    wave(ic.momentum[2], amp_m(2), 2.4),
                ];
                let thermal = wave(ic.thermal, amp_th, 0.9);
                let _ = n;
                MixtureState { rho, m, thermal, form: ic.form }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_toml() -> String {
        r#"
[grid]
kind = "periodic"
stencil = "central-2"
n = 16
length = 2.0

[eos]
masses = [1.0, 2.0]
c_v = 1.5
sigma = [0.3, -0.2]

[coefficients]
zeta = 0.05
lambda = 0.04
kappa = 0.08
b_cross = [0.02, -0.02]
b_diff = [0.05, -0.05, -0.05, 0.05]

[reactions]
count = 1
gamma = [1.0, -0.5]
l_kb = [0.08]
l_k = [0.03]

[initial]
form = "energy-form"
profile = "harmonic-wave"
rho = [1.2, 0.9]
momentum = [0.0, 0.0, 0.0]
thermal = 0.3
rho_amplitude = [0.1, 0.08]
momentum_amplitude = [0.15, 0.0, 0.0]
thermal_amplitude = 0.1

[mode]
kind = "isolated"

[integrator]
kind = "rk4"
dt = 0.001
steps = 10
"#
        .to_string()
    }

    #[test]
    fn reference_document_parses_and_builds() {
        let cfg = Config::from_toml(&reference_toml()).unwrap();
        assert_eq!(cfg.nu(), 2);
        // Defaults fill the optional sections.
        assert_eq!(cfg.tolerances.degeneracy, 1e-12);
        assert_eq!(cfg.output.trajectory, "trajectory.csv");
        let grid = cfg.build_grid().unwrap();
        let eos = cfg.build_eos();
        let pheno = cfg.build_pheno().unwrap();
        assert_eq!(pheno.ll.len(), 2);
        let z = cfg.build_initial(&grid, 0);
        assert_eq!(z.n_nodes(), 16);
        // Initial state must be admissible.
        crate::generic_ops::nodal_thermo(&z, &eos).unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = reference_toml().replace("[integrator]", "mystery_key = 1\n[integrator]");
        let err = Config::from_toml(&text).unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)), "got {err}");
    }

    #[test]
    fn dimension_mismatches_are_rejected() {
        let text = reference_toml().replace(
            "b_diff = [0.05, -0.05, -0.05, 0.05]",
            "b_diff = [0.05, -0.05, -0.05]",
        );
        let err = Config::from_toml(&text).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)), "got {err}");
    }

    #[test]
    fn mode_grid_mismatch_is_rejected() {
        let text = reference_toml().replace("kind = \"isolated\"", "kind = \"open\"");
        let err = Config::from_toml(&text).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)), "got {err}");
    }

    #[test]
    fn seeded_random_initial_state_is_deterministic() {
        let text = reference_toml().replace("profile = \"harmonic-wave\"", "profile = \"random-smooth\"");
        let cfg = Config::from_toml(&text).unwrap();
        let grid = cfg.build_grid().unwrap();
        let a = cfg.build_initial(&grid, 7);
        let b = cfg.build_initial(&grid, 7);
        assert_eq!(a.rho, b.rho);
        assert_eq!(a.thermal, b.thermal);
        let c = cfg.build_initial(&grid, 8);
        assert_ne!(a.rho, c.rho, "different seeds should differ");
    }
}
