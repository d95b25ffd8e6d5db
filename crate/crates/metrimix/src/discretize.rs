//! Pseudo-1D spatial calculus: grids, discrete derivatives with an exact
//! summation-by-parts (SBP) identity, quadrature inner products, boundary
//! traces, and 3x3 tensor algebra.
//!
//! Fields vary along the x-axis only (slab symmetry) while vectors and
//! tensors keep all three spatial components, so every three-dimensional
//! closure formula applies verbatim.
//!
//! The derivative operators are built so that the discrete integration-by-
//! parts identity `W*D + D^T*W = E_R - E_L` holds to rounding, with `E = 0`
//! on periodic grids. All adjoint manipulations in the operator modules are
//! routed through [`Grid::deriv_adjoint`], which encodes exactly this
//! identity; that is what makes the discrete skew-adjointness and degeneracy
//! checks exact rather than `O(h)`.

use nalgebra::DMatrix;
use thiserror::Error;

/// Scalar nodal field.
pub type Field = Vec<f64>;
/// Vector nodal field, one `Field` per spatial component (x, y, z).
pub type VecField = [Field; 3];
/// 3x3 tensor nodal field.
pub type TensorField = Vec<Mat3>;
/// A single 3x3 tensor value.
pub type Mat3 = [[f64; 3]; 3];

/// Topology of the one-dimensional mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridKind {
    /// Periodic domain; the boundary is empty and all boundary pairings vanish.
    Periodic,
    /// Interval `[0, L]` with SBP boundary closures and outward normals
    /// `-e_x` at the left and `+e_x` at the right endpoint.
    SbpInterval,
}

/// Spatial derivative stencil.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stencil {
    /// Second-order central interior with first-order SBP boundary closures.
    #[serde(rename = "central-2")]
    Central2,
    /// Fourier differentiation matrix; periodic grids only. Exact on
    /// trigonometric polynomials resolved by the grid, which the bracket
    /// identity checks rely on.
    Spectral,
}

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid needs at least {min} nodes for the {stencil:?} stencil, got {n}")]
    TooFewNodes { min: usize, stencil: Stencil, n: usize },
    #[error("domain length must be positive, got {0}")]
    NonPositiveLength(f64),
    #[error("the spectral stencil requires a periodic grid with an even node count")]
    SpectralUnsupported,
}

/// One endpoint of an interval grid: node index and outward normal x-component.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryPoint {
    pub node: usize,
    /// Outward normal (`-1.0` left, `+1.0` right).
    pub normal: f64,
}

/// Immutable 1D mesh with derivative and quadrature operators.
#[derive(Debug, Clone)]
pub struct Grid {
    pub kind: GridKind,
    pub stencil: Stencil,
    pub n: usize,
    pub length: f64,
    /// Node coordinates.
    pub x: Field,
    /// Quadrature weights; `sum(w) == length` exactly up to rounding.
    pub w: Field,
    /// Dense spectral differentiation matrix (spectral stencil only).
    dmat: Option<DMatrix<f64>>,
}

impl Grid {
    /// Builds a grid. Periodic grids place nodes at `i*h` with `h = L/N`;
    /// interval grids place them at `i*h` with `h = L/(N-1)` so both
    /// endpoints carry nodes.
    pub fn new(kind: GridKind, stencil: Stencil, n: usize, length: f64) -> Result<Self, GridError> {
        if length <= 0.0 {
            return Err(GridError::NonPositiveLength(length));
        }
        if n < 4 {
            return Err(GridError::TooFewNodes { min: 4, stencil, n });
        }
        if stencil == Stencil::Spectral && (kind != GridKind::Periodic || n % 2 != 0) {
            return Err(GridError::SpectralUnsupported);
        }
        let (x, w): (Field, Field) = match kind {
            GridKind::Periodic => {
                let h = length / n as f64;
                ((0..n).map(|i| i as f64 * h).collect(), vec![h; n])
            }
            GridKind::SbpInterval => {
                let h = length / (n - 1) as f64;
                let mut w = vec![h; n];
                w[0] = 0.5 * h;
                w[n - 1] = 0.5 * h;
                ((0..n).map(|i| i as f64 * h).collect(), w)
            }
        };
        let dmat = match stencil {
            Stencil::Spectral => Some(spectral_diff_matrix(n, length)),
            Stencil::Central2 => None,
        };
        Ok(Self { kind, stencil, n, length, x, w, dmat })
    }

    /// Grid spacing between adjacent nodes.
    pub fn h(&self) -> f64 {
        match self.kind {
            GridKind::Periodic => self.length / self.n as f64,
            GridKind::SbpInterval => self.length / (self.n - 1) as f64,
        }
    }

    /// Applies the derivative operator `D` to a scalar field.
    pub fn deriv(&self, f: &[f64]) -> Field {
        assert_eq!(f.len(), self.n, "field length does not match grid");
        if let Some(d) = &self.dmat {
            let v = DMatrix::from_column_slice(self.n, 1, f);
            return (d * v).as_slice().to_vec();
        }
        let n = self.n;
        let h = self.h();
        let mut out = vec![0.0; n];
        match self.kind {
            GridKind::Periodic => {
                for i in 0..n {
                    let ip = (i + 1) % n;
                    let im = (i + n - 1) % n;
                    out[i] = (f[ip] - f[im]) / (2.0 * h);
                }
            }
            GridKind::SbpInterval => {
                out[0] = (f[1] - f[0]) / h;
                for i in 1..n - 1 {
                    out[i] = (f[i + 1] - f[i - 1]) / (2.0 * h);
                }
                out[n - 1] = (f[n - 1] - f[n - 2]) / h;
            }
        }
        out
    }

    /// Applies the quadrature-weighted adjoint `W^{-1} D^T W`.
    ///
    /// By the SBP identity this equals `-D` plus boundary-selector
    /// corrections (`W^{-1}E`), so pairings rearranged through this method
    /// keep discrete integration by parts exact on both grid kinds.
    pub fn deriv_adjoint(&self, f: &[f64]) -> Field {
        let mut out = self.deriv(f);
        for v in out.iter_mut() {
            *v = -*v;
        }
        if self.kind == GridKind::SbpInterval {
            let n = self.n;
            // (E f)_0 = -f_0, (E f)_{N-1} = +f_{N-1}.
            out[0] += -f[0] / self.w[0];
            out[n - 1] += f[n - 1] / self.w[n - 1];
        }
        out
    }

    /// Quadrature inner product of two scalar fields.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        assert_eq!(a.len(), self.n);
        assert_eq!(b.len(), self.n);
        self.w.iter().zip(a).zip(b).map(|((w, a), b)| w * a * b).sum()
    }

    /// Quadrature inner product of two vector fields.
    pub fn inner_vec(&self, a: &VecField, b: &VecField) -> f64 {
        (0..3).map(|c| self.inner(&a[c], &b[c])).sum()
    }

    /// Boundary endpoints with outward normals (empty for periodic grids).
    pub fn boundary(&self) -> Vec<BoundaryPoint> {
        match self.kind {
            GridKind::Periodic => vec![],
            GridKind::SbpInterval => vec![
                BoundaryPoint { node: 0, normal: -1.0 },
                BoundaryPoint { node: self.n - 1, normal: 1.0 },
            ],
        }
    }

    /// Boundary pairing `f(L)g(L) - f(0)g(0)`; zero on periodic grids.
    pub fn boundary_pairing(&self, f: &[f64], g: &[f64]) -> f64 {
        self.boundary()
            .iter()
            .map(|b| b.normal * f[b.node] * g[b.node])
            .sum()
    }

    /// Endpoint traces of a scalar field, in boundary order.
    pub fn boundary_trace(&self, f: &[f64]) -> Vec<(f64, f64)> {
        self.boundary().iter().map(|b| (f[b.node], b.normal)).collect()
    }

    /// Dense derivative matrix (used by assembly helpers and tests).
    pub fn deriv_matrix(&self) -> DMatrix<f64> {
        if let Some(d) = &self.dmat {
            return d.clone();
        }
        let n = self.n;
        let mut m = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let col = self.deriv(&e);
            for i in 0..n {
                m[(i, j)] = col[i];
            }
        }
        m
    }
}

/// Fourier differentiation matrix on `N` equispaced nodes (N even),
/// scaled to domain length `L`.
fn spectral_diff_matrix(n: usize, length: f64) -> DMatrix<f64> {
    let scale = 2.0 * std::f64::consts::PI / length;
    let mut d = DMatrix::zeros(n, n);
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
    d
}

/// Allocates a zero vector field.
pub fn zero_vec_field(n: usize) -> VecField {
    [vec![0.0; n], vec![0.0; n], vec![0.0; n]]
}

/// Gradient of a scalar field as a vector field (only the x-component is
/// nonzero under slab symmetry).
pub fn grad_scalar(grid: &Grid, f: &[f64]) -> VecField {
    let n = grid.n;
    [grid.deriv(f), vec![0.0; n], vec![0.0; n]]
}

/// Gradient of a vector field as a tensor field with entries
/// `(grad v)_{c,x} = d v_c / dx`.
pub fn grad_vec(grid: &Grid, v: &VecField) -> TensorField {
    let d: [Field; 3] = [grid.deriv(&v[0]), grid.deriv(&v[1]), grid.deriv(&v[2])];
    (0..grid.n)
        .map(|i| {
            let mut m = [[0.0; 3]; 3];
            for c in 0..3 {
                m[c][0] = d[c][i];
            }
            m
        })
        .collect()
}

/// Divergence of a vector field, `d v_x / dx`.
pub fn div_vec(grid: &Grid, v: &VecField) -> Field {
    grid.deriv(&v[0])
}

/// Divergence of a tensor field, `(div T)_c = d T_{c,x} / dx`.
pub fn div_tensor(grid: &Grid, t: &TensorField) -> VecField {
    let mut cols: [Field; 3] = [vec![0.0; grid.n], vec![0.0; grid.n], vec![0.0; grid.n]];
    for c in 0..3 {
        let col: Field = t.iter().map(|m| m[c][0]).collect();
        cols[c] = grid.deriv(&col);
    }
    cols
}

/// Trace of a 3x3 tensor.
pub fn trace(a: &Mat3) -> f64 {
    a[0][0] + a[1][1] + a[2][2]
}

/// Trace-free part `A - (tr A / 3) I`.
pub fn deviator(a: &Mat3) -> Mat3 {
    let t = trace(a) / 3.0;
    let mut out = *a;
    for i in 0..3 {
        out[i][i] -= t;
    }
    out
}

/// Double contraction `A : B = trace(A * B^T)`.
pub fn ddot(a: &Mat3, b: &Mat3) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            s += a[i][j] * b[i][j];
        }
    }
    s
}

/// Symmetric part of a tensor.
pub fn sym(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = 0.5 * (a[i][j] + a[j][i]);
        }
    }
    out
}

/// Skew-symmetric part of a tensor.
pub fn skew(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = 0.5 * (a[i][j] - a[j][i]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn dense_w(grid: &Grid) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_vec(grid.w.clone()))
    }

    #[test]
    fn quadrature_exact_for_constants() {
        for (kind, stencil, n, l) in [
            (GridKind::Periodic, Stencil::Central2, 8, 1.0),
            (GridKind::Periodic, Stencil::Spectral, 16, 2.0),
            (GridKind::SbpInterval, Stencil::Central2, 16, 2.0),
        ] {
            let g = Grid::new(kind, stencil, n, l).unwrap();
            let total: f64 = g.w.iter().sum();
            assert_abs_diff_eq!(total, l, epsilon = 1e-13);
        }
    }

    #[test]
    fn sbp_identity_holds() {
        // W*D + D^T*W must equal the boundary selector matrix E (zero for
        // periodic grids) to rounding.
        for (kind, stencil) in [
            (GridKind::Periodic, Stencil::Central2),
            (GridKind::Periodic, Stencil::Spectral),
            (GridKind::SbpInterval, Stencil::Central2),
        ] {
            let g = Grid::new(kind, stencil, 16, 2.0).unwrap();
            let d = g.deriv_matrix();
            let w = dense_w(&g);
            let mut lhs = &w * &d + d.transpose() * &w;
            if kind == GridKind::SbpInterval {
                lhs[(0, 0)] += 1.0;
                lhs[(15, 15)] -= 1.0;
            }
            let scale = (&w * &d).norm().max(1.0);
            assert!(lhs.norm() <= 1e-12 * scale, "SBP residual too large: {}", lhs.norm());
        }
    }

    #[test]
    fn adjoint_matches_definition() {
        for (kind, stencil) in [
            (GridKind::Periodic, Stencil::Central2),
            (GridKind::Periodic, Stencil::Spectral),
            (GridKind::SbpInterval, Stencil::Central2),
        ] {
            let g = Grid::new(kind, stencil, 12, 1.5).unwrap();
            let f: Field = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
            let phi: Field = (0..12).map(|i| (i as f64 * 0.3).cos()).collect();
            // <phi, W^{-1}D^T W f>_W == <D phi, f>_W
            let lhs = g.inner(&phi, &g.deriv_adjoint(&f));
            let rhs = g.inner(&g.deriv(&phi), &f);
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
        }
    }

    #[test]
    fn derivative_of_constant_is_zero() {
        let g = Grid::new(GridKind::SbpInterval, Stencil::Central2, 16, 2.0).unwrap();
        let f = vec![3.5; 16];
        for v in g.deriv(&f) {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn derivative_second_order_on_sine() {
        // Grid-halving order study on sin(2 pi x / L).
        let l = 1.0;
        let mut errs = vec![];
        for n in [16usize, 32, 64] {
            let g = Grid::new(GridKind::Periodic, Stencil::Central2, n, l).unwrap();
            let k = 2.0 * std::f64::consts::PI / l;
            let f: Field = g.x.iter().map(|x| (k * x).sin()).collect();
            let exact: Field = g.x.iter().map(|x| k * (k * x).cos()).collect();
            let d = g.deriv(&f);
            let err: f64 = d
                .iter()
                .zip(&exact)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            errs.push(err);
        }
        // Second-order convergence: error ratio about 4 per halving.
        assert!(errs[0] / errs[1] > 3.5);
        assert!(errs[1] / errs[2] > 3.5);
    }

    #[test]
    fn spectral_derivative_exact_on_resolved_modes() {
        let l = 2.0;
        let g = Grid::new(GridKind::Periodic, Stencil::Spectral, 16, l).unwrap();
        let k = 2.0 * std::f64::consts::PI / l * 3.0;
        let f: Field = g.x.iter().map(|x| (k * x).sin()).collect();
        let exact: Field = g.x.iter().map(|x| k * (k * x).cos()).collect();
        let d = g.deriv(&f);
        for (a, b) in d.iter().zip(&exact) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-10);
        }
    }

    #[test]
    fn shear_gradient_is_exact() {
        // v = (0, gdot*x, 0): grad v has a single entry gdot at (y,x),
        // div v = 0. Linear fields are differentiated exactly.
        let g = Grid::new(GridKind::SbpInterval, Stencil::Central2, 16, 2.0).unwrap();
        let gdot = 1.3;
        let v: VecField = [
            vec![0.0; 16],
            g.x.iter().map(|x| gdot * x).collect(),
            vec![0.0; 16],
        ];
        let gv = grad_vec(&g, &v);
        for m in &gv {
            for i in 0..3 {
                for j in 0..3 {
                    let expect = if (i, j) == (1, 0) { gdot } else { 0.0 };
                    assert_abs_diff_eq!(m[i][j], expect, epsilon = 1e-12);
                }
            }
        }
        for d in div_vec(&g, &v) {
            assert_abs_diff_eq!(d, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn boundary_pairing_matches_sbp_identity() {
        let g = Grid::new(GridKind::SbpInterval, Stencil::Central2, 16, 2.0).unwrap();
        let f: Field = g.x.iter().map(|x| (x * 1.1).sin()).collect();
        let h: Field = g.x.iter().map(|x| (x * 0.7).cos() + 0.5).collect();
        let lhs = g.inner(&f, &g.deriv(&h)) + g.inner(&g.deriv(&f), &h);
        let rhs = g.boundary_pairing(&f, &h);
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
    }

    #[test]
    fn boundary_pairing_examples() {
        let g = Grid::new(GridKind::Periodic, Stencil::Central2, 8, 1.0).unwrap();
        assert_eq!(g.boundary_pairing(&vec![1.0; 8], &vec![1.0; 8]), 0.0);
        let g = Grid::new(GridKind::SbpInterval, Stencil::Central2, 8, 2.0).unwrap();
        let f = g.x.clone();
        let one = vec![1.0; 8];
        assert_abs_diff_eq!(g.boundary_pairing(&f, &one), 2.0, epsilon = 1e-13);
    }

    #[test]
    fn grid_too_small_rejected() {
        assert!(Grid::new(GridKind::Periodic, Stencil::Central2, 3, 1.0).is_err());
    }

    #[test]
    fn inner_examples() {
        let g = Grid::new(GridKind::Periodic, Stencil::Central2, 8, 2.0).unwrap();
        assert_abs_diff_eq!(g.inner(&vec![1.0; 8], &vec![1.0; 8]), 2.0, epsilon = 1e-13);
    }

    #[test]
    fn tensor_algebra_basics() {
        let i3: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert_eq!(trace(&i3), 3.0);
        let d = deviator(&i3);
        for r in &d {
            for v in r {
                assert_abs_diff_eq!(*v, 0.0);
            }
        }
        // Symmetric : skew = 0.
        let s: Mat3 = [[1.0, 2.0, 0.0], [2.0, -1.0, 3.0], [0.0, 3.0, 4.0]];
        let k: Mat3 = [[0.0, 1.0, -2.0], [-1.0, 0.0, 0.5], [2.0, -0.5, 0.0]];
        assert_abs_diff_eq!(ddot(&s, &k), 0.0, epsilon = 1e-13);
    }

    proptest! {
        #[test]
        fn deviator_idempotent(vals in proptest::array::uniform32(-10.0f64..10.0)) {
            let a: Mat3 = [
                [vals[0], vals[1], vals[2]],
                [vals[3], vals[4], vals[5]],
                [vals[6], vals[7], vals[8]],
            ];
            let d1 = deviator(&a);
            let d2 = deviator(&d1);
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert!((d1[i][j] - d2[i][j]).abs() <= 1e-12);
                }
            }
            prop_assert!(trace(&d1).abs() <= 1e-12 * (1.0 + a.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max)));
        }

        #[test]
        fn ddot_splits_into_sym_and_skew(vals in proptest::array::uniform32(-5.0f64..5.0)) {
            let a: Mat3 = [
                [vals[0], vals[1], vals[2]],
                [vals[3], vals[4], vals[5]],
                [vals[6], vals[7], vals[8]],
            ];
            let b: Mat3 = [
                [vals[9], vals[10], vals[11]],
                [vals[12], vals[13], vals[14]],
                [vals[15], vals[16], vals[17]],
            ];
            let full = ddot(&a, &b);
            let split = ddot(&sym(&a), &sym(&b)) + ddot(&skew(&a), &skew(&b));
            prop_assert!((full - split).abs() <= 1e-12 * (1.0 + full.abs()));
        }

        #[test]
        fn derivative_is_linear(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let g = Grid::new(GridKind::SbpInterval, Stencil::Central2, 12, 1.0).unwrap();
            let f: Field = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let h: Field = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (a, b) = (1.7, -0.4);
            let combo: Field = f.iter().zip(&h).map(|(f, h)| a * f + b * h).collect();
            let lhs = g.deriv(&combo);
            let df = g.deriv(&f);
            let dh = g.deriv(&h);
            for i in 0..12 {
                prop_assert!((lhs[i] - (a * df[i] + b * dh[i])).abs() <= 1e-12);
            }
        }
    }
}
