//! Backstepping gain kernels on the triangle T = {0 ≤ y ≤ x ≤ 1}.
//!
//! The transformation kernels K (n×n), L (n×m) and Φ (n×d) satisfy a coupled
//! Goursat problem: two first-order transport PDEs and one ODE in x, with
//! boundary data on the diagonal y = x and on the edge y = 0, plus the
//! strictly lower-triangular coupling Ω(x) that absorbs the diagonal
//! mismatch between same-direction kernels of different speed blocks.
//!
//! Components K_ij whose row state is strictly faster than the column state
//! carry both diagonal and edge data, split across the line y = (σ⁻ⱼ/σ⁻ᵢ)x;
//! they may jump across that line and the jump locations are recorded as
//! metadata consumed by every quadrature that crosses them.

mod poles;
mod residual;
mod solve;

pub use poles::{check_margin, place_poles, PolePlacement, PoleTarget};
pub use residual::{kernel_residuals, ResidualReport};
pub use solve::{solve_kernels, SolverOptions};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::transform::BlockTransform;

/// Uniform discretization of the closed triangle 0 ≤ y ≤ x ≤ 1 with
/// spacing h = 1/G; nodes are (x_a, y_b) = (a·h, b·h) for b ≤ a.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TriangleGrid {
    g: usize,
}

impl TriangleGrid {
    /// Creates a triangle grid with `g` subdivisions per edge.
    pub fn new(g: usize) -> Result<Self> {
        if g == 0 {
            return Err(Error::Config("triangle grid must have at least one cell".into()));
        }
        Ok(TriangleGrid { g })
    }

    /// Subdivisions per edge.
    pub fn subdivisions(&self) -> usize {
        self.g
    }

    /// Node spacing.
    pub fn h(&self) -> f64 {
        1.0 / self.g as f64
    }

    /// Total node count (G+1)(G+2)/2, covering diagonal and y = 0 edge.
    pub fn num_nodes(&self) -> usize {
        (self.g + 1) * (self.g + 2) / 2
    }

    /// Flat index of node (a, b), requiring b ≤ a.
    #[inline]
    pub fn idx(&self, a: usize, b: usize) -> usize {
        debug_assert!(b <= a && a <= self.g);
        a * (a + 1) / 2 + b
    }

    /// Abscissa of line a.
    pub fn x(&self, a: usize) -> f64 {
        a as f64 * self.h()
    }

    /// The matching 1-D grid on [0, 1].
    pub fn line_grid(&self) -> Grid {
        Grid::new(self.g).expect("triangle grid has at least one cell")
    }
}

/// Discretized kernels with discontinuity metadata and iteration diagnostics.
#[derive(Debug, Clone)]
pub struct KernelSet {
    tri: TriangleGrid,
    n: usize,
    m: usize,
    d: usize,
    sigma_minus: Vec<f64>,
    sigma_plus: Vec<f64>,
    block_of: Vec<usize>,
    /// K components, `[i*n + j][triangle node]`.
    k: Vec<Vec<f64>>,
    /// L components, `[i*m + j][triangle node]`.
    l: Vec<Vec<f64>>,
    /// Φ components, `[i*d + j][x node]`.
    phi: Vec<Vec<f64>>,
    /// Ω components, `[i*n + j][x node]`; strictly lower triangular with
    /// exact zeros in within-block positions.
    omega: Vec<Vec<f64>>,
    /// Jump-line slope r of K_ij (the line y = r·x), for cross-block pairs
    /// with σ⁻ᵢ > σ⁻ⱼ; `None` for continuous components.
    disc_ratio: Vec<Option<f64>>,
    /// Distinct jump-line slopes over all components, ascending.
    ratios: Vec<f64>,
    /// Fixed-point sweeps used per kernel row.
    iterations: Vec<usize>,
    /// Final sup-norm change per kernel row.
    final_delta: Vec<f64>,
}

impl KernelSet {
    /// Triangle grid of the solve.
    pub fn grid(&self) -> TriangleGrid {
        self.tri
    }

    /// Y dimension n.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Z dimension m.
    pub fn m(&self) -> usize {
        self.m
    }

    /// ODE dimension d.
    pub fn d(&self) -> usize {
        self.d
    }

    /// K_ij at node (a, b).
    #[inline]
    pub fn k_at(&self, i: usize, j: usize, a: usize, b: usize) -> f64 {
        self.k[i * self.n + j][self.tri.idx(a, b)]
    }

    /// L_ij at node (a, b).
    #[inline]
    pub fn l_at(&self, i: usize, j: usize, a: usize, b: usize) -> f64 {
        self.l[i * self.m + j][self.tri.idx(a, b)]
    }

    /// Φ_ij at line a.
    #[inline]
    pub fn phi_at(&self, i: usize, j: usize, a: usize) -> f64 {
        self.phi[i * self.d + j][a]
    }

    /// Ω_ij at line a.
    #[inline]
    pub fn omega_at(&self, i: usize, j: usize, a: usize) -> f64 {
        self.omega[i * self.n + j][a]
    }

    /// K(x_a, y_b) as a matrix.
    pub fn k_matrix(&self, a: usize, b: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.k_at(i, j, a, b))
    }

    /// L(x_a, y_b) as a matrix.
    pub fn l_matrix(&self, a: usize, b: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.m, |i, j| self.l_at(i, j, a, b))
    }

    /// Φ(x_a) as a matrix.
    pub fn phi_matrix(&self, a: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.d, |i, j| self.phi_at(i, j, a))
    }

    /// Ω(x_a) as a matrix.
    pub fn omega_matrix(&self, a: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.omega_at(i, j, a))
    }

    /// Transport speed of each Y state.
    pub fn sigma_minus(&self) -> &[f64] {
        &self.sigma_minus
    }

    /// Transport speed of each Z state.
    pub fn sigma_plus(&self) -> &[f64] {
        &self.sigma_plus
    }

    /// Block index of each Y state.
    pub fn block_of(&self) -> &[usize] {
        &self.block_of
    }

    /// Jump-line slope of K_ij, if the component may jump.
    pub fn disc_ratio(&self, i: usize, j: usize) -> Option<f64> {
        self.disc_ratio[i * self.n + j]
    }

    /// Distinct jump-line slopes over all components, ascending. Quadratures
    /// over y at abscissa x split at the ordinates r·x.
    pub fn global_ratios(&self) -> &[f64] {
        &self.ratios
    }

    /// Fixed-point sweeps used per kernel row.
    pub fn iterations(&self) -> &[usize] {
        &self.iterations
    }

    /// Final sup-norm change per kernel row.
    pub fn final_delta(&self) -> &[f64] {
        &self.final_delta
    }

    /// Adds `delta` to one K nodal value. Test support for residual
    /// sensitivity checks; not part of the stable API.
    #[doc(hidden)]
    pub fn perturb_k_for_tests(&mut self, i: usize, j: usize, a: usize, b: usize, delta: f64) {
        let idx = self.tri.idx(a, b);
        self.k[i * self.n + j][idx] += delta;
    }

    /// Largest absolute kernel value over all stored components.
    pub fn sup_norm(&self) -> f64 {
        let mut sup: f64 = 0.0;
        for field in self.k.iter().chain(&self.l).chain(&self.phi) {
            for &v in field {
                sup = sup.max(v.abs());
            }
        }
        sup
    }
}

/// Boundary gain kernels: the x = 1 trace of the solved kernels folded with
/// the block transformation so they act on the original plant states.
#[derive(Debug, Clone)]
pub struct GainSet {
    /// 1-D grid of the y samples.
    pub grid: Grid,
    /// GK(y_b) = 𝓐̃(1) K(1, y_b) 𝓐(y_b), per node (n×n).
    pub gk: Vec<DMatrix<f64>>,
    /// GL(y_b) = 𝓐̃(1) L(1, y_b), per node (n×m).
    pub gl: Vec<DMatrix<f64>>,
    /// GPhi = 𝓐̃(1) Φ(1) (n×d).
    pub gphi: DMatrix<f64>,
    /// Jump ordinates of GK at x = 1 (the line slopes themselves).
    pub disc_ordinates: Vec<f64>,
}

/// Samples the control-law gain kernels at every y node.
pub fn extract_gains(ks: &KernelSet, bt: &BlockTransform) -> Result<GainSet> {
    let g = ks.grid().subdivisions();
    if bt.grid().subdivisions() != g {
        return Err(Error::GridMismatch(format!(
            "kernels on G = {g} but transformation on G = {}",
            bt.grid().subdivisions()
        )));
    }
    let ainv1 = bt.ainv_at(g);
    let mut gk = Vec::with_capacity(g + 1);
    let mut gl = Vec::with_capacity(g + 1);
    for b in 0..=g {
        gk.push(ainv1 * ks.k_matrix(g, b) * bt.a_at(b));
        gl.push(ainv1 * ks.l_matrix(g, b));
    }
    let gphi = ainv1 * ks.phi_matrix(g);
    Ok(GainSet {
        grid: bt.grid(),
        gk,
        gl,
        gphi,
        disc_ordinates: ks.global_ratios().to_vec(),
    })
}

#[cfg(test)]
impl KernelSet {
    /// Smooth synthetic kernels for transform-level tests (no jump lines).
    pub(crate) fn synthetic(
        tri: TriangleGrid,
        n: usize,
        m: usize,
        d: usize,
        fk: impl Fn(usize, usize, f64, f64) -> f64,
        fl: impl Fn(usize, usize, f64, f64) -> f64,
        fphi: impl Fn(usize, usize, f64) -> f64,
    ) -> KernelSet {
        let g = tri.subdivisions();
        let mut k = vec![vec![0.0; tri.num_nodes()]; n * n];
        let mut l = vec![vec![0.0; tri.num_nodes()]; n * m];
        let mut phi = vec![vec![0.0; g + 1]; n * d];
        for a in 0..=g {
            let x = tri.x(a);
            for b in 0..=a {
                let y = tri.x(b);
                let idx = tri.idx(a, b);
                for i in 0..n {
                    for j in 0..n {
                        k[i * n + j][idx] = fk(i, j, x, y);
                    }
                    for j in 0..m {
                        l[i * m + j][idx] = fl(i, j, x, y);
                    }
                }
            }
            for i in 0..n {
                for j in 0..d {
                    phi[i * d + j][a] = fphi(i, j, x);
                }
            }
        }
        KernelSet {
            tri,
            n,
            m,
            d,
            sigma_minus: vec![1.0; n],
            sigma_plus: vec![1.0; m],
            block_of: vec![0; n],
            k,
            l,
            phi,
            omega: vec![vec![0.0; g + 1]; n * n],
            disc_ratio: vec![None; n * n],
            ratios: vec![],
            iterations: vec![],
            final_delta: vec![],
        }
    }
}
