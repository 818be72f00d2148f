//! Block-diagonalizing transformation of the Y states.
//!
//! Within an isotachic block the local coupling Λ⁻⁻ⱼ cannot be absorbed by
//! the kernels (the diagonal boundary condition would divide by a zero speed
//! difference). The transformation Ȳ(x) = 𝓐(x)Y(x) with
//!
//! ```text
//! 𝓐(x) = diag(𝓐₁(x), …, 𝓐κ(x)),   𝓐ⱼ(x) = exp(x Λ⁻⁻ⱼ / σ⁻ⱼ)
//! ```
//!
//! removes exactly the within-block coupling: the transformed coefficient
//! Λ̄⁻⁻(x) = 𝓐(x)(Λ⁻⁻ − blockdiag Λ⁻⁻ⱼ)𝓐̃(x) has vanishing diagonal blocks.
//! The remaining "bar" coefficients are x-dependent images of the constant
//! plant matrices.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::HyperbolicSystem;

/// The transformation 𝓐(x) and its inverse 𝓐̃(x) sampled on a grid.
///
/// Off-block entries are exactly zero by construction, 𝓐(0) = 𝓐̃(0) = I, and
/// ‖𝓐(x)𝓐̃(x) − I‖_max stays at rounding level since both factors are matrix
/// exponentials of commuting generators.
#[derive(Debug, Clone)]
pub struct BlockTransform {
    grid: Grid,
    block_ranges: Vec<std::ops::Range<usize>>,
    a_of_x: Vec<DMatrix<f64>>,
    ainv_of_x: Vec<DMatrix<f64>>,
}

impl BlockTransform {
    /// Grid on which the transformation is sampled.
    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// 𝓐(x_a).
    pub fn a_at(&self, a: usize) -> &DMatrix<f64> {
        &self.a_of_x[a]
    }

    /// 𝓐̃(x_a) = 𝓐(x_a)⁻¹.
    pub fn ainv_at(&self, a: usize) -> &DMatrix<f64> {
        &self.ainv_of_x[a]
    }

    /// 𝓐(x) at an arbitrary abscissa, linearly interpolated between nodes.
    pub fn a_interp(&self, x: f64) -> DMatrix<f64> {
        interp_matrix(&self.a_of_x, self.grid, x)
    }

    /// Block index ranges of the Y states.
    pub fn block_ranges(&self) -> &[std::ops::Range<usize>] {
        &self.block_ranges
    }
}

fn interp_matrix(samples: &[DMatrix<f64>], grid: Grid, x: f64) -> DMatrix<f64> {
    let h = grid.h();
    let g = grid.subdivisions();
    let a = ((x / h).floor() as usize).min(g.saturating_sub(1));
    let w = (x - grid.node(a)) / h;
    &samples[a] * (1.0 - w) + &samples[a + 1] * w
}

/// Builds 𝓐(x) and 𝓐̃(x) on a grid of `grid_size` subdivisions.
///
/// Each block is the closed-form exponential of its scaled generator,
/// evaluated per node by scaling-and-squaring; no ODE integration is needed
/// because the plant coefficients are constant.
pub fn build_transform(sys: &HyperbolicSystem, grid_size: usize) -> Result<BlockTransform> {
    let grid = Grid::new(grid_size)?;
    let n = sys.n();
    let kappa = sys.blocks.kappa();
    let ranges: Vec<_> = (0..kappa).map(|j| sys.blocks.block_range(j)).collect();
    let speeds = sys.blocks.speeds();

    if sys.lambda_mm.nrows() != n || sys.lambda_mm.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "lambda_mm is {}x{}, expected {n}x{n}",
            sys.lambda_mm.nrows(),
            sys.lambda_mm.ncols()
        )));
    }

    let mut a_of_x = Vec::with_capacity(grid.num_nodes());
    let mut ainv_of_x = Vec::with_capacity(grid.num_nodes());
    for node in 0..grid.num_nodes() {
        let x = grid.node(node);
        let mut a_full = DMatrix::<f64>::zeros(n, n);
        let mut ainv_full = DMatrix::<f64>::zeros(n, n);
        for (j, range) in ranges.iter().enumerate() {
            let gen = sys
                .lambda_mm
                .view((range.start, range.start), (range.len(), range.len()))
                .map(|v| v * x / speeds[j]);
            let (blk, blk_inv) = if node == 0 {
                let id = DMatrix::identity(range.len(), range.len());
                (id.clone(), id)
            } else {
                ((gen.clone()).exp(), (-gen).exp())
            };
            a_full
                .view_mut((range.start, range.start), (range.len(), range.len()))
                .copy_from(&blk);
            ainv_full
                .view_mut((range.start, range.start), (range.len(), range.len()))
                .copy_from(&blk_inv);
        }
        a_of_x.push(a_full);
        ainv_of_x.push(ainv_full);
    }

    Ok(BlockTransform {
        grid,
        block_ranges: ranges,
        a_of_x,
        ainv_of_x,
    })
}

/// x-dependent coefficients of the intermediate (Z, Ȳ, X) system.
///
/// `bar_f_mm` is stored on the lower-triangular node-pair set (y ≤ x) only.
#[derive(Debug, Clone)]
pub struct BarCoefficients {
    grid: Grid,
    /// Λ̄⁺⁻(x_a) = Λ⁺⁻ 𝓐̃(x_a), per node (m×n).
    pub lambda_pm: Vec<DMatrix<f64>>,
    /// F̄⁺⁻(y_b) = F⁺⁻ 𝓐̃(y_b), per node (m×n).
    pub f_pm: Vec<DMatrix<f64>>,
    /// Λ̄⁻⁻(x_a) = 𝓐(x)(Λ⁻⁻ − blockdiag Λ⁻⁻ⱼ)𝓐̃(x), per node (n×n); diagonal
    /// blocks are exact zeros.
    pub lambda_mm: Vec<DMatrix<f64>>,
    /// Λ̄⁻⁺(x_a) = 𝓐(x_a) Λ⁻⁺, per node (n×m).
    pub lambda_mp: Vec<DMatrix<f64>>,
    /// Π̄⁻(x_a) = 𝓐(x_a) Π⁻, per node (n×d).
    pub pi_m: Vec<DMatrix<f64>>,
    /// F̄⁻⁺(x_a) = 𝓐(x_a) F⁻⁺, per node (n×m).
    pub f_mp: Vec<DMatrix<f64>>,
    /// F̄⁻⁻(x_a, y_b) = 𝓐(x_a) F⁻⁻ 𝓐̃(y_b) for y_b ≤ x_a, triangle-indexed.
    pub f_mm: Vec<DMatrix<f64>>,
}

impl BarCoefficients {
    /// Grid shared with the transformation.
    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// F̄⁻⁻(x_a, y_b), requiring b ≤ a.
    pub fn f_mm_at(&self, a: usize, b: usize) -> &DMatrix<f64> {
        debug_assert!(b <= a);
        &self.f_mm[a * (a + 1) / 2 + b]
    }
}

/// Computes all bar coefficients from the plant and its transformation.
///
/// The Ȳ equation derivation produces Λ̄⁻⁻(x) = 𝓐(x)(Λ⁻⁻ − blockdiag Λ⁻⁻ⱼ)𝓐̃(x):
/// the subtraction of the block diagonal comes from the −Σ⁻𝓐′(x)𝓐̃(x) term and
/// is what makes the within-block entries vanish.
pub fn bar_coefficients(sys: &HyperbolicSystem, bt: &BlockTransform) -> Result<BarCoefficients> {
    if bt.a_of_x.first().map(|m| m.nrows()) != Some(sys.n()) {
        return Err(Error::GridMismatch(
            "transformation was built for a different system dimension".into(),
        ));
    }
    let grid = bt.grid();
    let nodes = grid.num_nodes();
    let n = sys.n();

    // Cross-block part of Λ⁻⁻ (diagonal blocks removed exactly).
    let mut cross = sys.lambda_mm.clone();
    for range in bt.block_ranges() {
        cross
            .view_mut((range.start, range.start), (range.len(), range.len()))
            .fill(0.0);
    }

    let mut lambda_pm = Vec::with_capacity(nodes);
    let mut f_pm = Vec::with_capacity(nodes);
    let mut lambda_mm = Vec::with_capacity(nodes);
    let mut lambda_mp = Vec::with_capacity(nodes);
    let mut pi_m = Vec::with_capacity(nodes);
    let mut f_mp = Vec::with_capacity(nodes);
    for a in 0..nodes {
        let aa = bt.a_at(a);
        let ai = bt.ainv_at(a);
        lambda_pm.push(&sys.lambda_pm * ai);
        f_pm.push(&sys.f_pm * ai);
        let mut lmm = aa * &cross * ai;
        // The product leaves rounding residue in the diagonal blocks; they are
        // zero in exact arithmetic, so store exact zeros.
        for range in bt.block_ranges() {
            lmm.view_mut((range.start, range.start), (range.len(), range.len()))
                .fill(0.0);
        }
        debug_assert_eq!(lmm.nrows(), n);
        lambda_mm.push(lmm);
        lambda_mp.push(aa * &sys.lambda_mp);
        pi_m.push(aa * &sys.pi_m);
        f_mp.push(aa * &sys.f_mp);
    }

    let mut f_mm = Vec::with_capacity(nodes * (nodes + 1) / 2);
    for a in 0..nodes {
        let aa = bt.a_at(a);
        let af = aa * &sys.f_mm;
        for b in 0..=a {
            f_mm.push(&af * bt.ainv_at(b));
        }
    }

    Ok(BarCoefficients {
        grid,
        lambda_pm,
        f_pm,
        lambda_mm,
        lambda_mp,
        pi_m,
        f_mp,
        f_mm,
    })
}

/// Direction of [`apply_block_transform`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformDirection {
    /// Ȳ(x) = 𝓐(x) Y(x).
    Forward,
    /// Y(x) = 𝓐̃(x) Ȳ(x).
    Inverse,
}

/// Applies 𝓐(x) (forward) or 𝓐̃(x) (inverse) node-wise to grid values of Y.
pub fn apply_block_transform(
    bt: &BlockTransform,
    y_grid: &[nalgebra::DVector<f64>],
    direction: TransformDirection,
) -> Result<Vec<nalgebra::DVector<f64>>> {
    if y_grid.len() != bt.grid().num_nodes() {
        return Err(Error::GridMismatch(format!(
            "{} value nodes for a grid of {} nodes",
            y_grid.len(),
            bt.grid().num_nodes()
        )));
    }
    let n = bt.a_of_x[0].nrows();
    if y_grid.iter().any(|v| v.len() != n) {
        return Err(Error::DimensionMismatch(format!(
            "Y values must have dimension {n}"
        )));
    }
    Ok(y_grid
        .iter()
        .enumerate()
        .map(|(a, v)| match direction {
            TransformDirection::Forward => bt.a_at(a) * v,
            TransformDirection::Inverse => bt.ainv_at(a) * v,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BlockStructure;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn system_with_lambda_mm(blocks: BlockStructure, lambda_mm: DMatrix<f64>) -> HyperbolicSystem {
        let n = blocks.total();
        let m = 1;
        let d = 1;
        HyperbolicSystem {
            sigma_plus: DVector::from_element(m, 1.0),
            blocks,
            lambda_pp: DMatrix::zeros(m, m),
            lambda_pm: DMatrix::zeros(m, n),
            lambda_mm,
            lambda_mp: DMatrix::zeros(n, m),
            pi_p: DMatrix::zeros(m, d),
            pi_m: DMatrix::zeros(n, d),
            f_pp: DMatrix::zeros(m, m),
            f_pm: DMatrix::zeros(m, n),
            f_mp: DMatrix::zeros(n, m),
            f_mm: DMatrix::zeros(n, n),
            a: DMatrix::zeros(d, d),
            b: DMatrix::identity(d, n),
            c: DMatrix::zeros(m, n),
            d: DMatrix::zeros(m, d),
        }
    }

    #[test]
    fn zero_generator_gives_identity() {
        let blocks = BlockStructure::new(vec![2], vec![1.0]).unwrap();
        let sys = system_with_lambda_mm(blocks, DMatrix::zeros(2, 2));
        let bt = build_transform(&sys, 8).unwrap();
        for a in 0..bt.grid().num_nodes() {
            assert_eq!(bt.a_at(a), &DMatrix::identity(2, 2));
        }
    }

    #[test]
    fn scalar_block_is_plain_exponential() {
        let lambda = 0.7;
        let sigma = 2.0;
        let blocks = BlockStructure::new(vec![1], vec![sigma]).unwrap();
        let sys = system_with_lambda_mm(blocks, DMatrix::from_element(1, 1, lambda));
        let bt = build_transform(&sys, 10).unwrap();
        for a in 0..=10 {
            let x = bt.grid().node(a);
            assert!((bt.a_at(a)[(0, 0)] - (lambda * x / sigma).exp()).abs() < 1e-13);
        }
    }

    /// Independent oracle: integrate d𝓐/dx = 𝓐 Λ⁻⁻/σ with many small RK4
    /// steps and compare with the closed-form exponential evaluation.
    #[test]
    fn matches_ode_integration_oracle() {
        let lambda = DMatrix::from_row_slice(2, 2, &[0.3, -0.8, 0.5, 0.1]);
        let sigma = 0.9;
        let blocks = BlockStructure::new(vec![2], vec![sigma]).unwrap();
        let sys = system_with_lambda_mm(blocks, lambda.clone());
        let g = 10;
        let bt = build_transform(&sys, g).unwrap();

        let steps_per_cell = 2000;
        let dx = 1.0 / (g * steps_per_cell) as f64;
        let gen = lambda.map(|v| v / sigma);
        let mut a = DMatrix::<f64>::identity(2, 2);
        for node in 0..=g {
            let diff = (bt.a_at(node) - &a).abs().max();
            assert!(diff < 1e-11, "node {node}: |exp - ode| = {diff:.3e}");
            if node < g {
                for _ in 0..steps_per_cell {
                    let k1 = &a * &gen;
                    let k2 = (&a + &k1 * (dx / 2.0)) * &gen;
                    let k3 = (&a + &k2 * (dx / 2.0)) * &gen;
                    let k4 = (&a + &k3 * dx) * &gen;
                    a += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dx / 6.0);
                }
            }
        }
    }

    #[test]
    fn bar_lambda_mm_vanishes_for_block_diagonal_coupling() {
        let blocks = BlockStructure::new(vec![2, 1], vec![2.0, 1.0]).unwrap();
        let mut lmm = DMatrix::zeros(3, 3);
        lmm[(0, 1)] = 0.5;
        lmm[(1, 0)] = -0.3;
        lmm[(2, 2)] = 0.9;
        let sys = system_with_lambda_mm(blocks, lmm);
        let bt = build_transform(&sys, 6).unwrap();
        let bars = bar_coefficients(&sys, &bt).unwrap();
        for a in 0..bt.grid().num_nodes() {
            assert_eq!(bars.lambda_mm[a].abs().max(), 0.0);
        }
    }

    #[test]
    fn single_cross_entry_matches_scalar_product() {
        // 1x1 blocks: Λ̄⁻⁻(x)_{01} = e^{λ₀x/σ₀} · λ · e^{-λ₁x/σ₁}.
        let (l0, l1, cross) = (0.4, -0.6, 1.3);
        let (s0, s1) = (2.0, 1.0);
        let blocks = BlockStructure::new(vec![1, 1], vec![s0, s1]).unwrap();
        let mut lmm = DMatrix::zeros(2, 2);
        lmm[(0, 0)] = l0;
        lmm[(1, 1)] = l1;
        lmm[(0, 1)] = cross;
        let sys = system_with_lambda_mm(blocks, lmm);
        let bt = build_transform(&sys, 16).unwrap();
        let bars = bar_coefficients(&sys, &bt).unwrap();
        for a in 0..bt.grid().num_nodes() {
            let x = bt.grid().node(a);
            let expected = (l0 * x / s0).exp() * cross * (-l1 * x / s1).exp();
            assert!((bars.lambda_mm[a][(0, 1)] - expected).abs() < 1e-12);
            assert_eq!(bars.lambda_mm[a][(1, 0)], 0.0);
        }
    }

    #[test]
    fn f_mm_endpoints() {
        let blocks = BlockStructure::new(vec![2], vec![1.5]).unwrap();
        let lmm = DMatrix::from_row_slice(2, 2, &[0.2, 0.4, -0.1, 0.3]);
        let mut sys = system_with_lambda_mm(blocks, lmm);
        sys.f_mm = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let bt = build_transform(&sys, 5).unwrap();
        let bars = bar_coefficients(&sys, &bt).unwrap();
        // At x = 0 the transformation is the identity.
        assert!((bars.f_mm_at(0, 0) - &sys.f_mm).abs().max() < 1e-14);
        for a in 0..bt.grid().num_nodes() {
            let direct = bt.a_at(a) * &sys.f_mm * bt.ainv_at(a);
            assert!((bars.f_mm_at(a, a) - direct).abs().max() < 1e-13);
        }
    }

    #[test]
    fn forward_then_inverse_is_identity() {
        let blocks = BlockStructure::new(vec![2], vec![1.0]).unwrap();
        let lmm = DMatrix::from_row_slice(2, 2, &[0.5, 1.0, -0.7, 0.2]);
        let sys = system_with_lambda_mm(blocks, lmm);
        let bt = build_transform(&sys, 12).unwrap();
        let y: Vec<DVector<f64>> = (0..=12)
            .map(|a| DVector::from_vec(vec![(a as f64).sin(), (a as f64).cos()]))
            .collect();
        let fwd = apply_block_transform(&bt, &y, TransformDirection::Forward).unwrap();
        let back = apply_block_transform(&bt, &fwd, TransformDirection::Inverse).unwrap();
        for (orig, rec) in y.iter().zip(&back) {
            assert!((orig - rec).abs().max() < 1e-10);
        }
    }

    #[test]
    fn constant_y_through_scalar_block() {
        let (lambda, sigma) = (0.9, 1.5);
        let blocks = BlockStructure::new(vec![1], vec![sigma]).unwrap();
        let sys = system_with_lambda_mm(blocks, DMatrix::from_element(1, 1, lambda));
        let bt = build_transform(&sys, 20).unwrap();
        let y = vec![DVector::from_element(1, 1.0); 21];
        let fwd = apply_block_transform(&bt, &y, TransformDirection::Forward).unwrap();
        for (a, v) in fwd.iter().enumerate() {
            let x = bt.grid().node(a);
            assert!((v[0] - (lambda * x / sigma).exp()).abs() < 1e-13);
        }
    }

    proptest! {
        /// ‖𝓐(x)𝓐̃(x) − I‖_max ≤ 1e-10 at every node for random generators.
        #[test]
        fn inverse_identity_on_random_blocks(
            entries in proptest::collection::vec(-2.0f64..2.0, 4),
            sigma in 0.3f64..3.0,
        ) {
            let blocks = BlockStructure::new(vec![2], vec![sigma]).unwrap();
            let lmm = DMatrix::from_row_slice(2, 2, &entries);
            let sys = system_with_lambda_mm(blocks, lmm);
            let bt = build_transform(&sys, 25).unwrap();
            for a in 0..bt.grid().num_nodes() {
                let prod = bt.a_at(a) * bt.ainv_at(a);
                let err = (prod - DMatrix::identity(2, 2)).abs().max();
                prop_assert!(err <= 1e-10, "node {}: {:.3e}", a, err);
            }
        }
    }
}
