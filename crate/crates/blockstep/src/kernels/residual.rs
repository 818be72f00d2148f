//! Finite-difference verification of a solved kernel set.
//!
//! PDE residuals use one-sided (upwind) differences and are measured away
//! from the recorded discontinuity lines; boundary residuals are pointwise.

use super::{KernelSet, TriangleGrid};
use crate::error::Result;
use crate::model::HyperbolicSystem;
use crate::transform::{BarCoefficients, BlockTransform};

/// Maximum absolute residuals of each kernel equation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResidualReport {
    /// K transport PDE, interior nodes away from discontinuity lines.
    pub pde_k: f64,
    /// L transport PDE, interior nodes away from discontinuity lines.
    pub pde_l: f64,
    /// Φ ODE in x.
    pub ode_phi: f64,
    /// Diagonal condition of L: (σ⁻ᵢ + σ⁺ⱼ) L_ij(x,x) + Λ̄⁻⁺_ij(x) = 0.
    pub bc_l_diag: f64,
    /// Diagonal condition of K on cross-block pairs with σ⁻ᵢ > σ⁻ⱼ.
    pub bc_k_diag: f64,
    /// Edge condition K(x,0)Σ⁻ = Φ(x)B − L(x,0)Σ⁺C.
    pub bc_k_edge: f64,
    /// Largest |Ω| entry in a within-block position (exact zeros expected).
    pub omega_within_block: f64,
    /// Number of interior nodes that entered the PDE residual maxima.
    pub interior_nodes: usize,
}

impl ResidualReport {
    /// Largest boundary-condition residual.
    pub fn max_bc(&self) -> f64 {
        self.bc_l_diag.max(self.bc_k_diag).max(self.bc_k_edge)
    }

    /// Largest interior residual over both PDEs and the Φ ODE.
    pub fn max_interior(&self) -> f64 {
        self.pde_k.max(self.pde_l).max(self.ode_phi)
    }
}

impl std::fmt::Display for ResidualReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "pde_k residual (interior): {:.6e}", self.pde_k)?;
        writeln!(f, "pde_l residual (interior): {:.6e}", self.pde_l)?;
        writeln!(f, "ode_phi residual:          {:.6e}", self.ode_phi)?;
        writeln!(f, "bc L diagonal residual:    {:.6e}", self.bc_l_diag)?;
        writeln!(f, "bc K diagonal residual:    {:.6e}", self.bc_k_diag)?;
        writeln!(f, "bc K edge residual:        {:.6e}", self.bc_k_edge)?;
        writeln!(f, "omega within-block max:    {:.6e}", self.omega_within_block)?;
        write!(f, "interior nodes checked:    {}", self.interior_nodes)
    }
}

/// Distance from node (a, b) to the nearest discontinuity line y = r·x.
fn line_distance(tri: &TriangleGrid, ratios: &[f64], a: usize, b: usize) -> f64 {
    let x = tri.x(a);
    let y = tri.x(b);
    ratios
        .iter()
        .map(|r| (y - r * x).abs())
        .fold(f64::INFINITY, f64::min)
}

/// Evaluates the residuals of a solved kernel set against the plant it was
/// solved for.
pub fn kernel_residuals(
    ks: &KernelSet,
    sys: &HyperbolicSystem,
    bar: &BarCoefficients,
    bt: &BlockTransform,
) -> Result<ResidualReport> {
    let p = super::solve::Problem::new(sys, bar, bt, ks.grid())?;
    let tri = ks.grid();
    let g = tri.subdivisions();
    let h = tri.h();
    let (n, m, dd) = (ks.n, ks.m, ks.d);
    let guard = 2.5 * h;

    let mut rep = ResidualReport::default();

    let mut rhs_k: Vec<Vec<f64>> = vec![vec![0.0; tri.num_nodes()]; n];
    let mut rhs_l: Vec<Vec<f64>> = vec![vec![0.0; tri.num_nodes()]; m];
    let mut rhs_phi = vec![0.0; dd];
    let mut ca = vec![0.0; (g + 1) * n];
    let mut cl = vec![0.0; (g + 1) * m];
    let mut omega_i = vec![0.0; n];

    for i in 0..n {
        let row_k = &ks.k[i * n..(i + 1) * n];
        let row_l = &ks.l[i * m..(i + 1) * m];
        let row_phi = &ks.phi[i * dd..(i + 1) * dd];
        let prev_k = &ks.k[..i * n];
        let prev_l = &ks.l[..i * m];
        let prev_phi = &ks.phi[..i * dd];

        for a in 0..=g {
            let x = tri.x(a);
            p.cumulants(bt, row_k, row_l, a, &mut ca, &mut cl);
            for k in 0..i {
                omega_i[k] = ks.omega_at(i, k, a);
            }
            p.rhs_k_line(prev_k, row_k, row_l, i, a, &omega_i, &ca, &cl, &mut rhs_k);
            p.rhs_l_line(prev_l, row_k, row_l, i, a, &omega_i, &ca, &cl, &mut rhs_l);
            p.rhs_phi_line(
                prev_phi, row_phi, row_l, i, a, &omega_i, &ca, &cl, &mut rhs_phi,
            );

            // Φ ODE residual, one-sided in x.
            if a > 0 {
                for j in 0..dd {
                    let r =
                        p.sm[i] * (row_phi[j][a] - row_phi[j][a - 1]) / h - rhs_phi[j];
                    rep.ode_phi = rep.ode_phi.max(r.abs());
                }
            }

            // Boundary conditions.
            for j in 0..m {
                let r = (p.sm[i] + p.sp[j]) * ks.l_at(i, j, a, a) + bar.lambda_mp[a][(i, j)];
                rep.bc_l_diag = rep.bc_l_diag.max(r.abs());
            }
            for j in 0..n {
                if p.blk[i] < p.blk[j] {
                    let r = ks.k_at(i, j, a, a)
                        + bar.lambda_mm[a][(i, j)] / (p.sm[i] - p.sm[j]);
                    rep.bc_k_diag = rep.bc_k_diag.max(r.abs());
                }
                let mut edge = ks.k_at(i, j, a, 0) * p.sm[j];
                for k in 0..dd {
                    edge -= ks.phi_at(i, k, a) * sys.b[(k, j)];
                }
                for k in 0..m {
                    edge -= ks.l_at(i, k, a, 0) * p.sp[k] * sys.c[(k, j)];
                }
                rep.bc_k_edge = rep.bc_k_edge.max(edge.abs() / p.sm[j]);
                let _ = x;
            }

            // Upwind PDE residuals at interior nodes away from the lines.
            if a >= 1 {
                for b in 1..a {
                    if line_distance(&tri, &p.ratios, a, b) <= guard {
                        continue;
                    }
                    rep.interior_nodes += 1;
                    let idx = tri.idx(a, b);
                    let idx_xm = tri.idx(a - 1, b);
                    let idx_ym = tri.idx(a, b - 1);
                    for j in 0..n {
                        let kx = (row_k[j][idx] - row_k[j][idx_xm]) / h;
                        let ky = (row_k[j][idx] - row_k[j][idx_ym]) / h;
                        let r = p.sm[i] * kx + p.sm[j] * ky - rhs_k[j][idx];
                        rep.pde_k = rep.pde_k.max(r.abs());
                    }
                }
                for b in 0..a {
                    if line_distance(&tri, &p.ratios, a, b) <= guard {
                        continue;
                    }
                    let idx = tri.idx(a, b);
                    let idx_xm = tri.idx(a - 1, b);
                    let idx_yp = tri.idx(a, b + 1);
                    for j in 0..m {
                        let lx = (row_l[j][idx] - row_l[j][idx_xm]) / h;
                        let ly = (row_l[j][idx_yp] - row_l[j][idx]) / h;
                        let r = p.sm[i] * lx - p.sp[j] * ly - rhs_l[j][idx];
                        rep.pde_l = rep.pde_l.max(r.abs());
                    }
                }
            }
        }

        // Ω within-block positions must be exact zeros.
        for jcol in 0..n {
            if jcol != i && p.blk[jcol] == p.blk[i] {
                for a in 0..=g {
                    rep.omega_within_block =
                        rep.omega_within_block.max(ks.omega_at(i, jcol, a).abs());
                }
            }
        }
    }

    Ok(rep)
}
