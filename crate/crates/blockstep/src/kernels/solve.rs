//! Kernel solver: back-traced characteristics with a per-row fixed point.
//!
//! Rows of (K, L, Φ) are solved in increasing row index i; the Ω(x)·kernel
//! products only reference rows below i, so each row problem is linear given
//! its predecessors. Within a row, every node value is obtained by tracing
//! the characteristic — direction (σ⁻ᵢ, σ⁻ⱼ) for K_ij, (σ⁻ᵢ, −σ⁺ⱼ) for L_ij —
//! back to its boundary-data edge and integrating the source terms along the
//! path with the trapezoid rule, split one-sided at recorded discontinuity
//! lines. Lines are swept in increasing x so a sweep reuses values already
//! updated at smaller abscissae; the whole row is iterated to a fixed point
//! until the sup-norm change drops below the tolerance.

use nalgebra::DMatrix;

use super::{KernelSet, TriangleGrid};
use crate::error::{Error, Result};
use crate::model::HyperbolicSystem;
use crate::quad::cell_increment;
use crate::transform::{BarCoefficients, BlockTransform};

/// Fixed-point iteration controls.
#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Sup-norm change per sweep below which a row counts as converged.
    pub tol: f64,
    /// Maximum sweeps per row.
    pub max_iter: usize,
    /// Under-relaxation factor in (0, 1]; 1 applies updates fully.
    pub relaxation: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-10,
            max_iter: 200,
            relaxation: 1.0,
        }
    }
}

/// Shared geometry and coefficient tables of one kernel solve.
pub(crate) struct Problem<'p> {
    pub sys: &'p HyperbolicSystem,
    pub bar: &'p BarCoefficients,
    pub tri: TriangleGrid,
    pub n: usize,
    pub m: usize,
    pub dd: usize,
    /// σ⁻ per Y state.
    pub sm: Vec<f64>,
    /// σ⁺ per Z state.
    pub sp: Vec<f64>,
    /// Block index per Y state.
    pub blk: Vec<usize>,
    /// Distinct jump-line slopes, ascending.
    pub ratios: Vec<f64>,
    /// Per y-node: F⁻⁻ 𝓐̃(y_b) (n×n), the y-factor of the F̄⁻⁻ integrand.
    pub m1: Vec<DMatrix<f64>>,
    /// Per x-line: the split ordinates {r · x_a}, ascending.
    pub line_splits: Vec<Vec<f64>>,
}

impl<'p> Problem<'p> {
    pub(crate) fn new(
        sys: &'p HyperbolicSystem,
        bar: &'p BarCoefficients,
        bt: &'p BlockTransform,
        tri: TriangleGrid,
    ) -> Result<Self> {
        if bar.grid().subdivisions() != tri.subdivisions()
            || bt.grid().subdivisions() != tri.subdivisions()
        {
            return Err(Error::GridMismatch(format!(
                "kernel grid G = {} but bar coefficients on G = {} and transform on G = {}",
                tri.subdivisions(),
                bar.grid().subdivisions(),
                bt.grid().subdivisions()
            )));
        }
        let n = sys.n();
        let m = sys.m();
        let dd = sys.d();
        let sm = sys.blocks.state_speeds();
        let sp: Vec<f64> = sys.sigma_plus.iter().cloned().collect();
        let blk = sys.blocks.block_of_state();
        let ratios = sys.discontinuity_ratios();
        let nodes = tri.subdivisions() + 1;
        let m1: Vec<DMatrix<f64>> = (0..nodes).map(|b| &sys.f_mm * bt.ainv_at(b)).collect();
        let line_splits: Vec<Vec<f64>> = (0..nodes)
            .map(|a| {
                let x = tri.x(a);
                ratios.iter().map(|r| r * x).collect()
            })
            .collect();
        Ok(Problem {
            sys,
            bar,
            tri,
            n,
            m,
            dd,
            sm,
            sp,
            blk,
            ratios,
            m1,
            line_splits,
        })
    }

    /// True when K_ij takes its data from the diagonal at node (a, b):
    /// cross-block pairs with σ⁻ᵢ > σ⁻ⱼ and y ≥ (σ⁻ⱼ/σ⁻ᵢ)x. Same-block
    /// components and slower-row pairs use edge data only.
    pub(crate) fn k_uses_diagonal(&self, i: usize, j: usize, a: usize, b: usize) -> bool {
        if self.blk[i] >= self.blk[j] {
            return false;
        }
        let r = self.sm[j] / self.sm[i];
        self.tri.x(b) >= r * self.tri.x(a) - 1e-12
    }

    /// Cumulative integrals along line a from the current row values:
    /// `ca[b·n + k]` = (∫₀^{y_b} K_i·(x_a, s) 𝓐(s) ds)_k and
    /// `cl[b·m + k]` = ∫₀^{y_b} L_ik(x_a, s) ds, with split-aware cells.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn cumulants(
        &self,
        bt: &BlockTransform,
        k_row: &[Vec<f64>],
        l_row: &[Vec<f64>],
        a: usize,
        ca: &mut [f64],
        cl: &mut [f64],
    ) {
        let (n, m) = (self.n, self.m);
        let h = self.tri.h();
        let splits = &self.line_splits[a];
        let mut u_prev = vec![0.0; n];
        let mut u_next = vec![0.0; n];
        let mut v_prev = vec![0.0; m];
        let mut v_next = vec![0.0; m];

        let eval = |b: usize, u: &mut [f64], v: &mut [f64]| {
            let idx = self.tri.idx(a, b);
            let amat = bt.a_at(b);
            for jp in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += k_row[k][idx] * amat[(k, jp)];
                }
                u[jp] = s;
            }
            for k in 0..m {
                v[k] = l_row[k][idx];
            }
        };

        ca[..n].fill(0.0);
        cl[..m].fill(0.0);
        eval(0, &mut u_prev, &mut v_prev);
        for b in 0..a {
            eval(b + 1, &mut u_next, &mut v_next);
            let y0 = b as f64 * h;
            let y1 = y0 + h;
            let lo = splits.partition_point(|&s| s <= y0);
            let hi = splits.partition_point(|&s| s < y1);
            let cell_splits = &splits[lo..hi];
            for k in 0..n {
                ca[(b + 1) * n + k] =
                    ca[b * n + k] + cell_increment(u_prev[k], u_next[k], y0, y1, cell_splits);
            }
            for k in 0..m {
                cl[(b + 1) * m + k] =
                    cl[b * m + k] + cell_increment(v_prev[k], v_next[k], y0, y1, cell_splits);
            }
            std::mem::swap(&mut u_prev, &mut u_next);
            std::mem::swap(&mut v_prev, &mut v_next);
        }
    }

    /// Ω row entries at line a from the current diagonal trace of K:
    /// Ω_ik(x) = (σ⁻ᵢ − σ⁻ₖ) K_ik(x, x) + Λ̄⁻⁻_ik(x) for cross-block k < i,
    /// exact zero otherwise.
    pub(crate) fn omega_row_at(&self, k_row: &[Vec<f64>], i: usize, a: usize, out: &mut [f64]) {
        let idx_diag = self.tri.idx(a, a);
        for k in 0..i {
            out[k] = if self.blk[k] == self.blk[i] {
                0.0
            } else {
                (self.sm[i] - self.sm[k]) * k_row[k][idx_diag] + self.bar.lambda_mm[a][(i, k)]
            };
        }
    }

    /// Source field of the K components of row i on line a, written into
    /// `rhs_k[j][idx(a, b)]`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn rhs_k_line(
        &self,
        prev_k: &[Vec<f64>],
        k_row: &[Vec<f64>],
        l_row: &[Vec<f64>],
        i: usize,
        a: usize,
        omega_i: &[f64],
        ca: &[f64],
        cl: &[f64],
        rhs_k: &mut [Vec<f64>],
    ) {
        let (n, m) = (self.n, self.m);
        for b in 0..=a {
            let idx = self.tri.idx(a, b);
            let lam_mm = &self.bar.lambda_mm[b];
            let lam_pm = &self.bar.lambda_pm[b];
            let f_pm_bar = &self.bar.f_pm[b];
            let f_mm_bar = self.bar.f_mm_at(a, b);
            let m1 = &self.m1[b];
            for j in 0..n {
                let mut v = -f_mm_bar[(i, j)];
                for k in 0..n {
                    v += k_row[k][idx] * lam_mm[(k, j)];
                    v += (ca[a * n + k] - ca[b * n + k]) * m1[(k, j)];
                }
                for k in 0..m {
                    v += l_row[k][idx] * lam_pm[(k, j)];
                    v += (cl[a * m + k] - cl[b * m + k]) * f_pm_bar[(k, j)];
                }
                for k in 0..i {
                    v -= omega_i[k] * prev_k[k * n + j][idx];
                }
                rhs_k[j][idx] = v;
            }
        }
    }

    /// Source field of the L components of row i on line a, written into
    /// `rhs_l[j][idx(a, b)]`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn rhs_l_line(
        &self,
        prev_l: &[Vec<f64>],
        k_row: &[Vec<f64>],
        l_row: &[Vec<f64>],
        i: usize,
        a: usize,
        omega_i: &[f64],
        ca: &[f64],
        cl: &[f64],
        rhs_l: &mut [Vec<f64>],
    ) {
        let (n, m) = (self.n, self.m);
        let f_mp_bar = &self.bar.f_mp[a];
        for b in 0..=a {
            let idx = self.tri.idx(a, b);
            let lam_mp = &self.bar.lambda_mp[b];
            for j in 0..m {
                let mut v = -f_mp_bar[(i, j)];
                for k in 0..n {
                    v += k_row[k][idx] * lam_mp[(k, j)];
                    v += (ca[a * n + k] - ca[b * n + k]) * self.sys.f_mp[(k, j)];
                }
                for k in 0..m {
                    v += l_row[k][idx] * self.sys.lambda_pp[(k, j)];
                    v += (cl[a * m + k] - cl[b * m + k]) * self.sys.f_pp[(k, j)];
                }
                for k in 0..i {
                    v -= omega_i[k] * prev_l[k * m + j][idx];
                }
                rhs_l[j][idx] = v;
            }
        }
    }

    /// Source of the Φ row at line a: σ⁻ᵢ Φ′ = ΦA − Π̄⁻ − ΩΦ − L(x,0)Σ⁺D
    /// + ∫₀ˣ (K𝓐Π⁻ + LΠ⁺) dy.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn rhs_phi_line(
        &self,
        prev_phi: &[Vec<f64>],
        phi_row: &[Vec<f64>],
        l_row: &[Vec<f64>],
        i: usize,
        a: usize,
        omega_i: &[f64],
        ca: &[f64],
        cl: &[f64],
        out: &mut [f64],
    ) {
        let (n, m, dd) = (self.n, self.m, self.dd);
        let idx_edge = self.tri.idx(a, 0);
        for j in 0..dd {
            let mut v = -self.bar.pi_m[a][(i, j)];
            for k in 0..dd {
                v += phi_row[k][a] * self.sys.a[(k, j)];
            }
            for k in 0..i {
                v -= omega_i[k] * prev_phi[k * dd + j][a];
            }
            for k in 0..m {
                v += l_row[k][idx_edge] * self.sp[k] * self.sys.d[(k, j)];
                v += cl[a * m + k] * self.sys.pi_p[(k, j)];
            }
            for k in 0..n {
                v += ca[a * n + k] * self.sys.pi_m[(k, j)];
            }
            out[j] = v;
        }
    }

    /// Linear interpolation of a triangle field along line a at ordinate y.
    #[inline]
    pub(crate) fn interp_line(&self, field: &[f64], a: usize, y: f64) -> f64 {
        if a == 0 {
            return field[0];
        }
        let h = self.tri.h();
        let pos = (y / h).clamp(0.0, a as f64);
        let b = (pos.floor() as usize).min(a - 1);
        let w = pos - b as f64;
        let base = self.tri.idx(a, b);
        field[base] * (1.0 - w) + field[base + 1] * w
    }

    /// Field value at an arbitrary point of the triangle: interpolate along
    /// the two neighboring x-lines, then linearly in x.
    pub(crate) fn field_at(&self, field: &[f64], x: f64, y: f64) -> f64 {
        let h = self.tri.h();
        let g = self.tri.subdivisions();
        let eps = 1e-9 * h;
        let pos = (x / h).clamp(0.0, g as f64);
        let a0 = (pos.floor() as usize).min(g);
        if (x - a0 as f64 * h).abs() < eps || a0 == g {
            return self.interp_line(field, a0, y);
        }
        let w = pos - a0 as f64;
        let lo = self.interp_line(field, a0, y);
        let hi = self.interp_line(field, a0 + 1, y);
        lo * (1.0 - w) + hi * w
    }

    /// ∫ rhs dτ along the characteristic from x_start to the node (a, b),
    /// where the path ordinate is y(x') = y_node + sl·(x_node − x') and
    /// dτ = dx/σ_char. Trapezoid between samples at every x-line crossing,
    /// one-sided constants across recorded discontinuity lines.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn path_integral(
        &self,
        field: &[f64],
        a: usize,
        b: usize,
        x_start: f64,
        sl: f64,
        sigma_char: f64,
    ) -> f64 {
        let h = self.tri.h();
        let x_node = self.tri.x(a);
        let y_node = self.tri.x(b);
        if x_node - x_start <= 1e-14 {
            return 0.0;
        }
        let eps = 1e-9 * h;

        let y_of = |x: f64| y_node + sl * (x_node - x);
        let mut acc = 0.0;
        let mut x_prev = x_start;
        let mut v_prev = self.field_at(field, x_start, y_of(x_start));

        let mut line = ((x_start + eps) / h).floor() as usize + 1;
        loop {
            let x_cur = if line <= a { line as f64 * h } else { break };
            let v_cur = self.interp_line(field, line, y_of(x_cur));
            acc += self.segment(x_prev, x_cur, v_prev, v_cur, x_node, y_node, sl);
            x_prev = x_cur;
            v_prev = v_cur;
            if line == a {
                break;
            }
            line += 1;
        }
        if x_node - x_prev > eps {
            // Partial last segment (start inside the node's own cell).
            let v_cur = self.interp_line(field, a, y_node);
            acc += self.segment(x_prev, x_node, v_prev, v_cur, x_node, y_node, sl);
        }
        acc / sigma_char
    }

    /// One trapezoid segment, split one-sided at discontinuity-line
    /// crossings inside it.
    #[allow(clippy::too_many_arguments)]
    fn segment(
        &self,
        x0: f64,
        x1: f64,
        v0: f64,
        v1: f64,
        x_node: f64,
        y_node: f64,
        sl: f64,
    ) -> f64 {
        let eps = 1e-12;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &r in &self.ratios {
            let den = r + sl;
            if den.abs() < 1e-13 {
                continue;
            }
            let xc = (y_node + sl * x_node) / den;
            if xc > x0 + eps && xc < x1 - eps {
                lo = lo.min(xc);
                hi = hi.max(xc);
            }
        }
        if lo.is_finite() {
            (lo - x0) * v0 + (x1 - hi) * v1 + 0.5 * (hi - lo) * (v0 + v1)
        } else {
            0.5 * (x1 - x0) * (v0 + v1)
        }
    }

    /// Linear interpolation of an entry of per-node matrices at abscissa x.
    pub(crate) fn interp_entry(&self, mats: &[DMatrix<f64>], x: f64, i: usize, j: usize) -> f64 {
        let h = self.tri.h();
        let g = self.tri.subdivisions();
        let pos = (x / h).clamp(0.0, g as f64);
        let a0 = (pos.floor() as usize).min(g - 1);
        let w = pos - a0 as f64;
        mats[a0][(i, j)] * (1.0 - w) + mats[a0 + 1][(i, j)] * w
    }

    /// Linear interpolation of 1-D nodal values (one per x-line) at x.
    pub(crate) fn interp_nodal(&self, values: impl Fn(usize) -> f64, x: f64) -> f64 {
        let h = self.tri.h();
        let g = self.tri.subdivisions();
        let pos = (x / h).clamp(0.0, g as f64);
        let a0 = (pos.floor() as usize).min(g - 1);
        let w = pos - a0 as f64;
        values(a0) * (1.0 - w) + values(a0 + 1) * w
    }

    /// Diagonal datum of L: L_ij(x, x) = −Λ̄⁻⁺_ij(x)/(σ⁻ᵢ + σ⁺ⱼ).
    pub(crate) fn l_diag_datum(&self, i: usize, j: usize, x: f64) -> f64 {
        -self.interp_entry(&self.bar.lambda_mp, x, i, j) / (self.sm[i] + self.sp[j])
    }

    /// Diagonal datum of K for cross-block pairs with σ⁻ᵢ > σ⁻ⱼ:
    /// K_ij(x, x) = −Λ̄⁻⁻_ij(x)/(σ⁻ᵢ − σ⁻ⱼ).
    pub(crate) fn k_diag_datum(&self, i: usize, j: usize, x: f64) -> f64 {
        -self.interp_entry(&self.bar.lambda_mm, x, i, j) / (self.sm[i] - self.sm[j])
    }

    /// Edge datum of K from the ODE coupling:
    /// K_ij(x, 0) = (Φ(x)B − L(x,0)Σ⁺C)_ij / σ⁻ⱼ.
    pub(crate) fn k_edge_datum(
        &self,
        phi_row: &[Vec<f64>],
        l_row: &[Vec<f64>],
        i: usize,
        j: usize,
        x: f64,
    ) -> f64 {
        let _ = i;
        let mut v = 0.0;
        for k in 0..self.dd {
            v += self.interp_nodal(|a| phi_row[k][a], x) * self.sys.b[(k, j)];
        }
        for k in 0..self.m {
            let lk0 = self.interp_nodal(|a| l_row[k][self.tri.idx(a, 0)], x);
            v += lk0 * self.sp[k] * self.sys.c[(k, j)];
        }
        v / self.sm[j]
    }
}

/// Solves the kernel equations for K, L, Φ and Ω on the triangle.
///
/// `phi0` is the boundary condition Φ(0) (n×d), typically from
/// [`place_poles`](super::place_poles).
///
/// # Errors
///
/// Fails on grid mismatches, when a row exceeds `opts.max_iter` sweeps
/// (carrying the last sup-norm delta) and on non-finite iterates.
pub fn solve_kernels(
    sys: &HyperbolicSystem,
    bar: &BarCoefficients,
    bt: &BlockTransform,
    phi0: &DMatrix<f64>,
    tri: TriangleGrid,
    opts: &SolverOptions,
) -> Result<KernelSet> {
    let p = Problem::new(sys, bar, bt, tri)?;
    let (n, m, dd) = (p.n, p.m, p.dd);
    if phi0.nrows() != n || phi0.ncols() != dd {
        return Err(Error::DimensionMismatch(format!(
            "phi0 is {}x{}, expected {n}x{dd}",
            phi0.nrows(),
            phi0.ncols()
        )));
    }
    if !(opts.relaxation > 0.0 && opts.relaxation <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "relaxation".into(),
            value: opts.relaxation,
        });
    }

    let g = tri.subdivisions();
    let tri_nodes = tri.num_nodes();
    let mut k_store: Vec<Vec<f64>> = vec![vec![0.0; tri_nodes]; n * n];
    let mut l_store: Vec<Vec<f64>> = vec![vec![0.0; tri_nodes]; n * m];
    let mut phi_store: Vec<Vec<f64>> = vec![vec![0.0; g + 1]; n * dd];
    let mut omega_store: Vec<Vec<f64>> = vec![vec![0.0; g + 1]; n * n];
    let mut iterations = Vec::with_capacity(n);
    let mut final_delta = Vec::with_capacity(n);

    // Row-local scratch, reused across rows.
    let mut rhs_k: Vec<Vec<f64>> = vec![vec![0.0; tri_nodes]; n];
    let mut rhs_l: Vec<Vec<f64>> = vec![vec![0.0; tri_nodes]; m];
    let mut rhs_phi: Vec<Vec<f64>> = vec![vec![0.0; g + 1]; dd];
    let mut ca = vec![0.0; (g + 1) * n];
    let mut cl = vec![0.0; (g + 1) * m];
    let mut omega_i = vec![0.0; n];
    let mut phi_rhs_buf = vec![0.0; dd];

    for i in 0..n {
        // Seed Φ(0); kernels start from zero (previous rows' state is final).
        let (prev_k, row_k) = k_store.split_at_mut(i * n);
        let row_k = &mut row_k[..n];
        let (prev_l, row_l) = l_store.split_at_mut(i * m);
        let row_l = &mut row_l[..m];
        let (prev_phi, row_phi) = phi_store.split_at_mut(i * dd);
        let row_phi = &mut row_phi[..dd];
        for j in 0..dd {
            row_phi[j][0] = phi0[(i, j)];
        }

        let mut converged = false;
        let mut last_delta = f64::INFINITY;
        let mut sweeps = 0;
        for sweep in 1..=opts.max_iter {
            sweeps = sweep;
            let mut delta = 0.0_f64;
            for a in 0..=g {
                let x = tri.x(a);

                // Stage 1: sources on line a from the current iterate.
                p.cumulants(bt, row_k, row_l, a, &mut ca, &mut cl);
                p.omega_row_at(row_k, i, a, &mut omega_i);
                p.rhs_k_line(prev_k, row_k, row_l, i, a, &omega_i, &ca, &cl, &mut rhs_k);
                p.rhs_l_line(prev_l, row_k, row_l, i, a, &omega_i, &ca, &cl, &mut rhs_l);

                // Stage 2: L updates (diagonal datum plus traced interior).
                for j in 0..m {
                    let mu = p.sp[j] / p.sm[i];
                    for b in (0..=a).rev() {
                        let idx = tri.idx(a, b);
                        let new = if b == a {
                            p.l_diag_datum(i, j, x)
                        } else {
                            let x_start =
                                (tri.x(b) + mu * x) / (1.0 + mu);
                            let bc = p.l_diag_datum(i, j, x_start);
                            bc + p.path_integral(&rhs_l[j], a, b, x_start, mu, p.sm[i])
                        };
                        let old = row_l[j][idx];
                        let upd = old + opts.relaxation * (new - old);
                        delta = delta.max((upd - old).abs());
                        row_l[j][idx] = upd;
                    }
                }

                // Stage 3: Φ march to line a with fresh L.
                p.cumulants(bt, row_k, row_l, a, &mut ca, &mut cl);
                p.rhs_phi_line(
                    prev_phi, row_phi, row_l, i, a, &omega_i, &ca, &cl, &mut phi_rhs_buf,
                );
                if a > 0 {
                    let hh = tri.h();
                    for j in 0..dd {
                        let new = row_phi[j][a - 1]
                            + 0.5 * hh * (rhs_phi[j][a - 1] + phi_rhs_buf[j]) / p.sm[i];
                        let old = row_phi[j][a];
                        let upd = old + opts.relaxation * (new - old);
                        delta = delta.max((upd - old).abs());
                        row_phi[j][a] = upd;
                    }
                }

                // Stage 4: K updates (diagonal or edge data plus traces).
                for j in 0..n {
                    let slope = p.sm[j] / p.sm[i];
                    for b in (0..=a).rev() {
                        let idx = tri.idx(a, b);
                        let y = tri.x(b);
                        let new = if p.k_uses_diagonal(i, j, a, b) {
                            if b == a {
                                p.k_diag_datum(i, j, x)
                            } else {
                                let x_start = (y - slope * x) / (1.0 - slope);
                                let bc = p.k_diag_datum(i, j, x_start);
                                bc + p.path_integral(&rhs_k[j], a, b, x_start, -slope, p.sm[i])
                            }
                        } else if b == 0 {
                            p.k_edge_datum(row_phi, row_l, i, j, x)
                        } else {
                            let x_start = x - p.sm[i] * y / p.sm[j];
                            let bc = p.k_edge_datum(row_phi, row_l, i, j, x_start);
                            bc + p.path_integral(&rhs_k[j], a, b, x_start, -slope, p.sm[i])
                        };
                        let old = row_k[j][idx];
                        let upd = old + opts.relaxation * (new - old);
                        delta = delta.max((upd - old).abs());
                        row_k[j][idx] = upd;
                    }
                }

                // Stage 5: final sources on line a for the lines above it.
                p.cumulants(bt, row_k, row_l, a, &mut ca, &mut cl);
                p.omega_row_at(row_k, i, a, &mut omega_i);
                p.rhs_k_line(prev_k, row_k, row_l, i, a, &omega_i, &ca, &cl, &mut rhs_k);
                p.rhs_l_line(prev_l, row_k, row_l, i, a, &omega_i, &ca, &cl, &mut rhs_l);
                p.rhs_phi_line(
                    prev_phi, row_phi, row_l, i, a, &omega_i, &ca, &cl, &mut phi_rhs_buf,
                );
                for j in 0..dd {
                    rhs_phi[j][a] = phi_rhs_buf[j];
                }
                if a > 0 {
                    let hh = tri.h();
                    for j in 0..dd {
                        let new = row_phi[j][a - 1]
                            + 0.5 * hh * (rhs_phi[j][a - 1] + rhs_phi[j][a]) / p.sm[i];
                        let old = row_phi[j][a];
                        let upd = old + opts.relaxation * (new - old);
                        delta = delta.max((upd - old).abs());
                        row_phi[j][a] = upd;
                    }
                }
            }

            if !delta.is_finite() {
                return Err(Error::Divergence { sweep });
            }
            last_delta = delta;
            if delta <= opts.tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NonConvergence {
                iterations: sweeps,
                delta: last_delta,
            });
        }
        iterations.push(sweeps);
        final_delta.push(last_delta);

        // Freeze the Ω row from the converged diagonal trace.
        for jcol in 0..i {
            if p.blk[jcol] == p.blk[i] {
                continue;
            }
            let comp = i * n + jcol;
            for a in 0..=g {
                omega_store[comp][a] = (p.sm[i] - p.sm[jcol])
                    * k_store[i * n + jcol][tri.idx(a, a)]
                    + bar.lambda_mm[a][(i, jcol)];
            }
        }
    }

    let disc_ratio: Vec<Option<f64>> = (0..n * n)
        .map(|comp| {
            let (i, j) = (comp / n, comp % n);
            if p.blk[i] < p.blk[j] {
                Some(p.sm[j] / p.sm[i])
            } else {
                None
            }
        })
        .collect();

    Ok(KernelSet {
        tri,
        n,
        m,
        d: dd,
        sigma_minus: p.sm,
        sigma_plus: p.sp,
        block_of: p.blk,
        k: k_store,
        l: l_store,
        phi: phi_store,
        omega: omega_store,
        disc_ratio,
        ratios: p.ratios,
        iterations,
        final_delta,
    })
}
