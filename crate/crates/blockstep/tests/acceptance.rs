//! Acceptance gate: every release-blocking criterion of the artifact, one
//! test per criterion (7 and 8 share one closed-loop run). Run with
//! `cargo test --test acceptance -- --nocapture` to see one PASS line per
//! criterion with the measured values.

use blockstep::beam::{self, BeamConfig, BeamState};
use blockstep::cli::{
    self, Command, TWO_LAYER_BENCHMARK_PHI0_REFERENCE, TWO_LAYER_BENCHMARK_PHI1_REFERENCE,
};
use blockstep::controller::{from_target_state, to_target_state, ControlLaw};
use blockstep::grid::Grid;
use blockstep::kernels::{
    extract_gains, kernel_residuals, place_poles, solve_kernels, KernelSet, PoleTarget,
    ResidualReport, SolverOptions, TriangleGrid,
};
use blockstep::model::{BlockStructure, HyperbolicSystem, StateSnapshot};
use blockstep::sim::{fit_decay_rate, norm_series, simulate, ControlMode, SimSettings};
use blockstep::transform::{bar_coefficients, build_transform, BarCoefficients, BlockTransform};
use nalgebra::{DMatrix, DVector};
use std::path::Path;

const SQRT2: f64 = std::f64::consts::SQRT_2;

struct BenchmarkKernels {
    sys: HyperbolicSystem,
    om: beam::OrderingMap,
    bt: BlockTransform,
    bars: BarCoefficients,
    ks: KernelSet,
}

/// Benchmark pipeline with E1 = -6I placement at grid `g`.
fn benchmark_kernels(g: usize) -> BenchmarkKernels {
    let cfg = BeamConfig::two_layer_benchmark();
    let (sys, om) = beam::build_system(&cfg, 1e-9).unwrap();
    let bt = build_transform(&sys, g).unwrap();
    let bars = bar_coefficients(&sys, &bt).unwrap();
    let p = place_poles(
        &sys.a,
        &sys.b,
        PoleTarget::Matrix(DMatrix::from_diagonal_element(4, 4, -6.0)),
        1.0,
    )
    .unwrap();
    let ks = solve_kernels(
        &sys,
        &bars,
        &bt,
        &p.phi0,
        TriangleGrid::new(g).unwrap(),
        &SolverOptions::default(),
    )
    .unwrap();
    BenchmarkKernels {
        sys,
        om,
        bt,
        bars,
        ks,
    }
}

fn benchmark_residuals(g: usize) -> ResidualReport {
    let b = benchmark_kernels(g);
    kernel_residuals(&b.ks, &b.sys, &b.bars, &b.bt).unwrap()
}

/// Criterion 1: kernel boundary residuals at G = 200 below 1e-8; interior
/// PDE residuals at most 0.5 at G = 50, halving (within 10%) per grid
/// doubling; everything within the two-minute budget.
#[test]
fn criterion_01_kernel_residuals_and_refinement() {
    let start = std::time::Instant::now();
    let r200 = benchmark_residuals(200);
    assert!(
        r200.max_bc() <= 1e-8,
        "boundary residual {:.3e} exceeds 1e-8",
        r200.max_bc()
    );

    let r50 = benchmark_residuals(50);
    let r100 = benchmark_residuals(100);
    for (name, pick) in [
        ("pde_k", (|r: &ResidualReport| r.pde_k) as fn(&ResidualReport) -> f64),
        ("pde_l", |r: &ResidualReport| r.pde_l),
        ("ode_phi", |r: &ResidualReport| r.ode_phi),
    ] {
        let (c, m, f) = (pick(&r50), pick(&r100), pick(&r200));
        assert!(c <= 0.5, "{name} residual {c:.3e} at G = 50 exceeds 0.5");
        assert!(
            m <= 0.55 * c && f <= 0.55 * m,
            "{name} residuals {c:.3e} -> {m:.3e} -> {f:.3e} do not halve per doubling"
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() <= 120, "runtime {elapsed:?} exceeds 2 minutes");
    println!(
        "criterion 01 kernel residuals: PASS (bc {:.2e}; pde_k {:.3} -> {:.3} -> {:.3}; {:.1?})",
        r200.max_bc(),
        r50.pde_k,
        r100.pde_k,
        r200.pde_k,
        elapsed
    );
}

/// Criterion 2: with every coupling that drives the kernels set to zero the
/// solver returns exact zeros.
#[test]
fn criterion_02_zero_data_identity() {
    let blocks = BlockStructure::new(vec![2, 1], vec![2.0, 1.0]).unwrap();
    let (n, m, d) = (3, 2, 2);
    let sys = HyperbolicSystem {
        sigma_plus: DVector::from_vec(vec![1.0, 1.5]),
        blocks,
        lambda_pp: DMatrix::zeros(m, m),
        lambda_pm: DMatrix::zeros(m, n),
        lambda_mm: DMatrix::zeros(n, n),
        lambda_mp: DMatrix::zeros(n, m),
        pi_p: DMatrix::zeros(m, d),
        pi_m: DMatrix::zeros(n, d),
        f_pp: DMatrix::zeros(m, m),
        f_pm: DMatrix::zeros(m, n),
        f_mp: DMatrix::zeros(n, m),
        f_mm: DMatrix::zeros(n, n),
        a: DMatrix::from_row_slice(d, d, &[-0.4, 0.2, 0.1, -0.9]),
        b: DMatrix::from_row_slice(d, n, &[1.0, 0.3, 0.0, 0.0, 0.8, 0.2]),
        c: DMatrix::from_row_slice(m, n, &[0.5, 0.0, 0.1, 0.0, -0.3, 0.2]),
        d: DMatrix::zeros(m, d),
    };
    let g = 80;
    let bt = build_transform(&sys, g).unwrap();
    let bars = bar_coefficients(&sys, &bt).unwrap();
    let phi0 = DMatrix::zeros(n, d);
    let ks = solve_kernels(
        &sys,
        &bars,
        &bt,
        &phi0,
        TriangleGrid::new(g).unwrap(),
        &SolverOptions::default(),
    )
    .unwrap();
    let mut sup: f64 = ks.sup_norm();
    for i in 0..n {
        for j in 0..n {
            for a in 0..=g {
                sup = sup.max(ks.omega_at(i, j, a).abs());
            }
        }
    }
    assert!(sup <= 1e-14, "zero-data kernels have sup {sup:.3e}");
    println!("criterion 02 zero-data identity: PASS (sup {sup:.1e})");
}

// ---------------------------------------------------------------------------
// Criterion 3: independent successive-approximation reference solver for the
// scalar (m = n = d = 1) case, on [a][b]-indexed arrays with plain Jacobi
// sweeps and uniform-substep path quadrature — organized differently from
// the production solver on purpose.
// ---------------------------------------------------------------------------

struct ScalarSystem {
    sm: f64,
    sp: f64,
    lpp: f64,
    lpm: f64,
    lmm: f64,
    lmp: f64,
    pip: f64,
    pim: f64,
    fpp: f64,
    fpm: f64,
    fmp: f64,
    fmm: f64,
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    phi0: f64,
}

fn scalar_system() -> ScalarSystem {
    ScalarSystem {
        sm: 1.0,
        sp: 1.5,
        lpp: 0.3,
        lpm: -0.4,
        lmm: 0.25,
        lmp: 0.6,
        pip: 0.2,
        pim: -0.3,
        fpp: 0.1,
        fpm: 0.15,
        fmp: -0.2,
        fmm: 0.35,
        a: -0.5,
        b: 1.2,
        c: 0.7,
        d: -0.25,
        phi0: -1.0,
    }
}

struct ScalarOracle {
    g: usize,
    k: Vec<Vec<f64>>,
    l: Vec<Vec<f64>>,
    phi: Vec<f64>,
    converged: bool,
}

fn scalar_oracle(s: &ScalarSystem, g: usize, tol: f64, max_iter: usize) -> ScalarOracle {
    let h = 1.0 / g as f64;
    let mut k = vec![vec![0.0; g + 1]; g + 1];
    let mut l = vec![vec![0.0; g + 1]; g + 1];
    let mut phi = vec![0.0; g + 1];
    phi[0] = s.phi0;
    let ebar = |x: f64| (s.lmm * x / s.sm).exp();
    let ebar_inv = |x: f64| (-s.lmm * x / s.sm).exp();
    let mut converged = false;

    for _ in 0..max_iter {
        let mut rk = vec![vec![0.0; g + 1]; g + 1];
        let mut rl = vec![vec![0.0; g + 1]; g + 1];
        let mut rphi = vec![0.0; g + 1];
        for a in 0..=g {
            let x = a as f64 * h;
            let mut ck = vec![0.0; a + 1];
            let mut cl = vec![0.0; a + 1];
            for b in 1..=a {
                let y0 = (b - 1) as f64 * h;
                let y1 = b as f64 * h;
                ck[b] = ck[b - 1] + 0.5 * h * (k[a][b - 1] * ebar(y0) + k[a][b] * ebar(y1));
                cl[b] = cl[b - 1] + 0.5 * h * (l[a][b - 1] + l[a][b]);
            }
            for b in 0..=a {
                let y = b as f64 * h;
                rk[a][b] = l[a][b] * (s.lpm * ebar_inv(y)) - ebar(x) * s.fmm * ebar_inv(y)
                    + (ck[a] - ck[b]) * s.fmm * ebar_inv(y)
                    + (cl[a] - cl[b]) * (s.fpm * ebar_inv(y));
                rl[a][b] = k[a][b] * (ebar(y) * s.lmp) + l[a][b] * s.lpp - ebar(x) * s.fmp
                    + (ck[a] - ck[b]) * s.fmp
                    + (cl[a] - cl[b]) * s.fpp;
            }
            rphi[a] =
                phi[a] * s.a - ebar(x) * s.pim + l[a][0] * s.sp * s.d + ck[a] * s.pim + cl[a] * s.pip;
        }

        let sample = |f: &Vec<Vec<f64>>, x: f64, y: f64| -> f64 {
            let pa = (x / h).clamp(0.0, g as f64);
            let a0 = (pa.floor() as usize).min(g.saturating_sub(1));
            let wa = pa - a0 as f64;
            let line = |a: usize| -> f64 {
                if a == 0 {
                    return f[0][0];
                }
                let pb = (y / h).clamp(0.0, a as f64);
                let b0 = (pb.floor() as usize).min(a - 1);
                let wb = pb - b0 as f64;
                f[a][b0] * (1.0 - wb) + f[a][b0 + 1] * wb
            };
            line(a0) * (1.0 - wa) + line(a0 + 1) * wa
        };
        let lerp1 = |f: &Vec<f64>, x: f64| -> f64 {
            let p = (x / h).clamp(0.0, g as f64);
            let i0 = (p.floor() as usize).min(g - 1);
            let w = p - i0 as f64;
            f[i0] * (1.0 - w) + f[i0 + 1] * w
        };

        let mut delta = 0.0f64;
        let mut k_new = k.clone();
        let mut l_new = l.clone();
        let mut phi_new = phi.clone();
        for a in 0..=g {
            let x = a as f64 * h;
            for b in 0..=a {
                let y = b as f64 * h;
                {
                    let mu = s.sp / s.sm;
                    let xs = (y + mu * x) / (1.0 + mu);
                    let bc = -(ebar(xs) * s.lmp) / (s.sm + s.sp);
                    let len = x - xs;
                    let mut acc = 0.0;
                    if len > 1e-15 {
                        let nsub = ((len / h).ceil() as usize).max(1);
                        let dx = len / nsub as f64;
                        for q in 0..nsub {
                            let x0 = xs + q as f64 * dx;
                            let x1 = x0 + dx;
                            let y0 = y + mu * (x - x0);
                            let y1 = y + mu * (x - x1);
                            acc += 0.5 * dx * (sample(&rl, x0, y0) + sample(&rl, x1, y1));
                        }
                    }
                    let val = bc + acc / s.sm;
                    delta = delta.max((val - l[a][b]).abs());
                    l_new[a][b] = val;
                }
                {
                    let xs = x - y;
                    let phi_xs = lerp1(&phi, xs);
                    let l_xs0 = {
                        let p = (xs / h).clamp(0.0, g as f64);
                        let i0 = (p.floor() as usize).min(g - 1);
                        let w = p - i0 as f64;
                        l[i0][0] * (1.0 - w) + l[i0 + 1][0] * w
                    };
                    let bc = (phi_xs * s.b + l_xs0 * s.sp * s.c) / s.sm;
                    let len = x - xs;
                    let mut acc = 0.0;
                    if len > 1e-15 {
                        let nsub = ((len / h).ceil() as usize).max(1);
                        let dx = len / nsub as f64;
                        for q in 0..nsub {
                            let x0 = xs + q as f64 * dx;
                            let x1 = x0 + dx;
                            let y0 = y - (x - x0);
                            let y1 = y - (x - x1);
                            acc += 0.5 * dx * (sample(&rk, x0, y0) + sample(&rk, x1, y1));
                        }
                    }
                    let val = bc + acc / s.sm;
                    delta = delta.max((val - k[a][b]).abs());
                    k_new[a][b] = val;
                }
            }
            if a > 0 {
                let val = phi_new[a - 1] + 0.5 * h * (rphi[a - 1] + rphi[a]) / s.sm;
                delta = delta.max((val - phi[a]).abs());
                phi_new[a] = val;
            }
        }
        k = k_new;
        l = l_new;
        phi = phi_new;
        if delta <= tol {
            converged = true;
            break;
        }
    }
    ScalarOracle {
        g,
        k,
        l,
        phi,
        converged,
    }
}

fn scalar_hyperbolic(s: &ScalarSystem) -> HyperbolicSystem {
    let blocks = BlockStructure::new(vec![1], vec![s.sm]).unwrap();
    let m1 = |v: f64| DMatrix::from_element(1, 1, v);
    HyperbolicSystem {
        sigma_plus: DVector::from_element(1, s.sp),
        blocks,
        lambda_pp: m1(s.lpp),
        lambda_pm: m1(s.lpm),
        lambda_mm: m1(s.lmm),
        lambda_mp: m1(s.lmp),
        pi_p: m1(s.pip),
        pi_m: m1(s.pim),
        f_pp: m1(s.fpp),
        f_pm: m1(s.fpm),
        f_mp: m1(s.fmp),
        f_mm: m1(s.fmm),
        a: m1(s.a),
        b: m1(s.b),
        c: m1(s.c),
        d: m1(s.d),
    }
}

/// Criterion 3: the production solver agrees with the independent
/// successive-approximation oracle (4x resolution) at five probe points.
#[test]
fn criterion_03_scalar_oracle_equivalence() {
    let s = scalar_system();
    let sys = scalar_hyperbolic(&s);
    let g = 64;
    let bt = build_transform(&sys, g).unwrap();
    let bars = bar_coefficients(&sys, &bt).unwrap();
    let phi0 = DMatrix::from_element(1, 1, s.phi0);
    let ks = solve_kernels(
        &sys,
        &bars,
        &bt,
        &phi0,
        TriangleGrid::new(g).unwrap(),
        &SolverOptions::default(),
    )
    .unwrap();
    let or = scalar_oracle(&s, 4 * g, 1e-12, 400);
    assert!(or.converged, "oracle did not converge");

    let probes = [(0.5, 0.25), (0.875, 0.5), (0.75, 0.375), (1.0, 0.25), (1.0, 0.75)];
    let mut worst: f64 = 0.0;
    for (x, y) in probes {
        let (a, b) = (
            (x * g as f64).round() as usize,
            (y * g as f64).round() as usize,
        );
        let (ao, bo) = (
            (x * or.g as f64).round() as usize,
            (y * or.g as f64).round() as usize,
        );
        let dk = (ks.k_at(0, 0, a, b) - or.k[ao][bo]).abs();
        let dl = (ks.l_at(0, 0, a, b) - or.l[ao][bo]).abs();
        worst = worst.max(dk).max(dl);
        assert!(dk <= 1e-3, "K at ({x},{y}) differs by {dk:.3e}");
        assert!(dl <= 1e-3, "L at ({x},{y}) differs by {dl:.3e}");
    }
    let dphi = (ks.phi_at(0, 0, g) - or.phi[or.g]).abs();
    worst = worst.max(dphi);
    assert!(dphi <= 1e-3, "Phi(1) differs by {dphi:.3e}");
    println!("criterion 03 scalar oracle: PASS (worst probe difference {worst:.2e})");
}

/// Criterion 4: transformation inverse identity and within-block decoupling
/// on the benchmark scenario.
#[test]
fn criterion_04_block_transformation() {
    let cfg = BeamConfig::two_layer_benchmark();
    let (sys, _) = beam::build_system(&cfg, 1e-9).unwrap();
    let g = 200;
    let bt = build_transform(&sys, g).unwrap();
    let n = sys.n();

    let mut inv_err: f64 = 0.0;
    for a in 0..=g {
        let prod = bt.a_at(a) * bt.ainv_at(a);
        inv_err = inv_err.max((prod - DMatrix::identity(n, n)).abs().max());
    }
    assert!(inv_err <= 1e-10, "inverse identity residual {inv_err:.3e}");

    let mut cross = sys.lambda_mm.clone();
    for range in bt.block_ranges() {
        cross
            .view_mut((range.start, range.start), (range.len(), range.len()))
            .fill(0.0);
    }
    let mut within: f64 = 0.0;
    for a in 0..=g {
        let full = bt.a_at(a) * &cross * bt.ainv_at(a);
        for range in bt.block_ranges() {
            within = within.max(
                full.view((range.start, range.start), (range.len(), range.len()))
                    .abs()
                    .max(),
            );
        }
    }
    assert!(within <= 1e-12, "within-block coupling {within:.3e}");
    println!(
        "criterion 04 block transformation: PASS (inverse {inv_err:.1e}, within-block {within:.1e})"
    );
}

/// Criterion 5: the backstepping round trip recovers Y within 1e-4 at
/// G = 200 and does not degrade under refinement. The inverse solves the
/// same discrete system the direct transform evaluates, so the observed
/// errors sit at rounding level at every grid.
#[test]
fn criterion_05_backstepping_round_trip() {
    let mut errs = Vec::new();
    for &g in &[50usize, 100, 200] {
        let b = benchmark_kernels(g);
        let grid = Grid::new(g).unwrap();
        let mut s = StateSnapshot::zeros(grid, b.sys.n(), b.sys.m(), b.sys.d());
        for a in 0..=g {
            let x = grid.node(a);
            for j in 0..b.sys.n() {
                s.y[a][j] = ((1.3 + j as f64) * x).sin() + 0.4 * (j as f64 * 0.7).cos();
            }
            for k in 0..b.sys.m() {
                s.z[a][k] = (2.0 * x - 0.3 * k as f64).cos() - 0.2;
            }
        }
        for j in 0..b.sys.d() {
            s.x[j] = 0.3 * (j as f64 + 1.0);
        }
        let target = to_target_state(&b.ks, &b.bt, &s).unwrap();
        let back = from_target_state(&b.ks, &b.bt, &target).unwrap();
        let mut err: f64 = 0.0;
        for a in 0..=g {
            err = err.max((&back[a] - &s.y[a]).abs().max());
        }
        assert!(err <= 1e-4, "G = {g}: round-trip error {err:.3e}");
        errs.push(err);
    }
    assert!(
        errs[2] <= errs[0] + 1e-12,
        "round-trip error grew under refinement: {errs:?}"
    );
    println!(
        "criterion 05 round trip: PASS (errors {:.1e} / {:.1e} / {:.1e} at G = 50/100/200)",
        errs[0], errs[1], errs[2]
    );
}

/// Criterion 6: the hand-coded per-layer integration and the assembled
/// matrix form agree to 1e-10 relative at every output time of a T = 5 run.
#[test]
fn criterion_06_matrix_assembly_oracle() {
    let cfg = BeamConfig::two_layer_benchmark();
    let (sys, om) = beam::build_system(&cfg, 1e-9).unwrap();
    let g = 200;
    let grid = Grid::new(g).unwrap();
    let bs = BeamState::root_deflection(grid, &cfg, &[1.0, 0.8]);
    let init = beam::riemann_forward(&bs, &cfg, &om).unwrap();
    let st = SimSettings::new(g, 0.5, 5.0, ControlMode::Open, 25).unwrap();
    let tr_matrix = simulate(&sys, None, &init, &st).unwrap();
    let tr_layers = beam::simulate_layers(&cfg, &om, &init, &st).unwrap();
    assert_eq!(tr_matrix.snapshots.len(), tr_layers.snapshots.len());

    let mut worst: f64 = 0.0;
    for (sa, sb) in tr_matrix.snapshots.iter().zip(&tr_layers.snapshots) {
        let mut scale: f64 = 1.0;
        let mut diff: f64 = 0.0;
        for a in 0..=g {
            diff = diff.max((&sa.y[a] - &sb.y[a]).abs().max());
            diff = diff.max((&sa.z[a] - &sb.z[a]).abs().max());
            scale = scale.max(sa.y[a].abs().max()).max(sa.z[a].abs().max());
        }
        diff = diff.max((&sa.x - &sb.x).abs().max());
        let rel = diff / scale;
        assert!(
            rel <= 1e-10,
            "t = {}: per-layer vs matrix relative difference {rel:.3e}",
            sa.t
        );
        worst = worst.max(rel);
    }
    println!("criterion 06 matrix-assembly oracle: PASS (worst relative difference {worst:.2e})");
}

/// Criteria 7 and 8: the benchmark closed loop extinguishes the target state
/// after 1/min-speed = sqrt(2) and decays the physical norm combination at
/// the placed rate; the open loop grows with the same initial data.
#[test]
fn criterion_07_08_closed_loop_stabilization() {
    let g = 300;
    let cfl = 0.9;
    let b = benchmark_kernels(g);
    let cfg = BeamConfig::two_layer_benchmark();
    let law = ControlLaw::new(extract_gains(&b.ks, &b.bt).unwrap());

    let grid = Grid::new(g).unwrap();
    let bs = BeamState::root_deflection(grid, &cfg, &[1.0, 0.8]);
    let init = beam::riemann_forward(&bs, &cfg, &b.om).unwrap();

    let start = std::time::Instant::now();
    let st = SimSettings::new(g, cfl, 5.0, ControlMode::Closed, 10).unwrap();
    let tr = simulate(&b.sys, Some(&law), &init, &st).unwrap();
    let closed_elapsed = start.elapsed();
    assert!(
        closed_elapsed.as_secs() <= 120,
        "closed-loop run took {closed_elapsed:?}"
    );

    // Criterion 7: extinction time 1/min-speed = sqrt(2) from the block
    // speeds (1, sqrt(2)/2).
    let extinction = SQRT2 + 0.2;
    let mut sup0: f64 = 0.0;
    let mut worst_after: f64 = 0.0;
    for snap in &tr.snapshots {
        let target = to_target_state(&b.ks, &b.bt, snap).unwrap();
        let sup = target
            .sigma
            .iter()
            .fold(0.0_f64, |acc, v| acc.max(v.abs().max()));
        if snap.t == 0.0 {
            sup0 = sup;
        } else if snap.t >= extinction {
            worst_after = worst_after.max(sup / sup0);
        }
    }
    assert!(
        worst_after <= 1e-2,
        "relative sup sigma {worst_after:.3e} after t = {extinction:.3}"
    );
    println!(
        "criterion 07 target extinction: PASS (worst relative sup {worst_after:.2e} after t = {extinction:.3})"
    );

    // Criterion 8: fitted decay of the physical norm combination >= 4.8 on
    // [2, 5]; open loop grows by more than 10x by t = 10.
    let norms = norm_series(&tr, Some((&cfg, &b.om))).unwrap();
    let series: Vec<(f64, f64)> = norms
        .times
        .iter()
        .cloned()
        .zip(norms.beam.as_ref().unwrap().iter().cloned())
        .collect();
    let rate = fit_decay_rate(&series, (2.0, 5.0)).unwrap();
    assert!(rate >= 4.8, "fitted decay rate {rate:.3} below 4.8");

    let start = std::time::Instant::now();
    let st_open = SimSettings::new(g, cfl, 10.0, ControlMode::Open, 50).unwrap();
    let tr_open = simulate(&b.sys, None, &init, &st_open).unwrap();
    let open_elapsed = start.elapsed();
    assert!(open_elapsed.as_secs() <= 120, "open-loop run took {open_elapsed:?}");
    let norms_open = norm_series(&tr_open, Some((&cfg, &b.om))).unwrap();
    let combo = norms_open.beam.as_ref().unwrap();
    let growth = combo.last().unwrap() / combo.first().unwrap();
    assert!(growth > 10.0, "open-loop growth {growth:.3} not above 10");
    println!(
        "criterion 08 rapid stabilization: PASS (decay rate {rate:.2} >= 4.8, open-loop growth {growth:.0}x, runs {closed_elapsed:.1?}/{open_elapsed:.1?})"
    );
}

/// Criterion 9: with the benchmark reference Phi(0) injected verbatim, the
/// solved Phi(1) either matches the printed reference entrywise within 15%
/// or is Cauchy-convergent under refinement with differences shrinking by
/// at least 1.8x per grid doubling.
#[test]
fn criterion_09_phi1_comparison_report() {
    let cfg = BeamConfig::two_layer_benchmark();
    let (sys, _) = beam::build_system(&cfg, 1e-9).unwrap();
    let phi0 = DMatrix::from_row_slice(4, 4, &TWO_LAYER_BENCHMARK_PHI0_REFERENCE);
    let reference = DMatrix::from_row_slice(4, 4, &TWO_LAYER_BENCHMARK_PHI1_REFERENCE);

    let mut phi1 = Vec::new();
    for g in [100usize, 200, 400] {
        let bt = build_transform(&sys, g).unwrap();
        let bars = bar_coefficients(&sys, &bt).unwrap();
        let ks = solve_kernels(
            &sys,
            &bars,
            &bt,
            &phi0,
            TriangleGrid::new(g).unwrap(),
            &SolverOptions::default(),
        )
        .unwrap();
        phi1.push(ks.phi_matrix(g));
    }

    let mut max_rel: f64 = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            let r = reference[(i, j)];
            if r.abs() > 1e-9 {
                max_rel = max_rel.max(((phi1[2][(i, j)] - r) / r).abs());
            }
        }
    }
    let entrywise_ok = max_rel <= 0.15;

    let d1 = (&phi1[1] - &phi1[0]).abs().max();
    let d2 = (&phi1[2] - &phi1[1]).abs().max();
    let cauchy_ratio = d1 / d2;
    let cauchy_ok = cauchy_ratio >= 1.8;

    assert!(
        entrywise_ok || cauchy_ok,
        "entrywise max rel {max_rel:.3} > 15% and Cauchy ratio {cauchy_ratio:.2} < 1.8"
    );
    println!(
        "criterion 09 Phi(1) comparison: PASS ({}; entrywise max rel {:.2}, Cauchy differences {:.2e} -> {:.2e}, ratio {:.2})",
        if entrywise_ok {
            "entrywise branch"
        } else {
            "grid-refinement branch"
        },
        max_rel,
        d1,
        d2,
        cauchy_ratio
    );
}

/// Criterion 10: repeated verify runs produce byte-identical reports (and
/// the benchmark scenario verifies clean).
#[test]
fn criterion_10_determinism() {
    let base = cli::load_config(Path::new("../../configs/two_layer.toml")).unwrap();
    let mut reports = Vec::new();
    let mut statuses = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let mut rc = base.clone();
        rc.out_dir = dir.path().to_path_buf();
        let out = cli::run(Command::Verify, &rc).unwrap();
        let file = std::fs::read(dir.path().join("two_layer_verify.txt")).unwrap();
        assert_eq!(file, out.report.as_bytes(), "report file differs from stdout report");
        reports.push(out.report);
        statuses.push(out.status);
    }
    assert_eq!(reports[0], reports[1], "verify reports are not byte-identical");
    assert_eq!(statuses[0], 0, "verify failed:\n{}", reports[0]);
    assert_eq!(statuses[1], 0);
    println!(
        "criterion 10 determinism: PASS (two verify runs byte-identical, {} bytes, status 0)",
        reports[0].len()
    );
}
