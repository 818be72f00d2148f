//! Boundary control law and the backstepping state transformations.
//!
//! The control input is the x = 1 trace of the Volterra transformation,
//!
//! ```text
//! U = ∫₀¹ GK(y) Y(y,t) dy + ∫₀¹ GL(y) Z(y,t) dy + GPhi · X(t),
//! ```
//!
//! and the target state is σ(x) = Ȳ(x) − ∫₀ˣ K Ȳ dy − ∫₀ˣ L Z dy − Φ(x)X
//! with Ȳ = 𝓐(x)Y. The inverse never materializes the inverse kernels: the
//! second-kind Volterra equation for Ȳ is solved by forward marching in x,
//! resolving the implicit trapezoid endpoint with a small linear solve.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::kernels::{GainSet, KernelSet};
use crate::model::StateSnapshot;
use crate::quad::split_weights;
use crate::transform::BlockTransform;

/// Evaluated boundary feedback: gains plus the quadrature metadata used to
/// integrate them against snapshots.
#[derive(Debug, Clone)]
pub struct ControlLaw {
    gains: GainSet,
    weights: Vec<f64>,
}

impl ControlLaw {
    /// Wraps a gain set with split-aware trapezoid weights on [0, 1].
    pub fn new(gains: GainSet) -> Self {
        let g = gains.grid.subdivisions();
        let weights = split_weights(g, gains.grid.h(), &gains.disc_ordinates);
        ControlLaw { gains, weights }
    }

    /// The wrapped gains.
    pub fn gains(&self) -> &GainSet {
        &self.gains
    }

    /// Quadrature weights per y node; they sum to 1 over [0, 1].
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Grid the gains are sampled on.
    pub fn grid(&self) -> Grid {
        self.gains.grid
    }
}

/// Evaluates U = ∫ GK·Y dy + ∫ GL·Z dy + GPhi·X on a snapshot.
pub fn control_input(law: &ControlLaw, s: &StateSnapshot) -> Result<DVector<f64>> {
    if s.grid != law.grid() {
        return Err(Error::GridMismatch(format!(
            "snapshot grid G = {} but control law sampled on G = {}",
            s.grid.subdivisions(),
            law.grid().subdivisions()
        )));
    }
    let n = law.gains.gphi.nrows();
    let mut u = DVector::zeros(n);
    for (b, w) in law.weights.iter().enumerate() {
        u += (&law.gains.gk[b] * &s.y[b] + &law.gains.gl[b] * &s.z[b]) * *w;
    }
    u += &law.gains.gphi * &s.x;
    Ok(u)
}

/// Control input on component-major flat state arrays (`y[j*g1 + a]`), the
/// layout used by the time stepper.
pub(crate) fn control_input_raw(
    law: &ControlLaw,
    y: &[f64],
    z: &[f64],
    x: &DVector<f64>,
    g1: usize,
) -> DVector<f64> {
    let n = law.gains.gphi.nrows();
    let m = law.gains.gl[0].ncols();
    let ny = law.gains.gk[0].ncols();
    let mut u = DVector::zeros(n);
    for (b, w) in law.weights.iter().enumerate() {
        let gk = &law.gains.gk[b];
        let gl = &law.gains.gl[b];
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..ny {
                acc += gk[(i, j)] * y[j * g1 + b];
            }
            for k in 0..m {
                acc += gl[(i, k)] * z[k * g1 + b];
            }
            u[i] += w * acc;
        }
    }
    u += &law.gains.gphi * x;
    u
}

/// The transformed (target) state: σ on the grid with Z and X carried over
/// from the source snapshot.
#[derive(Debug, Clone)]
pub struct TargetSnapshot {
    /// Spatial grid.
    pub grid: Grid,
    /// σ(x_a, t) per node, dimension n.
    pub sigma: Vec<DVector<f64>>,
    /// Z copied from the source snapshot.
    pub z: Vec<DVector<f64>>,
    /// X copied from the source snapshot.
    pub x: DVector<f64>,
    /// Sample time.
    pub t: f64,
}

fn check_grids(ks: &KernelSet, bt: &BlockTransform, grid: Grid) -> Result<()> {
    let g = grid.subdivisions();
    if ks.grid().subdivisions() != g || bt.grid().subdivisions() != g {
        return Err(Error::GridMismatch(format!(
            "snapshot on G = {g}, kernels on G = {}, transform on G = {}",
            ks.grid().subdivisions(),
            bt.grid().subdivisions()
        )));
    }
    Ok(())
}

/// Applies the direct transformation, producing the target state σ.
pub fn to_target_state(
    ks: &KernelSet,
    bt: &BlockTransform,
    s: &StateSnapshot,
) -> Result<TargetSnapshot> {
    check_grids(ks, bt, s.grid)?;
    let g = s.grid.subdivisions();
    let h = s.grid.h();
    let (n, m, d) = (ks.n(), ks.m(), ks.d());
    if s.y.iter().any(|v| v.len() != n) || s.z.iter().any(|v| v.len() != m) || s.x.len() != d {
        return Err(Error::DimensionMismatch(
            "snapshot dimensions do not match the kernel set".into(),
        ));
    }

    // Ȳ(y_b) = 𝓐(y_b) Y(y_b) once per node.
    let ybar: Vec<DVector<f64>> = (0..=g).map(|b| bt.a_at(b) * &s.y[b]).collect();

    let ratios = ks.global_ratios();
    let mut sigma = Vec::with_capacity(g + 1);
    let mut splits: Vec<f64> = Vec::with_capacity(ratios.len());
    for a in 0..=g {
        let x = s.grid.node(a);
        splits.clear();
        splits.extend(ratios.iter().map(|r| r * x));
        let w = split_weights(a, h, &splits);
        let mut sig = ybar[a].clone();
        for i in 0..n {
            let mut acc = 0.0;
            for (b, wb) in w.iter().enumerate().take(a + 1) {
                let mut kv = 0.0;
                for j in 0..n {
                    kv += ks.k_at(i, j, a, b) * ybar[b][j];
                }
                for j in 0..m {
                    kv += ks.l_at(i, j, a, b) * s.z[b][j];
                }
                acc += wb * kv;
            }
            for j in 0..d {
                acc += ks.phi_at(i, j, a) * s.x[j];
            }
            sig[i] -= acc;
        }
        sigma.push(sig);
    }

    Ok(TargetSnapshot {
        grid: s.grid,
        sigma,
        z: s.z.clone(),
        x: s.x.clone(),
        t: s.t,
    })
}

/// Inverts the transformation by solving the second-kind Volterra equation
/// Ȳ(x) − ∫₀ˣ K(x,y)Ȳ(y) dy = σ(x) + ∫₀ˣ L(x,y)Z(y) dy + Φ(x)X by forward
/// marching in x, then mapping back with Y = 𝓐̃(x)Ȳ.
pub fn from_target_state(
    ks: &KernelSet,
    bt: &BlockTransform,
    t: &TargetSnapshot,
) -> Result<Vec<DVector<f64>>> {
    check_grids(ks, bt, t.grid)?;
    let g = t.grid.subdivisions();
    let h = t.grid.h();
    let (n, m, d) = (ks.n(), ks.m(), ks.d());
    if t.sigma.iter().any(|v| v.len() != n) || t.z.iter().any(|v| v.len() != m) || t.x.len() != d {
        return Err(Error::DimensionMismatch(
            "target snapshot dimensions do not match the kernel set".into(),
        ));
    }

    let ratios = ks.global_ratios();
    let mut ybar: Vec<DVector<f64>> = Vec::with_capacity(g + 1);
    let mut splits: Vec<f64> = Vec::with_capacity(ratios.len());
    for a in 0..=g {
        let x = t.grid.node(a);
        splits.clear();
        splits.extend(ratios.iter().map(|r| r * x));
        let w = split_weights(a, h, &splits);

        // rhs = σ(x_a) + ∫ L Z dy + Φ(x_a) X + Σ_{b<a} w_b K(x_a,y_b) Ȳ_b.
        let mut rhs = t.sigma[a].clone();
        for i in 0..n {
            let mut acc = 0.0;
            for (b, wb) in w.iter().enumerate().take(a + 1) {
                let mut lv = 0.0;
                for j in 0..m {
                    lv += ks.l_at(i, j, a, b) * t.z[b][j];
                }
                acc += wb * lv;
            }
            for j in 0..d {
                acc += ks.phi_at(i, j, a) * t.x[j];
            }
            for b in 0..a {
                let mut kv = 0.0;
                for j in 0..n {
                    kv += ks.k_at(i, j, a, b) * ybar[b][j];
                }
                acc += w[b] * kv;
            }
            rhs[i] += acc;
        }

        if a == 0 {
            ybar.push(rhs);
            continue;
        }
        // Implicit endpoint: (I − w_a K(x_a, x_a)) Ȳ_a = rhs.
        let mut endpoint = DMatrix::identity(n, n);
        for i in 0..n {
            for j in 0..n {
                endpoint[(i, j)] -= w[a] * ks.k_at(i, j, a, a);
            }
        }
        let lu = endpoint.lu();
        let sol = lu.solve(&rhs).ok_or_else(|| {
            Error::Singular(format!(
                "endpoint system I - w K(x,x) singular at node {a}"
            ))
        })?;
        ybar.push(sol);
    }

    Ok((0..=g).map(|a| bt.ainv_at(a) * &ybar[a]).collect())
}
