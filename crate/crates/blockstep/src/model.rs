//! The isotachic hyperbolic PIDE-ODE plant class.
//!
//! The plant couples m transport states Z (convecting toward x = 1), n
//! transport states Y (convecting toward x = 0) and a d-dimensional ODE
//! state X:
//!
//! ```text
//! Z_t = -Σ⁺ Z_x + Λ⁺⁺Z + Λ⁺⁻Y + Π⁺X + ∫₀ˣ (F⁺⁺Z + F⁺⁻Y) dy
//! Y_t =  Σ⁻ Y_x + Λ⁻⁻Y + Λ⁻⁺Z + Π⁻X + ∫₀ˣ (F⁻⁺Z + F⁻⁻Y) dy
//! Ẋ   =  A X + B Y(0,t)
//! Y(1,t) = U,    Z(0,t) = C Y(0,t) + D X
//! ```
//!
//! The Y speeds come in κ isotachic blocks: Σ⁻ = diag(σ⁻ⱼ I_{nⱼ}) with
//! σ⁻₁ > σ⁻₂ > … > σ⁻κ > 0. States sharing a speed cannot be decoupled by
//! the classical per-state design and are treated as blocks.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Partition of the Y states into isotachic blocks.
///
/// Block j has `sizes[j]` states, all with transport speed `speeds[j]`;
/// speeds are strictly decreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockStructure {
    sizes: Vec<usize>,
    speeds: Vec<f64>,
}

impl BlockStructure {
    /// Builds a block structure, validating the invariants: nonempty,
    /// all sizes ≥ 1, speeds positive and strictly decreasing.
    pub fn new(sizes: Vec<usize>, speeds: Vec<f64>) -> Result<Self> {
        if sizes.is_empty() || sizes.len() != speeds.len() {
            return Err(Error::DimensionMismatch(
                "block sizes and speeds must be nonempty and of equal length".into(),
            ));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::DimensionMismatch("block sizes must be at least 1".into()));
        }
        for &s in &speeds {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::InvalidSpeed(s));
            }
        }
        if speeds.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::Config(
                "block speeds must be strictly decreasing".into(),
            ));
        }
        Ok(BlockStructure { sizes, speeds })
    }

    /// Number of blocks κ.
    pub fn kappa(&self) -> usize {
        self.sizes.len()
    }

    /// Block sizes n_j.
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Block speeds σ⁻_j, strictly decreasing.
    pub fn speeds(&self) -> &[f64] {
        &self.speeds
    }

    /// Total Y dimension n = Σ n_j.
    pub fn total(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// Transport speed of each Y state (block speed repeated n_j times).
    pub fn state_speeds(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total());
        for (j, &nj) in self.sizes.iter().enumerate() {
            out.extend(std::iter::repeat(self.speeds[j]).take(nj));
        }
        out
    }

    /// Block index of each Y state.
    pub fn block_of_state(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.total());
        for (j, &nj) in self.sizes.iter().enumerate() {
            out.extend(std::iter::repeat(j).take(nj));
        }
        out
    }

    /// State-index range of block j.
    pub fn block_range(&self, j: usize) -> std::ops::Range<usize> {
        let start: usize = self.sizes[..j].iter().sum();
        start..start + self.sizes[j]
    }
}

/// Groups `speeds` into maximal clusters whose members differ by a relative
/// gap of at most `tol`, returning the clusters sorted descending by their
/// representative (arithmetic mean) speed.
///
/// Physical parameters entered in a config file may reproduce equal speeds
/// only up to rounding, so isotachy is decided with a tolerance.
pub fn partition_speeds(speeds: &[f64], tol: f64) -> Result<BlockStructure> {
    if speeds.is_empty() {
        return Err(Error::Config("speed list must be nonempty".into()));
    }
    if !(tol >= 0.0) {
        return Err(Error::InvalidTolerance(tol));
    }
    for &s in speeds {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::InvalidSpeed(s));
        }
    }
    let mut sorted = speeds.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());

    let mut sizes = Vec::new();
    let mut reps = Vec::new();
    let mut start = 0;
    for k in 1..=sorted.len() {
        let chain = k < sorted.len() && {
            let (hi, lo) = (sorted[k - 1], sorted[k]);
            hi - lo <= tol * hi
        };
        if !chain {
            let cluster = &sorted[start..k];
            sizes.push(cluster.len());
            reps.push(cluster.iter().sum::<f64>() / cluster.len() as f64);
            start = k;
        }
    }
    BlockStructure::new(sizes, reps)
}

/// All constant coefficient matrices, speeds and block structure of the
/// plant. Dimensions are derived from the stored data: `m` from `sigma_plus`,
/// `n` from `blocks`, `d` from `a`.
///
/// The matrices keep the general shapes B: d×n, C: m×n, D: m×d, Π⁺: m×d,
/// Π⁻: n×d, which are the only shapes making every product in the plant
/// equations well formed; they reduce to square when m = n = d.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperbolicSystem {
    /// Z transport speeds σ⁺, positive and nondecreasing.
    pub sigma_plus: DVector<f64>,
    /// Isotachic block structure of the Y speeds.
    pub blocks: BlockStructure,
    /// Λ⁺⁺ (m×m): local Z→Z coupling.
    pub lambda_pp: DMatrix<f64>,
    /// Λ⁺⁻ (m×n): local Y→Z coupling.
    pub lambda_pm: DMatrix<f64>,
    /// Λ⁻⁻ (n×n): local Y→Y coupling.
    pub lambda_mm: DMatrix<f64>,
    /// Λ⁻⁺ (n×m): local Z→Y coupling.
    pub lambda_mp: DMatrix<f64>,
    /// Π⁺ (m×d): ODE→Z coupling.
    pub pi_p: DMatrix<f64>,
    /// Π⁻ (n×d): ODE→Y coupling.
    pub pi_m: DMatrix<f64>,
    /// F⁺⁺ (m×m): integral Z→Z coupling.
    pub f_pp: DMatrix<f64>,
    /// F⁺⁻ (m×n): integral Y→Z coupling.
    pub f_pm: DMatrix<f64>,
    /// F⁻⁺ (n×m): integral Z→Y coupling.
    pub f_mp: DMatrix<f64>,
    /// F⁻⁻ (n×n): integral Y→Y coupling.
    pub f_mm: DMatrix<f64>,
    /// A (d×d): ODE state matrix.
    pub a: DMatrix<f64>,
    /// B (d×n): ODE input matrix acting on Y(0,t).
    pub b: DMatrix<f64>,
    /// C (m×n): boundary reflection Y(0,t) → Z(0,t).
    pub c: DMatrix<f64>,
    /// D (m×d): boundary ODE feed X → Z(0,t).
    pub d: DMatrix<f64>,
}

impl HyperbolicSystem {
    /// Z dimension m.
    pub fn m(&self) -> usize {
        self.sigma_plus.len()
    }

    /// Y dimension n.
    pub fn n(&self) -> usize {
        self.blocks.total()
    }

    /// ODE dimension d.
    pub fn d(&self) -> usize {
        self.a.nrows()
    }

    /// Largest transport speed over both families.
    pub fn max_speed(&self) -> f64 {
        let zp = self.sigma_plus.iter().cloned().fold(0.0_f64, f64::max);
        let ym = self.blocks.speeds().iter().cloned().fold(0.0_f64, f64::max);
        zp.max(ym)
    }

    /// Distinct ratios σ⁻_b/σ⁻_a over block pairs with σ⁻_b < σ⁻_a, sorted
    /// ascending. These are the slopes of the lines y = r·x across which the
    /// K kernel components may jump.
    pub fn discontinuity_ratios(&self) -> Vec<f64> {
        let sp = self.blocks.speeds();
        let mut out: Vec<f64> = Vec::new();
        for a in 0..sp.len() {
            for b in (a + 1)..sp.len() {
                let r = sp[b] / sp[a];
                if !out.iter().any(|&q| (q - r).abs() <= 1e-14) {
                    out.push(r);
                }
            }
        }
        out.sort_by(|x, y| x.partial_cmp(y).unwrap());
        out
    }
}

/// Diagnostic outcome of [`validate_system`]: one entry per violated
/// invariant, empty iff the system is admissible.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    violations: Vec<String>,
}

impl ValidationReport {
    /// True iff no invariant is violated.
    pub fn is_admissible(&self) -> bool {
        self.violations.is_empty()
    }

    /// The violated invariants, in check order.
    pub fn violations(&self) -> &[String] {
        &self.violations
    }

    fn flag(&mut self, msg: impl Into<String>) {
        self.violations.push(msg.into());
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.violations.is_empty() {
            write!(f, "admissible")
        } else {
            for v in &self.violations {
                writeln!(f, "- {v}")?;
            }
            Ok(())
        }
    }
}

/// Checks every standing hypothesis of the plant class and reports the
/// violations. Diagnostic only: never fails, the report lists everything
/// found.
pub fn validate_system(sys: &HyperbolicSystem) -> ValidationReport {
    let mut rep = ValidationReport::default();
    let (m, n, d) = (sys.m(), sys.n(), sys.d());

    if m == 0 {
        rep.flag("sigma_plus is empty (m must be at least 1)");
    }
    for (i, &s) in sys.sigma_plus.iter().enumerate() {
        if !(s > 0.0) || !s.is_finite() {
            rep.flag(format!("sigma_plus[{i}] = {s} is not strictly positive"));
        }
    }
    if sys
        .sigma_plus
        .as_slice()
        .windows(2)
        .any(|w| w[0] > w[1])
    {
        rep.flag("sigma_plus not nondecreasing");
    }

    let mut shape = |name: &str, mat: &DMatrix<f64>, rows: usize, cols: usize| {
        if mat.nrows() != rows || mat.ncols() != cols {
            rep.flag(format!(
                "{name} has shape {}x{}, expected {rows}x{cols}",
                mat.nrows(),
                mat.ncols()
            ));
        }
    };
    shape("lambda_pp", &sys.lambda_pp, m, m);
    shape("lambda_pm", &sys.lambda_pm, m, n);
    shape("lambda_mm", &sys.lambda_mm, n, n);
    shape("lambda_mp", &sys.lambda_mp, n, m);
    shape("pi_p", &sys.pi_p, m, d);
    shape("pi_m", &sys.pi_m, n, d);
    shape("f_pp", &sys.f_pp, m, m);
    shape("f_pm", &sys.f_pm, m, n);
    shape("f_mp", &sys.f_mp, n, m);
    shape("f_mm", &sys.f_mm, n, n);
    shape("a", &sys.a, d, d);
    shape("b", &sys.b, d, n);
    shape("c", &sys.c, m, n);
    shape("d", &sys.d, m, d);

    if sys.b.nrows() == d && sys.a.ncols() == d {
        match controllability_rank(&sys.a, &sys.b) {
            Ok(rank) if rank == d => {}
            Ok(rank) => rep.flag(format!(
                "(A, B) uncontrollable: rank {rank} of the controllability matrix < d = {d}"
            )),
            Err(e) => rep.flag(format!("controllability check failed: {e}")),
        }
    }
    rep
}

/// Rank of the controllability matrix [B, AB, …, A^{d-1}B], computed by
/// column-pivoted QR with a threshold scaled to the matrix magnitude.
pub fn controllability_rank(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<usize> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "A must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if b.nrows() != a.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "B has {} rows but A is {}x{}",
            b.nrows(),
            a.nrows(),
            a.ncols()
        )));
    }
    let d = a.nrows();
    let n_in = b.ncols();
    if d == 0 || n_in == 0 {
        return Ok(0);
    }

    let mut ctrb = DMatrix::<f64>::zeros(d, d * n_in);
    let mut power = b.clone();
    for k in 0..d {
        ctrb.view_mut((0, k * n_in), (d, n_in)).copy_from(&power);
        if k + 1 < d {
            power = a * &power;
        }
    }

    let qr = ctrb.col_piv_qr();
    let r = qr.r();
    let diag_max = r[(0, 0)].abs();
    if diag_max == 0.0 {
        return Ok(0);
    }
    let threshold = diag_max * f64::EPSILON * (d.max(d * n_in) as f64);
    let rank = (0..d.min(d * n_in))
        .take_while(|&i| r[(i, i)].abs() > threshold)
        .count();
    Ok(rank)
}

/// A sampled plant state: Y and Z on the grid nodes plus the ODE state X,
/// at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSnapshot {
    /// Spatial grid of the sample.
    pub grid: Grid,
    /// Y(x_a, t) per node, each of dimension n.
    pub y: Vec<DVector<f64>>,
    /// Z(x_a, t) per node, each of dimension m.
    pub z: Vec<DVector<f64>>,
    /// ODE state X(t).
    pub x: DVector<f64>,
    /// Sample time.
    pub t: f64,
}

impl StateSnapshot {
    /// An all-zero snapshot with the given dimensions at t = 0.
    pub fn zeros(grid: Grid, n: usize, m: usize, d: usize) -> Self {
        let nodes = grid.num_nodes();
        StateSnapshot {
            grid,
            y: vec![DVector::zeros(n); nodes],
            z: vec![DVector::zeros(m); nodes],
            x: DVector::zeros(d),
            t: 0.0,
        }
    }

    /// Checks the snapshot against the plant dimensions.
    pub fn check_dims(&self, sys: &HyperbolicSystem) -> Result<()> {
        let nodes = self.grid.num_nodes();
        if self.y.len() != nodes || self.z.len() != nodes {
            return Err(Error::GridMismatch(format!(
                "snapshot stores {} Y / {} Z nodes for a grid of {} nodes",
                self.y.len(),
                self.z.len(),
                nodes
            )));
        }
        if self.y.iter().any(|v| v.len() != sys.n())
            || self.z.iter().any(|v| v.len() != sys.m())
            || self.x.len() != sys.d()
        {
            return Err(Error::DimensionMismatch(
                "snapshot state dimensions do not match the system".into(),
            ));
        }
        Ok(())
    }
}
