//! Block backstepping boundary control for isotachic hyperbolic PIDE-ODE
//! systems, with the full pipeline from N-layer Timoshenko beam parameters to
//! stabilizing boundary gains and verified closed-loop simulation.
//!
//! The crate is organized along the pipeline:
//!
//! * [`model`] — the coupled hyperbolic PIDE-ODE plant class, speed-block
//!   partitioning and controllability checks;
//! * [`transform`] — the block-diagonalizing transformation 𝓐(x) and the
//!   x-dependent coefficients of the intermediate system;
//! * [`kernels`] — the Goursat kernel equations on the triangle solved by
//!   back-traced characteristics with a per-row fixed point, pole placement,
//!   residual verification and gain extraction;
//! * [`controller`] — the boundary control law and the direct/inverse
//!   backstepping state transformations;
//! * [`beam`] — the N-layer Timoshenko composite beam mapped to the plant
//!   class through Riemann variables;
//! * [`sim`] — upwind time-domain simulation in open and closed loop with
//!   norm, Lyapunov and decay-rate diagnostics;
//! * [`cli`] — config-driven orchestration and CSV export.

pub mod beam;
pub mod cli;
pub mod controller;
pub mod error;
pub mod grid;
pub mod kernels;
pub mod model;
pub mod quad;
pub mod sim;
pub mod transform;

pub use error::{Error, Result};
