//! oversem — a desk-scale spectral element heat/flow solver with
//! overset-grid coupling.
//!
//! The crate is organized around the pieces a tensor-product SEM code needs:
//!
//! - [`ref_element`]: Gauss-Lobatto-Legendre rules, differentiation and
//!   interpolation matrices, and the tensor-contraction kernels every
//!   operator is built from.
//! - [`mesh`]: curvilinear hex meshes, isoparametric geometry factors,
//!   global numbering, and the C0 gather-scatter operator.
//! - [`comm`]: a deterministic in-process message-passing runtime (ranks,
//!   communicators, collectives, and the crystal-router all-to-all).
//! - [`findpts`]: scalable off-grid interpolation — locate arbitrary
//!   physical points and evaluate fields there at spectral accuracy.
//! - [`solver`]: preconditioned CG, the p-multigrid/Chebyshev preconditioner
//!   stack, projection-based initial guesses, and the sparse coarse solve.
//! - [`timestepper`]: BDFk/EXTk splitting for temperature and incompressible
//!   flow with dealiased advection.
//! - [`overset`]: multi-session overset coupling (interface exchange via
//!   findpts) and single-session conjugate heat transfer.
//! - [`runtime`]: kernel/communication autotuning, hierarchical runtime
//!   statistics, case configuration, and the CLI entry points.
//!
//! See the `examples/` directory for one runnable example per capability.

pub mod comm;
pub mod error;
pub mod fields;
pub mod findpts;
pub mod flops;
pub mod la;
pub mod mesh;
pub mod overset;
pub mod ref_element;
pub mod runtime;
pub mod scalar;
pub mod solver;
pub mod timestepper;
pub mod tuning;

pub use error::{Error, Result};
