//! Krylov solvers and the p-multigrid preconditioner stack for the
//! pressure Poisson and Helmholtz systems, projection-based initial
//! guesses, and reduced-precision preconditioning.

pub mod chebyshev;
pub mod coarse;
pub mod helmholtz;
pub mod pcg;
pub mod pmg;
pub mod projection;

pub use chebyshev::{chebyshev_t, estimate_lambda_max, ChebyshevSmoother};
pub use coarse::CoarseProblem;
pub use helmholtz::{build_mask, face_nodes, Coefficient, HelmholtzOp, LevelOperator};
pub use pcg::{pcg, IdentityPrecond, JacobiPrecond, Precond, SolveStats};
pub use pmg::{default_schedule, Pmg, PmgConfig, PmgPrecond, PmgProblem};
pub use projection::{solve_with_projection, ProjectionSpace};
