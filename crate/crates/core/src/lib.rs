//! Nonlocal viscous Cahn–Hilliard equation with Neumann boundary conditions,
//! its local limit, and a verification harness for the nonlocal-to-local
//! convergence.
//!
//! The crate is organized bottom-up:
//!
//! - [`geometry`]: unit-box grids, grid functions, the discrete `L²` pairing;
//! - [`kernels`]: mollifier families and the dense singular-kernel quadrature;
//! - [`nonlocal`]: the operator `B_ε`, the energy `E_ε`, the resolvent of `B_ε`;
//! - [`local`]: the Neumann Laplacian, its zero-mean inverse, the `V*` norm;
//! - [`potentials`]: the polynomial, logarithmic and double-obstacle potentials
//!   and their Yosida regularization;
//! - [`stepper`]: implicit convex–concave time stepping with Newton solves;
//! - [`harness`]: Γ-convergence, Poincaré, λ-, ε- and stability sweeps.

pub mod config;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod kernels;
pub mod local;
pub mod nonlocal;
pub mod potentials;
mod quadrature;
pub mod stepper;

pub use config::{RunConfig, TauRule};
pub use error::{Error, Result};
pub use geometry::{inner_h, make_field, mean, Admissible, CosineMode, Field, Grid, InitSpec, TimeGrid};
pub use kernels::{
    assemble_kernel, c_d, make_mollifier, validate_mollifier, KernelMatrix, MollifierFamily, MollifierSpec, Quadrature,
};
pub use local::NeumannLaplacian;
pub use nonlocal::NonlocalOperator;
pub use potentials::{Potential, Yosida};
pub use stepper::{run, Forcing, ForcingKind, Mode, SolverParams, Stepper, Trajectory};

/// Version string echoed into run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
