//! Shape optimization driven by constrained `L^p` best approximation of the
//! Sturm-Laurain shape tensor.
//!
//! For a shape functional `J(Ω) = ∫_Ω j(u_Ω) dx` constrained by a Poisson
//! problem, the distance of a polygonal shape from stationarity equals the
//! `L^p` distance of the shape tensor `K(u_Ω, y_Ω)` to an affine set of
//! matrix fields with prescribed divergence and normal trace. This crate
//! discretizes that best-approximation problem with matrix-valued
//! lowest-order Raviart-Thomas elements, evaluates the resulting
//! stationarity measure `η_p`, reconstructs the Lagrange multiplier of the
//! divergence constraint into a continuous deformation field, and uses it
//! as the steepest-descent direction of a shape-gradient iteration.
//!
//! The pieces, bottom to top:
//!
//! * [`mesh`] — conforming triangulations: construction, uniform
//!   refinement, deformation, quality measures, text serialization.
//! * [`poisson`] — P1 solves of the state and adjoint Dirichlet problems
//!   and evaluation of the shape functional.
//! * [`tensor`] — pointwise and per-element shape-tensor algebra and the
//!   volume form of the shape derivative.
//! * [`lms`] — the constrained least-mean solver in RT0 × P0 spaces,
//!   linear at `p = 2` and iteratively reweighted for `p < 2`.
//! * [`reconstruct`] — local lifting of the piecewise constant multiplier
//!   to a continuous piecewise linear deformation.
//! * [`optim`] — the outer descent loop: translation half-step,
//!   logarithmic line search, termination handling.
//! * [`problems`] — the benchmark problem definitions and the closed-form
//!   solutions on concentric disks used as oracles.
//! * [`linsolve`] — sparse SPD and symmetric-indefinite solve contracts.
//! * [`io`] — mesh text format, CSV reports and the command-line driver.

pub mod io;
pub mod linsolve;
pub mod lms;
pub mod mesh;
pub mod optim;
pub mod poisson;
pub mod problems;
pub mod quadrature;
pub mod reconstruct;
pub mod tensor;

mod book;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violates a precondition.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    /// A mesh failed a structural validity check.
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    /// A linear solve did not meet its residual contract.
    #[error("linear solver failure: {0}")]
    Solver(String),
    /// A point lies outside the domain of an analytic formula.
    #[error("point outside domain: {0}")]
    OutsideDomain(String),
    /// Parse failure for a mesh file or run configuration.
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
