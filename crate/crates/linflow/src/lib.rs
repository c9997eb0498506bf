//! A numerical laboratory for gradient flows of deep linear networks.
//!
//! Training a linear network `x ↦ W_N ⋯ W_1 x` on data `(X, Y)` with the
//! squared loss induces a coupled matrix gradient flow on the layer tuple.
//! When the layers are *balanced* (`W_{j+1}ᵀ W_{j+1} = W_j W_jᵀ`), the product
//! `W = W_N ⋯ W_1` itself follows an autonomous flow on the manifold of
//! fixed-rank matrices, which is a Riemannian gradient flow for a non-trivial
//! metric. This crate implements both pictures and the machinery around them:
//!
//! - [`model`]: network/data types, the layered and product losses, exact
//!   gradients, balancedness and conserved quantities.
//! - [`initializers`]: balanced factorizations, random orthogonal-balanced and
//!   Gaussian tuples, the pathological autoencoder start, dimension grids.
//! - [`integrator`]: fixed-step RK4 for every flow variant (layered, product,
//!   Oja, symmetric/two-layer autoencoder, Riccati form) with snapshotting.
//! - [`geometry`]: the operator `𝒜_W`, tangent-space projection on the
//!   fixed-rank manifold, and three independent routes to the Riemannian
//!   metric (quadrature, tangent-space linear solve, `N = 2` closed form).
//! - [`landscape`]: closed-form enumeration and strict-saddle classification
//!   of all critical points of the product loss, lifts back to layer tuples,
//!   PCA solutions and autoencoder equilibria.
//! - [`diagnostics`]: invariant monitors over trajectories (conservation,
//!   loss monotonicity, rank constancy, closed-form regressions).
//! - [`cli`]: a config-driven experiment runner emitting CSV/JSON/SVG.
//!
//! The `examples/` directory contains one runnable example per capability;
//! start with `cargo run --release --example autoencoder_balanced`.

pub mod cli;
pub mod diagnostics;
pub mod geometry;
pub mod initializers;
pub mod integrator;
pub mod landscape;
pub mod model;

use thiserror::Error;

/// Dense double-precision matrix used throughout the crate.
pub type Mat = nalgebra::DMatrix<f64>;
/// Dense double-precision column vector.
pub type Vector = nalgebra::DVector<f64>;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Matrix dimensions incompatible with the requested operation.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Invalid parameter (dimension grid, rank bound, config field, ...).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A documented precondition was violated by the caller.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The base point has numerical rank zero; the tangent space is `{0}`.
    #[error("degenerate rank: {0}")]
    DegenerateRank(String),

    /// Requested construction is impossible (e.g. rank exceeds the bottleneck).
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// The integrated state left the finite range.
    #[error("flow diverged at step {step} (t = {time}): state norm {norm:e}")]
    Divergence { step: usize, time: f64, norm: f64 },

    /// Numerical routine could not reach the requested accuracy.
    #[error("accuracy not reached: requested {requested:e}, achieved {achieved:e}")]
    Accuracy { requested: f64, achieved: f64 },

    /// Combinatorial enumeration would exceed the hard size guard.
    #[error("enumeration too large: {count} subsets exceeds limit {limit}")]
    SizeGuard { count: u128, limit: u128 },

    /// Trajectories cannot be compared (different time grids).
    #[error("trajectory comparison: {0}")]
    GridMismatch(String),

    /// Experiment configuration rejected.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
