//! Simulation of contrastive learning dynamics as discrete-time message
//! passing on graphs of unconstrained feature matrices.
//!
//! The crate is organized around a data-side *augmentation graph* (edge
//! weights play the role of a joint view distribution) and a feature-side
//! *affinity graph* (softmax of pairwise feature similarities). Gradient
//! descent on the feature-space alignment / uniformity losses becomes a
//! linear (or softmax-linear) propagation of the feature rows, and the
//! update rules, their fixed points, and their contraction behavior can be
//! checked numerically at desk scale.
//!
//! Modules:
//! - [`numerics`]: dense symmetric eigensolver, stable softmax, norms
//! - [`graph`]: augmentation graph construction, spectra, edge-list I/O
//! - [`losses`]: alignment / uniformity / InfoNCE and their variants
//! - [`dynamics`]: the update rules and the trajectory runner
//! - [`analysis`]: subspace distance, conditionals, collapse diagnostics
//! - [`oracle`]: independent brute-force verifiers (finite differences,
//!   double-loop losses, step-by-step contraction checks)

use thiserror::Error;

pub mod analysis;
pub mod dynamics;
pub mod graph;
pub mod losses;
pub mod numerics;
pub mod oracle;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not square: {0} x {1}")]
    NotSquare(usize, usize),

    #[error("matrix has no rows")]
    EmptyMatrix,

    #[error("matrix is not symmetric at ({i}, {j}): {a} vs {b}")]
    NotSymmetric { i: usize, j: usize, a: f64, b: f64 },

    #[error("non-finite entry at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error(
        "eigendecomposition did not converge after {sweeps} sweeps \
         (n = {n}, off-diagonal mass = {residual:.3e}, tol = {tol:.3e})"
    )]
    EigenNonConvergence {
        n: usize,
        sweeps: usize,
        residual: f64,
        tol: f64,
    },

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("temperature must be positive and finite, got {0}")]
    BadTemperature(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("graph has no labels")]
    MissingLabels,

    #[error("graph has no groups")]
    MissingGroups,

    #[error("class {0} is empty")]
    EmptyClass(usize),

    #[error("memory bank has no entries for group {0}")]
    EmptyBank(usize),

    #[error("node {node} has no group id")]
    MissingGroup { node: usize },

    #[error("row {0} has zero norm, cannot normalize")]
    ZeroNormRow(usize),

    #[error("edge list parse error at line {line}: {msg}")]
    EdgeListParse { line: usize, msg: String },

    #[error("duplicate edge ({i}, {j}) with conflicting weights {a} vs {b} at line {line}")]
    ConflictingEdge {
        line: usize,
        i: usize,
        j: usize,
        a: f64,
        b: f64,
    },

    #[error("features diverged at step {step}: |entry| > {limit:.1e} at node {node}")]
    Divergence {
        step: usize,
        node: usize,
        limit: f64,
    },

    #[error("graph contains a cross-class edge ({i}, {j}); dynamics are not label-preserving")]
    CrossClassEdge { i: usize, j: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
