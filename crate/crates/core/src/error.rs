use thiserror::Error;

use crate::lattice::Phase;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("{what}: expected length {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("implicit step did not converge at node {node} after {iterations} iterations")]
    RootNotConverged { node: usize, iterations: usize },

    #[error("driver returned a non-finite value at node {node}")]
    NonFiniteDriver { node: usize },

    #[error("barrier crossing at step {step} ({phase:?}), path {path}: lower {lower} > upper {upper}")]
    BarrierCrossing {
        step: usize,
        phase: Phase,
        path: String,
        lower: f64,
        upper: f64,
    },

    #[error("terminal value {value} on path {path} lies outside [{lower}, {upper}]")]
    TerminalOutsideBarriers {
        path: String,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("stopping times are not ordered on path {path}")]
    NotOrdered { path: String },

    #[error("terminal value is not measurable at the stopping time on node {node}")]
    NotMeasurable { node: usize },

    #[error("stopping system must contain {{tau = T}}; violated on path {path}")]
    InvalidStoppingSystem { path: String },

    #[error("evaluation time must stop at grid times (AT phase); violated on path {path}")]
    OffGridTheta { path: String },

    #[error("enumeration bound exceeded: {steps} steps > bound {bound}; use the reflected recursion instead")]
    EnumerationBound { steps: usize, bound: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;
