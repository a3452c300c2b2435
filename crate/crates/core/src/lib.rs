//! Doubly reflected BSDEs and nonlinear Dynkin games on a finite two-phase tree.
//!
//! Every object is computed exactly on a binary path tree whose time points
//! come in pairs `AT(k) < AFTER(k)`, the second standing for the right limit.
//! The solvers are generic over [`Scalar`] (`f32` or `f64`); the aliases at the
//! crate root fix `f64`.

// `!(a <= b)` is used on purpose: it rejects NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod expectation;
pub mod games;
pub mod lattice;
pub mod reflect;
pub mod scalar;

pub use error::{Error, Result};
pub use expectation::{
    classify_ef, nonlinear_expectation, solve_bsde, BsdeSolution, ClassifyMode, Driver, Increments, Verdict,
};
pub use lattice::{
    build_tree, eval_lower, eval_upper, first_hitting, semicontinuity, Hitting, NodeId, OptionalProcess, Phase, Point,
    PointSet, StoppingSystem, StoppingTime, TimePoint, TwoPhaseTree,
};
pub use scalar::{Scalar, Tolerances};

pub type Tree = TwoPhaseTree<f64>;
pub type Process = OptionalProcess<f64>;
pub type Generator = Driver<f64>;
