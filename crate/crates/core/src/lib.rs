//! Runtime and size bounds for integer programs.
//!
//! Loops whose update admits a closed form are bounded via stabilization
//! thresholds of their guards; the resulting local bounds are lifted to whole
//! programs together with linear ranking functions.

pub mod bounds;
pub mod cli;
pub mod closedform;
pub mod expr;
pub mod global;
pub mod its;
pub mod rank;
pub mod linalg;
pub mod loops;
pub mod rtloop;
pub mod szloop;
pub mod termination;
