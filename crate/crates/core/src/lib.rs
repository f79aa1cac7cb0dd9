//! Far-field inverse scattering on voxel grids: forward operators, sparse
//! recovery by iterative hard thresholding, mutual coherence and convergence
//! bounds.
#![no_std]
// `!(x > 0.0)` guards deliberately reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod bounds;
pub mod coherence;
pub mod error;
pub mod forward;
pub mod geometry;
pub mod iht;
pub mod linalg;
pub mod models;
pub mod seeding;

pub use error::{Result, ScatterError};
pub use linalg::{ComplexMatrix, C64};
