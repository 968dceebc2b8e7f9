#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod error;
pub mod losses;
pub mod matrix;
pub mod model;
pub mod train;
pub mod volume;

pub use error::{Error, Result};
pub use matrix::Matrix;
