#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod channel_model;
pub mod deterministic_rate;
pub mod dual;
pub mod error;
pub mod experiment;
pub mod fixed_point;
pub mod linalg;
pub mod monte_carlo;
pub mod optimizer;

pub use error::{Error, Result};
