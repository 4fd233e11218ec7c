// `!(x > 0.0)` is used on purpose so that NaN fails validation; reference
// constants keep all the digits they were published with.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::excessive_precision,
    clippy::needless_range_loop
)]

pub mod caputo;
pub mod error;
pub mod metrics;
pub mod optimize;
pub mod polynet;
pub mod residual;
pub mod run;

pub use error::{Error, Result};
