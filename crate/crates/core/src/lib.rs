// Negated float comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

#[cfg(test)]
#[macro_use]
mod test_util;

pub mod channel;
pub mod classical;
pub mod encoder;
pub mod error;
pub mod imaging;
pub mod stats;
pub mod tensor;
pub mod transforms;
pub mod vitscore;
pub mod weights;

pub use error::{Error, Result};
