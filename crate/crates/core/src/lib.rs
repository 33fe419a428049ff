// `!(a > b)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod liealg;
pub mod rates;
pub mod sdesim;
pub mod symexpr;
pub mod ufgcheck;

#[cfg(test)]
mod testgen;
