// NaN must fail range checks, so `!(x > 0.0)` is intended.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baltrunc;
pub mod covprop;
pub mod error;
pub mod itransfer;
pub mod klmetrics;
pub mod linalg;
pub mod linmodel;
pub mod modelfile;

pub use error::{Error, ErrorClass, Result};
