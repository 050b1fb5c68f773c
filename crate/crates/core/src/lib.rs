//! Prototype-based few-shot event detection.
//!
//! Every prototype method handled here is a point in a five-way design
//! space: where prototypes come from (event mentions, label names, or both),
//! which transfer function maps encoder outputs into the distance space,
//! which distance scores proximity, where multiple prototype signals are
//! aggregated (feature, score or loss level), and which optional CRF adjusts
//! per-token decisions. [`method::MethodConfig`] names one such point and
//! [`training`] trains and evaluates it end to end with the small encoder in
//! [`encoder`].
//!
//! The crate is `no_std` and only needs `alloc`; file formats, the CLI and the
//! experiment grid live in the `protoed` companion crate.
#![no_std]
// `!(x > 0.0)` style checks are used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod corpus;
pub mod crf;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod math;
pub mod method;
pub mod params;
pub mod proto;
pub mod sampler;
pub mod synthetic;
pub mod tape;
pub mod training;

pub use error::{Error, Result};
