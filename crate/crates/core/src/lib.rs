//! Core algorithms for differentially private federated learning with
//! sparsified model perturbation (Fed-SMP), DP-FedAvg and FedAvg.
//!
//! The crate is `no_std` and only needs `alloc`. Everything here is a pure
//! function of its inputs plus an explicit [`numeric::RngStream`]; file
//! formats, configuration and the command line live in the `fedsmp` crate.
#![cfg_attr(not(test), no_std)]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod federation;
pub mod model;
pub mod numeric;
pub mod privacy;
pub mod secagg;
pub mod sparsify;

pub use error::{Error, Result};
pub use numeric::{ParamVector, Purpose, RngStream, StreamId};
