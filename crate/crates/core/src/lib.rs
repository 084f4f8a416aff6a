//! Environment engine for energy-storage dispatch on radial distribution
//! networks: topology loading, fixed-point and Newton power flow, storage
//! dynamics, time-series handling, scenario augmentation, the dispatch MDP,
//! and a dynamic-programming benchmark oracle.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops mirror the matrix notation in the numerical kernels.
#![allow(clippy::needless_range_loop)]

pub mod augment;
pub mod config;
pub mod data;
pub mod env;
pub mod ess;
pub mod network;
pub mod oracle;
pub mod power_flow;
pub mod protocol;
pub mod stats;
