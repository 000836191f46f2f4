//! Toolkit for loophole-free Bell tests built on the Clauser-Horne
//! inequality: a quantum model of the photon-pair experiment, setting
//! randomness, a trial simulator, a stopping-rule hypothesis test,
//! spacetime locality bookkeeping and design optimization.

// `!(x > 0.0)` style guards also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod design;
pub mod hypothesis;
pub mod manifest;
pub mod quantum;
pub mod randomness;
pub mod records;
pub mod simulator;
pub mod spacetime;
