//! Command-line harness for `cqfb`: scenario files, runs, gain sweeps,
//! certificates and discretisation studies.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
