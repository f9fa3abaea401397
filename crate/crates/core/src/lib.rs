//! Root-cause analysis over microservice telemetry.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alarm;
pub mod config;
pub mod detect;
pub mod evidence;
pub mod graph;
pub mod kb;
pub mod logmine;
pub mod mcts;
pub mod oracle;
pub mod pipeline;
pub mod telemetry;
pub mod verdict;
