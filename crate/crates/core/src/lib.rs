//! Distributed virtual-time coordination of path-following agents over
//! switching directed communication graphs.
//!
//! - [`topology`]: digraphs, switching schedules, integral connectivity checks.
//! - [`coordmath`]: disagreement projection, consensus and ISS constants.
//! - [`trajectory`]: Bezier desired trajectories.
//! - [`vehicle`]: exponentially convergent tracking-error model.
//! - [`controller`]: the coordination law.
//! - [`engine`]: closed-loop simulation, metrics, bound checks.
//! - [`scenario`]: JSON scenario files.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controller;
pub mod coordmath;
pub mod engine;
mod error;
pub mod scenario;
pub mod topology;
pub mod trajectory;
pub mod vehicle;

pub use error::{Error, Result};
