#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod contact;
pub mod controller;
pub mod error;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod planner;
pub mod se3;
pub mod sim;
pub mod solver;
pub mod strokes;

pub use error::{Error, Result};
