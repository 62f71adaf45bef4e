#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coordination;
pub mod frontier;
pub mod geometry;
pub mod grid;
pub mod image;
pub mod mapping;
pub mod metrics;
pub mod perception;
pub mod planner;
pub mod simulator;
pub mod valuemap;
pub mod harness;
pub mod snapshot;
