// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dataset_io;
pub mod features;
pub mod geometry;
pub mod loop_closure;
pub mod mapping;
pub mod pipeline;
pub mod preprocess;
pub mod raster;
pub mod synth;
pub mod timing;
pub mod tracking;
