#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assets;
pub mod compositor;
pub mod demo;
pub mod envmap;
pub mod geometry;
pub mod pipeline;
pub mod placement;
pub mod postfx;
pub mod renderer;
