//! Sequence-to-sequence load disaggregation with a multi-scale dilated
//! residual network.

extern crate self as nilm_core;

pub mod data;
pub mod eval;
pub mod layers;
pub mod manifest;
pub mod model;
pub mod pipeline;
pub mod tensor;
pub mod training;

#[cfg(test)]
pub(crate) mod testutil;
