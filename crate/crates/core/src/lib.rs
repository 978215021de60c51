//! Floating-point chaos probes for a small deterministic transformer.
//!
//! The core is generic over the arithmetic type through [`numerics::Scalar`];
//! `f64`, `f32` and an emulated bfloat16 are provided.

pub mod linalg;
pub mod model;
pub mod numerics;
pub mod probes;
pub mod report;
pub mod spectrum;

pub use half::bf16 as Bf16;

pub type Matrix64 = linalg::Matrix<f64>;
pub type Matrix32 = linalg::Matrix<f32>;
