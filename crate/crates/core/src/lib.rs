//! Compositional pose tokens.
//!
//! A pose of `K` joints is encoded into `M` token features, each snapped to
//! the nearest entry of a shared codebook, and decoded back. Pose estimation
//! from partial or noisy observations then becomes classification of the `M`
//! token indices, decoded by the frozen decoder.
//!
//! * [`numerics`]: dense tensors, layers with hand-written backward passes,
//!   losses, AdamW and a finite-difference gradient checker.
//! * [`posedata`]: synthetic skeletons, forward kinematics, masking, JSONL
//!   datasets and SVG rendering.
//! * [`tokenizer`]: compositional encoder, codebook, decoder and training.
//! * [`estimator`]: token-classification head and the two baseline heads.
//! * [`evaluation`]: PCK metrics, codebook statistics, token locality,
//!   ablation and sweep harnesses.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod numerics;
pub mod posedata;
pub mod rng;
pub mod tokenizer;

pub use error::{Error, Result};
