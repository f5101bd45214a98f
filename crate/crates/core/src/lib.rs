//! Tri-modal gesture/speech/text joint embeddings at desk scale.
//!
//! The crate covers the full loop: synthetic corpus generation with planted
//! gesture-word correspondences ([`corpus`]), the three modality encoders
//! ([`encoders`]), speech-text fusion and gesture-word attention alignment
//! ([`fusion`]), the global phrase contrastive and local coupling objectives
//! ([`objectives`]), a deterministic AdamW trainer ([`trainer`]), and the
//! retrieval / word spotting / active-speaker evaluators ([`tasks`]).
//!
//! Numerics are hand-rolled on purpose: [`autodiff`] is a small eager tape
//! that runs generically in f32 (training) or f64, and [`verify`] checks the
//! f64 gradients against central finite differences.

pub mod autodiff;
pub mod container;
pub mod corpus;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod manifest;
pub mod model;
pub mod nn;
pub mod objectives;
pub mod params;
pub mod rng;
pub mod tasks;
pub mod tensor;
pub mod trainer;
pub mod verify;
