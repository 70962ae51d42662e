//! Articulatory-variation analysis for signed-language motion data.
//!
//! The crate turns keypoint recordings and gloss annotations into per-sign
//! kinematic metrics, repeated-mention reduction statistics, embedding
//! entrainment measures and a sliding-window sign-spotting evaluation.

pub mod annotation;
pub mod cli;
pub mod config;
pub mod entrain;
pub mod interval;
pub mod kinemetrics;
pub mod reduction;
pub mod skeleton;
pub mod spotter;
pub mod stats;
pub mod synth;
