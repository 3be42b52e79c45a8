//! Adversarial "unsegmentation" toolkit: a two-stage deformation-simulation
//! attack and feature-space baselines against a self-contained toy
//! promptable segmentation model, plus the evaluation harness that scores
//! them (mIoU, ASR@50, ASR@10, feature-similarity diagnostics).

pub mod diffmath;
pub mod error;
pub mod attacks;
pub mod corpus;
pub mod imgio;
pub mod kvtext;
pub mod eval;
pub mod losses;
pub mod segmodel;
pub mod warp;

pub use error::{Error, Result};
