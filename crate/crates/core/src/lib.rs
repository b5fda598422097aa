//! Cross-embodiment motion retargeting and latent-space control.
//!
//! Humans and articulated robots are encoded into one latent space split into
//! five body-segment subspaces (left arm, right arm, trunk, left leg, right
//! leg). Robots are attached to the shared encoder/decoder through small
//! per-robot embedding layers, so a new robot only has to learn its own
//! embedding. A conditional VAE trained on human motion predicts latent
//! displacements toward an end-effector goal and runs unchanged on every
//! registered robot.
//!
//! Module map:
//!
//! - [`embodiment`]: kinematic descriptions, forward kinematics, pose sampling.
//! - [`metrics`]: pose similarity and retargeting/goal-reaching metrics.
//! - [`nn`]: dense layers with hand-written backward passes and Adam.
//! - [`latent`]: the latent model (encoders, decoder, robot embeddings).
//! - [`training`]: triplet mining, the four-term objective, adaptation.
//! - [`policy`]: the latent c-VAE policy and goal-directed rollouts.
//! - [`checkpoint`]: the versioned parameter container.
//! - [`toolkit`]: synthetic motions, dataset split, PCA, reports.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod embodiment;
pub mod latent;
pub mod metrics;
pub mod nn;
pub mod policy;
pub mod toolkit;
pub mod training;

pub use embodiment::{EmbodimentSpec, Motion, Pose, Segment};
