//! Non-transferable pruning for split image classifiers.
//!
//! The crate prunes a source-trained network (feature extractor + classifier
//! head) with an ADMM loop so that it keeps its source-domain accuracy while
//! becoming a poor starting point for fine-tuning on a designated target
//! domain, and measures that effect with sample-wise learning curves.
//!
//! Module map:
//!
//! - [`datasets`]: synthetic glyph domain pairs, image-folder ingestion,
//!   stratified nested subsets and the on-disk dataset format.
//! - [`model`]: the split classifier, its manual backward pass, parameter
//!   vectors, sparsity masks, optimizers and checkpoints.
//! - [`objective`]: source cross-entropy, capped target penalty and the
//!   Fisher-space regularizer.
//! - [`admm`]: W/Z/U alternation with soft-thresholding until a sparsity
//!   target is met.
//! - [`baselines`]: one-shot magnitude pruning.
//! - [`transferability`]: fine-tuning attacks, scratch training, learning
//!   curves and their signed area.
//! - [`training`]: minibatch cross-entropy training and accuracy.
//! - [`orchestrator`]: experiment configuration, run directories and the
//!   command implementations behind the `ntprune` binary.
//!
//! Runnable walkthroughs live in `examples/`.

pub mod admm;
pub mod baselines;
pub mod datasets;
pub mod error;
pub mod model;
pub mod objective;
pub mod orchestrator;
pub mod seed;
pub mod training;
pub mod transferability;

pub use error::{Error, Result};
