//! Self-supervised retrieval of corresponding ultrasound views.
//!
//! A convolutional encoder is pretrained with the NT-Xent contrastive loss on
//! augmented frame pairs, then frozen while a pair classifier learns whether
//! two frames show the same anatomical view. Retrieval ranks the frames of a
//! later exam by the classifier's match probability against a reference view.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod contrastive;
pub mod dataset;
pub mod error;
pub mod frame;
pub mod metrics;
pub mod model;
pub mod ncc;
pub mod nn;
pub mod pairs;
pub mod pgm;
pub mod pipeline;
pub mod ranking;
pub mod rng;
pub mod synth;

pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use frame::{Frame, FRAME_SIZE};
pub use rng::Rng;
