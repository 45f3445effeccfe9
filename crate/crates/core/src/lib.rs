//! Few-shot class-incremental learning with semantic-aware virtual contrastive
//! training.
//!
//! The crate is `no_std` and only needs `alloc`. It holds everything that is
//! pure computation: the virtual-class (fantasy) label algebra, view
//! augmentation, a small convolutional network with hand-written backward
//! passes, the supervised contrastive and cross-entropy objectives, the
//! momentum feature queue, the base/incremental trainer, prototype inference
//! and the class-separation metrics. File formats, configuration and the CLI
//! live in the `savc` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod contrast;
pub mod data;
pub mod error;
pub mod fantasy;
pub mod image;
pub mod inference;
pub mod metrics;
pub mod network;
pub mod objective;
pub mod prototypes;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use fantasy::{FantasySet, TransformDescriptor};
pub use image::Image;
pub use tensor::Matrix;
