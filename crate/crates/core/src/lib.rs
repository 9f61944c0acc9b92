//! Feature-domain enhancement and domain adaptation for far-field speaker
//! verification.
//!
//! The crate covers the whole experimental loop: simulating reverberant and
//! noisy corpora, extracting log-mel features, training a supervised
//! enhancement generator (L1 feature mapping plus least-squares adversarial
//! loss) and CycleGAN mappers on unpaired data, enhancing corpora with a
//! trained generator, and scoring speaker-verification trials.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod archive;
pub mod config;
pub mod corpus;
pub mod error;
pub mod features;
pub mod losses;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod seed;
pub mod sv;
pub mod train;

pub use error::{Error, Result};
