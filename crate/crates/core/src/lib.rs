//! Learning with noisy labels by mismatch-guided Mixup.
//!
//! The pipeline has three stages:
//!
//! 1. **Predict** – K-fold training yields an out-of-fold probability row and
//!    predicted label for every training sample ([`crossval`]).
//! 2. **Select** – samples whose observed label disagrees with the prediction
//!    form the mismatch set; samples are indexed by predicted class.
//! 3. **Mix** – during training, mismatched samples are interpolated with a
//!    partner of their predicted class and supervised with
//!    `lambda * CE(observed) + (1 - lambda) * CE(predicted)`; every other
//!    sample is used as is ([`mixing`]).
//!
//! ERM, vanilla Mixup and Mixup* (Mixup on predicted labels) are available as
//! reference strategies. [`theory`] estimates the Mixup and SelectMix risks by
//! Monte Carlo and checks the risk-gap bound; [`harness`] runs seeded
//! end-to-end experiments and sweeps.

pub mod crossval;
pub mod datasets;
pub mod error;
pub mod harness;
pub mod mixing;
pub mod net;
pub mod rng;
pub mod theory;
pub mod training;

pub use error::{Error, Result};
