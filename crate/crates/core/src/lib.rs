//! Learned removal of identity-irrelevant pixels from detected person boxes.
//!
//! A deep Q-network cuts horizontal and vertical stripes off a detection
//! window, rewarded by how the refined crop matches other images of the same
//! identity. Crops are evaluated by retrieval metrics (CMC, mAP).

pub mod agent;
pub mod embedding;
pub mod environment;
pub mod evaluation;
pub mod error;
pub mod imaging;
pub mod numerics;
pub mod oracle;
pub mod rewards;
pub mod seed;

pub use error::{Error, Result};
