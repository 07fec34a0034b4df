//! Pseudo-supervision mining for patch-level contrastive learning.
//!
//! Given a batch of frozen feature vectors, [`mining::mine`] relocates a proxy
//! for every anchor towards the dense region of its positives and splits the
//! batch into trustworthy positives, an ambiguous band, and negatives.
//! [`objective`] turns those sets into a contrastive loss and gradient,
//! [`eval`] measures how trustworthy the sets are against labels, and
//! [`baselines`] provides the k-NN and k-means strategies to compare with.

pub mod baselines;
pub mod cli;
pub mod error;
pub mod eval;
pub mod feature_store;
pub mod mining;
pub mod objective;
pub mod parallel;
pub mod result;
pub mod similarity;
pub mod synthgen;

pub use error::{Error, Result};
pub use feature_store::{FeatureBatch, Precision, Ratio, SubsampleSpec};
pub use mining::{mine, AnchorState, MiningConfig, Partition, StepRecord};
pub use result::{AnchorSets, MiningResult, StrategyConfig};
