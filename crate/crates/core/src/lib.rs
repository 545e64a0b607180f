//! Epistemic mental state modeling: facial feature geometry, dependence
//! estimation (Pearson and MIC), sliding-window temporal features, region
//! segmentation and classification, region-gated regression, and evaluation.

pub mod dataset;
pub mod regions;
pub mod stats;
pub mod temporal;
pub mod facefeat;
pub mod regress;
pub mod eval;
