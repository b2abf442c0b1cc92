//! Offline safe imitation learning from non-preferred and unlabeled
//! demonstrations: a multiple-instance bag-ranking cost model, cost-weighted
//! behavior cloning, baselines, and exact tabular CMDP evaluation.

pub mod cmdp;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod mil;
pub mod nn;
pub mod policy;

pub use error::{Error, Result};
