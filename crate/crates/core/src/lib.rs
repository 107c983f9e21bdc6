//! Organ-level adverse drug reaction prediction over a biomedical
//! knowledge graph.

pub mod attribution;
pub mod dataset;
pub mod error;
pub mod features;
pub mod kg;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};

/// Number of organ-level ADR labels.
pub const NUM_ORGANS: usize = 15;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/knowledge-graph.md")]
    mod knowledge_graph {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/datasets.md")]
    mod datasets {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/attribution.md")]
    mod attribution {}
}
