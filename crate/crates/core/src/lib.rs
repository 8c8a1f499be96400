//! Continuously retrained word spotting and label harvesting for scanned
//! handwritten collections.

pub mod ballpark;
pub mod corpus;
pub mod error;
pub mod experiments;
pub mod features;
pub mod harvest;
pub mod imaging;
pub mod ranking;
pub mod segmentation;
pub mod store;
mod util;

pub use error::{Error, Result};

/// Milliseconds since the Unix epoch.
pub type Timestamp = i64;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/ranking.md")]
    mod ranking {}
    #[doc = include_str!("../../../book/src/harvest.md")]
    mod harvest {}
    #[doc = include_str!("../../../book/src/storage.md")]
    mod storage {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/api.md")]
    mod api {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
