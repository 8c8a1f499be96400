//! Bag-of-visual-words features: dense binary patch descriptors, a k-means
//! codebook and per-zone histograms.

mod bovw;
mod descriptors;
mod kmeans;

pub use bovw::{build_codebook, quantize, Codebook, FeatureVector, CODEBOOK_VERSION};
pub use descriptors::{extract_descriptors, FeatureConfig, Norm, PatchDescriptor};
pub use kmeans::{kmeans, KMeans};

pub(crate) use kmeans::sq_dist;
