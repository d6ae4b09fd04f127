//! Déjà vu memorization auditing for self-supervised image encoders.
//!
//! An encoder memorizes a training image when its embedding of a crop that
//! hides the object (the periphery) is enough to recover the object's label
//! through nearest neighbours in a disjoint public set, while a reference
//! encoder trained on different data cannot. The modules here cover the data
//! side (splits, crops, embedding stores), the decoding (exact KNN), the
//! metrics, a linear-probe baseline, and a synthetic lab with planted
//! memorization for validating the whole chain.

pub mod crop;
pub mod knn;
pub mod lab;
pub mod metrics;
pub mod pipeline;
pub mod probe;
pub mod split;
pub mod store;
