//! Training-free segmentation of dense feature maps.
//!
//! A feature map is turned into a row-stochastic transition matrix that fuses a
//! global inner-product affinity with an 8-connected cosine affinity. The matrix
//! is iterated under an expand / inflate / prune / normalize operator until it
//! reaches a fixpoint, whose attractor columns give coarse clusters. Those
//! clusters seed a random-walk label propagation over the same transition
//! matrix, and the per-node argmax of the propagated distribution is the final
//! label map.
//!
//! ```
//! use flowseg_core::{pipeline, synthetic, SegmentationConfig};
//!
//! let fixture = synthetic::BundledFixture::FourBlob.generate(0.0).unwrap();
//! let seg = pipeline::segment(&fixture.features, &SegmentationConfig::default()).unwrap();
//! assert_eq!(seg.flow.clusters.len(), 4);
//! assert_eq!(seg.labels, fixture.truth);
//! ```

pub mod affinity;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod feature;
pub mod io;
pub mod markov_flow;
pub mod matrix;
pub mod pipeline;
pub mod projective;
pub mod propagation;
pub mod synthetic;

pub use config::{SegmentationConfig, StorageMode};
pub use error::{Error, Result};
pub use feature::{FeatureMap, LabelMap};
pub use matrix::{NonnegMatrix, StochasticMatrix, Storage};
