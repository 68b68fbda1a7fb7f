//! Cluster-based dataset pruning in embedding space.
//!
//! Embeddings are clustered with k-means, each sample is scored by its
//! distance to its centroid, and keep-lists are built by dropping the
//! samples closest to (`simple`) or farthest from (`hard`) their centroid.
//! Pruned datasets are compared through class balance and through the
//! scaling exponent of linear-probe learning curves.
//!
//! ```no_run
//! use kprune::{kmeans, pruner, Scope};
//!
//! let x = kprune::io::read_embeddings("train.emb")?;
//! let model = kmeans::kmeans_fit(&x, &kmeans::KMeansConfig::new(10).with_seed(7))?;
//! let scores = pruner::DistanceScores::from_model(&model);
//! let keep = pruner::prune_simple(&scores, 0.4, Scope::Global)?;
//! kprune::io::write_keeplist(&keep, "simple-40.json")?;
//! # Ok::<(), kprune::Error>(())
//! ```

pub mod data;
pub mod error;
pub mod experiment;
pub mod io;
pub mod kmeans;
pub mod manifest;
pub mod metrics;
pub mod pca;
pub mod probe;
pub mod pruner;
pub mod rng;
pub mod scaling;
pub mod synth;

pub use data::{EmbeddingMatrix, KeepList, LabelVector, Method, Scope};
pub use error::{Error, Result};
pub use manifest::Manifest;
