//! Non-exemplar class-incremental learning with a topology-learning
//! vector quantizer.
//!
//! The crate trains a small MLP feature extractor and one coding vector
//! per class, task by task, without ever storing old samples. A decaying
//! edge graph over the coding vectors tracks which classes border each
//! other in feature space; it drives both a margin loss that pushes
//! features away from confusable neighbors and a prototype augmenter
//! that replays old classes as mixtures of neighboring class means.
//! Everything is plain `f64` math with analytic gradients — no autodiff,
//! no tensor framework — and every run is bit-for-bit reproducible from
//! its seed.
//!
//! Module map:
//! - [`vq`]: coding vectors, the topology graph, and the two
//!   quantizer losses.
//! - [`proto`]: class-mean storage and neighborhood-aware prototype
//!   augmentation.
//! - [`model`]: the MLP extractor with hand-derived backprop,
//!   distillation, and rotation pseudo-classes.
//! - [`harness`]: the incremental train/eval loop, ablation variants,
//!   and exports.
//! - [`data`], [`table`]: synthetic streams and CSV-style feature
//!   tables.
//! - [`metrics`]: accuracy matrices, forgetting, confusion counts.
//! - [`config`], [`ioutil`], [`rng`], [`vecmath`], [`error`]: run
//!   configuration, atomic file I/O, seeded RNG streams, small vector
//!   helpers, and the error type.

pub mod config;
pub mod data;
pub mod error;
pub mod harness;
pub mod ioutil;
pub mod metrics;
pub mod model;
pub mod proto;
pub mod rng;
pub mod table;
pub mod vecmath;
pub mod vq;

pub use error::{Error, Result};
