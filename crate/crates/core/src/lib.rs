//! Skeleton-based action recognition with higher-order motion streams.
//!
//! The pipeline turns raw joint coordinates into six motion streams
//! ([`kinematics`]), classifies each stream with a graph convolutional
//! network that gates channels by pooled joint-pair differences ([`model`]),
//! trains it with cross-entropy or an information-bottleneck objective
//! ([`objectives`], [`train`]) and fuses per-stream class scores
//! ([`train::ensemble`]).

pub mod autodiff;
pub mod error;
pub mod graph;
pub mod io;
pub mod kinematics;
pub mod model;
pub mod objectives;
pub mod train;

pub use error::{Error, Result};
pub use graph::{build_adjacency, normalize_adjacency, GraphFilter, SkeletonTopology};
pub use kinematics::{build_stream_set, MotionSequence, StreamKind, StreamSet};
