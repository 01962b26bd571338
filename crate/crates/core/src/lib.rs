//! Disaster social-media analytics: streaming ingest, noise filtering,
//! incremental event clustering, geotagging, categorization, sentiment,
//! media matching and an append-only event store.
//!
//! [`pipeline::Pipeline`] is the single writer. It publishes immutable
//! [`pipeline::Snapshot`]s that the functions in [`analytics`] read.

pub mod analytics;
pub mod annotate;
pub mod cluster;
pub mod config;
pub mod error;
pub mod geo;
pub mod ingest;
pub mod media;
pub mod parse;
pub mod pipeline;
pub mod store;
pub mod synth;

pub use annotate::{Annotator, Category, Gazetteer, PostAnnotation};
pub use cluster::{ClusterConfig, ClusterState, Event};
pub use config::{ApiConfig, PipelineParams, Resources};
pub use error::{Error, Result};
pub use geo::Coords;
pub use ingest::{RawPost, SourceSpec, TrackConfig};
pub use media::{MediaIndex, MediaItem};
pub use parse::{Post, Tokenizer};
pub use pipeline::{Pipeline, SharedSnapshot, Snapshot};
pub use store::{FilterQuery, Store};
