//! Geo-context analytics over driving-model prediction records.
//!
//! Frame-level predictions from several driving models are matched to
//! streets and zipcode regions, stored as documents, indexed on a uniform
//! grid and queried with AND/OR trees over spatial and performance
//! conditions.

pub mod analytics;
pub mod cancel;
pub mod config;
pub mod dataset;
pub mod doc;
pub mod geo;
pub mod index;
pub mod ingest;
pub mod metrics;
pub mod store;
pub mod synth;
pub mod types;

pub use cancel::CancelToken;
pub use config::Config;
pub use dataset::{Dataset, Selection};
pub use doc::{FrameDoc, FrameRef, Trip, TripAggregate};
pub use geo::{BBox, LatLon, Region, StreetSegment};
pub use index::{FrameId, GridIndex, Predicate, QueryExpr};
pub use store::{DatasetManifest, Store};
pub use types::{ActionId, ModelId, ScoreVector, SpatialConditions, StreetScene, TimeOfDay, Weather};
