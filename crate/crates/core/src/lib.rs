//! Exact channel-group Shapley attributions for dense pixel-wise predictors,
//! and alignment scoring of the resulting group rankings against rule-based
//! reference explanations.
//!
//! The usual flow: load inputs ([`raster`]), partition channels into groups
//! ([`groups`]), attribute a backend's logits to the groups
//! ([`shapley::explain`]), rank groups per pixel, assign reference sets from
//! domain rules ([`rules`]) and score the rankings ([`metrics`]). The
//! [`pipeline`] module does all of it from a manifest file.

pub mod backend;
pub mod formats;
pub mod groups;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod rules;
pub mod selfcheck;
pub mod shapley;
pub mod synth;

pub use backend::{BackendError, Background, PredictionBackend, Provenance};
pub use groups::{ChannelGroup, ChannelGroupSet, GroupError};
pub use raster::{LogitMap, Mask2D, RasterError, TensorChw};
pub use shapley::{explain, AttributionMap, ClassSelection, RankBy};
