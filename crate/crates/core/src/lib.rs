//! Curation of self-supervised hand-pose pseudo-labels.
//!
//! Candidate hand detections and 21-keypoint poses are filtered per frame
//! (confidence, anatomy, box area, hand count) and across frames (velocity
//! limits, gap interpolation), then emitted as retraining datasets. An
//! orchestrator drives external detector and pose-estimator commands through
//! repeated inference / curation / retraining rounds.

mod error;

pub mod config;
pub mod dataset;
pub mod io;
pub mod metrics;
pub mod orchestrator;
pub mod pipeline;
pub mod pose;
pub mod spatial;
pub mod synth;
pub mod temporal;

pub use config::{parse_config, FilterConfig, LoopConfig, ModelAdapter, PipelineConfig};
pub use error::{Error, Result};
pub use pipeline::{curate, FilterMode};
pub use pose::{BBox, Detection, FrameCandidates, HandPose, Keypoint};
pub use spatial::{spatial_filter, RejectionReason, RejectionRecord, SpatialResult};
pub use temporal::{temporal_filter, TemporalResult};
