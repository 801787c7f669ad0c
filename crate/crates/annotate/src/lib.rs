//! Event-sourced annotation service: leases unlabeled frames to annotators,
//! records label submissions in an append-only log and exports the labeled
//! manifest.

pub mod error;
pub mod events;
pub mod http;
pub mod service;

pub use error::{AnnotateError, Result};
pub use events::{apply_event, read_events, replay, AnnotationEvent, EventLog, RegionPolygon};
pub use http::{router, serve, spawn, ExportRequest};
pub use service::{
    replay_to_file, Ack, AnnotationService, Clock, ExportSummary, ManualClock, NextFrame, Progress, ServiceConfig,
    Submission, SystemClock,
};
