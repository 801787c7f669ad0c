//! Frame queue with leases, label submission and export.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use artifact_core::dataset::{load_manifest, manifest_dir, save_manifest, DatasetManifest, FrameRecord};
use artifact_core::{LabelVector, NUM_LABELS};
use serde::{Deserialize, Serialize};

use crate::error::{AnnotateError, Result};
use crate::events::{apply_event, replay, validate_event, write_region_masks, AnnotationEvent, EventLog, RegionPolygon};

/// Source of wall-clock milliseconds for leases and event timestamps.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

#[derive(Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
    }
}

/// Clock that only moves when told to.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(start_ms: u64) -> Self {
        ManualClock(AtomicU64::new(start_ms))
    }

    pub fn advance(&self, by: Duration) {
        self.0.fetch_add(by.as_millis() as u64, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

pub const EVENT_LOG_FILE: &str = "annotation_events.jsonl";
pub const SNAPSHOT_FILE: &str = "annotation_snapshot.jsonl";
pub const EXPORT_FILE: &str = "annotated_manifest.jsonl";

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub manifest_path: PathBuf,
    pub event_log: PathBuf,
    pub lease_timeout: Duration,
    /// Write a manifest snapshot after this many events (0 disables).
    pub checkpoint_every: usize,
    pub snapshot_path: PathBuf,
    /// Destination of `export` when no path is given.
    pub export_path: PathBuf,
}

impl ServiceConfig {
    /// Log, snapshot and export files next to the manifest; 5-minute leases.
    pub fn new(manifest_path: impl Into<PathBuf>) -> Self {
        let manifest_path = manifest_path.into();
        let dir = manifest_dir(&manifest_path);
        ServiceConfig {
            event_log: dir.join(EVENT_LOG_FILE),
            snapshot_path: dir.join(SNAPSHOT_FILE),
            export_path: dir.join(EXPORT_FILE),
            manifest_path,
            lease_timeout: Duration::from_secs(300),
            checkpoint_every: 25,
        }
    }
}

#[derive(Clone, Debug)]
struct Lease {
    annotator: String,
    expires_ms: u64,
}

struct State {
    manifest: DatasetManifest,
    leases: HashMap<String, Lease>,
    events: u64,
}

/// Result of asking for work.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum NextFrame {
    Frame {
        frame: FrameRecord,
        image_url: String,
        lease_expires_ms: u64,
    },
    Done,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Submission {
    pub annotator_id: String,
    pub labels: LabelVector,
    #[serde(default)]
    pub human_regions: Vec<RegionPolygon>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub seq: u64,
    pub frame_id: String,
    pub labels: LabelVector,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub total: usize,
    pub labeled: usize,
    pub unlabeled: usize,
    pub leased: usize,
    /// Labeled frames carrying each label, in taxonomy order.
    pub per_label: [usize; NUM_LABELS],
    pub events: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub path: PathBuf,
    pub frames: usize,
    pub labeled: usize,
    pub bytes: usize,
}

pub struct AnnotationService {
    config: ServiceConfig,
    base_dir: PathBuf,
    original: DatasetManifest,
    log: EventLog,
    clock: Arc<dyn Clock>,
    state: Mutex<State>,
}

impl AnnotationService {
    /// Loads the manifest and replays any existing event log over it, so an
    /// interrupted session resumes where it stopped.
    pub fn open(config: ServiceConfig, clock: Arc<dyn Clock>) -> Result<Self> {
        let original = load_manifest(&config.manifest_path)?;
        let log = EventLog::new(&config.event_log);
        let events = log.read()?;
        let manifest = replay(&original, &events)?;
        tracing::info!(frames = manifest.frames.len(), events = events.len(), "annotation service ready");
        Ok(AnnotationService {
            base_dir: manifest_dir(&config.manifest_path),
            state: Mutex::new(State {
                manifest,
                leases: HashMap::new(),
                events: events.len() as u64,
            }),
            config,
            original,
            log,
            clock,
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn original(&self) -> &DatasetManifest {
        &self.original
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn manifest(&self) -> DatasetManifest {
        self.lock().manifest.clone()
    }

    /// The annotator's own live lease if it has one, else the first unlabeled
    /// frame in manifest order that nobody holds.
    pub fn next_frame(&self, annotator_id: &str) -> Result<NextFrame> {
        check_annotator(annotator_id)?;
        let now = self.clock.now_ms();
        let expires_ms = now + self.config.lease_timeout.as_millis() as u64;
        let mut state = self.lock();
        state.leases.retain(|_, l| l.expires_ms > now);
        let State { manifest, leases, .. } = &mut *state;
        let own = manifest
            .frames
            .iter()
            .find(|f| !f.is_labeled() && leases.get(&f.frame_id).is_some_and(|l| l.annotator == annotator_id));
        let free = || manifest.frames.iter().find(|f| !f.is_labeled() && !leases.contains_key(&f.frame_id));
        let Some(frame) = own.or_else(free).cloned() else {
            return Ok(NextFrame::Done);
        };
        leases.insert(
            frame.frame_id.clone(),
            Lease {
                annotator: annotator_id.to_string(),
                expires_ms,
            },
        );
        Ok(NextFrame::Frame {
            image_url: format!("/frames/{}/image", frame.frame_id),
            frame,
            lease_expires_ms: expires_ms,
        })
    }

    /// Logs the submission, then applies it. Accepted when the frame is
    /// unleased or leased to the submitter; re-submission overwrites.
    pub fn submit(&self, frame_id: &str, submission: Submission) -> Result<Ack> {
        check_annotator(&submission.annotator_id)?;
        let now = self.clock.now_ms();
        let mut state = self.lock();
        validate_event(&state.manifest, frame_id, submission.labels, &submission.human_regions)?;
        if let Some(lease) = state.leases.get(frame_id) {
            if lease.expires_ms > now && lease.annotator != submission.annotator_id {
                return Err(AnnotateError::Leased {
                    frame_id: frame_id.to_string(),
                    holder: lease.annotator.clone(),
                });
            }
        }
        let event = AnnotationEvent {
            seq: state.events + 1,
            frame_id: frame_id.to_string(),
            labels: submission.labels,
            annotator_id: submission.annotator_id,
            timestamp_ms: now,
            human_regions: submission.human_regions,
        };
        write_region_masks(&state.manifest, &event, &self.base_dir)?;
        self.log.append(&event)?;
        apply_event(&mut state.manifest, &event)?;
        state.events = event.seq;
        state.leases.remove(frame_id);
        let every = self.config.checkpoint_every as u64;
        if every > 0 && event.seq % every == 0 {
            save_manifest(&state.manifest, &self.config.snapshot_path)?;
        }
        tracing::debug!(seq = event.seq, frame_id, "labels recorded");
        Ok(Ack {
            seq: event.seq,
            frame_id: event.frame_id,
            labels: event.labels,
        })
    }

    pub fn progress(&self) -> Progress {
        let now = self.clock.now_ms();
        let state = self.lock();
        let mut per_label = [0; NUM_LABELS];
        for labels in state.manifest.frames.iter().filter_map(|f| f.labels) {
            for (slot, bit) in per_label.iter_mut().zip(labels.bits()) {
                *slot += bit as usize;
            }
        }
        let total = state.manifest.frames.len();
        let unlabeled = state.manifest.unlabeled_count();
        Progress {
            total,
            labeled: total - unlabeled,
            unlabeled,
            leased: state.leases.values().filter(|l| l.expires_ms > now).count(),
            per_label,
            events: state.events,
        }
    }

    /// Writes the current state in manifest format to `path` (the configured
    /// export path when `None`).
    pub fn export(&self, path: Option<&Path>) -> Result<ExportSummary> {
        let path = path.unwrap_or(&self.config.export_path).to_path_buf();
        let state = self.lock();
        save_manifest(&state.manifest, &path)?;
        Ok(ExportSummary {
            frames: state.manifest.frames.len(),
            labeled: state.manifest.labeled().count(),
            bytes: state.manifest.to_jsonl().len(),
            path,
        })
    }

    pub fn image_path(&self, frame_id: &str) -> Result<PathBuf> {
        let state = self.lock();
        let frame = state
            .manifest
            .frame(frame_id)
            .ok_or_else(|| AnnotateError::UnknownFrame(frame_id.to_string()))?;
        Ok(self.base_dir.join(&frame.image_path))
    }
}

fn check_annotator(id: &str) -> Result<()> {
    if id.trim().is_empty() {
        return Err(AnnotateError::Validation("annotator id must not be empty".into()));
    }
    Ok(())
}

/// Replays the log at `log_path` over the manifest at `manifest_path` and
/// writes the result to `out`, as a fresh process recovering from the log
/// alone would.
pub fn replay_to_file(manifest_path: &Path, log_path: &Path, out: &Path) -> Result<DatasetManifest> {
    let original = load_manifest(manifest_path)?;
    let events = crate::events::read_events(log_path)?;
    let manifest = replay(&original, &events)?;
    save_manifest(&manifest, out)?;
    Ok(manifest)
}
