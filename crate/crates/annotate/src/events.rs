//! Annotation events, the append-only log that stores them and the replay
//! that rebuilds manifest state from the log.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use artifact_core::dataset::{DatasetManifest, RegionRef};
use artifact_core::synthetic::RegionMask;
use artifact_core::{ArtifactLabel, LabelVector};
use serde::{Deserialize, Serialize};

use crate::error::{AnnotateError, Result};

/// Directory, relative to the manifest, holding rasterized human regions.
pub const REGION_DIR: &str = "regions";

/// A human-drawn region for one asserted label, as a closed polygon in
/// pixel coordinates of the frame image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionPolygon {
    pub label: usize,
    pub points: Vec<[f64; 2]>,
}

impl RegionPolygon {
    /// Pixels whose centers lie inside the polygon (even-odd rule).
    pub fn rasterize(&self, width: u32, height: u32) -> Result<RegionMask> {
        let label = ArtifactLabel::from_index(self.label).map_err(|e| AnnotateError::Validation(e.to_string()))?;
        let pts = &self.points;
        Ok(RegionMask::from_fn(width, height, label, |x, y| {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut inside = false;
            let mut j = pts.len() - 1;
            for i in 0..pts.len() {
                let ([xi, yi], [xj, yj]) = (pts[i], pts[j]);
                if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
                    inside = !inside;
                }
                j = i;
            }
            inside
        }))
    }
}

/// One label submission. The log of these is the authoritative record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationEvent {
    /// 1-based position in the log.
    pub seq: u64,
    pub frame_id: String,
    pub labels: LabelVector,
    pub annotator_id: String,
    /// Milliseconds since the Unix epoch.
    pub timestamp_ms: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub human_regions: Vec<RegionPolygon>,
}

/// Checks an event against the manifest: the frame exists, every region
/// polygon has at least three finite points and names a distinct asserted
/// label.
pub fn validate_event(manifest: &DatasetManifest, frame_id: &str, labels: LabelVector, regions: &[RegionPolygon]) -> Result<()> {
    if manifest.frame(frame_id).is_none() {
        return Err(AnnotateError::UnknownFrame(frame_id.to_string()));
    }
    let mut seen = Vec::new();
    for region in regions {
        let label = ArtifactLabel::from_index(region.label).map_err(|e| AnnotateError::Validation(e.to_string()))?;
        if !labels.get(label) {
            return Err(AnnotateError::Validation(format!("region for {label} but the label is not asserted")));
        }
        if seen.contains(&label) {
            return Err(AnnotateError::Validation(format!("more than one region for {label}")));
        }
        seen.push(label);
        if region.points.len() < 3 || region.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(AnnotateError::Validation(format!(
                "region for {label} needs at least three finite points"
            )));
        }
    }
    Ok(())
}

pub fn region_path(frame_id: &str, label: usize) -> String {
    format!("{REGION_DIR}/{frame_id}_l{label}.png")
}

/// Frame dimensions: the manifest's declared resolution, else the image header.
pub fn frame_dimensions(manifest: &DatasetManifest, frame_id: &str, base_dir: &Path) -> Result<(u32, u32)> {
    if let Some([w, h]) = manifest.resolution {
        return Ok((w, h));
    }
    let frame = manifest
        .frame(frame_id)
        .ok_or_else(|| AnnotateError::UnknownFrame(frame_id.to_string()))?;
    let path = base_dir.join(&frame.image_path);
    image::image_dimensions(&path).map_err(|e| artifact_core::Error::image(&path, e).into())
}

/// Applies one event: last write wins for labels, annotator and regions. A
/// stored split no longer covers the labeled set once labels change, so it
/// is dropped.
pub fn apply_event(manifest: &mut DatasetManifest, event: &AnnotationEvent) -> Result<()> {
    validate_event(manifest, &event.frame_id, event.labels, &event.human_regions)?;
    manifest.split = None;
    let frame = manifest.frame_mut(&event.frame_id).expect("validated");
    frame.labels = Some(event.labels);
    frame.annotator_id = Some(event.annotator_id.clone());
    let mut regions: Vec<RegionRef> = event
        .human_regions
        .iter()
        .map(|r| RegionRef {
            label: r.label,
            mask_path: region_path(&event.frame_id, r.label),
        })
        .collect();
    regions.sort_by_key(|r| r.label);
    frame.human_regions = regions;
    Ok(())
}

/// Writes the rasterized masks of an event's regions under `base_dir`.
pub fn write_region_masks(manifest: &DatasetManifest, event: &AnnotationEvent, base_dir: &Path) -> Result<()> {
    if event.human_regions.is_empty() {
        return Ok(());
    }
    let (w, h) = frame_dimensions(manifest, &event.frame_id, base_dir)?;
    let dir = base_dir.join(REGION_DIR);
    fs::create_dir_all(&dir).map_err(|e| AnnotateError::io(&dir, e))?;
    for region in &event.human_regions {
        region
            .rasterize(w, h)?
            .save(&base_dir.join(region_path(&event.frame_id, region.label)))?;
    }
    Ok(())
}

/// Replays `events` in order over `manifest`.
pub fn replay(manifest: &DatasetManifest, events: &[AnnotationEvent]) -> Result<DatasetManifest> {
    let mut out = manifest.clone();
    for event in events {
        apply_event(&mut out, event)?;
    }
    Ok(out)
}

/// Append-only JSON Lines file of events, one per line, flushed to disk on
/// every append.
#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
}

impl EventLog {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        EventLog { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, event: &AnnotationEvent) -> Result<()> {
        if let Some(parent) = self.path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| AnnotateError::io(parent, e))?;
        }
        let mut line = serde_json::to_string(event).expect("event serializes");
        line.push('\n');
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| AnnotateError::io(&self.path, e))?;
        file.write_all(line.as_bytes()).map_err(|e| AnnotateError::io(&self.path, e))?;
        file.sync_data().map_err(|e| AnnotateError::io(&self.path, e))
    }

    /// All events in the log; a missing file is an empty log.
    pub fn read(&self) -> Result<Vec<AnnotationEvent>> {
        read_events(&self.path)
    }
}

pub fn read_events(path: &Path) -> Result<Vec<AnnotationEvent>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(AnnotateError::io(path, e)),
    };
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |reason: String| AnnotateError::Log {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let event: AnnotationEvent = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        if event.seq != events.len() as u64 + 1 {
            return Err(bad(format!("sequence number {} out of order", event.seq)));
        }
        events.push(event);
    }
    Ok(events)
}
