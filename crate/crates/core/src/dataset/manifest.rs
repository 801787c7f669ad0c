use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::labels::{ArtifactLabel, LabelVector, TAXONOMY_VERSION};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Subset {
    Train,
    Val,
}

impl std::str::FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Subset::Train),
            "val" => Ok(Subset::Val),
            other => Err(Error::Parameter(format!("unknown split {other:?} (train|val)"))),
        }
    }
}

/// Reference from a frame to a binary region mask stored next to the manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionRef {
    pub label: usize,
    pub mask_path: String,
}

impl RegionRef {
    pub fn artifact(&self) -> Result<ArtifactLabel> {
        ArtifactLabel::from_index(self.label)
    }
}

/// One extracted still plus its provenance and annotation state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub frame_id: String,
    pub source_video_id: String,
    pub timestamp_s: f64,
    /// Relative to the directory holding the manifest.
    pub image_path: String,
    /// `None` means the frame has not been reviewed yet.
    pub labels: Option<LabelVector>,
    pub annotator_id: Option<String>,
    #[serde(default)]
    pub human_regions: Vec<RegionRef>,
}

impl FrameRecord {
    pub fn is_labeled(&self) -> bool {
        self.labels.is_some()
    }

    pub fn region_for(&self, label: ArtifactLabel) -> Option<&RegionRef> {
        self.human_regions.iter().find(|r| r.label == label.index())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitInfo {
    pub seed: u64,
    pub train_fraction: f64,
    pub assignment: BTreeMap<String, Subset>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub manifest_version: u32,
    pub taxonomy_version: String,
    /// Declared `[width, height]` of every frame image, when known.
    pub resolution: Option<[u32; 2]>,
    pub frames: Vec<FrameRecord>,
    pub split: Option<SplitInfo>,
}

impl Default for DatasetManifest {
    fn default() -> Self {
        Self::new(Vec::new())
    }
}

impl DatasetManifest {
    pub fn new(frames: Vec<FrameRecord>) -> Self {
        DatasetManifest {
            manifest_version: MANIFEST_VERSION,
            taxonomy_version: TAXONOMY_VERSION.to_string(),
            resolution: None,
            frames,
            split: None,
        }
    }

    pub fn with_resolution(mut self, width: u32, height: u32) -> Self {
        self.resolution = Some([width, height]);
        self
    }

    pub fn split_seed(&self) -> Option<u64> {
        self.split.as_ref().map(|s| s.seed)
    }

    pub fn split_assignment(&self) -> Option<&BTreeMap<String, Subset>> {
        self.split.as_ref().map(|s| &s.assignment)
    }

    pub fn labeled(&self) -> impl Iterator<Item = &FrameRecord> {
        self.frames.iter().filter(|f| f.is_labeled())
    }

    pub fn unlabeled_count(&self) -> usize {
        self.frames.iter().filter(|f| !f.is_labeled()).count()
    }

    pub fn frame(&self, frame_id: &str) -> Option<&FrameRecord> {
        self.frames.iter().find(|f| f.frame_id == frame_id)
    }

    pub fn frame_mut(&mut self, frame_id: &str) -> Option<&mut FrameRecord> {
        self.frames.iter_mut().find(|f| f.frame_id == frame_id)
    }

    /// Labeled frames assigned to `subset`, in manifest order.
    pub fn subset(&self, subset: Subset) -> Result<Vec<&FrameRecord>> {
        let split = self
            .split
            .as_ref()
            .ok_or_else(|| Error::Split("manifest has no train/val split".into()))?;
        Ok(self
            .labeled()
            .filter(|f| split.assignment.get(&f.frame_id) == Some(&subset))
            .collect())
    }

    /// Appends frames, rejecting duplicate ids. Any existing split is dropped
    /// because it no longer covers the labeled set.
    pub fn extend(&mut self, frames: Vec<FrameRecord>) -> Result<()> {
        self.frames.extend(frames);
        self.split = None;
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        let mut last_ts: HashMap<&str, f64> = HashMap::new();
        for frame in &self.frames {
            if !ids.insert(frame.frame_id.as_str()) {
                return Err(Error::Manifest(format!("duplicate frame_id {:?}", frame.frame_id)));
            }
            if !(frame.timestamp_s >= 0.0) || !frame.timestamp_s.is_finite() {
                return Err(Error::Manifest(format!(
                    "frame {:?}: timestamp_s must be finite and nonnegative",
                    frame.frame_id
                )));
            }
            if let Some(prev) = last_ts.insert(&frame.source_video_id, frame.timestamp_s) {
                if frame.timestamp_s <= prev {
                    return Err(Error::Manifest(format!(
                        "frame {:?}: timestamps of video {:?} must be strictly increasing",
                        frame.frame_id, frame.source_video_id
                    )));
                }
            }
            let mut seen = HashSet::new();
            for region in &frame.human_regions {
                let label = region.artifact().map_err(|e| {
                    Error::Manifest(format!("frame {:?}: {e}", frame.frame_id))
                })?;
                if !seen.insert(label) {
                    return Err(Error::Manifest(format!(
                        "frame {:?}: more than one region for {label}",
                        frame.frame_id
                    )));
                }
                if !frame.labels.is_some_and(|l| l.get(label)) {
                    return Err(Error::Manifest(format!(
                        "frame {:?}: region for {label} but the label is not asserted",
                        frame.frame_id
                    )));
                }
            }
        }
        if let Some(split) = &self.split {
            let labeled: HashSet<&str> = self.labeled().map(|f| f.frame_id.as_str()).collect();
            let assigned: HashSet<&str> = split.assignment.keys().map(String::as_str).collect();
            if labeled != assigned {
                return Err(Error::Manifest(
                    "split assignment must cover exactly the labeled frames".into(),
                ));
            }
        }
        Ok(())
    }

    /// Paths of frame images resolved against the manifest directory, checked
    /// for existence and declared resolution.
    pub fn verify_images(&self, base_dir: &Path) -> Result<()> {
        for frame in &self.frames {
            let path = base_dir.join(&frame.image_path);
            let (w, h) = image::image_dimensions(&path).map_err(|e| Error::image(&path, e))?;
            if let Some([rw, rh]) = self.resolution {
                if (w, h) != (rw, rh) {
                    return Err(Error::Manifest(format!(
                        "{}: {w}x{h} does not match declared {rw}x{rh}",
                        path.display()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Serialized form: a header line followed by one JSON object per frame.
    pub fn to_jsonl(&self) -> String {
        let header = HeaderLine {
            record: "header",
            manifest_version: self.manifest_version,
            taxonomy_version: &self.taxonomy_version,
            resolution: self.resolution,
            split: self.split.as_ref().map(|s| SplitMeta {
                seed: s.seed,
                train_fraction: s.train_fraction,
            }),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for frame in &self.frames {
            let line = FrameLine {
                record: "frame",
                frame: frame.clone(),
                split: self
                    .split
                    .as_ref()
                    .and_then(|s| s.assignment.get(&frame.frame_id).copied()),
            };
            out.push_str(&serde_json::to_string(&line).expect("frame serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| Error::ManifestLoad {
            line: 1,
            reason: "empty manifest file".into(),
        })?;
        let header = parse_header(first, 1)?;
        if header.manifest_version != MANIFEST_VERSION {
            return Err(Error::ManifestLoad {
                line: 1,
                reason: format!(
                    "manifest_version {} is not supported (expected {MANIFEST_VERSION})",
                    header.manifest_version
                ),
            });
        }

        let mut frames = Vec::new();
        let mut assignment = BTreeMap::new();
        for (idx, line) in lines {
            let line_no = idx + 1;
            let (frame, split) = parse_frame(line, line_no)?;
            if let Some(subset) = split {
                if header.split.is_none() {
                    return Err(Error::ManifestLoad {
                        line: line_no,
                        reason: "frame carries a split but the header declares none".into(),
                    });
                }
                assignment.insert(frame.frame_id.clone(), subset);
            }
            frames.push(frame);
        }

        let manifest = DatasetManifest {
            manifest_version: header.manifest_version,
            taxonomy_version: header.taxonomy_version,
            resolution: header.resolution,
            frames,
            split: header.split.map(|m| SplitInfo {
                seed: m.seed,
                train_fraction: m.train_fraction,
                assignment,
            }),
        };
        manifest.validate()?;
        Ok(manifest)
    }
}

pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    manifest.validate()?;
    write_atomic(path, manifest.to_jsonl().as_bytes())
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    DatasetManifest::from_jsonl(&text)
}

/// Directory that manifest-relative paths resolve against.
pub fn manifest_dir(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct SplitMeta {
    seed: u64,
    train_fraction: f64,
}

#[derive(Serialize)]
struct HeaderLine<'a> {
    record: &'static str,
    manifest_version: u32,
    taxonomy_version: &'a str,
    resolution: Option<[u32; 2]>,
    split: Option<SplitMeta>,
}

#[derive(Serialize)]
struct FrameLine {
    record: &'static str,
    #[serde(flatten)]
    frame: FrameRecord,
    split: Option<Subset>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ParsedSplitMeta {
    seed: u64,
    train_fraction: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ParsedHeader {
    manifest_version: u32,
    taxonomy_version: String,
    resolution: Option<[u32; 2]>,
    split: Option<ParsedSplitMeta>,
}

fn record_object(line: &str, kind: &str, line_no: usize) -> Result<serde_json::Map<String, Value>> {
    let value: Value = serde_json::from_str(line).map_err(|e| load_err(line_no, e))?;
    let Value::Object(mut obj) = value else {
        return Err(load_err(line_no, "record is not a JSON object"));
    };
    match obj.remove("record") {
        Some(Value::String(k)) if k == kind => Ok(obj),
        Some(other) => Err(load_err(line_no, format!("expected a {kind} record, found {other}"))),
        None => Err(load_err(line_no, "missing \"record\" field")),
    }
}

fn parse_header(line: &str, line_no: usize) -> Result<ParsedHeader> {
    let obj = record_object(line, "header", line_no)?;
    serde_json::from_value(Value::Object(obj)).map_err(|e| load_err(line_no, e))
}

fn parse_frame(line: &str, line_no: usize) -> Result<(FrameRecord, Option<Subset>)> {
    let mut obj = record_object(line, "frame", line_no)?;
    let split = match obj.remove("split") {
        None | Some(Value::Null) => None,
        Some(v) => Some(serde_json::from_value(v).map_err(|e| load_err(line_no, e))?),
    };
    let frame = serde_json::from_value(Value::Object(obj)).map_err(|e| load_err(line_no, e))?;
    Ok((frame, split))
}

fn load_err(line: usize, reason: impl ToString) -> Error {
    Error::ManifestLoad {
        line,
        reason: reason.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(id: &str, video: &str, t: f64, labels: Option<[u8; 4]>) -> FrameRecord {
        FrameRecord {
            frame_id: id.into(),
            source_video_id: video.into(),
            timestamp_s: t,
            image_path: format!("{id}.png"),
            labels: labels.map(|b| LabelVector::from_bits(b).unwrap()),
            annotator_id: None,
            human_regions: Vec::new(),
        }
    }

    #[test]
    fn unlabeled_survives_round_trip() {
        let m = DatasetManifest::new(vec![
            frame("a", "v", 0.0, None),
            frame("b", "v", 0.5, Some([0, 0, 0, 0])),
        ]);
        let back = DatasetManifest::from_jsonl(&m.to_jsonl()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.frames[0].labels, None);
        assert_eq!(back.frames[1].labels, Some(LabelVector::EMPTY));
    }

    #[test]
    fn unknown_label_key_is_named() {
        let text = concat!(
            r#"{"record":"header","manifest_version":1,"taxonomy_version":"artifact-taxonomy/1","resolution":null,"split":null}"#,
            "\n",
            r#"{"record":"frame","frame_id":"a","source_video_id":"v","timestamp_s":0.0,"image_path":"a.png","labels":{"l1_boundary_edge":1,"l2_texture_noise":0,"l3_movement_joint":0,"l4_object_mismatch":0,"l9_sparkle":1},"annotator_id":null,"human_regions":[],"split":null}"#,
        );
        match DatasetManifest::from_jsonl(text).unwrap_err() {
            Error::ManifestLoad { line, reason } => {
                assert_eq!(line, 2);
                assert!(reason.contains("l9_sparkle"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let text = r#"{"record":"header","manifest_version":7,"taxonomy_version":"x","resolution":null,"split":null}"#;
        assert!(matches!(
            DatasetManifest::from_jsonl(text),
            Err(Error::ManifestLoad { line: 1, .. })
        ));
    }

    #[test]
    fn unknown_frame_field_is_rejected() {
        let mut text = DatasetManifest::new(vec![frame("a", "v", 0.0, None)]).to_jsonl();
        text = text.replace("\"annotator_id\"", "\"extra\":1,\"annotator_id\"");
        let err = DatasetManifest::from_jsonl(&text).unwrap_err().to_string();
        assert!(err.contains("extra"), "{err}");
    }

    #[test]
    fn duplicate_ids_and_time_order() {
        let dup = DatasetManifest::new(vec![frame("a", "v", 0.0, None), frame("a", "w", 0.0, None)]);
        assert!(dup.validate().is_err());
        let backwards =
            DatasetManifest::new(vec![frame("a", "v", 1.0, None), frame("b", "v", 0.5, None)]);
        assert!(backwards.validate().is_err());
        let other_video =
            DatasetManifest::new(vec![frame("a", "v", 1.0, None), frame("b", "w", 0.5, None)]);
        assert!(other_video.validate().is_ok());
    }

    #[test]
    fn region_requires_asserted_label() {
        let mut f = frame("a", "v", 0.0, Some([1, 0, 0, 0]));
        f.human_regions.push(RegionRef {
            label: 2,
            mask_path: "m.png".into(),
        });
        assert!(DatasetManifest::new(vec![f]).validate().is_err());
    }
}
