use std::fmt::Write as _;

use serde::Serialize;

use super::manifest::DatasetManifest;
use crate::error::{Error, Result};
use crate::labels::{ArtifactLabel, NUM_LABELS};

/// How percentages are rendered to one decimal place.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PercentRounding {
    /// Drop digits after the first decimal (134/300 → 44.6).
    #[default]
    Truncate,
    /// Round half up (134/300 → 44.7).
    HalfUp,
}

impl std::str::FromStr for PercentRounding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "truncate" => Ok(PercentRounding::Truncate),
            "half_up" | "half-up" => Ok(PercentRounding::HalfUp),
            other => Err(Error::Parameter(format!(
                "unknown rounding mode {other:?} (truncate|half_up)"
            ))),
        }
    }
}

impl PercentRounding {
    /// Percentage of `count / total` in tenths of a percent, computed in integers.
    pub fn tenths(self, count: u64, total: u64) -> u64 {
        match self {
            PercentRounding::Truncate => 1000 * count / total,
            PercentRounding::HalfUp => (2000 * count + total) / (2 * total),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrequencyTable {
    pub per_label_count: [u64; NUM_LABELS],
    pub total_frames: u64,
    pub per_label_percent: [f64; NUM_LABELS],
    pub rounding: PercentRounding,
}

impl FrequencyTable {
    pub fn from_counts(per_label_count: [u64; NUM_LABELS], total_frames: u64, rounding: PercentRounding) -> Result<Self> {
        if total_frames == 0 {
            return Err(Error::Statistics("no labeled frames to count".into()));
        }
        if let Some(c) = per_label_count.iter().find(|&&c| c > total_frames) {
            return Err(Error::Statistics(format!("count {c} exceeds total {total_frames}")));
        }
        let per_label_percent =
            per_label_count.map(|c| rounding.tenths(c, total_frames) as f64 / 10.0);
        Ok(FrequencyTable {
            per_label_count,
            total_frames,
            per_label_percent,
            rounding,
        })
    }

    /// Human-readable table mirroring the usual "Category | Count | %" layout.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<42} | {:>5} | {:>5}", "Category", "Count", "%");
        let _ = writeln!(out, "{:-<42}-+-{:->5}-+-{:->5}", "", "", "");
        for label in ArtifactLabel::ALL {
            let i = label.position();
            let _ = writeln!(
                out,
                "{:<42} | {:>5} | {:>5.1}",
                format!("{label}: {}", label.title()),
                self.per_label_count[i],
                self.per_label_percent[i]
            );
        }
        let _ = writeln!(out, "(n = {} labeled frames, {:?} rounding)", self.total_frames, self.rounding);
        out
    }

    /// Machine-readable record carrying the exact fractions behind every percentage.
    pub fn to_record(&self) -> serde_json::Value {
        let labels: Vec<_> = ArtifactLabel::ALL
            .iter()
            .map(|label| {
                let i = label.position();
                serde_json::json!({
                    "label": label.key(),
                    "count": self.per_label_count[i],
                    "fraction": format!("{}/{}", self.per_label_count[i], self.total_frames),
                    "exact_percent": 100.0 * self.per_label_count[i] as f64 / self.total_frames as f64,
                    "percent": self.per_label_percent[i],
                })
            })
            .collect();
        serde_json::json!({
            "total_frames": self.total_frames,
            "rounding": self.rounding,
            "labels": labels,
        })
    }
}

/// Per-label artifact counts over the labeled frames of `manifest`. Frames may
/// carry several labels, so the percentages need not sum to 100.
pub fn label_frequency(manifest: &DatasetManifest, rounding: PercentRounding) -> Result<FrequencyTable> {
    let mut counts = [0u64; NUM_LABELS];
    let mut total = 0u64;
    for labels in manifest.labeled().filter_map(|f| f.labels) {
        total += 1;
        for (c, bit) in counts.iter_mut().zip(labels.bits()) {
            *c += u64::from(bit);
        }
    }
    if total == 0 {
        return Err(Error::Statistics("manifest has no labeled frames".into()));
    }
    FrequencyTable::from_counts(counts, total, rounding)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::manifest::FrameRecord;
    use crate::labels::LabelVector;

    fn manifest_from(labels: &[[u8; 4]]) -> DatasetManifest {
        DatasetManifest::new(
            labels
                .iter()
                .enumerate()
                .map(|(i, b)| FrameRecord {
                    frame_id: format!("f{i}"),
                    source_video_id: "v".into(),
                    timestamp_s: i as f64,
                    image_path: format!("f{i}.png"),
                    labels: Some(LabelVector::from_bits(*b).unwrap()),
                    annotator_id: None,
                    human_regions: vec![],
                })
                .collect(),
        )
    }

    #[test]
    fn three_frame_hand_count() {
        let m = manifest_from(&[[1, 0, 0, 0], [1, 1, 0, 0], [0, 0, 0, 0]]);
        let t = label_frequency(&m, PercentRounding::Truncate).unwrap();
        assert_eq!(t.per_label_count, [2, 1, 0, 0]);
        assert_eq!(t.per_label_percent, [66.6, 33.3, 0.0, 0.0]);
        let h = label_frequency(&m, PercentRounding::HalfUp).unwrap();
        assert_eq!(h.per_label_percent, [66.7, 33.3, 0.0, 0.0]);
    }

    #[test]
    fn all_clean_frames() {
        let m = manifest_from(&[[0, 0, 0, 0]; 5]);
        let t = label_frequency(&m, PercentRounding::Truncate).unwrap();
        assert_eq!(t.per_label_count, [0; 4]);
        assert_eq!(t.per_label_percent, [0.0; 4]);
    }

    #[test]
    fn empty_manifest_is_an_error() {
        assert!(matches!(
            label_frequency(&DatasetManifest::default(), PercentRounding::Truncate),
            Err(Error::Statistics(_))
        ));
    }

    #[test]
    fn object_mismatch_row() {
        let t = FrequencyTable::from_counts([0, 0, 0, 241], 300, PercentRounding::Truncate).unwrap();
        assert_eq!(t.per_label_percent[3], 80.3);
    }
}
