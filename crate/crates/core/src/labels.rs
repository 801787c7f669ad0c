//! The four-category visual artifact taxonomy and the per-frame label vector.

use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const NUM_LABELS: usize = 4;

/// Version tag carried by manifests, checkpoints and reports. A model trained
/// under one taxonomy must never be evaluated against labels of another.
pub const TAXONOMY_VERSION: &str = "artifact-taxonomy/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ArtifactLabel {
    BoundaryEdge,
    TextureNoise,
    MovementJoint,
    ObjectMismatch,
}

impl ArtifactLabel {
    pub const ALL: [ArtifactLabel; NUM_LABELS] = [
        ArtifactLabel::BoundaryEdge,
        ArtifactLabel::TextureNoise,
        ArtifactLabel::MovementJoint,
        ArtifactLabel::ObjectMismatch,
    ];

    /// Label from its 1-based index (L1..L4).
    pub fn from_index(index: usize) -> Result<Self> {
        index
            .checked_sub(1)
            .and_then(|i| Self::ALL.get(i).copied())
            .ok_or_else(|| Error::Contract(format!("label index {index} outside 1..=4")))
    }

    /// 1-based index.
    pub fn index(self) -> usize {
        self.position() + 1
    }

    /// 0-based position inside a [`LabelVector`].
    pub fn position(self) -> usize {
        match self {
            ArtifactLabel::BoundaryEdge => 0,
            ArtifactLabel::TextureNoise => 1,
            ArtifactLabel::MovementJoint => 2,
            ArtifactLabel::ObjectMismatch => 3,
        }
    }

    /// Field name used in manifests and wire payloads.
    pub fn key(self) -> &'static str {
        match self {
            ArtifactLabel::BoundaryEdge => "l1_boundary_edge",
            ArtifactLabel::TextureNoise => "l2_texture_noise",
            ArtifactLabel::MovementJoint => "l3_movement_joint",
            ArtifactLabel::ObjectMismatch => "l4_object_mismatch",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            ArtifactLabel::BoundaryEdge => "Boundary / Edge Defects",
            ArtifactLabel::TextureNoise => "Texture / Noise Issues",
            ArtifactLabel::MovementJoint => "Movement / Joint Anomalies",
            ArtifactLabel::ObjectMismatch => "Object Mismatches / Disappearances",
        }
    }

    /// Annotator-facing definition of the category.
    pub fn definition(self) -> &'static str {
        match self {
            ArtifactLabel::BoundaryEdge => {
                "Blurred or jagged edges between a foreground object and the background."
            }
            ArtifactLabel::TextureNoise => {
                "Patches of texture that are unnaturally flat or unnaturally noisy."
            }
            ArtifactLabel::MovementJoint => {
                "Limbs bent the wrong way or body poses that cannot occur."
            }
            ArtifactLabel::ObjectMismatch => {
                "Objects or body parts that vanish, duplicate or change appearance."
            }
        }
    }
}

impl fmt::Display for ArtifactLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", self.index())
    }
}

/// Presence bits for the four artifact categories. The all-zero vector is a
/// reviewed, artifact-free frame; "not yet reviewed" is modelled as
/// `Option::<LabelVector>::None` by the callers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabelVector([bool; NUM_LABELS]);

impl LabelVector {
    pub const EMPTY: LabelVector = LabelVector([false; NUM_LABELS]);
    pub const ALL: LabelVector = LabelVector([true; NUM_LABELS]);

    pub fn new(bits: [bool; NUM_LABELS]) -> Self {
        LabelVector(bits)
    }

    /// Strict constructor from integer bits; anything other than 0 or 1 is rejected.
    pub fn from_bits(bits: [u8; NUM_LABELS]) -> Result<Self> {
        let mut out = [false; NUM_LABELS];
        for (i, &b) in bits.iter().enumerate() {
            out[i] = match b {
                0 => false,
                1 => true,
                other => {
                    return Err(Error::Contract(format!(
                        "{} must be 0 or 1, got {other}",
                        ArtifactLabel::ALL[i].key()
                    )))
                }
            };
        }
        Ok(LabelVector(out))
    }

    pub fn from_labels(labels: impl IntoIterator<Item = ArtifactLabel>) -> Self {
        let mut v = Self::EMPTY;
        for label in labels {
            v.set(label, true);
        }
        v
    }

    pub fn bits(&self) -> [bool; NUM_LABELS] {
        self.0
    }

    pub fn as_u8(&self) -> [u8; NUM_LABELS] {
        self.0.map(u8::from)
    }

    pub fn as_f32(&self) -> [f32; NUM_LABELS] {
        self.0.map(|b| if b { 1.0 } else { 0.0 })
    }

    pub fn get(&self, label: ArtifactLabel) -> bool {
        self.0[label.position()]
    }

    pub fn set(&mut self, label: ArtifactLabel, present: bool) {
        self.0[label.position()] = present;
    }

    pub fn is_clean(&self) -> bool {
        self.0.iter().all(|b| !b)
    }

    pub fn present(&self) -> impl Iterator<Item = ArtifactLabel> + '_ {
        ArtifactLabel::ALL.into_iter().filter(|l| self.get(*l))
    }
}

impl fmt::Display for LabelVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d] = self.as_u8();
        write!(f, "({a},{b},{c},{d})")
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireLabels {
    l1_boundary_edge: u8,
    l2_texture_noise: u8,
    l3_movement_joint: u8,
    l4_object_mismatch: u8,
}

impl Serialize for LabelVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let [l1, l2, l3, l4] = self.as_u8();
        WireLabels {
            l1_boundary_edge: l1,
            l2_texture_noise: l2,
            l3_movement_joint: l3,
            l4_object_mismatch: l4,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for LabelVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let w = WireLabels::deserialize(deserializer)?;
        LabelVector::from_bits([
            w.l1_boundary_edge,
            w.l2_texture_noise,
            w.l3_movement_joint,
            w.l4_object_mismatch,
        ])
        .map_err(D::Error::custom)
    }
}
