//! Record model shared by every stage.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Coarse audio taxonomy. `Unknown` is the pre-classification placeholder.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Speech,
    Music,
    Sfx,
    #[default]
    Unknown,
}

impl Category {
    /// The three concrete categories, in canonical order.
    pub const KNOWN: [Category; 3] = [Category::Speech, Category::Music, Category::Sfx];

    pub fn is_unknown(&self) -> bool {
        matches!(self, Category::Unknown)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Speech => "speech",
            Category::Music => "music",
            Category::Sfx => "sfx",
            Category::Unknown => "unknown",
        }
    }
}

/// One stage's accept/reject decision for a record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub stage: String,
    pub pass: bool,
    pub reason: String,
}

/// Raw and rank-normalized quality dimensions for one record.
///
/// Raw dimensions are on whatever scale their scorer uses; `pct_*` are
/// per-category percentile ranks in (0, 1); `fused` is the weighted mean of
/// the percentiles that are present.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QualityVector {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_only: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_only: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignment: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pct_audio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pct_text: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pct_align: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fused: Option<f64>,
}

fn is_false(b: &bool) -> bool {
    !b
}

/// One audio-caption pair moving through the curation funnel.
///
/// `record_id`, `audio_ref`, `duration_s`, and `caption` are required in
/// manifests; everything else is optional. Keys the schema does not know are
/// preserved verbatim in `extra` (insertion order kept), so stages may pass
/// annotations through without breaking round trips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationRecord {
    pub record_id: String,
    pub audio_ref: String,
    pub duration_s: f64,
    pub caption: String,
    #[serde(default, skip_serializing_if = "Category::is_unknown")]
    pub category: Category,
    #[serde(default, skip_serializing_if = "is_false")]
    pub incomplete_flag: bool,
    #[serde(default, rename = "scores", skip_serializing_if = "Option::is_none")]
    pub quality: Option<QualityVector>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub verdicts: Vec<Verdict>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl CurationRecord {
    pub fn new(
        record_id: impl Into<String>,
        audio_ref: impl Into<String>,
        duration_s: f64,
        caption: impl Into<String>,
    ) -> Self {
        Self {
            record_id: record_id.into(),
            audio_ref: audio_ref.into(),
            duration_s,
            caption: caption.into(),
            category: Category::Unknown,
            incomplete_flag: false,
            quality: None,
            verdicts: Vec::new(),
            extra: Map::new(),
        }
    }

    /// Field-level validity beyond what the deserializer enforces.
    pub fn validate(&self) -> Result<(), String> {
        if self.record_id.is_empty() {
            return Err("record_id is empty".into());
        }
        if !self.duration_s.is_finite() || self.duration_s < 0.0 {
            return Err(format!(
                "duration_s must be finite and >= 0, got {}",
                self.duration_s
            ));
        }
        Ok(())
    }

    pub fn push_verdict(&mut self, stage: &str, pass: bool, reason: impl Into<String>) {
        self.verdicts.push(Verdict {
            stage: stage.to_string(),
            pass,
            reason: reason.into(),
        });
    }

    /// Quality vector, created on first use.
    pub fn quality_mut(&mut self) -> &mut QualityVector {
        self.quality.get_or_insert_with(QualityVector::default)
    }
}
