//! Instruction-sample synthesis from curated audio-caption pairs.
//!
//! Each pair seeds two families of training samples. Understanding samples
//! ask about sampled audio attributes and answer from the caption, laid out
//! as `audio, user_request, rich_caption, cot, answer`. Generation samples
//! invert the direction — a persona asks for audio and the caption becomes
//! the plan — laid out as `user_request, cot, rich_caption, audio`. A judge
//! scores every finished sample on five dimensions; only samples with a mean
//! strictly above the retention threshold survive.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::judge::{JudgeClient, SftJudgeScores};
use crate::record::CurationRecord;
use crate::seed::SeedContext;

/// Retention keeps samples whose mean judge score strictly exceeds this.
pub const RETENTION_MEAN: f64 = 3.0;

pub const UNDERSTANDING_FIELDS: [&str; 5] =
    ["audio", "user_request", "rich_caption", "cot", "answer"];
pub const GENERATION_FIELDS: [&str; 4] = ["user_request", "cot", "rich_caption", "audio"];

#[derive(Debug, Error, PartialEq)]
pub enum SftError {
    #[error("attribute pool is empty")]
    EmptyAttributes,
    #[error("persona pool is empty")]
    EmptyPersonas,
    #[error("probability {0} outside [0, 1]")]
    BadProbability(f64),
    #[error("requests_per_pair must be at least 1")]
    ZeroRequests,
    #[error("record {0} has no caption")]
    MissingCaption(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SftKind {
    Understanding,
    Generation,
}

/// One synthesized training sample. `sequence` holds `(field, text)` pairs
/// in the exact order they concatenate into a training example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftSample {
    pub kind: SftKind,
    pub source_record_id: String,
    /// How this sample was prompted (attributes or persona drawn).
    pub strategy: String,
    pub sequence: Vec<(String, String)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub judge: Option<SftJudgeScores>,
}

impl SftSample {
    pub fn field(&self, name: &str) -> Option<&str> {
        self.sequence
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    }

    /// Text handed to the judge: the sequence flattened in template order.
    pub fn render(&self) -> String {
        self.sequence
            .iter()
            .map(|(k, v)| format!("{k}: {v}"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Prompt-diversity knobs and pools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiversityConfig {
    pub attributes: Vec<String>,
    pub personas: Vec<String>,
    pub requests_per_pair: usize,
    /// Probability an understanding request combines several attributes.
    pub compositional_prob: f64,
    /// Probability a generation request describes a scene or feeling instead
    /// of naming the events outright.
    pub imaginary_prob: f64,
}

impl Default for DiversityConfig {
    fn default() -> Self {
        Self::builtin()
    }
}

impl DiversityConfig {
    /// Pools shipped with the crate: 108 attributes, 12 personas.
    pub fn builtin() -> Self {
        let lines = |raw: &str| {
            raw.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect()
        };
        Self {
            attributes: lines(include_str!("../data/attributes.txt")),
            personas: lines(include_str!("../data/personas.txt")),
            requests_per_pair: 3,
            compositional_prob: 0.3,
            imaginary_prob: 0.3,
        }
    }

    pub fn validate(&self) -> Result<(), SftError> {
        if self.attributes.is_empty() {
            return Err(SftError::EmptyAttributes);
        }
        if self.personas.is_empty() {
            return Err(SftError::EmptyPersonas);
        }
        for p in [self.compositional_prob, self.imaginary_prob] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SftError::BadProbability(p));
            }
        }
        if self.requests_per_pair == 0 {
            return Err(SftError::ZeroRequests);
        }
        Ok(())
    }
}

/// Synthesis result; endpoint or schema failures land in `dropped` with the
/// strategy that produced them, never silently.
#[derive(Debug, Clone, Default)]
pub struct SimOutcome {
    pub samples: Vec<SftSample>,
    pub dropped: Vec<(String, String)>,
}

fn require_caption(record: &CurationRecord) -> Result<(), SftError> {
    if record.caption.trim().is_empty() {
        return Err(SftError::MissingCaption(record.record_id.clone()));
    }
    Ok(())
}

fn nonempty_sequence(sequence: &[(String, String)]) -> Result<(), String> {
    for (field, text) in sequence {
        if text.trim().is_empty() {
            return Err(format!("field {field:?} is empty"));
        }
    }
    Ok(())
}

/// Synthesizes understanding samples: per request, 1-3 attributes are drawn
/// without replacement (several with probability `compositional_prob`) and
/// the client turns caption + attributes into a request, reasoning trace,
/// and answer.
pub fn simulate_understanding(
    record: &CurationRecord,
    client: &JudgeClient,
    cfg: &DiversityConfig,
    global_seed: u64,
) -> Result<SimOutcome, SftError> {
    cfg.validate()?;
    require_caption(record)?;
    let ctx = SeedContext::new(global_seed, &record.record_id);
    let mut outcome = SimOutcome::default();
    for i in 0..cfg.requests_per_pair {
        let mut rng = ctx.rng(&format!("sft_understand:{i}"));
        let compositional = rng.gen::<f64>() < cfg.compositional_prob;
        let k = if compositional {
            rng.gen_range(2..=3usize).min(cfg.attributes.len())
        } else {
            1
        };
        let attrs: Vec<String> = sample_indices(&mut rng, cfg.attributes.len(), k)
            .into_iter()
            .map(|ix| cfg.attributes[ix].clone())
            .collect();
        let strategy = format!("attrs={}", attrs.join("+"));
        let call_id = format!("{}#u{i}", record.record_id);
        match client.sft_understand(&call_id, &record.caption, &attrs) {
            Ok(reply) => {
                let sequence = vec![
                    ("audio".to_string(), record.audio_ref.clone()),
                    ("user_request".to_string(), reply.request),
                    ("rich_caption".to_string(), record.caption.clone()),
                    ("cot".to_string(), reply.cot),
                    ("answer".to_string(), reply.answer),
                ];
                match nonempty_sequence(&sequence) {
                    Ok(()) => outcome.samples.push(SftSample {
                        kind: SftKind::Understanding,
                        source_record_id: record.record_id.clone(),
                        strategy,
                        sequence,
                        judge: None,
                    }),
                    Err(why) => outcome.dropped.push((strategy, why)),
                }
            }
            Err(err) => outcome.dropped.push((strategy, err.to_string())),
        }
    }
    Ok(outcome)
}

/// Synthesizes generation samples: a persona asks for audio (as a scene or
/// feeling with probability `imaginary_prob`), the reasoning trace plans the
/// content, and the caption plus source clip form the target.
pub fn simulate_generation(
    record: &CurationRecord,
    client: &JudgeClient,
    cfg: &DiversityConfig,
    global_seed: u64,
) -> Result<SimOutcome, SftError> {
    cfg.validate()?;
    require_caption(record)?;
    let ctx = SeedContext::new(global_seed, &record.record_id);
    let mut outcome = SimOutcome::default();
    for i in 0..cfg.requests_per_pair {
        let mut rng = ctx.rng(&format!("sft_generate:{i}"));
        let persona = &cfg.personas[rng.gen_range(0..cfg.personas.len())];
        let imaginary = rng.gen::<f64>() < cfg.imaginary_prob;
        let strategy = format!(
            "persona={persona},{}",
            if imaginary { "imaginary" } else { "explicit" }
        );
        let call_id = format!("{}#g{i}", record.record_id);
        match client.sft_generate(&call_id, &record.caption, persona, imaginary) {
            Ok(reply) => {
                let sequence = vec![
                    ("user_request".to_string(), reply.request),
                    ("cot".to_string(), reply.cot),
                    ("rich_caption".to_string(), record.caption.clone()),
                    ("audio".to_string(), record.audio_ref.clone()),
                ];
                match nonempty_sequence(&sequence) {
                    Ok(()) => outcome.samples.push(SftSample {
                        kind: SftKind::Generation,
                        source_record_id: record.record_id.clone(),
                        strategy,
                        sequence,
                        judge: None,
                    }),
                    Err(why) => outcome.dropped.push((strategy, why)),
                }
            }
            Err(err) => outcome.dropped.push((strategy, err.to_string())),
        }
    }
    Ok(outcome)
}

/// Retention rule: mean of the five judge dimensions strictly above
/// [`RETENTION_MEAN`].
pub fn retention_decision(scores: &SftJudgeScores) -> bool {
    scores.mean() > RETENTION_MEAN
}

/// Per-dimension histogram of judge scores (index 0 counts score 1).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JudgeHistograms {
    pub request_diversity: [u64; 5],
    pub request_response_alignment: [u64; 5],
    pub thinking_coherence: [u64; 5],
    pub caption_quality: [u64; 5],
    pub training_value: [u64; 5],
}

impl JudgeHistograms {
    fn bump(&mut self, scores: &SftJudgeScores) {
        self.request_diversity[(scores.request_diversity - 1) as usize] += 1;
        self.request_response_alignment[(scores.request_response_alignment - 1) as usize] += 1;
        self.thinking_coherence[(scores.thinking_coherence - 1) as usize] += 1;
        self.caption_quality[(scores.caption_quality - 1) as usize] += 1;
        self.training_value[(scores.training_value - 1) as usize] += 1;
    }
}

#[derive(Debug, Default)]
pub struct JudgeFilterOutcome {
    pub retained: Vec<SftSample>,
    pub rejected: Vec<SftSample>,
    /// Samples the judge could not score at all, separate from rejections.
    pub failed: Vec<(String, String)>,
    pub histograms: JudgeHistograms,
}

/// Scores every sample and keeps those passing [`retention_decision`].
pub fn filter_by_judge(samples: Vec<SftSample>, client: &JudgeClient) -> JudgeFilterOutcome {
    let mut outcome = JudgeFilterOutcome::default();
    for (i, mut sample) in samples.into_iter().enumerate() {
        let call_id = format!("{}#judge{i}", sample.source_record_id);
        match client.sft_judge(&call_id, &sample.render()) {
            Ok(scores) => {
                outcome.histograms.bump(&scores);
                let keep = retention_decision(&scores);
                sample.judge = Some(scores);
                if keep {
                    outcome.retained.push(sample);
                } else {
                    outcome.rejected.push(sample);
                }
            }
            Err(err) => outcome
                .failed
                .push((sample.strategy.clone(), err.to_string())),
        }
    }
    outcome
}
