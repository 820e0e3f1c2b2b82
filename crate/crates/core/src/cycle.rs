//! Round-trip consistency probes.
//!
//! An audio clip is captioned and the caption is rendered back to audio
//! (or a caption is rendered and re-captioned); embedding both endpoints and
//! taking the cosine says how much of the signal survived the loop. Loops
//! that fail at any endpoint are counted, not averaged.

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::judge::JudgeClient;

#[derive(Debug, Error, PartialEq)]
pub enum CycleError {
    #[error("vectors must have equal nonzero length ({0} vs {1})")]
    Shape(usize, usize),
    #[error("cosine undefined for a zero-norm vector")]
    ZeroNorm,
}

/// Cosine similarity `u . v / (|u| |v|)`.
pub fn cosine<F: Float>(u: &[F], v: &[F]) -> Result<F, CycleError> {
    if u.len() != v.len() || u.is_empty() {
        return Err(CycleError::Shape(u.len(), v.len()));
    }
    let mut dot = F::zero();
    let mut nu = F::zero();
    let mut nv = F::zero();
    for (&a, &b) in u.iter().zip(v) {
        dot = dot + a * b;
        nu = nu + a * a;
        nv = nv + b * b;
    }
    if nu == F::zero() || nv == F::zero() {
        return Err(CycleError::ZeroNorm);
    }
    Ok(dot / (nu * nv).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// audio -> caption -> audio, compared in audio-embedding space.
    A2t2a,
    /// caption -> audio -> caption, compared in text-embedding space.
    T2a2t,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::A2t2a => "a2t2a",
            Direction::T2a2t => "t2a2t",
        }
    }
}

/// One probe input: the starting payload of the loop (an audio reference for
/// [`Direction::A2t2a`], a caption for [`Direction::T2a2t`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleItem {
    pub record_id: String,
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleResult {
    pub direction: Direction,
    /// `(record_id, similarity)` for completed loops.
    pub similarities: Vec<(String, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    pub count: usize,
    pub failures: usize,
    pub failure_reasons: Vec<(String, String)>,
}

/// Runs one loop direction over all items. Endpoint failures mark the item
/// failed and leave the aggregate untouched.
pub fn run_cycle(
    items: &[CycleItem],
    direction: Direction,
    client: &JudgeClient,
) -> CycleResult {
    let mut similarities = Vec::new();
    let mut failure_reasons = Vec::new();
    for item in items {
        let loop_result = (|| -> Result<f64, String> {
            let (first, second) = match direction {
                Direction::A2t2a => {
                    let caption = client
                        .caption(&item.record_id, &item.payload)
                        .map_err(|e| e.to_string())?;
                    let audio_back = client
                        .generate(&item.record_id, &caption)
                        .map_err(|e| e.to_string())?;
                    (item.payload.clone(), audio_back)
                }
                Direction::T2a2t => {
                    let audio = client
                        .generate(&item.record_id, &item.payload)
                        .map_err(|e| e.to_string())?;
                    let caption_back = client
                        .caption(&item.record_id, &audio)
                        .map_err(|e| e.to_string())?;
                    (item.payload.clone(), caption_back)
                }
            };
            let e1 = client
                .embed(&item.record_id, &first)
                .map_err(|e| e.to_string())?;
            let e2 = client
                .embed(&item.record_id, &second)
                .map_err(|e| e.to_string())?;
            cosine(&e1, &e2).map_err(|e| e.to_string())
        })();
        match loop_result {
            Ok(sim) => similarities.push((item.record_id.clone(), sim)),
            Err(why) => failure_reasons.push((item.record_id.clone(), why)),
        }
    }
    let count = similarities.len();
    let mean = if count > 0 {
        Some(similarities.iter().map(|(_, s)| s).sum::<f64>() / count as f64)
    } else {
        None
    };
    CycleResult {
        direction,
        similarities,
        mean,
        count,
        failures: failure_reasons.len(),
        failure_reasons,
    }
}

/// Plain-text summary table, one row per direction.
pub fn render_table(results: &[CycleResult]) -> String {
    let mut out = String::from("direction      n  mean_similarity  failures\n");
    for r in results {
        let mean = match r.mean {
            Some(m) => format!("{m:.4}"),
            None => "-".to_string(),
        };
        out.push_str(&format!(
            "{:<10} {:>5}  {:>15}  {:>8}\n",
            r.direction.as_str(),
            r.count,
            mean,
            r.failures
        ));
    }
    out
}
