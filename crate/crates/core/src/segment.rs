//! Clip segmentation planning.
//!
//! Long clips are cut into windows of at most `max_len_s` seconds, either as
//! a full sequential tiling or as a single randomly placed window.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::SeedContext;

#[derive(Debug, Error, PartialEq)]
pub enum SegmentError {
    #[error("duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("max window length must be positive, got {0}")]
    NonPositiveWindow(f64),
}

/// Windowing strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentMode {
    /// Tile the whole clip: `ceil(duration / max_len)` windows, all but the
    /// last exactly `max_len` long.
    Sequential,
    /// One window of length `min(duration, max_len)` with a uniformly random
    /// start in `[0, duration - max_len]`.
    Random,
}

/// Planned windows as `(start_s, end_s)` pairs, in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentPlan {
    pub windows: Vec<(f64, f64)>,
}

impl SegmentPlan {
    pub fn total_len(&self) -> f64 {
        self.windows.iter().map(|(s, e)| e - s).sum()
    }
}

/// Plans windows for one clip.
///
/// The random mode draws from the context's `"segment"` stream, so the plan
/// is reproducible per `(global_seed, record_id)` and independent of
/// processing order.
pub fn segment_plan(
    duration_s: f64,
    max_len_s: f64,
    mode: SegmentMode,
    seed: &SeedContext,
) -> Result<SegmentPlan, SegmentError> {
    if duration_s.is_nan() || duration_s <= 0.0 {
        return Err(SegmentError::NonPositiveDuration(duration_s));
    }
    if max_len_s.is_nan() || max_len_s <= 0.0 {
        return Err(SegmentError::NonPositiveWindow(max_len_s));
    }
    let windows = match mode {
        SegmentMode::Sequential => {
            let count = (duration_s / max_len_s).ceil().max(1.0) as usize;
            // Both ends of a shared boundary come from the same expression,
            // so adjacent windows meet exactly.
            let boundary = |i: usize| (i as f64 * max_len_s).min(duration_s);
            (0..count)
                .map(|i| (boundary(i), boundary(i + 1)))
                .filter(|(start, end)| end > start)
                .collect()
        }
        SegmentMode::Random => {
            if duration_s <= max_len_s {
                vec![(0.0, duration_s)]
            } else {
                let span = duration_s - max_len_s;
                let start = seed.rng("segment").gen::<f64>() * span;
                vec![(start, start + max_len_s)]
            }
        }
    };
    Ok(SegmentPlan { windows })
}
