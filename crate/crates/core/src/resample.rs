//! Quality-weighted resampling via Gumbel perturbation.
//!
//! Keeping the top `k` of `score/temperature + Gumbel noise` draws a size-`k`
//! subset distributed as sequential sampling without replacement with weights
//! `exp(score/temperature)`. Temperature 0 degenerates to a deterministic
//! top-k; higher temperatures flatten the selection toward uniform.

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::record::Category;
use crate::seed::mix_seed;

#[derive(Debug, Error, PartialEq)]
pub enum ResampleError {
    #[error("temperature must be >= 0, got {0}")]
    NegativeTemperature(f64),
    #[error("discard fraction must be in [0, 1), got {0}")]
    BadDiscardFraction(f64),
    #[error("ids and scores must be the same length ({ids} vs {scores})")]
    LengthMismatch { ids: usize, scores: usize },
    #[error("non-finite score at index {0}")]
    NonFinite(usize),
}

/// Guard keeping uniform draws strictly inside (0, 1) before the double log.
const U_GUARD: f64 = 1.0 / 9_007_199_254_740_992.0; // 2^-53

/// Standard Gumbel noise from a uniform draw: `-ln(-ln(u))`.
pub fn gumbel_noise<F: Float>(u: F) -> F {
    -(-u.ln()).ln()
}

/// Number of records kept when discarding `discard_fraction` of `n`:
/// `ceil((1 - d) * n)`, floored at 1 for non-empty inputs.
pub fn keep_count(n: usize, discard_fraction: f64) -> usize {
    if n == 0 {
        return 0;
    }
    let share = (1.0 - discard_fraction) * n as f64;
    // Fractions are human-entered decimals, so a product within rounding
    // fuzz of an integer (1 - 0.42 lands at 0.5800000000000001) is that
    // integer, not a value to round up from.
    let nearest = share.round();
    let raw = if (share - nearest).abs() < 1e-9 {
        nearest
    } else {
        share.ceil()
    };
    (raw as usize).clamp(1, n)
}

/// Selects `k` indices by perturbed score.
///
/// Noise for each item comes from `(seed, id)` only, so the selection is a
/// pure function of `(ids, scores, temperature, k, seed)` and invariant to
/// input order. Ties (including the whole ordering at temperature 0) break
/// toward the lexicographically smallest id.
pub fn gumbel_topk(
    ids: &[&str],
    scores: &[f64],
    temperature: f64,
    k: usize,
    seed: u64,
) -> Result<Vec<usize>, ResampleError> {
    if temperature < 0.0 {
        return Err(ResampleError::NegativeTemperature(temperature));
    }
    if ids.len() != scores.len() {
        return Err(ResampleError::LengthMismatch {
            ids: ids.len(),
            scores: scores.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(ResampleError::NonFinite(i));
    }
    let n = ids.len();
    let k = k.min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    if temperature == 0.0 {
        idx.sort_by(|&a, &b| {
            scores[b]
                .total_cmp(&scores[a])
                .then_with(|| ids[a].cmp(ids[b]))
        });
    } else {
        let perturbed: Vec<f64> = (0..n)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, ids[i]));
                let u = rng.gen::<f64>().clamp(U_GUARD, 1.0 - U_GUARD);
                scores[i] / temperature + gumbel_noise(u)
            })
            .collect();
        idx.sort_by(|&a, &b| {
            perturbed[b]
                .total_cmp(&perturbed[a])
                .then_with(|| ids[a].cmp(ids[b]))
        });
    }
    idx.truncate(k);
    Ok(idx)
}

/// Per-category selection knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryParams {
    pub temperature: f64,
    pub discard_fraction: f64,
    /// Overrides the fraction-derived keep count when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keep_count: Option<usize>,
}

impl CategoryParams {
    pub fn new(temperature: f64, discard_fraction: f64) -> Self {
        Self {
            temperature,
            discard_fraction,
            keep_count: None,
        }
    }
}

/// Resampling configuration across the three categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResampleConfig {
    pub speech: CategoryParams,
    pub music: CategoryParams,
    pub sfx: CategoryParams,
    pub seed: u64,
}

impl ResampleConfig {
    /// Preset for curating understanding-direction pretraining data:
    /// moderate temperature, speech discarded hardest.
    pub fn pretraining_understanding(seed: u64) -> Self {
        Self {
            speech: CategoryParams::new(0.3, 0.42),
            music: CategoryParams::new(0.3, 0.20),
            sfx: CategoryParams::new(0.3, 0.20),
            seed,
        }
    }

    /// Preset for curating generation-direction pretraining data: sharper
    /// temperature, gentler speech discard.
    pub fn generation_curation(seed: u64) -> Self {
        Self {
            speech: CategoryParams::new(0.1, 0.28),
            music: CategoryParams::new(0.1, 0.20),
            sfx: CategoryParams::new(0.1, 0.20),
            seed,
        }
    }

    /// Preset for drawing a fixed-size instruction-data subset: near-greedy
    /// temperature; callers set `keep_count` per category to the subset size.
    pub fn instruction_subset(seed: u64) -> Self {
        Self {
            speech: CategoryParams::new(0.03, 0.0),
            music: CategoryParams::new(0.03, 0.0),
            sfx: CategoryParams::new(0.03, 0.0),
            seed,
        }
    }

    pub fn params(&self, category: Category) -> CategoryParams {
        match category {
            Category::Speech => self.speech,
            Category::Music => self.music,
            // Unknown falls back to sfx parameters; the pipeline classifies
            // before resampling, so this only matters for ad-hoc calls.
            Category::Sfx | Category::Unknown => self.sfx,
        }
    }

    pub fn validate(&self) -> Result<(), ResampleError> {
        for p in [self.speech, self.music, self.sfx] {
            if p.temperature < 0.0 {
                return Err(ResampleError::NegativeTemperature(p.temperature));
            }
            if !(0.0..1.0).contains(&p.discard_fraction) {
                return Err(ResampleError::BadDiscardFraction(p.discard_fraction));
            }
        }
        Ok(())
    }
}

/// Outcome of resampling one category.
#[derive(Debug, Clone, PartialEq)]
pub struct CategorySelection {
    pub kept: Vec<usize>,
    /// True when `(1 - discard) * n` fell below one and the floor of a single
    /// kept record was applied.
    pub clamped_to_minimum: bool,
}

/// Resamples one category's items under its parameters.
pub fn resample_category(
    ids: &[&str],
    scores: &[f64],
    params: &CategoryParams,
    seed: u64,
) -> Result<CategorySelection, ResampleError> {
    if !(0.0..1.0).contains(&params.discard_fraction) {
        return Err(ResampleError::BadDiscardFraction(params.discard_fraction));
    }
    let n = ids.len();
    let k = params
        .keep_count
        .map(|k| k.min(n))
        .unwrap_or_else(|| keep_count(n, params.discard_fraction));
    let clamped = n > 0 && (1.0 - params.discard_fraction) * (n as f64) < 1.0;
    let kept = gumbel_topk(ids, scores, params.temperature, k, seed)?;
    Ok(CategorySelection {
        kept,
        clamped_to_minimum: clamped,
    })
}
