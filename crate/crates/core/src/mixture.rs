//! Token-budget mixture planning.
//!
//! A total training-token budget is split across three tracks
//! (text-to-audio, audio-to-text, text-only) by integer ratio, each audio
//! track is split equally across the three audio categories, and every cell
//! gets a sampling weight of `target / available` tokens. Weights above one
//! mean upsampling: each record is visited `floor(weight)` times plus one
//! extra visit with probability `frac(weight)`; weights below one subsample
//! the same way. All integer splits use the largest-remainder method, so
//! allocations always sum exactly to the total.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::record::Category;
use crate::seed::SeedContext;

#[derive(Debug, Error, PartialEq)]
pub enum MixtureError {
    #[error("ratio weights must not all be zero")]
    ZeroWeights,
    #[error("sampling weight must be finite and non-negative, got {0}")]
    BadWeight(f64),
}

/// Training track a token belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Track {
    TextToAudio,
    AudioToText,
    TextOnly,
}

impl Track {
    pub fn as_str(&self) -> &'static str {
        match self {
            Track::TextToAudio => "text_to_audio",
            Track::AudioToText => "audio_to_text",
            Track::TextOnly => "text_only",
        }
    }
}

pub const TRACKS: [Track; 3] = [Track::TextToAudio, Track::AudioToText, Track::TextOnly];

/// Budget knobs: the total and how it splits across tracks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BudgetConfig {
    pub total_tokens: u64,
    /// text-to-audio : audio-to-text : text-only.
    pub track_ratio: [u64; 3],
    /// Token inventory of the text-only corpus (it carries no audio records,
    /// so its size is configured rather than measured).
    pub text_available_tokens: u64,
    pub seed: u64,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        Self {
            total_tokens: 1_000_000,
            track_ratio: [2, 1, 1],
            text_available_tokens: 250_000,
            seed: 0xb4d9e7,
        }
    }
}

/// Measured audio-token inventory per category.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inventory {
    pub speech_tokens: u64,
    pub music_tokens: u64,
    pub sfx_tokens: u64,
}

impl Inventory {
    pub fn category_tokens(&self, category: Category) -> u64 {
        match category {
            Category::Speech => self.speech_tokens,
            Category::Music => self.music_tokens,
            Category::Sfx => self.sfx_tokens,
            Category::Unknown => 0,
        }
    }
}

/// One (track, category) cell of the plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellPlan {
    pub track: Track,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
    pub target_tokens: u64,
    pub available_tokens: u64,
    /// target / available; 0 when nothing is available.
    pub weight: f64,
    pub full_passes: u64,
    pub extra_pass_probability: f64,
    /// Target is positive but no tokens are available to fill it.
    pub starved: bool,
}

/// Full mixture plan: three track targets and seven cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePlan {
    pub total_tokens: u64,
    pub track_targets: [u64; 3],
    pub cells: Vec<CellPlan>,
}

/// Splits `total` into integer parts proportional to `weights`, summing
/// exactly to `total`. Leftover units go to the largest fractional parts,
/// ties broken toward the lowest index.
pub fn largest_remainder(total: u64, weights: &[u64]) -> Result<Vec<u64>, MixtureError> {
    let weight_sum: u128 = weights.iter().map(|&w| w as u128).sum();
    if weight_sum == 0 {
        return Err(MixtureError::ZeroWeights);
    }
    let mut alloc = Vec::with_capacity(weights.len());
    let mut remainders = Vec::with_capacity(weights.len());
    for (i, &w) in weights.iter().enumerate() {
        let product = total as u128 * w as u128;
        alloc.push((product / weight_sum) as u64);
        remainders.push((product % weight_sum, i));
    }
    let assigned: u64 = alloc.iter().sum();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    for &(_, i) in remainders.iter().take((total - assigned) as usize) {
        alloc[i] += 1;
    }
    Ok(alloc)
}

fn make_cell(
    track: Track,
    category: Option<Category>,
    target_tokens: u64,
    available_tokens: u64,
) -> CellPlan {
    let weight = if available_tokens > 0 {
        target_tokens as f64 / available_tokens as f64
    } else {
        0.0
    };
    let (full_passes, extra_pass_probability) = epochs(weight).expect("weight is finite");
    CellPlan {
        track,
        category,
        target_tokens,
        available_tokens,
        weight,
        full_passes,
        extra_pass_probability,
        starved: available_tokens == 0 && target_tokens > 0,
    }
}

/// Builds the plan: track targets by ratio, equal category split inside each
/// audio track, one cell for the text track.
pub fn plan_mixture(inventory: &Inventory, cfg: &BudgetConfig) -> Result<MixturePlan, MixtureError> {
    let track_targets_vec = largest_remainder(cfg.total_tokens, &cfg.track_ratio)?;
    let track_targets = [
        track_targets_vec[0],
        track_targets_vec[1],
        track_targets_vec[2],
    ];
    let categories = [Category::Speech, Category::Music, Category::Sfx];
    let mut cells = Vec::with_capacity(7);
    for (track, target) in [
        (Track::TextToAudio, track_targets[0]),
        (Track::AudioToText, track_targets[1]),
    ] {
        let per_category = largest_remainder(target, &[1, 1, 1])?;
        for (ci, &category) in categories.iter().enumerate() {
            cells.push(make_cell(
                track,
                Some(category),
                per_category[ci],
                inventory.category_tokens(category),
            ));
        }
    }
    cells.push(make_cell(
        Track::TextOnly,
        None,
        track_targets[2],
        cfg.text_available_tokens,
    ));
    Ok(MixturePlan {
        total_tokens: cfg.total_tokens,
        track_targets,
        cells,
    })
}

impl MixturePlan {
    pub fn cell(&self, track: Track, category: Option<Category>) -> Option<&CellPlan> {
        self.cells
            .iter()
            .find(|c| c.track == track && c.category == category)
    }
}

/// Ratio of two cells' sampling weights, computed by integer
/// cross-multiplication so equal targets yield the exact inventory ratio.
pub fn weight_ratio(a: &CellPlan, b: &CellPlan) -> Option<f64> {
    let num = a.target_tokens as u128 * b.available_tokens as u128;
    let den = b.target_tokens as u128 * a.available_tokens as u128;
    if den == 0 {
        return None;
    }
    Some(num as f64 / den as f64)
}

/// Splits a sampling weight into full passes plus the probability of one
/// extra pass.
pub fn epochs(weight: f64) -> Result<(u64, f64), MixtureError> {
    if !weight.is_finite() || weight < 0.0 {
        return Err(MixtureError::BadWeight(weight));
    }
    let full = weight.floor();
    Ok((full as u64, weight - full))
}

/// Number of times one record is visited under `weight`. Deterministic per
/// (seed, record id), independent of position in the corpus.
pub fn record_passes(weight: f64, seed: u64, record_id: &str) -> Result<u64, MixtureError> {
    let (full, extra_p) = epochs(weight)?;
    if extra_p == 0.0 {
        return Ok(full);
    }
    let mut rng = SeedContext::new(seed, record_id).rng("upsample");
    let u: f64 = rand::Rng::gen(&mut rng);
    Ok(full + u64::from(u < extra_p))
}

/// Expands record ids by their pass counts, preserving input order.
pub fn expand_ids(ids: &[String], weight: f64, seed: u64) -> Result<Vec<String>, MixtureError> {
    let mut out = Vec::new();
    for id in ids {
        for _ in 0..record_passes(weight, seed, id)? {
            out.push(id.clone());
        }
    }
    Ok(out)
}
