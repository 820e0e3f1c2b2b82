//! Guided sampling for token decoders.
//!
//! Conditional and unconditional logits combine as
//! `uncond + scale * (cond - uncond)`: scale 0 ignores the condition, scale 1
//! is plain conditional decoding, larger scales push harder toward it. Top-k
//! truncation runs on the combined logits, then softmax sampling at the
//! configured temperature; temperatures below `ARGMAX_EPSILON` short-circuit
//! to argmax.

use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Temperatures below this decode greedily.
pub const ARGMAX_EPSILON: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum DecodeError {
    #[error("logit vectors must be non-empty and equally sized ({0} vs {1})")]
    LogitShape(usize, usize),
    #[error("logits must be finite")]
    NonFiniteLogit,
    #[error("temperature must be finite and non-negative, got {0}")]
    BadTemperature(f64),
    #[error("top_k must be at least 1")]
    ZeroTopK,
    #[error("guidance is configured but the step produced no unconditional logits")]
    MissingUnconditional,
}

/// Sampling knobs for one decoding stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub temperature: f64,
    pub top_k: usize,
    /// Guidance scale; absent means plain conditional decoding.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub guidance_scale: Option<f64>,
    pub max_tokens: usize,
    /// Token that terminates decoding (not emitted into the output).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub end_token: Option<u32>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self::audio()
    }
}

impl DecodeConfig {
    /// Defaults for audio token streams.
    pub fn audio() -> Self {
        Self {
            temperature: 0.8,
            top_k: 20,
            guidance_scale: Some(3.0),
            max_tokens: 2048,
            end_token: None,
        }
    }

    /// Defaults for text token streams (no guidance).
    pub fn text() -> Self {
        Self {
            temperature: 0.6,
            top_k: 20,
            guidance_scale: None,
            max_tokens: 2048,
            end_token: None,
        }
    }

    pub fn validate(&self) -> Result<(), DecodeError> {
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(DecodeError::BadTemperature(self.temperature));
        }
        if self.top_k == 0 {
            return Err(DecodeError::ZeroTopK);
        }
        if let Some(scale) = self.guidance_scale {
            if !scale.is_finite() {
                return Err(DecodeError::BadTemperature(scale));
            }
        }
        Ok(())
    }
}

/// Combines conditional and unconditional logits:
/// `uncond + scale * (cond - uncond)`, elementwise.
///
/// Scale 1 short-circuits to the conditional logits so the identity is exact
/// rather than within rounding of the arithmetic form.
pub fn apply_guidance<F: Float>(cond: &[F], uncond: &[F], scale: F) -> Result<Vec<F>, DecodeError> {
    if cond.len() != uncond.len() || cond.is_empty() {
        return Err(DecodeError::LogitShape(cond.len(), uncond.len()));
    }
    if scale == F::one() {
        return Ok(cond.to_vec());
    }
    Ok(cond
        .iter()
        .zip(uncond)
        .map(|(&c, &u)| u + scale * (c - u))
        .collect())
}

/// Greedy pick: highest logit, ties toward the lowest index.
pub fn argmax(logits: &[f64]) -> Result<usize, DecodeError> {
    if logits.is_empty() {
        return Err(DecodeError::LogitShape(0, 0));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(DecodeError::NonFiniteLogit);
    }
    let mut best = 0;
    for (i, &l) in logits.iter().enumerate().skip(1) {
        if l > logits[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Indices of the `k` largest logits (ties toward the lowest index),
/// returned in ascending index order.
fn top_k_indices(logits: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then_with(|| a.cmp(&b)));
    let mut kept: Vec<usize> = order.into_iter().take(k).collect();
    kept.sort_unstable();
    kept
}

/// Samples one token from top-k truncated, temperature-scaled logits.
pub fn sample_token(
    logits: &[f64],
    temperature: f64,
    top_k: usize,
    rng: &mut impl Rng,
) -> Result<usize, DecodeError> {
    if logits.is_empty() {
        return Err(DecodeError::LogitShape(0, 0));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(DecodeError::NonFiniteLogit);
    }
    if !temperature.is_finite() || temperature < 0.0 {
        return Err(DecodeError::BadTemperature(temperature));
    }
    if top_k == 0 {
        return Err(DecodeError::ZeroTopK);
    }
    if temperature < ARGMAX_EPSILON {
        return argmax(logits);
    }
    let kept = top_k_indices(logits, top_k);
    let max_logit = kept
        .iter()
        .map(|&i| logits[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = kept
        .iter()
        .map(|&i| ((logits[i] - max_logit) / temperature).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (pos, &w) in weights.iter().enumerate() {
        u -= w;
        if u < 0.0 {
            return Ok(kept[pos]);
        }
    }
    Ok(*kept.last().expect("top_k >= 1 keeps at least one index"))
}

/// One decoding step's raw model output.
#[derive(Debug, Clone)]
pub struct StepLogits {
    pub cond: Vec<f64>,
    pub uncond: Option<Vec<f64>>,
}

/// Runs the decoding loop. `step` maps the tokens emitted so far to the next
/// step's logits; decoding stops at `end_token` (excluded from the output)
/// or after `max_tokens`.
pub fn decode<S>(
    mut step: S,
    cfg: &DecodeConfig,
    rng: &mut impl Rng,
) -> Result<Vec<u32>, DecodeError>
where
    S: FnMut(&[u32]) -> StepLogits,
{
    cfg.validate()?;
    let mut out: Vec<u32> = Vec::new();
    for _ in 0..cfg.max_tokens {
        let raw = step(&out);
        let logits = match cfg.guidance_scale {
            Some(scale) => {
                let uncond = raw.uncond.as_ref().ok_or(DecodeError::MissingUnconditional)?;
                apply_guidance(&raw.cond, uncond, scale)?
            }
            None => raw.cond,
        };
        let token = sample_token(&logits, cfg.temperature, cfg.top_k, rng)? as u32;
        if cfg.end_token == Some(token) {
            break;
        }
        out.push(token);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Snaps a value onto the 2^-20 grid, where guidance arithmetic in a
    /// small range is exact.
    fn dyadic(x: f64) -> f64 {
        let scale = (1u64 << 20) as f64;
        (x * scale).round() / scale
    }

    #[test]
    fn guidance_formula_hand_value() {
        // -2 + 3 * (4 - (-2)) = 16.
        let out = apply_guidance(&[4.0], &[-2.0], 3.0).unwrap();
        assert_eq!(out, vec![16.0]);
    }

    #[test]
    fn unit_scale_reproduces_conditional_exactly() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let n = rng.gen_range(1..64);
            let cond: Vec<f64> = (0..n).map(|_| dyadic(rng.gen_range(-8.0..8.0))).collect();
            let uncond: Vec<f64> = (0..n).map(|_| dyadic(rng.gen_range(-8.0..8.0))).collect();
            let one = apply_guidance(&cond, &uncond, 1.0).unwrap();
            assert_eq!(one, cond);
            let zero = apply_guidance(&cond, &uncond, 0.0).unwrap();
            assert_eq!(zero, uncond);
        }
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        assert_eq!(
            apply_guidance(&[1.0, 2.0], &[1.0], 2.0).unwrap_err(),
            DecodeError::LogitShape(2, 1)
        );
        assert!(apply_guidance::<f64>(&[], &[], 1.0).is_err());
    }

    #[test]
    fn near_zero_temperature_is_argmax_with_low_index_ties() {
        let logits = vec![0.5, 2.0, 2.0, -1.0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            assert_eq!(sample_token(&logits, 1e-7, 4, &mut rng).unwrap(), 1);
        }
        assert_eq!(argmax(&logits).unwrap(), 1);
    }

    #[test]
    fn samples_never_leave_the_top_k_set() {
        let logits = vec![5.0, 4.9, 4.8, 0.0, -3.0, 4.85];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut seen = [false; 6];
        for _ in 0..2000 {
            seen[sample_token(&logits, 1.5, 3, &mut rng).unwrap()] = true;
        }
        // Top 3 by logit: indices 0, 1, 5.
        assert_eq!(seen, [true, true, false, false, false, true]);
    }

    #[test]
    fn sampling_frequencies_match_softmax() {
        // Logits ln(p) give exactly p after softmax at temperature 1.
        let probs = [0.5, 0.3, 0.2];
        let logits: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 50_000usize;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[sample_token(&logits, 1.0, 3, &mut rng).unwrap()] += 1;
        }
        let mut chi2 = 0.0;
        for (c, p) in counts.iter().zip(&probs) {
            let expected = p * n as f64;
            chi2 += (*c as f64 - expected).powi(2) / expected;
            assert!((*c as f64 / n as f64 - p).abs() < 0.02);
        }
        // 1% critical value at 2 degrees of freedom.
        assert!(chi2 < 9.21034, "chi2 {chi2}");
    }

    #[test]
    fn temperature_flattens_the_distribution() {
        let logits = vec![2.0, 0.0];
        let count_first = |temp: f64, seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20_000)
                .filter(|_| sample_token(&logits, temp, 2, &mut rng).unwrap() == 0)
                .count()
        };
        let cold = count_first(0.5, 3);
        let hot = count_first(4.0, 3);
        assert!(cold > hot, "cold {cold} <= hot {hot}");
        // At temperature 4 the gap is 0.5 logits: p(first) ~ 0.62.
        assert!((hot as f64 / 20_000.0 - 0.6225).abs() < 0.02);
    }

    #[test]
    fn decode_stops_at_end_token_and_respects_cap() {
        let vocab = 6usize;
        let step = |prefix: &[u32]| {
            // Favor token = position until position 3, then the end token 5.
            let want = if prefix.len() < 3 { prefix.len() as u32 } else { 5 };
            let mut cond = vec![0.0; vocab];
            cond[want as usize] = 50.0;
            StepLogits { cond, uncond: None }
        };
        let cfg = DecodeConfig {
            temperature: 0.0,
            top_k: 1,
            guidance_scale: None,
            max_tokens: 100,
            end_token: Some(5),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(decode(step, &cfg, &mut rng).unwrap(), vec![0, 1, 2]);

        let capped = DecodeConfig {
            end_token: None,
            max_tokens: 4,
            ..cfg
        };
        let step2 = |prefix: &[u32]| {
            let mut cond = vec![0.0; vocab];
            cond[prefix.len() % vocab] = 50.0;
            StepLogits { cond, uncond: None }
        };
        assert_eq!(decode(step2, &capped, &mut rng).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn guided_decode_requires_unconditional_logits() {
        let cfg = DecodeConfig {
            temperature: 0.0,
            top_k: 1,
            guidance_scale: Some(2.0),
            max_tokens: 4,
            end_token: None,
        };
        let step = |_: &[u32]| StepLogits {
            cond: vec![1.0, 0.0],
            uncond: None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            decode(step, &cfg, &mut rng).unwrap_err(),
            DecodeError::MissingUnconditional
        );
    }

    #[test]
    fn guidance_flips_the_winner_when_scaled() {
        // Conditional prefers token 1 only mildly over the unconditional
        // bias toward token 0; scale 3 amplifies the preference.
        let cond = vec![1.0, 1.2];
        let uncond = vec![1.4, 0.2];
        let plain = argmax(&apply_guidance(&cond, &uncond, 1.0).unwrap()).unwrap();
        assert_eq!(plain, 1);
        // uncond alone picks 0.
        assert_eq!(argmax(&uncond).unwrap(), 0);
        let scaled = apply_guidance(&cond, &uncond, 3.0).unwrap();
        // 1.4 + 3*(-0.4) = 0.2 vs 0.2 + 3*(1.0) = 3.2.
        assert!((scaled[0] - 0.2).abs() < 1e-12);
        assert!((scaled[1] - 3.2).abs() < 1e-12);
        assert_eq!(argmax(&scaled).unwrap(), 1);
    }

    #[test]
    fn preset_knobs_are_pinned() {
        let audio = DecodeConfig::audio();
        assert_eq!(audio.temperature, 0.8);
        assert_eq!(audio.top_k, 20);
        assert_eq!(audio.guidance_scale, Some(3.0));
        assert_eq!(audio.max_tokens, 2048);
        let text = DecodeConfig::text();
        assert_eq!(text.temperature, 0.6);
        assert_eq!(text.top_k, 20);
        assert_eq!(text.guidance_scale, None);
        assert_eq!(text.max_tokens, 2048);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = DecodeConfig::audio();
        cfg.temperature = -0.5;
        assert!(cfg.validate().is_err());
        let mut cfg = DecodeConfig::audio();
        cfg.top_k = 0;
        assert_eq!(cfg.validate().unwrap_err(), DecodeError::ZeroTopK);
        assert!(sample_token(&[1.0, f64::NAN], 1.0, 2, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
