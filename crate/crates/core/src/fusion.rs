//! Percentile-rank normalization and score fusion.
//!
//! Raw quality dimensions live on incompatible scales, so each dimension is
//! converted to a within-category percentile rank before combining. Ranks use
//! midranks for ties: a value whose tie group occupies 1-based sorted ranks
//! `a+1..=b` gets percentile `((a + b) / 2) / n`, equivalently
//! `(midrank - 0.5) / n`. The fused score is a weighted mean of the
//! percentiles that are present.

use std::collections::BTreeMap;

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::record::{Category, CurationRecord};

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("cannot rank an empty value set")]
    EmptyInput,
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
}

/// Midrank percentile ranks in (0, 1), ties averaged.
///
/// Exactly matches the counting definition
/// `(count_less + 0.5 * count_equal_others + 0.5) / n`: every intermediate is
/// a dyadic rational small enough to be exact in the float type, so the two
/// formulations agree bit-for-bit.
pub fn percentile_ranks<F: Float>(values: &[F]) -> Result<Vec<F>, FusionError> {
    let n = values.len();
    if n == 0 {
        return Err(FusionError::EmptyInput);
    }
    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(FusionError::NonFinite(i));
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        values[a]
            .partial_cmp(&values[b])
            .expect("finite values compare")
            .then(a.cmp(&b))
    });
    let nf = F::from(n).expect("usize fits in float");
    let half = F::from(0.5).unwrap();
    let mut out = vec![F::zero(); n];
    let mut lo = 0usize;
    while lo < n {
        let mut hi = lo + 1;
        while hi < n && values[idx[hi]] == values[idx[lo]] {
            hi += 1;
        }
        // Tie group occupies 1-based ranks lo+1 ..= hi.
        let midrank = F::from(lo + 1 + hi).unwrap() * half;
        let pct = (midrank - half) / nf;
        for &orig in &idx[lo..hi] {
            out[orig] = pct;
        }
        lo = hi;
    }
    Ok(out)
}

/// Relative weights for the fused mean. Dimensions missing on a record are
/// excluded and the remaining weights renormalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionWeights {
    pub audio_only: f64,
    pub text_only: f64,
    pub alignment: f64,
}

impl Default for FusionWeights {
    fn default() -> Self {
        Self {
            audio_only: 1.0,
            text_only: 1.0,
            alignment: 1.0,
        }
    }
}

/// What happened during one fusion pass.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FusionReport {
    /// Records ranked per category.
    pub per_category: BTreeMap<String, usize>,
    /// Categories that were present in the input but had no records with any
    /// finite dimension.
    pub empty_categories: Vec<String>,
    /// `(record_id, reason)` for records skipped or partially ranked.
    pub flagged: Vec<(String, String)>,
}

const DIMS: [&str; 3] = ["audio_only", "text_only", "alignment"];

fn raw_dim(q: &crate::record::QualityVector, dim: &str) -> Option<f64> {
    match dim {
        "audio_only" => q.audio_only,
        "text_only" => q.text_only,
        _ => q.alignment,
    }
}

fn set_pct(q: &mut crate::record::QualityVector, dim: &str, v: f64) {
    match dim {
        "audio_only" => q.pct_audio = Some(v),
        "text_only" => q.pct_text = Some(v),
        _ => q.pct_align = Some(v),
    }
}

fn weight_of(w: &FusionWeights, dim: &str) -> f64 {
    match dim {
        "audio_only" => w.audio_only,
        "text_only" => w.text_only,
        _ => w.alignment,
    }
}

/// Ranks every raw dimension within its category and writes percentile and
/// fused scores back onto the records.
///
/// Records with an unknown category are flagged and left unranked. A
/// non-finite raw value excludes the record from that dimension's ranking and
/// flags it. Records with no present dimension are flagged; records missing
/// some dimensions fuse over the present ones (flagged per missing
/// dimension).
pub fn fuse(records: &mut [CurationRecord], weights: &FusionWeights) -> FusionReport {
    let mut report = FusionReport::default();
    for cat in Category::KNOWN {
        let members: Vec<usize> = records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.category == cat)
            .map(|(i, _)| i)
            .collect();
        if members.is_empty() {
            continue;
        }
        report
            .per_category
            .insert(cat.as_str().to_string(), members.len());

        let mut any_dim = false;
        for dim in DIMS {
            let mut holders: Vec<usize> = Vec::new();
            for &i in &members {
                let raw = records[i].quality.as_ref().and_then(|q| raw_dim(q, dim));
                match raw {
                    Some(v) if v.is_finite() => holders.push(i),
                    Some(v) => report.flagged.push((
                        records[i].record_id.clone(),
                        format!("non-finite {dim} ({v}) excluded from ranking"),
                    )),
                    None => {}
                }
            }
            if holders.is_empty() {
                continue;
            }
            any_dim = true;
            let values: Vec<f64> = holders
                .iter()
                .map(|&i| raw_dim(records[i].quality.as_ref().unwrap(), dim).unwrap())
                .collect();
            let pcts = percentile_ranks(&values).expect("holders are finite and non-empty");
            for (&i, &p) in holders.iter().zip(&pcts) {
                set_pct(records[i].quality_mut(), dim, p);
            }
        }
        if !any_dim {
            report.empty_categories.push(cat.as_str().to_string());
        }

        for &i in &members {
            let (mut num, mut den) = (0.0f64, 0.0f64);
            let mut missing: Vec<&str> = Vec::new();
            for dim in DIMS {
                let pct = records[i].quality.as_ref().and_then(|q| match dim {
                    "audio_only" => q.pct_audio,
                    "text_only" => q.pct_text,
                    _ => q.pct_align,
                });
                match pct {
                    Some(p) => {
                        let w = weight_of(weights, dim);
                        num += w * p;
                        den += w;
                    }
                    None => missing.push(dim),
                }
            }
            let id = records[i].record_id.clone();
            if den > 0.0 {
                records[i].quality_mut().fused = Some(num / den);
                for dim in missing {
                    report
                        .flagged
                        .push((id.clone(), format!("missing {dim}; fused over the rest")));
                }
            } else {
                report
                    .flagged
                    .push((id, "no quality dimensions present".into()));
            }
        }
    }

    for r in records.iter() {
        if r.category.is_unknown() {
            report
                .flagged
                .push((r.record_id.clone(), "unclassified; not ranked".into()));
        }
    }
    report
}
