//! Near-duplicate detection over captions.
//!
//! Captions are normalized (lowercased, whitespace collapsed), shingled into
//! word n-grams, and summarized as MinHash signatures: position `p` holds the
//! minimum of hash family `p` over the shingle set, so the fraction of
//! matching positions is an unbiased estimate of Jaccard similarity. Banding
//! the signature into `B` bands of `R` rows turns the index into an S-curve
//! candidate filter; candidates are verified against the threshold and
//! clustered with union-find. One record per cluster survives.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{fnv1a64, splitmix64};

#[derive(Debug, Error, PartialEq)]
pub enum DedupError {
    #[error("bands * rows must equal permutations ({bands} * {rows} != {permutations})")]
    BandLayout {
        bands: usize,
        rows: usize,
        permutations: usize,
    },
    #[error("signatures must have equal length ({0} vs {1})")]
    SignatureLength(usize, usize),
    #[error("threshold must be in [0, 1], got {0}")]
    BadThreshold(f64),
}

/// MinHash summary of one caption's shingle set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinHashSignature {
    pub hashes: Vec<u64>,
    pub shingle_count: usize,
    /// Caption had fewer words than the shingle width; the whole caption
    /// became a single shingle.
    pub degenerate: bool,
}

/// Dedup knobs. The band layout must tile the signature exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DedupConfig {
    pub permutations: usize,
    pub bands: usize,
    pub rows: usize,
    pub shingle_words: usize,
    pub jaccard_threshold: f64,
    pub seed: u64,
    /// Verify candidates with exact shingle-set Jaccard instead of the
    /// signature estimate.
    pub exact_verify: bool,
}

impl Default for DedupConfig {
    fn default() -> Self {
        Self {
            permutations: 126,
            bands: 14,
            rows: 9,
            shingle_words: 5,
            jaccard_threshold: 0.8,
            seed: 0x5eed_d0c5,
            exact_verify: false,
        }
    }
}

impl DedupConfig {
    pub fn validate(&self) -> Result<(), DedupError> {
        if self.bands * self.rows != self.permutations {
            return Err(DedupError::BandLayout {
                bands: self.bands,
                rows: self.rows,
                permutations: self.permutations,
            });
        }
        if !(0.0..=1.0).contains(&self.jaccard_threshold) {
            return Err(DedupError::BadThreshold(self.jaccard_threshold));
        }
        Ok(())
    }
}

/// Lowercase, whitespace-collapsed caption text.
pub fn normalize_caption(caption: &str) -> String {
    caption
        .split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Base hashes of the caption's word shingles. Captions shorter than the
/// shingle width collapse to one whole-caption shingle.
fn shingle_hashes(caption: &str, width: usize) -> (Vec<u64>, bool) {
    let normalized = normalize_caption(caption);
    let words: Vec<&str> = normalized.split(' ').filter(|w| !w.is_empty()).collect();
    if words.len() < width.max(1) {
        return (vec![fnv1a64(normalized.as_bytes())], true);
    }
    let set: HashSet<u64> = words
        .windows(width)
        .map(|gram| fnv1a64(gram.join("\u{1f}").as_bytes()))
        .collect();
    (set.into_iter().collect(), false)
}

/// MinHash signature over `permutations` independent hash families.
pub fn minhash_signature(
    caption: &str,
    permutations: usize,
    shingle_words: usize,
    seed: u64,
) -> MinHashSignature {
    let (bases, degenerate) = shingle_hashes(caption, shingle_words);
    let hashes = (0..permutations)
        .map(|p| {
            let family = splitmix64(seed ^ (p as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            bases
                .iter()
                .map(|&b| splitmix64(b ^ family))
                .min()
                .expect("at least one shingle")
        })
        .collect();
    MinHashSignature {
        hashes,
        shingle_count: bases.len(),
        degenerate,
    }
}

/// Fraction of matching signature positions.
pub fn estimate_jaccard(a: &MinHashSignature, b: &MinHashSignature) -> Result<f64, DedupError> {
    if a.hashes.len() != b.hashes.len() {
        return Err(DedupError::SignatureLength(a.hashes.len(), b.hashes.len()));
    }
    let matches = a
        .hashes
        .iter()
        .zip(&b.hashes)
        .filter(|(x, y)| x == y)
        .count();
    Ok(matches as f64 / a.hashes.len() as f64)
}

/// Exact Jaccard over the two captions' shingle sets; the brute-force oracle
/// behind `exact_verify`.
pub fn exact_jaccard(a: &str, b: &str, shingle_words: usize) -> f64 {
    let (ha, _) = shingle_hashes(a, shingle_words);
    let (hb, _) = shingle_hashes(b, shingle_words);
    let sa: HashSet<u64> = ha.into_iter().collect();
    let sb: HashSet<u64> = hb.into_iter().collect();
    let inter = sa.intersection(&sb).count();
    let union = sa.len() + sb.len() - inter;
    if union == 0 {
        return 1.0;
    }
    inter as f64 / union as f64
}

/// One record entering dedup.
#[derive(Debug, Clone)]
pub struct DedupItem {
    pub record_id: String,
    pub caption: String,
    /// Fused quality score; the cluster keeper has the highest.
    pub quality: f64,
}

/// One resolved duplicate cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicateCluster {
    pub keeper_id: String,
    /// Non-keeper members, sorted by id.
    pub member_ids: Vec<String>,
    /// Mean estimated Jaccard over the verified pairs inside the cluster.
    pub mean_estimated_jaccard: f64,
}

/// Dedup result: indices into the input.
#[derive(Debug, Clone, Default)]
pub struct DedupOutcome {
    pub retained: Vec<usize>,
    /// `(index, reason)` for removed records; reason names the keeper.
    pub rejected: Vec<(usize, String)>,
    pub clusters: Vec<DuplicateCluster>,
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            let root = self.find(self.parent[x]);
            self.parent[x] = root;
        }
        self.parent[x]
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Finds near-duplicate clusters and keeps one record per cluster.
///
/// Candidate pairs come from shared LSH band buckets, are verified at the
/// Jaccard threshold (signature estimate, or exact shingle Jaccard under
/// `exact_verify`), and clustered transitively. The keeper is the member with
/// the highest quality, ties toward the smaller record id. Deterministic and
/// independent of input order up to input indices.
pub fn dedup(items: &[DedupItem], cfg: &DedupConfig) -> Result<DedupOutcome, DedupError> {
    cfg.validate()?;
    let n = items.len();
    if n == 0 {
        return Ok(DedupOutcome::default());
    }

    let signatures: Vec<MinHashSignature> = items
        .par_iter()
        .map(|it| minhash_signature(&it.caption, cfg.permutations, cfg.shingle_words, cfg.seed))
        .collect();

    // Band buckets -> candidate pairs (sorted for determinism).
    let mut candidates: BTreeSet<(usize, usize)> = BTreeSet::new();
    for band in 0..cfg.bands {
        let mut buckets: HashMap<u64, Vec<usize>> = HashMap::new();
        for (i, sig) in signatures.iter().enumerate() {
            let start = band * cfg.rows;
            let mut key = splitmix64(band as u64 ^ cfg.seed);
            for &h in &sig.hashes[start..start + cfg.rows] {
                key = splitmix64(key ^ h);
            }
            buckets.entry(key).or_default().push(i);
        }
        for group in buckets.values() {
            for (ai, &a) in group.iter().enumerate() {
                for &b in &group[ai + 1..] {
                    candidates.insert((a.min(b), a.max(b)));
                }
            }
        }
    }

    // Verify and cluster. Pair estimates keep sorted order so the cluster
    // mean sums in a fixed order and stays bit-stable across runs.
    let mut uf = UnionFind::new(n);
    let mut pair_estimates: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for &(a, b) in &candidates {
        let est = estimate_jaccard(&signatures[a], &signatures[b])?;
        let verified = if cfg.exact_verify {
            exact_jaccard(&items[a].caption, &items[b].caption, cfg.shingle_words)
                >= cfg.jaccard_threshold
        } else {
            est >= cfg.jaccard_threshold
        };
        if verified {
            uf.union(a, b);
            pair_estimates.insert((a, b), est);
        }
    }

    let mut components: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in 0..n {
        components.entry(uf.find(i)).or_default().push(i);
    }

    let mut outcome = DedupOutcome::default();
    let mut roots: Vec<usize> = components.keys().copied().collect();
    roots.sort_unstable();
    let mut retained_set = vec![false; n];
    for root in roots {
        let members = &components[&root];
        if members.len() == 1 {
            retained_set[members[0]] = true;
            continue;
        }
        let keeper = *members
            .iter()
            .min_by(|&&a, &&b| {
                items[b]
                    .quality
                    .total_cmp(&items[a].quality)
                    .then_with(|| items[a].record_id.cmp(&items[b].record_id))
            })
            .unwrap();
        retained_set[keeper] = true;
        let mut member_ids: Vec<String> = members
            .iter()
            .filter(|&&m| m != keeper)
            .map(|&m| items[m].record_id.clone())
            .collect();
        member_ids.sort();
        let estimates: Vec<f64> = pair_estimates
            .iter()
            .filter(|(&(a, b), _)| members.contains(&a) && members.contains(&b))
            .map(|(_, &e)| e)
            .collect();
        let mean = estimates.iter().sum::<f64>() / estimates.len().max(1) as f64;
        outcome.clusters.push(DuplicateCluster {
            keeper_id: items[keeper].record_id.clone(),
            member_ids,
            mean_estimated_jaccard: mean,
        });
        for &m in members {
            if m != keeper {
                outcome.rejected.push((
                    m,
                    format!("duplicate-of:{}", items[keeper].record_id),
                ));
            }
        }
    }
    outcome.retained = (0..n).filter(|&i| retained_set[i]).collect();
    outcome.clusters.sort_by(|a, b| a.keeper_id.cmp(&b.keeper_id));
    outcome.rejected.sort_by_key(|&(i, _)| i);
    Ok(outcome)
}
