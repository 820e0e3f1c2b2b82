//! Acceptance gate: eleven checks covering the quantitative behavior the
//! toolkit promises, from codec layout up through full-pipeline determinism.
//! Each check prints exactly one PASS/FAIL line. Tolerances are pinned in
//! the assertions themselves.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::panic::{catch_unwind, resume_unwind, UnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use curate_core::cfg::{apply_guidance, sample_token};
use curate_core::codec::{deinterleave, flat_len, interleave, TokenGrid};
use curate_core::cycle::{cosine, run_cycle, CycleItem, Direction};
use curate_core::dedup::{dedup, exact_jaccard, estimate_jaccard, minhash_signature, DedupConfig, DedupItem};
use curate_core::fusion::percentile_ranks;
use curate_core::judge::{JudgeClient, SftJudgeScores};
use curate_core::mixture::{plan_mixture, weight_ratio, BudgetConfig, Inventory, Track};
use curate_core::pack::{pack_sequences, Modality, PackItem};
use curate_core::record::{Category, CurationRecord};
use curate_core::resample::gumbel_topk;
use curate_core::sft::{
    retention_decision, simulate_generation, simulate_understanding, DiversityConfig, SftKind,
    GENERATION_FIELDS, UNDERSTANDING_FIELDS,
};
use curate_core::text_rules::{apply_rules, compute_text_stats, RuleConfig, WhitespaceTokenizer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn criterion<F: FnOnce() + UnwindSafe>(n: u32, label: &str, f: F) {
    match catch_unwind(f) {
        Ok(()) => println!("acceptance {n:02} ({label}): PASS"),
        Err(e) => {
            println!("acceptance {n:02} ({label}): FAIL");
            resume_unwind(e);
        }
    }
}

// ---------------------------------------------------------------------------
// 1. Codec layout round trip

#[test]
fn a01_codec_layout_round_trip() {
    criterion(1, "codec layout round trip", || {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(0xA01);
        for _ in 0..1000 {
            let frames = rng.gen_range(1..=64usize);
            let codebooks = 8usize;
            let data: Vec<u32> = (0..frames * codebooks).map(|_| rng.gen_range(0..4096)).collect();
            let grid = TokenGrid::new(frames, codebooks, data).unwrap();
            let pad = 0xFFFF;
            let flat = interleave(&grid, pad);
            assert_eq!(flat.len(), (frames + codebooks - 1) * codebooks);
            assert_eq!(flat.len(), flat_len(frames, codebooks));
            let back = deinterleave(&flat, frames, codebooks, pad).unwrap();
            assert_eq!(back.data(), grid.data());
        }
        assert!(start.elapsed().as_secs_f64() < 1.0, "took {:?}", start.elapsed());
    });
}

// ---------------------------------------------------------------------------
// 2. MinHash estimator accuracy + dedup against a brute-force oracle

/// Two word sets with exact Jaccard `inter / (inter + 2 * uniq)`.
fn jaccard_pair(trial: usize, inter: usize, uniq: usize) -> (String, String) {
    let shared: Vec<String> = (0..inter).map(|i| format!("t{trial}i{i}")).collect();
    let only_a: Vec<String> = (0..uniq).map(|i| format!("t{trial}a{i}")).collect();
    let only_b: Vec<String> = (0..uniq).map(|i| format!("t{trial}b{i}")).collect();
    let a = shared.iter().chain(&only_a).cloned().collect::<Vec<_>>().join(" ");
    let b = shared.iter().chain(&only_b).cloned().collect::<Vec<_>>().join(" ");
    (a, b)
}

#[test]
fn a02_minhash_estimator_and_dedup_oracle() {
    criterion(2, "minhash estimator + dedup oracle", || {
        // Estimator: mean absolute error at three exact Jaccard levels.
        for (inter, uniq) in [(20usize, 40usize), (50, 25), (80, 10)] {
            let union = inter + 2 * uniq;
            let truth = inter as f64 / union as f64;
            let mut abs_err_sum = 0.0;
            for trial in 0..200 {
                let (a, b) = jaccard_pair(trial, inter, uniq);
                assert_eq!(exact_jaccard(&a, &b, 1), truth);
                let seed = 0xACCE5 + trial as u64;
                let sa = minhash_signature(&a, 128, 1, seed);
                let sb = minhash_signature(&b, 128, 1, seed);
                abs_err_sum += (estimate_jaccard(&sa, &sb).unwrap() - truth).abs();
            }
            let mae = abs_err_sum / 200.0;
            assert!(mae <= 0.06, "MAE {mae} at J={truth}");
        }

        // Corpus: 50 groups of 4 docs. Doc 1 is a near-copy of doc 0
        // (59 of 61 distinct words shared); docs 2 and 3 overlap far below
        // the threshold.
        let base = |g: usize| -> Vec<String> { (0..60).map(|i| format!("g{g}w{i}")).collect() };
        let mut items = Vec::new();
        for g in 0..50 {
            let b = base(g);
            let mut near = b[..59].to_vec();
            near.push(format!("g{g}alt"));
            let far1: Vec<String> =
                b[..20].iter().cloned().chain((0..40).map(|i| format!("g{g}x{i}"))).collect();
            let far2: Vec<String> =
                b[..15].iter().cloned().chain((0..45).map(|i| format!("g{g}y{i}"))).collect();
            for (d, words) in [(0, b), (1, near), (2, far1), (3, far2)] {
                items.push(DedupItem {
                    record_id: format!("doc{:03}", g * 4 + d),
                    caption: words.join(" "),
                    quality: 1.0 - (g * 4 + d) as f64 * 1e-3,
                });
            }
        }
        let n = items.len();
        assert_eq!(n, 200);

        // Brute-force oracle: exactly the 50 (doc0, doc1) pairs reach 0.8.
        let mut oracle_dups: BTreeSet<(usize, usize)> = BTreeSet::new();
        for i in 0..n {
            for j in i + 1..n {
                if exact_jaccard(&items[i].caption, &items[j].caption, 1) >= 0.8 {
                    oracle_dups.insert((i, j));
                }
            }
        }
        let expected: BTreeSet<(usize, usize)> = (0..50).map(|g| (g * 4, g * 4 + 1)).collect();
        assert_eq!(oracle_dups, expected);

        let cfg = DedupConfig { shingle_words: 1, ..DedupConfig::default() };
        let outcome = dedup(&items, &cfg).unwrap();
        let removed: BTreeSet<usize> = outcome.rejected.iter().map(|(i, _)| *i).collect();
        assert_eq!(removed, (0..50).map(|g| g * 4 + 1).collect::<BTreeSet<_>>());

        // Zero false removals: every removed doc really is a duplicate of
        // the keeper it was attributed to.
        for (idx, reason) in &outcome.rejected {
            let keeper_id = reason.strip_prefix("duplicate-of:").unwrap();
            let keeper = items.iter().find(|it| it.record_id == *keeper_id).unwrap();
            let j = exact_jaccard(&items[*idx].caption, &keeper.caption, 1);
            assert!(j >= 0.8, "false removal of {} (J={j})", items[*idx].record_id);
        }
        // And nothing retained still duplicates anything else retained.
        for (a, &i) in outcome.retained.iter().enumerate() {
            for &j in &outcome.retained[a + 1..] {
                let jac = exact_jaccard(&items[i].caption, &items[j].caption, 1);
                assert!(jac < 0.8, "missed duplicate pair ({i}, {j}) J={jac}");
            }
        }
    });
}

// ---------------------------------------------------------------------------
// 3. Gumbel Top-k vs deterministic top-k and Plackett-Luce enumeration

#[test]
fn a03_gumbel_topk_matches_plackett_luce() {
    criterion(3, "gumbel top-k vs plackett-luce", || {
        let start = Instant::now();

        // Temperature 0 equals deterministic top-k (score desc, id asc).
        let mut rng = ChaCha8Rng::seed_from_u64(0xA03);
        for t in 0..100 {
            let n = 5 + t % 32;
            let ids: Vec<String> = (0..n).map(|i| format!("id{i:02}")).collect();
            let id_refs: Vec<&str> = ids.iter().map(String::as_str).collect();
            let mut scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            if t % 3 == 0 {
                scores[1] = scores[0]; // exercise the id tie-break
            }
            let k = 1 + t % n;
            let got = gumbel_topk(&id_refs, &scores, 0.0, k, 99).unwrap();
            let mut want: Vec<usize> = (0..n).collect();
            want.sort_by(|&a, &b| {
                scores[b].total_cmp(&scores[a]).then_with(|| id_refs[a].cmp(id_refs[b]))
            });
            want.truncate(k);
            assert_eq!(got, want, "trial {t}");
        }

        // n=5, k=2, temperature 1: inclusion frequencies against the exact
        // Plackett-Luce enumeration.
        let scores: [f64; 5] = [0.7, -0.2, 1.3, 0.0, -1.1];
        let ids = ["a", "b", "c", "d", "e"];
        let w: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        let total: f64 = w.iter().sum();
        let exact: Vec<f64> = (0..5)
            .map(|i| {
                let first = w[i] / total;
                let second: f64 = (0..5)
                    .filter(|&j| j != i)
                    .map(|j| (w[j] / total) * (w[i] / (total - w[j])))
                    .sum();
                first + second
            })
            .collect();
        let trials = 20_000;
        let mut counts = [0usize; 5];
        for t in 0..trials {
            for idx in gumbel_topk(&ids, &scores, 1.0, 2, 0xA3000 + t as u64).unwrap() {
                counts[idx] += 1;
            }
        }
        for i in 0..5 {
            let freq = counts[i] as f64 / trials as f64;
            assert!(
                (freq - exact[i]).abs() <= 0.02,
                "item {i}: freq {freq} vs exact {}",
                exact[i]
            );
        }
        assert!(start.elapsed().as_secs_f64() < 10.0, "took {:?}", start.elapsed());
    });
}

// ---------------------------------------------------------------------------
// 4. Percentile ranks vs the O(n^2) counting oracle

#[test]
fn a04_percentile_fusion_matches_counting_oracle() {
    criterion(4, "percentile ranks vs counting oracle", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0xA04);
        for t in 0..100 {
            let n = 1 + (t * 13) % 1000;
            let mut values: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            if t % 2 == 0 {
                // Quantize to force tie groups.
                for v in &mut values {
                    *v = (*v * 10.0).floor() / 10.0;
                }
            }
            let got = percentile_ranks(&values).unwrap();
            for i in 0..n {
                let less = values.iter().filter(|&&v| v < values[i]).count();
                let equal_others =
                    values.iter().enumerate().filter(|&(j, &v)| j != i && v == values[i]).count();
                let want = (less as f64 + 0.5 * equal_others as f64 + 0.5) / n as f64;
                assert_eq!(got[i], want, "set {t}, index {i}");
            }

            // Strictly increasing transforms leave every percentile intact.
            let transformed: Vec<f64> = values.iter().map(|v| (v * 3.0).exp() + v).collect();
            assert_eq!(percentile_ranks(&transformed).unwrap(), got, "set {t} transform");
        }
    });
}

// ---------------------------------------------------------------------------
// 5. Text rules: 40 hand-labeled boundary cases

fn words(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i:03}x")).collect()
}

fn caption_record(id: &str, caption: String, flag: bool) -> CurationRecord {
    let mut rec = CurationRecord::new(id, "audio.wav", 10.0, caption);
    rec.incomplete_flag = flag;
    rec
}

/// `copies` of a fixed 5-word phrase, each separated by a distinct word,
/// padded with distinct words to `total` tokens. Every repetition past the
/// first duplicates exactly one 5-gram window.
fn phrase_dup_caption(copies: usize, total: usize) -> String {
    let phrase = ["prime", "quill", "rover", "stump", "tonic"];
    let mut tokens: Vec<String> = Vec::new();
    for c in 0..copies {
        if c > 0 {
            tokens.push(format!("sep{c:03}q"));
        }
        tokens.extend(phrase.iter().map(|w| w.to_string()));
    }
    let pad = total - tokens.len();
    tokens.extend(words("fill", pad));
    assert_eq!(tokens.len(), total);
    tokens.join(" ")
}

/// `periods` blocks of [x_i, young, zonal, under, vivid] plus `pads`
/// distinct words: total = 5*periods + pads tokens, periods + 4 + pads
/// distinct, and no duplicated 5-gram (every window contains one unique x).
fn low_diversity_caption(periods: usize, pads: usize) -> String {
    let mut tokens: Vec<String> = Vec::new();
    for i in 0..periods {
        tokens.push(format!("sx{i:02}q"));
        for fixed in ["young", "zonal", "under", "vivid"] {
            tokens.push(fixed.to_string());
        }
    }
    tokens.extend(words("pd", pads));
    tokens.join(" ")
}

/// `n` distinct words of exactly `len` chars, built from a run-free prefix
/// plus a base-26 suffix (longest run is 3).
fn fixed_len_words(n: usize, len: usize) -> Vec<String> {
    let prefix: String = "bcdfghjklmnprstvwz".chars().cycle().take(len - 3).collect();
    (0..n)
        .map(|i| {
            let suffix: String = [i / 676 % 26, i / 26 % 26, i % 26]
                .into_iter()
                .map(|d| (b'a' + d as u8) as char)
                .collect();
            format!("{prefix}{suffix}")
        })
        .collect()
}

#[test]
fn a05_text_rules_forty_case_corpus() {
    criterion(5, "text rules boundary corpus", || {
        let baseline = words("w", 240).join(" ");
        let two_char: Vec<String> = ('a'..='z')
            .flat_map(|c1| ('a'..='z').map(move |c2| format!("{c1}{c2}")))
            .take(200)
            .collect();
        let mut short_mix = two_char[..199].to_vec();
        short_mix.push("q".into());
        let fifteen = fixed_len_words(200, 15).join(" ");
        let sixteen = fixed_len_words(200, 16).join(" ");
        let mut mixed_long = fixed_len_words(190, 15);
        mixed_long.extend(fixed_len_words(10, 16).iter().map(|w| format!("q{}", &w[1..])));
        let adjacent_blocks = ["prime", "quill", "rover", "stump", "tonic"]
            .iter()
            .cycle()
            .take(105)
            .copied()
            .collect::<Vec<_>>()
            .join(" ");

        // (name, record, expected first failed rule)
        let cases: Vec<(&str, CurationRecord, Option<u8>)> = vec![
            ("pass baseline", caption_record("c01", baseline.clone(), false), None),
            ("rule1 flag", caption_record("c02", baseline.clone(), true), Some(1)),
            ("rule1 beats non-latin", caption_record("c03", format!("{baseline} 音"), true), Some(1)),
            ("rule2 cjk", caption_record("c04", format!("{baseline} 音"), false), Some(2)),
            ("rule2 beats char run", caption_record("c05", format!("{baseline} 音 zzzzzzzzz"), false), Some(2)),
            ("rule2 cyrillic", caption_record("c06", format!("{baseline} шум"), false), Some(2)),
            ("rule2 greek", caption_record("c07", format!("{baseline} μουσική"), false), Some(2)),
            ("rule3 run of 5", caption_record("c08", format!("{baseline} aaaaa"), false), Some(3)),
            ("pass run of 4", caption_record("c09", format!("{baseline} aaaa"), false), None),
            ("rule3 beats word repeat", caption_record("c10", format!("{baseline} aaaaa go go go"), false), Some(3)),
            ("rule3 digit run", caption_record("c11", format!("{baseline} x9999999y"), false), Some(3)),
            ("rule3 run of 9", caption_record("c12", format!("{baseline} zzzzzzzzz"), false), Some(3)),
            ("pass run split by spaces", caption_record("c13", format!("{baseline} aa aa"), false), None),
            ("rule4 triple word", caption_record("c14", format!("{baseline} echo echo echo"), false), Some(4)),
            ("pass double word", caption_record("c15", format!("{baseline} echo echo"), false), None),
            ("rule4 quadruple word", caption_record("c16", format!("{baseline} echo echo echo echo"), false), Some(4)),
            ("rule4 punct tokens", caption_record("c17", format!("{baseline} --- --- ---"), false), Some(4)),
            ("rule5 ratio exactly 0.10", caption_record("c18", phrase_dup_caption(21, 204), false), Some(5)),
            ("pass ratio 0.095", caption_record("c19", phrase_dup_caption(20, 204), false), None),
            ("rule5 adjacent blocks", caption_record("c20", adjacent_blocks, false), Some(5)),
            ("rule6 ratio exactly 0.30", caption_record("c21", low_diversity_caption(36, 20), false), Some(6)),
            ("pass ratio 0.303", caption_record("c22", low_diversity_caption(36, 21), false), None),
            ("rule6 ratio 0.255", caption_record("c23", low_diversity_caption(36, 8), false), Some(6)),
            ("rule7 avg 1.995", caption_record("c24", short_mix.join(" "), false), Some(7)),
            ("pass avg exactly 2", caption_record("c25", two_char.join(" "), false), None),
            ("rule7 avg 16", caption_record("c26", sixteen, false), Some(7)),
            ("pass avg exactly 15", caption_record("c27", fifteen, false), None),
            ("rule7 avg 15.05", caption_record("c28", mixed_long.join(" "), false), Some(7)),
            ("rule7 empty caption", caption_record("c29", String::new(), false), Some(7)),
            ("rule7 whitespace only", caption_record("c30", "   ".into(), false), Some(7)),
            ("rule8 199 tokens", caption_record("c31", words("w", 199).join(" "), false), Some(8)),
            ("pass 200 tokens", caption_record("c32", words("w", 200).join(" "), false), None),
            ("pass 800 tokens", caption_record("c33", words("w", 800).join(" "), false), None),
            ("rule8 801 tokens", caption_record("c34", words("w", 801).join(" "), false), Some(8)),
            ("rule8 single word", caption_record("c35", "hello".into(), false), Some(8)),
            ("rule8 1200 tokens", caption_record("c36", words("w", 1200).join(" "), false), Some(8)),
            ("rule1 beats rule8", caption_record("c37", words("w", 199).join(" "), true), Some(1)),
            ("pass diacritics", caption_record("c38", format!("{baseline} café naïve façade"), false), None),
            ("pass digits and symbols", caption_record("c39", format!("{baseline} caf\u{00E9} 123 gr\u{00FC}\u{00DF} !?"), false), None),
            ("pass near-boundary mix", caption_record("c40", format!("{} aaaa echo echo", low_diversity_caption(36, 21)), false), None),
        ];
        assert_eq!(cases.len(), 40);

        let cfg = RuleConfig::default();
        let tok = WhitespaceTokenizer;
        for (name, rec, expected) in &cases {
            let stats = compute_text_stats(&rec.caption, &tok);
            let verdict = apply_rules(rec, &stats, &cfg);
            assert_eq!(
                verdict.failed_rule, *expected,
                "case {name:?}: got {:?} ({}), want {expected:?}",
                verdict.failed_rule, verdict.detail
            );
        }
    });
}

// ---------------------------------------------------------------------------
// 6. Mixture plan figures

#[test]
fn a06_mixture_plan_ratios() {
    criterion(6, "mixture plan ratios", || {
        // 600 at 2:1:1 with an even inventory: 300/150/150 track targets,
        // 100-per-category and 50-per-category cells.
        let cfg = BudgetConfig {
            total_tokens: 600,
            track_ratio: [2, 1, 1],
            text_available_tokens: 300,
            seed: 1,
        };
        let inv = Inventory { speech_tokens: 1000, music_tokens: 1000, sfx_tokens: 1000 };
        let plan = plan_mixture(&inv, &cfg).unwrap();
        assert_eq!(plan.track_targets, [300, 150, 150]);
        for cat in Category::KNOWN {
            assert_eq!(plan.cell(Track::TextToAudio, Some(cat)).unwrap().target_tokens, 100);
            assert_eq!(plan.cell(Track::AudioToText, Some(cat)).unwrap().target_tokens, 50);
        }
        assert_eq!(plan.cell(Track::TextOnly, None).unwrap().target_tokens, 150);

        // Skewed inventories: weight ratios come out exact.
        let budget = BudgetConfig {
            total_tokens: 60_000,
            track_ratio: [2, 1, 1],
            text_available_tokens: 30_000,
            seed: 1,
        };
        let skew811 = Inventory { speech_tokens: 8000, music_tokens: 1000, sfx_tokens: 1000 };
        let plan811 = plan_mixture(&skew811, &budget).unwrap();
        let speech = plan811.cell(Track::TextToAudio, Some(Category::Speech)).unwrap();
        let music = plan811.cell(Track::TextToAudio, Some(Category::Music)).unwrap();
        assert_eq!(speech.weight, 1.25);
        assert_eq!(weight_ratio(music, speech), Some(8.0));

        let skew833 = Inventory { speech_tokens: 8000, music_tokens: 3000, sfx_tokens: 3000 };
        let plan833 = plan_mixture(&skew833, &budget).unwrap();
        let speech = plan833.cell(Track::TextToAudio, Some(Category::Speech)).unwrap();
        let music = plan833.cell(Track::TextToAudio, Some(Category::Music)).unwrap();
        let sfx = plan833.cell(Track::TextToAudio, Some(Category::Sfx)).unwrap();
        assert_eq!(weight_ratio(music, speech), Some(8.0 / 3.0));
        assert_eq!(weight_ratio(sfx, speech), Some(8.0 / 3.0));
        // The under-represented categories sit in the 3-4x up-sampling band.
        assert!(music.weight >= 3.0 && music.weight <= 4.0, "music weight {}", music.weight);
    });
}

// ---------------------------------------------------------------------------
// 7. Packing a lognormal corpus

fn lognormal_items(seed: u64, n: usize, capacity: u32) -> Vec<PackItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mu = 400f64.ln();
    let sigma = 0.5;
    (0..n)
        .map(|i| {
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen();
            let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
            let len = ((mu + sigma * z).exp().round() as u32).clamp(1, capacity);
            let modality = if i % 2 == 0 { Modality::Audio } else { Modality::Text };
            PackItem { id: format!("s{i:05}"), modality, len, target_len: len / 2 }
        })
        .collect()
}

#[test]
fn a07_packing_lognormal_corpus() {
    criterion(7, "packing lognormal corpus", || {
        let capacity = 8192;
        let mut packs_checked = 0usize;
        for seed in [11u64, 12] {
            let items = lognormal_items(seed, 10_000, capacity);
            let outcome = pack_sequences(&items, capacity).unwrap();
            assert!(outcome.rejected.is_empty(), "{:?}", outcome.rejected);

            // No overflow, every sample placed exactly once.
            let mut seen: HashSet<&str> = HashSet::new();
            let mut placed = 0usize;
            for pack in &outcome.packs {
                assert!(pack.used <= capacity, "pack {} over capacity", pack.index);
                for span in &pack.spans {
                    assert!(seen.insert(&span.id), "{} placed twice", span.id);
                    placed += 1;
                }
            }
            assert_eq!(placed, items.len());

            assert!(
                outcome.mean_utilization() >= 0.80,
                "utilization {}",
                outcome.mean_utilization()
            );

            // Every pack built while both modality queues were nonempty is
            // mixed.
            let mut audio_left = items.iter().filter(|it| it.modality == Modality::Audio).count();
            let mut text_left = items.len() - audio_left;
            for pack in &outcome.packs {
                if audio_left > 0 && text_left > 0 {
                    assert!(pack.mixed, "pack {} unmixed with both queues nonempty", pack.index);
                }
                for span in &pack.spans {
                    match span.modality {
                        Modality::Audio => audio_left -= 1,
                        Modality::Text => text_left -= 1,
                    }
                }
            }

            // Loss mask popcount equals the summed target lengths.
            for pack in &outcome.packs {
                let want: u32 = pack.spans.iter().map(|s| s.target_len).sum();
                let got: u32 = pack.loss_mask().iter().map(|&b| b as u32).sum();
                assert_eq!(got, want, "pack {}", pack.index);
                packs_checked += 1;
            }
        }
        assert!(packs_checked >= 1000, "only {packs_checked} packs checked");
    });
}

// ---------------------------------------------------------------------------
// 8. Guidance identities and sampling distribution

#[test]
fn a08_cfg_guidance_and_sampling() {
    criterion(8, "guidance identities + sampling", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0xA08);

        // Scale 1 reproduces the conditional logits exactly; equal logits
        // are a fixed point at any scale.
        for _ in 0..100 {
            let n = rng.gen_range(1..=32usize);
            let cond: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let uncond: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
            assert_eq!(apply_guidance(&cond, &uncond, 1.0).unwrap(), cond);
            let scale = rng.gen_range(0.0..8.0);
            assert_eq!(apply_guidance(&cond, &cond, scale).unwrap(), cond);
        }

        // Hand value: uncond -2, cond 4, scale 3 -> -2 + 3*6 = 16.
        assert_eq!(apply_guidance(&[4.0], &[-2.0], 3.0).unwrap(), vec![16.0]);

        // 50,000 draws against the truncated softmax.
        let logits = [2.0, 1.0, 0.0, -1.0, -5.0];
        let (temperature, top_k) = (0.9, 3);
        let scaled: Vec<f64> = logits[..top_k].iter().map(|l| l / temperature).collect();
        let m = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scaled.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        let probs: Vec<f64> = exps.iter().map(|e| e / z).collect();

        let draws = 50_000;
        let mut counts = [0usize; 5];
        for _ in 0..draws {
            counts[sample_token(&logits, temperature, top_k, &mut rng).unwrap()] += 1;
        }
        assert_eq!(counts[3] + counts[4], 0, "sampled outside top-k");
        let mut chi2 = 0.0;
        for i in 0..top_k {
            let freq = counts[i] as f64 / draws as f64;
            assert!((freq - probs[i]).abs() <= 0.02, "symbol {i}: {freq} vs {}", probs[i]);
            let expected = probs[i] * draws as f64;
            chi2 += (counts[i] as f64 - expected).powi(2) / expected;
        }
        // Chi-squared critical value at p = 0.01 with 2 degrees of freedom.
        assert!(chi2 < 9.21034, "chi2 {chi2}");
    });
}

// ---------------------------------------------------------------------------
// 9. SFT judge gate and template layout

fn golden_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn check_golden(name: &str, actual: &str) {
    let path = golden_path(name);
    if std::env::var("GOLDEN_BLESS").is_ok() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let want = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("missing golden file {}: {e}", path.display()));
    assert_eq!(actual, want, "golden mismatch for {name}");
}

#[test]
fn a09_sft_judge_gate_and_templates() {
    criterion(9, "sft judge gate + templates", || {
        // Boundary: mean exactly 3.0 is rejected, 3.2 is retained.
        let flat3 = SftJudgeScores {
            request_diversity: 3,
            request_response_alignment: 3,
            thinking_coherence: 3,
            caption_quality: 3,
            training_value: 3,
        };
        assert_eq!(flat3.mean(), 3.0);
        assert!(!retention_decision(&flat3));
        let above = SftJudgeScores { training_value: 4, ..flat3 };
        assert_eq!(above.mean(), 3.2);
        assert!(retention_decision(&above));

        // Field order in simulated samples follows the two templates.
        let mut rec = CurationRecord::new(
            "golden-001",
            "clips/golden-001.wav",
            12.5,
            "A slow acoustic guitar figure repeats under soft rainfall while a \
             distant train horn fades in and out of the mix.",
        );
        rec.category = Category::Music;
        let client = JudgeClient::mock(7);
        let div = DiversityConfig::builtin();
        let und = simulate_understanding(&rec, &client, &div, 7).unwrap();
        let gen = simulate_generation(&rec, &client, &div, 7).unwrap();
        assert!(!und.samples.is_empty() && !gen.samples.is_empty());
        for s in &und.samples {
            assert_eq!(s.kind, SftKind::Understanding);
            let fields: Vec<&str> = s.sequence.iter().map(|(f, _)| f.as_str()).collect();
            assert_eq!(fields, UNDERSTANDING_FIELDS);
        }
        for s in &gen.samples {
            assert_eq!(s.kind, SftKind::Generation);
            let fields: Vec<&str> = s.sequence.iter().map(|(f, _)| f.as_str()).collect();
            assert_eq!(fields, GENERATION_FIELDS);
        }

        check_golden("understanding.txt", &und.samples[0].render());
        check_golden("generation.txt", &gen.samples[0].render());
    });
}

// ---------------------------------------------------------------------------
// 10. End-to-end determinism through the binary

fn walk_files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn visit(dir: &Path, root: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                visit(&path, root, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    visit(root, root, &mut out);
    out
}

fn run_binary(args: &[&str], dir: &Path) {
    let status = Command::new(env!("CARGO_BIN_EXE_curate"))
        .args(args)
        .current_dir(dir)
        .status()
        .expect("binary runs");
    assert!(status.success(), "curate {args:?} failed in {}", dir.display());
}

fn pipeline_run(base: &Path, shards: usize) {
    std::fs::create_dir_all(base.join("data")).unwrap();
    run_binary(&["synth", "--out", "data/raw.jsonl", "--count", "1000", "--seed", "7"], base);
    std::fs::write(
        base.join("curate.toml"),
        format!("[run]\nglobal_seed = 42\nshard_count = {shards}\n"),
    )
    .unwrap();
    run_binary(&["run", "--config", "curate.toml"], base);
}

#[test]
fn a10_end_to_end_determinism() {
    criterion(10, "end-to-end determinism", || {
        let start = Instant::now();
        let tmp = tempfile::tempdir().unwrap();

        // Same seed, two runs: every artifact byte-identical, reports
        // included.
        let a = tmp.path().join("a");
        let b = tmp.path().join("b");
        pipeline_run(&a, 1);
        pipeline_run(&b, 1);
        let files_a = walk_files(&a.join("run"));
        let files_b = walk_files(&b.join("run"));
        assert_eq!(
            files_a.keys().collect::<Vec<_>>(),
            files_b.keys().collect::<Vec<_>>()
        );
        for (name, bytes) in &files_a {
            assert_eq!(bytes, &files_b[name], "file {name} differs between identical runs");
        }
        assert!(files_a.keys().any(|k| k.starts_with("reports/")));

        // Worker count changes nothing about the data artifacts.
        let c = tmp.path().join("c");
        let d = tmp.path().join("d");
        pipeline_run(&c, 4);
        pipeline_run(&d, 16);
        let data_files: Vec<&str> = files_a
            .keys()
            .map(String::as_str)
            .filter(|k| !k.starts_with("reports/")) // reports embed the config text
            .collect();
        assert!(data_files.iter().any(|k| k.ends_with("packs.jsonl")));
        for variant in [&c, &d] {
            let files_v = walk_files(&variant.join("run"));
            for name in &data_files {
                assert_eq!(
                    &files_a[*name],
                    files_v.get(*name).unwrap_or_else(|| panic!("{name} missing")),
                    "file {name} differs across shard counts"
                );
            }
        }
        assert!(start.elapsed().as_secs_f64() < 120.0, "took {:?}", start.elapsed());
    });
}

// ---------------------------------------------------------------------------
// 11. Cycle harness identities

#[test]
fn a11_cycle_harness_identity() {
    criterion(11, "cycle harness identity", || {
        // Identity endpoints: similarity is exactly 1 in both directions.
        let client = JudgeClient::mock(5);
        let items: Vec<CycleItem> = (0..16)
            .map(|i| CycleItem {
                record_id: format!("cyc{i:02}"),
                payload: format!("payload text number {i} with a few words"),
            })
            .collect();
        for direction in [Direction::A2t2a, Direction::T2a2t] {
            let result = run_cycle(&items, direction, &client);
            assert_eq!(result.failures, 0);
            assert_eq!(result.count, items.len());
            assert_eq!(result.mean, Some(1.0), "direction {direction:?}");
            assert!(result.similarities.iter().all(|(_, s)| *s == 1.0));
        }

        // Hand value: cos((1,2,2), (2,1,2)) = 8/9.
        let got: f64 = cosine(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0]).unwrap();
        assert!((got - 8.0 / 9.0).abs() < 1e-12, "{got}");
    });
}
