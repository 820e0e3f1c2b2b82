//! Heuristic caption filtering.
//!
//! Eight ordered rules reject degenerate captions: incompleteness, non-Latin
//! text, character runs, consecutive word repeats, duplicated word 5-grams,
//! low vocabulary diversity, implausible word lengths, and out-of-range
//! token counts. A record fails on the lowest-numbered violated rule.

use serde::{Deserialize, Serialize};

use crate::record::CurationRecord;

/// Word splitter used for token-level statistics.
///
/// The default splits on Unicode whitespace; callers with a domain tokenizer
/// can substitute their own.
pub trait Tokenizer {
    fn tokens<'a>(&self, text: &'a str) -> Vec<&'a str>;
}

/// Whitespace word splitter.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn tokens<'a>(&self, text: &'a str) -> Vec<&'a str> {
        text.split_whitespace().collect()
    }
}

/// Caption statistics consumed by the rules.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TextStats {
    /// Longest run of one identical non-whitespace character; whitespace
    /// breaks runs and never counts.
    pub max_char_run: usize,
    /// Longest run of one identical token.
    pub max_consec_word_repeat: usize,
    /// Fraction of word 5-grams that are repeats of an earlier occurrence;
    /// 0 when the caption has fewer than five tokens.
    pub fivegram_dup_ratio: f64,
    /// Distinct tokens over total tokens; 1 for an empty caption.
    pub unique_word_ratio: f64,
    /// Mean token length in chars; 0 for an empty caption.
    pub avg_word_len: f64,
    pub token_count: usize,
    /// True when any alphabetic character is outside the Latin repertoire.
    pub has_non_latin: bool,
}

/// Latin letters: ASCII, Latin-1 supplement (minus × ÷), Latin Extended-A/B,
/// and Latin Extended Additional. Covers common diacritics.
fn is_latin_letter(c: char) -> bool {
    c.is_ascii_alphabetic()
        || (('\u{00C0}'..='\u{00FF}').contains(&c) && c != '\u{00D7}' && c != '\u{00F7}')
        || ('\u{0100}'..='\u{024F}').contains(&c)
        || ('\u{1E00}'..='\u{1EFF}').contains(&c)
}

/// True when the text contains an alphabetic character outside the Latin
/// repertoire. Digits, punctuation, and symbols never trigger this.
pub fn contains_non_latin(text: &str) -> bool {
    text.chars().any(|c| c.is_alphabetic() && !is_latin_letter(c))
}

/// Computes every statistic the rules need in one pass.
pub fn compute_text_stats(caption: &str, tokenizer: &dyn Tokenizer) -> TextStats {
    let mut max_char_run = 0usize;
    let mut run = 0usize;
    let mut prev: Option<char> = None;
    for c in caption.chars() {
        if c.is_whitespace() {
            run = 0;
            prev = None;
            continue;
        }
        run = if prev == Some(c) { run + 1 } else { 1 };
        max_char_run = max_char_run.max(run);
        prev = Some(c);
    }

    let tokens = tokenizer.tokens(caption);
    let n = tokens.len();

    let mut max_repeat = 0usize;
    let mut repeat = 0usize;
    let mut prev_tok: Option<&str> = None;
    for &t in &tokens {
        repeat = if prev_tok == Some(t) { repeat + 1 } else { 1 };
        max_repeat = max_repeat.max(repeat);
        prev_tok = Some(t);
    }

    let fivegram_dup_ratio = if n < 5 {
        0.0
    } else {
        let mut seen: std::collections::HashMap<&[&str], usize> = std::collections::HashMap::new();
        let mut dups = 0usize;
        for gram in tokens.windows(5) {
            let count = seen.entry(gram).or_insert(0);
            if *count > 0 {
                dups += 1;
            }
            *count += 1;
        }
        dups as f64 / (n - 4) as f64
    };

    let unique_word_ratio = if n == 0 {
        1.0
    } else {
        let distinct: std::collections::HashSet<&str> = tokens.iter().copied().collect();
        distinct.len() as f64 / n as f64
    };

    let avg_word_len = if n == 0 {
        0.0
    } else {
        tokens.iter().map(|t| t.chars().count()).sum::<usize>() as f64 / n as f64
    };

    TextStats {
        max_char_run,
        max_consec_word_repeat: max_repeat,
        fivegram_dup_ratio,
        unique_word_ratio,
        avg_word_len,
        token_count: n,
        has_non_latin: contains_non_latin(caption),
    }
}

/// Rule thresholds. Defaults encode the boundary semantics used throughout:
/// runs of 5+ reject while 4 passes, ratios at the threshold reject for
/// duplication and diversity, word-length and token-count bounds are
/// inclusive (exactly 2, 15, 200, or 800 pass).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuleConfig {
    pub reject_incomplete: bool,
    pub reject_non_latin: bool,
    /// Rule 3 rejects when `max_char_run >= max_char_run`.
    pub max_char_run: usize,
    /// Rule 4 rejects when `max_consec_word_repeat >= max_word_repeat`.
    pub max_word_repeat: usize,
    /// Rule 5 rejects when `fivegram_dup_ratio >= max_fivegram_dup_ratio`.
    pub max_fivegram_dup_ratio: f64,
    /// Rule 6 rejects when `unique_word_ratio <= min_unique_word_ratio`.
    pub min_unique_word_ratio: f64,
    /// Rule 7 rejects when `avg_word_len < min` or `> max` (strict).
    pub min_avg_word_len: f64,
    pub max_avg_word_len: f64,
    /// Rule 8 rejects when `token_count < min` or `> max` (strict).
    pub min_tokens: usize,
    pub max_tokens: usize,
}

impl Default for RuleConfig {
    fn default() -> Self {
        Self {
            reject_incomplete: true,
            reject_non_latin: true,
            max_char_run: 5,
            max_word_repeat: 3,
            max_fivegram_dup_ratio: 0.10,
            min_unique_word_ratio: 0.30,
            min_avg_word_len: 2.0,
            max_avg_word_len: 15.0,
            min_tokens: 200,
            max_tokens: 800,
        }
    }
}

/// Outcome of the rule cascade for one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub pass: bool,
    /// 1-based index of the first violated rule, if any.
    pub failed_rule: Option<u8>,
    pub detail: String,
}

impl FilterVerdict {
    fn pass() -> Self {
        Self {
            pass: true,
            failed_rule: None,
            detail: String::new(),
        }
    }

    fn fail(rule: u8, detail: String) -> Self {
        Self {
            pass: false,
            failed_rule: Some(rule),
            detail,
        }
    }
}

/// Runs rules 1-8 in order; the first violation decides the verdict.
pub fn apply_rules(
    record: &CurationRecord,
    stats: &TextStats,
    cfg: &RuleConfig,
) -> FilterVerdict {
    if cfg.reject_incomplete && record.incomplete_flag {
        return FilterVerdict::fail(1, "incomplete flag set".into());
    }
    if cfg.reject_non_latin && stats.has_non_latin {
        return FilterVerdict::fail(2, "non-Latin characters".into());
    }
    if stats.max_char_run >= cfg.max_char_run {
        return FilterVerdict::fail(
            3,
            format!("character run {} >= {}", stats.max_char_run, cfg.max_char_run),
        );
    }
    if stats.max_consec_word_repeat >= cfg.max_word_repeat {
        return FilterVerdict::fail(
            4,
            format!(
                "word repeated {} times consecutively (limit {})",
                stats.max_consec_word_repeat, cfg.max_word_repeat
            ),
        );
    }
    if stats.fivegram_dup_ratio >= cfg.max_fivegram_dup_ratio {
        return FilterVerdict::fail(
            5,
            format!(
                "5-gram duplication {:.4} >= {:.4}",
                stats.fivegram_dup_ratio, cfg.max_fivegram_dup_ratio
            ),
        );
    }
    if stats.unique_word_ratio <= cfg.min_unique_word_ratio {
        return FilterVerdict::fail(
            6,
            format!(
                "unique word ratio {:.4} <= {:.4}",
                stats.unique_word_ratio, cfg.min_unique_word_ratio
            ),
        );
    }
    if stats.avg_word_len < cfg.min_avg_word_len || stats.avg_word_len > cfg.max_avg_word_len {
        return FilterVerdict::fail(
            7,
            format!(
                "average word length {:.3} outside [{}, {}]",
                stats.avg_word_len, cfg.min_avg_word_len, cfg.max_avg_word_len
            ),
        );
    }
    if stats.token_count < cfg.min_tokens || stats.token_count > cfg.max_tokens {
        return FilterVerdict::fail(
            8,
            format!(
                "token count {} outside [{}, {}]",
                stats.token_count, cfg.min_tokens, cfg.max_tokens
            ),
        );
    }
    FilterVerdict::pass()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(caption: &str) -> TextStats {
        compute_text_stats(caption, &WhitespaceTokenizer)
    }

    #[test]
    fn char_run_counts_identical_chars() {
        assert_eq!(stats("aaaaab").max_char_run, 5);
        assert_eq!(stats("aaaab").max_char_run, 4);
        // Whitespace breaks runs.
        assert_eq!(stats("aa aa aa").max_char_run, 2);
    }

    #[test]
    fn word_repeat_counts_consecutive_tokens() {
        assert_eq!(stats("go go go now").max_consec_word_repeat, 3);
        assert_eq!(stats("go go now go").max_consec_word_repeat, 2);
        assert_eq!(stats("all distinct words here").max_consec_word_repeat, 1);
    }

    #[test]
    fn fivegram_ratio_on_twenty_tokens() {
        // 20 tokens, 16 5-grams, exactly one duplicated -> 1/16.
        let caption = "a b c d e u1 u2 u3 u4 u5 u6 u7 u8 u9 u10 a b c d e";
        let s = stats(caption);
        assert_eq!(s.token_count, 20);
        assert!((s.fivegram_dup_ratio - 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn fivegram_ratio_zero_below_five_tokens() {
        assert_eq!(stats("one two three four").fivegram_dup_ratio, 0.0);
    }

    #[test]
    fn empty_caption_degenerate_values() {
        let s = stats("");
        assert_eq!(s.token_count, 0);
        assert_eq!(s.fivegram_dup_ratio, 0.0);
        assert_eq!(s.unique_word_ratio, 1.0);
        assert_eq!(s.avg_word_len, 0.0);
        assert_eq!(s.max_char_run, 0);
    }

    #[test]
    fn non_latin_detection() {
        assert!(stats("the word 日本語 appears").has_non_latin);
        assert!(stats("кириллица here").has_non_latin);
        assert!(!stats("café naïve façade").has_non_latin);
        assert!(!stats("digits 123 and punctuation !?").has_non_latin);
    }

    #[test]
    fn stats_are_deterministic() {
        let caption = "a fixed caption with several words repeated words and more";
        assert_eq!(stats(caption), stats(caption));
    }

    fn clean_stats() -> TextStats {
        TextStats {
            max_char_run: 2,
            max_consec_word_repeat: 1,
            fivegram_dup_ratio: 0.0,
            unique_word_ratio: 0.9,
            avg_word_len: 4.5,
            token_count: 400,
            has_non_latin: false,
        }
    }

    #[test]
    fn rule_order_lowest_wins() {
        let mut rec = CurationRecord::new("r", "a", 1.0, "c");
        rec.incomplete_flag = true;
        let mut s = clean_stats();
        s.has_non_latin = true;
        s.max_char_run = 9;
        let v = apply_rules(&rec, &s, &RuleConfig::default());
        assert_eq!(v.failed_rule, Some(1));
    }

    #[test]
    fn boundary_semantics() {
        let rec = CurationRecord::new("r", "a", 1.0, "c");
        let cfg = RuleConfig::default();
        let cases: Vec<(TextStats, Option<u8>)> = vec![
            (TextStats { max_char_run: 4, ..clean_stats() }, None),
            (TextStats { max_char_run: 5, ..clean_stats() }, Some(3)),
            (TextStats { max_consec_word_repeat: 2, ..clean_stats() }, None),
            (TextStats { max_consec_word_repeat: 3, ..clean_stats() }, Some(4)),
            (TextStats { fivegram_dup_ratio: 0.0999, ..clean_stats() }, None),
            (TextStats { fivegram_dup_ratio: 0.10, ..clean_stats() }, Some(5)),
            (TextStats { unique_word_ratio: 0.30, ..clean_stats() }, Some(6)),
            (TextStats { unique_word_ratio: 0.31, ..clean_stats() }, None),
            (TextStats { avg_word_len: 2.0, ..clean_stats() }, None),
            (TextStats { avg_word_len: 1.99, ..clean_stats() }, Some(7)),
            (TextStats { avg_word_len: 15.0, ..clean_stats() }, None),
            (TextStats { avg_word_len: 15.01, ..clean_stats() }, Some(7)),
            (TextStats { token_count: 200, ..clean_stats() }, None),
            (TextStats { token_count: 199, ..clean_stats() }, Some(8)),
            (TextStats { token_count: 800, ..clean_stats() }, None),
            (TextStats { token_count: 801, ..clean_stats() }, Some(8)),
        ];
        for (s, expected) in cases {
            let v = apply_rules(&rec, &s, &cfg);
            assert_eq!(v.failed_rule, expected, "stats {s:?}");
            assert_eq!(v.pass, expected.is_none());
        }
    }
}
