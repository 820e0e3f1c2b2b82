//! Stage bodies and the pipeline driver.
//!
//! Stages communicate only through files under the run root: each one reads
//! its predecessor's manifest, writes its own, and leaves a JSON report with
//! the run's exact configuration embedded. That makes any stage subset
//! rerunnable, keeps runs resumable after a failure, and makes two runs with
//! the same inputs byte-comparable.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use curate_core::cfg::{decode, DecodeConfig, StepLogits};
use curate_core::codec::{self, TokenGrid};
use curate_core::cycle::{run_cycle, render_table, CycleItem, Direction};
use curate_core::dedup::{dedup, DedupItem};
use curate_core::fusion::fuse;
use curate_core::judge::{JudgeClient, MockJudge};
use curate_core::manifest::{read_manifest, read_manifest_lenient, write_manifest};
use curate_core::mixture::{plan_mixture, record_passes, Inventory, MixturePlan, Track};
use curate_core::pack::{pack_sequences, Modality, PackItem};
use curate_core::record::{Category, CurationRecord};
use curate_core::resample::resample_category;
use curate_core::seed::{mix_seed, SeedContext};
use curate_core::segment::segment_plan;
use curate_core::sft::{
    filter_by_judge, simulate_generation, simulate_understanding, DiversityConfig,
};
use curate_core::text_rules::{apply_rules, compute_text_stats, WhitespaceTokenizer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{ConfigError, JudgeMode, LoadedConfig, PipelineConfig, Stage};
use crate::report::StageReport;

/// A stage that started and could not finish. Maps to exit code 3.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub message: String,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {} failed: {}", self.stage, self.message)
    }
}

impl std::error::Error for StageError {}

/// Either kind of pipeline failure, keeping the exit-code split.
#[derive(Debug)]
pub enum PipelineFailure {
    Config(ConfigError),
    Stage(StageError),
}

impl fmt::Display for PipelineFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PipelineFailure::Config(e) => e.fmt(f),
            PipelineFailure::Stage(e) => e.fmt(f),
        }
    }
}

impl From<ConfigError> for PipelineFailure {
    fn from(e: ConfigError) -> Self {
        PipelineFailure::Config(e)
    }
}

impl From<StageError> for PipelineFailure {
    fn from(e: StageError) -> Self {
        PipelineFailure::Stage(e)
    }
}

// ---------------------------------------------------------------------------
// Run context

/// Everything a stage needs: the config, resolved paths, the judge client,
/// and a worker pool sized by `run.shard_count`.
pub struct RunContext {
    pub loaded: LoadedConfig,
    pub run_root: PathBuf,
    pool: rayon::ThreadPool,
    client: JudgeClient,
}

impl RunContext {
    pub fn new(loaded: LoadedConfig) -> Result<Self, ConfigError> {
        let run_root = loaded.run_root();
        let cfg = &loaded.config;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.run.shard_count)
            .build()
            .map_err(|e| ConfigError(format!("cannot build worker pool: {e}")))?;
        let client = build_client(cfg)?;
        Ok(Self {
            loaded,
            run_root,
            pool,
            client,
        })
    }

    pub fn cfg(&self) -> &PipelineConfig {
        &self.loaded.config
    }

    fn seed(&self) -> u64 {
        self.loaded.config.run.global_seed
    }
}

pub fn build_client(cfg: &PipelineConfig) -> Result<JudgeClient, ConfigError> {
    match cfg.judge.mode {
        JudgeMode::Mock => Ok(JudgeClient::with_transport(
            Box::new(MockJudge::new(mix_seed(cfg.run.global_seed, "judge"))),
            cfg.judge.max_retries,
        )),
        JudgeMode::Subprocess => {
            JudgeClient::subprocess(&cfg.judge.command, cfg.judge.timeout_s, cfg.judge.max_retries)
                .map_err(|e| ConfigError(format!("judge subprocess: {e}")))
        }
    }
}

// ---------------------------------------------------------------------------
// File layout

pub fn rejected_path(run_root: &Path, stage: Stage) -> PathBuf {
    run_root
        .join("rejected")
        .join(format!("{}.jsonl", stage.name()))
}

pub fn report_path(run_root: &Path, stage: Stage) -> PathBuf {
    run_root
        .join("reports")
        .join(format!("{}.json", stage.name()))
}

pub const RESUME_FILE: &str = "resume.json";
pub const CLUSTERS_FILE: &str = "dedup_clusters.jsonl";

fn ensure_dirs(run_root: &Path) -> Result<(), StageError> {
    for dir in [
        run_root.to_path_buf(),
        run_root.join("rejected"),
        run_root.join("reports"),
    ] {
        fs::create_dir_all(&dir).map_err(|e| StageError {
            stage: "setup",
            message: format!("cannot create {}: {e}", dir.display()),
        })?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Stage plumbing

struct StageOutcome {
    /// `Some` for manifest-transforming stages; `None` for plan/pack, which
    /// write non-manifest artifacts and pass the manifest through untouched.
    records: Option<Vec<CurationRecord>>,
    rejected: Vec<CurationRecord>,
    detail: Value,
    /// `(file name under the run root, contents)`.
    extra_files: Vec<(&'static str, String)>,
}

impl StageOutcome {
    fn manifest(records: Vec<CurationRecord>, rejected: Vec<CurationRecord>, detail: Value) -> Self {
        Self {
            records: Some(records),
            rejected,
            detail,
            extra_files: Vec::new(),
        }
    }
}

fn stage_err(stage: Stage) -> impl Fn(String) -> StageError {
    move |message| StageError {
        stage: stage.name(),
        message,
    }
}

fn read_input(ctx: &RunContext, stage: Stage) -> Result<Vec<CurationRecord>, StageError> {
    let source = stage
        .manifest_input()
        .expect("ingest reads the external manifest");
    let path = ctx.run_root.join(source.output_file());
    read_manifest(&path).map_err(|e| stage_err(stage)(format!("{e}")))
}

/// Runs one stage end to end: read input, transform, write the manifest,
/// the rejected records, any extra artifacts, and the report.
pub fn execute_stage(ctx: &RunContext, stage: Stage) -> Result<StageReport, StageError> {
    ensure_dirs(&ctx.run_root)?;
    let err = stage_err(stage);

    let (input_count, outcome) = match stage {
        Stage::Ingest => stage_ingest(ctx)?,
        _ => {
            let records = read_input(ctx, stage)?;
            let input_count = records.len();
            let outcome = ctx.pool.install(|| match stage {
                Stage::Segment => stage_segment(ctx, records),
                Stage::Classify => stage_classify(ctx, records),
                Stage::Filter => stage_filter(ctx, records),
                Stage::Score => stage_score(ctx, records),
                Stage::Fuse => stage_fuse(ctx, records),
                Stage::Resample => stage_resample(ctx, records),
                Stage::Dedup => stage_dedup(ctx, records),
                Stage::Plan => stage_plan(ctx, records),
                Stage::Pack => stage_pack(ctx, records),
                Stage::Ingest => unreachable!(),
            })?;
            (input_count, outcome)
        }
    };

    let output_count = outcome
        .records
        .as_ref()
        .map_or(input_count, |recs| recs.len());
    if let Some(records) = &outcome.records {
        write_manifest(ctx.run_root.join(stage.output_file()), records)
            .map_err(|e| err(format!("{e}")))?;
        write_manifest(rejected_path(&ctx.run_root, stage), &outcome.rejected)
            .map_err(|e| err(format!("{e}")))?;
    }
    for (name, contents) in &outcome.extra_files {
        fs::write(ctx.run_root.join(name), contents)
            .map_err(|e| err(format!("cannot write {name}: {e}")))?;
    }

    let report = StageReport {
        stage: stage.name().to_string(),
        input_count,
        output_count,
        rejected_count: outcome.rejected.len(),
        detail: outcome.detail,
        env_overrides: ctx.loaded.env_overrides.clone(),
        config: ctx.loaded.raw.clone(),
    };
    let rendered = serde_json::to_string_pretty(&report).map_err(|e| err(format!("{e}")))?;
    fs::write(report_path(&ctx.run_root, stage), rendered + "\n")
        .map_err(|e| err(format!("cannot write report: {e}")))?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Stage bodies

fn stage_ingest(ctx: &RunContext) -> Result<(usize, StageOutcome), StageError> {
    let err = stage_err(Stage::Ingest);
    let path = ctx.loaded.input_manifest();
    let outcome = read_manifest_lenient(&path, ctx.cfg().io.max_error_rate)
        .map_err(|e| err(format!("{e}")))?;
    let input_count = outcome.records.len() + outcome.errors.len();
    let error_samples: Vec<String> = outcome.errors.iter().take(5).map(|e| e.to_string()).collect();
    let detail = json!({
        "source": ctx.cfg().io.input_manifest,
        "line_errors": outcome.errors.len(),
        "line_error_samples": error_samples,
    });
    Ok((
        input_count,
        StageOutcome::manifest(outcome.records, Vec::new(), detail),
    ))
}

fn stage_segment(ctx: &RunContext, records: Vec<CurationRecord>) -> Result<StageOutcome, StageError> {
    let seg = ctx.cfg().segment;
    let seed = ctx.seed();
    // Result is the kept/rejected split here; both sides carry the record.
    #[allow(clippy::result_large_err)]
    let planned: Vec<Result<CurationRecord, CurationRecord>> = records
        .into_par_iter()
        .map(|mut rec| {
            let sctx = SeedContext::new(seed, &rec.record_id);
            match segment_plan(rec.duration_s, seg.max_len_s, seg.mode, &sctx) {
                Ok(plan) => {
                    rec.extra.insert("segments".into(), json!(plan.windows));
                    Ok(rec)
                }
                Err(e) => {
                    rec.push_verdict("segment", false, e.to_string());
                    Err(rec)
                }
            }
        })
        .collect();

    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    let mut windows_total = 0usize;
    let mut multi_window = 0usize;
    for item in planned {
        match item {
            Ok(rec) => {
                let n = rec.extra["segments"].as_array().map_or(0, Vec::len);
                windows_total += n;
                if n > 1 {
                    multi_window += 1;
                }
                kept.push(rec);
            }
            Err(rec) => rejected.push(rec),
        }
    }
    let detail = json!({
        "mode": seg.mode,
        "max_len_s": seg.max_len_s,
        "windows_total": windows_total,
        "multi_window_records": multi_window,
    });
    Ok(StageOutcome::manifest(kept, rejected, detail))
}

fn stage_classify(ctx: &RunContext, records: Vec<CurationRecord>) -> Result<StageOutcome, StageError> {
    let client = &ctx.client;
    #[allow(clippy::result_large_err)]
    let outcome: Vec<Result<CurationRecord, CurationRecord>> = records
        .into_par_iter()
        .map(|mut rec| match client.classify_taxonomy(&rec.record_id, &rec.caption) {
            Ok(category) => {
                rec.category = category;
                Ok(rec)
            }
            Err(e) => {
                rec.push_verdict("classify", false, format!("judge: {e}"));
                Err(rec)
            }
        })
        .collect();

    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    let mut counts: BTreeMap<&'static str, usize> = BTreeMap::new();
    for item in outcome {
        match item {
            Ok(rec) => {
                *counts.entry(rec.category.as_str()).or_default() += 1;
                kept.push(rec);
            }
            Err(rec) => rejected.push(rec),
        }
    }
    let detail = json!({
        "category_counts": counts,
        "judge_failures": rejected.len(),
    });
    Ok(StageOutcome::manifest(kept, rejected, detail))
}

fn stage_filter(ctx: &RunContext, records: Vec<CurationRecord>) -> Result<StageOutcome, StageError> {
    let rules = &ctx.cfg().rules;
    let tokenizer = WhitespaceTokenizer;
    let judged: Vec<(CurationRecord, Option<u8>, String)> = records
        .into_par_iter()
        .map(|rec| {
            let stats = compute_text_stats(&rec.caption, &tokenizer);
            let verdict = apply_rules(&rec, &stats, rules);
            (rec, verdict.failed_rule, verdict.detail)
        })
        .collect();

    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    let mut by_rule: BTreeMap<String, usize> = BTreeMap::new();
    for (mut rec, failed_rule, detail) in judged {
        match failed_rule {
            None => kept.push(rec),
            Some(rule) => {
                *by_rule.entry(format!("rule_{rule}")).or_default() += 1;
                rec.push_verdict("filter", false, format!("rule {rule}: {detail}"));
                rejected.push(rec);
            }
        }
    }
    let detail = json!({ "rule_rejections": by_rule });
    Ok(StageOutcome::manifest(kept, rejected, detail))
}

fn stage_score(ctx: &RunContext, records: Vec<CurationRecord>) -> Result<StageOutcome, StageError> {
    let client = &ctx.client;
    let max_tokens = ctx.cfg().judge.summary_max_tokens;

    struct Fate {
        rec: CurationRecord,
        reject: Option<String>,
        missing_audio: bool,
        missing_alignment: bool,
        type_disagreement: bool,
    }

    let fates: Vec<Fate> = records
        .into_par_iter()
        .map(|mut rec| {
            let scores = match client.score_text(&rec.record_id, &rec.caption) {
                Ok(s) => s,
                Err(e) => {
                    return Fate {
                        rec,
                        reject: Some(format!("judge: {e}")),
                        missing_audio: false,
                        missing_alignment: false,
                        type_disagreement: false,
                    }
                }
            };
            if !scores.is_english {
                return Fate {
                    rec,
                    reject: Some("judge: caption not in English".into()),
                    missing_audio: false,
                    missing_alignment: false,
                    type_disagreement: false,
                };
            }
            if !scores.is_audio_centric {
                return Fate {
                    rec,
                    reject: Some("judge: caption not audio-centric".into()),
                    missing_audio: false,
                    missing_alignment: false,
                    type_disagreement: false,
                };
            }
            let audio = rec.extra.get("audio_score").and_then(Value::as_f64);
            let alignment = rec.extra.get("alignment_score").and_then(Value::as_f64);
            let quality = rec.quality_mut();
            quality.text_only = Some(scores.composite());
            quality.audio_only = audio;
            quality.alignment = alignment;
            let summary = client.summarize_for_alignment(&rec.record_id, &rec.caption, max_tokens);
            rec.extra
                .insert("alignment_caption".into(), json!(summary.text));
            Fate {
                type_disagreement: scores.audio_type != rec.category,
                missing_audio: audio.is_none(),
                missing_alignment: alignment.is_none(),
                reject: None,
                rec,
            }
        })
        .collect();

    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    let mut missing_audio = 0usize;
    let mut missing_alignment = 0usize;
    let mut disagreements = 0usize;
    let mut reject_reasons: BTreeMap<String, usize> = BTreeMap::new();
    for fate in fates {
        let mut rec = fate.rec;
        match fate.reject {
            Some(reason) => {
                *reject_reasons.entry(reason.clone()).or_default() += 1;
                rec.push_verdict("score", false, reason);
                rejected.push(rec);
            }
            None => {
                missing_audio += fate.missing_audio as usize;
                missing_alignment += fate.missing_alignment as usize;
                disagreements += fate.type_disagreement as usize;
                kept.push(rec);
            }
        }
    }
    let detail = json!({
        "missing_audio_score": missing_audio,
        "missing_alignment_score": missing_alignment,
        "audio_type_disagreements": disagreements,
        "reject_reasons": reject_reasons,
    });
    Ok(StageOutcome::manifest(kept, rejected, detail))
}

fn stage_fuse(ctx: &RunContext, mut records: Vec<CurationRecord>) -> Result<StageOutcome, StageError> {
    let report = fuse(&mut records, &ctx.cfg().fusion);
    let flagged_samples: Vec<&(String, String)> = report.flagged.iter().take(10).collect();
    let detail = json!({
        "per_category": report.per_category,
        "empty_categories": report.empty_categories,
        "flagged_count": report.flagged.len(),
        "flagged_samples": flagged_samples,
    });
    Ok(StageOutcome::manifest(records, Vec::new(), detail))
}

fn stage_resample(ctx: &RunContext, records: Vec<CurationRecord>) -> Result<StageOutcome, StageError> {
    let err = stage_err(Stage::Resample);
    let rcfg = ctx.cfg().resample.build(mix_seed(ctx.seed(), "resample"));
    rcfg.validate().map_err(|e| err(format!("{e}")))?;

    let mut groups: BTreeMap<Category, Vec<usize>> = BTreeMap::new();
    let mut unrankable: BTreeSet<usize> = BTreeSet::new();
    for (i, rec) in records.iter().enumerate() {
        let fused = rec.quality.as_ref().and_then(|q| q.fused);
        match fused {
            Some(_) if !rec.category.is_unknown() => {
                groups.entry(rec.category).or_default().push(i)
            }
            _ => {
                unrankable.insert(i);
            }
        }
    }

    let mut keep: BTreeSet<usize> = BTreeSet::new();
    let mut group_stats: BTreeMap<Category, (usize, usize)> = BTreeMap::new();
    let mut per_category: BTreeMap<&'static str, Value> = BTreeMap::new();
    for (category, indices) in &groups {
        let ids: Vec<&str> = indices.iter().map(|&i| records[i].record_id.as_str()).collect();
        let scores: Vec<f64> = indices
            .iter()
            .map(|&i| records[i].quality.as_ref().unwrap().fused.unwrap())
            .collect();
        let params = rcfg.params(*category);
        let selection = resample_category(&ids, &scores, &params, rcfg.seed)
            .map_err(|e| err(format!("{category:?}: {e}")))?;
        for &local in &selection.kept {
            keep.insert(indices[local]);
        }
        group_stats.insert(*category, (selection.kept.len(), indices.len()));
        per_category.insert(
            category.as_str(),
            json!({
                "input": indices.len(),
                "kept": selection.kept.len(),
                "temperature": params.temperature,
                "discard_fraction": params.discard_fraction,
                "clamped_to_minimum": selection.clamped_to_minimum,
            }),
        );
    }

    let total = records.len();
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for (i, mut rec) in records.into_iter().enumerate() {
        if keep.contains(&i) {
            kept.push(rec);
        } else if unrankable.contains(&i) {
            rec.push_verdict("resample", false, "no fused quality score to rank");
            rejected.push(rec);
        } else {
            let (kept_n, group) = group_stats.get(&rec.category).copied().unwrap_or((0, 0));
            rec.push_verdict(
                "resample",
                false,
                format!(
                    "not selected (category={}, kept {kept_n} of {group})",
                    rec.category.as_str()
                ),
            );
            rejected.push(rec);
        }
    }
    let detail = json!({
        "per_category": per_category,
        "unrankable": unrankable.len(),
        "input_total": total,
    });
    Ok(StageOutcome::manifest(kept, rejected, detail))
}

fn stage_dedup(ctx: &RunContext, records: Vec<CurationRecord>) -> Result<StageOutcome, StageError> {
    let err = stage_err(Stage::Dedup);
    let items: Vec<DedupItem> = records
        .iter()
        .map(|rec| DedupItem {
            record_id: rec.record_id.clone(),
            caption: rec.caption.clone(),
            quality: rec
                .quality
                .as_ref()
                .and_then(|q| q.fused)
                .unwrap_or(0.0),
        })
        .collect();
    let outcome = dedup(&items, &ctx.cfg().dedup).map_err(|e| err(format!("{e}")))?;

    let mut retained_idx: Vec<usize> = outcome.retained.clone();
    retained_idx.sort_unstable();
    let mut reject_reason: BTreeMap<usize, String> = BTreeMap::new();
    for (idx, reason) in outcome.rejected {
        reject_reason.insert(idx, reason);
    }

    let retained_set: BTreeSet<usize> = retained_idx.iter().copied().collect();
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for (i, mut rec) in records.into_iter().enumerate() {
        if retained_set.contains(&i) {
            kept.push(rec);
        } else {
            let reason = reject_reason
                .remove(&i)
                .unwrap_or_else(|| "duplicate".to_string());
            rec.push_verdict("dedup", false, reason);
            rejected.push(rec);
        }
    }

    let clusters_file: String = outcome
        .clusters
        .iter()
        .map(|c| serde_json::to_string(c).expect("cluster serializes"))
        .map(|line| line + "\n")
        .collect();
    let detail = json!({
        "clusters": outcome.clusters.len(),
        "removed": rejected.len(),
    });
    Ok(StageOutcome {
        records: Some(kept),
        rejected,
        detail,
        extra_files: vec![(CLUSTERS_FILE, clusters_file)],
    })
}

/// Measures the audio-token inventory of the retained records.
fn measure_inventory(
    records: &[CurationRecord],
    frame_rate_hz: f64,
    codebooks: usize,
) -> Result<(Inventory, usize), String> {
    let mut inv = Inventory::default();
    let mut unknown = 0usize;
    for rec in records {
        if rec.category.is_unknown() {
            unknown += 1;
            continue;
        }
        let tokens = codec::audio_token_count(rec.duration_s, frame_rate_hz, codebooks)
            .map_err(|e| format!("{}: {e}", rec.record_id))? as u64;
        match rec.category {
            Category::Speech => inv.speech_tokens += tokens,
            Category::Music => inv.music_tokens += tokens,
            Category::Sfx => inv.sfx_tokens += tokens,
            Category::Unknown => unreachable!(),
        }
    }
    Ok((inv, unknown))
}

fn stage_plan(ctx: &RunContext, records: Vec<CurationRecord>) -> Result<StageOutcome, StageError> {
    let err = stage_err(Stage::Plan);
    let codec_cfg = ctx.cfg().codec;
    let (inventory, unknown) =
        measure_inventory(&records, codec_cfg.frame_rate_hz, codec_cfg.codebooks).map_err(err)?;
    let plan = plan_mixture(&inventory, &ctx.cfg().budget)
        .map_err(|e| stage_err(Stage::Plan)(format!("{e}")))?;
    let starved: Vec<String> = plan
        .cells
        .iter()
        .filter(|c| c.starved)
        .map(|c| match c.category {
            Some(cat) => format!("{}/{}", c.track.as_str(), cat.as_str()),
            None => c.track.as_str().to_string(),
        })
        .collect();
    let detail = json!({
        "inventory": inventory,
        "track_targets": plan.track_targets,
        "starved_cells": starved,
        "records_unknown_category": unknown,
    });
    let rendered = serde_json::to_string_pretty(&plan)
        .map_err(|e| stage_err(Stage::Plan)(format!("{e}")))?;
    Ok(StageOutcome {
        records: None,
        rejected: Vec::new(),
        detail,
        extra_files: vec![("plan.json", rendered + "\n")],
    })
}

fn stage_pack(ctx: &RunContext, records: Vec<CurationRecord>) -> Result<StageOutcome, StageError> {
    let err = stage_err(Stage::Pack);
    let plan_path = ctx.run_root.join(Stage::Plan.output_file());
    let raw = fs::read_to_string(&plan_path)
        .map_err(|e| err(format!("cannot read {}: {e}", plan_path.display())))?;
    let plan: MixturePlan =
        serde_json::from_str(&raw).map_err(|e| err(format!("cannot parse plan: {e}")))?;

    let codec_cfg = ctx.cfg().codec;
    let seed = ctx.cfg().budget.seed;
    let mut items: Vec<PackItem> = Vec::new();
    let mut skipped_unknown = 0usize;
    for rec in &records {
        if rec.category.is_unknown() {
            skipped_unknown += 1;
            continue;
        }
        let audio_tokens = codec::audio_token_count(
            rec.duration_s,
            codec_cfg.frame_rate_hz,
            codec_cfg.codebooks,
        )
        .map_err(|e| err(format!("{}: {e}", rec.record_id)))? as u32;
        let text_tokens = rec.caption.split_whitespace().count().max(1) as u32;
        let total = audio_tokens + text_tokens;

        for (track, modality, target_len, tag) in [
            (Track::TextToAudio, Modality::Audio, audio_tokens, "t2a"),
            (Track::AudioToText, Modality::Text, text_tokens, "a2t"),
        ] {
            let cell = plan
                .cell(track, Some(rec.category))
                .ok_or_else(|| err(format!("plan lacks cell {}/{}", track.as_str(), rec.category.as_str())))?;
            let passes = record_passes(cell.weight, seed, &format!("{}/{tag}", rec.record_id))
                .map_err(|e| err(format!("{}: {e}", rec.record_id)))?;
            for p in 0..passes {
                items.push(PackItem {
                    id: format!("{}#{tag}{p}", rec.record_id),
                    modality,
                    len: total,
                    target_len,
                });
            }
        }
    }

    let outcome = pack_sequences(&items, ctx.cfg().pack.capacity).map_err(|e| err(format!("{e}")))?;
    let packs_file: String = outcome
        .packs
        .iter()
        .map(|p| serde_json::to_string(p).expect("pack serializes"))
        .map(|line| line + "\n")
        .collect();
    let rejected_samples: Vec<&(String, String)> = outcome.rejected.iter().take(10).collect();
    let detail = json!({
        "items": items.len(),
        "packs": outcome.packs.len(),
        "mean_utilization": outcome.mean_utilization(),
        "mixed_fraction": outcome.mixed_fraction(),
        "capacity": ctx.cfg().pack.capacity,
        "rejected_items": outcome.rejected.len(),
        "rejected_samples": rejected_samples,
        "records_unknown_category": skipped_unknown,
    });
    Ok(StageOutcome {
        records: None,
        rejected: Vec::new(),
        detail,
        extra_files: vec![("packs.jsonl", packs_file)],
    })
}

// ---------------------------------------------------------------------------
// Pipeline driver

/// Progress marker written after every stage; lets a failed run restart
/// where it stopped.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResumeToken {
    pub completed: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn write_resume(run_root: &Path, token: &ResumeToken) -> Result<(), StageError> {
    let rendered = serde_json::to_string_pretty(token).expect("resume token serializes");
    fs::write(run_root.join(RESUME_FILE), rendered + "\n").map_err(|e| StageError {
        stage: "setup",
        message: format!("cannot write {RESUME_FILE}: {e}"),
    })
}

pub fn read_resume(run_root: &Path) -> Option<ResumeToken> {
    let raw = fs::read_to_string(run_root.join(RESUME_FILE)).ok()?;
    serde_json::from_str(&raw).ok()
}

/// Runs every enabled stage in chain order. With `resume`, stages recorded
/// as completed in `resume.json` are skipped. On failure, partial outputs
/// stay on disk and the resume token names the failed stage.
pub fn run_pipeline(ctx: &RunContext, resume: bool) -> Result<Vec<StageReport>, PipelineFailure> {
    let enabled = ctx.cfg().enabled_stages();
    let mut token = if resume {
        read_resume(&ctx.run_root).unwrap_or_default()
    } else {
        ResumeToken::default()
    };
    token.failed = None;
    token.error = None;

    let to_run: Vec<Stage> = enabled
        .iter()
        .copied()
        .filter(|s| !token.completed.iter().any(|done| done == s.name()))
        .collect();

    if to_run.contains(&Stage::Ingest) {
        let input = ctx.loaded.input_manifest();
        if !input.is_file() {
            return Err(ConfigError(format!(
                "io.input_manifest not found: {}",
                input.display()
            ))
            .into());
        }
    }
    ctx.cfg().check_stage_inputs(&ctx.run_root, &to_run)?;

    ensure_dirs(&ctx.run_root)?;
    let mut reports = Vec::new();
    for stage in to_run {
        match execute_stage(ctx, stage) {
            Ok(report) => {
                reports.push(report);
                token.completed.push(stage.name().to_string());
                write_resume(&ctx.run_root, &token)?;
            }
            Err(e) => {
                token.failed = Some(stage.name().to_string());
                token.error = Some(e.message.clone());
                write_resume(&ctx.run_root, &token)?;
                return Err(e.into());
            }
        }
    }
    Ok(reports)
}

/// Runs exactly one stage, after checking its inputs exist.
pub fn run_single(ctx: &RunContext, stage: Stage) -> Result<StageReport, PipelineFailure> {
    if stage == Stage::Ingest {
        let input = ctx.loaded.input_manifest();
        if !input.is_file() {
            return Err(ConfigError(format!(
                "io.input_manifest not found: {}",
                input.display()
            ))
            .into());
        }
    }
    ctx.cfg().check_stage_inputs(&ctx.run_root, &[stage])?;
    Ok(execute_stage(ctx, stage)?)
}

// ---------------------------------------------------------------------------
// Auxiliary commands

fn aux_err(stage: &'static str) -> impl Fn(String) -> StageError {
    move |message| StageError { stage, message }
}

fn read_aux_input(
    ctx: &RunContext,
    input: Option<PathBuf>,
    stage: &'static str,
) -> Result<Vec<CurationRecord>, StageError> {
    let path = input.unwrap_or_else(|| ctx.run_root.join(Stage::Dedup.output_file()));
    read_manifest(&path).map_err(|e| aux_err(stage)(format!("{e}")))
}

/// Simulates instruction data from curated records, judges every sample,
/// and writes retained/rejected sample files plus a report.
pub fn run_sft_sim(ctx: &RunContext, input: Option<PathBuf>) -> Result<String, StageError> {
    let err = aux_err("sft-sim");
    ensure_dirs(&ctx.run_root)?;
    let records = read_aux_input(ctx, input, "sft-sim")?;
    let sft_cfg = ctx.cfg().sft;
    let div = DiversityConfig {
        requests_per_pair: sft_cfg.requests_per_pair,
        compositional_prob: sft_cfg.compositional_prob,
        imaginary_prob: sft_cfg.imaginary_prob,
        ..DiversityConfig::builtin()
    };
    let seed = ctx.seed();

    let mut samples = Vec::new();
    let mut dropped: Vec<(String, String)> = Vec::new();
    for rec in records.iter().take(sft_cfg.limit) {
        for outcome in [
            simulate_understanding(rec, &ctx.client, &div, seed),
            simulate_generation(rec, &ctx.client, &div, seed),
        ] {
            match outcome {
                Ok(mut sim) => {
                    samples.append(&mut sim.samples);
                    dropped.append(&mut sim.dropped);
                }
                Err(e) => dropped.push((rec.record_id.clone(), e.to_string())),
            }
        }
    }
    let generated = samples.len();
    let filtered = filter_by_judge(samples, &ctx.client);

    let render_lines = |samples: &[curate_core::sft::SftSample]| -> Result<String, StageError> {
        let mut out = String::new();
        for s in samples {
            out.push_str(&serde_json::to_string(s).map_err(|e| err(format!("{e}")))?);
            out.push('\n');
        }
        Ok(out)
    };
    fs::write(
        ctx.run_root.join("sft_samples.jsonl"),
        render_lines(&filtered.retained)?,
    )
    .map_err(|e| err(format!("{e}")))?;
    fs::write(
        ctx.run_root.join("sft_rejected.jsonl"),
        render_lines(&filtered.rejected)?,
    )
    .map_err(|e| err(format!("{e}")))?;

    let retention_rate = if generated == 0 {
        0.0
    } else {
        filtered.retained.len() as f64 / generated as f64
    };
    let report = json!({
        "records": records.len().min(sft_cfg.limit),
        "generated": generated,
        "dropped": dropped,
        "retained": filtered.retained.len(),
        "rejected": filtered.rejected.len(),
        "judge_failures": filtered.failed,
        "retention_rate": retention_rate,
        "histograms": filtered.histograms,
        "env_overrides": ctx.loaded.env_overrides,
        "config": ctx.loaded.raw,
    });
    let rendered = serde_json::to_string_pretty(&report).map_err(|e| err(format!("{e}")))?;
    fs::write(ctx.run_root.join("reports").join("sft.json"), rendered + "\n")
        .map_err(|e| err(format!("{e}")))?;

    Ok(format!(
        "sft-sim: generated {generated}, retained {}, rejected {}, failed {}\n",
        filtered.retained.len(),
        filtered.rejected.len(),
        filtered.failed.len(),
    ))
}

/// Round-trips records through both loop directions and reports mean
/// embedding similarity per direction.
pub fn run_cycle_eval(ctx: &RunContext, input: Option<PathBuf>) -> Result<String, StageError> {
    let err = aux_err("cycle-eval");
    ensure_dirs(&ctx.run_root)?;
    let records = read_aux_input(ctx, input, "cycle-eval")?;
    let eval_cfg = ctx.cfg().eval;

    let client = match ctx.cfg().judge.mode {
        JudgeMode::Mock => JudgeClient::with_transport(
            Box::new(
                MockJudge::corrupting(
                    mix_seed(ctx.seed(), "judge"),
                    eval_cfg.corrupt_fraction,
                )
                .with_embed_dim(eval_cfg.embed_dim),
            ),
            ctx.cfg().judge.max_retries,
        ),
        JudgeMode::Subprocess => build_client(ctx.cfg()).map_err(|e| err(e.0))?,
    };

    let audio_items: Vec<CycleItem> = records
        .iter()
        .take(eval_cfg.limit)
        .map(|r| CycleItem {
            record_id: r.record_id.clone(),
            payload: r.audio_ref.clone(),
        })
        .collect();
    let text_items: Vec<CycleItem> = records
        .iter()
        .take(eval_cfg.limit)
        .map(|r| CycleItem {
            record_id: r.record_id.clone(),
            payload: r.caption.clone(),
        })
        .collect();

    let results = [
        run_cycle(&audio_items, Direction::A2t2a, &client),
        run_cycle(&text_items, Direction::T2a2t, &client),
    ];
    let rendered = serde_json::to_string_pretty(&results).map_err(|e| err(format!("{e}")))?;
    fs::write(
        ctx.run_root.join("reports").join("cycle.json"),
        rendered + "\n",
    )
    .map_err(|e| err(format!("{e}")))?;
    Ok(render_table(&results))
}

/// Decodes a short token sequence from a toy logit table, demonstrating
/// guidance and sampling settings end to end.
pub fn run_decode_demo(ctx: &RunContext) -> Result<String, StageError> {
    let err = aux_err("decode-demo");
    let d = ctx.cfg().decode;
    let cfg = DecodeConfig {
        temperature: d.temperature,
        top_k: d.top_k,
        guidance_scale: (d.guidance_scale != 0.0).then_some(d.guidance_scale),
        max_tokens: d.max_tokens,
        end_token: None,
    };
    cfg.validate().map_err(|e| err(format!("{e}")))?;
    let vocab = d.vocab;
    let guided = cfg.guidance_scale.is_some();

    let circular_distance = |a: usize, b: usize| {
        let d = a.abs_diff(b);
        d.min(vocab - d) as f64
    };
    let step = |prefix: &[u32]| {
        let t = prefix.len();
        let cond: Vec<f64> = (0..vocab)
            .map(|v| 2.0 - 0.45 * circular_distance(v, (t * 3 + 1) % vocab))
            .collect();
        let uncond: Vec<f64> = (0..vocab)
            .map(|v| 1.0 - 0.3 * circular_distance(v, t % vocab))
            .collect();
        StepLogits {
            cond,
            uncond: guided.then_some(uncond),
        }
    };
    let mut rng = SeedContext::new(ctx.seed(), "decode-demo").rng("demo");
    let tokens = decode(step, &cfg, &mut rng).map_err(|e| err(format!("{e}")))?;
    let rendered: Vec<String> = tokens.iter().map(u32::to_string).collect();
    Ok(format!(
        "decoded {} tokens (vocab {vocab}, guidance {}): {}\n",
        tokens.len(),
        d.guidance_scale,
        rendered.join(" ")
    ))
}

/// Builds a random token grid, walks it through the stream-shifted flat
/// layout and the byte format, and verifies the round trip.
pub fn run_layout(
    frames: usize,
    codebooks: usize,
    pad_id: u32,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<String, StageError> {
    let err = aux_err("layout");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<u32> = (0..frames * codebooks)
        .map(|_| rng.gen_range(0..2048))
        .collect();
    let grid = TokenGrid::new(frames, codebooks, data).map_err(|e| err(format!("{e}")))?;
    let bytes = codec::encode_bytes(&grid, pad_id);
    let (back, back_pad) = codec::decode_bytes(&bytes).map_err(|e| err(format!("{e}")))?;
    if back.data() != grid.data() || back_pad != pad_id {
        return Err(err("round trip mismatch".into()));
    }
    if let Some(path) = &out {
        fs::write(path, &bytes).map_err(|e| err(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(format!(
        "layout: frames={frames} codebooks={codebooks} flat_len={} bytes={} round_trip=ok{}\n",
        codec::flat_len(frames, codebooks),
        bytes.len(),
        out.map(|p| format!(" wrote {}", p.display())).unwrap_or_default(),
    ))
}
