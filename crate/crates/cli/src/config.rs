//! Declarative pipeline configuration: one TOML file drives every stage.
//!
//! Paths inside the file are resolved against the config file's directory,
//! so a config checked into a data directory keeps working no matter where
//! the binary runs from. The raw file text is carried along untouched and
//! embedded in every stage report.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use curate_core::dedup::DedupConfig;
use curate_core::fusion::FusionWeights;
use curate_core::mixture::BudgetConfig;
use curate_core::resample::ResampleConfig;
use curate_core::segment::SegmentMode;
use curate_core::text_rules::RuleConfig;
use serde::{Deserialize, Serialize};

/// Anything wrong with the configuration itself. Maps to exit code 2.
#[derive(Debug, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

// ---------------------------------------------------------------------------
// Stage graph

/// The fixed stage chain. Order is not configurable; stages can only be
/// switched off.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Segment,
    Classify,
    Filter,
    Score,
    Fuse,
    Resample,
    Dedup,
    Plan,
    Pack,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::Ingest,
        Stage::Segment,
        Stage::Classify,
        Stage::Filter,
        Stage::Score,
        Stage::Fuse,
        Stage::Resample,
        Stage::Dedup,
        Stage::Plan,
        Stage::Pack,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Segment => "segment",
            Stage::Classify => "classify",
            Stage::Filter => "filter",
            Stage::Score => "score",
            Stage::Fuse => "fuse",
            Stage::Resample => "resample",
            Stage::Dedup => "dedup",
            Stage::Plan => "plan",
            Stage::Pack => "pack",
        }
    }

    /// Primary artifact the stage writes under the run root.
    pub fn output_file(self) -> &'static str {
        match self {
            Stage::Ingest => "00_ingest.jsonl",
            Stage::Segment => "01_segment.jsonl",
            Stage::Classify => "02_classify.jsonl",
            Stage::Filter => "03_filter.jsonl",
            Stage::Score => "04_score.jsonl",
            Stage::Fuse => "05_fuse.jsonl",
            Stage::Resample => "06_resample.jsonl",
            Stage::Dedup => "07_dedup.jsonl",
            Stage::Plan => "plan.json",
            Stage::Pack => "packs.jsonl",
        }
    }

    /// Stages whose outputs this stage reads. `Ingest` reads the external
    /// input manifest instead.
    pub fn inputs(self) -> &'static [Stage] {
        match self {
            Stage::Ingest => &[],
            Stage::Segment => &[Stage::Ingest],
            Stage::Classify => &[Stage::Segment],
            Stage::Filter => &[Stage::Classify],
            Stage::Score => &[Stage::Filter],
            Stage::Fuse => &[Stage::Score],
            Stage::Resample => &[Stage::Fuse],
            Stage::Dedup => &[Stage::Resample],
            Stage::Plan => &[Stage::Dedup],
            Stage::Pack => &[Stage::Dedup, Stage::Plan],
        }
    }

    /// The stage whose manifest this stage transforms, if any.
    pub fn manifest_input(self) -> Option<Stage> {
        match self {
            Stage::Ingest => None,
            Stage::Pack | Stage::Plan => Some(Stage::Dedup),
            other => Some(Stage::ALL[Stage::ALL.iter().position(|s| *s == other).unwrap() - 1]),
        }
    }

    pub fn from_name(name: &str) -> Option<Stage> {
        Stage::ALL.iter().copied().find(|s| s.name() == name)
    }
}

// ---------------------------------------------------------------------------
// Sections

fn default_input_manifest() -> String {
    "data/raw.jsonl".into()
}

fn default_run_root() -> String {
    "run".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    /// Input manifest, relative to the config file.
    pub input_manifest: String,
    /// Output directory, relative to the config file.
    pub run_root: String,
    /// Tolerated fraction of unparseable input lines during ingest.
    pub max_error_rate: f64,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self {
            input_manifest: default_input_manifest(),
            run_root: default_run_root(),
            max_error_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageToggles {
    pub ingest: bool,
    pub segment: bool,
    pub classify: bool,
    pub filter: bool,
    pub score: bool,
    pub fuse: bool,
    pub resample: bool,
    pub dedup: bool,
    pub plan: bool,
    pub pack: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        Self {
            ingest: true,
            segment: true,
            classify: true,
            filter: true,
            score: true,
            fuse: true,
            resample: true,
            dedup: true,
            plan: true,
            pack: true,
        }
    }
}

impl StageToggles {
    pub fn enabled(&self, stage: Stage) -> bool {
        match stage {
            Stage::Ingest => self.ingest,
            Stage::Segment => self.segment,
            Stage::Classify => self.classify,
            Stage::Filter => self.filter,
            Stage::Score => self.score,
            Stage::Fuse => self.fuse,
            Stage::Resample => self.resample,
            Stage::Dedup => self.dedup,
            Stage::Plan => self.plan,
            Stage::Pack => self.pack,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub global_seed: u64,
    /// Upper bound on worker threads for record-parallel stages.
    pub shard_count: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            global_seed: 42,
            shard_count: 1,
        }
    }
}

fn default_segment_mode() -> SegmentMode {
    SegmentMode::Sequential
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentSection {
    pub max_len_s: f64,
    #[serde(default = "default_segment_mode")]
    pub mode: SegmentMode,
}

impl Default for SegmentSection {
    fn default() -> Self {
        Self {
            max_len_s: 30.0,
            mode: SegmentMode::Sequential,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JudgeMode {
    Mock,
    Subprocess,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeSection {
    pub mode: JudgeMode,
    /// Command line for `mode = "subprocess"`.
    pub command: String,
    pub timeout_s: f64,
    pub max_retries: u32,
    /// Token cap for the alignment summary.
    pub summary_max_tokens: usize,
}

impl Default for JudgeSection {
    fn default() -> Self {
        Self {
            mode: JudgeMode::Mock,
            command: String::new(),
            timeout_s: 10.0,
            max_retries: 2,
            summary_max_tokens: 77,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResamplePreset {
    PretrainingUnderstanding,
    GenerationCuration,
    InstructionSubset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResampleSection {
    pub preset: ResamplePreset,
}

impl Default for ResampleSection {
    fn default() -> Self {
        Self {
            preset: ResamplePreset::PretrainingUnderstanding,
        }
    }
}

impl ResampleSection {
    pub fn build(&self, seed: u64) -> ResampleConfig {
        match self.preset {
            ResamplePreset::PretrainingUnderstanding => {
                ResampleConfig::pretraining_understanding(seed)
            }
            ResamplePreset::GenerationCuration => ResampleConfig::generation_curation(seed),
            ResamplePreset::InstructionSubset => ResampleConfig::instruction_subset(seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecSection {
    pub frame_rate_hz: f64,
    pub codebooks: usize,
    pub pad_id: u32,
}

impl Default for CodecSection {
    fn default() -> Self {
        Self {
            frame_rate_hz: 12.5,
            codebooks: 8,
            pad_id: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PackSection {
    pub capacity: u32,
}

impl Default for PackSection {
    fn default() -> Self {
        Self { capacity: 8192 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSection {
    pub temperature: f64,
    pub top_k: usize,
    /// 0 disables guidance.
    pub guidance_scale: f64,
    pub max_tokens: usize,
    pub vocab: usize,
}

impl Default for DecodeSection {
    fn default() -> Self {
        Self {
            temperature: 0.8,
            top_k: 20,
            guidance_scale: 3.0,
            max_tokens: 32,
            vocab: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SftSection {
    pub requests_per_pair: usize,
    pub compositional_prob: f64,
    pub imaginary_prob: f64,
    /// Records taken from the front of the input manifest.
    pub limit: usize,
}

impl Default for SftSection {
    fn default() -> Self {
        Self {
            requests_per_pair: 3,
            compositional_prob: 0.3,
            imaginary_prob: 0.3,
            limit: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Records taken from the front of the input manifest.
    pub limit: usize,
    pub embed_dim: usize,
    /// Mock-transport character corruption rate for loss studies.
    pub corrupt_fraction: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            limit: 8,
            embed_dim: 32,
            corrupt_fraction: 0.0,
        }
    }
}

// ---------------------------------------------------------------------------
// Whole file

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub io: IoConfig,
    pub stages: StageToggles,
    pub run: RunSection,
    pub segment: SegmentSection,
    pub rules: RuleConfig,
    pub judge: JudgeSection,
    pub fusion: FusionWeights,
    pub resample: ResampleSection,
    pub dedup: DedupConfig,
    pub budget: BudgetConfig,
    pub codec: CodecSection,
    pub pack: PackSection,
    pub decode: DecodeSection,
    pub sft: SftSection,
    pub eval: EvalSection,
}

impl PipelineConfig {
    /// Field-level sanity beyond what the parser enforces.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |msg: String| Err(ConfigError(msg));
        if self.run.shard_count == 0 {
            return err("run.shard_count must be at least 1".into());
        }
        if !(self.io.max_error_rate >= 0.0 && self.io.max_error_rate <= 1.0) {
            return err(format!(
                "io.max_error_rate must be in [0, 1], got {}",
                self.io.max_error_rate
            ));
        }
        if self.segment.max_len_s.is_nan() || self.segment.max_len_s <= 0.0 {
            return err(format!(
                "segment.max_len_s must be positive, got {}",
                self.segment.max_len_s
            ));
        }
        if self.judge.mode == JudgeMode::Subprocess && self.judge.command.trim().is_empty() {
            return err("judge.mode = \"subprocess\" requires judge.command".into());
        }
        if self.rules.min_tokens > self.rules.max_tokens {
            return err(format!(
                "rules.min_tokens ({}) exceeds rules.max_tokens ({})",
                self.rules.min_tokens, self.rules.max_tokens
            ));
        }
        if let Err(e) = self.dedup.validate() {
            return err(format!("dedup: {e}"));
        }
        if let Err(e) = self.resample.build(0).validate() {
            return err(format!("resample: {e}"));
        }
        if self.budget.track_ratio.iter().all(|&w| w == 0) {
            return err("budget.track_ratio must have a nonzero entry".into());
        }
        if self.codec.frame_rate_hz.is_nan() || self.codec.frame_rate_hz <= 0.0 {
            return err(format!(
                "codec.frame_rate_hz must be positive, got {}",
                self.codec.frame_rate_hz
            ));
        }
        if self.codec.codebooks == 0 {
            return err("codec.codebooks must be at least 1".into());
        }
        if self.pack.capacity == 0 {
            return err("pack.capacity must be at least 1".into());
        }
        if self.decode.vocab == 0 {
            return err("decode.vocab must be at least 1".into());
        }
        Ok(())
    }

    /// Verifies every stage in `wanted` can find its inputs: each input
    /// stage either runs earlier in the same invocation or has already left
    /// its output under `run_root`. The error names both sides of the unmet
    /// dependency.
    pub fn check_stage_inputs(
        &self,
        run_root: &Path,
        wanted: &[Stage],
    ) -> Result<(), ConfigError> {
        let mut produced: Vec<Stage> = Vec::new();
        for &stage in wanted {
            for &input in stage.inputs() {
                let satisfied = produced.contains(&input)
                    || run_root.join(input.output_file()).is_file();
                if !satisfied {
                    return Err(ConfigError(format!(
                        "stage \"{}\" requires the output of stage \"{}\" ({}); enable \"{}\" or provide the file",
                        stage.name(),
                        input.name(),
                        input.output_file(),
                        input.name(),
                    )));
                }
            }
            produced.push(stage);
        }
        Ok(())
    }

    /// The stages `run` would execute, in order.
    pub fn enabled_stages(&self) -> Vec<Stage> {
        Stage::ALL
            .into_iter()
            .filter(|s| self.stages.enabled(*s))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Loading

/// A parsed config plus everything needed to reproduce and audit the run.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: PipelineConfig,
    /// Exact file text; embedded verbatim in stage reports.
    pub raw: String,
    /// Directory the config file lives in; anchors relative paths.
    pub base_dir: PathBuf,
    /// Environment overrides applied on top of the file, name -> value.
    pub env_overrides: BTreeMap<String, String>,
}

impl LoadedConfig {
    pub fn run_root(&self) -> PathBuf {
        self.base_dir.join(&self.config.io.run_root)
    }

    pub fn input_manifest(&self) -> PathBuf {
        self.base_dir.join(&self.config.io.input_manifest)
    }
}

pub const ENV_GLOBAL_SEED: &str = "CURATE_GLOBAL_SEED";
pub const ENV_JUDGE_MODE: &str = "CURATE_JUDGE_MODE";
pub const ENV_JUDGE_CMD: &str = "CURATE_JUDGE_CMD";

fn apply_env_overrides(
    config: &mut PipelineConfig,
    env: impl Fn(&str) -> Option<String>,
) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut applied = BTreeMap::new();
    if let Some(raw) = env(ENV_GLOBAL_SEED) {
        let seed: u64 = raw
            .trim()
            .parse()
            .map_err(|_| ConfigError(format!("{ENV_GLOBAL_SEED} is not a u64: {raw:?}")))?;
        config.run.global_seed = seed;
        applied.insert(ENV_GLOBAL_SEED.into(), raw);
    }
    if let Some(raw) = env(ENV_JUDGE_MODE) {
        config.judge.mode = match raw.trim() {
            "mock" => JudgeMode::Mock,
            "subprocess" => JudgeMode::Subprocess,
            other => {
                return Err(ConfigError(format!(
                    "{ENV_JUDGE_MODE} must be \"mock\" or \"subprocess\", got {other:?}"
                )))
            }
        };
        applied.insert(ENV_JUDGE_MODE.into(), raw);
    }
    if let Some(raw) = env(ENV_JUDGE_CMD) {
        config.judge.command = raw.clone();
        applied.insert(ENV_JUDGE_CMD.into(), raw);
    }
    Ok(applied)
}

/// Reads, parses, overrides, and validates a config file.
pub fn load(path: &Path) -> Result<LoadedConfig, ConfigError> {
    load_with_env(path, |name| std::env::var(name).ok())
}

/// Same as [`load`] with an injectable environment, for tests.
pub fn load_with_env(
    path: &Path,
    env: impl Fn(&str) -> Option<String>,
) -> Result<LoadedConfig, ConfigError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    let mut config: PipelineConfig = toml::from_str(&raw)
        .map_err(|e| ConfigError(format!("cannot parse {}: {e}", path.display())))?;
    let env_overrides = apply_env_overrides(&mut config, env)?;
    config.validate()?;
    let base_dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(LoadedConfig {
        config,
        raw,
        base_dir,
        env_overrides,
    })
}
