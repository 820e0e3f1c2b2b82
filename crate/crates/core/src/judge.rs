//! Client gateway for neural scorer endpoints.
//!
//! Every model-backed operation (taxonomy classification, caption rubric
//! scoring, alignment summaries, instruction-data synthesis and judging,
//! cycle-evaluation captioning/generation/embedding) goes through one wire
//! format: line-delimited JSON requests `{record_id, task, payload}` answered
//! by `{record_id, result}`. Two transports exist: a deterministic in-process
//! mock (keyword tables plus a seeded hash scorer) and a subprocess pipe that
//! speaks the format over a child's stdin/stdout.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::record::Category;
use crate::seed::{fnv1a64, mix_seed, splitmix64};
use crate::text_rules::contains_non_latin;

pub const TASK_CLASSIFY: &str = "classify";
pub const TASK_SCORE_TEXT: &str = "score_text";
pub const TASK_SUMMARIZE: &str = "summarize";
pub const TASK_SFT_UNDERSTAND: &str = "sft_understand";
pub const TASK_SFT_GENERATE: &str = "sft_generate";
pub const TASK_SFT_JUDGE: &str = "sft_judge";
pub const TASK_CAPTION: &str = "caption";
pub const TASK_GENERATE: &str = "generate";
pub const TASK_EMBED: &str = "embed";

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("failed to spawn judge subprocess: {0}")]
    Spawn(std::io::Error),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("timed out after {0:?} waiting for a reply")]
    Timeout(Duration),
    #[error("reply schema violation: {0}")]
    Schema(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
}

/// One request on the wire.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub record_id: String,
    pub task: String,
    pub payload: Value,
}

/// One reply on the wire.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgeReply {
    pub record_id: String,
    pub result: Value,
}

/// A way to get one reply for one request.
pub trait Transport: Send + Sync {
    fn call(&self, req: &JudgeRequest) -> Result<JudgeReply, JudgeError>;
}

// ---------------------------------------------------------------------------
// Mock transport

const SPEECH_WORDS: &[&str] = &[
    "spoken", "speech", "speaker", "conversation", "dialogue", "says", "saying", "voice",
    "narrator", "talking", "speaks", "monologue",
];
const MUSIC_WORDS: &[&str] = &[
    "music", "musical", "guitar", "riff", "drum", "drums", "melody", "song", "vocalist", "chord",
    "orchestra", "singing", "bass", "piano", "tempo", "rhythm",
];
const SFX_WORDS: &[&str] = &[
    "noise", "ambience", "rain", "water", "engine", "footsteps", "wind", "stream", "birds",
    "clatter", "hum", "rustling", "thunder", "siren",
];
const AUDIO_WORDS: &[&str] = &[
    "audio", "sound", "recording", "clip", "hears", "listening", "acoustic", "heard",
];

fn count_hits(lower: &str, words: &[&str]) -> usize {
    words.iter().filter(|w| lower.contains(*w)).count()
}

fn classify_by_keywords(caption: &str, seed: u64) -> Category {
    let lower = caption.to_lowercase();
    let scores = [
        (count_hits(&lower, SPEECH_WORDS), Category::Speech),
        (count_hits(&lower, MUSIC_WORDS), Category::Music),
        (count_hits(&lower, SFX_WORDS), Category::Sfx),
    ];
    let best = scores.iter().max_by_key(|(n, _)| *n).unwrap();
    if best.0 > 0 {
        // Deterministic tie-break: first category with the max count.
        return scores.iter().find(|(n, _)| *n == best.0).unwrap().1;
    }
    match splitmix64(seed ^ fnv1a64(caption.as_bytes())) % 3 {
        0 => Category::Speech,
        1 => Category::Music,
        _ => Category::Sfx,
    }
}

fn hash_score_1_to_5(seed: u64, text: &str, dim: &str) -> u64 {
    1 + splitmix64(mix_seed(seed, dim) ^ fnv1a64(text.as_bytes())) % 5
}

fn first_sentence(caption: &str) -> &str {
    match caption.find(['.', ';']) {
        Some(i) => &caption[..=i],
        None => caption,
    }
}

/// Deterministic in-process judge: keyword tables decide categorical fields,
/// a seeded hash of the input decides numeric scores. Same input, same seed,
/// same answer — across processes and platforms.
#[derive(Debug, Clone)]
pub struct MockJudge {
    seed: u64,
    /// Fraction of output characters mangled on generative tasks; used to
    /// emulate a lossy round trip in cycle evaluation.
    corrupt_fraction: f64,
    /// Embedding dimension for `embed` replies.
    embed_dim: usize,
}

impl MockJudge {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            corrupt_fraction: 0.0,
            embed_dim: 32,
        }
    }

    pub fn corrupting(seed: u64, corrupt_fraction: f64) -> Self {
        Self {
            corrupt_fraction,
            ..Self::new(seed)
        }
    }

    pub fn with_embed_dim(mut self, dim: usize) -> Self {
        self.embed_dim = dim;
        self
    }

    fn mangle(&self, text: &str) -> String {
        if self.corrupt_fraction <= 0.0 {
            return text.to_string();
        }
        let base = mix_seed(self.seed, text);
        text.chars()
            .enumerate()
            .map(|(i, c)| {
                let h = splitmix64(base ^ i as u64);
                if (h % 1_000_000) as f64 / 1e6 < self.corrupt_fraction {
                    char::from(b'a' + (h >> 32) as u8 % 26)
                } else {
                    c
                }
            })
            .collect()
    }

    fn str_field<'a>(payload: &'a Value, key: &str) -> Result<&'a str, JudgeError> {
        payload
            .get(key)
            .and_then(Value::as_str)
            .ok_or_else(|| JudgeError::Schema(format!("payload missing string field {key:?}")))
    }

    fn respond(&self, task: &str, payload: &Value) -> Result<Value, JudgeError> {
        match task {
            TASK_CLASSIFY => {
                let caption = Self::str_field(payload, "caption")?;
                Ok(json!({ "category": classify_by_keywords(caption, self.seed) }))
            }
            TASK_SCORE_TEXT => {
                let caption = Self::str_field(payload, "caption")?;
                let lower = caption.to_lowercase();
                let audio_centric = count_hits(&lower, AUDIO_WORDS) > 0
                    || count_hits(&lower, SPEECH_WORDS) > 0
                    || count_hits(&lower, MUSIC_WORDS) > 0
                    || count_hits(&lower, SFX_WORDS) > 0;
                Ok(json!({
                    "audio_type": classify_by_keywords(caption, self.seed),
                    "is_english": !contains_non_latin(caption),
                    "is_audio_centric": audio_centric,
                    "intelligibility": hash_score_1_to_5(self.seed, caption, "intelligibility"),
                    "complexity": hash_score_1_to_5(self.seed, caption, "complexity"),
                    "diversity": hash_score_1_to_5(self.seed, caption, "diversity"),
                }))
            }
            TASK_SUMMARIZE => {
                let caption = Self::str_field(payload, "caption")?;
                let max_tokens = payload
                    .get("max_tokens")
                    .and_then(Value::as_u64)
                    .unwrap_or(77) as usize;
                let summary: Vec<&str> = caption.split_whitespace().take(max_tokens).collect();
                Ok(json!({ "summary": summary.join(" ") }))
            }
            TASK_SFT_UNDERSTAND => {
                let caption = Self::str_field(payload, "caption")?;
                let attrs: Vec<String> = payload
                    .get("attributes")
                    .and_then(Value::as_array)
                    .map(|a| {
                        a.iter()
                            .filter_map(Value::as_str)
                            .map(str::to_string)
                            .collect()
                    })
                    .unwrap_or_default();
                if attrs.is_empty() {
                    return Err(JudgeError::Schema("attributes must be non-empty".into()));
                }
                let joined = attrs.join(" and the ");
                let lead = first_sentence(caption);
                Ok(json!({
                    "request": format!("Listening to this clip, how would you characterize the {joined}?"),
                    "cot": format!(
                        "The caption states: {lead} Relating that to the {joined} pins down what the listener would notice."
                    ),
                    "answer": format!(
                        "Focusing on the {joined}: {lead}"
                    ),
                }))
            }
            TASK_SFT_GENERATE => {
                let caption = Self::str_field(payload, "caption")?;
                let persona = Self::str_field(payload, "persona")?;
                let imaginary = payload
                    .get("imaginary")
                    .and_then(Value::as_bool)
                    .unwrap_or(false);
                let lead = first_sentence(caption);
                let request = if imaginary {
                    format!(
                        "As {persona}, I need a sound that evokes the feeling behind this scene: {lead}"
                    )
                } else {
                    format!("As {persona}, please produce audio containing exactly this: {lead}")
                };
                Ok(json!({
                    "request": request,
                    "cot": format!(
                        "The request comes from {persona}; the target events are: {lead} Planning the mix accordingly."
                    ),
                }))
            }
            TASK_SFT_JUDGE => {
                let text = Self::str_field(payload, "sample")?;
                let dims = [
                    "request_diversity",
                    "request_response_alignment",
                    "thinking_coherence",
                    "caption_quality",
                    "training_value",
                ];
                let mut result = serde_json::Map::new();
                for dim in dims {
                    result.insert(dim.into(), json!(hash_score_1_to_5(self.seed, text, dim)));
                }
                Ok(Value::Object(result))
            }
            TASK_CAPTION => {
                let audio = Self::str_field(payload, "audio")?;
                Ok(json!({ "text": self.mangle(audio) }))
            }
            TASK_GENERATE => {
                let text = Self::str_field(payload, "text")?;
                Ok(json!({ "audio": self.mangle(text) }))
            }
            TASK_EMBED => {
                let data = Self::str_field(payload, "data")?;
                use rand::SeedableRng;
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, data));
                let mut v: Vec<f64> = (0..self.embed_dim)
                    .map(|_| rng.gen::<f64>() * 2.0 - 1.0)
                    .collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm == 0.0 {
                    v[0] = 1.0;
                } else {
                    for x in &mut v {
                        *x /= norm;
                    }
                }
                Ok(json!({ "vector": v }))
            }
            other => Err(JudgeError::Schema(format!("unknown task {other:?}"))),
        }
    }
}

impl Transport for MockJudge {
    fn call(&self, req: &JudgeRequest) -> Result<JudgeReply, JudgeError> {
        Ok(JudgeReply {
            record_id: req.record_id.clone(),
            result: self.respond(&req.task, &req.payload)?,
        })
    }
}

// ---------------------------------------------------------------------------
// Subprocess transport

struct PipeInner {
    child: Child,
    stdin: std::process::ChildStdin,
    replies: Receiver<std::io::Result<String>>,
}

impl Drop for PipeInner {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Speaks the wire format with a child process over stdin/stdout. One request
/// is in flight at a time; calls are serialized internally.
pub struct PipeTransport {
    inner: Mutex<PipeInner>,
    timeout: Duration,
}

impl PipeTransport {
    /// Spawns `command` through `sh -c`.
    pub fn spawn(command: &str, timeout_s: f64) -> Result<Self, JudgeError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(JudgeError::Spawn)?;
        let stdin = child.stdin.take().expect("stdin piped");
        let stdout = child.stdout.take().expect("stdout piped");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            inner: Mutex::new(PipeInner {
                child,
                stdin,
                replies: rx,
            }),
            timeout: Duration::from_secs_f64(timeout_s),
        })
    }
}

impl Transport for PipeTransport {
    fn call(&self, req: &JudgeRequest) -> Result<JudgeReply, JudgeError> {
        let mut inner = self.inner.lock().expect("pipe transport poisoned");
        let line = serde_json::to_string(req).expect("request serialization cannot fail");
        inner
            .stdin
            .write_all(line.as_bytes())
            .and_then(|_| inner.stdin.write_all(b"\n"))
            .and_then(|_| inner.stdin.flush())
            .map_err(|e| JudgeError::Transport(format!("write failed: {e}")))?;
        let reply = match inner.replies.recv_timeout(self.timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Err(JudgeError::Transport(format!("read failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => return Err(JudgeError::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                return Err(JudgeError::Transport("judge process closed stdout".into()))
            }
        };
        serde_json::from_str(&reply)
            .map_err(|e| JudgeError::Schema(format!("unparseable reply: {e}")))
    }
}

// ---------------------------------------------------------------------------
// Typed client

/// Rubric scores for one caption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextJudgeScores {
    pub audio_type: Category,
    pub is_english: bool,
    pub is_audio_centric: bool,
    pub intelligibility: u8,
    pub complexity: u8,
    pub diversity: u8,
}

impl TextJudgeScores {
    /// Mean of the three 1-5 rubric dimensions; the record's text-quality raw
    /// score.
    pub fn composite(&self) -> f64 {
        (self.intelligibility as f64 + self.complexity as f64 + self.diversity as f64) / 3.0
    }
}

/// Five-dimension rubric for a synthesized instruction sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftJudgeScores {
    pub request_diversity: u8,
    pub request_response_alignment: u8,
    pub thinking_coherence: u8,
    pub caption_quality: u8,
    pub training_value: u8,
}

impl SftJudgeScores {
    pub fn mean(&self) -> f64 {
        (self.request_diversity as f64
            + self.request_response_alignment as f64
            + self.thinking_coherence as f64
            + self.caption_quality as f64
            + self.training_value as f64)
            / 5.0
    }
}

/// Alignment summary with the flags downstream consumers need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub text: String,
    pub token_count: usize,
    /// The endpoint overshot the cap and the client hard-truncated.
    pub truncated: bool,
    /// The endpoint failed and the client fell back to truncating the input.
    pub fallback: bool,
}

/// Synthesized understanding-direction fields.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct UnderstandReply {
    pub request: String,
    pub cot: String,
    pub answer: String,
}

/// Synthesized generation-direction fields.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct GenerateReply {
    pub request: String,
    pub cot: String,
}

fn score_1_to_5(v: &Value, key: &str) -> Result<u8, String> {
    let raw = v
        .get(key)
        .and_then(Value::as_i64)
        .ok_or_else(|| format!("missing integer field {key:?}"))?;
    if !(1..=5).contains(&raw) {
        return Err(format!("{key} = {raw} outside 1..=5"));
    }
    Ok(raw as u8)
}

fn bool_field(v: &Value, key: &str) -> Result<bool, String> {
    v.get(key)
        .and_then(Value::as_bool)
        .ok_or_else(|| format!("missing boolean field {key:?}"))
}

fn str_result(v: &Value, key: &str) -> Result<String, String> {
    Ok(v.get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| format!("missing string field {key:?}"))?
        .to_string())
}

/// Typed judge client: owns a transport, validates reply schemas, and retries
/// malformed or failed calls up to `max_retries` extra attempts.
pub struct JudgeClient {
    transport: Box<dyn Transport>,
    pub max_retries: u32,
}

impl JudgeClient {
    pub fn mock(seed: u64) -> Self {
        Self::with_transport(Box::new(MockJudge::new(seed)), 2)
    }

    pub fn subprocess(command: &str, timeout_s: f64, max_retries: u32) -> Result<Self, JudgeError> {
        Ok(Self::with_transport(
            Box::new(PipeTransport::spawn(command, timeout_s)?),
            max_retries,
        ))
    }

    pub fn with_transport(transport: Box<dyn Transport>, max_retries: u32) -> Self {
        Self {
            transport,
            max_retries,
        }
    }

    /// Sends `task` for `record_id`, validating the reply with `parse`;
    /// schema violations and transport failures are retried.
    fn call<T>(
        &self,
        record_id: &str,
        task: &str,
        payload: Value,
        parse: impl Fn(&Value) -> Result<T, String>,
    ) -> Result<T, JudgeError> {
        let req = JudgeRequest {
            record_id: record_id.to_string(),
            task: task.to_string(),
            payload,
        };
        let attempts = self.max_retries + 1;
        let mut last = String::new();
        for _ in 0..attempts {
            match self.transport.call(&req) {
                Ok(reply) => {
                    if reply.record_id != req.record_id {
                        last = format!(
                            "reply for {:?} does not match request {:?}",
                            reply.record_id, req.record_id
                        );
                        continue;
                    }
                    match parse(&reply.result) {
                        Ok(v) => return Ok(v),
                        Err(e) => last = format!("schema violation: {e}"),
                    }
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(JudgeError::RetriesExhausted { attempts, last })
    }

    /// Classifies a caption into the coarse taxonomy; unparseable category
    /// labels are schema violations (retried, then surfaced).
    pub fn classify_taxonomy(
        &self,
        record_id: &str,
        caption: &str,
    ) -> Result<Category, JudgeError> {
        self.call(record_id, TASK_CLASSIFY, json!({ "caption": caption }), |v| {
            let label = str_result(v, "category")?;
            match label.as_str() {
                "speech" => Ok(Category::Speech),
                "music" => Ok(Category::Music),
                "sfx" => Ok(Category::Sfx),
                other => Err(format!("unknown category {other:?}")),
            }
        })
    }

    /// Scores a caption against the text rubric.
    pub fn score_text(
        &self,
        record_id: &str,
        caption: &str,
    ) -> Result<TextJudgeScores, JudgeError> {
        self.call(record_id, TASK_SCORE_TEXT, json!({ "caption": caption }), |v| {
            let label = str_result(v, "audio_type")?;
            let audio_type = match label.as_str() {
                "speech" => Category::Speech,
                "music" => Category::Music,
                "sfx" => Category::Sfx,
                other => return Err(format!("unknown audio_type {other:?}")),
            };
            Ok(TextJudgeScores {
                audio_type,
                is_english: bool_field(v, "is_english")?,
                is_audio_centric: bool_field(v, "is_audio_centric")?,
                intelligibility: score_1_to_5(v, "intelligibility")?,
                complexity: score_1_to_5(v, "complexity")?,
                diversity: score_1_to_5(v, "diversity")?,
            })
        })
    }

    /// Short caption for embedding-based alignment scoring, capped at
    /// `max_tokens` words. Overshooting replies are hard-truncated and
    /// flagged; endpoint failure falls back to truncating the input.
    pub fn summarize_for_alignment(
        &self,
        record_id: &str,
        caption: &str,
        max_tokens: usize,
    ) -> Summary {
        let outcome = self.call(
            record_id,
            TASK_SUMMARIZE,
            json!({ "caption": caption, "max_tokens": max_tokens }),
            |v| str_result(v, "summary"),
        );
        match outcome {
            Ok(text) => {
                let tokens: Vec<&str> = text.split_whitespace().collect();
                if tokens.len() > max_tokens {
                    let cut = tokens[..max_tokens].join(" ");
                    Summary {
                        token_count: max_tokens,
                        text: cut,
                        truncated: true,
                        fallback: false,
                    }
                } else {
                    Summary {
                        token_count: tokens.len(),
                        text,
                        truncated: false,
                        fallback: false,
                    }
                }
            }
            Err(_) => {
                let tokens: Vec<&str> = caption.split_whitespace().collect();
                let kept = tokens.len().min(max_tokens);
                Summary {
                    text: tokens[..kept].join(" "),
                    token_count: kept,
                    truncated: tokens.len() > max_tokens,
                    fallback: true,
                }
            }
        }
    }

    pub fn sft_understand(
        &self,
        record_id: &str,
        caption: &str,
        attributes: &[String],
    ) -> Result<UnderstandReply, JudgeError> {
        self.call(
            record_id,
            TASK_SFT_UNDERSTAND,
            json!({ "caption": caption, "attributes": attributes }),
            |v| {
                Ok(UnderstandReply {
                    request: str_result(v, "request")?,
                    cot: str_result(v, "cot")?,
                    answer: str_result(v, "answer")?,
                })
            },
        )
    }

    pub fn sft_generate(
        &self,
        record_id: &str,
        caption: &str,
        persona: &str,
        imaginary: bool,
    ) -> Result<GenerateReply, JudgeError> {
        self.call(
            record_id,
            TASK_SFT_GENERATE,
            json!({ "caption": caption, "persona": persona, "imaginary": imaginary }),
            |v| {
                Ok(GenerateReply {
                    request: str_result(v, "request")?,
                    cot: str_result(v, "cot")?,
                })
            },
        )
    }

    pub fn sft_judge(&self, record_id: &str, sample: &str) -> Result<SftJudgeScores, JudgeError> {
        self.call(record_id, TASK_SFT_JUDGE, json!({ "sample": sample }), |v| {
            Ok(SftJudgeScores {
                request_diversity: score_1_to_5(v, "request_diversity")?,
                request_response_alignment: score_1_to_5(v, "request_response_alignment")?,
                thinking_coherence: score_1_to_5(v, "thinking_coherence")?,
                caption_quality: score_1_to_5(v, "caption_quality")?,
                training_value: score_1_to_5(v, "training_value")?,
            })
        })
    }

    /// Cycle-evaluation endpoint: audio payload to caption text.
    pub fn caption(&self, record_id: &str, audio: &str) -> Result<String, JudgeError> {
        self.call(record_id, TASK_CAPTION, json!({ "audio": audio }), |v| {
            str_result(v, "text")
        })
    }

    /// Cycle-evaluation endpoint: caption text to audio payload.
    pub fn generate(&self, record_id: &str, text: &str) -> Result<String, JudgeError> {
        self.call(record_id, TASK_GENERATE, json!({ "text": text }), |v| {
            str_result(v, "audio")
        })
    }

    /// Cycle-evaluation endpoint: payload to embedding vector.
    pub fn embed(&self, record_id: &str, data: &str) -> Result<Vec<f64>, JudgeError> {
        self.call(record_id, TASK_EMBED, json!({ "data": data }), |v| {
            let arr = v
                .get("vector")
                .and_then(Value::as_array)
                .ok_or("missing array field \"vector\"")?;
            let vec: Option<Vec<f64>> = arr.iter().map(Value::as_f64).collect();
            let vec = vec.ok_or("vector entries must be numbers")?;
            if vec.is_empty() {
                return Err("vector is empty".into());
            }
            Ok(vec)
        })
    }
}
