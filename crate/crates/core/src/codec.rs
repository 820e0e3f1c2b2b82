//! Audio codec token layout.
//!
//! Codec output is a grid of `T` frames by `S` codebooks. For streaming
//! generation the grid is flattened with a per-codebook delay: codebook `s`
//! is shifted `s` steps later, so step `t` of the flat stream carries
//! `grid[t - s][s]` and out-of-range slots hold the pad token. The flat
//! stream is `(T + S - 1) * S` tokens long and the transform is exactly
//! invertible.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("grid must have at least one frame and one codebook")]
    EmptyGrid,
    #[error("data length {got} does not match {frames} frames x {codebooks} codebooks")]
    DataLength {
        got: usize,
        frames: usize,
        codebooks: usize,
    },
    #[error("flat stream length {got} does not match expected {expected}")]
    FlatLength { got: usize, expected: usize },
    #[error("structural pad slot at step {step}, codebook {codebook} holds {got}, not the pad token {pad_id}")]
    PadViolation { step: usize, codebook: usize, got: u32, pad_id: u32 },
    #[error("byte stream too short for header")]
    TruncatedHeader,
    #[error("byte stream length {got} does not match header ({expected} bytes)")]
    TruncatedBody { got: usize, expected: usize },
    #[error("duration and frame rate must be positive and finite")]
    BadDuration,
}

/// `T x S` grid of codec tokens, row-major by frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenGrid {
    frames: usize,
    codebooks: usize,
    data: Vec<u32>,
}

impl TokenGrid {
    pub fn new(frames: usize, codebooks: usize, data: Vec<u32>) -> Result<Self, CodecError> {
        if frames == 0 || codebooks == 0 {
            return Err(CodecError::EmptyGrid);
        }
        if data.len() != frames * codebooks {
            return Err(CodecError::DataLength {
                got: data.len(),
                frames,
                codebooks,
            });
        }
        Ok(Self {
            frames,
            codebooks,
            data,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn codebooks(&self) -> usize {
        self.codebooks
    }

    pub fn get(&self, frame: usize, codebook: usize) -> u32 {
        self.data[frame * self.codebooks + codebook]
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }
}

/// Length of the delayed flat stream for a `frames x codebooks` grid.
pub fn flat_len(frames: usize, codebooks: usize) -> usize {
    (frames + codebooks - 1) * codebooks
}

/// Frame count covering `duration_s` at `frame_rate_hz` (rounded up).
pub fn frames_for_duration(duration_s: f64, frame_rate_hz: f64) -> Result<usize, CodecError> {
    if !(duration_s.is_finite() && frame_rate_hz.is_finite())
        || duration_s <= 0.0
        || frame_rate_hz <= 0.0
    {
        return Err(CodecError::BadDuration);
    }
    Ok((duration_s * frame_rate_hz).ceil() as usize)
}

/// Flat token count of a clip: delayed layout over its frame grid.
pub fn audio_token_count(
    duration_s: f64,
    frame_rate_hz: f64,
    codebooks: usize,
) -> Result<usize, CodecError> {
    if codebooks == 0 {
        return Err(CodecError::EmptyGrid);
    }
    Ok(flat_len(frames_for_duration(duration_s, frame_rate_hz)?, codebooks))
}

/// Applies the delay pattern: step `t`, codebook `s` holds
/// `grid[t - s][s]`, or `pad_id` where `t - s` leaves the grid.
pub fn interleave(grid: &TokenGrid, pad_id: u32) -> Vec<u32> {
    let (t_max, s_max) = (grid.frames(), grid.codebooks());
    let steps = t_max + s_max - 1;
    let mut flat = Vec::with_capacity(steps * s_max);
    for step in 0..steps {
        for s in 0..s_max {
            flat.push(match step.checked_sub(s) {
                Some(t) if t < t_max => grid.get(t, s),
                _ => pad_id,
            });
        }
    }
    flat
}

/// Inverts [`interleave`]. Structural pad slots are validated against
/// `pad_id`; in-grid tokens may hold any value, including `pad_id`.
pub fn deinterleave(
    flat: &[u32],
    frames: usize,
    codebooks: usize,
    pad_id: u32,
) -> Result<TokenGrid, CodecError> {
    if frames == 0 || codebooks == 0 {
        return Err(CodecError::EmptyGrid);
    }
    let expected = flat_len(frames, codebooks);
    if flat.len() != expected {
        return Err(CodecError::FlatLength {
            got: flat.len(),
            expected,
        });
    }
    let steps = frames + codebooks - 1;
    let mut data = vec![0u32; frames * codebooks];
    for step in 0..steps {
        for s in 0..codebooks {
            let token = flat[step * codebooks + s];
            match step.checked_sub(s) {
                Some(t) if t < frames => data[t * codebooks + s] = token,
                _ => {
                    if token != pad_id {
                        return Err(CodecError::PadViolation {
                            step,
                            codebook: s,
                            got: token,
                            pad_id,
                        });
                    }
                }
            }
        }
    }
    TokenGrid::new(frames, codebooks, data)
}

/// Serializes a grid to bytes: header `{frames, codebooks, pad_id}` as three
/// little-endian u32 words, then the delayed flat stream as u32 words.
pub fn encode_bytes(grid: &TokenGrid, pad_id: u32) -> Vec<u8> {
    let flat = interleave(grid, pad_id);
    let mut out = Vec::with_capacity(12 + flat.len() * 4);
    out.extend_from_slice(&(grid.frames() as u32).to_le_bytes());
    out.extend_from_slice(&(grid.codebooks() as u32).to_le_bytes());
    out.extend_from_slice(&pad_id.to_le_bytes());
    for token in flat {
        out.extend_from_slice(&token.to_le_bytes());
    }
    out
}

/// Inverts [`encode_bytes`], returning the grid and its pad token.
pub fn decode_bytes(bytes: &[u8]) -> Result<(TokenGrid, u32), CodecError> {
    if bytes.len() < 12 {
        return Err(CodecError::TruncatedHeader);
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i * 4..i * 4 + 4].try_into().unwrap());
    let frames = word(0) as usize;
    let codebooks = word(1) as usize;
    let pad_id = word(2);
    if frames == 0 || codebooks == 0 {
        return Err(CodecError::EmptyGrid);
    }
    let expected = 12 + flat_len(frames, codebooks) * 4;
    if bytes.len() != expected {
        return Err(CodecError::TruncatedBody {
            got: bytes.len(),
            expected,
        });
    }
    let flat: Vec<u32> = (3..3 + flat_len(frames, codebooks)).map(word).collect();
    let grid = deinterleave(&flat, frames, codebooks, pad_id)?;
    Ok((grid, pad_id))
}
