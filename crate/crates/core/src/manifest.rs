//! JSONL manifest reading and writing.
//!
//! A manifest is UTF-8 JSONL, one record per line. The writer emits the
//! canonical form: compact JSON, schema fields first in declaration order,
//! unknown keys preserved in their original order. `write(read(m))` is
//! byte-identical for canonical manifests; one read/write pass canonicalizes
//! any other valid manifest.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::record::CurationRecord;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{errors} of {lines} lines malformed, above the allowed rate {max_rate}")]
    TooManyErrors {
        errors: usize,
        lines: usize,
        max_rate: f64,
    },
}

/// A malformed line, cited by 1-based line number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for LineError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

/// Parses one manifest line into a validated record.
pub fn parse_record_line(line: &str) -> Result<CurationRecord, String> {
    let rec: CurationRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    rec.validate()?;
    Ok(rec)
}

/// Canonical single-line encoding of a record.
pub fn canonical_line(record: &CurationRecord) -> String {
    serde_json::to_string(record).expect("record serialization cannot fail")
}

/// Streaming manifest reader; yields records or per-line errors in file order.
pub struct ManifestReader<R: BufRead> {
    lines: std::io::Lines<R>,
    line_no: usize,
}

impl ManifestReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ManifestError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| ManifestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self {
            lines: BufReader::new(file).lines(),
            line_no: 0,
        })
    }
}

impl<R: BufRead> Iterator for ManifestReader<R> {
    type Item = Result<CurationRecord, LineError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let raw = self.lines.next()?;
            self.line_no += 1;
            let line = match raw {
                Ok(l) => l,
                Err(e) => {
                    return Some(Err(LineError {
                        line: self.line_no,
                        message: e.to_string(),
                    }))
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            return Some(match parse_record_line(&line) {
                Ok(rec) => Ok(rec),
                Err(message) => Err(LineError {
                    line: self.line_no,
                    message,
                }),
            });
        }
    }
}

/// Result of a tolerant full-file read.
#[derive(Debug, Default)]
pub struct ReadOutcome {
    pub records: Vec<CurationRecord>,
    pub errors: Vec<LineError>,
}

/// Reads a whole manifest, collecting malformed lines instead of stopping.
///
/// Duplicate `record_id`s are reported as line errors on the later
/// occurrence. Fails with [`ManifestError::TooManyErrors`] when the error
/// rate exceeds `max_error_rate` (0.0 means any malformed line aborts).
pub fn read_manifest_lenient(
    path: impl AsRef<Path>,
    max_error_rate: f64,
) -> Result<ReadOutcome, ManifestError> {
    let reader = ManifestReader::open(path)?;
    let mut out = ReadOutcome::default();
    let mut seen_ids: HashSet<String> = HashSet::new();
    let mut lines = 0usize;
    for (idx, item) in reader.enumerate() {
        lines += 1;
        match item {
            Ok(rec) => {
                if !seen_ids.insert(rec.record_id.clone()) {
                    out.errors.push(LineError {
                        line: idx + 1,
                        message: format!("duplicate record_id {:?}", rec.record_id),
                    });
                } else {
                    out.records.push(rec);
                }
            }
            Err(e) => out.errors.push(e),
        }
    }
    if !out.errors.is_empty() {
        let rate_bound = max_error_rate * lines as f64;
        if out.errors.len() as f64 > rate_bound {
            return Err(ManifestError::TooManyErrors {
                errors: out.errors.len(),
                lines,
                max_rate: max_error_rate,
            });
        }
    }
    Ok(out)
}

/// Strict read: any malformed line aborts.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<CurationRecord>, ManifestError> {
    Ok(read_manifest_lenient(path, 0.0)?.records)
}

/// Writes records in canonical JSONL form.
pub fn write_manifest(
    path: impl AsRef<Path>,
    records: &[CurationRecord],
) -> Result<(), ManifestError> {
    let path = path.as_ref();
    let io_err = |source| ManifestError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    for rec in records {
        w.write_all(canonical_line(rec).as_bytes()).map_err(io_err)?;
        w.write_all(b"\n").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}
