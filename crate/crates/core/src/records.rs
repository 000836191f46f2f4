//! Trial record serialization.
//!
//! * Text: one JSON object per line with `trial_index`, `setting_A`,
//!   `setting_B`, `outcomes_A`, `outcomes_B` (slot bitmasks, bit 0 = slot 1)
//!   and `trial_time_ns`.
//! * Binary: 22 bytes per record, little-endian, no header:
//!   `u64 trial_index, u8 setting_A, u8 setting_B, u16 outcomes_A,
//!   u16 outcomes_B, u64 trial_time_ns`.
//!
//! Readers are lazy, so a consumer that stops early never touches the rest
//! of the file.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simulator::{SlotOutcomes, TrialRecord};

pub const BINARY_RECORD_LEN: usize = 22;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Text { line: usize, message: String },
    #[error("record {index}: setting byte {value} is not 0 or 1")]
    Setting { index: usize, value: u8 },
    #[error("truncated binary record after {0} complete records")]
    Truncated(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RecordFormat {
    Text,
    #[default]
    Binary,
}

impl RecordFormat {
    pub fn extension(self) -> &'static str {
        match self {
            RecordFormat::Text => "jsonl",
            RecordFormat::Binary => "bin",
        }
    }
}

pub fn encode_binary(record: &TrialRecord) -> [u8; BINARY_RECORD_LEN] {
    let mut out = [0u8; BINARY_RECORD_LEN];
    out[0..8].copy_from_slice(&record.trial_index.to_le_bytes());
    out[8] = record.setting_a as u8;
    out[9] = record.setting_b as u8;
    out[10..12].copy_from_slice(&record.outcomes_a.0.to_le_bytes());
    out[12..14].copy_from_slice(&record.outcomes_b.0.to_le_bytes());
    out[14..22].copy_from_slice(&record.trial_time_ns.to_le_bytes());
    out
}

pub fn decode_binary(bytes: &[u8; BINARY_RECORD_LEN], index: usize) -> Result<TrialRecord, RecordError> {
    let setting = |value: u8| match value {
        0 => Ok(false),
        1 => Ok(true),
        value => Err(RecordError::Setting { index, value }),
    };
    let u64_at = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
    let u16_at = |i: usize| u16::from_le_bytes(bytes[i..i + 2].try_into().unwrap());
    Ok(TrialRecord {
        trial_index: u64_at(0),
        setting_a: setting(bytes[8])?,
        setting_b: setting(bytes[9])?,
        outcomes_a: SlotOutcomes(u16_at(10)),
        outcomes_b: SlotOutcomes(u16_at(12)),
        trial_time_ns: u64_at(14),
    })
}

/// Writes records in either format.
pub struct RecordWriter<W: Write> {
    inner: W,
    format: RecordFormat,
    written: u64,
}

impl<W: Write> RecordWriter<W> {
    pub fn new(inner: W, format: RecordFormat) -> Self {
        Self {
            inner,
            format,
            written: 0,
        }
    }

    pub fn write(&mut self, record: &TrialRecord) -> Result<(), RecordError> {
        match self.format {
            RecordFormat::Binary => self.inner.write_all(&encode_binary(record))?,
            RecordFormat::Text => {
                serde_json::to_writer(&mut self.inner, record).map_err(io::Error::from)?;
                self.inner.write_all(b"\n")?;
            }
        }
        self.written += 1;
        Ok(())
    }

    pub fn written(&self) -> u64 {
        self.written
    }

    pub fn finish(mut self) -> Result<W, RecordError> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Lazy record reader over either format.
pub enum RecordReader<R: BufRead> {
    Binary { inner: R, count: usize },
    Text { inner: R, line: usize },
}

impl<R: BufRead> RecordReader<R> {
    pub fn new(inner: R, format: RecordFormat) -> Self {
        match format {
            RecordFormat::Binary => RecordReader::Binary { inner, count: 0 },
            RecordFormat::Text => RecordReader::Text { inner, line: 0 },
        }
    }
}

impl<R: BufRead> Iterator for RecordReader<R> {
    type Item = Result<TrialRecord, RecordError>;

    fn next(&mut self) -> Option<Self::Item> {
        match self {
            RecordReader::Binary { inner, count } => {
                let mut buf = [0u8; BINARY_RECORD_LEN];
                let mut filled = 0;
                while filled < BINARY_RECORD_LEN {
                    match inner.read(&mut buf[filled..]) {
                        Ok(0) => break,
                        Ok(n) => filled += n,
                        Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                        Err(e) => return Some(Err(e.into())),
                    }
                }
                match filled {
                    0 => None,
                    BINARY_RECORD_LEN => {
                        let record = decode_binary(&buf, *count);
                        *count += 1;
                        Some(record)
                    }
                    _ => Some(Err(RecordError::Truncated(*count))),
                }
            }
            RecordReader::Text { inner, line } => loop {
                let mut text = String::new();
                match inner.read_line(&mut text) {
                    Ok(0) => return None,
                    Ok(_) => {}
                    Err(e) => return Some(Err(e.into())),
                }
                *line += 1;
                let trimmed = text.trim();
                if trimmed.is_empty() || trimmed.starts_with('#') {
                    continue;
                }
                return Some(serde_json::from_str(trimmed).map_err(|e| RecordError::Text {
                    line: *line,
                    message: e.to_string(),
                }));
            },
        }
    }
}
