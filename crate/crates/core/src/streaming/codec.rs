//! Line-oriented text codec shared by workers, spill files and part files.
//!
//! A record travels as `key TAB value NEWLINE`. Decoding splits at the first
//! TAB; a line without any TAB is a key with an empty value.

use thiserror::Error;

use crate::engine::Record;

pub const FIELD_SEPARATOR: u8 = b'\t';
pub const RECORD_SEPARATOR: u8 = b'\n';

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("record {field} contains a newline byte at offset {offset}")]
    IllegalByte { field: &'static str, offset: usize },
    #[error("field separator must differ from the record separator")]
    SeparatorClash,
}

/// Separator configuration. The record separator is always newline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamingCodec {
    field_separator: u8,
}

impl Default for StreamingCodec {
    fn default() -> Self {
        Self {
            field_separator: FIELD_SEPARATOR,
        }
    }
}

impl StreamingCodec {
    pub fn with_field_separator(field_separator: u8) -> Result<Self, CodecError> {
        if field_separator == RECORD_SEPARATOR {
            return Err(CodecError::SeparatorClash);
        }
        Ok(Self { field_separator })
    }

    pub fn field_separator(&self) -> u8 {
        self.field_separator
    }

    pub fn record_separator(&self) -> u8 {
        RECORD_SEPARATOR
    }

    /// Appends the encoded line, including its trailing newline, to `out`.
    pub fn encode_into(&self, record: &Record, out: &mut Vec<u8>) -> Result<(), CodecError> {
        check_field("key", &record.key)?;
        check_field("value", &record.value)?;
        out.reserve(record.key.len() + record.value.len() + 2);
        out.extend_from_slice(&record.key);
        out.push(self.field_separator);
        out.extend_from_slice(&record.value);
        out.push(RECORD_SEPARATOR);
        Ok(())
    }

    pub fn encode(&self, record: &Record) -> Result<Vec<u8>, CodecError> {
        let mut out = Vec::new();
        self.encode_into(record, &mut out)?;
        Ok(out)
    }

    /// Splits a newline-stripped line at the first field separator.
    pub fn decode(&self, line: &[u8]) -> Record {
        match line.iter().position(|&b| b == self.field_separator) {
            Some(at) => Record::new(&line[..at], &line[at + 1..]),
            None => Record::new(line, b""),
        }
    }
}

fn check_field(field: &'static str, bytes: &[u8]) -> Result<(), CodecError> {
    match bytes.iter().position(|&b| b == RECORD_SEPARATOR) {
        Some(offset) => Err(CodecError::IllegalByte { field, offset }),
        None => Ok(()),
    }
}

/// `key TAB value NEWLINE` with the default separators.
pub fn encode_record(record: &Record) -> Result<Vec<u8>, CodecError> {
    StreamingCodec::default().encode(record)
}

/// Inverse of [`encode_record`] for a line whose newline was already removed.
pub fn decode_worker_line(line: &[u8]) -> Record {
    StreamingCodec::default().decode(line)
}

/// Removes one trailing newline, if present.
pub fn strip_newline(line: &[u8]) -> &[u8] {
    line.strip_suffix(&[RECORD_SEPARATOR]).unwrap_or(line)
}

/// Iterates the newline-terminated lines of `buf`, without their newlines.
/// A final unterminated line is yielded as well.
pub fn lines(buf: &[u8]) -> impl Iterator<Item = &[u8]> {
    let mut rest = buf;
    std::iter::from_fn(move || {
        if rest.is_empty() {
            return None;
        }
        match rest.iter().position(|&b| b == RECORD_SEPARATOR) {
            Some(at) => {
                let line = &rest[..at];
                rest = &rest[at + 1..];
                Some(line)
            }
            None => {
                let line = rest;
                rest = &[];
                Some(line)
            }
        }
    })
}

/// Decodes every line of an encoded buffer.
pub fn decode_all(buf: &[u8]) -> Vec<Record> {
    lines(buf).map(decode_worker_line).collect()
}
