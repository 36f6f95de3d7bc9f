use std::io::{BufRead, BufReader, Seek, SeekFrom};

use super::{AttemptError, InputSplit};
use crate::dfs::{Dfs, FileMeta};
use crate::streaming::codec::{strip_newline, RECORD_SEPARATOR};

/// Cuts a file into `ceil(length / split_size)` contiguous splits.
pub fn plan_splits(file: &FileMeta, split_size: u64) -> Vec<InputSplit> {
    assert!(split_size >= 1, "split size must be positive");
    (0..file.length.div_ceil(split_size))
        .map(|i| {
            let offset = i * split_size;
            InputSplit {
                path: file.path.clone(),
                offset,
                length: split_size.min(file.length - offset),
                index: i as usize,
            }
        })
        .collect()
}

/// Lines whose first byte lies inside the split.
///
/// A split not at the start of the file skips through the first newline at
/// or after `offset - 1`; the line straddling the split end is read to
/// completion. Together these put every line in exactly one split.
pub fn read_split_lines(dfs: &Dfs, split: &InputSplit) -> Result<Vec<Vec<u8>>, AttemptError> {
    let mut reader = BufReader::with_capacity(64 * 1024, dfs.open(&split.path)?);
    let mut pos = split.offset;
    let mut buf = Vec::new();
    if split.offset > 0 {
        reader.seek(SeekFrom::Start(split.offset - 1))?;
        pos = split.offset - 1 + reader.read_until(RECORD_SEPARATOR, &mut buf)? as u64;
    }
    let end = split.offset + split.length;
    let mut lines = Vec::new();
    while pos < end {
        buf.clear();
        let n = reader.read_until(RECORD_SEPARATOR, &mut buf)?;
        if n == 0 {
            break;
        }
        pos += n as u64;
        lines.push(strip_newline(&buf).to_vec());
    }
    Ok(lines)
}
