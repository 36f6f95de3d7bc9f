use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use super::Record;
use crate::streaming::codec::{decode_all, StreamingCodec};

const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET_BASIS, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// Reduce partition for a key: FNV-1a 64 modulo the reducer count.
pub fn partition(key: &[u8], num_reducers: usize) -> usize {
    assert!(num_reducers >= 1, "at least one reducer");
    (fnv1a64(key) % num_reducers as u64) as usize
}

/// Stable sort by raw key bytes.
pub fn sort_records(records: &mut [Record]) {
    records.sort_by(|a, b| a.key.cmp(&b.key));
}

/// K-way merge of key-sorted streams. Equal keys come out in stream order,
/// and in input order within a stream.
pub fn merge_sorted<I>(streams: Vec<I>) -> MergeSorted<I>
where
    I: Iterator<Item = Record>,
{
    let mut streams = streams;
    let mut heap = BinaryHeap::with_capacity(streams.len());
    for (i, s) in streams.iter_mut().enumerate() {
        if let Some(record) = s.next() {
            heap.push(Reverse(Head { record, stream: i }));
        }
    }
    MergeSorted { streams, heap }
}

pub struct MergeSorted<I> {
    streams: Vec<I>,
    heap: BinaryHeap<Reverse<Head>>,
}

struct Head {
    record: Record,
    stream: usize,
}

impl Ord for Head {
    fn cmp(&self, other: &Self) -> Ordering {
        self.record
            .key
            .cmp(&other.record.key)
            .then(self.stream.cmp(&other.stream))
    }
}

impl PartialOrd for Head {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Head {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Head {}

impl<I: Iterator<Item = Record>> Iterator for MergeSorted<I> {
    type Item = Record;

    fn next(&mut self) -> Option<Record> {
        let Reverse(Head { record, stream }) = self.heap.pop()?;
        if let Some(next) = self.streams[stream].next() {
            self.heap.push(Reverse(Head {
                record: next,
                stream,
            }));
        }
        Some(record)
    }
}

/// Writes records in the streaming text codec.
pub fn write_spill(path: &Path, records: &[Record]) -> io::Result<()> {
    let codec = StreamingCodec::default();
    let mut w = BufWriter::new(fs::File::create(path)?);
    let mut line = Vec::new();
    for r in records {
        line.clear();
        codec
            .encode_into(r, &mut line)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        w.write_all(&line)?;
    }
    w.flush()
}

pub fn read_spill(path: &Path) -> io::Result<Vec<Record>> {
    Ok(decode_all(&fs::read(path)?))
}
