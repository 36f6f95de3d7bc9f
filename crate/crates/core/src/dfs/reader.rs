use std::io::{self, Read, Seek, SeekFrom};

use super::{Dfs, FileMeta};

/// Streams a file block by block. Holds one block in memory at a time.
pub struct DfsReader<'a> {
    dfs: &'a Dfs,
    meta: FileMeta,
    pos: u64,
    current: Option<(usize, u64, Vec<u8>)>,
}

impl<'a> DfsReader<'a> {
    pub(super) fn new(dfs: &'a Dfs, meta: FileMeta) -> Self {
        Self {
            dfs,
            meta,
            pos: 0,
            current: None,
        }
    }

    pub fn meta(&self) -> &FileMeta {
        &self.meta
    }

    pub fn position(&self) -> u64 {
        self.pos
    }
}

impl Read for DfsReader<'_> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if buf.is_empty() {
            return Ok(0);
        }
        let Some((index, within)) = self.meta.locate(self.pos) else {
            return Ok(0);
        };
        let cached = matches!(&self.current, Some((i, _, _)) if *i == index);
        if !cached {
            let block = &self.meta.blocks[index];
            let data = self
                .dfs
                .read_block(&self.meta.path, block)
                .map_err(io::Error::other)?;
            let start = self.pos - within;
            self.current = Some((index, start, data));
        }
        let (_, _, data) = self.current.as_ref().expect("block loaded");
        let available = &data[within as usize..];
        let n = available.len().min(buf.len());
        buf[..n].copy_from_slice(&available[..n]);
        self.pos += n as u64;
        Ok(n)
    }
}

impl Seek for DfsReader<'_> {
    fn seek(&mut self, pos: SeekFrom) -> io::Result<u64> {
        let target = match pos {
            SeekFrom::Start(p) => Some(p),
            SeekFrom::End(d) => self.meta.length.checked_add_signed(d),
            SeekFrom::Current(d) => self.pos.checked_add_signed(d),
        };
        self.pos = target.ok_or_else(|| {
            io::Error::new(io::ErrorKind::InvalidInput, "seek before start of file")
        })?;
        Ok(self.pos)
    }
}
