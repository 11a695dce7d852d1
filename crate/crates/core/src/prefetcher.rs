//! GPU readahead prefetcher: request sizing and the per-threadblock private
//! buffer that holds pages fetched beyond the one requested.

use std::collections::BTreeMap;

use crate::host_os::FileId;
use crate::rpc::{PageChunk, TbId};

/// Whether requests for a file carry a prefetch span.
pub fn prefetch_enabled(prefetch_bytes: u64, read_only: bool) -> bool {
    prefetch_bytes > 0 && read_only
}

/// Bytes to request for the page containing `offset`: one page plus the
/// prefetch span, clipped at end of file.
pub fn request_span(offset: u64, page_size: u64, prefetch_size: u64, file_size: u64) -> u64 {
    assert!(offset < file_size, "request at or past EOF");
    let base = offset / page_size * page_size;
    (page_size + prefetch_size).min(file_size - base)
}

#[derive(Debug, Clone)]
pub struct PrivateBuffer {
    pub owner_tb: TbId,
    capacity_bytes: u64,
    entries: BTreeMap<(FileId, u64), PageChunk>,
    bytes: u64,
    pub fill_seq: u64,
    pub hits: u64,
    /// Bytes dropped unconsumed by a newer fill.
    pub discarded_bytes: u64,
}

impl PrivateBuffer {
    pub fn new(owner_tb: TbId, capacity_bytes: u64) -> Self {
        Self {
            owner_tb,
            capacity_bytes,
            entries: BTreeMap::new(),
            bytes: 0,
            fill_seq: 0,
            hits: 0,
            discarded_bytes: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn bytes(&self) -> u64 {
        self.bytes
    }

    /// Removes and returns the page if present.
    pub fn pb_lookup(&mut self, file: FileId, page: u64) -> Option<PageChunk> {
        let hit = self.entries.remove(&(file, page))?;
        self.bytes -= hit.len;
        self.hits += 1;
        Some(hit)
    }

    /// Replaces the contents with `pages`.
    pub fn pb_fill(&mut self, file: FileId, pages: impl IntoIterator<Item = PageChunk>) {
        self.discarded_bytes += self.bytes;
        self.entries.clear();
        self.bytes = 0;
        self.fill_seq += 1;
        for p in pages {
            self.bytes += p.len;
            self.entries.insert((file, p.page_index), p);
        }
        assert!(
            self.bytes <= self.capacity_bytes,
            "private buffer overfilled: {} > {}",
            self.bytes,
            self.capacity_bytes
        );
    }

    /// Drops everything; returns the bytes discarded.
    pub fn clear(&mut self) -> u64 {
        let b = self.bytes;
        self.discarded_bytes += b;
        self.entries.clear();
        self.bytes = 0;
        b
    }
}
