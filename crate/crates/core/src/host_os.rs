//! Host OS page cache and the ondemand readahead prefetcher.
//!
//! Pages are tracked at 4KB granularity. A page becomes resident the moment
//! I/O for it is issued; its `ready_at` time says when the data lands, so a
//! page is in-flight before `ready_at` and present afterwards. Readers that
//! touch an in-flight page block until `ready_at`.
//!
//! Readahead follows the Linux ondemand scheme:
//! - a cold read at file start, or a read contiguous with the previous one
//!   (or whose preceding page is already cached), opens a window of
//!   `min(4 * request, ra_max)` pages; the part beyond the request is read
//!   asynchronously and its first page carries a marker;
//! - a read that touches a marker page issues the next window, twice the
//!   marker's window (capped at `ra_max`), starting at the first uncached
//!   page after the marker;
//! - anything else reads exactly the requested pages and resets the window.
//!
//! Missing pages go to the SSD in chunks of at most `ra_max`. A read larger
//! than that keeps `LARGE_READ_DEPTH` chunks in flight, as the marker on
//! each chunk triggers the next one while the reader waits.
//!
//! Markers remember the size of the window they belong to, which is what
//! lets several interleaved streams share one descriptor.

use std::collections::{BTreeMap, HashMap};
use std::ops::Range;

use crate::devices::SsdModel;
use crate::simcore::SimTime;

/// Readahead chunks kept in flight while a single read spans several.
pub const LARGE_READ_DEPTH: usize = 2;

pub type FileId = u32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HostConfig {
    pub os_page_size: u64,
    pub cache_capacity_bytes: u64,
    pub ra_max_bytes: u64,
    pub cpu_copy_ns_per_byte: f64,
}

impl Default for HostConfig {
    fn default() -> Self {
        Self {
            os_page_size: 4096,
            cache_capacity_bytes: 64 << 30,
            ra_max_bytes: 128 << 10,
            cpu_copy_ns_per_byte: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PageStatus {
    InFlight,
    Present,
}

#[derive(Debug, Clone, Copy)]
pub struct PageState {
    pub ready_at: SimTime,
    /// Window size (pages) of the async window this marker belongs to.
    pub marker: Option<u64>,
    lru_stamp: u64,
}

impl PageState {
    pub fn status(&self, now: SimTime) -> PageStatus {
        if now < self.ready_at {
            PageStatus::InFlight
        } else {
            PageStatus::Present
        }
    }
}

type PageKey = (FileId, u64);

/// Global-LRU page cache.
#[derive(Debug, Clone)]
pub struct OsPageCache {
    page_size: u64,
    capacity_pages: usize,
    resident: HashMap<PageKey, PageState>,
    lru: BTreeMap<u64, PageKey>,
    next_stamp: u64,
    pub evictions: u64,
}

impl OsPageCache {
    pub fn new(page_size: u64, capacity_bytes: u64) -> Self {
        let capacity_pages = (capacity_bytes / page_size).max(1) as usize;
        Self {
            page_size,
            capacity_pages,
            resident: HashMap::new(),
            lru: BTreeMap::new(),
            next_stamp: 0,
            evictions: 0,
        }
    }

    pub fn page_size(&self) -> u64 {
        self.page_size
    }

    pub fn capacity_pages(&self) -> usize {
        self.capacity_pages
    }

    pub fn len(&self) -> usize {
        self.resident.len()
    }

    pub fn is_empty(&self) -> bool {
        self.resident.is_empty()
    }

    pub fn get(&self, file: FileId, page: u64) -> Option<&PageState> {
        self.resident.get(&(file, page))
    }

    pub fn is_resident(&self, file: FileId, page: u64) -> bool {
        self.resident.contains_key(&(file, page))
    }

    fn touch(&mut self, key: PageKey) {
        let stamp = self.next_stamp;
        self.next_stamp += 1;
        if let Some(st) = self.resident.get_mut(&key) {
            self.lru.remove(&st.lru_stamp);
            st.lru_stamp = stamp;
            self.lru.insert(stamp, key);
        }
    }

    /// Inserts an absent page as in-flight until `ready_at`.
    fn insert(&mut self, key: PageKey, ready_at: SimTime) {
        debug_assert!(
            !self.resident.contains_key(&key),
            "page fetched twice: {key:?}"
        );
        while self.resident.len() >= self.capacity_pages {
            let (&stamp, &victim) = self
                .lru
                .iter()
                .next()
                .expect("nonempty cache has LRU entries");
            self.lru.remove(&stamp);
            self.resident.remove(&victim);
            self.evictions += 1;
        }
        let stamp = self.next_stamp;
        self.next_stamp += 1;
        self.resident.insert(
            key,
            PageState {
                ready_at,
                marker: None,
                lru_stamp: stamp,
            },
        );
        self.lru.insert(stamp, key);
    }

    /// Markers only live on resident pages; a page already evicted again
    /// (tiny caches) simply gets none.
    fn set_marker(&mut self, key: PageKey, window: u64) {
        if let Some(st) = self.resident.get_mut(&key) {
            st.marker = Some(window);
        }
    }

    fn clear_marker(&mut self, key: PageKey) {
        if let Some(st) = self.resident.get_mut(&key) {
            st.marker = None;
        }
    }

    pub fn clear(&mut self) {
        self.resident.clear();
        self.lru.clear();
    }
}

/// Per-descriptor readahead state. Sizes are in OS pages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReadaheadState {
    pub window_start: u64,
    pub window_size: u64,
    pub async_size: u64,
    pub ra_max: u64,
    pub prev_request_end: u64,
}

impl ReadaheadState {
    pub fn new(ra_max: u64) -> Self {
        Self {
            window_start: 0,
            window_size: 0,
            async_size: 0,
            ra_max,
            prev_request_end: 0,
        }
    }
}

/// What a read should fetch. Ranges are in OS pages; only uncached pages in
/// them are actually dispatched.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchPlan {
    pub sync_range: Range<u64>,
    pub async_range: Range<u64>,
    /// Page that receives a marker (the first page of `async_range`).
    pub new_marker: Option<(u64, u64)>,
    /// Marker page consumed by this read.
    pub consumed_marker: Option<u64>,
    /// Window size issued by this read, for the history metric.
    pub window_issued: Option<u64>,
    pub new_state: ReadaheadState,
}

/// Decides what to fetch for a read of `size` bytes at `offset`.
///
/// `file_pages` bounds all ranges at EOF.
pub fn readahead_decide(
    state: &ReadaheadState,
    file: FileId,
    offset: u64,
    size: u64,
    cache: &OsPageCache,
    file_pages: u64,
) -> FetchPlan {
    assert!(size > 0, "zero-sized read");
    let ps = cache.page_size();
    let first = offset / ps;
    let last = ((offset + size - 1) / ps).min(file_pages.saturating_sub(1));
    assert!(first <= last, "read past EOF");
    let req = last - first + 1;
    let ra_max = state.ra_max;
    let mut st = *state;
    st.prev_request_end = last + 1;
    let sync_range = first..last + 1;

    let marker =
        (first..=last).find_map(|p| cache.get(file, p).and_then(|s| s.marker).map(|w| (p, w)));
    if let Some((mpage, mwin)) = marker {
        let window = (2 * mwin).min(ra_max);
        let limit = (mpage + 2 * ra_max).min(file_pages);
        let start = (mpage..limit)
            .find(|&p| !cache.is_resident(file, p))
            .unwrap_or(limit);
        let end = (start + window).min(file_pages);
        st.window_start = start;
        st.window_size = window;
        st.async_size = end - start;
        return FetchPlan {
            sync_range,
            async_range: start..end,
            new_marker: (start < end).then_some((start, window)),
            consumed_marker: Some(mpage),
            window_issued: (start < end).then_some(window),
            new_state: st,
        };
    }

    let all_cached = (first..=last).all(|p| cache.is_resident(file, p));
    if all_cached {
        return FetchPlan {
            sync_range,
            async_range: last + 1..last + 1,
            new_marker: None,
            consumed_marker: None,
            window_issued: None,
            new_state: st,
        };
    }

    let contiguous = first == state.prev_request_end && state.window_size > 0;
    let sequential = first == 0 || contiguous || cache.is_resident(file, first - 1);
    if !sequential {
        st.window_start = first;
        st.window_size = 0;
        st.async_size = 0;
        return FetchPlan {
            sync_range,
            async_range: last + 1..last + 1,
            new_marker: None,
            consumed_marker: None,
            window_issued: None,
            new_state: st,
        };
    }

    let window = if contiguous {
        (2 * state.window_size).min(ra_max)
    } else {
        (4 * req).min(ra_max)
    };
    let async_start = last + 1;
    let async_end = (first + window).max(async_start).min(file_pages);
    st.window_start = first;
    st.window_size = window.max(req).min(ra_max);
    st.async_size = async_end - async_start;
    FetchPlan {
        sync_range,
        async_range: async_start..async_end,
        new_marker: (async_start < async_end).then_some((async_start, window)),
        consumed_marker: None,
        window_issued: Some(st.window_size),
        new_state: st,
    }
}

/// Outcome of one `pread`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreadResult {
    pub completion: SimTime,
    pub bytes_read: u64,
    /// Time spent waiting for data (own sync misses and in-flight pages).
    pub blocked_ns: SimTime,
    /// Part of the wait caused by pages already in flight from earlier I/O.
    pub collision_ns: SimTime,
    pub ssd_bytes: u64,
}

/// The host side of the stack: files, page cache, readahead state per file
/// descriptor and the backing SSD.
#[derive(Debug, Clone)]
pub struct HostOs {
    cfg: HostConfig,
    files: Vec<u64>,
    cache: OsPageCache,
    ra: HashMap<FileId, ReadaheadState>,
    pub ssd: SsdModel,
    pub window_history: Vec<u64>,
    pub drops: Vec<SimTime>,
    pub preads: u64,
    pub blocked_ns: SimTime,
    pub collision_ns: SimTime,
}

impl HostOs {
    pub fn new(cfg: HostConfig, files: Vec<u64>, ssd: SsdModel) -> Self {
        assert!(cfg.os_page_size > 0 && cfg.ra_max_bytes >= cfg.os_page_size);
        Self {
            cache: OsPageCache::new(cfg.os_page_size, cfg.cache_capacity_bytes),
            cfg,
            files,
            ra: HashMap::new(),
            ssd,
            window_history: Vec::new(),
            drops: Vec::new(),
            preads: 0,
            blocked_ns: 0,
            collision_ns: 0,
        }
    }

    pub fn config(&self) -> &HostConfig {
        &self.cfg
    }

    pub fn cache(&self) -> &OsPageCache {
        &self.cache
    }

    pub fn file_size(&self, file: FileId) -> u64 {
        self.files[file as usize]
    }

    pub fn ra_state(&self, file: FileId) -> ReadaheadState {
        self.ra
            .get(&file)
            .copied()
            .unwrap_or_else(|| ReadaheadState::new(self.ra_max_pages()))
    }

    fn ra_max_pages(&self) -> u64 {
        self.cfg.ra_max_bytes / self.cfg.os_page_size
    }

    pub fn copy_cost(&self, bytes: u64) -> SimTime {
        (bytes as f64 * self.cfg.cpu_copy_ns_per_byte).ceil() as SimTime
    }

    /// Dispatches every uncached page of `range` to the SSD, in chunks of at
    /// most `ra_max` contiguous pages. Returns the bytes submitted.
    /// Submits the missing pages of `range` in chunks of at most `ra_max`.
    /// A reader blocked on a long range only keeps `LARGE_READ_DEPTH` chunks
    /// in flight: chunk k is issued when chunk k - depth completes.
    fn dispatch(&mut self, file: FileId, range: Range<u64>, at: SimTime, pipelined: bool) -> u64 {
        let ps = self.cfg.os_page_size;
        let fsize = self.files[file as usize];
        let ra_max = self.ra_max_pages();
        let mut submitted = 0;
        let mut issued: Vec<SimTime> = Vec::new();
        let mut p = range.start;
        while p < range.end {
            if self.cache.is_resident(file, p) {
                p += 1;
                continue;
            }
            let mut end = p;
            while end < range.end && end - p < ra_max && !self.cache.is_resident(file, end) {
                end += 1;
            }
            let bytes = (end * ps).min(fsize) - p * ps;
            let issue_at = match issued.len().checked_sub(LARGE_READ_DEPTH) {
                Some(k) if pipelined => issued[k].max(at),
                _ => at,
            };
            let done = self.ssd.submit(bytes, issue_at);
            issued.push(done);
            for q in p..end {
                self.cache.insert((file, q), done);
            }
            submitted += bytes;
            p = end;
        }
        submitted
    }

    /// Reads `size` bytes at `offset` from `file`, starting at `at`.
    pub fn os_pread(&mut self, file: FileId, offset: u64, size: u64, at: SimTime) -> PreadResult {
        self.preads += 1;
        let fsize = self.files[file as usize];
        if offset >= fsize || size == 0 {
            return PreadResult {
                completion: at,
                bytes_read: 0,
                blocked_ns: 0,
                collision_ns: 0,
                ssd_bytes: 0,
            };
        }
        let bytes_read = size.min(fsize - offset);
        let ps = self.cfg.os_page_size;
        let file_pages = fsize.div_ceil(ps);
        let state = self.ra_state(file);
        let plan = readahead_decide(&state, file, offset, bytes_read, &self.cache, file_pages);

        // Wait already owed to I/O issued before this read.
        let prior_wait = plan
            .sync_range
            .clone()
            .filter_map(|p| self.cache.get(file, p))
            .map(|s| s.ready_at)
            .max()
            .unwrap_or(0);

        if let Some(m) = plan.consumed_marker {
            self.cache.clear_marker((file, m));
        }
        self.ra.insert(file, plan.new_state);
        let mut ssd_bytes = self.dispatch(file, plan.sync_range.clone(), at, true);
        let mut ready = at;
        for p in plan.sync_range.clone() {
            let st = self
                .cache
                .get(file, p)
                .expect("requested page resident after dispatch");
            ready = ready.max(st.ready_at);
            self.cache.touch((file, p));
        }
        ssd_bytes += self.dispatch(file, plan.async_range.clone(), at, false);
        if let Some((page, window)) = plan.new_marker {
            self.cache.set_marker((file, page), window);
        }
        if let Some(w) = plan.window_issued {
            self.window_history.push(w);
        }
        let blocked = ready - at;
        let collision = prior_wait.saturating_sub(at);
        self.blocked_ns += blocked;
        self.collision_ns += collision;
        PreadResult {
            completion: ready + self.copy_cost(bytes_read),
            bytes_read,
            blocked_ns: blocked,
            collision_ns: collision,
            ssd_bytes,
        }
    }

    /// Empties the page cache and forgets all readahead state.
    pub fn os_cache_drop(&mut self, at: SimTime) {
        self.cache.clear();
        self.ra.clear();
        self.drops.push(at);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devices::SsdConfig;

    const KB: u64 = 1024;

    fn host(file_size: u64) -> HostOs {
        HostOs::new(
            HostConfig::default(),
            vec![file_size],
            SsdModel::new(SsdConfig::default()),
        )
    }

    #[test]
    fn cold_4k_read_fetches_16k() {
        let mut h = host(1 << 30);
        let r = h.os_pread(0, 0, 4 * KB, 0);
        assert_eq!(r.bytes_read, 4 * KB);
        assert_eq!(r.ssd_bytes, 16 * KB);
        assert_eq!(h.ssd.requests, 2, "one sync and one async request");
        assert_eq!(h.window_history, vec![4]);
        assert_eq!(h.cache().get(0, 1).unwrap().marker, Some(4));
        // The caller waited only for page 0, not for the async tail.
        let p0 = h.cache().get(0, 0).unwrap().ready_at;
        let p1 = h.cache().get(0, 1).unwrap().ready_at;
        assert!(p0 < p1);
        assert_eq!(r.completion, p0 + h.copy_cost(4 * KB));
    }

    #[test]
    fn window_grows_16_32_64_128_then_flat() {
        let mut h = host(1 << 30);
        let mut t = 0;
        for i in 0..200 {
            let r = h.os_pread(0, i * 4 * KB, 4 * KB, t);
            t = r.completion;
        }
        let kb: Vec<u64> = h.window_history.iter().map(|w| w * 4).collect();
        assert_eq!(&kb[..6], &[16, 32, 64, 128, 128, 128]);
        assert!(kb.iter().all(|&w| w <= 128));
    }

    #[test]
    fn marker_hit_doubles_window() {
        let mut h = host(1 << 30);
        let r = h.os_pread(0, 0, 4 * KB, 0);
        h.os_pread(0, 4 * KB, 4 * KB, r.completion);
        assert_eq!(h.window_history, vec![4, 8]);
        assert_eq!(h.cache().get(0, 1).unwrap().marker, None);
        assert_eq!(h.cache().get(0, 4).unwrap().marker, Some(8));
        assert!(h.cache().is_resident(0, 11));
        assert!(!h.cache().is_resident(0, 12));
    }

    #[test]
    fn random_jump_reads_exactly_requested() {
        let mut h = host(1 << 30);
        let r = h.os_pread(0, 0, 4 * KB, 0);
        let before = h.ssd.bytes;
        let r2 = h.os_pread(0, 100 << 20, 4 * KB, r.completion);
        assert_eq!(h.ssd.bytes - before, 4 * KB);
        assert_eq!(r2.ssd_bytes, 4 * KB);
        assert_eq!(h.ra_state(0).window_size, 0);
    }

    #[test]
    fn full_hit_costs_only_copy() {
        let mut h = host(1 << 30);
        let r = h.os_pread(0, 0, 4 * KB, 0);
        let t = r.completion + 1_000_000;
        let reqs = h.ssd.requests;
        // Page 2 is cached and carries no marker.
        let hit = h.os_pread(0, 2 * 4 * KB, 4 * KB, t);
        assert_eq!(hit.completion, t + h.copy_cost(4 * KB));
        assert_eq!(h.ssd.requests, reqs);
        assert_eq!(hit.blocked_ns, 0);
    }

    #[test]
    fn eof_clamps_bytes_read() {
        let fsize = 1 << 20;
        let mut h = host(fsize);
        let r = h.os_pread(0, fsize - 4 * KB, 68 * KB, 0);
        assert_eq!(r.bytes_read, 4 * KB);
        let eof = h.os_pread(0, fsize, 4 * KB, 0);
        assert_eq!(eof.bytes_read, 0);
        assert_eq!(eof.completion, 0);
    }

    #[test]
    fn back_to_back_read_collides_with_async() {
        let mut h = host(1 << 30);
        let r1 = h.os_pread(0, 0, 4 * KB, 0);
        let r2 = h.os_pread(0, 4 * KB, 4 * KB, r1.completion);
        assert!(
            r2.collision_ns > 0,
            "second read must block on in-flight page"
        );
        assert_eq!(r2.collision_ns, r2.blocked_ns);
    }

    #[test]
    fn drop_empties_cache_and_is_idempotent() {
        let mut h = host(1 << 30);
        let r = h.os_pread(0, 0, 4 * KB, 0);
        h.os_cache_drop(r.completion);
        h.os_cache_drop(r.completion + 5);
        assert!(h.cache().is_empty());
        assert_eq!(h.drops, vec![r.completion, r.completion + 5]);
        let before = h.ssd.requests;
        h.os_pread(0, 2 * 4 * KB, 4 * KB, r.completion + 10);
        assert!(h.ssd.requests > before, "read after drop misses");
        assert_eq!(h.ra_state(0).prev_request_end, 3);
    }

    #[test]
    fn single_flight_per_page() {
        let mut h = host(1 << 30);
        // Two readers racing on the same cold page.
        h.os_pread(0, 0, 4 * KB, 0);
        let before = h.ssd.bytes;
        h.os_pread(0, 0, 4 * KB, 0);
        assert_eq!(h.ssd.bytes, before);
    }

    #[test]
    fn lru_eviction_respects_capacity() {
        let cfg = HostConfig {
            cache_capacity_bytes: 16 * 4 * KB,
            ..HostConfig::default()
        };
        let mut h = HostOs::new(cfg, vec![1 << 30], SsdModel::new(SsdConfig::default()));
        let mut t = 0;
        for i in 0..64 {
            t = h.os_pread(0, i * 4 * KB, 4 * KB, t).completion;
            assert!(h.cache().len() <= 16);
        }
        assert!(h.cache().evictions > 0);
    }
}
