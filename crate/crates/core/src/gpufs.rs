//! GPU-side page cache with the two replacement policies: global
//! least-recently-allocated with dealloc/realloc, and per-threadblock LRA
//! queues that recycle frames in place.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use crate::error::SimError;
use crate::host_os::FileId;
use crate::simcore::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    GlobalLruDealloc,
    PerTbLra,
}

impl FromStr for Policy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "global-lru-dealloc" => Ok(Self::GlobalLruDealloc),
            "per-tb-lra" => Ok(Self::PerTbLra),
            other => Err(format!("unknown replacement policy '{other}'")),
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::GlobalLruDealloc => "global-lru-dealloc",
            Self::PerTbLra => "per-tb-lra",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpufsConfig {
    pub page_size: u64,
    pub cache_bytes: u64,
    pub policy: Policy,
    pub prefetch_bytes: u64,
    pub lookup_ns: SimTime,
    pub alloc_ns: SimTime,
    pub dealloc_ns: SimTime,
    pub remap_ns: SimTime,
    pub global_contention_ns: SimTime,
    pub copy_ns_per_byte: f64,
}

impl Default for GpufsConfig {
    fn default() -> Self {
        Self {
            page_size: 4096,
            cache_bytes: 2 << 30,
            policy: Policy::GlobalLruDealloc,
            prefetch_bytes: 0,
            lookup_ns: 200,
            alloc_ns: 600,
            dealloc_ns: 600,
            remap_ns: 300,
            global_contention_ns: 400,
            copy_ns_per_byte: 0.05,
        }
    }
}

impl GpufsConfig {
    pub fn total_pages(&self) -> usize {
        (self.cache_bytes / self.page_size) as usize
    }

    pub fn copy_ns(&self, bytes: u64) -> SimTime {
        (bytes as f64 * self.copy_ns_per_byte).ceil() as SimTime
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Lookup,
    Alloc,
    Dealloc,
    Remap,
    Contention,
}

pub fn page_cost(cfg: &GpufsConfig, op: OpKind) -> SimTime {
    match op {
        OpKind::Lookup => cfg.lookup_ns,
        OpKind::Alloc => cfg.alloc_ns,
        OpKind::Dealloc => cfg.dealloc_ns,
        OpKind::Remap => cfg.remap_ns,
        OpKind::Contention => cfg.global_contention_ns,
    }
}

/// Pages each per-threadblock queue may hold.
pub fn lra_capacity(total_pages: usize, resident_limit: usize) -> usize {
    assert!(resident_limit > 0);
    total_pages / resident_limit
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameState {
    Free,
    Valid,
    InFlight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Frame {
    pub file: FileId,
    pub page_index: u64,
    pub state: FrameState,
    pub last_alloc_seq: u64,
    pub tag: u64,
    /// Bytes of valid data (short at EOF).
    pub len: u64,
    queue: Option<usize>,
}

impl Frame {
    fn free() -> Self {
        Self {
            file: 0,
            page_index: 0,
            state: FrameState::Free,
            last_alloc_seq: 0,
            tag: 0,
            len: 0,
            queue: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lookup {
    Hit(usize),
    /// Another threadblock is fetching this page; wait for it.
    InFlight(usize),
    Miss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllocKind {
    FreeList,
    /// Global victim deallocated and allocated again.
    Dealloc,
    /// Own queue head reused in place.
    Remap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Allocation {
    pub frame: usize,
    pub kind: AllocKind,
    pub victim: Option<(FileId, u64)>,
    /// When the frame is usable.
    pub done_at: SimTime,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub inflight_waits: u64,
    pub allocations: u64,
    pub evictions: u64,
    pub remaps: u64,
    pub lock_wait_ns: SimTime,
}

#[derive(Debug, Clone)]
pub struct GpuPageCache {
    cfg: GpufsConfig,
    frames: Vec<Frame>,
    map: HashMap<(FileId, u64), usize>,
    free_list: VecDeque<usize>,
    /// Global allocation order, used by the baseline policy.
    by_seq: BTreeMap<u64, usize>,
    queues: Vec<VecDeque<usize>>,
    lra_max: usize,
    next_seq: u64,
    lock_free_at: SimTime,
    pub stats: CacheStats,
}

impl GpuPageCache {
    /// `n_queues` per-threadblock queues (one per residency slot), each
    /// bounded by `lra_capacity`.
    pub fn new(cfg: GpufsConfig, n_queues: usize) -> Result<Self, SimError> {
        if cfg.page_size == 0 || cfg.cache_bytes < cfg.page_size {
            return Err(SimError::Config(format!(
                "gpufs.cache_bytes ({}) must hold at least one gpufs.page_size ({}) page",
                cfg.cache_bytes, cfg.page_size
            )));
        }
        let total = cfg.total_pages();
        let lra_max = lra_capacity(total, n_queues.max(1));
        if cfg.policy == Policy::PerTbLra && lra_max == 0 {
            return Err(SimError::Config(format!(
                "per-tb-lra needs at least one page per resident threadblock: {total} pages for {n_queues} threadblocks"
            )));
        }
        Ok(Self {
            cfg,
            frames: vec![Frame::free(); total],
            map: HashMap::new(),
            free_list: (0..total).collect(),
            by_seq: BTreeMap::new(),
            queues: vec![VecDeque::new(); n_queues.max(1)],
            lra_max,
            next_seq: 0,
            lock_free_at: 0,
            stats: CacheStats::default(),
        })
    }

    pub fn config(&self) -> &GpufsConfig {
        &self.cfg
    }

    pub fn lra_max(&self) -> usize {
        self.lra_max
    }

    pub fn frame(&self, idx: usize) -> &Frame {
        &self.frames[idx]
    }

    pub fn free_frames(&self) -> usize {
        self.free_list.len()
    }

    pub fn occupied_frames(&self) -> usize {
        self.map.len()
    }

    pub fn queue(&self, q: usize) -> impl Iterator<Item = (FileId, u64)> + '_ {
        self.queues[q]
            .iter()
            .map(|&f| (self.frames[f].file, self.frames[f].page_index))
    }

    pub fn pc_lookup(&mut self, file: FileId, page: u64) -> Lookup {
        match self.map.get(&(file, page)) {
            Some(&f) if self.frames[f].state == FrameState::Valid => {
                self.stats.hits += 1;
                Lookup::Hit(f)
            }
            Some(&f) => {
                self.stats.inflight_waits += 1;
                Lookup::InFlight(f)
            }
            None => {
                self.stats.misses += 1;
                Lookup::Miss
            }
        }
    }

    /// Allocates an in-flight frame for an absent page on behalf of the
    /// threadblock using `queue`, starting at `at`.
    pub fn pc_allocate(
        &mut self,
        queue: usize,
        file: FileId,
        page: u64,
        at: SimTime,
    ) -> Result<Allocation, SimError> {
        assert!(
            !self.map.contains_key(&(file, page)),
            "allocating a page that is already mapped"
        );
        self.stats.allocations += 1;
        let alloc = match self.cfg.policy {
            Policy::PerTbLra => self.allocate_lra(queue, file, page, at)?,
            Policy::GlobalLruDealloc => self.allocate_global(file, page, at)?,
        };
        Ok(alloc)
    }

    fn allocate_lra(
        &mut self,
        queue: usize,
        file: FileId,
        page: u64,
        at: SimTime,
    ) -> Result<Allocation, SimError> {
        let own_full = self.queues[queue].len() >= self.lra_max;
        if !own_full {
            if let Some(f) = self.free_list.pop_front() {
                self.map_frame(f, file, page, Some(queue));
                self.queues[queue].push_back(f);
                return Ok(Allocation {
                    frame: f,
                    kind: AllocKind::FreeList,
                    victim: None,
                    done_at: at + self.cfg.alloc_ns,
                });
            }
        }
        let Some(pos) = self.queues[queue]
            .iter()
            .position(|&f| self.frames[f].state == FrameState::Valid)
        else {
            return Err(SimError::Fatal(format!(
                "per-tb-lra: queue {queue} has nothing to evict and no frame is free"
            )));
        };
        let f = self.queues[queue].remove(pos).expect("position in range");
        let victim = self.unmap_frame(f);
        self.map_frame(f, file, page, Some(queue));
        self.queues[queue].push_back(f);
        self.stats.evictions += 1;
        self.stats.remaps += 1;
        Ok(Allocation {
            frame: f,
            kind: AllocKind::Remap,
            victim: Some(victim),
            done_at: at + self.cfg.remap_ns,
        })
    }

    fn allocate_global(
        &mut self,
        file: FileId,
        page: u64,
        at: SimTime,
    ) -> Result<Allocation, SimError> {
        if let Some(f) = self.free_list.pop_front() {
            self.map_frame(f, file, page, None);
            return Ok(Allocation {
                frame: f,
                kind: AllocKind::FreeList,
                victim: None,
                done_at: at + self.cfg.alloc_ns,
            });
        }
        let Some(f) = self
            .by_seq
            .values()
            .copied()
            .find(|&f| self.frames[f].state == FrameState::Valid)
        else {
            return Err(SimError::Fatal(
                "global-lru-dealloc: every frame is in flight".into(),
            ));
        };
        let victim = self.unmap_frame(f);
        self.map_frame(f, file, page, None);
        self.stats.evictions += 1;
        // The global queue is one lock: evictions queue up behind each other.
        let start = at.max(self.lock_free_at);
        self.stats.lock_wait_ns += start - at;
        let hold = self.cfg.dealloc_ns + self.cfg.alloc_ns + self.cfg.global_contention_ns;
        self.lock_free_at = start + hold;
        Ok(Allocation {
            frame: f,
            kind: AllocKind::Dealloc,
            victim: Some(victim),
            done_at: start + hold,
        })
    }

    fn map_frame(&mut self, f: usize, file: FileId, page: u64, queue: Option<usize>) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.frames[f] = Frame {
            file,
            page_index: page,
            state: FrameState::InFlight,
            last_alloc_seq: seq,
            tag: 0,
            len: 0,
            queue,
        };
        self.by_seq.insert(seq, f);
        let prev = self.map.insert((file, page), f);
        debug_assert!(prev.is_none());
    }

    fn unmap_frame(&mut self, f: usize) -> (FileId, u64) {
        let fr = self.frames[f];
        debug_assert_ne!(fr.state, FrameState::Free);
        self.map.remove(&(fr.file, fr.page_index));
        self.by_seq.remove(&fr.last_alloc_seq);
        self.frames[f] = Frame::free();
        (fr.file, fr.page_index)
    }

    /// Fills an in-flight frame with data.
    pub fn pc_install(&mut self, f: usize, tag: u64, len: u64) {
        let fr = &mut self.frames[f];
        assert_eq!(
            fr.state,
            FrameState::InFlight,
            "installing into a frame that is not in flight"
        );
        fr.state = FrameState::Valid;
        fr.tag = tag;
        fr.len = len;
    }

    /// Returns an in-flight frame that received no data (EOF).
    pub fn pc_release(&mut self, f: usize) {
        assert_eq!(self.frames[f].state, FrameState::InFlight);
        if let Some(q) = self.frames[f].queue {
            self.queues[q].retain(|&x| x != f);
        }
        self.unmap_frame(f);
        self.free_list.push_back(f);
    }

    /// Structural invariants; panics with a description on violation.
    pub fn check(&self) {
        assert_eq!(
            self.map.len() + self.free_list.len(),
            self.frames.len(),
            "occupied + free frames must equal capacity"
        );
        for (&(file, page), &f) in &self.map {
            let fr = &self.frames[f];
            assert!(
                fr.state != FrameState::Free && fr.file == file && fr.page_index == page,
                "map entry ({file},{page}) points at frame {f} holding {:?}",
                fr
            );
        }
        for q in &self.queues {
            assert!(q.len() <= self.lra_max || self.cfg.policy != Policy::PerTbLra);
            let seqs: Vec<u64> = q.iter().map(|&f| self.frames[f].last_alloc_seq).collect();
            assert!(
                seqs.windows(2).all(|w| w[0] < w[1]),
                "queue out of allocation order"
            );
        }
    }
}
