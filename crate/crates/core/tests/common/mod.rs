//! Shared helpers for the integration tests, including a straight-line
//! reference model of one threadblock's gread path.

#![allow(dead_code)]

use std::collections::{BTreeSet, VecDeque};

use gpufs_sim::gpufs::Policy;
use gpufs_sim::sim::{SystemConfig, TraceEvent};
use gpufs_sim::workloads::{Assignment, ReadOp, WorkloadSpec};

pub const KB: u64 = 1 << 10;
pub const MB: u64 = 1 << 20;

/// What one threadblock observes: pages delivered in order, RPC start
/// pages, evicted pages, and private-buffer hits.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TbLog {
    pub delivered: Vec<u64>,
    pub rpcs: Vec<u64>,
    pub victims: Vec<u64>,
    pub pb_hits: u64,
}

/// Replays `pages` with no event queue: a FIFO of `frames` cache slots
/// (least recently allocated goes first), a private buffer refilled by
/// every RPC, and RPCs of `1 + prefetch_pages` pages clipped at EOF.
pub fn oracle_tb(pages: &[u64], frames: usize, prefetch_pages: u64, file_pages: u64) -> TbLog {
    let mut log = TbLog::default();
    let mut cache: VecDeque<u64> = VecDeque::new();
    let mut pb: BTreeSet<u64> = BTreeSet::new();
    for &p in pages {
        if cache.contains(&p) {
            log.delivered.push(p);
            continue;
        }
        if cache.len() == frames {
            log.victims.push(cache.pop_front().unwrap());
        }
        cache.push_back(p);
        if pb.remove(&p) {
            log.pb_hits += 1;
        } else {
            log.rpcs.push(p);
            let span = (1 + prefetch_pages).min(file_pages - p);
            pb = (p + 1..p + span).collect();
        }
        log.delivered.push(p);
    }
    log
}

/// Splits a simulator event log per threadblock, in page units.
pub fn sim_logs(events: &[TraceEvent], n_tb: usize, page: u64) -> Vec<TbLog> {
    let mut logs = vec![TbLog::default(); n_tb];
    for e in events {
        match *e {
            TraceEvent::Deliver { tb, page: p, .. } => logs[tb as usize].delivered.push(p),
            TraceEvent::Rpc { tb, offset, .. } => logs[tb as usize].rpcs.push(offset / page),
            TraceEvent::Evict { tb, page: p, .. } => logs[tb as usize].victims.push(p),
        }
    }
    logs
}

/// A configuration with room for `resident` threadblocks at once.
pub fn tiny_system(
    resident: u32,
    cache_pages: u64,
    prefetch_pages: u64,
    policy: Policy,
) -> SystemConfig {
    let mut c = SystemConfig::default();
    c.gpu.sm_count = 1;
    c.gpu.threads_per_tb = 512;
    c.gpu.max_threads_per_sm = 512 * resident;
    c.gpufs.page_size = 4 * KB;
    c.gpufs.cache_bytes = cache_pages * 4 * KB;
    c.gpufs.prefetch_bytes = prefetch_pages * 4 * KB;
    c.gpufs.policy = policy;
    c
}

/// One threadblock reading whole pages in the given order.
pub fn page_program(file_pages: u64, pages: &[u64]) -> WorkloadSpec {
    let ps = 4 * KB;
    WorkloadSpec {
        name: "pages".into(),
        files: vec![file_pages * ps],
        n_tb: 1,
        threads_per_tb: 512,
        request_size: ps,
        assignment: Assignment::ExplicitTrace,
        total_read: pages.len() as u64 * ps,
        compute_ns_per_byte: 0.0,
        read_only: true,
        programs: vec![pages
            .iter()
            .map(|&p| ReadOp {
                file: 0,
                offset: p * ps,
                size: ps,
            })
            .collect()],
    }
}

/// True when `v` rises (weakly) to a single maximum and then falls (weakly).
pub fn unimodal(v: &[f64]) -> bool {
    let Some(peak) = v
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
    else {
        return true;
    };
    v[..=peak].windows(2).all(|w| w[0] <= w[1]) && v[peak..].windows(2).all(|w| w[0] >= w[1])
}
