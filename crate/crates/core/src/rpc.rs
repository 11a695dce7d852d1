//! Shared CPU-GPU request queue and the host worker threads polling it.
//!
//! The queue is an array of slots partitioned into contiguous ranges, one per
//! worker. A threadblock always uses slot `tb_id mod n_slots`.

use std::collections::VecDeque;

use crate::host_os::FileId;
use crate::simcore::SimTime;

pub type TbId = u32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RpcConfig {
    pub n_slots: usize,
    pub n_workers: usize,
    pub poll_interval_ns: SimTime,
    pub staging_bytes: u64,
    /// Workers go back to polling while their PCIe transfer is pending and
    /// batch whatever completes in the meantime. Off: a worker finishes the
    /// transfer before taking the next request.
    pub async_transfer: bool,
}

impl Default for RpcConfig {
    fn default() -> Self {
        Self {
            n_slots: 128,
            n_workers: 4,
            poll_interval_ns: 1_000,
            staging_bytes: 2 << 20,
            async_transfer: false,
        }
    }
}

/// One read request travelling GPU -> host -> GPU.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IoRequest {
    pub tb: TbId,
    pub file: FileId,
    pub offset: u64,
    pub size: u64,
}

/// A GPUfs page delivered by the host, with its metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PageChunk {
    pub page_index: u64,
    pub offset: u64,
    pub len: u64,
    pub tag: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotState {
    Empty,
    Pending,
    InService,
    Ready,
}

impl SlotState {
    fn next(self) -> SlotState {
        match self {
            SlotState::Empty => SlotState::Pending,
            SlotState::Pending => SlotState::InService,
            SlotState::InService => SlotState::Ready,
            SlotState::Ready => SlotState::Empty,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Slot {
    state: SlotState,
    pub request: Option<IoRequest>,
    pub result_pages: Vec<PageChunk>,
    pub owner_tb: Option<TbId>,
    /// Threadblocks waiting for this slot to free up.
    pub waiting: VecDeque<IoRequest>,
}

impl Slot {
    fn new() -> Self {
        Self {
            state: SlotState::Empty,
            request: None,
            result_pages: Vec::new(),
            owner_tb: None,
            waiting: VecDeque::new(),
        }
    }

    pub fn state(&self) -> SlotState {
        self.state
    }

    /// Moves to the next lifecycle state; any other transition aborts.
    fn transition(&mut self, to: SlotState) {
        assert_eq!(
            self.state.next(),
            to,
            "illegal slot transition {:?} -> {:?}",
            self.state,
            to
        );
        self.state = to;
    }
}

pub fn slot_for_threadblock(tb: TbId, n_slots: usize) -> usize {
    assert!(n_slots > 0);
    tb as usize % n_slots
}

#[derive(Debug, Clone)]
pub struct RpcQueue {
    slots: Vec<Slot>,
    n_workers: usize,
    slots_per_worker: usize,
}

impl RpcQueue {
    pub fn new(n_slots: usize, n_workers: usize) -> Self {
        assert!(n_workers > 0 && n_slots > 0, "need slots and workers");
        assert!(
            n_slots.is_multiple_of(n_workers),
            "rpc.n_slots ({n_slots}) must be divisible by rpc.n_workers ({n_workers})"
        );
        Self {
            slots: (0..n_slots).map(|_| Slot::new()).collect(),
            n_workers,
            slots_per_worker: n_slots / n_workers,
        }
    }

    pub fn n_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn n_workers(&self) -> usize {
        self.n_workers
    }

    pub fn slots_per_worker(&self) -> usize {
        self.slots_per_worker
    }

    pub fn owned_range(&self, worker: usize) -> std::ops::Range<usize> {
        worker * self.slots_per_worker..(worker + 1) * self.slots_per_worker
    }

    pub fn owner_of(&self, slot: usize) -> usize {
        slot / self.slots_per_worker
    }

    pub fn slot(&self, idx: usize) -> &Slot {
        &self.slots[idx]
    }

    /// Places a request in its threadblock's slot. If the slot is busy the
    /// request queues behind it; returns whether it went in immediately.
    pub fn submit(&mut self, req: IoRequest) -> bool {
        let idx = slot_for_threadblock(req.tb, self.slots.len());
        let slot = &mut self.slots[idx];
        if slot.state == SlotState::Empty {
            slot.transition(SlotState::Pending);
            slot.request = Some(req);
            slot.owner_tb = Some(req.tb);
            true
        } else {
            slot.waiting.push_back(req);
            false
        }
    }

    /// Worker `worker` scans its slots in index order and claims the first
    /// pending one.
    pub fn claim_pending(&mut self, worker: usize) -> Option<usize> {
        let range = self.owned_range(worker);
        let idx = range
            .clone()
            .find(|&i| self.slots[i].state == SlotState::Pending)?;
        self.slots[idx].transition(SlotState::InService);
        Some(idx)
    }

    pub fn mark_ready(&mut self, idx: usize, pages: Vec<PageChunk>) {
        let slot = &mut self.slots[idx];
        slot.transition(SlotState::Ready);
        slot.result_pages = pages;
    }

    /// The owning threadblock consumes a ready slot. Returns the result pages
    /// and, if another request was queued on the slot, that request (now
    /// pending).
    pub fn consume(&mut self, idx: usize) -> (IoRequest, Vec<PageChunk>, Option<IoRequest>) {
        let slot = &mut self.slots[idx];
        slot.transition(SlotState::Empty);
        let req = slot.request.take().expect("ready slot carries its request");
        let pages = std::mem::take(&mut slot.result_pages);
        slot.owner_tb = None;
        let next = slot.waiting.pop_front();
        if let Some(n) = next {
            slot.transition(SlotState::Pending);
            slot.request = Some(n);
            slot.owner_tb = Some(n.tb);
        }
        (req, pages, next)
    }
}

/// Completed read data waiting in a worker's staging buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagedChunk {
    pub slot: usize,
    pub bytes: u64,
}

/// One coalesced PCIe transfer. `parts` lists (slot, bytes) carried; a slot
/// whose data spans several transfers appears in each of them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransferPlan {
    pub bytes: u64,
    pub parts: Vec<(usize, u64)>,
}

#[derive(Debug, Clone)]
pub struct HostWorker {
    pub id: usize,
    pub staging_capacity: u64,
    pub spin_count: u64,
    pub first_service_at: Option<SimTime>,
    pub first_service_spins: Option<u64>,
    pub busy: bool,
    pub awaiting: VecDeque<StagedChunk>,
    pub transfers_in_flight: usize,
    pub services: u64,
}

impl HostWorker {
    pub fn new(id: usize, staging_capacity: u64) -> Self {
        assert!(staging_capacity > 0);
        Self {
            id,
            staging_capacity,
            spin_count: 0,
            first_service_at: None,
            first_service_spins: None,
            busy: false,
            awaiting: VecDeque::new(),
            transfers_in_flight: 0,
            services: 0,
        }
    }

    /// One poll of the worker's slots at time `at`. Returns the claimed slot;
    /// an empty poll counts as a spin.
    pub fn poll(&mut self, queue: &mut RpcQueue, at: SimTime) -> Option<usize> {
        match queue.claim_pending(self.id) {
            Some(idx) => {
                if self.first_service_at.is_none() {
                    self.first_service_at = Some(at);
                    self.first_service_spins = Some(self.spin_count);
                }
                self.services += 1;
                Some(idx)
            }
            None => {
                self.spin_count += 1;
                None
            }
        }
    }

    pub fn stage(&mut self, slot: usize, bytes: u64) {
        if bytes > 0 {
            self.awaiting.push_back(StagedChunk { slot, bytes });
        }
    }

    /// Coalesces everything awaiting into transfers of at most the staging
    /// capacity.
    pub fn batch_ready(&mut self) -> Vec<TransferPlan> {
        assert!(!self.awaiting.is_empty(), "batch_ready with nothing staged");
        let cap = self.staging_capacity;
        let mut plans = Vec::new();
        let mut cur = TransferPlan {
            bytes: 0,
            parts: Vec::new(),
        };
        for chunk in self.awaiting.drain(..) {
            let mut left = chunk.bytes;
            while left > 0 {
                let room = cap - cur.bytes;
                let take = left.min(room);
                cur.bytes += take;
                cur.parts.push((chunk.slot, take));
                left -= take;
                if cur.bytes == cap {
                    plans.push(std::mem::replace(
                        &mut cur,
                        TransferPlan {
                            bytes: 0,
                            parts: Vec::new(),
                        },
                    ));
                }
            }
        }
        if cur.bytes > 0 {
            plans.push(cur);
        }
        plans
    }
}

/// Splits `bytes_read` returned for a request at `offset` into GPUfs pages
/// of `page_size`, tagging each with `tag(page_index)`.
pub fn split_into_pages(
    offset: u64,
    bytes_read: u64,
    page_size: u64,
    tag: impl Fn(u64) -> u64,
) -> Vec<PageChunk> {
    let mut out = Vec::new();
    let end = offset + bytes_read;
    let mut pos = offset;
    while pos < end {
        let page_index = pos / page_size;
        let page_end = ((page_index + 1) * page_size).min(end);
        out.push(PageChunk {
            page_index,
            offset: pos,
            len: page_end - pos,
            tag: tag(page_index),
        });
        pos = page_end;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(tb: TbId) -> IoRequest {
        IoRequest {
            tb,
            file: 0,
            offset: 0,
            size: 4096,
        }
    }

    #[test]
    fn slot_mapping() {
        let q = RpcQueue::new(128, 4);
        assert_eq!(slot_for_threadblock(0, 128), 0);
        assert_eq!(q.owner_of(slot_for_threadblock(0, 128)), 0);
        assert_eq!(slot_for_threadblock(33, 128), 33);
        assert_eq!(q.owner_of(33), 1);
        let workers: std::collections::BTreeSet<_> = (0..60)
            .map(|tb| q.owner_of(slot_for_threadblock(tb, 128)))
            .collect();
        assert_eq!(workers.into_iter().collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    #[should_panic(expected = "divisible")]
    fn slots_must_divide() {
        RpcQueue::new(10, 4);
    }

    #[test]
    fn empty_poll_spins() {
        let mut q = RpcQueue::new(128, 4);
        let mut w = HostWorker::new(0, 2 << 20);
        assert_eq!(w.poll(&mut q, 0), None);
        assert_eq!(w.spin_count, 1);
        assert_eq!(w.first_service_at, None);
    }

    #[test]
    fn poll_takes_lowest_pending_slot() {
        let mut q = RpcQueue::new(128, 4);
        q.submit(req(7));
        q.submit(req(3));
        let mut w = HostWorker::new(0, 2 << 20);
        assert_eq!(w.poll(&mut q, 5), Some(3));
        assert_eq!(q.slot(3).state(), SlotState::InService);
        assert_eq!(q.slot(7).state(), SlotState::Pending);
        assert_eq!(w.first_service_at, Some(5));
        assert_eq!(w.first_service_spins, Some(0));
    }

    #[test]
    fn worker_never_touches_foreign_slots() {
        let mut q = RpcQueue::new(128, 4);
        q.submit(req(40));
        let mut w0 = HostWorker::new(0, 2 << 20);
        assert_eq!(w0.poll(&mut q, 0), None);
        let mut w1 = HostWorker::new(1, 2 << 20);
        assert_eq!(w1.poll(&mut q, 0), Some(40));
    }

    #[test]
    fn slot_lifecycle_and_queueing() {
        let mut q = RpcQueue::new(4, 1);
        assert!(q.submit(req(1)));
        assert!(!q.submit(req(5)), "tb 5 shares slot 1 and must wait");
        let idx = q.claim_pending(0).unwrap();
        q.mark_ready(idx, vec![]);
        let (done, _, next) = q.consume(idx);
        assert_eq!(done.tb, 1);
        assert_eq!(next.unwrap().tb, 5);
        assert_eq!(q.slot(1).state(), SlotState::Pending);
    }

    #[test]
    #[should_panic(expected = "illegal slot transition")]
    fn skipping_a_state_aborts() {
        let mut q = RpcQueue::new(4, 1);
        q.submit(req(0));
        q.mark_ready(0, vec![]);
    }

    #[test]
    fn two_chunks_coalesce() {
        let mut w = HostWorker::new(0, 2 << 20);
        w.stage(1, 4096);
        w.stage(2, 4096);
        let plans = w.batch_ready();
        assert_eq!(plans.len(), 1);
        assert_eq!(plans[0].bytes, 8192);
        assert!(w.awaiting.is_empty());
    }

    #[test]
    fn single_chunk_single_transfer() {
        let mut w = HostWorker::new(0, 2 << 20);
        w.stage(0, 65536);
        assert_eq!(
            w.batch_ready(),
            vec![TransferPlan {
                bytes: 65536,
                parts: vec![(0, 65536)]
            }]
        );
    }

    #[test]
    fn staging_capacity_splits() {
        let mut w = HostWorker::new(0, 100);
        w.stage(0, 70);
        w.stage(1, 70);
        w.stage(2, 110);
        let plans = w.batch_ready();
        assert_eq!(plans.len(), 250usize.div_ceil(100));
        assert_eq!(plans.iter().map(|p| p.bytes).sum::<u64>(), 250);
        assert!(plans.iter().all(|p| p.bytes <= 100));
    }

    #[test]
    fn prefetch_span_yields_sixteen_pages() {
        let pages = split_into_pages(10 * 65536, 65536, 4096, |p| p);
        assert_eq!(pages.len(), 65536 / 4096);
        assert_eq!(pages[0].page_index, 160);
        let eof = split_into_pages(0, 8192, 4096, |p| p);
        assert_eq!(eof.len(), 2);
        let partial = split_into_pages(0, 5000, 4096, |p| p);
        assert_eq!(partial[1].len, 904);
    }
}
