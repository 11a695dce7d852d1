//! The event loop wiring threadblocks, the GPU page cache, the RPC queue,
//! host workers, the host OS and the devices together, plus the trace
//! replay engine that drives the host path alone.

use std::collections::HashMap;

use crate::devices::{PcieConfig, PcieModel, SsdConfig, SsdModel};
use crate::error::SimError;
use crate::gpu_exec::{resident_limit, Dispatcher, GpuConfig, Placement, TbAction, ThreadBlock};
use crate::gpufs::{GpuPageCache, GpufsConfig, Lookup};
use crate::host_os::{FileId, HostConfig, HostOs};
use crate::metrics::MetricsReport;
use crate::prefetcher::{prefetch_enabled, request_span, PrivateBuffer};
use crate::rpc::{split_into_pages, HostWorker, IoRequest, PageChunk, RpcConfig, RpcQueue, TbId};
use crate::simcore::{EventQueue, SeededRng, SimTime};
use crate::workloads::{page_tag, ReadOp, Trace, TraceRecord, WorkloadSpec};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Modes {
    /// PCIe transfers complete instantly.
    pub pcie_disabled: bool,
    /// Pages go straight from the RPC result to the user buffer.
    pub gpu_cache_disabled: bool,
    /// The SSD is replaced by a zero-latency, infinite-bandwidth store.
    pub ramfs: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SystemConfig {
    pub gpu: GpuConfig,
    pub gpufs: GpufsConfig,
    pub host: HostConfig,
    pub ssd: SsdConfig,
    pub pcie: PcieConfig,
    pub rpc: RpcConfig,
    pub modes: Modes,
}

/// Observable steps, recorded when requested.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceEvent {
    Deliver {
        tb: TbId,
        file: FileId,
        page: u64,
        bytes: u64,
    },
    Rpc {
        tb: TbId,
        offset: u64,
        size: u64,
    },
    Evict {
        tb: TbId,
        file: FileId,
        page: u64,
    },
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub trace: Trace,
    pub events: Vec<TraceEvent>,
    /// RPCs issued by each threadblock.
    pub rpcs_per_tb: Vec<u64>,
    pub pb_hits_per_tb: Vec<u64>,
}

#[derive(Debug, Clone, Copy)]
enum Ev {
    TbStart(Placement),
    TbStep(TbId),
    /// Allocation finished and the page came from the private buffer.
    PbInstall(TbId),
    Submit(TbId),
    WorkerPoll(usize),
    PreadDone {
        worker: usize,
        slot: usize,
    },
    TransferDone {
        worker: usize,
        id: usize,
    },
}

#[derive(Debug, Clone, Copy)]
struct OpProgress {
    op: ReadOp,
    pos: u64,
    end: u64,
    delivered: u64,
}

#[derive(Debug, Clone, Copy)]
struct PendingPage {
    file: FileId,
    page: u64,
    frame: Option<usize>,
    chunk: Option<PageChunk>,
}

struct TbRun {
    block: ThreadBlock,
    rslot: usize,
    pb: PrivateBuffer,
    cur: Option<OpProgress>,
    pending: Option<PendingPage>,
    rpc_outstanding: bool,
    expected: u64,
}

struct InService {
    req: IoRequest,
    pages: Vec<PageChunk>,
    remaining: u64,
}

pub struct Simulation<'a> {
    cfg: SystemConfig,
    spec: &'a WorkloadSpec,
    q: EventQueue<Ev>,
    rng: SeededRng,
    host: HostOs,
    pcie: PcieModel,
    cache: Option<GpuPageCache>,
    rpc: RpcQueue,
    workers: Vec<HostWorker>,
    dispatcher: Dispatcher,
    tbs: HashMap<TbId, TbRun>,
    waiters: HashMap<(FileId, u64), Vec<TbId>>,
    in_service: HashMap<usize, InService>,
    transfers: Vec<Vec<(usize, u64)>>,
    prefetch: bool,
    finished: usize,
    last_retire: SimTime,
    record_events: bool,
    out: RunOutput,
    // Counters.
    delivered: u64,
    hit_bytes: u64,
    installed: u64,
    pread_bytes: u64,
    tag_mismatches: u64,
    pb_hits: u64,
    touched: Vec<Vec<bool>>,
}

impl<'a> Simulation<'a> {
    pub fn new(cfg: SystemConfig, spec: &'a WorkloadSpec, seed: u64) -> Result<Self, SimError> {
        let limit = resident_limit(&cfg.gpu);
        let mut rng = SeededRng::new(seed);
        let dispatcher = Dispatcher::new(spec.n_tb, limit, cfg.gpu.dispatch, &mut rng);
        let ssd = if cfg.modes.ramfs {
            SsdModel::ramfs(cfg.ssd)
        } else {
            SsdModel::new(cfg.ssd)
        };
        let pcie = if cfg.modes.pcie_disabled {
            PcieModel::disabled(cfg.pcie)
        } else {
            PcieModel::new(cfg.pcie)
        };
        let cache = if cfg.modes.gpu_cache_disabled {
            None
        } else {
            Some(GpuPageCache::new(cfg.gpufs, limit)?)
        };
        if cfg.rpc.n_workers == 0 || !cfg.rpc.n_slots.is_multiple_of(cfg.rpc.n_workers) {
            return Err(SimError::Config(format!(
                "rpc.n_slots ({}) must be a positive multiple of rpc.n_workers ({})",
                cfg.rpc.n_slots, cfg.rpc.n_workers
            )));
        }
        if !cfg.gpufs.prefetch_bytes.is_multiple_of(cfg.gpufs.page_size) {
            return Err(SimError::Config(format!(
                "gpufs.prefetch_bytes ({}) must be a multiple of gpufs.page_size ({})",
                cfg.gpufs.prefetch_bytes, cfg.gpufs.page_size
            )));
        }
        let os_ps = cfg.host.os_page_size;
        Ok(Self {
            host: HostOs::new(cfg.host, spec.files.clone(), ssd),
            pcie,
            cache,
            rpc: RpcQueue::new(cfg.rpc.n_slots, cfg.rpc.n_workers),
            workers: (0..cfg.rpc.n_workers)
                .map(|w| HostWorker::new(w, cfg.rpc.staging_bytes))
                .collect(),
            dispatcher,
            tbs: HashMap::new(),
            waiters: HashMap::new(),
            in_service: HashMap::new(),
            transfers: Vec::new(),
            prefetch: prefetch_enabled(cfg.gpufs.prefetch_bytes, spec.read_only),
            finished: 0,
            last_retire: 0,
            record_events: false,
            out: RunOutput {
                rpcs_per_tb: vec![0; spec.n_tb],
                pb_hits_per_tb: vec![0; spec.n_tb],
                ..RunOutput::default()
            },
            delivered: 0,
            hit_bytes: 0,
            installed: 0,
            pread_bytes: 0,
            tag_mismatches: 0,
            pb_hits: 0,
            touched: spec
                .files
                .iter()
                .map(|&s| vec![false; s.div_ceil(os_ps) as usize])
                .collect(),
            q: EventQueue::new(),
            rng,
            cfg,
            spec,
        })
    }

    /// Keep a log of deliveries, RPCs and evictions.
    pub fn record_events(mut self, on: bool) -> Self {
        self.record_events = on;
        self
    }

    pub fn run(mut self) -> Result<RunOutput, SimError> {
        self.out.report.seed = self.rng.seed();
        if self.spec.n_tb == 0 || self.spec.total_requested() == 0 {
            self.out.report.worker_spins = vec![0; self.workers.len()];
            self.out.report.worker_first_service_ns = vec![None; self.workers.len()];
            self.out.report.worker_first_service_spins = vec![None; self.workers.len()];
            return Ok(self.out);
        }
        let wave = self
            .dispatcher
            .initial(&mut self.rng, self.cfg.gpu.start_jitter_ns);
        for p in wave {
            self.q.schedule(p.start_at, Ev::TbStart(p));
        }
        for w in 0..self.workers.len() {
            self.q.schedule(0, Ev::WorkerPoll(w));
        }
        while let Some(e) = self.q.advance() {
            let now = e.fire_at;
            match e.kind {
                Ev::TbStart(p) => self.tb_start(p, now),
                Ev::TbStep(tb) => self.tb_step(tb, now)?,
                Ev::PbInstall(tb) => self.pb_install(tb, now),
                Ev::Submit(tb) => self.submit(tb),
                Ev::WorkerPoll(w) => self.worker_poll(w, now),
                Ev::PreadDone { worker, slot } => self.pread_done(worker, slot, now),
                Ev::TransferDone { worker, id } => self.transfer_done(worker, id, now),
            }
        }
        if self.finished != self.spec.n_tb {
            return Err(SimError::Fatal(format!(
                "simulation stalled with {} of {} threadblocks finished",
                self.finished, self.spec.n_tb
            )));
        }
        self.finish()
    }

    fn tb_start(&mut self, p: Placement, now: SimTime) {
        let ops = self.spec.programs[p.tb as usize].clone();
        let expected = ops
            .iter()
            .map(|o| {
                (o.offset + o.size)
                    .min(self.spec.files[o.file as usize])
                    .saturating_sub(o.offset)
            })
            .sum();
        let mut block = ThreadBlock::new(p.tb, ops, self.spec.compute_ns_per_byte);
        block.residency_slot = p.residency_slot;
        self.tbs.insert(
            p.tb,
            TbRun {
                block,
                rslot: p.residency_slot,
                pb: PrivateBuffer::new(p.tb, self.cfg.gpufs.prefetch_bytes),
                cur: None,
                pending: None,
                rpc_outstanding: false,
                expected,
            },
        );
        self.q.schedule(now, Ev::TbStep(p.tb));
    }

    fn event(&mut self, e: TraceEvent) {
        if self.record_events {
            self.out.events.push(e);
        }
    }

    fn check_tag(&mut self, file: FileId, page: u64, tag: u64) {
        if tag != page_tag(file, page) {
            self.tag_mismatches += 1;
        }
    }

    /// Copies the current page's share of the op into the user buffer and
    /// schedules the next step at `at + copy`.
    fn deliver(&mut self, tb: TbId, file: FileId, page: u64, tag: u64, at: SimTime) {
        self.check_tag(file, page, tag);
        let run = self.tbs.get_mut(&tb).expect("running tb");
        let cur = run.cur.as_mut().expect("tb has an op in progress");
        let ps = self.cfg.gpufs.page_size;
        let page_end = (page + 1) * ps;
        let take = cur.end.min(page_end) - cur.pos;
        cur.pos += take;
        cur.delivered += take;
        self.delivered += take;
        let copy = self.cfg.gpufs.copy_ns(take);
        self.event(TraceEvent::Deliver {
            tb,
            file,
            page,
            bytes: take,
        });
        self.q.schedule(at + copy, Ev::TbStep(tb));
    }

    fn tb_step(&mut self, tb: TbId, now: SimTime) -> Result<(), SimError> {
        let run = self.tbs.get_mut(&tb).expect("running tb");
        let cur = match run.cur {
            Some(c) if c.pos < c.end => c,
            Some(c) => {
                run.block.read_done(c.delivered);
                run.cur = None;
                self.q.schedule(now, Ev::TbStep(tb));
                return Ok(());
            }
            None => {
                match run.block.tb_step() {
                    TbAction::Read(op) => {
                        let fsize = self.spec.files[op.file as usize];
                        let end = (op.offset + op.size).min(fsize);
                        run.cur = Some(OpProgress {
                            op,
                            pos: op.offset,
                            end: end.max(op.offset),
                            delivered: 0,
                        });
                        self.q.schedule(now, Ev::TbStep(tb));
                    }
                    TbAction::Compute(ns) => {
                        self.q.schedule(now + ns, Ev::TbStep(tb));
                    }
                    TbAction::Done => self.retire(tb, now),
                }
                return Ok(());
            }
        };
        let file = cur.op.file;
        let ps = self.cfg.gpufs.page_size;
        let page = cur.pos / ps;
        let rslot = run.rslot;

        let Some(cache) = self.cache.as_mut() else {
            // No GPU page cache: private buffer, then RPC.
            if let Some(chunk) = run.pb.pb_lookup(file, page) {
                self.pb_hits += 1;
                self.out.pb_hits_per_tb[tb as usize] += 1;
                self.installed += chunk.len;
                self.deliver(tb, file, page, chunk.tag, now);
            } else {
                run.pending = Some(PendingPage {
                    file,
                    page,
                    frame: None,
                    chunk: None,
                });
                self.q.schedule(now, Ev::Submit(tb));
            }
            return Ok(());
        };

        let t = now + cache.config().lookup_ns;
        match cache.pc_lookup(file, page) {
            Lookup::Hit(f) => {
                let tag = cache.frame(f).tag;
                let take = cur.end.min((page + 1) * ps) - cur.pos;
                self.hit_bytes += take;
                self.deliver(tb, file, page, tag, t);
            }
            Lookup::InFlight(_) => {
                self.waiters.entry((file, page)).or_default().push(tb);
            }
            Lookup::Miss => {
                let alloc = cache.pc_allocate(rslot, file, page, t)?;
                if let Some((vf, vp)) = alloc.victim {
                    self.event(TraceEvent::Evict {
                        tb,
                        file: vf,
                        page: vp,
                    });
                }
                let run = self.tbs.get_mut(&tb).expect("running tb");
                let chunk = run.pb.pb_lookup(file, page);
                run.pending = Some(PendingPage {
                    file,
                    page,
                    frame: Some(alloc.frame),
                    chunk,
                });
                if chunk.is_some() {
                    self.pb_hits += 1;
                    self.out.pb_hits_per_tb[tb as usize] += 1;
                    self.q.schedule(alloc.done_at, Ev::PbInstall(tb));
                } else {
                    self.q.schedule(alloc.done_at, Ev::Submit(tb));
                }
            }
        }
        Ok(())
    }

    fn install(&mut self, frame: usize, file: FileId, page: u64, chunk: PageChunk, now: SimTime) {
        let cache = self
            .cache
            .as_mut()
            .expect("installing without a page cache");
        cache.pc_install(frame, chunk.tag, chunk.len);
        self.installed += chunk.len;
        if let Some(ws) = self.waiters.remove(&(file, page)) {
            for w in ws {
                self.q.schedule(now, Ev::TbStep(w));
            }
        }
    }

    fn pb_install(&mut self, tb: TbId, now: SimTime) {
        let run = self.tbs.get_mut(&tb).expect("running tb");
        let p = run.pending.take().expect("pending page");
        let chunk = p.chunk.expect("private-buffer chunk");
        self.install(p.frame.expect("frame"), p.file, p.page, chunk, now);
        self.deliver(tb, p.file, p.page, chunk.tag, now);
    }

    fn submit(&mut self, tb: TbId) {
        let run = self.tbs.get_mut(&tb).expect("running tb");
        assert!(
            !run.rpc_outstanding,
            "threadblock {tb} issued a second RPC while one is outstanding"
        );
        run.rpc_outstanding = true;
        let p = run.pending.expect("pending page");
        let ps = self.cfg.gpufs.page_size;
        let fsize = self.spec.files[p.file as usize];
        let offset = p.page * ps;
        let size = if self.prefetch {
            request_span(offset, ps, self.cfg.gpufs.prefetch_bytes, fsize)
        } else {
            ps.min(fsize - offset)
        };
        self.out.report.rpc_count += 1;
        self.out.rpcs_per_tb[tb as usize] += 1;
        self.event(TraceEvent::Rpc { tb, offset, size });
        self.rpc.submit(IoRequest {
            tb,
            file: p.file,
            offset,
            size,
        });
    }

    fn worker_poll(&mut self, w: usize, now: SimTime) {
        if self.workers[w].busy {
            return;
        }
        match self.workers[w].poll(&mut self.rpc, now) {
            Some(slot) => {
                self.workers[w].busy = true;
                let req = self
                    .rpc
                    .slot(slot)
                    .request
                    .expect("claimed slot has a request");
                self.out.trace.record(TraceRecord {
                    tb: req.tb,
                    file: req.file,
                    offset: req.offset,
                    size: req.size,
                });
                let res = self.host.os_pread(req.file, req.offset, req.size, now);
                self.note_touched(req.file, req.offset, res.bytes_read);
                self.pread_bytes += res.bytes_read;
                let pages =
                    split_into_pages(req.offset, res.bytes_read, self.cfg.gpufs.page_size, |p| {
                        page_tag(req.file, p)
                    });
                self.in_service.insert(
                    slot,
                    InService {
                        req,
                        pages,
                        remaining: res.bytes_read,
                    },
                );
                self.q
                    .schedule(res.completion, Ev::PreadDone { worker: w, slot });
            }
            None => self.repoll(w, now + self.cfg.rpc.poll_interval_ns),
        }
    }

    fn repoll(&mut self, w: usize, at: SimTime) {
        if self.finished < self.spec.n_tb {
            self.q.schedule(at, Ev::WorkerPoll(w));
        }
    }

    fn note_touched(&mut self, file: FileId, offset: u64, bytes: u64) {
        if bytes == 0 {
            return;
        }
        let ps = self.cfg.host.os_page_size;
        let bits = &mut self.touched[file as usize];
        for p in offset / ps..=(offset + bytes - 1) / ps {
            bits[p as usize] = true;
        }
    }

    fn pread_done(&mut self, w: usize, slot: usize, now: SimTime) {
        let bytes = self.in_service[&slot].remaining;
        if bytes == 0 {
            self.complete_slot(slot, now);
            self.workers[w].busy = false;
            self.q.schedule(now, Ev::WorkerPoll(w));
            return;
        }
        if self.cfg.rpc.async_transfer {
            self.workers[w].stage(slot, bytes);
            if self.workers[w].transfers_in_flight == 0 {
                self.issue_batches(w, now);
            }
            self.workers[w].busy = false;
            self.q.schedule(now, Ev::WorkerPoll(w));
        } else {
            let done = self.pcie.transfer(bytes, now);
            let id = self.transfers.len();
            self.transfers.push(vec![(slot, bytes)]);
            self.workers[w].transfers_in_flight += 1;
            self.q.schedule(done, Ev::TransferDone { worker: w, id });
        }
    }

    fn issue_batches(&mut self, w: usize, now: SimTime) {
        for plan in self.workers[w].batch_ready() {
            let done = self.pcie.transfer(plan.bytes, now);
            let id = self.transfers.len();
            self.transfers.push(plan.parts);
            self.workers[w].transfers_in_flight += 1;
            self.q.schedule(done, Ev::TransferDone { worker: w, id });
        }
    }

    fn transfer_done(&mut self, w: usize, id: usize, now: SimTime) {
        let parts = std::mem::take(&mut self.transfers[id]);
        for (slot, b) in parts {
            let s = self
                .in_service
                .get_mut(&slot)
                .expect("transfer for a slot in service");
            s.remaining -= b;
            if s.remaining == 0 {
                self.complete_slot(slot, now);
            }
        }
        let worker = &mut self.workers[w];
        worker.transfers_in_flight -= 1;
        if self.cfg.rpc.async_transfer {
            if worker.transfers_in_flight == 0 && !worker.awaiting.is_empty() {
                self.issue_batches(w, now);
            }
        } else {
            worker.busy = false;
            self.q.schedule(now, Ev::WorkerPoll(w));
        }
    }

    /// The slot's data is on the GPU: mark it ready and let the owning
    /// threadblock consume it.
    fn complete_slot(&mut self, slot: usize, now: SimTime) {
        let s = self.in_service.remove(&slot).expect("slot in service");
        self.rpc.mark_ready(slot, s.pages);
        let (req, pages, _next) = self.rpc.consume(slot);
        debug_assert_eq!(req, s.req);
        let tb = req.tb;
        let run = self.tbs.get_mut(&tb).expect("rpc owner is running");
        run.rpc_outstanding = false;
        let p = run.pending.take().expect("rpc owner waits on a page");
        let mut iter = pages.into_iter();
        let Some(first) = iter.next() else {
            // Nothing came back: give the frame up and skip to the op's end.
            if let (Some(f), Some(cache)) = (p.frame, self.cache.as_mut()) {
                cache.pc_release(f);
            }
            let cur = run.cur.as_mut().expect("op in progress");
            cur.pos = cur.end;
            self.q.schedule(now, Ev::TbStep(tb));
            return;
        };
        debug_assert_eq!(first.page_index, p.page);
        if self.prefetch {
            run.pb.pb_fill(p.file, iter);
        }
        match p.frame {
            Some(f) => self.install(f, p.file, p.page, first, now),
            None => self.installed += first.len,
        }
        self.deliver(tb, p.file, p.page, first.tag, now);
    }

    fn retire(&mut self, tb: TbId, now: SimTime) {
        let run = self.tbs.get_mut(&tb).expect("running tb");
        run.pb.clear();
        assert_eq!(
            run.block.cursor, run.expected,
            "threadblock {tb} finished with {} of {} bytes",
            run.block.cursor, run.expected
        );
        let rslot = run.rslot;
        self.finished += 1;
        self.last_retire = now;
        if let Some(next) = self.dispatcher.on_retire(rslot, now) {
            self.q.schedule(next.start_at, Ev::TbStart(next));
        }
    }

    fn finish(mut self) -> Result<RunOutput, SimError> {
        if let Some(c) = &self.cache {
            c.check();
        }
        let r = &mut self.out.report;
        r.end_to_end_ns = self.last_retire;
        r.delivered_bytes = self.delivered;
        r.io_bandwidth_bytes_per_s = if self.last_retire > 0 {
            self.delivered as f64 / (self.last_retire as f64 * 1e-9)
        } else {
            0.0
        };
        r.pcie_bytes = self.pcie.bytes;
        r.pcie_transfers = self.pcie.transfers;
        r.ssd_bytes = self.host.ssd.bytes;
        r.ssd_requests = self.host.ssd.requests;
        if let Some(c) = &self.cache {
            r.gpu_hits = c.stats.hits;
            r.gpu_misses = c.stats.misses;
            r.evictions = c.stats.evictions;
            r.remaps = c.stats.remaps;
        }
        r.pb_hits = self.pb_hits;
        r.prefetch_waste_bytes = self.pcie.bytes - self.installed;
        r.tag_mismatches = self.tag_mismatches;
        r.host_blocked_ns = self.host.blocked_ns;
        r.ra_windows = self.host.window_history.len() as u64;
        r.ra_window_max = self.host.window_history.iter().copied().max().unwrap_or(0);
        r.worker_spins = self.workers.iter().map(|w| w.spin_count).collect();
        r.worker_first_service_ns = self.workers.iter().map(|w| w.first_service_at).collect();
        r.worker_first_service_spins = self.workers.iter().map(|w| w.first_service_spins).collect();
        r.events = self.q.fired();
        r.hit_bytes = self.hit_bytes;
        r.pread_bytes = self.pread_bytes;
        let ps = self.cfg.host.os_page_size;
        r.touched_bytes = self
            .touched
            .iter()
            .zip(&self.spec.files)
            .map(|(bits, &size)| {
                bits.iter()
                    .enumerate()
                    .filter(|(_, &b)| b)
                    .map(|(p, _)| ps.min(size - p as u64 * ps))
                    .sum::<u64>()
            })
            .sum();
        check_conservation(r)?;
        Ok(self.out)
    }
}

/// Byte-accounting invariants every run must satisfy.
pub fn check_conservation(r: &MetricsReport) -> Result<(), SimError> {
    let fail = |m: String| Err(SimError::Invariant(m));
    if r.pcie_bytes != r.pread_bytes {
        return fail(format!(
            "pcie bytes {} != pread bytes {}",
            r.pcie_bytes, r.pread_bytes
        ));
    }
    if r.pcie_bytes + r.hit_bytes < r.delivered_bytes {
        return fail(format!(
            "delivered {} bytes but only {} crossed PCIe and {} came from cache hits",
            r.delivered_bytes, r.pcie_bytes, r.hit_bytes
        ));
    }
    if r.ssd_bytes < r.touched_bytes {
        return fail(format!(
            "ssd bytes {} < touched bytes {}",
            r.ssd_bytes, r.touched_bytes
        ));
    }
    if r.tag_mismatches != 0 {
        return fail(format!("{} content tag mismatches", r.tag_mismatches));
    }
    Ok(())
}

/// Runs one simulation of `spec`.
pub fn simulate(cfg: &SystemConfig, spec: &WorkloadSpec, seed: u64) -> Result<RunOutput, SimError> {
    Simulation::new(*cfg, spec, seed)?.run()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplayReport {
    pub end_ns: SimTime,
    pub bytes_read: u64,
    pub ssd_bytes: u64,
    pub ssd_requests: u64,
    pub blocked_ns: SimTime,
    pub collision_ns: SimTime,
    pub preads: u64,
}

impl ReplayReport {
    pub fn bandwidth(&self) -> f64 {
        if self.end_ns == 0 {
            0.0
        } else {
            self.bytes_read as f64 / (self.end_ns as f64 * 1e-9)
        }
    }
}

/// Drives the host path directly with a recorded trace: each record goes to
/// the worker owning its threadblock's slot and is issued once that worker
/// is free and the previous record has been issued. No GPU, no PCIe.
pub fn replay(cfg: &SystemConfig, files: &[u64], trace: &Trace) -> Result<ReplayReport, SimError> {
    trace.validate(files)?;
    let ssd = if cfg.modes.ramfs {
        SsdModel::ramfs(cfg.ssd)
    } else {
        SsdModel::new(cfg.ssd)
    };
    let mut host = HostOs::new(cfg.host, files.to_vec(), ssd);
    let queue = RpcQueue::new(cfg.rpc.n_slots, cfg.rpc.n_workers);
    let mut free_at = vec![0 as SimTime; cfg.rpc.n_workers];
    let mut last_issue = 0;
    let mut rep = ReplayReport::default();
    for r in &trace.records {
        let w = queue.owner_of(crate::rpc::slot_for_threadblock(r.tb, cfg.rpc.n_slots));
        let at = free_at[w].max(last_issue);
        let res = host.os_pread(r.file, r.offset, r.size, at);
        free_at[w] = res.completion;
        last_issue = at;
        rep.bytes_read += res.bytes_read;
        rep.end_ns = rep.end_ns.max(res.completion);
    }
    rep.ssd_bytes = host.ssd.bytes;
    rep.ssd_requests = host.ssd.requests;
    rep.blocked_ns = host.blocked_ns;
    rep.collision_ns = host.collision_ns;
    rep.preads = host.preads;
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gpufs::Policy;
    use crate::workloads::gen_sequential_strided;

    const KB: u64 = 1024;
    const MB: u64 = 1 << 20;

    fn small_cfg() -> SystemConfig {
        let mut c = SystemConfig::default();
        c.gpufs.cache_bytes = 64 * MB;
        c
    }

    #[test]
    fn single_tb_no_prefetch() {
        let cfg = small_cfg();
        let spec = gen_sequential_strided(1, MB, 64 * KB, 64 * KB).unwrap();
        let out = simulate(&cfg, &spec, 1).unwrap();
        assert_eq!(out.report.rpc_count, 16);
        assert_eq!(out.report.delivered_bytes, 64 * KB);
        assert_eq!(out.report.pcie_bytes, 64 * KB);
        assert_eq!(out.report.prefetch_waste_bytes, 0);
    }

    #[test]
    fn single_tb_prefetch_one_rpc() {
        let mut cfg = small_cfg();
        cfg.gpufs.prefetch_bytes = 60 * KB;
        let spec = gen_sequential_strided(1, MB, 64 * KB, 64 * KB).unwrap();
        let out = simulate(&cfg, &spec, 1).unwrap();
        assert_eq!(out.report.rpc_count, 1);
        assert_eq!(out.report.pb_hits, 15);
        assert_eq!(out.report.prefetch_waste_bytes, 0);
    }

    #[test]
    fn cached_pages_need_no_rpc() {
        let cfg = small_cfg();
        let mut spec = gen_sequential_strided(1, MB, 64 * KB, 64 * KB).unwrap();
        let again = spec.programs[0].clone();
        spec.programs[0].extend(again);
        let out = simulate(&cfg, &spec, 1).unwrap();
        assert_eq!(out.report.rpc_count, 16);
        assert_eq!(out.report.gpu_hits, 16);
    }

    #[test]
    fn eof_short_read() {
        let mut cfg = small_cfg();
        cfg.gpufs.prefetch_bytes = 60 * KB;
        let mut spec = gen_sequential_strided(1, 8 * KB, 8 * KB, 8 * KB).unwrap();
        spec.programs[0][0].size = 64 * KB;
        let out = simulate(&cfg, &spec, 1).unwrap();
        assert_eq!(out.report.delivered_bytes, 8 * KB);
        assert_eq!(out.report.pcie_bytes, 8 * KB);
    }

    #[test]
    fn lra_run_completes_with_evictions() {
        let mut cfg = small_cfg();
        cfg.gpufs.cache_bytes = 4 * MB;
        cfg.gpufs.policy = Policy::PerTbLra;
        cfg.gpufs.prefetch_bytes = 60 * KB;
        let spec = gen_sequential_strided(120, 16 * MB, 120 * 96 * KB, 4 * KB).unwrap();
        let out = simulate(&cfg, &spec, 2).unwrap();
        assert!(out.report.evictions > 0);
        assert_eq!(out.report.delivered_bytes, spec.total_read);
    }

    #[test]
    fn empty_workload_has_no_events() {
        let spec = gen_sequential_strided(1, MB, 0, 4 * KB);
        assert!(spec.is_err());
        let mut spec = gen_sequential_strided(1, MB, 4 * KB, 4 * KB).unwrap();
        spec.programs[0].clear();
        let out = simulate(&small_cfg(), &spec, 1).unwrap();
        assert_eq!(out.report.events, 0);
        assert_eq!(out.report.io_bandwidth_bytes_per_s, 0.0);
    }

    #[test]
    fn replay_of_empty_trace() {
        let rep = replay(&SystemConfig::default(), &[MB], &Trace::default()).unwrap();
        assert_eq!(rep, ReplayReport::default());
    }
}
