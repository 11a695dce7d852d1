//! GPU execution model: occupancy, threadblock dispatch and the per-block
//! program of alternating reads and compute.

use std::fmt;
use std::str::FromStr;

use crate::rpc::TbId;
use crate::simcore::{shuffled_order, SeededRng, SimTime};
use crate::workloads::ReadOp;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpuConfig {
    pub sm_count: u32,
    pub max_threads_per_sm: u32,
    pub threads_per_tb: u32,
    pub start_jitter_ns: SimTime,
    pub dispatch: DispatchPolicy,
}

impl Default for GpuConfig {
    fn default() -> Self {
        Self {
            sm_count: 15,
            max_threads_per_sm: 2048,
            threads_per_tb: 512,
            start_jitter_ns: 1_000,
            dispatch: DispatchPolicy::RoundRobin,
        }
    }
}

/// How many threadblocks fit on the GPU at once.
pub fn resident_limit(cfg: &GpuConfig) -> usize {
    assert!(cfg.threads_per_tb > 0, "threads_per_tb must be positive");
    assert!(
        cfg.threads_per_tb <= cfg.max_threads_per_sm,
        "a threadblock larger than an SM never fits"
    );
    cfg.sm_count as usize * (cfg.max_threads_per_sm / cfg.threads_per_tb) as usize
}

/// Order in which threadblock ids are made resident.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DispatchPolicy {
    /// Ascending ids, like the hardware block scheduler.
    RoundRobin,
    /// A seeded permutation of all ids.
    Shuffled,
    /// Descending ids.
    Reverse,
}

impl FromStr for DispatchPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "round-robin" => Ok(Self::RoundRobin),
            "shuffled" => Ok(Self::Shuffled),
            "reverse" => Ok(Self::Reverse),
            other => Err(format!("unknown dispatch policy '{other}'")),
        }
    }
}

impl fmt::Display for DispatchPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::RoundRobin => "round-robin",
            Self::Shuffled => "shuffled",
            Self::Reverse => "reverse",
        })
    }
}

/// A threadblock placed on a hardware residency slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Placement {
    pub tb: TbId,
    pub residency_slot: usize,
    pub start_at: SimTime,
}

/// Tracks which threadblock runs next.
#[derive(Debug, Clone)]
pub struct Dispatcher {
    order: Vec<TbId>,
    next: usize,
    limit: usize,
    resident: usize,
}

impl Dispatcher {
    pub fn new(n_tb: usize, limit: usize, policy: DispatchPolicy, rng: &mut SeededRng) -> Self {
        assert!(limit > 0);
        let order = match policy {
            DispatchPolicy::RoundRobin => (0..n_tb as TbId).collect(),
            DispatchPolicy::Reverse => (0..n_tb as TbId).rev().collect(),
            DispatchPolicy::Shuffled => shuffled_order(n_tb, rng)
                .into_iter()
                .map(|i| i as TbId)
                .collect(),
        };
        Self {
            order,
            next: 0,
            limit,
            resident: 0,
        }
    }

    pub fn order(&self) -> &[TbId] {
        &self.order
    }

    /// The first wave: up to `limit` blocks, each with a seeded start jitter
    /// in `[0, jitter_ns]`.
    pub fn initial(&mut self, rng: &mut SeededRng, jitter_ns: SimTime) -> Vec<Placement> {
        let n = self.limit.min(self.order.len());
        let wave: Vec<Placement> = (0..n)
            .map(|slot| Placement {
                tb: self.order[slot],
                residency_slot: slot,
                start_at: if jitter_ns > 0 {
                    rng.up_to(jitter_ns)
                } else {
                    0
                },
            })
            .collect();
        self.next = n;
        self.resident = n;
        wave
    }

    /// A block on `residency_slot` retired at `at`; the next block in order
    /// takes its place.
    pub fn on_retire(&mut self, residency_slot: usize, at: SimTime) -> Option<Placement> {
        assert!(self.resident > 0);
        self.resident -= 1;
        let tb = *self.order.get(self.next)?;
        self.next += 1;
        self.resident += 1;
        debug_assert!(self.resident <= self.limit);
        Some(Placement {
            tb,
            residency_slot,
            start_at: at,
        })
    }

    pub fn resident(&self) -> usize {
        self.resident
    }

    pub fn all_dispatched(&self) -> bool {
        self.next >= self.order.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TbPhase {
    Waiting,
    Issuing,
    WaitingRpc,
    WaitingFrame,
    Computing,
    Done,
}

/// What a threadblock does next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TbAction {
    Read(ReadOp),
    Compute(SimTime),
    Done,
}

/// A threadblock's program: reads in order, each followed by compute
/// proportional to the bytes it returned.
#[derive(Debug, Clone)]
pub struct ThreadBlock {
    pub id: TbId,
    pub ops: Vec<ReadOp>,
    pub op_idx: usize,
    /// Bytes delivered so far.
    pub cursor: u64,
    pub phase: TbPhase,
    pub residency_slot: usize,
    compute_ns_per_byte: f64,
    pending_compute: Option<SimTime>,
}

impl ThreadBlock {
    pub fn new(id: TbId, ops: Vec<ReadOp>, compute_ns_per_byte: f64) -> Self {
        Self {
            id,
            ops,
            op_idx: 0,
            cursor: 0,
            phase: TbPhase::Waiting,
            residency_slot: usize::MAX,
            compute_ns_per_byte,
            pending_compute: None,
        }
    }

    pub fn stride_len(&self) -> u64 {
        self.ops.iter().map(|o| o.size).sum()
    }

    /// Advances the program by one step.
    pub fn tb_step(&mut self) -> TbAction {
        assert_ne!(self.phase, TbPhase::Done, "stepping a finished threadblock");
        if let Some(ns) = self.pending_compute.take() {
            self.phase = TbPhase::Computing;
            return TbAction::Compute(ns);
        }
        match self.ops.get(self.op_idx) {
            Some(op) => {
                self.phase = TbPhase::Issuing;
                TbAction::Read(*op)
            }
            None => {
                self.phase = TbPhase::Done;
                TbAction::Done
            }
        }
    }

    /// Reports the bytes returned by the current read.
    pub fn read_done(&mut self, bytes: u64) {
        self.op_idx += 1;
        self.cursor += bytes;
        let ns = (bytes as f64 * self.compute_ns_per_byte).ceil() as SimTime;
        if ns > 0 {
            self.pending_compute = Some(ns);
        }
    }

    pub fn is_done(&self) -> bool {
        self.phase == TbPhase::Done
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn occupancy() {
        assert_eq!(resident_limit(&GpuConfig::default()), 60);
        let one = GpuConfig {
            sm_count: 1,
            max_threads_per_sm: 1024,
            threads_per_tb: 512,
            ..GpuConfig::default()
        };
        assert_eq!(resident_limit(&one), 2);
        let full = GpuConfig {
            threads_per_tb: 2048,
            ..GpuConfig::default()
        };
        assert_eq!(resident_limit(&full), 15);
    }

    #[test]
    fn first_wave_is_bounded() {
        let mut rng = SeededRng::new(3);
        let mut d = Dispatcher::new(120, 60, DispatchPolicy::RoundRobin, &mut rng);
        let wave = d.initial(&mut rng, 1000);
        assert_eq!(wave.len(), 60);
        assert!(wave.iter().all(|p| p.start_at <= 1000));
        assert_eq!(wave.iter().map(|p| p.tb).max(), Some(59));
        let next = d.on_retire(wave[7].residency_slot, 5000).unwrap();
        assert_eq!(next.tb, 60);
        assert_eq!(next.residency_slot, 7);
        assert_eq!(next.start_at, 5000);
        assert_eq!(d.resident(), 60);
    }

    #[test]
    fn small_grid_starts_together() {
        let mut rng = SeededRng::new(3);
        let mut d = Dispatcher::new(10, 60, DispatchPolicy::Shuffled, &mut rng);
        assert_eq!(d.initial(&mut rng, 0).len(), 10);
        assert!(d.on_retire(0, 1).is_none());
        assert!(d.all_dispatched());
    }

    #[test]
    fn same_seed_same_order() {
        let order = |seed| {
            let mut rng = SeededRng::new(seed);
            let mut d = Dispatcher::new(120, 60, DispatchPolicy::Shuffled, &mut rng);
            let wave = d.initial(&mut rng, 1000);
            (d.order().to_vec(), wave)
        };
        assert_eq!(order(9), order(9));
        assert_ne!(order(9).0, order(10).0);
    }

    #[test]
    fn program_steps() {
        let ops: Vec<ReadOp> = (0..128)
            .map(|i| ReadOp {
                file: 0,
                offset: i * 65536,
                size: 65536,
            })
            .collect();
        let mut tb = ThreadBlock::new(0, ops, 0.0);
        let mut reads = 0;
        loop {
            match tb.tb_step() {
                TbAction::Read(op) => {
                    reads += 1;
                    tb.read_done(op.size);
                }
                TbAction::Compute(_) => panic!("no compute at 0 ns/byte"),
                TbAction::Done => break,
            }
        }
        assert_eq!(reads, 128);
        assert_eq!(tb.cursor, 8 << 20);
        assert_eq!(tb.cursor, tb.stride_len());
    }

    #[test]
    fn compute_follows_read() {
        let op = ReadOp {
            file: 0,
            offset: 0,
            size: 8 << 20,
        };
        let mut tb = ThreadBlock::new(0, vec![op], 0.5);
        assert_eq!(tb.tb_step(), TbAction::Read(op));
        tb.read_done(8 << 20);
        assert_eq!(tb.tb_step(), TbAction::Compute(4 << 20));
        assert_eq!(tb.tb_step(), TbAction::Done);
    }
}
