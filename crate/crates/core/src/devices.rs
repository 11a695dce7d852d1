//! Latency-plus-bandwidth cost models for the SSD and the host-to-device PCIe
//! link.
//!
//! Both models are reservation based: a submission immediately returns its
//! completion time, and the model remembers when its resources free up. The
//! event loop never has to poke a device.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::simcore::SimTime;

/// Time to move `bytes` at `bytes_per_s`, rounded up to whole nanoseconds.
pub fn transfer_ns(bytes: u64, bytes_per_s: u64) -> SimTime {
    assert!(bytes_per_s > 0, "bandwidth must be positive");
    let num = bytes as u128 * 1_000_000_000u128;
    num.div_ceil(bytes_per_s as u128) as SimTime
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsdConfig {
    pub base_latency_ns: SimTime,
    pub bandwidth_bytes_per_s: u64,
    pub max_inflight: usize,
}

impl Default for SsdConfig {
    fn default() -> Self {
        Self {
            base_latency_ns: 80_000,
            bandwidth_bytes_per_s: 2_800_000_000,
            max_inflight: 32,
        }
    }
}

/// NVMe SSD with `max_inflight` internal command slots sharing one data
/// channel.
///
/// A request waits (FIFO) for a command slot, pays `base_latency`, then
/// streams its bytes through the channel. Latencies of concurrent commands
/// overlap; their data phases do not, so sustained throughput converges to
/// the configured bandwidth.
#[derive(Debug, Clone)]
pub struct SsdModel {
    cfg: SsdConfig,
    /// Free times of the command slots; always exactly `max_inflight` entries.
    slot_free_at: BinaryHeap<Reverse<SimTime>>,
    channel_busy_until: SimTime,
    /// Zero-latency, infinite-bandwidth store (RAMfs mode).
    ramfs: bool,
    pub requests: u64,
    pub bytes: u64,
}

impl SsdModel {
    pub fn new(cfg: SsdConfig) -> Self {
        assert!(cfg.max_inflight > 0, "ssd.max_inflight must be positive");
        Self {
            cfg,
            slot_free_at: (0..cfg.max_inflight).map(|_| Reverse(0)).collect(),
            channel_busy_until: 0,
            ramfs: false,
            requests: 0,
            bytes: 0,
        }
    }

    pub fn ramfs(cfg: SsdConfig) -> Self {
        let mut ssd = Self::new(cfg);
        ssd.ramfs = true;
        ssd
    }

    pub fn config(&self) -> &SsdConfig {
        &self.cfg
    }

    /// Submits a read of `req_size` bytes at time `at`; returns its completion time.
    pub fn submit(&mut self, req_size: u64, at: SimTime) -> SimTime {
        assert!(req_size > 0, "zero-sized SSD request");
        self.requests += 1;
        self.bytes += req_size;
        if self.ramfs {
            return at;
        }
        let Reverse(slot_free) = self.slot_free_at.pop().expect("slot heap never empty");
        let start = at.max(slot_free);
        let data_start = (start + self.cfg.base_latency_ns).max(self.channel_busy_until);
        let done = data_start + transfer_ns(req_size, self.cfg.bandwidth_bytes_per_s);
        self.channel_busy_until = done;
        self.slot_free_at.push(Reverse(done));
        done
    }

    /// Commands still occupying a slot at time `t`.
    pub fn inflight_at(&self, t: SimTime) -> usize {
        self.slot_free_at.iter().filter(|Reverse(f)| *f > t).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcieConfig {
    pub latency_ns: SimTime,
    pub bandwidth_bytes_per_s: u64,
}

impl Default for PcieConfig {
    fn default() -> Self {
        Self {
            latency_ns: 10_000,
            bandwidth_bytes_per_s: 12_000_000_000,
        }
    }
}

/// Host-to-device link. Transfers are serialized, latency included.
#[derive(Debug, Clone)]
pub struct PcieModel {
    cfg: PcieConfig,
    busy_until: SimTime,
    /// Transfers complete instantly (data transfers disabled).
    disabled: bool,
    pub transfers: u64,
    pub bytes: u64,
}

impl PcieModel {
    pub fn new(cfg: PcieConfig) -> Self {
        Self {
            cfg,
            busy_until: 0,
            disabled: false,
            transfers: 0,
            bytes: 0,
        }
    }

    pub fn disabled(cfg: PcieConfig) -> Self {
        let mut link = Self::new(cfg);
        link.disabled = true;
        link
    }

    pub fn transfer(&mut self, size: u64, at: SimTime) -> SimTime {
        assert!(size > 0, "zero-sized PCIe transfer");
        self.transfers += 1;
        self.bytes += size;
        if self.disabled {
            return at;
        }
        let start = at.max(self.busy_until);
        let done = start + self.cfg.latency_ns + transfer_ns(size, self.cfg.bandwidth_bytes_per_s);
        self.busy_until = done;
        done
    }

    pub fn busy_until(&self) -> SimTime {
        self.busy_until
    }

    /// `size / (latency + size / bandwidth)` in bytes per second.
    pub fn effective_bandwidth(&self, size: u64) -> f64 {
        effective_bandwidth(&self.cfg, size)
    }
}

pub fn effective_bandwidth(cfg: &PcieConfig, size: u64) -> f64 {
    let secs = cfg.latency_ns as f64 * 1e-9 + size as f64 / cfg.bandwidth_bytes_per_s as f64;
    size as f64 / secs
}
