//! Flat `key = value` experiment configuration.
//!
//! One pair per line, `#` starts a comment. Every key has a default and
//! unknown keys are rejected. Sizes accept `K`, `M`, `G` suffixes (binary,
//! with optional `B`/`iB`), e.g. `64K`, `2GB`, `1.5MiB`.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::SimError;
use crate::sim::SystemConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkloadKind {
    Sequential,
    Random,
    Table1,
    Trace,
    /// Single-stream sequential host reads of `total_read_bytes`, replay only.
    Cpu,
}

impl FromStr for WorkloadKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sequential" => Ok(Self::Sequential),
            "random" => Ok(Self::Random),
            "table1" => Ok(Self::Table1),
            "trace" => Ok(Self::Trace),
            "cpu" => Ok(Self::Cpu),
            o => Err(format!("unknown workload kind '{o}'")),
        }
    }
}

impl std::fmt::Display for WorkloadKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Sequential => "sequential",
            Self::Random => "random",
            Self::Table1 => "table1",
            Self::Trace => "trace",
            Self::Cpu => "cpu",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadConfig {
    pub kind: WorkloadKind,
    pub n_tb: usize,
    pub file_bytes: u64,
    pub total_read_bytes: u64,
    /// Bytes per gread; 0 means one GPUfs page.
    pub request_bytes: u64,
    pub n_requests: usize,
    pub benchmark: String,
    pub scale: f64,
    pub trace_file: Option<PathBuf>,
    pub compute_ns_per_byte: f64,
    pub read_only: bool,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        Self {
            kind: WorkloadKind::Sequential,
            n_tb: 120,
            file_bytes: 1 << 30,
            total_read_bytes: 120 << 20,
            request_bytes: 0,
            n_requests: 12_000,
            benchmark: "HOTSPOT".into(),
            scale: 0.1,
            trace_file: None,
            compute_ns_per_byte: 0.0,
            read_only: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub workload: WorkloadConfig,
    /// Replay the host path only (recorded or given trace).
    pub replay: bool,
    pub seed: u64,
    pub repetitions: usize,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            system: SystemConfig::default(),
            workload: WorkloadConfig::default(),
            replay: false,
            seed: 1,
            repetitions: 10,
            output: None,
        }
    }
}

/// Parses a byte size such as `4096`, `64K`, `2GB`, `1.5MiB`.
pub fn parse_size(s: &str) -> Result<u64, String> {
    let t = s.trim();
    let lower = t.to_ascii_lowercase();
    let stripped = lower
        .strip_suffix("ib")
        .or_else(|| lower.strip_suffix('b'))
        .unwrap_or(&lower);
    let (num, mult) = match stripped.chars().last() {
        Some('k') => (&stripped[..stripped.len() - 1], 1u64 << 10),
        Some('m') => (&stripped[..stripped.len() - 1], 1 << 20),
        Some('g') => (&stripped[..stripped.len() - 1], 1 << 30),
        Some('t') => (&stripped[..stripped.len() - 1], 1 << 40),
        _ => (stripped, 1),
    };
    let num = num.trim();
    if let Ok(v) = num.parse::<u64>() {
        return v
            .checked_mul(mult)
            .ok_or_else(|| format!("size '{t}' overflows"));
    }
    match num.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => {
            let bytes = v * mult as f64;
            if bytes.fract() != 0.0 {
                Err(format!("size '{t}' is not a whole number of bytes"))
            } else {
                Ok(bytes as u64)
            }
        }
        _ => Err(format!("invalid size '{t}'")),
    }
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        o => Err(format!("invalid boolean '{o}'")),
    }
}

fn parse<T: FromStr>(s: &str) -> Result<T, String> {
    s.trim()
        .parse::<T>()
        .map_err(|_| format!("invalid value '{}'", s.trim()))
}

/// Every recognised key, in documentation order.
pub const KEYS: &[&str] = &[
    "gpu.sm_count",
    "gpu.max_threads_per_sm",
    "gpu.threads_per_tb",
    "gpu.start_jitter_ns",
    "gpu.dispatch",
    "gpufs.page_size",
    "gpufs.cache_bytes",
    "gpufs.policy",
    "gpufs.prefetch_bytes",
    "gpufs.lookup_ns",
    "gpufs.alloc_ns",
    "gpufs.dealloc_ns",
    "gpufs.remap_ns",
    "gpufs.global_contention_ns",
    "gpufs.copy_ns_per_byte",
    "host.os_page_size",
    "host.cache_capacity_bytes",
    "host.ra_max_bytes",
    "host.cpu_copy_ns_per_byte",
    "ssd.base_latency_ns",
    "ssd.bandwidth_bytes_per_s",
    "ssd.max_inflight",
    "pcie.latency_ns",
    "pcie.bandwidth_bytes_per_s",
    "rpc.n_slots",
    "rpc.n_workers",
    "rpc.poll_interval_ns",
    "rpc.staging_bytes",
    "rpc.async_transfer",
    "mode.pcie_disabled",
    "mode.gpu_cache_disabled",
    "mode.ramfs",
    "mode.replay",
    "workload.kind",
    "workload.n_tb",
    "workload.file_bytes",
    "workload.total_read_bytes",
    "workload.request_bytes",
    "workload.n_requests",
    "workload.benchmark",
    "workload.scale",
    "workload.trace_file",
    "workload.compute_ns_per_byte",
    "workload.read_only",
    "run.seed",
    "run.repetitions",
    "run.output",
];

impl ExperimentConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), SimError> {
        self.set_inner(key.trim(), value.trim())
            .map_err(|e| SimError::Config(format!("{}: {e}", key.trim())))
    }

    fn set_inner(&mut self, key: &str, v: &str) -> Result<(), String> {
        let s = &mut self.system;
        let w = &mut self.workload;
        match key {
            "gpu.sm_count" => s.gpu.sm_count = parse(v)?,
            "gpu.max_threads_per_sm" => s.gpu.max_threads_per_sm = parse(v)?,
            "gpu.threads_per_tb" => s.gpu.threads_per_tb = parse(v)?,
            "gpu.start_jitter_ns" => s.gpu.start_jitter_ns = parse(v)?,
            "gpu.dispatch" => s.gpu.dispatch = v.parse()?,
            "gpufs.page_size" => s.gpufs.page_size = parse_size(v)?,
            "gpufs.cache_bytes" => s.gpufs.cache_bytes = parse_size(v)?,
            "gpufs.policy" => s.gpufs.policy = v.parse()?,
            "gpufs.prefetch_bytes" => s.gpufs.prefetch_bytes = parse_size(v)?,
            "gpufs.lookup_ns" => s.gpufs.lookup_ns = parse(v)?,
            "gpufs.alloc_ns" => s.gpufs.alloc_ns = parse(v)?,
            "gpufs.dealloc_ns" => s.gpufs.dealloc_ns = parse(v)?,
            "gpufs.remap_ns" => s.gpufs.remap_ns = parse(v)?,
            "gpufs.global_contention_ns" => s.gpufs.global_contention_ns = parse(v)?,
            "gpufs.copy_ns_per_byte" => s.gpufs.copy_ns_per_byte = parse(v)?,
            "host.os_page_size" => s.host.os_page_size = parse_size(v)?,
            "host.cache_capacity_bytes" => s.host.cache_capacity_bytes = parse_size(v)?,
            "host.ra_max_bytes" => s.host.ra_max_bytes = parse_size(v)?,
            "host.cpu_copy_ns_per_byte" => s.host.cpu_copy_ns_per_byte = parse(v)?,
            "ssd.base_latency_ns" => s.ssd.base_latency_ns = parse(v)?,
            "ssd.bandwidth_bytes_per_s" => s.ssd.bandwidth_bytes_per_s = parse_rate(v)?,
            "ssd.max_inflight" => s.ssd.max_inflight = parse(v)?,
            "pcie.latency_ns" => s.pcie.latency_ns = parse(v)?,
            "pcie.bandwidth_bytes_per_s" => s.pcie.bandwidth_bytes_per_s = parse_rate(v)?,
            "rpc.n_slots" => s.rpc.n_slots = parse(v)?,
            "rpc.n_workers" => s.rpc.n_workers = parse(v)?,
            "rpc.poll_interval_ns" => s.rpc.poll_interval_ns = parse(v)?,
            "rpc.staging_bytes" => s.rpc.staging_bytes = parse_size(v)?,
            "rpc.async_transfer" => s.rpc.async_transfer = parse_bool(v)?,
            "mode.pcie_disabled" => s.modes.pcie_disabled = parse_bool(v)?,
            "mode.gpu_cache_disabled" => s.modes.gpu_cache_disabled = parse_bool(v)?,
            "mode.ramfs" => s.modes.ramfs = parse_bool(v)?,
            "mode.replay" => self.replay = parse_bool(v)?,
            "workload.kind" => w.kind = v.parse()?,
            "workload.n_tb" => w.n_tb = parse(v)?,
            "workload.file_bytes" => w.file_bytes = parse_size(v)?,
            "workload.total_read_bytes" => w.total_read_bytes = parse_size(v)?,
            "workload.request_bytes" => w.request_bytes = parse_size(v)?,
            "workload.n_requests" => w.n_requests = parse(v)?,
            "workload.benchmark" => w.benchmark = v.to_string(),
            "workload.scale" => w.scale = parse(v)?,
            "workload.trace_file" => w.trace_file = (!v.is_empty()).then(|| PathBuf::from(v)),
            "workload.compute_ns_per_byte" => w.compute_ns_per_byte = parse(v)?,
            "workload.read_only" => w.read_only = parse_bool(v)?,
            "run.seed" => self.seed = parse(v)?,
            "run.repetitions" => self.repetitions = parse(v)?,
            "run.output" => self.output = (!v.is_empty()).then(|| PathBuf::from(v)),
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Current value of `key`, formatted so that `set` reads it back.
    pub fn get(&self, key: &str) -> Option<String> {
        let s = &self.system;
        let w = &self.workload;
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        Some(match key {
            "gpu.sm_count" => s.gpu.sm_count.to_string(),
            "gpu.max_threads_per_sm" => s.gpu.max_threads_per_sm.to_string(),
            "gpu.threads_per_tb" => s.gpu.threads_per_tb.to_string(),
            "gpu.start_jitter_ns" => s.gpu.start_jitter_ns.to_string(),
            "gpu.dispatch" => s.gpu.dispatch.to_string(),
            "gpufs.page_size" => s.gpufs.page_size.to_string(),
            "gpufs.cache_bytes" => s.gpufs.cache_bytes.to_string(),
            "gpufs.policy" => s.gpufs.policy.to_string(),
            "gpufs.prefetch_bytes" => s.gpufs.prefetch_bytes.to_string(),
            "gpufs.lookup_ns" => s.gpufs.lookup_ns.to_string(),
            "gpufs.alloc_ns" => s.gpufs.alloc_ns.to_string(),
            "gpufs.dealloc_ns" => s.gpufs.dealloc_ns.to_string(),
            "gpufs.remap_ns" => s.gpufs.remap_ns.to_string(),
            "gpufs.global_contention_ns" => s.gpufs.global_contention_ns.to_string(),
            "gpufs.copy_ns_per_byte" => s.gpufs.copy_ns_per_byte.to_string(),
            "host.os_page_size" => s.host.os_page_size.to_string(),
            "host.cache_capacity_bytes" => s.host.cache_capacity_bytes.to_string(),
            "host.ra_max_bytes" => s.host.ra_max_bytes.to_string(),
            "host.cpu_copy_ns_per_byte" => s.host.cpu_copy_ns_per_byte.to_string(),
            "ssd.base_latency_ns" => s.ssd.base_latency_ns.to_string(),
            "ssd.bandwidth_bytes_per_s" => s.ssd.bandwidth_bytes_per_s.to_string(),
            "ssd.max_inflight" => s.ssd.max_inflight.to_string(),
            "pcie.latency_ns" => s.pcie.latency_ns.to_string(),
            "pcie.bandwidth_bytes_per_s" => s.pcie.bandwidth_bytes_per_s.to_string(),
            "rpc.n_slots" => s.rpc.n_slots.to_string(),
            "rpc.n_workers" => s.rpc.n_workers.to_string(),
            "rpc.poll_interval_ns" => s.rpc.poll_interval_ns.to_string(),
            "rpc.staging_bytes" => s.rpc.staging_bytes.to_string(),
            "rpc.async_transfer" => s.rpc.async_transfer.to_string(),
            "mode.pcie_disabled" => s.modes.pcie_disabled.to_string(),
            "mode.gpu_cache_disabled" => s.modes.gpu_cache_disabled.to_string(),
            "mode.ramfs" => s.modes.ramfs.to_string(),
            "mode.replay" => self.replay.to_string(),
            "workload.kind" => w.kind.to_string(),
            "workload.n_tb" => w.n_tb.to_string(),
            "workload.file_bytes" => w.file_bytes.to_string(),
            "workload.total_read_bytes" => w.total_read_bytes.to_string(),
            "workload.request_bytes" => w.request_bytes.to_string(),
            "workload.n_requests" => w.n_requests.to_string(),
            "workload.benchmark" => w.benchmark.clone(),
            "workload.scale" => w.scale.to_string(),
            "workload.trace_file" => path(&w.trace_file),
            "workload.compute_ns_per_byte" => w.compute_ns_per_byte.to_string(),
            "workload.read_only" => w.read_only.to_string(),
            "run.seed" => self.seed.to_string(),
            "run.repetitions" => self.repetitions.to_string(),
            "run.output" => path(&self.output),
            _ => return None,
        })
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), SimError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                SimError::Config(format!("line {}: expected 'key = value'", n + 1))
            })?;
            self.set(k, v)
                .map_err(|e| SimError::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<(), SimError> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| SimError::Config(format!("override '{kv}' is not key=value")))?;
        self.set(k, v)
    }

    /// All keys with their values, one `key = value` per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in KEYS {
            writeln!(
                out,
                "{k} = {}",
                self.get(k).expect("every listed key has a value")
            )
            .expect("String write");
        }
        out
    }
}

impl FromStr for ExperimentConfig {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self, SimError> {
        let mut c = ExperimentConfig::default();
        c.apply_text(s)?;
        Ok(c)
    }
}

/// Accepts plain integers and float notation such as `2.8e9`.
fn parse_rate(s: &str) -> Result<u64, String> {
    let t = s.trim();
    if let Ok(v) = t.parse::<u64>() {
        return Ok(v);
    }
    match t.parse::<f64>() {
        Ok(v) if v >= 1.0 && v.is_finite() => Ok(v.round() as u64),
        _ => Err(format!("invalid rate '{t}'")),
    }
}
