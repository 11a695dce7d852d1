//! Discrete-event simulator of a GPU file-system I/O stack: threadblocks
//! issue reads through a GPU page cache, an RPC queue polled by host worker
//! threads, the host OS page cache with ondemand readahead, an NVMe SSD and
//! the PCIe link.

pub mod config;
pub mod devices;
pub mod error;
pub mod experiments;
pub mod gpu_exec;
pub mod gpufs;
pub mod host_os;
pub mod metrics;
pub mod prefetcher;
pub mod rpc;
pub mod sim;
pub mod simcore;
pub mod workloads;

pub use error::{Result, SimError};
