//! Per-run metrics and their CSV rendering.

use std::fmt::Write as _;

use crate::simcore::SimTime;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub seed: u64,
    pub end_to_end_ns: SimTime,
    pub delivered_bytes: u64,
    pub io_bandwidth_bytes_per_s: f64,
    pub rpc_count: u64,
    pub pcie_bytes: u64,
    pub pcie_transfers: u64,
    pub ssd_bytes: u64,
    pub ssd_requests: u64,
    pub gpu_hits: u64,
    pub gpu_misses: u64,
    pub pb_hits: u64,
    pub evictions: u64,
    pub remaps: u64,
    pub prefetch_waste_bytes: u64,
    pub tag_mismatches: u64,
    pub host_blocked_ns: SimTime,
    pub ra_windows: u64,
    pub ra_window_max: u64,
    pub worker_spins: Vec<u64>,
    pub worker_first_service_ns: Vec<Option<SimTime>>,
    pub worker_first_service_spins: Vec<Option<u64>>,
    pub events: u64,
    /// Bytes delivered from GPU page-cache hits.
    pub hit_bytes: u64,
    pub pread_bytes: u64,
    /// Distinct file bytes the host was asked for.
    pub touched_bytes: u64,
}

pub const CSV_COLUMNS: [&str; 24] = [
    "seed",
    "end_to_end_ns",
    "delivered_bytes",
    "io_bandwidth_bytes_per_s",
    "rpc_count",
    "pcie_bytes",
    "pcie_transfers",
    "ssd_bytes",
    "ssd_requests",
    "gpu_hits",
    "gpu_misses",
    "pb_hits",
    "evictions",
    "remaps",
    "prefetch_waste_bytes",
    "tag_mismatches",
    "host_blocked_ns",
    "ra_windows",
    "ra_window_max",
    "hit_bytes",
    "events",
    "worker_spins",
    "worker_first_service_ns",
    "worker_first_service_spins",
];

pub fn csv_header() -> String {
    CSV_COLUMNS.join(",")
}

fn join<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(";")
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_else(|| "-".into())
}

impl MetricsReport {
    /// The metric columns after `seed`.
    fn metric_cells(&self) -> String {
        let mut s = String::new();
        write!(
            s,
            "{},{},{:.3},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.end_to_end_ns,
            self.delivered_bytes,
            self.io_bandwidth_bytes_per_s,
            self.rpc_count,
            self.pcie_bytes,
            self.pcie_transfers,
            self.ssd_bytes,
            self.ssd_requests,
            self.gpu_hits,
            self.gpu_misses,
            self.pb_hits,
            self.evictions,
            self.remaps,
            self.prefetch_waste_bytes,
            self.tag_mismatches,
            self.host_blocked_ns,
            self.ra_windows,
            self.ra_window_max,
            self.hit_bytes,
            self.events,
            join(&self.worker_spins, u64::to_string),
            join(&self.worker_first_service_ns, opt),
            join(&self.worker_first_service_spins, opt),
        )
        .expect("writing to a String cannot fail");
        s
    }

    pub fn csv_row(&self) -> String {
        format!("{},{}", self.seed, self.metric_cells())
    }

    /// Field-wise arithmetic mean. Integer fields are rounded to nearest;
    /// per-worker first-service values average over the runs that have one.
    pub fn mean(runs: &[MetricsReport]) -> MetricsReport {
        let n = runs.len();
        if n == 0 {
            return MetricsReport::default();
        }
        let mut sorted: Vec<&MetricsReport> = runs.iter().collect();
        sorted.sort_by_key(|r| r.seed);
        let avg = |f: &dyn Fn(&MetricsReport) -> u64| -> u64 {
            let sum: u128 = sorted.iter().map(|r| f(r) as u128).sum();
            ((sum + n as u128 / 2) / n as u128) as u64
        };
        let workers = sorted
            .iter()
            .map(|r| r.worker_spins.len())
            .max()
            .unwrap_or(0);
        let avg_opt =
            |get: &dyn Fn(&MetricsReport, usize) -> Option<u64>, w: usize| -> Option<u64> {
                let vals: Vec<u64> = sorted.iter().filter_map(|r| get(r, w)).collect();
                if vals.is_empty() {
                    None
                } else {
                    let sum: u128 = vals.iter().map(|&v| v as u128).sum();
                    Some(((sum + vals.len() as u128 / 2) / vals.len() as u128) as u64)
                }
            };
        MetricsReport {
            seed: sorted[0].seed,
            end_to_end_ns: avg(&|r| r.end_to_end_ns),
            delivered_bytes: avg(&|r| r.delivered_bytes),
            io_bandwidth_bytes_per_s: sorted
                .iter()
                .map(|r| r.io_bandwidth_bytes_per_s)
                .sum::<f64>()
                / n as f64,
            rpc_count: avg(&|r| r.rpc_count),
            pcie_bytes: avg(&|r| r.pcie_bytes),
            pcie_transfers: avg(&|r| r.pcie_transfers),
            ssd_bytes: avg(&|r| r.ssd_bytes),
            ssd_requests: avg(&|r| r.ssd_requests),
            gpu_hits: avg(&|r| r.gpu_hits),
            gpu_misses: avg(&|r| r.gpu_misses),
            pb_hits: avg(&|r| r.pb_hits),
            evictions: avg(&|r| r.evictions),
            remaps: avg(&|r| r.remaps),
            prefetch_waste_bytes: avg(&|r| r.prefetch_waste_bytes),
            tag_mismatches: avg(&|r| r.tag_mismatches),
            host_blocked_ns: avg(&|r| r.host_blocked_ns),
            ra_windows: avg(&|r| r.ra_windows),
            ra_window_max: avg(&|r| r.ra_window_max),
            worker_spins: (0..workers)
                .map(|w| avg(&|r| r.worker_spins.get(w).copied().unwrap_or(0)))
                .collect(),
            worker_first_service_ns: (0..workers)
                .map(|w| {
                    avg_opt(
                        &|r, w| r.worker_first_service_ns.get(w).copied().flatten(),
                        w,
                    )
                })
                .collect(),
            worker_first_service_spins: (0..workers)
                .map(|w| {
                    avg_opt(
                        &|r, w| r.worker_first_service_spins.get(w).copied().flatten(),
                        w,
                    )
                })
                .collect(),
            events: avg(&|r| r.events),
            hit_bytes: avg(&|r| r.hit_bytes),
            pread_bytes: avg(&|r| r.pread_bytes),
            touched_bytes: avg(&|r| r.touched_bytes),
        }
    }
}

/// Per-run rows followed by a `mean` row.
pub fn runs_csv(runs: &[MetricsReport]) -> String {
    let mut sorted = runs.to_vec();
    sorted.sort_by_key(|r| r.seed);
    let mut out = csv_header();
    out.push('\n');
    for r in &sorted {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    if !sorted.is_empty() {
        out.push_str("mean,");
        out.push_str(&MetricsReport::mean(&sorted).metric_cells());
        out.push('\n');
    }
    out
}

/// One mean row per swept value, keyed by `param`.
pub fn sweep_csv(param: &str, rows: &[(String, MetricsReport)]) -> String {
    let mut out = format!("param,value,{}\n", CSV_COLUMNS[1..].join(","));
    for (value, m) in rows {
        writeln!(out, "{param},{value},{}", m.metric_cells()).expect("String write");
    }
    out
}
