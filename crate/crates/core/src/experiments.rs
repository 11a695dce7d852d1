//! Running configurations, sweeps and the figure presets.

use std::fs;

use rayon::prelude::*;

use crate::config::{ExperimentConfig, WorkloadKind};
use crate::error::SimError;
use crate::metrics::{csv_header, MetricsReport, CSV_COLUMNS};
use crate::sim::{replay, simulate, ReplayReport};
use crate::simcore::SeededRng;
use crate::workloads::{
    gen_random_uniform, gen_sequential_strided, sequential_trace, table1_config, Assignment,
    ReadOp, Trace, WorkloadSpec, TABLE1,
};

const KB: u64 = 1 << 10;
const MB: u64 = 1 << 20;
const GB: u64 = 1 << 30;

/// Offsets of random reads are aligned to this many bytes.
const RANDOM_ALIGN: u64 = 4 * KB;
/// Benchmark file sizes are rounded up to this many bytes.
const TABLE1_ALIGN: u64 = 64 * KB;

fn read_trace(cfg: &ExperimentConfig) -> Result<Trace, SimError> {
    let path = cfg.workload.trace_file.as_ref().ok_or_else(|| {
        SimError::Config("workload.trace_file is required for trace workloads".into())
    })?;
    let text = fs::read_to_string(path)
        .map_err(|e| SimError::Config(format!("cannot read trace {}: {e}", path.display())))?;
    text.parse()
}

fn trace_workload(trace: &Trace, cfg: &ExperimentConfig) -> WorkloadSpec {
    let files = trace.implied_file_sizes();
    let n_tb = trace
        .records
        .iter()
        .map(|r| r.tb as usize + 1)
        .max()
        .unwrap_or(0);
    let mut programs = vec![Vec::new(); n_tb];
    for r in &trace.records {
        programs[r.tb as usize].push(ReadOp {
            file: r.file,
            offset: r.offset,
            size: r.size,
        });
    }
    WorkloadSpec {
        name: "trace".into(),
        total_read: trace.total_bytes(),
        files,
        n_tb,
        threads_per_tb: cfg.system.gpu.threads_per_tb,
        request_size: trace.records.first().map(|r| r.size).unwrap_or(0),
        assignment: Assignment::ExplicitTrace,
        compute_ns_per_byte: cfg.workload.compute_ns_per_byte,
        read_only: cfg.workload.read_only,
        programs,
    }
}

/// Materializes the configured workload. `seed` drives random generators.
pub fn build_workload(cfg: &ExperimentConfig, seed: u64) -> Result<WorkloadSpec, SimError> {
    let w = &cfg.workload;
    let req = if w.request_bytes == 0 {
        cfg.system.gpufs.page_size
    } else {
        w.request_bytes
    };
    let mut spec = match w.kind {
        WorkloadKind::Sequential => {
            gen_sequential_strided(w.n_tb, w.file_bytes, w.total_read_bytes, req)?
        }
        WorkloadKind::Random => {
            // A stream independent of the simulator's own generator.
            let mut rng = SeededRng::new(seed ^ 0x6a09_e667_f3bc_c908);
            gen_random_uniform(
                w.n_tb,
                w.file_bytes,
                w.n_requests,
                req,
                RANDOM_ALIGN,
                &mut rng,
            )?
        }
        WorkloadKind::Table1 => table1_config(&w.benchmark, w.scale, req, TABLE1_ALIGN)?,
        WorkloadKind::Trace => trace_workload(&read_trace(cfg)?, cfg),
        WorkloadKind::Cpu => {
            return Err(SimError::Config(
                "workload.kind = cpu only runs in replay mode".into(),
            ));
        }
    };
    spec.compute_ns_per_byte = w.compute_ns_per_byte;
    spec.read_only = w.read_only;
    spec.threads_per_tb = cfg.system.gpu.threads_per_tb;
    Ok(spec)
}

fn replay_report(seed: u64, rep: &ReplayReport) -> MetricsReport {
    MetricsReport {
        seed,
        end_to_end_ns: rep.end_ns,
        delivered_bytes: rep.bytes_read,
        io_bandwidth_bytes_per_s: rep.bandwidth(),
        rpc_count: rep.preads,
        ssd_bytes: rep.ssd_bytes,
        ssd_requests: rep.ssd_requests,
        host_blocked_ns: rep.blocked_ns,
        pread_bytes: rep.bytes_read,
        worker_spins: vec![0; 0],
        ..MetricsReport::default()
    }
}

/// One repetition with the given seed.
pub fn run_once(cfg: &ExperimentConfig, seed: u64) -> Result<MetricsReport, SimError> {
    let replay_mode = cfg.replay || cfg.workload.kind == WorkloadKind::Cpu;
    if !replay_mode {
        let spec = build_workload(cfg, seed)?;
        return Ok(simulate(&cfg.system, &spec, seed)?.report);
    }
    let (files, trace) = match cfg.workload.kind {
        WorkloadKind::Cpu => {
            let req = if cfg.workload.request_bytes == 0 {
                cfg.system.gpufs.page_size
            } else {
                cfg.workload.request_bytes
            };
            (
                vec![cfg.workload.file_bytes],
                sequential_trace(cfg.workload.total_read_bytes, req),
            )
        }
        WorkloadKind::Trace => {
            let t = read_trace(cfg)?;
            (t.implied_file_sizes(), t)
        }
        _ => {
            let spec = build_workload(cfg, seed)?;
            let recorded = simulate(&cfg.system, &spec, seed)?.trace;
            (spec.files, recorded)
        }
    };
    let rep = replay(&cfg.system, &files, &trace)?;
    Ok(replay_report(seed, &rep))
}

/// `repetitions` runs with seeds `seed, seed + 1, ...`, sorted by seed.
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<MetricsReport>, SimError> {
    if cfg.repetitions == 0 {
        return Err(SimError::Config(
            "run.repetitions must be at least 1".into(),
        ));
    }
    let seeds: Vec<u64> = (0..cfg.repetitions as u64).map(|i| cfg.seed + i).collect();
    seeds.par_iter().map(|&s| run_once(cfg, s)).collect()
}

/// Mean metrics for each value of `param`.
pub fn sweep(
    cfg: &ExperimentConfig,
    param: &str,
    values: &[String],
) -> Result<Vec<(String, MetricsReport)>, SimError> {
    if cfg.get(param).is_none() {
        return Err(SimError::Config(format!("{param}: unknown key")));
    }
    let configs: Vec<(String, ExperimentConfig)> = values
        .iter()
        .map(|v| {
            let mut c = cfg.clone();
            c.set(param, v)?;
            Ok((v.clone(), c))
        })
        .collect::<Result<_, SimError>>()?;
    configs
        .par_iter()
        .map(|(v, c)| Ok((v.clone(), MetricsReport::mean(&run(c)?))))
        .collect()
}

/// One line of a preset: a labelled configuration, optionally swept.
#[derive(Debug, Clone)]
pub struct Variant {
    pub label: String,
    pub config: ExperimentConfig,
    pub sweep: Option<(String, Vec<String>)>,
}

#[derive(Debug, Clone)]
pub struct Preset {
    pub name: String,
    pub description: String,
    pub variants: Vec<Variant>,
}

pub const PRESETS: [&str; 12] = [
    "fig2",
    "fig3",
    "fig4",
    "fig5",
    "fig6",
    "fig8",
    "fig9",
    "fig10",
    "fig10-micro",
    "fig11",
    "fig12",
    "mosaic",
];

fn sizes(list: &[u64]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

fn round_mb(bytes: f64) -> u64 {
    ((bytes / MB as f64).round() as u64).max(1) * MB
}

/// Desk-scale microbenchmark: 120 threadblocks with equal strides of at
/// least `min_stride` bytes.
fn micro(scale: f64, min_stride: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    let stride = round_mb(8.0 * MB as f64 * scale).max(min_stride);
    c.workload.n_tb = 120;
    c.workload.total_read_bytes = stride * 120;
    c.workload.file_bytes = (round_mb(10.0 * GB as f64 * scale)).max(stride * 120);
    c.system.gpufs.cache_bytes = round_mb(2.0 * GB as f64 * scale).max(c.workload.total_read_bytes);
    c
}

/// Microbenchmark reading twice the page cache.
fn big_micro(total_full: f64, cache_full: f64, scale: f64) -> ExperimentConfig {
    let mut c = micro(scale, MB);
    let stride = round_mb(total_full * scale / 120.0);
    c.workload.total_read_bytes = stride * 120;
    c.workload.file_bytes = c.workload.file_bytes.max(stride * 120);
    let ratio = total_full / cache_full;
    c.system.gpufs.cache_bytes = ((stride * 120) as f64 / ratio) as u64 / MB * MB;
    c
}

fn variant(label: &str, config: ExperimentConfig, sweep: Option<(&str, Vec<String>)>) -> Variant {
    Variant {
        label: label.into(),
        config,
        sweep: sweep.map(|(p, v)| (p.to_string(), v)),
    }
}

fn with(mut c: ExperimentConfig, kv: &[(&str, &str)]) -> ExperimentConfig {
    for (k, v) in kv {
        c.set(k, v).expect("preset keys are valid");
    }
    c
}

fn replacement_variants(base: &ExperimentConfig) -> Vec<Variant> {
    vec![
        variant(
            "gpufs-4k",
            with(base.clone(), &[("gpufs.policy", "global-lru-dealloc")]),
            None,
        ),
        variant(
            "prefetcher",
            with(
                base.clone(),
                &[
                    ("gpufs.prefetch_bytes", "60K"),
                    ("gpufs.policy", "global-lru-dealloc"),
                ],
            ),
            None,
        ),
        variant(
            "prefetcher-lra",
            with(
                base.clone(),
                &[
                    ("gpufs.prefetch_bytes", "60K"),
                    ("gpufs.policy", "per-tb-lra"),
                ],
            ),
            None,
        ),
        variant(
            "gpufs-64k",
            with(base.clone(), &[("gpufs.page_size", "64K")]),
            None,
        ),
    ]
}

fn benchmark_variants(
    scale: f64,
    cache: impl Fn(&str) -> u64,
    big: bool,
    compute: f64,
) -> Vec<Variant> {
    let mut out = Vec::new();
    for name in TABLE1 {
        let mut base = ExperimentConfig::default();
        base.workload.kind = WorkloadKind::Table1;
        base.workload.benchmark = name.into();
        base.workload.scale = scale;
        base.workload.request_bytes = round_mb(MB as f64 * scale).max(64 * KB);
        base.workload.compute_ns_per_byte = compute;
        base.system.gpufs.cache_bytes = cache(name);
        let vs = if big {
            replacement_variants(&base)
        } else {
            replacement_variants(&base)
                .into_iter()
                .filter(|v| v.label != "prefetcher-lra")
                .collect()
        };
        out.extend(vs.into_iter().map(|mut v| {
            v.label = format!("{name}/{}", v.label);
            v
        }));
    }
    out
}

/// The figure presets at `scale` (1.0 = the original sizes).
pub fn preset(name: &str, scale: f64) -> Result<Preset, SimError> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(SimError::Config(format!("scale {scale} must be in (0, 1]")));
    }
    let pages_to_1m = sizes(&[4 * KB, 16 * KB, 64 * KB, 256 * KB, MB]);
    let pages_to_4m = sizes(&[4 * KB, 16 * KB, 64 * KB, 128 * KB, 256 * KB, MB, 4 * MB]);
    let (description, variants) = match name {
        "fig2" => (
            "sequential bandwidth versus GPU page size",
            vec![variant(
                "gpufs",
                micro(scale, MB),
                Some(("gpufs.page_size", pages_to_1m)),
            )],
        ),
        "fig3" => {
            let base = micro(scale, 4 * MB);
            let gpu = with(
                base.clone(),
                &[
                    ("mode.pcie_disabled", "true"),
                    ("mode.gpu_cache_disabled", "true"),
                ],
            );
            let cpu = with(base, &[("workload.kind", "cpu")]);
            (
                "GPU-pattern versus single-thread CPU reads, no PCIe transfers",
                vec![
                    variant("gpu", gpu, Some(("gpufs.page_size", pages_to_4m.clone()))),
                    variant("cpu", cpu, Some(("gpufs.page_size", pages_to_4m))),
                ],
            )
        }
        "fig4" => {
            let gpu = with(
                micro(scale, 4 * MB),
                &[
                    ("mode.pcie_disabled", "true"),
                    ("mode.gpu_cache_disabled", "true"),
                ],
            );
            let cpu = with(gpu.clone(), &[("mode.replay", "true")]);
            (
                "GPU run versus CPU replay of the recorded GPU trace, no PCIe transfers",
                vec![
                    variant("gpu", gpu, Some(("gpufs.page_size", pages_to_4m.clone()))),
                    variant("cpu-replay", cpu, Some(("gpufs.page_size", pages_to_4m))),
                ],
            )
        }
        "fig5" => (
            "host worker spins before first service, by request size",
            // The wait before the second wave scales with the per-TB stride,
            // so this one keeps 8MB strides at desk scale.
            vec![variant(
                "gpufs",
                micro(scale, round_mb(80.0 * MB as f64 * scale).max(4 * MB)),
                Some(("gpufs.page_size", pages_to_4m)),
            )],
        ),
        "fig6" => (
            "bandwidth with the file in RAM (no SSD cost), by page size",
            vec![variant(
                "ramfs",
                with(micro(scale, 4 * MB), &[("mode.ramfs", "true")]),
                Some(("gpufs.page_size", pages_to_4m)),
            )],
        ),
        "fig8" => {
            let base = micro(scale, 4 * MB);
            let prefetch = sizes(&[
                0,
                12 * KB,
                60 * KB,
                124 * KB,
                252 * KB,
                MB - 4 * KB,
                4 * MB - 4 * KB,
            ]);
            (
                "readahead prefetcher with 4KB pages versus larger pages",
                vec![
                    variant(
                        "original",
                        base.clone(),
                        Some(("gpufs.page_size", pages_to_4m)),
                    ),
                    variant("prefetcher", base, Some(("gpufs.prefetch_bytes", prefetch))),
                ],
            )
        }
        "fig9" => (
            "benchmarks whose files fit in the page cache",
            benchmark_variants(scale, |_| round_mb(4.0 * GB as f64 * scale), false, 0.0),
        ),
        "fig10" => (
            "4GB read through a 500MB page cache",
            replacement_variants(&big_micro(4.0 * GB as f64, 500.0 * MB as f64, scale)),
        ),
        "fig10-micro" => (
            "microbenchmark reading twice the page cache",
            replacement_variants(&big_micro(4.0 * GB as f64, 2.0 * GB as f64, scale)),
        ),
        "fig11" => (
            "benchmarks whose files exceed the page cache, I/O bandwidth",
            benchmark_variants(scale, |n| big_bench_cache(n, scale), true, 0.0),
        ),
        "fig12" => (
            "benchmarks whose files exceed the page cache, end to end with compute",
            benchmark_variants(scale, |n| big_bench_cache(n, scale), true, 0.25),
        ),
        "mosaic" => {
            let mut base = micro(scale, MB);
            base.workload.kind = WorkloadKind::Random;
            base.workload.file_bytes = round_mb(19.0 * GB as f64 * scale);
            base.workload.request_bytes = 4 * KB;
            base.workload.n_requests = 120 * 100;
            (
                "random 4KB reads with 4KB versus 64KB pages",
                vec![variant(
                    "random",
                    base,
                    Some(("gpufs.page_size", sizes(&[4 * KB, 64 * KB]))),
                )],
            )
        }
        other => return Err(SimError::Config(format!("unknown preset '{other}'"))),
    };
    Ok(Preset {
        name: name.into(),
        description: description.into(),
        variants,
    })
}

fn big_bench_cache(name: &str, scale: f64) -> u64 {
    let full = if name == "3DCONV" { 256 * MB } else { 500 * MB };
    round_mb(full as f64 * scale)
}

/// Runs every variant of a preset and renders one CSV table with columns
/// `variant,param,value` followed by the mean metrics.
pub fn run_preset(
    p: &Preset,
    repetitions: Option<usize>,
    seed: Option<u64>,
) -> Result<String, SimError> {
    let mut jobs: Vec<(String, String, String, ExperimentConfig)> = Vec::new();
    for v in &p.variants {
        let mut base = v.config.clone();
        if let Some(r) = repetitions {
            base.repetitions = r;
        }
        if let Some(s) = seed {
            base.seed = s;
        }
        match &v.sweep {
            None => jobs.push((v.label.clone(), "-".into(), "-".into(), base)),
            Some((param, values)) => {
                for val in values {
                    let mut c = base.clone();
                    c.set(param, val)?;
                    jobs.push((v.label.clone(), param.clone(), val.clone(), c));
                }
            }
        }
    }
    let rows: Vec<String> = jobs
        .par_iter()
        .map(|(label, param, value, c)| {
            let m = MetricsReport::mean(&run(c)?);
            let cells = m.csv_row();
            let metrics = cells.split_once(',').map(|(_, rest)| rest).unwrap_or("");
            Ok(format!("{label},{param},{value},{metrics}"))
        })
        .collect::<Result<_, SimError>>()?;
    let mut out = format!("variant,param,value,{}\n", CSV_COLUMNS[1..].join(","));
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    Ok(out)
}

/// The header a `run` CSV starts with.
pub fn run_header() -> String {
    csv_header()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gpufs::Policy;

    #[test]
    fn every_preset_builds() {
        for name in PRESETS {
            let p = preset(name, 0.1).unwrap();
            assert!(!p.variants.is_empty(), "{name}");
        }
        assert!(preset("fig7", 0.1).is_err());
        assert!(preset("fig2", 0.0).is_err());
    }

    #[test]
    fn desk_scale_sizes() {
        let c = micro(0.1, MB);
        assert_eq!(c.workload.total_read_bytes, 120 * MB);
        let big = big_micro(4.0 * GB as f64, 2.0 * GB as f64, 0.1);
        assert_eq!(
            big.workload.total_read_bytes,
            2 * big.system.gpufs.cache_bytes
        );
        let f10 = preset("fig10", 0.1).unwrap();
        let c = &f10.variants[0].config;
        assert!(c.workload.total_read_bytes >= 7 * c.system.gpufs.cache_bytes);
    }

    #[test]
    fn sweep_of_one_value_is_run() {
        let mut c = micro(0.1, MB);
        c.workload.total_read_bytes = 120 * 64 * KB;
        c.system.gpufs.page_size = 64 * KB;
        c.repetitions = 1;
        let direct = MetricsReport::mean(&run(&c).unwrap());
        let swept = sweep(&c, "gpufs.page_size", &["65536".into()]).unwrap();
        assert_eq!(swept[0].1, direct);
        assert!(sweep(&c, "no.such", &["1".into()]).is_err());
        assert!(sweep(&c, "gpufs.page_size", &["big".into()]).is_err());
    }

    #[test]
    fn policy_names_round_trip() {
        let c = with(
            ExperimentConfig::default(),
            &[("gpufs.policy", "per-tb-lra")],
        );
        assert_eq!(c.system.gpufs.policy, Policy::PerTbLra);
    }
}
