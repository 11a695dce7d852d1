//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Every tolerance is a named constant below.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use common::*;
use gpufs_sim::config::ExperimentConfig;
use gpufs_sim::devices::{SsdConfig, SsdModel};
use gpufs_sim::experiments::{preset, run_once, run_preset, PRESETS};
use gpufs_sim::gpufs::Policy;
use gpufs_sim::host_os::{HostConfig, HostOs};
use gpufs_sim::metrics::MetricsReport;
use gpufs_sim::sim::{replay, simulate, Simulation, SystemConfig};
use gpufs_sim::workloads::{gen_sequential_strided, interleaved_trace, sequential_trace};

/// Desk scale: sizes are 1/10 of the original experiments.
const SCALE: f64 = 0.1;
/// Smaller scale for the determinism check, which runs every preset twice.
const DETERMINISM_SCALE: f64 = 0.02;
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

const SPIN_RATIO_MIN: f64 = 10.0;
const PREFETCH_SPEEDUP_MIN: f64 = 2.0;
const PREFETCH_VS_64K_MIN: f64 = 0.8;
const REPLACEMENT_SPEEDUP_MIN: f64 = 4.0;
const PB_HITS_PER_RPC: u64 = 15;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gbps(r: &MetricsReport) -> f64 {
    r.io_bandwidth_bytes_per_s / 1e9
}

fn variant(preset_name: &str, label: &str) -> ExperimentConfig {
    preset(preset_name, SCALE)
        .unwrap()
        .variants
        .into_iter()
        .find(|v| v.label == label)
        .unwrap_or_else(|| panic!("{preset_name} has no variant {label}"))
        .config
}

fn with(mut c: ExperimentConfig, kv: &[(&str, &str)]) -> ExperimentConfig {
    for (k, v) in kv {
        c.set(k, v).unwrap();
    }
    c
}

fn mean_over_seeds(c: &ExperimentConfig) -> MetricsReport {
    let runs: Vec<MetricsReport> = SEEDS.iter().map(|&s| run_once(c, s).unwrap()).collect();
    MetricsReport::mean(&runs)
}

fn window_law() -> Outcome {
    let host = || {
        HostOs::new(
            HostConfig::default(),
            vec![1 << 30],
            SsdModel::new(SsdConfig::default()),
        )
    };
    let mut h = host();
    let cold = h.os_pread(0, 0, 4 * KB, 0);
    let mut h2 = host();
    let mut t = 0;
    for i in 0..256 {
        t = h2.os_pread(0, i * 4 * KB, 4 * KB, t).completion;
    }
    let windows_kb: Vec<u64> = h2.window_history.iter().map(|w| w * 4).collect();
    let ok = cold.ssd_bytes == 16 * KB
        && windows_kb.len() > 4
        && windows_kb[..4] == [16, 32, 64, 128]
        && windows_kb[4..].iter().all(|&w| w == 128);
    check(
        ok,
        format!(
            "cold read fetched {}KB; windows {:?}.. ({} total)",
            cold.ssd_bytes / KB,
            &windows_kb[..windows_kb.len().min(6)],
            windows_kb.len()
        ),
    )
}

fn spin_ratio(r: &MetricsReport) -> f64 {
    let s = &r.worker_first_service_spins;
    let low = s[0].unwrap_or(0).max(s[1].unwrap_or(0)).max(1) as f64;
    let high = s[2].unwrap_or(u64::MAX).min(s[3].unwrap_or(u64::MAX)) as f64;
    high / low
}

fn load_imbalance() -> Outcome {
    let base = variant("fig5", "gpufs");
    let mut notes = Vec::new();
    let mut ok = true;
    for &seed in &SEEDS {
        let large: Vec<f64> = ["128K", "256K", "1M", "4M"]
            .iter()
            .map(|p| {
                spin_ratio(&run_once(&with(base.clone(), &[("gpufs.page_size", p)]), seed).unwrap())
            })
            .collect();
        let small = spin_ratio(
            &run_once(&with(base.clone(), &[("gpufs.page_size", "64K")]), seed).unwrap(),
        );
        let min_large = large.iter().copied().fold(f64::INFINITY, f64::min);
        ok &= min_large >= SPIN_RATIO_MIN && small < min_large;
        notes.push(format!(
            "seed {seed}: 64K {small:.0}x, >=128K min {min_large:.0}x"
        ));
    }
    check(
        ok,
        format!(
            "workers 2,3 vs 0,1 first-service spins >= {SPIN_RATIO_MIN}x: {}",
            notes.join("; ")
        ),
    )
}

fn prefetch_speedup() -> Outcome {
    let base = variant("fig8", "original");
    let none = mean_over_seeds(&with(
        base.clone(),
        &[("gpufs.page_size", "4K"), ("gpufs.prefetch_bytes", "0")],
    ));
    let pf = mean_over_seeds(&with(
        base.clone(),
        &[("gpufs.page_size", "4K"), ("gpufs.prefetch_bytes", "60K")],
    ));
    let big = mean_over_seeds(&with(
        base,
        &[("gpufs.page_size", "64K"), ("gpufs.prefetch_bytes", "0")],
    ));
    let speedup = gbps(&pf) / gbps(&none);
    let vs64 = gbps(&pf) / gbps(&big);
    check(
        speedup >= PREFETCH_SPEEDUP_MIN && vs64 >= PREFETCH_VS_64K_MIN,
        format!(
            "4K {:.2} GB/s, 4K+60K {:.2} GB/s ({speedup:.2}x, need {PREFETCH_SPEEDUP_MIN}), 64K {:.2} GB/s ({vs64:.2} of it, need {PREFETCH_VS_64K_MIN})",
            gbps(&none),
            gbps(&pf),
            gbps(&big)
        ),
    )
}

fn page_size_shape() -> Outcome {
    let base = variant("fig2", "gpufs");
    let pages = ["4K", "16K", "64K", "256K", "1M"];
    let bw: Vec<f64> = pages
        .iter()
        .map(|p| {
            gbps(&mean_over_seeds(&with(
                base.clone(),
                &[("gpufs.page_size", p)],
            )))
        })
        .collect();
    let peak = bw
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    let shown: Vec<String> = pages
        .iter()
        .zip(&bw)
        .map(|(p, b)| format!("{p}:{b:.2}"))
        .collect();
    check(
        unimodal(&bw) && peak != 0,
        format!("GB/s {} peak at {}", shown.join(" "), pages[peak]),
    )
}

fn replacement_ordering() -> Outcome {
    let get = |label| mean_over_seeds(&variant("fig10-micro", label));
    let c = variant("fig10-micro", "gpufs-4k");
    let base = get("gpufs-4k");
    let pf = get("prefetcher");
    let lra = get("prefetcher-lra");
    let ratio = gbps(&lra) / gbps(&base);
    check(
        gbps(&lra) > gbps(&pf) && gbps(&pf) > gbps(&base) && ratio >= REPLACEMENT_SPEEDUP_MIN,
        format!(
            "read {}MB through {}MB: lra+pf {:.2} > pf {:.2} > base {:.2} GB/s, {ratio:.2}x (need {REPLACEMENT_SPEEDUP_MIN})",
            c.workload.total_read_bytes / MB,
            c.system.gpufs.cache_bytes / MB,
            gbps(&lra),
            gbps(&pf),
            gbps(&base)
        ),
    )
}

fn rpc_fraction() -> Outcome {
    let mut cfg = SystemConfig::default();
    cfg.gpufs.prefetch_bytes = 60 * KB;
    cfg.gpufs.cache_bytes = 256 * MB;
    let mut notes = Vec::new();
    let mut ok = true;
    // An aligned stride and one that ends mid-span.
    for stride in [MB, MB + 20 * KB] {
        let spec = gen_sequential_strided(120, 200 * MB, 120 * stride, 4 * KB).unwrap();
        let out = simulate(&cfg, &spec, 1).unwrap();
        let want_rpcs = stride.div_ceil(64 * KB);
        let stride_pages = stride / (4 * KB);
        for tb in 0..120 {
            let rpcs = out.rpcs_per_tb[tb];
            let hits = out.pb_hits_per_tb[tb];
            ok &= rpcs == want_rpcs
                && hits == stride_pages - rpcs
                && (PB_HITS_PER_RPC * rpcs).abs_diff(hits) < PB_HITS_PER_RPC;
        }
        notes.push(format!(
            "stride {}KB: {} RPCs/TB (ceil {want_rpcs}), {} pb hits/TB",
            stride / KB,
            out.rpcs_per_tb[0],
            out.pb_hits_per_tb[0]
        ));
    }
    check(ok, notes.join("; "))
}

fn conservation() -> Outcome {
    let mut configs: Vec<(String, ExperimentConfig)> = Vec::new();
    for p in ["4K", "64K", "1M"] {
        configs.push((
            format!("fig2 {p}"),
            with(variant("fig2", "gpufs"), &[("gpufs.page_size", p)]),
        ));
    }
    for pf in ["12K", "60K", "252K"] {
        configs.push((
            format!("prefetch {pf}"),
            with(variant("fig8", "original"), &[("gpufs.prefetch_bytes", pf)]),
        ));
    }
    for v in ["gpufs-4k", "prefetcher", "prefetcher-lra", "gpufs-64k"] {
        configs.push((format!("fig10-micro {v}"), variant("fig10-micro", v)));
    }
    configs.push(("mosaic 4K".into(), variant("mosaic", "random")));
    configs.push((
        "ramfs".into(),
        with(variant("fig6", "ramfs"), &[("gpufs.page_size", "64K")]),
    ));
    configs.push((
        "async transfers".into(),
        with(variant("fig2", "gpufs"), &[("rpc.async_transfer", "true")]),
    ));
    configs.push((
        "HOTSPOT lra".into(),
        variant("fig11", "HOTSPOT/prefetcher-lra"),
    ));
    configs.push(("NW 64k".into(), variant("fig11", "NW/gpufs-64k")));
    let mut bad = Vec::new();
    let mut reuse_runs = 0;
    for (name, c) in &configs {
        let r = run_once(c, 1).unwrap();
        // GPU-cache hits are delivered without crossing PCIe again.
        let pcie_ok = if r.hit_bytes == 0 {
            r.pcie_bytes >= r.delivered_bytes
        } else {
            reuse_runs += 1;
            r.pcie_bytes + r.hit_bytes >= r.delivered_bytes
        };
        if !pcie_ok || r.ssd_bytes < r.touched_bytes || r.tag_mismatches != 0 {
            bad.push(format!(
                "{name}: pcie {} delivered {} ssd {} touched {} tags {}",
                r.pcie_bytes, r.delivered_bytes, r.ssd_bytes, r.touched_bytes, r.tag_mismatches
            ));
        }
    }
    check(
        bad.is_empty(),
        if bad.is_empty() {
            format!(
                "pcie >= delivered ({} runs with GPU-cache reuse: pcie + hits >= delivered), ssd >= touched, 0 tag mismatches over {} runs",
                reuse_runs,
                configs.len()
            )
        } else {
            bad.join("; ")
        },
    )
}

fn oracle_equivalence() -> Outcome {
    let logged = |cfg: SystemConfig, spec: &gpufs_sim::workloads::WorkloadSpec| {
        let out = Simulation::new(cfg, spec, 3)
            .unwrap()
            .record_events(true)
            .run()
            .unwrap();
        let mut logs = sim_logs(&out.events, spec.n_tb, 4 * KB);
        for (tb, l) in logs.iter_mut().enumerate() {
            l.pb_hits = out.pb_hits_per_tb[tb];
        }
        logs
    };
    let mut ok = true;
    // 2 TBs, 8-page cache (4 frames each), 32-page file, 3-page prefetch.
    let spec = gen_sequential_strided(2, 32 * 4 * KB, 32 * 4 * KB, 4 * KB).unwrap();
    let logs = logged(tiny_system(2, 8, 3, Policy::PerTbLra), &spec);
    let mut rpcs = 0;
    let mut victims = 0;
    for tb in 0..2u64 {
        let pages: Vec<u64> = (tb * 16..tb * 16 + 16).collect();
        let want = oracle_tb(&pages, 4, 3, 32);
        ok &= logs[tb as usize] == want;
        rpcs += want.rpcs.len();
        victims += want.victims.len();
    }
    // One TB with re-reads under both policies.
    let pages: Vec<u64> = (0..32).chain(0..8).chain([31, 30, 3, 3, 17]).collect();
    let single = page_program(32, &pages);
    let want = oracle_tb(&pages, 8, 3, 32);
    for policy in [Policy::PerTbLra, Policy::GlobalLruDealloc] {
        ok &= logged(tiny_system(1, 8, 3, policy), &single)[0] == want;
    }
    check(
        ok,
        format!(
            "2-TB LRA: {rpcs} RPCs, {victims} victims; 1-TB re-read: {} RPCs, {} victims, both policies",
            want.rpcs.len(),
            want.victims.len()
        ),
    )
}

fn determinism() -> Outcome {
    let mut differing = Vec::new();
    for name in PRESETS {
        let p = preset(name, DETERMINISM_SCALE).unwrap();
        let a = run_preset(&p, Some(2), Some(11)).unwrap();
        let b = run_preset(&p, Some(2), Some(11)).unwrap();
        if a != b {
            differing.push(name);
        }
    }
    check(
        differing.is_empty(),
        if differing.is_empty() {
            format!(
                "{} presets at scale {DETERMINISM_SCALE} produced identical CSV twice",
                PRESETS.len()
            )
        } else {
            format!("differing: {}", differing.join(", "))
        },
    )
}

fn interleaving() -> Outcome {
    let cfg = SystemConfig::default();
    let stream = 2 * MB;
    let inter = replay(&cfg, &[4 * stream], &interleaved_trace(4, stream, 4 * KB)).unwrap();
    let seq = replay(&cfg, &[4 * stream], &sequential_trace(4 * stream, 4 * KB)).unwrap();
    check(
        inter.bytes_read == seq.bytes_read && inter.blocked_ns < seq.blocked_ns,
        format!(
            "blocked: 4 interleaved streams {}us vs 1 stream {}us over {}MB",
            inter.blocked_ns / 1000,
            seq.blocked_ns / 1000,
            seq.bytes_read / MB
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("readahead window law", window_law),
        ("RPC worker load imbalance", load_imbalance),
        ("prefetcher speedup", prefetch_speedup),
        ("page-size sweep is unimodal", page_size_shape),
        ("large-file replacement ordering", replacement_ordering),
        ("RPC fraction law", rpc_fraction),
        ("byte conservation and content tags", conservation),
        ("straight-line oracle equivalence", oracle_equivalence),
        ("deterministic CSV", determinism),
        ("interleaving lowers blocked time", interleaving),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {tag} {name} ({secs:.1}s): {detail}", i + 1);
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
