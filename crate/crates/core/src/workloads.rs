//! Workload generators and I/O traces.

use std::fmt;
use std::str::FromStr;

use crate::error::SimError;
use crate::host_os::FileId;
use crate::rpc::TbId;
use crate::simcore::SeededRng;

/// One gread call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ReadOp {
    pub file: FileId,
    pub offset: u64,
    pub size: u64,
}

/// Synthetic content of a page: every byte of `(file, page)` carries this tag.
pub fn page_tag(file: FileId, page: u64) -> u64 {
    let mut z = ((file as u64) << 48 ^ page).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assignment {
    ContiguousStrides,
    ExplicitTrace,
    RandomUniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    pub name: String,
    pub files: Vec<u64>,
    pub n_tb: usize,
    pub threads_per_tb: u32,
    pub request_size: u64,
    pub assignment: Assignment,
    pub total_read: u64,
    pub compute_ns_per_byte: f64,
    pub read_only: bool,
    /// The greads of each threadblock, in program order.
    pub programs: Vec<Vec<ReadOp>>,
}

impl WorkloadSpec {
    pub fn total_requested(&self) -> u64 {
        self.programs.iter().flatten().map(|o| o.size).sum()
    }
}

/// Splits `[0, len)` of one file into `n_tb` contiguous strides of `request`
/// sized reads; the last read of a stride is short if it does not divide.
fn stride_program(file: FileId, start: u64, len: u64, request: u64) -> Vec<ReadOp> {
    let mut ops = Vec::with_capacity(len.div_ceil(request) as usize);
    let mut off = start;
    let end = start + len;
    while off < end {
        let size = request.min(end - off);
        ops.push(ReadOp {
            file,
            offset: off,
            size,
        });
        off += size;
    }
    ops
}

/// TB `i` reads `[i * stride, (i + 1) * stride)` of file 0 with
/// `request_size` greads, where `stride = total_read / n_tb`.
pub fn gen_sequential_strided(
    n_tb: usize,
    file_size: u64,
    total_read: u64,
    request_size: u64,
) -> Result<WorkloadSpec, SimError> {
    if n_tb == 0 || request_size == 0 {
        return Err(SimError::Workload(
            "need at least one threadblock and a nonzero request size".into(),
        ));
    }
    if total_read > file_size {
        return Err(SimError::Workload(format!(
            "total read {total_read} exceeds file size {file_size}"
        )));
    }
    if !total_read.is_multiple_of(n_tb as u64) {
        return Err(SimError::Workload(format!(
            "total read {total_read} is not divisible by {n_tb} threadblocks"
        )));
    }
    let stride = total_read / n_tb as u64;
    if request_size > stride {
        return Err(SimError::Workload(format!(
            "request size {request_size} exceeds the per-threadblock stride {stride}"
        )));
    }
    let programs = (0..n_tb as u64)
        .map(|i| stride_program(0, i * stride, stride, request_size))
        .collect();
    Ok(WorkloadSpec {
        name: "sequential".into(),
        files: vec![file_size],
        n_tb,
        threads_per_tb: 512,
        request_size,
        assignment: Assignment::ContiguousStrides,
        total_read,
        compute_ns_per_byte: 0.0,
        read_only: true,
        programs,
    })
}

/// Each TB reads `n_requests / n_tb` blocks at uniform `align`-aligned offsets.
pub fn gen_random_uniform(
    n_tb: usize,
    file_size: u64,
    n_requests: usize,
    request_size: u64,
    align: u64,
    rng: &mut SeededRng,
) -> Result<WorkloadSpec, SimError> {
    if request_size == 0 || request_size > file_size {
        return Err(SimError::Workload(format!(
            "request size {request_size} must be in 1..={file_size}"
        )));
    }
    if n_tb == 0 || align == 0 {
        return Err(SimError::Workload(
            "need threadblocks and a nonzero alignment".into(),
        ));
    }
    let slots = (file_size - request_size) / align + 1;
    let per_tb = n_requests / n_tb;
    let programs: Vec<Vec<ReadOp>> = (0..n_tb)
        .map(|_| {
            (0..per_tb)
                .map(|_| ReadOp {
                    file: 0,
                    offset: rng.below(slots) * align,
                    size: request_size,
                })
                .collect()
        })
        .collect();
    Ok(WorkloadSpec {
        name: "random".into(),
        files: vec![file_size],
        n_tb,
        threads_per_tb: 512,
        request_size,
        assignment: Assignment::RandomUniform,
        total_read: (per_tb * n_tb) as u64 * request_size,
        compute_ns_per_byte: 0.0,
        read_only: true,
        programs,
    })
}

pub const TABLE1: [&str; 14] = [
    "HOTSPOT",
    "LUD",
    "BACKPROP",
    "BFS",
    "DWT2D",
    "NW",
    "PATHFINDER",
    "STENCIL",
    "2DCONV",
    "3DCONV",
    "GESUMMV",
    "MVT",
    "BICG",
    "ATAX",
];

const MB: u64 = 1 << 20;
const GB: u64 = 1 << 30;
const ALMOST_GB: u64 = 1000 * MB;

fn table1_files(name: &str) -> Option<(Vec<u64>, usize)> {
    Some(match name {
        "HOTSPOT" => (vec![GB, GB], 128),
        "LUD" => (vec![256 * MB], 128),
        "BACKPROP" => (vec![3 * GB + GB / 4], 128),
        "BFS" => (vec![GB + GB / 10], 128),
        "DWT2D" => (vec![768 * MB], 128),
        "NW" => (vec![ALMOST_GB, ALMOST_GB], 100),
        "PATHFINDER" => (vec![MB, 952 * MB], 100),
        "STENCIL" | "2DCONV" => (vec![GB], 128),
        "3DCONV" => (vec![512 * MB], 128),
        "GESUMMV" | "MVT" | "BICG" | "ATAX" => (vec![ALMOST_GB], 128),
        _ => return None,
    })
}

/// A benchmark-shaped workload: every file is read once, split into
/// contiguous per-TB strides. File sizes are multiplied by `scale` and
/// rounded up to `align` bytes.
pub fn table1_config(
    name: &str,
    scale: f64,
    request_size: u64,
    align: u64,
) -> Result<WorkloadSpec, SimError> {
    let upper = name.to_ascii_uppercase();
    let (files, n_tb) = table1_files(&upper)
        .ok_or_else(|| SimError::Workload(format!("unknown benchmark '{name}'")))?;
    if scale.is_nan() || scale <= 0.0 || align == 0 || request_size == 0 {
        return Err(SimError::Workload(
            "scale, alignment and request size must be positive".into(),
        ));
    }
    let files: Vec<u64> = files
        .iter()
        .map(|&s| ((s as f64 * scale) as u64).div_ceil(align).max(1) * align)
        .collect();
    let mut programs = vec![Vec::new(); n_tb];
    for (fid, &size) in files.iter().enumerate() {
        let stride = size.div_ceil(n_tb as u64).div_ceil(align) * align;
        for (tb, prog) in programs.iter_mut().enumerate() {
            let start = tb as u64 * stride;
            if start >= size {
                continue;
            }
            let len = stride.min(size - start);
            prog.extend(stride_program(fid as FileId, start, len, request_size));
        }
    }
    Ok(WorkloadSpec {
        name: upper,
        total_read: files.iter().sum(),
        files,
        n_tb,
        threads_per_tb: 512,
        request_size,
        assignment: Assignment::ContiguousStrides,
        compute_ns_per_byte: 0.0,
        read_only: true,
        programs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRecord {
    pub tb: TbId,
    pub file: FileId,
    pub offset: u64,
    pub size: u64,
}

/// Time-ordered list of host-serviced requests.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn record(&mut self, r: TraceRecord) {
        self.records.push(r);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn total_bytes(&self) -> u64 {
        self.records.iter().map(|r| r.size).sum()
    }

    /// Checks every record against the file sizes.
    pub fn validate(&self, files: &[u64]) -> Result<(), SimError> {
        for (i, r) in self.records.iter().enumerate() {
            let size = files
                .get(r.file as usize)
                .ok_or_else(|| SimError::Trace(format!("record {i}: unknown file {}", r.file)))?;
            if r.size == 0 || r.offset >= *size {
                return Err(SimError::Trace(format!(
                    "record {i}: offset {} size {} outside file of {size} bytes",
                    r.offset, r.size
                )));
            }
        }
        Ok(())
    }

    /// Smallest file sizes that contain every record.
    pub fn implied_file_sizes(&self) -> Vec<u64> {
        let mut sizes = Vec::new();
        for r in &self.records {
            let f = r.file as usize;
            if sizes.len() <= f {
                sizes.resize(f + 1, 0);
            }
            sizes[f] = sizes[f].max(r.offset + r.size);
        }
        sizes
    }
}

impl FromStr for Trace {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self, SimError> {
        let mut records = Vec::new();
        for (n, line) in s.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = || {
                SimError::Trace(format!(
                    "line {}: expected 'tb file offset size', got '{line}'",
                    n + 1
                ))
            };
            if fields.len() != 4 {
                return Err(bad());
            }
            let num = |i: usize| fields[i].parse::<u64>().map_err(|_| bad());
            records.push(TraceRecord {
                tb: TbId::try_from(num(0)?).map_err(|_| bad())?,
                file: FileId::try_from(num(1)?).map_err(|_| bad())?,
                offset: num(2)?,
                size: num(3)?,
            });
        }
        Ok(Trace { records })
    }
}

impl fmt::Display for Trace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# tb file offset size")?;
        for r in &self.records {
            writeln!(f, "{} {} {} {}", r.tb, r.file, r.offset, r.size)?;
        }
        Ok(())
    }
}

/// `n_streams` contiguous regions of `stream_bytes` each, read round-robin
/// one `request` at a time, stream `s` issued as threadblock `s`.
pub fn interleaved_trace(n_streams: u32, stream_bytes: u64, request: u64) -> Trace {
    let per = stream_bytes / request;
    let mut t = Trace::default();
    for i in 0..per {
        for s in 0..n_streams {
            t.record(TraceRecord {
                tb: s,
                file: 0,
                offset: s as u64 * stream_bytes + i * request,
                size: request,
            });
        }
    }
    t
}

/// One stream reading `[0, total)` back to back.
pub fn sequential_trace(total: u64, request: u64) -> Trace {
    Trace {
        records: (0..total / request)
            .map(|i| TraceRecord {
                tb: 0,
                file: 0,
                offset: i * request,
                size: request,
            })
            .collect(),
    }
}

/// The same bytes a strided GPU run requests, in the order one CPU thread
/// per stride would issue them one stride after another.
pub fn cpu_pattern_trace(spec: &WorkloadSpec) -> Trace {
    let mut t = Trace::default();
    for (tb, prog) in spec.programs.iter().enumerate() {
        for op in prog {
            t.record(TraceRecord {
                tb: tb as TbId,
                file: op.file,
                offset: op.offset,
                size: op.size,
            });
        }
    }
    t
}
