//! Traffic-matrix generation and trace replay.
//!
//! All generators are pure functions of `(spec, seed)`: two calls with the
//! same inputs produce byte-identical matrices. Volumes are exact integer
//! bytes; fractional shares are floored and the remainder goes to the first
//! destination in iteration order so that per-sender totals are conserved
//! exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path as FsPath, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Scalar;
use crate::topology::GpuId;
use crate::Bytes;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("need at least 2 domains, got {0}")]
    TooFewDomains(usize),
    #[error("sparsity must lie in [0, 1), got {0}")]
    BadSparsity(f64),
    #[error("zipf exponent must be positive, got {0}")]
    BadExponent(f64),
    #[error("top-k fan-out must be at least 1")]
    BadTopK,
    #[error("total bytes per sender must be positive")]
    ZeroVolume,
    #[error("only {available} active destination domains available for sender domain {sender}, need {k}")]
    TooFewActiveDomains {
        sender: usize,
        available: usize,
        k: usize,
    },
    #[error("trace family requires a trace_path")]
    MissingTracePath,
    #[error("trace {0}: {1}")]
    TraceIo(PathBuf, std::io::Error),
    #[error("trace line {line}: {msg}")]
    TraceParse { line: usize, msg: String },
    #[error("trace is empty")]
    EmptyTrace,
}

/// GPU-to-GPU traffic matrix, indexed by source GPU `(d, g)` and destination
/// GPU `(f, h)`. Intra-domain entries are permitted but excluded from the
/// inter-domain aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct GpuTrafficMatrix<T = Bytes> {
    m: usize,
    n: usize,
    entries: Vec<T>,
}

impl<T: Scalar> GpuTrafficMatrix<T> {
    pub fn zeros(m: usize, n: usize) -> Self {
        GpuTrafficMatrix {
            m,
            n,
            entries: vec![T::zero(); (m * n) * (m * n)],
        }
    }

    pub fn domains(&self) -> usize {
        self.m
    }

    pub fn rails(&self) -> usize {
        self.n
    }

    fn idx(&self, src: GpuId, dst: GpuId) -> usize {
        (src.domain * self.n + src.gpu) * (self.m * self.n) + dst.domain * self.n + dst.gpu
    }

    pub fn get(&self, src: GpuId, dst: GpuId) -> T {
        self.entries[self.idx(src, dst)]
    }

    pub fn set(&mut self, src: GpuId, dst: GpuId, v: T) {
        let i = self.idx(src, dst);
        self.entries[i] = v;
    }

    pub fn add(&mut self, src: GpuId, dst: GpuId, v: T) {
        let i = self.idx(src, dst);
        self.entries[i] += v;
    }

    /// Total bytes emitted by one source GPU (inter-domain entries only).
    pub fn sender_total(&self, src: GpuId) -> T {
        let mut sum = T::zero();
        for f in 0..self.m {
            if f == src.domain {
                continue;
            }
            for h in 0..self.n {
                sum += self.get(src, GpuId::new(f, h));
            }
        }
        sum
    }

    pub fn total_inter_domain(&self) -> T {
        let mut sum = T::zero();
        for d in 0..self.m {
            for g in 0..self.n {
                sum += self.sender_total(GpuId::new(d, g));
            }
        }
        sum
    }

    /// Matrix with every (src, dst) pair swapped; models the return
    /// direction of an all-to-all exchange.
    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.m, self.n);
        let size = self.m * self.n;
        for s in 0..size {
            for d in 0..size {
                out.entries[d * size + s] = self.entries[s * size + d];
            }
        }
        out
    }

    /// Iterates non-zero inter-domain entries in row-major (source-major)
    /// order.
    pub fn iter_inter_domain(&self) -> impl Iterator<Item = (GpuId, GpuId, T)> + '_ {
        let (m, n) = (self.m, self.n);
        (0..m * n).flat_map(move |s| {
            (0..m * n).filter_map(move |d| {
                let (src, dst) = (GpuId::new(s / n, s % n), GpuId::new(d / n, d % n));
                let v = self.get(src, dst);
                if src.domain != dst.domain && v != T::zero() {
                    Some((src, dst, v))
                } else {
                    None
                }
            })
        })
    }
}

/// Domain-to-domain traffic matrix; the diagonal is forced to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainTrafficMatrix<T = Bytes> {
    m: usize,
    entries: Vec<T>,
}

impl<T: Scalar> DomainTrafficMatrix<T> {
    pub fn zeros(m: usize) -> Self {
        DomainTrafficMatrix {
            m,
            entries: vec![T::zero(); m * m],
        }
    }

    pub fn from_entries(m: usize, entries: Vec<T>) -> Self {
        assert_eq!(entries.len(), m * m);
        let mut d2 = DomainTrafficMatrix { m, entries };
        for d in 0..m {
            d2.entries[d * m + d] = T::zero();
        }
        d2
    }

    pub fn domains(&self) -> usize {
        self.m
    }

    pub fn get(&self, d: usize, f: usize) -> T {
        self.entries[d * self.m + f]
    }

    pub fn set(&mut self, d: usize, f: usize, v: T) {
        if d != f {
            self.entries[d * self.m + f] = v;
        }
    }

    pub fn row_sum(&self, d: usize) -> T {
        let mut s = T::zero();
        for f in 0..self.m {
            s += self.get(d, f);
        }
        s
    }

    pub fn col_sum(&self, f: usize) -> T {
        let mut s = T::zero();
        for d in 0..self.m {
            s += self.get(d, f);
        }
        s
    }

    pub fn total(&self) -> T {
        let mut s = T::zero();
        for v in &self.entries {
            s += *v;
        }
        s
    }
}

/// Aggregates a GPU-level matrix into the domain-level matrix: entry `(d, f)`
/// sums all GPU pairs between the two domains; the diagonal stays zero.
pub fn aggregate<T: Scalar>(d1: &GpuTrafficMatrix<T>) -> DomainTrafficMatrix<T> {
    let (m, n) = (d1.domains(), d1.rails());
    let mut d2 = DomainTrafficMatrix::zeros(m);
    for d in 0..m {
        for f in 0..m {
            if d == f {
                continue;
            }
            let mut s = T::zero();
            for g in 0..n {
                for h in 0..n {
                    s += d1.get(GpuId::new(d, g), GpuId::new(f, h));
                }
            }
            d2.set(d, f, s);
        }
    }
    d2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadFamily {
    Uniform,
    SparseTopk,
    SenderSkewed,
    ReceiverSkewed,
    Trace,
}

/// Parameters of one synthetic workload family (or a trace replay).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub family: WorkloadFamily,
    pub total_bytes_per_sender: Bytes,
    /// Top-K fan-out of the sparse family.
    #[serde(default = "default_k")]
    pub k: usize,
    /// Fraction of destination domains zeroed out, in [0, 1).
    #[serde(default)]
    pub sparsity: f64,
    #[serde(default = "default_zipf_exponent")]
    pub zipf_exponent: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub trace_path: Option<PathBuf>,
}

fn default_k() -> usize {
    2
}

fn default_zipf_exponent() -> f64 {
    1.2
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if !(0.0..1.0).contains(&self.sparsity) {
            return Err(WorkloadError::BadSparsity(self.sparsity));
        }
        if self.k < 1 {
            return Err(WorkloadError::BadTopK);
        }
        if self.zipf_exponent <= 0.0 {
            return Err(WorkloadError::BadExponent(self.zipf_exponent));
        }
        if self.total_bytes_per_sender == 0 && self.family != WorkloadFamily::Trace {
            return Err(WorkloadError::ZeroVolume);
        }
        if self.family == WorkloadFamily::Trace && self.trace_path.is_none() {
            return Err(WorkloadError::MissingTracePath);
        }
        Ok(())
    }
}

/// Normalized Zipf weights `r^(-exponent) / sum`, rank 1 first.
pub fn zipf_weights(exponent: f64, count: usize) -> Vec<f64> {
    assert!(exponent > 0.0 && count >= 1);
    let raw: Vec<f64> = (1..=count).map(|r| (r as f64).powf(-exponent)).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / sum).collect()
}

/// Splits `total` into integer shares proportional to `weights`; flooring
/// residue goes to the first share.
fn apportion(total: Bytes, weights: &[f64]) -> Vec<Bytes> {
    let mut shares: Vec<Bytes> = weights
        .iter()
        .map(|&w| ((total as f64) * w).floor() as Bytes)
        .collect();
    let mut assigned: Bytes = shares.iter().sum();
    // float rounding can in principle overshoot; trim from the largest share
    while assigned > total {
        let i = (0..shares.len()).max_by_key(|&i| shares[i]).unwrap();
        shares[i] -= 1;
        assigned -= 1;
    }
    if let Some(first) = shares.first_mut() {
        *first += total - assigned;
    }
    shares
}

fn split_even(total: Bytes, parts: usize) -> Vec<Bytes> {
    let base = total / parts as Bytes;
    let rem = total % parts as Bytes;
    let mut v = vec![base; parts];
    v[0] += rem;
    v
}

/// Destination domains for sender domain `d`, ascending, restricted to
/// `active` when given.
fn dst_domains(m: usize, d: usize, active: Option<&[usize]>) -> Vec<usize> {
    match active {
        Some(a) => a.iter().copied().filter(|&f| f != d).collect(),
        None => (0..m).filter(|&f| f != d).collect(),
    }
}

/// Every source GPU sends `total_bytes_per_sender` split equally over all
/// GPUs in the other domains.
pub fn gen_uniform(spec: &WorkloadSpec, m: usize, n: usize) -> Result<GpuTrafficMatrix, WorkloadError> {
    if m < 2 {
        return Err(WorkloadError::TooFewDomains(m));
    }
    spec.validate()?;
    let mut d1 = GpuTrafficMatrix::zeros(m, n);
    for d in 0..m {
        for g in 0..n {
            let src = GpuId::new(d, g);
            let domains = dst_domains(m, d, None);
            let per_domain = split_even(spec.total_bytes_per_sender, domains.len());
            for (f, share) in domains.into_iter().zip(per_domain) {
                for (h, b) in split_even(share, n).into_iter().enumerate() {
                    d1.add(src, GpuId::new(f, h), b);
                }
            }
        }
    }
    Ok(d1)
}

/// Sparse top-K gating: `floor(sparsity * M)` destination domains receive no
/// traffic at all; each sender GPU picks `K` of the remaining domains and
/// splits its full volume equally among them. Traffic into a chosen domain
/// lands on that domain's seeded owner GPU, modeling a hot expert shard.
pub fn gen_sparse_topk(
    spec: &WorkloadSpec,
    m: usize,
    n: usize,
) -> Result<GpuTrafficMatrix, WorkloadError> {
    if m < 2 {
        return Err(WorkloadError::TooFewDomains(m));
    }
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let zeroed = ((spec.sparsity * m as f64).floor() as usize).min(m - 1);
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng);
    let mut active: Vec<usize> = order[zeroed..].to_vec();
    active.sort_unstable();
    let owner: Vec<usize> = (0..m).map(|_| rng.gen_range(0..n)).collect();

    let mut d1 = GpuTrafficMatrix::zeros(m, n);
    for d in 0..m {
        for g in 0..n {
            let src = GpuId::new(d, g);
            let candidates = dst_domains(m, d, Some(&active));
            if candidates.len() < spec.k {
                return Err(WorkloadError::TooFewActiveDomains {
                    sender: d,
                    available: candidates.len(),
                    k: spec.k,
                });
            }
            let mut chosen: Vec<usize> =
                candidates.choose_multiple(&mut rng, spec.k).copied().collect();
            chosen.sort_unstable();
            let shares = split_even(spec.total_bytes_per_sender, chosen.len());
            for (f, share) in chosen.into_iter().zip(shares) {
                d1.add(src, GpuId::new(f, owner[f]), share);
            }
        }
    }
    Ok(d1)
}

/// Sender-skewed: domain volumes follow Zipf over a seeded rank permutation;
/// each domain's volume is emitted by a single seeded hot GPU, which spreads
/// it uniformly over all destination GPUs in other domains.
pub fn gen_sender_skewed(
    spec: &WorkloadSpec,
    m: usize,
    n: usize,
) -> Result<GpuTrafficMatrix, WorkloadError> {
    if m < 2 {
        return Err(WorkloadError::TooFewDomains(m));
    }
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let weights = zipf_weights(spec.zipf_exponent, m);
    let mut perm: Vec<usize> = (0..m).collect();
    perm.shuffle(&mut rng);
    let hot_gpu: Vec<usize> = (0..m).map(|_| rng.gen_range(0..n)).collect();

    let grand_total = spec.total_bytes_per_sender * (m * n) as Bytes;
    let by_rank = apportion(grand_total, &weights);
    let mut domain_volume = vec![0u64; m];
    for (rank, &dom) in perm.iter().enumerate() {
        domain_volume[dom] = by_rank[rank];
    }

    let mut d1 = GpuTrafficMatrix::zeros(m, n);
    for d in 0..m {
        let src = GpuId::new(d, hot_gpu[d]);
        let domains = dst_domains(m, d, None);
        let per_domain = split_even(domain_volume[d], domains.len());
        for (f, share) in domains.into_iter().zip(per_domain) {
            for (h, b) in split_even(share, n).into_iter().enumerate() {
                d1.add(src, GpuId::new(f, h), b);
            }
        }
    }
    Ok(d1)
}

/// Receiver-skewed incast: every sender GPU emits its full volume;
/// destination-domain shares follow Zipf over a seeded rank permutation
/// common to all senders, and each domain's inflow lands on a seeded owner
/// GPU.
pub fn gen_receiver_skewed(
    spec: &WorkloadSpec,
    m: usize,
    n: usize,
) -> Result<GpuTrafficMatrix, WorkloadError> {
    if m < 2 {
        return Err(WorkloadError::TooFewDomains(m));
    }
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let weights = zipf_weights(spec.zipf_exponent, m);
    let mut perm: Vec<usize> = (0..m).collect();
    perm.shuffle(&mut rng);
    let owner: Vec<usize> = (0..m).map(|_| rng.gen_range(0..n)).collect();

    // weight of each destination domain under the seeded rank permutation
    let mut dom_weight = vec![0.0f64; m];
    for (rank, &dom) in perm.iter().enumerate() {
        dom_weight[dom] = weights[rank];
    }

    let mut d1 = GpuTrafficMatrix::zeros(m, n);
    for d in 0..m {
        let domains = dst_domains(m, d, None);
        let w: Vec<f64> = domains.iter().map(|&f| dom_weight[f]).collect();
        let norm: f64 = w.iter().sum();
        let w: Vec<f64> = w.into_iter().map(|x| x / norm).collect();
        for g in 0..n {
            let src = GpuId::new(d, g);
            let shares = apportion(spec.total_bytes_per_sender, &w);
            for (&f, share) in domains.iter().zip(shares) {
                d1.add(src, GpuId::new(f, owner[f]), share);
            }
        }
    }
    Ok(d1)
}

/// Dispatches on the spec's family. Synthetic families produce a single
/// phase named "all"; the trace family yields one matrix per phase.
pub fn generate(
    spec: &WorkloadSpec,
    m: usize,
    n: usize,
) -> Result<Vec<(String, GpuTrafficMatrix)>, WorkloadError> {
    match spec.family {
        WorkloadFamily::Uniform => Ok(vec![("all".into(), gen_uniform(spec, m, n)?)]),
        WorkloadFamily::SparseTopk => Ok(vec![("all".into(), gen_sparse_topk(spec, m, n)?)]),
        WorkloadFamily::SenderSkewed => Ok(vec![("all".into(), gen_sender_skewed(spec, m, n)?)]),
        WorkloadFamily::ReceiverSkewed => {
            Ok(vec![("all".into(), gen_receiver_skewed(spec, m, n)?)])
        }
        WorkloadFamily::Trace => {
            let path = spec
                .trace_path
                .as_ref()
                .ok_or(WorkloadError::MissingTracePath)?;
            load_trace(path)
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceHeader {
    #[serde(rename = "M")]
    m: usize,
    #[serde(rename = "N")]
    n: usize,
    phases: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceRecord {
    phase: String,
    src_domain: usize,
    src_gpu: usize,
    dst_domain: usize,
    dst_gpu: usize,
    bytes: Bytes,
}

/// Loads a newline-delimited trace: a header record `{M, N, phases}` followed
/// by `{phase, src_domain, src_gpu, dst_domain, dst_gpu, bytes}` records.
/// Returns phases in header order, each with a full GPU-level matrix.
pub fn load_trace(path: &FsPath) -> Result<Vec<(String, GpuTrafficMatrix)>, WorkloadError> {
    let file = File::open(path).map_err(|e| WorkloadError::TraceIo(path.to_path_buf(), e))?;
    let reader = BufReader::new(file);

    let mut header: Option<TraceHeader> = None;
    let mut phases: Vec<(String, GpuTrafficMatrix)> = Vec::new();
    let mut phase_index: std::collections::HashMap<String, usize> = Default::default();

    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| WorkloadError::TraceIo(path.to_path_buf(), e))?;
        let line_trim = line.trim();
        if line_trim.is_empty() {
            continue;
        }
        let lineno = lineno + 1;
        match header {
            None => {
                let h: TraceHeader =
                    serde_json::from_str(line_trim).map_err(|e| WorkloadError::TraceParse {
                        line: lineno,
                        msg: format!("bad header: {e}"),
                    })?;
                if h.m < 2 || h.n < 1 {
                    return Err(WorkloadError::TraceParse {
                        line: lineno,
                        msg: format!("invalid dimensions M={} N={}", h.m, h.n),
                    });
                }
                for (i, p) in h.phases.iter().enumerate() {
                    phase_index.insert(p.clone(), i);
                    phases.push((p.clone(), GpuTrafficMatrix::zeros(h.m, h.n)));
                }
                header = Some(h);
            }
            Some(ref h) => {
                let rec: TraceRecord =
                    serde_json::from_str(line_trim).map_err(|e| WorkloadError::TraceParse {
                        line: lineno,
                        msg: format!("bad record: {e}"),
                    })?;
                let pi = *phase_index
                    .get(&rec.phase)
                    .ok_or_else(|| WorkloadError::TraceParse {
                        line: lineno,
                        msg: format!("unknown phase {:?}", rec.phase),
                    })?;
                if rec.src_domain >= h.m
                    || rec.dst_domain >= h.m
                    || rec.src_gpu >= h.n
                    || rec.dst_gpu >= h.n
                {
                    return Err(WorkloadError::TraceParse {
                        line: lineno,
                        msg: "index out of range".into(),
                    });
                }
                phases[pi].1.add(
                    GpuId::new(rec.src_domain, rec.src_gpu),
                    GpuId::new(rec.dst_domain, rec.dst_gpu),
                    rec.bytes,
                );
            }
        }
    }
    if header.is_none() {
        return Err(WorkloadError::EmptyTrace);
    }
    Ok(phases)
}

/// Writes phases in the trace file format accepted by [`load_trace`].
pub fn write_trace(
    path: &FsPath,
    phases: &[(String, GpuTrafficMatrix)],
) -> Result<(), WorkloadError> {
    let file = File::create(path).map_err(|e| WorkloadError::TraceIo(path.to_path_buf(), e))?;
    let mut w = BufWriter::new(file);
    let (m, n) = phases
        .first()
        .map(|(_, d1)| (d1.domains(), d1.rails()))
        .unwrap_or((0, 0));
    let header = TraceHeader {
        m,
        n,
        phases: phases.iter().map(|(p, _)| p.clone()).collect(),
    };
    let io_err = |e: std::io::Error| WorkloadError::TraceIo(path.to_path_buf(), e);
    writeln!(w, "{}", serde_json::to_string(&header).unwrap()).map_err(io_err)?;
    for (phase, d1) in phases {
        for (src, dst, bytes) in d1.iter_inter_domain() {
            let rec = TraceRecord {
                phase: phase.clone(),
                src_domain: src.domain,
                src_gpu: src.gpu,
                dst_domain: dst.domain,
                dst_gpu: dst.gpu,
                bytes,
            };
            writeln!(w, "{}", serde_json::to_string(&rec).unwrap()).map_err(io_err)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixtralMode {
    /// Each expert's data is spread evenly over the GPUs of its domain.
    Dense,
    /// Each expert's data is aggregated on a single GPU per domain.
    Sparse,
}

/// Per-phase per-expert transmit volumes of the four-phase synthetic
/// Mixtral-style trace (bytes).
pub const MIXTRAL_PHASES: [(&str, Bytes); 4] = [
    ("Start", 100_000_000),
    ("Early", 150_000_000),
    ("Mid", 200_000_000),
    ("Stable", 256_000_000),
];

/// Builds the synthetic four-phase trace. One expert per domain; the phase
/// volume is the total each expert transmits, growing from 100 MB at Start
/// to 256 MB at Stable.
pub fn mixtral_phases(mode: MixtralMode, m: usize, n: usize) -> Vec<(String, GpuTrafficMatrix)> {
    assert!(m >= 2 && n >= 1);
    let mut out = Vec::new();
    for (name, volume) in MIXTRAL_PHASES {
        let mut d1 = GpuTrafficMatrix::zeros(m, n);
        for d in 0..m {
            match mode {
                MixtralMode::Dense => {
                    for (g, gpu_share) in split_even(volume, n).into_iter().enumerate() {
                        let src = GpuId::new(d, g);
                        let domains = dst_domains(m, d, None);
                        for (f, share) in domains
                            .into_iter()
                            .zip(split_even(gpu_share, m - 1))
                        {
                            for (h, b) in split_even(share, n).into_iter().enumerate() {
                                d1.add(src, GpuId::new(f, h), b);
                            }
                        }
                    }
                }
                MixtralMode::Sparse => {
                    let src = GpuId::new(d, 0);
                    let domains = dst_domains(m, d, None);
                    for (f, share) in domains.into_iter().zip(split_even(volume, m - 1)) {
                        d1.add(src, GpuId::new(f, 0), share);
                    }
                }
            }
        }
        out.push((name.to_string(), d1));
    }
    out
}
