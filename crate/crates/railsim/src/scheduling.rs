//! Message chunking and rail assignment.
//!
//! Implements the spraying scheduler: messages are cut into fixed-size
//! atomic flows, sorted by descending weight, and greedily placed on the
//! least-loaded rail (longest-processing-time-first list scheduling). Also
//! provides the continuous uniform allocation used as the analytic reference
//! and descriptors for the baseline routing policies the simulator
//! interprets.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Scalar;
use crate::topology::GpuId;
use crate::Bytes;

#[derive(Debug, Error)]
pub enum SchedulingError {
    #[error("message must carry at least 1 byte")]
    EmptyMessage,
    #[error("chunk size must be at least 1 byte")]
    BadChunkSize,
    #[error("qps_per_rail must be at least 1")]
    BadQps,
    #[error("unknown policy kind {0:?}")]
    UnknownKind(String),
    #[error("plb repath_threshold must lie in (0, 1], got {0}")]
    BadRepathThreshold(f64),
}

/// Indivisible scheduling unit: one fixed-size chunk of a message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AtomicFlow {
    pub id: u64,
    pub src: GpuId,
    pub dst: GpuId,
    pub bytes: Bytes,
}

/// Per-rail cumulative assigned bytes within one scheduling round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadState {
    loads: Vec<Bytes>,
}

impl LoadState {
    pub fn new(rails: usize) -> Self {
        LoadState {
            loads: vec![0; rails],
        }
    }

    pub fn rails(&self) -> usize {
        self.loads.len()
    }

    pub fn load(&self, rail: usize) -> Bytes {
        self.loads[rail]
    }

    pub fn loads(&self) -> &[Bytes] {
        &self.loads
    }

    pub fn total(&self) -> Bytes {
        self.loads.iter().sum()
    }

    pub fn max(&self) -> Bytes {
        self.loads.iter().copied().max().unwrap_or(0)
    }

    pub fn min(&self) -> Bytes {
        self.loads.iter().copied().min().unwrap_or(0)
    }

    /// Least-loaded rail; lowest index wins ties.
    fn argmin(&self) -> usize {
        let mut best = 0;
        for (j, &l) in self.loads.iter().enumerate() {
            if l < self.loads[best] {
                best = j;
            }
        }
        best
    }

    /// Mean squared error of the per-rail loads against their mean.
    pub fn mse(&self) -> f64 {
        if self.loads.is_empty() {
            return 0.0;
        }
        let n = self.loads.len() as f64;
        let mean = self.total() as f64 / n;
        self.loads
            .iter()
            .map(|&l| (l as f64 - mean).powi(2))
            .sum::<f64>()
            / n
    }
}

/// One scheduled flow: which rail it takes and which queue pair on that
/// rail's NIC carries it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Assigned {
    pub flow: AtomicFlow,
    pub rail: usize,
    pub qp: usize,
}

/// Rail (and queue-pair) choice for every flow of a round, in placement
/// order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Assignment {
    pub entries: Vec<Assigned>,
}

impl Assignment {
    pub fn rail_of(&self, flow_id: u64) -> Option<usize> {
        self.entries
            .iter()
            .find(|a| a.flow.id == flow_id)
            .map(|a| a.rail)
    }
}

/// Cuts a message into `ceil(message/chunk)` atomic flows; every flow but
/// the last carries exactly `chunk_bytes`, the last carries the remainder.
/// Flow ids start at `first_id` and are consecutive.
pub fn split_message(
    src: GpuId,
    dst: GpuId,
    message_bytes: Bytes,
    chunk_bytes: Bytes,
    first_id: u64,
) -> Result<Vec<AtomicFlow>, SchedulingError> {
    if message_bytes == 0 {
        return Err(SchedulingError::EmptyMessage);
    }
    if chunk_bytes == 0 {
        return Err(SchedulingError::BadChunkSize);
    }
    let full = (message_bytes / chunk_bytes) as usize;
    let rem = message_bytes % chunk_bytes;
    let count = full + usize::from(rem > 0);
    let mut flows = Vec::with_capacity(count);
    for i in 0..count {
        let bytes = if i < full { chunk_bytes } else { rem };
        flows.push(AtomicFlow {
            id: first_id + i as u64,
            src,
            dst,
            bytes,
        });
    }
    Ok(flows)
}

/// Greedy list scheduling, longest first: sort flows by descending byte
/// weight (ties by ascending source GPU index, then flow id) and place each
/// on the currently least-loaded rail. The load state must be fresh per
/// round; it is created here and returned alongside the assignment.
pub fn lpt_schedule(flows: &[AtomicFlow], rails: usize) -> (Assignment, LoadState) {
    assert!(rails >= 1);
    let mut order: Vec<&AtomicFlow> = flows.iter().collect();
    order.sort_by(|a, b| {
        b.bytes
            .cmp(&a.bytes)
            .then(a.src.gpu.cmp(&b.src.gpu))
            .then(a.id.cmp(&b.id))
    });
    let mut state = LoadState::new(rails);
    let mut assignment = Assignment::default();
    for flow in order {
        let rail = state.argmin();
        state.loads[rail] += flow.bytes;
        assignment.entries.push(Assigned {
            flow: *flow,
            rail,
            qp: 0,
        });
    }
    (assignment, state)
}

/// Assigns queue-pair indices round-robin per rail, in placement order.
pub fn qp_map(mut assignment: Assignment, qps_per_rail: usize) -> Result<Assignment, SchedulingError> {
    if qps_per_rail == 0 {
        return Err(SchedulingError::BadQps);
    }
    let rails = assignment
        .entries
        .iter()
        .map(|a| a.rail + 1)
        .max()
        .unwrap_or(0);
    let mut next = vec![0usize; rails];
    for a in &mut assignment.entries {
        a.qp = next[a.rail];
        next[a.rail] = (next[a.rail] + 1) % qps_per_rail;
    }
    Ok(assignment)
}

/// Fraction of each domain pair's traffic placed on each rail:
/// `P[k][f][n]`, with the diagonal `k == f` unused (kept at zero rows).
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationMatrix<T = f64> {
    m: usize,
    n: usize,
    entries: Vec<T>,
}

impl<T: Scalar> AllocationMatrix<T> {
    pub fn zeros(m: usize, n: usize) -> Self {
        AllocationMatrix {
            m,
            n,
            entries: vec![T::zero(); m * m * n],
        }
    }

    pub fn domains(&self) -> usize {
        self.m
    }

    pub fn rails(&self) -> usize {
        self.n
    }

    pub fn get(&self, k: usize, f: usize, rail: usize) -> T {
        self.entries[(k * self.m + f) * self.n + rail]
    }

    pub fn set(&mut self, k: usize, f: usize, rail: usize, v: T) {
        self.entries[(k * self.m + f) * self.n + rail] = v;
    }
}

impl AllocationMatrix<f64> {
    /// Each off-diagonal row must be a probability vector.
    pub fn check_simplex(&self) -> bool {
        for k in 0..self.m {
            for f in 0..self.m {
                if k == f {
                    continue;
                }
                let mut sum = 0.0;
                for n in 0..self.n {
                    let v = self.get(k, f, n);
                    if v < 0.0 {
                        return false;
                    }
                    sum += v;
                }
                if (sum - 1.0).abs() > 1e-12 {
                    return false;
                }
            }
        }
        true
    }
}

/// The optimal continuous allocation: every rail carries an equal `1/N`
/// share of every domain pair's traffic.
pub fn uniform_allocation(m: usize, n: usize) -> AllocationMatrix<f64> {
    assert!(n >= 1);
    let mut p = AllocationMatrix::zeros(m, n);
    let share = 1.0 / n as f64;
    for k in 0..m {
        for f in 0..m {
            if k == f {
                continue;
            }
            for rail in 0..n {
                p.set(k, f, rail, share);
            }
        }
    }
    p
}

/// The uniform allocation scaled by `N`: every entry is exactly 1. Feeding
/// this to the load algebra computes `N` times the true loads in exact
/// integer arithmetic, so symmetry checks avoid floating point entirely.
pub fn uniform_allocation_times_n(m: usize, n: usize) -> AllocationMatrix<u64> {
    assert!(n >= 1);
    let mut p = AllocationMatrix::zeros(m, n);
    for k in 0..m {
        for f in 0..m {
            if k == f {
                continue;
            }
            for rail in 0..n {
                p.set(k, f, rail, 1);
            }
        }
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Chunked spraying with the greedy least-loaded-rail scheduler.
    RailsLpt,
    /// Static per-message hashing onto a single path.
    Ecmp,
    /// Chunked, single source NIC, per-chunk minimum-backlog spine choice.
    Minrtt,
    /// Hashing with repath on persistent congestion.
    Plb,
    /// Per-message even spraying across all source rails.
    Reps,
    /// Continuous reference: every message split `1/N` per rail.
    UniformOracle,
}

impl PolicyKind {
    pub fn parse(s: &str) -> Result<Self, SchedulingError> {
        match s {
            "rails_lpt" => Ok(PolicyKind::RailsLpt),
            "ecmp" => Ok(PolicyKind::Ecmp),
            "minrtt" => Ok(PolicyKind::Minrtt),
            "plb" => Ok(PolicyKind::Plb),
            "reps" => Ok(PolicyKind::Reps),
            "uniform_oracle" => Ok(PolicyKind::UniformOracle),
            other => Err(SchedulingError::UnknownKind(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::RailsLpt => "rails_lpt",
            PolicyKind::Ecmp => "ecmp",
            PolicyKind::Minrtt => "minrtt",
            PolicyKind::Plb => "plb",
            PolicyKind::Reps => "reps",
            PolicyKind::UniformOracle => "uniform_oracle",
        }
    }
}

/// Validated policy configuration consumed by the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDescriptor {
    pub kind: PolicyKind,
    #[serde(default = "default_chunk_bytes")]
    pub chunk_bytes: Bytes,
    #[serde(default = "default_qps_per_rail")]
    pub qps_per_rail: usize,
    /// PLB: repath when a flow's rate drops below this fraction of its solo
    /// rate.
    #[serde(default = "default_repath_threshold")]
    pub repath_threshold: f64,
    #[serde(default)]
    pub seed: u64,
}

pub fn default_chunk_bytes() -> Bytes {
    32 * 1024
}

pub fn default_qps_per_rail() -> usize {
    64
}

fn default_repath_threshold() -> f64 {
    0.5
}

impl PolicyDescriptor {
    pub fn validate(&self) -> Result<(), SchedulingError> {
        if self.chunk_bytes == 0 {
            return Err(SchedulingError::BadChunkSize);
        }
        if self.qps_per_rail == 0 {
            return Err(SchedulingError::BadQps);
        }
        if self.kind == PolicyKind::Plb
            && !(self.repath_threshold > 0.0 && self.repath_threshold <= 1.0)
        {
            return Err(SchedulingError::BadRepathThreshold(self.repath_threshold));
        }
        Ok(())
    }
}

/// Builds a validated descriptor from a kind string and knobs.
pub fn make_policy(
    kind: &str,
    chunk_bytes: Bytes,
    qps_per_rail: usize,
    repath_threshold: f64,
    seed: u64,
) -> Result<PolicyDescriptor, SchedulingError> {
    let desc = PolicyDescriptor {
        kind: PolicyKind::parse(kind)?,
        chunk_bytes,
        qps_per_rail,
        repath_threshold,
        seed,
    };
    desc.validate()?;
    Ok(desc)
}

impl Default for PolicyDescriptor {
    fn default() -> Self {
        PolicyDescriptor {
            kind: PolicyKind::RailsLpt,
            chunk_bytes: default_chunk_bytes(),
            qps_per_rail: default_qps_per_rail(),
            repath_threshold: default_repath_threshold(),
            seed: 0,
        }
    }
}
