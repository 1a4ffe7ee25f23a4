//! Deterministic fluid flow-level simulator.
//!
//! A policy materializes each message into one or more simulated flows, each
//! carrying one or more weighted routes. Rates come from max-min fair
//! progressive filling over the link capacities; the event loop advances to
//! the earliest completion, drains bytes, and repeats. Everything is
//! deterministic given (topology, traffic, policy): randomness only enters
//! through seeded hashes.

use thiserror::Error;

use crate::scheduling::{
    lpt_schedule, qp_map, split_message, AtomicFlow, LoadState, PolicyDescriptor, PolicyKind,
    SchedulingError,
};
use crate::topology::{GpuId, Path, RailTopology, TopologyError};
use crate::workload::GpuTrafficMatrix;
use crate::{Bytes, Seconds};

/// Residual bytes below this threshold count as completed; keeps the event
/// loop from spinning on float dust while staying far under the 1e-9
/// relative work-conservation tolerance for realistic volumes.
const RESIDUAL_CLAMP: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("no flows to simulate")]
    NoFlows,
    #[error("simulation stalled: active flows but all rates zero")]
    Stalled,
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Scheduling(#[from] SchedulingError),
    #[error("traffic matrix is {m}x{n} but topology is {tm}x{tn}")]
    MatrixMismatch {
        m: usize,
        n: usize,
        tm: usize,
        tn: usize,
    },
}

/// One (src GPU, dst GPU) transfer of an all-to-all round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Message {
    pub id: u64,
    pub src: GpuId,
    pub dst: GpuId,
    pub bytes: Bytes,
}

/// Non-zero inter-domain entries of a traffic matrix as messages, ids
/// consecutive in source-major order.
pub fn messages_from_matrix(d1: &GpuTrafficMatrix<Bytes>) -> Vec<Message> {
    d1.iter_inter_domain()
        .enumerate()
        .map(|(id, (src, dst, bytes))| Message {
            id: id as u64,
            src,
            dst,
            bytes,
        })
        .collect()
}

/// One route of a simulated flow with its fluid share weight.
#[derive(Debug, Clone)]
struct Route {
    links: Vec<u32>,
    weight: f64,
}

/// A policy-materialized flow: the unit whose completion time is recorded.
#[derive(Debug, Clone)]
struct SimFlow {
    message: u64,
    src: GpuId,
    dst: GpuId,
    bytes: f64,
    routes: Vec<Route>,
    /// PLB state: spine re-hash counter, or `None` for flows that never
    /// repath.
    plb: Option<PlbState>,
}

#[derive(Debug, Clone, Copy)]
struct PlbState {
    repath_count: u64,
    cooldown: u8,
    /// Minimum capacity along the current route: the rate the flow would get
    /// alone.
    solo_rate: f64,
}

/// Outcome of one simulated all-to-all round.
#[derive(Debug, Clone)]
pub struct SimResult {
    pub policy: PolicyDescriptor,
    /// Completion time of each policy-materialized flow, in materialization
    /// order.
    pub flow_times: Vec<Seconds>,
    /// Completion time per message (latest of its flows), indexed by message
    /// id.
    pub message_times: Vec<Seconds>,
    /// Total completion time: the latest flow completion.
    pub total_time: Seconds,
    /// Bytes carried per link, indexed like the topology's link table.
    pub link_bytes: Vec<f64>,
    /// Per-NIC sent bytes, `[domain * N + rail]`, from the NIC-to-leaf
    /// uplinks.
    pub send_volume: Vec<f64>,
    /// Per-NIC received bytes, `[domain * N + rail]`, from the leaf-to-NIC
    /// downlinks.
    pub recv_volume: Vec<f64>,
    /// Largest observed ratio of any domain pair's instantaneous aggregate
    /// rate to its `N * R2` capacity ceiling.
    pub max_pair_rate_ratio: f64,
    /// Total payload bytes across all messages.
    pub total_payload: Bytes,
    pub domains: usize,
    pub rails: usize,
    /// Per-sending-domain scheduler load states (spraying policy only).
    pub scheduler_loads: Option<Vec<LoadState>>,
    /// Whether the policy cut messages into fixed-size chunks.
    pub chunked: bool,
    /// Number of repath events taken (PLB only).
    pub repaths: u64,
}

/// Mixes the arguments into a uniform 64-bit value (splitmix64 finalizer);
/// used for all seeded routing hashes.
fn hash_u64(vals: &[u64]) -> u64 {
    let mut h: u64 = 0x9e37_79b9_7f4a_7c15;
    for &v in vals {
        h ^= v.wrapping_mul(0xff51_afd7_ed55_8ccd).rotate_left(31);
        h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
        h ^= h >> 33;
    }
    h
}

fn hashed_spine(topo: &RailTopology, vals: &[u64]) -> usize {
    (hash_u64(vals) % topo.spine_count() as u64) as usize
}

fn gpu_key(g: GpuId) -> u64 {
    (g.domain as u64) << 32 | g.gpu as u64
}

fn min_capacity(topo: &RailTopology, links: &[u32]) -> f64 {
    links
        .iter()
        .map(|&l| topo.capacity(l))
        .fold(f64::INFINITY, f64::min)
    }

/// Builds the simulated flows for one policy. Returns the flows plus, for
/// the spraying policy, the per-domain scheduler load states.
fn materialize(
    topo: &RailTopology,
    messages: &[Message],
    policy: &PolicyDescriptor,
) -> Result<(Vec<SimFlow>, Option<Vec<LoadState>>), SimError> {
    let (m, n) = (topo.domains(), topo.rails());
    let mut flows = Vec::new();
    let mut loads = None;
    match policy.kind {
        PolicyKind::RailsLpt => {
            // one scheduler per sending domain over all of its chunks
            let mut states = Vec::with_capacity(m);
            let mut next_id: u64 = 0;
            for d in 0..m {
                let mut chunks: Vec<AtomicFlow> = Vec::new();
                for msg in messages.iter().filter(|x| x.src.domain == d) {
                    let cs =
                        split_message(msg.src, msg.dst, msg.bytes, policy.chunk_bytes, next_id)?;
                    next_id += cs.len() as u64;
                    for c in &cs {
                        chunks.push(*c);
                    }
                    // remember which message each chunk belongs to via the
                    // flows list below
                    for c in cs {
                        flows.push(SimFlow {
                            message: msg.id,
                            src: c.src,
                            dst: c.dst,
                            bytes: c.bytes as f64,
                            routes: Vec::new(),
                            plb: None,
                        });
                    }
                }
                let (assignment, state) = lpt_schedule(&chunks, n);
                let assignment = qp_map(assignment, policy.qps_per_rail)?;
                for a in &assignment.entries {
                    let path = topo.rail_path(a.flow.src, a.flow.dst, a.rail)?;
                    let idx = a.flow.id as usize;
                    flows[idx].routes.push(Route {
                        links: path.links,
                        weight: 1.0,
                    });
                }
                states.push(state);
            }
            loads = Some(states);
        }
        PolicyKind::UniformOracle => {
            for msg in messages {
                let share = msg.bytes as f64 / n as f64;
                for rail in 0..n {
                    let path = topo.rail_path(msg.src, msg.dst, rail)?;
                    flows.push(SimFlow {
                        message: msg.id,
                        src: msg.src,
                        dst: msg.dst,
                        bytes: share,
                        routes: vec![Route {
                            links: path.links,
                            weight: 1.0,
                        }],
                        plb: None,
                    });
                }
            }
        }
        PolicyKind::Ecmp | PolicyKind::Plb => {
            for msg in messages {
                let path = ecmp_route(topo, msg, 0, policy.seed)?;
                let plb = (policy.kind == PolicyKind::Plb).then(|| PlbState {
                    repath_count: 0,
                    cooldown: 0,
                    solo_rate: min_capacity(topo, &path.links),
                });
                flows.push(SimFlow {
                    message: msg.id,
                    src: msg.src,
                    dst: msg.dst,
                    bytes: msg.bytes as f64,
                    routes: vec![Route {
                        links: path.links,
                        weight: 1.0,
                    }],
                    plb,
                });
            }
        }
        PolicyKind::Reps => {
            // even spray across all source rails; destination NIC stays the
            // receiver GPU's own
            for msg in messages {
                let mut routes = Vec::with_capacity(n);
                for rail in 0..n {
                    let path = if rail == msg.dst.gpu {
                        topo.rail_path(msg.src, msg.dst, rail)?
                    } else {
                        let spine =
                            hashed_spine(topo, &[msg.id, rail as u64, policy.seed]);
                        topo.spine_path(msg.src, rail, msg.dst, msg.dst.gpu, spine)?
                    };
                    routes.push(Route {
                        links: path.links,
                        weight: 1.0 / n as f64,
                    });
                }
                flows.push(SimFlow {
                    message: msg.id,
                    src: msg.src,
                    dst: msg.dst,
                    bytes: msg.bytes as f64,
                    routes,
                    plb: None,
                });
            }
        }
        PolicyKind::Minrtt => {
            // chunks leave from the source GPU's own NIC; each picks the
            // spine whose route currently has the least estimated backlog
            // delay, in deterministic decision order
            let mut backlog = vec![0.0f64; topo.link_count()];
            let mut next_id: u64 = 0;
            for msg in messages {
                let chunks =
                    split_message(msg.src, msg.dst, msg.bytes, policy.chunk_bytes, next_id)?;
                next_id += chunks.len() as u64;
                for c in chunks {
                    let mut best: Option<(f64, Path)> = None;
                    for spine in 0..topo.spine_count() {
                        let path =
                            topo.spine_path(c.src, c.src.gpu, c.dst, c.dst.gpu, spine)?;
                        let delay = path
                            .links
                            .iter()
                            .map(|&l| backlog[l as usize] / topo.capacity(l))
                            .fold(0.0f64, f64::max);
                        if best.as_ref().map_or(true, |(d, _)| delay < *d) {
                            best = Some((delay, path));
                        }
                    }
                    let (_, path) = best.expect("spine_count >= 1");
                    for &l in &path.links {
                        backlog[l as usize] += c.bytes as f64;
                    }
                    flows.push(SimFlow {
                        message: msg.id,
                        src: c.src,
                        dst: c.dst,
                        bytes: c.bytes as f64,
                        routes: vec![Route {
                            links: path.links,
                            weight: 1.0,
                        }],
                        plb: None,
                    });
                }
            }
        }
    }
    Ok((flows, loads))
}

/// Single-path route of a hashing policy: rail-direct when the NIC indices
/// coincide, otherwise through a seeded-hash spine.
fn ecmp_route(
    topo: &RailTopology,
    msg: &Message,
    repath_count: u64,
    seed: u64,
) -> Result<Path, SimError> {
    if msg.src.gpu == msg.dst.gpu {
        Ok(topo.rail_path(msg.src, msg.dst, msg.src.gpu)?)
    } else {
        let spine = hashed_spine(
            topo,
            &[gpu_key(msg.src), gpu_key(msg.dst), msg.id, repath_count, seed],
        );
        Ok(topo.spine_path(msg.src, msg.src.gpu, msg.dst, msg.dst.gpu, spine)?)
    }
}

/// Max-min fair rates via progressive filling. Subflows are (flow, route)
/// pairs: a subflow's rate is its route weight times the flow's water level,
/// links cap the sum of subflow rates crossing them, and a flow's rate is
/// the sum over its routes. Returns per-flow rates for `active` (indices
/// into `flows`).
fn max_min_rates(
    topo: &RailTopology,
    flows: &[SimFlow],
    active: &[usize],
    rates: &mut [f64],
) {
    let link_count = topo.link_count();
    let mut link_weight = vec![0.0f64; link_count];
    // links touched by any active subflow, with a counting-sort adjacency
    // (subflow slots grouped per link) — no per-link allocations
    let mut used: Vec<u32> = Vec::new();
    let mut sub_count = vec![0u32; link_count];
    let mut total_subs = 0usize;
    for &fi in active {
        for route in &flows[fi].routes {
            for &l in &route.links {
                let li = l as usize;
                if link_weight[li] == 0.0 {
                    used.push(l);
                }
                link_weight[li] += route.weight;
                sub_count[li] += 1;
                total_subs += 1;
            }
        }
    }
    let mut sub_off = vec![0u32; link_count];
    let mut acc = 0u32;
    for &l in &used {
        sub_off[l as usize] = acc;
        acc += sub_count[l as usize];
    }
    let mut cursor = sub_off.clone();
    let mut sub_flow = vec![0u32; total_subs];
    for (slot, &fi) in active.iter().enumerate() {
        for route in &flows[fi].routes {
            for &l in &route.links {
                let li = l as usize;
                sub_flow[cursor[li] as usize] = slot as u32;
                cursor[li] += 1;
            }
        }
    }

    let mut residual = vec![0.0f64; link_count];
    for &l in &used {
        residual[l as usize] = topo.capacity(l);
    }
    let mut level = vec![0.0f64; active.len()];
    let mut frozen = vec![false; active.len()];
    let mut unfrozen = active.len();
    while unfrozen > 0 {
        // most constrained link among those still carrying unfrozen weight
        let mut inc = f64::INFINITY;
        for &l in &used {
            let li = l as usize;
            if link_weight[li] > 1e-15 {
                let c = residual[li] / link_weight[li];
                if c < inc {
                    inc = c;
                }
            }
        }
        if !inc.is_finite() {
            // remaining flows cross no capacitated links; cannot happen for
            // well-formed routes, but freeze at zero growth to terminate
            break;
        }
        for slot in 0..active.len() {
            if !frozen[slot] {
                level[slot] += inc;
            }
        }
        for &l in &used {
            let li = l as usize;
            if link_weight[li] > 1e-15 {
                residual[li] -= link_weight[li] * inc;
            }
        }
        // freeze every flow crossing a saturated link
        for &l in &used {
            let li = l as usize;
            if link_weight[li] > 1e-15 && residual[li] <= 1e-9 * topo.capacity(l) {
                let (lo, hi) = (sub_off[li] as usize, (sub_off[li] + sub_count[li]) as usize);
                for &slot in &sub_flow[lo..hi] {
                    if !frozen[slot as usize] {
                        frozen[slot as usize] = true;
                        unfrozen -= 1;
                        // retire this flow's weight from all its links
                        let fi = active[slot as usize];
                        for route in &flows[fi].routes {
                            for &rl in &route.links {
                                link_weight[rl as usize] -= route.weight;
                            }
                        }
                    }
                }
            }
        }
    }
    for (slot, &fi) in active.iter().enumerate() {
        let total_weight: f64 = flows[fi].routes.iter().map(|r| r.weight).sum();
        rates[fi] = level[slot] * total_weight;
    }
}

/// Runs the policy on the traffic matrix and simulates the round to
/// completion.
pub fn simulate(
    topo: &RailTopology,
    d1: &GpuTrafficMatrix<Bytes>,
    policy: &PolicyDescriptor,
) -> Result<SimResult, SimError> {
    policy.validate()?;
    if d1.domains() != topo.domains() || d1.rails() != topo.rails() {
        return Err(SimError::MatrixMismatch {
            m: d1.domains(),
            n: d1.rails(),
            tm: topo.domains(),
            tn: topo.rails(),
        });
    }
    let messages = messages_from_matrix(d1);
    if messages.is_empty() {
        return Err(SimError::NoFlows);
    }
    let (mut flows, scheduler_loads) = materialize(topo, &messages, policy)?;

    let (m, n) = (topo.domains(), topo.rails());
    let pair_cap = n as f64 * topo.r2();
    let mut remaining: Vec<f64> = flows.iter().map(|f| f.bytes).collect();
    let mut rates = vec![0.0f64; flows.len()];
    let mut flow_times = vec![0.0f64; flows.len()];
    let mut link_bytes = vec![0.0f64; topo.link_count()];
    let mut active: Vec<usize> = (0..flows.len()).collect();
    let mut max_pair_ratio = 0.0f64;
    let mut repaths: u64 = 0;
    let mut t = 0.0f64;

    let mut pair_rate = vec![0.0f64; m * m];
    while !active.is_empty() {
        max_min_rates(topo, &flows, &active, &mut rates);

        // Domain-pair ceiling bookkeeping: aggregate rate per domain pair
        for v in pair_rate.iter_mut() {
            *v = 0.0;
        }
        for &fi in &active {
            pair_rate[flows[fi].src.domain * m + flows[fi].dst.domain] += rates[fi];
        }
        for &r in &pair_rate {
            let ratio = r / pair_cap;
            if ratio > max_pair_ratio {
                max_pair_ratio = ratio;
            }
        }

        // time to the earliest completion
        let mut dt = f64::INFINITY;
        for &fi in &active {
            if rates[fi] > 0.0 {
                let x = remaining[fi] / rates[fi];
                if x < dt {
                    dt = x;
                }
            }
        }
        if !dt.is_finite() {
            return Err(SimError::Stalled);
        }

        // drain and account
        for &fi in &active {
            let moved = rates[fi] * dt;
            remaining[fi] -= moved;
            let total_weight: f64 = flows[fi].routes.iter().map(|r| r.weight).sum();
            for route in &flows[fi].routes {
                let route_bytes = moved * route.weight / total_weight;
                for &l in &route.links {
                    link_bytes[l as usize] += route_bytes;
                }
            }
        }
        t += dt;

        // completions (residual clamp) and PLB repath hook
        let mut still_active = Vec::with_capacity(active.len());
        for &fi in &active {
            if remaining[fi] <= RESIDUAL_CLAMP {
                remaining[fi] = 0.0;
                flow_times[fi] = t;
            } else {
                still_active.push(fi);
            }
        }
        if policy.kind == PolicyKind::Plb {
            for &fi in &still_active {
                let flow = &mut flows[fi];
                let Some(mut st) = flow.plb else { continue };
                if st.cooldown > 0 {
                    st.cooldown -= 1;
                    flow.plb = Some(st);
                    continue;
                }
                if rates[fi] < policy.repath_threshold * st.solo_rate {
                    st.repath_count += 1;
                    let msg = Message {
                        id: flow.message,
                        src: flow.src,
                        dst: flow.dst,
                        bytes: 0,
                    };
                    let path = ecmp_route(topo, &msg, st.repath_count, policy.seed)?;
                    st.solo_rate = min_capacity(topo, &path.links);
                    st.cooldown = 1;
                    flow.routes = vec![Route {
                        links: path.links,
                        weight: 1.0,
                    }];
                    repaths += 1;
                }
                flow.plb = Some(st);
            }
        }
        active = still_active;
    }

    let mut message_times = vec![0.0f64; messages.len()];
    for (fi, flow) in flows.iter().enumerate() {
        let mi = flow.message as usize;
        if flow_times[fi] > message_times[mi] {
            message_times[mi] = flow_times[fi];
        }
    }

    let mut send_volume = vec![0.0f64; m * n];
    let mut recv_volume = vec![0.0f64; m * n];
    for d in 0..m {
        for rail in 0..n {
            send_volume[d * n + rail] = link_bytes[topo.nic_uplink(d, rail) as usize];
            recv_volume[d * n + rail] = link_bytes[topo.nic_downlink(rail, d) as usize];
        }
    }

    Ok(SimResult {
        policy: policy.clone(),
        flow_times,
        message_times,
        total_time: t,
        link_bytes,
        send_volume,
        recv_volume,
        max_pair_rate_ratio: max_pair_ratio,
        total_payload: messages.iter().map(|x| x.bytes).sum(),
        domains: m,
        rails: n,
        scheduler_loads,
        chunked: matches!(policy.kind, PolicyKind::RailsLpt | PolicyKind::Minrtt),
        repaths,
    })
}
