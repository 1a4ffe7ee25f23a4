//! Rail-optimized network model.
//!
//! `M` domains hold `N` GPUs each; GPU `(d, n)` owns NIC `(d, n)`, and the
//! n-th NIC of every domain attaches to leaf switch `n`, forming `N` parallel
//! rails. A spine layer keeps the leaves fully connected for rail-crossing
//! routes. Links are unidirectional; the send and receive directions of a NIC
//! are independent capacities of `R2` each. Intra-domain forwarding is modeled
//! as one shared up-link and one shared down-link of rate `R1` per (gpu, nic)
//! pair.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("need at least 2 domains, got {0}")]
    TooFewDomains(usize),
    #[error("need at least 1 rail, got {0}")]
    TooFewRails(usize),
    #[error("need at least 1 spine switch, got {0}")]
    TooFewSpines(usize),
    #[error("intra-domain rate R1 ({r1}) must exceed inter-domain rate R2 ({r2})")]
    RateOrder { r1: f64, r2: f64 },
    #[error("link rates must be strictly positive")]
    NonPositiveRate,
    #[error("domain index {0} out of range")]
    DomainOutOfRange(usize),
    #[error("gpu/rail index {0} out of range")]
    RailOutOfRange(usize),
    #[error("spine index {0} out of range")]
    SpineOutOfRange(usize),
    #[error("source and destination domain are both {0}")]
    SameDomain(usize),
}

/// A GPU identified by (domain, gpu-index-within-domain).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GpuId {
    pub domain: usize,
    pub gpu: usize,
}

impl GpuId {
    pub fn new(domain: usize, gpu: usize) -> Self {
        GpuId { domain, gpu }
    }
}

/// Directed capacitated link. Every link of the fabric appears exactly once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LinkId {
    /// Intra-domain forwarding from GPU `gpu` toward NIC `nic` (`gpu != nic`).
    GpuToNicUp { domain: usize, gpu: usize, nic: usize },
    /// Intra-domain forwarding from NIC `nic` toward GPU `gpu` (`gpu != nic`).
    NicToGpuDown { domain: usize, nic: usize, gpu: usize },
    /// NIC uplink onto its rail's leaf switch.
    NicToLeafUp { domain: usize, rail: usize },
    /// Leaf switch downlink into a domain's NIC on that rail.
    LeafToNicDown { rail: usize, domain: usize },
    LeafToSpineUp { leaf: usize, spine: usize },
    SpineToLeafDown { spine: usize, leaf: usize },
}

/// Graph node, used to check path contiguity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Node {
    Gpu(usize, usize),
    Nic(usize, usize),
    Leaf(usize),
    Spine(usize),
}

impl LinkId {
    pub fn tail(&self) -> Node {
        match *self {
            LinkId::GpuToNicUp { domain, gpu, .. } => Node::Gpu(domain, gpu),
            LinkId::NicToGpuDown { domain, nic, .. } => Node::Nic(domain, nic),
            LinkId::NicToLeafUp { domain, rail } => Node::Nic(domain, rail),
            LinkId::LeafToNicDown { rail, .. } => Node::Leaf(rail),
            LinkId::LeafToSpineUp { leaf, .. } => Node::Leaf(leaf),
            LinkId::SpineToLeafDown { spine, .. } => Node::Spine(spine),
        }
    }

    pub fn head(&self) -> Node {
        match *self {
            LinkId::GpuToNicUp { domain, nic, .. } => Node::Nic(domain, nic),
            LinkId::NicToGpuDown { domain, gpu, .. } => Node::Gpu(domain, gpu),
            LinkId::NicToLeafUp { rail, .. } => Node::Leaf(rail),
            LinkId::LeafToNicDown { rail, domain } => Node::Nic(domain, rail),
            LinkId::LeafToSpineUp { spine, .. } => Node::Spine(spine),
            LinkId::SpineToLeafDown { leaf, .. } => Node::Leaf(leaf),
        }
    }

    pub fn is_spine(&self) -> bool {
        matches!(
            self,
            LinkId::LeafToSpineUp { .. } | LinkId::SpineToLeafDown { .. }
        )
    }
}

/// An ordered, contiguous sequence of links from a source GPU to a
/// destination GPU. Stored as dense link indices into the topology's link
/// table for fast simulation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Path {
    pub links: Vec<u32>,
    pub src: GpuId,
    pub dst: GpuId,
}

/// Topology parameters. Rates are bytes per second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyConfig {
    /// Number of compute domains (M).
    pub domains: usize,
    /// NICs/GPUs per domain (N), one rail per NIC index.
    pub rails: usize,
    /// Intra-domain link rate (bytes/s).
    pub r1: f64,
    /// Inter-domain NIC / leaf port rate (bytes/s).
    pub r2: f64,
    pub spine_count: usize,
    /// Per leaf-spine link rate (bytes/s). `None` picks the non-blocking
    /// default `M * R2 / spine_count`.
    pub leaf_spine_capacity: Option<f64>,
}

/// Validated rail topology with its enumerated link table. Immutable after
/// construction; safe to share read-only across concurrent runs.
#[derive(Debug, Clone)]
pub struct RailTopology {
    m: usize,
    n: usize,
    r1: f64,
    r2: f64,
    spine_count: usize,
    leaf_spine_capacity: f64,
    links: Vec<LinkId>,
    capacities: Vec<f64>,
    // offsets into the link table per kind
    base_nic_down: usize,
    base_nic_leaf: usize,
    base_leaf_nic: usize,
    base_leaf_spine: usize,
    base_spine_leaf: usize,
}

/// Builds and validates a topology from its parameters.
pub fn build_topology(config: &TopologyConfig) -> Result<RailTopology, TopologyError> {
    RailTopology::new(config)
}

impl RailTopology {
    pub fn new(config: &TopologyConfig) -> Result<Self, TopologyError> {
        let (m, n, s) = (config.domains, config.rails, config.spine_count);
        if m < 2 {
            return Err(TopologyError::TooFewDomains(m));
        }
        if n < 1 {
            return Err(TopologyError::TooFewRails(n));
        }
        if s < 1 {
            return Err(TopologyError::TooFewSpines(s));
        }
        if !(config.r1 > 0.0 && config.r2 > 0.0) {
            return Err(TopologyError::NonPositiveRate);
        }
        if config.r1 <= config.r2 {
            return Err(TopologyError::RateOrder {
                r1: config.r1,
                r2: config.r2,
            });
        }
        let leaf_spine = config
            .leaf_spine_capacity
            .unwrap_or(m as f64 * config.r2 / s as f64);
        if !(leaf_spine > 0.0) {
            return Err(TopologyError::NonPositiveRate);
        }

        let intra = m * n * (n.saturating_sub(1));
        let mut links = Vec::with_capacity(2 * intra + 2 * m * n + 2 * n * s);
        let mut capacities = Vec::with_capacity(links.capacity());
        for d in 0..m {
            for g in 0..n {
                for nic in 0..n {
                    if nic != g {
                        links.push(LinkId::GpuToNicUp { domain: d, gpu: g, nic });
                        capacities.push(config.r1);
                    }
                }
            }
        }
        let base_nic_down = links.len();
        for d in 0..m {
            for nic in 0..n {
                for g in 0..n {
                    if g != nic {
                        links.push(LinkId::NicToGpuDown { domain: d, nic, gpu: g });
                        capacities.push(config.r1);
                    }
                }
            }
        }
        let base_nic_leaf = links.len();
        for d in 0..m {
            for rail in 0..n {
                links.push(LinkId::NicToLeafUp { domain: d, rail });
                capacities.push(config.r2);
            }
        }
        let base_leaf_nic = links.len();
        for rail in 0..n {
            for d in 0..m {
                links.push(LinkId::LeafToNicDown { rail, domain: d });
                capacities.push(config.r2);
            }
        }
        let base_leaf_spine = links.len();
        for leaf in 0..n {
            for spine in 0..s {
                links.push(LinkId::LeafToSpineUp { leaf, spine });
                capacities.push(leaf_spine);
            }
        }
        let base_spine_leaf = links.len();
        for spine in 0..s {
            for leaf in 0..n {
                links.push(LinkId::SpineToLeafDown { spine, leaf });
                capacities.push(leaf_spine);
            }
        }

        Ok(RailTopology {
            m,
            n,
            r1: config.r1,
            r2: config.r2,
            spine_count: s,
            leaf_spine_capacity: leaf_spine,
            links,
            capacities,
            base_nic_down,
            base_nic_leaf,
            base_leaf_nic,
            base_leaf_spine,
            base_spine_leaf,
        })
    }

    pub fn domains(&self) -> usize {
        self.m
    }

    pub fn rails(&self) -> usize {
        self.n
    }

    pub fn r1(&self) -> f64 {
        self.r1
    }

    pub fn r2(&self) -> f64 {
        self.r2
    }

    pub fn spine_count(&self) -> usize {
        self.spine_count
    }

    pub fn leaf_spine_capacity(&self) -> f64 {
        self.leaf_spine_capacity
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn link(&self, idx: u32) -> LinkId {
        self.links[idx as usize]
    }

    pub fn capacity(&self, idx: u32) -> f64 {
        self.capacities[idx as usize]
    }

    pub fn capacities(&self) -> &[f64] {
        &self.capacities
    }

    /// Maximum achievable unidirectional throughput between two distinct
    /// domains: `N * R2`, the total capacity of the forward cut of NIC
    /// uplinks out of the source domain.
    pub fn domain_pair_capacity(&self, k: usize, f: usize) -> Result<f64, TopologyError> {
        self.check_domain(k)?;
        self.check_domain(f)?;
        if k == f {
            return Err(TopologyError::SameDomain(k));
        }
        Ok(self.n as f64 * self.r2)
    }

    fn check_domain(&self, d: usize) -> Result<(), TopologyError> {
        if d >= self.m {
            return Err(TopologyError::DomainOutOfRange(d));
        }
        Ok(())
    }

    fn check_rail(&self, r: usize) -> Result<(), TopologyError> {
        if r >= self.n {
            return Err(TopologyError::RailOutOfRange(r));
        }
        Ok(())
    }

    // Dense link index helpers. Index layout mirrors construction order.

    pub fn gpu_up_link(&self, domain: usize, gpu: usize, nic: usize) -> u32 {
        debug_assert!(gpu != nic);
        let adj = if nic < gpu { nic } else { nic - 1 };
        (domain * self.n * (self.n - 1) + gpu * (self.n - 1) + adj) as u32
    }

    pub fn nic_down_link(&self, domain: usize, nic: usize, gpu: usize) -> u32 {
        debug_assert!(gpu != nic);
        let adj = if gpu < nic { gpu } else { gpu - 1 };
        (self.base_nic_down + domain * self.n * (self.n - 1) + nic * (self.n - 1) + adj) as u32
    }

    pub fn nic_uplink(&self, domain: usize, rail: usize) -> u32 {
        (self.base_nic_leaf + domain * self.n + rail) as u32
    }

    pub fn nic_downlink(&self, rail: usize, domain: usize) -> u32 {
        (self.base_leaf_nic + rail * self.m + domain) as u32
    }

    pub fn leaf_spine_link(&self, leaf: usize, spine: usize) -> u32 {
        (self.base_leaf_spine + leaf * self.spine_count + spine) as u32
    }

    pub fn spine_leaf_link(&self, spine: usize, leaf: usize) -> u32 {
        (self.base_spine_leaf + spine * self.n + leaf) as u32
    }

    /// Rail-aligned path from `src` to `dst` on rail `rail`. Uses only the
    /// NIC pair of that rail and its leaf switch; never crosses a spine.
    /// Intra-domain hops are included only when the GPU index differs from
    /// the rail index.
    pub fn rail_path(&self, src: GpuId, dst: GpuId, rail: usize) -> Result<Path, TopologyError> {
        self.check_domain(src.domain)?;
        self.check_domain(dst.domain)?;
        self.check_rail(src.gpu)?;
        self.check_rail(dst.gpu)?;
        self.check_rail(rail)?;
        if src.domain == dst.domain {
            return Err(TopologyError::SameDomain(src.domain));
        }
        let mut links = Vec::with_capacity(4);
        if src.gpu != rail {
            links.push(self.gpu_up_link(src.domain, src.gpu, rail));
        }
        links.push(self.nic_uplink(src.domain, rail));
        links.push(self.nic_downlink(rail, dst.domain));
        if dst.gpu != rail {
            links.push(self.nic_down_link(dst.domain, rail, dst.gpu));
        }
        Ok(Path { links, src, dst })
    }

    /// Spine-crossing path from `src` (injecting via `src_nic`) to `dst`
    /// (delivered via `dst_nic`) through spine `spine`. When both NIC indices
    /// coincide the direct rail path is returned instead.
    pub fn spine_path(
        &self,
        src: GpuId,
        src_nic: usize,
        dst: GpuId,
        dst_nic: usize,
        spine: usize,
    ) -> Result<Path, TopologyError> {
        self.check_domain(src.domain)?;
        self.check_domain(dst.domain)?;
        self.check_rail(src.gpu)?;
        self.check_rail(dst.gpu)?;
        self.check_rail(src_nic)?;
        self.check_rail(dst_nic)?;
        if spine >= self.spine_count {
            return Err(TopologyError::SpineOutOfRange(spine));
        }
        if src.domain == dst.domain {
            return Err(TopologyError::SameDomain(src.domain));
        }
        if src_nic == dst_nic {
            return self.rail_path(src, dst, src_nic);
        }
        let mut links = Vec::with_capacity(6);
        if src.gpu != src_nic {
            links.push(self.gpu_up_link(src.domain, src.gpu, src_nic));
        }
        links.push(self.nic_uplink(src.domain, src_nic));
        links.push(self.leaf_spine_link(src_nic, spine));
        links.push(self.spine_leaf_link(spine, dst_nic));
        links.push(self.nic_downlink(dst_nic, dst.domain));
        if dst.gpu != dst_nic {
            links.push(self.nic_down_link(dst.domain, dst_nic, dst.gpu));
        }
        Ok(Path { links, src, dst })
    }

    /// Walks a path and checks that each link's head equals the next link's
    /// tail.
    pub fn is_contiguous(&self, path: &Path) -> bool {
        path.links
            .windows(2)
            .all(|w| self.link(w[0]).head() == self.link(w[1]).tail())
    }
}
