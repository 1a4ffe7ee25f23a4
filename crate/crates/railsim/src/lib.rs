//! Flow-level simulator and scheduling library for all-to-all communication
//! over rail-optimized datacenter topologies.
//!
//! The crate models a cluster of `M` compute domains with `N` NICs each, where
//! the n-th NIC of every domain attaches to the same leaf switch ("rail").
//! On top of that topology it provides:
//!
//! * traffic-matrix generators for uniform, sparse top-k, sender-skewed,
//!   receiver-skewed, and trace-replay workloads (`workload`),
//! * the LPT spraying scheduler plus the continuous uniform allocation and
//!   baseline policy descriptors (`scheduling`),
//! * closed-form bottleneck bounds, load matrices, and MSE metrics together
//!   with a brute-force oracle for small instances (`analysis`),
//! * a deterministic max-min-fair fluid simulator (`flowsim`),
//! * evaluation metrics (`metrics`) and an experiment runner with JSON
//!   configs, presets, and CSV output (`config`, `runner`).

pub mod analysis;
pub mod config;
pub mod flowsim;
pub mod metrics;
pub mod num;
pub mod runner;
pub mod scheduling;
pub mod topology;
pub mod workload;

pub use num::Scalar;
pub use topology::{GpuId, LinkId, Path, RailTopology, TopologyConfig};

/// Traffic volume in bytes.
pub type Bytes = u64;
/// Link rate in bytes per second.
pub type Rate = f64;
/// Simulated time in seconds.
pub type Seconds = f64;

/// GPU-to-GPU traffic matrix holding exact integer byte volumes.
pub type ByteGpuMatrix = workload::GpuTrafficMatrix<Bytes>;
/// Domain-to-domain traffic matrix holding exact integer byte volumes.
pub type ByteDomainMatrix = workload::DomainTrafficMatrix<Bytes>;
/// Continuous allocation matrix over `f64` fractions.
pub type FracAllocation = scheduling::AllocationMatrix<f64>;
