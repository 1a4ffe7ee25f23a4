//! Experiment configuration: JSON schema, rate parsing, validation, and the
//! built-in scenario presets.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scheduling::{PolicyDescriptor, PolicyKind, SchedulingError};
use crate::topology::{RailTopology, TopologyConfig, TopologyError};
use crate::workload::{
    mixtral_phases, write_trace, MixtralMode, WorkloadError, WorkloadFamily, WorkloadSpec,
};
use crate::Bytes;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("cannot parse {0}: {1}")]
    Parse(PathBuf, serde_json::Error),
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    SchemaVersion(u32),
    #[error("bad rate {0:?}: expected bytes/s number or a bits/s string like \"100G\"")]
    BadRate(String),
    #[error("config needs at least one policy")]
    NoPolicies,
    #[error("config needs at least one seed")]
    NoSeeds,
    #[error("reference_policy {0:?} is not in the policy list")]
    ReferenceNotListed(String),
    #[error("duplicate policy {0:?}")]
    DuplicatePolicy(String),
    #[error("compute_time must be non-negative")]
    NegativeComputeTime,
    #[error("oversubscription must be positive, got {0}")]
    BadOversubscription(f64),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Policy(#[from] SchedulingError),
}

/// A link rate: either a plain number in bytes/s or a string in bits/s with
/// an optional k/M/G suffix ("100G" = 100 Gb/s = 12.5e9 B/s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RateSpec {
    BytesPerSec(f64),
    BitsPerSec(String),
}

impl RateSpec {
    pub fn bytes_per_sec(&self) -> Result<f64, ConfigError> {
        match self {
            RateSpec::BytesPerSec(v) => Ok(*v),
            RateSpec::BitsPerSec(s) => {
                let t = s.trim();
                let (num, mult) = match t.char_indices().rev().next() {
                    Some((i, 'k')) | Some((i, 'K')) => (&t[..i], 1e3),
                    Some((i, 'M')) => (&t[..i], 1e6),
                    Some((i, 'G')) => (&t[..i], 1e9),
                    _ => (t, 1.0),
                };
                let v: f64 = num
                    .trim()
                    .parse()
                    .map_err(|_| ConfigError::BadRate(s.clone()))?;
                Ok(v * mult / 8.0)
            }
        }
    }
}

/// Topology section of the experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologySection {
    pub domains: usize,
    pub rails: usize,
    pub r1: RateSpec,
    pub r2: RateSpec,
    #[serde(default)]
    pub spine_count: Option<usize>,
    /// Leaf-to-spine oversubscription factor; 1.0 (default) is non-blocking,
    /// 2.0 halves the leaf-spine capacity.
    #[serde(default)]
    pub oversubscription: Option<f64>,
}

impl TopologySection {
    pub fn build(&self) -> Result<(TopologyConfig, RailTopology), ConfigError> {
        let r2 = self.r2.bytes_per_sec()?;
        let spines = self.spine_count.unwrap_or(self.rails);
        let over = self.oversubscription.unwrap_or(1.0);
        if over <= 0.0 {
            return Err(ConfigError::BadOversubscription(over));
        }
        let leaf_spine = if spines > 0 {
            Some(self.domains as f64 * r2 / (spines as f64 * over))
        } else {
            None
        };
        let cfg = TopologyConfig {
            domains: self.domains,
            rails: self.rails,
            r1: self.r1.bytes_per_sec()?,
            r2,
            spine_count: spines,
            leaf_spine_capacity: leaf_spine,
        };
        let topo = RailTopology::new(&cfg)?;
        Ok((cfg, topo))
    }
}

fn default_compute_time() -> f64 {
    6e-3
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

/// Top-level experiment description, stored as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub preset: String,
    pub topology: TopologySection,
    pub workload: WorkloadSpec,
    pub policies: Vec<PolicyDescriptor>,
    pub seeds: Vec<u64>,
    pub reference_policy: PolicyKind,
    /// Compute phase of the serialized iteration model, seconds.
    #[serde(default = "default_compute_time")]
    pub compute_time: f64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_schema_version() -> u32 {
    SCHEMA_VERSION
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Io(path.to_path_buf(), e))?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| ConfigError::Parse(path.to_path_buf(), e))?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        fs::write(path, text).map_err(|e| ConfigError::Io(path.to_path_buf(), e))
    }

    /// Full structural validation; returns the built topology so callers see
    /// the resolved defaults.
    pub fn validate(&self) -> Result<(TopologyConfig, RailTopology), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::SchemaVersion(self.schema_version));
        }
        if self.policies.is_empty() {
            return Err(ConfigError::NoPolicies);
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::NoSeeds);
        }
        let mut seen = Vec::new();
        for p in &self.policies {
            p.validate()?;
            if seen.contains(&p.kind) {
                return Err(ConfigError::DuplicatePolicy(p.kind.name().into()));
            }
            seen.push(p.kind);
        }
        if !seen.contains(&self.reference_policy) {
            return Err(ConfigError::ReferenceNotListed(
                self.reference_policy.name().into(),
            ));
        }
        if self.compute_time < 0.0 {
            return Err(ConfigError::NegativeComputeTime);
        }
        self.workload.validate()?;
        self.topology.build()
    }
}

pub const PRESET_NAMES: [&str; 9] = [
    "uniform",
    "sparse-0.6",
    "sparse-0.4",
    "sparse-0.2",
    "sparse-0",
    "sender_skewed",
    "receiver_skewed",
    "mixtral_dense",
    "mixtral_sparse",
];

fn all_policies() -> Vec<PolicyDescriptor> {
    [
        PolicyKind::RailsLpt,
        PolicyKind::Ecmp,
        PolicyKind::Minrtt,
        PolicyKind::Plb,
        PolicyKind::Reps,
        PolicyKind::UniformOracle,
    ]
    .into_iter()
    .map(|kind| PolicyDescriptor {
        kind,
        ..PolicyDescriptor::default()
    })
    .collect()
}

fn base_workload(family: WorkloadFamily, total: Bytes) -> WorkloadSpec {
    WorkloadSpec {
        family,
        total_bytes_per_sender: total,
        k: 2,
        sparsity: 0.0,
        zipf_exponent: 1.2,
        seed: 0,
        trace_path: None,
    }
}

fn base_topology() -> TopologySection {
    TopologySection {
        domains: 8,
        rails: 8,
        r1: RateSpec::BitsPerSec("800G".into()),
        r2: RateSpec::BitsPerSec("100G".into()),
        spine_count: None,
        oversubscription: None,
    }
}

/// Builds the named scenario preset. Trace-driven presets reference a trace
/// file that [`write_preset`] generates next to the config.
pub fn preset_config(name: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        preset: name.to_string(),
        topology: base_topology(),
        workload: base_workload(WorkloadFamily::Uniform, 8 << 20),
        policies: all_policies(),
        seeds: vec![1, 2, 3],
        reference_policy: PolicyKind::Ecmp,
        compute_time: default_compute_time(),
        output: default_output(),
    };
    match name {
        "uniform" => {}
        "sparse-0.6" | "sparse-0.4" | "sparse-0.2" | "sparse-0" => {
            let sparsity: f64 = name["sparse-".len()..].parse().unwrap();
            cfg.workload = base_workload(WorkloadFamily::SparseTopk, 4 << 20);
            cfg.workload.sparsity = sparsity;
        }
        "sender_skewed" => {
            cfg.workload = base_workload(WorkloadFamily::SenderSkewed, 4 << 20);
        }
        "receiver_skewed" => {
            cfg.workload = base_workload(WorkloadFamily::ReceiverSkewed, 4 << 20);
        }
        "mixtral_dense" | "mixtral_sparse" => {
            cfg.workload = base_workload(WorkloadFamily::Trace, 0);
            cfg.workload.trace_path = Some(PathBuf::from(format!("{name}_trace.jsonl")));
            cfg.seeds = vec![1];
            // training-cluster presets model a 2:1 oversubscribed spine
            // layer; rail-aligned spraying never crosses it
            cfg.topology.oversubscription = Some(2.0);
        }
        other => return Err(ConfigError::UnknownPreset(other.to_string())),
    }
    Ok(cfg)
}

/// Writes the preset config to `out` (and the generated trace next to it
/// for the trace-driven presets).
pub fn write_preset(name: &str, out: &Path) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = preset_config(name)?;
    if cfg.workload.family == WorkloadFamily::Trace {
        let mode = match name {
            "mixtral_dense" => MixtralMode::Dense,
            _ => MixtralMode::Sparse,
        };
        let trace_path = out
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(format!("{name}_trace.jsonl"));
        let phases = mixtral_phases(mode, cfg.topology.domains, cfg.topology.rails);
        write_trace(&trace_path, &phases)?;
        cfg.workload.trace_path = Some(trace_path);
    }
    cfg.save(out)?;
    Ok(cfg)
}
