use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ScenarioError;
use crate::faults::Campaign;
use crate::master::{required_replicas, ReplicationConfig};
use crate::memory::ReplicaId;
use crate::platform::{
    place, AdaptiveConfig, CoreId, CostParams, Notification, NotificationMechanism,
    PlacementStrategy, PlatformConfig, Topology,
};
use crate::vm::{assemble_with, workloads, Program};

/// `[workload]`: a built-in program by `name`, or an assembly file by
/// `program` (relative to the scenario file).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSection {
    pub name: Option<String>,
    pub program: Option<PathBuf>,
    /// Overrides for `.equ` constants.
    pub params: BTreeMap<String, u64>,
    /// Successive results of the program's reads.
    pub input: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologySection {
    pub sockets: u32,
    pub cores_per_socket: u32,
    pub llc_capacity_bytes: u64,
    pub master_core: u32,
    /// Resilient cores. Non-empty turns on RCB mode.
    pub res_cores: Vec<u32>,
}

impl Default for TopologySection {
    fn default() -> Self {
        Self {
            sockets: 2,
            cores_per_socket: 6,
            llc_capacity_bytes: 12 << 20,
            master_core: 0,
            res_cores: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlacementSection {
    pub strategy: PlacementStrategy,
    pub adaptive: AdaptiveConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NotificationSection {
    pub mechanism: NotificationMechanism,
}

impl Default for NotificationSection {
    fn default() -> Self {
        Self {
            mechanism: NotificationMechanism::SyncMessage,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Placement,
    Mechanism,
    /// Replica counts.
    Replicas,
    /// Tolerated faults; runs with 2f+1 replicas.
    Faults,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SweepValue {
    Count(u64),
    Name(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<SweepValue>,
    /// Defaults to the scenario's own workload.
    #[serde(default)]
    pub workloads: Vec<WorkloadSection>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    /// Scenario id in report rows. Defaults to the file stem.
    pub id: Option<String>,
}

/// The scenario file as written.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioFile {
    pub workload: WorkloadSection,
    pub replication: ReplicationConfig,
    pub topology: TopologySection,
    pub costs: CostParams,
    pub placement: PlacementSection,
    pub notification: NotificationSection,
    pub campaign: Option<Campaign>,
    pub sweep: Option<SweepSection>,
    pub report: ReportSection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub label: String,
    pub program: Program,
    pub input: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepPoint {
    Placement(PlacementStrategy),
    Mechanism(NotificationMechanism),
    Replicas(usize),
    Faults(usize),
}

impl fmt::Display for SweepPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepPoint::Placement(s) => write!(f, "{s}"),
            SweepPoint::Mechanism(m) => write!(f, "{m}"),
            SweepPoint::Replicas(n) => write!(f, "n={n}"),
            SweepPoint::Faults(k) => write!(f, "f={k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
    pub workloads: Vec<Workload>,
}

/// A validated scenario, ready to run.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: String,
    pub workload: Workload,
    pub replication: ReplicationConfig,
    pub platform: PlatformConfig,
    pub campaign: Option<Campaign>,
    pub sweep: Option<Sweep>,
}

fn from_name<T: serde::de::DeserializeOwned>(n: String) -> Result<T, ScenarioError> {
    toml::Value::String(n.clone())
        .try_into()
        .map_err(|_| invalid(format!("unknown sweep value {n:?}")))
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scenario".into());
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, &id, base)
    }

    /// Parses and validates scenario text. `default_id` is used unless
    /// `[report] id` is set; program paths resolve against `base`.
    pub fn from_toml(text: &str, default_id: &str, base: &Path) -> Result<Self, ScenarioError> {
        let file: ScenarioFile =
            toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        Self::from_file(file, default_id, base)
    }

    pub fn from_file(
        file: ScenarioFile,
        default_id: &str,
        base: &Path,
    ) -> Result<Self, ScenarioError> {
        let workload = load_workload(&file.workload, base)?;
        let platform = build_platform(&file)?;
        let replication = file.replication;
        replication.validate().map_err(|e| invalid(e.to_string()))?;
        check_replicas(replication.n_initial, &platform)?;
        check_replicas(replication.max_replicas(), &platform)?;

        if let Some(c) = &file.campaign {
            if c.runs == 0 {
                return Err(invalid("campaign.runs must be at least 1"));
            }
            c.families
                .families()
                .map_err(|e| invalid(format!("campaign.families: {e}")))?;
            if c.families.channel_bit > 0.0
                && platform.notification.mechanism != NotificationMechanism::SharedPolling
            {
                return Err(invalid(
                    "channel_bit faults need the shared_polling mechanism",
                ));
            }
        }
        let sweep = match &file.sweep {
            None => None,
            Some(s) => Some(build_sweep(s, &workload, &replication, &platform, base)?),
        };
        Ok(Self {
            id: file
                .report
                .id
                .clone()
                .unwrap_or_else(|| default_id.to_string()),
            workload,
            replication,
            platform,
            campaign: file.campaign,
            sweep,
        })
    }
}

fn load_workload(w: &WorkloadSection, base: &Path) -> Result<Workload, ScenarioError> {
    let (label, source) = match (&w.name, &w.program) {
        (Some(name), None) => {
            let src = workloads::source(name).ok_or_else(|| {
                invalid(format!(
                    "unknown workload {name:?}; built-ins are {}",
                    workloads::NAMES.join(", ")
                ))
            })?;
            (name.clone(), src.to_string())
        }
        (None, Some(rel)) => {
            let path = base.join(rel);
            let src = std::fs::read_to_string(&path).map_err(|source| ScenarioError::Io {
                path: path.clone(),
                source,
            })?;
            let label = rel
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            (label, src)
        }
        (Some(_), Some(_)) => {
            return Err(invalid("workload: give either name or program, not both"))
        }
        (None, None) => return Err(invalid("workload: name or program is required")),
    };
    let program = assemble_with(&source, &w.params).map_err(|e| ScenarioError::Assemble {
        workload: label.clone(),
        error: e,
    })?;
    Ok(Workload {
        label,
        program,
        input: w.input.clone(),
    })
}

fn build_platform(file: &ScenarioFile) -> Result<PlatformConfig, ScenarioError> {
    let t = &file.topology;
    if t.sockets == 0 || t.cores_per_socket == 0 {
        return Err(invalid(
            "topology needs at least one socket and one core per socket",
        ));
    }
    let mut topology = Topology::uniform(
        t.sockets,
        t.cores_per_socket,
        t.llc_capacity_bytes,
        CoreId(t.master_core),
    )?;
    if !t.res_cores.is_empty() {
        let res: Vec<_> = t.res_cores.iter().map(|&c| CoreId(c)).collect();
        topology = topology.designate_rcb(&res)?;
    }
    let platform = PlatformConfig {
        topology,
        costs: file.costs.clone(),
        placement: file.placement.strategy.clone(),
        adaptive: file.placement.adaptive.clone(),
        notification: Notification::new(file.notification.mechanism),
    };
    platform.validate()?;
    Ok(platform)
}

/// `n` replicas can be placed under the platform's strategy.
fn check_replicas(n: usize, platform: &PlatformConfig) -> Result<(), ScenarioError> {
    let ids: Vec<_> = (0..n as u32).map(ReplicaId).collect();
    let strategy = match &platform.placement {
        PlacementStrategy::Adaptive => &platform.adaptive.initial,
        s => s,
    };
    place(strategy, &ids, &platform.topology, &BTreeSet::new())?;
    Ok(())
}

fn build_sweep(
    s: &SweepSection,
    workload: &Workload,
    replication: &ReplicationConfig,
    platform: &PlatformConfig,
    base: &Path,
) -> Result<Sweep, ScenarioError> {
    if s.values.is_empty() {
        return Err(invalid("sweep.values is empty"));
    }
    let parse = |v: &SweepValue| -> Result<SweepPoint, ScenarioError> {
        let name = |v: &SweepValue| match v {
            SweepValue::Name(n) => Ok(n.clone()),
            SweepValue::Count(c) => Err(invalid(format!("sweep value {c} should be a name"))),
        };
        let count = |v: &SweepValue| match v {
            SweepValue::Count(c) => Ok(*c as usize),
            SweepValue::Name(n) => Err(invalid(format!("sweep value {n:?} should be a number"))),
        };
        Ok(match s.axis {
            SweepAxis::Placement => SweepPoint::Placement(from_name(name(v)?)?),
            SweepAxis::Mechanism => SweepPoint::Mechanism(from_name(name(v)?)?),
            SweepAxis::Replicas => SweepPoint::Replicas(count(v)?),
            SweepAxis::Faults => SweepPoint::Faults(count(v)?),
        })
    };
    let points = s.values.iter().map(parse).collect::<Result<Vec<_>, _>>()?;
    for p in &points {
        let (config, platform) = apply_point(p, replication, platform);
        config
            .validate()
            .map_err(|e| invalid(format!("sweep value {p}: {e}")))?;
        check_replicas(config.n_initial, &platform)?;
    }
    let workloads = if s.workloads.is_empty() {
        vec![workload.clone()]
    } else {
        s.workloads
            .iter()
            .map(|w| load_workload(w, base))
            .collect::<Result<_, _>>()?
    };
    Ok(Sweep {
        axis: s.axis,
        points,
        workloads,
    })
}

/// Configuration for one sweep point, derived from the scenario's.
pub fn apply_point(
    point: &SweepPoint,
    replication: &ReplicationConfig,
    platform: &PlatformConfig,
) -> (ReplicationConfig, PlatformConfig) {
    let mut config = replication.clone();
    let mut platform = platform.clone();
    match point {
        SweepPoint::Placement(s) => platform.placement = s.clone(),
        SweepPoint::Mechanism(m) => platform.notification = Notification::new(*m),
        SweepPoint::Replicas(n) => {
            config.n_initial = *n;
            config.f_target = None;
            config.max_replicas = None;
        }
        SweepPoint::Faults(f) => {
            config.n_initial = required_replicas(*f);
            config.f_target = Some(*f);
            config.max_replicas = None;
        }
    }
    (config, platform)
}
