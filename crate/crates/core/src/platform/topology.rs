use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::PlatformError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CoreId(pub u32);

impl fmt::Display for CoreId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cpu{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CoreKind {
    /// Hardware-hardened core; runs the master in RCB mode.
    ResCore,
    NonResCore,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Core {
    pub id: CoreId,
    pub kind: CoreKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Socket {
    pub id: u32,
    pub cores: Vec<Core>,
    pub llc_capacity_bytes: u64,
}

/// Sockets, their cores and shared caches, and where the master runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    sockets: Vec<Socket>,
    master_core: CoreId,
}

/// Two sockets of six cores, 12 MiB of shared L3 each.
impl Default for Topology {
    fn default() -> Self {
        Self::uniform(2, 6, 12 << 20, CoreId(0)).expect("default topology is valid")
    }
}

impl Topology {
    pub fn new(sockets: Vec<Socket>, master_core: CoreId) -> Result<Self, PlatformError> {
        let mut seen = BTreeSet::new();
        for core in sockets.iter().flat_map(|s| &s.cores) {
            if !seen.insert(core.id) {
                return Err(PlatformError::DuplicateCore(core.id));
            }
        }
        let topo = Self {
            sockets,
            master_core,
        };
        let master = topo
            .core(master_core)
            .ok_or(PlatformError::UnknownCore(master_core))?;
        if topo.rcb_mode() && master.kind != CoreKind::ResCore {
            return Err(PlatformError::MasterNotResilient(master_core));
        }
        Ok(topo)
    }

    /// `sockets × cores_per_socket` NonResCores numbered socket-major.
    pub fn uniform(
        sockets: u32,
        cores_per_socket: u32,
        llc_capacity_bytes: u64,
        master_core: CoreId,
    ) -> Result<Self, PlatformError> {
        let sockets = (0..sockets)
            .map(|s| Socket {
                id: s,
                cores: (0..cores_per_socket)
                    .map(|c| Core {
                        id: CoreId(s * cores_per_socket + c),
                        kind: CoreKind::NonResCore,
                    })
                    .collect(),
                llc_capacity_bytes,
            })
            .collect();
        Self::new(sockets, master_core)
    }

    /// Marks `res_cores` resilient and everything else non-resilient. The
    /// master must sit on one of the resilient cores.
    pub fn designate_rcb(&self, res_cores: &[CoreId]) -> Result<Self, PlatformError> {
        if res_cores.is_empty() {
            return Err(PlatformError::Config(
                "RCB mode needs at least one ResCore".into(),
            ));
        }
        for id in res_cores {
            if self.core(*id).is_none() {
                return Err(PlatformError::UnknownCore(*id));
            }
        }
        if !res_cores.contains(&self.master_core) {
            return Err(PlatformError::MasterNotResilient(self.master_core));
        }
        let mut next = self.clone();
        for core in next.sockets.iter_mut().flat_map(|s| s.cores.iter_mut()) {
            core.kind = if res_cores.contains(&core.id) {
                CoreKind::ResCore
            } else {
                CoreKind::NonResCore
            };
        }
        Ok(next)
    }

    pub fn sockets(&self) -> &[Socket] {
        &self.sockets
    }

    pub fn master_core(&self) -> CoreId {
        self.master_core
    }

    pub fn cores(&self) -> impl Iterator<Item = &Core> {
        self.sockets.iter().flat_map(|s| s.cores.iter())
    }

    pub fn core(&self, id: CoreId) -> Option<&Core> {
        self.cores().find(|c| c.id == id)
    }

    /// Index into [`Topology::sockets`] of the socket holding `core`.
    pub fn socket_index(&self, core: CoreId) -> Option<usize> {
        self.sockets
            .iter()
            .position(|s| s.cores.iter().any(|c| c.id == core))
    }

    pub fn same_socket(&self, a: CoreId, b: CoreId) -> bool {
        self.socket_index(a).is_some() && self.socket_index(a) == self.socket_index(b)
    }

    /// Some core is resilient, so replicas are confined to NonResCores.
    pub fn rcb_mode(&self) -> bool {
        self.cores().any(|c| c.kind == CoreKind::ResCore)
    }

    /// May host a replica: not the master's core and, in RCB mode, not a
    /// ResCore.
    pub fn eligible(&self, core: CoreId) -> bool {
        match self.core(core) {
            Some(c) => c.id != self.master_core && c.kind == CoreKind::NonResCore,
            None => false,
        }
    }

    pub fn max_replicas(&self) -> usize {
        self.cores().filter(|c| self.eligible(c.id)).count()
    }

    pub fn core_count(&self) -> usize {
        self.cores().count()
    }
}
