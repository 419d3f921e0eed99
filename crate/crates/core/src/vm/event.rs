use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Digest, VmFault};

/// What a replica asked the outside world to do, with its arguments.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum EventKind {
    Exit {
        code: u64,
    },
    /// Payload bytes are captured from replica memory at trap time so the
    /// vote covers output data.
    Write {
        payload: Vec<u8>,
    },
    Read {
        addr: u64,
        len: u64,
    },
    HintRaise,
    HintLower,
    Map {
        first_page: u64,
        pages: u64,
    },
    Halt,
    /// The replica crashed. Voted like any other event so a deterministic
    /// crash shared by all replicas is distinguishable from a faulty one.
    Fault(VmFault),
}

impl EventKind {
    pub fn tag(&self) -> EventTag {
        match self {
            EventKind::Exit { .. } => EventTag::Exit,
            EventKind::Write { .. } => EventTag::Write,
            EventKind::Read { .. } => EventTag::Read,
            EventKind::HintRaise => EventTag::HintRaise,
            EventKind::HintLower => EventTag::HintLower,
            EventKind::Map { .. } => EventTag::Map,
            EventKind::Halt => EventTag::Halt,
            EventKind::Fault(_) => EventTag::Fault,
        }
    }

    /// Whether proxying this event ends the run.
    pub fn is_terminal(&self) -> bool {
        matches!(
            self,
            EventKind::Exit { .. } | EventKind::Halt | EventKind::Fault(_)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventTag {
    Exit,
    Write,
    Read,
    HintRaise,
    HintLower,
    Map,
    Halt,
    Fault,
}

impl fmt::Display for EventTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EventTag::Exit => "exit",
            EventTag::Write => "write",
            EventTag::Read => "read",
            EventTag::HintRaise => "hint_raise",
            EventTag::HintLower => "hint_lower",
            EventTag::Map => "map",
            EventTag::Halt => "halt",
            EventTag::Fault => "fault",
        };
        f.write_str(s)
    }
}

/// A trap crossing the sphere of replication. Two events are equal iff
/// kind, arguments and state digest all match.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ExternalizationEvent {
    pub kind: EventKind,
    pub digest: Digest,
}
