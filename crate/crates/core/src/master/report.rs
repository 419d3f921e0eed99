use std::fmt;

use serde::{Deserialize, Serialize};

use super::OutputRecord;
use crate::faults::{InjectionStats, OutcomeClass};
use crate::platform::{CoreId, CostLedger, PlacementStrategy};
use crate::vm::{Digest, EventTag, VmFault};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HangReason {
    /// No replica reached an event within the instruction watermark.
    AllStalled,
    EventCap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Exit {
        code: u64,
    },
    Halt,
    /// Voted crash of the protected program.
    Crash(VmFault),
    NoMajority,
    Hang(HangReason),
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Termination::Exit { code } => write!(f, "exit({code})"),
            Termination::Halt => f.write_str("halt"),
            Termination::Crash(fault) => write!(f, "crash: {fault}"),
            Termination::NoMajority => f.write_str("no majority"),
            Termination::Hang(HangReason::AllStalled) => f.write_str("hang: all replicas stalled"),
            Termination::Hang(HangReason::EventCap) => f.write_str("hang: event cap reached"),
        }
    }
}

/// The voted event of one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub tag: EventTag,
    pub digest: Digest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    /// Outcome as the master saw it, without a golden run: SDC cannot be
    /// told apart from Masked/DetectedCorrected here. See
    /// [`crate::faults::classify_outcome`].
    pub outcome: OutcomeClass,
    pub termination: Termination,
    pub events_handled: u64,
    pub ledger: CostLedger,
    pub output_log: Vec<OutputRecord>,
    pub exit_code: Option<u64>,
    /// `(event index, N)` at the start and after every change.
    pub replica_trace: Vec<(u64, usize)>,
    /// Minority replicas repaired by a state copy.
    pub recoveries: u64,
    /// Votes that found at least one dissenting or missing replica.
    pub minority_votes: u64,
    pub migrations: u64,
    pub retired: u64,
    /// A replica was lost for lack of a spare core.
    pub degraded: bool,
    pub scale_refusals: u64,
    pub injection: InjectionStats,
    /// `(event index, layout)` at the start and after every adaptation.
    pub placement_trace: Vec<(u64, PlacementStrategy)>,
    pub event_trace: Vec<TraceEntry>,
    /// Cycles charged in each round.
    pub round_cycles: Vec<u64>,
    /// Instructions retired by a surviving replica.
    pub instructions: u64,
    pub mapped_pages: Vec<u32>,
    /// Cores hosting replicas when the run ended.
    pub cores: Vec<CoreId>,
    pub peak_backing_bytes: u64,
}

impl RunReport {
    pub fn empty() -> Self {
        Self {
            outcome: OutcomeClass::Masked,
            termination: Termination::Halt,
            events_handled: 0,
            ledger: CostLedger::default(),
            output_log: Vec::new(),
            exit_code: None,
            replica_trace: Vec::new(),
            recoveries: 0,
            minority_votes: 0,
            migrations: 0,
            retired: 0,
            degraded: false,
            scale_refusals: 0,
            injection: InjectionStats::default(),
            placement_trace: Vec::new(),
            event_trace: Vec::new(),
            round_cycles: Vec::new(),
            instructions: 0,
            mapped_pages: Vec::new(),
            cores: Vec::new(),
            peak_backing_bytes: 0,
        }
    }

    pub fn total_cycles(&self) -> u64 {
        self.ledger.total()
    }

    pub fn output_bytes(&self) -> Vec<&[u8]> {
        self.output_log.iter().map(|r| r.bytes.as_slice()).collect()
    }

    pub fn final_replicas(&self) -> usize {
        self.replica_trace.last().map_or(0, |&(_, n)| n)
    }
}
