use std::fmt;

use serde::{Deserialize, Serialize};

use crate::master::{RunReport, Termination};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeClass {
    Masked,
    DetectedCorrected,
    DetectedUnrecoverable,
    Sdc,
    Hang,
}

impl OutcomeClass {
    pub const ALL: [OutcomeClass; 5] = [
        OutcomeClass::Masked,
        OutcomeClass::DetectedCorrected,
        OutcomeClass::DetectedUnrecoverable,
        OutcomeClass::Sdc,
        OutcomeClass::Hang,
    ];

    pub fn label(self) -> &'static str {
        match self {
            OutcomeClass::Masked => "masked",
            OutcomeClass::DetectedCorrected => "detected_corrected",
            OutcomeClass::DetectedUnrecoverable => "detected_unrecoverable",
            OutcomeClass::Sdc => "sdc",
            OutcomeClass::Hang => "hang",
        }
    }
}

impl fmt::Display for OutcomeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Classifies a run against the fault-free golden run of the same program
/// and inputs. Precedence: Hang, DetectedUnrecoverable, SDC,
/// DetectedCorrected, Masked.
pub fn classify_outcome(report: &RunReport, golden: &RunReport) -> OutcomeClass {
    match report.termination {
        Termination::Hang(_) => return OutcomeClass::Hang,
        Termination::NoMajority => return OutcomeClass::DetectedUnrecoverable,
        _ => {}
    }
    // A crash the golden run does not share was noticed, not silent.
    if matches!(report.termination, Termination::Crash(_))
        && report.termination != golden.termination
    {
        return OutcomeClass::DetectedUnrecoverable;
    }
    let same_output = report.output_log.len() == golden.output_log.len()
        && report
            .output_log
            .iter()
            .zip(&golden.output_log)
            .all(|(a, b)| a.bytes == b.bytes);
    if !same_output
        || report.exit_code != golden.exit_code
        || report.termination != golden.termination
    {
        return OutcomeClass::Sdc;
    }
    if report.minority_votes > 0 {
        OutcomeClass::DetectedCorrected
    } else {
        OutcomeClass::Masked
    }
}
