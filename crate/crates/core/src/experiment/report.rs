use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::master::RunReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    /// Uninstrumented single-replica baseline.
    Native,
    Run,
    /// Geometric-mean overhead of one (n, strategy, mechanism) group.
    Gm,
    /// Outcome count over a campaign.
    Histogram,
}

/// One report line. Fields that do not apply to a row kind are empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub kind: RowKind,
    pub scenario: String,
    pub workload: String,
    pub run: Option<u64>,
    pub n: Option<usize>,
    pub strategy: String,
    pub mechanism: String,
    pub fault: String,
    pub events: Option<u64>,
    pub total_cycles: Option<u64>,
    pub execution: Option<u64>,
    pub llc_miss: Option<u64>,
    pub notification: Option<u64>,
    pub compare: Option<u64>,
    pub proxy: Option<u64>,
    pub scaling: Option<u64>,
    /// `(total - native) / native`.
    pub overhead: Option<f64>,
    pub outcome: String,
    pub recoveries: Option<u64>,
    /// `event:N` pairs separated by spaces.
    pub replica_trace: String,
    pub count: Option<u64>,
}

pub const CSV_HEADER: &str = "kind,scenario,workload,run,n,strategy,mechanism,fault,events,total_cycles,\
execution,llc_miss,notification,compare,proxy,scaling,overhead,outcome,recoveries,replica_trace,count";

impl ReportRow {
    pub fn blank(kind: RowKind, scenario: &str) -> Self {
        Self {
            kind,
            scenario: scenario.to_string(),
            workload: String::new(),
            run: None,
            n: None,
            strategy: String::new(),
            mechanism: String::new(),
            fault: String::new(),
            events: None,
            total_cycles: None,
            execution: None,
            llc_miss: None,
            notification: None,
            compare: None,
            proxy: None,
            scaling: None,
            overhead: None,
            outcome: String::new(),
            recoveries: None,
            replica_trace: String::new(),
            count: None,
        }
    }

    /// Fills the cycle, event and trace columns from `report`.
    pub fn with_report(mut self, report: &RunReport) -> Self {
        let l = &report.ledger;
        self.events = Some(report.events_handled);
        self.total_cycles = Some(report.total_cycles());
        self.execution = Some(l.execution);
        self.llc_miss = Some(l.llc_miss);
        self.notification = Some(l.notification);
        self.compare = Some(l.compare);
        self.proxy = Some(l.proxy);
        self.scaling = Some(l.scaling);
        self.recoveries = Some(report.recoveries);
        let mut trace = String::new();
        for (i, (at, n)) in report.replica_trace.iter().enumerate() {
            if i > 0 {
                trace.push(' ');
            }
            let _ = write!(trace, "{at}:{n}");
        }
        self.replica_trace = trace;
        self
    }
}

/// `x` rounded to 6 significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.5e}").parse().unwrap_or(x)
}

/// Geometric mean of `(1 + o)` factors, minus one. `None` for no input.
pub fn geometric_mean(overheads: &[f64]) -> Option<f64> {
    if overheads.is_empty() {
        return None;
    }
    let log_sum: f64 = overheads.iter().map(|o| (1.0 + o).ln()).sum();
    Some((log_sum / overheads.len() as f64).exp() - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(format!("unknown format {s:?}; expected csv or json")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn rows_of(&self, kind: RowKind) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(move |r| r.kind == kind)
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => {
                let mut s = serde_json::to_string_pretty(self).expect("report serializes");
                s.push('\n');
                s
            }
            Format::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                if self.rows.is_empty() {
                    return format!("{CSV_HEADER}\n");
                }
                for row in &self.rows {
                    w.serialize(row).expect("report serializes");
                }
                String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8 csv")
            }
        }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn from_csv(text: &str) -> Result<Self, csv::Error> {
        let rows = csv::Reader::from_reader(text.as_bytes())
            .deserialize()
            .collect::<Result<_, _>>()?;
        Ok(Self { rows })
    }

    pub fn write(&self, path: &Path, format: Format) -> Result<(), ExperimentError> {
        std::fs::write(path, self.render(format)).map_err(|source| ExperimentError::Emit {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding() {
        assert_eq!(round_sig(0.0249561234), 0.0249561);
        assert_eq!(round_sig(123456789.0), 123457000.0);
        assert_eq!(round_sig(0.0), 0.0);
        assert_eq!(round_sig(-1.5), -1.5);
    }

    #[test]
    fn gm_of_equal_overheads() {
        assert!((geometric_mean(&[0.1, 0.1, 0.1]).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(geometric_mean(&[]), None);
    }

    #[test]
    fn csv_header_is_fixed() {
        let r = Report {
            rows: vec![ReportRow::blank(RowKind::Gm, "s")],
        };
        let text = r.render(Format::Csv);
        assert_eq!(text.lines().next(), Some(CSV_HEADER));
        assert_eq!(Report::default().render(Format::Csv).trim_end(), CSV_HEADER);
    }
}
