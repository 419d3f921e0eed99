use std::collections::BTreeMap;

use super::report::{geometric_mean, round_sig, Report, ReportRow, RowKind};
use super::scenario::{apply_point, Scenario, Sweep, Workload};
use super::{map_indexed, Execution, ExperimentError, ScenarioError};
use crate::faults::{classify_outcome, FaultSpec, OutcomeClass, Profile};
use crate::master::{run_native, run_replicated, ExternalWorld, ReplicationConfig, RunReport};
use crate::platform::PlatformConfig;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Options {
    /// Replaces the campaign seed of the scenario.
    pub seed: Option<u64>,
    pub execution: Execution,
}

fn world(w: &Workload) -> ExternalWorld {
    ExternalWorld::new(w.input.iter().map(|s| s.as_bytes().to_vec()))
}

/// Fault-free uninstrumented baseline of `w`.
pub fn golden_run(
    w: &Workload,
    config: &ReplicationConfig,
    platform: &PlatformConfig,
) -> Result<RunReport, ExperimentError> {
    Ok(run_native(&w.program, config, platform, world(w))?)
}

fn overhead(total: u64, native: u64) -> Option<f64> {
    (native > 0).then(|| (total as f64 - native as f64) / native as f64)
}

fn native_row(id: &str, w: &Workload, platform: &PlatformConfig, golden: &RunReport) -> ReportRow {
    ReportRow {
        workload: w.label.clone(),
        n: Some(1),
        strategy: platform.placement.to_string(),
        mechanism: "none".into(),
        overhead: Some(0.0),
        outcome: golden.termination.to_string(),
        ..ReportRow::blank(RowKind::Native, id)
    }
    .with_report(golden)
}

struct RunRowSpec<'a> {
    id: &'a str,
    workload: &'a Workload,
    run: Option<u64>,
    config: &'a ReplicationConfig,
    platform: &'a PlatformConfig,
    fault: Option<&'a FaultSpec>,
}

fn replicated_row(
    spec: RunRowSpec<'_>,
    golden: &RunReport,
) -> Result<(ReportRow, f64), ExperimentError> {
    let faults: Vec<FaultSpec> = spec.fault.cloned().into_iter().collect();
    let report = run_replicated(
        &spec.workload.program,
        spec.config,
        spec.platform,
        &faults,
        world(spec.workload),
    )?;
    let outcome = classify_outcome(&report, golden);
    let raw = overhead(report.total_cycles(), golden.total_cycles()).unwrap_or(0.0);
    let row = ReportRow {
        workload: spec.workload.label.clone(),
        run: spec.run,
        n: Some(spec.config.n_initial),
        strategy: spec.platform.placement.to_string(),
        mechanism: spec.platform.notification.mechanism.to_string(),
        fault: spec.fault.map(|f| f.to_string()).unwrap_or_default(),
        overhead: Some(round_sig(raw)),
        outcome: outcome.label().to_string(),
        ..ReportRow::blank(RowKind::Run, spec.id)
    }
    .with_report(&report);
    Ok((row, raw))
}

/// Native baseline row followed by one replicated run.
pub fn cmd_run(scenario: &Scenario, _options: &Options) -> Result<Report, ExperimentError> {
    let golden = golden_run(
        &scenario.workload,
        &scenario.replication,
        &scenario.platform,
    )?;
    let (row, _) = replicated_row(
        RunRowSpec {
            id: &scenario.id,
            workload: &scenario.workload,
            run: None,
            config: &scenario.replication,
            platform: &scenario.platform,
            fault: None,
        },
        &golden,
    )?;
    Ok(Report {
        rows: vec![
            native_row(
                &scenario.id,
                &scenario.workload,
                &scenario.platform,
                &golden,
            ),
            row,
        ],
    })
}

/// Native row, one row per injected run in index order, then the outcome
/// histogram.
pub fn cmd_campaign(scenario: &Scenario, options: &Options) -> Result<Report, ExperimentError> {
    let mut campaign = scenario
        .campaign
        .clone()
        .ok_or_else(|| ScenarioError::Invalid("scenario has no [campaign] section".into()))?;
    if let Some(seed) = options.seed {
        campaign.seed = seed;
    }
    let w = &scenario.workload;
    let golden = golden_run(w, &scenario.replication, &scenario.platform)?;
    let clean = run_replicated(
        &w.program,
        &scenario.replication,
        &scenario.platform,
        &[],
        world(w),
    )?;
    let profile = Profile {
        instructions: clean.instructions,
        events: clean.events_handled,
        pages: clean.mapped_pages.clone(),
        replicas: scenario.replication.n_initial as u32,
        cores: clean.cores.clone(),
    };
    let specs = campaign
        .plan(&profile)
        .map_err(|e| ExperimentError::Plan(e.to_string()))?;

    let rows = map_indexed(specs.len(), options.execution, |i| {
        replicated_row(
            RunRowSpec {
                id: &scenario.id,
                workload: w,
                run: Some(i as u64),
                config: &scenario.replication,
                platform: &scenario.platform,
                fault: Some(&specs[i]),
            },
            &golden,
        )
        .map(|(row, _)| row)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;

    let mut histogram: BTreeMap<&str, u64> =
        OutcomeClass::ALL.iter().map(|c| (c.label(), 0)).collect();
    for row in &rows {
        *histogram
            .get_mut(row.outcome.as_str())
            .expect("known outcome") += 1;
    }
    let mut report = Report {
        rows: vec![native_row(&scenario.id, w, &scenario.platform, &golden)],
    };
    report.rows.extend(rows);
    for class in OutcomeClass::ALL {
        report.rows.push(ReportRow {
            workload: w.label.clone(),
            n: Some(scenario.replication.n_initial),
            strategy: scenario.platform.placement.to_string(),
            mechanism: scenario.platform.notification.mechanism.to_string(),
            outcome: class.label().to_string(),
            count: Some(histogram[class.label()]),
            ..ReportRow::blank(RowKind::Histogram, &scenario.id)
        });
    }
    Ok(report)
}

/// One native row per workload, one run row per (point, workload), then a
/// geometric-mean row per point.
pub fn cmd_sweep(scenario: &Scenario, options: &Options) -> Result<Report, ExperimentError> {
    let sweep: &Sweep = scenario
        .sweep
        .as_ref()
        .ok_or_else(|| ScenarioError::Invalid("scenario has no [sweep] section".into()))?;
    let id = scenario.id.as_str();
    let goldens = map_indexed(sweep.workloads.len(), options.execution, |i| {
        golden_run(
            &sweep.workloads[i],
            &scenario.replication,
            &scenario.platform,
        )
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;

    let configs: Vec<_> = sweep
        .points
        .iter()
        .map(|p| apply_point(p, &scenario.replication, &scenario.platform))
        .collect();
    let per_point = sweep.workloads.len();
    let runs = map_indexed(configs.len() * per_point, options.execution, |job| {
        let (config, platform) = &configs[job / per_point];
        let w = job % per_point;
        replicated_row(
            RunRowSpec {
                id,
                workload: &sweep.workloads[w],
                run: None,
                config,
                platform,
                fault: None,
            },
            &goldens[w],
        )
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;

    let mut report = Report::default();
    for (w, golden) in sweep.workloads.iter().zip(&goldens) {
        report
            .rows
            .push(native_row(id, w, &scenario.platform, golden));
    }
    for chunk in runs.chunks(per_point) {
        report.rows.extend(chunk.iter().map(|(row, _)| row.clone()));
    }
    for (chunk, (config, platform)) in runs.chunks(per_point).zip(&configs) {
        let raw: Vec<f64> = chunk.iter().map(|&(_, o)| o).collect();
        report.rows.push(ReportRow {
            workload: sweep
                .workloads
                .iter()
                .map(|w| w.label.as_str())
                .collect::<Vec<_>>()
                .join("+"),
            n: Some(config.n_initial),
            strategy: platform.placement.to_string(),
            mechanism: platform.notification.mechanism.to_string(),
            overhead: geometric_mean(&raw).map(round_sig),
            count: Some(raw.len() as u64),
            ..ReportRow::blank(RowKind::Gm, id)
        });
    }
    Ok(report)
}
