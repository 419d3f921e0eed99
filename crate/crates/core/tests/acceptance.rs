//! The twelve acceptance criteria. Each prints one PASS/FAIL line with its
//! wall time against a fixed budget; the test fails if any criterion does.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use rmtsim::experiment::{cmd_run, map_indexed, Execution, Format, Options, Scenario};
use rmtsim::faults::{
    classify_outcome, Campaign, FaultFamily, FaultSpace, FaultSpec, FaultTarget, OutcomeClass,
    Profile, Trigger,
};
use rmtsim::master::{ReplicationConfig, RunReport, Termination, WakeupMode};
use rmtsim::memory::ReplicaId;
use rmtsim::platform::{
    event_cost, place, AdaptiveConfig, CoreId, CostParams, Notification, NotificationMechanism,
    PlacementStrategy, PlatformConfig, Topology,
};
use rmtsim::vm::Program;

const IPI_INTRA: u64 = 5_900;
const IPI_INTER: u64 = 14_300;

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Duration,
    check: fn(),
}

const CRITERIA: [Criterion; 12] = [
    Criterion {
        id: 1,
        name: "determinism oracle",
        limit: Duration::from_secs(10),
        check: determinism,
    },
    Criterion {
        id: 2,
        name: "TMR soundness",
        limit: Duration::from_secs(60),
        check: tmr_soundness,
    },
    Criterion {
        id: 3,
        name: "DMR detection",
        limit: Duration::from_secs(60),
        check: dmr_detection,
    },
    Criterion {
        id: 4,
        name: "baseline exposure",
        limit: Duration::from_secs(60),
        check: baseline_exposure,
    },
    Criterion {
        id: 5,
        name: "2f+1 bound",
        limit: Duration::from_secs(10),
        check: fault_bound,
    },
    Criterion {
        id: 6,
        name: "COW hazard",
        limit: Duration::from_secs(5),
        check: cow_hazard,
    },
    Criterion {
        id: 7,
        name: "scale round-trip",
        limit: Duration::from_secs(10),
        check: scale_round_trip,
    },
    Criterion {
        id: 8,
        name: "IPI analytics",
        limit: Duration::from_secs(1),
        check: ipi_analytics,
    },
    Criterion {
        id: 9,
        name: "placement tradeoff",
        limit: Duration::from_secs(10),
        check: placement_tradeoff,
    },
    Criterion {
        id: 10,
        name: "mechanism ordering",
        limit: Duration::from_secs(10),
        check: mechanism_ordering,
    },
    Criterion {
        id: 11,
        name: "calibration",
        limit: Duration::from_secs(10),
        check: calibration,
    },
    Criterion {
        id: 12,
        name: "permanent-fault recovery",
        limit: Duration::from_secs(10),
        check: permanent_fault,
    },
];

#[test]
fn acceptance() {
    let mut failed = Vec::new();
    for c in &CRITERIA {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.check));
        let elapsed = start.elapsed();
        let verdict = match (&result, elapsed <= c.limit) {
            (Ok(()), true) => "PASS",
            (Ok(()), false) => "FAIL (over time budget)",
            (Err(_), _) => "FAIL",
        };
        println!(
            "[{verdict}] {:>2}. {} ({:.2}s / {}s)",
            c.id,
            c.name,
            elapsed.as_secs_f64(),
            c.limit.as_secs()
        );
        if verdict != "PASS" {
            failed.push(c.id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

// 1 ------------------------------------------------------------------------

fn determinism() {
    let dir = std::env::temp_dir().join(format!("rmtsim-accept-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let platform = PlatformConfig::default();
    for seed in 0..20 {
        let src = random_program_source(seed);
        let p = asm(&src);
        assert_eq!(trap_sequence(&p), trap_sequence(&p), "seed {seed}");
        let a = replicated(&p, &tmr(), &platform, &[], &["in"]);
        let b = replicated(&p, &tmr(), &platform, &[], &["in"]);
        assert_eq!(a, b, "seed {seed}");

        let prog = dir.join(format!("p{seed}.rvm"));
        std::fs::write(&prog, &src).unwrap();
        let scenario = dir.join(format!("s{seed}.toml"));
        std::fs::write(
            &scenario,
            format!("[workload]\nprogram = \"p{seed}.rvm\"\ninput = [\"in\"]\n"),
        )
        .unwrap();
        let render = || {
            let s = Scenario::load(&scenario).unwrap();
            cmd_run(&s, &Options::default())
                .unwrap()
                .render(Format::Json)
        };
        assert_eq!(render(), render(), "seed {seed}");
    }
    let _ = std::fs::remove_dir_all(&dir);
}

// 2-4 ----------------------------------------------------------------------

fn campaign_program() -> Program {
    workload("compute_bound", &[("ITERS", 2000)])
}

/// 1,000 single-fault runs over registers and private memory, classified
/// against the golden run. Returns (class, report) per run.
fn single_fault_campaign(n: usize) -> (RunReport, Vec<(OutcomeClass, RunReport)>) {
    let p = campaign_program();
    let platform = PlatformConfig::default();
    // A flipped loop bound can keep an unprotected run emitting events
    // for hours; the golden run has 5, so 1,000 is a safe hang threshold.
    let config = ReplicationConfig {
        permanent_fault_timeout: 200_000,
        event_cap: 1_000,
        ..ReplicationConfig::with_replicas(n)
    };
    let golden = native(&p, &platform, &[]);
    let clean = replicated(&p, &config, &platform, &[], &[]);
    let profile = Profile {
        instructions: clean.instructions,
        events: clean.events_handled,
        pages: clean.mapped_pages.clone(),
        replicas: n as u32,
        cores: clean.cores.clone(),
    };
    let mut families = FaultSpace::only(FaultFamily::Register);
    *families.weight_mut(FaultFamily::MemoryBit) = 1.0;
    let campaign = Campaign {
        seed: 2024,
        runs: 1_000,
        families,
    };
    let specs = campaign.plan(&profile).unwrap();
    assert_eq!(specs.len(), 1_000);
    let runs = map_indexed(specs.len(), Execution::Parallel, |i| {
        let r = replicated(&p, &config, &platform, std::slice::from_ref(&specs[i]), &[]);
        (classify_outcome(&r, &golden), r)
    });
    (golden, runs)
}

fn histogram(runs: &[(OutcomeClass, RunReport)]) -> Vec<(OutcomeClass, usize)> {
    OutcomeClass::ALL
        .iter()
        .map(|&c| (c, runs.iter().filter(|(k, _)| *k == c).count()))
        .collect()
}

fn tmr_soundness() {
    let (golden, runs) = single_fault_campaign(3);
    let h = histogram(&runs);
    println!("      N=3 histogram {h:?}");
    for (class, r) in &runs {
        assert!(
            matches!(
                class,
                OutcomeClass::Masked | OutcomeClass::DetectedCorrected
            ),
            "{class:?}"
        );
        assert_eq!(r.output_log, golden.output_log);
        assert_eq!(r.exit_code, golden.exit_code);
    }
    assert!(runs
        .iter()
        .any(|(c, _)| *c == OutcomeClass::DetectedCorrected));
}

fn dmr_detection() {
    let (_, runs) = single_fault_campaign(2);
    let h = histogram(&runs);
    println!("      N=2 histogram {h:?}");
    for (class, _) in &runs {
        assert!(
            matches!(
                class,
                OutcomeClass::Masked | OutcomeClass::DetectedUnrecoverable
            ),
            "{class:?}"
        );
    }
    assert!(runs
        .iter()
        .any(|(c, _)| *c == OutcomeClass::DetectedUnrecoverable));
}

fn baseline_exposure() {
    let (_, runs) = single_fault_campaign(1);
    let h = histogram(&runs);
    println!("      N=1 histogram {h:?}");
    assert!(runs.iter().any(|(c, _)| *c == OutcomeClass::Sdc));
}

// 5 ------------------------------------------------------------------------

fn reg_flip(replica: u32, reg: u8, bit: u8, event: u64) -> FaultSpec {
    FaultSpec::new(
        FaultTarget::Register {
            replica: ReplicaId(replica),
            reg,
            bit,
        },
        Trigger::AtEventIndex(event),
    )
}

fn fault_bound() {
    // r2 is compute_bound's accumulator; a flip changes every later output.
    let p = workload("compute_bound", &[("ITERS", 1000)]);
    let platform = PlatformConfig::default();
    let golden = native(&p, &platform, &[]);

    let colluding = [reg_flip(1, 2, 5, 1), reg_flip(2, 2, 5, 1)];
    let r = replicated(&p, &tmr(), &platform, &colluding, &[]);
    assert_eq!(classify_outcome(&r, &golden), OutcomeClass::Sdc);

    for f in [1usize, 2] {
        let config = ReplicationConfig {
            f_target: Some(f),
            ..ReplicationConfig::with_replicas(2 * f + 1)
        };
        let faults: Vec<_> = (0..f as u32)
            .map(|i| reg_flip(i, 2, 5 + i as u8, 1))
            .collect();
        let r = replicated(&p, &config, &platform, &faults, &[]);
        assert_eq!(
            classify_outcome(&r, &golden),
            OutcomeClass::DetectedCorrected,
            "f={f}"
        );
        assert_eq!(r.recoveries, f as u64);
        assert_eq!(r.output_log, golden.output_log);
    }
}

// 6 ------------------------------------------------------------------------

/// Drops to two replicas and raises back to three, so a COW wake-up shares
/// page 1 between the woken replica and its source. Page 1 is then written
/// out without being stored to.
const COW_PROGRAM: &str = ".data 1 \"critical payload\"\n\
    SYS 4\n\
    SYS 3\n\
    MOVI r0, 4096\n\
    MOVI r1, 16\n\
    SYS 1\n\
    MOVI r0, 0\n\
    SYS 0\n";

fn cow_hazard() {
    let p = asm(COW_PROGRAM);
    let platform = PlatformConfig::default();
    let golden = native(&p, &platform, &[]);
    let flip = FaultSpec::new(
        FaultTarget::BackingBit {
            replica: ReplicaId(0),
            page: 1,
            byte: 0,
            bit: 5,
        },
        Trigger::AtEventIndex(2),
    );
    let run = |wakeup_mode, ecc_memory| {
        let config = ReplicationConfig {
            wakeup_mode,
            ecc_memory,
            ..tmr()
        };
        let r = replicated(&p, &config, &platform, std::slice::from_ref(&flip), &[]);
        assert_eq!(r.replica_trace, vec![(0, 3), (0, 2), (1, 3)]);
        classify_outcome(&r, &golden)
    };
    assert_eq!(run(WakeupMode::Cow, false), OutcomeClass::Sdc);
    assert_eq!(
        run(WakeupMode::Eager, false),
        OutcomeClass::DetectedCorrected
    );
    assert_eq!(run(WakeupMode::Cow, true), OutcomeClass::Masked);
}

// 7 ------------------------------------------------------------------------

fn scale_round_trip() {
    let p = workload("mixed_phase", &[]);
    let platform = PlatformConfig::default();
    let fixed = ReplicationConfig {
        honor_hints: false,
        ..tmr()
    };
    let reference = replicated(&p, &fixed, &platform, &[], &[]);
    assert_eq!(reference.replica_trace, vec![(0, 3)]);
    // Events: 0 lower, 1 raise, 2..=9 writes, 10 lower, 11 raise, 12..=19
    // writes, 20 exit.
    let expected = vec![(0, 3), (0, 2), (1, 3), (10, 2), (11, 3)];
    for mode in [WakeupMode::Eager, WakeupMode::Cow] {
        let config = ReplicationConfig {
            wakeup_mode: mode,
            ..tmr()
        };
        let r = replicated(&p, &config, &platform, &[], &[]);
        assert_eq!(r.replica_trace, expected, "{mode:?}");
        assert_eq!(r.event_trace.len(), 21);
        assert_eq!(r.event_trace, reference.event_trace, "{mode:?}");
        assert_eq!(r.output_log, reference.output_log, "{mode:?}");
    }
}

// 8 ------------------------------------------------------------------------

fn ipi_analytics() {
    let topology = Topology::default();
    let params = CostParams::default();
    assert_eq!(
        (params.ipi_intra_cycles, params.ipi_inter_cycles),
        (IPI_INTRA, IPI_INTER)
    );
    let sync = Notification::new(NotificationMechanism::SyncMessage);
    let one = [ReplicaId(0)];
    let on = |core| {
        place(
            &PlacementStrategy::Pinned(vec![CoreId(core)]),
            &one,
            &topology,
            &BTreeSet::new(),
        )
        .unwrap()
    };
    let copy = params.state_copy_cost_cycles;
    let intra = event_cost(&one, &on(1), &sync, &params, &topology).unwrap();
    let inter = event_cost(&one, &on(7), &sync, &params, &topology).unwrap();
    assert_eq!(intra.notification, 2 * IPI_INTRA + copy);
    assert_eq!(inter.notification, 2 * IPI_INTER + copy);
    assert_eq!(intra.notification, 12_800);
    assert_eq!(inter.notification, 29_600);

    let p = workload("syscall_heavy", &[("ITERS", 300)]);
    let run = |cores: Vec<u32>| {
        let platform = PlatformConfig {
            placement: PlacementStrategy::Pinned(cores.into_iter().map(CoreId).collect()),
            ..PlatformConfig::default()
        };
        replicated(&p, &tmr(), &platform, &[], &[])
    };
    let near = run(vec![1, 2, 3]);
    let far = run(vec![1, 2, 7]);
    assert_eq!(near.events_handled, far.events_handled);
    assert_eq!(
        far.ledger.notification - near.ledger.notification,
        near.events_handled * 2 * (IPI_INTER - IPI_INTRA)
    );
}

// 9 ------------------------------------------------------------------------

fn with_strategy(strategy: PlacementStrategy) -> PlatformConfig {
    PlatformConfig {
        placement: strategy,
        ..PlatformConfig::default()
    }
}

fn placement_tradeoff() {
    let syscall = workload("syscall_heavy", &[]);
    let cache = workload("cache_bound", &[]);
    // Working set per replica must be at least half the LLC.
    let llc = Topology::default().sockets()[0].llc_capacity_bytes;
    assert!(2048 * 4096 >= llc / 2);

    let runs = map_indexed(6, Execution::Parallel, |i| {
        let p = if i < 3 { &syscall } else { &cache };
        let s = [
            PlacementStrategy::SameSocket,
            PlacementStrategy::CrossSocket,
            PlacementStrategy::Adaptive,
        ][i % 3]
            .clone();
        replicated(p, &tmr(), &with_strategy(s), &[], &[])
    });
    let [s_same, s_cross, s_adapt, c_same, c_cross, c_adapt] = &runs[..] else {
        unreachable!()
    };
    println!(
        "      syscall_heavy same {} cross {} adaptive {}",
        s_same.total_cycles(),
        s_cross.total_cycles(),
        s_adapt.total_cycles()
    );
    println!(
        "      cache_bound   same {} cross {} adaptive {}",
        c_same.total_cycles(),
        c_cross.total_cycles(),
        c_adapt.total_cycles()
    );
    assert!(s_same.total_cycles() < s_cross.total_cycles());
    assert!(c_cross.total_cycles() < c_same.total_cycles());

    let window = AdaptiveConfig::default().window_events as usize;
    let migration = CostParams::default().migration_cost_cycles;
    for (adaptive, better, worse) in [(s_adapt, s_same, s_cross), (c_adapt, c_cross, c_same)] {
        assert_eq!(better.round_cycles.len(), worse.round_cycles.len());
        let suboptimal: u64 = worse
            .round_cycles
            .iter()
            .zip(&better.round_cycles)
            .take(window)
            .map(|(w, b)| w.saturating_sub(*b))
            .sum();
        let switch = 3 * migration;
        assert!(
            adaptive.total_cycles() <= better.total_cycles() + suboptimal + switch,
            "adaptive {} > {} + {} + {}",
            adaptive.total_cycles(),
            better.total_cycles(),
            suboptimal,
            switch
        );
    }
    // The cache-bound run switches at the close of its first window.
    assert_eq!(c_adapt.placement_trace[0].1, PlacementStrategy::SameSocket);
    assert_eq!(
        c_adapt.placement_trace.get(1).map(|t| t.1.clone()),
        Some(PlacementStrategy::CrossSocket)
    );
    assert!(c_adapt.placement_trace[1].0 <= window as u64);
}

// 10 -----------------------------------------------------------------------

fn mechanism_ordering() {
    let p = workload("syscall_heavy", &[("ITERS", 2000)]);
    use NotificationMechanism::*;
    for n in [2, 3] {
        let reports: Vec<RunReport> = [SharedPolling, SyncMessage, Migration]
            .into_iter()
            .map(|m| {
                let platform = PlatformConfig {
                    notification: Notification::new(m),
                    ..PlatformConfig::default()
                };
                replicated(
                    &p,
                    &ReplicationConfig::with_replicas(n),
                    &platform,
                    &[],
                    &[],
                )
            })
            .collect();
        let whole: Vec<u64> = reports.iter().map(|r| r.ledger.notification).collect();
        let per_event: Vec<u64> = reports
            .iter()
            .map(|r| r.ledger.notification / r.events_handled)
            .collect();
        assert!(reports
            .iter()
            .all(|r| r.events_handled == reports[0].events_handled));
        assert!(
            whole[0] < whole[1] && whole[1] < whole[2],
            "N={n} {whole:?}"
        );
        assert!(
            per_event[0] < per_event[1] && per_event[1] < per_event[2],
            "N={n} {per_event:?}"
        );
    }
}

// 11 -----------------------------------------------------------------------

fn calibration() {
    let p = workload("compute_bound", &[]);
    let platform = PlatformConfig::default();
    let golden = native(&p, &platform, &[]);
    let overhead = |n| {
        let r = replicated(
            &p,
            &ReplicationConfig::with_replicas(n),
            &platform,
            &[],
            &[],
        );
        (r.total_cycles() as f64 - golden.total_cycles() as f64) / golden.total_cycles() as f64
    };
    let (dmr, tmr) = (overhead(2), overhead(3));
    println!(
        "      compute_bound overhead DMR {:.3}% TMR {:.3}%",
        dmr * 100.0,
        tmr * 100.0
    );
    assert!(tmr <= 0.05);
    assert!(dmr <= tmr);
}

// 12 -----------------------------------------------------------------------

fn permanent_fault() {
    let p = workload("compute_bound", &[("ITERS", 1000)]);
    let config = ReplicationConfig {
        permanent_fault_timeout: 100_000,
        ..tmr()
    };

    let platform = PlatformConfig::default();
    let golden = native(&p, &platform, &[]);
    let dead = FaultSpec::new(
        FaultTarget::CorePermanent { core: CoreId(2) },
        Trigger::AtInstruction(2500),
    );
    let r = replicated(&p, &config, &platform, std::slice::from_ref(&dead), &[]);
    assert!(r.minority_votes >= 1, "stall not detected");
    assert_eq!((r.migrations, r.recoveries), (1, 1));
    assert!(!r.degraded);
    assert_eq!(r.final_replicas(), 3);
    assert!(!r.cores.contains(&CoreId(2)));
    assert_eq!(r.output_log, golden.output_log);
    assert_eq!(r.termination, Termination::Exit { code: 0 });

    // Master on core 0 and replicas on 1..=3: no spare.
    let cramped = PlatformConfig {
        topology: Topology::uniform(1, 4, 12 << 20, CoreId(0)).unwrap(),
        ..PlatformConfig::default()
    };
    let golden = native(&p, &cramped, &[]);
    let dead = FaultSpec::new(
        FaultTarget::CorePermanent { core: CoreId(3) },
        Trigger::AtInstruction(2500),
    );
    let r = replicated(&p, &config, &cramped, &[dead], &[]);
    assert!(r.degraded);
    assert_eq!(r.final_replicas(), 2);
    assert_eq!(r.termination, Termination::Exit { code: 0 });
    assert_eq!(r.output_log, golden.output_log);
}
