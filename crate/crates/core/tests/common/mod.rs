#![allow(dead_code)]

use std::collections::BTreeMap;

use rmtsim::faults::FaultSpec;
use rmtsim::master::{run_native, run_replicated, ExternalWorld, ReplicationConfig, RunReport};
use rmtsim::platform::PlatformConfig;
use rmtsim::vm::{assemble, workloads, Program};

pub fn workload(name: &str, params: &[(&str, u64)]) -> Program {
    let params: BTreeMap<String, u64> = params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    workloads::load(name, &params)
        .expect("known workload")
        .expect("assembles")
}

pub fn asm(src: &str) -> Program {
    assemble(src).unwrap_or_else(|e| panic!("{e}\n{src}"))
}

pub fn tmr() -> ReplicationConfig {
    ReplicationConfig::with_replicas(3)
}

pub fn replicated(
    program: &Program,
    config: &ReplicationConfig,
    platform: &PlatformConfig,
    faults: &[FaultSpec],
    input: &[&str],
) -> RunReport {
    run_replicated(
        program,
        config,
        platform,
        faults,
        ExternalWorld::new(input.iter().copied()),
    )
    .expect("run starts")
}

pub fn native(program: &Program, platform: &PlatformConfig, input: &[&str]) -> RunReport {
    run_native(
        program,
        &ReplicationConfig::default(),
        platform,
        ExternalWorld::new(input.iter().copied()),
    )
    .expect("run starts")
}

/// Assembly for a random terminating program: ALU work, loads and stores on
/// page 1, bounded loops, writes, reads, maps and scaling hints.
///
/// r0..r3 hold data, r4 is the constant 1, r5 counts loops, r6 and r7 hold
/// addresses.
pub fn random_program_source(seed: u64) -> String {
    use rand::{Rng, SeedableRng};
    use std::fmt::Write;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut s = String::from(".data 1 \"seed\"\nMOVI r4, 1\n");
    let alu = ["ADD", "SUB", "MUL", "XOR", "AND"];
    let mut next_map = 8u32;
    let blocks = rng.random_range(4..24);
    for b in 0..blocks {
        match rng.random_range(0..9) {
            0..=2 => {
                for _ in 0..rng.random_range(1..6) {
                    let op = alu[rng.random_range(0..alu.len())];
                    let _ = writeln!(
                        s,
                        "{op} r{}, r{}",
                        rng.random_range(0..4),
                        rng.random_range(0..5)
                    );
                }
            }
            3 => {
                let _ = writeln!(
                    s,
                    "MOVI r{}, {}",
                    rng.random_range(0..4),
                    rng.random::<u64>()
                );
            }
            4 => {
                let off = rng.random_range(0..512) * 8;
                let _ = writeln!(
                    s,
                    "MOVI r7, 4096\nST [r7+{off}], r{}",
                    rng.random_range(0..4)
                );
                let off = rng.random_range(0..512) * 8;
                let _ = writeln!(s, "LD r{}, [r7+{off}]", rng.random_range(0..4));
            }
            5 => {
                let _ = writeln!(
                    s,
                    "MOVI r5, {}\nloop{b}:\nMUL r1, r2\nADD r1, r4\nXOR r2, r1\nSUB r5, r4\nJNZ r5, loop{b}",
                    rng.random_range(1..200)
                );
            }
            6 => {
                let off = rng.random_range(0..64) * 8;
                let _ = writeln!(
                    s,
                    "MOVI r7, 4096\nST [r7+{off}], r{}\nMOVI r0, {}\nMOVI r1, {}\nSYS 1",
                    rng.random_range(1..4),
                    4096 + off,
                    rng.random_range(1..32)
                );
            }
            7 => {
                let _ = writeln!(
                    s,
                    "MOVI r0, 4096\nMOVI r1, {}\nSYS 2\nADD r3, r0",
                    rng.random_range(1..16)
                );
            }
            _ => match rng.random_range(0..3) {
                0 => {
                    let pages = rng.random_range(1..3);
                    let _ = writeln!(
                        s,
                        "MOVI r0, {next_map}\nMOVI r1, {pages}\nSYS 5\nMOVI r6, {}\nST [r6], r2",
                        next_map as u64 * 4096
                    );
                    next_map += pages;
                }
                1 => s.push_str("SYS 4\n"),
                _ => s.push_str("SYS 3\n"),
            },
        }
    }
    if rng.random_bool(0.5) {
        let _ = writeln!(s, "MOVI r0, {}\nSYS 0", rng.random_range(0..4));
    } else {
        s.push_str("HALT\n");
    }
    s
}

pub fn random_program(seed: u64) -> Program {
    asm(&random_program_source(seed))
}

/// Runs one bare replica, servicing maps and nothing else, and records
/// every trap with the digest and instruction count at that point.
pub fn trap_sequence(program: &Program) -> Vec<(rmtsim::vm::TrapKind, rmtsim::vm::Digest, u64)> {
    use rmtsim::memory::{ReplicaGroup, ReplicaId};
    use rmtsim::vm::{run_segment, EventKind, NoHooks, TrapKind};

    let mut group = ReplicaGroup::create(program, 1, 4);
    let id = ReplicaId(0);
    let mut out = Vec::new();
    for _ in 0..10_000 {
        let trap = {
            let (state, mut view) = group.view_mut(id);
            state.begin_segment();
            run_segment(program, state, &mut view, &mut NoHooks, 10_000_000)
        };
        let done = match &trap.kind {
            TrapKind::Externalization(ev) => {
                if let EventKind::Map { first_page, pages } = ev.kind {
                    let _ = group.service_map(first_page as u32, pages as u32);
                }
                ev.kind.is_terminal()
            }
            _ => true,
        };
        let count = group.get(id).state.instr_count;
        out.push((trap.kind, group.digest(id), count));
        if done {
            break;
        }
    }
    out
}
