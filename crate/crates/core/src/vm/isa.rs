use std::fmt;

use thiserror::Error;

use crate::memory::{MAX_PAGES, PAGE_SIZE};

pub const NUM_REGS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Reg(u8);

impl Reg {
    pub fn new(index: u8) -> Option<Self> {
        ((index as usize) < NUM_REGS).then_some(Self(index))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AluOp {
    Add,
    Sub,
    Mul,
    Xor,
    And,
}

impl AluOp {
    pub fn apply(self, a: u64, b: u64) -> u64 {
        match self {
            AluOp::Add => a.wrapping_add(b),
            AluOp::Sub => a.wrapping_sub(b),
            AluOp::Mul => a.wrapping_mul(b),
            AluOp::Xor => a ^ b,
            AluOp::And => a & b,
        }
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            AluOp::Add => "ADD",
            AluOp::Sub => "SUB",
            AluOp::Mul => "MUL",
            AluOp::Xor => "XOR",
            AluOp::And => "AND",
        }
    }
}

/// System call numbers understood by the master.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Syscall {
    /// exit(code = r0)
    Exit = 0,
    /// write(addr = r0, len = r1)
    Write = 1,
    /// read(addr = r0, len = r1) -> r0 = bytes read
    Read = 2,
    HintRaise = 3,
    HintLower = 4,
    /// map(page_index = r0, pages = r1) -> r0 = 0 on success
    Map = 5,
}

impl Syscall {
    pub fn from_number(n: u64) -> Option<Self> {
        Some(match n {
            0 => Syscall::Exit,
            1 => Syscall::Write,
            2 => Syscall::Read,
            3 => Syscall::HintRaise,
            4 => Syscall::HintLower,
            5 => Syscall::Map,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Instr {
    Movi {
        dst: Reg,
        imm: u64,
    },
    Mov {
        dst: Reg,
        src: Reg,
    },
    Alu {
        op: AluOp,
        dst: Reg,
        src: Reg,
    },
    /// dst = mem64[base + offset]
    Ld {
        dst: Reg,
        base: Reg,
        offset: i64,
    },
    /// mem64[base + offset] = src
    St {
        base: Reg,
        offset: i64,
        src: Reg,
    },
    Jnz {
        cond: Reg,
        target: usize,
    },
    Jmp {
        target: usize,
    },
    Sys(Syscall),
    Halt,
}

impl Instr {
    pub fn branch_target(&self) -> Option<usize> {
        match *self {
            Instr::Jnz { target, .. } | Instr::Jmp { target } => Some(target),
            _ => None,
        }
    }
}

impl fmt::Display for Instr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Instr::Movi { dst, imm } => write!(f, "MOVI {dst}, {imm:#x}"),
            Instr::Mov { dst, src } => write!(f, "MOV {dst}, {src}"),
            Instr::Alu { op, dst, src } => write!(f, "{} {dst}, {src}", op.mnemonic()),
            Instr::Ld { dst, base, offset } => write!(f, "LD {dst}, [{base}{offset:+}]"),
            Instr::St { base, offset, src } => write!(f, "ST [{base}{offset:+}], {src}"),
            Instr::Jnz { cond, target } => write!(f, "JNZ {cond}, @{target}"),
            Instr::Jmp { target } => write!(f, "JMP @{target}"),
            Instr::Sys(call) => write!(f, "SYS {}", call as u8),
            Instr::Halt => write!(f, "HALT"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProgramError {
    #[error("program has no instructions")]
    Empty,
    #[error("instruction {at} branches to {target}, past the end of the program")]
    BadBranch { at: usize, target: usize },
    #[error("entry point {0} is outside the program")]
    BadEntry(usize),
    #[error("initial data for page {0} is declared twice")]
    DuplicatePage(u32),
    #[error("initial data page {0} is outside the address space")]
    PageOutOfRange(u32),
    #[error("initial data for page {page} is {len} bytes, more than one page")]
    PageOverflow { page: u32, len: usize },
}

/// A validated, label-resolved guest program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    instructions: Vec<Instr>,
    entry: usize,
    initial_data: Vec<(u32, Vec<u8>)>,
    pub name: Option<String>,
    /// Declared working set in pages, if the author provided one.
    pub working_set_hint: Option<u32>,
}

impl Program {
    pub fn new(
        instructions: Vec<Instr>,
        entry: usize,
        mut initial_data: Vec<(u32, Vec<u8>)>,
    ) -> Result<Self, ProgramError> {
        if instructions.is_empty() {
            return Err(ProgramError::Empty);
        }
        if entry >= instructions.len() {
            return Err(ProgramError::BadEntry(entry));
        }
        for (at, instr) in instructions.iter().enumerate() {
            if let Some(target) = instr.branch_target() {
                if target >= instructions.len() {
                    return Err(ProgramError::BadBranch { at, target });
                }
            }
        }
        initial_data.sort_by_key(|(page, _)| *page);
        for pair in initial_data.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(ProgramError::DuplicatePage(pair[0].0));
            }
        }
        for (page, bytes) in &initial_data {
            if *page >= MAX_PAGES {
                return Err(ProgramError::PageOutOfRange(*page));
            }
            if bytes.len() > PAGE_SIZE {
                return Err(ProgramError::PageOverflow {
                    page: *page,
                    len: bytes.len(),
                });
            }
        }
        Ok(Self {
            instructions,
            entry,
            initial_data,
            name: None,
            working_set_hint: None,
        })
    }

    pub fn instructions(&self) -> &[Instr] {
        &self.instructions
    }

    pub fn entry(&self) -> usize {
        self.entry
    }

    /// Initial page contents, sorted by page index.
    pub fn initial_data(&self) -> &[(u32, Vec<u8>)] {
        &self.initial_data
    }

    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_branch() {
        let err = Program::new(vec![Instr::Jmp { target: 3 }, Instr::Halt], 0, vec![]).unwrap_err();
        assert_eq!(err, ProgramError::BadBranch { at: 0, target: 3 });
    }

    #[test]
    fn rejects_duplicate_pages() {
        let err = Program::new(
            vec![Instr::Halt],
            0,
            vec![(3, vec![1]), (1, vec![]), (3, vec![2])],
        )
        .unwrap_err();
        assert_eq!(err, ProgramError::DuplicatePage(3));
        let err = Program::new(vec![Instr::Halt], 0, vec![(MAX_PAGES, vec![])]).unwrap_err();
        assert_eq!(err, ProgramError::PageOutOfRange(MAX_PAGES));
    }

    #[test]
    fn alu_wraps() {
        assert_eq!(AluOp::Sub.apply(0, 1), u64::MAX);
        assert_eq!(AluOp::Mul.apply(u64::MAX, 2), u64::MAX - 1);
    }
}
