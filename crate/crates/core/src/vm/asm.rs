//! Text assembler for guest programs.
//!
//! One instruction per line, `;` starts a comment, `name:` defines a label.
//! Immediates are decimal (optionally negative) or `0x` hex, or the name of a
//! `.equ` constant. Directives:
//!
//! ```text
//! .name   <ident>            program name
//! .workset <pages>           declared working-set hint
//! .equ    <NAME> <value>     named constant, overridable at load time
//! .data   <page> "<text>"    initial page contents (\n \t \0 \\ \" \xHH)
//! .entry  <label>            start somewhere other than the first instruction
//! ```

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use super::isa::{AluOp, Instr, Program, Reg, Syscall};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    /// 1-based source line; 0 for errors not tied to a line.
    pub line: usize,
    pub message: String,
}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError {
        line,
        message: message.into(),
    })
}

pub fn assemble(source: &str) -> Result<Program, ParseError> {
    assemble_with(source, &BTreeMap::new())
}

/// Assembles `source`, replacing the value of each named `.equ` constant
/// with the one in `overrides`. Naming a constant the source does not
/// declare is an error.
pub fn assemble_with(
    source: &str,
    overrides: &BTreeMap<String, u64>,
) -> Result<Program, ParseError> {
    let lines: Vec<(usize, &str)> = source
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, strip_comment(l).trim()))
        .collect();

    // Pass 1: labels and constants.
    let mut labels: HashMap<String, usize> = HashMap::new();
    let mut consts: HashMap<String, u64> = HashMap::new();
    let mut count = 0usize;
    for &(ln, line) in &lines {
        let body = take_labels(line, |name| {
            if labels.insert(name.to_string(), count).is_some() {
                return err(ln, format!("duplicate label `{name}`"));
            }
            Ok(())
        })?;
        if body.is_empty() {
            continue;
        }
        if let Some(rest) = body.strip_prefix(".equ") {
            let mut parts = rest.split_whitespace();
            let (Some(name), Some(value), None) = (parts.next(), parts.next(), parts.next()) else {
                return err(ln, "expected `.equ NAME value`");
            };
            if !is_ident(name) {
                return err(ln, format!("invalid constant name `{name}`"));
            }
            let value = parse_number(value).ok_or_else(|| ParseError {
                line: ln,
                message: format!("invalid constant value `{value}`"),
            })?;
            if consts.insert(name.to_string(), value).is_some() {
                return err(ln, format!("duplicate constant `{name}`"));
            }
        } else if !body.starts_with('.') {
            count += 1;
        }
    }
    for (name, value) in overrides {
        match consts.get_mut(name) {
            Some(slot) => *slot = *value,
            None => return err(0, format!("override for undeclared constant `{name}`")),
        }
    }

    // Pass 2: instructions and directives.
    let mut instructions = Vec::with_capacity(count);
    let mut data = Vec::new();
    let mut entry = 0usize;
    let mut name = None;
    let mut workset = None;
    let ctx = Ctx {
        labels: &labels,
        consts: &consts,
    };
    for &(ln, line) in &lines {
        let body = take_labels(line, |_| Ok(()))?;
        if body.is_empty() {
            continue;
        }
        if let Some(directive) = body.strip_prefix('.') {
            let (word, rest) = split_word(directive);
            match word {
                "equ" => {}
                "name" => name = Some(rest.trim().to_string()),
                "workset" => workset = Some(ctx.imm_u32(ln, rest.trim())?),
                "entry" => entry = ctx.label(ln, rest.trim())?,
                "data" => {
                    let (page, text) = split_word(rest.trim());
                    let page = ctx.imm_u32(ln, page)?;
                    data.push((page, parse_string(ln, text.trim())?));
                }
                other => return err(ln, format!("unknown directive `.{other}`")),
            }
            continue;
        }
        instructions.push(ctx.instruction(ln, body)?);
    }

    let mut program = Program::new(instructions, entry, data).map_err(|e| ParseError {
        line: 0,
        message: e.to_string(),
    })?;
    program.name = name;
    program.working_set_hint = workset;
    Ok(program)
}

struct Ctx<'a> {
    labels: &'a HashMap<String, usize>,
    consts: &'a HashMap<String, u64>,
}

impl Ctx<'_> {
    fn instruction(&self, ln: usize, body: &str) -> Result<Instr, ParseError> {
        let (mnemonic, rest) = split_word(body);
        let ops: Vec<&str> = if rest.trim().is_empty() {
            Vec::new()
        } else {
            rest.split(',').map(str::trim).collect()
        };
        let arity = |n: usize| {
            if ops.len() == n {
                Ok(())
            } else {
                err(
                    ln,
                    format!("{mnemonic} takes {n} operand(s), got {}", ops.len()),
                )
            }
        };
        let upper = mnemonic.to_ascii_uppercase();
        let alu = match upper.as_str() {
            "ADD" => Some(AluOp::Add),
            "SUB" => Some(AluOp::Sub),
            "MUL" => Some(AluOp::Mul),
            "XOR" => Some(AluOp::Xor),
            "AND" => Some(AluOp::And),
            _ => None,
        };
        if let Some(op) = alu {
            arity(2)?;
            return Ok(Instr::Alu {
                op,
                dst: reg(ln, ops[0])?,
                src: reg(ln, ops[1])?,
            });
        }
        Ok(match upper.as_str() {
            "MOVI" => {
                arity(2)?;
                Instr::Movi {
                    dst: reg(ln, ops[0])?,
                    imm: self.imm_u64(ln, ops[1])?,
                }
            }
            "MOV" => {
                arity(2)?;
                Instr::Mov {
                    dst: reg(ln, ops[0])?,
                    src: reg(ln, ops[1])?,
                }
            }
            "LD" => {
                arity(2)?;
                let (base, offset) = self.mem_operand(ln, ops[1])?;
                Instr::Ld {
                    dst: reg(ln, ops[0])?,
                    base,
                    offset,
                }
            }
            "ST" => {
                arity(2)?;
                let (base, offset) = self.mem_operand(ln, ops[0])?;
                Instr::St {
                    base,
                    offset,
                    src: reg(ln, ops[1])?,
                }
            }
            "JNZ" => {
                arity(2)?;
                Instr::Jnz {
                    cond: reg(ln, ops[0])?,
                    target: self.label(ln, ops[1])?,
                }
            }
            "JMP" => {
                arity(1)?;
                Instr::Jmp {
                    target: self.label(ln, ops[0])?,
                }
            }
            "SYS" => {
                arity(1)?;
                let n = self.imm_u64(ln, ops[0])?;
                match Syscall::from_number(n) {
                    Some(call) => Instr::Sys(call),
                    None => return err(ln, format!("syscall number {n} out of range 0..=5")),
                }
            }
            "HALT" => {
                arity(0)?;
                Instr::Halt
            }
            _ => return err(ln, format!("unknown mnemonic `{mnemonic}`")),
        })
    }

    fn label(&self, ln: usize, name: &str) -> Result<usize, ParseError> {
        self.labels.get(name).copied().ok_or_else(|| ParseError {
            line: ln,
            message: format!("undefined label `{name}`"),
        })
    }

    /// Full 64-bit immediate; negative decimals wrap to two's complement.
    fn imm_u64(&self, ln: usize, text: &str) -> Result<u64, ParseError> {
        if let Some(v) = self.consts.get(text) {
            return Ok(*v);
        }
        if let Some(v) = parse_number(text) {
            return Ok(v);
        }
        if let Some(v) = text.strip_prefix('-').and_then(parse_number) {
            if v <= i64::MAX as u64 + 1 {
                return Ok((v as i64).wrapping_neg() as u64);
            }
        }
        err(ln, format!("invalid or out-of-range immediate `{text}`"))
    }

    fn imm_u32(&self, ln: usize, text: &str) -> Result<u32, ParseError> {
        let v = self.imm_u64(ln, text)?;
        u32::try_from(v).or_else(|_| err(ln, format!("immediate `{text}` out of range")))
    }

    fn offset(&self, ln: usize, text: &str, negative: bool) -> Result<i64, ParseError> {
        let v = self
            .consts
            .get(text)
            .copied()
            .or_else(|| parse_number(text))
            .ok_or_else(|| ParseError {
                line: ln,
                message: format!("invalid offset `{text}`"),
            })?;
        if v > i32::MAX as u64 {
            return err(ln, format!("offset `{text}` out of range"));
        }
        Ok(if negative { -(v as i64) } else { v as i64 })
    }

    /// `[rN]`, `[rN+imm]` or `[rN-imm]`.
    fn mem_operand(&self, ln: usize, text: &str) -> Result<(Reg, i64), ParseError> {
        let inner = text
            .strip_prefix('[')
            .and_then(|t| t.strip_suffix(']'))
            .ok_or_else(|| ParseError {
                line: ln,
                message: format!("expected memory operand, got `{text}`"),
            })?
            .trim();
        if let Some(at) = inner.find(['+', '-']) {
            let base = reg(ln, inner[..at].trim())?;
            let negative = inner.as_bytes()[at] == b'-';
            let off = self.offset(ln, inner[at + 1..].trim(), negative)?;
            Ok((base, off))
        } else {
            Ok((reg(ln, inner)?, 0))
        }
    }
}

fn reg(ln: usize, text: &str) -> Result<Reg, ParseError> {
    text.strip_prefix(['r', 'R'])
        .and_then(|n| n.parse::<u8>().ok())
        .and_then(Reg::new)
        .ok_or_else(|| ParseError {
            line: ln,
            message: format!("invalid register `{text}`"),
        })
}

fn parse_number(text: &str) -> Option<u64> {
    let cleaned: String = text.chars().filter(|&c| c != '_').collect();
    if let Some(hex) = cleaned
        .strip_prefix("0x")
        .or_else(|| cleaned.strip_prefix("0X"))
    {
        u64::from_str_radix(hex, 16).ok()
    } else if cleaned.starts_with(|c: char| c.is_ascii_digit()) {
        cleaned.parse().ok()
    } else {
        None
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

fn split_word(s: &str) -> (&str, &str) {
    let s = s.trim_start();
    match s.find(char::is_whitespace) {
        Some(at) => (&s[..at], &s[at..]),
        None => (s, ""),
    }
}

/// Peels leading `label:` definitions off a line, returning the rest.
fn take_labels(
    mut line: &str,
    mut on_label: impl FnMut(&str) -> Result<(), ParseError>,
) -> Result<&str, ParseError> {
    loop {
        let Some(colon) = line.find(':') else {
            return Ok(line);
        };
        let candidate = line[..colon].trim();
        if !is_ident(candidate) {
            return Ok(line);
        }
        on_label(candidate)?;
        line = line[colon + 1..].trim();
    }
}

fn strip_comment(line: &str) -> &str {
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in line.char_indices() {
        match c {
            _ if escaped => escaped = false,
            '\\' if in_string => escaped = true,
            '"' => in_string = !in_string,
            ';' if !in_string => return &line[..i],
            _ => {}
        }
    }
    line
}

fn parse_string(ln: usize, text: &str) -> Result<Vec<u8>, ParseError> {
    let Some(inner) = text.strip_prefix('"').and_then(|t| t.strip_suffix('"')) else {
        return err(ln, "expected a double-quoted string");
    };
    let mut out = Vec::with_capacity(inner.len());
    let mut bytes = inner.bytes();
    while let Some(b) = bytes.next() {
        if b != b'\\' {
            out.push(b);
            continue;
        }
        match bytes.next() {
            Some(b'n') => out.push(b'\n'),
            Some(b't') => out.push(b'\t'),
            Some(b'0') => out.push(0),
            Some(b'\\') => out.push(b'\\'),
            Some(b'"') => out.push(b'"'),
            Some(b'x') => {
                let hi = bytes.next();
                let lo = bytes.next();
                let hex = [hi.unwrap_or(b'?'), lo.unwrap_or(b'?')];
                let value = std::str::from_utf8(&hex)
                    .ok()
                    .and_then(|h| u8::from_str_radix(h, 16).ok());
                match value {
                    Some(v) => out.push(v),
                    None => return err(ln, "bad \\x escape"),
                }
            }
            _ => return err(ln, "unknown escape in string"),
        }
    }
    Ok(out)
}
