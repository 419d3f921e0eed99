use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub event_index: u64,
    #[serde(with = "bytes_as_text")]
    pub bytes: Vec<u8>,
}

/// Deterministic stand-in for everything outside the sphere of
/// replication.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExternalWorld {
    input: VecDeque<Vec<u8>>,
    output: Vec<OutputRecord>,
    exit_code: Option<u64>,
}

impl ExternalWorld {
    pub fn new<I, B>(input_script: I) -> Self
    where
        I: IntoIterator<Item = B>,
        B: Into<Vec<u8>>,
    {
        Self {
            input: input_script.into_iter().map(Into::into).collect(),
            ..Self::default()
        }
    }

    /// Next scripted read result; empty once the script is exhausted.
    pub fn next_input(&mut self) -> Vec<u8> {
        self.input.pop_front().unwrap_or_default()
    }

    pub fn write(&mut self, event_index: u64, bytes: Vec<u8>) {
        self.output.push(OutputRecord { event_index, bytes });
    }

    pub fn set_exit(&mut self, code: u64) {
        self.exit_code = Some(code);
    }

    pub fn output_log(&self) -> &[OutputRecord] {
        &self.output
    }

    pub fn exit_code(&self) -> Option<u64> {
        self.exit_code
    }

    pub fn remaining_input(&self) -> usize {
        self.input.len()
    }

    pub fn into_parts(self) -> (Vec<OutputRecord>, Option<u64>) {
        (self.output, self.exit_code)
    }
}

/// Output bytes as a string when they are UTF-8, otherwise as an array.
mod bytes_as_text {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Text(String),
        Raw(Vec<u8>),
    }

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        match std::str::from_utf8(bytes) {
            Ok(t) => s.serialize_str(t),
            Err(_) => bytes.serialize(s),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        Ok(match Repr::deserialize(d)? {
            Repr::Text(t) => t.into_bytes(),
            Repr::Raw(b) => b,
        })
    }
}
