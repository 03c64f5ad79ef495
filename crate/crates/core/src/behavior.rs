//! Application-layer behavior codes.
//!
//! Each packet carries one byte at a fixed payload offset that names what the
//! terminal is doing (reading, writing, testing, ...). The byte value is
//! mapped onto one of fourteen states grouped into six categories; packets with
//! no payload, or with a byte the table does not know, fall into `ZERO`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BehaviorCategory {
    Test,
    Write,
    Identification,
    Read,
    Transport,
    Individuation,
}

/// The fourteen named behavior states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BehaviorState {
    Test1,
    Test2,
    Write,
    Identification,
    Read1,
    Read2,
    Read3,
    Read4,
    Read5,
    Read6,
    Transport1,
    Transport2,
    Transport3,
    Individuation,
}

impl BehaviorState {
    pub const COUNT: usize = 14;

    pub const ALL: [BehaviorState; Self::COUNT] = [
        BehaviorState::Test1,
        BehaviorState::Test2,
        BehaviorState::Write,
        BehaviorState::Identification,
        BehaviorState::Read1,
        BehaviorState::Read2,
        BehaviorState::Read3,
        BehaviorState::Read4,
        BehaviorState::Read5,
        BehaviorState::Read6,
        BehaviorState::Transport1,
        BehaviorState::Transport2,
        BehaviorState::Transport3,
        BehaviorState::Individuation,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn short_name(self) -> &'static str {
        match self {
            BehaviorState::Test1 => "T1",
            BehaviorState::Test2 => "T2",
            BehaviorState::Write => "W",
            BehaviorState::Identification => "ID",
            BehaviorState::Read1 => "R1",
            BehaviorState::Read2 => "R2",
            BehaviorState::Read3 => "R3",
            BehaviorState::Read4 => "R4",
            BehaviorState::Read5 => "R5",
            BehaviorState::Read6 => "R6",
            BehaviorState::Transport1 => "TR1",
            BehaviorState::Transport2 => "TR2",
            BehaviorState::Transport3 => "TR3",
            BehaviorState::Individuation => "IN",
        }
    }

    pub fn category(self) -> BehaviorCategory {
        use BehaviorState::*;
        match self {
            Test1 | Test2 => BehaviorCategory::Test,
            Write => BehaviorCategory::Write,
            Identification => BehaviorCategory::Identification,
            Read1 | Read2 | Read3 | Read4 | Read5 | Read6 => BehaviorCategory::Read,
            Transport1 | Transport2 | Transport3 => BehaviorCategory::Transport,
            Individuation => BehaviorCategory::Individuation,
        }
    }
}

impl fmt::Display for BehaviorState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for BehaviorState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|st| st.short_name() == s)
            .ok_or_else(|| Error::Config(format!("unknown behavior state `{s}`")))
    }
}

/// Behavior of one packet: a named state, or `Zero` when the payload is empty
/// or the byte could not be mapped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum BehaviorCode {
    #[default]
    Zero,
    State(BehaviorState),
}

impl BehaviorCode {
    /// Column slot used by the per-direction count vectors: states 0..14, ZERO at 14.
    pub fn slot(self) -> usize {
        match self {
            BehaviorCode::State(s) => s.index(),
            BehaviorCode::Zero => BehaviorState::COUNT,
        }
    }

    pub fn is_zero(self) -> bool {
        matches!(self, BehaviorCode::Zero)
    }
}

impl fmt::Display for BehaviorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BehaviorCode::Zero => f.write_str("ZERO"),
            BehaviorCode::State(s) => s.fmt(f),
        }
    }
}

/// Byte offset plus a 256-entry value-to-state map.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, RawEntry>", into = "BTreeMap<String, RawEntry>")]
pub struct BehaviorCodeTable {
    offset: usize,
    mapping: [Option<BehaviorState>; 256],
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum RawEntry {
    Offset(usize),
    Codes(Vec<u8>),
}

impl fmt::Debug for BehaviorCodeTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BehaviorCodeTable")
            .field("offset", &self.offset)
            .field("codes", &self.codes_by_state())
            .finish()
    }
}

impl Default for BehaviorCodeTable {
    /// Offset 0; byte values 1..=14 map to the states in canonical order.
    fn default() -> Self {
        let mut mapping = [None; 256];
        for (i, st) in BehaviorState::ALL.iter().enumerate() {
            mapping[i + 1] = Some(*st);
        }
        Self { offset: 0, mapping }
    }
}

impl BehaviorCodeTable {
    pub fn new(offset: usize, codes: &BTreeMap<BehaviorState, Vec<u8>>) -> Result<Self> {
        let mut mapping = [None; 256];
        for st in BehaviorState::ALL {
            let values = codes
                .get(&st)
                .ok_or_else(|| Error::Config(format!("behavior table is missing state `{st}`")))?;
            if values.is_empty() {
                return Err(Error::Config(format!("behavior state `{st}` has no codes")));
            }
            for &v in values {
                if let Some(prev) = mapping[v as usize] {
                    return Err(Error::Config(format!(
                        "byte value {v} mapped to both `{prev}` and `{st}`"
                    )));
                }
                mapping[v as usize] = Some(st);
            }
        }
        Ok(Self { offset, mapping })
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn lookup(&self, byte: u8) -> BehaviorCode {
        self.mapping[byte as usize].map_or(BehaviorCode::Zero, BehaviorCode::State)
    }

    /// First byte value that maps to `state`.
    pub fn code_for(&self, state: BehaviorState) -> u8 {
        self.mapping
            .iter()
            .position(|m| *m == Some(state))
            .expect("every state has at least one code") as u8
    }

    pub fn codes_by_state(&self) -> BTreeMap<BehaviorState, Vec<u8>> {
        let mut out: BTreeMap<BehaviorState, Vec<u8>> = BTreeMap::new();
        for (v, m) in self.mapping.iter().enumerate() {
            if let Some(st) = m {
                out.entry(*st).or_default().push(v as u8);
            }
        }
        out
    }

    /// Reads a table file: `offset = N` followed by one `STATE = [codes...]` line per state.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("behavior table: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        let mut s = format!("offset = {}\n", self.offset);
        for (st, codes) in self.codes_by_state() {
            let list: Vec<String> = codes.iter().map(u8::to_string).collect();
            s.push_str(&format!("{} = [{}]\n", st.short_name(), list.join(", ")));
        }
        s
    }
}

impl TryFrom<BTreeMap<String, RawEntry>> for BehaviorCodeTable {
    type Error = Error;

    fn try_from(raw: BTreeMap<String, RawEntry>) -> Result<Self> {
        let mut offset = None;
        let mut codes = BTreeMap::new();
        for (key, entry) in raw {
            match (key.as_str(), entry) {
                ("offset", RawEntry::Offset(o)) => offset = Some(o),
                ("offset", RawEntry::Codes(_)) => {
                    return Err(Error::Config("`offset` must be an integer".into()))
                }
                (name, RawEntry::Codes(c)) => {
                    codes.insert(name.parse::<BehaviorState>()?, c);
                }
                (name, RawEntry::Offset(_)) => {
                    return Err(Error::Config(format!("`{name}` must be a list of byte values")))
                }
            }
        }
        let offset = offset.ok_or_else(|| Error::Config("behavior table is missing `offset`".into()))?;
        Self::new(offset, &codes)
    }
}

impl From<BehaviorCodeTable> for BTreeMap<String, RawEntry> {
    fn from(t: BehaviorCodeTable) -> Self {
        let mut m = BTreeMap::new();
        m.insert("offset".to_string(), RawEntry::Offset(t.offset));
        for (st, codes) in t.codes_by_state() {
            m.insert(st.short_name().to_string(), RawEntry::Codes(codes));
        }
        m
    }
}

/// Returns the state named by the byte at the table's offset, or `Zero` when
/// the payload is too short or the byte is unmapped.
pub fn extract_behavior_code(payload: &[u8], table: &BehaviorCodeTable) -> BehaviorCode {
    payload
        .get(table.offset)
        .map_or(BehaviorCode::Zero, |&b| table.lookup(b))
}
