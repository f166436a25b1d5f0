//! Demand registers: the per-core register image that carries a user's
//! security/performance demand, and the maps that turn demands into actions.
//!
//! Register layout (64 bits):
//!
//! ```text
//!  63            36 35  34 33  32 31                             0
//! +----------------+------+------+--------------------------------+
//! |  reserved (0)  |  SD  |  PD  |            user pid            |
//! +----------------+------+------+--------------------------------+
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::policy;
use crate::topology::{CoreId, Topology};

const SD_SHIFT: u32 = 34;
const PD_SHIFT: u32 = 32;
const FIELD_MASK: u64 = 0b11;
const PID_MASK: u64 = 0xFFFF_FFFF;
const RESERVED_MASK: u64 = !((1u64 << 36) - 1);

/// Highest value a 2-bit demand code can take.
pub const MAX_DEMAND: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DemandRecord {
    user_pid: u32,
    sd: u8,
    pd: u8,
}

impl DemandRecord {
    pub fn new(user_pid: u32, sd: u8, pd: u8) -> Result<Self> {
        check_level("sd", sd)?;
        check_level("pd", pd)?;
        Ok(Self { user_pid, sd, pd })
    }

    pub fn user_pid(&self) -> u32 {
        self.user_pid
    }

    pub fn sd(&self) -> u8 {
        self.sd
    }

    pub fn pd(&self) -> u8 {
        self.pd
    }
}

pub(crate) fn check_level(field: &'static str, value: u8) -> Result<()> {
    if value > MAX_DEMAND {
        Err(Error::InvalidDemand {
            field,
            value: value as u64,
        })
    } else {
        Ok(())
    }
}

/// Raw 64-bit demand register image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MsrWord(pub u64);

impl fmt::Display for MsrWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016X}", self.0)
    }
}

pub fn encode_demand(rec: &DemandRecord) -> MsrWord {
    MsrWord(((rec.sd as u64) << SD_SHIFT) | ((rec.pd as u64) << PD_SHIFT) | rec.user_pid as u64)
}

pub fn decode_demand(word: MsrWord) -> Result<DemandRecord> {
    if word.0 & RESERVED_MASK != 0 {
        return Err(Error::MalformedRegister(word.0));
    }
    Ok(DemandRecord {
        user_pid: (word.0 & PID_MASK) as u32,
        sd: ((word.0 >> SD_SHIFT) & FIELD_MASK) as u8,
        pd: ((word.0 >> PD_SHIFT) & FIELD_MASK) as u8,
    })
}

/// Defense action, ordered from weakest to strongest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ActionId {
    /// No protection.
    A00,
    /// Halt the siblings of the protected core.
    A01,
    /// Halt every logical core except the protected one.
    A10,
}

impl ActionId {
    pub const ALL: [ActionId; 3] = [ActionId::A00, ActionId::A01, ActionId::A10];

    pub fn code(self) -> u8 {
        match self {
            ActionId::A00 => 0b00,
            ActionId::A01 => 0b01,
            ActionId::A10 => 0b10,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0b00 => Ok(ActionId::A00),
            0b01 => Ok(ActionId::A01),
            0b10 => Ok(ActionId::A10),
            other => Err(Error::InvalidAction(other)),
        }
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActionId::A00 => "A00",
            ActionId::A01 => "A01",
            ActionId::A10 => "A10",
        })
    }
}

impl FromStr for ActionId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A00" | "00" => Ok(ActionId::A00),
            "A01" | "01" => Ok(ActionId::A01),
            "A10" | "10" => Ok(ActionId::A10),
            _ => Err(format!("unknown action `{s}` (expected A00, A01 or A10)")),
        }
    }
}

/// Total map from every (sd, pd) combination to an action.
///
/// One entry per demand combination, 16 in all.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionMap {
    table: [[ActionId; 4]; 4],
}

impl ActionMap {
    pub fn uniform(action: ActionId) -> Self {
        Self {
            table: [[action; 4]; 4],
        }
    }

    pub fn get(&self, sd: u8, pd: u8) -> Result<ActionId> {
        check_level("sd", sd)?;
        check_level("pd", pd)?;
        Ok(self.table[sd as usize][pd as usize])
    }

    /// Administrator override of one entry.
    pub fn set(&mut self, sd: u8, pd: u8, action: ActionId) -> Result<()> {
        check_level("sd", sd)?;
        check_level("pd", pd)?;
        self.table[sd as usize][pd as usize] = action;
        Ok(())
    }

    pub fn lookup(&self, rec: &DemandRecord) -> ActionId {
        self.table[rec.sd as usize][rec.pd as usize]
    }

    /// The 16 entries as register images: bits 1..0 hold the action code.
    pub fn to_registers(&self) -> [MsrWord; 16] {
        let mut out = [MsrWord(0); 16];
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = MsrWord(self.table[i / 4][i % 4].code() as u64);
        }
        out
    }

    /// Rows are sd, columns pd.
    pub fn render_table(&self) -> String {
        let mut out = String::from("sd\\pd  0    1    2    3\n");
        for (sd, row) in self.table.iter().enumerate() {
            out.push_str(&format!("{sd:<5}"));
            for action in row {
                out.push_str(&format!("  {action}"));
            }
            out.push('\n');
        }
        out
    }
}

impl Default for ActionMap {
    fn default() -> Self {
        policy::build_default_action_map()
    }
}

pub fn lookup_action(map: &ActionMap, rec: &DemandRecord) -> ActionId {
    map.lookup(rec)
}

/// Demand records registered per logical core, at most one per core.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DemandMap {
    entries: BTreeMap<CoreId, DemandRecord>,
}

impl DemandMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `rec` on `lc`, replacing whatever was there.
    pub fn register(&mut self, topo: &Topology, lc: CoreId, rec: DemandRecord) -> Result<()> {
        topo.check(lc)?;
        self.entries.insert(lc, rec);
        Ok(())
    }

    pub fn get(&self, lc: CoreId) -> Option<&DemandRecord> {
        self.entries.get(&lc)
    }

    pub fn iter(&self) -> impl Iterator<Item = (CoreId, &DemandRecord)> {
        self.entries.iter().map(|(&c, r)| (c, r))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Register image for `lc`, if a record is present.
    pub fn register_image(&self, lc: CoreId) -> Option<MsrWord> {
        self.get(lc).map(encode_demand)
    }
}

pub fn register_demand(
    mut map: DemandMap,
    topo: &Topology,
    lc: CoreId,
    rec: DemandRecord,
) -> Result<DemandMap> {
    map.register(topo, lc, rec)?;
    Ok(map)
}
