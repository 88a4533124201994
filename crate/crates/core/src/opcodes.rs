//! The data-driven opcode table.
//!
//! Each line of `opcodes.tbl` reads
//! `RAW_NAME canonical_name type_class commutative foldable`.
//! The canonical name `cast` marks width-only conversions, which
//! canonicalization removes by forwarding their operand.

use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::ir::IrType;

/// Canonical name reserved for removable width casts.
pub const CAST: &str = "cast";
/// Canonical name substituted for opcodes missing from the table.
pub const UNKNOWN: &str = "unk";

const BUILTIN_TABLE: &str = include_str!("../data/opcodes.tbl");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpcodeInfo {
    pub canonical: String,
    pub class: IrType,
    pub commutative: bool,
    pub foldable: bool,
}

#[derive(Debug, Clone)]
pub struct OpcodeTable {
    raw: HashMap<String, OpcodeInfo>,
    canonical: BTreeMap<String, OpcodeInfo>,
}

impl OpcodeTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = HashMap::new();
        let mut canonical: BTreeMap<String, OpcodeInfo> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 5 {
                return Err(Error::malformed(i + 1, "expected 5 fields"));
            }
            let class: IrType = f[2]
                .parse()
                .map_err(|_| Error::malformed(i + 1, format!("bad type class `{}`", f[2])))?;
            if !class.is_canonical() {
                return Err(Error::malformed(i + 1, "type class must be INT, FLOAT, DOUBLE or VECTOR"));
            }
            let flag = |s: &str| match s {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(Error::malformed(i + 1, format!("bad flag `{s}`"))),
            };
            let info = OpcodeInfo {
                canonical: f[1].to_string(),
                class,
                commutative: flag(f[3])?,
                foldable: flag(f[4])?,
            };
            if raw.insert(f[0].to_string(), info.clone()).is_some() {
                return Err(Error::malformed(i + 1, format!("duplicate raw opcode `{}`", f[0])));
            }
            if info.canonical != CAST {
                canonical.entry(info.canonical.clone()).or_insert(info);
            }
        }
        Ok(OpcodeTable { raw, canonical })
    }

    /// The table shipped with the crate.
    pub fn builtin() -> &'static OpcodeTable {
        static TABLE: OnceLock<OpcodeTable> = OnceLock::new();
        TABLE.get_or_init(|| OpcodeTable::parse(BUILTIN_TABLE).expect("builtin opcode table"))
    }

    pub fn raw(&self, name: &str) -> Option<&OpcodeInfo> {
        self.raw.get(name)
    }

    pub fn canonical(&self, name: &str) -> Option<&OpcodeInfo> {
        self.canonical.get(name)
    }

    pub fn is_canonical(&self, name: &str) -> bool {
        self.canonical.contains_key(name) || name == UNKNOWN
    }

    /// Any spelling the parser accepts: raw, canonical or `unk`.
    pub fn is_known(&self, name: &str) -> bool {
        self.raw.contains_key(name) || self.is_canonical(name)
    }

    pub fn is_cast(&self, name: &str) -> bool {
        self.raw.get(name).is_some_and(|i| i.canonical == CAST)
    }

    pub fn raw_names(&self) -> impl Iterator<Item = &str> {
        self.raw.keys().map(String::as_str)
    }

    /// Sorted canonical opcode names, excluding `unk`.
    pub fn canonical_names(&self) -> impl Iterator<Item = &str> {
        self.canonical.keys().map(String::as_str)
    }

    pub fn commutative(&self, canonical: &str) -> bool {
        self.canonical.get(canonical).is_some_and(|i| i.commutative)
    }

    pub fn foldable(&self, canonical: &str) -> bool {
        self.canonical.get(canonical).is_some_and(|i| i.foldable)
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }
}
