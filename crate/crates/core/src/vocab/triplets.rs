use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ir::{Abstract, Expr, IrType, Operand, Statement, Tmp};
use crate::opcodes::{OpcodeTable, UNKNOWN};
use crate::peephole::Peephole;

/// Maximum number of argument relations.
pub const MAX_ARGS: usize = 8;

/// Opcode-like entity names for statements that are not operations.
pub const STATEMENT_KINDS: [&str; 8] = ["call", "copy", "get", "geti", "load", "put", "puti", "store"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Relation {
    Type,
    Next,
    /// `Arg(i)` for `1 <= i <= 8`.
    Arg(u8),
}

impl Relation {
    pub fn all() -> Vec<Relation> {
        let mut out = vec![Relation::Type, Relation::Next];
        out.extend((1..=MAX_ARGS as u8).map(Relation::Arg));
        out
    }

    pub fn names() -> Vec<String> {
        Relation::all().iter().map(|r| r.to_string()).collect()
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Relation::Type => f.write_str("TYPE"),
            Relation::Next => f.write_str("NEXT"),
            Relation::Arg(i) => write!(f, "ARG{i}"),
        }
    }
}

impl FromStr for Relation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "TYPE" => Ok(Relation::Type),
            "NEXT" => Ok(Relation::Next),
            _ => s
                .strip_prefix("ARG")
                .and_then(|i| i.parse::<u8>().ok())
                .filter(|i| (1..=MAX_ARGS as u8).contains(i))
                .map(Relation::Arg)
                .ok_or_else(|| Error::UnknownEntity(s.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triplet {
    pub head: String,
    pub relation: Relation,
    pub tail: String,
}

impl Triplet {
    pub fn new(head: &str, relation: Relation, tail: &str) -> Self {
        Triplet { head: head.to_string(), relation, tail: tail.to_string() }
    }
}

impl fmt::Display for Triplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.head, self.relation, self.tail)
    }
}

/// The opcode, type class and abstract arguments of one statement.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StatementEntities {
    pub opcode: String,
    pub ty: IrType,
    pub args: Vec<Abstract>,
}

/// Type classes of tmps, tracked while walking a peephole in order.
#[derive(Default, Debug)]
pub struct TypeEnv {
    tmps: HashMap<Tmp, IrType>,
}

impl TypeEnv {
    pub fn operand_class(&self, o: &Operand) -> IrType {
        match o {
            Operand::Tmp(t) => self.tmps.get(t).copied().unwrap_or(IrType::Int),
            Operand::Int { ty, .. } => ty.class(),
            Operand::Float(_) => IrType::Double,
            _ => IrType::Int,
        }
    }

    pub fn record(&mut self, s: &Statement) {
        match s {
            Statement::Assign { dst: Operand::Tmp(t), ty, .. } | Statement::Call { ret: Some((Operand::Tmp(t), ty)), .. } => {
                self.tmps.insert(*t, ty.class());
            }
            _ => {}
        }
    }
}

fn opcode_entity(op: &str) -> String {
    let table = OpcodeTable::builtin();
    if table.is_canonical(op) {
        op.to_string()
    } else {
        table.raw(op).map(|i| i.canonical.clone()).filter(|c| table.is_canonical(c)).unwrap_or_else(|| UNKNOWN.to_string())
    }
}

/// Decompose a statement into entities. Operands are abstracted here.
pub fn statement_entities(s: &Statement, env: &TypeEnv) -> StatementEntities {
    let abs = |o: &Operand| o.abstraction();
    let (opcode, ty, args): (String, IrType, Vec<Abstract>) = match s {
        Statement::Assign { ty, expr, .. } => match expr {
            Expr::Get { reg, .. } => ("get".into(), *ty, vec![abs(reg)]),
            Expr::GetI { reg, .. } => ("geti".into(), *ty, vec![abs(reg)]),
            Expr::Load { addr, .. } => ("load".into(), *ty, vec![abs(addr)]),
            Expr::Op { op, args } => (opcode_entity(op), *ty, args.iter().map(abs).collect()),
            Expr::Operand(o) => ("copy".into(), *ty, vec![abs(o)]),
        },
        Statement::Put { reg, value } => ("put".into(), env.operand_class(value), vec![abs(reg), abs(value)]),
        Statement::PutI { reg, value } => ("puti".into(), env.operand_class(value), vec![abs(reg), abs(value)]),
        Statement::Store { addr, value } => ("store".into(), env.operand_class(value), vec![abs(addr), abs(value)]),
        Statement::Call { ret, args, .. } => {
            let mut a = vec![Abstract::Func];
            a.extend(args.iter().map(abs));
            ("call".into(), ret.map_or(IrType::Int, |(_, t)| t), a)
        }
    };
    let mut args = args;
    args.truncate(MAX_ARGS);
    StatementEntities { opcode, ty: ty.class(), args }
}

/// Entities of every statement of a straight-line sequence, in order.
pub fn peephole_entities(statements: &[Statement]) -> Vec<StatementEntities> {
    let mut env = TypeEnv::default();
    statements
        .iter()
        .map(|s| {
            let e = statement_entities(s, &env);
            env.record(s);
            e
        })
        .collect()
}

/// Knowledge-graph triplets of one canonical peephole.
pub fn extract_triplets(p: &Peephole) -> Vec<Triplet> {
    triplets_of(&p.statements)
}

pub fn triplets_of(statements: &[Statement]) -> Vec<Triplet> {
    let ents = peephole_entities(statements);
    let mut out = Vec::new();
    for (i, e) in ents.iter().enumerate() {
        out.push(Triplet::new(&e.opcode, Relation::Type, e.ty.name()));
        for (j, a) in e.args.iter().enumerate() {
            out.push(Triplet::new(&e.opcode, Relation::Arg(j as u8 + 1), a.name()));
        }
        if let Some(next) = ents.get(i + 1) {
            out.push(Triplet::new(&e.opcode, Relation::Next, &next.opcode));
        }
    }
    out
}

/// Every entity name the extractor can emit, sorted.
pub fn entity_inventory() -> Vec<String> {
    let table = OpcodeTable::builtin();
    let mut names: Vec<String> = table.canonical_names().map(str::to_string).collect();
    names.push(UNKNOWN.to_string());
    names.extend(STATEMENT_KINDS.iter().map(|s| s.to_string()));
    names.extend(IrType::CLASSES.iter().map(|t| t.name().to_string()));
    names.extend(Abstract::ALL.iter().map(|a| a.name().to_string()));
    names.sort();
    names.dedup();
    names
}

/// `head relation tail` lines.
pub fn format_triplets(triplets: &[Triplet]) -> String {
    let mut out = String::new();
    for t in triplets {
        out.push_str(&t.to_string());
        out.push('\n');
    }
    out
}

pub fn parse_triplets(text: &str) -> Result<Vec<Triplet>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 3 {
            return Err(Error::malformed(i + 1, "expected `head relation tail`"));
        }
        let relation = f[1].parse().map_err(|_| Error::malformed(i + 1, format!("unknown relation `{}`", f[1])))?;
        out.push(Triplet::new(f[0], relation, f[2]));
    }
    Ok(out)
}
