//! Straight-line dataflow analyses over peephole statement lists.

use std::collections::HashMap;

use crate::ir::{Expr, Operand, Slot, Statement, Tmp};
use crate::opcodes::{OpcodeTable, UNKNOWN};

/// A tmp or a register.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Loc {
    Tmp(u32),
    Reg(u32),
}

/// One use of a location and the statement that last defined it; `None`
/// means the value is a peephole parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UseDef {
    pub stmt: usize,
    pub loc: Loc,
    pub def: Option<usize>,
}

/// Locations read by a statement, in operand order.
pub fn uses(s: &Statement) -> Vec<Loc> {
    let mut out = Vec::new();
    let is_assign = matches!(s, Statement::Assign { .. });
    s.for_each_use(|slot, o| match (slot, o) {
        (Slot::Register, Operand::Reg(r)) if is_assign => out.push(Loc::Reg(*r)),
        (Slot::Register, _) => {}
        (_, Operand::Tmp(t)) => out.push(Loc::Tmp(t.0)),
        (_, Operand::Reg(r)) => out.push(Loc::Reg(*r)),
        _ => {}
    });
    out
}

/// The location a statement writes, if any.
pub fn def(s: &Statement) -> Option<Loc> {
    match s {
        Statement::Put { reg: Operand::Reg(r), .. } | Statement::PutI { reg: Operand::Reg(r), .. } => Some(Loc::Reg(*r)),
        _ => s.def_tmp().map(|t| Loc::Tmp(t.0)),
    }
}

/// Reaching definitions for every tmp and register use, in one scan.
pub fn reaching_defs(statements: &[Statement]) -> Vec<UseDef> {
    let mut last: HashMap<Loc, usize> = HashMap::new();
    let mut out = Vec::new();
    for (i, s) in statements.iter().enumerate() {
        for loc in uses(s) {
            out.push(UseDef { stmt: i, loc, def: last.get(&loc).copied() });
        }
        if let Some(d) = def(s) {
            last.insert(d, i);
        }
    }
    out
}

/// Write counters for tmps and registers; an operand's value is unchanged
/// while its version is.
#[derive(Default, Debug)]
pub(crate) struct Versions {
    tmp: HashMap<u32, u32>,
    reg: HashMap<u32, u32>,
}

impl Versions {
    pub fn of(&self, o: &Operand) -> u32 {
        match o {
            Operand::Tmp(t) => self.tmp.get(&t.0).copied().unwrap_or(0),
            Operand::Reg(r) => self.reg.get(r).copied().unwrap_or(0),
            _ => 0,
        }
    }

    pub fn tmp(&self, t: Tmp) -> u32 {
        self.of(&Operand::Tmp(t))
    }

    pub fn versioned(&self, o: &Operand) -> (Operand, u32) {
        (*o, self.of(o))
    }

    pub fn valid(&self, v: &(Operand, u32)) -> bool {
        self.of(&v.0) == v.1
    }

    pub fn apply(&mut self, s: &Statement) {
        match def(s) {
            Some(Loc::Tmp(t)) => *self.tmp.entry(t).or_insert(0) += 1,
            Some(Loc::Reg(r)) => *self.reg.entry(r).or_insert(0) += 1,
            None => {}
        }
    }
}

/// Counters that invalidate remembered loads.
#[derive(Default, Debug)]
pub(crate) struct MemEpochs {
    per_mem: HashMap<u32, u32>,
    dynamic_stores: u32,
    stores: u32,
    calls: u32,
}

impl MemEpochs {
    pub fn load_epoch(&self, addr: &Operand) -> (u32, u32, u32) {
        match addr {
            Operand::Mem(m) => (self.per_mem.get(m).copied().unwrap_or(0), self.dynamic_stores, self.calls),
            _ => (self.stores, 0, self.calls),
        }
    }

    pub fn apply(&mut self, s: &Statement) {
        match s {
            Statement::Store { addr: Operand::Mem(m), .. } => {
                *self.per_mem.entry(*m).or_insert(0) += 1;
                self.stores += 1;
            }
            Statement::Store { .. } => {
                self.dynamic_stores += 1;
                self.stores += 1;
            }
            Statement::Call { .. } => self.calls += 1,
            _ => {}
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub(crate) enum ExprKey {
    Op { op: String, ty: crate::ir::IrType, args: Vec<(Operand, u32)> },
    Load { ty: crate::ir::IrType, addr: (Operand, u32), epoch: (u32, u32, u32) },
}

/// Key of the value computed by `s`, if it is a CSE candidate.
pub(crate) fn expr_key(s: &Statement, vers: &Versions, mem: &MemEpochs, table: &OpcodeTable) -> Option<ExprKey> {
    let Statement::Assign { dst: Operand::Tmp(_), ty, expr } = s else { return None };
    match expr {
        Expr::Op { op, args } if op != UNKNOWN => {
            let mut args: Vec<_> = args.iter().map(|a| vers.versioned(a)).collect();
            if table.commutative(op) {
                args.sort();
            }
            Some(ExprKey::Op { op: op.clone(), ty: *ty, args })
        }
        Expr::Load { addr, ty } => Some(ExprKey::Load { ty: *ty, addr: vers.versioned(addr), epoch: mem.load_epoch(addr) }),
        _ => None,
    }
}

/// For each statement, the tmp that already holds the value it computes.
///
/// An expression is available when an earlier statement computed it, none
/// of its operands changed since, and (for loads) no store or call that
/// may clobber the address intervened. The most recent computation wins.
pub fn available_exprs(statements: &[Statement]) -> Vec<Option<Tmp>> {
    let table = OpcodeTable::builtin();
    let mut vers = Versions::default();
    let mut mem = MemEpochs::default();
    let mut holders: HashMap<ExprKey, (Tmp, u32)> = HashMap::new();
    let mut out = Vec::with_capacity(statements.len());
    for s in statements {
        let key = expr_key(s, &vers, &mem, table);
        let avail = key
            .as_ref()
            .and_then(|k| holders.get(k))
            .filter(|(t, v)| vers.tmp(*t) == *v)
            .map(|(t, _)| *t);
        out.push(avail);
        vers.apply(s);
        mem.apply(s);
        if let (Some(k), Some(t)) = (key, s.def_tmp()) {
            holders.insert(k, (t, vers.tmp(t)));
        }
    }
    out
}
