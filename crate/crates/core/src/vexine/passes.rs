//! The individual normalization passes. Each is a single linear scan (or
//! one forward plus one backward scan) over the statement list.

use std::collections::{HashMap, HashSet};

use super::analysis::{available_exprs, uses, Loc, Versions};
use super::interp::{eval_op, Value};
use crate::ir::{Expr, IrType, Operand, Slot, Statement, Tmp};
use crate::opcodes::OpcodeTable;

fn copy_of(dst: Operand, ty: IrType, v: Operand) -> Statement {
    Statement::Assign { dst, ty, expr: Expr::Operand(v) }
}

fn forwardable(o: &Operand) -> bool {
    matches!(o, Operand::Tmp(_) | Operand::Int { .. } | Operand::Float(_))
}

/// Replace `get(rK)` with the value last put into (or read from) `rK`.
pub fn register_promotion(stmts: &[Statement]) -> Vec<Statement> {
    let mut vers = Versions::default();
    let mut regval: HashMap<u32, (Operand, u32)> = HashMap::new();
    let mut out = Vec::with_capacity(stmts.len());
    for s in stmts {
        let mut s = s.clone();
        match &s {
            Statement::Assign { dst, ty, expr: Expr::Get { reg: Operand::Reg(r), .. } } => {
                let r = *r;
                if let Some(v) = regval.get(&r).filter(|v| vers.valid(v)) {
                    s = copy_of(*dst, *ty, v.0);
                    vers.apply(&s);
                } else {
                    vers.apply(&s);
                    if dst.as_tmp().is_some() {
                        regval.insert(r, vers.versioned(dst));
                    }
                }
            }
            Statement::Put { reg: Operand::Reg(r), value } => {
                let r = *r;
                let value = *value;
                vers.apply(&s);
                if forwardable(&value) {
                    regval.insert(r, vers.versioned(&value));
                } else {
                    regval.remove(&r);
                }
            }
            Statement::PutI { reg: Operand::Reg(r), .. } => {
                let r = *r;
                vers.apply(&s);
                regval.remove(&r);
            }
            Statement::Call { .. } => {
                vers.apply(&s);
                regval.clear();
            }
            _ => vers.apply(&s),
        }
        out.push(s);
    }
    out
}

/// Drop puts that store the value the register already holds, and puts
/// that are overwritten before anything can read them.
pub fn redundant_write_elimination(stmts: &[Statement]) -> Vec<Statement> {
    let mut vers = Versions::default();
    let mut regval: HashMap<u32, (Operand, u32)> = HashMap::new();
    let mut kept = Vec::with_capacity(stmts.len());
    for s in stmts {
        match s {
            Statement::Put { reg: Operand::Reg(r), value } => {
                if regval.get(r).is_some_and(|v| vers.valid(v) && v.0 == *value) {
                    continue;
                }
                vers.apply(s);
                if forwardable(value) {
                    regval.insert(*r, vers.versioned(value));
                } else {
                    regval.remove(r);
                }
            }
            Statement::Assign { dst: dst @ Operand::Tmp(_), expr: Expr::Get { reg: Operand::Reg(r), .. }, .. } => {
                vers.apply(s);
                if !regval.get(r).is_some_and(|v| vers.valid(v)) {
                    regval.insert(*r, vers.versioned(dst));
                }
            }
            Statement::PutI { reg: Operand::Reg(r), .. } => {
                vers.apply(s);
                regval.remove(r);
            }
            Statement::Call { .. } => {
                vers.apply(s);
                regval.clear();
            }
            _ => vers.apply(s),
        }
        kept.push(s.clone());
    }

    let mut overwritten: HashSet<u32> = HashSet::new();
    let mut out: Vec<Statement> = Vec::with_capacity(kept.len());
    for s in kept.into_iter().rev() {
        match &s {
            Statement::Put { reg: Operand::Reg(r), .. } | Statement::PutI { reg: Operand::Reg(r), .. } => {
                if matches!(s, Statement::Put { .. }) && overwritten.contains(r) {
                    continue;
                }
                overwritten.insert(*r);
            }
            Statement::Call { .. } => overwritten.clear(),
            _ => {}
        }
        for u in uses(&s) {
            if let Loc::Reg(r) = u {
                overwritten.remove(&r);
            }
        }
        out.push(s);
    }
    out.reverse();
    out
}

/// Remove assignments to tmps that are never read afterwards, when
/// `removable` allows it. Calls are always kept.
fn remove_dead(stmts: Vec<Statement>, removable: impl Fn(&Statement) -> bool) -> Vec<Statement> {
    let mut live: HashSet<Tmp> = HashSet::new();
    let mut out = Vec::with_capacity(stmts.len());
    for s in stmts.into_iter().rev() {
        if let Statement::Assign { dst: Operand::Tmp(t), .. } = &s {
            if !live.contains(t) && removable(&s) {
                continue;
            }
        }
        if let Some(t) = s.def_tmp() {
            live.remove(&t);
        }
        live.extend(s.used_tmps());
        out.push(s);
    }
    out.reverse();
    out
}

fn is_copy(s: &Statement) -> bool {
    matches!(s, Statement::Assign { expr: Expr::Operand(Operand::Tmp(_)), .. })
}

fn is_const_assign(s: &Statement) -> bool {
    matches!(s, Statement::Assign { expr: Expr::Operand(o), .. } if o.is_const())
}

/// Rewrite uses of `a` after `a = b` to `b`, then drop self and dead copies.
pub fn copy_propagation(stmts: &[Statement]) -> Vec<Statement> {
    let mut vers = Versions::default();
    // dst -> (dst version, source with version)
    let mut copies: HashMap<Tmp, (u32, (Operand, u32))> = HashMap::new();
    let mut out = Vec::with_capacity(stmts.len());
    for s in stmts {
        let mut s = s.clone();
        s.for_each_use_mut(|slot, o| {
            if slot == Slot::Register {
                return;
            }
            if let Operand::Tmp(t) = o {
                if let Some((dv, src)) = copies.get(t) {
                    if vers.tmp(*t) == *dv && vers.valid(src) {
                        *o = src.0;
                    }
                }
            }
        });
        vers.apply(&s);
        if let Statement::Assign { dst: Operand::Tmp(d), expr: Expr::Operand(src @ Operand::Tmp(st)), .. } = &s {
            if d == st {
                continue;
            }
            copies.insert(*d, (vers.tmp(*d), vers.versioned(src)));
        }
        out.push(s);
    }
    remove_dead(out, is_copy)
}

fn value_of(o: &Operand) -> Option<Value> {
    match *o {
        Operand::Int { value, .. } => Some(Value::Bits(value as u64)),
        Operand::Float(b) => Some(Value::Bits(b)),
        _ => None,
    }
}

fn constant(bits: u64, ty: IrType) -> Operand {
    if ty.is_float() {
        Operand::Float(bits)
    } else {
        Operand::Int { value: bits as i64 as i128, ty: ty.class() }
    }
}

/// Substitute known constants for tmps and fold constant operations.
pub fn constant_propagation(stmts: &[Statement]) -> Vec<Statement> {
    let table = OpcodeTable::builtin();
    let mut vers = Versions::default();
    let mut consts: HashMap<Tmp, (u32, Operand)> = HashMap::new();
    let mut out = Vec::with_capacity(stmts.len());
    for s in stmts {
        let mut s = s.clone();
        s.for_each_use_mut(|slot, o| {
            if slot == Slot::Register {
                return;
            }
            if let Operand::Tmp(t) = o {
                if let Some((v, c)) = consts.get(t) {
                    if vers.tmp(*t) == *v {
                        *o = *c;
                    }
                }
            }
        });
        if let Statement::Assign { ty, expr, .. } = &mut s {
            if let Expr::Op { op, args } = expr {
                let foldable = table.foldable(op) && table.canonical(op).is_some_and(|i| i.class != IrType::Vector);
                if foldable {
                    if let Some(vals) = args.iter().map(value_of).collect::<Option<Vec<_>>>() {
                        if let Value::Bits(b) = eval_op(op, &vals) {
                            *expr = Expr::Operand(constant(b, *ty));
                        }
                    }
                }
            }
        }
        vers.apply(&s);
        if let Statement::Assign { dst: Operand::Tmp(d), expr: Expr::Operand(c), .. } = &s {
            if c.is_const() {
                consts.insert(*d, (vers.tmp(*d), *c));
            }
        }
        out.push(s);
    }
    remove_dead(out, is_const_assign)
}

/// Replace recomputations of an available expression with a copy.
pub fn common_subexpression_elimination(stmts: &[Statement]) -> Vec<Statement> {
    let avail = available_exprs(stmts);
    stmts
        .iter()
        .zip(avail)
        .map(|(s, a)| match (s, a) {
            (Statement::Assign { dst, ty, .. }, Some(h)) => copy_of(*dst, *ty, Operand::Tmp(h)),
            _ => s.clone(),
        })
        .collect()
}

/// Forward stored (or previously loaded) values to later loads of the same
/// symbolic address.
pub fn load_store_elimination(stmts: &[Statement]) -> Vec<Statement> {
    let mut vers = Versions::default();
    let mut mem: HashMap<u32, (Operand, u32)> = HashMap::new();
    let mut out = Vec::with_capacity(stmts.len());
    for s in stmts {
        let mut s = s.clone();
        match &s {
            Statement::Assign { dst, ty, expr: Expr::Load { addr: Operand::Mem(m), .. } } => {
                let m = *m;
                if let Some(v) = mem.get(&m).filter(|v| vers.valid(v)) {
                    s = copy_of(*dst, *ty, v.0);
                    vers.apply(&s);
                } else {
                    vers.apply(&s);
                    if dst.as_tmp().is_some() {
                        mem.insert(m, vers.versioned(dst));
                    }
                }
            }
            Statement::Store { addr: Operand::Mem(m), value } => {
                vers.apply(&s);
                if forwardable(value) {
                    mem.insert(*m, vers.versioned(value));
                } else {
                    mem.remove(m);
                }
            }
            Statement::Store { .. } | Statement::Call { .. } => {
                vers.apply(&s);
                mem.clear();
            }
            _ => vers.apply(&s),
        }
        out.push(s);
    }
    out
}

/// Drop stores to a symbolic address that is stored again before any load.
pub fn store_store_elimination(stmts: &[Statement]) -> Vec<Statement> {
    let mut overwritten: HashSet<u32> = HashSet::new();
    let mut out = Vec::with_capacity(stmts.len());
    for s in stmts.iter().rev() {
        match s {
            Statement::Store { addr: Operand::Mem(m), .. } => {
                if !overwritten.insert(*m) {
                    continue;
                }
            }
            Statement::Assign { expr: Expr::Load { .. }, .. } | Statement::Call { .. } => overwritten.clear(),
            _ => {}
        }
        out.push(s.clone());
    }
    out.reverse();
    out
}

/// Remove every tmp assignment whose result is never used.
pub fn dead_temp_elimination(stmts: &[Statement]) -> Vec<Statement> {
    remove_dead(stmts.to_vec(), |_| true)
}
