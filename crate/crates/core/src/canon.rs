//! Canonicalization: collapse raw opcodes and widths into a small canonical
//! vocabulary, drop width casts, normalize negative constants and replace
//! indirect memory accesses with fresh symbolic addresses.

use std::collections::{HashMap, HashSet};

use crate::ir::{Abstract, CallTarget, Expr, IrFunction, Operand, Slot, Statement, Tmp};
use crate::opcodes::{OpcodeTable, UNKNOWN};
use crate::peephole::Peephole;

#[derive(Clone, Copy, Debug)]
pub struct CanonOptions {
    /// Rewrite non-symbolic load/store addresses to fresh `M` ids.
    pub indirect_memory: bool,
}

impl Default for CanonOptions {
    fn default() -> Self {
        CanonOptions { indirect_memory: true }
    }
}

/// A statement whose opcode was missing from the table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnknownOpcode {
    pub block: u32,
    pub index: usize,
    pub opcode: String,
}

pub fn canonicalize_function(f: &IrFunction) -> IrFunction {
    canonicalize_with(f, OpcodeTable::builtin(), CanonOptions::default()).0
}

pub fn canonicalize_with(f: &IrFunction, table: &OpcodeTable, opts: CanonOptions) -> (IrFunction, Vec<UnknownOpcode>) {
    let mut out = f.clone();
    let mut unknown = Vec::new();

    // Casts: collect their sources, then forward through chains.
    let mut forward: HashMap<Tmp, Operand> = HashMap::new();
    for b in &mut out.blocks {
        b.statements.retain(|s| match s {
            Statement::Assign { dst: Operand::Tmp(t), expr: Expr::Op { op, args }, .. } if table.is_cast(op) && args.len() == 1 => {
                forward.insert(*t, args[0]);
                false
            }
            _ => true,
        });
    }
    let resolve = |mut o: Operand| {
        let mut guard = 0;
        while let Operand::Tmp(t) = o {
            match forward.get(&t) {
                Some(&next) if guard <= forward.len() => {
                    o = next;
                    guard += 1;
                }
                _ => break,
            }
        }
        o
    };

    for b in &mut out.blocks {
        for (index, s) in b.statements.iter_mut().enumerate() {
            s.for_each_use_mut(|_, o| *o = resolve(*o));
            if let Statement::Assign { expr: Expr::Op { op, args }, .. } = s {
                if !table.is_canonical(op) {
                    match table.raw(op) {
                        Some(info) => *op = info.canonical.clone(),
                        None => {
                            unknown.push(UnknownOpcode { block: b.id, index, opcode: op.clone() });
                            *op = UNKNOWN.to_string();
                        }
                    }
                }
                rewrite_negative(op, args);
            }
            s.for_each_type_mut(|ty| *ty = ty.class());
        }
    }

    if opts.indirect_memory {
        replace_indirect(&mut out);
    }
    (out, unknown)
}

fn negative(o: &Operand) -> Option<Operand> {
    match *o {
        Operand::Int { value, ty } if value < 0 => Some(Operand::Int { value: -value, ty }),
        _ => None,
    }
}

/// `add(a, -n)` and `add(-n, a)` become `sub(a, n)`; `sub(a, -n)` becomes `add(a, n)`.
/// Repeats until no rule fires; each step removes one negative constant.
fn rewrite_negative(op: &mut String, args: &mut [Operand]) {
    if args.len() != 2 {
        return;
    }
    while rewrite_negative_once(op, args) {}
}

fn rewrite_negative_once(op: &mut String, args: &mut [Operand]) -> bool {
    match op.as_str() {
        "add" => {
            if let Some(n) = negative(&args[1]) {
                *op = "sub".into();
                args[1] = n;
            } else if let Some(n) = negative(&args[0]) {
                *op = "sub".into();
                args[0] = args[1];
                args[1] = n;
            } else {
                return false;
            }
        }
        "sub" => {
            if let Some(n) = negative(&args[1]) {
                *op = "add".into();
                args[1] = n;
            } else {
                return false;
            }
        }
        _ => return false,
    }
    true
}

/// Give every distinct non-symbolic address a fresh `M` id and drop loads
/// whose results only ever served as addresses.
fn replace_indirect(f: &mut IrFunction) {
    let mut next = 0;
    for s in f.statements() {
        s.for_each_use(|_, o| {
            if let Operand::Mem(m) = o {
                next = next.max(m + 1);
            }
        });
    }
    let mut fresh: HashMap<Operand, u32> = HashMap::new();
    let mut address_only: HashSet<Tmp> = HashSet::new();
    let mut value_use: HashSet<Tmp> = HashSet::new();
    for s in f.statements() {
        s.for_each_use(|slot, o| {
            if let Operand::Tmp(t) = o {
                if slot == Slot::Address {
                    address_only.insert(*t);
                } else {
                    value_use.insert(*t);
                }
            }
        });
    }
    address_only.retain(|t| !value_use.contains(t));

    for b in &mut f.blocks {
        for s in &mut b.statements {
            s.for_each_use_mut(|slot, o| {
                if slot == Slot::Address && !matches!(o, Operand::Mem(_) | Operand::Abstract(_)) {
                    let id = *fresh.entry(*o).or_insert_with(|| {
                        next += 1;
                        next - 1
                    });
                    *o = Operand::Mem(id);
                }
            });
        }
        b.statements.retain(|s| {
            !matches!(s, Statement::Assign { dst: Operand::Tmp(t), expr: Expr::Load { .. }, .. } if address_only.contains(t))
        });
    }
}

/// Replace every concrete operand with its abstract placeholder.
pub fn abstract_statement(s: &Statement) -> Statement {
    let mut s = s.clone();
    s.for_each_use_mut(|_, o| *o = Operand::Abstract(o.abstraction()));
    match &mut s {
        Statement::Assign { dst, .. } => *dst = Operand::Abstract(dst.abstraction()),
        Statement::Call { ret, target, .. } => {
            if let Some((dst, _)) = ret {
                *dst = Operand::Abstract(dst.abstraction());
            }
            *target = CallTarget::Abstract;
        }
        _ => {}
    }
    s
}

pub fn abstract_operands(p: &Peephole) -> Peephole {
    Peephole { block_ids: p.block_ids.clone(), statements: p.statements.iter().map(abstract_statement).collect() }
}

/// Count the placeholders `abstract_operands` would produce.
pub fn placeholder_counts(statements: &[Statement]) -> HashMap<Abstract, usize> {
    let mut counts = HashMap::new();
    for s in statements {
        let a = abstract_statement(s);
        a.for_each_use(|_, o| {
            if let Operand::Abstract(x) = o {
                *counts.entry(*x).or_insert(0) += 1;
            }
        });
        match &a {
            Statement::Assign { dst: Operand::Abstract(x), .. } | Statement::Call { ret: Some((Operand::Abstract(x), _)), .. } => {
                *counts.entry(*x).or_insert(0) += 1;
            }
            _ => {}
        }
        if matches!(a, Statement::Call { .. }) {
            *counts.entry(Abstract::Func).or_insert(0) += 1;
        }
    }
    counts
}

/// True if any statement still carries a raw width type.
pub fn has_raw_types(f: &IrFunction) -> bool {
    let mut raw = false;
    for s in f.statements() {
        let mut s = s.clone();
        s.for_each_type_mut(|ty| raw |= !ty.is_canonical());
    }
    raw
}
