use std::collections::{HashMap, HashSet};
use std::fmt;

use super::{BlockId, CallTarget, IrFunction, Program, Statement, Tmp};

/// One violated structural invariant.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Diagnostic {
    MissingEntry(BlockId),
    DuplicateBlock(BlockId),
    /// Block stored at `index` carries id `id`.
    MisplacedBlock { index: usize, id: BlockId },
    DanglingSuccessor { block: BlockId, successor: BlockId },
    DuplicateTmp(Tmp),
    UnresolvedCall { function: String, callee: String },
    DuplicateFunction(String),
    NoBlocks,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::MissingEntry(b) => write!(f, "missing-entry: block {b}"),
            Diagnostic::DuplicateBlock(b) => write!(f, "duplicate-block: {b}"),
            Diagnostic::MisplacedBlock { index, id } => write!(f, "misplaced-block: index {index} holds block {id}"),
            Diagnostic::DanglingSuccessor { block, successor } => {
                write!(f, "dangling-successor: {block} -> {successor}")
            }
            Diagnostic::DuplicateTmp(t) => write!(f, "duplicate-tmp: {t}"),
            Diagnostic::UnresolvedCall { function, callee } => {
                write!(f, "unresolved-call: {function} -> {callee}")
            }
            Diagnostic::DuplicateFunction(n) => write!(f, "duplicate-function: {n}"),
            Diagnostic::NoBlocks => f.write_str("no-blocks"),
        }
    }
}

/// Check the block-level invariants of one function, one diagnostic per
/// violation.
pub fn validate_cfg(f: &IrFunction) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if f.blocks.is_empty() {
        out.push(Diagnostic::NoBlocks);
    }
    let mut ids = HashSet::new();
    for (index, b) in f.blocks.iter().enumerate() {
        if !ids.insert(b.id) {
            out.push(Diagnostic::DuplicateBlock(b.id));
        } else if b.id as usize != index {
            out.push(Diagnostic::MisplacedBlock { index, id: b.id });
        }
    }
    if !f.blocks.is_empty() && !ids.contains(&f.entry) {
        out.push(Diagnostic::MissingEntry(f.entry));
    }
    for b in &f.blocks {
        for &s in &b.successors {
            if !ids.contains(&s) {
                out.push(Diagnostic::DanglingSuccessor { block: b.id, successor: s });
            }
        }
    }
    out
}

/// Report every tmp defined more than once (once per extra definition).
pub fn check_ssa(f: &IrFunction) -> Vec<Diagnostic> {
    let mut seen = HashSet::new();
    f.statements()
        .filter_map(Statement::def_tmp)
        .filter(|t| !seen.insert(*t))
        .map(Diagnostic::DuplicateTmp)
        .collect()
}

/// All diagnostics for a program, grouped by function name.
pub fn validate_program(p: &Program) -> Vec<(String, Diagnostic)> {
    let mut out = Vec::new();
    let mut names: HashMap<&str, usize> = HashMap::new();
    for f in &p.functions {
        *names.entry(f.name.as_str()).or_default() += 1;
    }
    for f in &p.functions {
        if names[f.name.as_str()] > 1 {
            out.push((f.name.clone(), Diagnostic::DuplicateFunction(f.name.clone())));
        }
        let mut diags = validate_cfg(f);
        diags.extend(check_ssa(f));
        for s in f.statements() {
            if let Statement::Call { target: CallTarget::Named(callee), external: false, .. } = s {
                if !names.contains_key(callee.as_str()) {
                    diags.push(Diagnostic::UnresolvedCall { function: f.name.clone(), callee: callee.clone() });
                }
            }
        }
        out.extend(diags.into_iter().map(|d| (f.name.clone(), d)));
    }
    out
}
