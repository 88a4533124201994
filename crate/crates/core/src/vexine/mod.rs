//! Peephole normalization.
//!
//! Each level adds passes to the previous one:
//!
//! * `N1`: register promotion, redundant write elimination, copy propagation
//! * `N2`: constant propagation and folding, common subexpression elimination
//! * `N3`: load-store and store-store elimination, dead temporary elimination
//!
//! Passes run in that order, and the whole pipeline repeats until nothing
//! changes (at most [`MAX_ROUNDS`] times). Within a peephole the passes
//! preserve the final registers, memory and call trace computed by
//! [`evaluate_peephole`]; they make no promise about the enclosing function.

mod analysis;
mod interp;
mod passes;

use std::fmt;
use std::str::FromStr;

pub use analysis::{available_exprs, reaching_defs, Loc, UseDef};
pub use interp::{eval_op, evaluate_peephole, evaluate_statements, CallRecord, MachineState, Value, DYNAMIC_CELLS};
pub use passes::{
    common_subexpression_elimination, constant_propagation, copy_propagation, dead_temp_elimination, load_store_elimination,
    redundant_write_elimination, register_promotion, store_store_elimination,
};

use crate::error::Error;
use crate::ir::Statement;
use crate::peephole::Peephole;

pub const MAX_ROUNDS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum NormLevel {
    N0,
    N1,
    N2,
    #[default]
    N3,
}

impl NormLevel {
    pub const ALL: [NormLevel; 4] = [NormLevel::N0, NormLevel::N1, NormLevel::N2, NormLevel::N3];
}

impl fmt::Display for NormLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "N{}", *self as u8)
    }
}

impl FromStr for NormLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "N0" | "n0" | "0" => Ok(NormLevel::N0),
            "N1" | "n1" | "1" => Ok(NormLevel::N1),
            "N2" | "n2" | "2" => Ok(NormLevel::N2),
            "N3" | "n3" | "3" => Ok(NormLevel::N3),
            _ => Err(Error::Argument(format!("unknown normalization level `{s}`"))),
        }
    }
}

type Pass = fn(&[Statement]) -> Vec<Statement>;

fn passes(level: NormLevel) -> Vec<Pass> {
    let mut out: Vec<Pass> = Vec::new();
    if level >= NormLevel::N1 {
        out.extend([register_promotion as Pass, redundant_write_elimination, copy_propagation]);
    }
    if level >= NormLevel::N2 {
        out.extend([constant_propagation as Pass, common_subexpression_elimination]);
    }
    if level >= NormLevel::N3 {
        out.extend([load_store_elimination as Pass, store_store_elimination, dead_temp_elimination]);
    }
    out
}

/// Normalize a straight-line statement list at `level`.
pub fn normalize_statements(statements: &[Statement], level: NormLevel) -> Vec<Statement> {
    let pipeline = passes(level);
    let mut cur = statements.to_vec();
    for _ in 0..MAX_ROUNDS {
        let mut next = cur.clone();
        for pass in &pipeline {
            next = pass(&next);
        }
        if next == cur {
            break;
        }
        cur = next;
    }
    cur
}

pub fn normalize_peephole(p: &Peephole, level: NormLevel) -> Peephole {
    Peephole { block_ids: p.block_ids.clone(), statements: normalize_statements(&p.statements, level) }
}
