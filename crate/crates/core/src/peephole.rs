//! Peephole generation by seeded random walks over the CFG.

use std::fmt::Write;

use rand::Rng;

use crate::error::{Error, Result};
use crate::ir::{quote, BlockId, IrFunction, Lexer, Statement, TokenKind};
use crate::rng::{combine, stream, DEFAULT_SEED};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PeepholeConfig {
    /// Maximum number of blocks in one peephole.
    pub k: usize,
    /// Minimum number of visits per block.
    pub c: usize,
    pub seed: u64,
}

impl Default for PeepholeConfig {
    fn default() -> Self {
        PeepholeConfig { k: 72, c: 2, seed: DEFAULT_SEED }
    }
}

impl PeepholeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.c == 0 {
            return Err(Error::Argument(format!("k and c must be positive (k={}, c={})", self.k, self.c)));
        }
        Ok(())
    }
}

/// A straight-line concatenation of consecutive blocks along one path.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Peephole {
    pub block_ids: Vec<BlockId>,
    pub statements: Vec<Statement>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PeepholeSet {
    pub peepholes: Vec<Peephole>,
    /// Visits per block, indexed by block position.
    pub visit_counts: Vec<usize>,
    pub iterations: usize,
}

fn position(f: &IrFunction, id: BlockId) -> usize {
    match f.blocks.get(id as usize) {
        Some(b) if b.id == id => id as usize,
        _ => f.blocks.iter().position(|b| b.id == id).expect("valid successor"),
    }
}

/// Decompose `f` into peepholes until every block was visited `c` times.
///
/// `f` must pass [`crate::ir::validate_cfg`].
pub fn generate_peepholes(f: &IrFunction, cfg: &PeepholeConfig) -> PeepholeSet {
    let mut rng = stream(cfg.seed, &f.name);
    let n = f.blocks.len();
    let mut counts = vec![0usize; n];
    // Positions of blocks still below c visits, kept sorted.
    let mut worklist: Vec<usize> = (0..n).collect();
    let mut paths = Vec::new();
    while !worklist.is_empty() {
        let mut at = worklist[rng.random_range(0..worklist.len())];
        let mut path = vec![at];
        while path.len() < cfg.k.max(1) {
            let succ = &f.blocks[at].successors;
            if succ.is_empty() {
                break;
            }
            at = position(f, succ[rng.random_range(0..succ.len())]);
            path.push(at);
        }
        for &p in &path {
            counts[p] += 1;
        }
        worklist.retain(|&p| counts[p] < cfg.c);
        paths.push(path);
    }
    let iterations = paths.len();
    let peepholes = paths
        .into_iter()
        .map(|path| Peephole {
            block_ids: path.iter().map(|&p| f.blocks[p].id).collect(),
            statements: path.iter().flat_map(|&p| f.blocks[p].statements.iter().cloned()).collect(),
        })
        .collect();
    PeepholeSet { peepholes, visit_counts: counts, iterations }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PeepholeStats {
    pub mean_peepholes: f64,
    pub mean_visits: f64,
    /// Worst case `c·|V|`.
    pub bound: f64,
    /// Expected value `c·|V|/2` from the empirical observation.
    pub observed_estimate: f64,
}

/// Monte-Carlo mean of the peephole count over `trials` seeds derived from
/// `cfg.seed`.
pub fn expected_peephole_stats(f: &IrFunction, cfg: &PeepholeConfig, trials: usize) -> PeepholeStats {
    let trials = trials.max(1);
    let (mut peeps, mut visits) = (0usize, 0usize);
    for t in 0..trials {
        let c = PeepholeConfig { seed: combine(cfg.seed, t as u64), ..*cfg };
        let set = generate_peepholes(f, &c);
        peeps += set.peepholes.len();
        visits += set.visit_counts.iter().sum::<usize>();
    }
    let cv = (cfg.c * f.blocks.len()) as f64;
    PeepholeStats {
        mean_peepholes: peeps as f64 / trials as f64,
        mean_visits: visits as f64 / trials as f64,
        bound: cv,
        observed_estimate: cv / 2.0,
    }
}

/// Render peepholes as `peep "<fn>" <ids>` lines.
pub fn format_peep_lines(function: &str, set: &PeepholeSet) -> String {
    let mut out = String::new();
    for p in &set.peepholes {
        out.push_str("peep ");
        out.push_str(&quote(function));
        for id in &p.block_ids {
            let _ = write!(out, " {id}");
        }
        out.push('\n');
    }
    out
}

/// Parse a `.peep` file back into `(function, block ids)` pairs.
pub fn parse_peep_lines(text: &str) -> Result<Vec<(String, Vec<BlockId>)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let toks = Lexer::tokenize(line, i + 1)?;
        if toks.is_empty() {
            continue;
        }
        let mut it = toks.into_iter().map(|t| t.kind);
        match (it.next(), it.next()) {
            (Some(TokenKind::Word(w)), Some(TokenKind::Str(name))) if w == "peep" => {
                let ids = it
                    .map(|k| match k {
                        TokenKind::Word(w) => w.parse::<BlockId>().ok(),
                        _ => None,
                    })
                    .collect::<Option<Vec<_>>>()
                    .filter(|ids| !ids.is_empty())
                    .ok_or_else(|| Error::malformed(i + 1, "expected block ids"))?;
                out.push((name, ids));
            }
            _ => return Err(Error::malformed(i + 1, "expected `peep \"<fn>\" <ids>`")),
        }
    }
    Ok(out)
}

/// Rebuild the peepholes named in a `.peep` file from their function.
pub fn peepholes_from_ids(f: &IrFunction, ids: &[Vec<BlockId>]) -> Result<Vec<Peephole>> {
    ids.iter()
        .map(|path| {
            for w in path.windows(2) {
                let ok = f.block(w[0]).is_some_and(|b| b.successors.contains(&w[1]));
                if !ok {
                    return Err(Error::Invalid(format!("{}: no edge {} -> {}", f.name, w[0], w[1])));
                }
            }
            let statements = path
                .iter()
                .map(|&id| f.block(id).map(|b| b.statements.clone()).ok_or_else(|| Error::Invalid(format!("{}: no block {id}", f.name))))
                .collect::<Result<Vec<_>>>()?
                .concat();
            Ok(Peephole { block_ids: path.clone(), statements })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::BasicBlock;

    fn cfg_fn(succs: &[&[u32]]) -> IrFunction {
        let mut f = IrFunction::new("g");
        for (i, s) in succs.iter().enumerate() {
            f.blocks.push(BasicBlock { id: i as u32, statements: vec![], successors: s.to_vec() });
        }
        f
    }

    #[test]
    fn single_block_gives_c_peepholes() {
        let f = cfg_fn(&[&[]]);
        let set = generate_peepholes(&f, &PeepholeConfig { k: 6, c: 2, seed: 1 });
        assert_eq!(set.peepholes.len(), 2);
        assert!(set.peepholes.iter().all(|p| p.block_ids == [0]));
        assert_eq!(expected_peephole_stats(&f, &PeepholeConfig { k: 6, c: 2, seed: 3 }, 50).mean_peepholes, 2.0);
    }

    #[test]
    fn peep_lines_round_trip() {
        let f = cfg_fn(&[&[1], &[1, 2], &[]]);
        let set = generate_peepholes(&f, &PeepholeConfig { k: 4, c: 2, seed: 9 });
        let text = format_peep_lines("g", &set);
        let parsed = parse_peep_lines(&text).unwrap();
        let ids: Vec<_> = parsed.iter().map(|(_, ids)| ids.clone()).collect();
        assert_eq!(peepholes_from_ids(&f, &ids).unwrap(), set.peepholes);
    }
}
