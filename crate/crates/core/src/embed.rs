//! Function embeddings from vocabulary lookups.
//!
//! Instruction vectors are not summed directly. Each function first
//! accumulates integer occurrence counts per entity, and the vectors are
//! materialized once as `sum(count[e] * V(e))` in entity order. The result
//! is therefore bit-identical under any reordering of peepholes or
//! statements.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::canon::canonicalize_function;
use crate::error::{Error, Result};
use crate::ir::{quote, CallTarget, IrFunction, Lexer, Program, Statement, TokenKind};
use crate::peephole::{generate_peepholes, Peephole, PeepholeConfig};
use crate::rng::{fnv1a, stream_u64};
use crate::scalar::{fmt_exact, normalize_in_place, parse_scalar, Scalar};
use crate::vexine::{normalize_peephole, NormLevel};
use crate::vocab::{statement_entities, TypeEnv, Vocabulary};

/// Width of the string and library-call vectors.
pub const TEXT_DIM: usize = 100;
pub const NGRAM_BUCKETS: u64 = 1 << 16;
pub const NGRAM_MIN: usize = 3;
pub const NGRAM_MAX: usize = 5;
const TEXT_SEED: u64 = 0x5EED_7E47;

pub const FEMB_MAGIC: &str = "peepvec-femb";
pub const FEMB_VERSION: &str = "v1";

#[derive(Clone, Debug, PartialEq)]
pub struct FunctionEmbedding<S> {
    pub name: String,
    /// Where the function came from, e.g. the program name.
    pub source: String,
    pub o: Vec<S>,
    pub t: Vec<S>,
    pub a: Vec<S>,
    pub s: Vec<S>,
    pub l: Vec<S>,
}

impl<S: Scalar> FunctionEmbedding<S> {
    pub fn dim(&self) -> usize {
        self.o.len()
    }

    pub fn cast<T: Scalar>(&self) -> FunctionEmbedding<T> {
        let c = |v: &[S]| v.iter().map(|x| T::of(x.to_f64_lossy())).collect();
        FunctionEmbedding {
            name: self.name.clone(),
            source: self.source.clone(),
            o: c(&self.o),
            t: c(&self.t),
            a: c(&self.a),
            s: c(&self.s),
            l: c(&self.l),
        }
    }

    pub fn is_finite(&self) -> bool {
        [&self.o, &self.t, &self.a, &self.s, &self.l].iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Bucket of one n-gram.
pub fn ngram_bucket(gram: &str) -> u64 {
    fnv1a(gram.as_bytes()) % NGRAM_BUCKETS
}

/// The fixed pseudo-random unit vector of a bucket.
pub fn bucket_vector(bucket: u64) -> Vec<f64> {
    let mut rng = stream_u64(TEXT_SEED, bucket);
    let mut v: Vec<f64> = (0..TEXT_DIM).map(|_| StandardNormal.sample(&mut rng)).collect();
    normalize_in_place(&mut v);
    v
}

/// Character n-grams of the lowercased, `<`/`>`-padded string.
pub fn char_ngrams(s: &str) -> Vec<String> {
    let padded: Vec<char> = std::iter::once('<').chain(s.to_lowercase().chars()).chain(std::iter::once('>')).collect();
    let mut out = Vec::new();
    for n in NGRAM_MIN..=NGRAM_MAX {
        for w in padded.windows(n) {
            out.push(w.iter().collect());
        }
    }
    out
}

/// Unit vector of one string, or zero when it has no n-grams.
pub fn embed_string(s: &str) -> Vec<f64> {
    let mut acc = vec![0.0; TEXT_DIM];
    for g in char_ngrams(s) {
        for (a, x) in acc.iter_mut().zip(bucket_vector(ngram_bucket(&g))) {
            *a += x;
        }
    }
    normalize_in_place(&mut acc);
    acc
}

/// Sum of the string vectors, in list order.
pub fn embed_text<S: Scalar>(items: &[String]) -> Vec<S> {
    let mut acc = vec![0.0f64; TEXT_DIM];
    for s in items {
        for (a, x) in acc.iter_mut().zip(embed_string(s)) {
            *a += x;
        }
    }
    acc.into_iter().map(S::of).collect()
}

/// Per-entity occurrence counts for the three instruction components.
#[derive(Clone, Debug, PartialEq)]
pub struct EntityCounts {
    pub o: Vec<f64>,
    pub t: Vec<f64>,
    pub a: Vec<f64>,
}

impl EntityCounts {
    pub fn zeros(entities: usize) -> Self {
        EntityCounts { o: vec![0.0; entities], t: vec![0.0; entities], a: vec![0.0; entities] }
    }

    pub fn add_scaled(&mut self, other: &EntityCounts, k: f64) {
        for (dst, src) in [(&mut self.o, &other.o), (&mut self.t, &other.t), (&mut self.a, &other.a)] {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += k * s;
            }
        }
    }

    /// `(O, T, A)` as `sum(count[e] * V(e))` in entity order.
    pub fn materialize<S: Scalar>(&self, vocab: &Vocabulary<S>) -> (Vec<S>, Vec<S>, Vec<S>) {
        let dim = vocab.dim();
        let sum = |counts: &[f64]| {
            let mut out = vec![S::zero(); dim];
            for (e, &c) in counts.iter().enumerate() {
                if c != 0.0 {
                    let c = S::of(c);
                    for (o, &x) in out.iter_mut().zip(vocab.entity_at(e)) {
                        *o += c * x;
                    }
                }
            }
            out
        };
        (sum(&self.o), sum(&self.t), sum(&self.a))
    }
}

fn lookup<S: Scalar>(vocab: &Vocabulary<S>, name: &str) -> Result<usize> {
    vocab.entity_id(name).ok_or_else(|| Error::Internal(format!("entity `{name}` missing from the vocabulary")))
}

/// Add one statement's entities to `counts`.
pub fn count_statement<S: Scalar>(
    s: &Statement,
    env: &TypeEnv,
    vocab: &Vocabulary<S>,
    counts: &mut EntityCounts,
) -> Result<()> {
    let e = statement_entities(s, env);
    counts.o[lookup(vocab, &e.opcode)?] += 1.0;
    counts.t[lookup(vocab, e.ty.name())?] += 1.0;
    for a in &e.args {
        counts.a[lookup(vocab, a.name())?] += 1.0;
    }
    Ok(())
}

/// `(o, t, a)` of one statement: opcode vector, type-class vector and the
/// sum of the abstract argument vectors.
pub fn embed_instruction<S: Scalar>(s: &Statement, env: &TypeEnv, vocab: &Vocabulary<S>) -> Result<(Vec<S>, Vec<S>, Vec<S>)> {
    let mut c = EntityCounts::zeros(vocab.num_entities());
    count_statement(s, env, vocab, &mut c)?;
    Ok(c.materialize(vocab))
}

/// Counts of one function before call substitution.
#[derive(Clone, Debug, PartialEq)]
pub struct FunctionCounts {
    /// Everything except calls to other internal functions.
    pub base: EntityCounts,
    /// Per internal callee: number of call occurrences and the counts of
    /// those call instructions themselves.
    pub calls: BTreeMap<String, (f64, EntityCounts)>,
    /// External callee names seen in call statements.
    pub externs: Vec<String>,
}

/// Accumulate entity counts over peepholes, in peephole then statement order.
pub fn function_counts<S: Scalar>(peepholes: &[Peephole], vocab: &Vocabulary<S>) -> Result<FunctionCounts> {
    let ne = vocab.num_entities();
    let mut fc = FunctionCounts { base: EntityCounts::zeros(ne), calls: BTreeMap::new(), externs: Vec::new() };
    for p in peepholes {
        let mut env = TypeEnv::default();
        for s in &p.statements {
            match s {
                Statement::Call { target: CallTarget::Named(n), external: false, .. } => {
                    let entry = fc.calls.entry(n.clone()).or_insert_with(|| (0.0, EntityCounts::zeros(ne)));
                    entry.0 += 1.0;
                    count_statement(s, &env, vocab, &mut entry.1)?;
                }
                _ => {
                    if let Statement::Call { target: CallTarget::Named(n), external: true, .. } = s {
                        if !fc.externs.contains(n) {
                            fc.externs.push(n.clone());
                        }
                    }
                    count_statement(s, &env, vocab, &mut fc.base)?;
                }
            }
            env.record(s);
        }
    }
    Ok(fc)
}

/// Internal call graph with its strongly connected components.
#[derive(Clone, Debug)]
pub struct CallGraph {
    pub adjacency: BTreeMap<String, Vec<String>>,
    /// Components in reverse topological order: callees come first.
    pub sccs: Vec<Vec<String>>,
    scc_of: HashMap<String, usize>,
}

impl CallGraph {
    /// Edges to callees that are not program functions are dropped.
    pub fn build(program: &Program) -> Self {
        let mut g = DiGraph::<&str, ()>::new();
        let idx: HashMap<&str, _> = program.functions.iter().map(|f| (f.name.as_str(), g.add_node(f.name.as_str()))).collect();
        let mut adjacency = BTreeMap::new();
        for f in &program.functions {
            let callees: Vec<String> =
                f.internal_callees().into_iter().filter(|c| idx.contains_key(c)).map(str::to_string).collect();
            for c in &callees {
                g.add_edge(idx[f.name.as_str()], idx[c.as_str()], ());
            }
            adjacency.insert(f.name.clone(), callees);
        }
        let sccs: Vec<Vec<String>> = tarjan_scc(&g)
            .into_iter()
            .map(|comp| {
                let mut names: Vec<String> = comp.into_iter().map(|n| g[n].to_string()).collect();
                names.sort();
                names
            })
            .collect();
        let scc_of = sccs.iter().enumerate().flat_map(|(i, c)| c.iter().map(move |n| (n.clone(), i))).collect();
        CallGraph { adjacency, sccs, scc_of }
    }

    pub fn scc_of(&self, name: &str) -> Option<usize> {
        self.scc_of.get(name).copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmbedConfig {
    pub peephole: PeepholeConfig,
    pub level: NormLevel,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig { peephole: PeepholeConfig::default(), level: NormLevel::default() }
    }
}

/// Canonicalize, decompose and normalize one raw function.
pub fn prepare_function(f: &IrFunction, cfg: &EmbedConfig) -> (IrFunction, Vec<Peephole>) {
    let canon = canonicalize_function(f);
    let peeps = generate_peepholes(&canon, &cfg.peephole)
        .peepholes
        .iter()
        .map(|p| normalize_peephole(p, cfg.level))
        .collect();
    (canon, peeps)
}

/// Embed every function of a raw program.
pub fn embed_program<S: Scalar>(program: &Program, vocab: &Vocabulary<S>, cfg: &EmbedConfig) -> Result<Vec<FunctionEmbedding<S>>> {
    let peeps: Vec<Vec<Peephole>> = program.functions.par_iter().map(|f| prepare_function(f, cfg).1).collect();
    embed_peepholes(program, &peeps, vocab)
}

/// Embed functions from already normalized peepholes; `peepholes[i]`
/// belongs to `program.functions[i]`.
pub fn embed_peepholes<S: Scalar>(
    program: &Program,
    peepholes: &[Vec<Peephole>],
    vocab: &Vocabulary<S>,
) -> Result<Vec<FunctionEmbedding<S>>> {
    if peepholes.len() != program.functions.len() {
        return Err(Error::Argument("one peephole list per function expected".into()));
    }
    let counts: Vec<FunctionCounts> =
        peepholes.par_iter().map(|p| function_counts(p, vocab)).collect::<Result<_>>()?;
    let totals = resolve_calls(program, &counts, vocab.num_entities());
    program
        .functions
        .par_iter()
        .zip(totals.par_iter())
        .zip(counts.par_iter())
        .map(|((f, total), fc)| {
            let (o, t, a) = total.materialize(vocab);
            let mut externs = f.extern_calls.clone();
            for e in &fc.externs {
                if !externs.contains(e) {
                    externs.push(e.clone());
                }
            }
            externs.sort();
            Ok(FunctionEmbedding {
                name: f.name.clone(),
                source: program.name.clone(),
                o,
                t,
                a,
                s: embed_text(&f.strings),
                l: embed_text(&externs),
            })
        })
        .collect()
}

/// Substitute callee totals at internal call sites, callees first. Calls
/// inside one component keep their own `call` counts.
pub fn resolve_calls(program: &Program, counts: &[FunctionCounts], entities: usize) -> Vec<EntityCounts> {
    let cg = CallGraph::build(program);
    let pos: HashMap<&str, usize> = program.functions.iter().enumerate().map(|(i, f)| (f.name.as_str(), i)).collect();
    let mut totals: Vec<Option<EntityCounts>> = vec![None; program.functions.len()];
    for comp in &cg.sccs {
        for name in comp {
            let i = pos[name.as_str()];
            let fc = &counts[i];
            let mut total = EntityCounts::zeros(entities);
            total.add_scaled(&fc.base, 1.0);
            for (callee, (mult, own)) in &fc.calls {
                let resolved = match (cg.scc_of(callee), cg.scc_of(name)) {
                    (Some(a), Some(b)) if a != b => pos.get(callee.as_str()).and_then(|&j| totals[j].as_ref()),
                    _ => None,
                };
                match resolved {
                    Some(t) => total.add_scaled(t, *mult),
                    None => total.add_scaled(own, 1.0),
                }
            }
            totals[i] = Some(total);
        }
    }
    totals.into_iter().map(|t| t.expect("every function is in a component")).collect()
}

fn fmt_name(name: &str) -> String {
    if !name.is_empty() && !name.contains(|c: char| c.is_whitespace() || c == '"' || c == '\\') {
        name.to_string()
    } else {
        quote(name)
    }
}

/// Serialize embeddings as `.femb` text.
pub fn format_embeddings<S: Scalar>(embs: &[FunctionEmbedding<S>]) -> String {
    let mut out = format!("{FEMB_MAGIC} {FEMB_VERSION}\n");
    for e in embs {
        let _ = write!(out, "F {}", fmt_name(&e.name));
        if !e.source.is_empty() {
            let _ = write!(out, " src={}", fmt_name(&e.source));
        }
        for (tag, v) in [("O", &e.o), ("T", &e.t), ("A", &e.a), ("S", &e.s), ("L", &e.l)] {
            let _ = write!(out, " {tag}");
            for x in v.iter() {
                out.push(' ');
                out.push_str(&fmt_exact(*x));
            }
        }
        out.push('\n');
    }
    out
}

pub fn parse_embeddings<S: Scalar>(text: &str) -> Result<Vec<FunctionEmbedding<S>>> {
    let mut lines = text.lines().enumerate();
    let header = lines.next().map(|(_, l)| l).unwrap_or("");
    if header.trim() != format!("{FEMB_MAGIC} {FEMB_VERSION}") {
        return Err(Error::Version { expected: format!("{FEMB_MAGIC} {FEMB_VERSION}"), found: header.to_string() });
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rest = line.strip_prefix("F ").ok_or_else(|| Error::malformed(lineno, "expected `F`"))?;
        let (name, rest) = take_name(rest, lineno)?;
        let mut e = FunctionEmbedding { name, source: String::new(), o: vec![], t: vec![], a: vec![], s: vec![], l: vec![] };
        let mut rest = rest.trim_start();
        if let Some(r) = rest.strip_prefix("src=") {
            let (src, r) = take_name(r, lineno)?;
            e.source = src;
            rest = r;
        }
        let mut current: Option<&mut Vec<S>> = None;
        for tok in rest.split_whitespace() {
            match tok {
                "O" => current = Some(&mut e.o),
                "T" => current = Some(&mut e.t),
                "A" => current = Some(&mut e.a),
                "S" => current = Some(&mut e.s),
                "L" => current = Some(&mut e.l),
                _ => {
                    let x: S = parse_scalar(tok).ok_or_else(|| Error::malformed(lineno, format!("bad number `{tok}`")))?;
                    current.as_mut().ok_or_else(|| Error::malformed(lineno, "value before section tag"))?.push(x);
                }
            }
        }
        let d = e.o.len();
        if d == 0 || e.t.len() != d || e.a.len() != d || e.s.len() != TEXT_DIM || e.l.len() != TEXT_DIM {
            return Err(Error::malformed(lineno, "wrong section lengths"));
        }
        out.push(e);
    }
    Ok(out)
}

/// A bare word or a quoted string at the start of `s`, and the remainder.
fn take_name(s: &str, lineno: usize) -> Result<(String, &str)> {
    if s.starts_with('"') {
        let bytes = s.as_bytes();
        let mut i = 1;
        while i < bytes.len() && bytes[i] != b'"' {
            i += if bytes[i] == b'\\' { 2 } else { 1 };
        }
        if i >= bytes.len() {
            return Err(Error::malformed(lineno, "unterminated name"));
        }
        let toks = Lexer::tokenize(&s[..=i], lineno)?;
        match toks.first().map(|t| &t.kind) {
            Some(TokenKind::Str(n)) => Ok((n.clone(), &s[i + 1..])),
            _ => Err(Error::malformed(lineno, "bad quoted name")),
        }
    } else {
        let end = s.find(char::is_whitespace).unwrap_or(s.len());
        if end == 0 {
            return Err(Error::malformed(lineno, "missing name"));
        }
        Ok((s[..end].to_string(), &s[end..]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_statement;

    #[test]
    fn empty_text_is_zero() {
        assert!(embed_text::<f64>(&[]).iter().all(|&x| x == 0.0));
        assert!(embed_text::<f64>(&["".into()]).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn ngrams_are_padded() {
        let g = char_ngrams("ab");
        assert_eq!(g, vec!["<ab", "ab>", "<ab>"]);
    }

    #[test]
    fn copy_of_constant_has_const_a() {
        let names = crate::vocab::entity_inventory();
        let mut v = Vocabulary::<f64>::new(4, names, vec![]).unwrap();
        for (i, x) in v.entity_matrix_mut().iter_mut().enumerate() {
            *x = i as f64;
        }
        let s = parse_statement("t1:I64 = 0x5:I64", 1).unwrap();
        let (_, _, a) = embed_instruction(&s, &TypeEnv::default(), &v).unwrap();
        assert_eq!(a, v.entity("CONST").unwrap());
    }
}
