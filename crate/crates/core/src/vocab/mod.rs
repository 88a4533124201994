//! Entity vocabulary: triplet extraction, TransE training, persistence and
//! analogy queries.

mod analogy;
mod transe;
mod triplets;

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write;

pub use analogy::{analogy_accuracy, answer_analogy, parse_analogies, AnalogyQuery};
pub use transe::{hits_at_k, train_transe, train_transe_indexed, transe_loss_grad, CorruptedSample, TransEConfig, TransEReport};
pub use triplets::{
    entity_inventory, extract_triplets, format_triplets, parse_triplets, peephole_entities, statement_entities,
    triplets_of, Relation, StatementEntities, Triplet, TypeEnv, MAX_ARGS, STATEMENT_KINDS,
};

use crate::error::{Error, Result};
use crate::scalar::{fmt_exact, parse_scalar, Scalar};

pub const VOCAB_MAGIC: &str = "peepvec-vocab";
pub const VOCAB_VERSION: &str = "v1";
/// Entity and relation vector width.
pub const DEFAULT_DIM: usize = 128;

/// Learned entity and relation vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary<S> {
    dim: usize,
    entity_names: Vec<String>,
    entities: Vec<S>,
    entity_index: HashMap<String, usize>,
    relation_names: Vec<String>,
    relations: Vec<S>,
    relation_index: HashMap<String, usize>,
    /// Training settings, persisted as `M key value` lines.
    pub meta: BTreeMap<String, String>,
}

fn index_of(names: &[String]) -> Result<HashMap<String, usize>> {
    let mut idx = HashMap::with_capacity(names.len());
    for (i, n) in names.iter().enumerate() {
        if n.is_empty() || n.contains(char::is_whitespace) {
            return Err(Error::Argument(format!("invalid entity name `{n}`")));
        }
        if idx.insert(n.clone(), i).is_some() {
            return Err(Error::Argument(format!("duplicate name `{n}`")));
        }
    }
    Ok(idx)
}

impl<S: Scalar> Vocabulary<S> {
    /// Zero-initialized vocabulary over the given names.
    pub fn new(dim: usize, entity_names: Vec<String>, relation_names: Vec<String>) -> Result<Self> {
        let entity_index = index_of(&entity_names)?;
        let relation_index = index_of(&relation_names)?;
        Ok(Vocabulary {
            dim,
            entities: vec![S::zero(); dim * entity_names.len()],
            relations: vec![S::zero(); dim * relation_names.len()],
            entity_names,
            entity_index,
            relation_names,
            relation_index,
            meta: BTreeMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_entities(&self) -> usize {
        self.entity_names.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_names.len()
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entity_names
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    pub fn entity_id(&self, name: &str) -> Option<usize> {
        self.entity_index.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relation_index.get(name).copied()
    }

    pub fn entity(&self, name: &str) -> Option<&[S]> {
        self.entity_id(name).map(|i| self.entity_at(i))
    }

    pub fn relation(&self, name: &str) -> Option<&[S]> {
        self.relation_id(name).map(|i| self.relation_at(i))
    }

    pub fn entity_at(&self, i: usize) -> &[S] {
        &self.entities[i * self.dim..(i + 1) * self.dim]
    }

    pub fn relation_at(&self, i: usize) -> &[S] {
        &self.relations[i * self.dim..(i + 1) * self.dim]
    }

    pub fn entity_matrix(&self) -> &[S] {
        &self.entities
    }

    pub fn relation_matrix(&self) -> &[S] {
        &self.relations
    }

    pub fn entity_matrix_mut(&mut self) -> &mut [S] {
        &mut self.entities
    }

    pub fn relation_matrix_mut(&mut self) -> &mut [S] {
        &mut self.relations
    }

    pub fn set_entity(&mut self, name: &str, v: &[S]) -> Result<()> {
        let i = self.entity_id(name).ok_or_else(|| Error::UnknownEntity(name.to_string()))?;
        if v.len() != self.dim {
            return Err(Error::Dimension { expected: self.dim, got: v.len() });
        }
        self.entities[i * self.dim..(i + 1) * self.dim].copy_from_slice(v);
        Ok(())
    }

    pub fn set_relation(&mut self, name: &str, v: &[S]) -> Result<()> {
        let i = self.relation_id(name).ok_or_else(|| Error::UnknownEntity(name.to_string()))?;
        if v.len() != self.dim {
            return Err(Error::Dimension { expected: self.dim, got: v.len() });
        }
        self.relations[i * self.dim..(i + 1) * self.dim].copy_from_slice(v);
        Ok(())
    }

    /// Convert to another precision.
    pub fn cast<T: Scalar>(&self) -> Vocabulary<T> {
        let conv = |v: &[S]| v.iter().map(|x| T::of(x.to_f64_lossy())).collect();
        Vocabulary {
            dim: self.dim,
            entity_names: self.entity_names.clone(),
            entities: conv(&self.entities),
            entity_index: self.entity_index.clone(),
            relation_names: self.relation_names.clone(),
            relations: conv(&self.relations),
            relation_index: self.relation_index.clone(),
            meta: self.meta.clone(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{VOCAB_MAGIC} {VOCAB_VERSION} dim={}\n", self.dim);
        for (k, v) in &self.meta {
            let _ = writeln!(out, "M {k} {v}");
        }
        let mut row = |tag: &str, name: &str, v: &[S]| {
            out.push_str(tag);
            out.push(' ');
            out.push_str(name);
            for x in v {
                out.push(' ');
                out.push_str(&fmt_exact(*x));
            }
            out.push('\n');
        };
        for (i, n) in self.entity_names.iter().enumerate() {
            row("E", n, &self.entities[i * self.dim..(i + 1) * self.dim]);
        }
        for (i, n) in self.relation_names.iter().enumerate() {
            row("R", n, &self.relations[i * self.dim..(i + 1) * self.dim]);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Empty("vocabulary file"))?;
        let dim = parse_header(header, VOCAB_MAGIC)?;
        let mut meta = BTreeMap::new();
        let (mut en, mut ev, mut rn, mut rv) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (i, line) in lines {
            let lineno = i + 1;
            if line.is_empty() {
                continue;
            }
            let mut f = line.split(' ');
            let tag = f.next().unwrap_or("");
            let name = f.next().filter(|n| !n.is_empty()).ok_or_else(|| Error::malformed(lineno, "missing name"))?;
            match tag {
                "M" => {
                    let rest: Vec<&str> = f.collect();
                    meta.insert(name.to_string(), rest.join(" "));
                }
                "E" | "R" => {
                    let (names, values) = if tag == "E" { (&mut en, &mut ev) } else { (&mut rn, &mut rv) };
                    let before = values.len();
                    for tok in f {
                        let x: S = parse_scalar(tok).ok_or_else(|| Error::malformed(lineno, format!("bad number `{tok}`")))?;
                        values.push(x);
                    }
                    if values.len() - before != dim {
                        return Err(Error::malformed(lineno, format!("expected {dim} values, found {}", values.len() - before)));
                    }
                    names.push(name.to_string());
                }
                _ => return Err(Error::malformed(lineno, format!("unknown record `{tag}`"))),
            }
        }
        let mut v = Vocabulary::new(dim, en, rn).map_err(|e| Error::malformed(0, e.to_string()))?;
        v.entities = ev;
        v.relations = rv;
        v.meta = meta;
        Ok(v)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::error::write_string(path, &self.to_text())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_text(&crate::error::read_to_string(path)?)
    }
}

/// Check a `<magic> v1 dim=N` header and return `N`.
pub(crate) fn parse_header(line: &str, magic: &str) -> Result<usize> {
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.first() != Some(&magic) {
        return Err(Error::Version { expected: format!("{magic} {VOCAB_VERSION}"), found: line.to_string() });
    }
    if f.get(1) != Some(&VOCAB_VERSION) {
        return Err(Error::Version { expected: format!("{magic} {VOCAB_VERSION}"), found: line.to_string() });
    }
    f.get(2)
        .and_then(|d| d.strip_prefix("dim="))
        .and_then(|d| d.parse().ok())
        .filter(|d| *d > 0)
        .ok_or_else(|| Error::malformed(1, "expected `dim=N` in header"))
}
