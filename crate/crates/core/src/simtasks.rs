//! Diffing and searching over function embeddings.
//!
//! Both tasks are answered with exact k nearest neighbour queries against a
//! KD-tree. Distances are Euclidean; ties are broken by insertion order.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::fmt::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Maximum number of points stored in a leaf.
pub const LEAF_SIZE: usize = 16;
/// Neighbours retrieved per query unless told otherwise.
pub const DEFAULT_K: usize = 10;

#[derive(Clone, Debug)]
enum Node<S> {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: S, left: usize, right: usize },
}

/// Exact Euclidean nearest neighbour index.
#[derive(Clone, Debug)]
pub struct EmbeddingIndex<S> {
    dim: usize,
    ids: Vec<String>,
    points: Vec<S>,
    /// Point indices, permuted so every leaf owns a contiguous range.
    order: Vec<usize>,
    nodes: Vec<Node<S>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor<S> {
    /// Insertion index of the point.
    pub index: usize,
    pub distance: S,
}

#[derive(Clone, Copy, PartialEq)]
struct Candidate<S> {
    d2: S,
    index: usize,
}

impl<S: Scalar> Eq for Candidate<S> {}

impl<S: Scalar> PartialOrd for Candidate<S> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<S: Scalar> Ord for Candidate<S> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.partial_cmp(&other.d2).unwrap_or(Ordering::Equal).then(self.index.cmp(&other.index))
    }
}

fn sq_dist<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut acc = S::zero();
    for (x, y) in a.iter().zip(b) {
        let d = *x - *y;
        acc += d * d;
    }
    acc
}

impl<S: Scalar> EmbeddingIndex<S> {
    pub fn new(ids: Vec<String>, points: Vec<Vec<S>>) -> Result<Self> {
        if ids.len() != points.len() {
            return Err(Error::Argument(format!("{} ids for {} points", ids.len(), points.len())));
        }
        let dim = points.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(points.len() * dim);
        for p in &points {
            if p.len() != dim {
                return Err(Error::Dimension { expected: dim, got: p.len() });
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::Invalid("non-finite coordinate in index".into()));
            }
            flat.extend_from_slice(p);
        }
        let mut index = EmbeddingIndex { dim, ids, points: flat, order: (0..points.len()).collect(), nodes: Vec::new() };
        if !index.ids.is_empty() {
            index.build(0, index.ids.len());
        }
        Ok(index)
    }

    fn coord(&self, i: usize, d: usize) -> S {
        self.points[i * self.dim + d]
    }

    pub fn point(&self, i: usize) -> &[S] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE || self.dim == 0 {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut best = (S::zero(), 0);
        for d in 0..self.dim {
            let (mut lo, mut hi) = (S::infinity(), S::neg_infinity());
            for &i in &self.order[start..end] {
                let v = self.coord(i, d);
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo > best.0 {
                best = (hi - lo, d);
            }
        }
        if best.0 == S::zero() {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let dim = best.1;
        let mid = start + (end - start) / 2;
        let mut slice = std::mem::take(&mut self.order);
        slice[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            self.coord(a, dim).partial_cmp(&self.coord(b, dim)).unwrap_or(Ordering::Equal).then(a.cmp(&b))
        });
        self.order = slice;
        let value = self.coord(self.order[mid], dim);
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split { dim, value, left, right };
        id
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    /// The `k` nearest points to `query`, closest first.
    pub fn knn(&self, query: &[S], k: usize) -> Result<Vec<Neighbor<S>>> {
        if k > self.len() {
            return Err(Error::Argument(format!("k={k} exceeds the {} indexed points", self.len())));
        }
        if query.len() != self.dim {
            return Err(Error::Dimension { expected: self.dim, got: query.len() });
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, query, k, &mut heap);
        let mut found = heap.into_vec();
        found.sort();
        Ok(found.into_iter().map(|c| Neighbor { index: c.index, distance: c.d2.sqrt() }).collect())
    }

    fn search(&self, node: usize, q: &[S], k: usize, heap: &mut BinaryHeap<Candidate<S>>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let c = Candidate { d2: sq_dist(q, self.point(i)), index: i };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("full heap") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let gap = q[dim] - value;
                let (near, far) = if gap < S::zero() { (left, right) } else { (right, left) };
                self.search(near, q, k, heap);
                // Equality must still descend: a tie at the worst distance
                // can hide a point with a smaller insertion index.
                if heap.len() < k || gap * gap <= heap.peek().expect("full heap").d2 {
                    self.search(far, q, k, heap);
                }
            }
        }
    }

    /// [`Self::knn`] for every query, in parallel, results in query order.
    pub fn knn_batch(&self, queries: &[Vec<S>], k: usize) -> Result<Vec<Vec<Neighbor<S>>>> {
        queries.par_iter().map(|q| self.knn(q, k)).collect()
    }
}

/// Named embeddings for one side of a task.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingSet<S> {
    pub ids: Vec<String>,
    pub vectors: Vec<Vec<S>>,
}

impl<S: Scalar> EmbeddingSet<S> {
    pub fn new(ids: Vec<String>, vectors: Vec<Vec<S>>) -> Self {
        EmbeddingSet { ids, vectors }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index(&self) -> Result<EmbeddingIndex<S>> {
        EmbeddingIndex::new(self.ids.clone(), self.vectors.clone())
    }

    fn position_map(&self) -> HashMap<&str, usize> {
        self.ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()
    }
}

/// Ground-truth `(source, target)` pairs for a diffing task.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GroundTruth {
    pairs: BTreeMap<String, String>,
}

impl GroundTruth {
    pub fn new(pairs: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (s, t) in pairs {
            if let Some(prev) = map.insert(s.clone(), t.clone()) {
                return Err(Error::Invalid(format!("source `{s}` matched to both `{prev}` and `{t}`")));
            }
        }
        Ok(GroundTruth { pairs: map })
    }

    /// Pair every source with the target carrying the same group key.
    pub fn from_groups(sources: &[String], targets: &[String], groups: &HashMap<String, usize>) -> Result<Self> {
        let mut by_group: HashMap<usize, &String> = HashMap::new();
        for t in targets {
            if let Some(&g) = groups.get(t) {
                if let Some(prev) = by_group.insert(g, t) {
                    return Err(Error::Invalid(format!("targets `{prev}` and `{t}` share group {g}")));
                }
            }
        }
        GroundTruth::new(sources.iter().filter_map(|s| {
            let g = groups.get(s)?;
            by_group.get(g).map(|t| (s.clone(), (*t).clone()))
        }))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn target_of(&self, source: &str) -> Option<&str> {
        self.pairs.get(source).map(String::as_str)
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.pairs.iter().map(|(s, t)| (s.as_str(), t.as_str()))
    }
}

/// Precision/recall/F1 and MAP of one task run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub map: f64,
    pub per_query_ap: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ReportText {
    tp: usize,
    fp: usize,
    #[serde(rename = "fn")]
    fn_: usize,
    precision: f64,
    recall: f64,
    f1: f64,
    map: f64,
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl EvalReport {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, per_query_ap: Vec<f64>) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let map = mean_average_precision(&per_query_ap);
        EvalReport { tp, fp, fn_, precision, recall, f1: f1_score(precision, recall), map, per_query_ap }
    }

    /// JSON object with keys tp, fp, fn, precision, recall, f1, map.
    pub fn to_json(&self) -> String {
        let r = ReportText {
            tp: self.tp,
            fp: self.fp,
            fn_: self.fn_,
            precision: self.precision,
            recall: self.recall,
            f1: self.f1,
            map: self.map,
        };
        let mut s = serde_json::to_string_pretty(&r).expect("plain struct serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: ReportText = serde_json::from_str(text).map_err(|e| Error::malformed(e.line(), format!("report: {e}")))?;
        Ok(EvalReport {
            tp: r.tp,
            fp: r.fp,
            fn_: r.fn_,
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
            map: r.map,
            per_query_ap: Vec::new(),
        })
    }
}

/// Average precision of one ranked list of relevance flags.
///
/// Normalized by the number of relevant items retrieved; zero if none.
pub fn average_precision(relevant: &[bool]) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &r) in relevant.iter().enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

pub fn mean_average_precision(aps: &[f64]) -> f64 {
    if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    }
}

/// One retrieved candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct Hit<S> {
    pub candidate: String,
    pub distance: S,
    pub relevant: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ranking<S> {
    pub query: String,
    pub hits: Vec<Hit<S>>,
}

/// `query,rank,candidate,distance,relevant` rows, ranks starting at 1.
pub fn rankings_csv<S: Scalar>(rankings: &[Ranking<S>]) -> String {
    let mut out = String::from("query,rank,candidate,distance,relevant\n");
    for r in rankings {
        for (i, h) in r.hits.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{},{}", csv_field(&r.query), i + 1, csv_field(&h.candidate), h.distance, u8::from(h.relevant));
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DiffMode {
    /// A source is a hit if its target is among its k nearest targets.
    #[default]
    TopK,
    /// Also build a one-to-one assignment.
    Matching,
}

impl std::str::FromStr for DiffMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "topk" => Ok(DiffMode::TopK),
            "matching" => Ok(DiffMode::Matching),
            _ => Err(Error::Argument(format!("unknown diff mode `{s}` (topk|matching)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiffResult<S> {
    pub rankings: Vec<Ranking<S>>,
    /// One-to-one `(source, target, distance)` list in matching mode.
    pub matches: Vec<(String, String, S)>,
    pub report: EvalReport,
}

/// Match every source function against the target set.
///
/// Each source query is a TP if its ground-truth target is among its `k`
/// nearest targets and a FP otherwise. Ground-truth pairs with a missing
/// source or target embedding are FN. The report's MAP is over sources with
/// a present target, so it is the mean reciprocal rank within the top `k`.
pub fn diff<S: Scalar>(
    source: &EmbeddingSet<S>,
    target: &EmbeddingSet<S>,
    truth: &GroundTruth,
    k: usize,
    mode: DiffMode,
) -> Result<DiffResult<S>> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::Empty("diff requires nonempty source and target sets"));
    }
    let index = target.index()?;
    let k = k.min(index.len());
    let neighbours = index.knn_batch(&source.vectors, k)?;
    let (sources, targets) = (source.position_map(), target.position_map());
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    let mut aps = Vec::new();
    let mut rankings = Vec::with_capacity(source.len());
    for (sid, nn) in source.ids.iter().zip(&neighbours) {
        let expected = truth.target_of(sid).filter(|t| targets.contains_key(t));
        let hits: Vec<Hit<S>> = nn
            .iter()
            .map(|n| Hit { candidate: index.id(n.index).to_string(), distance: n.distance, relevant: Some(index.id(n.index)) == expected })
            .collect();
        let flags: Vec<bool> = hits.iter().map(|h| h.relevant).collect();
        if flags.contains(&true) {
            tp += 1;
        } else {
            fp += 1;
        }
        if expected.is_some() {
            aps.push(average_precision(&flags));
        }
        rankings.push(Ranking { query: sid.clone(), hits });
    }
    for (s, t) in truth.pairs() {
        if !sources.contains_key(s) || !targets.contains_key(t) {
            fn_ += 1;
        }
    }
    let matches = match mode {
        DiffMode::TopK => Vec::new(),
        DiffMode::Matching => greedy_matching(source, target),
    };
    Ok(DiffResult { rankings, matches, report: EvalReport::from_counts(tp, fp, fn_, aps) })
}

/// One-to-one assignment of `min(m, n)` pairs by ascending distance.
pub fn greedy_matching<S: Scalar>(source: &EmbeddingSet<S>, target: &EmbeddingSet<S>) -> Vec<(String, String, S)> {
    let mut all: Vec<(S, usize, usize)> = source
        .vectors
        .par_iter()
        .enumerate()
        .flat_map_iter(|(i, s)| target.vectors.iter().enumerate().map(move |(j, t)| (sq_dist(s, t), i, j)))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let (mut used_s, mut used_t) = (vec![false; source.len()], vec![false; target.len()]);
    let mut out = Vec::new();
    for (d2, i, j) in all {
        if !used_s[i] && !used_t[j] {
            used_s[i] = true;
            used_t[j] = true;
            out.push((source.ids[i].clone(), target.ids[j].clone(), d2.sqrt()));
            if out.len() == source.len().min(target.len()) {
                break;
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult<S> {
    pub rankings: Vec<Ranking<S>>,
    pub report: EvalReport,
}

/// Retrieve the `k` nearest pool functions for every query.
///
/// `relevant(query, candidate)` decides relevance. The report's counts are
/// per retrieved item: relevant hits are TP, other hits FP, and relevant
/// pool entries left out of the top `k` FN.
pub fn search<S: Scalar>(
    pool: &EmbeddingSet<S>,
    queries: &EmbeddingSet<S>,
    k: usize,
    relevant: impl Fn(&str, &str) -> bool + Sync,
) -> Result<SearchResult<S>> {
    if pool.is_empty() {
        return Err(Error::Empty("search requires a nonempty pool"));
    }
    let in_pool = pool.position_map();
    if let Some(q) = queries.ids.iter().find(|q| in_pool.contains_key(q.as_str())) {
        return Err(Error::Argument(format!("query `{q}` is also in the pool")));
    }
    let index = pool.index()?;
    let k = k.min(index.len());
    let neighbours = index.knn_batch(&queries.vectors, k)?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    let mut aps = Vec::with_capacity(queries.len());
    let mut rankings = Vec::with_capacity(queries.len());
    for (qid, nn) in queries.ids.iter().zip(&neighbours) {
        let hits: Vec<Hit<S>> = nn
            .iter()
            .map(|n| Hit { candidate: index.id(n.index).to_string(), distance: n.distance, relevant: relevant(qid, index.id(n.index)) })
            .collect();
        let flags: Vec<bool> = hits.iter().map(|h| h.relevant).collect();
        let found = flags.iter().filter(|&&r| r).count();
        let total = pool.ids.iter().filter(|c| relevant(qid, c)).count();
        tp += found;
        fp += hits.len() - found;
        fn_ += total - found;
        aps.push(average_precision(&flags));
        rankings.push(Ranking { query: qid.clone(), hits });
    }
    Ok(SearchResult { rankings, report: EvalReport::from_counts(tp, fp, fn_, aps) })
}

/// Empirical CDF of the reports' F1 scores as `(f1, cumulative fraction)`.
pub fn f1_cdf(reports: &[EvalReport]) -> Vec<(f64, f64)> {
    let mut f1s: Vec<f64> = reports.iter().map(|r| r.f1).collect();
    f1s.sort_by(f64::total_cmp);
    let n = f1s.len() as f64;
    f1s.into_iter().enumerate().map(|(i, f)| (f, (i + 1) as f64 / n)).collect()
}

pub fn cdf_csv(table: &[(f64, f64)]) -> String {
    let mut out = String::from("f1,cumulative\n");
    for (f, c) in table {
        let _ = writeln!(out, "{f},{c}");
    }
    out
}
