//! Stage orchestration shared by the command-line tool and the end-to-end
//! tests.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use crate::embed::{embed_peepholes, function_counts, prepare_function, EmbedConfig, FunctionEmbedding};
use crate::error::{Error, Result};
use crate::ir::Program;
use crate::peephole::Peephole;
use crate::rng::stream;
use crate::scalar::{normalize_in_place, Scalar};
use crate::simtasks::{diff, search, DiffMode, DiffResult, EmbeddingSet, GroundTruth, SearchResult, DEFAULT_K};
use crate::synth::Corpus;
use crate::vexnet::{train, TrainingHistory, VexNetConfig, VexNetModel};
use crate::vocab::{entity_inventory, extract_triplets, train_transe, Relation, TransEConfig, TransEReport, Triplet, Vocabulary};

/// Canonicalize, decompose and normalize every function, in parallel.
pub fn prepare_program(program: &Program, cfg: &EmbedConfig) -> Vec<Vec<Peephole>> {
    program.functions.par_iter().map(|f| prepare_function(f, cfg).1).collect()
}

/// Triplets of all peepholes, in function then peephole order.
pub fn program_triplets(peepholes: &[Vec<Peephole>]) -> Vec<Triplet> {
    peepholes.par_iter().flat_map_iter(|ps| ps.iter().flat_map(extract_triplets)).collect()
}

/// Train the vocabulary on the distinct triplets of a stream.
///
/// The knowledge graph is a set of facts, so repeats carry no extra edges.
pub fn pretrain<S: Scalar>(triplets: &[Triplet], cfg: &TransEConfig) -> Result<(Vocabulary<S>, TransEReport)> {
    let unique: Vec<Triplet> = triplets.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    train_transe(&unique, cfg)
}

pub fn group_map(groups: &[(String, usize)]) -> HashMap<String, usize> {
    groups.iter().cloned().collect()
}

/// Labels for `embs`, failing on functions without a group.
pub fn labels_for<S>(embs: &[FunctionEmbedding<S>], groups: &HashMap<String, usize>) -> Result<Vec<usize>> {
    embs.iter()
        .map(|e| groups.get(&e.name).copied().ok_or_else(|| Error::UnknownEntity(format!("group of `{}`", e.name))))
        .collect()
}

pub fn embedding_set<S: Scalar>(names: Vec<String>, vectors: Vec<Vec<S>>) -> EmbeddingSet<S> {
    EmbeddingSet::new(names, vectors)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub embed: EmbedConfig,
    pub transe: TransEConfig,
    pub vexnet: VexNetConfig,
    /// Neighbours per diffing/searching query.
    pub k: usize,
    /// Variant index withheld from fine-tuning and used as queries.
    pub holdout_variant: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            embed: EmbedConfig::default(),
            transe: TransEConfig::default(),
            vexnet: VexNetConfig::default(),
            k: DEFAULT_K,
            holdout_variant: 3,
        }
    }
}

/// Everything produced by one end-to-end run over a labelled corpus.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub vocab: Vocabulary<f64>,
    pub transe: TransEReport,
    pub embeddings: Vec<FunctionEmbedding<f64>>,
    pub model: VexNetModel<f64>,
    pub history: TrainingHistory,
    pub search: SearchResult<f64>,
    pub diff: DiffResult<f64>,
    pub timings: Vec<(&'static str, f64)>,
}

/// Split of a corpus whose names follow `synth::variant_name`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct HoldoutSplit {
    pub train: Vec<usize>,
    pub queries: Vec<usize>,
    pub pool: Vec<usize>,
    /// Variant 0 of every group, the diffing source.
    pub source: Vec<usize>,
}

/// Variant number of a `g<group>_v<variant>` name.
pub fn variant_of(name: &str) -> Option<usize> {
    name.rsplit_once("_v")?.1.parse().ok()
}

pub fn holdout_split(names: &[String], holdout: usize) -> Result<HoldoutSplit> {
    let mut split = HoldoutSplit::default();
    for (i, n) in names.iter().enumerate() {
        let v = variant_of(n).ok_or_else(|| Error::Argument(format!("`{n}` is not a variant name")))?;
        if v == holdout {
            split.queries.push(i);
        } else {
            split.train.push(i);
            split.pool.push(i);
        }
        if v == 0 && v != holdout {
            split.source.push(i);
        }
    }
    if split.queries.is_empty() || split.pool.is_empty() {
        return Err(Error::Argument(format!("variant {holdout} leaves an empty query set or pool")));
    }
    Ok(split)
}

/// Evaluate fine-tuned outputs on a holdout split: search the held-out
/// variants in the pool, and diff variant 0 against the held-out variants.
pub fn evaluate_split(
    names: &[String],
    outputs: &[Vec<f64>],
    groups: &HashMap<String, usize>,
    split: &HoldoutSplit,
    k: usize,
) -> Result<(SearchResult<f64>, DiffResult<f64>)> {
    let pick = |ix: &[usize]| embedding_set(ix.iter().map(|&i| names[i].clone()).collect(), ix.iter().map(|&i| outputs[i].clone()).collect());
    let (pool, queries, source) = (pick(&split.pool), pick(&split.queries), pick(&split.source));
    let s = search(&pool, &queries, k, |q, c| groups.get(q).is_some() && groups.get(q) == groups.get(c))?;
    let truth = GroundTruth::from_groups(&source.ids, &queries.ids, groups)?;
    let d = diff(&source, &queries, &truth, k, DiffMode::TopK)?;
    Ok((s, d))
}

/// Pretrain, embed, fine-tune and evaluate on a synthetic corpus.
pub fn run_corpus(corpus: &Corpus, cfg: &PipelineConfig) -> Result<RunOutput> {
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &'static str, timings: &mut Vec<(&'static str, f64)>| {
        timings.push((name, clock.elapsed().as_secs_f64()));
        clock = Instant::now();
    };
    let program = &corpus.program;
    let groups = group_map(&corpus.groups);
    let peepholes = prepare_program(program, &cfg.embed);
    lap("peepholes", &mut timings);
    let triplets = program_triplets(&peepholes);
    let (vocab, transe) = pretrain::<f64>(&triplets, &cfg.transe)?;
    lap("pretrain", &mut timings);
    let embeddings = embed_peepholes(program, &peepholes, &vocab)?;
    lap("embed", &mut timings);

    let names: Vec<String> = embeddings.iter().map(|e| e.name.clone()).collect();
    let split = holdout_split(&names, cfg.holdout_variant)?;
    let labels = labels_for(&embeddings, &groups)?;
    let train_set: Vec<FunctionEmbedding<f64>> = split.train.iter().map(|&i| embeddings[i].clone()).collect();
    let train_labels: Vec<usize> = split.train.iter().map(|&i| labels[i]).collect();
    let mut vcfg = cfg.vexnet.clone();
    vcfg.in_dims[..3].fill(vocab.dim());
    let mut model = VexNetModel::<f64>::new(vcfg)?;
    let history = train(&mut model, &train_set, &train_labels)?;
    lap("train", &mut timings);

    let outputs = model.embed_all(&embeddings)?;
    let (search, diff) = evaluate_split(&names, &outputs, &groups, &split, cfg.k)?;
    lap("evaluate", &mut timings);
    Ok(RunOutput { vocab, transe, embeddings, model, history, search, diff, timings })
}

/// Run-time of the peephole and embedding stages on `n` workers.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub workers: usize,
    pub functions: usize,
    /// Wall-clock seconds since the start of this worker count's run.
    pub cumulative_seconds: f64,
}

/// A vocabulary over the full entity inventory with seeded random vectors.
/// Stage timings do not depend on the values.
pub fn random_vocabulary(dim: usize, seed: u64) -> Result<Vocabulary<f64>> {
    let mut v = Vocabulary::<f64>::new(dim, entity_inventory(), Relation::names())?;
    let mut rng = stream(seed, "bench-vocab");
    for x in v.entity_matrix_mut() {
        *x = rng.random_range(-1.0..1.0);
    }
    for x in v.relation_matrix_mut() {
        *x = rng.random_range(-1.0..1.0);
    }
    Ok(v)
}

/// Time peephole generation, normalization and embedding of each program's
/// functions in chunks, for every worker count.
///
/// Programs run one after another (task level); functions inside a chunk
/// run on the worker pool (thread level).
pub fn bench(programs: &[Program], vocab: &Vocabulary<f64>, cfg: &EmbedConfig, workers: &[usize], chunk: usize) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &w in workers {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
        let start = Instant::now();
        let mut done = 0;
        for program in programs {
            for part in program.functions.chunks(chunk.max(1)) {
                pool.install(|| {
                    part.par_iter()
                        .map(|f| function_counts(&prepare_function(f, cfg).1, vocab).map(|_| ()))
                        .collect::<Result<Vec<()>>>()
                })?;
                done += part.len();
                rows.push(BenchRow { workers: w, functions: done, cumulative_seconds: start.elapsed().as_secs_f64() });
            }
        }
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("workers,functions,cumulative_seconds\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:.6}", r.workers, r.functions, r.cumulative_seconds);
    }
    out
}

/// Total time of worker count `a` over that of `b`.
pub fn speedup(rows: &[BenchRow], a: usize, b: usize) -> Option<f64> {
    let total = |w: usize| rows.iter().filter(|r| r.workers == w).map(|r| r.cumulative_seconds).last();
    Some(total(a)? / total(b)?)
}

/// Fine-tuned output vectors for `embs` in evaluation mode.
pub fn infer(model: &VexNetModel<f64>, embs: &[FunctionEmbedding<f64>]) -> Result<EmbeddingSet<f64>> {
    let outputs = model.embed_all(embs)?;
    Ok(embedding_set(embs.iter().map(|e| e.name.clone()).collect(), outputs))
}

/// Concatenation of the unit-normalized O, T, A, S, L channels, for
/// diffing or searching without a fine-tuned model.
pub fn raw_vectors<S: Scalar>(embs: &[FunctionEmbedding<S>]) -> Vec<Vec<S>> {
    embs.iter()
        .map(|e| {
            let mut v = Vec::new();
            for c in [&e.o, &e.t, &e.a, &e.s, &e.l] {
                let mut c = c.clone();
                normalize_in_place(&mut c);
                v.extend(c);
            }
            v
        })
        .collect()
}
