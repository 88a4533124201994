use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;

use super::triplets::{entity_inventory, Relation, Triplet};
use super::{Vocabulary, DEFAULT_DIM};
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::rng::{stream, StageRng, DEFAULT_SEED};
use crate::scalar::{normalize_in_place, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct TransEConfig {
    pub dim: usize,
    /// Margin, in squared-distance units.
    pub margin: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TransEConfig {
    fn default() -> Self {
        TransEConfig { dim: DEFAULT_DIM, margin: 3.0, lr: 0.002, batch_size: 256, epochs: 100, seed: DEFAULT_SEED }
    }
}

impl TransEConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) {
            return Err(Error::Argument("margin must be > 0".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Argument("learning rate must be > 0".into()));
        }
        if self.dim == 0 || self.batch_size == 0 {
            return Err(Error::Argument("dim and batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// A positive triplet and its corruption, as indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CorruptedSample {
    pub h: usize,
    pub r: usize,
    pub t: usize,
    pub neg_h: usize,
    pub neg_t: usize,
}

#[derive(Clone, Debug, Default)]
pub struct TransEReport {
    /// Mean hinge loss of each epoch, over the negatives drawn for it.
    pub epoch_losses: Vec<f64>,
    /// Mean hinge loss after each epoch over one fixed set of negatives.
    pub fixed_losses: Vec<f64>,
    pub steps: usize,
}

fn sq_dist_translate<S: Scalar>(h: &[S], r: &[S], t: &[S]) -> S {
    let mut acc = S::zero();
    for i in 0..h.len() {
        let d = h[i] + r[i] - t[i];
        acc += d * d;
    }
    acc
}

/// Mean margin loss of a batch and its gradient with respect to the flat
/// entity and relation matrices.
pub fn transe_loss_grad<S: Scalar>(
    entities: &[S],
    relations: &[S],
    dim: usize,
    batch: &[CorruptedSample],
    margin: S,
) -> (S, Vec<S>, Vec<S>) {
    let mut ge = vec![S::zero(); entities.len()];
    let mut gr = vec![S::zero(); relations.len()];
    if batch.is_empty() {
        return (S::zero(), ge, gr);
    }
    let row = |_: &[S], i: usize| -> std::ops::Range<usize> { i * dim..(i + 1) * dim };
    let scale = S::one() / S::of(batch.len() as f64);
    let two = S::of(2.0);
    let mut loss = S::zero();
    for s in batch {
        let (h, r, t) = (&entities[row(entities, s.h)], &relations[row(relations, s.r)], &entities[row(entities, s.t)]);
        let (nh, nt) = (&entities[row(entities, s.neg_h)], &entities[row(entities, s.neg_t)]);
        let l = margin + sq_dist_translate(h, r, t) - sq_dist_translate(nh, r, nt);
        if l <= S::zero() {
            continue;
        }
        loss += l * scale;
        let c = two * scale;
        for i in 0..dim {
            let pos = c * (h[i] + r[i] - t[i]);
            let neg = c * (nh[i] + r[i] - nt[i]);
            ge[s.h * dim + i] += pos;
            ge[s.t * dim + i] -= pos;
            gr[s.r * dim + i] += pos - neg;
            ge[s.neg_h * dim + i] -= neg;
            ge[s.neg_t * dim + i] += neg;
        }
    }
    (loss, ge, gr)
}

/// Replace the head or the tail, with equal probability, by a different
/// uniformly drawn entity.
fn corrupt(rng: &mut StageRng, h: usize, r: usize, t: usize, ne: usize) -> CorruptedSample {
    let corrupt_head = rng.random_bool(0.5);
    let orig = if corrupt_head { h } else { t };
    let mut e = rng.random_range(0..ne);
    while e == orig && ne > 1 {
        e = rng.random_range(0..ne);
    }
    if corrupt_head {
        CorruptedSample { h, r, t, neg_h: e, neg_t: t }
    } else {
        CorruptedSample { h, r, t, neg_h: h, neg_t: e }
    }
}

/// Train on triplets over the closed entity inventory plus any extra names
/// they mention. Relations are the fixed ten.
pub fn train_transe<S: Scalar>(triplets: &[Triplet], cfg: &TransEConfig) -> Result<(Vocabulary<S>, TransEReport)> {
    if triplets.is_empty() {
        return Err(Error::Empty("triplet stream"));
    }
    let mut names: BTreeSet<String> = entity_inventory().into_iter().collect();
    for t in triplets {
        names.insert(t.head.clone());
        names.insert(t.tail.clone());
    }
    let entity_names: Vec<String> = names.into_iter().collect();
    let relations = Relation::all();
    let eidx: HashMap<&str, usize> = entity_names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let ridx: HashMap<Relation, usize> = relations.iter().enumerate().map(|(i, r)| (*r, i)).collect();
    let triples: Vec<(usize, usize, usize)> =
        triplets.iter().map(|t| (eidx[t.head.as_str()], ridx[&t.relation], eidx[t.tail.as_str()])).collect();
    let relation_names = relations.iter().map(|r| r.to_string()).collect();
    train_transe_indexed(entity_names, relation_names, &triples, cfg)
}

/// Train on `(head, relation, tail)` index triples.
pub fn train_transe_indexed<S: Scalar>(
    entity_names: Vec<String>,
    relation_names: Vec<String>,
    triples: &[(usize, usize, usize)],
    cfg: &TransEConfig,
) -> Result<(Vocabulary<S>, TransEReport)> {
    cfg.validate()?;
    if triples.is_empty() {
        return Err(Error::Empty("triplet stream"));
    }
    if entity_names.is_empty() || relation_names.is_empty() {
        return Err(Error::Empty("entity or relation inventory"));
    }
    let (ne, nr, dim) = (entity_names.len(), relation_names.len(), cfg.dim);
    for &(h, r, t) in triples {
        if h >= ne || t >= ne || r >= nr {
            return Err(Error::Argument("triple index out of range".into()));
        }
    }
    let mut vocab = Vocabulary::<S>::new(dim, entity_names, relation_names)?;
    let mut rng = stream(cfg.seed, "transe");
    let bound = 6.0 / (dim as f64).sqrt();
    for x in vocab.entity_matrix_mut().iter_mut() {
        *x = S::of(rng.random_range(-bound..bound));
    }
    for x in vocab.relation_matrix_mut().iter_mut() {
        *x = S::of(rng.random_range(-bound..bound));
    }
    for row in vocab.entity_matrix_mut().chunks_mut(dim) {
        normalize_in_place(row);
    }
    for row in vocab.relation_matrix_mut().chunks_mut(dim) {
        normalize_in_place(row);
    }

    let mut adam_e = Adam::<S>::new(ne * dim);
    let mut adam_r = Adam::<S>::new(nr * dim);
    let (lr, margin) = (S::of(cfg.lr), S::of(cfg.margin));
    let mut order: Vec<usize> = (0..triples.len()).collect();
    let mut report = TransEReport::default();
    let mut eval_rng = stream(cfg.seed, "transe-eval");
    let fixed: Vec<CorruptedSample> = triples.iter().map(|&(h, r, t)| corrupt(&mut eval_rng, h, r, t, ne)).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<CorruptedSample> = chunk
                .iter()
                .map(|&i| {
                    let (h, r, t) = triples[i];
                    corrupt(&mut rng, h, r, t, ne)
                })
                .collect();
            let (loss, ge, gr) = {
                let (e, r) = (vocab.entity_matrix(), vocab.relation_matrix());
                transe_loss_grad(e, r, dim, &batch, margin)
            };
            total += loss.to_f64_lossy() * batch.len() as f64;
            adam_e.step(vocab.entity_matrix_mut(), &ge, lr);
            adam_r.step(vocab.relation_matrix_mut(), &gr, lr);
            for row in vocab.entity_matrix_mut().chunks_mut(dim) {
                normalize_in_place(row);
            }
            report.steps += 1;
        }
        report.epoch_losses.push(total / triples.len() as f64);
        let (fixed_loss, _, _) = transe_loss_grad(vocab.entity_matrix(), vocab.relation_matrix(), dim, &fixed, margin);
        report.fixed_losses.push(fixed_loss.to_f64_lossy());
    }
    for (k, v) in [
        ("dim", dim.to_string()),
        ("margin", cfg.margin.to_string()),
        ("lr", cfg.lr.to_string()),
        ("batch_size", cfg.batch_size.to_string()),
        ("epochs", cfg.epochs.to_string()),
        ("seed", format!("{:#x}", cfg.seed)),
        ("triplets", triples.len().to_string()),
    ] {
        vocab.meta.insert(k.to_string(), v);
    }
    Ok((vocab, report))
}

/// Fraction of triples whose true tail ranks in the top `k` of all entities
/// by `d(h + r, e)`. Ties with the true tail count in its favor.
pub fn hits_at_k<S: Scalar>(vocab: &Vocabulary<S>, triples: &[(usize, usize, usize)], k: usize) -> f64 {
    if triples.is_empty() {
        return 0.0;
    }
    let ne = vocab.num_entities();
    let hits = triples
        .iter()
        .filter(|&&(h, r, t)| {
            let (hv, rv) = (vocab.entity_at(h), vocab.relation_at(r));
            let dt = sq_dist_translate(hv, rv, vocab.entity_at(t));
            let better = (0..ne).filter(|&e| sq_dist_translate(hv, rv, vocab.entity_at(e)) < dt).count();
            better < k
        })
        .count();
    hits as f64 / triples.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_triplet_is_learned() {
        let cfg = TransEConfig { dim: 16, epochs: 400, lr: 0.01, ..Default::default() };
        let (v, rep) = train_transe_indexed::<f64>(
            vec!["a".into(), "b".into(), "c".into()],
            vec!["R".into()],
            &[(0, 0, 1)],
            &cfg,
        )
        .unwrap();
        let d = sq_dist_translate(v.entity("a").unwrap(), v.relation("R").unwrap(), v.entity("b").unwrap());
        assert!(d < cfg.margin, "{d}");
        assert!(rep.epoch_losses.last().copied().unwrap() < 1e-9 || d < 0.5, "{:?}", rep.epoch_losses.last());
    }

    #[test]
    fn empty_stream_rejected() {
        assert!(matches!(train_transe::<f64>(&[], &TransEConfig::default()), Err(Error::Empty(_))));
    }
}
