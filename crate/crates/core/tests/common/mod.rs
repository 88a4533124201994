#![allow(dead_code)]

use peepvec::canon::canonicalize_function;
use peepvec::ir::{parse_program, BasicBlock, IrFunction, IrType, Operand, Program, Statement};
use peepvec::peephole::{generate_peepholes, Peephole, PeepholeConfig};
use peepvec::rng::stream;
use peepvec::embed::{embed_peepholes, prepare_function, EmbedConfig, FunctionEmbedding};
use peepvec::synth::{gen_corpus, CorpusConfig};
use peepvec::vexnet::{Mode, VexNetConfig, VexNetModel};
use peepvec::vocab::{extract_triplets, train_transe, transe_loss_grad, CorruptedSample, TransEConfig};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub const FIXTURES: [(&str, &str); 3] = [
    ("a", include_str!("../../../../fixtures/a.vexir")),
    ("fibonacci", include_str!("../../../../fixtures/fibonacci.vexir")),
    ("loop", include_str!("../../../../fixtures/loop.vexir")),
];

pub fn fixture_programs() -> Vec<Program> {
    FIXTURES.iter().map(|(_, src)| parse_program(src).unwrap()).collect()
}

/// Canonical peepholes of every fixture function.
pub fn fixture_peepholes(cfg: &PeepholeConfig) -> Vec<Peephole> {
    let mut out = Vec::new();
    for p in fixture_programs() {
        for f in &p.functions {
            let c = canonicalize_function(f);
            out.extend(generate_peepholes(&c, cfg).peepholes);
        }
    }
    out
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum KgKind {
    /// Tails from a planted translational model.
    Planted,
    /// Tails from a uniformly random function of head and relation.
    RandomFunction,
}

/// A 50-entity, 5-relation graph where each tail is `f(head, relation)`,
/// sampled at 500 `(h, r)` pairs.
///
/// For `Planted`, `f(h, r)` is the entity whose latent point is nearest to
/// `z_h + z_r`.
pub fn synthetic_kg(seed: u64, kind: KgKind) -> (Vec<String>, Vec<String>, Vec<(usize, usize, usize)>) {
    let mut rng = stream(seed, "kg");
    let ents: Vec<String> = (0..50).map(|i| format!("e{i:02}")).collect();
    let rels: Vec<String> = (0..5).map(|i| format!("r{i}")).collect();
    let latent = 8;
    let point = |rng: &mut peepvec::rng::StageRng, scale: f64| -> Vec<f64> {
        (0..latent).map(|_| rng.random_range(-scale..scale)).collect()
    };
    let z: Vec<Vec<f64>> = (0..50).map(|_| point(&mut rng, 1.0)).collect();
    let zr: Vec<Vec<f64>> = (0..5).map(|_| point(&mut rng, 0.6)).collect();
    let f: Vec<Vec<usize>> = (0..50)
        .map(|h| {
            (0..5)
                .map(|r| match kind {
                    KgKind::RandomFunction => rng.random_range(0..50),
                    KgKind::Planted => {
                        let target: Vec<f64> = (0..latent).map(|i| z[h][i] + zr[r][i]).collect();
                        let d = |e: usize| -> f64 { (0..latent).map(|i| (target[i] - z[e][i]).powi(2)).sum() };
                        (0..50).min_by(|&a, &b| d(a).total_cmp(&d(b))).unwrap()
                    }
                })
                .collect()
        })
        .collect();
    let triples = (0..500)
        .map(|_| {
            let h = rng.random_range(0..50);
            let r = rng.random_range(0..5);
            (h, r, f[h][r])
        })
        .collect();
    (ents, rels, triples)
}

pub fn normal(rng: &mut peepvec::rng::StageRng) -> f64 {
    StandardNormal.sample(rng)
}

/// Central differences against the analytic gradient on random batches,
/// avoiding configurations that sit on a hinge kink.
pub fn transe_gradient_check(trials: usize, seed: u64) -> f64 {
    let mut rng = stream(seed, "transe-grad");
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < trials {
        let (ne, nr, dim) = (rng.random_range(2..8), rng.random_range(1..4), rng.random_range(1..6));
        let margin = rng.random_range(0.5..4.0);
        let e: Vec<f64> = (0..ne * dim).map(|_| normal(&mut rng)).collect();
        let r: Vec<f64> = (0..nr * dim).map(|_| normal(&mut rng)).collect();
        let batch: Vec<CorruptedSample> = (0..rng.random_range(1..6))
            .map(|_| CorruptedSample {
                h: rng.random_range(0..ne),
                r: rng.random_range(0..nr),
                t: rng.random_range(0..ne),
                neg_h: rng.random_range(0..ne),
                neg_t: rng.random_range(0..ne),
            })
            .collect();
        let unhinged = |e: &[f64], r: &[f64]| {
            batch.iter().all(|s| {
                let d = |h: usize, t: usize| -> f64 {
                    (0..dim).map(|i| (e[h * dim + i] + r[s.r * dim + i] - e[t * dim + i]).powi(2)).sum()
                };
                (margin + d(s.h, s.t) - d(s.neg_h, s.neg_t)).abs() > 1e-2
            })
        };
        if !unhinged(&e, &r) {
            continue;
        }
        let (_, ge, gr) = transe_loss_grad(&e, &r, dim, &batch, margin);
        let h = 1e-5;
        let mut check = |params: &mut Vec<f64>, grads: &[f64], is_e: bool, other: &[f64]| {
            for i in 0..params.len() {
                let x = params[i];
                params[i] = x + h;
                let lp = if is_e { transe_loss_grad(params, other, dim, &batch, margin).0 } else { transe_loss_grad(other, params, dim, &batch, margin).0 };
                params[i] = x - h;
                let lm = if is_e { transe_loss_grad(params, other, dim, &batch, margin).0 } else { transe_loss_grad(other, params, dim, &batch, margin).0 };
                params[i] = x;
                let num = (lp - lm) / (2.0 * h);
                let rel = (num - grads[i]).abs() / num.abs().max(grads[i].abs()).max(1e-3);
                worst = worst.max(rel);
            }
        };
        let mut ec = e.clone();
        check(&mut ec, &ge, true, &r);
        let mut rc = r.clone();
        check(&mut rc, &gr, false, &e);
        done += 1;
    }
    worst
}


pub fn random_embedding(rng: &mut peepvec::rng::StageRng, dims: [usize; 5], with_s: bool, with_l: bool) -> FunctionEmbedding<f64> {
    let mut v = |d: usize, on: bool| -> Vec<f64> { (0..d).map(|_| if on { normal(rng) } else { 0.0 }).collect() };
    FunctionEmbedding {
        name: "r".into(),
        source: String::new(),
        o: v(dims[0], true),
        t: v(dims[1], true),
        a: v(dims[2], true),
        s: v(dims[3], with_s),
        l: v(dims[4], with_l),
    }
}

/// Worst `|Σα - 1|` over unmasked channels and whether every weight was in
/// the open interval, over `trials` random models and inputs.
pub fn attention_check(trials: usize, seed: u64) -> (f64, bool) {
    let mut rng = stream(seed, "attention");
    let (mut worst, mut open) = (0.0f64, true);
    for t in 0..trials {
        let dims = [rng.random_range(1..12), rng.random_range(1..12), rng.random_range(1..12), rng.random_range(1..12), rng.random_range(1..12)];
        let cfg = VexNetConfig {
            in_dims: dims,
            context_dim: rng.random_range(1..24),
            out_dim: rng.random_range(1..8),
            seed: seed ^ t as u64,
            ..Default::default()
        };
        let model = VexNetModel::<f64>::new(cfg).unwrap();
        let (ws, wl) = (rng.random_bool(0.7), rng.random_bool(0.7));
        let e = random_embedding(&mut rng, dims, ws, wl);
        let mode = if rng.random_bool(0.5) { Mode::Eval } else { Mode::Train { seed: t as u64 } };
        let (_, alpha) = model.forward(&e, mode).unwrap();
        let live = [true, true, true, ws, wl];
        let sum: f64 = alpha.iter().zip(live).filter(|(_, l)| *l).map(|(a, _)| *a).sum();
        worst = worst.max((sum - 1.0).abs());
        for (a, l) in alpha.iter().zip(live) {
            if l && !(*a > 0.0 && *a < 1.0) {
                open = false;
            }
            if !l && *a != 0.0 {
                open = false;
            }
        }
    }
    (worst, open)
}

/// Central differences (step 1e-5) against reverse-mode gradients of the
/// full network loss on random small configurations in training mode.
pub fn vexnet_gradient_check(trials: usize, seed: u64) -> f64 {
    let mut rng = stream(seed, "vexnet-grad");
    let mut worst: f64 = 0.0;
    for t in 0..trials {
        let dims = [rng.random_range(2..6), rng.random_range(2..6), rng.random_range(2..6), rng.random_range(2..6), rng.random_range(2..6)];
        let cfg = VexNetConfig {
            in_dims: dims,
            context_dim: 8,
            out_dim: 4,
            dropout: rng.random_range(0.0..0.3),
            temperature: rng.random_range(0.05..1.0),
            seed: seed ^ t as u64,
            ..Default::default()
        };
        let mut model = VexNetModel::<f64>::new(cfg).unwrap();
        // move batch-norm affine params away from their identity init
        for p in model.params_mut() {
            for x in p.data.iter_mut() {
                *x += 0.1 * normal(&mut rng);
            }
        }
        let b = rng.random_range(3..8);
        let batch: Vec<FunctionEmbedding<f64>> =
            (0..b).map(|_| { let (s, l) = (rng.random_bool(0.7), rng.random_bool(0.7)); random_embedding(&mut rng, dims, s, l) }).collect();
        let refs: Vec<&FunctionEmbedding<f64>> = batch.iter().collect();
        let input = model.batch_input(&refs).unwrap();
        let positives: Vec<Option<usize>> = (0..b)
            .map(|i| if rng.random_bool(0.8) { Some((i + 1 + rng.random_range(0..b - 1)) % b) } else { None })
            .collect();
        let mode = Mode::Train { seed: t as u64 };
        let (_, grads, _) = model.loss_and_grads(&input, &positives, mode);
        let h = 1e-5;
        for p in 0..grads.len() {
            for i in 0..grads[p].data.len() {
                let x = model.params()[p].data[i];
                model.params_mut()[p].data[i] = x + h;
                let lp = model.loss_and_grads(&input, &positives, mode).0;
                model.params_mut()[p].data[i] = x - h;
                let lm = model.loss_and_grads(&input, &positives, mode).0;
                model.params_mut()[p].data[i] = x;
                let num = (lp - lm) / (2.0 * h);
                let ana = grads[p].data[i];
                worst = worst.max((num - ana).abs() / num.abs().max(ana.abs()).max(1e-3));
            }
        }
    }
    worst
}

/// A small synthetic corpus embedded with a quickly trained vocabulary.
pub fn toy_dataset(groups: usize, variants: usize, dim: usize, seed: u64) -> (Vec<FunctionEmbedding<f64>>, Vec<usize>) {
    let corpus = gen_corpus(&CorpusConfig { groups, variants, seed, ..Default::default() });
    let cfg = EmbedConfig::default();
    let peeps: Vec<Vec<Peephole>> = corpus.program.functions.iter().map(|f| prepare_function(f, &cfg).1).collect();
    let triplets: Vec<_> = peeps.iter().flatten().flat_map(extract_triplets).collect();
    let (vocab, _) = train_transe::<f64>(&triplets, &TransEConfig { dim, epochs: 20, seed, ..Default::default() }).unwrap();
    let embs = embed_peepholes(&corpus.program, &peeps, &vocab).unwrap();
    let labels = corpus.groups.iter().map(|(_, g)| *g).collect();
    (embs, labels)
}

/// A random CFG shaped like a directed tree plus extra edges, with
/// about `ratio` edges per block. Every block carries one `put`.
pub fn random_cfg(rng: &mut peepvec::rng::StageRng, blocks: usize, ratio: f64) -> IrFunction {
    let mut succ: Vec<Vec<u32>> = vec![Vec::new(); blocks];
    for i in 1..blocks {
        let parent = rng.random_range(0..i);
        succ[parent].push(i as u32);
    }
    let target = ((ratio * blocks as f64).round() as usize).max(blocks.saturating_sub(1));
    let mut edges = blocks.saturating_sub(1);
    let mut guard = 0;
    while edges < target && guard < 100 * blocks {
        guard += 1;
        let (a, b) = (rng.random_range(0..blocks), rng.random_range(0..blocks) as u32);
        if !succ[a].contains(&b) {
            succ[a].push(b);
            edges += 1;
        }
    }
    let mut f = IrFunction::new(format!("cfg{blocks}"));
    for (id, successors) in succ.into_iter().enumerate() {
        let statements = vec![Statement::Put { reg: Operand::Reg(16), value: Operand::int(id as i128, IrType::I64) }];
        f.blocks.push(BasicBlock { id: id as u32, statements, successors });
    }
    f
}
