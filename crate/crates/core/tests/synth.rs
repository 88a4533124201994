use std::collections::HashSet;

use peepvec::canon::{abstract_operands, canonicalize_function, canonicalize_with, CanonOptions};
use peepvec::ir::{serialize_program, validate_cfg, IrFunction, Program, Statement};
use peepvec::opcodes::OpcodeTable;
use peepvec::peephole::Peephole;
use peepvec::synth::{gen_corpus, gen_function, make_variant, make_variant_traced, map_back, variant_block_statements, CorpusConfig, VariationProfile};
use peepvec::vexine::evaluate_statements;

fn canon_keep_addresses(f: &IrFunction) -> IrFunction {
    canonicalize_with(f, OpcodeTable::builtin(), CanonOptions { indirect_memory: false }).0
}

#[test]
fn edge_block_ratio_near_appendix() {
    let mut edges = 0usize;
    let mut blocks = 0usize;
    let mut ratios = 0.0;
    for seed in 0..1000 {
        let f = gen_function(seed, 100);
        assert!(validate_cfg(&f).is_empty());
        let e: usize = f.blocks.iter().map(|b| b.successors.len()).sum();
        assert_eq!(e, f.edge_count());
        edges += e;
        blocks += f.blocks.len();
        ratios += e as f64 / f.blocks.len() as f64;
    }
    let mean = ratios / 1000.0;
    assert!((1.2..=1.5).contains(&mean), "mean ratio {mean}");
    let pooled = edges as f64 / blocks as f64;
    assert!((1.2..=1.5).contains(&pooled), "pooled ratio {pooled}");
}

#[test]
fn full_profile_keeps_block_observables() {
    let profile = VariationProfile::full();
    for seed in 0..100u64 {
        let base = gen_function(seed, 20 + (seed as usize * 7) % 160);
        let (variant, trace) = make_variant_traced(&base, &profile, seed ^ 0xabc);
        assert!(validate_cfg(&variant).is_empty(), "seed {seed}");
        let back = canon_keep_addresses(&map_back(&variant, &trace));
        let orig = canon_keep_addresses(&base);
        for b in &orig.blocks {
            let ours = variant_block_statements(&back, &trace, b.id);
            for env in 0..8 {
                let want = evaluate_statements(&b.statements, env).unwrap();
                let got = evaluate_statements(&ours, env).unwrap();
                assert!(want.observables_equal(&got), "seed {seed} block {} env {env}", b.id);
            }
        }
    }
}

fn abstract_blocks(f: &IrFunction) -> Vec<Peephole> {
    let c = canonicalize_function(f);
    c.blocks.iter().map(|b| abstract_operands(&Peephole { block_ids: vec![b.id], statements: b.statements.clone() })).collect()
}

#[test]
fn renaming_vanishes_after_abstraction() {
    for seed in 0..100 {
        let f = gen_function(seed, 60);
        let v = make_variant(&f, &VariationProfile::rename_only(), seed + 1);
        assert_eq!(abstract_blocks(&v), abstract_blocks(&f), "seed {seed}");
    }
}

#[test]
fn distinct_seeds_distinct_functions() {
    let mut seen = HashSet::new();
    for seed in 0..2000 {
        let mut f = gen_function(seed, 40);
        f.name = "f".into();
        let text = serialize_program(&Program { name: "p".into(), functions: vec![f] });
        assert!(seen.insert(text), "seed {seed} repeats an earlier function");
    }
}

#[test]
fn anchors_survive_variation() {
    let mut profiles = vec![VariationProfile::identity(), VariationProfile::rename_only(), VariationProfile::full()];
    profiles.push(VariationProfile { split_blocks: 1.0, junk: 1.0, reorder: 1.0, reexpress: 1.0, ..VariationProfile::full() });
    for seed in 0..200 {
        let f = gen_function(seed, 80);
        for p in &profiles {
            let v = make_variant(&f, p, seed * 31);
            assert_eq!(v.strings, f.strings);
            assert_eq!(v.extern_calls, f.extern_calls);
            let calls = |g: &IrFunction| {
                let mut c: Vec<String> = g
                    .statements()
                    .filter_map(|s| match s {
                        Statement::Call { target, .. } => target.name().map(str::to_string),
                        _ => None,
                    })
                    .collect();
                c.sort();
                c
            };
            assert_eq!(calls(&v), calls(&f));
        }
    }
}

#[test]
fn corpus_labels_follow_groups() {
    let cfg = CorpusConfig { groups: 12, variants: 3, min_size: 10, max_size: 40, ..CorpusConfig::default() };
    let c = gen_corpus(&cfg);
    assert_eq!(c.program.functions.len(), 36);
    for (f, (name, g)) in c.program.functions.iter().zip(&c.groups) {
        assert_eq!(&f.name, name);
        assert_eq!(name[1..5].parse::<usize>().unwrap(), *g);
    }
    assert_eq!(gen_corpus(&cfg), c);
}
