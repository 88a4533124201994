mod common;

use common::{fixture_programs, random_cfg};
use peepvec::canon::canonicalize_function;
use peepvec::ir::{BasicBlock, IrFunction};
use peepvec::peephole::{expected_peephole_stats, format_peep_lines, generate_peepholes, parse_peep_lines, peepholes_from_ids, PeepholeConfig};
use peepvec::rng::stream_u64;
use proptest::prelude::*;
use rand::Rng;

fn chain(n: u32) -> IrFunction {
    let mut f = IrFunction::new("chain");
    for id in 0..n {
        let successors = if id + 1 < n { vec![id + 1] } else { vec![] };
        f.blocks.push(BasicBlock { id, statements: vec![], successors });
    }
    f
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn walk_invariants(seed in any::<u64>(), n in 1usize..120, k in 1usize..80, c in 1usize..5) {
        let mut rng = stream_u64(seed, 0);
        let ratio = rng.random_range(1.0..2.0);
        let f = random_cfg(&mut rng, n, ratio);
        let cfg = PeepholeConfig { k, c, seed };
        let set = generate_peepholes(&f, &cfg);
        prop_assert!(set.iterations <= c * n);
        prop_assert_eq!(set.iterations, set.peepholes.len());
        let mut recount = vec![0usize; n];
        for p in &set.peepholes {
            prop_assert!(!p.block_ids.is_empty() && p.block_ids.len() <= k);
            for w in p.block_ids.windows(2) {
                prop_assert!(f.blocks[w[0] as usize].successors.contains(&w[1]));
            }
            // a walk stops early only at a sink
            if p.block_ids.len() < k {
                prop_assert!(f.blocks[*p.block_ids.last().unwrap() as usize].successors.is_empty());
            }
            let flat: Vec<_> = p.block_ids.iter().flat_map(|&b| f.blocks[b as usize].statements.clone()).collect();
            prop_assert_eq!(&p.statements, &flat);
            for &b in &p.block_ids {
                recount[b as usize] += 1;
            }
        }
        prop_assert_eq!(&recount, &set.visit_counts);
        prop_assert!(recount.iter().all(|&v| v >= c));
        prop_assert_eq!(generate_peepholes(&f, &cfg), set);
    }
}

#[test]
fn chain_of_five() {
    let f = chain(5);
    let mut from_zero = 0;
    for seed in 0..200 {
        let set = generate_peepholes(&f, &PeepholeConfig { k: 5, c: 1, seed });
        assert!(set.iterations <= 5);
        if set.peepholes[0].block_ids[0] == 0 {
            from_zero += 1;
            assert_eq!(set.peepholes.len(), 1);
            assert_eq!(set.peepholes[0].block_ids, vec![0, 1, 2, 3, 4]);
        }
    }
    assert!(from_zero > 0);
}

#[test]
fn loop_block_is_visited_most() {
    let p = fixture_programs().into_iter().find(|p| p.name == "loop").unwrap();
    let f = canonicalize_function(&p.functions[0]);
    assert_eq!(f.blocks.len(), 4);
    let mut totals = [0usize; 4];
    for seed in 0..1000 {
        let set = generate_peepholes(&f, &PeepholeConfig { k: 6, c: 2, seed });
        assert!(set.visit_counts.iter().all(|&v| v >= 2));
        for (t, v) in totals.iter_mut().zip(&set.visit_counts) {
            *t += v;
        }
    }
    let max_other = [0, 3].iter().map(|&i| totals[i]).max().unwrap();
    assert!(totals[1] >= max_other, "{totals:?}");
}

#[test]
fn expected_counts() {
    let one = chain(1);
    let s = expected_peephole_stats(&one, &PeepholeConfig { k: 6, c: 2, seed: 1 }, 50);
    assert_eq!(s.mean_peepholes, 2.0);
    let ten = chain(10);
    let s = expected_peephole_stats(&ten, &PeepholeConfig { k: 10, c: 2, seed: 1 }, 200);
    assert!(s.mean_peepholes <= 20.0);
    assert_eq!(s.bound, 20.0);
}

#[test]
fn peep_file_rebuilds_peepholes() {
    for p in fixture_programs() {
        for f in &p.functions {
            let f = canonicalize_function(f);
            let set = generate_peepholes(&f, &PeepholeConfig { k: 6, c: 2, seed: 9 });
            let parsed = parse_peep_lines(&format_peep_lines(&f.name, &set)).unwrap();
            assert!(parsed.iter().all(|(n, _)| *n == f.name));
            let ids: Vec<_> = parsed.into_iter().map(|(_, ids)| ids).collect();
            assert_eq!(peepholes_from_ids(&f, &ids).unwrap(), set.peepholes);
        }
    }
}
