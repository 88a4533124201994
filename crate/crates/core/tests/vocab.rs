mod common;

use std::collections::BTreeMap;

use common::{fixture_peepholes, normal, synthetic_kg, KgKind};
use peepvec::ir::Statement;
use peepvec::peephole::PeepholeConfig;
use peepvec::rng::stream;
use peepvec::synth::random_peephole;
use peepvec::vocab::{
    answer_analogy, entity_inventory, extract_triplets, hits_at_k, train_transe, train_transe_indexed,
    Relation, TransEConfig, Triplet, Vocabulary,
};
use proptest::prelude::*;
use rand::Rng;

fn abstract_token(tok: &str) -> &'static str {
    let tok = tok.trim();
    let digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    match tok.as_bytes().first() {
        Some(b't') if digits(&tok[1..]) => "VAR",
        Some(b'r') if digits(&tok[1..]) => "REG",
        Some(b'M') if digits(&tok[1..]) => "MEM",
        _ => "CONST",
    }
}

fn const_class(tok: &str) -> Option<String> {
    let tok = tok.trim();
    if tok.starts_with('f') {
        return Some("DOUBLE".into());
    }
    tok.rsplit_once(':').map(|(_, ty)| ty.to_string())
}

fn split_args(inner: &str) -> Vec<&str> {
    if inner.trim().is_empty() {
        Vec::new()
    } else {
        inner.split(',').map(str::trim).collect()
    }
}

/// Re-derive triplets from the printed statements with plain string
/// scanning.
fn scan_triplets(statements: &[Statement]) -> Vec<(String, String, String)> {
    let mut tmp_class: BTreeMap<String, String> = BTreeMap::new();
    let mut rows: Vec<(String, String, Vec<String>)> = Vec::new();
    let class_of = |tok: &str, env: &BTreeMap<String, String>| -> String {
        if abstract_token(tok) == "VAR" {
            env.get(tok.trim()).cloned().unwrap_or_else(|| "INT".into())
        } else if abstract_token(tok) == "CONST" {
            const_class(tok).unwrap_or_else(|| "INT".into())
        } else {
            "INT".into()
        }
    };
    for s in statements {
        let text = s.to_string();
        let (lhs, rhs) = match text.split_once(" = ") {
            Some((l, r)) => (Some(l.to_string()), r.to_string()),
            None => (None, text.clone()),
        };
        let mut def: Option<(String, String)> = None;
        let row = if let Some(rest) = rhs.strip_prefix("call ") {
            let open = rest.find('(').unwrap();
            let args = split_args(&rest[open + 1..rest.len() - 1]);
            let ty = lhs.as_ref().map(|l| l.split_once(':').unwrap().1.to_string()).unwrap_or_else(|| "INT".into());
            if let Some(l) = &lhs {
                let (t, ty) = l.split_once(':').unwrap();
                def = Some((t.to_string(), ty.to_string()));
            }
            let mut a = vec!["FUNC".to_string()];
            a.extend(args.iter().map(|x| abstract_token(x).to_string()));
            ("call".to_string(), ty, a)
        } else if let Some(l) = lhs.as_ref().filter(|l| l.starts_with('t')) {
            let (t, ty) = l.split_once(':').unwrap();
            def = Some((t.to_string(), ty.to_string()));
            match rhs.find('(') {
                Some(open) => {
                    let op = &rhs[..open];
                    let close = rhs.rfind(')').unwrap();
                    let args = split_args(&rhs[open + 1..close]);
                    (op.to_string(), ty.to_string(), args.iter().map(|x| abstract_token(x).to_string()).collect())
                }
                None => ("copy".to_string(), ty.to_string(), vec![abstract_token(&rhs).to_string()]),
            }
        } else {
            let l = lhs.unwrap();
            let open = l.find('(').unwrap();
            let kind = &l[..open];
            let target = &l[open + 1..l.len() - 1];
            (kind.to_string(), class_of(&rhs, &tmp_class), vec![abstract_token(target).into(), abstract_token(&rhs).into()])
        };
        if let Some((t, ty)) = def {
            tmp_class.insert(t, ty);
        }
        rows.push(row);
    }
    let mut out = Vec::new();
    for (i, (op, ty, args)) in rows.iter().enumerate() {
        out.push((op.clone(), "TYPE".to_string(), ty.clone()));
        for (j, a) in args.iter().take(8).enumerate() {
            out.push((op.clone(), format!("ARG{}", j + 1), a.clone()));
        }
        if let Some(next) = rows.get(i + 1) {
            out.push((op.clone(), "NEXT".to_string(), next.0.clone()));
        }
    }
    out
}

fn as_tuples(ts: &[Triplet]) -> Vec<(String, String, String)> {
    ts.iter().map(|t| (t.head.clone(), t.relation.to_string(), t.tail.clone())).collect()
}

fn sorted<T: Ord>(mut v: Vec<T>) -> Vec<T> {
    v.sort();
    v
}

#[test]
fn fixture_triplets_match_scanner() {
    let peeps = fixture_peepholes(&PeepholeConfig::default());
    assert!(!peeps.is_empty());
    for p in &peeps {
        let got = as_tuples(&extract_triplets(p));
        let want = scan_triplets(&p.statements);
        assert_eq!(sorted(got), sorted(want), "{:?}", p.block_ids);
    }
}

#[test]
fn random_peephole_triplets_match_scanner_and_stay_in_vocabulary() {
    let inventory = entity_inventory();
    let relations = Relation::names();
    let mut rng = stream(3, "oov");
    for _ in 0..500 {
        let len = rng.random_range(1..20);
        let p = random_peephole(&mut rng, len);
        let got = extract_triplets(&p);
        for t in &got {
            assert!(inventory.binary_search(&t.head).is_ok(), "{t}");
            assert!(inventory.binary_search(&t.tail).is_ok(), "{t}");
            assert!(relations.contains(&t.relation.to_string()));
        }
        assert_eq!(sorted(as_tuples(&got)), sorted(scan_triplets(&p.statements)));
    }
}

#[test]
fn synthetic_graph_hits_at_10() {
    let (ents, rels, triples) = synthetic_kg(7, KgKind::Planted);
    let cfg = TransEConfig { epochs: 500, ..Default::default() };
    let (v, _) = train_transe_indexed::<f64>(ents, rels, &triples, &cfg).unwrap();
    let h = hits_at_k(&v, &triples, 10);
    assert!(h >= 0.9, "hits@10 {h}");
}

#[test]
fn hits_at_k_oracle() {
    // e0 + R lands exactly on e1; e2 is farther.
    let mut v = Vocabulary::<f64>::new(2, vec!["e0".into(), "e1".into(), "e2".into()], vec!["R".into()]).unwrap();
    v.set_entity("e0", &[0.0, 0.0]).unwrap();
    v.set_entity("e1", &[1.0, 0.0]).unwrap();
    v.set_entity("e2", &[3.0, 0.0]).unwrap();
    v.set_relation("R", &[1.0, 0.0]).unwrap();
    assert_eq!(hits_at_k(&v, &[(0, 0, 1)], 1), 1.0);
    assert_eq!(hits_at_k(&v, &[(0, 0, 2)], 1), 0.0);
    assert_eq!(hits_at_k(&v, &[(0, 0, 2), (0, 0, 1)], 3), 1.0);
}

#[test]
fn fixture_loss_moving_average_decreases() {
    let triplets: Vec<Triplet> = fixture_peepholes(&PeepholeConfig::default()).iter().flat_map(extract_triplets).collect();
    let cfg = TransEConfig { epochs: 100, ..Default::default() };
    let (_, rep) = train_transe::<f64>(&triplets, &cfg).unwrap();
    let ma: Vec<f64> = rep.fixed_losses.windows(10).map(|w| w.iter().sum::<f64>() / 10.0).collect();
    for w in ma.windows(2) {
        assert!(w[1] <= w[0], "{} > {}", w[1], w[0]);
    }
}

#[test]
fn transe_gradient_matches_finite_differences() {
    let worst = common::transe_gradient_check(100, 11);
    assert!(worst <= 1e-4, "worst relative error {worst}");
}

fn random_rotation(rng: &mut peepvec::rng::StageRng, dim: usize) -> Vec<Vec<f64>> {
    // product of Householder reflections
    let mut q: Vec<Vec<f64>> = (0..dim).map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _ in 0..dim {
        let mut u: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
        let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        u.iter_mut().for_each(|x| *x /= n);
        for row in q.iter_mut() {
            let d: f64 = row.iter().zip(&u).map(|(a, b)| a * b).sum();
            for (x, ui) in row.iter_mut().zip(&u) {
                *x -= 2.0 * d * ui;
            }
        }
    }
    q
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn analogy_is_rotation_invariant(seed in any::<u64>(), n in 5usize..20, dim in 2usize..8) {
        let mut rng = stream(seed, "rot");
        let names: Vec<String> = (0..n).map(|i| format!("x{i:02}")).collect();
        let mut v = Vocabulary::<f64>::new(dim, names.clone(), vec![]).unwrap();
        for x in v.entity_matrix_mut() {
            *x = normal(&mut rng);
        }
        let q = random_rotation(&mut rng, dim);
        let mut w = v.clone();
        for (i, row) in w.entity_matrix_mut().chunks_mut(dim).enumerate() {
            let src = v.entity_at(i);
            for (r, out) in row.iter_mut().enumerate() {
                *out = (0..dim).map(|c| q[r][c] * src[c]).sum();
            }
        }
        let (a, b, c) = (&names[0], &names[1], &names[2]);
        prop_assert_eq!(answer_analogy(&v, a, b, c).unwrap(), answer_analogy(&w, a, b, c).unwrap());
    }
}

#[test]
fn trained_vocabulary_round_trips() {
    let triplets: Vec<Triplet> = fixture_peepholes(&PeepholeConfig::default()).iter().flat_map(extract_triplets).collect();
    let cfg = TransEConfig { epochs: 5, ..Default::default() };
    let (v, _) = train_transe::<f64>(&triplets, &cfg).unwrap();
    for i in 0..v.num_entities() {
        let n: f64 = v.entity_at(i).iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
    }
    let text = v.to_text();
    let w = Vocabulary::<f64>::from_text(&text).unwrap();
    assert_eq!(w, v);
    assert_eq!(w.to_text(), text);
    let (v2, _) = train_transe::<f64>(&triplets, &cfg).unwrap();
    assert_eq!(v2.to_text(), text, "training is deterministic");
}

/// A generated vocabulary file with one million entity lines.
pub fn stress_vocab_text(entities: usize, dim: usize) -> String {
    let mut rng = stream(5, "stress");
    let mut out = format!("peepvec-vocab v1 dim={dim}\n");
    for i in 0..entities {
        out.push_str(&format!("E n{i}"));
        for _ in 0..dim {
            let x: f64 = normal(&mut rng);
            out.push_str(&format!(" {x:.16e}"));
        }
        out.push('\n');
    }
    out.push_str(&format!("R NEXT{}\n", " 0.0000000000000000e0".repeat(dim)));
    out
}

#[test]
fn million_entry_file_round_trips() {
    let text = stress_vocab_text(1_000_000, 2);
    let v = Vocabulary::<f64>::from_text(&text).unwrap();
    assert_eq!(v.num_entities(), 1_000_000);
    assert_eq!(v.to_text(), text);
}
