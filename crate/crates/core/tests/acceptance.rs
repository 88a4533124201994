//! One PASS/FAIL line per acceptance criterion. Run with `--nocapture` to
//! see the lines when everything passes.

mod common;

use std::time::{Duration, Instant};

use common::{attention_check, random_cfg, synthetic_kg, transe_gradient_check, vexnet_gradient_check, KgKind};
use peepvec::embed::EmbedConfig;
use peepvec::ir::Statement;
use peepvec::peephole::{generate_peepholes, PeepholeConfig};
use peepvec::pipeline::{bench, random_vocabulary, run_corpus, speedup, PipelineConfig, RunOutput};
use peepvec::rng::stream_u64;
use peepvec::simtasks::{average_precision, mean_average_precision, search, EmbeddingIndex, EmbeddingSet, EvalReport};
use peepvec::synth::{gen_corpus, random_peephole, CorpusConfig};
use peepvec::vexine::{
    common_subexpression_elimination, constant_propagation, copy_propagation, dead_temp_elimination, evaluate_peephole,
    load_store_elimination, normalize_peephole, redundant_write_elimination, register_promotion, store_store_elimination, NormLevel,
};
use peepvec::vocab::{analogy_accuracy, hits_at_k, parse_analogies, train_transe_indexed, AnalogyQuery, TransEConfig};
use peepvec::vocab::Vocabulary;
use rand::Rng;

struct Sheet {
    lines: Vec<(bool, String)>,
}

impl Sheet {
    fn record(&mut self, name: &str, pass: bool, detail: String) {
        let line = format!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        println!("{line}");
        self.lines.push((pass, line));
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed())
}

fn walk_bound(sheet: &mut Sheet) {
    let ((checked, bad), took) = timed(|| {
        let mut rng = stream_u64(1, 1);
        let (mut checked, mut bad) = (0, 0);
        for i in 0..1000u64 {
            let n = rng.random_range(1..=200);
            let ratio = rng.random_range(1.0..2.0);
            let f = random_cfg(&mut rng, n, ratio);
            for c in [1, 2, 3, 5] {
                for k in [1, 4, 16, 72] {
                    let set = generate_peepholes(&f, &PeepholeConfig { k, c, seed: i });
                    checked += 1;
                    if set.iterations > c * n || set.visit_counts.iter().any(|&v| v < c) {
                        bad += 1;
                    }
                }
            }
        }
        (checked, bad)
    });
    let pass = bad == 0 && took < Duration::from_secs(30);
    sheet.record("walk bound", pass, format!("{} of {checked} walks within c|V| with every block visited c times, {:.2}s", checked - bad, took.as_secs_f64()));
}

fn observation_one(sheet: &mut Sheet) {
    let mut rng = stream_u64(2, 2);
    let mut fractions = Vec::new();
    for i in 0..500u64 {
        let n = rng.random_range(50..=200);
        let f = random_cfg(&mut rng, n, 1.35);
        let c = [1, 2, 3][i as usize % 3];
        let set = generate_peepholes(&f, &PeepholeConfig { k: 72, c, seed: i });
        fractions.push(set.peepholes.len() as f64 / (c * n) as f64);
    }
    let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
    let pass = (0.3..=1.0).contains(&mean);
    sheet.record("peephole count on sparse CFGs", pass, format!("mean count = {mean:.3}·c|V| (reference 0.5·c|V|)"));
}

fn normalization(sheet: &mut Sheet) {
    let ((sound, stable, total), took) = timed(|| {
        let mut rng = stream_u64(3, 3);
        let (mut sound, mut stable, mut total) = (0, 0, 0);
        for _ in 0..10_000 {
            let len = rng.random_range(1..40);
            let p = random_peephole(&mut rng, len);
            let before: Vec<_> = (0..8).map(|env| evaluate_peephole(&p, env).unwrap()).collect();
            for level in [NormLevel::N1, NormLevel::N2, NormLevel::N3] {
                let q = normalize_peephole(&p, level);
                total += 1;
                if (0..8).all(|env| before[env as usize].observables_equal(&evaluate_peephole(&q, env).unwrap())) {
                    sound += 1;
                }
                if q.statements.len() <= p.statements.len() && normalize_peephole(&q, level) == q {
                    stable += 1;
                }
            }
        }
        (sound, stable, total)
    });
    let secs = took.as_secs_f64();
    sheet.record("normalization soundness", sound == total && secs < 300.0, format!("{sound}/{total} peephole-levels keep observables over 8 environments, {secs:.1}s"));
    sheet.record("normalization idempotence and size", stable == total, format!("{stable}/{total} idempotent with no growth"));
}

type Pass = fn(&[Statement]) -> Vec<Statement>;

fn linearity(sheet: &mut Sheet) {
    let passes: [(&str, Pass); 8] = [
        ("register_promotion", register_promotion),
        ("redundant_write_elimination", redundant_write_elimination),
        ("copy_propagation", copy_propagation),
        ("constant_propagation", constant_propagation),
        ("common_subexpression_elimination", common_subexpression_elimination),
        ("load_store_elimination", load_store_elimination),
        ("store_store_elimination", store_store_elimination),
        ("dead_temp_elimination", dead_temp_elimination),
    ];
    let mut rng = stream_u64(4, 4);
    let inputs: Vec<(usize, Vec<Statement>, Vec<Statement>)> =
        [1_000, 10_000, 100_000].iter().map(|&n| (n, random_peephole(&mut rng, n).statements, random_peephole(&mut rng, 2 * n).statements)).collect();
    let run = |pass: Pass, s: &[Statement]| timed(|| std::hint::black_box(pass(std::hint::black_box(s)))).1;
    // Best of interleaved runs, so both sizes see the same machine load.
    let ratio = |pass: Pass, one: &[Statement], two: &[Statement]| {
        let (mut a, mut b) = (Duration::MAX, Duration::MAX);
        let start = Instant::now();
        let mut reps = 0;
        while reps < 5 || (reps < 200 && start.elapsed() < Duration::from_millis(300)) {
            a = a.min(run(pass, one));
            b = b.min(run(pass, two));
            reps += 1;
        }
        b.as_secs_f64() / a.as_secs_f64()
    };
    let mut worst = (0.0, "", 0);
    for (name, pass) in passes {
        for (n, one, two) in &inputs {
            let r = ratio(pass, one, two);
            if r > worst.0 {
                worst = (r, name, *n);
            }
        }
    }
    sheet.record("pass linearity", worst.0 <= 2.5, format!("worst runtime(2n)/runtime(n) = {:.2} ({} at n={})", worst.0, worst.1, worst.2));
}

fn transe(sheet: &mut Sheet) {
    let ((h, epochs), took) = timed(|| {
        let (ents, rels, triples) = synthetic_kg(7, KgKind::Planted);
        let cfg = TransEConfig { epochs: 500, ..Default::default() };
        let (v, _) = train_transe_indexed::<f64>(ents, rels, &triples, &cfg).unwrap();
        (hits_at_k(&v, &triples, 10), cfg.epochs)
    });
    let pass = h >= 0.9 && took < Duration::from_secs(120);
    sheet.record("TransE planted graph", pass, format!("hits@10 = {h:.3} after {epochs} epochs (margin 3, lr 0.002, batch 256), {:.1}s", took.as_secs_f64()));
}

fn gradients(sheet: &mut Sheet) {
    let t = transe_gradient_check(100, 11);
    let v = vexnet_gradient_check(100, 12);
    sheet.record("gradient checks", t <= 1e-4 && v <= 1e-4, format!("worst relative error TransE {t:.2e}, VexNet {v:.2e} over 100 configurations each"));
}

fn attention(sheet: &mut Sheet) {
    let (worst, open) = attention_check(1000, 13);
    sheet.record("attention constraint", worst <= 1e-9 && open, format!("max |Σα-1| = {worst:.1e}, all weights in (0,1): {open}"));
}

fn kd_tree(sheet: &mut Sheet) {
    let mut rng = stream_u64(5, 5);
    let points: Vec<Vec<f64>> = (0..10_000).map(|_| (0..128).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let idx = EmbeddingIndex::new((0..points.len()).map(|i| i.to_string()).collect(), points.clone()).unwrap();
    let mut same = 0;
    for _ in 0..100 {
        let q: Vec<f64> = (0..128).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut all: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| (q.iter().zip(p).fold(0.0, |acc, (a, b)| acc + (a - b) * (a - b)), i))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let want: Vec<(usize, f64)> = all[..10].iter().map(|&(d, i)| (i, d.sqrt())).collect();
        let got: Vec<(usize, f64)> = idx.knn(&q, 10).unwrap().into_iter().map(|n| (n.index, n.distance)).collect();
        same += usize::from(got == want);
    }
    sheet.record("KD-tree exactness", same == 100, format!("{same}/100 queries identical to a linear scan"));
}

fn metrics(sheet: &mut Sheet) {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    let mut ok = Vec::new();
    ok.push(close(average_precision(&[false, true, false, false]), 0.5));
    ok.push(close(average_precision(&[true, false, false]), 1.0));
    ok.push(close(average_precision(&[true, false, true, false, true]), (1.0 + 2.0 / 3.0 + 3.0 / 5.0) / 3.0));
    ok.push(close(average_precision(&[false, false]), 0.0));
    ok.push(close(mean_average_precision(&[1.0, 0.5, 0.0]), 0.5));
    let r = EvalReport::from_counts(3, 1, 2, vec![]);
    ok.push(close(r.precision, 0.75) && close(r.recall, 0.6) && close(r.f1, 2.0 * 0.75 * 0.6 / 1.35));
    let z = EvalReport::from_counts(0, 4, 0, vec![]);
    ok.push(z.f1 == 0.0);
    // Rank-2 case through the search operation.
    let pool = EmbeddingSet::new(vec!["x".into(), "y".into(), "z".into()], vec![vec![0.0], vec![1.0], vec![5.0]]);
    let queries = EmbeddingSet::new(vec!["q".into()], vec![vec![0.1]]);
    let s = search(&pool, &queries, 3, |_, c| c == "y").unwrap();
    ok.push(close(s.report.map, 0.5) && (s.report.tp, s.report.fp, s.report.fn_) == (1, 2, 0));
    let passed = ok.iter().filter(|&&b| b).count();
    sheet.record("metric formulas", passed == ok.len(), format!("{passed}/{} hand-derived cases to 1e-12", ok.len()));
}

fn e2e_config(level: NormLevel) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.embed.level = level;
    cfg
}

fn end_to_end(sheet: &mut Sheet) -> Vocabulary<f64> {
    let corpus = gen_corpus(&CorpusConfig { groups: 200, variants: 4, ..CorpusConfig::default() });
    let (n3, t3) = timed(|| run_corpus(&corpus, &e2e_config(NormLevel::N3)).unwrap());
    let (n0, t0) = timed(|| run_corpus(&corpus, &e2e_config(NormLevel::N0)).unwrap());
    let epochs = n3.history.epochs.len();
    let (map, f1) = (n3.search.report.map, n3.diff.report.f1);
    let pass = map >= 0.9 && f1 >= 0.9 && epochs <= 200 && t3 < Duration::from_secs(1800);
    sheet.record(
        "end-to-end synthetic corpus",
        pass,
        format!("G=200 V=4, {epochs} epochs: search MAP {map:.3}, top-10 diff F1 {f1:.3}, {:.1}s", t3.as_secs_f64()),
    );
    let f0 = n0.diff.report.f1;
    sheet.record("normalization level ordering", f1 >= f0, format!("F1(N3) = {f1:.3}, F1(N0) = {f0:.3} ({:.1}s)", t0.as_secs_f64()));

    let again = run_corpus(&corpus, &e2e_config(NormLevel::N3)).unwrap();
    let files = |r: &RunOutput| [r.vocab.to_text(), r.model.to_text(), r.search.report.to_json(), r.diff.report.to_json()];
    let same = files(&n3) == files(&again);
    sheet.record("determinism", same, format!("vocabulary, model and report files {} across two runs", if same { "identical" } else { "differ" }));
    n3.vocab
}

fn scaling(sheet: &mut Sheet) {
    let corpus = gen_corpus(&CorpusConfig { groups: 25, variants: 4, ..CorpusConfig::default() });
    let vocab = random_vocabulary(128, 1).unwrap();
    let rows = bench(&[corpus.program], &vocab, &EmbedConfig::default(), &[1, 4], 10).unwrap();
    let s = speedup(&rows, 1, 4).unwrap();
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    sheet.record("parallel scaling", s >= 1.5, format!("speedup at 4 workers vs 1 on 100 functions = {s:.2}x ({cores} cores available)"));
}

fn analogies(sheet: &mut Sheet, trained: &Vocabulary<f64>) {
    // Integer lattice: b - a + c lands exactly on an entity.
    let side = 8;
    let names: Vec<String> = (0..side * side).map(|i| format!("p{}_{}", i / side, i % side)).collect();
    let mut exact = Vocabulary::<f64>::new(2, names.clone(), vec![]).unwrap();
    for i in 0..side * side {
        exact.set_entity(&names[i], &[(i / side) as f64, (i % side) as f64]).unwrap();
    }
    let mut rng = stream_u64(6, 6);
    let mut queries = Vec::new();
    while queries.len() < 200 {
        let p = |rng: &mut peepvec::rng::StageRng| (rng.random_range(0..side as i64), rng.random_range(0..side as i64));
        let (a, b, c) = (p(&mut rng), p(&mut rng), p(&mut rng));
        let d = (b.0 - a.0 + c.0, b.1 - a.1 + c.1);
        let pts = [a, b, c, d];
        let inside = (0..side as i64).contains(&d.0) && (0..side as i64).contains(&d.1);
        let distinct = (0..4).all(|i| (i + 1..4).all(|j| pts[i] != pts[j]));
        if inside && distinct {
            let n = |q: (i64, i64)| format!("p{}_{}", q.0, q.1);
            queries.push(AnalogyQuery { a: n(a), b: n(b), c: n(c), expected: n(d) });
        }
    }
    let (correct, _) = analogy_accuracy(&exact, &queries).unwrap();
    let file = parse_analogies(include_str!("../../../fixtures/analogies.txt")).unwrap();
    let trained_result = analogy_accuracy(trained, &file);
    let pass = correct == queries.len() && trained_result.is_ok();
    let detail = match trained_result {
        Ok((c, _)) => format!("exact vocabulary {correct}/{}; trained vocabulary {c}/{} = {:.3} (informational)", queries.len(), file.len(), c as f64 / file.len() as f64),
        Err(e) => format!("exact vocabulary {correct}/{}; trained vocabulary failed: {e}", queries.len()),
    };
    sheet.record("analogy engine", pass, detail);
}

#[test]
fn acceptance_criteria() {
    let mut sheet = Sheet { lines: Vec::new() };
    walk_bound(&mut sheet);
    observation_one(&mut sheet);
    normalization(&mut sheet);
    linearity(&mut sheet);
    transe(&mut sheet);
    gradients(&mut sheet);
    attention(&mut sheet);
    kd_tree(&mut sheet);
    metrics(&mut sheet);
    let vocab = end_to_end(&mut sheet);
    scaling(&mut sheet);
    analogies(&mut sheet, &vocab);
    let failed: Vec<&str> = sheet.lines.iter().filter(|(p, _)| !p).map(|(_, l)| l.as_str()).collect();
    assert!(failed.is_empty(), "{} of {} criteria failed:\n{}", failed.len(), sheet.lines.len(), failed.join("\n"));
}
