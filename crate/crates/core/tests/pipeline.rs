use peepvec::embed::EmbedConfig;
use peepvec::pipeline::{bench, bench_csv, holdout_split, random_vocabulary, run_corpus, speedup, variant_of, PipelineConfig};
use peepvec::synth::{gen_corpus, CorpusConfig};
use peepvec::vexnet::VexNetConfig;
use peepvec::vocab::TransEConfig;

fn small() -> (peepvec::synth::Corpus, PipelineConfig) {
    let corpus = gen_corpus(&CorpusConfig { groups: 10, variants: 4, min_size: 15, max_size: 50, seed: 9, ..CorpusConfig::default() });
    let cfg = PipelineConfig {
        transe: TransEConfig { dim: 16, epochs: 10, ..TransEConfig::default() },
        vexnet: VexNetConfig { epochs: 5, batch_size: 8, ..VexNetConfig::default() },
        k: 5,
        ..PipelineConfig::default()
    };
    (corpus, cfg)
}

#[test]
fn two_runs_agree_exactly() {
    let (corpus, cfg) = small();
    let a = run_corpus(&corpus, &cfg).unwrap();
    let b = run_corpus(&corpus, &cfg).unwrap();
    assert_eq!(a.vocab, b.vocab);
    assert_eq!(a.model.to_text(), b.model.to_text());
    assert_eq!(a.search.report.to_json(), b.search.report.to_json());
    assert_eq!(a.diff.report.to_json(), b.diff.report.to_json());
    assert_eq!(a.embeddings.len(), 40);
    assert_eq!(a.search.rankings.len(), 10);
    assert_eq!(a.diff.rankings.len(), 10);
    assert!(a.search.rankings.iter().all(|r| r.query.ends_with("_v3") && r.hits.len() == 5));
    assert!(a.search.rankings.iter().flat_map(|r| &r.hits).all(|h| !h.candidate.ends_with("_v3")));
}

#[test]
fn holdout_protocol() {
    let names: Vec<String> = ["g0000_v0", "g0000_v1", "g0001_v0", "g0001_v1"].iter().map(|s| s.to_string()).collect();
    let s = holdout_split(&names, 1).unwrap();
    assert_eq!((s.train.clone(), s.queries.clone(), s.pool.clone(), s.source.clone()), (vec![0, 2], vec![1, 3], vec![0, 2], vec![0, 2]));
    assert!(holdout_split(&names, 5).is_err());
    assert!(holdout_split(&["main".to_string()], 0).is_err());
    assert_eq!(variant_of("g0012_v3"), Some(3));
    assert_eq!(variant_of("plain"), None);
}

#[test]
fn bench_rows_accumulate() {
    let corpus = gen_corpus(&CorpusConfig { groups: 6, variants: 2, min_size: 20, max_size: 40, ..CorpusConfig::default() });
    let vocab = random_vocabulary(8, 1).unwrap();
    let rows = bench(&[corpus.program.clone(), corpus.program], &vocab, &EmbedConfig::default(), &[1, 2], 5).unwrap();
    // 12 functions per program in chunks of 5: 3 rows per program.
    assert_eq!(rows.len(), 12);
    for w in [1, 2] {
        let mine: Vec<_> = rows.iter().filter(|r| r.workers == w).collect();
        assert_eq!(mine.iter().map(|r| r.functions).collect::<Vec<_>>(), vec![5, 10, 12, 17, 22, 24]);
        assert!(mine.windows(2).all(|p| p[0].cumulative_seconds <= p[1].cumulative_seconds));
    }
    assert!(speedup(&rows, 1, 2).unwrap() > 0.0);
    assert!(speedup(&rows, 1, 4).is_none());
    assert_eq!(bench_csv(&rows).lines().next(), Some("workers,functions,cumulative_seconds"));
}
