use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn scratch(name: &str) -> PathBuf {
    let d = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn peepvec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_peepvec")).args(args).env_remove("PEEPVEC_SEED").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = peepvec(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    peepvec(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_fixture() {
    assert_eq!(ok(&["validate", s(&fixture("a.vexir"))]), "ok: 3 functions\n");
    assert_eq!(ok(&["validate", s(&fixture("loop.vexir"))]).trim_end().split(' ').next(), Some("ok:"));
}

#[test]
fn exit_codes() {
    let dir = scratch("exit_codes");
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["peep"]), 1);
    assert_eq!(code(&["validate", s(&dir.join("missing.vexir"))]), 2);
    let bad = dir.join("bad.vexir");
    std::fs::write(&bad, "function \"f\" {\n  block 0 ->\n    t0:I64 = Frob(\n}\n").unwrap();
    assert_eq!(code(&["validate", s(&bad)]), 2);
    assert_eq!(code(&["--set", "nope=1", "validate", s(&fixture("a.vexir"))]), 1);
    assert_eq!(code(&["--seed", "pear", "validate", s(&fixture("a.vexir"))]), 1);
    assert_eq!(code(&["peep", "--k", "0", s(&fixture("a.vexir"))]), 1);
    let cfg = dir.join("bad.cfg");
    std::fs::write(&cfg, "k = 6\nunknown_key = 3\n").unwrap();
    assert_eq!(code(&["--config", s(&cfg), "validate", s(&fixture("a.vexir"))]), 1);
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn seeded_peepholes_repeat() {
    let f = fixture("a.vexir");
    let args = ["peep", "--k", "6", "--c", "2", "--seed", "1", s(&f)];
    let a = ok(&args);
    assert!(!a.is_empty());
    assert_eq!(a, ok(&args));

    // The environment seed is the weakest source; flags override files.
    let dir = scratch("seeded");
    let cfg = dir.join("run.cfg");
    std::fs::write(&cfg, "seed = 1\nk = 6\nc = 2\n").unwrap();
    assert_eq!(ok(&["--config", s(&cfg), "peep", s(&f)]), a);
    let env = Command::new(env!("CARGO_BIN_EXE_peepvec")).args(["peep", "--k", "6", "--c", "2", s(&f)]).env("PEEPVEC_SEED", "1").output().unwrap();
    assert_eq!(String::from_utf8(env.stdout).unwrap(), a);
    let env = Command::new(env!("CARGO_BIN_EXE_peepvec")).args(["--config", s(&cfg), "peep", s(&f)]).env("PEEPVEC_SEED", "99").output().unwrap();
    assert_eq!(String::from_utf8(env.stdout).unwrap(), a);
    assert_eq!(ok(&["--config", s(&cfg), "--set", "k=72", "peep", "--k", "6", s(&f)]), a);
}

fn split_embeddings(all: &str, dir: &Path) -> (PathBuf, PathBuf) {
    let mut lines = all.lines();
    let header = lines.next().unwrap();
    let (mut src, mut tgt) = (format!("{header}\n"), format!("{header}\n"));
    for l in lines {
        let name = l.split(' ').nth(1).unwrap();
        let side = if name.ends_with("_v0") {
            &mut src
        } else if name.ends_with("_v1") {
            &mut tgt
        } else {
            continue;
        };
        side.push_str(l);
        side.push('\n');
    }
    let (a, b) = (dir.join("src.femb"), dir.join("tgt.femb"));
    std::fs::write(&a, src).unwrap();
    std::fs::write(&b, tgt).unwrap();
    (a, b)
}

/// synth -> triplets -> pretrain -> embed -> train -> diff/search -> eval.
fn chain(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let p = |n: &str| dir.join(n);
    ok(&["--seed", "7", "synth", "--out-dir", s(dir), "--num-groups", "6", "--variants", "3", "--min-size", "15", "--max-size", "40"]);
    let corpus = p("corpus.vexir");
    assert_eq!(ok(&["validate", s(&corpus)]), "ok: 18 functions\n");
    ok(&["-o", s(&p("t.triplets")), "triplets", "--k", "8", s(&corpus)]);
    ok(&["-o", s(&p("v.vocab")), "--seed", "7", "pretrain", "--dim", "12", "--epochs", "5", "--history", s(&p("pretrain.csv")), s(&p("t.triplets"))]);
    ok(&["-o", s(&p("all.femb")), "embed", "--k", "8", "--vocab", s(&p("v.vocab")), s(&corpus)]);
    let groups = p("groups.tsv");
    ok(&["-o", s(&p("m.model")), "--seed", "7", "--set", "batch_size=6", "train", "--epochs", "3", "--groups", s(&groups), "--history", s(&p("train.csv")), s(&p("all.femb"))]);
    let (src, tgt) = split_embeddings(&std::fs::read_to_string(p("all.femb")).unwrap(), dir);
    let diff = ok(&["diff", "--groups", s(&groups), "--model", s(&p("m.model")), "--neighbors", "3", "--mode", "matching", "--csv", s(&p("diff.csv")), "--matches", s(&p("matches.tsv")), s(&src), s(&tgt)]);
    std::fs::write(p("diff.json"), &diff).unwrap();
    let search = ok(&["search", "--groups", s(&groups), "--neighbors", "4", s(&tgt), s(&src)]);
    std::fs::write(p("search.json"), &search).unwrap();
    ok(&["-o", s(&p("cdf.csv")), "eval", s(&p("diff.json")), s(&p("search.json"))]);
    ["t.triplets", "v.vocab", "pretrain.csv", "all.femb", "m.model", "diff.json", "diff.csv", "matches.tsv", "search.json", "cdf.csv", "corpus.vexir", "groups.tsv"]
        .iter()
        .map(|n| (n.to_string(), std::fs::read(p(n)).unwrap()))
        .collect()
}

#[test]
fn pipeline_chain_is_reproducible() {
    let a = chain(&scratch("chain_a"));
    let b = chain(&scratch("chain_b"));
    for ((name, x), (_, y)) in a.iter().zip(&b) {
        assert!(x == y, "{name} differs between runs");
        assert!(!x.is_empty(), "{name} is empty");
    }
    let get = |n: &str| String::from_utf8(a.iter().find(|(k, _)| k == n).unwrap().1.clone()).unwrap();
    let diff = get("diff.json");
    for key in ["\"tp\"", "\"fp\"", "\"fn\"", "\"precision\"", "\"recall\"", "\"f1\"", "\"map\""] {
        assert!(diff.contains(key), "{diff}");
    }
    assert_eq!(get("matches.tsv").lines().count(), 6);
    assert_eq!(get("diff.csv").lines().count(), 1 + 6 * 3);
    assert_eq!(get("cdf.csv").lines().count(), 3);
    assert_eq!(get("groups.tsv").lines().count(), 18);
}

#[test]
fn bench_and_analogy() {
    let dir = scratch("bench");
    ok(&["synth", "--out-dir", s(&dir), "--num-groups", "4", "--variants", "2", "--min-size", "10", "--max-size", "20", "--split"]);
    assert!(dir.join("g0003.vexir").exists());
    let csv = ok(&["bench", "--workers", "1,2", "--chunk", "4", s(&dir)]);
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "workers,functions,cumulative_seconds");
    assert_eq!(rows.len(), 1 + 2 * 4);
    assert_eq!(code(&["bench", "--workers", "0", s(&dir)]), 1);

    let t = ok(&["triplets", s(&dir.join("g0000.vexir")), s(&dir.join("g0001.vexir")), s(&dir.join("g0002.vexir")), s(&dir.join("g0003.vexir"))]);
    ok(&["-o", s(&dir.join("t.triplets")), "triplets", s(&dir)]);
    assert_eq!(std::fs::read_to_string(dir.join("t.triplets")).unwrap(), t);
    ok(&["-o", s(&dir.join("v.vocab")), "pretrain", "--dim", "8", "--epochs", "3", s(&dir.join("t.triplets"))]);
    let report = ok(&["analogy", "--vocab", s(&dir.join("v.vocab")), s(&fixture("analogies.txt"))]);
    assert!(report.lines().last().unwrap().starts_with("accuracy: "), "{report}");
}
