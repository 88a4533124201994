mod config;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use peepvec::canon::canonicalize_function;
use peepvec::embed::{embed_peepholes, format_embeddings, parse_embeddings, FunctionEmbedding};
use peepvec::error::{read_to_string, write_string};
use peepvec::ir::{fmt_statement, parse_program, quote, serialize_program, validate_program, Program};
use peepvec::peephole::{format_peep_lines, generate_peepholes};
use peepvec::pipeline::{bench, bench_csv, group_map, labels_for, prepare_program, pretrain, program_triplets, random_vocabulary, raw_vectors, speedup};
use peepvec::simtasks::{cdf_csv, diff, f1_cdf, rankings_csv, search, DiffMode, EmbeddingSet, EvalReport, GroundTruth};
use peepvec::synth::{format_groups, gen_corpus, parse_groups, CorpusConfig, VariationProfile};
use peepvec::vexine::{normalize_peephole, NormLevel};
use peepvec::vexnet::{train, VexNetModel};
use peepvec::vocab::{analogy_accuracy, answer_analogy, format_triplets, parse_analogies, parse_triplets, Triplet};
use peepvec::{Error, Result, Vocabulary};

use config::{parse_seed, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "peepvec", version, about = "Peephole-based function embeddings for binary diffing and searching")]
struct Cli {
    /// key=value settings file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for every randomized stage (default 0xC0FFEE, or $PEEPVEC_SEED).
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Override one setting; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Write the main output here instead of stdout.
    #[arg(long, short = 'o', global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Stage {
    /// Maximum peephole length in blocks.
    #[arg(long)]
    k: Option<usize>,
    /// Minimum visits per block.
    #[arg(long)]
    c: Option<usize>,
    /// Normalization level N0..N3.
    #[arg(long)]
    norm: Option<NormLevel>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse and check a .vexir file.
    Validate { input: PathBuf },
    /// Print the canonical form of a program.
    Canon { input: PathBuf },
    /// Print the peepholes of every function.
    Peep {
        input: PathBuf,
        #[command(flatten)]
        stage: Stage,
    },
    /// Print normalized peepholes.
    Norm {
        input: PathBuf,
        #[command(flatten)]
        stage: Stage,
    },
    /// Extract knowledge-graph triplets.
    Triplets {
        /// .vexir files or directories of them.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        stage: Stage,
    },
    /// Train the entity vocabulary on triplet files.
    Pretrain {
        #[arg(required = true)]
        triplets: Vec<PathBuf>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Per-epoch loss CSV.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Compute initial function embeddings.
    Embed {
        /// .vexir files or directories of them.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[command(flatten)]
        stage: Stage,
    },
    /// Fine-tune the attention network on labelled embeddings.
    Train {
        #[arg(required = true)]
        embeddings: Vec<PathBuf>,
        /// `name<TAB>group` ground truth.
        #[arg(long)]
        groups: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Per-epoch `epoch,loss,lr` CSV.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Match source functions against target functions.
    Diff {
        source: PathBuf,
        target: PathBuf,
        #[arg(long)]
        groups: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        neighbors: Option<usize>,
        #[arg(long, default_value = "topk")]
        mode: DiffMode,
        /// Ranked neighbours CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// One-to-one matches TSV (matching mode).
        #[arg(long)]
        matches: Option<PathBuf>,
    },
    /// Retrieve pool functions for each query.
    Search {
        pool: PathBuf,
        queries: PathBuf,
        #[arg(long)]
        groups: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        neighbors: Option<usize>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// F1 CDF of report files.
    Eval {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
    /// Generate a labelled synthetic corpus.
    Synth {
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
        #[arg(long = "num-groups", default_value_t = 200)]
        num_groups: usize,
        #[arg(long, default_value_t = 4)]
        variants: usize,
        #[arg(long = "min-size", default_value_t = 20)]
        min_size: usize,
        #[arg(long = "max-size", default_value_t = 200)]
        max_size: usize,
        /// full, rename or identity.
        #[arg(long, default_value = "full")]
        profile: String,
        /// Write one .vexir file per group instead of one corpus file.
        #[arg(long)]
        split: bool,
    },
    /// Answer analogy queries against a vocabulary.
    Analogy {
        queries: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    /// Time peephole generation and embedding at several worker counts.
    Bench {
        /// .vexir files or directories of them.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
        workers: Vec<usize>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Functions per timing row.
        #[arg(long, default_value_t = 10)]
        chunk: usize,
        #[command(flatten)]
        stage: Stage,
    },
}

struct Ctx {
    cfg: RunConfig,
    out: Option<PathBuf>,
}

impl Ctx {
    fn emit(&self, text: &str) -> Result<()> {
        match &self.out {
            Some(p) => write_string(p, text),
            None => {
                let mut stdout = std::io::stdout().lock();
                stdout
                    .write_all(text.as_bytes())
                    .and_then(|_| stdout.flush())
                    .map_err(|e| Error::Io { path: "<stdout>".into(), source: e })
            }
        }
    }

    fn stage(&mut self, s: &Stage) {
        if let Some(k) = s.k {
            self.cfg.k = k;
        }
        if let Some(c) = s.c {
            self.cfg.c = c;
        }
        if let Some(n) = s.norm {
            self.cfg.norm = n;
        }
    }

    fn vocab(&self, flag: &Option<PathBuf>) -> Result<Vocabulary> {
        let path = flag.as_ref().or(self.cfg.vocab.as_ref()).ok_or_else(|| Error::Argument("--vocab is required".into()))?;
        Vocabulary::load(path)
    }

    fn model(&self, flag: &Option<PathBuf>) -> Result<Option<VexNetModel<f64>>> {
        flag.as_ref().or(self.cfg.model.as_ref()).map(VexNetModel::load).transpose()
    }

    fn groups(&self, flag: &Option<PathBuf>) -> Result<Option<HashMap<String, usize>>> {
        match flag.as_ref().or(self.cfg.groups.as_ref()) {
            Some(p) => Ok(Some(group_map(&parse_groups(&read_to_string(p)?)?))),
            None => Ok(None),
        }
    }
}

fn load_program(path: &Path) -> Result<Program> {
    let program = parse_program(&read_to_string(path)?)?;
    let diags = validate_program(&program);
    if let Some((f, d)) = diags.first() {
        return Err(Error::Invalid(format!("{}: function {}: {d} ({} diagnostics)", path.display(), quote(f), diags.len())));
    }
    Ok(program)
}

fn load_embeddings(paths: &[PathBuf]) -> Result<Vec<FunctionEmbedding<f64>>> {
    let mut all = Vec::new();
    for p in paths {
        all.extend(parse_embeddings::<f64>(&read_to_string(p)?)?);
    }
    Ok(all)
}

fn vexir_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let entries = std::fs::read_dir(p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
            let mut found: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "vexir"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        return Err(Error::Empty("no .vexir inputs"));
    }
    Ok(files)
}

/// Output vectors of `embs`: the model's if given, else the raw channels.
fn vectors(model: &Option<VexNetModel<f64>>, embs: Vec<FunctionEmbedding<f64>>) -> Result<EmbeddingSet<f64>> {
    let v = match model {
        Some(m) => m.embed_all(&embs)?,
        None => raw_vectors(&embs),
    };
    Ok(EmbeddingSet::new(embs.into_iter().map(|e| e.name).collect(), v))
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::default();
    cfg.apply_env()?;
    if let Some(p) = &cli.config {
        cfg.apply_file(&read_to_string(p)?)?;
    }
    for pair in &cli.set {
        cfg.apply_pair(pair)?;
    }
    if let Some(s) = &cli.seed {
        cfg.seed = parse_seed(s)?;
    }
    if cfg.workers > 0 {
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build_global();
    }
    let mut ctx = Ctx { cfg, out: cli.out };

    match cli.command {
        Command::Validate { input } => {
            let program = parse_program(&read_to_string(&input)?)?;
            let diags = validate_program(&program);
            if !diags.is_empty() {
                for (f, d) in &diags {
                    eprintln!("{}: function {}: {d}", input.display(), quote(f));
                }
                return Err(Error::Invalid(format!("{} diagnostics", diags.len())));
            }
            ctx.emit(&format!("ok: {} functions\n", program.functions.len()))
        }
        Command::Canon { input } => {
            let mut program = load_program(&input)?;
            program.functions = program.functions.par_iter().map(canonicalize_function).collect();
            ctx.emit(&serialize_program(&program))
        }
        Command::Peep { input, stage } => {
            ctx.stage(&stage);
            let pcfg = ctx.cfg.peephole();
            pcfg.validate()?;
            let program = load_program(&input)?;
            let parts: Vec<String> = program
                .functions
                .par_iter()
                .map(|f| format_peep_lines(&f.name, &generate_peepholes(&canonicalize_function(f), &pcfg)))
                .collect();
            ctx.emit(&parts.concat())
        }
        Command::Norm { input, stage } => {
            ctx.stage(&stage);
            let pcfg = ctx.cfg.peephole();
            pcfg.validate()?;
            let level = ctx.cfg.norm;
            let program = load_program(&input)?;
            let parts: Vec<String> = program
                .functions
                .par_iter()
                .map(|f| {
                    let set = generate_peepholes(&canonicalize_function(f), &pcfg);
                    let mut out = String::new();
                    for p in &set.peepholes {
                        let n = normalize_peephole(p, level);
                        let ids: Vec<String> = n.block_ids.iter().map(|b| b.to_string()).collect();
                        let _ = writeln!(out, "peep {} {}", quote(&f.name), ids.join(" "));
                        for s in &n.statements {
                            let _ = writeln!(out, "  {}", fmt_statement(s));
                        }
                    }
                    out
                })
                .collect();
            ctx.emit(&parts.concat())
        }
        Command::Triplets { inputs, stage } => {
            ctx.stage(&stage);
            ctx.cfg.peephole().validate()?;
            let ecfg = ctx.cfg.embed();
            let per_file: Vec<Vec<Triplet>> = vexir_files(&inputs)?
                .par_iter()
                .map(|p| Ok(program_triplets(&prepare_program(&load_program(p)?, &ecfg))))
                .collect::<Result<_>>()?;
            ctx.emit(&format_triplets(&per_file.concat()))
        }
        Command::Pretrain { triplets, dim, epochs, history } => {
            if let Some(d) = dim {
                ctx.cfg.dim = d;
            }
            if let Some(e) = epochs {
                ctx.cfg.transe_epochs = e;
            }
            let mut all = Vec::new();
            for p in &triplets {
                all.extend(parse_triplets(&read_to_string(p)?)?);
            }
            let (vocab, report) = pretrain::<f64>(&all, &ctx.cfg.transe())?;
            if let Some(h) = history {
                let mut csv = String::from("epoch,loss,fixed_loss\n");
                for (i, (l, f)) in report.epoch_losses.iter().zip(&report.fixed_losses).enumerate() {
                    let _ = writeln!(csv, "{i},{l},{f}");
                }
                write_string(h, &csv)?;
            }
            ctx.emit(&vocab.to_text())
        }
        Command::Embed { inputs, vocab, stage } => {
            ctx.stage(&stage);
            ctx.cfg.peephole().validate()?;
            let vocab = ctx.vocab(&vocab)?;
            let ecfg = ctx.cfg.embed();
            let per_file: Vec<Vec<FunctionEmbedding<f64>>> = vexir_files(&inputs)?
                .par_iter()
                .map(|p| {
                    let program = load_program(p)?;
                    embed_peepholes(&program, &prepare_program(&program, &ecfg), &vocab)
                })
                .collect::<Result<_>>()?;
            ctx.emit(&format_embeddings(&per_file.concat()))
        }
        Command::Train { embeddings, groups, epochs, history } => {
            if let Some(e) = epochs {
                ctx.cfg.epochs = e;
            }
            let embs = load_embeddings(&embeddings)?;
            let groups = ctx.groups(&groups)?.ok_or_else(|| Error::Argument("--groups is required".into()))?;
            let labels = labels_for(&embs, &groups)?;
            let dim = embs.first().ok_or(Error::Empty("embedding files"))?.dim();
            let mut model = VexNetModel::<f64>::new(ctx.cfg.vexnet(dim))?;
            let hist = train(&mut model, &embs, &labels)?;
            if hist.collapse_warning {
                eprintln!(
                    "warning: embedding collapse (distinct-group spread {:.4} -> {:.4})",
                    hist.initial_spread, hist.final_spread
                );
            }
            if let Some(h) = history {
                write_string(h, &hist.to_csv())?;
            }
            ctx.emit(&model.to_text())
        }
        Command::Diff { source, target, groups, model, neighbors, mode, csv, matches } => {
            let k = neighbors.unwrap_or(ctx.cfg.neighbors);
            let model = ctx.model(&model)?;
            let src = vectors(&model, load_embeddings(&[source])?)?;
            let tgt = vectors(&model, load_embeddings(&[target])?)?;
            let truth = match ctx.groups(&groups)? {
                Some(g) => GroundTruth::from_groups(&src.ids, &tgt.ids, &g)?,
                None => GroundTruth::default(),
            };
            let result = diff(&src, &tgt, &truth, k, mode)?;
            if let Some(p) = csv {
                write_string(p, &rankings_csv(&result.rankings))?;
            }
            if let Some(p) = matches {
                let mut tsv = String::new();
                for (s, t, d) in &result.matches {
                    let _ = writeln!(tsv, "{s}\t{t}\t{d}");
                }
                write_string(p, &tsv)?;
            }
            ctx.emit(&result.report.to_json())
        }
        Command::Search { pool, queries, groups, model, neighbors, csv } => {
            let k = neighbors.unwrap_or(ctx.cfg.neighbors);
            let model = ctx.model(&model)?;
            let pool = vectors(&model, load_embeddings(&[pool])?)?;
            let queries = vectors(&model, load_embeddings(&[queries])?)?;
            let groups = ctx.groups(&groups)?.unwrap_or_default();
            let result = search(&pool, &queries, k, |q, c| groups.get(q).is_some() && groups.get(q) == groups.get(c))?;
            if let Some(p) = csv {
                write_string(p, &rankings_csv(&result.rankings))?;
            }
            ctx.emit(&result.report.to_json())
        }
        Command::Eval { reports } => {
            let reports: Vec<EvalReport> =
                reports.iter().map(|p| EvalReport::from_json(&read_to_string(p)?)).collect::<Result<_>>()?;
            ctx.emit(&cdf_csv(&f1_cdf(&reports)))
        }
        Command::Synth { out_dir, num_groups, variants, min_size, max_size, profile, split } => {
            let profile = match profile.as_str() {
                "full" => VariationProfile::full(),
                "rename" => VariationProfile::rename_only(),
                "identity" => VariationProfile::identity(),
                _ => return Err(Error::Argument(format!("unknown profile `{profile}` (full|rename|identity)"))),
            };
            if num_groups == 0 || variants == 0 || min_size == 0 || min_size > max_size {
                return Err(Error::Argument("need groups, variants >= 1 and 1 <= min-size <= max-size".into()));
            }
            let corpus = gen_corpus(&CorpusConfig { groups: num_groups, variants, min_size, max_size, seed: ctx.cfg.seed, profile });
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::Io { path: out_dir.clone(), source: e })?;
            if split {
                for (g, fs) in corpus.program.functions.chunks(variants).enumerate() {
                    let p = Program { name: format!("g{g:04}"), functions: fs.to_vec() };
                    write_string(out_dir.join(format!("g{g:04}.vexir")), &serialize_program(&p))?;
                }
            } else {
                write_string(out_dir.join("corpus.vexir"), &serialize_program(&corpus.program))?;
            }
            write_string(out_dir.join("groups.tsv"), &format_groups(&corpus.groups))?;
            ctx.emit(&format!("ok: {} functions in {} groups\n", corpus.program.functions.len(), num_groups))
        }
        Command::Analogy { queries, vocab } => {
            let vocab = ctx.vocab(&vocab)?;
            let qs = parse_analogies(&read_to_string(&queries)?)?;
            if qs.is_empty() {
                return Err(Error::Empty("analogy file"));
            }
            let mut out = String::new();
            for q in &qs {
                let got = answer_analogy(&vocab, &q.a, &q.b, &q.c)?;
                let mark = if got == q.expected { "ok" } else { "miss" };
                let _ = writeln!(out, "{} {} {} -> {got} (expected {}) {mark}", q.a, q.b, q.c, q.expected);
            }
            let (correct, _) = analogy_accuracy(&vocab, &qs)?;
            let _ = writeln!(out, "accuracy: {correct}/{} = {:.4}", qs.len(), correct as f64 / qs.len() as f64);
            ctx.emit(&out)
        }
        Command::Bench { inputs, workers, vocab, chunk, stage } => {
            ctx.stage(&stage);
            ctx.cfg.peephole().validate()?;
            if workers.is_empty() || workers.contains(&0) {
                return Err(Error::Argument("--workers needs positive counts".into()));
            }
            let programs: Vec<Program> = vexir_files(&inputs)?.iter().map(|p| load_program(p)).collect::<Result<_>>()?;
            let vocab = match vocab.as_ref().or(ctx.cfg.vocab.as_ref()) {
                Some(p) => Vocabulary::load(p)?,
                None => random_vocabulary(ctx.cfg.dim, ctx.cfg.seed)?,
            };
            let rows = bench(&programs, &vocab, &ctx.cfg.embed(), &workers, chunk)?;
            let base = workers[0];
            for &w in &workers[1..] {
                if let Some(s) = speedup(&rows, base, w) {
                    eprintln!("speedup {w} vs {base} workers: {s:.2}x");
                }
            }
            ctx.emit(&bench_csv(&rows))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Argument(_) => 1,
        Error::Internal(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("peepvec: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
