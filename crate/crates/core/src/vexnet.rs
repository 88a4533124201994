//! The entity-attention network and its siamese training loop.
//!
//! Each of the five inputs `O, T, A, S, L` is L2-normalized and projected
//! to a context vector `C_i = SiLU(BN(W_i x_i + b_i))`. Attention weights
//! are `α = softmax(C_i · u)` over the channels present, `F' = Σ α_i C_i`,
//! and the output is `F = W_out F' + b_out`.

use std::collections::BTreeMap;
use std::fmt::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::embed::{FunctionEmbedding, TEXT_DIM};
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::rng::{combine, stream, stream_u64, DEFAULT_SEED};
use crate::scalar::{fmt_exact, parse_scalar, Scalar};
use crate::tensor::{Tape, Tensor, Var};

pub const CHANNELS: usize = 5;
pub const CHANNEL_NAMES: [&str; CHANNELS] = ["O", "T", "A", "S", "L"];
/// Channels masked out of the attention when their input is zero.
pub const OPTIONAL_CHANNELS: [usize; 2] = [3, 4];

pub const MODEL_MAGIC: &str = "peepvec-model";
pub const MODEL_VERSION: &str = "v1";

#[derive(Clone, Debug, PartialEq)]
pub struct VexNetConfig {
    pub in_dims: [usize; CHANNELS],
    pub context_dim: usize,
    pub out_dim: usize,
    pub dropout: f64,
    pub temperature: f64,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate multiplier applied after every epoch.
    pub lr_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for VexNetConfig {
    fn default() -> Self {
        VexNetConfig {
            in_dims: [128, 128, 128, TEXT_DIM, TEXT_DIM],
            context_dim: 180,
            out_dim: 128,
            dropout: 0.02,
            temperature: 0.05,
            batch_size: 256,
            lr: 0.001,
            lr_decay: 0.817,
            epochs: 50,
            seed: DEFAULT_SEED,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl VexNetConfig {
    /// Defaults with the O/T/A input width set to `dim`.
    pub fn for_vocab_dim(dim: usize) -> Self {
        VexNetConfig { in_dims: [dim, dim, dim, TEXT_DIM, TEXT_DIM], ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Argument("temperature must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Argument("dropout must lie in [0, 1)".into()));
        }
        if !(self.lr > 0.0) || !(self.lr_decay > 0.0) {
            return Err(Error::Argument("lr and lr decay must be > 0".into()));
        }
        if self.context_dim == 0 || self.out_dim == 0 || self.batch_size == 0 || self.in_dims.contains(&0) {
            return Err(Error::Argument("dimensions and batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Parameter order: per channel `W_i, b_i, gamma_i, beta_i`, then `u`,
/// `W_out`, `b_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct VexNetModel<S> {
    pub config: VexNetConfig,
    names: Vec<String>,
    params: Vec<Tensor<S>>,
    /// Batch-norm running statistics per channel.
    pub running_mean: Vec<Vec<S>>,
    pub running_var: Vec<Vec<S>>,
}

fn param_names() -> Vec<String> {
    let mut n = Vec::new();
    for i in 0..CHANNELS {
        n.extend([format!("W{i}"), format!("b{i}"), format!("gamma{i}"), format!("beta{i}")]);
    }
    n.extend(["u".to_string(), "Wout".to_string(), "bout".to_string()]);
    n
}

const U: usize = 4 * CHANNELS;
const W_OUT: usize = U + 1;
const B_OUT: usize = U + 2;

/// How a forward pass treats dropout and batch norm.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Running statistics, no dropout. Pure.
    Eval,
    /// Batch statistics and dropout masks drawn from the seed.
    Train { seed: u64 },
}

/// Normalized inputs of a batch.
#[derive(Clone, Debug)]
pub struct BatchInput<S> {
    pub channels: Vec<Tensor<S>>,
    /// Row-major `rows × CHANNELS`; false for absent channels.
    pub mask: Vec<bool>,
}

impl<S: Scalar> BatchInput<S> {
    pub fn rows(&self) -> usize {
        self.channels[0].rows
    }
}

fn channel_of<S>(e: &FunctionEmbedding<S>, i: usize) -> &[S] {
    match i {
        0 => &e.o,
        1 => &e.t,
        2 => &e.a,
        3 => &e.s,
        _ => &e.l,
    }
}

/// Graph handles of one forward pass.
pub struct ForwardVars {
    pub output: Var,
    pub alpha: Var,
    pub params: Vec<Var>,
    /// Batch mean and variance per channel, in training mode.
    pub batch_stats: Vec<(Vec<f64>, Vec<f64>)>,
}

impl<S: Scalar> VexNetModel<S> {
    /// Fresh parameters: weights uniform in `±1/sqrt(fan_in)`, batch-norm
    /// scale 1 and shift 0.
    pub fn new(config: VexNetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(config.seed, "vexnet-init");
        let ctx = config.context_dim;
        let mut uniform = |rows: usize, cols: usize, fan_in: usize| {
            let b = 1.0 / (fan_in as f64).sqrt();
            Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| S::of(rng.random_range(-b..b))).collect())
        };
        let mut params = Vec::new();
        for &d in &config.in_dims {
            params.push(uniform(d, ctx, d));
            params.push(uniform(1, ctx, d));
            params.push(Tensor::filled(1, ctx, S::one()));
            params.push(Tensor::zeros(1, ctx));
        }
        params.push(uniform(ctx, 1, ctx));
        params.push(uniform(ctx, config.out_dim, ctx));
        params.push(uniform(1, config.out_dim, ctx));
        Ok(VexNetModel {
            running_mean: vec![vec![S::zero(); ctx]; CHANNELS],
            running_var: vec![vec![S::one(); ctx]; CHANNELS],
            config,
            names: param_names(),
            params,
        })
    }

    pub fn params(&self) -> &[Tensor<S>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.data.iter().all(|x| x.is_finite()))
    }

    /// Stack and L2-normalize the inputs of a batch.
    pub fn batch_input(&self, batch: &[&FunctionEmbedding<S>]) -> Result<BatchInput<S>> {
        let rows = batch.len();
        let mut channels = Vec::with_capacity(CHANNELS);
        let mut mask = vec![true; rows * CHANNELS];
        for (i, &d) in self.config.in_dims.iter().enumerate() {
            let mut t = Tensor::zeros(rows, d);
            for (r, e) in batch.iter().enumerate() {
                let x = channel_of(e, i);
                if x.len() != d {
                    return Err(Error::Dimension { expected: d, got: x.len() });
                }
                let n = x.iter().map(|&v| v * v).sum::<S>().sqrt();
                if n > S::zero() {
                    for (c, &v) in x.iter().enumerate() {
                        *t.at_mut(r, c) = v / n;
                    }
                } else if OPTIONAL_CHANNELS.contains(&i) {
                    mask[r * CHANNELS + i] = false;
                }
            }
            channels.push(t);
        }
        Ok(BatchInput { channels, mask })
    }

    /// Record the network on `tape`.
    pub fn forward_tape(&self, tape: &mut Tape<S>, input: &BatchInput<S>, mode: Mode) -> ForwardVars {
        let rows = input.rows();
        let ctx = self.config.context_dim;
        let params: Vec<Var> = self.params.iter().map(|p| tape.leaf(p.clone())).collect();
        let eps = S::of(self.config.bn_eps);
        let keep = 1.0 - self.config.dropout;
        let mut contexts = Vec::with_capacity(CHANNELS);
        let mut logits = Vec::with_capacity(CHANNELS);
        let mut batch_stats = Vec::new();
        for i in 0..CHANNELS {
            let x = tape.leaf(input.channels[i].clone());
            let (w, b, g, be) = (params[4 * i], params[4 * i + 1], params[4 * i + 2], params[4 * i + 3]);
            let h = tape.matmul(x, w);
            let h = tape.add_row(h, b);
            let h = match mode {
                Mode::Eval => tape.batch_norm_fixed(h, g, be, &self.running_mean[i], &self.running_var[i], eps),
                Mode::Train { .. } => {
                    let (n, mean, var) = tape.batch_norm(h, g, be, eps);
                    batch_stats.push((
                        mean.iter().map(|x| x.to_f64_lossy()).collect(),
                        var.iter().map(|x| x.to_f64_lossy()).collect(),
                    ));
                    n
                }
            };
            let mut c = tape.silu(h);
            if let Mode::Train { seed } = mode {
                if self.config.dropout > 0.0 {
                    let mut rng = stream_u64(seed, i as u64);
                    let scale = S::of(1.0 / keep);
                    let m = (0..rows * ctx).map(|_| if rng.random_bool(keep) { scale } else { S::zero() }).collect();
                    c = tape.mul_const(c, Tensor::from_vec(rows, ctx, m));
                }
            }
            logits.push(tape.matmul(c, params[U]));
            contexts.push(c);
        }
        let logits = tape.concat_cols(&logits);
        let alpha = tape.masked_softmax(logits, input.mask.clone());
        let fp = tape.weighted_sum(&contexts, alpha);
        let out = tape.matmul(fp, params[W_OUT]);
        let output = tape.add_row(out, params[B_OUT]);
        ForwardVars { output, alpha, params, batch_stats }
    }

    /// Output embedding and attention weights of one function.
    pub fn forward(&self, e: &FunctionEmbedding<S>, mode: Mode) -> Result<(Vec<S>, Vec<S>)> {
        let input = self.batch_input(&[e])?;
        let mut tape = Tape::new();
        let v = self.forward_tape(&mut tape, &input, mode);
        Ok((tape.value(v.output).data.clone(), tape.value(v.alpha).data.clone()))
    }

    /// Evaluation-mode outputs for many functions, computed in parallel
    /// chunks. Each row depends only on its own input.
    pub fn embed_all(&self, embs: &[FunctionEmbedding<S>]) -> Result<Vec<Vec<S>>> {
        let chunks: Vec<Result<Vec<Vec<S>>>> = embs
            .par_chunks(64)
            .map(|chunk| {
                let refs: Vec<&FunctionEmbedding<S>> = chunk.iter().collect();
                let input = self.batch_input(&refs)?;
                let mut tape = Tape::new();
                let v = self.forward_tape(&mut tape, &input, Mode::Eval);
                let out = tape.value(v.output);
                Ok((0..out.rows).map(|r| out.row(r).to_vec()).collect())
            })
            .collect();
        let mut all = Vec::with_capacity(embs.len());
        for c in chunks {
            all.extend(c?);
        }
        Ok(all)
    }

    /// NT-Xent loss of a batch with fixed positives, and its gradient with
    /// respect to every parameter.
    pub fn loss_and_grads(
        &self,
        input: &BatchInput<S>,
        positives: &[Option<usize>],
        mode: Mode,
    ) -> (S, Vec<Tensor<S>>, Vec<(Vec<f64>, Vec<f64>)>) {
        let mut tape = Tape::new();
        let fv = self.forward_tape(&mut tape, input, mode);
        let z = tape.row_normalize(fv.output);
        let sim = tape.matmul_t(z, z);
        let loss = tape.nt_xent(sim, positives.to_vec(), S::of(self.config.temperature));
        let value = tape.value(loss).data[0];
        let grads = tape.backward(loss);
        let pg = fv
            .params
            .iter()
            .zip(&self.params)
            .map(|(&v, p)| grads[v].clone().unwrap_or_else(|| Tensor::zeros(p.rows, p.cols)))
            .collect();
        (value, pg, fv.batch_stats)
    }

    fn update_running(&mut self, stats: &[(Vec<f64>, Vec<f64>)], rows: usize) {
        let m = self.config.bn_momentum;
        let unbias = if rows > 1 { rows as f64 / (rows as f64 - 1.0) } else { 1.0 };
        for (i, (mean, var)) in stats.iter().enumerate() {
            for c in 0..mean.len() {
                let rm = &mut self.running_mean[i][c];
                *rm = S::of((1.0 - m) * rm.to_f64_lossy() + m * mean[c]);
                let rv = &mut self.running_var[i][c];
                *rv = S::of((1.0 - m) * rv.to_f64_lossy() + m * var[c] * unbias);
            }
        }
    }

    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut out = format!("{MODEL_MAGIC} {MODEL_VERSION}\n");
        let dims: Vec<String> = c.in_dims.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(out, "C in_dims {}", dims.join(" "));
        for (k, v) in config_scalars(c) {
            let _ = writeln!(out, "C {k} {v}");
        }
        let mut block = |tag: &str, name: &str, rows: usize, cols: usize, data: &[S]| {
            let _ = write!(out, "{tag} {name} {rows} {cols}");
            for x in data {
                out.push(' ');
                out.push_str(&fmt_exact(*x));
            }
            out.push('\n');
        };
        for (n, p) in self.names.iter().zip(&self.params) {
            block("P", n, p.rows, p.cols, &p.data);
        }
        for i in 0..CHANNELS {
            block("N", &format!("mean{i}"), 1, c.context_dim, &self.running_mean[i]);
            block("N", &format!("var{i}"), 1, c.context_dim, &self.running_var[i]);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let expected = format!("{MODEL_MAGIC} {MODEL_VERSION}");
        let mut lines = text.lines().enumerate();
        let header = lines.next().map(|(_, l)| l).unwrap_or("");
        if header.trim() != expected {
            return Err(Error::Version { expected, found: header.to_string() });
        }
        let mut cfg_map: BTreeMap<String, String> = BTreeMap::new();
        let mut blocks: BTreeMap<String, (usize, Tensor<S>)> = BTreeMap::new();
        for (i, line) in lines {
            let lineno = i + 1;
            if line.is_empty() {
                continue;
            }
            let mut f = line.split(' ');
            match f.next() {
                Some("C") => {
                    let k = f.next().ok_or_else(|| Error::malformed(lineno, "missing key"))?;
                    cfg_map.insert(k.to_string(), f.collect::<Vec<_>>().join(" "));
                }
                Some(tag @ ("P" | "N")) => {
                    let name = f.next().ok_or_else(|| Error::malformed(lineno, "missing name"))?;
                    let mut dim = || -> Result<usize> {
                        f.next().and_then(|x| x.parse().ok()).ok_or_else(|| Error::malformed(lineno, "bad shape"))
                    };
                    let (rows, cols) = (dim()?, dim()?);
                    let data: Vec<S> = f
                        .map(|x| parse_scalar(x).ok_or_else(|| Error::malformed(lineno, format!("bad number `{x}`"))))
                        .collect::<Result<_>>()?;
                    if data.len() != rows * cols {
                        return Err(Error::malformed(lineno, format!("expected {} values, found {}", rows * cols, data.len())));
                    }
                    blocks.insert(format!("{tag}:{name}"), (lineno, Tensor::from_vec(rows, cols, data)));
                }
                _ => return Err(Error::malformed(lineno, "unknown record")),
            }
        }
        let config = parse_config(&cfg_map)?;
        let mut model = VexNetModel::<S>::new(config)?;
        let mut take = |key: String, rows: usize, cols: usize| -> Result<Tensor<S>> {
            let (lineno, t) = blocks.remove(&key).ok_or_else(|| Error::malformed(0, format!("missing block `{key}`")))?;
            if (t.rows, t.cols) != (rows, cols) {
                return Err(Error::malformed(lineno, format!("block `{key}` has shape {}x{}, expected {rows}x{cols}", t.rows, t.cols)));
            }
            Ok(t)
        };
        let names = model.names.clone();
        for (n, p) in names.iter().zip(model.params.iter_mut()) {
            *p = take(format!("P:{n}"), p.rows, p.cols)?;
        }
        let ctx = model.config.context_dim;
        for i in 0..CHANNELS {
            model.running_mean[i] = take(format!("N:mean{i}"), 1, ctx)?.data;
            model.running_var[i] = take(format!("N:var{i}"), 1, ctx)?.data;
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::error::write_string(path, &self.to_text())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_text(&crate::error::read_to_string(path)?)
    }
}

fn config_scalars(c: &VexNetConfig) -> Vec<(&'static str, String)> {
    vec![
        ("context_dim", c.context_dim.to_string()),
        ("out_dim", c.out_dim.to_string()),
        ("dropout", format!("{:?}", c.dropout)),
        ("temperature", format!("{:?}", c.temperature)),
        ("batch_size", c.batch_size.to_string()),
        ("lr", format!("{:?}", c.lr)),
        ("lr_decay", format!("{:?}", c.lr_decay)),
        ("epochs", c.epochs.to_string()),
        ("seed", c.seed.to_string()),
        ("bn_momentum", format!("{:?}", c.bn_momentum)),
        ("bn_eps", format!("{:?}", c.bn_eps)),
    ]
}

fn parse_config(m: &BTreeMap<String, String>) -> Result<VexNetConfig> {
    fn get<T: std::str::FromStr>(m: &BTreeMap<String, String>, k: &str) -> Result<T> {
        m.get(k)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::malformed(0, format!("missing or bad config `{k}`")))
    }
    let dims: Vec<usize> = m
        .get("in_dims")
        .map(|v| v.split(' ').filter_map(|x| x.parse().ok()).collect())
        .unwrap_or_default();
    let in_dims: [usize; CHANNELS] =
        dims.try_into().map_err(|_| Error::malformed(0, "config `in_dims` needs 5 values"))?;
    Ok(VexNetConfig {
        in_dims,
        context_dim: get(m, "context_dim")?,
        out_dim: get(m, "out_dim")?,
        dropout: get(m, "dropout")?,
        temperature: get(m, "temperature")?,
        batch_size: get(m, "batch_size")?,
        lr: get(m, "lr")?,
        lr_decay: get(m, "lr_decay")?,
        epochs: get(m, "epochs")?,
        seed: get(m, "seed")?,
        bn_momentum: get(m, "bn_momentum")?,
        bn_eps: get(m, "bn_eps")?,
    })
}

/// Mined pair of one anchor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mined {
    /// Closest sample of the same group.
    pub positive: usize,
    /// Closest sample of another group, if any.
    pub negative: Option<usize>,
}

/// Easy positive and hard negative per anchor from a `B × B` distance
/// matrix. Anchors without another same-group sample get `None`. Ties go
/// to the smallest index.
pub fn mine_batch<S: Scalar>(dist: &Tensor<S>, labels: &[usize]) -> Vec<Option<Mined>> {
    let n = labels.len();
    (0..n)
        .map(|i| {
            let pick = |same: bool| {
                (0..n)
                    .filter(|&j| j != i && (labels[j] == labels[i]) == same)
                    .fold(None::<usize>, |best, j| match best {
                        Some(b) if dist.at(i, b) <= dist.at(i, j) => Some(b),
                        _ => Some(j),
                    })
            };
            pick(true).map(|positive| Mined { positive, negative: pick(false) })
        })
        .collect()
}

/// Cosine distances `1 - cos` between rows.
pub fn cosine_distances<S: Scalar>(z: &Tensor<S>) -> Tensor<S> {
    let mut tape = Tape::new();
    let v = tape.leaf(z.clone());
    let zn = tape.row_normalize(v);
    let s = tape.matmul_t(zn, zn);
    let mut d = tape.value(s).clone();
    for x in d.data.iter_mut() {
        *x = S::one() - *x;
    }
    d
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    /// Mean distance from each anchor to its mined hard negative.
    pub hard_negative_distance: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochStats>,
    /// Mean distinct-group pair distance on the validation slice.
    pub initial_spread: f64,
    pub final_spread: f64,
    pub collapse_warning: bool,
}

impl TrainingHistory {
    /// `epoch,loss,lr` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,lr\n");
        for e in &self.epochs {
            let _ = writeln!(out, "{},{:.17e},{:.17e}", e.epoch, e.loss, e.lr);
        }
        out
    }
}

/// Validation slice size for the collapse check.
pub const VALIDATION_SLICE: usize = 256;

fn spread<S: Scalar>(model: &VexNetModel<S>, data: &[FunctionEmbedding<S>], labels: &[usize]) -> Result<f64> {
    let n = data.len().min(VALIDATION_SLICE);
    let out = model.embed_all(&data[..n])?;
    let (mut sum, mut count) = (0.0, 0usize);
    for i in 0..n {
        for j in i + 1..n {
            if labels[i] != labels[j] {
                sum += crate::scalar::squared_distance(&out[i], &out[j]).to_f64_lossy().sqrt();
                count += 1;
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Group-aware batches: groups are shuffled and packed whole until a batch
/// reaches the batch size, so every anchor has in-batch positives.
pub fn make_batches(labels: &[usize], batch_size: usize, rng: &mut crate::rng::StageRng) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &g) in labels.iter().enumerate() {
        groups.entry(g).or_default().push(i);
    }
    let mut order: Vec<Vec<usize>> = groups.into_values().collect();
    order.shuffle(rng);
    let mut batches = Vec::new();
    let mut cur: Vec<usize> = Vec::new();
    for g in order {
        if !cur.is_empty() && cur.len() + g.len() > batch_size {
            batches.push(std::mem::take(&mut cur));
        }
        cur.extend(g);
    }
    if !cur.is_empty() {
        batches.push(cur);
    }
    batches
}

/// Siamese training with NT-Xent on mined easy positives.
pub fn train<S: Scalar>(
    model: &mut VexNetModel<S>,
    data: &[FunctionEmbedding<S>],
    labels: &[usize],
) -> Result<TrainingHistory> {
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if labels.len() != data.len() {
        return Err(Error::Argument("one label per sample expected".into()));
    }
    let mut distinct = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::Argument("training needs at least two groups".into()));
    }
    let cfg = model.config.clone();
    let mut rng = stream(cfg.seed, "vexnet-train");
    let mut adams: Vec<Adam<S>> = model.params.iter().map(|p| Adam::new(p.len())).collect();
    let mut history = TrainingHistory { initial_spread: spread(model, data, labels)?, ..Default::default() };
    let mut lr = cfg.lr;
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let batches = make_batches(labels, cfg.batch_size, &mut rng);
        let (mut loss_sum, mut anchors, mut neg_sum, mut negs) = (0.0, 0usize, 0.0, 0usize);
        for batch in batches {
            let refs: Vec<&FunctionEmbedding<S>> = batch.iter().map(|&i| &data[i]).collect();
            let blabels: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let input = model.batch_input(&refs)?;
            let mode = Mode::Train { seed: combine(cfg.seed, step) };
            step += 1;
            // mine on the current outputs of this exact forward pass
            let outputs = {
                let mut tape = Tape::new();
                let fv = model.forward_tape(&mut tape, &input, mode);
                tape.value(fv.output).clone()
            };
            let dist = cosine_distances(&outputs);
            let mined = mine_batch(&dist, &blabels);
            let positives: Vec<Option<usize>> = mined.iter().map(|m| m.map(|m| m.positive)).collect();
            let n_anchor = positives.iter().filter(|p| p.is_some()).count();
            if n_anchor == 0 {
                continue;
            }
            for (i, m) in mined.iter().enumerate() {
                if let Some(Mined { negative: Some(k), .. }) = m {
                    neg_sum += dist.at(i, *k).to_f64_lossy();
                    negs += 1;
                }
            }
            let (loss, grads, stats) = model.loss_and_grads(&input, &positives, mode);
            loss_sum += loss.to_f64_lossy() * n_anchor as f64;
            anchors += n_anchor;
            for ((p, g), adam) in model.params.iter_mut().zip(&grads).zip(adams.iter_mut()) {
                adam.step(&mut p.data, &g.data, S::of(lr));
            }
            model.update_running(&stats, batch.len());
        }
        history.epochs.push(EpochStats {
            epoch,
            loss: if anchors == 0 { 0.0 } else { loss_sum / anchors as f64 },
            lr,
            hard_negative_distance: if negs == 0 { 0.0 } else { neg_sum / negs as f64 },
        });
        lr *= cfg.lr_decay;
    }
    history.final_spread = spread(model, data, labels)?;
    history.collapse_warning = history.final_spread <= 0.1 * history.initial_spread;
    if !model.is_finite() {
        return Err(Error::Internal("non-finite parameters after training".into()));
    }
    Ok(history)
}
