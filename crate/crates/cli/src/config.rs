//! Run settings: defaults, then `PEEPVEC_SEED`, then the `--config` file,
//! then `--set` pairs, then dedicated flags.

use std::path::PathBuf;

use peepvec::embed::EmbedConfig;
use peepvec::peephole::PeepholeConfig;
use peepvec::rng::DEFAULT_SEED;
use peepvec::vexine::NormLevel;
use peepvec::vexnet::VexNetConfig;
use peepvec::vocab::TransEConfig;
use peepvec::{Error, Result};

pub const SEED_ENV: &str = "PEEPVEC_SEED";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub k: usize,
    pub c: usize,
    pub norm: NormLevel,
    pub dim: usize,
    pub transe_epochs: usize,
    pub margin: f64,
    pub transe_lr: f64,
    pub transe_batch: usize,
    pub context_dim: usize,
    pub out_dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub temperature: f64,
    pub neighbors: usize,
    /// 0 lets the pool pick one thread per core.
    pub workers: usize,
    pub vocab: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub groups: Option<PathBuf>,
}

pub const KEYS: [&str; 22] = [
    "seed", "k", "c", "norm", "dim", "transe_epochs", "margin", "transe_lr", "transe_batch", "context_dim", "out_dim",
    "epochs", "lr", "lr_decay", "batch_size", "dropout", "temperature", "neighbors", "workers", "vocab", "model", "groups",
];

impl Default for RunConfig {
    fn default() -> Self {
        let t = TransEConfig::default();
        let v = VexNetConfig::default();
        let p = PeepholeConfig::default();
        RunConfig {
            seed: DEFAULT_SEED,
            k: p.k,
            c: p.c,
            norm: NormLevel::default(),
            dim: t.dim,
            transe_epochs: t.epochs,
            margin: t.margin,
            transe_lr: t.lr,
            transe_batch: t.batch_size,
            context_dim: v.context_dim,
            out_dim: v.out_dim,
            epochs: v.epochs,
            lr: v.lr,
            lr_decay: v.lr_decay,
            batch_size: v.batch_size,
            dropout: v.dropout,
            temperature: v.temperature,
            neighbors: peepvec::simtasks::DEFAULT_K,
            workers: 0,
            vocab: None,
            model: None,
            groups: None,
        }
    }
}

pub fn parse_seed(s: &str) -> Result<u64> {
    let s = s.trim();
    let parsed = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => s.parse(),
    };
    parsed.map_err(|_| Error::Argument(format!("bad seed `{s}`")))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Argument(format!("bad value `{value}` for `{key}`")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_seed(value)?,
            "k" => self.k = num(key, value)?,
            "c" => self.c = num(key, value)?,
            "norm" => self.norm = value.trim().parse()?,
            "dim" => self.dim = num(key, value)?,
            "transe_epochs" => self.transe_epochs = num(key, value)?,
            "margin" => self.margin = num(key, value)?,
            "transe_lr" => self.transe_lr = num(key, value)?,
            "transe_batch" => self.transe_batch = num(key, value)?,
            "context_dim" => self.context_dim = num(key, value)?,
            "out_dim" => self.out_dim = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "lr_decay" => self.lr_decay = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "temperature" => self.temperature = num(key, value)?,
            "neighbors" => self.neighbors = num(key, value)?,
            "workers" => self.workers = num(key, value)?,
            "vocab" => self.vocab = Some(PathBuf::from(value.trim())),
            "model" => self.model = Some(PathBuf::from(value.trim())),
            "groups" => self.groups = Some(PathBuf::from(value.trim())),
            _ => return Err(Error::Argument(format!("unknown config key `{key}` (known: {})", KEYS.join(", ")))),
        }
        Ok(())
    }

    /// Apply `key=value` lines; `#` starts a comment.
    pub fn apply_file(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Argument(format!("config line {}: expected key=value", i + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn apply_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair.split_once('=').ok_or_else(|| Error::Argument(format!("expected key=value, got `{pair}`")))?;
        self.set(k.trim(), v)
    }

    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = parse_seed(&v).map_err(|_| Error::Argument(format!("bad {SEED_ENV} `{v}`")))?;
        }
        Ok(())
    }

    pub fn peephole(&self) -> PeepholeConfig {
        PeepholeConfig { k: self.k, c: self.c, seed: self.seed }
    }

    pub fn embed(&self) -> EmbedConfig {
        EmbedConfig { peephole: self.peephole(), level: self.norm }
    }

    pub fn transe(&self) -> TransEConfig {
        TransEConfig {
            dim: self.dim,
            margin: self.margin,
            lr: self.transe_lr,
            batch_size: self.transe_batch,
            epochs: self.transe_epochs,
            seed: self.seed,
        }
    }

    pub fn vexnet(&self, vocab_dim: usize) -> VexNetConfig {
        VexNetConfig {
            context_dim: self.context_dim,
            out_dim: self.out_dim,
            dropout: self.dropout,
            temperature: self.temperature,
            batch_size: self.batch_size,
            lr: self.lr,
            lr_decay: self.lr_decay,
            epochs: self.epochs,
            seed: self.seed,
            ..VexNetConfig::for_vocab_dim(vocab_dim)
        }
    }
}
