//! Flat "key = value" run configuration with dotted namespaces.
//!
//! Unknown and duplicate keys are rejected. Every run writes the fully
//! resolved configuration (`echo`) next to its checkpoints; feeding that
//! file back reproduces the run.
//!
//! Data comes either from JSON-lines manifests (`data.train_manifest`,
//! `data.dev_manifest`) or from the built-in synthetic task
//! (`synth.train_items` > 0), which generates deterministically from
//! `synth.seed`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::SynthTaskConfig;
use crate::decoder::DecoderConfig;
use crate::encoder::{ChunkSpec, EncoderConfig};
use crate::error::{Result, SaaError};
use crate::lm::LMConfig;
use crate::san::SANConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone)]
pub struct DataPaths {
    pub train_manifest: Option<PathBuf>,
    pub dev_manifest: Option<PathBuf>,
    pub lm_train: Option<PathBuf>,
    pub lm_dev: Option<PathBuf>,
    /// Checkpoints, metrics log and config echo land here.
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct SynthSettings {
    pub task: SynthTaskConfig,
    pub train_items: usize,
    pub dev_items: usize,
    pub train_seed: u64,
    pub dev_seed: u64,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub vocab_size: usize,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub lm: LMConfig,
    pub train: TrainConfig,
    pub chunk: Option<ChunkSpec>,
    pub data: DataPaths,
    pub synth: Option<SynthSettings>,
}

struct Extractor {
    map: HashMap<String, String>,
    source: &'static str,
}

impl Extractor {
    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v.trim().parse().map_err(|_| {
                SaaError::Config(format!("{}: bad value '{}' for {}", self.source, v, key))
            }),
        }
    }

    fn parse_opt<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v.trim().parse().map(Some).map_err(|_| {
                SaaError::Config(format!("{}: bad value '{}' for {}", self.source, v, key))
            }),
        }
    }

    fn finish(self) -> Result<()> {
        if self.map.is_empty() {
            return Ok(());
        }
        let mut keys: Vec<&String> = self.map.keys().collect();
        keys.sort();
        Err(SaaError::Config(format!(
            "{}: unknown keys: {}",
            self.source,
            keys.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(", ")
        )))
    }
}

/// Parse the flat format: one `key = value` per line, `#` comments, blank
/// lines ignored. Duplicate keys are an error.
fn parse_flat(text: &str, source: &'static str) -> Result<HashMap<String, String>> {
    let mut map = HashMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(SaaError::Config(format!(
                "{}:{}: expected 'key = value', got '{}'",
                source,
                lineno + 1,
                line
            )));
        };
        let key = key.trim().to_string();
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(SaaError::Config(format!(
                "{}:{}: duplicate key '{}'",
                source,
                lineno + 1,
                key
            )));
        }
    }
    Ok(map)
}

impl RunConfig {
    /// Desk-scale defaults with the standard synthetic fixture.
    pub fn desk() -> RunConfig {
        RunConfig {
            seed: 1,
            vocab_size: 10,
            encoder: EncoderConfig::desk(20),
            decoder: DecoderConfig::desk(),
            lm: LMConfig::desk(),
            train: TrainConfig::desk(),
            chunk: None,
            data: DataPaths {
                train_manifest: None,
                dev_manifest: None,
                lm_train: None,
                lm_dev: None,
                out_dir: PathBuf::from("runs/default"),
            },
            synth: Some(SynthSettings {
                task: SynthTaskConfig::fixture(),
                train_items: 2000,
                dev_items: 200,
                train_seed: 1001,
                dev_seed: 2002,
            }),
        }
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)?;
        RunConfig::parse(&text)
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut ex = Extractor { map: parse_flat(text, "config")?, source: "config" };
        let mut cfg = RunConfig::desk();

        cfg.seed = ex.parse("seed", cfg.seed)?;
        cfg.vocab_size = ex.parse("vocab_size", cfg.vocab_size)?;

        let e = &mut cfg.encoder;
        e.feature_dim = ex.parse("encoder.feature_dim", e.feature_dim)?;
        e.conv_filters = ex.parse("encoder.conv_filters", e.conv_filters)?;
        e.n = ex.parse("encoder.n", e.n)?;
        e.stages = ex.parse("encoder.stages", e.stages)?;
        e.pool_stride = ex.parse("encoder.pool_stride", e.pool_stride)?;

        let mut san = cfg.encoder.san.clone();
        san.d = ex.parse("san.d", san.d)?;
        san.h = ex.parse("san.h", san.h)?;
        san.d_ff = ex.parse("san.d_ff", san.d_ff)?;
        san.residual_dropout = ex.parse("san.residual_dropout", san.residual_dropout)?;
        san.attention_dropout = ex.parse("san.attention_dropout", san.attention_dropout)?;
        san.validate()?;
        cfg.encoder.san = san.clone();
        cfg.decoder.san = san.clone();

        cfg.decoder.k = ex.parse("decoder.k", cfg.decoder.k)?;
        cfg.decoder.embed_dim = ex.parse("decoder.embed_dim", cfg.decoder.embed_dim)?;

        cfg.lm.layers = ex.parse("lm.layers", cfg.lm.layers)?;
        cfg.lm.san = SANConfig { d: san.d, h: san.h, d_ff: san.d_ff, ..cfg.lm.san };
        cfg.lm.san.residual_dropout = ex.parse("lm.residual_dropout", cfg.lm.san.residual_dropout)?;
        cfg.lm.san.attention_dropout = ex.parse("lm.attention_dropout", cfg.lm.san.attention_dropout)?;
        cfg.lm.use_proximity_bias = ex.parse("lm.use_proximity_bias", cfg.lm.use_proximity_bias)?;

        let t = &mut cfg.train;
        t.epochs = ex.parse("train.epochs", t.epochs)?;
        t.batch_size = ex.parse("train.batch_size", t.batch_size)?;
        t.lambda = ex.parse("train.lambda", t.lambda)?;
        t.strict = ex.parse("train.strict", t.strict)?;
        t.optim.lr = ex.parse("train.lr", t.optim.lr)?;
        t.optim.warmup_steps = ex.parse("train.warmup_steps", t.optim.warmup_steps)?;

        let past: Option<usize> = ex.parse_opt("chunk.past")?;
        let current: Option<usize> = ex.parse_opt("chunk.current")?;
        let future: Option<usize> = ex.parse_opt("chunk.future")?;
        cfg.chunk = match (past, current, future) {
            (None, None, None) => None,
            (p, Some(c), f) => Some(ChunkSpec::new(p.unwrap_or(0), c, f.unwrap_or(0))),
            _ => {
                return Err(SaaError::Config(
                    "chunk.current is required when chunk.past/chunk.future are set".into(),
                ))
            }
        };

        cfg.data.train_manifest = ex.parse_opt::<PathBuf>("data.train_manifest")?;
        cfg.data.dev_manifest = ex.parse_opt::<PathBuf>("data.dev_manifest")?;
        cfg.data.lm_train = ex.parse_opt::<PathBuf>("data.lm_train")?;
        cfg.data.lm_dev = ex.parse_opt::<PathBuf>("data.lm_dev")?;
        cfg.data.out_dir = ex.parse("paths.out_dir", cfg.data.out_dir.clone())?;

        let train_items: usize = {
            let default = cfg.synth.as_ref().map_or(0, |s| s.train_items);
            ex.parse("synth.train_items", default)?
        };
        if train_items == 0 {
            cfg.synth = None;
            // reject synth.* keys that would silently do nothing
            for k in [
                "synth.dev_items",
                "synth.seed",
                "synth.train_seed",
                "synth.dev_seed",
                "synth.min_target_len",
                "synth.max_target_len",
                "synth.min_duration",
                "synth.max_duration",
                "synth.noise_std",
            ] {
                if ex.take(k).is_some() {
                    return Err(SaaError::Config(format!(
                        "config: {} set but synth.train_items = 0",
                        k
                    )));
                }
            }
        } else {
            let mut s = cfg.synth.take().unwrap_or(SynthSettings {
                task: SynthTaskConfig::fixture(),
                train_items: 0,
                dev_items: 0,
                train_seed: 1001,
                dev_seed: 2002,
            });
            s.train_items = train_items;
            s.dev_items = ex.parse("synth.dev_items", s.dev_items)?;
            s.train_seed = ex.parse("synth.train_seed", s.train_seed)?;
            s.dev_seed = ex.parse("synth.dev_seed", s.dev_seed)?;
            s.task.vocab_size = cfg.vocab_size;
            s.task.feature_dim = cfg.encoder.feature_dim;
            s.task.seed = ex.parse("synth.seed", s.task.seed)?;
            s.task.min_target_len = ex.parse("synth.min_target_len", s.task.min_target_len)?;
            s.task.max_target_len = ex.parse("synth.max_target_len", s.task.max_target_len)?;
            s.task.min_duration = ex.parse("synth.min_duration", s.task.min_duration)?;
            s.task.max_duration = ex.parse("synth.max_duration", s.task.max_duration)?;
            s.task.noise_std = ex.parse("synth.noise_std", s.task.noise_std)?;
            s.task.validate()?;
            cfg.synth = Some(s);
        }

        ex.finish()?;
        cfg.encoder.validate()?;
        cfg.decoder.validate()?;
        cfg.lm.validate()?;
        cfg.train.optim.validate()?;
        Ok(cfg)
    }

    /// The fully resolved configuration in the same flat format; parsing it
    /// back yields an identical configuration.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("seed", self.seed.to_string());
        kv("vocab_size", self.vocab_size.to_string());
        kv("encoder.feature_dim", self.encoder.feature_dim.to_string());
        kv("encoder.conv_filters", self.encoder.conv_filters.to_string());
        kv("encoder.n", self.encoder.n.to_string());
        kv("encoder.stages", self.encoder.stages.to_string());
        kv("encoder.pool_stride", self.encoder.pool_stride.to_string());
        kv("san.d", self.encoder.san.d.to_string());
        kv("san.h", self.encoder.san.h.to_string());
        kv("san.d_ff", self.encoder.san.d_ff.to_string());
        kv("san.residual_dropout", self.encoder.san.residual_dropout.to_string());
        kv("san.attention_dropout", self.encoder.san.attention_dropout.to_string());
        kv("decoder.k", self.decoder.k.to_string());
        kv("decoder.embed_dim", self.decoder.embed_dim.to_string());
        kv("lm.layers", self.lm.layers.to_string());
        kv("lm.residual_dropout", self.lm.san.residual_dropout.to_string());
        kv("lm.attention_dropout", self.lm.san.attention_dropout.to_string());
        kv("lm.use_proximity_bias", self.lm.use_proximity_bias.to_string());
        kv("train.epochs", self.train.epochs.to_string());
        kv("train.batch_size", self.train.batch_size.to_string());
        kv("train.lambda", self.train.lambda.to_string());
        kv("train.strict", self.train.strict.to_string());
        kv("train.lr", self.train.optim.lr.to_string());
        kv("train.warmup_steps", self.train.optim.warmup_steps.to_string());
        if let Some(c) = &self.chunk {
            kv("chunk.past", c.past.to_string());
            kv("chunk.current", c.current.to_string());
            kv("chunk.future", c.future.to_string());
        }
        for (key, path) in [
            ("data.train_manifest", &self.data.train_manifest),
            ("data.dev_manifest", &self.data.dev_manifest),
            ("data.lm_train", &self.data.lm_train),
            ("data.lm_dev", &self.data.lm_dev),
        ] {
            if let Some(p) = path {
                kv(key, p.display().to_string());
            }
        }
        kv("paths.out_dir", self.data.out_dir.display().to_string());
        match &self.synth {
            None => kv("synth.train_items", "0".into()),
            Some(sy) => {
                kv("synth.train_items", sy.train_items.to_string());
                kv("synth.dev_items", sy.dev_items.to_string());
                kv("synth.train_seed", sy.train_seed.to_string());
                kv("synth.dev_seed", sy.dev_seed.to_string());
                kv("synth.seed", sy.task.seed.to_string());
                kv("synth.min_target_len", sy.task.min_target_len.to_string());
                kv("synth.max_target_len", sy.task.max_target_len.to_string());
                kv("synth.min_duration", sy.task.min_duration.to_string());
                kv("synth.max_duration", sy.task.max_duration.to_string());
                kv("synth.noise_std", sy.task.noise_std.to_string());
            }
        }
        s
    }
}

#[cfg(test)]
mod tests;
