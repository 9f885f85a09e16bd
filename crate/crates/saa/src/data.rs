//! Synthetic desk-scale task generation, global feature normalization,
//! batching, and dataset/manifest I/O.
//!
//! Each target label is rendered as a contiguous run of frames carrying a
//! label-specific fixed random pattern plus Gaussian noise. Durations are
//! at least the encoder's downsampling factor, so N <= U always holds for
//! generated data.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SaaError};
use crate::rng::SaaRng;
use crate::tensor::Tensor;

const FEATURE_MAGIC: &[u8; 4] = b"FEAT";

#[derive(Debug, Clone)]
pub struct SynthTaskConfig {
    pub vocab_size: usize,
    pub min_target_len: usize,
    pub max_target_len: usize,
    /// Frames per label, inclusive range. Keep min_duration >= the
    /// encoder's downsampling factor D so targets stay feasible (N <= U).
    pub min_duration: usize,
    pub max_duration: usize,
    pub feature_dim: usize,
    pub noise_std: f64,
    /// Seeds the per-label patterns; splits are drawn with their own seeds.
    pub seed: u64,
}

impl SynthTaskConfig {
    /// The standard acceptance fixture: vocab 10, N in [5,12], durations in
    /// [6,12], F=20.
    pub fn fixture() -> Self {
        SynthTaskConfig {
            vocab_size: 10,
            min_target_len: 5,
            max_target_len: 12,
            min_duration: 6,
            max_duration: 12,
            feature_dim: 20,
            noise_std: 0.1,
            seed: 7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.feature_dim == 0 {
            return Err(SaaError::Config("vocab_size and feature_dim must be positive".into()));
        }
        if self.min_target_len == 0 || self.min_target_len > self.max_target_len {
            return Err(SaaError::Config("need 0 < min_target_len <= max_target_len".into()));
        }
        if self.min_duration == 0 || self.min_duration > self.max_duration {
            return Err(SaaError::Config("need 0 < min_duration <= max_duration".into()));
        }
        if self.noise_std < 0.0 {
            return Err(SaaError::Config("noise_std must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    /// [T, F] features.
    pub features: Tensor,
    pub target: Vec<usize>,
}

/// The synthetic task: per-label pattern vectors fixed by the config seed.
pub struct SynthTask {
    pub cfg: SynthTaskConfig,
    patterns: Vec<Vec<f64>>,
}

impl SynthTask {
    pub fn new(cfg: SynthTaskConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SaaRng::from_seed(cfg.seed);
        let patterns = (0..cfg.vocab_size)
            .map(|_| (0..cfg.feature_dim).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect();
        Ok(SynthTask { cfg, patterns })
    }

    pub fn pattern(&self, label: usize) -> &[f64] {
        &self.patterns[label]
    }

    fn sample(&self, rng: &mut SaaRng, id: String) -> Utterance {
        let c = &self.cfg;
        let n = c.min_target_len + rng.usize_below(c.max_target_len - c.min_target_len + 1);
        let target: Vec<usize> = (0..n).map(|_| rng.usize_below(c.vocab_size)).collect();
        let mut rows: Vec<f64> = Vec::new();
        let mut t = 0;
        for &label in &target {
            let dur = c.min_duration + rng.usize_below(c.max_duration - c.min_duration + 1);
            for _ in 0..dur {
                rows.extend(self.patterns[label].iter().map(|p| p + rng.normal(c.noise_std)));
                t += 1;
            }
        }
        Utterance {
            id,
            features: Tensor::new(rows, &[t, c.feature_dim]).unwrap(),
            target,
        }
    }

    /// Deterministic split: same (n, split_seed, prefix) gives a
    /// bit-identical dataset.
    pub fn generate(&self, n: usize, split_seed: u64, id_prefix: &str) -> Vec<Utterance> {
        let mut rng = SaaRng::from_seed(split_seed);
        (0..n).map(|i| self.sample(&mut rng, format!("{id_prefix}{i:05}"))).collect()
    }
}

/// Global per-dimension normalization statistics, computed once on the
/// training set and carried in the checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    pub fn fit(utts: &[Utterance]) -> Result<FeatureStats> {
        let f = match utts.first() {
            Some(u) => u.features.shape()[1],
            None => return Err(SaaError::Data("cannot fit normalization on an empty set".into())),
        };
        let mut count = 0usize;
        let mut sum = vec![0.0; f];
        let mut sum_sq = vec![0.0; f];
        for u in utts {
            if u.features.shape()[1] != f {
                return Err(SaaError::Data(format!(
                    "utterance {} has feature dim {}, expected {}",
                    u.id,
                    u.features.shape()[1],
                    f
                )));
            }
            let d = u.features.data();
            for (i, v) in d.iter().enumerate() {
                sum[i % f] += v;
                sum_sq[i % f] += v * v;
            }
            count += u.features.shape()[0];
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let std = sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| {
                let var = (sq / count as f64 - m * m).max(0.0);
                // zero-variance dimension: leave centered, scale 1
                if var > 0.0 { var.sqrt() } else { 1.0 }
            })
            .collect();
        Ok(FeatureStats { mean, std })
    }

    pub fn apply(&self, features: &Tensor) -> Result<Tensor> {
        let [t, f] = *features.shape() else {
            return Err(SaaError::shape("normalize", format!("{:?}", features.shape())));
        };
        if f != self.mean.len() {
            return Err(SaaError::shape(
                "normalize",
                format!("feature dim {} vs stats dim {}", f, self.mean.len()),
            ));
        }
        let d = features.data();
        let out = d
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % f]) / self.std[i % f])
            .collect();
        drop(d);
        Tensor::new(out, &[t, f])
    }

    /// Checkpoint representation: two named non-trainable tensors.
    pub fn to_named_tensors(&self) -> Vec<(String, Tensor)> {
        let f = self.mean.len();
        vec![
            ("norm.mean".into(), Tensor::new(self.mean.clone(), &[f]).unwrap()),
            ("norm.std".into(), Tensor::new(self.std.clone(), &[f]).unwrap()),
        ]
    }

    pub fn from_loaded(loaded: &HashMap<String, (Vec<usize>, Vec<f64>)>) -> Result<FeatureStats> {
        let get = |name: &str| -> Result<Vec<f64>> {
            loaded
                .get(name)
                .map(|(_, v)| v.clone())
                .ok_or_else(|| SaaError::Checkpoint(format!("missing tensor {}", name)))
        };
        Ok(FeatureStats { mean: get("norm.mean")?, std: get("norm.std")? })
    }
}

/// A batch of utterances padded to the longest item. Padding frames are
/// zero; `lens` and `mask` mark the real frames. The model consumes each
/// item sliced to its true length (`item_features`), so padding never
/// enters attention or the loss.
pub struct Batch {
    /// One [T_max, F] tensor per item.
    pub features: Vec<Tensor>,
    pub lens: Vec<usize>,
    pub targets: Vec<Vec<usize>>,
    /// mask[i][t] is true for real frames.
    pub mask: Vec<Vec<bool>>,
}

impl Batch {
    pub fn new(items: &[&Utterance]) -> Result<Batch> {
        if items.is_empty() {
            return Err(SaaError::Data("empty batch".into()));
        }
        let f = items[0].features.shape()[1];
        let t_max = items.iter().map(|u| u.features.shape()[0]).max().unwrap();
        let mut features = Vec::with_capacity(items.len());
        let mut lens = Vec::with_capacity(items.len());
        let mut targets = Vec::with_capacity(items.len());
        let mut mask = Vec::with_capacity(items.len());
        for u in items {
            let t = u.features.shape()[0];
            let mut data = u.features.to_vec();
            data.resize(t_max * f, 0.0);
            features.push(Tensor::new(data, &[t_max, f])?);
            lens.push(t);
            targets.push(u.target.clone());
            let mut m = vec![true; t];
            m.resize(t_max, false);
            mask.push(m);
        }
        Ok(Batch { features, lens, targets, mask })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Item i's features with padding rows stripped.
    pub fn item_features(&self, i: usize) -> Result<Tensor> {
        self.features[i].rows(0, self.lens[i])
    }
}

/// Deterministic index batching, optionally shuffled.
pub fn batch_indices(n: usize, batch_size: usize, shuffle: Option<&mut SaaRng>) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    if let Some(rng) = shuffle {
        // Fisher-Yates
        for i in (1..n).rev() {
            let j = rng.usize_below(i + 1);
            idx.swap(i, j);
        }
    }
    idx.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    feature_file: String,
    target: String,
}

pub fn write_features(path: &Path, features: &Tensor) -> Result<()> {
    let [t, f] = *features.shape() else {
        return Err(SaaError::shape("write_features", format!("{:?}", features.shape())));
    };
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&(t as u32).to_le_bytes())?;
    w.write_all(&(f as u32).to_le_bytes())?;
    for v in features.data().iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_features(path: &Path) -> Result<Tensor> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != FEATURE_MAGIC {
        return Err(SaaError::Data(format!("{}: not a feature file", path.display())));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let t = u32::from_le_bytes(u32buf) as usize;
    r.read_exact(&mut u32buf)?;
    let f = u32::from_le_bytes(u32buf) as usize;
    let mut data = Vec::with_capacity(t * f);
    let mut f64buf = [0u8; 8];
    for _ in 0..t * f {
        r.read_exact(&mut f64buf)?;
        data.push(f64::from_le_bytes(f64buf));
    }
    Tensor::new(data, &[t, f])
}

fn parse_target(s: &str, where_: &str) -> Result<Vec<usize>> {
    s.split_whitespace()
        .map(|tok| {
            tok.parse::<usize>()
                .map_err(|_| SaaError::Data(format!("{}: bad label '{}'", where_, tok)))
        })
        .collect()
}

fn format_target(target: &[usize]) -> String {
    target.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(" ")
}

/// Write the dataset as a JSON-lines manifest plus one binary feature file
/// per utterance, all under `dir`. Returns the manifest path.
pub fn write_dataset(dir: &Path, name: &str, utts: &[Utterance]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let manifest_path = dir.join(format!("{name}.jsonl"));
    let mut w = BufWriter::new(fs::File::create(&manifest_path)?);
    for u in utts {
        let feature_file = format!("{}.feat", u.id);
        write_features(&dir.join(&feature_file), &u.features)?;
        let entry = ManifestEntry {
            id: u.id.clone(),
            feature_file,
            target: format_target(&u.target),
        };
        serde_json::to_writer(&mut w, &entry)
            .map_err(|e| SaaError::Data(format!("manifest write: {}", e)))?;
        writeln!(w)?;
    }
    Ok(manifest_path)
}

/// Load a dataset from a JSON-lines manifest; feature files resolve
/// relative to the manifest's directory.
pub fn load_dataset(manifest_path: &Path) -> Result<Vec<Utterance>> {
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let r = BufReader::new(fs::File::open(manifest_path)?);
    let mut utts = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| {
            SaaError::Data(format!("{}:{}: {}", manifest_path.display(), lineno + 1, e))
        })?;
        utts.push(Utterance {
            features: read_features(&dir.join(&entry.feature_file))?,
            target: parse_target(&entry.target, &entry.id)?,
            id: entry.id,
        });
    }
    if utts.is_empty() {
        return Err(SaaError::Data(format!("{}: empty manifest", manifest_path.display())));
    }
    Ok(utts)
}

/// Text corpus for the LM: one utterance per line, space-separated label
/// ids.
pub fn write_label_corpus(path: &Path, seqs: &[Vec<usize>]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for s in seqs {
        writeln!(w, "{}", format_target(s))?;
    }
    Ok(())
}

pub fn read_label_corpus(path: &Path, vocab_size: usize) -> Result<Vec<Vec<usize>>> {
    let r = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let seq = parse_target(&line, &format!("{}:{}", path.display(), lineno + 1))?;
        if let Some(&bad) = seq.iter().find(|&&l| l >= vocab_size) {
            return Err(SaaError::Data(format!(
                "{}:{}: label {} out of vocabulary (size {})",
                path.display(),
                lineno + 1,
                bad,
                vocab_size
            )));
        }
        out.push(seq);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
