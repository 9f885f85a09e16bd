//! Acoustic encoder: convolutional front-end (strided conv + multiplicative
//! unit) followed by stacked SANs with temporal max pooling between
//! resolutions, plus the chunk-hopping streaming mode.
//!
//! The front-end halves the sequence length; each pooling layer divides it
//! by `pool_stride` again, so the total downsampling factor is
//! D = 2 * pool_stride^(stages-1).

use crate::error::{Result, SaaError};
use crate::rng::SaaRng;
use crate::san::{AttentionBias, SANConfig, SanBlock};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct EncoderConfig {
    pub feature_dim: usize,
    pub conv_filters: usize,
    /// SANs per temporal resolution.
    pub n: usize,
    /// Number of temporal resolutions; stages-1 pooling layers.
    pub stages: usize,
    pub pool_stride: usize,
    pub san: SANConfig,
}

impl EncoderConfig {
    /// Full-scale defaults (64 conv filters, n=5 SANs per resolution).
    pub fn full_scale(feature_dim: usize) -> Self {
        EncoderConfig {
            feature_dim,
            conv_filters: 64,
            n: 5,
            stages: 2,
            pool_stride: 2,
            san: SANConfig::full_scale(),
        }
    }

    pub fn desk(feature_dim: usize) -> Self {
        EncoderConfig {
            feature_dim,
            conv_filters: 8,
            n: 2,
            stages: 2,
            pool_stride: 2,
            san: SANConfig::desk(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.san.validate()?;
        if self.n < 1 || self.stages < 1 {
            return Err(SaaError::Config("encoder needs n >= 1 and stages >= 1".into()));
        }
        if self.stages > 1 && self.pool_stride < 2 {
            return Err(SaaError::Config("pool_stride must be >= 2 when stages > 1".into()));
        }
        if self.feature_dim == 0 || self.conv_filters == 0 {
            return Err(SaaError::Config("feature_dim and conv_filters must be positive".into()));
        }
        Ok(())
    }

    /// Total temporal downsampling: front-end halving times the pools.
    pub fn downsample_factor(&self) -> usize {
        2 * self.pool_stride.pow(self.stages as u32 - 1)
    }
}

/// Encoder output: U x d acoustic representations plus geometry metadata.
pub struct AcousticStates {
    pub h: Tensor,
    pub downsample_factor: usize,
    pub source_frames: usize,
}

impl AcousticStates {
    pub fn len(&self) -> usize {
        self.h.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Streaming geometry: (past, current, future) frame counts. The hop size
/// equals the current part; latency is the future part times the frame
/// shift.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkSpec {
    pub past: usize,
    pub current: usize,
    pub future: usize,
    pub frame_shift_ms: f64,
}

impl ChunkSpec {
    pub fn new(past: usize, current: usize, future: usize) -> Self {
        ChunkSpec { past, current, future, frame_shift_ms: 10.0 }
    }

    pub fn chunk_size(&self) -> usize {
        self.past + self.current + self.future
    }

    pub fn hop_size(&self) -> usize {
        self.current
    }

    /// Look-ahead before a frame's output can be produced.
    pub fn latency_ms(&self) -> f64 {
        self.future as f64 * self.frame_shift_ms
    }

    /// Chunk boundaries must land exactly on encoded positions.
    pub fn validate(&self, downsample: usize) -> Result<()> {
        if self.current == 0 {
            return Err(SaaError::Config("chunk current part must be positive".into()));
        }
        for (name, v) in [("past", self.past), ("current", self.current), ("future", self.future)] {
            if v % downsample != 0 {
                return Err(SaaError::Config(format!(
                    "chunk {} size {} is not a multiple of the downsample factor {}",
                    name, v, downsample
                )));
            }
        }
        Ok(())
    }
}

/// One chunk of the segmentation. `abs_start` may be negative (conceptual
/// left zero-padding); `window` is the in-bounds frame range actually fed
/// to the encoder, `current` the frame range this chunk owns.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub abs_start: i64,
    pub window: (usize, usize),
    pub current: (usize, usize),
    pub pad_left: usize,
    pub pad_right: usize,
}

/// Segment T frames into overlapped chunks. Current ranges tile [0, T)
/// exactly once; the chunk count is ceil(T / current).
pub fn chunk_segment(frames: usize, spec: &ChunkSpec) -> Vec<Chunk> {
    let n_chunks = frames.div_ceil(spec.current).max(1);
    let mut out = Vec::with_capacity(n_chunks);
    for c in 0..n_chunks {
        let cur_start = c * spec.current;
        let cur_end = ((c + 1) * spec.current).min(frames);
        let abs_start = cur_start as i64 - spec.past as i64;
        let abs_end = (cur_start + spec.current + spec.future) as i64;
        let win_start = abs_start.max(0) as usize;
        let win_end = (abs_end.min(frames as i64)) as usize;
        out.push(Chunk {
            abs_start,
            window: (win_start, win_end),
            current: (cur_start, cur_end),
            pad_left: (win_start as i64 - abs_start) as usize,
            pad_right: (abs_end - win_end as i64) as usize,
        });
    }
    out
}

struct Frontend {
    conv_w: Tensor,
    conv_b: Tensor,
    ln_scale: Tensor,
    ln_shift: Tensor,
    mu_gate_w: Tensor,
    mu_gate_b: Tensor,
    mu_feat_w: Tensor,
    mu_feat_b: Tensor,
    proj_w: Tensor,
    proj_b: Tensor,
}

pub struct Encoder {
    pub cfg: EncoderConfig,
    frontend: Frontend,
    stages: Vec<Vec<SanBlock>>,
}

fn conv_param(rng: &mut SaaRng, cout: usize, cin: usize, kh: usize, kw: usize) -> Tensor {
    let fan_in = cin * kh * kw;
    let fan_out = cout * kh * kw;
    let data = (0..cout * cin * kh * kw).map(|_| rng.xavier(fan_in, fan_out)).collect();
    Tensor::param(data, &[cout, cin, kh, kw]).unwrap()
}

impl Encoder {
    pub fn new(cfg: &EncoderConfig, rng: &mut SaaRng) -> Result<Self> {
        cfg.validate()?;
        let cf = cfg.conv_filters;
        let flat = cf * cfg.feature_dim;
        let frontend = Frontend {
            conv_w: conv_param(rng, cf, 1, 3, 3),
            conv_b: Tensor::param(vec![0.0; cf], &[cf])?,
            ln_scale: Tensor::param(vec![1.0; flat], &[flat])?,
            ln_shift: Tensor::param(vec![0.0; flat], &[flat])?,
            mu_gate_w: conv_param(rng, cf, cf, 3, 3),
            mu_gate_b: Tensor::param(vec![0.0; cf], &[cf])?,
            mu_feat_w: conv_param(rng, cf, cf, 3, 3),
            mu_feat_b: Tensor::param(vec![0.0; cf], &[cf])?,
            proj_w: {
                let data = (0..flat * cfg.san.d).map(|_| rng.xavier(flat, cfg.san.d)).collect();
                Tensor::param(data, &[flat, cfg.san.d])?
            },
            proj_b: Tensor::param(vec![0.0; cfg.san.d], &[cfg.san.d])?,
        };
        let stages = (0..cfg.stages)
            .map(|_| (0..cfg.n).map(|_| SanBlock::new(&cfg.san, rng)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(Encoder { cfg: cfg.clone(), frontend, stages })
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let fe = &self.frontend;
        let mut out = vec![
            (format!("{prefix}.frontend.conv.w"), fe.conv_w.clone()),
            (format!("{prefix}.frontend.conv.b"), fe.conv_b.clone()),
            (format!("{prefix}.frontend.ln.scale"), fe.ln_scale.clone()),
            (format!("{prefix}.frontend.ln.shift"), fe.ln_shift.clone()),
            (format!("{prefix}.frontend.mu.gate.w"), fe.mu_gate_w.clone()),
            (format!("{prefix}.frontend.mu.gate.b"), fe.mu_gate_b.clone()),
            (format!("{prefix}.frontend.mu.feat.w"), fe.mu_feat_w.clone()),
            (format!("{prefix}.frontend.mu.feat.b"), fe.mu_feat_b.clone()),
            (format!("{prefix}.frontend.proj.w"), fe.proj_w.clone()),
            (format!("{prefix}.frontend.proj.b"), fe.proj_b.clone()),
        ];
        for (s, blocks) in self.stages.iter().enumerate() {
            for (i, b) in blocks.iter().enumerate() {
                out.extend(b.named_params(&format!("{prefix}.stage{s}.san{i}")));
            }
        }
        out
    }

    /// Strided conv + layer norm + multiplicative unit + flatten/project.
    /// Input [T, F] features, output [ceil(T/2), d].
    pub fn frontend_forward(&self, features: &Tensor, train: bool, rng: &mut SaaRng) -> Result<Tensor> {
        let (t, f) = match features.shape() {
            [t, f] if *f == self.cfg.feature_dim => (*t, *f),
            s => {
                return Err(SaaError::shape(
                    "frontend_forward",
                    format!("features {:?}, expected [T, {}]", s, self.cfg.feature_dim),
                ))
            }
        };
        if t < 2 {
            return Err(SaaError::contract(
                "frontend_forward",
                format!("input too short: {} frames, need at least 2", t),
            ));
        }
        let fe = &self.frontend;
        let cf = self.cfg.conv_filters;
        let img = features.reshape(&[1, t, f])?;
        let conv = img.conv2d(&fe.conv_w, &fe.conv_b, (2, 1))?;
        // layer norm over (channels x features) per time step
        let normed = conv
            .chw_to_rows()?
            .layer_norm_rows(&fe.ln_scale, &fe.ln_shift)?
            .rows_to_chw(cf, f)?;
        let gate = normed.conv2d(&fe.mu_gate_w, &fe.mu_gate_b, (1, 1))?.sigmoid();
        let feat = normed.conv2d(&fe.mu_feat_w, &fe.mu_feat_b, (1, 1))?.tanh_t();
        let mu = gate.mul(&feat)?;
        let rows = mu.chw_to_rows()?;
        let projected = rows.matmul(&fe.proj_w)?.add_row(&fe.proj_b)?;
        projected.dropout(self.cfg.san.residual_dropout, train, rng)
    }

    /// Full-context encoding: front-end, then per stage n SAN blocks with
    /// proximity bias (no causal mask), max pooling between stages.
    pub fn forward(&self, features: &Tensor, train: bool, rng: &mut SaaRng) -> Result<AcousticStates> {
        let t = features.shape()[0];
        let mut x = self.frontend_forward(features, train, rng)?;
        for (s, blocks) in self.stages.iter().enumerate() {
            if s > 0 {
                x = x.max_pool_rows(self.cfg.pool_stride)?;
            }
            let len = x.shape()[0];
            let bias = AttentionBias::proximity(len, len, 0);
            for b in blocks {
                x = b.forward(&x, &bias, train, rng)?;
            }
        }
        Ok(AcousticStates {
            h: x,
            downsample_factor: self.cfg.downsample_factor(),
            source_frames: t,
        })
    }

    /// Chunk-hopping encoding: each chunk is encoded independently over its
    /// (past, current, future) window; only the current part's encoded
    /// positions are kept and concatenated. Output length is ceil(T/D).
    pub fn forward_streaming(
        &self,
        features: &Tensor,
        spec: &ChunkSpec,
        train: bool,
        rng: &mut SaaRng,
    ) -> Result<AcousticStates> {
        let d_factor = self.cfg.downsample_factor();
        spec.validate(d_factor)?;
        let t = features.shape()[0];
        let chunks = chunk_segment(t, spec);
        let mut parts = Vec::with_capacity(chunks.len());
        for chunk in &chunks {
            parts.push(self.encode_chunk(features, chunk, train, rng)?);
        }
        Ok(AcousticStates {
            h: Tensor::concat_rows(&parts)?,
            downsample_factor: d_factor,
            source_frames: t,
        })
    }

    /// Encode one chunk and slice out its current-part positions.
    pub(crate) fn encode_chunk(
        &self,
        features: &Tensor,
        chunk: &Chunk,
        train: bool,
        rng: &mut SaaRng,
    ) -> Result<Tensor> {
        let d_factor = self.cfg.downsample_factor();
        let (w0, w1) = chunk.window;
        let window = features.rows(w0, w1)?.detach();
        let enc = self.forward(&window, train, rng)?;
        // the chunk's window starts on a multiple of D, so encoded position
        // r covers source frames [w0 + r*D, w0 + (r+1)*D)
        debug_assert_eq!(w0 % d_factor, 0);
        let (c0, c1) = chunk.current;
        let keep_start = (c0 - w0) / d_factor;
        let keep_end = keep_start + (c1 - c0).div_ceil(d_factor);
        enc.h.rows(keep_start, keep_end)
    }
}
