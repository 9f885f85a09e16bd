//! Self-attention network (SAN) block: multi-head scaled dot-product
//! attention with an additive pre-softmax bias, position-wise FFN,
//! pre-layer-norm, residuals and the three dropout sites.
//!
//! Per block, with X1 = LayerNorm(X):
//!   head_i = softmax(Q_i K_i^T / sqrt(d/h) + bias) V_i
//!   Y1     = Concat(heads) W^O
//!   X2     = LayerNorm(Dropout(Y1) + X1)
//!   Y2     = max(0, X2 W1 + b1) W2 + b2
//!   out    = Dropout(Y2) + X2
//!
//! There is no trailing layer norm; the next block's input norm covers it.
//! Attention dropout applies to the softmax weights.

use crate::error::{Result, SaaError};
use crate::rng::SaaRng;
use crate::tensor::Tensor;

/// Additive mask value. Finite on purpose so softmax/logsumexp stay finite;
/// exp(-1e9) underflows to exactly 0.0 in f64, making masking exact.
pub const MASK_NEG: f64 = -1e9;

#[derive(Debug, Clone, PartialEq)]
pub struct SANConfig {
    pub d: usize,
    pub h: usize,
    pub d_ff: usize,
    pub residual_dropout: f64,
    pub attention_dropout: f64,
}

impl SANConfig {
    /// Full-scale defaults: d=320, h=4, d_ff=1280, dropouts 0.1.
    pub fn full_scale() -> Self {
        SANConfig { d: 320, h: 4, d_ff: 1280, residual_dropout: 0.1, attention_dropout: 0.1 }
    }

    /// Desk-scale preset for CPU-sized experiments.
    pub fn desk() -> Self {
        SANConfig { d: 64, h: 2, d_ff: 256, residual_dropout: 0.1, attention_dropout: 0.1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.h == 0 || self.d % self.h != 0 {
            return Err(SaaError::Config(format!(
                "hidden size d={} must be positive and divisible by h={}",
                self.d, self.h
            )));
        }
        if !(0.0..1.0).contains(&self.residual_dropout) || !(0.0..1.0).contains(&self.attention_dropout) {
            return Err(SaaError::Config("dropout rates must be in [0,1)".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.h
    }
}

/// Additive pre-softmax bias over (query, key) position pairs. Variants
/// compose by addition; the same matrix is shared by all heads.
#[derive(Debug, Clone)]
pub struct AttentionBias {
    pub t_q: usize,
    pub t_k: usize,
    values: Vec<f64>,
}

impl AttentionBias {
    pub fn zero(t_q: usize, t_k: usize) -> Self {
        AttentionBias { t_q, t_k, values: vec![0.0; t_q * t_k] }
    }

    pub fn from_values(t_q: usize, t_k: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != t_q * t_k {
            return Err(SaaError::shape(
                "attention_bias",
                format!("{} values for {}x{}", values.len(), t_q, t_k),
            ));
        }
        Ok(AttentionBias { t_q, t_k, values })
    }

    /// Proximity bias -ln(1 + a) for distance a between absolute positions.
    /// Query row i sits at absolute position q_offset + i.
    pub fn proximity(t_q: usize, t_k: usize, q_offset: usize) -> Self {
        let mut values = vec![0.0; t_q * t_k];
        for i in 0..t_q {
            let qi = (q_offset + i) as i64;
            for j in 0..t_k {
                let a = (qi - j as i64).unsigned_abs() as f64;
                values[i * t_k + j] = -(1.0 + a).ln();
            }
        }
        AttentionBias { t_q, t_k, values }
    }

    /// Causal mask: key positions beyond the query's absolute position are
    /// suppressed with MASK_NEG.
    pub fn causal(t_q: usize, t_k: usize, q_offset: usize) -> Self {
        let mut values = vec![0.0; t_q * t_k];
        for i in 0..t_q {
            for j in 0..t_k {
                if j > q_offset + i {
                    values[i * t_k + j] = MASK_NEG;
                }
            }
        }
        AttentionBias { t_q, t_k, values }
    }

    /// Elementwise sum of two bias variants (e.g. causal + proximity).
    pub fn compose(&self, other: &AttentionBias) -> Result<AttentionBias> {
        if self.t_q != other.t_q || self.t_k != other.t_k {
            return Err(SaaError::shape(
                "attention_bias_compose",
                format!("{}x{} vs {}x{}", self.t_q, self.t_k, other.t_q, other.t_k),
            ));
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Ok(AttentionBias { t_q: self.t_q, t_k: self.t_k, values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.t_k + j]
    }

    /// Row i as a standalone single-query bias (for incremental decoding).
    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values[i * self.t_k..(i + 1) * self.t_k].to_vec()
    }
}

/// Per-head K/V matrices for auto-regressive decoding. One cache per
/// decoding stream; appending step u then attending reproduces exactly
/// what a full forward over u steps would compute.
pub struct SANCache {
    keys: Vec<Option<Tensor>>,
    vals: Vec<Option<Tensor>>,
    len: usize,
}

impl SANCache {
    pub fn new(heads: usize) -> Self {
        SANCache { keys: vec![None; heads], vals: vec![None; heads], len: 0 }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn append(&mut self, head: usize, k_row: Tensor, v_row: Tensor) -> Result<()> {
        self.keys[head] = Some(match self.keys[head].take() {
            Some(k) => Tensor::concat_rows(&[k, k_row])?,
            None => k_row,
        });
        self.vals[head] = Some(match self.vals[head].take() {
            Some(v) => Tensor::concat_rows(&[v, v_row])?,
            None => v_row,
        });
        Ok(())
    }
}

/// One SAN block's parameters. Per-head projection matrices are stored
/// separately, matching the per-head formulation.
pub struct SanBlock {
    pub cfg: SANConfig,
    pub ln1_scale: Tensor,
    pub ln1_shift: Tensor,
    pub wq: Vec<Tensor>,
    pub wk: Vec<Tensor>,
    pub wv: Vec<Tensor>,
    pub wo: Tensor,
    pub ln2_scale: Tensor,
    pub ln2_shift: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

fn xavier_mat(rng: &mut SaaRng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.xavier(rows, cols)).collect();
    Tensor::param(data, &[rows, cols]).expect("xavier_mat shape")
}

fn ones_param(n: usize) -> Tensor {
    Tensor::param(vec![1.0; n], &[n]).unwrap()
}

fn zeros_param(n: usize) -> Tensor {
    Tensor::param(vec![0.0; n], &[n]).unwrap()
}

impl SanBlock {
    pub fn new(cfg: &SANConfig, rng: &mut SaaRng) -> Result<Self> {
        cfg.validate()?;
        let (d, dh, dff) = (cfg.d, cfg.head_dim(), cfg.d_ff);
        Ok(SanBlock {
            cfg: cfg.clone(),
            ln1_scale: ones_param(d),
            ln1_shift: zeros_param(d),
            wq: (0..cfg.h).map(|_| xavier_mat(rng, d, dh)).collect(),
            wk: (0..cfg.h).map(|_| xavier_mat(rng, d, dh)).collect(),
            wv: (0..cfg.h).map(|_| xavier_mat(rng, d, dh)).collect(),
            wo: xavier_mat(rng, d, d),
            ln2_scale: ones_param(d),
            ln2_shift: zeros_param(d),
            w1: xavier_mat(rng, d, dff),
            b1: zeros_param(dff),
            w2: xavier_mat(rng, dff, d),
            b2: zeros_param(d),
        })
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = vec![
            (format!("{prefix}.ln1.scale"), self.ln1_scale.clone()),
            (format!("{prefix}.ln1.shift"), self.ln1_shift.clone()),
            (format!("{prefix}.attn.wo"), self.wo.clone()),
            (format!("{prefix}.ln2.scale"), self.ln2_scale.clone()),
            (format!("{prefix}.ln2.shift"), self.ln2_shift.clone()),
            (format!("{prefix}.ffn.w1"), self.w1.clone()),
            (format!("{prefix}.ffn.b1"), self.b1.clone()),
            (format!("{prefix}.ffn.w2"), self.w2.clone()),
            (format!("{prefix}.ffn.b2"), self.b2.clone()),
        ];
        for i in 0..self.cfg.h {
            out.push((format!("{prefix}.attn.head{i}.wq"), self.wq[i].clone()));
            out.push((format!("{prefix}.attn.head{i}.wk"), self.wk[i].clone()));
            out.push((format!("{prefix}.attn.head{i}.wv"), self.wv[i].clone()));
        }
        out
    }

    pub fn params(&self) -> Vec<Tensor> {
        self.named_params("").into_iter().map(|(_, t)| t).collect()
    }

    /// Full-sequence forward over X of shape [T, d] with a T x T bias.
    pub fn forward(
        &self,
        x: &Tensor,
        bias: &AttentionBias,
        train: bool,
        rng: &mut SaaRng,
    ) -> Result<Tensor> {
        let t = match x.shape() {
            [t, d] if *d == self.cfg.d => *t,
            s => {
                return Err(SaaError::shape(
                    "san_forward",
                    format!("input {:?}, expected [T, {}]", s, self.cfg.d),
                ))
            }
        };
        if bias.t_q != t || bias.t_k != t {
            return Err(SaaError::shape(
                "san_forward",
                format!("bias {}x{} for T={}", bias.t_q, bias.t_k, t),
            ));
        }
        let x1 = x.layer_norm_rows(&self.ln1_scale, &self.ln1_shift)?;
        let scale = 1.0 / (self.cfg.head_dim() as f64).sqrt();
        let mut heads = Vec::with_capacity(self.cfg.h);
        for i in 0..self.cfg.h {
            let q = x1.matmul(&self.wq[i])?;
            let k = x1.matmul(&self.wk[i])?;
            let v = x1.matmul(&self.wv[i])?;
            let scores = q.matmul(&k.transpose()?)?.scale(scale);
            let attn = scores.softmax_rows(Some(bias.values()))?;
            let attn = attn.dropout(self.cfg.attention_dropout, train, rng)?;
            heads.push(attn.matmul(&v)?);
        }
        let y1 = Tensor::concat_cols(&heads)?.matmul(&self.wo)?;
        let x2 = y1
            .dropout(self.cfg.residual_dropout, train, rng)?
            .add(&x1)?
            .layer_norm_rows(&self.ln2_scale, &self.ln2_shift)?;
        let y2 = x2.matmul(&self.w1)?.add_row(&self.b1)?.relu().matmul(&self.w2)?.add_row(&self.b2)?;
        y2.dropout(self.cfg.residual_dropout, train, rng)?.add(&x2)
    }

    /// One auto-regressive step. `cache` must hold exactly the previous
    /// steps; `bias_row` is the bias slice for this query over all key
    /// positions up to and including itself (length cache.len() + 1).
    pub fn forward_incremental(
        &self,
        x_u: &Tensor,
        cache: &mut SANCache,
        bias_row: &[f64],
        train: bool,
        rng: &mut SaaRng,
    ) -> Result<Tensor> {
        if x_u.shape() != [1, self.cfg.d] {
            return Err(SaaError::shape(
                "san_forward_incremental",
                format!("step input {:?}, expected [1, {}]", x_u.shape(), self.cfg.d),
            ));
        }
        let u = cache.len + 1;
        if bias_row.len() != u {
            return Err(SaaError::contract(
                "san_forward_incremental",
                format!("bias_row length {} but cache holds {} steps", bias_row.len(), cache.len),
            ));
        }
        let x1 = x_u.layer_norm_rows(&self.ln1_scale, &self.ln1_shift)?;
        let scale = 1.0 / (self.cfg.head_dim() as f64).sqrt();
        let mut heads = Vec::with_capacity(self.cfg.h);
        for i in 0..self.cfg.h {
            let q = x1.matmul(&self.wq[i])?;
            let k_row = x1.matmul(&self.wk[i])?;
            let v_row = x1.matmul(&self.wv[i])?;
            cache.append(i, k_row, v_row)?;
            let k_all = cache.keys[i].as_ref().unwrap();
            let v_all = cache.vals[i].as_ref().unwrap();
            let scores = q.matmul(&k_all.transpose()?)?.scale(scale);
            let attn = scores.softmax_rows(Some(bias_row))?;
            let attn = attn.dropout(self.cfg.attention_dropout, train, rng)?;
            heads.push(attn.matmul(v_all)?);
        }
        cache.len = u;
        let y1 = Tensor::concat_cols(&heads)?.matmul(&self.wo)?;
        let x2 = y1
            .dropout(self.cfg.residual_dropout, train, rng)?
            .add(&x1)?
            .layer_norm_rows(&self.ln2_scale, &self.ln2_shift)?;
        let y2 = x2.matmul(&self.w1)?.add_row(&self.b1)?.relu().matmul(&self.w2)?.add_row(&self.b2)?;
        y2.dropout(self.cfg.residual_dropout, train, rng)?.add(&x2)
    }
}
