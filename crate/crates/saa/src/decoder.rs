//! Auto-regressive SAN decoder with argmax feedback, the blank-removal
//! mapping beta, the log-space forward DP for the alignment loss, its
//! brute-force enumeration oracle, confidence penalty and greedy decoding.
//!
//! The decoder runs the same computation at train and inference time: at
//! step u the input is concat(h_{u-1}, embed(z_{u-1})) projected to d, the
//! output is concat(san_out, h_u) projected to L+1 logits, and z_u is the
//! argmax of the step's log-distribution. The argmax is a discrete input to
//! the next step; gradient does not flow through it.

use crate::encoder::AcousticStates;
use crate::error::{Result, SaaError};
use crate::rng::SaaRng;
use crate::san::{SANCache, SANConfig, SanBlock};
use crate::tensor::Tensor;

/// Output unit inventory: L real labels, one blank, one <sos> reserved for
/// the language model. Blank never appears in targets; decoder logits have
/// size L+1.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    pub n_labels: usize,
}

impl Vocab {
    pub fn new(n_labels: usize) -> Self {
        Vocab { n_labels }
    }

    pub fn blank_id(&self) -> usize {
        self.n_labels
    }

    pub fn sos_id(&self) -> usize {
        self.n_labels + 1
    }

    /// Decoder output dimension (L real labels + blank).
    pub fn logit_dim(&self) -> usize {
        self.n_labels + 1
    }
}

/// Per-frame log-distributions over L+1 labels, U x (L+1). Rows come from a
/// log-softmax, so logsumexp(row) == 0 structurally.
pub struct AlignmentLattice {
    pub log_probs: Tensor,
}

impl AlignmentLattice {
    pub fn frames(&self) -> usize {
        self.log_probs.shape()[0]
    }

    pub fn label_dim(&self) -> usize {
        self.log_probs.shape()[1]
    }

    /// Max |logsumexp(row)| over all rows.
    pub fn max_row_norm_defect(&self) -> f64 {
        let lse = self.log_probs.logsumexp().unwrap().to_vec();
        lse.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone)]
pub struct DecoderConfig {
    /// Number of decoder SAN blocks.
    pub k: usize,
    pub embed_dim: usize,
    pub san: SANConfig,
}

impl DecoderConfig {
    pub fn desk() -> Self {
        let san = SANConfig::desk();
        DecoderConfig { k: 2, embed_dim: san.d / 4, san }
    }

    pub fn validate(&self) -> Result<()> {
        self.san.validate()?;
        if self.k < 1 {
            return Err(SaaError::Config("decoder needs k >= 1".into()));
        }
        if self.embed_dim == 0 {
            return Err(SaaError::Config("embed_dim must be positive".into()));
        }
        Ok(())
    }
}

pub struct Decoder {
    pub cfg: DecoderConfig,
    pub vocab: Vocab,
    pub(crate) embed: Tensor,
    pub(crate) in_w: Tensor,
    pub(crate) in_b: Tensor,
    pub(crate) blocks: Vec<SanBlock>,
    pub(crate) out_w: Tensor,
    pub(crate) out_b: Tensor,
}

/// Everything the fusion head needs from one decoder step.
pub struct DecoderStep {
    /// concat(san_out, h_u), the pre-logit state of size 2d.
    pub pre_logit: Tensor,
    /// Baseline logits over L+1 labels.
    pub logits: Tensor,
}

impl Decoder {
    pub fn new(cfg: &DecoderConfig, vocab: &Vocab, rng: &mut SaaRng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.san.d;
        let e = cfg.embed_dim;
        let v = vocab.logit_dim(); // embeddings cover real labels + blank
        let mk = |rng: &mut SaaRng, r: usize, c: usize| {
            Tensor::param((0..r * c).map(|_| rng.xavier(r, c)).collect(), &[r, c]).unwrap()
        };
        Ok(Decoder {
            cfg: cfg.clone(),
            vocab: vocab.clone(),
            embed: mk(rng, v, e),
            in_w: mk(rng, d + e, d),
            in_b: Tensor::param(vec![0.0; d], &[d])?,
            blocks: (0..cfg.k).map(|_| SanBlock::new(&cfg.san, rng)).collect::<Result<Vec<_>>>()?,
            out_w: mk(rng, 2 * d, v),
            out_b: Tensor::param(vec![0.0; v], &[v])?,
        })
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = vec![
            (format!("{prefix}.embed"), self.embed.clone()),
            (format!("{prefix}.in.w"), self.in_w.clone()),
            (format!("{prefix}.in.b"), self.in_b.clone()),
            (format!("{prefix}.out.w"), self.out_w.clone()),
            (format!("{prefix}.out.b"), self.out_b.clone()),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(b.named_params(&format!("{prefix}.san{i}")));
        }
        out
    }

    /// Step input: concat(h_{u-1}, embed(z_{u-1})) projected to d.
    /// h_0 is the zero vector and z_0 the blank label.
    fn step_input(&self, h: &Tensor, u: usize, z_prev: usize) -> Result<Tensor> {
        let d = self.cfg.san.d;
        let h_prev = if u == 0 { Tensor::zeros(&[1, d]) } else { h.rows(u - 1, u)? };
        let emb = Tensor::embedding(&self.embed, &[z_prev])?;
        Tensor::concat_cols(&[h_prev, emb])?.matmul(&self.in_w)?.add_row(&self.in_b)
    }

    /// Step output head: concat(san_out, h_u) -> L+1 logits.
    fn step_output(&self, san_out: &Tensor, h: &Tensor, u: usize) -> Result<DecoderStep> {
        let pre_logit = Tensor::concat_cols(&[san_out.clone(), h.rows(u, u + 1)?])?;
        let logits = pre_logit.matmul(&self.out_w)?.add_row(&self.out_b)?;
        Ok(DecoderStep { pre_logit, logits })
    }

    fn decoder_bias_row(&self, u: usize) -> Vec<f64> {
        // causal contributes zero for keys <= u; proximity is -ln(1+dist)
        (0..=u).map(|j| -(1.0 + (u - j) as f64).ln()).collect()
    }

    /// Run the decoder over all U frames, producing the alignment lattice
    /// and the greedy argmax path. Identical procedure at train and
    /// inference time.
    pub fn run(&self, states: &AcousticStates, train: bool, rng: &mut SaaRng) -> Result<(AlignmentLattice, Vec<usize>)> {
        self.run_with(states, train, rng, |_u, step| Ok(step.logits.clone()))
    }

    /// Like `run`, but the per-step logits may be replaced (LM fusion hooks
    /// in here). The mapping receives the step index and the baseline step
    /// outputs and returns the logits to use for the lattice and feedback.
    pub fn run_with(
        &self,
        states: &AcousticStates,
        train: bool,
        rng: &mut SaaRng,
        mut logits_of: impl FnMut(usize, &DecoderStep) -> Result<Tensor>,
    ) -> Result<(AlignmentLattice, Vec<usize>)> {
        let h = &states.h;
        let frames = states.len();
        if frames == 0 {
            return Err(SaaError::contract("decoder_run", "no acoustic frames"));
        }
        let mut caches: Vec<SANCache> = self.blocks.iter().map(|_| SANCache::new(self.cfg.san.h)).collect();
        let mut z: Vec<usize> = Vec::with_capacity(frames);
        let mut rows: Vec<Tensor> = Vec::with_capacity(frames);
        for u in 0..frames {
            let z_prev = if u == 0 { self.vocab.blank_id() } else { z[u - 1] };
            let mut x = self.step_input(h, u, z_prev)?;
            let bias_row = self.decoder_bias_row(u);
            for (block, cache) in self.blocks.iter().zip(&mut caches) {
                x = block.forward_incremental(&x, cache, &bias_row, train, rng)?;
            }
            let step = self.step_output(&x, h, u)?;
            let logits = logits_of(u, &step)?;
            let lp = logits.log_softmax_rows()?;
            z.push(argmax(&lp.data()));
            rows.push(lp);
        }
        let lattice = AlignmentLattice { log_probs: Tensor::concat_rows(&rows)? };
        Ok((lattice, z))
    }

    /// Greedy decoding: blank-removal of the argmax path, eval mode.
    pub fn decode_greedy(&self, states: &AcousticStates) -> Result<Vec<usize>> {
        let mut rng = SaaRng::from_seed(0); // eval mode draws nothing
        let (_, z) = self.run(states, false, &mut rng)?;
        Ok(beta_collapse(&z, self.vocab.blank_id()))
    }
}

/// Argmax with ties broken by lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// The mapping beta: remove blanks, keep everything else in order. Unlike
/// standard CTC there is no merging of repeated labels.
pub fn beta_collapse(z: &[usize], blank_id: usize) -> Vec<usize> {
    z.iter().copied().filter(|&l| l != blank_id).collect()
}

/// Alignment loss -log sum_{z in beta^-1(y)} prod_u p_u(z_u) by the forward
/// recursion alpha(u,n) = alpha(u-1,n) p_u(blank) + alpha(u-1,n-1) p_u(y_n),
/// in log space, differentiable through the lattice.
pub fn rna_loss_dp(lattice: &AlignmentLattice, target: &[usize], blank_id: usize) -> Result<Tensor> {
    let frames = lattice.frames();
    let n = target.len();
    if n > frames {
        return Err(SaaError::InfeasibleAlignment { target_len: n, frames });
    }
    if let Some(&bad) = target.iter().find(|&&l| l >= blank_id) {
        return Err(SaaError::contract(
            "rna_loss_dp",
            format!("target label {} is not a real label (blank={})", bad, blank_id),
        ));
    }
    let lp = &lattice.log_probs;
    // alpha[n] after consuming u frames; None marks log(0)
    let mut alpha: Vec<Option<Tensor>> = vec![None; n + 1];
    alpha[0] = Some(Tensor::scalar(0.0));
    for u in 0..frames {
        let mut next: Vec<Option<Tensor>> = vec![None; n + 1];
        let p_blank = lp.at(&[u, blank_id])?;
        for k in 0..=n.min(u + 1) {
            let stay = alpha[k].as_ref().map(|a| a.add(&p_blank)).transpose()?;
            let emit = if k > 0 {
                match alpha[k - 1].as_ref() {
                    Some(a) => Some(a.add(&lp.at(&[u, target[k - 1]])?)?),
                    None => None,
                }
            } else {
                None
            };
            next[k] = match (stay, emit) {
                (Some(s), Some(e)) => Some(Tensor::logaddexp(&s, &e)?),
                (Some(s), None) => Some(s),
                (None, Some(e)) => Some(e),
                (None, None) => None,
            };
        }
        alpha = next;
    }
    let total = alpha[n]
        .take()
        .ok_or_else(|| SaaError::numerical("rna_loss_dp", "no feasible alignment path"))?;
    Ok(total.scale(-1.0))
}

/// Enumeration oracle for the alignment loss: sums over every length-U
/// label sequence whose blank-removal equals the target. Desk scale only.
pub fn rna_loss_bruteforce(lattice: &AlignmentLattice, target: &[usize], blank_id: usize) -> Result<f64> {
    let frames = lattice.frames();
    let dim = lattice.label_dim();
    let total = (dim as f64).powi(frames as i32);
    if total > 1e7 {
        return Err(SaaError::OracleSize(format!(
            "{}^{} alignments exceed the 1e7 enumeration budget",
            dim, frames
        )));
    }
    if target.len() > frames {
        return Err(SaaError::InfeasibleAlignment { target_len: target.len(), frames });
    }
    let lp = lattice.log_probs.to_vec();
    let mut log_terms: Vec<f64> = Vec::new();
    let mut z = vec![0usize; frames];
    loop {
        if beta_collapse(&z, blank_id) == target {
            let score: f64 = z.iter().enumerate().map(|(u, &l)| lp[u * dim + l]).sum();
            log_terms.push(score);
        }
        // odometer increment
        let mut pos = 0;
        loop {
            if pos == frames {
                let mx = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if !mx.is_finite() {
                    return Err(SaaError::numerical("rna_loss_bruteforce", "no matching alignment"));
                }
                let s: f64 = log_terms.iter().map(|v| (v - mx).exp()).sum();
                return Ok(-(mx + s.ln()));
            }
            z[pos] += 1;
            if z[pos] < dim {
                break;
            }
            z[pos] = 0;
            pos += 1;
        }
    }
}

/// Confidence penalty: -sum_u H(p_u). Adding lambda times this to the loss
/// penalizes low-entropy (overconfident) frame distributions.
pub fn confidence_penalty(lattice: &AlignmentLattice) -> Result<Tensor> {
    // -H = sum p * log p = sum exp(lp) * lp
    let lp = &lattice.log_probs;
    lp.exp_t().mul(lp).map(|t| t.sum())
}
