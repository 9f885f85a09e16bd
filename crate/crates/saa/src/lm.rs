//! Character-level SAN language model, its joint attachment to the decoder
//! via blank substitution and attention masking, and the fusion head.
//!
//! The LM never sees blanks: blank steps repeat the most recent non-blank
//! label at the input and are masked out as attention keys. The LM carries
//! no positional information at all (no proximity bias), so repeating an
//! input at a masked position reproduces the previous LM state exactly.
//! During joint training only the fusion head receives gradient; the SAA
//! and LM parameters are frozen.

use crate::decoder::{argmax, beta_collapse, AlignmentLattice, Decoder, DecoderStep, Vocab};
use crate::encoder::AcousticStates;
use crate::error::{Result, SaaError};
use crate::rng::SaaRng;
use crate::san::{AttentionBias, SANCache, SANConfig, SanBlock, MASK_NEG};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct LMConfig {
    pub layers: usize,
    pub san: SANConfig,
    /// Kept as a knob for separate LM experiments; joint training requires
    /// false (the positional distance changes between separate and joint
    /// use, so the bias is abandoned).
    pub use_proximity_bias: bool,
}

impl LMConfig {
    pub fn full_scale() -> Self {
        let mut san = SANConfig::full_scale();
        san.residual_dropout = 0.2;
        san.attention_dropout = 0.2;
        LMConfig { layers: 3, san, use_proximity_bias: false }
    }

    pub fn desk() -> Self {
        let mut san = SANConfig::desk();
        san.residual_dropout = 0.2;
        san.attention_dropout = 0.2;
        LMConfig { layers: 2, san, use_proximity_bias: false }
    }

    pub fn validate(&self) -> Result<()> {
        self.san.validate()?;
        if self.layers < 1 {
            return Err(SaaError::Config("LM needs at least one layer".into()));
        }
        Ok(())
    }
}

/// Blank-substituted LM input stream. Position 0 is <sos>; position u
/// carries z_u when it is a real label, otherwise it repeats the most
/// recent non-blank label. `legal` marks positions visible as attention
/// keys (position 0 and every original non-blank).
#[derive(Debug, Clone, PartialEq)]
pub struct LMStream {
    pub inputs: Vec<usize>,
    pub legal: Vec<bool>,
}

/// Apply the substitution rule to an alignment prefix. Chained blanks
/// repeat the most recent non-blank label; a run of leading blanks repeats
/// <sos>.
pub fn blank_substitute(z: &[usize], vocab: &Vocab) -> LMStream {
    let mut inputs = Vec::with_capacity(z.len() + 1);
    let mut legal = Vec::with_capacity(z.len() + 1);
    inputs.push(vocab.sos_id());
    legal.push(true);
    for &label in z {
        if label == vocab.blank_id() {
            inputs.push(*inputs.last().unwrap());
            legal.push(false);
        } else {
            inputs.push(label);
            legal.push(true);
        }
    }
    LMStream { inputs, legal }
}

/// Additive attention bias for the substituted stream: causal, and illegal
/// positions are suppressed as keys everywhere.
pub fn lm_attention_mask(legal: &[bool]) -> AttentionBias {
    let m = legal.len();
    let mut values = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            if j > i || !legal[j] {
                values[i * m + j] = MASK_NEG;
            }
        }
    }
    AttentionBias::from_values(m, m, values).unwrap()
}

/// Incremental LM state for one decoding stream.
pub struct LmStreamState {
    caches: Vec<SANCache>,
    last_hidden: Option<Tensor>,
    pos: usize,
}

pub struct Lm {
    pub cfg: LMConfig,
    pub vocab: Vocab,
    pub(crate) embed: Tensor,
    pub(crate) blocks: Vec<SanBlock>,
    pub(crate) out_w: Tensor,
    pub(crate) out_b: Tensor,
}

impl Lm {
    pub fn new(cfg: &LMConfig, vocab: &Vocab, rng: &mut SaaRng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.san.d;
        let l = vocab.n_labels;
        let mk = |rng: &mut SaaRng, r: usize, c: usize| {
            Tensor::param((0..r * c).map(|_| rng.xavier(r, c)).collect(), &[r, c]).unwrap()
        };
        Ok(Lm {
            cfg: cfg.clone(),
            vocab: vocab.clone(),
            // rows 0..L-1 are real labels, row L is <sos>
            embed: mk(rng, l + 1, d),
            blocks: (0..cfg.layers).map(|_| SanBlock::new(&cfg.san, rng)).collect::<Result<Vec<_>>>()?,
            out_w: mk(rng, d, l),
            out_b: Tensor::param(vec![0.0; l], &[l])?,
        })
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = vec![
            (format!("{prefix}.embed"), self.embed.clone()),
            (format!("{prefix}.out.w"), self.out_w.clone()),
            (format!("{prefix}.out.b"), self.out_b.clone()),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(b.named_params(&format!("{prefix}.san{i}")));
        }
        out
    }

    pub fn hidden_dim(&self) -> usize {
        self.cfg.san.d
    }

    fn embed_index(&self, token: usize) -> Result<usize> {
        if token < self.vocab.n_labels {
            Ok(token)
        } else if token == self.vocab.sos_id() {
            Ok(self.vocab.n_labels)
        } else {
            Err(SaaError::contract(
                "lm_forward",
                format!("token {} is not a real label or <sos> (blank is forbidden)", token),
            ))
        }
    }

    fn stack_bias(&self, m: usize) -> AttentionBias {
        let causal = AttentionBias::causal(m, m, 0);
        if self.cfg.use_proximity_bias {
            causal.compose(&AttentionBias::proximity(m, m, 0)).unwrap()
        } else {
            causal
        }
    }

    /// Hidden states of the causal SAN stack over a token sequence, with an
    /// optional custom attention bias (joint-mode masking).
    pub fn hidden_states(
        &self,
        tokens: &[usize],
        bias: Option<&AttentionBias>,
        train: bool,
        rng: &mut SaaRng,
    ) -> Result<Tensor> {
        if tokens.is_empty() {
            return Err(SaaError::contract("lm_forward", "empty token sequence"));
        }
        let ids = tokens.iter().map(|&t| self.embed_index(t)).collect::<Result<Vec<_>>>()?;
        let mut x = Tensor::embedding(&self.embed, &ids)?;
        let default_bias = self.stack_bias(tokens.len());
        let bias = bias.unwrap_or(&default_bias);
        for b in &self.blocks {
            x = b.forward(&x, bias, train, rng)?;
        }
        Ok(x)
    }

    /// Next-token log-distributions: position m predicts token m+1.
    /// Output shape [M, L] over real labels.
    pub fn forward(&self, tokens: &[usize], train: bool, rng: &mut SaaRng) -> Result<Tensor> {
        let h = self.hidden_states(tokens, None, train, rng)?;
        h.matmul(&self.out_w)?.add_row(&self.out_b)?.log_softmax_rows()
    }

    pub fn start_stream(&self) -> LmStreamState {
        LmStreamState {
            caches: self.blocks.iter().map(|_| SANCache::new(self.cfg.san.h)).collect(),
            last_hidden: None,
            pos: 0,
        }
    }

    /// Advance the stream by one legal token and return the new hidden
    /// state. Blank decoder steps must not call this; they reuse
    /// `state.last_hidden` instead (equivalent to the masked full forward,
    /// since the LM carries no positional information).
    pub fn advance(
        &self,
        state: &mut LmStreamState,
        token: usize,
        train: bool,
        rng: &mut SaaRng,
    ) -> Result<Tensor> {
        let id = self.embed_index(token)?;
        let mut x = Tensor::embedding(&self.embed, &[id])?;
        let bias_row = vec![0.0; state.pos + 1];
        for (block, cache) in self.blocks.iter().zip(&mut state.caches) {
            x = block.forward_incremental(&x, cache, &bias_row, train, rng)?;
        }
        state.pos += 1;
        state.last_hidden = Some(x.clone());
        Ok(x)
    }

    pub fn last_hidden(&self, state: &LmStreamState) -> Option<Tensor> {
        state.last_hidden.clone()
    }
}

/// Average per-token perplexity of the LM over a corpus of label
/// sequences: exp(mean negative log-likelihood).
pub fn perplexity(lm: &Lm, corpus: &[Vec<usize>]) -> Result<f64> {
    let mut rng = SaaRng::from_seed(0); // eval mode draws nothing
    let mut total_nll = 0.0;
    let mut total_tokens = 0usize;
    for utt in corpus {
        if utt.is_empty() {
            continue;
        }
        let mut tokens = vec![lm.vocab.sos_id()];
        tokens.extend_from_slice(utt);
        let lp = lm.forward(&tokens[..tokens.len() - 1], false, &mut rng)?;
        total_nll += lp.nll_gather(utt)?.item();
        total_tokens += utt.len();
    }
    if total_tokens == 0 {
        return Err(SaaError::Data("perplexity over an empty corpus".into()));
    }
    Ok((total_nll / total_tokens as f64).exp())
}

/// Fusion head: logits = linear(concat(decoder pre-logit state,
/// sigmoid(linear(LM state)))). Initialized to reproduce the baseline
/// decoder head exactly (LM path weights zero), so joint training starts
/// at baseline quality. Inputs are detached: gradient reaches only the
/// fusion parameters.
pub struct FusionHead {
    pub gate_w: Tensor,
    pub gate_b: Tensor,
    pub out_w: Tensor,
    pub out_b: Tensor,
    decoder_state_dim: usize,
    lm_dim: usize,
}

impl FusionHead {
    /// Baseline-preserving construction from the decoder's output head.
    pub fn from_decoder(decoder: &Decoder, lm_dim: usize) -> Result<Self> {
        let two_d = decoder.out_w.shape()[0];
        let v = decoder.out_w.shape()[1];
        let mut out_w = vec![0.0; (two_d + lm_dim) * v];
        let dec_w = decoder.out_w.to_vec();
        out_w[..two_d * v].copy_from_slice(&dec_w);
        Ok(FusionHead {
            gate_w: Tensor::param(vec![0.0; lm_dim * lm_dim], &[lm_dim, lm_dim])?,
            gate_b: Tensor::param(vec![0.0; lm_dim], &[lm_dim])?,
            out_w: Tensor::param(out_w, &[two_d + lm_dim, v])?,
            out_b: Tensor::param(decoder.out_b.to_vec(), &[v])?,
            decoder_state_dim: two_d,
            lm_dim,
        })
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, Tensor)> {
        vec![
            (format!("{prefix}.gate.w"), self.gate_w.clone()),
            (format!("{prefix}.gate.b"), self.gate_b.clone()),
            (format!("{prefix}.out.w"), self.out_w.clone()),
            (format!("{prefix}.out.b"), self.out_b.clone()),
        ]
    }

    pub fn params(&self) -> Vec<Tensor> {
        self.named_params("").into_iter().map(|(_, t)| t).collect()
    }

    /// Fused logits for one step. Both inputs are detached from their
    /// graphs; only fusion parameters receive gradient.
    pub fn fused_logits(&self, pre_logit: &Tensor, lm_state: &Tensor) -> Result<Tensor> {
        if pre_logit.shape() != [1, self.decoder_state_dim] || lm_state.shape() != [1, self.lm_dim] {
            return Err(SaaError::shape(
                "fused_logits",
                format!(
                    "pre_logit {:?} (want [1,{}]), lm_state {:?} (want [1,{}])",
                    pre_logit.shape(),
                    self.decoder_state_dim,
                    lm_state.shape(),
                    self.lm_dim
                ),
            ));
        }
        let dec = pre_logit.detach();
        let lm = lm_state.detach();
        let gate = lm.matmul(&self.gate_w)?.add_row(&self.gate_b)?.sigmoid();
        Tensor::concat_cols(&[dec, gate])?.matmul(&self.out_w)?.add_row(&self.out_b)
    }
}

/// Run the decoder jointly with the LM through the fusion head. The LM
/// advances only on non-blank emissions (blank steps reuse the previous LM
/// state, which equals the masked full forward) and the fused logits drive
/// both the lattice and the argmax feedback.
pub fn joint_run(
    decoder: &Decoder,
    lm: &Lm,
    fusion: &FusionHead,
    states: &AcousticStates,
    train: bool,
    rng: &mut SaaRng,
) -> Result<(AlignmentLattice, Vec<usize>)> {
    if lm.cfg.use_proximity_bias {
        return Err(SaaError::contract(
            "joint_run",
            "joint mode requires an LM without proximity bias",
        ));
    }
    let blank = decoder.vocab.blank_id();
    let sos = lm.vocab.sos_id();
    let mut lm_rng = rng.fork(0x4c4d); // LM dropout draws, disjoint from decoder's
    let mut lm_state = lm.start_stream();
    let mut prev_logits: Option<Vec<f64>> = None;
    decoder.run_with(states, train, rng, |u, step: &DecoderStep| {
        if u == 0 {
            lm.advance(&mut lm_state, sos, train, &mut lm_rng)?;
        } else {
            // log-softmax is strictly monotone, so the argmax of the fused
            // logits equals the decoder's feedback label z_{u-1}
            let z_prev = argmax(prev_logits.as_ref().unwrap());
            if z_prev != blank {
                lm.advance(&mut lm_state, z_prev, train, &mut lm_rng)?;
            }
        }
        let hidden = lm.last_hidden(&lm_state).unwrap();
        let fused = fusion.fused_logits(&step.pre_logit, &hidden)?;
        prev_logits = Some(fused.to_vec());
        Ok(fused)
    })
}

/// Greedy joint decoding: blank-removal of the fused argmax path, eval mode.
pub fn joint_decode_greedy(
    decoder: &Decoder,
    lm: &Lm,
    fusion: &FusionHead,
    states: &AcousticStates,
) -> Result<Vec<usize>> {
    let mut rng = SaaRng::from_seed(0); // eval mode draws nothing
    let (_, z) = joint_run(decoder, lm, fusion, states, false, &mut rng)?;
    Ok(beta_collapse(&z, decoder.vocab.blank_id()))
}
