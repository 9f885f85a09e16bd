//! Training loops: the full model (encoder + decoder), the language model,
//! and fusion-only joint training, plus greedy evaluation.
//!
//! The training loss is rna_loss + lambda * confidence_penalty per
//! utterance. Infeasible utterances (target longer than the encoded frame
//! count) are skipped with a counted warning, or turned into a hard error
//! in strict mode.

use std::path::Path;

use serde::Serialize;

use crate::data::{batch_indices, FeatureStats, Utterance};
use crate::decoder::{confidence_penalty, rna_loss_dp, Decoder, DecoderConfig, Vocab};
use crate::encoder::{ChunkSpec, Encoder, EncoderConfig};
use crate::error::{Result, SaaError};
use crate::lm::{joint_run, FusionHead, Lm};
use crate::metrics::{corpus_cer, CerReport};
use crate::optim::{Adam, AdamConfig};
use crate::rng::SaaRng;
use crate::tensor::{load_checkpoint, load_into, save_checkpoint, Tensor};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: AdamConfig,
    /// Confidence-penalty weight.
    pub lambda: f64,
    /// Fail on infeasible utterances instead of skipping them.
    pub strict: bool,
    /// Stop as soon as the dev CER drops to this value or below.
    pub target_dev_cer: Option<f64>,
}

impl TrainConfig {
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 8,
            optim: AdamConfig::desk(),
            lambda: 0.2,
            strict: false,
            target_dev_cer: None,
        }
    }
}

/// One line of the JSON-lines metrics log.
#[derive(Debug, Clone, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_cer: f64,
    pub skipped: usize,
}

pub struct TrainOutcome {
    pub history: Vec<EpochMetrics>,
    pub best_dev_cer: f64,
    pub best_epoch: usize,
}

/// Encoder + decoder + the training-set normalization statistics.
pub struct SaaModel {
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub stats: Option<FeatureStats>,
}

impl SaaModel {
    pub fn new(
        enc_cfg: &EncoderConfig,
        dec_cfg: &DecoderConfig,
        vocab: &Vocab,
        rng: &mut SaaRng,
    ) -> Result<Self> {
        if enc_cfg.san.d != dec_cfg.san.d {
            return Err(SaaError::Config(format!(
                "encoder d={} and decoder d={} must match",
                enc_cfg.san.d, dec_cfg.san.d
            )));
        }
        Ok(SaaModel {
            encoder: Encoder::new(enc_cfg, rng)?,
            decoder: Decoder::new(dec_cfg, vocab, rng)?,
            stats: None,
        })
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = self.encoder.named_params("enc");
        out.extend(self.decoder.named_params("dec"));
        out
    }

    pub fn params(&self) -> Vec<Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    fn normalized(&self, features: &Tensor) -> Result<Tensor> {
        match &self.stats {
            Some(s) => s.apply(features),
            None => Ok(features.clone()),
        }
    }

    fn encode(
        &self,
        features: &Tensor,
        chunk: Option<&ChunkSpec>,
        train: bool,
        rng: &mut SaaRng,
    ) -> Result<crate::encoder::AcousticStates> {
        let x = self.normalized(features)?;
        match chunk {
            Some(spec) => self.encoder.forward_streaming(&x, spec, train, rng),
            None => self.encoder.forward(&x, train, rng),
        }
    }

    /// Training loss for one utterance: rna_loss + lambda * penalty.
    pub fn utterance_loss(
        &self,
        u: &Utterance,
        lambda: f64,
        chunk: Option<&ChunkSpec>,
        train: bool,
        rng: &mut SaaRng,
    ) -> Result<Tensor> {
        let states = self.encode(&u.features, chunk, train, rng)?;
        let (lattice, _) = self.decoder.run(&states, train, rng)?;
        let loss = rna_loss_dp(&lattice, &u.target, self.decoder.vocab.blank_id())?;
        if lambda == 0.0 {
            Ok(loss)
        } else {
            loss.add(&confidence_penalty(&lattice)?.scale(lambda))
        }
    }

    /// Greedy transcription (eval mode).
    pub fn transcribe(&self, features: &Tensor, chunk: Option<&ChunkSpec>) -> Result<Vec<usize>> {
        let mut rng = SaaRng::from_seed(0); // eval mode draws nothing
        let states = self.encode(features, chunk, false, &mut rng)?;
        self.decoder.decode_greedy(&states)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors = self.named_params();
        if let Some(s) = &self.stats {
            tensors.extend(s.to_named_tensors());
        }
        save_checkpoint(path, &tensors)
    }

    /// Load parameters (validating every shape) and normalization
    /// statistics from a checkpoint.
    pub fn load(&mut self, path: &Path) -> Result<()> {
        load_into(path, &self.named_params())?;
        let map = load_checkpoint(path)?;
        self.stats =
            if map.contains_key("norm.mean") { Some(FeatureStats::from_loaded(&map)?) } else { None };
        Ok(())
    }
}

/// Greedy-decode a whole set and score it.
pub fn evaluate(
    model: &SaaModel,
    set: &[Utterance],
    chunk: Option<&ChunkSpec>,
) -> Result<(CerReport, Vec<(String, Vec<usize>, Vec<usize>)>)> {
    let mut per_utt = Vec::with_capacity(set.len());
    let mut pairs = Vec::with_capacity(set.len());
    for u in set {
        let hyp = model.transcribe(&u.features, chunk)?;
        pairs.push((u.target.clone(), hyp.clone()));
        per_utt.push((u.id.clone(), u.target.clone(), hyp));
    }
    Ok((corpus_cer(&pairs), per_utt))
}

/// Train the full model. Fits normalization statistics on the training set
/// if the model has none, tracks the best dev CER, and optionally saves the
/// best checkpoint. `on_epoch` receives each metrics line as it is
/// produced.
pub fn train_saa(
    model: &mut SaaModel,
    train_set: &[Utterance],
    dev_set: &[Utterance],
    cfg: &TrainConfig,
    chunk: Option<&ChunkSpec>,
    seed: u64,
    best_path: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    if model.stats.is_none() {
        model.stats = Some(FeatureStats::fit(train_set)?);
    }
    let mut rng = SaaRng::from_seed(seed);
    let mut opt = Adam::new(model.params(), cfg.optim.clone())?;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best_dev_cer = f64::INFINITY;
    let mut best_epoch = 0;
    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        let mut skipped = 0usize;
        for batch in batch_indices(train_set.len(), cfg.batch_size, Some(&mut rng)) {
            let mut any = false;
            for &i in &batch {
                let u = &train_set[i];
                match model.utterance_loss(u, cfg.lambda, chunk, true, &mut rng) {
                    Ok(loss) => {
                        loss_sum += loss.item();
                        loss_count += 1;
                        loss.backward()?;
                        any = true;
                    }
                    Err(SaaError::InfeasibleAlignment { target_len, frames }) => {
                        if cfg.strict {
                            return Err(SaaError::InfeasibleAlignment { target_len, frames });
                        }
                        skipped += 1;
                    }
                    Err(e) => return Err(e),
                }
            }
            if any {
                opt.step();
            }
        }
        let (report, _) = evaluate(model, dev_set, chunk)?;
        let metrics = EpochMetrics {
            epoch,
            train_loss: if loss_count > 0 { loss_sum / loss_count as f64 } else { f64::NAN },
            dev_cer: report.cer(),
            skipped,
        };
        if metrics.dev_cer < best_dev_cer {
            best_dev_cer = metrics.dev_cer;
            best_epoch = epoch;
            if let Some(p) = best_path {
                model.save(p)?;
            }
        }
        on_epoch(&metrics);
        let reached = cfg.target_dev_cer.is_some_and(|t| metrics.dev_cer <= t);
        history.push(metrics);
        if reached {
            break;
        }
    }
    Ok(TrainOutcome { history, best_dev_cer, best_epoch })
}

/// One LM metrics line: mean train NLL and corpus perplexity.
#[derive(Debug, Clone, Serialize)]
pub struct LmEpochMetrics {
    pub epoch: usize,
    pub train_nll: f64,
    pub dev_ppl: f64,
}

/// Train the language model on a label corpus with next-token NLL.
pub fn train_lm(
    lm: &Lm,
    train_corpus: &[Vec<usize>],
    dev_corpus: &[Vec<usize>],
    cfg: &TrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&LmEpochMetrics),
) -> Result<Vec<LmEpochMetrics>> {
    let usable: Vec<&Vec<usize>> = train_corpus.iter().filter(|s| !s.is_empty()).collect();
    if usable.is_empty() {
        return Err(SaaError::Data("LM training corpus has no non-empty lines".into()));
    }
    let mut rng = SaaRng::from_seed(seed);
    let params: Vec<Tensor> = lm.named_params("lm").into_iter().map(|(_, t)| t).collect();
    let mut opt = Adam::new(params, cfg.optim.clone())?;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut nll_sum = 0.0;
        let mut token_count = 0usize;
        for batch in batch_indices(usable.len(), cfg.batch_size, Some(&mut rng)) {
            for &i in &batch {
                let y = usable[i];
                let mut tokens = vec![lm.vocab.sos_id()];
                tokens.extend_from_slice(&y[..y.len() - 1]);
                let lp = lm.forward(&tokens, true, &mut rng)?;
                let loss = lp.nll_gather(y)?;
                nll_sum += loss.item();
                token_count += y.len();
                loss.backward()?;
            }
            opt.step();
        }
        let metrics = LmEpochMetrics {
            epoch,
            train_nll: nll_sum / token_count as f64,
            dev_ppl: crate::lm::perplexity(lm, dev_corpus)?,
        };
        on_epoch(&metrics);
        history.push(metrics);
    }
    Ok(history)
}

/// Joint training: SAA and LM are frozen (the fusion head detaches its
/// inputs, so their parameters receive no gradient); only the fusion
/// parameters are optimized.
pub fn joint_train(
    model: &SaaModel,
    lm: &Lm,
    fusion: &FusionHead,
    train_set: &[Utterance],
    dev_set: &[Utterance],
    cfg: &TrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    let mut rng = SaaRng::from_seed(seed);
    let mut opt = Adam::new(fusion.params(), cfg.optim.clone())?;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best_dev_cer = f64::INFINITY;
    let mut best_epoch = 0;
    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        let mut skipped = 0usize;
        for batch in batch_indices(train_set.len(), cfg.batch_size, Some(&mut rng)) {
            let mut any = false;
            for &i in &batch {
                let u = &train_set[i];
                let states = model.encode(&u.features, None, false, &mut rng)?;
                let (lattice, _) = joint_run(&model.decoder, lm, fusion, &states, true, &mut rng)?;
                match rna_loss_dp(&lattice, &u.target, model.decoder.vocab.blank_id()) {
                    Ok(loss) => {
                        let loss = if cfg.lambda == 0.0 {
                            loss
                        } else {
                            loss.add(&confidence_penalty(&lattice)?.scale(cfg.lambda))?
                        };
                        loss_sum += loss.item();
                        loss_count += 1;
                        loss.backward()?;
                        any = true;
                    }
                    Err(SaaError::InfeasibleAlignment { target_len, frames }) => {
                        if cfg.strict {
                            return Err(SaaError::InfeasibleAlignment { target_len, frames });
                        }
                        skipped += 1;
                    }
                    Err(e) => return Err(e),
                }
            }
            if any {
                opt.step();
            }
        }
        let dev_cer = joint_evaluate(model, lm, fusion, dev_set)?.cer();
        let metrics = EpochMetrics {
            epoch,
            train_loss: if loss_count > 0 { loss_sum / loss_count as f64 } else { f64::NAN },
            dev_cer,
            skipped,
        };
        if metrics.dev_cer < best_dev_cer {
            best_dev_cer = metrics.dev_cer;
            best_epoch = epoch;
        }
        on_epoch(&metrics);
        history.push(metrics);
    }
    Ok(TrainOutcome { history, best_dev_cer, best_epoch })
}

/// Greedy joint decoding over a set.
pub fn joint_evaluate(
    model: &SaaModel,
    lm: &Lm,
    fusion: &FusionHead,
    set: &[Utterance],
) -> Result<CerReport> {
    let mut pairs = Vec::with_capacity(set.len());
    for u in set {
        let mut rng = SaaRng::from_seed(0);
        let states = model.encode(&u.features, None, false, &mut rng)?;
        let hyp = crate::lm::joint_decode_greedy(&model.decoder, lm, fusion, &states)?;
        pairs.push((u.target.clone(), hyp));
    }
    Ok(corpus_cer(&pairs))
}
