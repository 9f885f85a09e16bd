//! Command-line surface: train, eval, stream, gradcheck and lm
//! subcommands over the flat key=value configuration format.
//!
//! Exit codes: 0 success, 1 usage/configuration, 2 numerical failure,
//! 3 data error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::exit;

use clap::{Parser, Subcommand};

use saa::config::RunConfig;
use saa::data::{load_dataset, read_features, read_label_corpus, Utterance};
use saa::decoder::{confidence_penalty, rna_loss_dp, AlignmentLattice, Vocab};
use saa::encoder::{chunk_segment, AcousticStates, ChunkSpec};
use saa::lm::{FusionHead, Lm};
use saa::tensor::{grad_check_params, load_into, save_checkpoint};
use saa::train::{evaluate, joint_evaluate, joint_train, train_lm, train_saa, SaaModel};
use saa::{Result, SaaError, SaaRng, Tensor};

#[derive(Parser)]
#[command(name = "saa", about = "Self-attention aligner toolkit", disable_version_flag = true)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct Common {
    /// Flat key=value configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the chunk geometry as past,current,future (frames).
    #[arg(long)]
    chunk: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the full model, or (with --joint) the LM fusion head only.
    Train {
        #[command(flatten)]
        common: Common,
        /// Fail on infeasible utterances instead of skipping them.
        #[arg(long)]
        strict: bool,
        /// Joint training: freeze model and LM, optimize fusion only.
        #[arg(long)]
        joint: bool,
    },
    /// Greedy-decode the dev set from a checkpoint and report CER.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint path; defaults to <out_dir>/model.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Emit partial hypotheses chunk-by-chunk for one feature file.
    Stream {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Binary feature file; a synthetic utterance is generated when
        /// omitted.
        features: Option<PathBuf>,
    },
    /// Run the finite-difference gradient suite over all composite ops.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Negative control: inject a wrong gradient and expect detection.
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Language model training and perplexity evaluation.
    Lm {
        #[command(flatten)]
        common: Common,
        /// "train" or "eval".
        action: String,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        exit(exit_code(&e));
    }
}

fn exit_code(e: &SaaError) -> i32 {
    match e {
        SaaError::Config(_) => 1,
        SaaError::Shape { .. }
        | SaaError::Contract { .. }
        | SaaError::Numerical { .. }
        | SaaError::InfeasibleAlignment { .. }
        | SaaError::OracleSize(_) => 2,
        SaaError::Data(_) | SaaError::Checkpoint(_) | SaaError::UndefinedCer | SaaError::Io(_) => 3,
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::desk(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(spec) = &common.chunk {
        let parts: Vec<&str> = spec.split(',').collect();
        let nums: Vec<usize> = parts
            .iter()
            .map(|p| p.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| SaaError::Config(format!("bad --chunk '{}'", spec)))?;
        let [past, current, future] = nums[..] else {
            return Err(SaaError::Config("--chunk wants past,current,future".into()));
        };
        cfg.chunk = Some(ChunkSpec::new(past, current, future));
    }
    Ok(cfg)
}

/// Training and dev sets from manifests if configured, otherwise from the
/// synthetic task.
fn resolve_datasets(cfg: &RunConfig) -> Result<(Vec<Utterance>, Vec<Utterance>)> {
    if let (Some(tr), Some(dv)) = (&cfg.data.train_manifest, &cfg.data.dev_manifest) {
        return Ok((load_dataset(tr)?, load_dataset(dv)?));
    }
    let Some(sy) = &cfg.synth else {
        return Err(SaaError::Config(
            "no data: set data.train_manifest/data.dev_manifest or synth.train_items".into(),
        ));
    };
    let task = saa::data::SynthTask::new(sy.task.clone())?;
    Ok((
        task.generate(sy.train_items, sy.train_seed, "train-"),
        task.generate(sy.dev_items, sy.dev_seed, "dev-"),
    ))
}

/// LM corpora: explicit text files if configured, otherwise the synthetic
/// target sequences.
fn resolve_lm_corpora(cfg: &RunConfig) -> Result<(Vec<Vec<usize>>, Vec<Vec<usize>>)> {
    if let (Some(tr), Some(dv)) = (&cfg.data.lm_train, &cfg.data.lm_dev) {
        return Ok((
            read_label_corpus(tr, cfg.vocab_size)?,
            read_label_corpus(dv, cfg.vocab_size)?,
        ));
    }
    let (train_set, dev_set) = resolve_datasets(cfg)?;
    Ok((
        train_set.into_iter().map(|u| u.target).collect(),
        dev_set.into_iter().map(|u| u.target).collect(),
    ))
}

fn build_model(cfg: &RunConfig, seed: u64) -> Result<SaaModel> {
    let mut rng = SaaRng::from_seed(seed);
    SaaModel::new(&cfg.encoder, &cfg.decoder, &Vocab::new(cfg.vocab_size), &mut rng)
}

fn build_lm(cfg: &RunConfig, seed: u64) -> Result<Lm> {
    let mut rng = SaaRng::from_seed(seed.wrapping_add(0x4c4d));
    Lm::new(&cfg.lm, &Vocab::new(cfg.vocab_size), &mut rng)
}

fn write_echo(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.data.out_dir)?;
    fs::write(cfg.data.out_dir.join("config.resolved"), cfg.echo())?;
    Ok(())
}

fn metrics_writer(cfg: &RunConfig, name: &str) -> Result<fs::File> {
    fs::create_dir_all(&cfg.data.out_dir)?;
    Ok(fs::File::create(cfg.data.out_dir.join(name))?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train { common, strict, joint } => {
            let mut cfg = load_config(&common)?;
            cfg.train.strict = cfg.train.strict || strict;
            if joint {
                cmd_joint_train(&cfg)
            } else {
                cmd_train(&cfg)
            }
        }
        Cmd::Eval { common, checkpoint } => {
            let cfg = load_config(&common)?;
            cmd_eval(&cfg, checkpoint.as_deref())
        }
        Cmd::Stream { common, checkpoint, features } => {
            let cfg = load_config(&common)?;
            cmd_stream(&cfg, checkpoint.as_deref(), features.as_deref())
        }
        Cmd::Gradcheck { common, corrupt } => {
            let _ = load_config(&common)?; // validates the file if given
            cmd_gradcheck(corrupt)
        }
        Cmd::Lm { common, action } => {
            let cfg = load_config(&common)?;
            match action.as_str() {
                "train" => cmd_lm_train(&cfg),
                "eval" => cmd_lm_eval(&cfg),
                other => Err(SaaError::Config(format!(
                    "lm action must be 'train' or 'eval', got '{}'",
                    other
                ))),
            }
        }
    }
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    write_echo(cfg)?;
    let (train_set, dev_set) = resolve_datasets(cfg)?;
    println!(
        "training on {} utterances, {} dev, seed {}{}",
        train_set.len(),
        dev_set.len(),
        cfg.seed,
        match &cfg.chunk {
            Some(c) => format!(", streaming {}/{}/{}", c.past, c.current, c.future),
            None => String::new(),
        }
    );
    let mut model = build_model(cfg, cfg.seed)?;
    let best_path = cfg.data.out_dir.join("model.ckpt");
    let mut log = metrics_writer(cfg, "metrics.jsonl")?;
    let outcome = train_saa(
        &mut model,
        &train_set,
        &dev_set,
        &cfg.train,
        cfg.chunk.as_ref(),
        cfg.seed,
        Some(&best_path),
        |m| {
            let line = serde_json::to_string(m).expect("metrics serialize");
            println!("{line}");
            let _ = writeln!(log, "{line}");
        },
    )?;
    println!(
        "best dev CER {:.4} at epoch {}; checkpoint {}",
        outcome.best_dev_cer,
        outcome.best_epoch,
        best_path.display()
    );
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<()> {
    let ckpt = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.data.out_dir.join("model.ckpt"));
    let mut model = build_model(cfg, cfg.seed)?;
    model.load(&ckpt)?;
    let (_, dev_set) = resolve_datasets(cfg)?;
    if let Some(c) = &cfg.chunk {
        println!("streaming {}/{}/{}", c.past, c.current, c.future);
        println!("latency: {}ms", c.latency_ms().round() as i64);
    }
    let (report, per_utt) = evaluate(&model, &dev_set, cfg.chunk.as_ref())?;
    for (id, reference, hyp) in &per_utt {
        println!(
            "{id}\tref {}\thyp {}",
            format_labels(reference),
            format_labels(hyp)
        );
    }
    println!(
        "corpus CER {:.4} ({} errors / {} reference labels, {} utterances, {} skipped)",
        report.cer(),
        report.total_distance,
        report.total_ref_len,
        report.scored,
        report.skipped
    );
    Ok(())
}

fn cmd_stream(cfg: &RunConfig, checkpoint: Option<&Path>, features: Option<&Path>) -> Result<()> {
    let Some(spec) = cfg.chunk.clone() else {
        return Err(SaaError::Config("stream needs a chunk geometry (--chunk or chunk.*)".into()));
    };
    let ckpt = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.data.out_dir.join("model.ckpt"));
    let mut model = build_model(cfg, cfg.seed)?;
    model.load(&ckpt)?;
    let feats = match features {
        Some(p) => read_features(p)?,
        None => {
            let Some(sy) = &cfg.synth else {
                return Err(SaaError::Config("no feature file and no synth task configured".into()));
            };
            let task = saa::data::SynthTask::new(sy.task.clone())?;
            task.generate(1, sy.dev_seed.wrapping_add(1), "stream-").remove(0).features
        }
    };
    println!("chunks {}/{}/{} hop {}", spec.past, spec.current, spec.future, spec.hop_size());
    println!("latency: {}ms", spec.latency_ms().round() as i64);

    // encode all chunks (each current part depends only on its own window),
    // then decode over growing prefixes: the decoder is causal and greedy,
    // so each partial is a prefix of the final transcript
    let mut rng = SaaRng::from_seed(0);
    let x = match &model.stats {
        Some(s) => s.apply(&feats)?,
        None => feats.clone(),
    };
    let states = model.encoder.forward_streaming(&x, &spec, false, &mut rng)?;
    let chunks = chunk_segment(feats.shape()[0], &spec);
    let d_factor = model.encoder.cfg.downsample_factor();
    let mut emitted = 0usize;
    let mut rows_done = 0usize;
    let mut last_hyp = Vec::new();
    for (i, chunk) in chunks.iter().enumerate() {
        let (c0, c1) = chunk.current;
        rows_done += (c1 - c0).div_ceil(d_factor);
        let prefix = AcousticStates {
            h: states.h.rows(0, rows_done)?,
            downsample_factor: d_factor,
            source_frames: c1,
        };
        last_hyp = model.decoder.decode_greedy(&prefix)?;
        println!("chunk {i}: +{}", format_labels(&last_hyp[emitted..]));
        emitted = last_hyp.len();
    }
    println!("final: {}", format_labels(&last_hyp));
    Ok(())
}

fn format_labels(labels: &[usize]) -> String {
    if labels.is_empty() {
        return "(empty)".into();
    }
    labels.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(" ")
}

/// Finite-difference checks over every composite operation at tiny shapes.
/// The corrupt flag adds a term whose analytic gradient is wrong (a
/// detached copy re-read on every numeric evaluation) as a negative
/// control.
fn cmd_gradcheck(corrupt: bool) -> Result<()> {
    use saa::san::{AttentionBias, SANConfig, SanBlock};

    let tol = 1e-4;
    let mut failures = 0;
    let mut check = |name: &str, report: saa::tensor::GradCheckReport| {
        let ok = report.passes(tol);
        println!("{} {}: max rel err {:.3e}", if ok { "PASS" } else { "FAIL" }, name, report.max_rel_err);
        if !ok {
            println!("  worst: {}", report);
            failures += 1;
        }
    };
    // The corrupted variant adds a detached copy of x: the numeric
    // derivative sees the term (detach re-reads the perturbed data on every
    // evaluation) but the analytic gradient does not.
    fn corrupt_term(corrupt: bool, loss: Tensor, x: &Tensor) -> Result<Tensor> {
        if corrupt {
            loss.add(&x.detach().sum())
        } else {
            Ok(loss)
        }
    }

    let san_cfg = SANConfig { d: 8, h: 2, d_ff: 12, residual_dropout: 0.0, attention_dropout: 0.0 };
    let mut rng = SaaRng::from_seed(17);

    // SAN block
    {
        let block = SanBlock::new(&san_cfg, &mut rng)?;
        let x = Tensor::param((0..5 * 8).map(|_| rng.uniform(-1.0, 1.0)).collect(), &[5, 8])?;
        let params = block.named_params("san");
        let mut named: Vec<(&str, Tensor)> = params.iter().map(|(n, t)| (n.as_str(), t.clone())).collect();
        named.push(("x", x.clone()));
        let bias = AttentionBias::proximity(5, 5, 0);
        let f = {
            let x = x.clone();
            move || {
                let mut r = SaaRng::from_seed(0);
                let y = block.forward(&x, &bias, false, &mut r)?;
                corrupt_term(corrupt, y.mul(&y)?.sum(), &x)
            }
        };
        check("san_block", grad_check_params(&f, &named, 1e-4)?);
    }

    // front-end (conv + MU) and full encoder
    {
        let enc_cfg = saa::encoder::EncoderConfig {
            feature_dim: 5,
            conv_filters: 2,
            n: 1,
            stages: 2,
            pool_stride: 2,
            san: san_cfg.clone(),
        };
        let enc = std::rc::Rc::new(saa::encoder::Encoder::new(&enc_cfg, &mut rng)?);
        let x = Tensor::param((0..10 * 5).map(|_| rng.uniform(-1.0, 1.0)).collect(), &[10, 5])?;
        let params = enc.named_params("enc");
        let mut named: Vec<(&str, Tensor)> = params.iter().map(|(n, t)| (n.as_str(), t.clone())).collect();
        named.push(("x", x.clone()));
        let frontend = {
            let (enc, x) = (enc.clone(), x.clone());
            move || {
                let mut r = SaaRng::from_seed(0);
                let y = enc.frontend_forward(&x, false, &mut r)?;
                corrupt_term(corrupt, y.mul(&y)?.sum(), &x)
            }
        };
        check("frontend_mu", grad_check_params(&frontend, &named, 1e-4)?);
        let full = {
            let (enc, x) = (enc.clone(), x.clone());
            move || {
                let mut r = SaaRng::from_seed(0);
                let s = enc.forward(&x, false, &mut r)?;
                corrupt_term(corrupt, s.h.mul(&s.h)?.sum(), &x)
            }
        };
        check("encoder", grad_check_params(&full, &named, 1e-4)?);
    }

    // decoder run + DP loss + confidence penalty
    {
        let dec_cfg = saa::decoder::DecoderConfig { k: 1, embed_dim: 4, san: san_cfg.clone() };
        let vocab = Vocab::new(3);
        let dec = saa::decoder::Decoder::new(&dec_cfg, &vocab, &mut rng)?;
        let h = Tensor::param((0..4 * 8).map(|_| rng.uniform(-1.0, 1.0)).collect(), &[4, 8])?;
        let params = dec.named_params("dec");
        let mut named: Vec<(&str, Tensor)> = params.iter().map(|(n, t)| (n.as_str(), t.clone())).collect();
        named.push(("h", h.clone()));
        let f = {
            let h = h.clone();
            move || {
                let mut r = SaaRng::from_seed(0);
                let states = AcousticStates {
                    h: h.clone(),
                    downsample_factor: 4,
                    source_frames: 16,
                };
                let (lattice, _) = dec.run(&states, false, &mut r)?;
                let loss = rna_loss_dp(&lattice, &[0, 1], vocab.blank_id())?;
                let loss = loss.add(&confidence_penalty(&lattice)?.scale(0.2))?;
                corrupt_term(corrupt, loss, &h)
            }
        };
        check("decoder_dp_penalty", grad_check_params(&f, &named, 1e-4)?);
    }

    // fusion head
    {
        let dec_cfg = saa::decoder::DecoderConfig { k: 1, embed_dim: 4, san: san_cfg };
        let vocab = Vocab::new(3);
        let dec = saa::decoder::Decoder::new(&dec_cfg, &vocab, &mut rng)?;
        let fusion = FusionHead::from_decoder(&dec, 8)?;
        fusion.gate_b.set_data(|d| d.iter_mut().for_each(|v| *v = 0.3));
        let pre = Tensor::new((0..16).map(|_| rng.uniform(-1.0, 1.0)).collect(), &[1, 16])?;
        let lm_state = Tensor::new((0..8).map(|_| rng.uniform(-1.0, 1.0)).collect(), &[1, 8])?;
        let params = fusion.named_params("fusion");
        let named: Vec<(&str, Tensor)> = params.iter().map(|(n, t)| (n.as_str(), t.clone())).collect();
        let probe = params[0].1.clone();
        let f = move || {
            let logits = fusion.fused_logits(&pre, &lm_state)?;
            let lattice = AlignmentLattice { log_probs: logits.log_softmax_rows()? };
            corrupt_term(corrupt, rna_loss_dp(&lattice, &[1], 3)?, &probe)
        };
        check("fusion", grad_check_params(&f, &named, 1e-4)?);
    }

    if failures > 0 {
        return Err(SaaError::numerical("gradcheck", format!("{} composite checks failed", failures)));
    }
    println!("all gradient checks passed (tolerance {tol:.0e})");
    Ok(())
}

fn cmd_lm_train(cfg: &RunConfig) -> Result<()> {
    write_echo(cfg)?;
    let (train_corpus, dev_corpus) = resolve_lm_corpora(cfg)?;
    let lm = build_lm(cfg, cfg.seed)?;
    let mut log = metrics_writer(cfg, "lm_metrics.jsonl")?;
    let history = train_lm(&lm, &train_corpus, &dev_corpus, &cfg.train, cfg.seed, |m| {
        let line = serde_json::to_string(m).expect("metrics serialize");
        println!("{line}");
        let _ = writeln!(log, "{line}");
    })?;
    let path = cfg.data.out_dir.join("lm.ckpt");
    save_checkpoint(&path, &lm.named_params("lm"))?;
    let last = history.last().expect("at least one epoch");
    println!("final dev perplexity {:.4}; checkpoint {}", last.dev_ppl, path.display());
    Ok(())
}

fn cmd_lm_eval(cfg: &RunConfig) -> Result<()> {
    let (_, dev_corpus) = resolve_lm_corpora(cfg)?;
    let lm = build_lm(cfg, cfg.seed)?;
    load_into(&cfg.data.out_dir.join("lm.ckpt"), &lm.named_params("lm"))?;
    let ppl = saa::lm::perplexity(&lm, &dev_corpus)?;
    println!("perplexity: {:.4}", ppl);
    Ok(())
}

/// Joint training: load the SAA and LM checkpoints, freeze both, and train
/// the fusion head only. Step 0 reproduces the frozen baseline exactly.
fn cmd_joint_train(cfg: &RunConfig) -> Result<()> {
    write_echo(cfg)?;
    let (train_set, dev_set) = resolve_datasets(cfg)?;
    let mut model = build_model(cfg, cfg.seed)?;
    model.load(&cfg.data.out_dir.join("model.ckpt"))?;
    let lm = build_lm(cfg, cfg.seed)?;
    load_into(&cfg.data.out_dir.join("lm.ckpt"), &lm.named_params("lm"))?;
    let fusion = FusionHead::from_decoder(&model.decoder, lm.hidden_dim())?;

    let (baseline, _) = evaluate(&model, &dev_set, None)?;
    let step0 = joint_evaluate(&model, &lm, &fusion, &dev_set)?;
    println!("baseline dev CER {:.4}, joint step-0 dev CER {:.4}", baseline.cer(), step0.cer());

    let mut log = metrics_writer(cfg, "joint_metrics.jsonl")?;
    let outcome = joint_train(
        &model,
        &lm,
        &fusion,
        &train_set,
        &dev_set,
        &cfg.train,
        cfg.seed,
        |m| {
            let line = serde_json::to_string(m).expect("metrics serialize");
            println!("{line}");
            let _ = writeln!(log, "{line}");
        },
    )?;
    let path = cfg.data.out_dir.join("fusion.ckpt");
    save_checkpoint(&path, &fusion.named_params("fusion"))?;
    println!("best joint dev CER {:.4}; fusion checkpoint {}", outcome.best_dev_cer, path.display());
    Ok(())
}

