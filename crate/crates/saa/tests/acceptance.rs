//! Acceptance suite: one test per primary criterion, each printing a
//! `[PASS]` line with the measured evidence (run with `--nocapture` to see
//! them). Every test is deterministic under its fixed seeds.

use std::time::Instant;

use saa::data::{SynthTask, SynthTaskConfig, Utterance};
use saa::decoder::{
    confidence_penalty, rna_loss_bruteforce, rna_loss_dp, AlignmentLattice, Decoder, DecoderConfig,
    Vocab,
};
use saa::encoder::{chunk_segment, AcousticStates, ChunkSpec, Encoder, EncoderConfig};
use saa::lm::{joint_run, FusionHead, LMConfig, Lm};
use saa::san::{AttentionBias, SANCache, SANConfig, SanBlock};
use saa::tensor::grad_check_params;
use saa::train::{
    evaluate, joint_evaluate, joint_train, train_lm, train_saa, SaaModel, TrainConfig,
};
use saa::{Result, SaaRng, Tensor};

fn pass(criterion: &str, detail: String) {
    println!("[PASS] {criterion}: {detail}");
}

fn random_lattice(rng: &mut SaaRng, frames: usize, logit_dim: usize) -> AlignmentLattice {
    let logits = Tensor::new(
        (0..frames * logit_dim).map(|_| rng.uniform(-2.0, 2.0)).collect(),
        &[frames, logit_dim],
    )
    .unwrap();
    AlignmentLattice { log_probs: logits.log_softmax_rows().unwrap() }
}

fn random_states(rng: &mut SaaRng, frames: usize, d: usize) -> AcousticStates {
    AcousticStates {
        h: Tensor::new((0..frames * d).map(|_| rng.uniform(-1.0, 1.0)).collect(), &[frames, d])
            .unwrap(),
        downsample_factor: 4,
        source_frames: frames * 4,
    }
}

#[test]
fn primary_1_oracle_equivalence() {
    let t0 = Instant::now();
    let mut rng = SaaRng::from_seed(101);
    let mut instances = 0usize;
    let mut worst: f64 = 0.0;
    // targets per lattice: empty, N == U, all-repeated labels, and random
    // feasible lengths in between
    for case in 0..50 {
        let labels = 1 + case % 3; // L <= 3
        let frames = 1 + case % 6; // U <= 6
        let lat = random_lattice(&mut rng, frames, labels + 1);
        let mut targets: Vec<Vec<usize>> = vec![
            vec![],
            (0..frames).map(|_| rng.usize_below(labels)).collect(),
            vec![rng.usize_below(labels); frames.min(3)],
        ];
        for _ in 0..2 {
            let n = rng.usize_below(frames + 1);
            targets.push((0..n).map(|_| rng.usize_below(labels)).collect());
        }
        for target in targets {
            let dp = rna_loss_dp(&lat, &target, labels).unwrap().item();
            let brute = rna_loss_bruteforce(&lat, &target, labels).unwrap();
            let diff = (dp - brute).abs();
            assert!(diff < 1e-9, "dp {dp} vs brute {brute} on target {target:?}");
            worst = worst.max(diff);
            instances += 1;
        }
    }
    let elapsed = t0.elapsed().as_secs_f64();
    assert!(instances >= 200, "only {instances} instances");
    assert!(elapsed < 30.0, "took {elapsed:.1}s");
    pass(
        "oracle equivalence",
        format!("{instances} instances, max |dp - brute| = {worst:.3e}, {elapsed:.1}s"),
    );
}

#[test]
fn primary_2_gradient_suite() -> Result<()> {
    let t0 = Instant::now();
    let tol = 1e-4;
    let step = 1e-4;
    let san_cfg = SANConfig { d: 8, h: 2, d_ff: 12, residual_dropout: 0.0, attention_dropout: 0.0 };
    let mut rng = SaaRng::from_seed(202);
    let mut results = Vec::new();
    let mut check = |name: &'static str, err: f64| {
        assert!(err < tol, "{name}: max rel err {err:.3e}");
        results.push(format!("{name} {err:.1e}"));
    };

    // SAN block
    {
        let block = SanBlock::new(&san_cfg, &mut rng)?;
        let x = Tensor::param((0..5 * 8).map(|_| rng.uniform(-1.0, 1.0)).collect(), &[5, 8])?;
        let params = block.named_params("san");
        let mut named: Vec<(&str, Tensor)> =
            params.iter().map(|(n, t)| (n.as_str(), t.clone())).collect();
        named.push(("x", x.clone()));
        let bias = AttentionBias::proximity(5, 5, 0);
        let f = {
            let x = x.clone();
            move || {
                let mut r = SaaRng::from_seed(0);
                let y = block.forward(&x, &bias, false, &mut r)?;
                Ok(y.mul(&y)?.sum())
            }
        };
        check("san_block", grad_check_params(&f, &named, step)?.max_rel_err);
    }

    // front-end (conv + multiplicative unit) and the full encoder
    {
        let enc_cfg = EncoderConfig {
            feature_dim: 5,
            conv_filters: 2,
            n: 1,
            stages: 2,
            pool_stride: 2,
            san: san_cfg.clone(),
        };
        let enc = std::rc::Rc::new(Encoder::new(&enc_cfg, &mut rng)?);
        let x = Tensor::param((0..10 * 5).map(|_| rng.uniform(-1.0, 1.0)).collect(), &[10, 5])?;
        let params = enc.named_params("enc");
        let mut named: Vec<(&str, Tensor)> =
            params.iter().map(|(n, t)| (n.as_str(), t.clone())).collect();
        named.push(("x", x.clone()));
        let frontend = {
            let (enc, x) = (enc.clone(), x.clone());
            move || {
                let mut r = SaaRng::from_seed(0);
                let y = enc.frontend_forward(&x, false, &mut r)?;
                Ok(y.mul(&y)?.sum())
            }
        };
        check("frontend_mu", grad_check_params(&frontend, &named, step)?.max_rel_err);
        let full = {
            let (enc, x) = (enc.clone(), x.clone());
            move || {
                let mut r = SaaRng::from_seed(0);
                let s = enc.forward(&x, false, &mut r)?;
                Ok(s.h.mul(&s.h)?.sum())
            }
        };
        check("encoder", grad_check_params(&full, &named, step)?.max_rel_err);
    }

    // decoder steps feeding the DP loss, and the confidence penalty
    {
        let dec_cfg = DecoderConfig { k: 1, embed_dim: 4, san: san_cfg.clone() };
        let vocab = Vocab::new(3);
        let dec = std::rc::Rc::new(Decoder::new(&dec_cfg, &vocab, &mut rng)?);
        let h = Tensor::param((0..4 * 8).map(|_| rng.uniform(-1.0, 1.0)).collect(), &[4, 8])?;
        let params = dec.named_params("dec");
        let mut named: Vec<(&str, Tensor)> =
            params.iter().map(|(n, t)| (n.as_str(), t.clone())).collect();
        named.push(("h", h.clone()));
        let states = |h: &Tensor| AcousticStates {
            h: h.clone(),
            downsample_factor: 4,
            source_frames: 16,
        };
        let dp = {
            let (dec, h) = (dec.clone(), h.clone());
            move || {
                let mut r = SaaRng::from_seed(0);
                let (lattice, _) = dec.run(&states(&h), false, &mut r)?;
                rna_loss_dp(&lattice, &[0, 2], dec.vocab.blank_id())
            }
        };
        check("decoder_dp_loss", grad_check_params(&dp, &named, step)?.max_rel_err);
        let penalty = {
            let (dec, h) = (dec.clone(), h.clone());
            move || {
                let mut r = SaaRng::from_seed(0);
                let (lattice, _) = dec.run(&states(&h), false, &mut r)?;
                confidence_penalty(&lattice)
            }
        };
        check("confidence_penalty", grad_check_params(&penalty, &named, step)?.max_rel_err);
    }

    // fusion head (its inputs are detached, so only its own parameters move)
    {
        let dec_cfg = DecoderConfig { k: 1, embed_dim: 4, san: san_cfg.clone() };
        let vocab = Vocab::new(3);
        let dec = Decoder::new(&dec_cfg, &vocab, &mut rng)?;
        let lm = Lm::new(
            &LMConfig { layers: 1, san: san_cfg.clone(), use_proximity_bias: false },
            &vocab,
            &mut rng,
        )?;
        let fusion = FusionHead::from_decoder(&dec, lm.hidden_dim())?;
        for (_, p) in fusion.named_params("f") {
            p.set_data(|d| {
                let mut r = SaaRng::from_seed(7);
                for v in d.iter_mut() {
                    *v += r.uniform(-0.2, 0.2);
                }
            });
        }
        let states = random_states(&mut rng, 4, 8);
        let params = fusion.named_params("fusion");
        let named: Vec<(&str, Tensor)> =
            params.iter().map(|(n, t)| (n.as_str(), t.clone())).collect();
        let f = move || {
            let mut r = SaaRng::from_seed(0);
            let (lattice, _) = joint_run(&dec, &lm, &fusion, &states, false, &mut r)?;
            rna_loss_dp(&lattice, &[0, 1], 3)?
                .add(&confidence_penalty(&lattice)?.scale(0.2))
        };
        check("fusion", grad_check_params(&f, &named, step)?.max_rel_err);
    }

    let elapsed = t0.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "took {elapsed:.1}s");
    pass("gradient suite", format!("{} ({elapsed:.1}s)", results.join(", ")));
    Ok(())
}

#[test]
fn primary_3_incremental_cache_and_causality() -> Result<()> {
    let san_cfg =
        SANConfig { d: 16, h: 2, d_ff: 32, residual_dropout: 0.0, attention_dropout: 0.0 };
    let mut rng = SaaRng::from_seed(303);
    let blocks: Vec<SanBlock> =
        (0..2).map(|_| SanBlock::new(&san_cfg, &mut rng)).collect::<Result<_>>()?;
    let t = 64;
    let x = Tensor::new((0..t * 16).map(|_| rng.uniform(-1.0, 1.0)).collect(), &[t, 16])?;

    // full causal recompute with the decoder's causal + proximity bias
    let bias = AttentionBias::causal(t, t, 0).compose(&AttentionBias::proximity(t, t, 0))?;
    let mut full = x.clone();
    for b in &blocks {
        full = b.forward(&full, &bias, false, &mut rng)?;
    }

    // incremental run through the same stack with per-block caches
    let mut caches: Vec<SANCache> = blocks.iter().map(|_| SANCache::new(san_cfg.h)).collect();
    let mut inc_rows = Vec::with_capacity(t);
    for u in 0..t {
        let bias_row: Vec<f64> = (0..=u).map(|j| -(1.0 + (u - j) as f64).ln()).collect();
        let mut row = x.rows(u, u + 1)?;
        for (b, cache) in blocks.iter().zip(&mut caches) {
            row = b.forward_incremental(&row, cache, &bias_row, false, &mut rng)?;
        }
        inc_rows.push(row);
    }
    let inc = Tensor::concat_rows(&inc_rows)?;
    let max_diff = full
        .data()
        .iter()
        .zip(inc.data().iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(max_diff < 1e-10, "incremental vs full recompute: max diff {max_diff:.3e}");

    // exact zero influence of future positions on the decoder lattice
    let dec = Decoder::new(&DecoderConfig { k: 2, embed_dim: 4, san: san_cfg }, &Vocab::new(4), &mut rng)?;
    let states = random_states(&mut rng, 16, 16);
    let (base, _) = dec.run(&states, false, &mut rng)?;
    let v = 7;
    let mut data = states.h.to_vec();
    for x in data[v * 16..].iter_mut() {
        *x += 3.0;
    }
    let perturbed = AcousticStates {
        h: Tensor::new(data, &[16, 16])?,
        downsample_factor: 4,
        source_frames: 64,
    };
    let (out, _) = dec.run(&perturbed, false, &mut rng)?;
    let dim = base.label_dim();
    assert_eq!(
        &base.log_probs.to_vec()[..v * dim],
        &out.log_probs.to_vec()[..v * dim],
        "future perturbation leaked into past lattice rows"
    );
    let truncated = AcousticStates {
        h: states.h.rows(0, v)?,
        downsample_factor: 4,
        source_frames: v * 4,
    };
    let (pref, _) = dec.run(&truncated, false, &mut rng)?;
    assert_eq!(&base.log_probs.to_vec()[..v * dim], &pref.log_probs.to_vec()[..]);

    pass(
        "incremental cache / causality",
        format!("length-{t} stack diff {max_diff:.3e}; future perturbation: 0 bits changed"),
    );
    Ok(())
}

#[test]
fn primary_4_streaming_locality_and_latency() -> Result<()> {
    let cfg = EncoderConfig {
        feature_dim: 6,
        conv_filters: 2,
        n: 1,
        stages: 2,
        pool_stride: 2,
        san: SANConfig { d: 16, h: 2, d_ff: 32, residual_dropout: 0.0, attention_dropout: 0.0 },
    };
    let mut rng = SaaRng::from_seed(404);
    let enc = Encoder::new(&cfg, &mut rng)?;
    let d_factor = cfg.downsample_factor();
    let t = 400;
    let base: Vec<f64> = (0..t * 6).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let x = Tensor::new(base.clone(), &[t, 6])?;

    let geometries =
        [(32, 32, 0), (64, 32, 16), (128, 32, 48), (128, 64, 32), (128, 96, 16), (128, 128, 0), (192, 64, 32), (192, 64, 64)];
    let mut perturbations = 0usize;
    for (p, c, f) in geometries {
        let spec = ChunkSpec::new(p, c, f);
        let full = enc.forward_streaming(&x, &spec, false, &mut rng)?.h;
        let chunks = chunk_segment(t, &spec);
        let mut row0 = 0usize;
        for ch in &chunks {
            let rows = (ch.current.1 - ch.current.0).div_ceil(d_factor);
            let (w0, w1) = ch.window;
            let mut outside = Vec::new();
            if w1 < t {
                outside.push(w1);
            }
            if w0 > 0 {
                outside.push(w0 - 1);
            }
            for frame in outside {
                let mut data = base.clone();
                for v in data[frame * 6..(frame + 1) * 6].iter_mut() {
                    *v += 10.0;
                }
                let px = Tensor::new(data, &[t, 6])?;
                let out = enc.forward_streaming(&px, &spec, false, &mut rng)?.h;
                assert_eq!(
                    &full.to_vec()[row0 * 16..(row0 + rows) * 16],
                    &out.to_vec()[row0 * 16..(row0 + rows) * 16],
                    "geometry {p}/{c}/{f}: frame {frame} outside window [{w0},{w1}) leaked in"
                );
                perturbations += 1;
            }
            row0 += rows;
        }
    }

    // degeneracy: a spec covering the whole utterance is bit-exact
    let full_ctx = enc.forward(&x, false, &mut rng)?.h;
    let degenerate = enc.forward_streaming(&x, &ChunkSpec::new(0, t, 0), false, &mut rng)?.h;
    assert_eq!(full_ctx.to_vec(), degenerate.to_vec());

    let latency = ChunkSpec::new(192, 64, 32).latency_ms();
    assert_eq!(latency, 320.0);
    pass(
        "streaming locality",
        format!(
            "{} geometries, {perturbations} outside-window perturbations (0 bits changed), degenerate spec bit-exact, 192/64/32 latency {latency}ms",
            geometries.len()
        ),
    );
    Ok(())
}

#[test]
fn primary_5_toy_convergence() -> Result<()> {
    let task = SynthTask::new(SynthTaskConfig::fixture())?;
    let train_set = task.generate(2000, 1001, "train-");
    let dev_set = task.generate(200, 2002, "dev-");
    let enc = EncoderConfig::desk(20); // d=64, h=2, n=2, stages=2
    let dec = DecoderConfig::desk(); // k=2
    let mut cfg = TrainConfig::desk();
    cfg.epochs = 8;
    cfg.target_dev_cer = Some(0.0499);

    let mut summary = Vec::new();
    for seed in [11u64, 12, 13] {
        let t0 = Instant::now();
        let mut rng = SaaRng::from_seed(seed);
        let mut model = SaaModel::new(&enc, &dec, &Vocab::new(10), &mut rng)?;
        let outcome = train_saa(&mut model, &train_set, &dev_set, &cfg, None, seed, None, |m| {
            println!(
                "  seed {seed} epoch {} train loss {:.3} dev CER {:.4}",
                m.epoch, m.train_loss, m.dev_cer
            );
        })?;
        let mins = t0.elapsed().as_secs_f64() / 60.0;
        assert!(
            outcome.best_dev_cer < 0.05,
            "seed {seed}: best dev CER {:.4} after {} epochs",
            outcome.best_dev_cer,
            outcome.history.len()
        );
        assert!(mins < 30.0, "seed {seed}: {mins:.1} min");
        summary.push(format!(
            "seed {seed}: CER {:.4} in {} epochs / {mins:.1} min",
            outcome.best_dev_cer,
            outcome.history.len()
        ));
    }
    pass("toy-task convergence", summary.join("; "));
    Ok(())
}

#[test]
fn primary_6_streaming_degradation_direction() -> Result<()> {
    // Task where context width decides accuracy: each label's evidence is
    // spread over a 16-24 frame run under heavy noise, while a chunk's
    // visible window (past+current+future) caps how much of that run the
    // encoder can pool. Cutting look-ahead shrinks the window, so CER
    // degrades monotonically from full context to future=half to future=0.
    let task = SynthTask::new(SynthTaskConfig {
        vocab_size: 10,
        min_target_len: 3,
        max_target_len: 6,
        min_duration: 16,
        max_duration: 24,
        feature_dim: 20,
        noise_std: 0.85,
        seed: 7,
    })?;
    let train_set = task.generate(600, 1001, "train-");
    let dev_set = task.generate(100, 2002, "dev-");
    let enc = EncoderConfig {
        feature_dim: 20,
        conv_filters: 4,
        n: 1,
        stages: 2,
        pool_stride: 2,
        san: SANConfig { d: 32, h: 2, d_ff: 64, residual_dropout: 0.1, attention_dropout: 0.0 },
    };
    let dec = DecoderConfig {
        k: 1,
        embed_dim: 8,
        san: SANConfig { d: 32, h: 2, d_ff: 64, residual_dropout: 0.1, attention_dropout: 0.0 },
    };
    let mut cfg = TrainConfig::desk();
    cfg.epochs = 24;
    cfg.optim.lr = 1e-3;
    cfg.optim.warmup_steps = 200;
    cfg.lambda = 0.0;

    let run = |chunk: Option<ChunkSpec>| -> Result<f64> {
        let mut rng = SaaRng::from_seed(21);
        let mut model = SaaModel::new(&enc, &dec, &Vocab::new(10), &mut rng)?;
        let outcome =
            train_saa(&mut model, &train_set, &dev_set, &cfg, chunk.as_ref(), 21, None, |_| {})?;
        Ok(outcome.best_dev_cer)
    };
    let cer_full = run(None)?;
    let cer_half = run(Some(ChunkSpec::new(4, 16, 8)))?; // future = current/2
    let cer_zero = run(Some(ChunkSpec::new(4, 16, 0)))?; // no look-ahead
    println!("  full {cer_full:.4} <= future=8 {cer_half:.4} <= future=0 {cer_zero:.4}");
    assert!(cer_full <= cer_half, "streaming beat full context: {cer_full} vs {cer_half}");
    assert!(cer_half <= cer_zero, "future context did not help: {cer_half} vs {cer_zero}");
    pass(
        "streaming degradation direction",
        format!(
            "best dev CER: full {cer_full:.4} <= future=half {cer_half:.4} <= future=0 {cer_zero:.4}"
        ),
    );
    Ok(())
}

#[test]
fn primary_7_lm_and_joint() -> Result<()> {
    // SAN-LM on a deterministic corpus approaches the analytic perplexity
    // limit of 1
    let vocab10 = Vocab::new(10);
    let line: Vec<usize> = (0..10).collect();
    let corpus: Vec<Vec<usize>> = vec![line; 20];
    let mut rng = SaaRng::from_seed(707);
    let lm_cfg = LMConfig {
        layers: 1,
        san: SANConfig { d: 32, h: 2, d_ff: 64, residual_dropout: 0.0, attention_dropout: 0.0 },
        use_proximity_bias: false,
    };
    let lm = Lm::new(&lm_cfg, &vocab10, &mut rng)?;
    let mut cfg = TrainConfig::desk();
    cfg.epochs = 60;
    cfg.optim.lr = 3e-3;
    cfg.optim.warmup_steps = 50;
    let history = train_lm(&lm, &corpus, &corpus, &cfg, 1, |_| {})?;
    let ppl = history.last().unwrap().dev_ppl;
    assert!(ppl < 1.05, "deterministic-corpus perplexity {ppl:.4}");

    // baseline model on a small task
    let task = SynthTask::new(SynthTaskConfig {
        vocab_size: 6,
        min_target_len: 3,
        max_target_len: 6,
        min_duration: 4,
        max_duration: 8,
        feature_dim: 10,
        noise_std: 0.1,
        seed: 5,
    })?;
    let train_set = task.generate(200, 1, "train-");
    let dev_set = task.generate(40, 2, "dev-");
    let san = SANConfig { d: 32, h: 2, d_ff: 64, residual_dropout: 0.1, attention_dropout: 0.0 };
    let enc = EncoderConfig {
        feature_dim: 10,
        conv_filters: 4,
        n: 1,
        stages: 2,
        pool_stride: 2,
        san: san.clone(),
    };
    let dec = DecoderConfig { k: 1, embed_dim: 8, san: san.clone() };
    let vocab = Vocab::new(6);
    let mut rng = SaaRng::from_seed(6);
    let mut model = SaaModel::new(&enc, &dec, &vocab, &mut rng)?;
    let mut base_cfg = TrainConfig::desk();
    base_cfg.epochs = 6;
    base_cfg.optim.lr = 3e-3;
    base_cfg.optim.warmup_steps = 60;
    train_saa(&mut model, &train_set, &dev_set, &base_cfg, None, 7, None, |_| {})?;
    let (baseline, _) = evaluate(&model, &dev_set, None)?;
    let base_cer = baseline.cer();

    // LM over the task's label sequences
    let task_lm = Lm::new(
        &LMConfig {
            layers: 1,
            san: SANConfig { d: 32, h: 2, d_ff: 64, residual_dropout: 0.0, attention_dropout: 0.0 },
            use_proximity_bias: false,
        },
        &vocab,
        &mut rng,
    )?;
    let targets: Vec<Vec<usize>> = train_set.iter().map(|u| u.target.clone()).collect();
    let mut lm_train_cfg = TrainConfig::desk();
    lm_train_cfg.epochs = 3;
    train_lm(&task_lm, &targets, &targets, &lm_train_cfg, 2, |_| {})?;

    // step-0 joint decoding equals the frozen baseline exactly
    let fusion = FusionHead::from_decoder(&model.decoder, task_lm.hidden_dim())?;
    let step0 = joint_evaluate(&model, &task_lm, &fusion, &dev_set)?;
    assert_eq!(step0.total_distance, baseline.total_distance);
    assert_eq!(step0.total_ref_len, baseline.total_ref_len);

    // frozen parameters receive exactly zero gradient
    let u = &dev_set[0];
    let mut r = SaaRng::from_seed(0);
    let states = {
        let stats = model.stats.as_ref().unwrap();
        model.encoder.forward(&stats.apply(&u.features)?, false, &mut r)?
    };
    let (lattice, _) = joint_run(&model.decoder, &task_lm, &fusion, &states, true, &mut r)?;
    rna_loss_dp(&lattice, &u.target, vocab.blank_id())?.backward()?;
    let frozen_with_grad = model
        .named_params()
        .iter()
        .chain(task_lm.named_params("lm").iter())
        .filter(|(_, p)| p.grad().is_some())
        .count();
    assert_eq!(frozen_with_grad, 0, "gradient leaked into frozen parameters");
    for p in fusion.params() {
        p.zero_grad();
    }

    // joint training keeps the dev CER within +0.5 points of the baseline
    let mut joint_cfg = TrainConfig::desk();
    joint_cfg.epochs = 2;
    joint_cfg.optim.lr = 3e-4;
    joint_cfg.optim.warmup_steps = 20;
    let outcome =
        joint_train(&model, &task_lm, &fusion, &train_set, &dev_set, &joint_cfg, 3, |_| {})?;
    assert!(
        outcome.best_dev_cer <= base_cer + 0.005 + 1e-12,
        "joint dev CER {:.4} vs baseline {base_cer:.4}",
        outcome.best_dev_cer
    );
    pass(
        "LM / joint",
        format!(
            "perplexity {ppl:.4}; step-0 CER == baseline ({:.4}); 0 frozen grads; post-joint {:.4} <= baseline + 0.005",
            base_cer, outcome.best_dev_cer
        ),
    );
    Ok(())
}

#[test]
fn primary_8_infrastructure() -> Result<()> {
    let task = SynthTask::new(SynthTaskConfig {
        vocab_size: 5,
        min_target_len: 3,
        max_target_len: 5,
        min_duration: 4,
        max_duration: 8,
        feature_dim: 8,
        noise_std: 0.2,
        seed: 3,
    })?;
    let train_set: Vec<Utterance> = task.generate(30, 1, "train-");
    let dev_set: Vec<Utterance> = task.generate(10, 2, "dev-");
    let san = SANConfig { d: 16, h: 2, d_ff: 32, residual_dropout: 0.1, attention_dropout: 0.0 };
    let enc = EncoderConfig {
        feature_dim: 8,
        conv_filters: 2,
        n: 1,
        stages: 2,
        pool_stride: 2,
        san: san.clone(),
    };
    let dec = DecoderConfig { k: 1, embed_dim: 4, san };
    let vocab = Vocab::new(5);
    let mut cfg = TrainConfig::desk();
    cfg.epochs = 2;
    cfg.batch_size = 8;

    // seeded runs are bit-reproducible
    let mut histories = Vec::new();
    let mut params = Vec::new();
    let mut models = Vec::new();
    for _ in 0..2 {
        let mut rng = SaaRng::from_seed(42);
        let mut model = SaaModel::new(&enc, &dec, &vocab, &mut rng)?;
        let outcome = train_saa(&mut model, &train_set, &dev_set, &cfg, None, 9, None, |_| {})?;
        histories.push(
            outcome
                .history
                .iter()
                .map(|m| (m.train_loss.to_bits(), m.dev_cer.to_bits()))
                .collect::<Vec<_>>(),
        );
        params.push(
            model.named_params().iter().map(|(_, p)| p.to_vec()).collect::<Vec<_>>(),
        );
        models.push(model);
    }
    assert_eq!(histories[0], histories[1], "same-seed training histories differ");
    assert_eq!(params[0], params[1], "same-seed trained parameters differ");

    // checkpoint round-trip is bit-exact
    let dir = std::env::temp_dir().join("saa_acceptance");
    std::fs::create_dir_all(&dir)?;
    let ckpt = dir.join("roundtrip.ckpt");
    let model = &models[0];
    model.save(&ckpt)?;
    let mut restored = SaaModel::new(&enc, &dec, &vocab, &mut SaaRng::from_seed(777))?;
    restored.load(&ckpt)?;
    for ((na, pa), (nb, pb)) in model.named_params().iter().zip(restored.named_params().iter()) {
        assert_eq!(na, nb);
        assert_eq!(pa.to_vec(), pb.to_vec(), "parameter {na} changed across round-trip");
    }
    let (ra, ha) = evaluate(model, &dev_set, None)?;
    let (rb, hb) = evaluate(&restored, &dev_set, None)?;
    assert_eq!(ra.total_distance, rb.total_distance);
    assert_eq!(ha, hb, "round-tripped model decodes differently");

    // gradcheck subcommand: exit 0 clean, nonzero under the corrupted
    // negative control
    let bin = env!("CARGO_BIN_EXE_saa");
    let clean = std::process::Command::new(bin).arg("gradcheck").output()?;
    assert!(clean.status.success(), "clean gradcheck failed: {:?}", clean);
    let corrupt =
        std::process::Command::new(bin).args(["gradcheck", "--corrupt"]).output()?;
    assert!(!corrupt.status.success(), "corrupted gradcheck was not detected");

    pass(
        "infrastructure",
        format!(
            "seeded reruns bit-identical; checkpoint round-trip bit-exact; gradcheck exit {} clean / {} corrupted",
            clean.status.code().unwrap_or(-1),
            corrupt.status.code().unwrap_or(-1)
        ),
    );
    Ok(())
}
