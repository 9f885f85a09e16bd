//! Streaming recognition with chunk-hopping: encode an utterance chunk by
//! chunk and emit partial hypotheses, then compare against the
//! full-context transcript.

use saa::data::{SynthTask, SynthTaskConfig};
use saa::decoder::{DecoderConfig, Vocab};
use saa::encoder::{chunk_segment, AcousticStates, ChunkSpec, EncoderConfig};
use saa::san::SANConfig;
use saa::train::SaaModel;
use saa::{Result, SaaRng};

fn main() -> Result<()> {
    let task = SynthTask::new(SynthTaskConfig {
        vocab_size: 5,
        min_target_len: 6,
        max_target_len: 8,
        min_duration: 8,
        max_duration: 12,
        feature_dim: 8,
        noise_std: 0.05,
        seed: 8,
    })?;
    let utt = &task.generate(1, 1, "u")[0];

    let san = SANConfig { d: 16, h: 2, d_ff: 32, residual_dropout: 0.0, attention_dropout: 0.0 };
    let enc = EncoderConfig {
        feature_dim: 8,
        conv_filters: 2,
        n: 1,
        stages: 2,
        pool_stride: 2,
        san: san.clone(),
    };
    let dec = DecoderConfig { k: 1, embed_dim: 4, san };
    let mut rng = SaaRng::from_seed(9);
    let model = SaaModel::new(&enc, &dec, &Vocab::new(5), &mut rng)?;

    let spec = ChunkSpec::new(16, 32, 16); // 160ms look-ahead
    println!(
        "utterance: {} frames, chunks {}/{}/{}, latency {}ms",
        utt.features.shape()[0],
        spec.past,
        spec.current,
        spec.future,
        spec.latency_ms()
    );

    let d_factor = model.encoder.cfg.downsample_factor();
    let states = model.encoder.forward_streaming(&utt.features, &spec, false, &mut rng)?;
    let mut rows_done = 0;
    let mut hyp = Vec::new();
    for (i, chunk) in chunk_segment(utt.features.shape()[0], &spec).iter().enumerate() {
        let (c0, c1) = chunk.current;
        rows_done += (c1 - c0).div_ceil(d_factor);
        let prefix = AcousticStates {
            h: states.h.rows(0, rows_done)?,
            downsample_factor: d_factor,
            source_frames: c1,
        };
        let so_far = model.decoder.decode_greedy(&prefix)?;
        println!("after chunk {i}: {:?} (+{} labels)", so_far, so_far.len() - hyp.len());
        hyp = so_far;
    }

    let full = model.transcribe(&utt.features, None)?;
    println!("streaming transcript:    {:?}", hyp);
    println!("full-context transcript: {:?}", full);
    println!("(an untrained model transcribes noise; the point is the streaming plumbing)");
    Ok(())
}
