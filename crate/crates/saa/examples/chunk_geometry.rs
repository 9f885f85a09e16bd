//! Chunk-hopping geometries: chunk/hop sizes and latency for a range of
//! (past, current, future) splits, and the bit-exact degeneracy of a
//! full-context chunk spec.

use saa::encoder::{chunk_segment, ChunkSpec, Encoder, EncoderConfig};
use saa::san::SANConfig;
use saa::{Result, SaaRng, Tensor};

fn main() -> Result<()> {
    println!("{:>6} {:>8} {:>7} {:>5} {:>8}", "past", "current", "future", "hop", "latency");
    for (p, c, f) in [
        (0, 32, 0),
        (32, 32, 0),
        (64, 32, 16),
        (128, 32, 48),
        (128, 64, 32),
        (128, 96, 16),
        (128, 128, 0),
        (192, 64, 32),
        (192, 64, 64),
    ] {
        let spec = ChunkSpec::new(p, c, f);
        println!(
            "{:>6} {:>8} {:>7} {:>5} {:>6}ms",
            p,
            c,
            f,
            spec.hop_size(),
            spec.latency_ms()
        );
    }

    let spec = ChunkSpec::new(32, 64, 32);
    let chunks = chunk_segment(100, &spec);
    println!("\n100 frames with 32/64/32:");
    for (i, ch) in chunks.iter().enumerate() {
        println!(
            "  chunk {}: window [{}, {}), current [{}, {}), pads (left {}, right {})",
            i, ch.window.0, ch.window.1, ch.current.0, ch.current.1, ch.pad_left, ch.pad_right
        );
    }

    // a spec covering the whole utterance reproduces full-context encoding
    let cfg = EncoderConfig {
        feature_dim: 5,
        conv_filters: 2,
        n: 1,
        stages: 2,
        pool_stride: 2,
        san: SANConfig { d: 16, h: 2, d_ff: 32, residual_dropout: 0.0, attention_dropout: 0.0 },
    };
    let mut rng = SaaRng::from_seed(4);
    let enc = Encoder::new(&cfg, &mut rng)?;
    let x = Tensor::new((0..40 * 5).map(|_| rng.uniform(-1.0, 1.0)).collect(), &[40, 5])?;
    let full = enc.forward(&x, false, &mut rng)?;
    let degenerate = enc.forward_streaming(&x, &ChunkSpec::new(0, 40, 0), false, &mut rng)?;
    println!(
        "\ndegenerate spec output == full context: {}",
        full.h.to_vec() == degenerate.h.to_vec()
    );
    Ok(())
}
