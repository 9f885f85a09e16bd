//! Language-model fusion: blank substitution, the attention mask over the
//! substituted stream, baseline-preserving fusion initialization, and the
//! freezing guarantee (no gradient reaches SAA or LM parameters).

use saa::decoder::{rna_loss_dp, DecoderConfig, Vocab};
use saa::encoder::AcousticStates;
use saa::lm::{blank_substitute, joint_run, lm_attention_mask, perplexity, FusionHead, LMConfig, Lm};
use saa::san::SANConfig;
use saa::{Result, SaaRng, Tensor};

fn main() -> Result<()> {
    let vocab = Vocab::new(4); // blank 4, <sos> 5

    // blank substitution: the LM never consumes blanks
    let z = vec![2, 4, 4, 0, 4, 1];
    let stream = blank_substitute(&z, &vocab);
    println!("alignment     {:?}", z);
    println!("LM inputs     {:?} (5 = <sos>)", stream.inputs);
    println!("legal keys    {:?}", stream.legal);
    let mask = lm_attention_mask(&stream.legal);
    println!("mask row 4    {:?} (illegal keys get -1e9)", mask.row(4));

    let san = SANConfig { d: 16, h: 2, d_ff: 32, residual_dropout: 0.0, attention_dropout: 0.0 };
    let mut rng = SaaRng::from_seed(10);
    let lm = Lm::new(&LMConfig { layers: 1, san: san.clone(), use_proximity_bias: false }, &vocab, &mut rng)?;
    let corpus = vec![vec![0, 1, 2, 3], vec![3, 2, 1, 0]];
    println!("\nuntrained LM perplexity: {:.3}", perplexity(&lm, &corpus)?);

    // fusion starts exactly at the frozen baseline
    let dec = saa::decoder::Decoder::new(&DecoderConfig { k: 1, embed_dim: 4, san }, &vocab, &mut rng)?;
    let fusion = FusionHead::from_decoder(&dec, lm.hidden_dim())?;
    let states = AcousticStates {
        h: Tensor::new((0..6 * 16).map(|_| rng.uniform(-1.0, 1.0)).collect(), &[6, 16])?,
        downsample_factor: 4,
        source_frames: 24,
    };
    let (base, _) = dec.run(&states, false, &mut rng)?;
    let (joint, _) = joint_run(&dec, &lm, &fusion, &states, false, &mut rng)?;
    println!(
        "fusion init reproduces baseline bit-exactly: {}",
        base.log_probs.to_vec() == joint.log_probs.to_vec()
    );

    // only fusion parameters receive gradient
    let (lattice, _) = joint_run(&dec, &lm, &fusion, &states, true, &mut rng)?;
    rna_loss_dp(&lattice, &[0, 1], vocab.blank_id())?.backward()?;
    let frozen_grads = dec
        .named_params("dec")
        .iter()
        .chain(lm.named_params("lm").iter())
        .filter(|(_, p)| p.grad().is_some())
        .count();
    let fusion_grads = fusion.named_params("f").iter().filter(|(_, p)| p.grad().is_some()).count();
    println!("frozen params with gradient: {frozen_grads}, fusion params with gradient: {fusion_grads}");
    Ok(())
}
