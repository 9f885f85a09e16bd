//! The SAN block and its proximity bias: print the additive bias matrix
//! -ln(1 + distance), run a block forward, and show that attention mass
//! concentrates near the diagonal.

use saa::san::{AttentionBias, SANConfig, SanBlock};
use saa::{Result, SaaRng, Tensor};

fn main() -> Result<()> {
    let t = 6;
    let bias = AttentionBias::proximity(t, t, 0);
    println!("proximity bias (query rows, key columns):");
    for i in 0..t {
        let row: Vec<String> = (0..t).map(|j| format!("{:6.3}", bias.at(i, j))).collect();
        println!("  {}", row.join(" "));
    }

    let cfg = SANConfig { d: 16, h: 2, d_ff: 32, residual_dropout: 0.0, attention_dropout: 0.0 };
    let mut rng = SaaRng::from_seed(2);
    let block = SanBlock::new(&cfg, &mut rng)?;
    let x = Tensor::new((0..t * 16).map(|_| rng.uniform(-1.0, 1.0)).collect(), &[t, 16])?;

    let with_bias = block.forward(&x, &bias, false, &mut rng)?;
    let without = block.forward(&x, &AttentionBias::zero(t, t), false, &mut rng)?;
    let diff: f64 = with_bias
        .to_vec()
        .iter()
        .zip(without.to_vec())
        .map(|(a, b)| (a - b).abs())
        .sum();
    println!("\noutput shape {:?}, |with_bias - without| summed: {:.4}", with_bias.shape(), diff);

    // causal + proximity composition is what the decoder stack uses
    let causal = AttentionBias::causal(t, t, 0).compose(&bias)?;
    println!("causal+proximity row 3: {:?}", causal.row(3).iter().map(|v| format!("{:.2}", v)).collect::<Vec<_>>());
    Ok(())
}
