// Parallel iterative decoding with a traced schedule.

use vampnet::model::{ModelConfig, Parameters};
use vampnet::sampler::{decode_iterative, SamplerConfig};
use vampnet::tokens::{MaskGrid, TokenGrid};

pub fn run_example() -> vampnet::Result<()> {
    let cfg = ModelConfig {
        embed_dim: 16,
        layers: 1,
        heads: 2,
        max_len: 64,
        rel_window: 8,
        ..ModelConfig::coarse(2, 8)
    };
    let params = Parameters::<f64>::init(&cfg, 3)?;
    let grid = TokenGrid::zeros(40, 2, 8)?;
    let prompt = MaskGrid::from_fn(40, 2, |t, _| t % 8 != 0)?;
    let sampler = SamplerConfig {
        record_trace: true,
        ..SamplerConfig::new(8, 1)
    };
    let (out, trace) = decode_iterative(&params, &grid, &prompt, &sampler)?;
    println!("{} masked, {} forward passes", trace.initially_masked, trace.forward_passes);
    for it in &trace.iterations {
        println!(
            "  iteration {}: temp {:.2}, accepted {:>2}, still masked {:>2}",
            it.iteration,
            it.temperature,
            it.accepted.len(),
            it.k
        );
    }
    println!("first row after decoding: {:?}", (0..16).map(|t| out.get(t, 0)).collect::<Vec<_>>());
    Ok(())
}

fn main() {
    run_example().unwrap();
}
