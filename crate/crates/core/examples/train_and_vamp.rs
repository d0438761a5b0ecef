// Trains both toy models briefly and vamps on a held-out clip.

use vampnet::experiment::prepare_data;
use vampnet::pipeline::{generate, train, GenerationRequest, Recipe, TrainConfig};
use vampnet::prompts::{effective_bitrate, PromptSpec};
use vampnet::sampler::SamplerConfig;

pub fn run_example() -> vampnet::Result<()> {
    let mut recipe = Recipe::quick();
    recipe.corpus.n_clips = 16;
    recipe.codec_clips = 6;
    recipe.codec.kmeans_iters = 5;
    let data = prepare_data(&recipe)?;
    let cfg = TrainConfig {
        steps: 40,
        batch_size: 4,
        warmup: 5,
        ..recipe.train.clone()
    };
    let coarse = train(&recipe.coarse_model, &data.train, &cfg)?;
    let c2f = train(&recipe.c2f_model, &data.train, &TrainConfig { seed: 1, ..cfg })?;
    println!(
        "loss: coarse {:.3} -> {:.3}, c2f {:.3} -> {:.3}",
        coarse.history[0].loss,
        coarse.tail_loss(5),
        c2f.history[0].loss,
        c2f.tail_loss(5)
    );

    let input = data.test[0].clone();
    let spec = PromptSpec::Combined(vec![
        PromptSpec::Compression { keep: 1 },
        PromptSpec::Periodic { period: 4, offset: 0 },
    ]);
    let prompt = spec.mask(input.timesteps(), input.levels())?;
    let req = GenerationRequest {
        input,
        prompt: prompt.clone(),
        coarse: SamplerConfig::new(12, 0),
        c2f: SamplerConfig::new(4, 1),
    };
    let out = generate(&coarse.params, &c2f.params, &req)?;
    let changed = (0..req.input.timesteps())
        .flat_map(|t| (0..req.input.levels()).map(move |n| (t, n)))
        .filter(|&(t, n)| out.output.get(t, n) != req.input.get(t, n))
        .count();
    println!(
        "{spec}: {:.1} bps kept, {} forward passes, {changed} tokens changed",
        effective_bitrate(&prompt, data.codec.bitrate())?,
        out.forward_passes()
    );
    Ok(())
}

fn main() {
    run_example().unwrap();
}
