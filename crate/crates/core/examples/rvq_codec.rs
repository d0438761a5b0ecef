// Fits a residual quantizer on corpus frames and round-trips a clip.

use vampnet::pipeline::clip_frames;
use vampnet::synth::{build_corpus, generate_clip, CorpusConfig};
use vampnet::tokenizer::{fit_rvq, Framing, RvqFitParams};

pub fn run_example() -> vampnet::Result<()> {
    let splits = build_corpus(&CorpusConfig {
        n_clips: 12,
        ..CorpusConfig::default()
    })?;
    let framing = Framing::default();
    let frames = clip_frames(&framing, &splits.train[..4])?;
    let params = RvqFitParams {
        levels: 4,
        codebook_size: 32,
        kmeans_iters: 8,
        seed: 0,
    };
    let codec = fit_rvq(framing, &frames, &params)?;
    println!("{:.1} tokens/s, {:.0} bps", codec.token_rate(), codec.bitrate());

    let signal = generate_clip(&splits.test[0])?.signal;
    let tokens = codec.encode(&signal)?;
    println!("{} timesteps x {} levels", tokens.timesteps(), tokens.levels());
    let energy: f64 = signal.samples.iter().map(|v| v * v).sum();
    for levels in 0..=codec.levels() {
        let y = codec.decode_levels(&tokens, levels)?;
        let err: f64 = signal.samples.iter().zip(&y.samples).map(|(a, b)| (a - b).powi(2)).sum();
        println!("  {levels} levels: relative error {:.4}", err / energy);
    }
    println!("residual norms of frame 10: {:?}", codec.residual_norms(&frames[10]));
    Ok(())
}

fn main() {
    run_example().unwrap();
}
