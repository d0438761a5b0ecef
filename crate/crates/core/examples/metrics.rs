// Mel reconstruction error, proxy embeddings and the Fréchet distance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vampnet::eval::{embed, fad, multiscale_mel_error, noisy_baseline, MelConfig};
use vampnet::pipeline::{fit_codec, tokenize_clips, Recipe};
use vampnet::synth::build_corpus;

pub fn run_example() -> vampnet::Result<()> {
    let mut recipe = Recipe::quick();
    recipe.corpus.n_clips = 30;
    recipe.codec_clips = 6;
    recipe.codec.kmeans_iters = 5;
    let splits = build_corpus(&recipe.corpus)?;
    let codec = fit_codec(&recipe, &splits.train)?;
    let grids = tokenize_clips(&codec, &splits.train[..12])?;
    let mel = MelConfig::default();

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let reference: Vec<_> = grids.iter().map(|g| codec.decode(g)).collect::<vampnet::Result<_>>()?;
    let ref_emb: Vec<_> = reference.iter().map(|x| embed(x, mel.eps)).collect::<vampnet::Result<_>>()?;
    for r in [0.0, 0.25, 0.5, 1.0] {
        let mut err = 0.0;
        let mut emb = Vec::new();
        for (g, x) in grids.iter().zip(&reference) {
            let y = codec.decode(&noisy_baseline(g, r, &mut rng)?)?;
            err += multiscale_mel_error(x, &y, &mel)?;
            emb.push(embed(&y, mel.eps)?);
        }
        println!(
            "noise {r:.2}: mean mel error {:>10.1}, proxy FAD {:>9.2}",
            err / grids.len() as f64,
            fad(&ref_emb, &emb)?
        );
    }
    Ok(())
}

fn main() {
    run_example().unwrap();
}
