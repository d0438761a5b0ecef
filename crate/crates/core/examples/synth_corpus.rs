// Builds the synthetic corpus and renders one clip with its beat grid.

use vampnet::synth::{beats_to_steps, build_corpus, generate_clip, CorpusConfig};

pub fn run_example() -> vampnet::Result<()> {
    let cfg = CorpusConfig {
        n_clips: 24,
        ..CorpusConfig::default()
    };
    let splits = build_corpus(&cfg)?;
    println!("train {} / val {} / test {}", splits.train.len(), splits.val.len(), splits.test.len());

    let spec = &splits.train[0];
    let clip = generate_clip(spec)?;
    let peak = clip.signal.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    println!(
        "{} artist {} at {:.1} bpm: {} samples, peak {peak:.3}",
        spec.preset.genre.name(),
        spec.preset.artist,
        spec.tempo,
        clip.signal.len()
    );
    let steps = beats_to_steps(&clip.beat_times, 62.5)?;
    println!("beats at token steps {steps:?}");
    Ok(())
}

fn main() {
    run_example().unwrap();
}
