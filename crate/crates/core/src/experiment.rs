//! End-to-end toy runs: corpus, codec, models and per-condition metrics.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{argument, Result};
use crate::eval::{embed, fad, multiscale_mel_error, noisy_baseline, MelConfig, MetricRow};
use crate::model::Parameters;
use crate::pipeline::{
    fit_codec, generate, tokenize_clips, train, GenerationRequest, LossRecord, Recipe, TrainConfig,
};
use crate::prompts::{effective_bitrate, PromptSpec};
use crate::sampler::SamplerConfig;
use crate::synth::{build_corpus, CorpusSplits};
use crate::tokenizer::{RvqCodec, Signal};
use crate::tokens::TokenGrid;

pub struct ToyData {
    pub splits: CorpusSplits,
    pub codec: RvqCodec,
    pub train: Vec<TokenGrid>,
    pub val: Vec<TokenGrid>,
    pub test: Vec<TokenGrid>,
}

pub fn prepare_data(recipe: &Recipe) -> Result<ToyData> {
    let splits = build_corpus(&recipe.corpus)?;
    let codec = fit_codec(recipe, &splits.train)?;
    Ok(ToyData {
        train: tokenize_clips(&codec, &splits.train)?,
        val: tokenize_clips(&codec, &splits.val)?,
        test: tokenize_clips(&codec, &splits.test)?,
        splits,
        codec,
    })
}

pub struct ToyModels {
    pub coarse: Parameters<f32>,
    pub c2f: Parameters<f32>,
    pub coarse_history: Vec<LossRecord>,
    pub c2f_history: Vec<LossRecord>,
}

/// Trains both stages with `seed` overriding the recipe's training seed.
pub fn train_models(recipe: &Recipe, corpus: &[TokenGrid], seed: u64) -> Result<ToyModels> {
    let cfg = TrainConfig {
        seed,
        ..recipe.train.clone()
    };
    let coarse = train(&recipe.coarse_model, corpus, &cfg)?;
    let c2f = train(&recipe.c2f_model, corpus, &TrainConfig { seed: seed ^ 0xC2F, ..cfg })?;
    Ok(ToyModels {
        coarse: coarse.params,
        c2f: c2f.params,
        coarse_history: coarse.history,
        c2f_history: c2f.history,
    })
}

/// A held-out clip with its decoded tokens as the reference signal.
pub struct EvalClip {
    pub id: String,
    pub tokens: TokenGrid,
    pub reference: Signal,
    pub embedding: Vec<f64>,
}

pub fn eval_clips(codec: &RvqCodec, grids: &[TokenGrid], mel: &MelConfig) -> Result<Vec<EvalClip>> {
    grids
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let reference = codec.decode(g)?;
            Ok(EvalClip {
                id: format!("clip{i:04}"),
                embedding: embed(&reference, mel.eps)?,
                tokens: g.clone(),
                reference,
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct ConditionReport {
    pub group: String,
    pub rows: Vec<MetricRow>,
    pub fad: f64,
    pub mean_mel_error: f64,
    pub mean_kept_fraction: f64,
    pub forward_passes: usize,
}

fn report(group: String, rows: Vec<MetricRow>, kept: f64, reference: &[Vec<f64>], generated: &[Vec<f64>], passes: usize) -> Result<ConditionReport> {
    let n = rows.len().max(1) as f64;
    Ok(ConditionReport {
        mean_mel_error: rows.iter().map(|r| r.mel_error).sum::<f64>() / n,
        fad: fad(reference, generated)?,
        group,
        rows,
        mean_kept_fraction: kept / n,
        forward_passes: passes,
    })
}

fn clip_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64).wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Generates every clip under `prompt`, decodes and scores it.
pub fn run_condition(
    codec: &RvqCodec,
    models: &ToyModels,
    clips: &[EvalClip],
    prompt: &PromptSpec,
    steps: (usize, usize),
    seed: u64,
    mel: &MelConfig,
) -> Result<ConditionReport> {
    if clips.is_empty() {
        return argument("no clips to evaluate");
    }
    let group = format!("{prompt}@{}+{}", steps.0, steps.1);
    let mut rows = Vec::with_capacity(clips.len());
    let mut generated = Vec::with_capacity(clips.len());
    let (mut kept, mut passes) = (0.0, 0);
    for (i, clip) in clips.iter().enumerate() {
        let (t, n) = (clip.tokens.timesteps(), clip.tokens.levels());
        let mask = prompt.mask(t, n)?;
        let s = clip_seed(seed, i);
        let req = GenerationRequest {
            input: clip.tokens.clone(),
            prompt: mask.clone(),
            coarse: SamplerConfig::new(steps.0, s),
            c2f: SamplerConfig::new(steps.1, s ^ 0xF1E),
        };
        let out = generate(&models.coarse, &models.c2f, &req)?;
        passes += out.forward_passes();
        let audio = codec.decode(&out.output)?;
        generated.push(embed(&audio, mel.eps)?);
        kept += crate::prompts::kept_fraction(&mask);
        rows.push(MetricRow {
            clip_id: clip.id.clone(),
            prompt: prompt.to_string(),
            steps: steps.0,
            bitrate_bps: effective_bitrate(&mask, codec.bitrate())?,
            mel_error: multiscale_mel_error(&clip.reference, &audio, mel)?,
            group: group.clone(),
        });
    }
    let reference: Vec<Vec<f64>> = clips.iter().map(|c| c.embedding.clone()).collect();
    report(group, rows, kept, &reference, &generated, passes)
}

/// Noisy-token baseline at replacement ratio `r`.
pub fn run_noisy(codec: &RvqCodec, clips: &[EvalClip], r: f64, seed: u64, mel: &MelConfig) -> Result<ConditionReport> {
    if clips.is_empty() {
        return argument("no clips to evaluate");
    }
    let group = format!("noisy:r={r}");
    let mut rows = Vec::with_capacity(clips.len());
    let mut generated = Vec::with_capacity(clips.len());
    let mut kept = 0.0;
    for (i, clip) in clips.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(clip_seed(seed, i));
        let noisy = noisy_baseline(&clip.tokens, r, &mut rng)?;
        let audio = codec.decode(&noisy)?;
        generated.push(embed(&audio, mel.eps)?);
        let total = clip.tokens.timesteps() * clip.tokens.levels();
        let replaced = ((r * total as f64).ceil() as usize).min(total);
        let keep = 1.0 - replaced as f64 / total as f64;
        kept += keep;
        rows.push(MetricRow {
            clip_id: clip.id.clone(),
            prompt: group.clone(),
            steps: 0,
            bitrate_bps: codec.bitrate() * keep,
            mel_error: multiscale_mel_error(&clip.reference, &audio, mel)?,
            group: group.clone(),
        });
    }
    let reference: Vec<Vec<f64>> = clips.iter().map(|c| c.embedding.clone()).collect();
    report(group, rows, kept, &reference, &generated, 0)
}

/// Step counts swept by default.
pub const SWEEP_STEPS: [usize; 8] = [1, 4, 8, 12, 24, 36, 64, 72];

