//! Training, two-stage generation and the end-to-end toy recipe.

mod generate;
mod train;

use std::path::Path;

pub use generate::{
    autoregressive_passes, fine_prompt, generate, generate_with, Generation, GenerationRequest,
};
pub use train::{train, train_from, write_loss_csv, LossRecord, TrainConfig, TrainOutcome};

use crate::error::Result;
use crate::model::{read_checkpoint, write_checkpoint, Checkpoint, ModelConfig, Parameters};
use crate::synth::{generate_clip, ClipSpec, CorpusConfig};
use crate::tokenizer::{fit_rvq, FrameVector, Framing, RvqCodec, RvqFitParams};
use crate::tokens::TokenGrid;

pub fn save_checkpoint(params: &Parameters<f32>, step: u64, path: &Path) -> Result<()> {
    let bytes = write_checkpoint(&Checkpoint {
        params: params.clone(),
        step,
    });
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(&std::fs::read(path)?)
}

/// Every knob of the end-to-end toy experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct Recipe {
    pub corpus: CorpusConfig,
    pub framing: Framing,
    pub codec: RvqFitParams,
    /// Clips used to fit the codec (taken from the front of the train split).
    pub codec_clips: usize,
    pub coarse_levels: usize,
    pub coarse_model: ModelConfig,
    pub c2f_model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for Recipe {
    fn default() -> Self {
        let codec = RvqFitParams {
            levels: 4,
            codebook_size: 32,
            ..RvqFitParams::default()
        };
        let coarse_levels = 2;
        let shape = |cfg: ModelConfig| ModelConfig {
            max_len: 128,
            ..cfg
        };
        Self {
            corpus: CorpusConfig::default(),
            framing: Framing::default(),
            codec_clips: 40,
            coarse_model: shape(ModelConfig::coarse(coarse_levels, codec.codebook_size)),
            c2f_model: shape(ModelConfig::coarse_to_fine(
                coarse_levels,
                codec.levels - coarse_levels,
                codec.codebook_size,
            )),
            coarse_levels,
            codec,
            train: TrainConfig {
                window: Some(64),
                ..TrainConfig::default()
            },
        }
    }
}

impl Recipe {
    /// Small enough for test suites: 2-layer 32-wide models, 600 steps.
    pub fn quick() -> Self {
        let base = Self::default();
        let small = |cfg: &ModelConfig| ModelConfig {
            embed_dim: 32,
            layers: 2,
            heads: 4,
            rel_window: 16,
            ..cfg.clone()
        };
        Self {
            corpus: CorpusConfig {
                n_clips: 40,
                ..base.corpus.clone()
            },
            codec_clips: 20,
            codec: RvqFitParams {
                kmeans_iters: 15,
                ..base.codec.clone()
            },
            coarse_model: small(&base.coarse_model),
            c2f_model: small(&base.c2f_model),
            train: TrainConfig {
                steps: 600,
                batch_size: 8,
                warmup: 50,
                window: Some(48),
                ..base.train.clone()
            },
            ..base
        }
    }
}

pub fn clip_frames(framing: &Framing, specs: &[ClipSpec]) -> Result<Vec<FrameVector>> {
    let mut out = Vec::new();
    for spec in specs {
        out.extend(framing.frames(&generate_clip(spec)?.signal)?);
    }
    Ok(out)
}

pub fn fit_codec(recipe: &Recipe, train_specs: &[ClipSpec]) -> Result<RvqCodec> {
    let take = recipe.codec_clips.min(train_specs.len());
    let frames = clip_frames(&recipe.framing, &train_specs[..take])?;
    fit_rvq(recipe.framing, &frames, &recipe.codec)
}

pub fn tokenize_clips(codec: &RvqCodec, specs: &[ClipSpec]) -> Result<Vec<TokenGrid>> {
    specs
        .iter()
        .map(|s| codec.encode(&generate_clip(s)?.signal))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.vmpw");
        let p = Parameters::<f32>::init(&ModelConfig::tiny(), 5).unwrap();
        save_checkpoint(&p, 9, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.params, p);
        assert_eq!(back.step, 9);
    }

    #[test]
    fn recipes_are_consistent() {
        for r in [Recipe::default(), Recipe::quick()] {
            r.coarse_model.validate().unwrap();
            r.c2f_model.validate().unwrap();
            r.train.validate().unwrap();
            assert_eq!(r.c2f_model.levels, r.codec.levels);
            let t = r.framing.frame_count((r.corpus.duration * r.framing.sample_rate as f64) as usize).unwrap();
            assert!(t <= r.coarse_model.max_len);
        }
    }
}
