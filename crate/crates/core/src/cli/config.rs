use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::model::ModelConfig;
use crate::pipeline::{Recipe, TrainConfig};
use crate::prompts::{PromptContext, PromptSpec};
use crate::synth::CorpusConfig;
use crate::tokenizer::{Framing, RvqFitParams};

use super::CliError;

/// Every recognised key with its default value.
const KEYS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("corpus.clips", "120"),
    ("corpus.split_seed", "0"),
    ("corpus.duration", "2"),
    ("corpus.sample_rate", "8000"),
    ("corpus.clips_per_artist", "4"),
    ("corpus.rms_loudness", "false"),
    ("codec.frame_len", "256"),
    ("codec.hop", "128"),
    ("codec.levels", "4"),
    ("codec.codebook_size", "32"),
    ("codec.kmeans_iters", "25"),
    ("codec.fit_clips", "40"),
    ("model.coarse_levels", "2"),
    ("model.embed_dim", "64"),
    ("model.layers", "4"),
    ("model.heads", "4"),
    ("model.max_len", "128"),
    ("model.rel_window", "32"),
    ("train.steps", "2000"),
    ("train.batch_size", "16"),
    ("train.lr", "0.003"),
    ("train.warmup", "100"),
    ("train.weight_decay", "0.01"),
    ("train.dropout", "0"),
    ("train.clip_norm", "1"),
    ("train.window", "64"),
    ("train.eval_every", "100"),
    ("sampler.coarse_steps", "12"),
    ("sampler.c2f_steps", "12"),
    ("sampler.temp0", "6.5"),
    ("eval.prompts", "periodic:P=16;compression:Nk=1+periodic:P=4"),
    ("eval.noise_ratios", "0.25,0.5,0.75"),
];

/// Flat `key = value` configuration; `#` starts a comment.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl RunConfig {
    pub fn keys() -> impl Iterator<Item = &'static str> {
        KEYS.iter().map(|(k, _)| *k)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match self.values.get_mut(key) {
            Some(v) => {
                *v = value.trim().to_string();
                Ok(())
            }
            None => Err(CliError::Usage(format!("unknown config key {key:?}"))),
        }
    }

    /// Applies `key=value`.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), CliError> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("expected key=value, got {pair:?}")))?;
        self.set(k.trim(), v)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.set_pair(line)
                .map_err(|e| CliError::Usage(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    pub fn get(&self, key: &str) -> &str {
        &self.values[key]
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T, CliError> {
        let v = self.get(key);
        v.parse()
            .map_err(|_| CliError::Usage(format!("config {key} = {v:?} has the wrong type")))
    }

    /// Resolved configuration, one sorted `key = value` per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// First 12 hex digits of the SHA-256 of the resolved text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    pub fn recipe(&self) -> Result<Recipe, CliError> {
        let framing = Framing {
            sample_rate: self.parse("corpus.sample_rate")?,
            frame_len: self.parse("codec.frame_len")?,
            hop: self.parse("codec.hop")?,
        };
        let codec = RvqFitParams {
            levels: self.parse("codec.levels")?,
            codebook_size: self.parse("codec.codebook_size")?,
            kmeans_iters: self.parse("codec.kmeans_iters")?,
            seed: self.parse("seed")?,
        };
        let coarse_levels: usize = self.parse("model.coarse_levels")?;
        if coarse_levels == 0 || coarse_levels >= codec.levels {
            return Err(CliError::Usage(format!(
                "model.coarse_levels must be in [1, {})",
                codec.levels
            )));
        }
        let shape = |cfg: ModelConfig| -> Result<ModelConfig, CliError> {
            Ok(ModelConfig {
                embed_dim: self.parse("model.embed_dim")?,
                layers: self.parse("model.layers")?,
                heads: self.parse("model.heads")?,
                max_len: self.parse("model.max_len")?,
                rel_window: self.parse("model.rel_window")?,
                ..cfg
            })
        };
        let clip_norm: f64 = self.parse("train.clip_norm")?;
        let recipe = Recipe {
            corpus: CorpusConfig {
                n_clips: self.parse("corpus.clips")?,
                split_seed: self.parse("corpus.split_seed")?,
                duration: self.parse("corpus.duration")?,
                sample_rate: framing.sample_rate,
                clips_per_artist: self.parse("corpus.clips_per_artist")?,
                rms_loudness: self.parse("corpus.rms_loudness")?,
                ..CorpusConfig::default()
            },
            framing,
            codec_clips: self.parse("codec.fit_clips")?,
            coarse_model: shape(ModelConfig::coarse(coarse_levels, codec.codebook_size))?,
            c2f_model: shape(ModelConfig::coarse_to_fine(
                coarse_levels,
                codec.levels - coarse_levels,
                codec.codebook_size,
            ))?,
            coarse_levels,
            codec,
            train: TrainConfig {
                steps: self.parse("train.steps")?,
                batch_size: self.parse("train.batch_size")?,
                lr: self.parse("train.lr")?,
                warmup: self.parse("train.warmup")?,
                weight_decay: self.parse("train.weight_decay")?,
                dropout: self.parse("train.dropout")?,
                clip_norm: (clip_norm > 0.0).then_some(clip_norm),
                seed: self.parse("seed")?,
                eval_every: self.parse("train.eval_every")?,
                window: Some(self.parse("train.window")?),
                ..TrainConfig::default()
            },
        };
        let check = |r: crate::Result<()>| r.map_err(|e| CliError::Usage(e.to_string()));
        check(recipe.framing.validate())?;
        check(recipe.coarse_model.validate())?;
        check(recipe.c2f_model.validate())?;
        check(recipe.train.validate())?;
        Ok(recipe)
    }

    pub fn prompts(&self, ctx: &PromptContext) -> Result<Vec<PromptSpec>, CliError> {
        self.get("eval.prompts")
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| PromptSpec::parse(s, ctx).map_err(|e| CliError::Usage(e.to_string())))
            .collect()
    }

    pub fn noise_ratios(&self) -> Result<Vec<f64>, CliError> {
        self.get("eval.noise_ratios")
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|r| (0.0..=1.0).contains(r))
                    .ok_or_else(|| CliError::Usage(format!("bad noise ratio {s:?}")))
            })
            .collect()
    }
}
