//! Prompt masks: which tokens are given to the model as conditioning.
//!
//! Every constructor returns a [`MaskGrid`] where `true` marks a position to
//! generate. Prompts combine by intersecting their masked sets, so the
//! combination keeps every token that any component keeps.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::{argument, Error, Result};
use crate::synth::beats_to_steps;
use crate::tokens::MaskGrid;

/// All but every `period`-th timestep masked, counting from `offset`.
pub fn periodic_mask(timesteps: usize, levels: usize, period: usize, offset: usize) -> Result<MaskGrid> {
    if period == 0 {
        return argument("period must be >= 1");
    }
    if offset >= period {
        return argument(format!("offset {offset} must be below period {period}"));
    }
    MaskGrid::from_fn(timesteps, levels, |t, _| {
        t < offset || (t - offset) % period != 0
    })
}

/// Levels `0..keep` unmasked everywhere, finer levels masked.
pub fn compression_mask(timesteps: usize, levels: usize, keep: usize) -> Result<MaskGrid> {
    if keep > levels {
        return argument(format!("cannot keep {keep} of {levels} levels"));
    }
    MaskGrid::from_fn(timesteps, levels, |_, n| n >= keep)
}

/// First `prefix` and last `suffix` timesteps unmasked, the middle masked.
pub fn inpaint_mask(timesteps: usize, levels: usize, prefix: usize, suffix: usize) -> Result<MaskGrid> {
    if prefix + suffix > timesteps {
        return argument(format!(
            "prefix {prefix} + suffix {suffix} exceeds {timesteps} timesteps"
        ));
    }
    MaskGrid::from_fn(timesteps, levels, |t, _| {
        t >= prefix && t < timesteps - suffix
    })
}

/// For each beat `b`, timesteps `[b, min(b + width, T))` unmasked.
pub fn beat_mask(timesteps: usize, levels: usize, beats: &[usize], width: usize) -> Result<MaskGrid> {
    if beats.windows(2).any(|w| w[0] > w[1]) {
        return argument("beat indices must be sorted");
    }
    if let Some(&b) = beats.iter().find(|&&b| b >= timesteps) {
        return argument(format!("beat {b} outside [0, {timesteps})"));
    }
    let mut kept = vec![false; timesteps];
    for &b in beats {
        for k in kept.iter_mut().take((b + width).min(timesteps)).skip(b) {
            *k = true;
        }
    }
    MaskGrid::from_fn(timesteps, levels, |t, _| !kept[t])
}

/// Masked only where both inputs are masked.
pub fn combine(a: &MaskGrid, b: &MaskGrid) -> Result<MaskGrid> {
    if a.timesteps() != b.timesteps() || a.levels() != b.levels() {
        return argument("cannot combine masks of different shapes");
    }
    MaskGrid::from_fn(a.timesteps(), a.levels(), |t, n| a.get(t, n) && b.get(t, n))
}

/// Codec bitrate scaled by the fraction of tokens the prompt keeps.
pub fn effective_bitrate(mask: &MaskGrid, codec_bitrate: f64) -> Result<f64> {
    if !(codec_bitrate > 0.0) {
        return argument(format!("codec bitrate {codec_bitrate} must be positive"));
    }
    Ok(codec_bitrate * kept_fraction(mask))
}

pub fn kept_fraction(mask: &MaskGrid) -> f64 {
    mask.unmasked_count() as f64 / mask.len() as f64
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PromptSpec {
    Periodic { period: usize, offset: usize },
    Compression { keep: usize },
    Inpaint { prefix: usize, suffix: usize },
    /// Beat timesteps past the end of the grid are ignored when building a mask.
    Beat { beats: Vec<usize>, width: usize },
    Combined(Vec<PromptSpec>),
}

/// What a prompt's text form needs to resolve beat files.
#[derive(Clone, Debug)]
pub struct PromptContext {
    pub token_rate: f64,
    pub base_dir: PathBuf,
}

impl PromptContext {
    pub fn new(token_rate: f64) -> Self {
        Self {
            token_rate,
            base_dir: PathBuf::from("."),
        }
    }
}

impl PromptSpec {
    pub fn mask(&self, timesteps: usize, levels: usize) -> Result<MaskGrid> {
        match self {
            PromptSpec::Periodic { period, offset } => periodic_mask(timesteps, levels, *period, *offset),
            PromptSpec::Compression { keep } => compression_mask(timesteps, levels, *keep),
            PromptSpec::Inpaint { prefix, suffix } => inpaint_mask(timesteps, levels, *prefix, *suffix),
            PromptSpec::Beat { beats, width } => {
                let mut in_range: Vec<usize> = beats.iter().copied().filter(|&b| b < timesteps).collect();
                in_range.sort_unstable();
                in_range.dedup();
                beat_mask(timesteps, levels, &in_range, *width)
            }
            PromptSpec::Combined(parts) => {
                let mut acc = MaskGrid::filled(timesteps, levels, true)?;
                for p in parts {
                    acc = combine(&acc, &p.mask(timesteps, levels)?)?;
                }
                Ok(acc)
            }
        }
    }

    /// Parses the text form, e.g. `compression:Nk=1+periodic:P=4,offset=0`.
    pub fn parse(text: &str, ctx: &PromptContext) -> Result<Self> {
        let parts = text
            .split('+')
            .map(|p| parse_one(p.trim(), ctx))
            .collect::<Result<Vec<_>>>()?;
        Ok(match parts.len() {
            0 => return argument("empty prompt"),
            1 => parts.into_iter().next().unwrap(),
            _ => PromptSpec::Combined(parts),
        })
    }
}

fn parse_one(text: &str, ctx: &PromptContext) -> Result<PromptSpec> {
    let (kind, rest) = text.split_once(':').unwrap_or((text, ""));
    let mut fields: Vec<(String, String)> = Vec::new();
    for kv in rest.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Argument(format!("expected key=value in prompt, got {kv:?}")))?;
        fields.push((k.trim().to_string(), v.trim().to_string()));
    }
    let take = |key: &str| fields.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
    let num = |key: &str, default: Option<usize>| -> Result<usize> {
        match take(key) {
            Some(v) => v
                .parse()
                .map_err(|_| Error::Argument(format!("prompt field {key}={v} is not an integer"))),
            None => default.ok_or_else(|| Error::Argument(format!("prompt {kind:?} needs {key}="))),
        }
    };
    let allowed: &[&str] = match kind {
        "periodic" => &["P", "offset"],
        "compression" => &["Nk"],
        "inpaint" => &["prefix", "suffix"],
        "beat" => &["width", "file", "at"],
        _ => return argument(format!("unknown prompt kind {kind:?}")),
    };
    if let Some((k, _)) = fields.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
        return argument(format!("unknown field {k:?} for prompt {kind:?}"));
    }
    Ok(match kind {
        "periodic" => PromptSpec::Periodic {
            period: num("P", None)?,
            offset: num("offset", Some(0))?,
        },
        "compression" => PromptSpec::Compression { keep: num("Nk", None)? },
        "inpaint" => PromptSpec::Inpaint {
            prefix: num("prefix", Some(0))?,
            suffix: num("suffix", Some(0))?,
        },
        _ => {
            let width = num("width", None)?;
            let beats = match (take("file"), take("at")) {
                (Some(file), None) => {
                    let times = read_beat_file(&ctx.base_dir.join(file))?;
                    beats_to_steps(&times, ctx.token_rate)?
                }
                (None, Some(list)) => list
                    .split('/')
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse()
                            .map_err(|_| Error::Argument(format!("bad beat index {s:?}")))
                    })
                    .collect::<Result<Vec<usize>>>()?,
                _ => return argument("beat prompt needs exactly one of file= or at="),
            };
            PromptSpec::Beat { beats, width }
        }
    })
}

/// Reads one beat time in seconds per line; blank lines and `#` comments skipped.
pub fn read_beat_file(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.parse::<f64>()
                .map_err(|_| Error::Argument(format!("bad beat time {l:?} in {}", path.display())))
        })
        .collect()
}

impl fmt::Display for PromptSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PromptSpec::Periodic { period, offset } => write!(f, "periodic:P={period},offset={offset}"),
            PromptSpec::Compression { keep } => write!(f, "compression:Nk={keep}"),
            PromptSpec::Inpaint { prefix, suffix } => write!(f, "inpaint:prefix={prefix},suffix={suffix}"),
            PromptSpec::Beat { beats, width } => {
                let at: Vec<String> = beats.iter().map(ToString::to_string).collect();
                write!(f, "beat:width={width},at={}", at.join("/"))
            }
            PromptSpec::Combined(parts) => {
                for (i, p) in parts.iter().enumerate() {
                    if i > 0 {
                        f.write_str("+")?;
                    }
                    write!(f, "{p}")?;
                }
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unmasked_steps(m: &MaskGrid) -> Vec<usize> {
        (0..m.timesteps())
            .filter(|&t| (0..m.levels()).all(|n| !m.get(t, n)))
            .collect()
    }

    #[test]
    fn periodic_examples() {
        assert_eq!(periodic_mask(9, 3, 1, 0).unwrap().masked_count(), 0);
        let m = periodic_mask(8, 2, 2, 0).unwrap();
        assert_eq!(unmasked_steps(&m), vec![0, 2, 4, 6]);
        let long = periodic_mask(574, 1, 16, 0).unwrap();
        assert_eq!(unmasked_steps(&long).len(), 36);
        assert_eq!(unmasked_steps(&periodic_mask(10, 1, 4, 3).unwrap()), vec![3, 7]);
        assert!(periodic_mask(8, 1, 0, 0).is_err());
        assert!(periodic_mask(8, 1, 4, 4).is_err());
    }

    #[test]
    fn compression_examples() {
        assert_eq!(compression_mask(5, 4, 4).unwrap().masked_count(), 0);
        assert_eq!(compression_mask(5, 4, 0).unwrap().masked_count(), 20);
        let m = compression_mask(10, 14, 1).unwrap();
        assert!((kept_fraction(&m) - 1.0 / 14.0).abs() < 1e-15);
        assert!(compression_mask(5, 4, 5).is_err());
    }

    #[test]
    fn inpaint_examples() {
        let token_rate = 57.0;
        let context = (1.0f64 * token_rate).round() as usize;
        assert_eq!(context, 57);
        let m = inpaint_mask(300, 2, context, context).unwrap();
        assert_eq!(unmasked_steps(&m).len(), 114);
        assert_eq!(inpaint_mask(12, 2, 12, 0).unwrap().masked_count(), 0);
        assert_eq!(inpaint_mask(12, 2, 0, 0).unwrap().masked_count(), 24);
        assert!(inpaint_mask(12, 2, 7, 6).is_err());
    }

    #[test]
    fn beat_examples() {
        // 75 ms at 57 Hz
        assert_eq!((0.075f64 * 57.0).round() as usize, 4);
        assert_eq!(beat_mask(10, 2, &[], 3).unwrap().masked_count(), 20);
        assert_eq!(beat_mask(10, 2, &[0], 10).unwrap().masked_count(), 0);
        let m = beat_mask(10, 1, &[2, 8], 4).unwrap();
        assert_eq!(unmasked_steps(&m), vec![2, 3, 4, 5, 8, 9]);
        assert!(beat_mask(10, 1, &[5, 2], 1).is_err());
        assert!(beat_mask(10, 1, &[10], 1).is_err());
    }

    #[test]
    fn combine_algebra() {
        let x = periodic_mask(6, 3, 3, 1).unwrap();
        let all = MaskGrid::filled(6, 3, true).unwrap();
        let none = MaskGrid::filled(6, 3, false).unwrap();
        assert_eq!(combine(&x, &all).unwrap(), x);
        assert_eq!(combine(&x, &none).unwrap(), none);
        assert!(combine(&x, &MaskGrid::filled(6, 2, true).unwrap()).is_err());
    }

    #[test]
    fn periodic_plus_compression_pattern() {
        let n = 4;
        let m = combine(&periodic_mask(2, n, 2, 0).unwrap(), &compression_mask(2, n, 1).unwrap()).unwrap();
        // row 0: kept entirely; row 1: only level 0 kept
        let expected: Vec<bool> = [false; 4]
            .into_iter()
            .chain([false, true, true, true])
            .collect();
        assert_eq!(m.as_slice(), expected.as_slice());
    }

    #[test]
    fn bitrate_examples() {
        let b = 8000.0;
        assert_eq!(effective_bitrate(&MaskGrid::filled(4, 14, false).unwrap(), b).unwrap(), b);
        assert_eq!(effective_bitrate(&MaskGrid::filled(4, 14, true).unwrap(), b).unwrap(), 0.0);
        let r = effective_bitrate(&compression_mask(57, 14, 1).unwrap(), b).unwrap();
        assert!((r - 8000.0 / 14.0).abs() < 1e-9);
        assert_eq!(format!("{r:.2}"), "571.43");
        assert!(effective_bitrate(&MaskGrid::filled(1, 1, false).unwrap(), 0.0).is_err());
    }

    #[test]
    fn text_form_round_trips() {
        let ctx = PromptContext::new(62.5);
        for text in [
            "periodic:P=16,offset=0",
            "compression:Nk=1",
            "inpaint:prefix=57,suffix=57",
            "beat:width=4,at=0/28/57",
            "compression:Nk=1+periodic:P=4,offset=0",
        ] {
            let spec = PromptSpec::parse(text, &ctx).unwrap();
            assert_eq!(spec.to_string(), text);
        }
        assert_eq!(
            PromptSpec::parse("periodic:P=2", &ctx).unwrap(),
            PromptSpec::Periodic { period: 2, offset: 0 }
        );
        assert!(PromptSpec::parse("periodic:Q=2", &ctx).is_err());
        assert!(PromptSpec::parse("wobble:P=2", &ctx).is_err());
        assert!(PromptSpec::parse("beat:width=2", &ctx).is_err());
    }

    #[test]
    fn beat_file_prompt() {
        let dir = std::env::temp_dir().join(format!("vampnet-beats-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("beats.txt"), "0.0\n0.5\n# comment\n1.0\n").unwrap();
        let ctx = PromptContext {
            token_rate: 57.0,
            base_dir: dir.clone(),
        };
        let spec = PromptSpec::parse("beat:width=4,file=beats.txt", &ctx).unwrap();
        assert_eq!(
            spec,
            PromptSpec::Beat {
                beats: vec![0, 28, 57],
                width: 4
            }
        );
        // beat 57 falls outside a 40-step grid and is dropped
        let m = spec.mask(40, 1).unwrap();
        assert_eq!(m.unmasked_count(), 8);
        std::fs::remove_dir_all(dir).ok();
    }
}
