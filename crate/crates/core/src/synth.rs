//! Deterministic music-like clips with a known beat grid.
//!
//! A clip is a chord progression (harmonic tones restruck every bar with an
//! exponential decay) plus a short noise click on every beat. Presets play the
//! role of artists: every clip of one preset shares its key, progression,
//! timbre and tempo range, and corpus splits never share a preset.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{argument, Error, Result};
use crate::tokenizer::Signal;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Genre {
    Ambient,
    Techno,
    Folk,
}

impl Genre {
    pub const ALL: [Genre; 3] = [Genre::Ambient, Genre::Techno, Genre::Folk];

    pub fn name(self) -> &'static str {
        match self {
            Genre::Ambient => "ambient",
            Genre::Techno => "techno",
            Genre::Folk => "folk",
        }
    }
}

/// Genre-like parameter bundle shared by every clip of one artist.
#[derive(Clone, Debug, PartialEq)]
pub struct Preset {
    pub genre: Genre,
    pub artist: u64,
    pub root_hz: f64,
    /// Semitone offsets of the scale.
    pub scale: Vec<i32>,
    /// Scale-degree roots of the chords, one per bar.
    pub progression: Vec<usize>,
    pub harmonics: usize,
    pub click_gain: f64,
    /// Chord envelope decay rate in 1/s.
    pub decay: f64,
    pub tempo_range: (f64, f64),
}

const MAJOR: [i32; 7] = [0, 2, 4, 5, 7, 9, 11];
const MINOR: [i32; 7] = [0, 2, 3, 5, 7, 8, 10];

impl Preset {
    pub fn new(genre: Genre, artist: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(artist ^ 0x5EED_0F_A27157);
        let root_hz = 110.0 * 2f64.powf(rng.gen_range(0..12) as f64 / 12.0);
        let mut progression: Vec<usize> = (0..4).map(|_| rng.gen_range(0..7)).collect();
        progression[0] = 0;
        let (scale, harmonics, click_gain, decay, tempo_range) = match genre {
            Genre::Ambient => (MINOR.to_vec(), 6, 0.12, 0.8, (66.0, 80.0)),
            Genre::Techno => (MINOR.to_vec(), 2, 0.9, 6.0, (124.0, 136.0)),
            Genre::Folk => (MAJOR.to_vec(), 4, 0.35, 2.5, (92.0, 110.0)),
        };
        Self {
            genre,
            artist,
            root_hz: if genre == Genre::Ambient { root_hz / 2.0 } else { root_hz },
            scale,
            progression,
            harmonics,
            click_gain,
            decay,
            tempo_range,
        }
    }

    fn degree_hz(&self, degree: usize) -> f64 {
        let len = self.scale.len();
        let octave = (degree / len) as i32;
        let semis = self.scale[degree % len] + 12 * octave;
        self.root_hz * 2f64.powf(f64::from(semis) / 12.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipSpec {
    pub seed: u64,
    pub tempo: f64,
    pub duration: f64,
    pub sample_rate: u32,
    pub preset: Preset,
    /// Normalize to -24 dBFS RMS instead of a -1 dBFS peak.
    pub rms_loudness: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub signal: Signal,
    pub beat_times: Vec<f64>,
}

/// Beat times `k * 60 / tempo` below `duration`.
pub fn beat_times(tempo: f64, duration: f64) -> Vec<f64> {
    let interval = 60.0 / tempo;
    (0..)
        .map(|k| k as f64 * interval)
        .take_while(|&t| t < duration)
        .collect()
}

pub fn generate_clip(spec: &ClipSpec) -> Result<Clip> {
    if !(spec.tempo > 0.0) || !(spec.duration > 0.0) || spec.sample_rate == 0 {
        return argument("clip needs positive tempo, duration and sample rate");
    }
    let sr = f64::from(spec.sample_rate);
    let len = (spec.duration * sr).round() as usize;
    let beats = beat_times(spec.tempo, spec.duration);
    let beat_len = 60.0 / spec.tempo;
    let bar_len = 4.0 * beat_len;
    let preset = &spec.preset;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = vec![0.0f64; len];

    let bars = (spec.duration / bar_len).ceil() as usize;
    for bar in 0..bars {
        let start = bar as f64 * bar_len;
        let root = preset.progression[bar % preset.progression.len()];
        let begin = (start * sr).round() as usize;
        let end = (((start + bar_len) * sr).round() as usize).min(len);
        for (voice, degree) in [root, root + 2, root + 4].into_iter().enumerate() {
            let f0 = preset.degree_hz(degree);
            let gain = if voice == 0 { 0.5 } else { 0.35 };
            for h in 1..=preset.harmonics {
                let f = f0 * h as f64;
                if f >= sr / 2.0 {
                    break;
                }
                let phase = rng.gen_range(0.0..2.0 * PI);
                let amp = gain / h as f64;
                for (i, y) in out.iter_mut().enumerate().take(end).skip(begin) {
                    let t = (i - begin) as f64 / sr;
                    *y += amp * (-preset.decay * t).exp() * (2.0 * PI * f * t + phase).sin();
                }
            }
        }
    }

    let click_len = (0.012 * sr) as usize;
    for &bt in &beats {
        let at = (bt * sr).round() as usize;
        for (k, y) in out.iter_mut().skip(at).take(click_len).enumerate() {
            let env = (-(k as f64) / (0.002 * sr)).exp();
            *y += preset.click_gain * 3.0 * env * rng.gen_range(-1.0..1.0);
        }
    }

    if spec.rms_loudness {
        let rms = (out.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
        if rms > 0.0 {
            let g = 10f64.powf(-24.0 / 20.0) / rms;
            out.iter_mut().for_each(|v| *v = (*v * g).clamp(-1.0, 1.0));
        }
    } else {
        let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 0.0 {
            let g = 10f64.powf(-1.0 / 20.0) / peak;
            out.iter_mut().for_each(|v| *v *= g);
        }
    }

    Ok(Clip {
        signal: Signal::new(spec.sample_rate, out)?,
        beat_times: beats,
    })
}

/// `floor(time * token_rate)`, sorted and deduplicated.
pub fn beats_to_steps(beat_times: &[f64], token_rate: f64) -> Result<Vec<usize>> {
    if !(token_rate > 0.0) {
        return argument(format!("token rate {token_rate} must be positive"));
    }
    if beat_times.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return argument("beat times must be finite and non-negative");
    }
    let mut steps: Vec<usize> = beat_times
        .iter()
        .map(|t| (t * token_rate).floor() as usize)
        .collect();
    steps.sort_unstable();
    steps.dedup();
    Ok(steps)
}

/// Drops steps at or past `timesteps`.
pub fn clip_steps(steps: &[usize], timesteps: usize) -> Vec<usize> {
    steps.iter().copied().filter(|&s| s < timesteps).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusConfig {
    pub n_clips: usize,
    pub split_seed: u64,
    pub duration: f64,
    pub sample_rate: u32,
    /// Clips per artist preset.
    pub clips_per_artist: usize,
    /// Fractions for train / validation / test.
    pub ratios: (f64, f64, f64),
    pub rms_loudness: bool,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_clips: 120,
            split_seed: 0,
            duration: 2.0,
            sample_rate: 8000,
            clips_per_artist: 4,
            ratios: (0.90, 0.05, 0.05),
            rms_loudness: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSplits {
    pub train: Vec<ClipSpec>,
    pub val: Vec<ClipSpec>,
    pub test: Vec<ClipSpec>,
}

impl CorpusSplits {
    pub fn all(&self) -> impl Iterator<Item = (&'static str, &ClipSpec)> {
        self.train
            .iter()
            .map(|c| ("train", c))
            .chain(self.val.iter().map(|c| ("val", c)))
            .chain(self.test.iter().map(|c| ("test", c)))
    }
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Train/validation/test clip lists. Each split draws artists and clip seeds
/// from its own disjoint range, so no artist appears in two splits.
pub fn build_corpus(cfg: &CorpusConfig) -> Result<CorpusSplits> {
    if cfg.n_clips < 3 {
        return argument(format!("need at least 3 clips, got {}", cfg.n_clips));
    }
    if cfg.clips_per_artist == 0 {
        return argument("clips_per_artist must be positive");
    }
    let n = cfg.n_clips;
    let val = ((cfg.ratios.1 * n as f64).round() as usize).max(1);
    let test = ((cfg.ratios.2 * n as f64).round() as usize).max(1);
    let train = n.checked_sub(val + test).filter(|&t| t >= 1).ok_or_else(|| {
        Error::Argument(format!("ratios leave no training clips out of {n}"))
    })?;

    let make = |split: u64, count: usize| -> Vec<ClipSpec> {
        (0..count)
            .map(|i| {
                let artist_index = (i / cfg.clips_per_artist) as u64;
                let artist = (split << 32) | artist_index;
                let genre = Genre::ALL[(mix(cfg.split_seed, artist) % 3) as usize];
                let preset = Preset::new(genre, mix(cfg.split_seed, artist));
                let seed = (split << 32) | i as u64;
                let clip_seed = mix(cfg.split_seed ^ 0xC11F, seed);
                let mut rng = ChaCha8Rng::seed_from_u64(clip_seed);
                let tempo = rng.gen_range(preset.tempo_range.0..preset.tempo_range.1);
                ClipSpec {
                    seed: clip_seed,
                    tempo,
                    duration: cfg.duration,
                    sample_rate: cfg.sample_rate,
                    preset,
                    rms_loudness: cfg.rms_loudness,
                }
            })
            .collect()
    };
    Ok(CorpusSplits {
        train: make(0, train),
        val: make(1, val),
        test: make(2, test),
    })
}

/// 16-bit mono PCM; samples clipped to `[-1, 1]`.
pub fn write_wav(path: &Path, signal: &Signal) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &signal.samples {
        w.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)
            .map_err(wav_err)?;
    }
    w.finalize().map_err(wav_err)
}

pub fn read_wav(path: &Path) -> Result<Signal> {
    let mut r = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = r.spec();
    if spec.channels != 1 || spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return argument(format!("{}: expected 16-bit mono PCM", path.display()));
    }
    let samples = r
        .samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / 32767.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(wav_err)?;
    Signal::new(spec.sample_rate, samples)
}

fn wav_err(e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::Argument(format!("wav: {other}")),
    }
}

/// One beat time in seconds per line.
pub fn write_beats(path: &Path, beats: &[f64]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for b in beats {
        writeln!(f, "{b}")?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(genre: Genre, tempo: f64, duration: f64) -> ClipSpec {
        ClipSpec {
            seed: 11,
            tempo,
            duration,
            sample_rate: 8000,
            preset: Preset::new(genre, 3),
            rms_loudness: false,
        }
    }

    #[test]
    fn beats_at_120_bpm() {
        let clip = generate_clip(&spec(Genre::Folk, 120.0, 2.0)).unwrap();
        assert_eq!(clip.beat_times, vec![0.0, 0.5, 1.0, 1.5]);
        assert_eq!(clip.signal.len(), 16000);
        let peak = clip.signal.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 10f64.powf(-0.05)).abs() < 1e-12);
    }

    #[test]
    fn clips_are_deterministic() {
        let s = spec(Genre::Techno, 128.0, 1.0);
        assert_eq!(generate_clip(&s).unwrap(), generate_clip(&s).unwrap());
    }

    #[test]
    fn rms_loudness_sets_rms() {
        let mut s = spec(Genre::Ambient, 70.0, 1.5);
        s.rms_loudness = true;
        let x = generate_clip(&s).unwrap().signal;
        let rms = (x.samples.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
        assert!((20.0 * rms.log10() + 24.0).abs() < 0.1);
    }

    #[test]
    fn clicks_are_the_strongest_onsets() {
        let s = spec(Genre::Techno, 120.0, 2.0);
        let clip = generate_clip(&s).unwrap();
        let x = &clip.signal.samples;
        let energy = |a: usize, b: usize| x[a..b].iter().map(|v| v * v).sum::<f64>() / (b - a) as f64;
        // 2 ms after versus 32 ms before, on an 8-sample hop
        let hop = 8;
        let mut strength: Vec<(usize, f64)> = (0..(x.len() - 16) / hop)
            .map(|k| {
                let i = k * hop;
                let before = if i == 0 { 0.0 } else { energy(i.saturating_sub(256), i) };
                (i, energy(i, i + 16) / (before + 1e-6))
            })
            .collect();
        strength.sort_by(|a, b| b.1.total_cmp(&a.1));
        let mut peaks: Vec<usize> = Vec::new();
        for (i, _) in strength {
            if peaks.iter().all(|&p| p.abs_diff(i) > 800) {
                peaks.push(i);
            }
            if peaks.len() == 4 {
                break;
            }
        }
        peaks.sort_unstable();
        for (found, beat) in peaks.iter().zip(&clip.beat_times) {
            let expected = (beat * 8000.0).round() as usize;
            assert!(found.abs_diff(expected) <= 16, "onset at {found}, beat at {expected}");
        }
    }

    #[test]
    fn click_onset_is_on_the_beat_sample() {
        let mut s = spec(Genre::Techno, 100.0, 1.0);
        s.preset.harmonics = 0;
        let clip = generate_clip(&s).unwrap();
        for &b in &clip.beat_times {
            let at = (b * 8000.0).round() as usize;
            assert!(at == 0 || clip.signal.samples[at - 1] == 0.0);
            assert!(clip.signal.samples[at] != 0.0 || clip.signal.samples[at + 1] != 0.0);
        }
    }

    #[test]
    fn beats_to_steps_examples() {
        assert_eq!(beats_to_steps(&[0.0, 0.5, 1.0], 57.0).unwrap(), vec![0, 28, 57]);
        assert!(beats_to_steps(&[], 57.0).unwrap().is_empty());
        assert_eq!(beats_to_steps(&[0.01, 0.0], 57.0).unwrap(), vec![0]);
        assert_eq!(clip_steps(&[0, 28, 57], 40), vec![0, 28]);
        assert!(beats_to_steps(&[0.1], 0.0).is_err());
    }

    #[test]
    fn corpus_splits_are_disjoint() {
        let cfg = CorpusConfig {
            n_clips: 60,
            ..CorpusConfig::default()
        };
        let a = build_corpus(&cfg).unwrap();
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (54, 3, 3));
        let seeds = |v: &[ClipSpec]| v.iter().map(|c| c.seed).collect::<std::collections::HashSet<_>>();
        let artists = |v: &[ClipSpec]| v.iter().map(|c| c.preset.artist).collect::<std::collections::HashSet<_>>();
        for (x, y) in [(&a.train, &a.val), (&a.train, &a.test), (&a.val, &a.test)] {
            assert!(seeds(x).is_disjoint(&seeds(y)));
            assert!(artists(x).is_disjoint(&artists(y)));
        }
        assert_eq!(build_corpus(&cfg).unwrap(), a);
        assert!(build_corpus(&CorpusConfig { n_clips: 2, ..cfg }).is_err());
    }
}
