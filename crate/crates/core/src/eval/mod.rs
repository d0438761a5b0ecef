//! Reconstruction and distribution metrics.
//!
//! The distribution metric is a Fréchet distance between Gaussian fits of a
//! proxy embedding (per-band log-mel mean and standard deviation). Its values
//! only support orderings between conditions.

mod frechet;
mod mel;

use std::io::Write;

use rand::seq::index;
use rand::Rng;

pub use frechet::{frechet, psd_sqrt, GaussianStats};
pub use mel::{hz_to_mel, log_mel, mel_filterbank, mel_to_hz, multiscale_mel_error, MelConfig};

use crate::error::{argument, Result};
use crate::tokenizer::Signal;
use crate::tokens::TokenGrid;

pub const EMBED_FFT: usize = 512;
pub const EMBED_BANDS: usize = 80;

/// Per-band mean then per-band population standard deviation of the
/// 512-point, 80-band log-mel matrix.
pub fn embed(x: &Signal, eps: f64) -> Result<Vec<f64>> {
    let m = log_mel(x, EMBED_FFT, EMBED_BANDS, EMBED_FFT / 4, eps)?;
    let frames = m.nrows() as f64;
    let mean: Vec<f64> = m.columns().into_iter().map(|c| c.sum() / frames).collect();
    let std = m
        .columns()
        .into_iter()
        .zip(&mean)
        .map(|(c, mu)| (c.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / frames).sqrt());
    Ok(mean.iter().copied().chain(std).collect())
}

/// Fréchet distance between the embedding distributions of two clip sets.
pub fn fad(reference: &[Vec<f64>], generated: &[Vec<f64>]) -> Result<f64> {
    frechet(&GaussianStats::fit(reference)?, &GaussianStats::fit(generated)?)
}

/// Replaces `ceil(r * T * N)` positions, drawn without replacement, with
/// uniform tokens from their level vocabularies.
pub fn noisy_baseline<R: Rng + ?Sized>(g: &TokenGrid, r: f64, rng: &mut R) -> Result<TokenGrid> {
    if !(0.0..=1.0).contains(&r) {
        return argument(format!("noise ratio {r} outside [0, 1]"));
    }
    let (t, n) = (g.timesteps(), g.levels());
    let total = t * n;
    let count = ((r * total as f64).ceil() as usize).min(total);
    let mut out = g.clone();
    for i in index::sample(rng, total, count) {
        let (ti, ni) = (i / n, i % n);
        let token = rng.gen_range(0..g.vocab_at(ni)) as u16;
        out.set(ti, ni, token)?;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub clip_id: String,
    pub prompt: String,
    pub steps: usize,
    pub bitrate_bps: f64,
    pub mel_error: f64,
    /// Rows sharing a group are pooled into one FAD value.
    pub group: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub group: String,
    pub clips: usize,
    pub mean_mel_error: f64,
    pub fad: f64,
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricRow], mut sink: W) -> Result<()> {
    writeln!(sink, "clip_id,prompt_spec,steps,bitrate_bps,mel_error,group")?;
    for r in rows {
        writeln!(
            sink,
            "{},{},{},{},{},{}",
            r.clip_id,
            csv_field(&r.prompt),
            r.steps,
            r.bitrate_bps,
            r.mel_error,
            csv_field(&r.group)
        )?;
    }
    Ok(())
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], mut sink: W) -> Result<()> {
    writeln!(sink, "group,clips,mean_mel_error,fad")?;
    for r in rows {
        writeln!(sink, "{},{},{},{}", csv_field(&r.group), r.clips, r.mean_mel_error, r.fad)?;
    }
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
