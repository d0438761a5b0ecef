use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{argument, Result};
use crate::tokenizer::Signal;

#[derive(Clone, Debug, PartialEq)]
pub struct MelConfig {
    /// `(fft size, mel bands)` per scale; the hop is a quarter of the FFT size.
    pub scales: Vec<(usize, usize)>,
    /// Floor applied before the logarithm.
    pub eps: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            scales: vec![(2048, 150), (512, 80)],
            eps: 1e-5,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return argument("mel config needs at least one scale");
        }
        for &(f, m) in &self.scales {
            if f < 4 || f % 4 != 0 || m == 0 {
                return argument(format!("invalid mel scale ({f}, {m})"));
            }
        }
        if !(self.eps > 0.0) {
            return argument("log floor must be positive");
        }
        Ok(())
    }

    /// Shortest signal every scale can frame.
    pub fn min_len(&self) -> usize {
        self.scales.iter().map(|s| s.0).max().unwrap_or(0)
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters with unit peaks, evenly spaced in mel from 0 Hz to
/// Nyquist. Rows are bands, columns are the `fft / 2 + 1` bins.
pub fn mel_filterbank(sample_rate: u32, fft: usize, bands: usize) -> Array2<f64> {
    let sr = f64::from(sample_rate);
    let bins = fft / 2 + 1;
    let top = hz_to_mel(sr / 2.0);
    let edges: Vec<f64> = (0..bands + 2)
        .map(|i| mel_to_hz(top * i as f64 / (bands + 1) as f64))
        .collect();
    Array2::from_shape_fn((bands, bins), |(m, k)| {
        let f = k as f64 * sr / fft as f64;
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        if f <= lo || f >= hi {
            0.0
        } else if f <= mid {
            (f - lo) / (mid - lo)
        } else {
            (hi - f) / (hi - mid)
        }
    })
}

/// Periodic Hann window.
fn analysis_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        .collect()
}

pub(crate) struct MelAnalyzer {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    bank: Array2<f64>,
    hop: usize,
    eps: f64,
}

impl MelAnalyzer {
    pub(crate) fn new(sample_rate: u32, fft: usize, bands: usize, hop: usize, eps: f64) -> Result<Self> {
        if fft == 0 || bands == 0 || hop == 0 {
            return argument("fft size, band count and hop must be positive");
        }
        Ok(Self {
            fft: FftPlanner::new().plan_fft_forward(fft),
            window: analysis_window(fft),
            bank: mel_filterbank(sample_rate, fft, bands),
            hop,
            eps,
        })
    }

    pub(crate) fn run(&self, x: &Signal) -> Result<Array2<f64>> {
        let f = self.window.len();
        if x.len() < f {
            return argument(format!("signal of {} samples is shorter than fft size {f}", x.len()));
        }
        let frames = 1 + (x.len() - f) / self.hop;
        let bins = f / 2 + 1;
        let mut out = Array2::zeros((frames, self.bank.nrows()));
        let mut buf = vec![Complex::new(0.0, 0.0); f];
        let mut mag = ndarray::Array1::zeros(bins);
        for i in 0..frames {
            let seg = &x.samples[i * self.hop..i * self.hop + f];
            for ((b, &s), &w) in buf.iter_mut().zip(seg).zip(&self.window) {
                *b = Complex::new(s * w, 0.0);
            }
            self.fft.process(&mut buf);
            for k in 0..bins {
                mag[k] = buf[k].norm();
            }
            let mel = self.bank.dot(&mag);
            for (o, v) in out.row_mut(i).iter_mut().zip(mel.iter()) {
                *o = v.max(self.eps).ln();
            }
        }
        Ok(out)
    }
}

/// Log-mel magnitude spectrogram, `frames x bands`.
pub fn log_mel(x: &Signal, fft: usize, bands: usize, hop: usize, eps: f64) -> Result<Array2<f64>> {
    MelAnalyzer::new(x.sample_rate, fft, bands, hop, eps)?.run(x)
}

/// Sum over scales of the entrywise L1 distance between log-mel matrices.
pub fn multiscale_mel_error(x: &Signal, y: &Signal, cfg: &MelConfig) -> Result<f64> {
    cfg.validate()?;
    if x.sample_rate != y.sample_rate || x.len() != y.len() {
        return argument(format!(
            "signals differ: {} samples at {} Hz vs {} samples at {} Hz",
            x.len(),
            x.sample_rate,
            y.len(),
            y.sample_rate
        ));
    }
    let mut total = 0.0;
    for &(f, m) in &cfg.scales {
        let a = log_mel(x, f, m, f / 4, cfg.eps)?;
        let b = log_mel(y, f, m, f / 4, cfg.eps)?;
        total += a.iter().zip(b.iter()).map(|(p, q)| (p - q).abs()).sum::<f64>();
    }
    Ok(total)
}
