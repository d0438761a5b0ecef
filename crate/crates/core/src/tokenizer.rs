//! Residual vector quantizer over windowed signal frames.
//!
//! The codec frames a waveform with a Hann window, quantizes every frame
//! through `N` residual stages (stage `i` quantizes what stages `< i` left
//! over), and decodes by summing the chosen entries and recombining frames
//! with weighted overlap-add. Entry 0 of every codebook is the zero vector,
//! so residual norms never grow from one stage to the next and silence
//! encodes to all-zero tokens.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{argument, format_err, Result};
use crate::tokens::TokenGrid;

pub const CODEC_MAGIC: &[u8; 4] = b"VMPC";
pub const CODEC_VERSION: u8 = 1;

/// Mono audio, samples nominally in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Signal {
    pub sample_rate: u32,
    pub samples: Vec<f64>,
}

impl Signal {
    pub fn new(sample_rate: u32, samples: Vec<f64>) -> Result<Self> {
        if sample_rate == 0 {
            return argument("sample rate must be positive");
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return argument(format!("non-finite sample at index {i}"));
        }
        Ok(Self {
            sample_rate,
            samples,
        })
    }

    pub fn silence(sample_rate: u32, len: usize) -> Self {
        Self {
            sample_rate,
            samples: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

/// Hann window shifted by half a sample: `sin^2(pi (n + 1/2) / L)`.
///
/// Strictly positive, and sums to one under a hop of `L / 2`.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| {
            let s = (std::f64::consts::PI * (n as f64 + 0.5) / len as f64).sin();
            s * s
        })
        .collect()
}

/// Framing shared by the codec and everything that slices signals into frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Framing {
    pub sample_rate: u32,
    pub frame_len: usize,
    pub hop: usize,
}

impl Default for Framing {
    fn default() -> Self {
        Self {
            sample_rate: 8000,
            frame_len: 256,
            hop: 128,
        }
    }
}

impl Framing {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return argument("sample rate must be positive");
        }
        if self.frame_len == 0 || self.hop == 0 || self.hop > self.frame_len {
            return argument(format!(
                "need 0 < hop <= frame_len, got hop={} frame_len={}",
                self.hop, self.frame_len
            ));
        }
        Ok(())
    }

    /// Latent timesteps per second.
    pub fn token_rate(&self) -> f64 {
        f64::from(self.sample_rate) / self.hop as f64
    }

    /// `1 + floor((len - frame_len) / hop)`, or `None` when `len < frame_len`.
    pub fn frame_count(&self, len: usize) -> Option<usize> {
        (len >= self.frame_len).then(|| 1 + (len - self.frame_len) / self.hop)
    }

    /// Sample count covered by `frames` frames.
    pub fn signal_len(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop + self.frame_len
        }
    }

    /// Windowed frames of `signal`, one `frame_len` vector per timestep.
    pub fn frames(&self, signal: &Signal) -> Result<Vec<FrameVector>> {
        self.validate()?;
        if signal.sample_rate != self.sample_rate {
            return argument(format!(
                "signal sample rate {} differs from codec rate {}",
                signal.sample_rate, self.sample_rate
            ));
        }
        let count = self.frame_count(signal.len()).ok_or_else(|| {
            crate::Error::Argument(format!(
                "signal of {} samples shorter than one frame ({})",
                signal.len(),
                self.frame_len
            ))
        })?;
        let window = hann_window(self.frame_len);
        Ok((0..count)
            .map(|t| {
                let start = t * self.hop;
                FrameVector(
                    signal.samples[start..start + self.frame_len]
                        .iter()
                        .zip(&window)
                        .map(|(x, w)| x * w)
                        .collect(),
                )
            })
            .collect())
    }

    /// Weighted overlap-add of frame estimates, normalized by the summed
    /// squared window so that analysis followed by synthesis is the identity.
    pub fn overlap_add(&self, frames: &[FrameVector], sample_rate: u32) -> Result<Signal> {
        let window = hann_window(self.frame_len);
        let len = self.signal_len(frames.len());
        let mut out = vec![0.0; len];
        let mut norm = vec![0.0; len];
        for (t, frame) in frames.iter().enumerate() {
            if frame.0.len() != self.frame_len {
                return argument("frame length mismatch in overlap-add");
            }
            let start = t * self.hop;
            for (k, (&v, &w)) in frame.0.iter().zip(&window).enumerate() {
                out[start + k] += w * v;
                norm[start + k] += w * w;
            }
        }
        for (y, n) in out.iter_mut().zip(&norm) {
            *y /= n;
        }
        Signal::new(sample_rate, out)
    }
}

/// One windowed frame (`D = frame_len` values).
#[derive(Clone, Debug, PartialEq)]
pub struct FrameVector(pub Vec<f64>);

impl FrameVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }
}

/// `C` entries of dimension `D`; entry 0 is the zero vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    pub level: usize,
    dim: usize,
    entries: Vec<f32>,
}

impl Codebook {
    pub fn new(level: usize, dim: usize, entries: Vec<f32>) -> Result<Self> {
        if dim == 0 || entries.is_empty() || entries.len() % dim != 0 {
            return argument(format!(
                "codebook data of {} values is not a multiple of D={dim}",
                entries.len()
            ));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return argument(format!("codebook {level} has non-finite entries"));
        }
        if entries[..dim].iter().any(|&v| v != 0.0) {
            return argument(format!("entry 0 of codebook {level} must be the zero vector"));
        }
        Ok(Self {
            level,
            dim,
            entries,
        })
    }

    pub fn size(&self) -> usize {
        self.entries.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, index: usize) -> &[f32] {
        &self.entries[index * self.dim..(index + 1) * self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.entries
    }

    /// Nearest entry by Euclidean distance; ties go to the lowest index.
    pub fn nearest(&self, residual: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for c in 0..self.size() {
            let d = sq_dist(residual, self.entry(c));
            if d < best.1 {
                best = (c, d);
            }
        }
        best
    }
}

fn sq_dist(a: &[f64], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x - f64::from(y);
            d * d
        })
        .sum()
}

/// A fitted residual vector quantizer.
#[derive(Clone, Debug, PartialEq)]
pub struct RvqCodec {
    pub framing: Framing,
    codebooks: Vec<Codebook>,
}

impl RvqCodec {
    pub fn new(framing: Framing, codebooks: Vec<Codebook>) -> Result<Self> {
        framing.validate()?;
        let Some(first) = codebooks.first() else {
            return argument("codec needs at least one codebook");
        };
        let size = first.size();
        if size < 2 || size > u16::MAX as usize || codebooks.len() > u8::MAX as usize {
            return argument(format!(
                "unsupported codec shape N={} C={size}",
                codebooks.len()
            ));
        }
        for (i, cb) in codebooks.iter().enumerate() {
            if cb.level != i || cb.size() != size || cb.dim() != framing.frame_len {
                return argument(format!("codebook {i} has inconsistent shape or level"));
            }
        }
        Ok(Self { framing, codebooks })
    }

    pub fn levels(&self) -> usize {
        self.codebooks.len()
    }

    pub fn codebook_size(&self) -> usize {
        self.codebooks[0].size()
    }

    pub fn dim(&self) -> usize {
        self.framing.frame_len
    }

    pub fn codebooks(&self) -> &[Codebook] {
        &self.codebooks
    }

    pub fn token_rate(&self) -> f64 {
        self.framing.token_rate()
    }

    /// Bits per second of the full token stream.
    pub fn bitrate(&self) -> f64 {
        self.token_rate() * self.levels() as f64 * (self.codebook_size() as f64).log2()
    }

    pub fn vocab(&self) -> Vec<u32> {
        vec![self.codebook_size() as u32; self.levels()]
    }

    /// Tokens for one frame plus the residual left after every stage.
    pub fn quantize_frame(&self, frame: &FrameVector) -> (Vec<u16>, Vec<f64>) {
        let mut residual = frame.0.clone();
        let tokens = self
            .codebooks
            .iter()
            .map(|cb| {
                let (idx, _) = cb.nearest(&residual);
                for (r, &e) in residual.iter_mut().zip(cb.entry(idx)) {
                    *r -= f64::from(e);
                }
                idx as u16
            })
            .collect();
        (tokens, residual)
    }

    /// Residual norms `||R_0||, ||R_1||, ..., ||R_N||` for one frame.
    pub fn residual_norms(&self, frame: &FrameVector) -> Vec<f64> {
        let mut residual = frame.0.clone();
        let mut norms = vec![frame.norm_sq().sqrt()];
        for cb in &self.codebooks {
            let (idx, _) = cb.nearest(&residual);
            for (r, &e) in residual.iter_mut().zip(cb.entry(idx)) {
                *r -= f64::from(e);
            }
            norms.push(residual.iter().map(|v| v * v).sum::<f64>().sqrt());
        }
        norms
    }

    pub fn encode_frames(&self, frames: &[FrameVector]) -> Result<TokenGrid> {
        if frames.is_empty() {
            return argument("no frames to encode");
        }
        if let Some(f) = frames.iter().find(|f| f.dim() != self.dim()) {
            return argument(format!("frame dimension {} != codec D {}", f.dim(), self.dim()));
        }
        let rows: Vec<Vec<u16>> = frames
            .par_iter()
            .map(|f| self.quantize_frame(f).0)
            .collect();
        TokenGrid::new(frames.len(), self.vocab(), rows.concat())
    }

    pub fn encode(&self, signal: &Signal) -> Result<TokenGrid> {
        let frames = self.framing.frames(signal)?;
        self.encode_frames(&frames)
    }

    /// Per-timestep frame estimates from the first `levels` quantizers.
    pub fn reconstruct_frames(&self, grid: &TokenGrid, levels: usize) -> Result<Vec<FrameVector>> {
        self.check_grid(grid)?;
        if levels > self.levels() {
            return argument(format!("cannot use {levels} of {} levels", self.levels()));
        }
        Ok((0..grid.timesteps())
            .map(|t| {
                let mut frame = vec![0.0; self.dim()];
                for (n, cb) in self.codebooks.iter().take(levels).enumerate() {
                    for (v, &e) in frame.iter_mut().zip(cb.entry(grid.get(t, n) as usize)) {
                        *v += f64::from(e);
                    }
                }
                FrameVector(frame)
            })
            .collect())
    }

    pub fn decode(&self, grid: &TokenGrid) -> Result<Signal> {
        self.decode_levels(grid, self.levels())
    }

    /// Decodes using only the `levels` coarsest quantizers.
    pub fn decode_levels(&self, grid: &TokenGrid, levels: usize) -> Result<Signal> {
        let frames = self.reconstruct_frames(grid, levels)?;
        self.framing.overlap_add(&frames, self.framing.sample_rate)
    }

    fn check_grid(&self, grid: &TokenGrid) -> Result<()> {
        if grid.levels() != self.levels() {
            return argument(format!(
                "grid has {} levels, codec has {}",
                grid.levels(),
                self.levels()
            ));
        }
        if grid.vocab().iter().any(|&c| c as usize != self.codebook_size()) {
            return argument("grid vocabulary does not match codebook size");
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (n, c, d) = (self.levels(), self.codebook_size(), self.dim());
        let mut out = Vec::with_capacity(24 + 4 * n * c * d);
        out.extend_from_slice(CODEC_MAGIC);
        out.push(CODEC_VERSION);
        out.extend_from_slice(&self.framing.sample_rate.to_le_bytes());
        out.extend_from_slice(&(self.framing.frame_len as u32).to_le_bytes());
        out.extend_from_slice(&(self.framing.hop as u32).to_le_bytes());
        out.push(n as u8);
        out.extend_from_slice(&(c as u16).to_le_bytes());
        out.extend_from_slice(&(d as u32).to_le_bytes());
        for cb in &self.codebooks {
            for v in cb.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        const HEADER: usize = 4 + 1 + 4 + 4 + 4 + 1 + 2 + 4;
        if bytes.len() < HEADER {
            return format_err(bytes.len(), "truncated codec header");
        }
        if &bytes[..4] != CODEC_MAGIC {
            return format_err(0, "bad codec magic");
        }
        if bytes[4] != CODEC_VERSION {
            return Err(crate::Error::UnsupportedVersion {
                found: bytes[4],
                expected: CODEC_VERSION,
            });
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let sample_rate = u32_at(5);
        let frame_len = u32_at(9) as usize;
        let hop = u32_at(13) as usize;
        let n = bytes[17] as usize;
        let c = u16::from_le_bytes([bytes[18], bytes[19]]) as usize;
        let d = u32_at(20) as usize;
        if d != frame_len {
            return format_err(20, format!("D={d} differs from frame_len={frame_len}"));
        }
        let expected = n * c * d * 4;
        if bytes.len() - HEADER != expected {
            return format_err(
                HEADER,
                format!(
                    "codebook payload has {} bytes, expected {expected}",
                    bytes.len() - HEADER
                ),
            );
        }
        let values: Vec<f32> = bytes[HEADER..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let codebooks = values
            .chunks(c * d)
            .enumerate()
            .map(|(level, chunk)| Codebook::new(level, d, chunk.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(
            Framing {
                sample_rate,
                frame_len,
                hop,
            },
            codebooks,
        )
    }

    pub fn write_to<W: Write>(&self, sink: &mut W) -> Result<usize> {
        let bytes = self.to_bytes();
        sink.write_all(&bytes)?;
        Ok(bytes.len())
    }

    pub fn read_from<R: Read>(source: &mut R) -> Result<Self> {
        let mut bytes = Vec::new();
        source.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

/// Settings for [`fit_rvq`].
#[derive(Clone, Debug, PartialEq)]
pub struct RvqFitParams {
    pub levels: usize,
    pub codebook_size: usize,
    pub kmeans_iters: usize,
    pub seed: u64,
}

impl Default for RvqFitParams {
    fn default() -> Self {
        Self {
            levels: 6,
            codebook_size: 64,
            kmeans_iters: 25,
            seed: 0,
        }
    }
}

/// Fits the codebooks stage by stage: each stage runs k-means with `C - 1`
/// centroids on the residuals left by the stages before it, then prepends the
/// zero vector as entry 0.
pub fn fit_rvq(framing: Framing, frames: &[FrameVector], params: &RvqFitParams) -> Result<RvqCodec> {
    framing.validate()?;
    if frames.is_empty() {
        return argument("no training frames");
    }
    if params.levels == 0 || params.codebook_size < 2 {
        return argument(format!(
            "need N >= 1 and C >= 2, got N={} C={}",
            params.levels, params.codebook_size
        ));
    }
    if frames.len() < params.codebook_size {
        return argument(format!(
            "need at least C={} training frames, got {}",
            params.codebook_size,
            frames.len()
        ));
    }
    let dim = framing.frame_len;
    if let Some(f) = frames.iter().find(|f| f.dim() != dim) {
        return argument(format!("frame dimension {} != frame_len {dim}", f.dim()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut residuals: Vec<Vec<f64>> = frames.iter().map(|f| f.0.clone()).collect();
    let mut codebooks = Vec::with_capacity(params.levels);
    for level in 0..params.levels {
        let centroids = kmeans(&residuals, params.codebook_size - 1, params.kmeans_iters, &mut rng);
        let mut entries = vec![0.0f32; dim];
        for c in &centroids {
            entries.extend(c.iter().map(|&v| v as f32));
        }
        let cb = Codebook::new(level, dim, entries)?;
        residuals.par_iter_mut().for_each(|r| {
            let (idx, _) = cb.nearest(r);
            for (v, &e) in r.iter_mut().zip(cb.entry(idx)) {
                *v -= f64::from(e);
            }
        });
        log::debug!(
            "rvq level {level}: mean residual energy {:.6}",
            residuals.iter().map(|r| r.iter().map(|v| v * v).sum::<f64>()).sum::<f64>()
                / residuals.len() as f64
        );
        codebooks.push(cb);
    }
    RvqCodec::new(framing, codebooks)
}

fn sq_dist64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<(usize, f64)> {
    points
        .par_iter()
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (c, centroid) in centroids.iter().enumerate() {
                let d = sq_dist64(p, centroid);
                if d < best.1 {
                    best = (c, d);
                }
            }
            best
        })
        .collect()
}

/// Lloyd's k-means with k-means++ seeding. Empty clusters are re-seeded from
/// the point farthest from its centroid. Returns the lowest-inertia centroids
/// seen, whether or not assignments converged.
pub fn kmeans<R: Rng + ?Sized>(
    points: &[Vec<f64>],
    k: usize,
    iters: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    let mut centroids = kmeans_pp(points, k, rng);
    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    let mut prev_labels: Option<Vec<usize>> = None;
    for _ in 0..iters.max(1) {
        let assignment = assign(points, &centroids);
        let inertia: f64 = assignment.iter().map(|a| a.1).sum();
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, centroids.clone()));
        }
        let labels: Vec<usize> = assignment.iter().map(|a| a.0).collect();
        if prev_labels.as_ref() == Some(&labels) {
            break;
        }

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut by_distance: Vec<usize> = (0..points.len()).collect();
        by_distance.sort_by(|&a, &b| assignment[b].1.total_cmp(&assignment[a].1));
        let mut far = by_distance.into_iter();
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                centroids[c] = sums[c].iter().map(|s| s * inv).collect();
            } else if let Some(i) = far.next() {
                centroids[c] = points[i].clone();
            }
        }
        prev_labels = Some(labels);
    }
    let assignment = assign(points, &centroids);
    let inertia: f64 = assignment.iter().map(|a| a.1).sum();
    match best {
        Some((b, c)) if b < inertia => c,
        _ => centroids,
    }
}

fn kmeans_pp<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.gen_range(0..points.len())].clone()];
    let mut dist: Vec<f64> = points.iter().map(|p| sq_dist64(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, &d) in dist.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.gen_range(0..points.len())
        };
        let c = points[next].clone();
        dist.par_iter_mut().zip(points).for_each(|(d, p)| {
            *d = d.min(sq_dist64(p, &c));
        });
        centroids.push(c);
    }
    centroids
}
