//! Parallel iterative decoding.
//!
//! Each iteration runs one forward pass, samples a token at every masked
//! position straight from the categorical distribution, scores each sample by
//! `log p + temp * g` with Gumbel noise `g`, and re-masks the lowest scoring
//! `k` samples where `k` follows the cosine schedule. The temperature falls
//! linearly from `temp0` to zero at the last iteration.
//!
//! All randomness for position `(t, n)` at iteration `i` comes from
//! [`position_rng`]`(seed, i, t, n)`, so a decode is reproducible from its
//! seed regardless of evaluation order.

use std::fmt::Write as _;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{argument, Error, Result};
use crate::masking::num_to_mask;
use crate::model::{self, log_softmax, Logits, Parameters, Real};
use crate::tokens::{MaskGrid, TokenGrid};

/// Default starting temperature for the confidence noise.
pub const DEFAULT_TEMPERATURE: f64 = 6.5;

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub steps: usize,
    pub temp0: f64,
    pub seed: u64,
    /// Keep per-position confidences of accepted tokens in the trace.
    pub record_trace: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 24,
            temp0: DEFAULT_TEMPERATURE,
            seed: 0,
            record_trace: false,
        }
    }
}

impl SamplerConfig {
    pub fn new(steps: usize, seed: u64) -> Self {
        Self {
            steps,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return argument("sampler needs at least one step");
        }
        if !(self.temp0 >= 0.0 && self.temp0.is_finite()) {
            return argument(format!("temperature {} must be finite and >= 0", self.temp0));
        }
        Ok(())
    }

    /// `temp0 * (1 - t / steps)`.
    pub fn temperature(&self, t: usize) -> f64 {
        self.temp0 * (1.0 - t as f64 / self.steps as f64)
    }
}

/// Anything that scores a (grid, mask) pair.
pub trait TokenModel {
    fn predict(&self, grid: &TokenGrid, mask: &MaskGrid) -> Result<Logits>;
}

impl<F: Real> TokenModel for Parameters<F> {
    fn predict(&self, grid: &TokenGrid, mask: &MaskGrid) -> Result<Logits> {
        model::forward(self, grid, mask)
    }
}

impl<M> TokenModel for M
where
    M: Fn(&TokenGrid, &MaskGrid) -> Result<Logits>,
{
    fn predict(&self, grid: &TokenGrid, mask: &MaskGrid) -> Result<Logits> {
        self(grid, mask)
    }
}

/// Accepted sample with its confidence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Accepted {
    pub t: usize,
    pub level: usize,
    pub token: u16,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub masked_before: usize,
    /// Positions left masked after this iteration.
    pub k: usize,
    pub temperature: f64,
    pub min_accepted: Option<f64>,
    pub max_accepted: Option<f64>,
    /// Filled only when `record_trace` is set.
    pub accepted: Vec<Accepted>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DecodeTrace {
    pub initially_masked: usize,
    pub forward_passes: usize,
    pub iterations: Vec<IterationRecord>,
}

impl DecodeTrace {
    /// One CSV row per iteration.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,masked_before,k,temp,min_conf,max_conf\n");
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for r in &self.iterations {
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{},{}",
                r.iteration,
                r.masked_before,
                r.k,
                r.temperature,
                fmt(r.min_accepted),
                fmt(r.max_accepted)
            );
        }
        out
    }
}

/// Standard Gumbel variate `-ln(-ln u)` for `u` in the open unit interval.
pub fn gumbel_sample(u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return argument(format!("Gumbel input {u} outside (0, 1)"));
    }
    Ok(-(-u.ln()).ln())
}

/// `log p + temp * g`.
pub fn confidence(logp: f64, temp: f64, g: f64) -> f64 {
    logp + temp * g
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Random stream owned by one position at one iteration.
pub fn position_rng(seed: u64, iteration: usize, t: usize, level: usize) -> ChaCha8Rng {
    let mut h = splitmix(seed);
    for v in [iteration as u64, t as u64, level as u64] {
        h = splitmix(h ^ v);
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// Uniform in `[0, 1)` with 53 random bits.
pub fn unit_closed_open(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform strictly inside `(0, 1)`.
pub fn unit_open(rng: &mut impl RngCore) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Inverse-CDF draw: first index whose cumulative probability exceeds `u`.
pub fn sample_categorical(probs: &[f64], u: f64) -> usize {
    let total: f64 = probs.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if target < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Runs the decode loop. Positions with `prompt = true` are generated; all
/// other positions are copied from `g0` unchanged.
pub fn decode_iterative<M: TokenModel + ?Sized>(
    model: &M,
    g0: &TokenGrid,
    prompt: &MaskGrid,
    cfg: &SamplerConfig,
) -> Result<(TokenGrid, DecodeTrace)> {
    cfg.validate()?;
    if !prompt.same_shape(g0) {
        return argument(format!(
            "prompt {}x{} does not match grid {}x{}",
            prompt.timesteps(),
            prompt.levels(),
            g0.timesteps(),
            g0.levels()
        ));
    }
    let d0 = prompt.masked_count();
    let mut trace = DecodeTrace {
        initially_masked: d0,
        ..DecodeTrace::default()
    };
    let mut grid = g0.clone();
    if d0 == 0 {
        return Ok((grid, trace));
    }

    let mut mask = prompt.clone();
    for iteration in 1..=cfg.steps {
        let logits = model.predict(&grid, &mask)?;
        trace.forward_passes += 1;
        if logits.timesteps() != grid.timesteps() {
            return argument("model returned logits for the wrong number of timesteps");
        }
        let temp = cfg.temperature(iteration);

        let mut candidates = Vec::with_capacity(mask.masked_count());
        for (t, n) in mask.masked_positions() {
            if !logits.covers(n) || logits.vocab() != grid.vocab_at(n) as usize {
                return argument(format!("model does not score masked position ({t}, {n})"));
            }
            let logp = log_softmax(logits.row(t, n));
            if logp.iter().any(|v| v.is_nan()) {
                return Err(Error::Numeric(format!("NaN log-probabilities at ({t}, {n})")));
            }
            let probs: Vec<f64> = logp.iter().map(|v| v.exp()).collect();
            let mut rng = position_rng(cfg.seed, iteration, t, n);
            let token = sample_categorical(&probs, unit_closed_open(&mut rng));
            let g = gumbel_sample(unit_open(&mut rng))?;
            candidates.push(Accepted {
                t,
                level: n,
                token: token as u16,
                confidence: confidence(logp[token], temp, g),
            });
        }

        let masked_before = candidates.len();
        let k = num_to_mask(iteration, cfg.steps, d0)?;
        // stable sort keeps timestep-major order among equal confidences
        candidates.sort_by(|a, b| a.confidence.total_cmp(&b.confidence));
        let accepted = &candidates[k.min(masked_before)..];
        for a in accepted {
            grid.set(a.t, a.level, a.token)?;
            mask.set(a.t, a.level, false);
        }
        trace.iterations.push(IterationRecord {
            iteration,
            masked_before,
            k,
            temperature: temp,
            min_accepted: accepted.first().map(|a| a.confidence),
            max_accepted: accepted.last().map(|a| a.confidence),
            accepted: if cfg.record_trace {
                accepted.to_vec()
            } else {
                Vec::new()
            },
        });
    }
    debug_assert_eq!(mask.masked_count(), 0);
    Ok((grid, trace))
}
