//! Cosine masking schedule and training-mask sampling.

use std::f64::consts::FRAC_PI_2;

use rand::seq::index;
use rand::Rng;

use crate::error::{argument, Result};
use crate::tokens::MaskGrid;

/// Masking schedule. Only the cosine schedule is provided.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Schedule {
    #[default]
    Cosine,
}

impl Schedule {
    pub fn eval(self, r: f64) -> Result<f64> {
        match self {
            Schedule::Cosine => gamma(r),
        }
    }
}

/// Cosine schedule `cos(pi r / 2)` on `[0, 1]`, with exact endpoints.
pub fn gamma(r: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&r) {
        return argument(format!("schedule input {r} outside [0, 1]"));
    }
    if r == 1.0 {
        return Ok(0.0);
    }
    Ok((FRAC_PI_2 * r).cos())
}

/// Tokens that stay masked after iteration `t` of `total`.
///
/// `t = 0` is accepted so callers can inspect the starting count, which is
/// always `d_total`.
pub fn num_to_mask(t: usize, total: usize, d_total: usize) -> Result<usize> {
    if total == 0 || t > total {
        return argument(format!("iteration {t} outside [0, {total}]"));
    }
    let k = (gamma(t as f64 / total as f64)? * d_total as f64).round_ties_even();
    Ok((k.max(0.0) as usize).min(d_total))
}

/// Draws a training mask and also returns the schedule input `u` it used.
pub fn draw_training_mask<R: Rng + ?Sized>(
    timesteps: usize,
    levels: usize,
    rng: &mut R,
) -> Result<(MaskGrid, f64)> {
    let u: f64 = rng.gen();
    let total = timesteps * levels;
    let count = masked_count_for(u, total)?;
    let mut data = vec![false; total];
    for i in index::sample(rng, total, count) {
        data[i] = true;
    }
    Ok((MaskGrid::new(timesteps, levels, data)?, u))
}

/// Random training mask: ratio `gamma(u)` for `u ~ U[0, 1)`, positions uniform
/// without replacement over all `T x N` tokens.
pub fn sample_training_mask<R: Rng + ?Sized>(
    timesteps: usize,
    levels: usize,
    rng: &mut R,
) -> Result<MaskGrid> {
    draw_training_mask(timesteps, levels, rng).map(|(m, _)| m)
}

/// Training mask for the coarse-to-fine model: the `coarse` leading columns
/// are never masked, the schedule applies to the `T x fine` remainder.
pub fn sample_c2f_training_mask<R: Rng + ?Sized>(
    timesteps: usize,
    coarse: usize,
    fine: usize,
    rng: &mut R,
) -> Result<MaskGrid> {
    let levels = coarse + fine;
    if fine == 0 {
        return MaskGrid::filled(timesteps, levels, false);
    }
    let (fine_mask, _) = draw_training_mask(timesteps, fine, rng)?;
    MaskGrid::from_fn(timesteps, levels, |t, n| {
        n >= coarse && fine_mask.get(t, n - coarse)
    })
}

/// `ceil(gamma(u) * total)`, clamped to `[0, total]`.
pub fn masked_count_for(u: f64, total: usize) -> Result<usize> {
    let k = (gamma(u)? * total as f64).ceil();
    Ok((k.max(0.0) as usize).min(total))
}
