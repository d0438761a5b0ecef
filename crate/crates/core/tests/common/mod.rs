#![allow(dead_code)]

pub mod reference;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vampnet::model::{ModelConfig, Parameters};
use vampnet::tokens::{MaskGrid, TokenGrid};

/// Parameters with every scalar drawn from N(0, std)-ish uniform noise, so
/// that gains, biases and the relative-position table are all exercised.
pub fn noisy_params(cfg: &ModelConfig, seed: u64, spread: f64) -> Parameters<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Parameters::<f64>::init(cfg, seed).unwrap();
    for v in p.flat_mut() {
        *v += rng.gen_range(-spread..spread);
    }
    p
}

pub fn random_grid(t: usize, levels: usize, vocab: u32, rng: &mut impl Rng) -> TokenGrid {
    TokenGrid::from_fn(t, vec![vocab; levels], |_, _| rng.gen_range(0..vocab) as u16).unwrap()
}

pub fn random_mask(t: usize, levels: usize, p: f64, rng: &mut impl Rng) -> MaskGrid {
    MaskGrid::from_fn(t, levels, |_, _| rng.gen_bool(p)).unwrap()
}

/// Central finite-difference gradient of the mean-reduced loss.
pub fn finite_difference(
    params: &Parameters<f64>,
    grid: &TokenGrid,
    mask: &MaskGrid,
    step: f64,
) -> Vec<f64> {
    use vampnet::model::{forward, loss, Reduction};
    let eval = |p: &Parameters<f64>| {
        let logits = forward(p, grid, mask).unwrap();
        loss(&logits, grid, mask, Reduction::Mean).unwrap()
    };
    let mut probe = params.clone();
    (0..params.len())
        .map(|i| {
            let orig = probe.flat()[i];
            probe.flat_mut()[i] = orig + step;
            let up = eval(&probe);
            probe.flat_mut()[i] = orig - step;
            let down = eval(&probe);
            probe.flat_mut()[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Largest `|a - b| / max(|a|, |b|, floor)` over all coordinates.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// A random prompt drawn from every constructor, sometimes combined.
pub fn random_prompt(t: usize, levels: usize, rng: &mut impl Rng) -> vampnet::prompts::PromptSpec {
    use vampnet::prompts::PromptSpec;
    let leaf = |rng: &mut dyn rand::RngCore| match rng.gen_range(0..4) {
        0 => {
            let period = rng.gen_range(1..=8);
            PromptSpec::Periodic { period, offset: rng.gen_range(0..period) }
        }
        1 => PromptSpec::Compression { keep: rng.gen_range(0..levels) },
        2 => {
            let prefix = rng.gen_range(0..=t / 2);
            PromptSpec::Inpaint { prefix, suffix: rng.gen_range(0..=(t - prefix) / 2) }
        }
        _ => {
            let mut beats: Vec<usize> = (0..rng.gen_range(0..4)).map(|_| rng.gen_range(0..t)).collect();
            beats.sort_unstable();
            beats.dedup();
            PromptSpec::Beat { beats, width: rng.gen_range(1..=3) }
        }
    };
    if rng.gen_bool(0.3) {
        PromptSpec::Combined(vec![leaf(rng), leaf(rng)])
    } else {
        leaf(rng)
    }
}
