mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vampnet::model::{ModelConfig, Parameters};
use vampnet::pipeline::{autoregressive_passes, generate, train, GenerationRequest, TrainConfig};
use vampnet::sampler::{decode_iterative, SamplerConfig};
use vampnet::tokens::{MaskGrid, TokenGrid};

use common::{noisy_params, random_grid, random_prompt};

const VOCAB: u32 = 6;

fn pair(seed: u64) -> (Parameters<f64>, Parameters<f64>) {
    let shape = |cfg: ModelConfig| ModelConfig {
        embed_dim: 8,
        layers: 1,
        heads: 2,
        max_len: 32,
        rel_window: 4,
        ..cfg
    };
    (
        noisy_params(&shape(ModelConfig::coarse(2, VOCAB as usize)), seed, 0.3),
        noisy_params(&shape(ModelConfig::coarse_to_fine(2, 2, VOCAB as usize)), seed + 1, 0.3),
    )
}

fn request(input: TokenGrid, prompt: MaskGrid, steps: (usize, usize), seed: u64) -> GenerationRequest {
    GenerationRequest {
        input,
        prompt,
        coarse: SamplerConfig::new(steps.0, seed),
        c2f: SamplerConfig::new(steps.1, seed + 1),
    }
}

#[test]
fn generation_preserves_every_prompted_token() {
    let (coarse, c2f) = pair(1);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..150 {
        let t = rng.gen_range(2..=24);
        let g = random_grid(t, 4, VOCAB, &mut rng);
        let spec = random_prompt(t, 4, &mut rng);
        let mask = spec.mask(t, 4).unwrap();
        let out = generate(&coarse, &c2f, &request(g.clone(), mask.clone(), (3, 2), trial)).unwrap();
        for ti in 0..t {
            for n in 0..4 {
                if !mask.get(ti, n) {
                    assert_eq!(out.output.get(ti, n), g.get(ti, n), "{spec} at ({ti},{n})");
                }
            }
        }
    }
}

#[test]
fn fine_stage_leaves_coarse_levels_alone() {
    let (coarse, c2f) = pair(4);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..40 {
        let t = rng.gen_range(4..=20);
        let g = random_grid(t, 4, VOCAB, &mut rng);
        let mask = MaskGrid::from_fn(t, 4, |_, _| rng.gen_bool(0.6)).unwrap();
        let req = request(g.clone(), mask.clone(), (4, 3), trial);
        let out = generate(&coarse, &c2f, &req).unwrap();
        let (stage_one, _) = decode_iterative(
            &coarse,
            &g.select_levels(0..2).unwrap(),
            &mask.select_levels(0..2).unwrap(),
            &req.coarse,
        )
        .unwrap();
        assert_eq!(out.output.select_levels(0..2).unwrap(), stage_one);
    }
}

#[test]
fn forward_passes_are_the_step_sum() {
    let (coarse, c2f) = pair(7);
    for t in [3, 10, 30] {
        let g = TokenGrid::zeros(t, 4, VOCAB).unwrap();
        let mask = MaskGrid::filled(t, 4, true).unwrap();
        for steps in [(1, 1), (5, 2), (12, 12)] {
            let out = generate(&coarse, &c2f, &request(g.clone(), mask.clone(), steps, 0)).unwrap();
            assert_eq!(out.forward_passes(), steps.0 + steps.1);
        }
    }
    assert_eq!(autoregressive_passes(10.0, 57.4), 574);
    assert_eq!(autoregressive_passes(2.0, 62.5), 125);
}

#[test]
fn mismatched_models_are_rejected() {
    let (coarse, c2f) = pair(0);
    let g = TokenGrid::zeros(4, 3, VOCAB).unwrap();
    let m = MaskGrid::filled(4, 3, true).unwrap();
    assert!(generate(&coarse, &c2f, &request(g.clone(), m.clone(), (1, 1), 0)).is_err());
    assert!(generate(&c2f, &coarse, &request(g, m, (1, 1), 0)).is_err());
}

#[test]
fn training_reduces_loss_on_patterned_tokens() {
    // each row is a function of (t mod 4), so masked tokens are predictable
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let corpus: Vec<TokenGrid> = (0..12)
        .map(|_| {
            let phase = rng.gen_range(0..4);
            TokenGrid::from_fn(24, vec![VOCAB; 2], |t, n| (((t + phase) % 4 + n) % VOCAB as usize) as u16).unwrap()
        })
        .collect();
    let model = ModelConfig {
        embed_dim: 16,
        layers: 1,
        heads: 2,
        max_len: 32,
        rel_window: 8,
        ..ModelConfig::coarse(2, VOCAB as usize)
    };
    let cfg = TrainConfig {
        steps: 300,
        batch_size: 4,
        lr: 3e-3,
        warmup: 20,
        seed: 1,
        ..TrainConfig::default()
    };
    let out = train(&model, &corpus, &cfg).unwrap();
    let early: f64 = out.history[40..60].iter().map(|r| r.loss).sum::<f64>() / 20.0;
    assert!(out.tail_loss(20) < early, "tail {} vs early {early}", out.tail_loss(20));
    assert!(out.tail_loss(20) < (VOCAB as f64).ln());
    assert!(out.history.iter().all(|r| r.loss.is_finite()));
}
