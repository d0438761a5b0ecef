mod common;

use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vampnet::model::{forward, grad, loss, ModelConfig, Parameters, Reduction};
use vampnet::tokens::{MaskGrid, TokenGrid};

#[test]
fn gradient_matches_finite_differences() {
    let cfg = ModelConfig::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let p = noisy_params(&cfg, 1, 0.3);
    let grid = random_grid(4, cfg.levels, cfg.vocab as u32, &mut rng);
    let mask = MaskGrid::from_fn(4, 2, |t, n| (t + n) % 2 == 0 || t == 3).unwrap();
    let analytic = grad(&p, &grid, &mask, &grid).unwrap();
    let numeric = finite_difference(&p, &grid, &mask, 1e-4);
    let err = max_relative_error(analytic.grad.flat(), &numeric, 1e-6);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn c2f_gradient_matches_finite_differences() {
    let mut cfg = ModelConfig::coarse_to_fine(1, 2, 3);
    cfg.embed_dim = 8;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.rel_window = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = noisy_params(&cfg, 5, 0.3);
    let grid = random_grid(5, 3, 3, &mut rng);
    let mask = MaskGrid::from_fn(5, 3, |t, n| n > 0 && (t + n) % 3 != 0).unwrap();
    let analytic = grad(&p, &grid, &mask, &grid).unwrap();
    let numeric = finite_difference(&p, &grid, &mask, 1e-4);
    let err = max_relative_error(analytic.grad.flat(), &numeric, 1e-6);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn zero_weights_give_zero_logits() {
    let cfg = ModelConfig::tiny();
    let p = Parameters::<f64>::zeros(&cfg).unwrap();
    let grid = TokenGrid::zeros(5, 2, 4).unwrap();
    let mask = MaskGrid::from_fn(5, 2, |t, _| t % 2 == 0).unwrap();
    let logits = forward(&p, &grid, &mask).unwrap();
    assert!(logits.as_slice().iter().all(|&v| v == 0.0));
}

#[test]
fn masked_values_do_not_matter() {
    let cfg = ModelConfig::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = noisy_params(&cfg, 2, 0.2);
    let grid = random_grid(6, 2, 4, &mut rng);
    let mask = random_mask(6, 2, 0.5, &mut rng);
    let mut other = grid.clone();
    for (t, n) in mask.masked_positions() {
        other.set(t, n, (grid.get(t, n) + 1) % 4).unwrap();
    }
    let a = forward(&p, &grid, &mask).unwrap();
    let b = forward(&p, &other, &mask).unwrap();
    assert_eq!(a, b);
}

#[test]
fn timestep_permutation_without_position_bias() {
    let cfg = ModelConfig::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut p = noisy_params(&cfg, 3, 0.2);
    let grid = random_grid(5, 2, 4, &mut rng);
    let mask = random_mask(5, 2, 0.4, &mut rng);
    let swap = |t: usize| match t {
        1 => 3,
        3 => 1,
        x => x,
    };
    let pgrid = TokenGrid::from_fn(5, vec![4, 4], |t, n| grid.get(swap(t), n)).unwrap();
    let pmask = MaskGrid::from_fn(5, 2, |t, n| mask.get(swap(t), n)).unwrap();

    // with the learned bias active the outputs are not a permutation
    let a = forward(&p, &grid, &mask).unwrap();
    let b = forward(&p, &pgrid, &pmask).unwrap();
    let moved = (0..5).any(|t| {
        (0..2).any(|n| {
            a.row(swap(t), n)
                .iter()
                .zip(b.row(t, n))
                .any(|(x, y)| (x - y).abs() > 1e-9)
        })
    });
    assert!(moved);

    p.rel_bias_mut().fill(0.0);
    let a = forward(&p, &grid, &mask).unwrap();
    let b = forward(&p, &pgrid, &pmask).unwrap();
    for t in 0..5 {
        for n in 0..2 {
            for (x, y) in a.row(swap(t), n).iter().zip(b.row(t, n)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn empty_mask_gives_zero_gradient() {
    let cfg = ModelConfig::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = noisy_params(&cfg, 4, 0.2);
    let grid = random_grid(4, 2, 4, &mut rng);
    let mask = MaskGrid::filled(4, 2, false).unwrap();
    let g = grad(&p, &grid, &mask, &grid).unwrap();
    assert_eq!(g.loss, 0.0);
    assert!(g.grad.flat().iter().all(|&v| v == 0.0));
}

#[test]
fn unused_mask_row_has_zero_gradient() {
    let cfg = ModelConfig::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let p = noisy_params(&cfg, 6, 0.2);
    let grid = random_grid(4, 2, 4, &mut rng);
    // only level 0 masked: level 1's MASK row never enters the forward pass
    let mask = MaskGrid::from_fn(4, 2, |t, n| n == 0 && t != 2).unwrap();
    let g = grad(&p, &grid, &mask, &grid).unwrap();
    let table = g.grad.embedding(1);
    assert!(table.row(cfg.vocab).iter().all(|&v| v == 0.0));
    assert!(g.grad.embedding(0).row(cfg.vocab).iter().any(|&v| v != 0.0));
}

#[test]
fn softmax_rows_normalize_and_forward_is_deterministic() {
    let cfg = ModelConfig::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let p = noisy_params(&cfg, 7, 0.5).cast::<f32>();
    let grid = random_grid(7, 2, 4, &mut rng);
    let mask = random_mask(7, 2, 0.5, &mut rng);
    let a = forward(&p, &grid, &mask).unwrap();
    let b = forward(&p, &grid, &mask).unwrap();
    assert_eq!(a.as_slice(), b.as_slice());
    for t in 0..7 {
        for n in 0..2 {
            let s: f64 = a.log_probs(t, n).iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn grad_loss_agrees_with_loss_function() {
    let cfg = ModelConfig::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let p = noisy_params(&cfg, 8, 0.3);
    let grid = random_grid(6, 2, 4, &mut rng);
    let mask = random_mask(6, 2, 0.6, &mut rng);
    let g = grad(&p, &grid, &mask, &grid).unwrap();
    let l = loss(&forward(&p, &grid, &mask).unwrap(), &grid, &mask, Reduction::Mean).unwrap();
    assert!((g.loss - l).abs() < 1e-12);
}

#[test]
fn shape_errors() {
    let cfg = ModelConfig::tiny();
    let p = Parameters::<f64>::zeros(&cfg).unwrap();
    let grid = TokenGrid::zeros(4, 2, 4).unwrap();
    assert!(forward(&p, &grid, &MaskGrid::filled(4, 3, true).unwrap()).is_err());
    let long = TokenGrid::zeros(17, 2, 4).unwrap();
    assert!(forward(&p, &long, &MaskGrid::filled(17, 2, true).unwrap()).is_err());
    let wrong_vocab = TokenGrid::zeros(4, 2, 5).unwrap();
    assert!(forward(&p, &wrong_vocab, &MaskGrid::filled(4, 2, true).unwrap()).is_err());
}
