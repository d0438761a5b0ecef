// Cosine schedule, per-iteration mask counts and random training masks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vampnet::masking::{draw_training_mask, gamma, num_to_mask};

pub fn run_example() -> vampnet::Result<()> {
    for r in [0.0, 0.25, 0.5, 0.75, 1.0] {
        println!("gamma({r}) = {:.4}", gamma(r)?);
    }
    let d0 = 248;
    let counts = (0..=12).map(|t| num_to_mask(t, 12, d0)).collect::<vampnet::Result<Vec<_>>>()?;
    println!("12-step schedule from {d0} masked: {counts:?}");

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..3 {
        let (mask, u) = draw_training_mask(8, 2, &mut rng)?;
        println!("u = {u:.3}: {} of 16 masked", mask.masked_count());
    }
    Ok(())
}

fn main() {
    run_example().unwrap();
}
