use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vampnet::masking::num_to_mask;
use vampnet::model::{log_softmax, Logits};
use vampnet::tokens::{MaskGrid, TokenGrid};
use vampnet::Result;

// Reference decoder. It re-derives the per-position random stream from the
// documented contract and picks rejections one at a time instead of sorting.

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream(seed: u64, it: usize, t: usize, n: usize) -> ChaCha8Rng {
    let h = [it as u64, t as u64, n as u64]
        .iter()
        .fold(mix(seed), |h, &v| mix(h ^ v));
    ChaCha8Rng::seed_from_u64(h)
}

pub fn reference_decode(
    model: &dyn Fn(&TokenGrid, &MaskGrid) -> Result<Logits>,
    g0: &TokenGrid,
    prompt: &MaskGrid,
    steps: usize,
    temp0: f64,
    seed: u64,
) -> TokenGrid {
    let mut grid = g0.clone();
    let mut mask = prompt.clone();
    let d0 = prompt.masked_count();
    if d0 == 0 {
        return grid;
    }
    for it in 1..=steps {
        let logits = model(&grid, &mask).unwrap();
        let temp = temp0 * (1.0 - it as f64 / steps as f64);
        let mut cands: Vec<(usize, usize, u16, f64)> = Vec::new();
        for t in 0..grid.timesteps() {
            for n in 0..grid.levels() {
                if !mask.get(t, n) {
                    continue;
                }
                let row = logits.row(t, n);
                let lp = log_softmax(row);
                let mut rng = stream(seed, it, t, n);
                let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
                let v = ((rng.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
                let probs: Vec<f64> = lp.iter().map(|x| x.exp()).collect();
                let total: f64 = probs.iter().sum();
                let mut acc = 0.0;
                let mut tok = probs.iter().rposition(|&p| p > 0.0).unwrap();
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if u * total < acc {
                        tok = i;
                        break;
                    }
                }
                let g = -(-v.ln()).ln();
                cands.push((t, n, tok as u16, lp[tok] + temp * g));
            }
        }
        let k = num_to_mask(it, steps, d0).unwrap();
        // remove the k lowest, earliest position first among ties
        let mut rejected = vec![false; cands.len()];
        for _ in 0..k.min(cands.len()) {
            let mut best: Option<usize> = None;
            for (i, c) in cands.iter().enumerate() {
                if rejected[i] {
                    continue;
                }
                if best.is_none_or(|b| c.3 < cands[b].3) {
                    best = Some(i);
                }
            }
            rejected[best.unwrap()] = true;
        }
        for (c, r) in cands.iter().zip(&rejected) {
            if !r {
                grid.set(c.0, c.1, c.2).unwrap();
                mask.set(c.0, c.1, false);
            }
        }
    }
    grid
}
