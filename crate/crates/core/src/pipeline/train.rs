use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{argument, Error, Result};
use crate::masking::{sample_c2f_training_mask, sample_training_mask};
use crate::model::{grad_scaled, loss_positions, ModelConfig, Parameters, Role};
use crate::tokens::{MaskGrid, TokenGrid};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Peak learning rate, reached at the end of warmup.
    pub lr: f64,
    pub warmup: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
    pub eval_every: usize,
    /// Timesteps per training window; `None` uses the model's max length.
    pub window: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 16,
            lr: 3e-3,
            warmup: 100,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            dropout: 0.0,
            clip_norm: Some(1.0),
            seed: 0,
            eval_every: 100,
            window: None,
        }
    }
}

impl TrainConfig {
    /// Full-scale schedule: 1M steps, batch 25, lr 1e-3, 10k warmup, dropout 0.1.
    pub fn full_scale() -> Self {
        Self {
            steps: 1_000_000,
            batch_size: 25,
            lr: 1e-3,
            warmup: 10_000,
            dropout: 0.1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 || self.warmup == 0 || self.eval_every == 0 {
            return argument("steps, batch size, warmup and eval_every must be positive");
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return argument(format!("learning rate {} must be positive", self.lr));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return argument(format!("{name} = {v} outside [0, 1)"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return argument(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.weight_decay >= 0.0) || !(self.eps > 0.0) {
            return argument("weight decay must be non-negative and eps positive");
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return argument("clip norm must be positive");
        }
        if self.window == Some(0) {
            return argument("training window must be positive");
        }
        Ok(())
    }

    /// Linear warmup then inverse square-root decay; `step` counts from 1.
    pub fn lr_at(&self, step: usize) -> f64 {
        let s = step.max(1) as f64;
        let w = self.warmup as f64;
        self.lr * (s / w).min((w / s).sqrt())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub masked_fraction_mean: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: Parameters<f32>,
    pub history: Vec<LossRecord>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |r| r.loss)
    }

    /// Mean loss over the last `n` recorded steps.
    pub fn tail_loss(&self, n: usize) -> f64 {
        let tail = &self.history[self.history.len().saturating_sub(n)..];
        tail.iter().map(|r| r.loss).sum::<f64>() / tail.len().max(1) as f64
    }
}

pub fn write_loss_csv<W: Write>(history: &[LossRecord], mut sink: W) -> Result<()> {
    writeln!(sink, "step,loss,lr,masked_fraction_mean")?;
    for r in history {
        writeln!(sink, "{},{},{},{}", r.step, r.loss, r.lr, r.masked_fraction_mean)?;
    }
    Ok(())
}

/// Grids as the model sees them: coarse models get the leading levels only.
fn role_view(cfg: &ModelConfig, grid: &TokenGrid) -> Result<TokenGrid> {
    match cfg.role {
        Role::Coarse if grid.levels() >= cfg.levels => grid.select_levels(0..cfg.levels),
        Role::CoarseToFine if grid.levels() == cfg.levels => Ok(grid.clone()),
        _ => argument(format!(
            "grid with {} levels does not fit a {:?} model over {} levels",
            grid.levels(),
            cfg.role,
            cfg.levels
        )),
    }
}

fn training_mask(cfg: &ModelConfig, timesteps: usize, rng: &mut ChaCha8Rng) -> Result<MaskGrid> {
    match cfg.role {
        Role::Coarse => sample_training_mask(timesteps, cfg.levels, rng),
        Role::CoarseToFine => {
            sample_c2f_training_mask(timesteps, cfg.coarse_levels, cfg.fine_levels, rng)
        }
    }
}

/// Trains a fresh model from `Parameters::init(model, cfg.seed)`.
pub fn train(model: &ModelConfig, corpus: &[TokenGrid], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let init = Parameters::init(model, cfg.seed)?;
    train_from(init, corpus, cfg)
}

/// AdamW on the masked cross-entropy, averaged over every masked position
/// in the batch.
pub fn train_from(
    mut params: Parameters<f32>,
    corpus: &[TokenGrid],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.is_empty() {
        return argument("training corpus is empty");
    }
    let model = params.config().clone();
    let views = corpus
        .iter()
        .map(|g| role_view(&model, g))
        .collect::<Result<Vec<_>>>()?;
    let window = cfg.window.unwrap_or(model.max_len).min(model.max_len);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7124_1A11);
    let n = params.len();
    let mut m = vec![0.0f64; n];
    let mut v = vec![0.0f64; n];
    let mut history = Vec::with_capacity(cfg.steps);

    for step in 1..=cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let grid = &views[rng.gen_range(0..views.len())];
            let len = window.min(grid.timesteps());
            let start = rng.gen_range(0..=grid.timesteps() - len);
            let crop = grid.select_timesteps(start..start + len)?;
            let mask = training_mask(&model, len, &mut rng)?;
            batch.push((crop, mask));
        }
        let total: usize = batch.iter().map(|(_, m)| loss_positions(&model, m)).sum();
        let masked_fraction_mean = batch
            .iter()
            .map(|(g, m)| m.masked_count() as f64 / (g.timesteps() * g.levels()) as f64)
            .sum::<f64>()
            / batch.len() as f64;
        let lr = cfg.lr_at(step);
        if total == 0 {
            history.push(LossRecord { step, loss: 0.0, lr, masked_fraction_mean });
            continue;
        }

        let scale = 1.0 / total as f64;
        let mut grad = params.zeros_like();
        let mut loss = 0.0;
        for (b, (crop, mask)) in batch.iter().enumerate() {
            let mut drop_rng = ChaCha8Rng::seed_from_u64(
                cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((step as u64) << 20) ^ b as u64,
            );
            let dropout = (cfg.dropout > 0.0)
                .then_some((cfg.dropout, &mut drop_rng as &mut dyn rand::RngCore));
            let sg = grad_scaled(&params, crop, mask, crop, scale, dropout)?;
            loss += sg.loss;
            grad.add_assign(&sg.grad);
        }
        if !loss.is_finite() || !grad.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss {loss} at step {step} (lr {lr:.3e}, {total} masked positions)"
            )));
        }

        let norm = grad.flat().iter().map(|&g| f64::from(g).powi(2)).sum::<f64>().sqrt();
        let clip = match cfg.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        let bc1 = 1.0 - cfg.beta1.powi(step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(step as i32);
        for (i, (p, &g)) in params.flat_mut().iter_mut().zip(grad.flat()).enumerate() {
            let g = f64::from(g) * clip;
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + cfg.eps);
            let w = f64::from(*p);
            *p = (w - lr * (update + cfg.weight_decay * w)) as f32;
        }

        if step % cfg.eval_every == 0 {
            log::info!("step {step}: loss {loss:.4} lr {lr:.2e} |g| {norm:.3}");
        }
        history.push(LossRecord { step, loss, lr, masked_fraction_mean });
    }
    Ok(TrainOutcome { params, history })
}
