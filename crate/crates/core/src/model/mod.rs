//! Bidirectional transformer over token grids.
//!
//! Each timestep's input is the sum of one embedding per level (the MASK row
//! when that position is masked). Pre-norm blocks combine multi-head
//! self-attention with a learned per-head relative-position bias and a GELU
//! feed-forward. The head maps every timestep to `levels x C` scores.
//!
//! Two roles share the architecture. A coarse model sees and predicts the
//! coarse levels. A coarse-to-fine model sees every level, never has its
//! coarse levels masked, and predicts only the fine ones.

mod checkpoint;
mod params;
mod transformer;

use std::fmt::{Debug, Display};
use std::ops::Range;

use ndarray::NdFloat;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use params::{Gradients, LayerLayout, ParamLayout, Parameters};
pub use transformer::SampleGrad;

use crate::error::{argument, Error, Result};
use crate::tokens::{MaskGrid, TokenGrid};

/// Scalar type the transformer runs in; `f64` for gradient checks, `f32`
/// for training.
pub trait Real: NdFloat + Debug + Display + std::iter::Sum {}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Coarse,
    CoarseToFine,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    /// Levels in the input grid.
    pub levels: usize,
    /// Vocabulary size per level.
    pub vocab: usize,
    pub max_len: usize,
    pub rel_window: usize,
    pub role: Role,
    /// Leading levels that are conditioning only (coarse-to-fine role).
    pub coarse_levels: usize,
    pub fine_levels: usize,
}

impl ModelConfig {
    /// Toy coarse model: E=64, 4 layers, 4 heads.
    pub fn coarse(levels: usize, vocab: usize) -> Self {
        Self {
            embed_dim: 64,
            layers: 4,
            heads: 4,
            levels,
            vocab,
            max_len: 256,
            rel_window: 32,
            role: Role::Coarse,
            coarse_levels: levels,
            fine_levels: 0,
        }
    }

    /// Toy coarse-to-fine model over `coarse + fine` levels.
    pub fn coarse_to_fine(coarse: usize, fine: usize, vocab: usize) -> Self {
        Self {
            levels: coarse + fine,
            role: Role::CoarseToFine,
            coarse_levels: coarse,
            fine_levels: fine,
            ..Self::coarse(coarse + fine, vocab)
        }
    }

    /// Full scale: E=1280, 20 heads, 20 layers over 4 coarse levels of a
    /// 1024-entry codec.
    pub fn full_scale_coarse() -> Self {
        Self {
            embed_dim: 1280,
            layers: 20,
            heads: 20,
            max_len: 1024,
            ..Self::coarse(4, 1024)
        }
    }

    /// Full-scale coarse-to-fine model: 16 layers, 4 + 10 levels.
    pub fn full_scale_coarse_to_fine() -> Self {
        Self {
            embed_dim: 1280,
            layers: 16,
            heads: 20,
            max_len: 1024,
            ..Self::coarse_to_fine(4, 10, 1024)
        }
    }

    /// Gradient-check scale: E=8, 1 layer, 2 heads, 2 levels of 4 tokens.
    pub fn tiny() -> Self {
        Self {
            embed_dim: 8,
            layers: 1,
            heads: 2,
            max_len: 16,
            rel_window: 4,
            ..Self::coarse(2, 4)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return argument(format!(
                "embedding width {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            ));
        }
        if self.layers == 0 || self.levels == 0 || self.vocab == 0 || self.max_len == 0 {
            return argument("layers, levels, vocabulary and max length must be positive");
        }
        if self.vocab >= u16::MAX as usize {
            return argument(format!("vocabulary {} too large", self.vocab));
        }
        match self.role {
            Role::Coarse if self.coarse_levels != self.levels || self.fine_levels != 0 => {
                argument("coarse model must have coarse_levels = levels and no fine levels")
            }
            Role::CoarseToFine
                if self.coarse_levels + self.fine_levels != self.levels
                    || self.fine_levels == 0 =>
            {
                argument(format!(
                    "coarse-to-fine model needs Nc + Nf = levels with Nf >= 1, got {} + {} vs {}",
                    self.coarse_levels, self.fine_levels, self.levels
                ))
            }
            _ => Ok(()),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn ff_dim(&self) -> usize {
        4 * self.embed_dim
    }

    /// Number of distinct clipped offsets, `2 * rel_window + 1`.
    pub fn rel_span(&self) -> usize {
        2 * self.rel_window + 1
    }

    /// Grid levels the head produces scores for.
    pub fn predicted_levels(&self) -> Range<usize> {
        match self.role {
            Role::Coarse => 0..self.levels,
            Role::CoarseToFine => self.coarse_levels..self.levels,
        }
    }

    pub fn head_width(&self) -> usize {
        self.predicted_levels().len() * self.vocab
    }

    pub fn param_count(&self) -> usize {
        ParamLayout::new(self).len
    }

    fn check_inputs(&self, grid: &TokenGrid, mask: &MaskGrid) -> Result<()> {
        if !mask.same_shape(grid) {
            return argument(format!(
                "mask {}x{} does not match grid {}x{}",
                mask.timesteps(),
                mask.levels(),
                grid.timesteps(),
                grid.levels()
            ));
        }
        if grid.levels() != self.levels {
            return argument(format!(
                "grid has {} levels, model expects {}",
                grid.levels(),
                self.levels
            ));
        }
        if grid.timesteps() > self.max_len {
            return argument(format!(
                "sequence of {} timesteps exceeds max length {}",
                grid.timesteps(),
                self.max_len
            ));
        }
        if grid.vocab().iter().any(|&c| c as usize != self.vocab) {
            return argument("grid vocabulary differs from model vocabulary");
        }
        if self.role == Role::CoarseToFine
            && (0..mask.timesteps()).any(|t| (0..self.coarse_levels).any(|n| mask.get(t, n)))
        {
            return argument("coarse levels must not be masked for a coarse-to-fine model");
        }
        Ok(())
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::coarse(2, 64)
    }
}

/// Scores for every timestep and predicted level.
#[derive(Clone, Debug, PartialEq)]
pub struct Logits {
    timesteps: usize,
    levels: usize,
    vocab: usize,
    level_offset: usize,
    data: Vec<f64>,
}

impl Logits {
    pub fn new(
        timesteps: usize,
        levels: usize,
        vocab: usize,
        level_offset: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != timesteps * levels * vocab {
            return argument("logit buffer has the wrong length");
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite logits".into()));
        }
        Ok(Self {
            timesteps,
            levels,
            vocab,
            level_offset,
            data,
        })
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    /// Number of levels scored.
    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    /// First grid level these scores cover.
    pub fn level_offset(&self) -> usize {
        self.level_offset
    }

    pub fn covers(&self, grid_level: usize) -> bool {
        (self.level_offset..self.level_offset + self.levels).contains(&grid_level)
    }

    /// Score row for timestep `t` and grid level `level`.
    pub fn row(&self, t: usize, level: usize) -> &[f64] {
        let p = level - self.level_offset;
        let start = (t * self.levels + p) * self.vocab;
        &self.data[start..start + self.vocab]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Log-softmax of one score row.
    pub fn log_probs(&self, t: usize, level: usize) -> Vec<f64> {
        log_softmax(self.row(t, level))
    }
}

pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Reduction {
    /// Plain negative log-likelihood summed over masked positions.
    Sum,
    /// Sum divided by the masked count; 0 when nothing is masked.
    #[default]
    Mean,
}

/// Masked cross-entropy: `-sum log softmax(l)[target]` over masked positions.
pub fn loss(logits: &Logits, targets: &TokenGrid, mask: &MaskGrid, reduction: Reduction) -> Result<f64> {
    if !mask.same_shape(targets) || targets.timesteps() != logits.timesteps() {
        return argument("logits, targets and mask shapes differ");
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (t, n) in mask.masked_positions() {
        if !logits.covers(n) {
            return argument(format!("masked position ({t}, {n}) has no scores"));
        }
        let target = targets.get(t, n) as usize;
        if target >= logits.vocab() {
            return argument("target outside logit vocabulary");
        }
        total -= log_softmax(logits.row(t, n))[target];
        count += 1;
    }
    Ok(match reduction {
        Reduction::Sum => total,
        Reduction::Mean if count == 0 => 0.0,
        Reduction::Mean => total / count as f64,
    })
}

/// Scores for every timestep of `grid`, with masked positions replaced by
/// the MASK embedding.
pub fn forward<F: Real>(params: &Parameters<F>, grid: &TokenGrid, mask: &MaskGrid) -> Result<Logits> {
    params.config().check_inputs(grid, mask)?;
    transformer::forward(params, grid, mask)
}

/// Mean-reduced loss and its exact gradient for one grid.
pub fn grad<F: Real>(
    params: &Parameters<F>,
    grid: &TokenGrid,
    mask: &MaskGrid,
    targets: &TokenGrid,
) -> Result<SampleGrad<F>> {
    let count = loss_positions(params.config(), mask);
    let scale = if count == 0 { 0.0 } else { 1.0 / count as f64 };
    grad_scaled(params, grid, mask, targets, scale, None)
}

/// Loss and gradient with the per-position cross-entropy scaled by `scale`,
/// optionally with dropout on the residual branches.
pub fn grad_scaled<F: Real>(
    params: &Parameters<F>,
    grid: &TokenGrid,
    mask: &MaskGrid,
    targets: &TokenGrid,
    scale: f64,
    dropout: Option<(f64, &mut dyn rand::RngCore)>,
) -> Result<SampleGrad<F>> {
    params.config().check_inputs(grid, mask)?;
    if !mask.same_shape(targets) || targets.vocab() != grid.vocab() {
        return argument("targets do not match the input grid");
    }
    transformer::loss_and_grad(params, grid, mask, targets, scale, dropout)
}

/// Masked positions that contribute to the loss (those the head predicts).
pub fn loss_positions(cfg: &ModelConfig, mask: &MaskGrid) -> usize {
    let levels = cfg.predicted_levels();
    mask.masked_positions()
        .filter(|&(_, n)| levels.contains(&n))
        .count()
}

/// Inputs for a coarse-to-fine model: the full grid, its coarse levels
/// unmasked conditioning and its fine levels masked per `fine_mask`.
#[derive(Clone, Debug, PartialEq)]
pub struct C2fInputs {
    pub grid: TokenGrid,
    pub mask: MaskGrid,
}

pub fn c2f_view(cfg: &ModelConfig, full_grid: &TokenGrid, fine_mask: &MaskGrid) -> Result<C2fInputs> {
    if cfg.role != Role::CoarseToFine {
        return argument("c2f_view needs a coarse-to-fine config");
    }
    cfg.validate()?;
    if full_grid.levels() != cfg.levels || !fine_mask.same_shape(full_grid) {
        return argument("grid or mask does not cover the full hierarchy");
    }
    for t in 0..fine_mask.timesteps() {
        for n in 0..cfg.coarse_levels {
            if fine_mask.get(t, n) {
                return argument(format!("coarse position ({t}, {n}) is masked"));
            }
        }
    }
    Ok(C2fInputs {
        grid: full_grid.clone(),
        mask: fine_mask.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_examples() {
        let targets = TokenGrid::zeros(3, 1, 2).unwrap();
        let mask = MaskGrid::filled(3, 1, true).unwrap();
        let zero = Logits::new(3, 1, 2, 0, vec![0.0; 6]).unwrap();
        let sum = loss(&zero, &targets, &mask, Reduction::Sum).unwrap();
        assert!((sum - 3.0 * 2f64.ln()).abs() < 1e-12);
        assert!((sum - 2.0794).abs() < 1e-4);

        let none = MaskGrid::filled(3, 1, false).unwrap();
        assert_eq!(loss(&zero, &targets, &none, Reduction::Sum).unwrap(), 0.0);
        assert_eq!(loss(&zero, &targets, &none, Reduction::Mean).unwrap(), 0.0);

        let one = Logits::new(1, 1, 2, 0, vec![10.0, -10.0]).unwrap();
        let t1 = TokenGrid::zeros(1, 1, 2).unwrap();
        let m1 = MaskGrid::filled(1, 1, true).unwrap();
        // -log(e^10 / (e^10 + e^-10)) = ln(1 + e^-20)
        let expected = (-20f64).exp().ln_1p();
        let got = loss(&one, &t1, &m1, Reduction::Sum).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 2.06e-9).abs() < 1e-11);
    }

    #[test]
    fn config_validation() {
        let mut cfg = ModelConfig::tiny();
        cfg.heads = 3;
        assert!(cfg.validate().is_err());
        let c2f = ModelConfig::coarse_to_fine(2, 4, 64);
        assert!(c2f.validate().is_ok());
        assert_eq!(c2f.predicted_levels(), 2..6);
        assert_eq!(c2f.head_width(), 4 * 64);
        let mut bad = c2f.clone();
        bad.fine_levels = 3;
        assert!(bad.validate().is_err());
        assert!(ModelConfig::full_scale_coarse().validate().is_ok());
        assert!(ModelConfig::full_scale_coarse_to_fine().validate().is_ok());
    }

    #[test]
    fn c2f_view_contract() {
        let cfg = ModelConfig::coarse_to_fine(1, 2, 4);
        let grid = TokenGrid::zeros(5, 3, 4).unwrap();
        let fine = MaskGrid::from_fn(5, 3, |_, n| n > 0).unwrap();
        assert!(c2f_view(&cfg, &grid, &fine).is_ok());
        let bad = MaskGrid::from_fn(5, 3, |t, n| t == 2 && n == 0).unwrap();
        assert!(c2f_view(&cfg, &grid, &bad).is_err());
        assert!(c2f_view(&ModelConfig::tiny(), &grid, &fine).is_err());
    }
}
