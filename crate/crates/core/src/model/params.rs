use std::ops::Range;

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut2};
use num_traits::NumCast;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelConfig, Real};
use crate::error::{argument, Result};

/// Offsets of one attention layer's tensors inside the flat buffer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerLayout {
    pub ln1_gain: Range<usize>,
    pub ln1_bias: Range<usize>,
    pub wq: Range<usize>,
    pub wk: Range<usize>,
    pub wv: Range<usize>,
    pub wo: Range<usize>,
    pub bo: Range<usize>,
    pub ln2_gain: Range<usize>,
    pub ln2_bias: Range<usize>,
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
}

/// Where every tensor lives in the flat parameter vector.
///
/// Order: per-level embeddings, relative-position bias, layers, final norm,
/// output head. Every scalar appears exactly once.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub embeddings: Vec<Range<usize>>,
    pub rel_bias: Range<usize>,
    pub layers: Vec<LayerLayout>,
    pub final_gain: Range<usize>,
    pub final_bias: Range<usize>,
    pub head_w: Range<usize>,
    pub head_b: Range<usize>,
    pub len: usize,
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let e = cfg.embed_dim;
        let ff = cfg.ff_dim();
        let mut next = 0usize;
        let mut take = |n: usize| {
            let r = next..next + n;
            next += n;
            r
        };
        let embeddings = (0..cfg.levels).map(|_| take((cfg.vocab + 1) * e)).collect();
        let rel_bias = take(cfg.heads * cfg.rel_span());
        let layers = (0..cfg.layers)
            .map(|_| LayerLayout {
                ln1_gain: take(e),
                ln1_bias: take(e),
                wq: take(e * e),
                wk: take(e * e),
                wv: take(e * e),
                wo: take(e * e),
                bo: take(e),
                ln2_gain: take(e),
                ln2_bias: take(e),
                w1: take(e * ff),
                b1: take(ff),
                w2: take(ff * e),
                b2: take(e),
            })
            .collect();
        let final_gain = take(e);
        let final_bias = take(e);
        let head_w = take(e * cfg.head_width());
        let head_b = take(cfg.head_width());
        Self {
            embeddings,
            rel_bias,
            layers,
            final_gain,
            final_bias,
            head_w,
            head_b,
            len: next,
        }
    }

    /// Ranges holding layer-norm gains, which start at one.
    fn unit_ranges(&self) -> Vec<Range<usize>> {
        let mut out = vec![self.final_gain.clone()];
        for l in &self.layers {
            out.push(l.ln1_gain.clone());
            out.push(l.ln2_gain.clone());
        }
        out
    }

    /// Ranges holding weight matrices and embeddings (randomly initialized).
    fn random_ranges(&self) -> Vec<Range<usize>> {
        let mut out = self.embeddings.clone();
        for l in &self.layers {
            out.extend([
                l.wq.clone(),
                l.wk.clone(),
                l.wv.clone(),
                l.wo.clone(),
                l.w1.clone(),
                l.w2.clone(),
            ]);
        }
        out.push(self.head_w.clone());
        out
    }
}

/// All transformer weights as one flat vector plus the layout that names them.
///
/// Gradients share this type: a gradient is a `Parameters` whose values are
/// partial derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters<F> {
    config: ModelConfig,
    layout: ParamLayout,
    data: Vec<F>,
}

pub type Gradients<F> = Parameters<F>;

impl<F: Real> Parameters<F> {
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(config);
        let data = vec![F::zero(); layout.len];
        Ok(Self {
            config: config.clone(),
            layout,
            data,
        })
    }

    /// Normal(0, 0.02) weights and embeddings, unit norm gains, zero biases.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f64, 0.02).expect("valid normal");
        for r in p.layout.random_ranges() {
            for v in &mut p.data[r] {
                *v = F::from(normal.sample(&mut rng)).unwrap();
            }
        }
        for r in p.layout.unit_ranges() {
            p.data[r].fill(F::one());
        }
        Ok(p)
    }

    pub fn from_flat(config: &ModelConfig, data: Vec<F>) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(config);
        if data.len() != layout.len {
            return argument(format!(
                "flat parameter vector has {} values, config needs {}",
                data.len(),
                layout.len
            ));
        }
        Ok(Self {
            config: config.clone(),
            layout,
            data,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    /// Flat ordered view over every scalar.
    pub fn flat(&self) -> &[F] {
        &self.data
    }

    pub fn flat_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cast<G: Real>(&self) -> Parameters<G> {
        Parameters {
            config: self.config.clone(),
            layout: self.layout.clone(),
            data: self
                .data
                .iter()
                .map(|&v| <G as NumCast>::from(v).unwrap())
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            layout: self.layout.clone(),
            data: vec![F::zero(); self.data.len()],
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: F) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn l2_norm(&self) -> F {
        self.data.iter().fold(F::zero(), |acc, &v| acc + v * v).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn mat(&self, r: &Range<usize>, rows: usize, cols: usize) -> ArrayView2<'_, F> {
        ArrayView2::from_shape((rows, cols), &self.data[r.clone()]).expect("layout shape")
    }

    pub(crate) fn vec(&self, r: &Range<usize>) -> ArrayView1<'_, F> {
        ArrayView1::from(&self.data[r.clone()])
    }

    pub(crate) fn mat_mut(
        &mut self,
        r: &Range<usize>,
        rows: usize,
        cols: usize,
    ) -> ArrayViewMut2<'_, F> {
        ArrayViewMut2::from_shape((rows, cols), &mut self.data[r.clone()]).expect("layout shape")
    }

    /// Embedding table of one level, `(C + 1) x E`; row `C` is MASK.
    pub fn embedding(&self, level: usize) -> ArrayView2<'_, F> {
        self.mat(
            &self.layout.embeddings[level],
            self.config.vocab + 1,
            self.config.embed_dim,
        )
    }

    /// Relative-position bias, `heads x (2 * rel_window + 1)`.
    pub fn rel_bias(&self) -> ArrayView2<'_, F> {
        self.mat(&self.layout.rel_bias, self.config.heads, self.config.rel_span())
    }

    pub fn rel_bias_mut(&mut self) -> ArrayViewMut2<'_, F> {
        let (h, s) = (self.config.heads, self.config.rel_span());
        let r = self.layout.rel_bias.clone();
        self.mat_mut(&r, h, s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_covers_every_scalar_once() {
        let cfg = ModelConfig::tiny();
        let layout = ParamLayout::new(&cfg);
        let mut ranges: Vec<Range<usize>> = layout.embeddings.clone();
        ranges.push(layout.rel_bias.clone());
        for l in &layout.layers {
            ranges.extend([
                l.ln1_gain.clone(),
                l.ln1_bias.clone(),
                l.wq.clone(),
                l.wk.clone(),
                l.wv.clone(),
                l.wo.clone(),
                l.bo.clone(),
                l.ln2_gain.clone(),
                l.ln2_bias.clone(),
                l.w1.clone(),
                l.b1.clone(),
                l.w2.clone(),
                l.b2.clone(),
            ]);
        }
        ranges.extend([
            layout.final_gain.clone(),
            layout.final_bias.clone(),
            layout.head_w.clone(),
            layout.head_b.clone(),
        ]);
        let mut seen = vec![0u8; layout.len];
        for r in ranges {
            for i in r {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn init_is_seeded() {
        let cfg = ModelConfig::tiny();
        let a = Parameters::<f32>::init(&cfg, 7).unwrap();
        let b = Parameters::<f32>::init(&cfg, 7).unwrap();
        let c = Parameters::<f32>::init(&cfg, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.vec(&a.layout.final_gain)[0], 1.0);
    }

    #[test]
    fn from_flat_checks_length() {
        let cfg = ModelConfig::tiny();
        assert!(Parameters::<f64>::from_flat(&cfg, vec![0.0; 3]).is_err());
    }
}
