//! Forward pass with activation caching and the matching hand-written
//! backward pass.

use ndarray::{s, Array1, Array2, ArrayView1, Axis, Zip};
use rand::Rng;

use super::{Gradients, Logits, Parameters, Real};
use crate::error::{Error, Result};
use crate::tokens::{MaskGrid, TokenGrid};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Loss contribution and gradient of one grid.
#[derive(Clone, Debug)]
pub struct SampleGrad<F> {
    /// `scale * sum` of the masked cross-entropies.
    pub loss: f64,
    /// Masked positions that entered the loss.
    pub masked: usize,
    pub grad: Gradients<F>,
}

#[inline]
fn c<F: Real>(x: f64) -> F {
    F::from(x).unwrap()
}

struct NormCache<F> {
    xhat: Array2<F>,
    rstd: Array1<F>,
}

fn layer_norm<F: Real>(
    x: &Array2<F>,
    gain: ArrayView1<F>,
    bias: ArrayView1<F>,
) -> (Array2<F>, NormCache<F>) {
    let (rows, width) = x.dim();
    let inv_w = c::<F>(1.0 / width as f64);
    let mut xhat = Array2::zeros((rows, width));
    let mut rstd = Array1::zeros(rows);
    for (i, row) in x.rows().into_iter().enumerate() {
        let mean = row.sum() * inv_w;
        let var = row.fold(F::zero(), |acc, &v| acc + (v - mean) * (v - mean)) * inv_w;
        let r = F::one() / (var + c(LN_EPS)).sqrt();
        rstd[i] = r;
        Zip::from(xhat.row_mut(i))
            .and(row)
            .for_each(|h, &v| *h = (v - mean) * r);
    }
    let mut y = xhat.clone();
    Zip::from(y.rows_mut()).for_each(|mut row| {
        Zip::from(&mut row)
            .and(&gain)
            .and(&bias)
            .for_each(|v, &g, &b| *v = *v * g + b);
    });
    (y, NormCache { xhat, rstd })
}

/// Returns `(dx, dgain, dbias)`.
fn layer_norm_back<F: Real>(
    dy: &Array2<F>,
    cache: &NormCache<F>,
    gain: ArrayView1<F>,
) -> (Array2<F>, Array1<F>, Array1<F>) {
    let width = dy.ncols();
    let inv_w = c::<F>(1.0 / width as f64);
    let dgain = (dy * &cache.xhat).sum_axis(Axis(0));
    let dbias = dy.sum_axis(Axis(0));
    let dxhat = dy * &gain;
    let mut dx = Array2::zeros(dy.dim());
    for i in 0..dy.nrows() {
        let dh = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let mean_dh = dh.sum() * inv_w;
        let mean_dhx = dh.dot(&xh) * inv_w;
        let r = cache.rstd[i];
        Zip::from(dx.row_mut(i))
            .and(&dh)
            .and(&xh)
            .for_each(|d, &a, &b| *d = r * (a - mean_dh - b * mean_dhx));
    }
    (dx, dgain, dbias)
}

fn gelu<F: Real>(x: F) -> F {
    let inner = c::<F>(GELU_C) * (x + c::<F>(GELU_A) * x * x * x);
    c::<F>(0.5) * x * (F::one() + inner.tanh())
}

fn gelu_grad<F: Real>(x: F) -> F {
    let inner = c::<F>(GELU_C) * (x + c::<F>(GELU_A) * x * x * x);
    let th = inner.tanh();
    let dinner = c::<F>(GELU_C) * (F::one() + c::<F>(3.0 * GELU_A) * x * x);
    c::<F>(0.5) * (F::one() + th) + c::<F>(0.5) * x * (F::one() - th * th) * dinner
}

struct LayerCache<F> {
    ln1: NormCache<F>,
    a: Array2<F>,
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    probs: Vec<Array2<F>>,
    o: Array2<F>,
    drop_attn: Option<Array2<F>>,
    ln2: NormCache<F>,
    c: Array2<F>,
    hpre: Array2<F>,
    hact: Array2<F>,
    drop_ff: Option<Array2<F>>,
}

struct ForwardCache<F> {
    indices: Vec<Vec<usize>>,
    layers: Vec<LayerCache<F>>,
    final_norm: NormCache<F>,
    z: Array2<F>,
    logits: Array2<F>,
}

/// Clipped relative offset index for query `i`, key `j`.
#[inline]
fn rel_index(i: usize, j: usize, window: usize) -> usize {
    let d = i as isize - j as isize;
    (d.clamp(-(window as isize), window as isize) + window as isize) as usize
}

fn dropout_mask<F: Real>(shape: (usize, usize), rate: f64, rng: &mut dyn rand::RngCore) -> Array2<F> {
    let keep = c::<F>(1.0 / (1.0 - rate));
    Array2::from_shape_fn(shape, |_| {
        if rng.gen::<f64>() < rate {
            F::zero()
        } else {
            keep
        }
    })
}

fn run_forward<F: Real>(
    p: &Parameters<F>,
    grid: &TokenGrid,
    mask: &MaskGrid,
    mut dropout: Option<(f64, &mut dyn rand::RngCore)>,
) -> Result<ForwardCache<F>> {
    let cfg = p.config();
    let lay = p.layout();
    let (t_len, e, heads, dh) = (grid.timesteps(), cfg.embed_dim, cfg.heads, cfg.head_dim());
    let ff = cfg.ff_dim();
    let scale = c::<F>(1.0 / (dh as f64).sqrt());

    let indices: Vec<Vec<usize>> = (0..t_len)
        .map(|t| {
            (0..cfg.levels)
                .map(|n| {
                    if mask.get(t, n) {
                        cfg.vocab
                    } else {
                        grid.get(t, n) as usize
                    }
                })
                .collect()
        })
        .collect();

    let mut x = Array2::<F>::zeros((t_len, e));
    for (n, range) in lay.embeddings.iter().enumerate() {
        let table = p.mat(range, cfg.vocab + 1, e);
        for (t, idx) in indices.iter().enumerate() {
            let mut row = x.row_mut(t);
            row += &table.row(idx[n]);
        }
    }

    let rel = p.rel_bias();
    let bias: Vec<Array2<F>> = (0..heads)
        .map(|h| {
            Array2::from_shape_fn((t_len, t_len), |(i, j)| rel[[h, rel_index(i, j, cfg.rel_window)]])
        })
        .collect();

    let mut layers = Vec::with_capacity(cfg.layers);
    for l in &lay.layers {
        let (a, ln1) = layer_norm(&x, p.vec(&l.ln1_gain), p.vec(&l.ln1_bias));
        let q = a.dot(&p.mat(&l.wq, e, e));
        let k = a.dot(&p.mat(&l.wk, e, e));
        let v = a.dot(&p.mat(&l.wv, e, e));
        let mut o = Array2::<F>::zeros((t_len, e));
        let mut probs = Vec::with_capacity(heads);
        for (h, hb) in bias.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut sc = q.slice(cols).dot(&k.slice(cols).t()) * scale + hb;
            for mut row in sc.rows_mut() {
                let max = row.fold(F::neg_infinity(), |m, &v| m.max(v));
                row.mapv_inplace(|v| (v - max).exp());
                let sum = row.sum();
                row.mapv_inplace(|v| v / sum);
            }
            o.slice_mut(cols).assign(&sc.dot(&v.slice(cols)));
            probs.push(sc);
        }
        let mut attn = o.dot(&p.mat(&l.wo, e, e)) + &p.vec(&l.bo);
        let drop_attn = dropout.as_mut().filter(|(r, _)| *r > 0.0).map(|(rate, rng)| {
            let m = dropout_mask::<F>((t_len, e), *rate, &mut **rng);
            attn *= &m;
            m
        });
        x += &attn;

        let (cn, ln2) = layer_norm(&x, p.vec(&l.ln2_gain), p.vec(&l.ln2_bias));
        let hpre = cn.dot(&p.mat(&l.w1, e, ff)) + &p.vec(&l.b1);
        let hact = hpre.mapv(gelu);
        let mut out = hact.dot(&p.mat(&l.w2, ff, e)) + &p.vec(&l.b2);
        let drop_ff = dropout.as_mut().filter(|(r, _)| *r > 0.0).map(|(rate, rng)| {
            let m = dropout_mask::<F>((t_len, e), *rate, &mut **rng);
            out *= &m;
            m
        });
        x += &out;

        layers.push(LayerCache {
            ln1,
            a,
            q,
            k,
            v,
            probs,
            o,
            drop_attn,
            ln2,
            c: cn,
            hpre,
            hact,
            drop_ff,
        });
    }

    let (z, final_norm) = layer_norm(&x, p.vec(&lay.final_gain), p.vec(&lay.final_bias));
    let logits = z.dot(&p.mat(&lay.head_w, e, cfg.head_width())) + &p.vec(&lay.head_b);
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(
            "transformer produced non-finite activations".into(),
        ));
    }
    Ok(ForwardCache {
        indices,
        layers,
        final_norm,
        z,
        logits,
    })
}

fn to_logits<F: Real>(p: &Parameters<F>, raw: &Array2<F>) -> Result<Logits> {
    let cfg = p.config();
    let levels = cfg.predicted_levels();
    Logits::new(
        raw.nrows(),
        levels.len(),
        cfg.vocab,
        levels.start,
        raw.iter().map(|v| v.to_f64().unwrap()).collect(),
    )
}

pub(super) fn forward<F: Real>(p: &Parameters<F>, grid: &TokenGrid, mask: &MaskGrid) -> Result<Logits> {
    let cache = run_forward(p, grid, mask, None)?;
    to_logits(p, &cache.logits)
}

fn accumulate<'a, F: Real>(dst: &mut [F], src: impl IntoIterator<Item = &'a F>) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(super) fn loss_and_grad<F: Real>(
    p: &Parameters<F>,
    grid: &TokenGrid,
    mask: &MaskGrid,
    targets: &TokenGrid,
    scale: f64,
    dropout: Option<(f64, &mut dyn rand::RngCore)>,
) -> Result<SampleGrad<F>> {
    let cfg = p.config();
    let lay = p.layout();
    let (t_len, e, heads, dh, ff) = (
        grid.timesteps(),
        cfg.embed_dim,
        cfg.heads,
        cfg.head_dim(),
        cfg.ff_dim(),
    );
    let vocab = cfg.vocab;
    let predicted = cfg.predicted_levels();
    let att_scale = c::<F>(1.0 / (dh as f64).sqrt());

    let cache = run_forward(p, grid, mask, dropout)?;
    let mut g = p.zeros_like();

    // softmax cross-entropy at masked, predicted positions
    let mut dlogits = Array2::<F>::zeros(cache.logits.dim());
    let mut loss = 0.0;
    let mut masked = 0usize;
    for (t, n) in mask.masked_positions() {
        if !predicted.contains(&n) {
            continue;
        }
        let col = (n - predicted.start) * vocab;
        let row: Vec<f64> = cache
            .logits
            .slice(s![t, col..col + vocab])
            .iter()
            .map(|v| v.to_f64().unwrap())
            .collect();
        let logp = super::log_softmax(&row);
        let target = targets.get(t, n) as usize;
        loss -= logp[target] * scale;
        masked += 1;
        for (k, lp) in logp.iter().enumerate() {
            let onehot = if k == target { 1.0 } else { 0.0 };
            dlogits[[t, col + k]] = c((lp.exp() - onehot) * scale);
        }
    }
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {loss}")));
    }

    // head and final norm
    let head_w = p.mat(&lay.head_w, e, cfg.head_width());
    accumulate(&mut g.flat_mut()[lay.head_w.clone()], &cache.z.t().dot(&dlogits));
    accumulate(&mut g.flat_mut()[lay.head_b.clone()], &dlogits.sum_axis(Axis(0)));
    let dz = dlogits.dot(&head_w.t());
    let (mut dx, dgf, dbf) = layer_norm_back(&dz, &cache.final_norm, p.vec(&lay.final_gain));
    accumulate(&mut g.flat_mut()[lay.final_gain.clone()], &dgf);
    accumulate(&mut g.flat_mut()[lay.final_bias.clone()], &dbf);

    let mut drel = Array2::<F>::zeros((heads, cfg.rel_span()));
    for (l, lc) in lay.layers.iter().zip(&cache.layers).rev() {
        // feed-forward branch
        let mut dout = dx.clone();
        if let Some(m) = &lc.drop_ff {
            dout *= m;
        }
        let w2 = p.mat(&l.w2, ff, e);
        accumulate(&mut g.flat_mut()[l.w2.clone()], &lc.hact.t().dot(&dout));
        accumulate(&mut g.flat_mut()[l.b2.clone()], &dout.sum_axis(Axis(0)));
        let mut dh_pre = dout.dot(&w2.t());
        Zip::from(&mut dh_pre)
            .and(&lc.hpre)
            .for_each(|d, &x| *d *= gelu_grad(x));
        let w1 = p.mat(&l.w1, e, ff);
        accumulate(&mut g.flat_mut()[l.w1.clone()], &lc.c.t().dot(&dh_pre));
        accumulate(&mut g.flat_mut()[l.b1.clone()], &dh_pre.sum_axis(Axis(0)));
        let dc = dh_pre.dot(&w1.t());
        let (dxm, dg2, db2) = layer_norm_back(&dc, &lc.ln2, p.vec(&l.ln2_gain));
        accumulate(&mut g.flat_mut()[l.ln2_gain.clone()], &dg2);
        accumulate(&mut g.flat_mut()[l.ln2_bias.clone()], &db2);
        dx += &dxm;

        // attention branch
        let mut dattn = dx.clone();
        if let Some(m) = &lc.drop_attn {
            dattn *= m;
        }
        let wo = p.mat(&l.wo, e, e);
        accumulate(&mut g.flat_mut()[l.wo.clone()], &lc.o.t().dot(&dattn));
        accumulate(&mut g.flat_mut()[l.bo.clone()], &dattn.sum_axis(Axis(0)));
        let d_o = dattn.dot(&wo.t());
        let mut dq = Array2::<F>::zeros((t_len, e));
        let mut dk = Array2::<F>::zeros((t_len, e));
        let mut dv = Array2::<F>::zeros((t_len, e));
        for (h, probs) in lc.probs.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let doh = d_o.slice(cols);
            let dprobs = doh.dot(&lc.v.slice(cols).t());
            dv.slice_mut(cols).assign(&probs.t().dot(&doh));
            let mut ds = dprobs;
            for (mut drow, prow) in ds.rows_mut().into_iter().zip(probs.rows()) {
                let inner = drow.dot(&prow);
                Zip::from(&mut drow)
                    .and(&prow)
                    .for_each(|d, &pv| *d = pv * (*d - inner));
            }
            for ((i, j), &v) in ds.indexed_iter() {
                drel[[h, rel_index(i, j, cfg.rel_window)]] += v;
            }
            ds *= att_scale;
            dq.slice_mut(cols).assign(&ds.dot(&lc.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&lc.q.slice(cols)));
        }
        let at = lc.a.t();
        accumulate(&mut g.flat_mut()[l.wq.clone()], &at.dot(&dq));
        accumulate(&mut g.flat_mut()[l.wk.clone()], &at.dot(&dk));
        accumulate(&mut g.flat_mut()[l.wv.clone()], &at.dot(&dv));
        let da = dq.dot(&p.mat(&l.wq, e, e).t())
            + dk.dot(&p.mat(&l.wk, e, e).t())
            + dv.dot(&p.mat(&l.wv, e, e).t());
        let (dxi, dg1, db1) = layer_norm_back(&da, &lc.ln1, p.vec(&l.ln1_gain));
        accumulate(&mut g.flat_mut()[l.ln1_gain.clone()], &dg1);
        accumulate(&mut g.flat_mut()[l.ln1_bias.clone()], &db1);
        dx += &dxi;
    }
    accumulate(&mut g.flat_mut()[lay.rel_bias.clone()], &drel);

    for (n, range) in lay.embeddings.iter().enumerate() {
        let mut table = g.mat_mut(range, vocab + 1, e);
        for (t, idx) in cache.indices.iter().enumerate() {
            let mut row = table.row_mut(idx[n]);
            row += &dx.row(t);
        }
    }

    Ok(SampleGrad {
        loss,
        masked,
        grad: g,
    })
}
