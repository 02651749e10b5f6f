use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;

use super::params::{DecoderParams, EncoderParams, GruParams, Parameters};
use super::ModelConfig;
use crate::error::{Error, Result};

/// Everything a backward pass needs, plus the intermediate values worth
/// inspecting: hidden states `h` (`d_h x n`), attention `attention`
/// (`L x n`), projected states `z` (`d_p x n`), label vectors `v`
/// (`d_h x L`), logits and probabilities.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub tokens: Vec<usize>,
    pub mask: Vec<bool>,
    pub h: Array2<f64>,
    pub attention: Option<Array2<f64>>,
    pub z: Option<Array2<f64>>,
    pub v: Array2<f64>,
    pub logits: Array1<f64>,
    pub probabilities: Array1<f64>,
    x: Array2<f64>,
    encoder: EncoderCache,
    dropout: Option<Array2<f64>>,
    dropped: Option<Array2<f64>>,
    argmax: Vec<usize>,
}

impl ForwardTrace {
    /// Hidden states after dropout, as seen by the decoder.
    fn decoder_input(&self) -> &Array2<f64> {
        self.dropped.as_ref().unwrap_or(&self.h)
    }
}

#[derive(Debug, Clone)]
enum EncoderCache {
    Bag,
    Conv { stacked: Array2<f64> },
    BiRnn { fwd: Vec<GruStep>, bwd: Vec<GruStep> },
}

#[derive(Debug, Clone)]
struct GruStep {
    t: usize,
    h_prev: Array1<f64>,
    z: Array1<f64>,
    r: Array1<f64>,
    g: Array1<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverted-dropout mask: entries are 0 or `1 / (1 - rate)`.
pub(crate) fn dropout_mask<R: Rng>(rng: &mut R, rows: usize, cols: usize, rate: f64) -> Array2<f64> {
    let keep = 1.0 / (1.0 - rate);
    Array2::from_shape_simple_fn((rows, cols), || if rng.gen::<f64>() < rate { 0.0 } else { keep })
}

pub fn forward(params: &Parameters, config: &ModelConfig, tokens: &[usize]) -> Result<ForwardTrace> {
    forward_masked(params, config, tokens, &vec![true; tokens.len()], None)
}

/// Forward pass over a possibly padded sequence. Positions with
/// `mask[t] == false` are padding: they contribute nothing to convolutions,
/// are skipped by the recurrent cells, get zero attention and never win
/// the max-pool. `dropout` multiplies the hidden states element-wise.
pub fn forward_masked(
    params: &Parameters,
    config: &ModelConfig,
    tokens: &[usize],
    mask: &[bool],
    dropout: Option<&Array2<f64>>,
) -> Result<ForwardTrace> {
    let n = tokens.len();
    if n == 0 {
        return Err(Error::invalid("empty token sequence"));
    }
    if mask.len() != n {
        return Err(Error::ShapeMismatch(format!("mask has {} entries for {n} tokens", mask.len())));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::invalid("every position is padding"));
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t >= config.vocab_size) {
        return Err(Error::invalid(format!(
            "token index {bad} outside vocabulary of {}",
            config.vocab_size
        )));
    }
    let d_e = config.d_e;
    let d_h = config.d_h();
    let mut x = Array2::zeros((d_e, n));
    for (t, (&tok, &m)) in tokens.iter().zip(mask).enumerate() {
        if m {
            x.column_mut(t).assign(&params.embedding.row(tok));
        }
    }

    let (mut h, encoder) = match &params.encoder {
        EncoderParams::Bag => (x.clone(), EncoderCache::Bag),
        EncoderParams::Conv { weight, bias } => {
            let window = weight.ncols() / d_e;
            let stacked = stack_windows(&x, mask, window);
            let mut h = weight.dot(&stacked);
            for mut col in h.columns_mut() {
                col += bias;
                col.mapv_inplace(f64::tanh);
            }
            (h, EncoderCache::Conv { stacked })
        }
        EncoderParams::BiRnn { fwd, bwd } => {
            let half = d_h / 2;
            let mut h = Array2::zeros((d_h, n));
            let order: Vec<usize> = (0..n).filter(|&t| mask[t]).collect();
            let fwd_steps = run_gru(fwd, &x, order.iter().copied());
            let bwd_steps = run_gru(bwd, &x, order.iter().rev().copied());
            for (steps, rows) in [(&fwd_steps, 0..half), (&bwd_steps, half..d_h)] {
                for step in steps.iter() {
                    let out = gru_output(step);
                    h.slice_mut(s![rows.clone(), step.t]).assign(&out);
                }
            }
            (h, EncoderCache::BiRnn { fwd: fwd_steps, bwd: bwd_steps })
        }
    };
    for (t, &m) in mask.iter().enumerate() {
        if !m {
            h.column_mut(t).fill(0.0);
        }
    }

    let dropped = match dropout {
        Some(d) => {
            if d.dim() != h.dim() {
                return Err(Error::ShapeMismatch(format!(
                    "dropout mask {:?} for hidden states {:?}",
                    d.dim(),
                    h.dim()
                )));
            }
            Some(&h * d)
        }
        None => None,
    };
    let h_in = dropped.as_ref().unwrap_or(&h);

    let l = config.n_labels;
    let mut argmax = Vec::new();
    let (attention, z, v) = match &params.decoder {
        DecoderParams::MaxPool => {
            let mut pooled = Array1::zeros(d_h);
            for i in 0..d_h {
                let mut best = usize::MAX;
                for t in (0..n).filter(|&t| mask[t]) {
                    if best == usize::MAX || h_in[[i, t]] > h_in[[i, best]] {
                        best = t;
                    }
                }
                pooled[i] = h_in[[i, best]];
                argmax.push(best);
            }
            let v = pooled.insert_axis(Axis(1)).broadcast((d_h, l)).unwrap().to_owned();
            (None, None, v)
        }
        DecoderParams::LaCaml { queries } => {
            let a = masked_softmax(queries.dot(h_in), mask);
            let v = h_in.dot(&a.t());
            (Some(a), None, v)
        }
        DecoderParams::LaLaat { projection, queries } => {
            let z = projection.dot(h_in).mapv(f64::tanh);
            let a = masked_softmax(queries.dot(&z), mask);
            let v = h_in.dot(&a.t());
            (Some(a), Some(z), v)
        }
    };

    let logits = Array1::from_shape_fn(l, |k| params.out_weight.row(k).dot(&v.column(k)) + params.out_bias[k]);
    let probabilities = logits.mapv(sigmoid);
    Ok(ForwardTrace {
        tokens: tokens.to_vec(),
        mask: mask.to_vec(),
        h,
        attention,
        z,
        v,
        logits,
        probabilities,
        x,
        encoder,
        dropout: dropout.cloned(),
        dropped,
        argmax,
    })
}

/// Column `t` holds the embeddings at `t - left .. t - left + window`,
/// with out-of-range and padded positions left at zero.
fn stack_windows(x: &Array2<f64>, mask: &[bool], window: usize) -> Array2<f64> {
    let (d_e, n) = x.dim();
    let left = (window - 1) / 2;
    let mut stacked = Array2::zeros((window * d_e, n));
    for t in 0..n {
        for j in 0..window {
            let Some(src) = (t + j).checked_sub(left) else { continue };
            if src < n && mask[src] {
                stacked
                    .slice_mut(s![j * d_e..(j + 1) * d_e, t])
                    .assign(&x.column(src));
            }
        }
    }
    stacked
}

fn run_gru(cell: &GruParams, x: &Array2<f64>, order: impl Iterator<Item = usize>) -> Vec<GruStep> {
    let hidden = cell.b_z.len();
    let mut h_prev = Array1::zeros(hidden);
    let mut steps = Vec::new();
    for t in order {
        let xt = x.column(t);
        let z = (cell.w_z.dot(&xt) + cell.u_z.dot(&h_prev) + &cell.b_z).mapv(sigmoid);
        let r = (cell.w_r.dot(&xt) + cell.u_r.dot(&h_prev) + &cell.b_r).mapv(sigmoid);
        let g = (cell.w_h.dot(&xt) + cell.u_h.dot(&(&r * &h_prev)) + &cell.b_h).mapv(f64::tanh);
        let step = GruStep { t, h_prev, z, r, g };
        h_prev = gru_output(&step);
        steps.push(step);
    }
    steps
}

fn gru_output(step: &GruStep) -> Array1<f64> {
    (1.0 - &step.z) * &step.h_prev + &step.z * &step.g
}

/// Softmax along each row, restricted to unmasked columns.
fn masked_softmax(mut scores: Array2<f64>, mask: &[bool]) -> Array2<f64> {
    for mut row in scores.rows_mut() {
        let max = row
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&s, _)| s)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (s, &m) in row.iter_mut().zip(mask) {
            *s = if m { (*s - max).exp() } else { 0.0 };
            total += *s;
        }
        row /= total;
    }
    scores
}

/// Mean binary cross-entropy over labels, probabilities clamped to
/// `[1e-12, 1 - 1e-12]`.
pub fn bce_loss(probabilities: &[f64], targets: &[bool]) -> f64 {
    const EPS: f64 = 1e-12;
    let total: f64 = probabilities
        .iter()
        .zip(targets)
        .map(|(&p, &y)| {
            let p = p.clamp(EPS, 1.0 - EPS);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    total / probabilities.len() as f64
}

/// Gradient of [`bce_loss`] with respect to every parameter.
pub fn backward(
    trace: &ForwardTrace,
    params: &Parameters,
    config: &ModelConfig,
    targets: &[bool],
) -> Result<Parameters> {
    let mut grad = params.zeros_like();
    accumulate_gradients(trace, params, config, targets, 1.0, &mut grad)?;
    Ok(grad)
}

/// Adds `scale` times the loss gradient into `grad`.
pub fn accumulate_gradients(
    trace: &ForwardTrace,
    params: &Parameters,
    config: &ModelConfig,
    targets: &[bool],
    scale: f64,
    grad: &mut Parameters,
) -> Result<()> {
    let d_x = backprop_dense(trace, params, config, targets, scale, grad)?;
    scatter_embedding(trace, &d_x, &mut grad.embedding);
    Ok(())
}

pub(crate) fn scatter_embedding(trace: &ForwardTrace, d_x: &Array2<f64>, embedding: &mut Array2<f64>) {
    for (t, (&tok, &m)) in trace.tokens.iter().zip(&trace.mask).enumerate() {
        if m {
            embedding.row_mut(tok).scaled_add(1.0, &d_x.column(t));
        }
    }
}

/// Accumulates gradients of every tensor except the embedding table and
/// returns the gradient with respect to the embedded inputs (`d_e x n`).
pub(crate) fn backprop_dense(
    trace: &ForwardTrace,
    params: &Parameters,
    config: &ModelConfig,
    targets: &[bool],
    scale: f64,
    grad: &mut Parameters,
) -> Result<Array2<f64>> {
    let l = config.n_labels;
    if targets.len() != l {
        return Err(Error::ShapeMismatch(format!("{} targets for {l} labels", targets.len())));
    }
    let d_logit = Array1::from_shape_fn(l, |k| {
        scale * (trace.probabilities[k] - if targets[k] { 1.0 } else { 0.0 }) / l as f64
    });
    grad.out_bias += &d_logit;
    let mut d_v = Array2::zeros(trace.v.dim());
    for k in 0..l {
        grad.out_weight
            .row_mut(k)
            .scaled_add(d_logit[k], &trace.v.column(k));
        d_v.column_mut(k).assign(&(&params.out_weight.row(k) * d_logit[k]));
    }

    let h_in = trace.decoder_input();
    let mut d_h = Array2::zeros(h_in.dim());
    match (&params.decoder, &mut grad.decoder) {
        (DecoderParams::MaxPool, DecoderParams::MaxPool) => {
            let d_pooled = d_v.sum_axis(Axis(1));
            for (i, &t) in trace.argmax.iter().enumerate() {
                d_h[[i, t]] += d_pooled[i];
            }
        }
        (DecoderParams::LaCaml { queries }, DecoderParams::LaCaml { queries: g_queries }) => {
            let a = trace.attention.as_ref().expect("attention decoder keeps A");
            d_h += &d_v.dot(a);
            let d_s = softmax_backward(a, &d_v.t().dot(h_in));
            *g_queries += &d_s.dot(&h_in.t());
            d_h += &queries.t().dot(&d_s);
        }
        (
            DecoderParams::LaLaat { projection, queries },
            DecoderParams::LaLaat { projection: g_projection, queries: g_queries },
        ) => {
            let a = trace.attention.as_ref().expect("attention decoder keeps A");
            let z = trace.z.as_ref().expect("laat decoder keeps Z");
            d_h += &d_v.dot(a);
            let d_s = softmax_backward(a, &d_v.t().dot(h_in));
            *g_queries += &d_s.dot(&z.t());
            let d_pre = queries.t().dot(&d_s) * z.mapv(|v| 1.0 - v * v);
            *g_projection += &d_pre.dot(&h_in.t());
            d_h += &projection.t().dot(&d_pre);
        }
        _ => return Err(Error::ShapeMismatch("gradient buffer has a different decoder".into())),
    }
    if let Some(mask) = &trace.dropout {
        d_h *= mask;
    }

    let d_x = match (&params.encoder, &mut grad.encoder, &trace.encoder) {
        (EncoderParams::Bag, EncoderParams::Bag, EncoderCache::Bag) => d_h,
        (
            EncoderParams::Conv { weight, .. },
            EncoderParams::Conv { weight: g_weight, bias: g_bias },
            EncoderCache::Conv { stacked },
        ) => {
            let d_pre = d_h * trace.h.mapv(|v| 1.0 - v * v);
            *g_weight += &d_pre.dot(&stacked.t());
            *g_bias += &d_pre.sum_axis(Axis(1));
            let d_stacked = weight.t().dot(&d_pre);
            unstack_windows(&d_stacked, &trace.mask, config.d_e)
        }
        (
            EncoderParams::BiRnn { fwd, bwd },
            EncoderParams::BiRnn { fwd: g_fwd, bwd: g_bwd },
            EncoderCache::BiRnn { fwd: fwd_steps, bwd: bwd_steps },
        ) => {
            let half = fwd.b_z.len();
            let mut d_x = Array2::zeros(trace.x.dim());
            gru_backward(fwd, g_fwd, fwd_steps, &trace.x, &d_h, 0, &mut d_x);
            gru_backward(bwd, g_bwd, bwd_steps, &trace.x, &d_h, half, &mut d_x);
            d_x
        }
        _ => return Err(Error::ShapeMismatch("gradient buffer has a different encoder".into())),
    };

    Ok(d_x)
}

/// Row-wise softmax Jacobian applied to `d_a`; masked entries have `a = 0`
/// and so receive no gradient.
fn softmax_backward(a: &Array2<f64>, d_a: &Array2<f64>) -> Array2<f64> {
    let mut d_s = a * d_a;
    for (mut row, a_row) in d_s.rows_mut().into_iter().zip(a.rows()) {
        let dot: f64 = row.sum();
        row.scaled_add(-dot, &a_row);
    }
    d_s
}

fn unstack_windows(d_stacked: &Array2<f64>, mask: &[bool], d_e: usize) -> Array2<f64> {
    let n = mask.len();
    let window = d_stacked.nrows() / d_e;
    let left = (window - 1) / 2;
    let mut d_x = Array2::zeros((d_e, n));
    for t in 0..n {
        for j in 0..window {
            let Some(src) = (t + j).checked_sub(left) else { continue };
            if src < n && mask[src] {
                let block = d_stacked.slice(s![j * d_e..(j + 1) * d_e, t]);
                d_x.column_mut(src).scaled_add(1.0, &block);
            }
        }
    }
    d_x
}

fn add_outer(target: &mut Array2<f64>, left: &Array1<f64>, right: ArrayView1<f64>) {
    for (mut row, &a) in target.rows_mut().into_iter().zip(left) {
        row.scaled_add(a, &right);
    }
}

/// Backpropagation through time for one direction. `offset` locates this
/// direction's rows inside `d_h`.
fn gru_backward(
    cell: &GruParams,
    grad: &mut GruParams,
    steps: &[GruStep],
    x: &Array2<f64>,
    d_h: &Array2<f64>,
    offset: usize,
    d_x: &mut Array2<f64>,
) {
    let hidden = cell.b_z.len();
    let mut carry = Array1::<f64>::zeros(hidden);
    for step in steps.iter().rev() {
        let xt = x.column(step.t);
        let dh = &carry + &d_h.slice(s![offset..offset + hidden, step.t]);
        let dz = &dh * &(&step.g - &step.h_prev);
        let dg = &dh * &step.z;
        let mut dh_prev = &dh * &(1.0 - &step.z);

        let da_h = dg * step.g.mapv(|g| 1.0 - g * g);
        let rh = &step.r * &step.h_prev;
        add_outer(&mut grad.w_h, &da_h, xt);
        add_outer(&mut grad.u_h, &da_h, rh.view());
        grad.b_h += &da_h;
        let d_rh = cell.u_h.t().dot(&da_h);
        let dr = &d_rh * &step.h_prev;
        dh_prev += &(&d_rh * &step.r);
        let mut dx = cell.w_h.t().dot(&da_h);

        let da_r = dr * step.r.mapv(|r| r * (1.0 - r));
        add_outer(&mut grad.w_r, &da_r, xt);
        add_outer(&mut grad.u_r, &da_r, step.h_prev.view());
        grad.b_r += &da_r;
        dh_prev += &cell.u_r.t().dot(&da_r);
        dx += &cell.w_r.t().dot(&da_r);

        let da_z = dz * step.z.mapv(|z| z * (1.0 - z));
        add_outer(&mut grad.w_z, &da_z, xt);
        add_outer(&mut grad.u_z, &da_z, step.h_prev.view());
        grad.b_z += &da_z;
        dh_prev += &cell.u_z.t().dot(&da_z);
        dx += &cell.w_z.t().dot(&da_z);

        d_x.column_mut(step.t).scaled_add(1.0, &dx);
        carry = dh_prev;
    }
}
