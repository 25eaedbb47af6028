//! Transformer building blocks. Each `init_*` registers the parameters that the
//! matching forward function reads, under the same prefix.

use ppk_autodiff::{Graph, Tensor, Var};
use rand::Rng;

use crate::params::{Bound, ParamStore};
use crate::Result;

pub fn init_linear(p: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
    p.add_glorot(format!("{name}.w"), fan_in, fan_out, rng);
    p.add(format!("{name}.b"), Tensor::zeros(&[1, fan_out]));
}

/// `x W + b`.
pub fn linear(g: &mut Graph, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let h = g.matmul(x, p.var(&format!("{name}.w")))?;
    Ok(g.add_row(h, p.var(&format!("{name}.b")))?)
}

pub fn init_norm(p: &mut ParamStore, name: &str, dim: usize) {
    p.add(format!("{name}.gamma"), Tensor::full(&[1, dim], 1.0));
    p.add(format!("{name}.beta"), Tensor::zeros(&[1, dim]));
}

pub fn norm(g: &mut Graph, p: &Bound, name: &str, x: Var, eps: f64) -> Result<Var> {
    let n = g.layer_norm(x, eps)?;
    let s = g.mul_row(n, p.var(&format!("{name}.gamma")))?;
    Ok(g.add_row(s, p.var(&format!("{name}.beta")))?)
}

/// Multi-head attention projecting queries from `q_dim` and keys/values from
/// `kv_dim` into `dim`, output back to `dim`. Keys have no bias: it would shift
/// every score of a row equally and never receive a gradient.
pub fn init_attention(p: &mut ParamStore, name: &str, q_dim: usize, kv_dim: usize, dim: usize, rng: &mut impl Rng) {
    init_linear(p, &format!("{name}.q"), q_dim, dim, rng);
    p.add_glorot(format!("{name}.k.w"), kv_dim, dim, rng);
    init_linear(p, &format!("{name}.v"), kv_dim, dim, rng);
    init_linear(p, &format!("{name}.o"), dim, dim, rng);
}

/// Scaled dot-product attention over `heads` column slices. `mask` is added to the
/// `[rows(q), rows(k)]` scores before the softmax.
#[allow(clippy::too_many_arguments)]
pub fn attention(
    g: &mut Graph,
    p: &Bound,
    name: &str,
    q_in: Var,
    k_in: Var,
    v_in: Var,
    heads: usize,
    mask: Option<&Tensor>,
) -> Result<Var> {
    let q = linear(g, p, &format!("{name}.q"), q_in)?;
    let k = g.matmul(k_in, p.var(&format!("{name}.k.w")))?;
    let v = linear(g, p, &format!("{name}.v"), v_in)?;
    let dim = g.shape(q)[1];
    let dh = dim / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dh, (h + 1) * dh)?;
        let kh = g.slice_cols(k, h * dh, (h + 1) * dh)?;
        let vh = g.slice_cols(v, h * dh, (h + 1) * dh)?;
        let kt = g.transpose(kh)?;
        let s = g.matmul(qh, kt)?;
        let s = g.scale(s, scale)?;
        let a = g.softmax(s, mask)?;
        outs.push(g.matmul(a, vh)?);
    }
    let cat = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
    linear(g, p, &format!("{name}.o"), cat)
}

pub fn init_ffn(p: &mut ParamStore, name: &str, dim: usize, hidden: usize, rng: &mut impl Rng) {
    init_linear(p, &format!("{name}.1"), dim, hidden, rng);
    init_linear(p, &format!("{name}.2"), hidden, dim, rng);
}

/// `Lin(relu(Lin x))`.
pub fn ffn(g: &mut Graph, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let h = linear(g, p, &format!("{name}.1"), x)?;
    let h = g.relu(h)?;
    linear(g, p, &format!("{name}.2"), h)
}

pub fn init_encoder_block(p: &mut ParamStore, name: &str, dim: usize, ffn_mult: usize, rng: &mut impl Rng) {
    init_attention(p, &format!("{name}.attn"), dim, dim, dim, rng);
    init_norm(p, &format!("{name}.ln1"), dim);
    init_ffn(p, &format!("{name}.ffn"), dim, dim * ffn_mult, rng);
    init_norm(p, &format!("{name}.ln2"), dim);
}

/// Post-norm self-attention block: `x = LN(x + MHA(x, x, x)); x = LN(x + FFN(x))`.
pub fn encoder_block(g: &mut Graph, p: &Bound, name: &str, x: Var, heads: usize, eps: f64) -> Result<Var> {
    let a = attention(g, p, &format!("{name}.attn"), x, x, x, heads, None)?;
    let r = g.add(x, a)?;
    let x = norm(g, p, &format!("{name}.ln1"), r, eps)?;
    let f = ffn(g, p, &format!("{name}.ffn"), x)?;
    let r = g.add(x, f)?;
    norm(g, p, &format!("{name}.ln2"), r, eps)
}

pub fn init_decoder_block(p: &mut ParamStore, name: &str, dim: usize, mem_dim: usize, ffn_mult: usize, rng: &mut impl Rng) {
    init_attention(p, &format!("{name}.self"), dim, dim, dim, rng);
    init_norm(p, &format!("{name}.ln1"), dim);
    init_attention(p, &format!("{name}.cross"), dim, mem_dim, dim, rng);
    init_norm(p, &format!("{name}.ln2"), dim);
    init_ffn(p, &format!("{name}.ffn"), dim, dim * ffn_mult, rng);
    init_norm(p, &format!("{name}.ln3"), dim);
}

/// Post-norm decoder block: self-attention (optionally masked), cross-attention
/// onto `mem`, FFN. `pos` is added to the attention queries and self-attention keys.
#[allow(clippy::too_many_arguments)]
pub fn decoder_block(
    g: &mut Graph,
    p: &Bound,
    name: &str,
    x: Var,
    mem: Var,
    pos: Option<Var>,
    self_mask: Option<&Tensor>,
    heads: usize,
    eps: f64,
) -> Result<Var> {
    let xp = match pos {
        Some(pe) => g.add(x, pe)?,
        None => x,
    };
    let a = attention(g, p, &format!("{name}.self"), xp, xp, x, heads, self_mask)?;
    let r = g.add(x, a)?;
    let x = norm(g, p, &format!("{name}.ln1"), r, eps)?;
    let xp = match pos {
        Some(pe) => g.add(x, pe)?,
        None => x,
    };
    let c = attention(g, p, &format!("{name}.cross"), xp, mem, mem, heads, None)?;
    let r = g.add(x, c)?;
    let x = norm(g, p, &format!("{name}.ln2"), r, eps)?;
    let f = ffn(g, p, &format!("{name}.ffn"), x)?;
    let r = g.add(x, f)?;
    norm(g, p, &format!("{name}.ln3"), r, eps)
}

/// 1-D sinusoidal table `[n, dim]`.
pub fn sinusoid(n: usize, dim: usize) -> Tensor {
    Tensor::from_fn(&[n, dim], |k| {
        let (pos, i) = ((k / dim) as f64, k % dim);
        let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
        if i % 2 == 0 {
            (pos * freq).sin()
        } else {
            (pos * freq).cos()
        }
    })
}

/// 2-D sinusoidal table for a row-major `gh x gw` grid: the first half of the
/// channels encodes the row, the second half the column.
pub fn sinusoid_2d(gh: usize, gw: usize, dim: usize) -> Tensor {
    let half = dim / 2;
    let rows = sinusoid(gh, half);
    let cols = sinusoid(gw, dim - half);
    Tensor::from_fn(&[gh * gw, dim], |k| {
        let (cell, c) = (k / dim, k % dim);
        let (y, x) = (cell / gw, cell % gw);
        if c < half {
            rows.get2(y, c)
        } else {
            cols.get2(x, c - half)
        }
    })
}

/// Additive causal mask: row `t` may attend to columns `0..=t`.
pub fn causal_mask(n: usize) -> Tensor {
    Tensor::from_fn(&[n, n], |k| if k % n > k / n { f64::NEG_INFINITY } else { 0.0 })
}
