//! Parameterized layers shared by the encoders and the decoder.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::params::{Bound, Init, ParamId, ParameterStore, Partition};
use crate::tensor::{window_token_order, Graph, Real, Var};

pub(crate) const LN_EPS: f64 = 1e-6;
pub(crate) const INIT_STD: f64 = 0.02;

/// Registers layer parameters under a name prefix.
pub(crate) struct Builder<'a, T: Real> {
    pub store: &'a mut ParameterStore<T>,
    pub rng: ChaCha8Rng,
    pub partition: Partition,
    prefix: Vec<String>,
}

impl<'a, T: Real> Builder<'a, T> {
    pub fn new(store: &'a mut ParameterStore<T>, rng: ChaCha8Rng, partition: Partition, root: &str) -> Self {
        Builder {
            store,
            rng,
            partition,
            prefix: vec![root.to_string()],
        }
    }

    pub fn push(&mut self, name: impl Into<String>) {
        self.prefix.push(name.into());
    }

    pub fn pop(&mut self) {
        self.prefix.pop();
    }

    /// Run `f` with `name` appended to the prefix.
    pub fn scope<R>(&mut self, name: impl Into<String>, f: impl FnOnce(&mut Self) -> Result<R>) -> Result<R> {
        self.push(name);
        let out = f(self);
        self.pop();
        out
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        let full = format!("{}.{}", self.prefix.join("."), name);
        let value = init.sample(&mut self.rng, shape);
        self.store.insert(full, self.partition, value)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum WeightInit {
    /// Truncated normal, std 0.02.
    Small,
    /// Truncated normal, std `sqrt(2 / fan_in)`.
    Kaiming,
}

impl WeightInit {
    fn init(self, fan_in: usize) -> Init {
        match self {
            WeightInit::Small => Init::TruncNormal(INIT_STD),
            WeightInit::Kaiming => Init::Kaiming { fan_in },
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn build<T: Real>(
        bld: &mut Builder<'_, T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        init: WeightInit,
    ) -> Result<Self> {
        bld.scope(name, |b| {
            Ok(Conv {
                w: b.param("w", &[c_out, c_in, k, k], init.init(c_in * k * k))?,
                b: b.param("b", &[c_out], Init::Zeros)?,
                stride,
                pad,
            })
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        g.conv2d(x, p.var(self.w), Some(p.var(self.b)), self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct DwConv {
    pub w: ParamId,
    pub b: ParamId,
    pub k: usize,
}

impl DwConv {
    pub fn build<T: Real>(bld: &mut Builder<'_, T>, name: &str, c: usize, k: usize) -> Result<Self> {
        bld.scope(name, |b| {
            Ok(DwConv {
                w: b.param("w", &[c, 1, k, k], Init::TruncNormal(INIT_STD))?,
                b: b.param("b", &[c], Init::Zeros)?,
                k,
            })
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        g.depthwise_conv2d(x, p.var(self.w), Some(p.var(self.b)), self.k / 2)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn build<T: Real>(bld: &mut Builder<'_, T>, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        bld.scope(name, |b| {
            Ok(Linear {
                w: b.param("w", &[d_out, d_in], Init::TruncNormal(INIT_STD))?,
                b: b.param("b", &[d_out], Init::Zeros)?,
            })
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        g.linear(x, p.var(self.w), Some(p.var(self.b)))
    }
}

#[derive(Clone, Debug)]
pub(crate) struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn build<T: Real>(bld: &mut Builder<'_, T>, name: &str, d: usize) -> Result<Self> {
        bld.scope(name, |b| {
            Ok(LayerNorm {
                gamma: b.param("gamma", &[d], Init::Ones)?,
                beta: b.param("beta", &[d], Init::Zeros)?,
            })
        })
    }

    /// Normalize over the trailing dim of a token matrix.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        g.layernorm(x, p.var(self.gamma), p.var(self.beta), LN_EPS)
    }

    /// Normalize over channels of a `[C, H, W]` map.
    pub fn forward_chw<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let (c, h, w) = g.value(x).chw()?;
        let t = chw_to_tokens(g, x)?;
        let t = self.forward(g, p, t)?;
        tokens_to_chw(g, t, c, h, w)
    }
}

/// `[C, H, W]` → `[H·W, C]`.
pub(crate) fn chw_to_tokens<T: Real>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let (c, h, w) = g.value(x).chw()?;
    let m = g.reshape(x, &[c, h * w])?;
    g.transpose(m)
}

/// `[H·W, C]` → `[C, H, W]`.
pub(crate) fn tokens_to_chw<T: Real>(g: &mut Graph<T>, t: Var, c: usize, h: usize, w: usize) -> Result<Var> {
    let m = g.transpose(t)?;
    g.reshape(m, &[c, h, w])
}

/// Depthwise 7×7, channel norm, pointwise expand by `expansion`, GELU,
/// pointwise contract, residual add.
#[derive(Clone, Debug)]
pub(crate) struct ConvNextBlock {
    dw: DwConv,
    norm: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

impl ConvNextBlock {
    pub const KERNEL: usize = 7;

    pub fn build<T: Real>(bld: &mut Builder<'_, T>, name: &str, c: usize, expansion: usize) -> Result<Self> {
        bld.scope(name, |b| {
            Ok(ConvNextBlock {
                dw: DwConv::build(b, "dw", c, Self::KERNEL)?,
                norm: LayerNorm::build(b, "norm", c)?,
                fc1: Linear::build(b, "fc1", c, expansion * c)?,
                fc2: Linear::build(b, "fc2", expansion * c, c)?,
            })
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let (c, h, w) = g.value(x).chw()?;
        let y = self.dw.forward(g, p, x)?;
        let t = chw_to_tokens(g, y)?;
        let t = self.norm.forward(g, p, t)?;
        let t = self.fc1.forward(g, p, t)?;
        let t = g.gelu(t);
        let t = self.fc2.forward(g, p, t)?;
        let y = tokens_to_chw(g, t, c, h, w)?;
        g.add(x, y)
    }
}

/// Multi-head self-attention over a token matrix `[N, D]`.
#[derive(Clone, Debug)]
pub(crate) struct SelfAttention {
    qkv: Linear,
    proj: Linear,
    heads: usize,
    dim: usize,
}

impl SelfAttention {
    pub fn build<T: Real>(bld: &mut Builder<'_, T>, name: &str, dim: usize, heads: usize) -> Result<Self> {
        bld.scope(name, |b| {
            Ok(SelfAttention {
                qkv: Linear::build(b, "qkv", dim, 3 * dim)?,
                proj: Linear::build(b, "proj", dim, dim)?,
                heads,
                dim,
            })
        })
    }

    /// Attention within consecutive groups of `group` rows (the whole matrix
    /// when `group` equals the row count). Returns the projected output.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var, group: usize) -> Result<Var> {
        let n = g.shape(x)[0];
        let qkv = self.qkv.forward(g, p, x)?;
        let hd = self.dim / self.heads;
        let mut outs = Vec::with_capacity(n / group);
        for start in (0..n).step_by(group) {
            let rows = if group == n { qkv } else { g.slice0(qkv, start, group)? };
            let mut heads = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let q = g.slice_cols(rows, h * hd, hd)?;
                let k = g.slice_cols(rows, self.dim + h * hd, hd)?;
                let v = g.slice_cols(rows, 2 * self.dim + h * hd, hd)?;
                heads.push(g.attention(q, k, v)?);
            }
            let o = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };
            outs.push(o);
        }
        let o = if outs.len() == 1 { outs[0] } else { g.concat0(&outs)? };
        self.proj.forward(g, p, o)
    }
}

/// Pre-norm transformer block: `x + attn(norm(x))`, then `x + mlp(norm(x))`.
/// Attention is global, or restricted to (optionally shifted) windows of a
/// `[H, W]` token grid.
#[derive(Clone, Debug)]
pub(crate) struct AttentionBlock {
    norm1: LayerNorm,
    attn: SelfAttention,
    norm2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
    pub window: Option<usize>,
    pub shifted: bool,
}

pub(crate) const MLP_RATIO: usize = 4;
pub(crate) const HEAD_DIM: usize = 16;

pub(crate) fn heads_for(dim: usize) -> usize {
    (dim / HEAD_DIM).max(1)
}

impl AttentionBlock {
    pub fn build<T: Real>(
        bld: &mut Builder<'_, T>,
        name: &str,
        dim: usize,
        window: Option<usize>,
        shifted: bool,
    ) -> Result<Self> {
        bld.scope(name, |b| {
            Ok(AttentionBlock {
                norm1: LayerNorm::build(b, "norm1", dim)?,
                attn: SelfAttention::build(b, "attn", dim, heads_for(dim))?,
                norm2: LayerNorm::build(b, "norm2", dim)?,
                fc1: Linear::build(b, "fc1", dim, MLP_RATIO * dim)?,
                fc2: Linear::build(b, "fc2", MLP_RATIO * dim, dim)?,
                window,
                shifted,
            })
        })
    }

    /// `x` is `[H·W, D]` over an `h × w` grid.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var, h: usize, w: usize) -> Result<Var> {
        let d = g.shape(x)[1];
        let y = self.norm1.forward(g, p, x)?;
        let y = match self.window {
            None => self.attn.forward(g, p, y, h * w)?,
            Some(win) => {
                let (wh, ww) = (win.min(h), win.min(w));
                let shift = if self.shifted && (wh < h || ww < w) {
                    (if wh < h { wh / 2 } else { 0 }, if ww < w { ww / 2 } else { 0 })
                } else {
                    (0, 0)
                };
                let order = window_token_order(h, w, wh, ww, shift)?;
                let (fwd, inv) = row_permutation(&order, d);
                let yw = g.gather(y, fwd, &[h * w, d])?;
                let yw = self.attn.forward(g, p, yw, wh * ww)?;
                g.gather(yw, inv, &[h * w, d])?
            }
        };
        let x = g.add(x, y)?;
        let y = self.norm2.forward(g, p, x)?;
        let y = self.fc1.forward(g, p, y)?;
        let y = g.gelu(y);
        let y = self.fc2.forward(g, p, y)?;
        g.add(x, y)
    }
}

/// Element gather indices that reorder the rows of an `[N, d]` matrix by
/// `order`, and the inverse reordering.
fn row_permutation(order: &[usize], d: usize) -> (Arc<[usize]>, Arc<[usize]>) {
    let n = order.len();
    let mut fwd = Vec::with_capacity(n * d);
    let mut inv_rows = vec![0; n];
    for (r, &src) in order.iter().enumerate() {
        inv_rows[src] = r;
        fwd.extend((0..d).map(|c| src * d + c));
    }
    let inv: Vec<usize> = inv_rows.iter().flat_map(|&r| (0..d).map(move |c| r * d + c)).collect();
    (fwd.into(), inv.into())
}

/// Fixed 2-D sine-cosine position code for an `h × w` grid, `[h·w, dim]`.
pub(crate) fn sincos_position<T: Real>(h: usize, w: usize, dim: usize) -> crate::tensor::Tensor<T> {
    let quarter = (dim / 4).max(1);
    crate::tensor::Tensor::from_fn([h * w, dim], |i| {
        let (pos, c) = (i / dim, i % dim);
        let (r, col) = ((pos / w) as f64, (pos % w) as f64);
        let band = c % (2 * quarter);
        let coord = if c < 2 * quarter { r } else { col };
        let freq = 1.0 / 10_000f64.powf((band % quarter) as f64 / quarter as f64);
        let v = if band < quarter { (coord * freq).sin() } else { (coord * freq).cos() };
        T::from_f64_lossy(if c >= 4 * quarter { 0.0 } else { v })
    })
}
