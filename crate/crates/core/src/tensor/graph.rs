//! Tape-based reverse-mode autodiff.
//!
//! A [`Graph`] records every op in creation order, which is already a
//! topological order: an op can only consume nodes that exist. `backward`
//! walks the tape in reverse and accumulates gradients into every node that
//! depends on a `requires_grad` leaf. Leaves created with
//! `requires_grad = false` (constants, frozen parameters) never receive one.

use std::sync::Arc;

use super::kernels::{self, ConvGeom};
use super::{gemm, Real, Tensor};
use crate::error::{shape_err, Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Square(Var),
    Abs(Var),
    Gelu(Var),
    Sum(Var),
    Mean(Var),
    L1(Var, Var),
    L2(Var, Var),
    Reshape(Var),
    Transpose(Var),
    Matmul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    Depthwise {
        x: Var,
        w: Var,
        b: Option<Var>,
        k: usize,
        pad: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    SoftmaxRows(Var),
    Upsample2x(Var),
    ConvTranspose2x {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Gather {
        x: Var,
        index: Arc<[usize]>,
    },
    Concat0(Vec<Var>),
    Slice0 {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation plus, after [`Graph::backward`], leaf gradients.
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to a leaf.
    /// `None` for frozen leaves, constants, and leaves the loss did not reach.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let node = &self.nodes[v.0];
        if !matches!(node.op, Op::Leaf) || !node.requires_grad {
            return None;
        }
        self.grads.get(v.0)?.as_ref().map(|g| Tensor {
            shape: node.value.shape.clone(),
            data: g.clone(),
        })
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn data(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value.data
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err!(
                "{what}: operand shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            ));
        }
        Ok(())
    }

    fn matrix(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        match self.shape(v) {
            &[r, c] => Ok((r, c)),
            s => Err(shape_err!("{what}: expected a 2-D tensor, got {:?}", s)),
        }
    }

    fn elementwise(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor {
            shape: self.shape(a).to_vec(),
            data,
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let c = T::from_f64_lossy(c);
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let c = T::from_f64_lossy(c);
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.abs(), Op::Abs(a))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, kernels::gelu, Op::Gelu(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().copied().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = T::from_usize(self.value(a).numel()).unwrap();
        let s = self.data(a).iter().copied().sum::<T>() / n;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Mean absolute difference. The subgradient at zero difference is zero.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape(pred, target, "l1_loss")?;
        let n = T::from_usize(self.value(pred).numel()).unwrap();
        let s = self
            .data(pred)
            .iter()
            .zip(self.data(target))
            .map(|(&a, &b)| (a - b).abs())
            .sum::<T>()
            / n;
        let rg = self.rg(&[pred, target]);
        Ok(self.push(Tensor::scalar(s), Op::L1(pred, target), rg))
    }

    /// Mean squared difference.
    pub fn l2_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape(pred, target, "l2_loss")?;
        let n = T::from_usize(self.value(pred).numel()).unwrap();
        let s = self
            .data(pred)
            .iter()
            .zip(self.data(target))
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<T>()
            / n;
        let rg = self.rg(&[pred, target]);
        Ok(self.push(Tensor::scalar(s), Op::L2(pred, target), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape.to_vec())?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.matrix(a, "transpose")?;
        let src = self.data(a);
        let mut data = vec![T::zero(); r * c];
        transpose_into(src, r, c, &mut data);
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor { shape: vec![c, r], data }, Op::Transpose(a), rg))
    }

    /// `op(a) · op(b)` for 2-D operands, where `op` transposes when the flag is set.
    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (ar, ac) = self.matrix(a, "matmul")?;
        let (br, bc) = self.matrix(b, "matmul")?;
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(shape_err!(
                "matmul: inner dims differ ({:?}{} x {:?}{})",
                self.shape(a),
                if ta { "ᵀ" } else { "" },
                self.shape(b),
                if tb { "ᵀ" } else { "" }
            ));
        }
        let mut data = vec![T::zero(); m * n];
        gemm(m, k, n, self.data(a), ta, self.data(b), tb, &mut data, T::zero());
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor { shape: vec![m, n], data }, Op::Matmul { a, b, ta, tb }, rg))
    }

    /// Affine map over the trailing dimension: `x · wᵀ + b` with `w: [D_out, D_in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (d_out, d_in) = self.matrix(w, "linear weight")?;
        let Some(&last) = xs.last() else {
            return Err(shape_err!("linear: scalar input"));
        };
        if last != d_in {
            return Err(shape_err!(
                "linear: input trailing dim {last} does not match weight D_in {d_in}"
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [d_out] {
                return Err(shape_err!("linear: bias shape {:?}, expected [{d_out}]", self.shape(b)));
            }
        }
        let rows = xs.iter().product::<usize>() / d_in;
        let mut data = vec![T::zero(); rows * d_out];
        if let Some(b) = b {
            let bias = self.data(b);
            for row in data.chunks_mut(d_out) {
                row.copy_from_slice(bias);
            }
        }
        gemm(rows, d_in, d_out, self.data(x), false, self.data(w), true, &mut data, T::one());
        let mut shape = xs;
        *shape.last_mut().unwrap() = d_out;
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        Ok(self.push(Tensor { shape, data }, Op::Linear { x, w, b }, rg))
    }

    /// Cross-correlation of `[C_in, H, W]` with `[C_out, C_in, kH, kW]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let (c_in, h, wd) = self.value(x).chw()?;
        let (c_out, wc_in, kh, kw) = match self.shape(w) {
            &[a, b, c, d] => (a, b, c, d),
            s => return Err(shape_err!("conv2d: kernel must be [C_out, C_in, kH, kW], got {:?}", s)),
        };
        if wc_in != c_in {
            return Err(shape_err!(
                "conv2d: kernel expects {wc_in} input channels but input has {c_in} (input {:?}, kernel {:?})",
                self.shape(x),
                self.shape(w)
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return Err(shape_err!("conv2d: bias shape {:?}, expected [{c_out}]", self.shape(b)));
            }
        }
        let geom = ConvGeom::new(c_in, h, wd, kh, kw, stride, padding).ok_or_else(|| {
            shape_err!(
                "conv2d: kernel {kh}x{kw} with stride {stride} does not fit padded input {}x{}",
                h + 2 * padding,
                wd + 2 * padding
            )
        })?;
        let bias = b.map(|b| self.data(b));
        let (data, cols) = kernels::conv2d_forward(self.data(x), self.data(w), bias, c_out, &geom);
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        // Columns are only needed to form the kernel gradient.
        let cols = if self.requires_grad(w) { cols } else { Vec::new() };
        let value = Tensor {
            shape: vec![c_out, geom.ho, geom.wo],
            data,
        };
        Ok(self.push(value, Op::Conv2d { x, w, b, geom, cols }, rg))
    }

    /// Per-channel `k×k` convolution, stride 1, `[C, H, W]` input, `[C, 1, k, k]` kernel.
    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, b: Option<Var>, padding: usize) -> Result<Var> {
        let (c, h, wd) = self.value(x).chw()?;
        let k = match self.shape(w) {
            &[wc, 1, k1, k2] if wc == c && k1 == k2 => k1,
            s => {
                return Err(shape_err!(
                    "depthwise_conv2d: kernel must be [{c}, 1, k, k], got {:?}",
                    s
                ))
            }
        };
        if k > h + 2 * padding || k > wd + 2 * padding {
            return Err(shape_err!("depthwise_conv2d: kernel {k} exceeds padded input {h}x{wd}"));
        }
        let bias = b.map(|b| self.data(b));
        let data = kernels::depthwise_forward(self.data(x), self.data(w), bias, c, h, wd, k, padding);
        let (ho, wo) = (h + 2 * padding - k + 1, wd + 2 * padding - k + 1);
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        Ok(self.push(
            Tensor {
                shape: vec![c, ho, wo],
                data,
            },
            Op::Depthwise { x, w, b, k, pad: padding },
            rg,
        ))
    }

    /// Normalize each trailing-dim vector to zero mean and unit variance,
    /// then scale by `gamma` and shift by `beta`.
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let Some(&d) = self.shape(x).last() else {
            return Err(shape_err!("layernorm: scalar input"));
        };
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(shape_err!(
                "layernorm: gamma/beta must be [{d}], got {:?}/{:?}",
                self.shape(gamma),
                self.shape(beta)
            ));
        }
        let eps = T::from_f64_lossy(eps);
        let dn = T::from_usize(d).unwrap();
        let src = self.data(x);
        let (g, bta) = (self.data(gamma), self.data(beta));
        let rows = src.len() / d;
        let mut xhat = vec![T::zero(); src.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut data = vec![T::zero(); src.len()];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for i in 0..d {
                let xh = (row[i] - mean) * rs;
                xhat[r * d + i] = xh;
                data[r * d + i] = xh * g[i] + bta[i];
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        let value = Tensor {
            shape: self.shape(x).to_vec(),
            data,
        };
        Ok(self.push(value, Op::LayerNorm { x, gamma, beta, xhat, rstd }, rg))
    }

    /// Row-wise softmax of a 2-D tensor.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.matrix(a, "softmax_rows")?;
        let src = self.data(a);
        let mut data = vec![T::zero(); r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let out = &mut data[i * c..(i + 1) * c];
            let mut z = T::zero();
            for (o, &v) in out.iter_mut().zip(row) {
                *o = (v - mx).exp();
                z += *o;
            }
            out.iter_mut().for_each(|o| *o /= z);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor { shape: vec![r, c], data }, Op::SoftmaxRows(a), rg))
    }

    /// `softmax(q·kᵀ/√D)·v` for `[N, D]` operands.
    pub fn attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var> {
        let (nq, d) = self.matrix(q, "attention q")?;
        let (nk, dk) = self.matrix(k, "attention k")?;
        let (nv, dv) = self.matrix(v, "attention v")?;
        if dk != d || nk != nv {
            return Err(shape_err!(
                "attention: q [{nq}, {d}], k [{nk}, {dk}], v [{nv}, {dv}] are incompatible"
            ));
        }
        let logits = self.matmul(q, k, false, true)?;
        let logits = self.scale(logits, 1.0 / (d as f64).sqrt());
        let weights = self.softmax_rows(logits)?;
        self.matmul(weights, v, false, false)
    }

    /// Bilinear 2× upsampling of `[C, H, W]` with half-pixel sample centers.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        let data = kernels::upsample_forward(self.data(x), c, h, w);
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor {
                shape: vec![c, 2 * h, 2 * w],
                data,
            },
            Op::Upsample2x(x),
            rg,
        ))
    }

    /// Stride-2, 2×2 transposed convolution; kernel `[C_in, C_out, 2, 2]`.
    pub fn conv_transpose2x(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (c_in, h, wd) = self.value(x).chw()?;
        let c_out = match self.shape(w) {
            &[ci, co, 2, 2] if ci == c_in => co,
            s => {
                return Err(shape_err!(
                    "conv_transpose2x: kernel must be [{c_in}, C_out, 2, 2], got {:?}",
                    s
                ))
            }
        };
        let n = h * wd;
        let mut z = vec![T::zero(); c_out * 4 * n];
        gemm(c_out * 4, c_in, n, self.data(w), true, self.data(x), false, &mut z, T::zero());
        let (h2, w2) = (2 * h, 2 * wd);
        let mut data = vec![T::zero(); c_out * h2 * w2];
        for co in 0..c_out {
            let bias = b.map_or(T::zero(), |b| self.data(b)[co]);
            for a in 0..2 {
                for bb in 0..2 {
                    let zrow = &z[((co * 2 + a) * 2 + bb) * n..][..n];
                    for i in 0..h {
                        for j in 0..wd {
                            data[(co * h2 + 2 * i + a) * w2 + 2 * j + bb] = zrow[i * wd + j] + bias;
                        }
                    }
                }
            }
        }
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        Ok(self.push(
            Tensor {
                shape: vec![c_out, h2, w2],
                data,
            },
            Op::ConvTranspose2x { x, w, b },
            rg,
        ))
    }

    /// `out[i] = x.flat[index[i]]`, reshaped to `shape`.
    pub fn gather(&mut self, x: Var, index: Arc<[usize]>, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != index.len() {
            return Err(shape_err!("gather: {} indices for shape {:?}", index.len(), shape));
        }
        let src = self.data(x);
        if let Some(&bad) = index.iter().find(|&&i| i >= src.len()) {
            return Err(shape_err!("gather: index {bad} out of range for {} values", src.len()));
        }
        let data = index.iter().map(|&i| src[i]).collect();
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor {
                shape: shape.to_vec(),
                data,
            },
            Op::Gather { x, index },
            rg,
        ))
    }

    /// Concatenate along the first axis; trailing dims must agree.
    pub fn concat0(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(shape_err!("concat0: no inputs"));
        };
        let tail = self.shape(first).get(1..).unwrap_or(&[]).to_vec();
        let mut lead = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[1..] != tail[..] {
                return Err(shape_err!(
                    "concat0: trailing dims {:?} do not match {:?}",
                    s.get(1..),
                    tail
                ));
            }
            lead += s[0];
        }
        let mut data = Vec::with_capacity(lead * tail.iter().product::<usize>());
        for &p in parts {
            data.extend_from_slice(self.data(p));
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let rg = self.rg(parts);
        Ok(self.push(Tensor { shape, data }, Op::Concat0(parts.to_vec()), rg))
    }

    /// `x[start..start+len]` along the first axis.
    pub fn slice0(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.is_empty() || start + len > s[0] {
            return Err(shape_err!("slice0: [{start}, {}) out of range for {:?}", start + len, s));
        }
        let inner: usize = s[1..].iter().product();
        let data = self.data(x)[start * inner..(start + len) * inner].to_vec();
        let mut shape = s;
        shape[0] = len;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor { shape, data }, Op::Slice0 { x, start }, rg))
    }

    /// Concatenate 2-D tensors along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(shape_err!("concat_cols: no inputs"));
        };
        let (rows, _) = self.matrix(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.matrix(p, "concat_cols")?;
            if r != rows {
                return Err(shape_err!("concat_cols: row counts {r} and {rows} differ"));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![T::zero(); rows * total];
        let mut off = 0;
        for (&p, &wdt) in parts.iter().zip(&widths) {
            let src = self.data(p);
            for r in 0..rows {
                data[r * total + off..r * total + off + wdt].copy_from_slice(&src[r * wdt..(r + 1) * wdt]);
            }
            off += wdt;
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor {
                shape: vec![rows, total],
                data,
            },
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    /// Columns `[start, start+len)` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.matrix(x, "slice_cols")?;
        if start + len > cols {
            return Err(shape_err!("slice_cols: [{start}, {}) out of range for {cols} columns", start + len));
        }
        let src = self.data(x);
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor {
                shape: vec![rows, len],
                data,
            },
            Op::SliceCols { x, start },
            rg,
        ))
    }

    /// Populate gradients of `loss` with respect to every `requires_grad` leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Shape(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            backward_node(&self.nodes, node, &g, &mut grads);
        }
        // Only leaf gradients are kept.
        for (slot, node) in grads.iter_mut().zip(&self.nodes) {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                *slot = None;
            }
        }
        self.grads = grads;
        Ok(())
    }
}

fn transpose_into<T: Copy>(src: &[T], r: usize, c: usize, dst: &mut [T]) {
    const B: usize = 32;
    for i0 in (0..r).step_by(B) {
        for j0 in (0..c).step_by(B) {
            for i in i0..(i0 + B).min(r) {
                for j in j0..(j0 + B).min(c) {
                    dst[j * r + i] = src[i * c + j];
                }
            }
        }
    }
}

/// Gradient buffer for `v`, or `None` when `v` does not need one.
fn slot<'a, T: Real>(nodes: &[Node<T>], grads: &'a mut [Option<Vec<T>>], v: Var) -> Option<&'a mut Vec<T>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); node.value.numel()]))
}

fn acc_map<T: Real>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], v: Var, f: impl Fn(usize) -> T) {
    if let Some(buf) = slot(nodes, grads, v) {
        for (i, d) in buf.iter_mut().enumerate() {
            *d += f(i);
        }
    }
}

fn backward_node<T: Real>(nodes: &[Node<T>], node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let val = |v: Var| &nodes[v.0].value.data[..];
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            acc_map(nodes, grads, *a, |i| g[i]);
            acc_map(nodes, grads, *b, |i| g[i]);
        }
        Op::Sub(a, b) => {
            acc_map(nodes, grads, *a, |i| g[i]);
            acc_map(nodes, grads, *b, |i| -g[i]);
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            acc_map(nodes, grads, *a, |i| g[i] * bv[i]);
            acc_map(nodes, grads, *b, |i| g[i] * av[i]);
        }
        Op::Div(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            acc_map(nodes, grads, *a, |i| g[i] / bv[i]);
            acc_map(nodes, grads, *b, |i| -g[i] * av[i] / (bv[i] * bv[i]));
        }
        Op::Scale(a, c) => acc_map(nodes, grads, *a, |i| g[i] * *c),
        Op::AddScalar(a) | Op::Reshape(a) => acc_map(nodes, grads, *a, |i| g[i]),
        Op::Square(a) => {
            let av = val(*a);
            let two = T::from_f64_lossy(2.0);
            acc_map(nodes, grads, *a, |i| two * av[i] * g[i]);
        }
        Op::Abs(a) => {
            let av = val(*a);
            acc_map(nodes, grads, *a, |i| sign(av[i]) * g[i]);
        }
        Op::Gelu(a) => {
            let av = val(*a);
            acc_map(nodes, grads, *a, |i| kernels::gelu_grad(av[i]) * g[i]);
        }
        Op::Sum(a) => acc_map(nodes, grads, *a, |_| g[0]),
        Op::Mean(a) => {
            let n = T::from_usize(nodes[a.0].value.numel()).unwrap();
            acc_map(nodes, grads, *a, |_| g[0] / n);
        }
        Op::L1(p, t) => {
            let (pv, tv) = (val(*p), val(*t));
            let s = g[0] / T::from_usize(pv.len()).unwrap();
            acc_map(nodes, grads, *p, |i| sign(pv[i] - tv[i]) * s);
            acc_map(nodes, grads, *t, |i| -sign(pv[i] - tv[i]) * s);
        }
        Op::L2(p, t) => {
            let (pv, tv) = (val(*p), val(*t));
            let s = T::from_f64_lossy(2.0) * g[0] / T::from_usize(pv.len()).unwrap();
            acc_map(nodes, grads, *p, |i| (pv[i] - tv[i]) * s);
            acc_map(nodes, grads, *t, |i| -(pv[i] - tv[i]) * s);
        }
        Op::Transpose(a) => {
            let (r, c) = (nodes[a.0].value.shape[0], nodes[a.0].value.shape[1]);
            if let Some(buf) = slot(nodes, grads, *a) {
                // g is [c, r]
                let mut t = vec![T::zero(); r * c];
                transpose_into(g, c, r, &mut t);
                buf.iter_mut().zip(t).for_each(|(d, v)| *d += v);
            }
        }
        Op::Matmul { a, b, ta, tb } => {
            let (ta, tb) = (*ta, *tb);
            let ash = &nodes[a.0].value.shape;
            let (m, k) = if ta { (ash[1], ash[0]) } else { (ash[0], ash[1]) };
            let n = node.value.shape[1];
            let (av, bv) = (val(*a), val(*b));
            if let Some(buf) = slot(nodes, grads, *a) {
                if ta {
                    gemm(k, n, m, bv, tb, g, true, buf, T::one());
                } else {
                    gemm(m, n, k, g, false, bv, !tb, buf, T::one());
                }
            }
            if let Some(buf) = slot(nodes, grads, *b) {
                if tb {
                    gemm(n, m, k, g, true, av, ta, buf, T::one());
                } else {
                    gemm(k, m, n, av, !ta, g, false, buf, T::one());
                }
            }
        }
        Op::Linear { x, w, b } => {
            let (d_out, d_in) = (nodes[w.0].value.shape[0], nodes[w.0].value.shape[1]);
            let rows = g.len() / d_out;
            if let Some(buf) = slot(nodes, grads, *x) {
                gemm(rows, d_out, d_in, g, false, val(*w), false, buf, T::one());
            }
            if let Some(buf) = slot(nodes, grads, *w) {
                gemm(d_out, rows, d_in, g, true, val(*x), false, buf, T::one());
            }
            if let Some(b) = b {
                if let Some(buf) = slot(nodes, grads, *b) {
                    for row in g.chunks(d_out) {
                        buf.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                    }
                }
            }
        }
        Op::Conv2d { x, w, b, geom, cols } => {
            let c_out = node.value.shape[0];
            let n = geom.out_len();
            let kk = geom.patch_len();
            if let Some(buf) = slot(nodes, grads, *w) {
                let src = if geom.is_pointwise() { val(*x) } else { &cols[..] };
                gemm(c_out, n, kk, g, false, src, true, buf, T::one());
            }
            if let Some(b) = b {
                if let Some(buf) = slot(nodes, grads, *b) {
                    for (d, row) in buf.iter_mut().zip(g.chunks(n)) {
                        *d += row.iter().copied().sum::<T>();
                    }
                }
            }
            if let Some(buf) = slot(nodes, grads, *x) {
                if geom.is_pointwise() {
                    gemm(kk, c_out, n, val(*w), true, g, false, buf, T::one());
                } else {
                    let mut dcols = vec![T::zero(); kk * n];
                    gemm(kk, c_out, n, val(*w), true, g, false, &mut dcols, T::zero());
                    kernels::col2im_add(&dcols, geom, buf);
                }
            }
        }
        Op::Depthwise { x, w, b, k, pad } => {
            let xs = &nodes[x.0].value.shape;
            let (c, h, wd) = (xs[0], xs[1], xs[2]);
            // Disjoint slots: take each buffer out, run the kernel, put it back.
            let mut dx = slot(nodes, grads, *x).map(std::mem::take);
            let mut dw = slot(nodes, grads, *w).map(std::mem::take);
            let mut db = b.and_then(|b| slot(nodes, grads, b)).map(std::mem::take);
            kernels::depthwise_backward(
                val(*x),
                val(*w),
                g,
                c,
                h,
                wd,
                *k,
                *pad,
                dx.as_deref_mut(),
                dw.as_deref_mut(),
                db.as_deref_mut(),
            );
            if let Some(dx) = dx {
                grads[x.0] = Some(dx);
            }
            if let Some(dw) = dw {
                grads[w.0] = Some(dw);
            }
            if let (Some(db), Some(b)) = (db, b) {
                grads[b.0] = Some(db);
            }
        }
        Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
            let d = nodes[gamma.0].value.numel();
            let gm = val(*gamma);
            if let Some(buf) = slot(nodes, grads, *gamma) {
                for (gr, xr) in g.chunks(d).zip(xhat.chunks(d)) {
                    for i in 0..d {
                        buf[i] += gr[i] * xr[i];
                    }
                }
            }
            if let Some(buf) = slot(nodes, grads, *beta) {
                for gr in g.chunks(d) {
                    buf.iter_mut().zip(gr).for_each(|(b, &v)| *b += v);
                }
            }
            if let Some(buf) = slot(nodes, grads, *x) {
                let dn = T::from_usize(d).unwrap();
                let mut dxh = vec![T::zero(); d];
                for (r, (gr, xr)) in g.chunks(d).zip(xhat.chunks(d)).enumerate() {
                    let mut m1 = T::zero();
                    let mut m2 = T::zero();
                    for i in 0..d {
                        dxh[i] = gr[i] * gm[i];
                        m1 += dxh[i];
                        m2 += dxh[i] * xr[i];
                    }
                    m1 /= dn;
                    m2 /= dn;
                    let out = &mut buf[r * d..(r + 1) * d];
                    for i in 0..d {
                        out[i] += rstd[r] * (dxh[i] - m1 - xr[i] * m2);
                    }
                }
            }
        }
        Op::SoftmaxRows(a) => {
            let c = node.value.shape[1];
            let y = &node.value.data;
            if let Some(buf) = slot(nodes, grads, *a) {
                for ((gr, yr), out) in g.chunks(c).zip(y.chunks(c)).zip(buf.chunks_mut(c)) {
                    let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for i in 0..c {
                        out[i] += yr[i] * (gr[i] - dot);
                    }
                }
            }
        }
        Op::Upsample2x(a) => {
            let s = &nodes[a.0].value.shape;
            let (c, h, w) = (s[0], s[1], s[2]);
            if let Some(buf) = slot(nodes, grads, *a) {
                kernels::upsample_backward(g, c, h, w, buf);
            }
        }
        Op::ConvTranspose2x { x, w, b } => {
            let xs = &nodes[x.0].value.shape;
            let (c_in, h, wd) = (xs[0], xs[1], xs[2]);
            let c_out = node.value.shape[0];
            let n = h * wd;
            let (h2, w2) = (2 * h, 2 * wd);
            let mut gz = vec![T::zero(); c_out * 4 * n];
            for co in 0..c_out {
                for a in 0..2 {
                    for bb in 0..2 {
                        let zrow = &mut gz[((co * 2 + a) * 2 + bb) * n..][..n];
                        for i in 0..h {
                            for j in 0..wd {
                                zrow[i * wd + j] = g[(co * h2 + 2 * i + a) * w2 + 2 * j + bb];
                            }
                        }
                    }
                }
            }
            if let Some(buf) = slot(nodes, grads, *x) {
                gemm(c_in, c_out * 4, n, val(*w), false, &gz, false, buf, T::one());
            }
            if let Some(buf) = slot(nodes, grads, *w) {
                gemm(c_in, n, c_out * 4, val(*x), false, &gz, true, buf, T::one());
            }
            if let Some(b) = b {
                if let Some(buf) = slot(nodes, grads, *b) {
                    for (co, d) in buf.iter_mut().enumerate() {
                        *d += g[co * h2 * w2..(co + 1) * h2 * w2].iter().copied().sum::<T>();
                    }
                }
            }
        }
        Op::Gather { x, index } => {
            if let Some(buf) = slot(nodes, grads, *x) {
                for (&i, &v) in index.iter().zip(g) {
                    buf[i] += v;
                }
            }
        }
        Op::Concat0(parts) => {
            let mut off = 0;
            for &p in parts {
                let len = nodes[p.0].value.numel();
                if let Some(buf) = slot(nodes, grads, p) {
                    buf.iter_mut().zip(&g[off..off + len]).for_each(|(d, &v)| *d += v);
                }
                off += len;
            }
        }
        Op::Slice0 { x, start } => {
            let inner: usize = nodes[x.0].value.shape[1..].iter().product();
            if let Some(buf) = slot(nodes, grads, *x) {
                let dst = &mut buf[start * inner..start * inner + g.len()];
                dst.iter_mut().zip(g).for_each(|(d, &v)| *d += v);
            }
        }
        Op::ConcatCols(parts) => {
            let total = node.value.shape[1];
            let mut off = 0;
            for &p in parts {
                let (rows, wdt) = (nodes[p.0].value.shape[0], nodes[p.0].value.shape[1]);
                if let Some(buf) = slot(nodes, grads, p) {
                    for r in 0..rows {
                        for c in 0..wdt {
                            buf[r * wdt + c] += g[r * total + off + c];
                        }
                    }
                }
                off += wdt;
            }
        }
        Op::SliceCols { x, start } => {
            let cols = nodes[x.0].value.shape[1];
            let len = node.value.shape[1];
            if let Some(buf) = slot(nodes, grads, *x) {
                for (r, gr) in g.chunks(len).enumerate() {
                    for c in 0..len {
                        buf[r * cols + start + c] += gr[c];
                    }
                }
            }
        }
    }
}

/// Sign with `sign(0) = 0`, the ℓ1 subgradient convention.
#[inline]
fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}
