//! Slice-level forward/backward kernels used by the graph ops.

use super::{gemm, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(
        c_in: usize,
        h: usize,
        w: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    ) -> Option<Self> {
        if stride == 0 || kh == 0 || kw == 0 || kh > h + 2 * pad || kw > w + 2 * pad {
            return None;
        }
        Some(ConvGeom {
            c_in,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (w + 2 * pad - kw) / stride + 1,
        })
    }

    pub fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    pub fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    pub fn out_len(&self) -> usize {
        self.ho * self.wo
    }

    /// Input column for output column `o` and kernel column `j`, if not padding.
    #[inline]
    fn src_col(&self, o: usize, j: usize) -> Option<usize> {
        (o * self.stride + j).checked_sub(self.pad).filter(|&x| x < self.w)
    }

    #[inline]
    fn src_row(&self, o: usize, i: usize) -> Option<usize> {
        (o * self.stride + i).checked_sub(self.pad).filter(|&x| x < self.h)
    }
}

/// Unfold `[C, H, W]` into `[C·kh·kw, Ho·Wo]`.
pub(crate) fn im2col<T: Real>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let n = g.out_len();
    let mut cols = vec![T::zero(); g.patch_len() * n];
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = ((c * g.kh + i) * g.kw + j) * n;
                for oh in 0..g.ho {
                    let Some(ih) = g.src_row(oh, i) else { continue };
                    let dst = &mut cols[row + oh * g.wo..row + (oh + 1) * g.wo];
                    let src = &plane[ih * g.w..(ih + 1) * g.w];
                    for (ow, d) in dst.iter_mut().enumerate() {
                        if let Some(iw) = g.src_col(ow, j) {
                            *d = src[iw];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add `[C·kh·kw, Ho·Wo]` columns back onto `[C, H, W]`.
pub(crate) fn col2im_add<T: Real>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let n = g.out_len();
    for c in 0..g.c_in {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = ((c * g.kh + i) * g.kw + j) * n;
                for oh in 0..g.ho {
                    let Some(ih) = g.src_row(oh, i) else { continue };
                    let src = &cols[row + oh * g.wo..row + (oh + 1) * g.wo];
                    let dst = &mut plane[ih * g.w..(ih + 1) * g.w];
                    for (ow, &v) in src.iter().enumerate() {
                        if let Some(iw) = g.src_col(ow, j) {
                            dst[iw] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Dense conv forward. Returns the output and the unfolded columns (empty
/// for pointwise convs, whose columns are the input itself).
pub(crate) fn conv2d_forward<T: Real>(
    x: &[T],
    w: &[T],
    bias: Option<&[T]>,
    c_out: usize,
    g: &ConvGeom,
) -> (Vec<T>, Vec<T>) {
    let n = g.out_len();
    let k = g.patch_len();
    let mut y = vec![T::zero(); c_out * n];
    if let Some(b) = bias {
        for (row, &bv) in y.chunks_mut(n).zip(b) {
            row.iter_mut().for_each(|v| *v = bv);
        }
    }
    let cols = if g.is_pointwise() {
        Vec::new()
    } else {
        im2col(x, g)
    };
    let src = if g.is_pointwise() { x } else { &cols[..] };
    gemm(c_out, k, n, w, false, src, false, &mut y, T::one());
    (y, cols)
}

/// Depthwise conv, stride 1, kernel `[C, k, k]`, symmetric padding.
pub(crate) fn depthwise_forward<T: Real>(
    x: &[T],
    w: &[T],
    bias: Option<&[T]>,
    c: usize,
    h: usize,
    wd: usize,
    k: usize,
    pad: usize,
) -> Vec<T> {
    let ho = h + 2 * pad - k + 1;
    let wo = wd + 2 * pad - k + 1;
    let mut y = vec![T::zero(); c * ho * wo];
    for ch in 0..c {
        let xp = &x[ch * h * wd..(ch + 1) * h * wd];
        let yp = &mut y[ch * ho * wo..(ch + 1) * ho * wo];
        if let Some(b) = bias {
            yp.iter_mut().for_each(|v| *v = b[ch]);
        }
        for i in 0..k {
            for j in 0..k {
                let wv = w[(ch * k + i) * k + j];
                let (ow0, ow1) = valid_range(j, pad, wd, wo);
                if ow0 >= ow1 {
                    continue;
                }
                for oh in 0..ho {
                    let ih = oh + i;
                    if ih < pad || ih - pad >= h {
                        continue;
                    }
                    let xrow = &xp[(ih - pad) * wd..(ih - pad + 1) * wd];
                    let yrow = &mut yp[oh * wo..(oh + 1) * wo];
                    let iw0 = ow0 + j - pad;
                    for (yv, &xv) in yrow[ow0..ow1].iter_mut().zip(&xrow[iw0..iw0 + (ow1 - ow0)]) {
                        *yv += wv * xv;
                    }
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn depthwise_backward<T: Real>(
    x: &[T],
    w: &[T],
    gy: &[T],
    c: usize,
    h: usize,
    wd: usize,
    k: usize,
    pad: usize,
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) {
    let ho = h + 2 * pad - k + 1;
    let wo = wd + 2 * pad - k + 1;
    for ch in 0..c {
        let xp = &x[ch * h * wd..(ch + 1) * h * wd];
        let gp = &gy[ch * ho * wo..(ch + 1) * ho * wo];
        if let Some(db) = db.as_deref_mut() {
            db[ch] += gp.iter().copied().sum::<T>();
        }
        for i in 0..k {
            for j in 0..k {
                let widx = (ch * k + i) * k + j;
                let wv = w[widx];
                let (ow0, ow1) = valid_range(j, pad, wd, wo);
                if ow0 >= ow1 {
                    continue;
                }
                let len = ow1 - ow0;
                let iw0 = ow0 + j - pad;
                let mut acc = T::zero();
                for oh in 0..ho {
                    let ih = oh + i;
                    if ih < pad || ih - pad >= h {
                        continue;
                    }
                    let row = (ih - pad) * wd;
                    let grow = &gp[oh * wo + ow0..oh * wo + ow1];
                    if dw.is_some() {
                        let xrow = &xp[row + iw0..row + iw0 + len];
                        acc += grow.iter().zip(xrow).map(|(&a, &b)| a * b).sum::<T>();
                    }
                    if let Some(dx) = dx.as_deref_mut() {
                        let dxrow = &mut dx[ch * h * wd + row + iw0..ch * h * wd + row + iw0 + len];
                        for (d, &gv) in dxrow.iter_mut().zip(grow) {
                            *d += wv * gv;
                        }
                    }
                }
                if let Some(dw) = dw.as_deref_mut() {
                    dw[widx] += acc;
                }
            }
        }
    }
}

/// Output columns `[lo, hi)` whose source column `o + j - pad` lies inside `[0, w)`.
fn valid_range(j: usize, pad: usize, w: usize, wo: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(j);
    let hi = (w + pad).saturating_sub(j).min(wo);
    (lo, hi.max(lo))
}

/// Source taps of 2× bilinear upsampling along one axis (half-pixel centers,
/// edge clamped): `(i0, i1, w0, w1)` per output index.
pub(crate) fn upsample_taps(n: usize) -> Vec<(usize, usize, f64, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            let l = src - i0 as f64;
            (i0, i1, 1.0 - l, l)
        })
        .collect()
}

pub(crate) fn upsample_forward<T: Real>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let th = upsample_taps(h);
    let tw = upsample_taps(w);
    let (h2, w2) = (2 * h, 2 * w);
    let mut y = vec![T::zero(); c * h2 * w2];
    // Horizontal pass into a scratch plane, then vertical.
    let mut tmp = vec![T::zero(); h * w2];
    for ch in 0..c {
        let xp = &x[ch * h * w..(ch + 1) * h * w];
        for r in 0..h {
            let src = &xp[r * w..(r + 1) * w];
            for (o, &(i0, i1, a, b)) in tw.iter().enumerate() {
                tmp[r * w2 + o] = src[i0] * T::from_f64_lossy(a) + src[i1] * T::from_f64_lossy(b);
            }
        }
        let yp = &mut y[ch * h2 * w2..(ch + 1) * h2 * w2];
        for (o, &(i0, i1, a, b)) in th.iter().enumerate() {
            let (a, b) = (T::from_f64_lossy(a), T::from_f64_lossy(b));
            for col in 0..w2 {
                yp[o * w2 + col] = tmp[i0 * w2 + col] * a + tmp[i1 * w2 + col] * b;
            }
        }
    }
    y
}

pub(crate) fn upsample_backward<T: Real>(gy: &[T], c: usize, h: usize, w: usize, dx: &mut [T]) {
    let th = upsample_taps(h);
    let tw = upsample_taps(w);
    let (h2, w2) = (2 * h, 2 * w);
    let mut tmp = vec![T::zero(); h * w2];
    for ch in 0..c {
        tmp.iter_mut().for_each(|v| *v = T::zero());
        let gp = &gy[ch * h2 * w2..(ch + 1) * h2 * w2];
        for (o, &(i0, i1, a, b)) in th.iter().enumerate() {
            let (a, b) = (T::from_f64_lossy(a), T::from_f64_lossy(b));
            for col in 0..w2 {
                let g = gp[o * w2 + col];
                tmp[i0 * w2 + col] += g * a;
                tmp[i1 * w2 + col] += g * b;
            }
        }
        let dp = &mut dx[ch * h * w..(ch + 1) * h * w];
        for r in 0..h {
            for (o, &(i0, i1, a, b)) in tw.iter().enumerate() {
                let g = tmp[r * w2 + o];
                dp[r * w + i0] += g * T::from_f64_lossy(a);
                dp[r * w + i1] += g * T::from_f64_lossy(b);
            }
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
pub(crate) fn gelu<T: Real>(x: T) -> T {
    let c = T::from_f64_lossy(GELU_C);
    let a = T::from_f64_lossy(GELU_A);
    let half = T::from_f64_lossy(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

#[inline]
pub(crate) fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::from_f64_lossy(GELU_C);
    let a = T::from_f64_lossy(GELU_A);
    let half = T::from_f64_lossy(0.5);
    let three = T::from_f64_lossy(3.0);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * a * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsample_taps_ramp() {
        let t = upsample_taps(2);
        let ramp = [0.0, 1.0];
        let vals: Vec<f64> = t.iter().map(|&(a, b, wa, wb)| ramp[a] * wa + ramp[b] * wb).collect();
        assert_eq!(vals, vec![0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn depthwise_matches_dense_conv_per_channel() {
        // depthwise 3x3 with pad 1 equals a dense conv with block-diagonal kernel
        let (c, h, w, k) = (2, 4, 5, 3);
        let x: Vec<f64> = (0..c * h * w).map(|i| (i as f64 * 0.37).sin()).collect();
        let wk: Vec<f64> = (0..c * k * k).map(|i| (i as f64 * 0.11).cos()).collect();
        let y = depthwise_forward(&x, &wk, None, c, h, w, k, 1);
        let mut dense = vec![0.0; c * c * k * k];
        for ch in 0..c {
            for t in 0..k * k {
                dense[(ch * c + ch) * k * k + t] = wk[ch * k * k + t];
            }
        }
        let g = ConvGeom::new(c, h, w, k, k, 1, 1).unwrap();
        let (yd, _) = conv2d_forward(&x, &dense, None, c, &g);
        for (a, b) in y.iter().zip(&yd) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
