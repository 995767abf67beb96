//! Non-overlapping window partitioning for windowed attention.

use super::{Real, Tensor};
use crate::error::{shape_err, Result};

/// How a `[C, H, W]` tensor was cut into `win × win` windows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowLayout {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub win: usize,
}

impl WindowLayout {
    pub fn rows(&self) -> usize {
        self.height / self.win
    }

    pub fn cols(&self) -> usize {
        self.width / self.win
    }
}

/// Split `[C, H, W]` into `[C, win, win]` windows, row-major over the window grid.
pub fn window_partition<T: Real>(input: &Tensor<T>, win: usize) -> Result<(Vec<Tensor<T>>, WindowLayout)> {
    let (c, h, w) = input.chw()?;
    if win == 0 || h % win != 0 || w % win != 0 {
        return Err(shape_err!("window {win} does not divide spatial dims {h}x{w}"));
    }
    let layout = WindowLayout {
        channels: c,
        height: h,
        width: w,
        win,
    };
    let src = input.data();
    let mut out = Vec::with_capacity(layout.rows() * layout.cols());
    for wr in 0..layout.rows() {
        for wc in 0..layout.cols() {
            let mut data = Vec::with_capacity(c * win * win);
            for ch in 0..c {
                for i in 0..win {
                    let row = (ch * h + wr * win + i) * w + wc * win;
                    data.extend_from_slice(&src[row..row + win]);
                }
            }
            out.push(Tensor::new([c, win, win], data)?);
        }
    }
    Ok((out, layout))
}

/// Inverse of [`window_partition`].
pub fn window_merge<T: Real>(windows: &[Tensor<T>], layout: &WindowLayout) -> Result<Tensor<T>> {
    let WindowLayout {
        channels: c,
        height: h,
        width: w,
        win,
    } = *layout;
    if windows.len() != layout.rows() * layout.cols() {
        return Err(shape_err!(
            "window_merge: {} windows for a {}x{} grid",
            windows.len(),
            layout.rows(),
            layout.cols()
        ));
    }
    let mut data = vec![T::zero(); c * h * w];
    for (idx, win_t) in windows.iter().enumerate() {
        if win_t.shape() != [c, win, win] {
            return Err(shape_err!("window_merge: window {idx} has shape {:?}", win_t.shape()));
        }
        let (wr, wc) = (idx / layout.cols(), idx % layout.cols());
        let src = win_t.data();
        for ch in 0..c {
            for i in 0..win {
                let row = (ch * h + wr * win + i) * w + wc * win;
                data[row..row + win].copy_from_slice(&src[(ch * win + i) * win..][..win]);
            }
        }
    }
    Tensor::new([c, h, w], data)
}

/// Token permutation grouping an `h × w` grid into contiguous `wh × ww`
/// windows after a cyclic shift of `shift` (rows, cols).
///
/// Entry `r` is the row-major spatial index of the token placed at
/// position `r`; window `k` occupies positions `k·wh·ww .. (k+1)·wh·ww`.
pub fn window_token_order(h: usize, w: usize, wh: usize, ww: usize, shift: (usize, usize)) -> Result<Vec<usize>> {
    if wh == 0 || ww == 0 || h % wh != 0 || w % ww != 0 {
        return Err(shape_err!("window {wh}x{ww} does not divide spatial dims {h}x{w}"));
    }
    let mut order = Vec::with_capacity(h * w);
    for wr in 0..h / wh {
        for wc in 0..w / ww {
            for i in 0..wh {
                for j in 0..ww {
                    let r = (wr * wh + i + shift.0) % h;
                    let c = (wc * ww + j + shift.1) % w;
                    order.push(r * w + c);
                }
            }
        }
    }
    Ok(order)
}
