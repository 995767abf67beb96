//! Reconstruction quality metrics and the inference timing harness.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::seisdata::{Gather, Task, TaskSample};
use crate::tensor::{Real, Tensor};

/// Reported in place of +∞ dB for identical inputs.
pub const PSNR_CAP_DB: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

pub fn mse(a: &Gather, b: &Gather) -> Result<f64> {
    let d = a.zip_with(b, |x, y| (x - y) * (x - y))?;
    Ok(d.samples().iter().sum::<f64>() / d.samples().len() as f64)
}

/// `10·log10(peak² / mse)`, capped at [`PSNR_CAP_DB`].
pub fn psnr_from_mse(mse: f64, peak: f64) -> Result<f64> {
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::InvalidArgument(format!("PSNR peak must be positive, got {peak}")));
    }
    if mse < 0.0 || mse.is_nan() {
        return Err(Error::InvalidArgument(format!("mse must be non-negative, got {mse}")));
    }
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

pub fn psnr(a: &Gather, b: &Gather, peak: f64) -> Result<f64> {
    psnr_from_mse(mse(a, b)?, peak)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range of the data.
    pub range: f64,
}

impl SsimParams {
    pub fn with_range(range: f64) -> Self {
        SsimParams {
            window: SSIM_WINDOW,
            sigma: SSIM_SIGMA,
            k1: SSIM_K1,
            k2: SSIM_K2,
            range,
        }
    }
}

/// Normalized 1-D Gaussian taps of odd length `n`.
pub fn gaussian_taps(n: usize, sigma: f64) -> Vec<f64> {
    let c = (n / 2) as f64;
    let raw: Vec<f64> = (0..n).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering of a row-major `h × w` image.
fn filter_valid(x: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let n = taps.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = taps.iter().zip(&x[r * w + c..r * w + c + n]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = taps.iter().enumerate().map(|(k, t)| t * rows[(r + k) * ow + c]).sum();
        }
    }
    out
}

/// Mean structural similarity over all fully contained Gaussian windows.
pub fn ssim_with(a: &Gather, b: &Gather, p: &SsimParams) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("SSIM of {:?} and {:?} gathers", a.shape(), b.shape())));
    }
    if !(p.range > 0.0 && p.range.is_finite()) {
        return Err(Error::InvalidArgument(format!("SSIM range must be positive, got {}", p.range)));
    }
    if p.window == 0 || p.window % 2 == 0 {
        return Err(Error::InvalidArgument(format!("SSIM window must be odd, got {}", p.window)));
    }
    let (h, w) = a.shape();
    if h < p.window || w < p.window {
        return Err(Error::Shape(format!("{h}x{w} gather is smaller than the {0}x{0} SSIM window", p.window)));
    }
    let taps = gaussian_taps(p.window, p.sigma);
    let (x, y) = (a.samples(), b.samples());
    let prod = |f: fn(f64, f64) -> f64| x.iter().zip(y).map(|(&u, &v)| f(u, v)).collect::<Vec<_>>();
    let mx = filter_valid(x, h, w, &taps);
    let my = filter_valid(y, h, w, &taps);
    let mxx = filter_valid(&prod(|u, _| u * u), h, w, &taps);
    let myy = filter_valid(&prod(|_, v| v * v), h, w, &taps);
    let mxy = filter_valid(&prod(|u, v| u * v), h, w, &taps);
    let c1 = (p.k1 * p.range).powi(2);
    let c2 = (p.k2 * p.range).powi(2);
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let sxx = mxx[i] - ux * ux;
        let syy = myy[i] - uy * uy;
        let sxy = mxy[i] - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * sxy + c2)) / ((ux * ux + uy * uy + c1) * (sxx + syy + c2));
    }
    Ok(total / mx.len() as f64)
}

/// SSIM with the standard window and constants.
pub fn ssim(a: &Gather, b: &Gather, range: f64) -> Result<f64> {
    ssim_with(a, b, &SsimParams::with_range(range))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombinedScore {
    pub ssim_demultiple: f64,
    pub ssim_interpolation: f64,
    pub ssim_denoise: f64,
    pub combined: f64,
}

/// Sum of the three per-task SSIMs. Every task must appear exactly once.
pub fn combined_ssim(per_task: &[(Task, f64)]) -> Result<CombinedScore> {
    let mut seen = BTreeMap::new();
    for &(t, v) in per_task {
        if seen.insert(t.as_str(), v).is_some() {
            return Err(Error::InvalidArgument(format!("task {t} listed twice")));
        }
    }
    let get = |t: Task| {
        seen.get(t.as_str())
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("combined SSIM needs all three tasks; {t} is missing")))
    };
    let (d, i, n) = (get(Task::Demultiple)?, get(Task::Interpolation)?, get(Task::Denoise)?);
    Ok(CombinedScore {
        ssim_demultiple: d,
        ssim_interpolation: i,
        ssim_denoise: n,
        combined: d + i + n,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub task: Task,
    pub mse: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub params_encoder: usize,
    pub params_total: usize,
    /// Gathers per second.
    pub throughput_gps: f64,
    /// Seconds per batch.
    pub latency_s: f64,
}

/// Per-sample quality of one prediction against its label.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quality {
    pub mse: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// SSIM range is the label's max − min; PSNR peak is its max |amplitude|.
pub fn quality(pred: &Gather, label: &Gather) -> Result<Quality> {
    let lo = label.samples().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = label.samples().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = if hi > lo { hi - lo } else { 1.0 };
    let peak = if label.max_abs() > 0.0 { label.max_abs() } else { 1.0 };
    let mse = mse(pred, label)?;
    Ok(Quality {
        mse,
        psnr_db: psnr_from_mse(mse, peak)?,
        ssim: ssim(pred, label, range)?,
    })
}

/// Run the model on one sample's input.
pub fn predict_gather<T: Real>(model: &Model<T>, input: &Gather) -> Result<Gather> {
    let (h, w) = input.shape();
    let x = Tensor::new(vec![h, w], input.samples().iter().map(|&v| T::from_f64_lossy(v)).collect())?;
    let y = model.predict(&x)?;
    Gather::new(h, w, y.data().iter().map(|v| v.as_f64()).collect(), input.dt, input.trace_spacing)
}

/// Mean quality of `model` over `samples`.
pub fn evaluate<T: Real>(model: &Model<T>, samples: &[TaskSample]) -> Result<Quality> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no evaluation samples".into()));
    }
    let mut acc = Quality {
        mse: 0.0,
        psnr_db: 0.0,
        ssim: 0.0,
    };
    for s in samples {
        let q = quality(&predict_gather(model, &s.input)?, &s.label)?;
        acc.mse += q.mse;
        acc.psnr_db += q.psnr_db;
        acc.ssim += q.ssim;
    }
    let n = samples.len() as f64;
    Ok(Quality {
        mse: acc.mse / n,
        psnr_db: acc.psnr_db / n,
        ssim: acc.ssim / n,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// Seconds per batch, one per measured repetition.
    pub samples: Vec<f64>,
    pub median_latency_s: f64,
    pub throughput_gps: f64,
}

/// Time batched inference on zero gathers of `shape`. Warmup repetitions
/// are discarded; the batch runs one gather at a time on this thread.
pub fn time_inference<T: Real>(
    model: &Model<T>,
    batch: usize,
    shape: (usize, usize),
    warmup: usize,
    reps: usize,
) -> Result<Timing> {
    if reps < 3 {
        return Err(Error::InvalidArgument(format!("timing needs at least 3 repetitions, got {reps}")));
    }
    if batch == 0 {
        return Err(Error::InvalidArgument("batch must be at least 1".into()));
    }
    let x = Tensor::<T>::zeros(vec![shape.0, shape.1]);
    let run = || -> Result<()> {
        for _ in 0..batch {
            std::hint::black_box(model.predict(&x)?);
        }
        Ok(())
    };
    for _ in 0..warmup {
        run()?;
    }
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        run()?;
        samples.push(t.elapsed().as_secs_f64());
    }
    let total: f64 = samples.iter().sum();
    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if reps % 2 == 1 {
        sorted[reps / 2]
    } else {
        0.5 * (sorted[reps / 2 - 1] + sorted[reps / 2])
    };
    Ok(Timing {
        samples,
        median_latency_s: median,
        throughput_gps: (batch * reps) as f64 / total,
    })
}
