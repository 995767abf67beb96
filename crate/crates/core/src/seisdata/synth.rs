//! Convolutional modeling of layered-earth gathers.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Gather, Task, TaskSample, STD_FLOOR};
use crate::error::{Error, Result};

/// Ricker amplitude at time `t` (seconds) for peak frequency `f`.
fn ricker_at(f: f64, t: f64) -> f64 {
    let a = (PI * f * t).powi(2);
    (1.0 - 2.0 * a) * (-a).exp()
}

/// Past this distance from its center (in seconds, times `1/f`) the
/// wavelet is below 1e-15 and is not evaluated.
const SUPPORT_PERIODS: f64 = 2.0;

fn check_sampling(peak_freq: f64, dt: f64) -> Result<()> {
    if !(peak_freq > 0.0 && dt > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "peak frequency {peak_freq} Hz and dt {dt} s must be positive"
        )));
    }
    if peak_freq * dt >= 0.5 {
        return Err(Error::InvalidArgument(format!(
            "peak frequency {peak_freq} Hz is at or above Nyquist for dt = {dt} s"
        )));
    }
    Ok(())
}

/// Centered Ricker wavelet with `2·half_len + 1` taps.
pub fn ricker_wavelet(peak_freq: f64, dt: f64, half_len: usize) -> Result<Vec<f64>> {
    check_sampling(peak_freq, dt)?;
    let n = half_len as isize;
    Ok((-n..=n).map(|i| ricker_at(peak_freq, i as f64 * dt)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// Two-way time thickness in seconds.
    pub thickness: f64,
    /// Reflection coefficient at the layer's base.
    pub r: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayeredModel {
    pub layers: Vec<Layer>,
    pub water_bottom_time: f64,
    pub water_bottom_r: f64,
    pub wavelet_peak_freq: f64,
}

/// Sampling ranges for [`LayeredModel::random`]. All ranges are inclusive
/// lower, exclusive upper.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRanges {
    pub layers: (usize, usize),
    pub thickness: (f64, f64),
    /// Magnitude range of layer reflection coefficients; sign is random.
    pub r_abs: (f64, f64),
    pub water_bottom_time: (f64, f64),
    pub water_bottom_r: (f64, f64),
    pub peak_freq: (f64, f64),
}

impl Default for ModelRanges {
    fn default() -> Self {
        ModelRanges {
            layers: (3, 9),
            thickness: (0.02, 0.08),
            r_abs: (0.05, 0.3),
            water_bottom_time: (0.04, 0.12),
            water_bottom_r: (0.3, 0.7),
            peak_freq: (10.0, 25.0),
        }
    }
}

impl LayeredModel {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidArgument("layered model has no layers".into()));
        }
        if let Some(l) = self.layers.iter().find(|l| !(l.thickness > 0.0) || !(l.r.abs() < 1.0)) {
            return Err(Error::InvalidArgument(format!(
                "layer needs positive thickness and |r| < 1, got {l:?}"
            )));
        }
        if !(self.water_bottom_time > 0.0) || !(self.water_bottom_r.abs() < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "water bottom needs positive time and |r| < 1, got t = {}, r = {}",
                self.water_bottom_time, self.water_bottom_r
            )));
        }
        if !(self.wavelet_peak_freq > 0.0) {
            return Err(Error::InvalidArgument("wavelet peak frequency must be positive".into()));
        }
        Ok(())
    }

    pub fn random<R: Rng>(ranges: &ModelRanges, rng: &mut R) -> Self {
        let n = rng.gen_range(ranges.layers.0..ranges.layers.1.max(ranges.layers.0 + 1));
        let layers = (0..n)
            .map(|_| {
                let mag = rng.gen_range(ranges.r_abs.0..ranges.r_abs.1);
                Layer {
                    thickness: rng.gen_range(ranges.thickness.0..ranges.thickness.1),
                    r: if rng.gen::<bool>() { mag } else { -mag },
                }
            })
            .collect();
        LayeredModel {
            layers,
            water_bottom_time: rng.gen_range(ranges.water_bottom_time.0..ranges.water_bottom_time.1),
            water_bottom_r: rng.gen_range(ranges.water_bottom_r.0..ranges.water_bottom_r.1),
            wavelet_peak_freq: rng.gen_range(ranges.peak_freq.0..ranges.peak_freq.1),
        }
    }

    /// Zero-offset `(time, reflection coefficient)` of the water bottom and
    /// every layer base, shallowest first.
    pub fn primaries(&self) -> Vec<(f64, f64)> {
        let mut t = self.water_bottom_time;
        let mut out = vec![(t, self.water_bottom_r)];
        for l in &self.layers {
            t += l.thickness;
            out.push((t, l.r));
        }
        out
    }
}

/// One linear-moveout event of a CDP gather before convolution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeismicEvent {
    /// Arrival time on trace 0, seconds.
    pub time0: f64,
    /// Moveout in seconds per trace.
    pub slope: f64,
    pub amplitude: f64,
    /// Relative amplitude change from the first to the last trace.
    pub avo: f64,
    /// 0 for primaries, k for the order-k water-layer multiple.
    pub order: u32,
    /// Index of the generating primary.
    pub parent: usize,
}

impl SeismicEvent {
    fn time(&self, j: usize) -> f64 {
        self.time0 + self.slope * j as f64
    }

    fn amplitude_at(&self, j: usize, w: usize) -> f64 {
        self.amplitude * (1.0 + self.avo * j as f64 / (w.max(2) - 1) as f64)
    }
}

pub const MAX_MULTIPLE_ORDER: u32 = 3;

const AVO_RANGE: f64 = 0.3;

/// Primaries and their water-layer multiples of a CDP gather.
///
/// The water-bottom primary moves out at `moveout` s/trace; deeper primaries
/// flatten as `moveout · t_wb / t`. An order-k multiple of a primary at `t`
/// arrives at `t + k·t_wb` with amplitude `r·(−r_wb)^k` and adds `k·moveout`
/// of slope for its extra water legs. Per-primary AVO gradients are drawn
/// from `seed` and inherited by the multiples.
pub fn demultiple_events(model: &LayeredModel, moveout: f64, seed: u64) -> Result<Vec<SeismicEvent>> {
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t_wb = model.water_bottom_time;
    let mut events = Vec::new();
    for (p, (t, r)) in model.primaries().into_iter().enumerate() {
        let slope = moveout * t_wb / t;
        let avo = rng.gen_range(-AVO_RANGE..AVO_RANGE);
        events.push(SeismicEvent {
            time0: t,
            slope,
            amplitude: r,
            avo,
            order: 0,
            parent: p,
        });
        for k in 1..=MAX_MULTIPLE_ORDER {
            events.push(SeismicEvent {
                time0: t + k as f64 * t_wb,
                slope: slope + k as f64 * moveout,
                amplitude: r * (-model.water_bottom_r).powi(k as i32),
                avo,
                order: k,
                parent: p,
            });
        }
    }
    Ok(events)
}

/// Add a wavelet centered at `time(j)` with amplitude `amp(j)` to each trace.
fn render(
    out: &mut [f64],
    h: usize,
    w: usize,
    dt: f64,
    f: f64,
    time: impl Fn(usize) -> f64,
    amp: impl Fn(usize) -> f64,
) {
    let half = SUPPORT_PERIODS / f;
    for j in 0..w {
        let tc = time(j);
        let a = amp(j);
        let lo = ((tc - half) / dt).ceil().max(0.0);
        let hi = ((tc + half) / dt).floor();
        if hi < 0.0 || lo >= h as f64 {
            continue;
        }
        let hi = (hi as usize).min(h - 1);
        for r in lo as usize..=hi {
            out[r * w + j] += a * ricker_at(f, r as f64 * dt - tc);
        }
    }
}

fn render_events<'a>(events: impl Iterator<Item = &'a SeismicEvent>, h: usize, w: usize, dt: f64, f: f64) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for e in events {
        render(&mut out, h, w, dt, f, |j| e.time(j), |j| e.amplitude_at(j, w));
    }
    out
}

/// Grid for [`synthesize_demultiple_pair`] output values; sums of grid
/// values are exact in f64, so `input − label` reproduces the multiples.
const QUANTUM: f64 = 1.0 / (1u64 << 24) as f64;

fn quantize(v: f64) -> f64 {
    (v / QUANTUM).round() * QUANTUM
}

/// Trace spacing recorded on synthetic CDP gathers.
pub const CDP_TRACE_SPACING: f64 = 12.5;

#[derive(Clone, Debug, PartialEq)]
pub struct DemultiplePair {
    /// Input = primaries + multiples, label = primaries.
    pub sample: TaskSample,
    /// The multiples alone, on the same scale.
    pub multiples: Gather,
}

/// Primaries-only label and primaries-plus-multiples input for one CDP
/// gather, normalized jointly by the input's mean and standard deviation.
pub fn synthesize_demultiple_pair(
    model: &LayeredModel,
    h: usize,
    w: usize,
    dt: f64,
    moveout: f64,
    seed: u64,
) -> Result<DemultiplePair> {
    check_sampling(model.wavelet_peak_freq, dt)?;
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!("gather size {h}x{w} must be positive")));
    }
    let events = demultiple_events(model, moveout, seed)?;
    let f = model.wavelet_peak_freq;
    let prim = render_events(events.iter().filter(|e| e.order == 0), h, w, dt, f);
    let mult = render_events(events.iter().filter(|e| e.order > 0), h, w, dt, f);
    let raw = Gather::new(h, w, prim.iter().zip(&mult).map(|(a, b)| a + b).collect(), dt, CDP_TRACE_SPACING)?;
    let mean = raw.mean();
    let std = raw.std().max(STD_FLOOR);
    let label: Vec<f64> = prim.iter().map(|v| quantize((v - mean) / std)).collect();
    let mult: Vec<f64> = mult.iter().map(|v| quantize(v / std)).collect();
    let input: Vec<f64> = label.iter().zip(&mult).map(|(a, b)| a + b).collect();
    let g = |s| Gather::new(h, w, s, dt, CDP_TRACE_SPACING);
    Ok(DemultiplePair {
        sample: TaskSample::new(g(input)?, g(label)?, Task::Demultiple)?,
        multiples: g(mult)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShotGather {
    pub gather: Gather,
    /// Per-trace sample index of the direct arrival.
    pub first_break: Vec<usize>,
}

/// A shot gather with trace 0 at zero offset: the direct arrival at
/// `offset / v1` plus hyperbolic primary reflections.
///
/// Reflections use an RMS velocity that grows linearly below the water
/// bottom with a gradient drawn from `seed`, and decay as `t0 / t`.
/// Samples above each trace's first break are zeroed; events arriving past
/// the record are simply absent.
pub fn synthesize_shot_gather(
    model: &LayeredModel,
    v1: f64,
    h: usize,
    w: usize,
    dt: f64,
    trace_spacing: f64,
    seed: u64,
) -> Result<ShotGather> {
    if !(v1 > 0.0) {
        return Err(Error::InvalidArgument(format!("direct-wave velocity {v1} must be positive")));
    }
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!("gather size {h}x{w} must be positive")));
    }
    check_sampling(model.wavelet_peak_freq, dt)?;
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gradient = rng.gen_range(0.3..0.9);
    let f = model.wavelet_peak_freq;
    let offset = |j: usize| j as f64 * trace_spacing;
    let mut out = vec![0.0; h * w];

    render(&mut out, h, w, dt, f, |j| offset(j) / v1, |_| 1.0);
    let t_wb = model.water_bottom_time;
    for (t0, r) in model.primaries() {
        let v = v1 * (1.0 + gradient * (t0 - t_wb));
        let avo = rng.gen_range(-AVO_RANGE..AVO_RANGE);
        let time = |j: usize| (t0 * t0 + (offset(j) / v).powi(2)).sqrt();
        render(
            &mut out,
            h,
            w,
            dt,
            f,
            time,
            |j| r * (t0 / time(j)) * (1.0 + avo * j as f64 / (w.max(2) - 1) as f64),
        );
    }

    let first_break: Vec<usize> = (0..w).map(|j| (offset(j) / v1 / dt).round() as usize).collect();
    for (j, &fb) in first_break.iter().enumerate() {
        for r in 0..fb.min(h) {
            out[r * w + j] = 0.0;
        }
    }
    Ok(ShotGather {
        gather: Gather::new(h, w, out, dt, trace_spacing)?,
        first_break,
    })
}
