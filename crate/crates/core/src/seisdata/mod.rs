//! Synthetic seismic gathers for the three restoration tasks, augmentation,
//! normalization and file I/O.

mod augment;
mod dataset;
mod native;
pub mod segy;
mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Real, Tensor};

pub use augment::{add_noise, mask_traces, random_cut_below_first_break, MaskPattern, MaskedGather, NoiseDist};
pub use dataset::{
    demultiple_dataset, pretraining_corpus, shot_gather_corpus, split_index, task_dataset, DemultipleConfig, ShotConfig,
    TaskDataConfig,
};
pub use native::{decode_gather, encode_gather, read_gather, write_gather, SampleType};
pub use synth::{
    demultiple_events, ricker_wavelet, synthesize_demultiple_pair, synthesize_shot_gather, DemultiplePair, Layer,
    LayeredModel, ModelRanges, SeismicEvent, ShotGather,
};

/// A panel of traces (columns) over time samples (rows), row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Gather {
    h: usize,
    w: usize,
    samples: Vec<f64>,
    /// Sample interval in seconds.
    pub dt: f64,
    /// Trace spacing in meters.
    pub trace_spacing: f64,
}

impl Gather {
    pub fn new(h: usize, w: usize, samples: Vec<f64>, dt: f64, trace_spacing: f64) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(shape_err!("gather must be at least 1x1, got {h}x{w}"));
        }
        if samples.len() != h * w {
            return Err(shape_err!("{} samples for a {h}x{w} gather", samples.len()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite sample at row {}, trace {}",
                i / w,
                i % w
            )));
        }
        Ok(Gather {
            h,
            w,
            samples,
            dt,
            trace_spacing,
        })
    }

    pub fn zeros(h: usize, w: usize, dt: f64, trace_spacing: f64) -> Self {
        Gather {
            h,
            w,
            samples: vec![0.0; h * w],
            dt,
            trace_spacing,
        }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn get(&self, row: usize, trace: usize) -> f64 {
        self.samples[row * self.w + trace]
    }

    pub fn trace(&self, j: usize) -> Vec<f64> {
        (0..self.h).map(|r| self.get(r, j)).collect()
    }

    /// Same metadata, samples replaced by `f(sample)`.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Gather {
        Gather {
            samples: self.samples.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    /// Elementwise combination with a same-shape gather.
    pub fn zip_with(&self, other: &Gather, f: impl Fn(f64, f64) -> f64) -> Result<Gather> {
        if self.shape() != other.shape() {
            return Err(shape_err!("gather shapes {:?} and {:?} differ", self.shape(), other.shape()));
        }
        Ok(Gather {
            samples: self.samples.iter().zip(&other.samples).map(|(&a, &b)| f(a, b)).collect(),
            ..self.clone()
        })
    }

    /// Rows `top..top+h`, traces `left..left+w`.
    pub fn window(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Gather> {
        if h == 0 || w == 0 || top + h > self.h || left + w > self.w {
            return Err(shape_err!(
                "window {h}x{w} at ({top},{left}) exceeds gather {}x{}",
                self.h,
                self.w
            ));
        }
        let mut out = Vec::with_capacity(h * w);
        for r in top..top + h {
            out.extend_from_slice(&self.samples[r * self.w + left..][..w]);
        }
        Ok(Gather {
            h,
            w,
            samples: out,
            ..self.clone()
        })
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        let m = self.mean();
        (self.samples.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// `[H, W]` tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::new(
            [self.h, self.w],
            self.samples.iter().map(|&v| T::from_f64_lossy(v)).collect(),
        )
        .expect("gather length matches its shape")
    }

    /// Inverse of [`to_tensor`](Self::to_tensor); accepts `[H, W]` or `[1, H, W]`.
    pub fn from_tensor<T: Real>(t: &Tensor<T>, dt: f64, trace_spacing: f64) -> Result<Gather> {
        let (h, w) = match t.shape() {
            &[h, w] | &[1, h, w] => (h, w),
            s => return Err(shape_err!("expected [H, W] tensor, got {s:?}")),
        };
        Gather::new(h, w, t.data().iter().map(|v| v.as_f64()).collect(), dt, trace_spacing)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Demultiple,
    Interpolation,
    Denoise,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Demultiple, Task::Interpolation, Task::Denoise];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Demultiple => "demultiple",
            Task::Interpolation => "interpolation",
            Task::Denoise => "denoise",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown task `{s}`")))
    }
}

/// One supervised pair.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSample {
    pub input: Gather,
    pub label: Gather,
    pub task: Task,
}

impl TaskSample {
    pub fn new(input: Gather, label: Gather, task: Task) -> Result<Self> {
        if input.shape() != label.shape() {
            return Err(shape_err!(
                "input {:?} and label {:?} differ in shape",
                input.shape(),
                label.shape()
            ));
        }
        Ok(TaskSample { input, label, task })
    }
}

/// Smallest standard deviation used when normalizing.
pub const STD_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

/// Zero mean, unit standard deviation. Constant gathers become all zeros
/// and record the floor as their std.
pub fn normalize(g: &Gather) -> (Gather, NormStats) {
    let std = g.std();
    let stats = NormStats {
        mean: g.mean(),
        std: std.max(STD_FLOOR),
    };
    if std < STD_FLOOR {
        // rounding in the mean would otherwise blow up by 1/floor
        return (g.map(|_| 0.0), stats);
    }
    (apply_norm(g, &stats), stats)
}

pub fn apply_norm(g: &Gather, stats: &NormStats) -> Gather {
    g.map(|v| (v - stats.mean) / stats.std)
}

pub fn denormalize(g: &Gather, stats: &NormStats) -> Gather {
    g.map(|v| v * stats.std + stats.mean)
}
