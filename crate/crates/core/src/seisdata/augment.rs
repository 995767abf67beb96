//! Random cuts, trace masking and additive noise.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Gather, Task, TaskSample};
use crate::error::{Error, Result};

/// A `cut_h × cut_w` window whose top row lies strictly below the first
/// break of every trace it covers, drawn uniformly over all such windows.
pub fn random_cut_below_first_break<R: Rng>(
    g: &Gather,
    first_break: &[usize],
    cut_h: usize,
    cut_w: usize,
    rng: &mut R,
) -> Result<Gather> {
    let (h, w) = g.shape();
    if first_break.len() != w {
        return Err(Error::InvalidArgument(format!(
            "{} first-break picks for {w} traces",
            first_break.len()
        )));
    }
    if cut_h == 0 || cut_w == 0 || cut_h > h || cut_w > w {
        return Err(Error::Infeasible(format!("a {cut_h}x{cut_w} cut does not fit a {h}x{w} gather")));
    }
    let max_top = h - cut_h;
    // For each left edge: (left, smallest valid top, number of valid tops).
    let mut starts = Vec::with_capacity(w - cut_w + 1);
    let mut total = 0usize;
    for left in 0..=w - cut_w {
        let min_top = first_break[left..left + cut_w].iter().max().copied().unwrap_or(0) + 1;
        if min_top <= max_top {
            let n = max_top - min_top + 1;
            starts.push((left, min_top, n));
            total += n;
        }
    }
    if total == 0 {
        return Err(Error::Infeasible(format!(
            "no {cut_h}x{cut_w} window fits below the first break of a {h}x{w} gather"
        )));
    }
    let mut k = rng.gen_range(0..total);
    for (left, min_top, n) in starts {
        if k < n {
            return g.window(min_top + k, left, cut_h, cut_w);
        }
        k -= n;
    }
    unreachable!("k < total")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskPattern {
    /// Each trace masked independently with probability `ratio`.
    Random,
    /// Keep every k-th trace (0, k, 2k, ...), mask the rest.
    Regular(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskedGather {
    pub base: Gather,
    /// True where the trace is zeroed.
    pub mask: Vec<bool>,
    pub masked: Gather,
}

impl MaskedGather {
    pub fn masked_fraction(&self) -> f64 {
        self.mask.iter().filter(|&&m| m).count() as f64 / self.mask.len() as f64
    }

    pub fn into_sample(self) -> TaskSample {
        TaskSample {
            input: self.masked,
            label: self.base,
            task: Task::Interpolation,
        }
    }
}

pub fn mask_traces<R: Rng>(g: &Gather, ratio: f64, pattern: MaskPattern, rng: &mut R) -> Result<MaskedGather> {
    let w = g.width();
    let mask: Vec<bool> = match pattern {
        MaskPattern::Random => {
            if !(0.0..=1.0).contains(&ratio) {
                return Err(Error::InvalidArgument(format!("mask ratio {ratio} outside [0, 1]")));
            }
            (0..w).map(|_| rng.gen::<f64>() < ratio).collect()
        }
        MaskPattern::Regular(0) => return Err(Error::InvalidArgument("regular mask step must be positive".into())),
        MaskPattern::Regular(k) => (0..w).map(|j| j % k != 0).collect(),
    };
    let masked = Gather::new(
        g.height(),
        w,
        g.samples()
            .iter()
            .enumerate()
            .map(|(i, &v)| if mask[i % w] { 0.0 } else { v })
            .collect(),
        g.dt,
        g.trace_spacing,
    )?;
    Ok(MaskedGather {
        base: g.clone(),
        mask,
        masked,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseDist {
    Gaussian,
    /// Uniform on ±√3·σ, matching the Gaussian variance.
    Uniform,
}

/// `input = g + n` with `std(n) = level · std(g)`; the label is `g`.
pub fn add_noise<R: Rng>(g: &Gather, dist: NoiseDist, level: f64, rng: &mut R) -> Result<TaskSample> {
    if !(level >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise level {level} must be non-negative")));
    }
    let sigma = level * g.std();
    let noisy = match dist {
        NoiseDist::Gaussian => g.map(|v| {
            let z: f64 = StandardNormal.sample(rng);
            v + sigma * z
        }),
        NoiseDist::Uniform => {
            let a = 3f64.sqrt() * sigma;
            g.map(|v| if a > 0.0 { v + rng.gen_range(-a..a) } else { v })
        }
    };
    TaskSample::new(noisy, g.clone(), Task::Denoise)
}
