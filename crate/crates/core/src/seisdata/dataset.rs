//! Seeded task datasets. Sample `i` draws only from stream `i` of the
//! dataset seed, so any subset or ordering of generation gives the same
//! samples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{add_noise, mask_traces, random_cut_below_first_break, MaskPattern, NoiseDist};
use super::synth::{synthesize_demultiple_pair, synthesize_shot_gather, LayeredModel, ModelRanges, ShotGather};
use super::{normalize, Gather, Task, TaskSample};
use crate::error::{Error, Result};

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Number of training samples in an `n`-sample dataset; the remaining
/// tenth (by index) is held out.
pub fn split_index(n: usize) -> usize {
    n - n / 10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemultipleConfig {
    pub h: usize,
    pub w: usize,
    pub dt: f64,
    /// Water-bottom moveout range in seconds per trace.
    pub moveout: (f64, f64),
    pub model: ModelRanges,
}

impl Default for DemultipleConfig {
    fn default() -> Self {
        DemultipleConfig {
            h: 64,
            w: 512,
            dt: 0.008,
            moveout: (5e-5, 2e-4),
            model: ModelRanges::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotConfig {
    pub h: usize,
    pub w: usize,
    pub dt: f64,
    pub trace_spacing: f64,
    pub v1: f64,
    pub model: ModelRanges,
}

impl Default for ShotConfig {
    fn default() -> Self {
        ShotConfig {
            h: 256,
            w: 128,
            dt: 0.008,
            trace_spacing: 12.5,
            v1: 1500.0,
            model: ModelRanges {
                layers: (10, 20),
                thickness: (0.05, 0.15),
                ..ModelRanges::default()
            },
        }
    }
}

/// Everything needed to generate the three task datasets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskDataConfig {
    pub demultiple: DemultipleConfig,
    pub shot: ShotConfig,
    pub cut_h: usize,
    pub cut_w: usize,
    pub mask_ratio: f64,
    pub mask_pattern: MaskPattern,
    /// Noise standard deviation as a multiple of the gather's.
    pub noise_level: f64,
    pub noise_train: NoiseDist,
    /// Distribution for held-out samples.
    pub noise_eval: NoiseDist,
}

impl Default for TaskDataConfig {
    fn default() -> Self {
        TaskDataConfig {
            demultiple: DemultipleConfig::default(),
            shot: ShotConfig::default(),
            cut_h: 64,
            cut_w: 64,
            mask_ratio: 0.3,
            mask_pattern: MaskPattern::Random,
            noise_level: 0.3,
            noise_train: NoiseDist::Gaussian,
            noise_eval: NoiseDist::Uniform,
        }
    }
}

impl TaskDataConfig {
    /// Gather size of a task's samples.
    pub fn sample_hw(&self, task: Task) -> (usize, usize) {
        match task {
            Task::Demultiple => (self.demultiple.h, self.demultiple.w),
            Task::Interpolation | Task::Denoise => (self.cut_h, self.cut_w),
        }
    }
}

pub fn demultiple_dataset(cfg: &DemultipleConfig, n: usize, seed: u64) -> Result<Vec<TaskSample>> {
    (0..n)
        .map(|i| {
            let mut rng = sample_rng(seed, i);
            let model = LayeredModel::random(&cfg.model, &mut rng);
            let moveout = rng.gen_range(cfg.moveout.0..cfg.moveout.1);
            Ok(synthesize_demultiple_pair(&model, cfg.h, cfg.w, cfg.dt, moveout, rng.gen())?.sample)
        })
        .collect()
}

fn shot_for(cfg: &ShotConfig, rng: &mut ChaCha8Rng) -> Result<ShotGather> {
    let model = LayeredModel::random(&cfg.model, rng);
    synthesize_shot_gather(&model, cfg.v1, cfg.h, cfg.w, cfg.dt, cfg.trace_spacing, rng.gen())
}

pub fn shot_gather_corpus(cfg: &ShotConfig, n: usize, seed: u64) -> Result<Vec<ShotGather>> {
    (0..n).map(|i| shot_for(cfg, &mut sample_rng(seed, i))).collect()
}

/// Normalized random cut below the first break of a fresh shot gather.
fn normalized_cut(cfg: &TaskDataConfig, rng: &mut ChaCha8Rng) -> Result<Gather> {
    let shot = shot_for(&cfg.shot, rng)?;
    let cut = random_cut_below_first_break(&shot.gather, &shot.first_break, cfg.cut_h, cfg.cut_w, rng)?;
    Ok(normalize(&cut).0)
}

/// `n` samples of `task`. Held-out samples (index ≥ [`split_index`]) of the
/// denoise task use `noise_eval`.
pub fn task_dataset(task: Task, cfg: &TaskDataConfig, n: usize, seed: u64) -> Result<Vec<TaskSample>> {
    if n == 0 {
        return Err(Error::InvalidArgument(format!("{task} dataset must be nonempty")));
    }
    match task {
        Task::Demultiple => demultiple_dataset(&cfg.demultiple, n, seed),
        Task::Interpolation => (0..n)
            .map(|i| {
                let mut rng = sample_rng(seed, i);
                let cut = normalized_cut(cfg, &mut rng)?;
                Ok(mask_traces(&cut, cfg.mask_ratio, cfg.mask_pattern, &mut rng)?.into_sample())
            })
            .collect(),
        Task::Denoise => (0..n)
            .map(|i| {
                let mut rng = sample_rng(seed, i);
                let cut = normalized_cut(cfg, &mut rng)?;
                let dist = if i < split_index(n) { cfg.noise_train } else { cfg.noise_eval };
                add_noise(&cut, dist, cfg.noise_level, &mut rng)
            })
            .collect(),
    }
}

/// Normalized shot-gather cuts for self-supervised pre-training.
pub fn pretraining_corpus(cfg: &TaskDataConfig, n: usize, seed: u64) -> Result<Vec<Gather>> {
    (0..n).map(|i| normalized_cut(cfg, &mut sample_rng(seed, i))).collect()
}
