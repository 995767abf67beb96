//! Flat `key=value` experiment files with dotted keys.
//!
//! ```text
//! # two encoders, one task
//! seed=7
//! encoders=conv,vit
//! encoder.conv.archetype=conv-hierarchical
//! encoder.vit.archetype=global-attn-nonhierarchical
//! encoder.vit.channels=32,32,32,32
//! tasks=demultiple
//! strategies=scratch,fine-tuned
//! train.lr=0.001
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::decoder::{BlockKind, DecoderConfig, UpsampleKind};
use crate::encoders::{default_taps, Archetype, EncoderConfig};
use crate::error::{Error, Result};
use crate::seisdata::{MaskPattern, NoiseDist, Task, TaskDataConfig};
use crate::training::{StrategyKind, TrainConfig, MIM_MASK_RATIO};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedEncoder {
    pub name: String,
    pub config: EncoderConfig,
}

impl NamedEncoder {
    pub fn preset(arch: Archetype) -> Self {
        NamedEncoder {
            name: arch.as_str().to_string(),
            config: EncoderConfig::preset(arch),
        }
    }
}

/// One value per task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerTask<T> {
    pub demultiple: T,
    pub interpolation: T,
    pub denoise: T,
}

impl<T: Copy> PerTask<T> {
    pub fn splat(v: T) -> Self {
        PerTask {
            demultiple: v,
            interpolation: v,
            denoise: v,
        }
    }

    pub fn get(&self, task: Task) -> T {
        match task {
            Task::Demultiple => self.demultiple,
            Task::Interpolation => self.interpolation,
            Task::Denoise => self.denoise,
        }
    }

    pub fn set(&mut self, task: Task, v: T) {
        match task {
            Task::Demultiple => self.demultiple = v,
            Task::Interpolation => self.interpolation = v,
            Task::Denoise => self.denoise = v,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    /// Gathers in the pre-training corpus.
    pub corpus: usize,
    pub mask_ratio: f64,
    pub train: TrainConfig,
    /// Use this encoder checkpoint instead of pre-training.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingConfig {
    /// Wall-clock timing makes the latency and throughput columns vary
    /// between runs; disable it for byte-reproducible reports.
    pub enabled: bool,
    pub batch: usize,
    pub warmup: usize,
    pub reps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub encoders: Vec<NamedEncoder>,
    pub decoder: DecoderConfig,
    pub tasks: Vec<Task>,
    pub strategies: Vec<StrategyKind>,
    /// Generated samples per task before the 9:1 split.
    pub samples: PerTask<usize>,
    pub data: TaskDataConfig,
    pub train: TrainConfig,
    pub pretrain: PretrainConfig,
    pub timing: TimingConfig,
    pub output_dir: PathBuf,
    /// Write each trained model under `output_dir/models`.
    pub save_models: bool,
}

impl Default for ExperimentConfig {
    /// Desk-scale grid: every archetype preset, all tasks, scratch only.
    fn default() -> Self {
        let mut data = TaskDataConfig::default();
        data.demultiple.w = 64;
        ExperimentConfig {
            seed: 0,
            encoders: Archetype::ALL.into_iter().map(NamedEncoder::preset).collect(),
            decoder: DecoderConfig::default(),
            tasks: Task::ALL.to_vec(),
            strategies: vec![StrategyKind::Scratch],
            samples: PerTask {
                demultiple: 80,
                interpolation: 250,
                denoise: 250,
            },
            data,
            train: TrainConfig {
                epochs: 30,
                ..TrainConfig::default()
            },
            pretrain: PretrainConfig {
                corpus: 200,
                mask_ratio: MIM_MASK_RATIO,
                train: TrainConfig {
                    epochs: 30,
                    ..TrainConfig::default()
                },
                checkpoint: None,
            },
            timing: TimingConfig {
                enabled: true,
                batch: 8,
                warmup: 1,
                reps: 3,
            },
            output_dir: PathBuf::from("out"),
            save_models: true,
        }
    }
}

impl ExperimentConfig {
    /// Scratch training of the conv-hierarchical and global-attention
    /// presets on 64×64 demultiple gathers (80 samples, 30 epochs).
    pub fn desk_demultiple(seed: u64) -> Self {
        let mut c = Self::default();
        c.seed = seed;
        c.encoders = vec![
            NamedEncoder::preset(Archetype::ConvHierarchical),
            NamedEncoder::preset(Archetype::GlobalAttnNonhierarchical),
        ];
        c.tasks = vec![Task::Demultiple];
        c.timing.enabled = false;
        c.save_models = false;
        c
    }

    /// All three strategies for the conv-hierarchical preset on the
    /// 250-sample interpolation set, with a MIM checkpoint from a
    /// 200-gather corpus drawn from a different seed.
    pub fn desk_transfer(seed: u64) -> Self {
        let mut c = Self::default();
        c.seed = seed;
        c.encoders = vec![NamedEncoder::preset(Archetype::ConvHierarchical)];
        c.tasks = vec![Task::Interpolation];
        c.strategies = vec![StrategyKind::FineTuned, StrategyKind::Scratch, StrategyKind::Frozen];
        c.train.epochs = 20;
        c.timing.enabled = false;
        c.save_models = false;
        c
    }

    /// Seconds-scale grid with miniature encoders, for smoke runs.
    pub fn tiny(seed: u64) -> Self {
        let mut c = Self::default();
        c.seed = seed;
        c.encoders = [Archetype::ConvHierarchical, Archetype::GlobalAttnNonhierarchical]
            .into_iter()
            .map(|a| {
                let mut e = NamedEncoder::preset(a);
                if a.is_hierarchical() {
                    e.config.stage_channels = [4, 8, 16, 32];
                    e.config.stage_depths = [1; 4];
                    e.config.patch_stride = 2;
                    e.config.window = 2;
                } else {
                    e.config.stage_channels = [16; 4];
                    e.config.stage_depths = [1; 4];
                    e.config.tap_layers = [1, 2, 3, 4];
                }
                e
            })
            .collect();
        c.decoder.head_channels = 4;
        c.data.demultiple.h = 32;
        c.data.demultiple.w = 32;
        c.data.cut_h = 32;
        c.data.cut_w = 32;
        c.data.shot.h = 128;
        c.data.shot.w = 64;
        c.samples = PerTask::splat(10);
        c.train.epochs = 1;
        c.train.batch = 4;
        c.pretrain.corpus = 4;
        c.pretrain.train.epochs = 1;
        c.pretrain.train.batch = 4;
        c.timing = TimingConfig {
            enabled: false,
            batch: 2,
            warmup: 0,
            reps: 3,
        };
        c.save_models = false;
        c
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| parse(key, s.trim())).collect()
}

fn quad(key: &str, v: &str) -> Result<[usize; 4]> {
    let xs: Vec<usize> = list(key, v)?;
    xs.try_into()
        .map_err(|xs: Vec<usize>| Error::Config(format!("`{key}` needs 4 values, got {}", xs.len())))
}

fn bool_value(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{v}`"))),
    }
}

fn noise(key: &str, v: &str) -> Result<NoiseDist> {
    match v {
        "gaussian" => Ok(NoiseDist::Gaussian),
        "uniform" => Ok(NoiseDist::Uniform),
        _ => Err(Error::Config(format!("`{key}`: noise must be gaussian or uniform, got `{v}`"))),
    }
}

fn noise_str(n: NoiseDist) -> &'static str {
    match n {
        NoiseDist::Gaussian => "gaussian",
        NoiseDist::Uniform => "uniform",
    }
}

fn mask_pattern(key: &str, v: &str) -> Result<MaskPattern> {
    match v.split_once(':') {
        None if v == "random" => Ok(MaskPattern::Random),
        Some(("regular", k)) => Ok(MaskPattern::Regular(parse(key, k)?)),
        _ => Err(Error::Config(format!("`{key}`: expected random or regular:<k>, got `{v}`"))),
    }
}

fn join<T: ToString>(xs: impl IntoIterator<Item = T>) -> String {
    xs.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn set_train(t: &mut TrainConfig, field: &str, key: &str, v: &str) -> Result<bool> {
    match field {
        "lr" => t.lr = parse(key, v)?,
        "weight_decay" => t.weight_decay = parse(key, v)?,
        "beta1" => t.betas.0 = parse(key, v)?,
        "beta2" => t.betas.1 = parse(key, v)?,
        "eps" => t.eps = parse(key, v)?,
        "epochs" => t.epochs = parse(key, v)?,
        "batch" => t.batch = parse(key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn set_encoder(e: &mut EncoderConfig, field: &str, key: &str, v: &str) -> Result<()> {
    match field {
        "archetype" => {}
        "channels" => e.stage_channels = quad(key, v)?,
        "depths" => {
            e.stage_depths = quad(key, v)?;
            if e.archetype == Archetype::GlobalAttnNonhierarchical {
                e.tap_layers = default_taps(e.trunk_depth());
            }
        }
        "patch_stride" => e.patch_stride = parse(key, v)?,
        "window" => e.window = parse(key, v)?,
        "taps" => e.tap_layers = quad(key, v)?,
        _ => return Err(Error::Config(format!("unknown key `{key}`"))),
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text)
    }

    /// Apply `key=value` lines on top of the defaults. `#` starts a comment.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut pairs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", n + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        cfg.apply(&pairs)?;
        Ok(cfg)
    }

    /// Apply overrides in order. Encoder sections are resolved after all
    /// other keys so they may appear before or after `encoders=`.
    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        let mut names: Option<Vec<String>> = None;
        let mut sections: Vec<(String, String, String, String)> = Vec::new();
        for (k, v) in pairs {
            let (k, v) = (k.as_str(), v.as_str());
            if let Some(rest) = k.strip_prefix("encoder.") {
                let (name, field) = rest
                    .rsplit_once('.')
                    .ok_or_else(|| Error::Config(format!("`{k}`: expected encoder.<name>.<field>")))?;
                sections.push((name.to_string(), field.to_string(), k.to_string(), v.to_string()));
                continue;
            }
            if k == "encoders" {
                names = Some(v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect());
                continue;
            }
            self.set(k, v)?;
        }
        if names.is_none() && sections.is_empty() {
            return self.validate();
        }
        let names = names.unwrap_or_else(|| {
            let mut seen = Vec::new();
            for (n, ..) in &sections {
                if !seen.contains(n) {
                    seen.push(n.clone());
                }
            }
            seen
        });
        if let Some((n, _, k, _)) = sections.iter().find(|(n, ..)| !names.contains(n)) {
            return Err(Error::Config(format!("`{k}` configures encoder `{n}`, which is not listed in `encoders`")));
        }
        let mut encoders = Vec::with_capacity(names.len());
        for name in names {
            let own: Vec<_> = sections.iter().filter(|(n, ..)| *n == name).collect();
            let arch = match own.iter().rev().find(|(_, f, ..)| f == "archetype") {
                Some((_, _, k, v)) => parse::<Archetype>(k, v)?,
                None => self
                    .encoders
                    .iter()
                    .find(|e| e.name == name)
                    .map(|e| e.config.archetype)
                    .or_else(|| name.parse().ok())
                    .ok_or_else(|| Error::Config(format!("encoder `{name}` needs encoder.{name}.archetype")))?,
            };
            let mut config = self
                .encoders
                .iter()
                .find(|e| e.name == name && e.config.archetype == arch)
                .map(|e| e.config.clone())
                .unwrap_or_else(|| EncoderConfig::preset(arch));
            for (_, field, k, v) in own {
                set_encoder(&mut config, field, k, v)?;
            }
            encoders.push(NamedEncoder { name, config });
        }
        self.encoders = encoders;
        self.validate()
    }

    /// Set one non-encoder key.
    pub fn set(&mut self, k: &str, v: &str) -> Result<()> {
        let d = &mut self.data;
        match k {
            "seed" => self.seed = parse(k, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            "save_models" => self.save_models = bool_value(k, v)?,
            "tasks" => self.tasks = list(k, v)?,
            "strategies" => self.strategies = list(k, v)?,
            "decoder.skip" => self.decoder.skip_connections = bool_value(k, v)?,
            "decoder.block" => self.decoder.block = parse::<BlockKind>(k, v)?,
            "decoder.upsample" => self.decoder.upsample = parse::<UpsampleKind>(k, v)?,
            "decoder.multiplier" => self.decoder.bottleneck_multiplier = parse(k, v)?,
            "decoder.head_channels" => self.decoder.head_channels = parse(k, v)?,
            "decoder.channels" => self.decoder.channels = if v == "auto" { None } else { Some(quad(k, v)?) },
            "data.demultiple.h" => d.demultiple.h = parse(k, v)?,
            "data.demultiple.w" => d.demultiple.w = parse(k, v)?,
            "data.demultiple.dt" => d.demultiple.dt = parse(k, v)?,
            "data.shot.h" => d.shot.h = parse(k, v)?,
            "data.shot.w" => d.shot.w = parse(k, v)?,
            "data.shot.dt" => d.shot.dt = parse(k, v)?,
            "data.shot.trace_spacing" => d.shot.trace_spacing = parse(k, v)?,
            "data.shot.v1" => d.shot.v1 = parse(k, v)?,
            "data.cut_h" => d.cut_h = parse(k, v)?,
            "data.cut_w" => d.cut_w = parse(k, v)?,
            "data.mask_ratio" => d.mask_ratio = parse(k, v)?,
            "data.mask_pattern" => d.mask_pattern = mask_pattern(k, v)?,
            "data.noise_level" => d.noise_level = parse(k, v)?,
            "data.noise_train" => d.noise_train = noise(k, v)?,
            "data.noise_eval" => d.noise_eval = noise(k, v)?,
            "pretrain.corpus" => self.pretrain.corpus = parse(k, v)?,
            "pretrain.mask_ratio" => self.pretrain.mask_ratio = parse(k, v)?,
            "pretrain.checkpoint" => self.pretrain.checkpoint = Some(PathBuf::from(v)),
            "timing.enabled" => self.timing.enabled = bool_value(k, v)?,
            "timing.batch" => self.timing.batch = parse(k, v)?,
            "timing.warmup" => self.timing.warmup = parse(k, v)?,
            "timing.reps" => self.timing.reps = parse(k, v)?,
            _ => {
                if let Some(task) = k.strip_prefix("samples.") {
                    self.samples.set(parse(k, task)?, parse(k, v)?);
                    return Ok(());
                }
                let handled = match k.split_once('.') {
                    Some(("train", f)) => set_train(&mut self.train, f, k, v)?,
                    Some(("pretrain", f)) => set_train(&mut self.pretrain.train, f, k, v)?,
                    _ => false,
                };
                if !handled {
                    return Err(Error::Config(format!("unknown key `{k}`")));
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoders.is_empty() || self.tasks.is_empty() || self.strategies.is_empty() {
            return Err(Error::Config("encoders, tasks and strategies must be nonempty".into()));
        }
        for (i, e) in self.encoders.iter().enumerate() {
            if self.encoders[..i].iter().any(|o| o.name == e.name) {
                return Err(Error::Config(format!("encoder name `{}` is used twice", e.name)));
            }
            if e.name.is_empty() || e.name.contains([',', '/', '\\', '=']) {
                return Err(Error::Config(format!("encoder name `{}` is not a plain identifier", e.name)));
            }
            e.config.validate()?;
        }
        for (what, xs) in [("task", join(self.tasks.iter())), ("strategy", join(self.strategies.iter()))] {
            let parts: Vec<&str> = xs.split(',').collect();
            if parts.iter().enumerate().any(|(i, p)| parts[..i].contains(p)) {
                return Err(Error::Config(format!("{what} list `{xs}` has duplicates")));
            }
        }
        for &t in &self.tasks {
            if self.samples.get(t) < 10 {
                return Err(Error::Config(format!("{t} needs at least 10 samples for a 9:1 train/eval split")));
            }
        }
        self.decoder.validate()?;
        self.train.validate()?;
        self.pretrain.train.validate()?;
        if !(0.0..=1.0).contains(&self.pretrain.mask_ratio) {
            return Err(Error::Config(format!("pretrain.mask_ratio {} outside [0, 1]", self.pretrain.mask_ratio)));
        }
        if self.timing.enabled && (self.timing.reps < 3 || self.timing.batch == 0) {
            return Err(Error::Config("timing needs reps >= 3 and batch >= 1".into()));
        }
        Ok(())
    }

    /// The configuration as `key=value` lines that [`parse_str`](Self::parse_str)
    /// reads back to an equal value.
    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        put("seed", self.seed.to_string());
        put("output_dir", self.output_dir.display().to_string());
        put("save_models", self.save_models.to_string());
        put("encoders", join(self.encoders.iter().map(|e| e.name.clone())));
        for e in &self.encoders {
            let c = &e.config;
            let p = format!("encoder.{}", e.name);
            put(&format!("{p}.archetype"), c.archetype.to_string());
            put(&format!("{p}.channels"), join(c.stage_channels));
            put(&format!("{p}.depths"), join(c.stage_depths));
            put(&format!("{p}.patch_stride"), c.patch_stride.to_string());
            put(&format!("{p}.window"), c.window.to_string());
            put(&format!("{p}.taps"), join(c.tap_layers));
        }
        let dc = &self.decoder;
        put("decoder.skip", dc.skip_connections.to_string());
        put("decoder.block", dc.block.to_string());
        put("decoder.upsample", dc.upsample.to_string());
        put("decoder.multiplier", dc.bottleneck_multiplier.to_string());
        put("decoder.head_channels", dc.head_channels.to_string());
        put("decoder.channels", dc.channels.map_or("auto".into(), join));
        put("tasks", join(self.tasks.iter()));
        put("strategies", join(self.strategies.iter()));
        for t in Task::ALL {
            put(&format!("samples.{t}"), self.samples.get(t).to_string());
        }
        let d = &self.data;
        put("data.demultiple.h", d.demultiple.h.to_string());
        put("data.demultiple.w", d.demultiple.w.to_string());
        put("data.demultiple.dt", d.demultiple.dt.to_string());
        put("data.shot.h", d.shot.h.to_string());
        put("data.shot.w", d.shot.w.to_string());
        put("data.shot.dt", d.shot.dt.to_string());
        put("data.shot.trace_spacing", d.shot.trace_spacing.to_string());
        put("data.shot.v1", d.shot.v1.to_string());
        put("data.cut_h", d.cut_h.to_string());
        put("data.cut_w", d.cut_w.to_string());
        put("data.mask_ratio", d.mask_ratio.to_string());
        put(
            "data.mask_pattern",
            match d.mask_pattern {
                MaskPattern::Random => "random".into(),
                MaskPattern::Regular(k) => format!("regular:{k}"),
            },
        );
        put("data.noise_level", d.noise_level.to_string());
        put("data.noise_train", noise_str(d.noise_train).into());
        put("data.noise_eval", noise_str(d.noise_eval).into());
        for (prefix, t) in [("train", &self.train), ("pretrain", &self.pretrain.train)] {
            put(&format!("{prefix}.lr"), t.lr.to_string());
            put(&format!("{prefix}.weight_decay"), t.weight_decay.to_string());
            put(&format!("{prefix}.beta1"), t.betas.0.to_string());
            put(&format!("{prefix}.beta2"), t.betas.1.to_string());
            put(&format!("{prefix}.eps"), t.eps.to_string());
            put(&format!("{prefix}.epochs"), t.epochs.to_string());
            put(&format!("{prefix}.batch"), t.batch.to_string());
        }
        put("pretrain.corpus", self.pretrain.corpus.to_string());
        put("pretrain.mask_ratio", self.pretrain.mask_ratio.to_string());
        if let Some(p) = &self.pretrain.checkpoint {
            put("pretrain.checkpoint", p.display().to_string());
        }
        put("timing.enabled", self.timing.enabled.to_string());
        put("timing.batch", self.timing.batch.to_string());
        put("timing.warmup", self.timing.warmup.to_string());
        put("timing.reps", self.timing.reps.to_string());
        s
    }
}
