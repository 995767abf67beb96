//! Experiment grids: data generation, optional pre-training, training per
//! strategy, held-out evaluation, and the report, plot and panel writers.

mod config;
mod panels;
mod plot;
mod report;

use std::collections::HashMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::encoders::Archetype;
use crate::error::{Error, Result};
use crate::metrics::{combined_ssim, evaluate, time_inference, CombinedScore, MetricsRecord};
use crate::model::Model;
use crate::seisdata::{pretraining_corpus, split_index, task_dataset, Task, TaskSample};
use crate::params::Partition;
use crate::training::{load_checkpoint, mim_pretrain, save_checkpoint, train_downstream, StrategyKind, TrainConfig, TrainingStrategy};

pub use config::{ExperimentConfig, NamedEncoder, PerTask, PretrainConfig, TimingConfig};
pub use panels::{emit_panels, panel_set, pgm_bytes, Panel};
pub use plot::{emit_scatter, scatter_svg, ScatterAxis};
pub use report::{emit_report, read_report_csv, read_report_json, report_lines, ReportFormat, ReportLine, CSV_COLUMNS};

/// Metrics of one trained model on one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    #[serde(flatten)]
    pub metrics: MetricsRecord,
    pub train_samples: usize,
    pub eval_samples: usize,
    pub loss_history: Vec<f64>,
}

/// One (encoder, strategy) grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub archetype: Archetype,
    pub hierarchical: bool,
    pub strategy: StrategyKind,
    pub results: Vec<TaskResult>,
    /// Present when all three tasks were run.
    pub combined: Option<CombinedScore>,
    /// Set when a stage failed; `results` is then empty.
    pub error: Option<String>,
}

impl ReportRow {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }

    pub fn result(&self, task: Task) -> Option<&TaskResult> {
        self.results.iter().find(|r| r.metrics.task == task)
    }
}

/// SplitMix64 finalizer, for deriving independent seeds from one.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of a task's dataset.
pub fn task_seed(seed: u64, task: Task) -> u64 {
    let tag = match task {
        Task::Demultiple => 1,
        Task::Interpolation => 2,
        Task::Denoise => 3,
    };
    derive_seed(seed, tag)
}

/// Seed of the pre-training corpus; distinct from every task seed.
pub fn corpus_seed(seed: u64) -> u64 {
    derive_seed(seed, 100)
}

/// A task dataset split 9:1 by index.
#[derive(Clone, Debug)]
pub struct SplitData {
    pub train: Vec<TaskSample>,
    pub eval: Vec<TaskSample>,
}

pub fn generate_split(cfg: &ExperimentConfig, task: Task) -> Result<SplitData> {
    let n = cfg.samples.get(task);
    let mut all = task_dataset(task, &cfg.data, n, task_seed(cfg.seed, task))?;
    let eval = all.split_off(split_index(n));
    if all.is_empty() || eval.is_empty() {
        return Err(Error::Config(format!("{n} {task} samples leave an empty train or eval split")));
    }
    Ok(SplitData { train: all, eval })
}

/// Where `run_experiment` saves a trained model.
pub fn model_path(cfg: &ExperimentConfig, name: &str, strategy: StrategyKind, task: Task) -> PathBuf {
    cfg.output_dir.join("models").join(format!("{name}-{strategy}-{task}.spck"))
}

pub fn checkpoint_path(cfg: &ExperimentConfig, name: &str) -> PathBuf {
    cfg.output_dir.join("checkpoints").join(format!("{name}.spck"))
}

fn create_dir(p: &std::path::Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// MIM pre-training of one encoder on the disjoint corpus; returns the
/// checkpoint path and the per-epoch loss.
pub fn pretrain_encoder(cfg: &ExperimentConfig, enc: &NamedEncoder) -> Result<(PathBuf, Vec<f64>)> {
    let corpus = pretraining_corpus(&cfg.data, cfg.pretrain.corpus, corpus_seed(cfg.seed))?;
    let train = TrainConfig {
        seed: cfg.seed,
        ..cfg.pretrain.train.clone()
    };
    let pt = mim_pretrain(&enc.config, &corpus, cfg.pretrain.mask_ratio, &train)?;
    let path = checkpoint_path(cfg, &enc.name);
    create_dir(path.parent().expect("checkpoint path has a parent"))?;
    save_checkpoint(&pt.encoder, &path)?;
    log::info!(
        "pre-trained {} ({} encoder / {} decoder params), loss {:.4} -> {:.4}",
        enc.name,
        pt.encoder_params,
        pt.decoder_params,
        pt.loss_history[0],
        pt.loss_history[pt.loss_history.len() - 1]
    );
    Ok((path, pt.loss_history))
}

fn run_task(
    cfg: &ExperimentConfig,
    enc: &NamedEncoder,
    strategy: &TrainingStrategy,
    task: Task,
    data: &SplitData,
) -> Result<(TaskResult, Model)> {
    let train = TrainConfig {
        seed: cfg.seed,
        ..cfg.train.clone()
    };
    let run = train_downstream(&enc.config, &cfg.decoder, strategy, &data.train, &train)?;
    let q = evaluate(&run.model, &data.eval)?;
    let (latency_s, throughput_gps) = if cfg.timing.enabled {
        let t = time_inference(
            &run.model,
            cfg.timing.batch,
            cfg.data.sample_hw(task),
            cfg.timing.warmup,
            cfg.timing.reps,
        )?;
        (t.median_latency_s, t.throughput_gps)
    } else {
        (0.0, 0.0)
    };
    let result = TaskResult {
        metrics: MetricsRecord {
            task,
            mse: q.mse,
            psnr_db: q.psnr_db,
            ssim: q.ssim,
            params_encoder: run.model.encoder_params(),
            params_total: run.model.total_params(),
            throughput_gps,
            latency_s,
        },
        train_samples: data.train.len(),
        eval_samples: data.eval.len(),
        loss_history: run.loss_history,
    };
    Ok((result, run.model))
}

fn run_row(
    cfg: &ExperimentConfig,
    enc: &NamedEncoder,
    kind: StrategyKind,
    data: &HashMap<Task, SplitData>,
    checkpoints: &mut HashMap<String, PathBuf>,
) -> Result<(Vec<TaskResult>, Option<CombinedScore>)> {
    let strategy = match kind {
        StrategyKind::Scratch => TrainingStrategy::scratch(),
        k => {
            let path = match (&cfg.pretrain.checkpoint, checkpoints.get(&enc.name)) {
                (Some(p), _) => p.clone(),
                (None, Some(p)) => p.clone(),
                (None, None) => {
                    let (p, _) = pretrain_encoder(cfg, enc)?;
                    checkpoints.insert(enc.name.clone(), p.clone());
                    p
                }
            };
            TrainingStrategy {
                kind: k,
                pretrained_checkpoint: Some(path),
            }
        }
    };
    let mut results = Vec::with_capacity(cfg.tasks.len());
    for &task in &cfg.tasks {
        let (r, model) = run_task(cfg, enc, &strategy, task, &data[&task])?;
        log::info!("{} / {kind} / {task}: ssim {:.4}, psnr {:.2} dB", enc.name, r.metrics.ssim, r.metrics.psnr_db);
        if cfg.save_models {
            let p = model_path(cfg, &enc.name, kind, task);
            create_dir(p.parent().expect("model path has a parent"))?;
            save_checkpoint(&model.store, &p)?;
        }
        results.push(r);
    }
    let combined = if Task::ALL.iter().all(|t| cfg.tasks.contains(t)) {
        let per: Vec<(Task, f64)> = results.iter().map(|r| (r.metrics.task, r.metrics.ssim)).collect();
        Some(combined_ssim(&per)?)
    } else {
        None
    };
    Ok((results, combined))
}

/// Rebuild a model saved by [`run_experiment`].
pub fn load_trained_model(cfg: &ExperimentConfig, enc: &NamedEncoder, strategy: StrategyKind, task: Task) -> Result<Model> {
    let stored = load_checkpoint(model_path(cfg, &enc.name, strategy, task))?;
    let mut model = Model::build(&enc.config, &cfg.decoder, cfg.data.sample_hw(task), cfg.seed)?;
    for p in Partition::ALL {
        model.store.load_partition(&stored, p)?;
    }
    Ok(model)
}

/// Run the encoder × strategy grid over the configured tasks. A failing
/// grid point is logged and reported with its error; the rest still run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    cfg.validate()?;
    let mut data = HashMap::new();
    for &task in &cfg.tasks {
        data.insert(task, generate_split(cfg, task)?);
    }
    let mut checkpoints = HashMap::new();
    let mut rows = Vec::with_capacity(cfg.encoders.len() * cfg.strategies.len());
    for enc in &cfg.encoders {
        for &kind in &cfg.strategies {
            let mut row = ReportRow {
                name: enc.name.clone(),
                archetype: enc.config.archetype,
                hierarchical: enc.config.archetype.is_hierarchical(),
                strategy: kind,
                results: Vec::new(),
                combined: None,
                error: None,
            };
            match run_row(cfg, enc, kind, &data, &mut checkpoints) {
                Ok((results, combined)) => {
                    row.results = results;
                    row.combined = combined;
                }
                Err(e) => {
                    log::error!("{} / {kind} failed: {e}", enc.name);
                    row.error = Some(e.to_string());
                }
            }
            rows.push(row);
        }
    }
    Ok(rows)
}
