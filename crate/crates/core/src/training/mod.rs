//! Losses, AdamW, masked-image pre-training and downstream training.

mod checkpoint;
mod mim;
mod optim;

use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::DecoderConfig;
use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::{ParameterStore, Partition};
use crate::seisdata::{Gather, TaskSample};
use crate::tensor::{Graph, Real, Tensor};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use mim::{mim_decoder_config, mim_model, mim_pretrain, patch_mask, Pretrained, MIM_MASK_RATIO, MIM_PATCH};
pub use optim::AdamW;

/// Mean absolute difference of two gathers.
pub fn l1_loss(pred: &Gather, target: &Gather) -> Result<f64> {
    let d = pred.zip_with(target, |a, b| (a - b).abs())?;
    Ok(d.samples().iter().sum::<f64>() / d.samples().len() as f64)
}

/// Mean squared difference of two gathers.
pub fn l2_loss(pred: &Gather, target: &Gather) -> Result<f64> {
    let d = pred.zip_with(target, |a, b| (a - b) * (a - b))?;
    Ok(d.samples().iter().sum::<f64>() / d.samples().len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    #[default]
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub epochs: usize,
    /// Samples per optimizer step; gradients are averaged over the batch.
    pub batch: usize,
    pub seed: u64,
    pub schedule: Schedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            weight_decay: 0.01,
            betas: (0.9, 0.999),
            eps: 1e-8,
            epochs: 50,
            batch: 8,
            seed: 0,
            schedule: Schedule::Constant,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch == 0 {
            return bad("batch must be at least 1".into());
        }
        if !(self.weight_decay >= 0.0) || !(self.eps > 0.0) {
            return bad("weight_decay must be non-negative and eps positive".into());
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return bad(format!("betas must lie in [0, 1), got {:?}", self.betas));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    /// Decoder only; encoder weights come from a checkpoint and never change.
    Frozen,
    /// Encoder initialized from a checkpoint, both partitions trained.
    FineTuned,
    /// Seeded random init, both partitions trained.
    Scratch,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 3] = [StrategyKind::Frozen, StrategyKind::FineTuned, StrategyKind::Scratch];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Frozen => "frozen",
            StrategyKind::FineTuned => "fine-tuned",
            StrategyKind::Scratch => "scratch",
        }
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frozen" => Ok(StrategyKind::Frozen),
            "fine-tuned" | "finetuned" | "fine_tuned" => Ok(StrategyKind::FineTuned),
            "scratch" => Ok(StrategyKind::Scratch),
            _ => Err(Error::Config(format!("unknown training strategy `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingStrategy {
    pub kind: StrategyKind,
    pub pretrained_checkpoint: Option<PathBuf>,
}

impl TrainingStrategy {
    pub fn scratch() -> Self {
        TrainingStrategy {
            kind: StrategyKind::Scratch,
            pretrained_checkpoint: None,
        }
    }

    pub fn frozen(checkpoint: impl Into<PathBuf>) -> Self {
        TrainingStrategy {
            kind: StrategyKind::Frozen,
            pretrained_checkpoint: Some(checkpoint.into()),
        }
    }

    pub fn fine_tuned(checkpoint: impl Into<PathBuf>) -> Self {
        TrainingStrategy {
            kind: StrategyKind::FineTuned,
            pretrained_checkpoint: Some(checkpoint.into()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind, &self.pretrained_checkpoint) {
            (StrategyKind::Scratch, Some(p)) => Err(Error::Config(format!(
                "scratch training takes no checkpoint, got {}",
                p.display()
            ))),
            (k, None) if k != StrategyKind::Scratch => Err(Error::Config(format!("{k} training needs a checkpoint"))),
            _ => Ok(()),
        }
    }
}

pub(crate) fn gather_tensor<T: Real>(g: &Gather) -> Tensor<T> {
    let (h, w) = g.shape();
    Tensor::new(vec![1, h, w], g.samples().iter().map(|&v| T::from_f64_lossy(v)).collect())
        .expect("gather shape matches its samples")
}

/// Mean ℓ1 loss of each epoch, in order.
pub type LossHistory = Vec<f64>;

#[derive(Clone, Debug)]
pub struct TrainRun<T: Real = f32> {
    pub model: Model<T>,
    pub loss_history: LossHistory,
}

/// Shared loop: per epoch, shuffle, then one AdamW step per batch of
/// `(input, target)` pairs with gradients averaged over the batch.
pub(crate) fn fit<T: Real>(
    model: &mut Model<T>,
    pairs: &[(Tensor<T>, Tensor<T>)],
    cfg: &TrainConfig,
    mut prepare: impl FnMut(&mut ChaCha8Rng, &Tensor<T>) -> Tensor<T>,
) -> Result<LossHistory> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(3);
    let mut opt = AdamW::new();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch) {
            let mut acc: Vec<Option<Tensor<T>>> = vec![None; model.store.len()];
            for &i in batch {
                let (x, y) = &pairs[i];
                let x = prepare(&mut rng, x);
                let mut g = Graph::new();
                let p = model.store.bind(&mut g);
                let xv = g.constant(x);
                let yv = g.constant(y.clone());
                let pred = model.forward(&mut g, &p, xv)?;
                let loss = g.l1_loss(pred, yv)?;
                total += g.value(loss).item()?.as_f64();
                g.backward(loss)?;
                for (slot, grad) in acc.iter_mut().zip(p.grads(&g)) {
                    match (slot.as_mut(), grad) {
                        (Some(s), Some(gr)) => s.data_mut().iter_mut().zip(gr.data()).for_each(|(a, &b)| *a += b),
                        (None, Some(gr)) => *slot = Some(gr),
                        _ => {}
                    }
                }
            }
            let inv = T::from_f64_lossy(1.0 / batch.len() as f64);
            for s in acc.iter_mut().flatten() {
                s.data_mut().iter_mut().for_each(|v| *v *= inv);
            }
            opt.step(&mut model.store, &acc, cfg)?;
        }
        let mean = total / pairs.len() as f64;
        log::info!("epoch {}/{}: loss {mean:.5}", epoch + 1, cfg.epochs);
        history.push(mean);
    }
    Ok(history)
}

/// Build the model a strategy starts from: fresh weights, with the encoder
/// replaced by the checkpoint for frozen and fine-tuned training.
pub fn initial_model(
    enc: &EncoderConfig,
    dec: &DecoderConfig,
    strategy: &TrainingStrategy,
    hw: (usize, usize),
    seed: u64,
) -> Result<Model<f32>> {
    strategy.validate()?;
    let mut model = Model::build(enc, dec, hw, seed)?;
    if let Some(path) = &strategy.pretrained_checkpoint {
        let ckpt: ParameterStore<f32> = load_checkpoint(path)?;
        model.store.load_partition(&ckpt, Partition::Encoder)?;
    }
    model.store.set_trainable(Partition::Encoder, strategy.kind != StrategyKind::Frozen);
    model.store.set_trainable(Partition::Decoder, true);
    Ok(model)
}

/// Supervised ℓ1 training of an encoder-decoder on `dataset`.
pub fn train_downstream(
    enc: &EncoderConfig,
    dec: &DecoderConfig,
    strategy: &TrainingStrategy,
    dataset: &[TaskSample],
    cfg: &TrainConfig,
) -> Result<TrainRun> {
    cfg.validate()?;
    let first = dataset
        .first()
        .ok_or_else(|| Error::InvalidArgument("training set is empty".into()))?;
    let hw = first.input.shape();
    if let Some(s) = dataset.iter().find(|s| s.input.shape() != hw) {
        return Err(Error::Shape(format!(
            "training samples mix shapes {hw:?} and {:?}",
            s.input.shape()
        )));
    }
    let mut model = initial_model(enc, dec, strategy, hw, cfg.seed)?;
    let pairs: Vec<_> = dataset
        .iter()
        .map(|s| (gather_tensor::<f32>(&s.input), gather_tensor::<f32>(&s.label)))
        .collect();
    let loss_history = fit(&mut model, &pairs, cfg, |_, x| x.clone())?;
    Ok(TrainRun { model, loss_history })
}
