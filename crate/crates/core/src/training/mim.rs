//! Masked-image pre-training: reconstruct the whole gather from a copy with
//! random patches zeroed, then keep only the encoder.

use rand::seq::index::sample;
use rand::Rng;

use crate::decoder::{BlockKind, Decoder, DecoderConfig, UpsampleKind};
use crate::encoders::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::{ParameterStore, Partition};
use crate::seisdata::Gather;
use crate::tensor::Tensor;

use super::{fit, gather_tensor, LossHistory, TrainConfig};

/// Edge of the square patches hidden during pre-training.
pub const MIM_PATCH: usize = 8;
pub const MIM_MASK_RATIO: f64 = 0.6;
/// Pre-training decoder size cap relative to the encoder.
const MAX_DECODER_SHARE: f64 = 0.2;

/// Per-sample mask over an `h × w` gather (`true` = hidden). Exactly
/// `round(ratio · patches)` of the `MIM_PATCH`-sized patches are hidden;
/// edge patches may be partial.
pub fn patch_mask<R: Rng>(h: usize, w: usize, ratio: f64, rng: &mut R) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!("mask ratio {ratio} outside [0, 1]")));
    }
    let (ph, pw) = (h.div_ceil(MIM_PATCH), w.div_ceil(MIM_PATCH));
    let n = ph * pw;
    let k = (ratio * n as f64).round() as usize;
    let mut mask = vec![false; h * w];
    for p in sample(rng, n, k.min(n)) {
        let (r0, c0) = ((p / pw) * MIM_PATCH, (p % pw) * MIM_PATCH);
        for r in r0..(r0 + MIM_PATCH).min(h) {
            mask[r * w + c0..r * w + (c0 + MIM_PATCH).min(w)].fill(true);
        }
    }
    Ok(mask)
}

/// Skip-free decoder reading only the coarsest stage. Level widths halve
/// toward the output like the default decoder; the widest setting whose
/// parameter count stays under a fifth of the encoder's is used.
pub fn mim_decoder_config(enc: &EncoderConfig, hw: (usize, usize)) -> Result<DecoderConfig> {
    let mut scratch = ParameterStore::<f32>::new();
    let encoder = Encoder::build(enc, hw, 0, &mut scratch)?;
    let shapes = encoder.pyramid_shapes(hw)?;
    let budget = MAX_DECODER_SHARE * encoder.num_params() as f64;
    let mut top = shapes[3][0].max(1);
    loop {
        let channels: [usize; 4] = std::array::from_fn(|s| (top >> (3 - s)).max(1));
        let cfg = DecoderConfig {
            skip_connections: false,
            block: BlockKind::ModernConv,
            upsample: UpsampleKind::Bilinear,
            bottleneck_multiplier: 1,
            head_channels: channels[0],
            channels: Some(channels),
        };
        let mut store = ParameterStore::<f32>::new();
        let dec = Decoder::build(&cfg, &shapes, hw, 0, &mut store)?;
        if (dec.num_params() as f64) < budget {
            return Ok(cfg);
        }
        if top == 1 {
            return Err(Error::Config(format!(
                "no pre-training decoder fits under {MAX_DECODER_SHARE} of the {}-parameter encoder",
                encoder.num_params()
            )));
        }
        top /= 2;
    }
}

/// The encoder plus small decoder trained by [`mim_pretrain`], at its
/// initial weights.
pub fn mim_model(enc: &EncoderConfig, hw: (usize, usize), seed: u64) -> Result<Model<f32>> {
    Model::build(enc, &mim_decoder_config(enc, hw)?, hw, seed)
}

#[derive(Clone, Debug)]
pub struct Pretrained {
    /// Encoder partition only.
    pub encoder: ParameterStore<f32>,
    pub loss_history: LossHistory,
    pub encoder_params: usize,
    pub decoder_params: usize,
}

/// ℓ1 reconstruction of each unmasked corpus gather from its masked copy.
/// A fresh mask is drawn every time a gather is visited.
pub fn mim_pretrain(enc: &EncoderConfig, corpus: &[Gather], mask_ratio: f64, cfg: &TrainConfig) -> Result<Pretrained> {
    cfg.validate()?;
    if !(0.0..=1.0).contains(&mask_ratio) {
        return Err(Error::InvalidArgument(format!("mask ratio {mask_ratio} outside [0, 1]")));
    }
    let first = corpus
        .first()
        .ok_or_else(|| Error::InvalidArgument("pre-training corpus is empty".into()))?;
    let hw = first.shape();
    if let Some(g) = corpus.iter().find(|g| g.shape() != hw) {
        return Err(Error::Shape(format!("corpus mixes gather shapes {hw:?} and {:?}", g.shape())));
    }
    let mut model = mim_model(enc, hw, cfg.seed)?;
    let pairs: Vec<(Tensor<f32>, Tensor<f32>)> = corpus
        .iter()
        .map(|g| {
            let t = gather_tensor::<f32>(g);
            (t.clone(), t)
        })
        .collect();
    let loss_history = fit(&mut model, &pairs, cfg, |rng, x| {
        let mask = patch_mask(hw.0, hw.1, mask_ratio, rng).expect("ratio checked above");
        let mut x = x.clone();
        x.data_mut().iter_mut().zip(&mask).filter(|(_, &m)| m).for_each(|(v, _)| *v = 0.0);
        x
    })?;
    Ok(Pretrained {
        encoder: model.store.subset(Partition::Encoder),
        loss_history,
        encoder_params: model.encoder_params(),
        decoder_params: model.decoder.num_params(),
    })
}
