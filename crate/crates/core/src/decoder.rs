//! UNet-style decoder over a four-stage feature pyramid.
//!
//! Level 4 (coarsest) is the starting point. Each finer level upsamples the
//! running map 2× and, with skip connections, concatenates the adapted
//! stage embedding before a conv block. Adapters are 1×1 convolutions that
//! also upsample a stage embedding when it is coarser than its level, which
//! is how non-hierarchical pyramids are consumed. After level 1 the map is
//! projected to `head_channels` and upsampled to the output size, one conv
//! block per 2× step, then reduced to one channel by a 1×1 head.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::{StageShape, STAGES};
use crate::error::{shape_err, Error, Result};
use crate::nn::{Builder, Conv, ConvNextBlock, WeightInit};
use crate::params::{Bound, ParamId, ParameterStore, Partition};
use crate::tensor::{Graph, Real, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockKind {
    DoubleConv,
    ModernConv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpsampleKind {
    Bilinear,
    TransposedConv,
}

macro_rules! str_enum {
    ($ty:ty, $what:literal, $($var:path => $s:literal),+) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $($var => $s),+ }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.pad(self.as_str())
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($var),)+
                    other => Err(Error::Config(format!(concat!("unknown ", $what, " `{}`"), other))),
                }
            }
        }
    };
}

str_enum!(BlockKind, "decoder block", BlockKind::DoubleConv => "double-conv", BlockKind::ModernConv => "modern-conv");
str_enum!(UpsampleKind, "upsampling method", UpsampleKind::Bilinear => "bilinear", UpsampleKind::TransposedConv => "transposed-conv");

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub skip_connections: bool,
    pub block: BlockKind,
    pub upsample: UpsampleKind,
    /// Expansion of the modern block's pointwise bottleneck.
    pub bottleneck_multiplier: usize,
    pub head_channels: usize,
    /// Per-level widths, finest first. `None` derives them from the
    /// pyramid: `C_4 / 2^(4-s)`, which mirrors a channel-doubling encoder.
    pub channels: Option<[usize; STAGES]>,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            skip_connections: true,
            block: BlockKind::ModernConv,
            upsample: UpsampleKind::Bilinear,
            bottleneck_multiplier: 2,
            head_channels: 16,
            channels: None,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bottleneck_multiplier == 0 {
            return Err(Error::Config("bottleneck_multiplier must be at least 1".into()));
        }
        if self.head_channels == 0 {
            return Err(Error::Config("head_channels must be positive".into()));
        }
        if let Some(c) = self.channels {
            if c.contains(&0) {
                return Err(Error::Config(format!("decoder channels {c:?} must be positive")));
            }
        }
        Ok(())
    }

    fn level_channels(&self, shapes: &[StageShape]) -> [usize; STAGES] {
        self.channels
            .unwrap_or_else(|| std::array::from_fn(|s| (shapes[STAGES - 1][0] >> (STAGES - 1 - s)).max(1)))
    }
}

#[derive(Clone, Debug)]
enum Block {
    Double(Conv, Conv),
    Modern { proj: Option<Conv>, inner: ConvNextBlock },
}

impl Block {
    fn build<T: Real>(b: &mut Builder<'_, T>, name: &str, cfg: &DecoderConfig, c_in: usize, c_out: usize) -> Result<Self> {
        b.scope(name, |b| match cfg.block {
            BlockKind::DoubleConv => Ok(Block::Double(
                Conv::build(b, "conv1", c_in, c_out, 3, 1, 1, WeightInit::Kaiming)?,
                Conv::build(b, "conv2", c_out, c_out, 3, 1, 1, WeightInit::Kaiming)?,
            )),
            BlockKind::ModernConv => Ok(Block::Modern {
                proj: if c_in != c_out {
                    Some(Conv::build(b, "proj", c_in, c_out, 1, 1, 0, WeightInit::Kaiming)?)
                } else {
                    None
                },
                inner: ConvNextBlock::build(b, "convnext", c_out, cfg.bottleneck_multiplier)?,
            }),
        })
    }

    fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        match self {
            Block::Double(c1, c2) => {
                let y = c1.forward(g, p, x)?;
                let y = g.gelu(y);
                let y = c2.forward(g, p, y)?;
                Ok(g.gelu(y))
            }
            Block::Modern { proj, inner } => {
                let x = match proj {
                    Some(c) => c.forward(g, p, x)?,
                    None => x,
                };
                inner.forward(g, p, x)
            }
        }
    }
}

#[derive(Clone, Debug)]
struct Upsampler {
    /// Transposed-conv weights and bias; `None` for bilinear.
    params: Option<(ParamId, ParamId)>,
}

impl Upsampler {
    fn build<T: Real>(b: &mut Builder<'_, T>, name: &str, kind: UpsampleKind, c: usize) -> Result<Self> {
        let params = match kind {
            UpsampleKind::Bilinear => None,
            UpsampleKind::TransposedConv => Some(b.scope(name, |b| {
                Ok((
                    b.param("w", &[c, c, 2, 2], crate::params::Init::Kaiming { fan_in: c })?,
                    b.param("b", &[c], crate::params::Init::Zeros)?,
                ))
            })?),
        };
        Ok(Upsampler { params })
    }

    fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        match self.params {
            None => g.upsample2x(x),
            Some((w, b)) => g.conv_transpose2x(x, p.var(w), Some(p.var(b))),
        }
    }
}

#[derive(Clone, Debug)]
struct Adapter {
    stage: usize,
    conv: Conv,
    ups: Vec<Upsampler>,
}

#[derive(Clone, Debug)]
struct Level {
    up: Option<Upsampler>,
    block: Block,
}

/// Runtime state of a built decoder: `θ_D` lives in the store under `dec.*`.
#[derive(Clone, Debug)]
pub struct Decoder {
    config: DecoderConfig,
    pyramid: Vec<StageShape>,
    output_hw: (usize, usize),
    adapters: Vec<Adapter>,
    /// Levels 4, 3, 2, 1 in execution order.
    levels: Vec<Level>,
    proj: Conv,
    post: Vec<(Upsampler, Block)>,
    head: Conv,
    num_params: usize,
}

const DECODER_STREAM: u64 = 2;

/// Number of 2× steps bridging `from` to `to`, if `to = from · 2^k`.
fn doublings(from: usize, to: usize) -> Option<usize> {
    if from == 0 || to < from || to % from != 0 || !(to / from).is_power_of_two() {
        return None;
    }
    Some((to / from).trailing_zeros() as usize)
}

impl Decoder {
    pub fn build<T: Real>(
        config: &DecoderConfig,
        pyramid: &[StageShape],
        output_hw: (usize, usize),
        seed: u64,
        store: &mut ParameterStore<T>,
    ) -> Result<Self> {
        config.validate()?;
        if pyramid.len() != STAGES {
            return Err(Error::Config(format!("decoder needs {STAGES} pyramid stages, got {}", pyramid.len())));
        }
        let ch = config.level_channels(pyramid);
        let [_, h4, w4] = pyramid[STAGES - 1];
        // Level s (0-based) runs at the coarsest resolution times 2^(3-s).
        let level_hw = |s: usize| (h4 << (STAGES - 1 - s), w4 << (STAGES - 1 - s));
        let consumed: Vec<usize> = if config.skip_connections {
            (0..STAGES).collect()
        } else {
            vec![STAGES - 1]
        };
        let mut adapter_ups = Vec::new();
        for &s in &consumed {
            let [_, hs, ws] = pyramid[s];
            let (lh, lw) = level_hw(s);
            match (doublings(hs, lh), doublings(ws, lw)) {
                (Some(a), Some(b)) if a == b => adapter_ups.push(a),
                _ => {
                    return Err(Error::Config(format!(
                        "stage {} ({hs}x{ws}) cannot be brought to decoder level size {lh}x{lw} by 2x upsampling",
                        s + 1
                    )))
                }
            }
        }
        let (l1h, l1w) = level_hw(0);
        let post_steps = match (doublings(l1h, output_hw.0), doublings(l1w, output_hw.1)) {
            (Some(a), Some(b)) if a == b => a,
            _ => {
                return Err(Error::Config(format!(
                    "finest decoder level {l1h}x{l1w} cannot reach output {}x{} by 2x upsampling",
                    output_hw.0, output_hw.1
                )))
            }
        };

        let before = store.count(Partition::Decoder);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(DECODER_STREAM);
        let mut b = Builder::new(store, rng, Partition::Decoder, "dec");

        let mut adapters = Vec::with_capacity(consumed.len());
        for (&s, &ups) in consumed.iter().zip(&adapter_ups) {
            adapters.push(b.scope(format!("adapter{}", s + 1), |b| {
                Ok(Adapter {
                    stage: s,
                    conv: Conv::build(b, "conv", pyramid[s][0], ch[s], 1, 1, 0, WeightInit::Kaiming)?,
                    ups: (0..ups)
                        .map(|i| Upsampler::build(b, &format!("up{i}"), config.upsample, ch[s]))
                        .collect::<Result<_>>()?,
                })
            })?);
        }

        let mut levels = Vec::with_capacity(STAGES);
        for s in (0..STAGES).rev() {
            levels.push(b.scope(format!("level{}", s + 1), |b| {
                if s == STAGES - 1 {
                    return Ok(Level {
                        up: None,
                        block: Block::build(b, "block", config, ch[s], ch[s])?,
                    });
                }
                let c_prev = ch[s + 1];
                let c_in = if config.skip_connections { c_prev + ch[s] } else { c_prev };
                Ok(Level {
                    up: Some(Upsampler::build(b, "up", config.upsample, c_prev)?),
                    block: Block::build(b, "block", config, c_in, ch[s])?,
                })
            })?);
        }

        let hc = config.head_channels;
        let proj = Conv::build(&mut b, "proj", ch[0], hc, 1, 1, 0, WeightInit::Kaiming)?;
        let post = (0..post_steps)
            .map(|i| {
                b.scope(format!("post{i}"), |b| {
                    Ok((Upsampler::build(b, "up", config.upsample, hc)?, Block::build(b, "block", config, hc, hc)?))
                })
            })
            .collect::<Result<_>>()?;
        let head = Conv::build(&mut b, "head", hc, 1, 1, 1, 0, WeightInit::Small)?;
        let num_params = store.count(Partition::Decoder) - before;
        Ok(Decoder {
            config: config.clone(),
            pyramid: pyramid.to_vec(),
            output_hw,
            adapters,
            levels,
            proj,
            post,
            head,
            num_params,
        })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    pub fn num_params(&self) -> usize {
        self.num_params
    }

    pub fn output_hw(&self) -> (usize, usize) {
        self.output_hw
    }

    pub fn adapter_count(&self) -> usize {
        self.adapters.len()
    }

    /// Pyramid stages (0-based) the decoder reads.
    pub fn consumed_stages(&self) -> Vec<usize> {
        self.adapters.iter().map(|a| a.stage).collect()
    }

    /// 2× upsampling steps from the coarsest level to the output.
    pub fn upsampling_steps(&self) -> usize {
        (STAGES - 1) + self.post.len()
    }

    /// Parameter id of the 1×1 output head (weights, bias).
    pub fn head_params(&self) -> (ParamId, ParamId) {
        (self.head.w, self.head.b)
    }

    /// Record the decoder on `g`; returns a `[1, H, W]` prediction.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, pyramid: &[Var]) -> Result<Var> {
        if pyramid.len() != STAGES {
            return Err(shape_err!("decoder expects {STAGES} embeddings, got {}", pyramid.len()));
        }
        for (s, (&v, expect)) in pyramid.iter().zip(&self.pyramid).enumerate() {
            if g.shape(v) != expect {
                return Err(shape_err!(
                    "stage {} embedding has shape {:?}, decoder was built for {:?}",
                    s + 1,
                    g.shape(v),
                    expect
                ));
            }
        }
        let mut adapted: [Option<Var>; STAGES] = [None; STAGES];
        for a in &self.adapters {
            let mut x = a.conv.forward(g, p, pyramid[a.stage])?;
            for up in &a.ups {
                x = up.forward(g, p, x)?;
            }
            adapted[a.stage] = Some(x);
        }
        let mut x = adapted[STAGES - 1].expect("stage 4 is always consumed");
        for (i, level) in self.levels.iter().enumerate() {
            let s = STAGES - 1 - i;
            if let Some(up) = &level.up {
                x = up.forward(g, p, x)?;
                if let Some(skip) = adapted[s] {
                    x = g.concat0(&[x, skip])?;
                }
            }
            x = level.block.forward(g, p, x)?;
        }
        x = self.proj.forward(g, p, x)?;
        for (up, block) in &self.post {
            x = up.forward(g, p, x)?;
            x = block.forward(g, p, x)?;
        }
        self.head.forward(g, p, x)
    }
}

/// Build a decoder into its own store.
pub fn build_decoder<T: Real>(
    config: &DecoderConfig,
    pyramid: &[StageShape],
    output_hw: (usize, usize),
    seed: u64,
) -> Result<(Decoder, ParameterStore<T>)> {
    let mut store = ParameterStore::new();
    let dec = Decoder::build(config, pyramid, output_hw, seed, &mut store)?;
    Ok((dec, store))
}

/// Closed-form parameter count of one decoder block.
pub fn block_param_count(kind: BlockKind, c_in: usize, c_out: usize, multiplier: usize) -> usize {
    match kind {
        BlockKind::DoubleConv => (9 * c_in * c_out + c_out) + (9 * c_out * c_out + c_out),
        BlockKind::ModernConv => {
            let k = ConvNextBlock::KERNEL;
            let proj = if c_in != c_out { c_in * c_out + c_out } else { 0 };
            let e = multiplier * c_out;
            proj + (k * k * c_out + c_out) + 2 * c_out + (c_out * e + e) + (e * c_out + c_out)
        }
    }
}
