//! Encoder archetypes producing a four-stage feature pyramid.
//!
//! Hierarchical archetypes halve the resolution between stages; the
//! global-attention archetype keeps one resolution and taps four
//! intermediate trunk outputs instead.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::nn::{chw_to_tokens, sincos_position, tokens_to_chw, AttentionBlock, Builder, Conv, ConvNextBlock, LayerNorm, WeightInit};
use crate::params::{Bound, ParameterStore, Partition};
use crate::tensor::{Graph, Real, Tensor, Var};

pub const STAGES: usize = 4;

/// Shape `(C, H, W)` of one pyramid stage.
pub type StageShape = [usize; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Archetype {
    ConvHierarchical,
    WindowedAttnHierarchical,
    GlobalAttnNonhierarchical,
    HybridHierarchical,
}

impl Archetype {
    pub const ALL: [Archetype; 4] = [
        Archetype::ConvHierarchical,
        Archetype::WindowedAttnHierarchical,
        Archetype::GlobalAttnNonhierarchical,
        Archetype::HybridHierarchical,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Archetype::ConvHierarchical => "conv-hierarchical",
            Archetype::WindowedAttnHierarchical => "windowed-attn-hierarchical",
            Archetype::GlobalAttnNonhierarchical => "global-attn-nonhierarchical",
            Archetype::HybridHierarchical => "hybrid-hierarchical",
        }
    }

    pub fn is_hierarchical(self) -> bool {
        !matches!(self, Archetype::GlobalAttnNonhierarchical)
    }
}

impl fmt::Display for Archetype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Archetype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Archetype::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown encoder archetype `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub archetype: Archetype,
    pub stage_channels: [usize; STAGES],
    /// Blocks per stage. For the global-attention trunk these are summed
    /// into the trunk depth.
    pub stage_depths: [usize; STAGES],
    pub patch_stride: usize,
    /// Attention window edge (windowed archetype only).
    pub window: usize,
    /// 1-based trunk block indices whose outputs form the pyramid
    /// (global-attention archetype only).
    pub tap_layers: [usize; STAGES],
}

impl EncoderConfig {
    pub fn conv_hierarchical() -> Self {
        EncoderConfig {
            archetype: Archetype::ConvHierarchical,
            stage_channels: [16, 32, 64, 128],
            stage_depths: [2, 2, 4, 2],
            patch_stride: 4,
            window: 4,
            tap_layers: [0; STAGES],
        }
    }

    pub fn windowed_attention() -> Self {
        EncoderConfig {
            archetype: Archetype::WindowedAttnHierarchical,
            stage_channels: [16, 32, 64, 128],
            stage_depths: [2, 2, 4, 2],
            patch_stride: 4,
            window: 4,
            tap_layers: [0; STAGES],
        }
    }

    /// Depth-6 trunk, taps after blocks ⌈i·6/4⌉.
    pub fn global_attention() -> Self {
        EncoderConfig {
            archetype: Archetype::GlobalAttnNonhierarchical,
            stage_channels: [64; STAGES],
            stage_depths: [2, 1, 2, 1],
            patch_stride: 8,
            window: 0,
            tap_layers: default_taps(6),
        }
    }

    /// Convolutional stages 1–2, global-attention stages 3–4.
    pub fn hybrid() -> Self {
        EncoderConfig {
            archetype: Archetype::HybridHierarchical,
            stage_channels: [16, 32, 64, 128],
            stage_depths: [2, 2, 2, 2],
            patch_stride: 4,
            window: 0,
            tap_layers: [0; STAGES],
        }
    }

    pub fn preset(archetype: Archetype) -> Self {
        match archetype {
            Archetype::ConvHierarchical => Self::conv_hierarchical(),
            Archetype::WindowedAttnHierarchical => Self::windowed_attention(),
            Archetype::GlobalAttnNonhierarchical => Self::global_attention(),
            Archetype::HybridHierarchical => Self::hybrid(),
        }
    }

    pub fn trunk_depth(&self) -> usize {
        self.stage_depths.iter().sum()
    }

    /// Spatial reduction of stage `s` (0-based).
    pub fn stage_stride(&self, s: usize) -> usize {
        if self.archetype.is_hierarchical() {
            self.patch_stride << s
        } else {
            self.patch_stride
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.patch_stride == 0 {
            return err("patch_stride must be positive".into());
        }
        if self.stage_channels.contains(&0) || self.stage_depths.contains(&0) {
            return err(format!(
                "stage channels {:?} and depths {:?} must be positive",
                self.stage_channels, self.stage_depths
            ));
        }
        match self.archetype {
            Archetype::WindowedAttnHierarchical if self.window == 0 => {
                err("windowed attention needs a positive window".into())
            }
            Archetype::GlobalAttnNonhierarchical => {
                let dim = self.stage_channels[0];
                if self.stage_channels.iter().any(|&c| c != dim) {
                    return err(format!(
                        "global-attention trunk has one width; got stage channels {:?}",
                        self.stage_channels
                    ));
                }
                let depth = self.trunk_depth();
                let taps = self.tap_layers;
                if taps[0] == 0 || taps.windows(2).any(|p| p[0] >= p[1]) || taps[3] > depth {
                    return err(format!(
                        "tap layers {taps:?} must be strictly increasing within 1..={depth}"
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Taps after blocks ⌈i·depth/4⌉ for i = 1..4.
pub fn default_taps(depth: usize) -> [usize; STAGES] {
    std::array::from_fn(|i| ((i + 1) * depth).div_ceil(STAGES))
}

/// False iff every stage shares one spatial size.
pub fn is_hierarchical(shapes: &[StageShape]) -> bool {
    shapes
        .windows(2)
        .any(|p| p[0][1] != p[1][1] || p[0][2] != p[1][2])
}

/// The four stage embeddings `(C_s, H_s, W_s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid<T: Real = f32> {
    pub embeddings: Vec<Tensor<T>>,
}

impl<T: Real> FeaturePyramid<T> {
    pub fn shapes(&self) -> Vec<StageShape> {
        self.embeddings
            .iter()
            .map(|e| {
                let s = e.shape();
                [s[0], s[1], s[2]]
            })
            .collect()
    }

    pub fn is_hierarchical(&self) -> bool {
        is_hierarchical(&self.shapes())
    }
}

#[derive(Clone, Debug)]
enum StageBody {
    Conv(Vec<ConvNextBlock>),
    Attn {
        blocks: Vec<AttentionBlock>,
        norm: LayerNorm,
    },
}

#[derive(Clone, Debug)]
struct Stage {
    down: Option<(LayerNorm, Conv)>,
    body: StageBody,
}

#[derive(Clone, Debug)]
enum Body {
    Hierarchical {
        stem: Conv,
        stem_norm: LayerNorm,
        stages: Vec<Stage>,
    },
    Trunk {
        stem: Conv,
        blocks: Vec<AttentionBlock>,
        tap_norms: Vec<LayerNorm>,
    },
}

#[derive(Clone, Debug)]
pub struct Encoder {
    config: EncoderConfig,
    input_hw: (usize, usize),
    body: Body,
    num_params: usize,
}

/// Seed stream for encoder initialization.
const ENCODER_STREAM: u64 = 1;

impl Encoder {
    /// Register a freshly initialized encoder in `store` under `enc.*`.
    pub fn build<T: Real>(
        config: &EncoderConfig,
        input_hw: (usize, usize),
        seed: u64,
        store: &mut ParameterStore<T>,
    ) -> Result<Self> {
        config.validate()?;
        check_geometry(config, input_hw).map_err(|e| match e {
            Error::Shape(m) => Error::Config(m),
            other => other,
        })?;
        let before = store.count(Partition::Encoder);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(ENCODER_STREAM);
        let mut b = Builder::new(store, rng, Partition::Encoder, "enc");
        let ch = config.stage_channels;
        let p = config.patch_stride;
        let body = match config.archetype {
            Archetype::GlobalAttnNonhierarchical => {
                let stem = Conv::build(&mut b, "stem", 1, ch[0], p, p, 0, WeightInit::Small)?;
                let blocks = (0..config.trunk_depth())
                    .map(|i| AttentionBlock::build(&mut b, &format!("block{i}"), ch[0], None, false))
                    .collect::<Result<_>>()?;
                let tap_norms = (0..STAGES)
                    .map(|i| LayerNorm::build(&mut b, &format!("tap{i}.norm"), ch[0]))
                    .collect::<Result<_>>()?;
                Body::Trunk { stem, blocks, tap_norms }
            }
            arch => {
                let stem = Conv::build(&mut b, "stem", 1, ch[0], p, p, 0, WeightInit::Small)?;
                let stem_norm = LayerNorm::build(&mut b, "stem.norm", ch[0])?;
                let mut stages = Vec::with_capacity(STAGES);
                for s in 0..STAGES {
                    let stage = b.scope(format!("stage{s}"), |b| {
                        let down = if s == 0 {
                            None
                        } else {
                            Some((
                                LayerNorm::build(b, "down.norm", ch[s - 1])?,
                                Conv::build(b, "down", ch[s - 1], ch[s], 2, 2, 0, WeightInit::Small)?,
                            ))
                        };
                        let attn = match arch {
                            Archetype::WindowedAttnHierarchical => Some(Some(config.window)),
                            Archetype::HybridHierarchical if s >= 2 => Some(None),
                            _ => None,
                        };
                        let body = match attn {
                            None => StageBody::Conv(
                                (0..config.stage_depths[s])
                                    .map(|i| ConvNextBlock::build(b, &format!("block{i}"), ch[s], 4))
                                    .collect::<Result<_>>()?,
                            ),
                            Some(window) => StageBody::Attn {
                                blocks: (0..config.stage_depths[s])
                                    .map(|i| AttentionBlock::build(b, &format!("block{i}"), ch[s], window, i % 2 == 1))
                                    .collect::<Result<_>>()?,
                                norm: LayerNorm::build(b, "norm", ch[s])?,
                            },
                        };
                        Ok(Stage { down, body })
                    })?;
                    stages.push(stage);
                }
                Body::Hierarchical {
                    stem,
                    stem_norm,
                    stages,
                }
            }
        };
        let num_params = store.count(Partition::Encoder) - before;
        Ok(Encoder {
            config: config.clone(),
            input_hw,
            body,
            num_params,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn input_hw(&self) -> (usize, usize) {
        self.input_hw
    }

    pub fn num_params(&self) -> usize {
        self.num_params
    }

    /// Stage shapes the encoder emits for an `h × w` input.
    pub fn pyramid_shapes(&self, hw: (usize, usize)) -> Result<Vec<StageShape>> {
        check_geometry(&self.config, hw)?;
        Ok((0..STAGES)
            .map(|s| {
                let st = self.config.stage_stride(s);
                [self.config.stage_channels[s], hw.0 / st, hw.1 / st]
            })
            .collect())
    }

    /// Record the encoder on `g` for a `[1, H, W]` input.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Vec<Var>> {
        let (_, h, w) = g.value(x).chw()?;
        check_geometry(&self.config, (h, w))?;
        match &self.body {
            Body::Hierarchical {
                stem,
                stem_norm,
                stages,
            } => {
                let mut x = stem.forward(g, p, x)?;
                x = stem_norm.forward_chw(g, p, x)?;
                let mut outs = Vec::with_capacity(STAGES);
                for stage in stages {
                    if let Some((norm, down)) = &stage.down {
                        x = norm.forward_chw(g, p, x)?;
                        x = down.forward(g, p, x)?;
                    }
                    match &stage.body {
                        StageBody::Conv(blocks) => {
                            for blk in blocks {
                                x = blk.forward(g, p, x)?;
                            }
                            outs.push(x);
                        }
                        StageBody::Attn { blocks, norm } => {
                            let (c, hs, ws) = g.value(x).chw()?;
                            let mut t = chw_to_tokens(g, x)?;
                            for blk in blocks {
                                t = blk.forward(g, p, t, hs, ws)?;
                            }
                            x = tokens_to_chw(g, t, c, hs, ws)?;
                            let o = norm.forward(g, p, t)?;
                            outs.push(tokens_to_chw(g, o, c, hs, ws)?);
                        }
                    }
                }
                Ok(outs)
            }
            Body::Trunk {
                stem,
                blocks,
                tap_norms,
            } => {
                let x = stem.forward(g, p, x)?;
                let (c, hs, ws) = g.value(x).chw()?;
                let mut t = chw_to_tokens(g, x)?;
                let pos = g.constant(sincos_position(hs, ws, c));
                t = g.add(t, pos)?;
                let mut outs = Vec::with_capacity(STAGES);
                let mut next_tap = 0;
                for (i, blk) in blocks.iter().enumerate() {
                    t = blk.forward(g, p, t, hs, ws)?;
                    if next_tap < STAGES && self.config.tap_layers[next_tap] == i + 1 {
                        let o = tap_norms[next_tap].forward(g, p, t)?;
                        outs.push(tokens_to_chw(g, o, c, hs, ws)?);
                        next_tap += 1;
                    }
                }
                Ok(outs)
            }
        }
    }

    /// Evaluate the pyramid for one gather (no gradient tracking).
    pub fn encode<T: Real>(&self, store: &ParameterStore<T>, gather: &Tensor<T>) -> Result<FeaturePyramid<T>> {
        let input = as_chw(gather)?;
        let mut frozen = store.clone();
        frozen.set_trainable(Partition::Encoder, false);
        frozen.set_trainable(Partition::Decoder, false);
        let mut g = Graph::new();
        let p = frozen.bind(&mut g);
        let x = g.constant(input);
        let outs = self.forward(&mut g, &p, x)?;
        Ok(FeaturePyramid {
            embeddings: outs.into_iter().map(|v| g.value(v).clone()).collect(),
        })
    }
}

/// Build an encoder into its own store.
pub fn build_encoder<T: Real>(
    config: &EncoderConfig,
    input_hw: (usize, usize),
    seed: u64,
) -> Result<(Encoder, ParameterStore<T>)> {
    let mut store = ParameterStore::new();
    let enc = Encoder::build(config, input_hw, seed, &mut store)?;
    Ok((enc, store))
}

/// `[H, W]` or `[1, H, W]` → `[1, H, W]`.
pub(crate) fn as_chw<T: Real>(gather: &Tensor<T>) -> Result<Tensor<T>> {
    match gather.shape() {
        &[h, w] => gather.clone().reshape([1, h, w]),
        &[1, _, _] => Ok(gather.clone()),
        s => Err(shape_err!("expected a gather [H, W] or [1, H, W], got {:?}", s)),
    }
}

fn check_geometry(config: &EncoderConfig, (h, w): (usize, usize)) -> Result<()> {
    for s in 0..STAGES {
        let st = config.stage_stride(s);
        if h == 0 || w == 0 || h % st != 0 || w % st != 0 {
            return Err(shape_err!(
                "stage {} needs input dims divisible by its stride {st}; got {h}x{w}",
                s + 1
            ));
        }
        if config.archetype == Archetype::WindowedAttnHierarchical {
            let (hs, ws) = (h / st, w / st);
            let (wh, ww) = (config.window.min(hs), config.window.min(ws));
            if hs % wh != 0 || ws % ww != 0 {
                return Err(shape_err!(
                    "stage {}: window {} does not divide the {hs}x{ws} stage grid",
                    s + 1,
                    config.window
                ));
            }
        }
    }
    Ok(())
}
