//! Encoder and decoder composed over one parameter store.

use crate::decoder::{Decoder, DecoderConfig};
use crate::encoders::{as_chw, Encoder, EncoderConfig};
use crate::error::Result;
use crate::params::{Bound, ParameterStore, Partition};
use crate::tensor::{Graph, Real, Tensor, Var};

#[derive(Clone, Debug)]
pub struct Model<T: Real = f32> {
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub store: ParameterStore<T>,
}

impl<T: Real> Model<T> {
    /// Fresh encoder-decoder for `hw` gathers. Encoder and decoder draw from
    /// separate seed streams.
    pub fn build(enc: &EncoderConfig, dec: &DecoderConfig, hw: (usize, usize), seed: u64) -> Result<Self> {
        let mut store = ParameterStore::new();
        let encoder = Encoder::build(enc, hw, seed, &mut store)?;
        let shapes = encoder.pyramid_shapes(hw)?;
        let decoder = Decoder::build(dec, &shapes, hw, seed, &mut store)?;
        Ok(Model {
            encoder,
            decoder,
            store,
        })
    }

    pub fn input_hw(&self) -> (usize, usize) {
        self.decoder.output_hw()
    }

    /// `[1, H, W]` → `[1, H, W]`.
    pub fn forward(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let pyramid = self.encoder.forward(g, p, x)?;
        self.decoder.forward(g, p, &pyramid)
    }

    /// Inference on one `[H, W]` gather; returns `[H, W]`.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let x = as_chw(input)?;
        let (_, h, w) = x.chw()?;
        let mut g = Graph::new();
        let p = self.store.bind_constants(&mut g);
        let xv = g.constant(x);
        let y = self.forward(&mut g, &p, xv)?;
        g.value(y).clone().reshape([h, w])
    }

    pub fn encoder_params(&self) -> usize {
        self.store.count(Partition::Encoder)
    }

    pub fn total_params(&self) -> usize {
        self.store.total_count()
    }
}
