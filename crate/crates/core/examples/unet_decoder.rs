//! Decoder variants on the conv-hierarchical encoder: skips, block type, upsampling.

use seisbench::decoder::{BlockKind, DecoderConfig, UpsampleKind};
use seisbench::encoders::EncoderConfig;
use seisbench::model::Model;
use seisbench::tensor::Tensor;

fn main() -> seisbench::Result<()> {
    let enc = EncoderConfig::conv_hierarchical();
    let input = Tensor::<f32>::from_fn([64, 64], |i| ((i * 7 % 13) as f32 - 6.0) / 6.0);
    for skip in [true, false] {
        for block in [BlockKind::ModernConv, BlockKind::DoubleConv] {
            for upsample in [UpsampleKind::Bilinear, UpsampleKind::TransposedConv] {
                let dec = DecoderConfig {
                    skip_connections: skip,
                    block,
                    upsample,
                    ..DecoderConfig::default()
                };
                let model = Model::<f32>::build(&enc, &dec, (64, 64), 0)?;
                let out = model.predict(&input)?;
                println!(
                    "skip {skip:<5} {:<12} {:<16} decoder params {:>7}  output {:?}",
                    block.as_str(),
                    upsample.as_str(),
                    model.total_params() - model.encoder_params(),
                    out.shape()
                );
            }
        }
    }
    Ok(())
}
