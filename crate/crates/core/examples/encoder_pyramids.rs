//! Feature pyramids of the four encoder presets on a 64×64 gather.

use seisbench::encoders::{build_encoder, Archetype, EncoderConfig};
use seisbench::tensor::Tensor;

fn main() -> seisbench::Result<()> {
    let hw = (64, 64);
    let input = Tensor::<f32>::from_fn([hw.0, hw.1], |i| ((i % 64) as f32 * 0.3).sin());
    for arch in Archetype::ALL {
        let cfg = EncoderConfig::preset(arch);
        let (enc, store) = build_encoder::<f32>(&cfg, hw, 0)?;
        let pyramid = enc.encode(&store, &input)?;
        println!(
            "{arch:<28} params {:>8}  hierarchical {:<5}  stages {:?}",
            enc.num_params(),
            pyramid.is_hierarchical(),
            pyramid.shapes()
        );
    }
    Ok(())
}
