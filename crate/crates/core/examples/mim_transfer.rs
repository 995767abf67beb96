//! Masked-image pre-training, then frozen, fine-tuned and scratch runs on interpolation.

use seisbench::bench::{corpus_seed, generate_split, ExperimentConfig};
use seisbench::metrics::evaluate;
use seisbench::seisdata::{pretraining_corpus, Task};
use seisbench::training::*;

fn main() -> seisbench::Result<()> {
    let mut cfg = ExperimentConfig::tiny(0);
    cfg.train.epochs = 5;
    cfg.samples.interpolation = 30;
    let enc = &cfg.encoders[0].config;

    let corpus = pretraining_corpus(&cfg.data, 16, corpus_seed(cfg.seed))?;
    let mut pre_cfg = cfg.pretrain.train.clone();
    pre_cfg.epochs = 5;
    let pre = mim_pretrain(enc, &corpus, MIM_MASK_RATIO, &pre_cfg)?;
    println!(
        "MIM loss {:.4} -> {:.4} (encoder {} params, throwaway decoder {})",
        pre.loss_history[0],
        pre.loss_history.last().unwrap(),
        pre.encoder_params,
        pre.decoder_params
    );
    let ck = std::env::temp_dir().join("seisbench-example-encoder.spck");
    save_checkpoint(&pre.encoder, &ck)?;

    let data = generate_split(&cfg, Task::Interpolation)?;
    for strategy in [TrainingStrategy::frozen(&ck), TrainingStrategy::fine_tuned(&ck), TrainingStrategy::scratch()] {
        let run = train_downstream(enc, &cfg.decoder, &strategy, &data.train, &cfg.train)?;
        let q = evaluate(&run.model, &data.eval)?;
        println!("{:<10} ssim {:.3}  psnr {:.2} dB", strategy.kind, q.ssim, q.psnr_db);
    }
    Ok(())
}
