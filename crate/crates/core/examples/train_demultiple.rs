//! Train a small conv-hierarchical U-Net from scratch on demultiple gathers.

use seisbench::bench::{generate_split, ExperimentConfig};
use seisbench::metrics::evaluate;
use seisbench::seisdata::Task;
use seisbench::training::{train_downstream, TrainingStrategy};

fn main() -> seisbench::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut cfg = ExperimentConfig::tiny(0);
    cfg.samples.demultiple = 40;
    cfg.train.epochs = 10;
    let data = generate_split(&cfg, Task::Demultiple)?;
    let enc = &cfg.encoders[0].config;
    let run = train_downstream(enc, &cfg.decoder, &TrainingStrategy::scratch(), &data.train, &cfg.train)?;
    let q = evaluate(&run.model, &data.eval)?;
    println!(
        "loss {:.4} -> {:.4}; held out: mse {:.4}, psnr {:.2} dB, ssim {:.3}",
        run.loss_history[0],
        run.loss_history.last().unwrap(),
        q.mse,
        q.psnr_db,
        q.ssim
    );
    Ok(())
}
