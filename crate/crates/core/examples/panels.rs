//! Write qualitative panels (input, prediction, residual) as PGM images.

use seisbench::bench::{emit_panels, generate_split, ExperimentConfig};
use seisbench::seisdata::Task;
use seisbench::training::{train_downstream, TrainingStrategy};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ExperimentConfig::tiny(0);
    cfg.train.epochs = 3;
    let dir = std::env::temp_dir().join("seisbench-panels");
    std::fs::create_dir_all(&dir)?;
    for task in Task::ALL {
        let data = generate_split(&cfg, task)?;
        let run = train_downstream(&cfg.encoders[0].config, &cfg.decoder, &TrainingStrategy::scratch(), &data.train, &cfg.train)?;
        for f in emit_panels(&run.model, &data.eval, task, &dir)? {
            println!("{}", f.display());
        }
    }
    Ok(())
}
