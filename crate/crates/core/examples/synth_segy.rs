//! Synthesize gathers for each task and round-trip them through SEG-Y.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seisbench::seisdata::segy::{self, SampleFormat};
use seisbench::seisdata::*;

fn main() -> seisbench::Result<()> {
    let cfg = DemultipleConfig::default();
    let model = LayeredModel::random(&cfg.model, &mut ChaCha8Rng::seed_from_u64(1));
    let pair = synthesize_demultiple_pair(&model, cfg.h, cfg.w, cfg.dt, 1e-4, 1)?;
    println!(
        "demultiple pair {:?}: multiples max |a| {:.3}, input std {:.3}",
        pair.sample.input.shape(),
        pair.multiples.max_abs(),
        pair.sample.input.std()
    );

    let shots = shot_gather_corpus(&ShotConfig::default(), 1, 2)?;
    println!("shot gather {:?}, first break on the far trace at row {}", shots[0].gather.shape(), shots[0].first_break.last().unwrap());

    let data = TaskDataConfig::default();
    for task in [Task::Interpolation, Task::Denoise] {
        let s = &task_dataset(task, &data, 1, 3)?[0];
        println!("{task}: input {:?}", s.input.shape());
    }

    println!("IBM 0x42640000 = {}", segy::ibm_to_f32(0x4264_0000));
    let path = std::env::temp_dir().join("seisbench-example.sgy");
    let file = segy::from_gather(&pair.sample.input, 1, SampleFormat::Ibm)?;
    segy::write_segy(&path, &file)?;
    let back = segy::read_segy(&path)?;
    println!("wrote {} traces to {}, read back identical: {}", back.trace_count(), path.display(), back == file);
    Ok(())
}
