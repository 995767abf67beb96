//! MSE, PSNR and SSIM of a gather against increasingly noisy copies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seisbench::metrics::{combined_ssim, quality};
use seisbench::seisdata::{task_dataset, Task, TaskDataConfig};

fn main() -> seisbench::Result<()> {
    let clean = task_dataset(Task::Denoise, &TaskDataConfig::default(), 1, 0)?.remove(0).label;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for level in [0.0, 0.05, 0.2, 0.5, 1.0] {
        let noisy = clean.map(|v| v + level * rng.gen_range(-1.0..1.0));
        let q = quality(&noisy, &clean)?;
        println!("noise {level:<4} mse {:.5}  psnr {:>6.2} dB  ssim {:.4}", q.mse, q.psnr_db, q.ssim);
    }
    let c = combined_ssim(&[(Task::Demultiple, 0.8), (Task::Interpolation, 0.9), (Task::Denoise, 0.7)])?;
    println!("combined SSIM of 0.8, 0.9, 0.7: {:.1}", c.combined);
    Ok(())
}
