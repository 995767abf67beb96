//! Run a small experiment grid and write the CSV/JSON reports and scatter plots.
//!
//! Pass a key=value config file as the first argument to override the tiny preset.

use seisbench::bench::*;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut cfg = match std::env::args().nth(1) {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::tiny(0),
    };
    cfg.output_dir = std::env::temp_dir().join("seisbench-grid");
    std::fs::create_dir_all(&cfg.output_dir)?;

    let rows = run_experiment(&cfg)?;
    emit_report(&rows, ReportFormat::Csv, cfg.output_dir.join("report.csv"))?;
    emit_report(&rows, ReportFormat::Json, cfg.output_dir.join("report.json"))?;
    emit_scatter(&rows, ScatterAxis::Params, true, cfg.output_dir.join("ssim_vs_params.svg"))?;
    for r in &rows {
        let combined = r.combined.map(|c| format!("{:.3}", c.combined)).unwrap_or_else(|| "-".into());
        println!("{:<28} {:<10} combined SSIM {combined}", r.name, r.strategy);
    }
    println!("reports in {}", cfg.output_dir.display());
    Ok(())
}
