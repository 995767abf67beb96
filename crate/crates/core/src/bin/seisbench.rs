use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use seisbench::bench::{self, ExperimentConfig, ReportFormat, ReportRow, ScatterAxis, TaskResult};
use seisbench::metrics::{evaluate, time_inference, MetricsRecord};
use seisbench::model::Model;
use seisbench::seisdata::{segy, write_gather, SampleType};
use seisbench::{Error, Result};

#[derive(Parser)]
#[command(version, about = "Encoder-decoder benchmarks on synthetic seismic tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat key=value experiment file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate task datasets as native gather files and SEG-Y
    Synth,
    /// Masked-image pre-training of every configured encoder
    Pretrain,
    /// Run the full grid and write reports and plots
    Train,
    /// Re-evaluate saved models on the held-out split
    Eval,
    /// Time inference of every encoder-decoder at each task's gather size
    Bench,
    /// Redraw CSV and scatter plots from a JSON report
    Report,
    /// Write qualitative panels for saved models
    Panels {
        /// Held-out samples per model
        #[arg(long, default_value_t = 2)]
        count: usize,
    },
}

fn create(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn plots(rows: &[ReportRow], out: &Path) -> Result<()> {
    if rows.iter().all(|r| r.results.is_empty()) {
        return Ok(());
    }
    bench::emit_scatter(rows, ScatterAxis::Params, false, out.join("scatter_params.svg"))?;
    bench::emit_scatter(rows, ScatterAxis::DatasetSize, true, out.join("scatter_dataset_size.svg"))?;
    if rows.iter().flat_map(|r| &r.results).all(|r| r.metrics.latency_s > 0.0) {
        bench::emit_scatter(rows, ScatterAxis::Latency, false, out.join("scatter_latency.svg"))?;
    }
    Ok(())
}

fn synth(cfg: &ExperimentConfig) -> Result<()> {
    for &task in &cfg.tasks {
        let dir = cfg.output_dir.join("data").join(task.as_str());
        create(&dir)?;
        let split = bench::generate_split(cfg, task)?;
        let all: Vec<_> = split.train.iter().chain(&split.eval).collect();
        for (i, s) in all.iter().enumerate() {
            write_gather(dir.join(format!("{i:05}_input.sgth")), &s.input, SampleType::F32)?;
            write_gather(dir.join(format!("{i:05}_label.sgth")), &s.label, SampleType::F32)?;
        }
        let mut file = segy::SegyFile {
            ensembles: Vec::new(),
            ..segy::from_gather(&all[0].input, 1, segy::SampleFormat::Ieee)?
        };
        for (i, s) in all.iter().enumerate() {
            file.ensembles.extend(segy::from_gather(&s.input, i as i32 + 1, segy::SampleFormat::Ieee)?.ensembles);
        }
        segy::write_segy(cfg.output_dir.join("data").join(format!("{task}_inputs.sgy")), &file)?;
        log::info!("{task}: {} train / {} held-out samples", split.train.len(), split.eval.len());
    }
    Ok(())
}

fn pretrain(cfg: &ExperimentConfig) -> Result<()> {
    for enc in &cfg.encoders {
        let (path, history) = bench::pretrain_encoder(cfg, enc)?;
        write(&path.with_extension("loss.json"), serde_json::to_vec_pretty(&history)?)?;
        println!("{}: {}", enc.name, path.display());
    }
    Ok(())
}

fn train(cfg: &ExperimentConfig) -> Result<bool> {
    let rows = bench::run_experiment(cfg)?;
    bench::emit_report(&rows, ReportFormat::Csv, cfg.output_dir.join("report.csv"))?;
    bench::emit_report(&rows, ReportFormat::Json, cfg.output_dir.join("report.json"))?;
    plots(&rows, &cfg.output_dir)?;
    for row in &rows {
        match &row.error {
            Some(e) => println!("{} / {}: FAILED: {e}", row.name, row.strategy),
            None => {
                for r in &row.results {
                    println!(
                        "{} / {} / {}: ssim {:.4}, psnr {:.2} dB",
                        row.name, row.strategy, r.metrics.task, r.metrics.ssim, r.metrics.psnr_db
                    );
                }
            }
        }
    }
    Ok(rows.iter().all(|r| !r.failed()))
}

fn eval(cfg: &ExperimentConfig) -> Result<bool> {
    let mut rows = Vec::new();
    for enc in &cfg.encoders {
        for &strategy in &cfg.strategies {
            let mut row = ReportRow {
                name: enc.name.clone(),
                archetype: enc.config.archetype,
                hierarchical: enc.config.archetype.is_hierarchical(),
                strategy,
                results: Vec::new(),
                combined: None,
                error: None,
            };
            let run = || -> Result<Vec<TaskResult>> {
                cfg.tasks
                    .iter()
                    .map(|&task| {
                        let model = bench::load_trained_model(cfg, enc, strategy, task)?;
                        let split = bench::generate_split(cfg, task)?;
                        let q = evaluate(&model, &split.eval)?;
                        Ok(TaskResult {
                            metrics: MetricsRecord {
                                task,
                                mse: q.mse,
                                psnr_db: q.psnr_db,
                                ssim: q.ssim,
                                params_encoder: model.encoder_params(),
                                params_total: model.total_params(),
                                throughput_gps: 0.0,
                                latency_s: 0.0,
                            },
                            train_samples: split.train.len(),
                            eval_samples: split.eval.len(),
                            loss_history: Vec::new(),
                        })
                    })
                    .collect()
            };
            match run() {
                Ok(results) => {
                    let per: Vec<_> = results.iter().map(|r| (r.metrics.task, r.metrics.ssim)).collect();
                    row.combined = seisbench::metrics::combined_ssim(&per).ok();
                    row.results = results;
                }
                Err(e) => {
                    log::error!("{} / {strategy}: {e}", enc.name);
                    row.error = Some(e.to_string());
                }
            }
            rows.push(row);
        }
    }
    bench::emit_report(&rows, ReportFormat::Csv, cfg.output_dir.join("eval.csv"))?;
    Ok(rows.iter().all(|r| !r.failed()))
}

#[derive(Serialize)]
struct BenchLine<'a> {
    name: &'a str,
    archetype: &'a str,
    task: &'a str,
    params_total: usize,
    batch: usize,
    latency_s: f64,
    throughput_gps: f64,
}

fn timing(cfg: &ExperimentConfig) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for enc in &cfg.encoders {
        for &task in &cfg.tasks {
            let model: Model = Model::build(&enc.config, &cfg.decoder, cfg.data.sample_hw(task), cfg.seed)?;
            let t = time_inference(&model, cfg.timing.batch, cfg.data.sample_hw(task), cfg.timing.warmup, cfg.timing.reps)?;
            println!(
                "{} / {task}: {:.4} s per batch of {}, {:.1} gathers/s",
                enc.name, t.median_latency_s, cfg.timing.batch, t.throughput_gps
            );
            w.serialize(BenchLine {
                name: &enc.name,
                archetype: enc.config.archetype.as_str(),
                task: task.as_str(),
                params_total: model.total_params(),
                batch: cfg.timing.batch,
                latency_s: t.median_latency_s,
                throughput_gps: t.throughput_gps,
            })?;
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidArgument(format!("flushing CSV: {}", e.error())))?;
    write(&cfg.output_dir.join("bench.csv"), bytes)
}

fn report(cfg: &ExperimentConfig) -> Result<()> {
    let rows = bench::read_report_json(cfg.output_dir.join("report.json"))?;
    bench::emit_report(&rows, ReportFormat::Csv, cfg.output_dir.join("report.csv"))?;
    plots(&rows, &cfg.output_dir)
}

fn panels(cfg: &ExperimentConfig, count: usize) -> Result<()> {
    for enc in &cfg.encoders {
        for &strategy in &cfg.strategies {
            for &task in &cfg.tasks {
                let model = bench::load_trained_model(cfg, enc, strategy, task)?;
                let split = bench::generate_split(cfg, task)?;
                let n = count.min(split.eval.len());
                let dir = cfg.output_dir.join("panels").join(format!("{}-{strategy}", enc.name));
                let files = bench::emit_panels(&model, &split.eval[..n], task, &dir)?;
                println!("{} / {strategy} / {task}: {} panels in {}", enc.name, files.len(), dir.display());
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.output_dir = o;
    }
    cfg.validate()?;
    create(&cfg.output_dir)?;
    write(&cfg.output_dir.join("config.txt"), cfg.to_kv_string())?;
    match cli.command {
        Command::Synth => synth(&cfg)?,
        Command::Pretrain => pretrain(&cfg)?,
        Command::Train => return train(&cfg),
        Command::Eval => return eval(&cfg),
        Command::Bench => timing(&cfg)?,
        Command::Report => report(&cfg)?,
        Command::Panels { count } => panels(&cfg, count)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
