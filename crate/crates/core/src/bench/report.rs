use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ReportRow;
use crate::encoders::Archetype;
use crate::error::{Error, Result};
use crate::seisdata::Task;
use crate::training::StrategyKind;

pub const CSV_COLUMNS: [&str; 13] = [
    "name",
    "archetype",
    "hierarchical",
    "strategy",
    "params_encoder",
    "params_total",
    "task",
    "mse",
    "psnr_db",
    "ssim",
    "ssim_combined",
    "latency_s",
    "throughput_gps",
];

/// One CSV data line: a grid point's metrics on one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportLine {
    pub name: String,
    pub archetype: Archetype,
    pub hierarchical: bool,
    pub strategy: StrategyKind,
    pub params_encoder: usize,
    pub params_total: usize,
    pub task: Task,
    pub mse: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    /// Empty unless all three tasks were run.
    pub ssim_combined: Option<f64>,
    pub latency_s: f64,
    pub throughput_gps: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

/// Lines in row order, then task order. Failed rows contribute none.
pub fn report_lines(rows: &[ReportRow]) -> Vec<ReportLine> {
    rows.iter()
        .flat_map(|row| {
            row.results.iter().map(move |r| {
                let m = &r.metrics;
                ReportLine {
                    name: row.name.clone(),
                    archetype: row.archetype,
                    hierarchical: row.hierarchical,
                    strategy: row.strategy,
                    params_encoder: m.params_encoder,
                    params_total: m.params_total,
                    task: m.task,
                    mse: m.mse,
                    psnr_db: m.psnr_db,
                    ssim: m.ssim,
                    ssim_combined: row.combined.map(|c| c.combined),
                    latency_s: m.latency_s,
                    throughput_gps: m.throughput_gps,
                }
            })
        })
        .collect()
}

fn csv_bytes(rows: &[ReportRow]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(CSV_COLUMNS)?;
    for line in report_lines(rows) {
        w.serialize(line)?;
    }
    w.into_inner()
        .map_err(|e| Error::InvalidArgument(format!("flushing CSV: {}", e.error())))
}

pub fn emit_report(rows: &[ReportRow], format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        ReportFormat::Csv => csv_bytes(rows)?,
        ReportFormat::Json => {
            let mut b = serde_json::to_vec_pretty(rows)?;
            b.push(b'\n');
            b
        }
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_report_json(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn read_report_csv(path: impl AsRef<Path>) -> Result<Vec<ReportLine>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_COLUMNS {
        return Err(Error::Config(format!("{}: unexpected columns {header:?}", path.display())));
    }
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
