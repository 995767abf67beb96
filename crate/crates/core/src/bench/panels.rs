//! Qualitative panels as 8-bit PGM images.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::predict_gather;
use crate::model::Model;
use crate::seisdata::{Gather, Task, TaskSample};

#[derive(Clone, Debug, PartialEq)]
pub struct Panel {
    pub name: &'static str,
    pub gather: Gather,
}

fn panel(name: &'static str, gather: Gather) -> Panel {
    Panel { name, gather }
}

impl Panel {
    /// File-name form of the panel name.
    pub fn stem(&self) -> String {
        self.name
            .replace('*', "star")
            .replace('+', "plus")
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect()
    }
}

/// Panels for one sample, in display order:
/// - interpolation: `G`, `D(G)`, `G*`, `R = (G − G*)·10`
/// - denoise: `G`, `G+N`, `G*`, `N* = (G+N) − G*`
/// - demultiple: `P+M`, `P*`, `M* = (P+M) − P*`
pub fn panel_set(model: &Model, sample: &TaskSample, task: Task) -> Result<Vec<Panel>> {
    if sample.task != task {
        return Err(Error::InvalidArgument(format!(
            "{} sample given for {task} panels",
            sample.task
        )));
    }
    let pred = predict_gather(model, &sample.input)?;
    Ok(match task {
        Task::Interpolation => {
            let r = sample.label.zip_with(&pred, |g, p| (g - p) * 10.0)?;
            vec![
                panel("G", sample.label.clone()),
                panel("D(G)", sample.input.clone()),
                panel("G*", pred),
                panel("R", r),
            ]
        }
        Task::Denoise => {
            let n = sample.input.zip_with(&pred, |x, p| x - p)?;
            vec![
                panel("G", sample.label.clone()),
                panel("G+N", sample.input.clone()),
                panel("G*", pred),
                panel("N*", n),
            ]
        }
        Task::Demultiple => {
            let m = sample.input.zip_with(&pred, |x, p| x - p)?;
            vec![panel("P+M", sample.input.clone()), panel("P*", pred), panel("M*", m)]
        }
    })
}

/// Binary PGM with amplitudes clipped at ±3σ and mapped to 0..=255, zero
/// at mid-gray (128).
pub fn pgm_bytes(g: &Gather, sigma: f64) -> Vec<u8> {
    let (h, w) = g.shape();
    let clip = if sigma > 0.0 { 3.0 * sigma } else { 1.0 };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(g.samples().iter().map(|&v| {
        let u = (v.clamp(-clip, clip) / clip + 1.0) * 127.5;
        u.round().clamp(0.0, 255.0) as u8
    }));
    out
}

/// Write the panels of every sample to `dir` as `<task>_<i>_<panel>.pgm`.
/// All panels of a sample share the clip level of its first panel.
pub fn emit_panels(model: &Model, samples: &[TaskSample], task: Task, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let panels = panel_set(model, s, task)?;
        let sigma = panels[0].gather.std();
        for p in &panels {
            let path = dir.join(format!("{task}_{i}_{}.pgm", p.stem()));
            std::fs::write(&path, pgm_bytes(&p.gather, sigma)).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}
