//! SVG scatter of SSIM against model size, data size or latency. Marker
//! shape encodes the training strategy and color the encoder archetype.

use std::fmt::Write as _;
use std::path::Path;

use super::ReportRow;
use crate::encoders::Archetype;
use crate::error::{Error, Result};
use crate::training::StrategyKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScatterAxis {
    /// Total parameter count.
    Params,
    /// Training samples of the task.
    DatasetSize,
    /// Median seconds per inference batch.
    Latency,
}

impl ScatterAxis {
    pub fn label(self) -> &'static str {
        match self {
            ScatterAxis::Params => "parameters",
            ScatterAxis::DatasetSize => "training samples",
            ScatterAxis::Latency => "latency (s / batch)",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            ScatterAxis::Params => "params",
            ScatterAxis::DatasetSize => "dataset_size",
            ScatterAxis::Latency => "latency",
        }
    }
}

fn color(a: Archetype) -> &'static str {
    match a {
        Archetype::ConvHierarchical => "#1f77b4",
        Archetype::WindowedAttnHierarchical => "#2ca02c",
        Archetype::GlobalAttnNonhierarchical => "#d62728",
        Archetype::HybridHierarchical => "#9467bd",
    }
}

fn marker(out: &mut String, s: StrategyKind, x: f64, y: f64, fill: &str, attrs: &str) {
    let r = 5.0;
    let _ = match s {
        StrategyKind::Scratch => writeln!(
            out,
            r#"<circle class="marker" cx="{x:.2}" cy="{y:.2}" r="{r}" fill="{fill}" {attrs}/>"#
        ),
        StrategyKind::Frozen => writeln!(
            out,
            r#"<rect class="marker" x="{:.2}" y="{:.2}" width="{}" height="{}" fill="{fill}" {attrs}/>"#,
            x - r,
            y - r,
            2.0 * r,
            2.0 * r
        ),
        StrategyKind::FineTuned => writeln!(
            out,
            r#"<polygon class="marker" points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="{fill}" {attrs}/>"#,
            x,
            y - r,
            x - r,
            y + r,
            x + r,
            y + r
        ),
    };
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn nice_range(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        let pad = if lo == 0.0 { 1.0 } else { 0.1 * lo.abs() };
        (lo - pad, hi + pad)
    }
}

/// One marker per (row, task) record, i.e. per CSV data line.
pub fn scatter_svg(rows: &[ReportRow], axis: ScatterAxis, log_x: bool) -> Result<String> {
    let mut points = Vec::new();
    for row in rows {
        for r in &row.results {
            let m = &r.metrics;
            let x = match axis {
                ScatterAxis::Params => m.params_total as f64,
                ScatterAxis::DatasetSize => r.train_samples as f64,
                ScatterAxis::Latency => m.latency_s,
            };
            if log_x && x <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "log-scale {} axis needs positive values; {} / {} has {x}",
                    axis.label(),
                    row.name,
                    m.task
                )));
            }
            points.push((row, r, if log_x { x.log10() } else { x }, m.ssim));
        }
    }
    if points.is_empty() {
        return Err(Error::InvalidArgument("scatter plot needs at least one result".into()));
    }
    let (w, h, left, right, top, bottom) = (640.0, 420.0, 70.0, 180.0, 30.0, 60.0);
    let fold = |f: fn(f64, f64) -> f64, init: f64, sel: fn(&(_, _, f64, f64)) -> f64| {
        points.iter().map(sel).fold(init, f)
    };
    let (x0, x1) = nice_range(fold(f64::min, f64::INFINITY, |p| p.2), fold(f64::max, f64::NEG_INFINITY, |p| p.2));
    let (y0, y1) = nice_range(fold(f64::min, f64::INFINITY, |p| p.3), fold(f64::max, f64::NEG_INFINITY, |p| p.3));
    let (pw, ph) = (w - left - right, h - top - bottom);
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<g class="axes" stroke="black"><line x1="{left}" y1="{0}" x2="{1}" y2="{0}"/><line x1="{left}" y1="{top}" x2="{left}" y2="{0}"/></g>"#,
        top + ph,
        left + pw
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let xl = if log_x { format!("{:.3}", 10f64.powf(xv)) } else { format!("{xv:.3}") };
        let _ = writeln!(
            s,
            r#"<text class="tick" x="{:.2}" y="{:.2}" text-anchor="middle">{xl}</text>"#,
            sx(xv),
            top + ph + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text class="tick" x="{:.2}" y="{:.2}" text-anchor="end">{yv:.3}</text>"#,
            left - 6.0,
            sy(yv) + 4.0
        );
    }
    let xlabel = if log_x { format!("{} (log scale)", axis.label()) } else { axis.label().to_string() };
    let _ = writeln!(
        s,
        r#"<text class="axis-label" x="{:.2}" y="{:.2}" text-anchor="middle">{xlabel}</text>"#,
        left + pw / 2.0,
        h - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text class="axis-label" x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">SSIM</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    let _ = writeln!(s, r#"<g class="markers">"#);
    for (row, r, x, y) in &points {
        let attrs = format!(
            r#"data-name="{}" data-task="{}" data-strategy="{}" data-ssim="{}""#,
            escape(&row.name),
            r.metrics.task,
            row.strategy,
            r.metrics.ssim
        );
        marker(&mut s, row.strategy, sx(*x), sy(*y), color(row.archetype), &attrs);
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g class="legend">"#);
    let mut ly = top + 10.0;
    let lx = left + pw + 20.0;
    for a in Archetype::ALL {
        let _ = writeln!(
            s,
            r#"<rect x="{lx}" y="{:.2}" width="10" height="10" fill="{}"/><text x="{:.2}" y="{:.2}">{a}</text>"#,
            ly - 9.0,
            color(a),
            lx + 15.0,
            ly
        );
        ly += 16.0;
    }
    ly += 8.0;
    for k in StrategyKind::ALL {
        let shape = match k {
            StrategyKind::Scratch => format!(r#"<circle cx="{:.2}" cy="{:.2}" r="5" fill="gray"/>"#, lx + 5.0, ly - 4.0),
            StrategyKind::Frozen => format!(r#"<rect x="{lx}" y="{:.2}" width="10" height="10" fill="gray"/>"#, ly - 9.0),
            StrategyKind::FineTuned => format!(
                r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="gray"/>"#,
                lx + 5.0,
                ly - 9.0,
                lx,
                ly + 1.0,
                lx + 10.0,
                ly + 1.0
            ),
        };
        let _ = writeln!(s, r#"{shape}<text x="{:.2}" y="{:.2}">{k}</text>"#, lx + 15.0, ly);
        ly += 16.0;
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn emit_scatter(rows: &[ReportRow], axis: ScatterAxis, log_x: bool, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let svg = scatter_svg(rows, axis, log_x)?;
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}
