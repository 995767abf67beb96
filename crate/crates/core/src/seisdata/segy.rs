//! SEG-Y rev 1 subset: 3200-byte textual header, 400-byte big-endian binary
//! header, fixed-length traces of IBM (code 1) or IEEE (code 5) 4-byte floats.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::Gather;
use crate::error::{Error, Result};

pub const TEXT_HEADER_LEN: usize = 3200;
pub const BINARY_HEADER_LEN: usize = 400;
pub const TRACE_HEADER_LEN: usize = 240;
const DATA_START: usize = TEXT_HEADER_LEN + BINARY_HEADER_LEN;

// Byte offsets from the start of the file.
const BIN_SAMPLE_INTERVAL: usize = 3216;
const BIN_SAMPLES: usize = 3220;
const BIN_FORMAT: usize = 3224;
const BIN_EXTENDED_HEADERS: usize = 3504;

// Byte offsets within a trace header.
const TR_ENSEMBLE: usize = 20;
const TR_IN_ENSEMBLE: usize = 24;
const TR_OFFSET: usize = 36;
const TR_SAMPLES: usize = 114;
const TR_SAMPLE_INTERVAL: usize = 116;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleFormat {
    Ibm,
    Ieee,
}

impl SampleFormat {
    pub fn code(self) -> u16 {
        match self {
            SampleFormat::Ibm => 1,
            SampleFormat::Ieee => 5,
        }
    }
}

/// Decode an IBM System/360 single-precision word.
pub fn ibm_to_f32(word: u32) -> f32 {
    let sign = if word >> 31 == 1 { -1.0 } else { 1.0 };
    let exp = ((word >> 24) & 0x7f) as i32 - 64;
    let frac = (word & 0x00ff_ffff) as f64 / (1u32 << 24) as f64;
    (sign * frac * 16f64.powi(exp)) as f32
}

/// Encode to the nearest IBM word; values beyond the IBM range saturate.
pub fn f32_to_ibm(v: f32) -> u32 {
    if v == 0.0 || !v.is_finite() {
        return 0;
    }
    let sign = if v < 0.0 { 1u32 << 31 } else { 0 };
    let a = (v as f64).abs();
    // a = frac · 16^exp with frac in [1/16, 1)
    let mut exp = (a.log2() / 4.0).floor() as i32 + 1;
    let mut mant = (a / 16f64.powi(exp) * (1u32 << 24) as f64).round() as u64;
    if mant >= 1 << 24 {
        mant >>= 4;
        exp += 1;
    } else if mant < 1 << 20 {
        // log2 rounding put frac just below 1/16
        mant = (a / 16f64.powi(exp - 1) * (1u32 << 24) as f64).round() as u64;
        exp -= 1;
    }
    let biased = exp + 64;
    if biased > 127 {
        return sign | 0x7fff_ffff;
    }
    if biased < 0 {
        return 0;
    }
    sign | (biased as u32) << 24 | mant as u32
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct TraceHeader {
    pub ensemble: i32,
    pub trace_in_ensemble: i32,
    pub offset: i32,
    pub samples: u16,
    pub sample_interval_us: u16,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegyTrace {
    pub header: TraceHeader,
    pub samples: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub number: i32,
    pub traces: Vec<SegyTrace>,
}

impl Ensemble {
    /// Traces as columns of a gather.
    pub fn to_gather(&self, dt: f64, trace_spacing: f64) -> Result<Gather> {
        let w = self.traces.len();
        let h = self.traces.first().map_or(0, |t| t.samples.len());
        let mut data = vec![0.0; h * w];
        for (j, t) in self.traces.iter().enumerate() {
            for (r, &v) in t.samples.iter().enumerate() {
                data[r * w + j] = v as f64;
            }
        }
        Gather::new(h, w, data, dt, trace_spacing)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegyFile {
    pub textual_header: Vec<u8>,
    pub sample_interval_us: u16,
    pub samples_per_trace: u16,
    pub format: SampleFormat,
    /// Traces grouped by ensemble number, in order of first appearance.
    pub ensembles: Vec<Ensemble>,
}

impl SegyFile {
    pub fn dt(&self) -> f64 {
        self.sample_interval_us as f64 * 1e-6
    }

    pub fn trace_count(&self) -> usize {
        self.ensembles.iter().map(|e| e.traces.len()).sum()
    }
}

fn be_u16(b: &[u8], o: usize) -> u16 {
    u16::from_be_bytes([b[o], b[o + 1]])
}

fn be_i32(b: &[u8], o: usize) -> i32 {
    i32::from_be_bytes(b[o..o + 4].try_into().expect("4 bytes"))
}

pub fn parse_segy(bytes: &[u8]) -> Result<SegyFile> {
    if bytes.len() < DATA_START {
        return Err(Error::parse(
            bytes.len() as u64,
            format!("file ends inside the {DATA_START}-byte file header"),
        ));
    }
    let sample_interval_us = be_u16(bytes, BIN_SAMPLE_INTERVAL);
    let ns = be_u16(bytes, BIN_SAMPLES);
    let format = match be_u16(bytes, BIN_FORMAT) {
        1 => SampleFormat::Ibm,
        5 => SampleFormat::Ieee,
        c => {
            return Err(Error::parse(
                BIN_FORMAT as u64,
                format!("unsupported sample format code {c}"),
            ))
        }
    };
    let extended = be_u16(bytes, BIN_EXTENDED_HEADERS) as usize;
    let mut pos = DATA_START + extended * TEXT_HEADER_LEN;
    if pos > bytes.len() {
        return Err(Error::parse(
            bytes.len() as u64,
            format!("file ends inside {extended} extended textual headers"),
        ));
    }
    let trace_len = TRACE_HEADER_LEN + ns as usize * 4;
    let mut ensembles: Vec<Ensemble> = Vec::new();
    let mut index: HashMap<i32, usize> = HashMap::new();
    while pos < bytes.len() {
        if bytes.len() - pos < trace_len {
            return Err(Error::parse(
                pos as u64,
                format!(
                    "truncated trace: {trace_len} bytes needed, {} remain",
                    bytes.len() - pos
                ),
            ));
        }
        let th = &bytes[pos..pos + TRACE_HEADER_LEN];
        let header = TraceHeader {
            ensemble: be_i32(th, TR_ENSEMBLE),
            trace_in_ensemble: be_i32(th, TR_IN_ENSEMBLE),
            offset: be_i32(th, TR_OFFSET),
            samples: be_u16(th, TR_SAMPLES),
            sample_interval_us: be_u16(th, TR_SAMPLE_INTERVAL),
        };
        if header.samples != 0 && header.samples != ns {
            return Err(Error::parse(
                (pos + TR_SAMPLES) as u64,
                format!(
                    "trace declares {} samples, binary header declares {ns}",
                    header.samples
                ),
            ));
        }
        let data = &bytes[pos + TRACE_HEADER_LEN..pos + trace_len];
        let samples = data
            .chunks_exact(4)
            .map(|c| {
                let word = u32::from_be_bytes(c.try_into().expect("4 bytes"));
                match format {
                    SampleFormat::Ibm => ibm_to_f32(word),
                    SampleFormat::Ieee => f32::from_bits(word),
                }
            })
            .collect();
        let slot = *index.entry(header.ensemble).or_insert_with(|| {
            ensembles.push(Ensemble {
                number: header.ensemble,
                traces: Vec::new(),
            });
            ensembles.len() - 1
        });
        ensembles[slot].traces.push(SegyTrace { header, samples });
        pos += trace_len;
    }
    Ok(SegyFile {
        textual_header: bytes[..TEXT_HEADER_LEN].to_vec(),
        sample_interval_us,
        samples_per_trace: ns,
        format,
        ensembles,
    })
}

pub fn read_segy(path: impl AsRef<Path>) -> Result<SegyFile> {
    let path = path.as_ref();
    parse_segy(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn encode_segy(file: &SegyFile) -> Result<Vec<u8>> {
    let ns = file.samples_per_trace as usize;
    let mut out = Vec::with_capacity(DATA_START + file.trace_count() * (TRACE_HEADER_LEN + 4 * ns));
    let mut text = file.textual_header.clone();
    // EBCDIC blanks
    text.resize(TEXT_HEADER_LEN, 0x40);
    out.extend_from_slice(&text);
    let mut bin = [0u8; BINARY_HEADER_LEN];
    let put16 = |b: &mut [u8], o: usize, v: u16| b[o..o + 2].copy_from_slice(&v.to_be_bytes());
    put16(&mut bin, BIN_SAMPLE_INTERVAL - TEXT_HEADER_LEN, file.sample_interval_us);
    put16(&mut bin, BIN_SAMPLES - TEXT_HEADER_LEN, file.samples_per_trace);
    put16(&mut bin, BIN_FORMAT - TEXT_HEADER_LEN, file.format.code());
    // revision 1.0
    put16(&mut bin, 300, 0x0100);
    // fixed-length traces
    put16(&mut bin, 302, 1);
    out.extend_from_slice(&bin);
    for e in &file.ensembles {
        for t in &e.traces {
            if t.samples.len() != ns {
                return Err(Error::InvalidArgument(format!(
                    "trace of ensemble {} has {} samples, file declares {ns}",
                    e.number,
                    t.samples.len()
                )));
            }
            let mut th = [0u8; TRACE_HEADER_LEN];
            th[TR_ENSEMBLE..TR_ENSEMBLE + 4].copy_from_slice(&e.number.to_be_bytes());
            th[TR_IN_ENSEMBLE..TR_IN_ENSEMBLE + 4].copy_from_slice(&t.header.trace_in_ensemble.to_be_bytes());
            th[TR_OFFSET..TR_OFFSET + 4].copy_from_slice(&t.header.offset.to_be_bytes());
            put16(&mut th, TR_SAMPLES, file.samples_per_trace);
            put16(&mut th, TR_SAMPLE_INTERVAL, file.sample_interval_us);
            out.extend_from_slice(&th);
            for &v in &t.samples {
                let word = match file.format {
                    SampleFormat::Ibm => f32_to_ibm(v),
                    SampleFormat::Ieee => v.to_bits(),
                };
                out.extend_from_slice(&word.to_be_bytes());
            }
        }
    }
    Ok(out)
}

pub fn write_segy(path: impl AsRef<Path>, file: &SegyFile) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_segy(file)?).map_err(|e| Error::io(path, e))
}

/// Wrap one gather as a single-ensemble file, one trace per column.
/// IBM files hold samples already rounded to IBM precision, so the file
/// equals what a write/read cycle gives back.
pub fn from_gather(g: &Gather, ensemble: i32, format: SampleFormat) -> Result<SegyFile> {
    let h = u16::try_from(g.height())
        .map_err(|_| Error::InvalidArgument(format!("{} samples per trace exceed SEG-Y's u16 limit", g.height())))?;
    let traces = (0..g.width())
        .map(|j| SegyTrace {
            header: TraceHeader {
                ensemble,
                trace_in_ensemble: j as i32 + 1,
                offset: (j as f64 * g.trace_spacing).round() as i32,
                samples: h,
                sample_interval_us: (g.dt * 1e6).round() as u16,
            },
            samples: g
                .trace(j)
                .into_iter()
                .map(|v| match format {
                    SampleFormat::Ibm => ibm_to_f32(f32_to_ibm(v as f32)),
                    SampleFormat::Ieee => v as f32,
                })
                .collect(),
        })
        .collect();
    Ok(SegyFile {
        textual_header: vec![0x40; TEXT_HEADER_LEN],
        sample_interval_us: (g.dt * 1e6).round() as u16,
        samples_per_trace: h,
        format,
        ensembles: vec![Ensemble { number: ensemble, traces }],
    })
}
