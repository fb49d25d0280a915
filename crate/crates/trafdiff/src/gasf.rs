//! Angular-field encoding: reversible mapping between unit-range traces and
//! symmetric 2D images.
//!
//! A trace x in [0,1]^n maps to the n x n matrix
//! Y[i][j] = cos(theta_i + theta_j) with theta = arccos(x), computed in the
//! equivalent product form x_i*x_j - sqrt(1-x_i^2)*sqrt(1-x_j^2). The
//! diagonal is 2*x_i^2 - 1, so the trace is recoverable as
//! x_i = sqrt((Y[i][i]+1)/2). Each entry depends only on samples i and j,
//! which makes the top-left m x m crop identical to encoding the m-sample
//! prefix.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::trace::NormalizedTrace;

const MAGIC: &[u8; 4] = b"TDG1";

/// Polar view of a trace: angles arccos(x_i) plus the normalized time
/// radius i/n. The radius preserves temporal ordering information but the
/// field itself is built from angles alone.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarTrace {
    pub theta: Vec<f64>,
    pub radius: Vec<f64>,
}

/// Compute the polar representation. Input samples must lie in [0,1].
pub fn to_polar(trace: &NormalizedTrace) -> Result<PolarTrace> {
    let n = trace.len();
    if n < 2 {
        return Err(Error::InvalidInput("trace too short to encode".into()));
    }
    let mut theta = Vec::with_capacity(n);
    for (i, &x) in trace.samples.iter().enumerate() {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Domain(format!("sample {i} = {x} outside [0,1]")));
        }
        theta.push(x.acos());
    }
    let radius = (0..n).map(|i| i as f64 / n as f64).collect();
    Ok(PolarTrace { theta, radius })
}

/// A symmetric angular-field image with its trace provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct GasfImage {
    pub n: usize,
    /// Row-major n*n entries in [-1,1].
    pub data: Vec<f64>,
    pub class_label: u32,
    pub dataset_id: String,
}

impl GasfImage {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
}

/// Encode a unit-range trace into its angular field.
pub fn encode(trace: &NormalizedTrace) -> Result<GasfImage> {
    let n = trace.len();
    if n < 2 {
        return Err(Error::InvalidInput("trace too short to encode".into()));
    }
    let x = &trace.samples;
    let mut s = Vec::with_capacity(n);
    for (i, &xi) in x.iter().enumerate() {
        if !(0.0..=1.0).contains(&xi) {
            return Err(Error::Domain(format!("sample {i} = {xi} outside [0,1]")));
        }
        s.push((1.0 - xi * xi).sqrt());
    }
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            data[i * n + j] = (x[i] * x[j] - s[i] * s[j]).clamp(-1.0, 1.0);
        }
    }
    Ok(GasfImage { n, data, class_label: trace.class_label, dataset_id: trace.dataset_id.clone() })
}

/// Recover the trace from an angular field via the diagonal.
pub fn decode(img: &GasfImage) -> Result<NormalizedTrace> {
    let mut samples = Vec::with_capacity(img.n);
    for i in 0..img.n {
        let y = img.get(i, i);
        if !(-1.0..=1.0).contains(&y) {
            return Err(Error::Domain(format!("diagonal entry {i} = {y} outside [-1,1]")));
        }
        samples.push(((y + 1.0) / 2.0).clamp(0.0, 1.0).sqrt());
    }
    NormalizedTrace::new(samples, img.class_label, img.dataset_id.clone())
}

/// Top-left m x m crop. Because entry (i,j) depends only on samples i and
/// j, this equals encoding the first m samples, bit for bit.
pub fn crop_prefix(img: &GasfImage, m: usize) -> Result<GasfImage> {
    if m < 2 || m > img.n {
        return Err(Error::InvalidInput(format!(
            "crop size {m} outside [2, {}]",
            img.n
        )));
    }
    if m == img.n {
        return Ok(img.clone());
    }
    let mut data = Vec::with_capacity(m * m);
    for i in 0..m {
        data.extend_from_slice(&img.data[i * img.n..i * img.n + m]);
    }
    Ok(GasfImage { n: m, data, class_label: img.class_label, dataset_id: img.dataset_id.clone() })
}

/// Write an angular field: magic, side length, class label, dataset id,
/// then the entries as f32 little-endian in row-major order.
pub fn save_gasf(img: &GasfImage, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(img.n as u32)?;
    w.write_u32::<LittleEndian>(img.class_label)?;
    let id = img.dataset_id.as_bytes();
    if id.len() > u16::MAX as usize {
        return Err(Error::InvalidInput("dataset_id too long".into()));
    }
    w.write_u16::<LittleEndian>(id.len() as u16)?;
    w.write_all(id)?;
    for &v in &img.data {
        w.write_f32::<LittleEndian>(v as f32)?;
    }
    w.flush()?;
    Ok(())
}

/// Read an angular field written by [`save_gasf`].
pub fn load_gasf(path: &Path) -> Result<GasfImage> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let bad = |reason: &str| Error::MalformedArtifact {
        path: path.display().to_string(),
        reason: reason.into(),
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("wrong magic"));
    }
    let n = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))? as usize;
    let class_label = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))?;
    let id_len = r.read_u16::<LittleEndian>().map_err(|_| bad("truncated header"))? as usize;
    let mut id = vec![0u8; id_len];
    r.read_exact(&mut id).map_err(|_| bad("truncated dataset id"))?;
    let dataset_id =
        String::from_utf8(id).map_err(|_| bad("dataset id is not utf-8"))?;
    if !(2..=1 << 16).contains(&n) {
        return Err(bad("implausible side length"));
    }
    let mut data = Vec::with_capacity(n * n);
    for _ in 0..n * n {
        data.push(r.read_f32::<LittleEndian>().map_err(|_| bad("truncated data"))? as f64);
    }
    let mut tail = [0u8; 1];
    if r.read(&mut tail)? != 0 {
        return Err(bad("trailing bytes"));
    }
    Ok(GasfImage { n, data, class_label, dataset_id })
}
