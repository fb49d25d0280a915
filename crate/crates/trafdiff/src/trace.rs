//! Trace ingestion: loading, generating, normalizing and partitioning 1D
//! traffic traces into fixed-length, unit-range sequences.
//!
//! A trace is a labeled 1D time series of one traffic feature (bytes
//! downloaded per bin, packet size, or packet direction in {-1,+1}).
//! Everything downstream consumes [`NormalizedTrace`]s: fixed length,
//! samples in [0,1].

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A raw labeled trace as it arrives from a capture or a CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrace {
    /// Sample timestamps in seconds. `None` for pre-binned data.
    pub timestamps: Option<Vec<f64>>,
    /// Feature samples (bytes downloaded, packet size, direction, ...).
    pub values: Vec<f64>,
    /// Integer class id within the dataset.
    pub class_label: u32,
    /// Dataset tag, e.g. `"vid-east"`.
    pub dataset_id: String,
}

impl RawTrace {
    /// Build a raw trace, checking the type invariants: values non-empty,
    /// timestamps (when present) non-negative, non-decreasing and aligned
    /// with values.
    pub fn new(
        timestamps: Option<Vec<f64>>,
        values: Vec<f64>,
        class_label: u32,
        dataset_id: impl Into<String>,
    ) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("trace has no values".into()));
        }
        if let Some(ts) = &timestamps {
            if ts.len() != values.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{} timestamps for {} values",
                    ts.len(),
                    values.len()
                )));
            }
            let mut prev = 0.0_f64;
            for &t in ts {
                if !t.is_finite() || t < 0.0 {
                    return Err(Error::InvalidInput(format!("bad timestamp {t}")));
                }
                if t < prev {
                    return Err(Error::InvalidInput("timestamps decrease".into()));
                }
                prev = t;
            }
        }
        Ok(Self { timestamps, values, class_label, dataset_id: dataset_id.into() })
    }
}

/// A fixed-length trace with samples scaled to [0,1], ready for the polar
/// transform (arccos requires the unit interval).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedTrace {
    pub samples: Vec<f64>,
    pub class_label: u32,
    pub dataset_id: String,
}

impl NormalizedTrace {
    /// Checked constructor: every sample must lie in [0,1].
    pub fn new(samples: Vec<f64>, class_label: u32, dataset_id: impl Into<String>) -> Result<Self> {
        for (i, &s) in samples.iter().enumerate() {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::Domain(format!("sample {i} = {s} outside [0,1]")));
            }
        }
        Ok(Self { samples, class_label, dataset_id: dataset_id.into() })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Shape of one dataset: how long its traces are and how many of them exist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    /// Fixed per-trace sample count (e.g. 720 for 0.25 s bins over 180 s).
    pub target_length: usize,
    /// Bin width in seconds for timestamped captures; `None` for pre-binned data.
    pub bin_width: Option<f64>,
    pub num_classes: usize,
    pub traces_per_class: usize,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.target_length < 2 {
            return Err(Error::InvalidInput("target_length must be >= 2".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidInput("num_classes must be >= 2".into()));
        }
        if self.traces_per_class == 0 {
            return Err(Error::InvalidInput("traces_per_class must be >= 1".into()));
        }
        if let Some(w) = self.bin_width {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::InvalidInput(format!("bin_width {w} must be > 0")));
            }
        }
        Ok(())
    }
}

/// Train/test partition rule: the first fraction of each class, in file order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train_fraction: 0.8 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidInput(format!(
                "train_fraction {} outside (0,1)",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

/// Aggregate a timestamped trace into non-overlapping bins of `bin_width`
/// seconds starting at t=0. Bin k sums the values with timestamps in
/// [k*w, (k+1)*w); empty bins between occupied ones are zero.
pub fn bin_trace(raw: &RawTrace, bin_width: f64) -> Result<RawTrace> {
    let ts = raw
        .timestamps
        .as_ref()
        .ok_or_else(|| Error::UnbinnableTrace(format!("{} has no timestamps", raw.dataset_id)))?;
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(Error::InvalidInput(format!("bin_width {bin_width} must be > 0")));
    }
    let last_bin = (ts.last().copied().unwrap_or(0.0) / bin_width).floor() as usize;
    let mut values = vec![0.0; last_bin + 1];
    for (&t, &v) in ts.iter().zip(&raw.values) {
        let k = (t / bin_width).floor() as usize;
        values[k] += v;
    }
    let timestamps = (0..values.len()).map(|k| k as f64 * bin_width).collect();
    RawTrace::new(Some(timestamps), values, raw.class_label, raw.dataset_id.clone())
}

/// Force a sequence to exactly `target` samples: truncate the tail or pad
/// with zeros.
pub fn fix_length(values: &[f64], target: usize) -> Result<Vec<f64>> {
    if target == 0 {
        return Err(Error::InvalidInput("target length must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(target);
    out.extend_from_slice(&values[..values.len().min(target)]);
    out.resize(target, 0.0);
    Ok(out)
}

/// Per-trace min-max scaling to [0,1]. A constant sequence maps to all
/// zeros (the degenerate rule; arccos(0) stays valid downstream).
pub fn minmax_normalize(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::InvalidInput("cannot normalize an empty sequence".into()));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        if !v.is_finite() {
            return Err(Error::Domain(format!("non-finite sample {v}")));
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi == lo {
        return Ok(vec![0.0; values.len()]);
    }
    let span = hi - lo;
    Ok(values.iter().map(|&v| ((v - lo) / span).clamp(0.0, 1.0)).collect())
}

/// Split traces per class: the first `floor(f*m)` traces of each class (in
/// input order) go to train, the rest to test.
pub fn split_dataset(
    traces: &[NormalizedTrace],
    spec: &SplitSpec,
) -> Result<(Vec<NormalizedTrace>, Vec<NormalizedTrace>)> {
    spec.validate()?;
    let mut by_class: BTreeMap<u32, Vec<&NormalizedTrace>> = BTreeMap::new();
    for t in traces {
        by_class.entry(t.class_label).or_default().push(t);
    }
    for (c, members) in &by_class {
        if members.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "class {c} has {} trace(s); need at least 2 to split",
                members.len()
            )));
        }
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for members in by_class.values() {
        let m = members.len();
        let k = ((spec.train_fraction * m as f64).floor() as usize).clamp(1, m - 1);
        for (i, t) in members.iter().enumerate() {
            if i < k {
                train.push((*t).clone());
            } else {
                test.push((*t).clone());
            }
        }
    }
    Ok((train, test))
}

/// Parametric family for one toy class. Classes are separable but overlap:
/// each draws a sinusoid with class-specific frequency plus phase jitter,
/// bursty spikes, and Gaussian noise, loosely shaped like binned download
/// traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySpec {
    /// Base oscillation frequency (cycles over the whole trace) for class 0.
    pub base_freq: f64,
    /// Frequency increment per class id.
    pub freq_step: f64,
    /// Amplitude of the class sinusoid.
    pub amplitude: f64,
    /// Std-dev of additive Gaussian noise, relative to amplitude.
    pub noise: f64,
    /// Per-sample probability of a burst spike.
    pub burst_prob: f64,
    /// Burst magnitude, relative to amplitude.
    pub burst_scale: f64,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            base_freq: 2.0,
            freq_step: 2.0,
            amplitude: 100.0,
            noise: 0.10,
            burst_prob: 0.02,
            burst_scale: 1.5,
        }
    }
}

/// Deterministic desk-scale stand-in for captured datasets. Each class c
/// draws `spec.traces_per_class` traces from a family with frequency
/// `base_freq + c*freq_step`; a fixed seed reproduces the dataset exactly.
pub fn gen_toy_dataset(
    spec: &DatasetSpec,
    toy: &ToySpec,
    dataset_id: &str,
    seed: u64,
) -> Result<Vec<RawTrace>> {
    spec.validate()?;
    let n = spec.target_length;
    let mut out = Vec::with_capacity(spec.num_classes * spec.traces_per_class);
    for class in 0..spec.num_classes as u32 {
        let freq = toy.base_freq + toy.freq_step * class as f64;
        for idx in 0..spec.traces_per_class {
            // Independent stream per (seed, dataset, class, trace) so the
            // dataset is stable under changes to traces_per_class.
            let stream = crate::config::derive_seed(
                seed,
                &format!("toy/{dataset_id}/{class}/{idx}"),
            );
            let mut rng = ChaCha8Rng::seed_from_u64(stream);
            let phase = rng.random::<f64>() * std::f64::consts::TAU;
            let noise = Normal::new(0.0, toy.noise * toy.amplitude).expect("sigma >= 0");
            let mut values = Vec::with_capacity(n);
            for i in 0..n {
                let t = i as f64 / n as f64;
                let base = toy.amplitude
                    * (1.0 + (std::f64::consts::TAU * freq * t + phase).sin());
                let burst = if rng.random::<f64>() < toy.burst_prob {
                    toy.burst_scale * toy.amplitude * rng.random::<f64>()
                } else {
                    0.0
                };
                let v = (base + burst + noise.sample(&mut rng)).max(0.0);
                values.push(v);
            }
            out.push(RawTrace::new(None, values, class, dataset_id)?);
        }
    }
    Ok(out)
}

/// Full ingestion for one raw trace: optional binning, length fixing,
/// min-max normalization.
pub fn ingest_trace(raw: &RawTrace, spec: &DatasetSpec) -> Result<NormalizedTrace> {
    let binned;
    let values: &[f64] = match (spec.bin_width, &raw.timestamps) {
        (Some(w), Some(_)) => {
            binned = bin_trace(raw, w)?;
            &binned.values
        }
        (Some(w), None) => {
            // Pre-binned input is accepted as-is; the bin width is metadata.
            let _ = w;
            &raw.values
        }
        (None, _) => &raw.values,
    };
    let fixed = fix_length(values, spec.target_length)?;
    let samples = minmax_normalize(&fixed)?;
    NormalizedTrace::new(samples, raw.class_label, raw.dataset_id.clone())
}

// ---------------------------------------------------------------------------
// CSV interface
// ---------------------------------------------------------------------------

/// Read one trace from a CSV file with columns `timestamp,value` (raw) or a
/// single `value` column (pre-binned). A header row is optional.
pub fn read_trace_csv(path: &Path, class_label: u32, dataset_id: &str) -> Result<RawTrace> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)?;
    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    let mut two_cols: Option<bool> = None;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.is_empty() || (rec.len() == 1 && rec[0].trim().is_empty()) {
            continue;
        }
        let first = rec[0].trim();
        // Tolerate a single header line.
        if line == 0 && first.parse::<f64>().is_err() {
            continue;
        }
        let cols = rec.len().min(2);
        match two_cols {
            None => two_cols = Some(cols == 2),
            Some(t) if t != (cols == 2) => {
                return Err(Error::MalformedArtifact {
                    path: path.display().to_string(),
                    reason: format!("inconsistent column count at line {}", line + 1),
                });
            }
            _ => {}
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim().parse::<f64>().map_err(|_| Error::MalformedArtifact {
                path: path.display().to_string(),
                reason: format!("bad number {s:?} at line {}", line + 1),
            })
        };
        if cols == 2 {
            timestamps.push(parse(&rec[0])?);
            values.push(parse(&rec[1])?);
        } else {
            values.push(parse(&rec[0])?);
        }
    }
    if values.is_empty() {
        return Err(Error::MalformedArtifact {
            path: path.display().to_string(),
            reason: "no samples".into(),
        });
    }
    let ts = if two_cols == Some(true) { Some(timestamps) } else { None };
    RawTrace::new(ts, values, class_label, dataset_id)
}

/// Load a dataset from `<root>/<class_label>/<trace>.csv`. Class directories
/// must be non-negative integers; traces are ordered by file name within
/// each class so splits are reproducible.
pub fn read_dataset_csv(root: &Path, dataset_id: &str) -> Result<Vec<RawTrace>> {
    if !root.is_dir() {
        return Err(Error::InvalidInput(format!(
            "dataset directory {} does not exist",
            root.display()
        )));
    }
    let mut classes: Vec<(u32, std::path::PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(root)? {
        let entry = entry?;
        if !entry.file_type()?.is_dir() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        let label: u32 = name.parse().map_err(|_| {
            Error::MalformedArtifact {
                path: entry.path().display().to_string(),
                reason: "class directory name is not an integer label".into(),
            }
        })?;
        classes.push((label, entry.path()));
    }
    classes.sort_by_key(|(label, _)| *label);
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for (label, dir) in classes {
        let mut files: Vec<_> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        files.sort();
        for f in files {
            match read_trace_csv(&f, label, dataset_id) {
                Ok(t) => out.push(t),
                Err(e) => errors.push(format!("{}: {e}", f.display())),
            }
        }
    }
    if !errors.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} malformed trace file(s):\n{}",
            errors.len(),
            errors.join("\n")
        )));
    }
    if out.is_empty() {
        return Err(Error::InvalidInput(format!("no traces under {}", root.display())));
    }
    Ok(out)
}

/// Dataset manifest: the key-value text file declaring a CSV dataset's
/// shape, e.g.
///
/// ```text
/// dataset_id = "vid-east"
/// target_length = 720
/// bin_width = 0.25
/// num_classes = 20
/// traces_per_class = 100
/// ```
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_id: String,
    pub target_length: usize,
    #[serde(default)]
    pub bin_width: Option<f64>,
    pub num_classes: usize,
    pub traces_per_class: usize,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::MalformedArtifact {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn spec(&self) -> DatasetSpec {
        DatasetSpec {
            target_length: self.target_length,
            bin_width: self.bin_width,
            num_classes: self.num_classes,
            traces_per_class: self.traces_per_class,
        }
    }
}

impl fmt::Display for RawTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{} ({} samples{})",
            self.dataset_id,
            self.class_label,
            self.values.len(),
            if self.timestamps.is_some() { ", timestamped" } else { "" }
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(ts: &[f64], vs: &[f64]) -> RawTrace {
        RawTrace::new(Some(ts.to_vec()), vs.to_vec(), 0, "t").unwrap()
    }

    #[test]
    fn bin_sums_by_membership() {
        let r = raw(&[0.1, 0.2, 0.3], &[100.0, 200.0, 50.0]);
        let b = bin_trace(&r, 0.25).unwrap();
        assert_eq!(b.values, vec![300.0, 50.0]);
        assert_eq!(b.timestamps.unwrap(), vec![0.0, 0.25]);
    }

    #[test]
    fn bin_fills_empty_intervals_with_zero() {
        let r = raw(&[0.0, 0.6], &[100.0, 50.0]);
        let b = bin_trace(&r, 0.25).unwrap();
        assert_eq!(b.values, vec![100.0, 0.0, 50.0]);
    }

    #[test]
    fn bin_single_sample() {
        let r = raw(&[0.0], &[7.0]);
        let b = bin_trace(&r, 0.25).unwrap();
        assert_eq!(b.values, vec![7.0]);
    }

    #[test]
    fn bin_conserves_mass() {
        let r = raw(&[0.05, 0.4, 0.41, 1.9, 3.3], &[1.5, 2.0, 3.5, 0.25, 9.0]);
        let b = bin_trace(&r, 0.3).unwrap();
        let total: f64 = b.values.iter().sum();
        assert!((total - 16.25).abs() < 1e-12);
    }

    #[test]
    fn bin_rejects_missing_timestamps() {
        let r = RawTrace::new(None, vec![1.0], 0, "t").unwrap();
        let e = bin_trace(&r, 0.25).unwrap_err();
        assert!(e.to_string().contains("unbinnable trace"));
    }

    #[test]
    fn fix_length_pads_and_truncates() {
        assert_eq!(fix_length(&[1.0, 2.0, 3.0], 5).unwrap(), vec![1.0, 2.0, 3.0, 0.0, 0.0]);
        assert_eq!(
            fix_length(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 4).unwrap(),
            vec![1.0, 2.0, 3.0, 4.0]
        );
        assert_eq!(fix_length(&[1.0, 2.0], 2).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn normalize_endpoints_and_interior() {
        assert_eq!(minmax_normalize(&[-1.0, 0.0, 1.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(minmax_normalize(&[0.0, 2.0, 8.0]).unwrap(), vec![0.0, 0.25, 1.0]);
    }

    #[test]
    fn normalize_constant_is_zeros() {
        assert_eq!(minmax_normalize(&[5.0, 5.0, 5.0]).unwrap(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn normalize_idempotent_for_nonconstant() {
        let v = vec![3.0, -2.0, 7.5, 0.0, 1.0];
        let once = minmax_normalize(&v).unwrap();
        let twice = minmax_normalize(&once).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn split_floor_arithmetic() {
        let mk = |class: u32, n: usize| -> Vec<NormalizedTrace> {
            (0..n)
                .map(|i| {
                    NormalizedTrace::new(vec![i as f64 / n as f64, 0.5], class, "t").unwrap()
                })
                .collect()
        };
        let traces = mk(0, 100);
        let (tr, te) = split_dataset(&traces, &SplitSpec { train_fraction: 0.8 }).unwrap();
        assert_eq!((tr.len(), te.len()), (80, 20));

        let traces = mk(0, 5);
        let (tr, te) = split_dataset(&traces, &SplitSpec { train_fraction: 0.8 }).unwrap();
        assert_eq!((tr.len(), te.len()), (4, 1));

        let traces = mk(0, 2);
        let (tr, te) = split_dataset(&traces, &SplitSpec { train_fraction: 0.5 }).unwrap();
        assert_eq!((tr.len(), te.len()), (1, 1));
    }

    #[test]
    fn split_is_a_partition_per_class() {
        let mut traces = Vec::new();
        for class in 0..3u32 {
            for i in 0..7 {
                traces.push(
                    NormalizedTrace::new(vec![i as f64 / 10.0, 1.0], class, "t").unwrap(),
                );
            }
        }
        let (tr, te) = split_dataset(&traces, &SplitSpec::default()).unwrap();
        assert_eq!(tr.len() + te.len(), traces.len());
        for class in 0..3u32 {
            let n_tr = tr.iter().filter(|t| t.class_label == class).count();
            let n_te = te.iter().filter(|t| t.class_label == class).count();
            assert_eq!((n_tr, n_te), (5, 2));
        }
        // No trace appears in both.
        for a in &tr {
            assert!(!te.contains(a));
        }
    }

    #[test]
    fn split_rejects_single_trace_class() {
        let traces = vec![NormalizedTrace::new(vec![0.0, 1.0], 0, "t").unwrap()];
        assert!(split_dataset(&traces, &SplitSpec::default()).is_err());
    }

    fn toy_spec() -> (DatasetSpec, ToySpec) {
        (
            DatasetSpec {
                target_length: 64,
                bin_width: None,
                num_classes: 2,
                traces_per_class: 10,
            },
            ToySpec::default(),
        )
    }

    #[test]
    fn toy_dataset_is_deterministic() {
        let (spec, toy) = toy_spec();
        let a = gen_toy_dataset(&spec, &toy, "t", 7).unwrap();
        let b = gen_toy_dataset(&spec, &toy, "t", 7).unwrap();
        assert_eq!(a, b);
        let c = gen_toy_dataset(&spec, &toy, "t", 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn toy_dataset_counts_and_labels() {
        let (spec, toy) = toy_spec();
        let traces = gen_toy_dataset(&spec, &toy, "t", 1).unwrap();
        assert_eq!(traces.len(), 20);
        for class in 0..2 {
            assert_eq!(traces.iter().filter(|t| t.class_label == class).count(), 10);
        }
    }

    /// Oracle: 1-nearest-neighbor on raw traces must beat chance, which
    /// holds only if the class families are actually separable.
    #[test]
    fn toy_classes_are_separable_by_nearest_neighbor() {
        let (spec, toy) = toy_spec();
        let traces = gen_toy_dataset(&spec, &toy, "t", 3).unwrap();
        let dist = |a: &[f64], b: &[f64]| -> f64 {
            a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
        };
        let mut correct = 0;
        for (i, probe) in traces.iter().enumerate() {
            let mut best = (f64::INFINITY, 0u32);
            for (j, other) in traces.iter().enumerate() {
                if i == j {
                    continue;
                }
                let d = dist(&probe.values, &other.values);
                if d < best.0 {
                    best = (d, other.class_label);
                }
            }
            if best.1 == probe.class_label {
                correct += 1;
            }
        }
        let acc = correct as f64 / traces.len() as f64;
        assert!(acc > 0.75, "1-nn accuracy {acc} not above chance");
    }

    #[test]
    fn ingest_pipeline_lands_in_unit_range_with_target_length() {
        let spec = DatasetSpec {
            target_length: 16,
            bin_width: Some(0.25),
            num_classes: 2,
            traces_per_class: 1,
        };
        let ts: Vec<f64> = (0..40).map(|i| i as f64 * 0.1).collect();
        let vs: Vec<f64> = (0..40).map(|i| (i as f64 * 0.7).sin() * 50.0 + 60.0).collect();
        let raw = RawTrace::new(Some(ts), vs, 1, "t").unwrap();
        let n = ingest_trace(&raw, &spec).unwrap();
        assert_eq!(n.len(), 16);
        assert!(n.samples.iter().all(|&s| (0.0..=1.0).contains(&s)));
    }

    #[test]
    fn csv_roundtrip_both_layouts() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.csv");
        std::fs::write(&p1, "timestamp,value\n0.0,1.5\n0.5,2.5\n").unwrap();
        let t1 = read_trace_csv(&p1, 3, "d").unwrap();
        assert_eq!(t1.timestamps.as_deref(), Some(&[0.0, 0.5][..]));
        assert_eq!(t1.values, vec![1.5, 2.5]);
        assert_eq!(t1.class_label, 3);

        let p2 = dir.path().join("b.csv");
        std::fs::write(&p2, "1.0\n2.0\n3.0\n").unwrap();
        let t2 = read_trace_csv(&p2, 0, "d").unwrap();
        assert!(t2.timestamps.is_none());
        assert_eq!(t2.values, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn csv_dataset_layout_and_error_listing() {
        let dir = tempfile::tempdir().unwrap();
        let c0 = dir.path().join("0");
        let c1 = dir.path().join("1");
        std::fs::create_dir_all(&c0).unwrap();
        std::fs::create_dir_all(&c1).unwrap();
        std::fs::write(c0.join("t0.csv"), "1\n2\n").unwrap();
        std::fs::write(c1.join("t0.csv"), "3\n4\n").unwrap();
        let traces = read_dataset_csv(dir.path(), "d").unwrap();
        assert_eq!(traces.len(), 2);
        assert_eq!(traces[0].class_label, 0);
        assert_eq!(traces[1].class_label, 1);

        std::fs::write(c1.join("bad.csv"), "not,a\nnumber,x\n").unwrap();
        let err = read_dataset_csv(dir.path(), "d").unwrap_err().to_string();
        assert!(err.contains("bad.csv"), "error should name the file: {err}");
    }
}
