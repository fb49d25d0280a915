//! Staged CLI pipeline. Each verb runs one stage: it checks its upstream
//! manifests, wipes and rebuilds its own directory, then records a manifest
//! with the config hash and a checksum per artifact. Re-runs skip stages
//! whose manifest still matches, and equal config plus seed reproduces
//! byte-identical artifacts.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::classify::{ClassifierKind, TrainParams};
use crate::config::{derive_seed, sha256_hex, DataSource, DatasetConfig, RunConfig};
use crate::diffusion::{train_images, Generator, TrainLog};
use crate::enhance::{enhance_pipeline, load_pixels, save_pixels, PixelImage};
use crate::error::{Error, Result};
use crate::fid::{fid_per_class, histogram_csv, Embedder, FidReport};
use crate::gasf::{encode, load_gasf, save_gasf};
use crate::harness::{
    anomaly_case1, anomaly_case2_uncertainty, compare_1d_2d, hierarchical_eval,
    limited_data_sweep, realtime_eval, report_csv, report_from_csv, standard_eval,
    synth_count_sweep, AnomalySetup, DatasetBundle, EvalReport, UncertaintyReport, ALL_SCENARIOS,
};
use crate::report::{
    accuracy_vs_prefix_svg, accuracy_vs_size_svg, accuracy_vs_synth_svg, dm_1d2d_table,
    entropy_dist_svg, fid_bars_svg, fraction_table, hierarchical_table,
    pixel_histogram_series_svg,
};
use crate::trace::{
    gen_toy_dataset, ingest_trace, read_dataset_csv, split_dataset, NormalizedTrace,
};

/// Completion record for one stage: config identity plus a checksum for
/// every file the stage wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    /// Relative path -> sha256 of contents, sorted.
    pub files: BTreeMap<String, String>,
}

fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}

fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, serde_json::to_vec_pretty(value)?)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::MalformedArtifact {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

/// Checksum every file under `dir` (excluding the manifest itself), keyed
/// by `/`-separated relative path.
fn hash_tree(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path
                .strip_prefix(dir)
                .expect("walk stays under the stage dir")
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            if rel == "manifest.json" {
                continue;
            }
            files.insert(rel, sha256_hex(&fs::read(&path)?));
        }
    }
    Ok(files)
}

/// A stage is current when its manifest matches the config hash and every
/// recorded file still checksums to the recorded value.
fn stage_up_to_date(dir: &Path, config_hash: &str) -> bool {
    let Ok(text) = fs::read_to_string(manifest_path(dir)) else {
        return false;
    };
    let Ok(m) = serde_json::from_str::<RunManifest>(&text) else {
        return false;
    };
    m.config_hash == config_hash
        && m.files.iter().all(|(rel, sha)| {
            fs::read(dir.join(rel)).map(|b| sha256_hex(&b) == *sha).unwrap_or(false)
        })
}

/// Run one stage: verify upstream manifests, skip if current, else wipe,
/// rebuild, and write the manifest last so interrupted runs never look
/// complete. `salt` folds verb-level parameters (like a sample-count
/// override) into the staleness check. Returns whether work was done.
#[allow(clippy::too_many_arguments)]
fn run_stage<F>(
    cfg: &RunConfig,
    name: &str,
    rel: &str,
    seed_name: &str,
    deps: &[(&str, &str)],
    force: bool,
    salt: &str,
    build: F,
) -> Result<bool>
where
    F: FnOnce(&Path, u64) -> Result<()>,
{
    let root = &cfg.artifact_root;
    for (dep_rel, verb) in deps {
        if !manifest_path(&root.join(dep_rel)).is_file() {
            return Err(Error::MissingStage((*verb).into()));
        }
    }
    let dir = root.join(rel);
    let mut hash = cfg.content_hash();
    if !salt.is_empty() {
        hash = sha256_hex(format!("{hash}/{salt}").as_bytes());
    }
    if !force && stage_up_to_date(&dir, &hash) {
        println!("[{name}] up to date, skipping (--force rebuilds)");
        return Ok(false);
    }
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(&dir)?;
    let seed = derive_seed(cfg.seed, seed_name);
    build(&dir, seed)?;
    let manifest = RunManifest {
        stage: name.into(),
        config_hash: hash,
        seed,
        files: hash_tree(&dir)?,
    };
    write_json_atomic(&manifest_path(&dir), &manifest)?;
    println!("[{name}] wrote {} artifact(s) under {}", manifest.files.len(), dir.display());
    Ok(true)
}

// ---------------------------------------------------------------------------
// Artifact layout helpers

/// Files of a `<class>/<index>.<ext>` tree, sorted by (class, index).
fn class_tree(dir: &Path, ext: &str) -> Result<Vec<(u32, usize, PathBuf)>> {
    let mut out = Vec::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if !entry.file_type()?.is_dir() {
            continue;
        }
        let Ok(class) = entry.file_name().to_string_lossy().parse::<u32>() else {
            continue;
        };
        for f in fs::read_dir(entry.path())? {
            let p = f?.path();
            if !p.extension().is_some_and(|e| e == ext) {
                continue;
            }
            let Some(idx) = p.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse().ok())
            else {
                continue;
            };
            out.push((class, idx, p));
        }
    }
    out.sort();
    Ok(out)
}

fn load_image_tree(dir: &Path) -> Result<Vec<PixelImage>> {
    class_tree(dir, "img")?.into_iter().map(|(_, _, p)| load_pixels(&p)).collect()
}

fn load_traces(path: &Path) -> Result<Vec<NormalizedTrace>> {
    read_json(path)
}

/// Bundle one dataset from ingest (and, when asked, sample) artifacts.
fn load_bundle(cfg: &RunConfig, ds: &DatasetConfig, with_synth: bool) -> Result<DatasetBundle> {
    let root = &cfg.artifact_root;
    let ing = root.join("ingest").join(&ds.dataset_id);
    let train = load_traces(&ing.join("train.json"))?;
    let test = load_traces(&ing.join("test.json"))?;
    let synth = if with_synth {
        load_image_tree(&root.join("sample").join(&ds.dataset_id))?
    } else {
        Vec::new()
    };
    DatasetBundle::new(&ds.dataset_id, train, test, synth, &cfg.image)
}

fn load_bundles(cfg: &RunConfig, with_synth: bool) -> Result<Vec<DatasetBundle>> {
    cfg.datasets.iter().map(|ds| load_bundle(cfg, ds, with_synth)).collect()
}

fn classifier_kinds(cfg: &RunConfig) -> Result<Vec<ClassifierKind>> {
    if cfg.eval.classifiers.is_empty() {
        return Err(Error::Config("eval.classifiers must not be empty".into()));
    }
    cfg.eval.classifiers.iter().map(|s| ClassifierKind::parse(s)).collect()
}

fn train_params(cfg: &RunConfig) -> TrainParams {
    TrainParams { epochs: cfg.eval.epochs, ..TrainParams::default() }
}

// ---------------------------------------------------------------------------
// Stages

pub fn run_ingest(cfg: &RunConfig, force: bool) -> Result<bool> {
    run_stage(cfg, "ingest", "ingest", "ingest", &[], force, "", |dir, seed| {
        for ds in &cfg.datasets {
            let ds_seed = derive_seed(seed, &ds.dataset_id);
            let raws = match &ds.source {
                DataSource::Toy { toy } => gen_toy_dataset(&ds.spec, toy, &ds.dataset_id, ds_seed)?,
                DataSource::Csv { root } => {
                    if !root.is_dir() {
                        return Err(Error::Io(std::io::Error::new(
                            std::io::ErrorKind::NotFound,
                            format!("input directory {} does not exist", root.display()),
                        )));
                    }
                    read_dataset_csv(root, &ds.dataset_id)?
                }
            };
            let mut traces = Vec::with_capacity(raws.len());
            let mut errors = Vec::new();
            for (i, raw) in raws.iter().enumerate() {
                match ingest_trace(raw, &ds.spec) {
                    Ok(t) => traces.push(t),
                    Err(e) => errors.push(format!("class {} trace {i}: {e}", raw.class_label)),
                }
            }
            if !errors.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "{}: {} unusable trace(s):\n{}",
                    ds.dataset_id,
                    errors.len(),
                    errors.join("\n")
                )));
            }
            let (train, test) = split_dataset(&traces, &ds.split)?;
            let out = dir.join(&ds.dataset_id);
            fs::create_dir_all(&out)?;
            write_json_atomic(&out.join("train.json"), &train)?;
            write_json_atomic(&out.join("test.json"), &test)?;
        }
        Ok(())
    })
}

fn write_split_gasf(out: &Path, traces: &[NormalizedTrace]) -> Result<()> {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for t in traces {
        let idx = counts.entry(t.class_label).or_insert(0);
        let p = out.join(t.class_label.to_string()).join(format!("{idx:05}.gasf"));
        fs::create_dir_all(p.parent().expect("class dir"))?;
        save_gasf(&encode(t)?, &p)?;
        *idx += 1;
    }
    Ok(())
}

pub fn run_encode(cfg: &RunConfig, force: bool) -> Result<bool> {
    run_stage(
        cfg,
        "encode",
        "encode",
        "encode",
        &[("ingest", "ingest")],
        force,
        "",
        |dir, _seed| {
            for ds in &cfg.datasets {
                let ing = cfg.artifact_root.join("ingest").join(&ds.dataset_id);
                for split in ["train", "test"] {
                    let traces = load_traces(&ing.join(format!("{split}.json")))?;
                    write_split_gasf(&dir.join(&ds.dataset_id).join(split), &traces)?;
                }
            }
            Ok(())
        },
    )
}

pub fn run_enhance(cfg: &RunConfig, force: bool) -> Result<bool> {
    run_stage(
        cfg,
        "enhance",
        "enhance",
        "enhance",
        &[("encode", "encode")],
        force,
        "",
        |dir, _seed| {
            for ds in &cfg.datasets {
                let enc = cfg.artifact_root.join("encode").join(&ds.dataset_id);
                for split in ["train", "test"] {
                    for (class, idx, p) in class_tree(&enc.join(split), "gasf")? {
                        let img = enhance_pipeline(&load_gasf(&p)?, &cfg.image)?;
                        let out = dir
                            .join(&ds.dataset_id)
                            .join(split)
                            .join(class.to_string())
                            .join(format!("{idx:05}.img"));
                        fs::create_dir_all(out.parent().expect("class dir"))?;
                        save_pixels(&img, &out)?;
                    }
                }
            }
            Ok(())
        },
    )
}

fn write_loss_csv(path: &Path, log: &TrainLog) -> Result<()> {
    let mut s = String::from("series,step,loss\n");
    for (series, values) in log {
        for (step, v) in values.iter().enumerate() {
            s.push_str(&format!("{series},{step},{v}\n"));
        }
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn run_train_dm(cfg: &RunConfig, force: bool) -> Result<bool> {
    run_stage(
        cfg,
        "train-dm",
        "train-dm",
        "train-dm",
        &[("enhance", "enhance")],
        force,
        "",
        |dir, seed| {
            for ds in &cfg.datasets {
                let images = load_image_tree(
                    &cfg.artifact_root.join("enhance").join(&ds.dataset_id).join("train"),
                )?;
                let ds_seed = derive_seed(seed, &ds.dataset_id);
                let (mut generator, log) =
                    train_images(&images, &cfg.diffusion, &ds.dataset_id, ds_seed)?;
                let out = dir.join(&ds.dataset_id);
                fs::create_dir_all(&out)?;
                generator.save(&out)?;
                write_loss_csv(&out.join("loss.csv"), &log)?;
            }
            Ok(())
        },
    )
}

/// Per-class sample count when `--count` is not given: the largest number
/// any downstream consumer is configured to draw from the pool.
fn default_pool_count(cfg: &RunConfig) -> usize {
    let sweep_max = cfg.eval.synth_counts.iter().copied().max().unwrap_or(0);
    cfg.fid.samples_per_class.max(cfg.eval.synth_per_class).max(sweep_max)
}

pub fn run_sample(cfg: &RunConfig, count: Option<usize>, force: bool) -> Result<bool> {
    let per_class = count.unwrap_or_else(|| default_pool_count(cfg));
    let salt = count.map(|c| c.to_string()).unwrap_or_default();
    run_stage(
        cfg,
        "sample",
        "sample",
        "sample",
        &[("train-dm", "train-dm")],
        force,
        &salt,
        |dir, seed| {
            for ds in &cfg.datasets {
                let mut generator =
                    Generator::load(&cfg.artifact_root.join("train-dm").join(&ds.dataset_id))?;
                let ds_seed = derive_seed(seed, &ds.dataset_id);
                for class in generator.class_set() {
                    let images = generator.sample(class, per_class, ds_seed)?;
                    let out = dir.join(&ds.dataset_id).join(class.to_string());
                    fs::create_dir_all(&out)?;
                    for (i, img) in images.iter().enumerate() {
                        save_pixels(img, &out.join(format!("{i:05}.img")))?;
                    }
                }
            }
            Ok(())
        },
    )
}

pub fn run_fid(cfg: &RunConfig, force: bool) -> Result<bool> {
    run_stage(
        cfg,
        "fid",
        "fid",
        "fid",
        &[("enhance", "enhance"), ("sample", "sample")],
        force,
        "",
        |dir, seed| {
            let embedder = Embedder::parse(&cfg.fid.embedder)?;
            for ds in &cfg.datasets {
                let originals = load_image_tree(
                    &cfg.artifact_root.join("enhance").join(&ds.dataset_id).join("train"),
                )?;
                let synth =
                    load_image_tree(&cfg.artifact_root.join("sample").join(&ds.dataset_id))?;
                let ds_seed = derive_seed(seed, &ds.dataset_id);
                let report = fid_per_class(
                    &originals,
                    &synth,
                    cfg.fid.samples_per_class,
                    embedder,
                    &ds.dataset_id,
                    ds_seed,
                )?;
                let out = dir.join(&ds.dataset_id);
                fs::create_dir_all(&out)?;
                fs::write(out.join("fid.csv"), report.to_csv_string())?;
                write_json_atomic(&out.join("fid.json"), &report)?;
                fs::write(out.join("hist.csv"), histogram_csv(&originals, &synth, 32)?)?;
            }
            Ok(())
        },
    )
}

// ---------------------------------------------------------------------------
// Evaluation protocols

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Protocol {
    /// Scenario grid at every level of the traffic-type hierarchy.
    Hierarchical,
    /// Accuracy sweep over shrinking original training budgets.
    Limited,
    /// Scarce-class detection and ensemble uncertainty.
    Anomaly,
    /// Prefix-truncated traces classified before the session completes.
    Realtime,
    /// Sequence-space versus image-space generation at matched budgets.
    #[value(name = "1d2d")]
    Repr1d2d,
    /// Accuracy as a function of synthetic images per class.
    #[value(name = "synthsweep")]
    SynthSweep,
}

impl Protocol {
    fn stage_name(self) -> &'static str {
        match self {
            Protocol::Hierarchical => "eval-hierarchical",
            Protocol::Limited => "eval-limited",
            Protocol::Anomaly => "eval-anomaly",
            Protocol::Realtime => "eval-realtime",
            Protocol::Repr1d2d => "eval-1d2d",
            Protocol::SynthSweep => "eval-synthsweep",
        }
    }

    fn rel_dir(self) -> &'static str {
        match self {
            Protocol::Hierarchical => "eval/hierarchical",
            Protocol::Limited => "eval/limited",
            Protocol::Anomaly => "eval/anomaly",
            Protocol::Realtime => "eval/realtime",
            Protocol::Repr1d2d => "eval/1d2d",
            Protocol::SynthSweep => "eval/synthsweep",
        }
    }

    /// Protocols that retrain generators in-protocol need only originals;
    /// the rest consume the sampled pool.
    fn needs_sample(self) -> bool {
        matches!(self, Protocol::Hierarchical | Protocol::Realtime | Protocol::SynthSweep)
    }
}

/// Dataset ids span a hierarchy when at least two `TYPE-PLATFORM` prefixes
/// differ; otherwise the default evaluation stays flat.
fn spans_hierarchy(cfg: &RunConfig) -> bool {
    let types: BTreeSet<&str> = cfg
        .datasets
        .iter()
        .filter_map(|d| d.dataset_id.split_once('-').map(|(t, _)| t))
        .collect();
    types.len() >= 2
        && cfg.datasets.iter().all(|d| d.dataset_id.split_once('-').is_some())
}

fn default_prefixes(n: usize) -> Vec<usize> {
    let mut out: Vec<usize> = [(n / 4).max(2), (n / 2).max(2), n].into();
    out.dedup();
    out
}

fn default_synth_counts(per_class: usize) -> Vec<usize> {
    let mut out = vec![(per_class / 2).max(1), per_class];
    out.dedup();
    out
}

fn anomaly_setups(cfg: &RunConfig, ds: &DatasetConfig) -> Result<Vec<AnomalySetup>> {
    let Some(ac) = &cfg.eval.anomaly else {
        return Err(Error::Config(
            "the anomaly protocol needs an [eval.anomaly] config section".into(),
        ));
    };
    let base = AnomalySetup {
        anomaly_classes: ac.anomaly_classes.clone(),
        legitimate_classes: ac.legitimate_classes.clone(),
        anomaly_train_count: ac.train_count,
        crop_length: None,
    };
    let crop = match (ac.crop_samples, ac.crop_seconds) {
        (Some(m), _) => Some(m),
        (None, Some(seconds)) => {
            let bin = ds.spec.bin_width.ok_or_else(|| {
                Error::Config("crop_seconds needs a dataset bin_width".into())
            })?;
            Some(crate::harness::prefix_from_seconds(seconds, bin)?)
        }
        (None, None) => None,
    };
    let mut setups = vec![base.clone()];
    if let Some(m) = crop {
        setups.push(AnomalySetup { crop_length: Some(m), ..base });
    }
    Ok(setups)
}

pub fn run_eval(cfg: &RunConfig, protocol: Option<Protocol>, force: bool) -> Result<bool> {
    let (name, rel, needs_sample) = match protocol {
        None => ("eval-standard", "eval/standard", true),
        Some(p) => (p.stage_name(), p.rel_dir(), p.needs_sample()),
    };
    let mut deps: Vec<(&str, &str)> = vec![("ingest", "ingest")];
    if needs_sample {
        deps.push(("sample", "sample"));
    }
    // All protocols share one seed namespace so rows that must agree across
    // stages (the full-prefix realtime row and its standard counterpart) do.
    run_stage(cfg, name, rel, "eval", &deps, force, "", |dir, seed| {
        let kinds = classifier_kinds(cfg)?;
        let params = train_params(cfg);
        let synth_count = cfg.eval.synth_per_class;
        let mut rows: EvalReport = Vec::new();
        match protocol {
            None => {
                let bundles = load_bundles(cfg, true)?;
                for kind in &kinds {
                    if spans_hierarchy(cfg) {
                        rows.extend(hierarchical_eval(&bundles, synth_count, *kind, &params, seed)?);
                    } else {
                        for b in &bundles {
                            rows.extend(standard_eval(b, synth_count, *kind, &params, seed)?);
                        }
                    }
                }
            }
            Some(Protocol::Hierarchical) => {
                let bundles = load_bundles(cfg, true)?;
                for kind in &kinds {
                    rows.extend(hierarchical_eval(&bundles, synth_count, *kind, &params, seed)?);
                }
            }
            Some(Protocol::Limited) => {
                for ds in &cfg.datasets {
                    let b = load_bundle(cfg, ds, false)?;
                    let ds_seed = derive_seed(seed, &ds.dataset_id);
                    for kind in &kinds {
                        rows.extend(limited_data_sweep(
                            &b,
                            &cfg.eval.limited_sizes,
                            synth_count,
                            &cfg.diffusion,
                            *kind,
                            &params,
                            ds_seed,
                        )?);
                    }
                }
            }
            Some(Protocol::Anomaly) => {
                for ds in &cfg.datasets {
                    let b = load_bundle(cfg, ds, false)?;
                    let ds_seed = derive_seed(seed, &ds.dataset_id);
                    for setup in anomaly_setups(cfg, ds)? {
                        for scenario in ALL_SCENARIOS {
                            for kind in &kinds {
                                rows.push(anomaly_case1(
                                    &b,
                                    &setup,
                                    scenario,
                                    synth_count,
                                    &cfg.diffusion,
                                    *kind,
                                    &params,
                                    ds_seed,
                                )?);
                            }
                        }
                    }
                    let uncropped = anomaly_setups(cfg, ds)?.remove(0);
                    let report = anomaly_case2_uncertainty(
                        &b,
                        &uncropped,
                        cfg.eval.ensemble_size,
                        kinds[0],
                        &params,
                        ds_seed,
                    )?;
                    write_json_atomic(
                        &dir.join(format!("uncertainty-{}.json", ds.dataset_id)),
                        &report,
                    )?;
                }
            }
            Some(Protocol::Realtime) => {
                for ds in &cfg.datasets {
                    let b = load_bundle(cfg, ds, true)?;
                    let prefixes = if cfg.eval.realtime_prefixes.is_empty() {
                        default_prefixes(b.trace_len())
                    } else {
                        cfg.eval.realtime_prefixes.clone()
                    };
                    for kind in &kinds {
                        rows.extend(realtime_eval(&b, &prefixes, synth_count, *kind, &params, seed)?);
                    }
                }
            }
            Some(Protocol::Repr1d2d) => {
                for ds in &cfg.datasets {
                    let b = load_bundle(cfg, ds, false)?;
                    let ds_seed = derive_seed(seed, &ds.dataset_id);
                    rows.extend(compare_1d_2d(
                        &b,
                        &cfg.eval.fractions_pct,
                        synth_count,
                        &cfg.diffusion,
                        &params,
                        ds_seed,
                    )?);
                }
            }
            Some(Protocol::SynthSweep) => {
                let counts = if cfg.eval.synth_counts.is_empty() {
                    default_synth_counts(synth_count)
                } else {
                    cfg.eval.synth_counts.clone()
                };
                for ds in &cfg.datasets {
                    let b = load_bundle(cfg, ds, true)?;
                    for kind in &kinds {
                        rows.extend(synth_count_sweep(&b, &counts, *kind, &params, seed)?);
                    }
                }
            }
        }
        if !rows.is_empty() || protocol != Some(Protocol::Anomaly) {
            fs::write(dir.join("rows.csv"), report_csv(&rows))?;
        }
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Report

fn eval_rows(root: &Path, proto: &str) -> Result<Option<EvalReport>> {
    let dir = root.join("eval").join(proto);
    if !manifest_path(&dir).is_file() {
        return Ok(None);
    }
    let text = fs::read_to_string(dir.join("rows.csv"))?;
    Ok(Some(report_from_csv(&text)?))
}

fn kinds_in(rows: &[crate::harness::EvalRow]) -> Vec<String> {
    let set: BTreeSet<&str> = rows.iter().map(|r| r.classifier.as_str()).collect();
    set.into_iter().map(String::from).collect()
}

fn filter_kind(rows: &[crate::harness::EvalRow], kind: &str) -> Vec<crate::harness::EvalRow> {
    rows.iter().filter(|r| r.classifier == kind).cloned().collect()
}

/// Smallest per-class training count in the ingested split, the reference
/// total that percentage fractions were taken from.
fn per_class_total(root: &Path, dataset_id: &str) -> Result<usize> {
    let train = load_traces(&root.join("ingest").join(dataset_id).join("train.json"))?;
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for t in &train {
        *counts.entry(t.class_label).or_insert(0) += 1;
    }
    counts
        .values()
        .copied()
        .min()
        .ok_or_else(|| Error::MissingClass(format!("{dataset_id} has no training traces")))
}

fn parse_hist_csv(text: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut ho = Vec::new();
    let mut hs = Vec::new();
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(Error::MalformedArtifact {
                path: "hist.csv".into(),
                reason: format!("expected 4 columns, got {}", cols.len()),
            });
        }
        let parse = |s: &str| {
            s.parse::<f64>().map_err(|_| Error::MalformedArtifact {
                path: "hist.csv".into(),
                reason: format!("bad float {s:?}"),
            })
        };
        ho.push(parse(cols[2])?);
        hs.push(parse(cols[3])?);
    }
    Ok((ho, hs))
}

pub fn run_report(cfg: &RunConfig, force: bool) -> Result<bool> {
    run_stage(cfg, "report", "report", "report", &[], force, "", |dir, _seed| {
        let root = &cfg.artifact_root;
        let mut wrote_any = false;

        // Scenario tables from whichever grid evaluation ran; the explicit
        // hierarchical rows win when both exist.
        let grid = match eval_rows(root, "hierarchical")? {
            Some(rows) => Some(rows),
            None => eval_rows(root, "standard")?,
        };
        if let Some(rows) = grid {
            for kind in kinds_in(&rows) {
                let table = hierarchical_table(&filter_kind(&rows, &kind))?;
                fs::write(dir.join(format!("hierarchical-{kind}.csv")), table)?;
            }
            wrote_any = true;
        }

        if let Some(rows) = eval_rows(root, "limited")? {
            for kind in kinds_in(&rows) {
                let sub = filter_kind(&rows, &kind);
                let datasets: BTreeSet<String> = sub.iter().map(|r| r.dataset.clone()).collect();
                for ds in datasets {
                    let ds_rows: Vec<_> =
                        sub.iter().filter(|r| r.dataset == ds).cloned().collect();
                    accuracy_vs_size_svg(
                        &ds_rows,
                        &format!("{ds}: accuracy vs originals per class ({kind})"),
                        &dir.join(format!("accuracy_vs_size-{ds}-{kind}.svg")),
                    )?;
                }
            }
            wrote_any = true;
        }

        if let Some(rows) = eval_rows(root, "realtime")? {
            for kind in kinds_in(&rows) {
                let sub = filter_kind(&rows, &kind);
                let datasets: BTreeSet<String> = sub.iter().map(|r| r.dataset.clone()).collect();
                for ds in datasets {
                    let ds_rows: Vec<_> =
                        sub.iter().filter(|r| r.dataset == ds).cloned().collect();
                    accuracy_vs_prefix_svg(
                        &ds_rows,
                        &format!("{ds}: accuracy vs trace prefix ({kind})"),
                        &dir.join(format!("accuracy_vs_prefix-{ds}-{kind}.svg")),
                    )?;
                }
            }
            wrote_any = true;
        }

        if let Some(rows) = eval_rows(root, "synthsweep")? {
            for kind in kinds_in(&rows) {
                let sub = filter_kind(&rows, &kind);
                let datasets: BTreeSet<String> = sub.iter().map(|r| r.dataset.clone()).collect();
                for ds in datasets {
                    let ds_rows: Vec<_> =
                        sub.iter().filter(|r| r.dataset == ds).cloned().collect();
                    accuracy_vs_synth_svg(
                        &ds_rows,
                        &format!("{ds}: accuracy vs synthetic images per class ({kind})"),
                        &dir.join(format!("accuracy_vs_synth-{ds}-{kind}.svg")),
                    )?;
                }
            }
            wrote_any = true;
        }

        if let Some(rows) = eval_rows(root, "1d2d")? {
            fs::write(dir.join("dm_1d2d.csv"), dm_1d2d_table(&rows)?)?;
            let datasets: BTreeSet<String> = rows.iter().map(|r| r.dataset.clone()).collect();
            for ds in datasets {
                let ds_rows: Vec<_> = rows.iter().filter(|r| r.dataset == ds).cloned().collect();
                let total = per_class_total(root, &ds)?;
                let table = fraction_table(&ds_rows, &cfg.eval.fractions_pct, total)?;
                fs::write(dir.join(format!("fractions-{ds}.csv")), table)?;
            }
            wrote_any = true;
        }

        let anomaly_dir = root.join("eval").join("anomaly");
        if manifest_path(&anomaly_dir).is_file() {
            for ds in &cfg.datasets {
                let src = anomaly_dir.join(format!("uncertainty-{}.json", ds.dataset_id));
                if src.is_file() {
                    let report: UncertaintyReport = read_json(&src)?;
                    entropy_dist_svg(
                        &report,
                        30,
                        &dir.join(format!("entropy-{}.svg", ds.dataset_id)),
                    )?;
                    wrote_any = true;
                }
            }
        }

        if !wrote_any {
            return Err(Error::MissingStage("eval".into()));
        }

        // Fidelity figures are optional extras when the fid stage ran.
        let fid_dir = root.join("fid");
        if manifest_path(&fid_dir).is_file() {
            for ds in &cfg.datasets {
                let src = fid_dir.join(&ds.dataset_id);
                let report: FidReport = read_json(&src.join("fid.json"))?;
                fid_bars_svg(&report, &dir.join(format!("fid_bars-{}.svg", ds.dataset_id)))?;
                let (ho, hs) = parse_hist_csv(&fs::read_to_string(src.join("hist.csv"))?)?;
                pixel_histogram_series_svg(
                    &ho,
                    &hs,
                    &dir.join(format!("pixel_hist-{}.svg", ds.dataset_id)),
                )?;
            }
        }
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// CLI

#[derive(Debug, Parser)]
#[command(
    name = "trafdiff",
    version,
    about = "Staged pipeline: traffic traces to angular-field images, \
             diffusion-sampled synthetics, and classifier evaluation"
)]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Rebuild the stage even when its artifacts are up to date.
    #[arg(long, global = true)]
    pub force: bool,
    /// Override the artifact root (wins over TRAFDIFF_ARTIFACT_ROOT and the config).
    #[arg(long, global = true, value_name = "DIR")]
    pub stage_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Normalize raw traces and write the train/test split.
    Ingest,
    /// Encode normalized traces as angular-field images.
    Encode,
    /// Enhance encoded images to training-resolution pixels.
    Enhance,
    /// Train the diffusion generator on enhanced training images.
    #[command(name = "train-dm")]
    TrainDm,
    /// Draw synthetic images per class from the trained generator.
    Sample {
        /// Images per class; defaults to the largest configured consumer.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Score synthetic fidelity against the original training images.
    Fid,
    /// Run an evaluation protocol (default: the scenario grid).
    Eval {
        #[arg(value_enum)]
        protocol: Option<Protocol>,
    },
    /// Render summary tables and figures from evaluation artifacts.
    Report,
}

/// Artifact-root precedence: `--stage-dir`, then TRAFDIFF_ARTIFACT_ROOT,
/// then the config value.
pub fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config <PATH> is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.stage_dir {
        cfg.artifact_root = dir.clone();
    } else if let Ok(v) = std::env::var("TRAFDIFF_ARTIFACT_ROOT") {
        if !v.is_empty() {
            cfg.artifact_root = PathBuf::from(v);
        }
    }
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = effective_config(&cli)?;
    match cli.cmd {
        Cmd::Ingest => run_ingest(&cfg, cli.force)?,
        Cmd::Encode => run_encode(&cfg, cli.force)?,
        Cmd::Enhance => run_enhance(&cfg, cli.force)?,
        Cmd::TrainDm => run_train_dm(&cfg, cli.force)?,
        Cmd::Sample { count } => run_sample(&cfg, count, cli.force)?,
        Cmd::Fid => run_fid(&cfg, cli.force)?,
        Cmd::Eval { protocol } => run_eval(&cfg, protocol, cli.force)?,
        Cmd::Report => run_report(&cfg, cli.force)?,
    };
    Ok(())
}

fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Io(_) => 2,
        Error::MissingStage(_) => 3,
        _ => 1,
    }
}

pub fn cli_main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version print to stdout and exit clean.
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}
