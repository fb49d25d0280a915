//! Downstream evaluation protocols: scenario composition, hierarchical
//! fingerprinting, limited-data sweeps, anomaly detection (augmentation
//! and ensemble-entropy cases), prefix-based near-real-time evaluation,
//! 1D-vs-2D generator comparison, and synthetic-count sweeps.
//!
//! Every row is reproducible from (config, seed); test sets contain only
//! held-out originals, enforced by provenance-id tracking.

use std::collections::{BTreeMap, BTreeSet};

use crate::classify::{
    train_and_eval, train_classifier, ClassifierKind, LabeledSet, TrainParams,
};
use crate::config::{derive_seed, DiffusionConfig, ImageConfig};
use crate::diffusion::{train_images, train_traces, Generator};
use crate::enhance::{enhance_pipeline, resize_area, PixelImage};
use crate::error::{Error, Result};
use crate::gasf::{crop_prefix, encode, GasfImage};
use crate::trace::NormalizedTrace;

// ---------------------------------------------------------------------------
// Rows and scenarios
// ---------------------------------------------------------------------------

/// Training-data composition regime; test data is always original held-out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Original,
    Synth,
    OriSynth,
}

impl Scenario {
    pub fn id(&self) -> &'static str {
        match self {
            Scenario::Original => "original",
            Scenario::Synth => "synth",
            Scenario::OriSynth => "ori+synth",
        }
    }

    pub fn parse(id: &str) -> Result<Scenario> {
        Ok(match id {
            "original" => Scenario::Original,
            "synth" => Scenario::Synth,
            "ori+synth" => Scenario::OriSynth,
            other => return Err(Error::InvalidInput(format!("unknown scenario {other:?}"))),
        })
    }
}

pub const ALL_SCENARIOS: [Scenario; 3] = [Scenario::Original, Scenario::Synth, Scenario::OriSynth];

/// One evaluation cell. `level` holds the hierarchy level (L1/L2/L3) or a
/// protocol variant tag; `crop_length` is the trace prefix in samples.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub dataset: String,
    pub level: String,
    pub scenario: Scenario,
    pub classifier: String,
    pub train_size: usize,
    pub synth_count: usize,
    pub crop_length: usize,
    pub accuracy: f64,
    pub seed: u64,
}

pub type EvalReport = Vec<EvalRow>;

const REPORT_HEADER: &str =
    "dataset,level,scenario,classifier,train_size,synth_count,crop_length,accuracy,seed";

/// CSV with one row per evaluation cell.
pub fn report_csv(rows: &[EvalRow]) -> String {
    let mut s = String::from(REPORT_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.dataset,
            r.level,
            r.scenario.id(),
            r.classifier,
            r.train_size,
            r.synth_count,
            r.crop_length,
            r.accuracy,
            r.seed
        ));
    }
    s
}

/// Inverse of [`report_csv`]; accuracies round-trip exactly through the
/// shortest-representation float format.
pub fn report_from_csv(text: &str) -> Result<EvalReport> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == REPORT_HEADER => {}
        other => {
            return Err(Error::MalformedArtifact {
                path: "<eval csv>".into(),
                reason: format!("unexpected header {other:?}"),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        let bad = |what: &str| Error::MalformedArtifact {
            path: "<eval csv>".into(),
            reason: format!("row {}: bad {what}: {line:?}", i + 2),
        };
        if parts.len() != 9 {
            return Err(bad("column count"));
        }
        rows.push(EvalRow {
            dataset: parts[0].to_string(),
            level: parts[1].to_string(),
            scenario: Scenario::parse(parts[2])?,
            classifier: parts[3].to_string(),
            train_size: parts[4].parse().map_err(|_| bad("train_size"))?,
            synth_count: parts[5].parse().map_err(|_| bad("synth_count"))?,
            crop_length: parts[6].parse().map_err(|_| bad("crop_length"))?,
            accuracy: parts[7].parse().map_err(|_| bad("accuracy"))?,
            seed: parts[8].parse().map_err(|_| bad("seed"))?,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Dataset bundle
// ---------------------------------------------------------------------------

/// Everything one dataset contributes to evaluation: original splits as
/// traces, full-resolution angular fields, and enhanced images, plus the
/// synthetic pool. Images are derived from the fields with one config, so
/// prefix crops at full length reproduce them bit-for-bit.
#[derive(Clone)]
pub struct DatasetBundle {
    pub dataset_id: String,
    pub img_cfg: ImageConfig,
    pub train_traces: Vec<NormalizedTrace>,
    pub test_traces: Vec<NormalizedTrace>,
    pub train_gasf: Vec<GasfImage>,
    pub test_gasf: Vec<GasfImage>,
    pub train_images: Vec<PixelImage>,
    pub test_images: Vec<PixelImage>,
    pub synth_images: Vec<PixelImage>,
}

impl DatasetBundle {
    pub fn new(
        dataset_id: &str,
        train_traces: Vec<NormalizedTrace>,
        test_traces: Vec<NormalizedTrace>,
        synth_images: Vec<PixelImage>,
        img_cfg: &ImageConfig,
    ) -> Result<DatasetBundle> {
        if train_traces.is_empty() || test_traces.is_empty() {
            return Err(Error::InvalidInput("bundle needs train and test traces".into()));
        }
        let n = train_traces[0].len();
        for t in train_traces.iter().chain(&test_traces) {
            if t.len() != n {
                return Err(Error::ShapeMismatch("mixed trace lengths in bundle".into()));
            }
        }
        let to_imgs = |traces: &[NormalizedTrace]| -> Result<(Vec<GasfImage>, Vec<PixelImage>)> {
            let mut gs = Vec::with_capacity(traces.len());
            let mut imgs = Vec::with_capacity(traces.len());
            for t in traces {
                let g = encode(t)?;
                imgs.push(enhance_pipeline(&g, img_cfg)?);
                gs.push(g);
            }
            Ok((gs, imgs))
        };
        let (train_gasf, train_images) = to_imgs(&train_traces)?;
        let (test_gasf, test_images) = to_imgs(&test_traces)?;
        Ok(DatasetBundle {
            dataset_id: dataset_id.to_string(),
            img_cfg: *img_cfg,
            train_traces,
            test_traces,
            train_gasf,
            test_gasf,
            train_images,
            test_images,
            synth_images,
        })
    }

    pub fn trace_len(&self) -> usize {
        self.train_traces[0].len()
    }

    pub fn classes(&self) -> Vec<u32> {
        let mut cs: Vec<u32> = self.train_traces.iter().map(|t| t.class_label).collect();
        cs.sort_unstable();
        cs.dedup();
        cs
    }

    pub fn train_set(&self) -> Result<LabeledSet> {
        LabeledSet::from_images(&self.train_images, &format!("o:{}", self.dataset_id))
    }

    pub fn test_set(&self) -> Result<LabeledSet> {
        LabeledSet::from_images(&self.test_images, &format!("t:{}", self.dataset_id))
    }

    pub fn synth_set(&self) -> Result<LabeledSet> {
        LabeledSet::from_images(&self.synth_images, &format!("s:{}", self.dataset_id))
    }
}

// ---------------------------------------------------------------------------
// Set plumbing
// ---------------------------------------------------------------------------

fn set_subset(set: &LabeledSet, rows: &[usize]) -> LabeledSet {
    LabeledSet {
        x: rows.iter().map(|&r| set.x[r].clone()).collect(),
        y: rows.iter().map(|&r| set.y[r]).collect(),
        ids: rows.iter().map(|&r| set.ids[r].clone()).collect(),
        shape: set.shape,
    }
}

fn classes_of(set: &LabeledSet) -> Vec<u32> {
    let mut cs = set.y.clone();
    cs.sort_unstable();
    cs.dedup();
    cs
}

/// First k rows of every class, in set order; the nesting contract for
/// synthetic pools.
fn take_per_class(set: &LabeledSet, k: usize) -> Result<LabeledSet> {
    let mut taken: BTreeMap<u32, usize> = BTreeMap::new();
    let mut rows = Vec::new();
    for (r, &y) in set.y.iter().enumerate() {
        let cnt = taken.entry(y).or_insert(0);
        if *cnt < k {
            rows.push(r);
            *cnt += 1;
        }
    }
    for (&c, &cnt) in &taken {
        if cnt < k {
            return Err(Error::InvalidInput(format!(
                "class {c} has only {cnt} rows, need {k}"
            )));
        }
    }
    Ok(set_subset(set, &rows))
}

fn relabel(set: &LabeledSet, map: &BTreeMap<u32, u32>) -> Result<LabeledSet> {
    let mut out = set.clone();
    for y in &mut out.y {
        *y = *map
            .get(y)
            .ok_or_else(|| Error::MissingClass(format!("no relabeling for class {y}")))?;
    }
    Ok(out)
}

/// Minimum per-class row count; the bookkeeping value for train_size.
fn per_class_count(set: &LabeledSet) -> usize {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for &y in &set.y {
        *counts.entry(y).or_insert(0) += 1;
    }
    counts.values().copied().min().unwrap_or(0)
}

/// Compose the training set for a scenario. Synthetic rows are the first
/// `synth_count` of each class in pool order, so counts nest.
pub fn build_training_set(
    scenario: Scenario,
    original: &LabeledSet,
    synth_pool: &LabeledSet,
    synth_count: usize,
) -> Result<LabeledSet> {
    match scenario {
        Scenario::Original => Ok(original.clone()),
        Scenario::Synth | Scenario::OriSynth => {
            let orig_classes = classes_of(original);
            let pool_classes: BTreeSet<u32> = synth_pool.y.iter().copied().collect();
            for c in &orig_classes {
                if !pool_classes.contains(c) {
                    return Err(Error::MissingClass(format!(
                        "class {c} missing from synthetic pool"
                    )));
                }
            }
            let synth = take_per_class(synth_pool, synth_count)?;
            match scenario {
                Scenario::Synth => Ok(synth),
                _ => original.concat(&synth),
            }
        }
    }
}

/// No synthetic sample and no training row may appear in a test set.
fn check_purity(train: &LabeledSet, test: &LabeledSet) -> Result<()> {
    for id in &test.ids {
        if id.starts_with("s:") {
            return Err(Error::InvalidInput(format!("synthetic sample {id} in test set")));
        }
    }
    let train_ids: BTreeSet<&String> = train.ids.iter().collect();
    for id in &test.ids {
        if train_ids.contains(id) {
            return Err(Error::InvalidInput(format!("test sample {id} leaked into training")));
        }
    }
    Ok(())
}

fn eval_cell(
    kind: ClassifierKind,
    train: &LabeledSet,
    test: &LabeledSet,
    seed: u64,
    params: &TrainParams,
) -> Result<f64> {
    check_purity(train, test)?;
    train_and_eval(kind, train, test, seed, params)
}

fn cell_seed(root: u64, dataset: &str, level: &str, scenario: Scenario, kind: ClassifierKind) -> u64 {
    derive_seed(root, &format!("cell/{dataset}/{level}/{}/{}", scenario.id(), kind.id()))
}

// ---------------------------------------------------------------------------
// Standard per-dataset evaluation (the L3 baseline row)
// ---------------------------------------------------------------------------

/// Class-level evaluation of one dataset under all three scenarios.
pub fn standard_eval(
    bundle: &DatasetBundle,
    synth_count: usize,
    kind: ClassifierKind,
    params: &TrainParams,
    seed: u64,
) -> Result<EvalReport> {
    let original = bundle.train_set()?;
    let synth = bundle.synth_set()?;
    let test = bundle.test_set()?;
    let mut rows = Vec::new();
    for scenario in ALL_SCENARIOS {
        let train = build_training_set(scenario, &original, &synth, synth_count)?;
        let s = cell_seed(seed, &bundle.dataset_id, "L3", scenario, kind);
        let accuracy = eval_cell(kind, &train, &test, s, params)?;
        rows.push(EvalRow {
            dataset: bundle.dataset_id.clone(),
            level: "L3".into(),
            scenario,
            classifier: kind.id().into(),
            train_size: if scenario == Scenario::Synth { 0 } else { per_class_count(&original) },
            synth_count: if scenario == Scenario::Original { 0 } else { synth_count },
            crop_length: bundle.trace_len(),
            accuracy,
            seed: s,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Hierarchical evaluation
// ---------------------------------------------------------------------------

/// Split "type-platform" ids; the platform half is optional.
fn parse_hierarchy(dataset_id: &str) -> Result<(String, Option<String>)> {
    match dataset_id.split_once('-') {
        Some((t, p)) => {
            if t.is_empty() || p.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "dataset id {dataset_id:?} has empty hierarchy labels"
                )));
            }
            Ok((t.to_string(), Some(p.to_string())))
        }
        None => {
            if dataset_id.is_empty() {
                return Err(Error::InvalidInput("empty dataset id".into()));
            }
            Ok((dataset_id.to_string(), None))
        }
    }
}

/// Scenario training set plus test set for one bundle, with every label
/// replaced by a fixed group label.
fn grouped_sets(
    bundle: &DatasetBundle,
    scenario: Scenario,
    synth_count: usize,
    group_label: u32,
) -> Result<(LabeledSet, LabeledSet)> {
    let original = bundle.train_set()?;
    let synth = bundle.synth_set()?;
    let train = build_training_set(scenario, &original, &synth, synth_count)?;
    let map: BTreeMap<u32, u32> =
        classes_of(&train).into_iter().map(|c| (c, group_label)).collect();
    let train = relabel(&train, &map)?;
    let test_raw = bundle.test_set()?;
    let tmap: BTreeMap<u32, u32> =
        classes_of(&test_raw).into_iter().map(|c| (c, group_label)).collect();
    let test = relabel(&test_raw, &tmap)?;
    Ok((train, test))
}

fn concat_all(sets: Vec<LabeledSet>) -> Result<LabeledSet> {
    let mut it = sets.into_iter();
    let mut acc = it.next().ok_or_else(|| Error::InvalidInput("no sets to merge".into()))?;
    for s in it {
        acc = acc.concat(&s)?;
    }
    Ok(acc)
}

/// Traffic-type (L1), platform (L2), and class (L3) rows for all three
/// scenarios. L2 groups exist only where a traffic type has two or more
/// platforms.
pub fn hierarchical_eval(
    bundles: &[DatasetBundle],
    synth_count: usize,
    kind: ClassifierKind,
    params: &TrainParams,
    seed: u64,
) -> Result<EvalReport> {
    if bundles.is_empty() {
        return Err(Error::InvalidInput("no datasets supplied".into()));
    }
    let mut parsed = Vec::with_capacity(bundles.len());
    for b in bundles {
        parsed.push(parse_hierarchy(&b.dataset_id)?);
    }
    let mut types: Vec<String> = parsed.iter().map(|(t, _)| t.clone()).collect();
    types.sort();
    types.dedup();
    if types.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "traffic-type level needs >= 2 types, got {types:?}"
        )));
    }
    let mut rows = Vec::new();

    // L1: one classifier across all datasets, labeled by traffic type.
    for scenario in ALL_SCENARIOS {
        let mut trains = Vec::new();
        let mut tests = Vec::new();
        for (b, (t, _)) in bundles.iter().zip(&parsed) {
            let label = types.iter().position(|x| x == t).unwrap() as u32;
            let (tr, te) = grouped_sets(b, scenario, synth_count, label)?;
            trains.push(tr);
            tests.push(te);
        }
        let train = concat_all(trains)?;
        let test = concat_all(tests)?;
        let s = cell_seed(seed, "all", "L1", scenario, kind);
        let accuracy = eval_cell(kind, &train, &test, s, params)?;
        rows.push(EvalRow {
            dataset: "all".into(),
            level: "L1".into(),
            scenario,
            classifier: kind.id().into(),
            train_size: per_class_count(&train),
            synth_count: if scenario == Scenario::Original { 0 } else { synth_count },
            crop_length: bundles[0].trace_len(),
            accuracy,
            seed: s,
        });
    }

    // L2: within each traffic type having >= 2 platforms.
    for t in &types {
        let members: Vec<(usize, String)> = parsed
            .iter()
            .enumerate()
            .filter_map(|(i, (ty, p))| {
                (ty == t).then(|| p.clone().map(|p| (i, p))).flatten()
            })
            .collect();
        let mut platforms: Vec<String> = members.iter().map(|(_, p)| p.clone()).collect();
        platforms.sort();
        platforms.dedup();
        if platforms.len() < 2 {
            continue;
        }
        for scenario in ALL_SCENARIOS {
            let mut trains = Vec::new();
            let mut tests = Vec::new();
            for (i, p) in &members {
                let label = platforms.iter().position(|x| x == p).unwrap() as u32;
                let (tr, te) = grouped_sets(&bundles[*i], scenario, synth_count, label)?;
                trains.push(tr);
                tests.push(te);
            }
            let train = concat_all(trains)?;
            let test = concat_all(tests)?;
            let s = cell_seed(seed, t, "L2", scenario, kind);
            let accuracy = eval_cell(kind, &train, &test, s, params)?;
            rows.push(EvalRow {
                dataset: t.clone(),
                level: "L2".into(),
                scenario,
                classifier: kind.id().into(),
                train_size: per_class_count(&train),
                synth_count: if scenario == Scenario::Original { 0 } else { synth_count },
                crop_length: bundles[members[0].0].trace_len(),
                accuracy,
                seed: s,
            });
        }
    }

    // L3: per-dataset class-level rows.
    for b in bundles {
        rows.extend(standard_eval(b, synth_count, kind, params, seed)?);
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Limited-data sweep
// ---------------------------------------------------------------------------

fn images_first_k_per_class(images: &[PixelImage], k: usize) -> Result<Vec<PixelImage>> {
    let mut taken: BTreeMap<u32, usize> = BTreeMap::new();
    let mut out = Vec::new();
    for img in images {
        let cnt = taken.entry(img.meta.class_label).or_insert(0);
        if *cnt < k {
            out.push(img.clone());
            *cnt += 1;
        }
    }
    for (&c, &cnt) in &taken {
        if cnt < k {
            return Err(Error::InvalidInput(format!(
                "class {c} has only {cnt} originals, need {k}"
            )));
        }
    }
    Ok(out)
}

fn sample_pool(
    generator: &mut Generator,
    classes: &[u32],
    per_class: usize,
    seed: u64,
) -> Result<Vec<PixelImage>> {
    let mut pool = Vec::with_capacity(classes.len() * per_class);
    for &c in classes {
        pool.extend(generator.sample(c, per_class, seed)?);
    }
    Ok(pool)
}

/// Retrain the generator on s originals per class for each size s, then
/// evaluate all three scenarios against the fixed held-out test split.
#[allow(clippy::too_many_arguments)]
pub fn limited_data_sweep(
    bundle: &DatasetBundle,
    train_sizes: &[usize],
    synth_count: usize,
    dm_cfg: &DiffusionConfig,
    kind: ClassifierKind,
    params: &TrainParams,
    seed: u64,
) -> Result<EvalReport> {
    let test = bundle.test_set()?;
    let classes = bundle.classes();
    let mut rows = Vec::new();
    for &s in train_sizes {
        if s == 0 {
            return Err(Error::InvalidInput("train size 0 is not evaluable".into()));
        }
        let originals = images_first_k_per_class(&bundle.train_images, s)?;
        let dm_seed = derive_seed(seed, &format!("limited/{s}/dm"));
        let (mut generator, _) = train_images(&originals, dm_cfg, &bundle.dataset_id, dm_seed)?;
        let pool = sample_pool(
            &mut generator,
            &classes,
            synth_count,
            derive_seed(seed, &format!("limited/{s}/sample")),
        )?;
        let original_set =
            LabeledSet::from_images(&originals, &format!("o:{}", bundle.dataset_id))?;
        let synth_set = LabeledSet::from_images(&pool, &format!("s:{}", bundle.dataset_id))?;
        for scenario in ALL_SCENARIOS {
            let train = build_training_set(scenario, &original_set, &synth_set, synth_count)?;
            let cs = derive_seed(
                seed,
                &format!("limited/{s}/cell/{}/{}", scenario.id(), kind.id()),
            );
            let accuracy = eval_cell(kind, &train, &test, cs, params)?;
            rows.push(EvalRow {
                dataset: bundle.dataset_id.clone(),
                level: "limited".into(),
                scenario,
                classifier: kind.id().into(),
                // The sweep size parametrizes every scenario (it is the
                // generator's training budget), so record it on all rows.
                train_size: s,
                synth_count: if scenario == Scenario::Original { 0 } else { synth_count },
                crop_length: bundle.trace_len(),
                accuracy,
                seed: cs,
            });
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Anomaly detection
// ---------------------------------------------------------------------------

/// Class split for the anomaly protocols: a few classes with scarce
/// training data against a legitimate majority.
#[derive(Debug, Clone)]
pub struct AnomalySetup {
    pub anomaly_classes: Vec<u32>,
    pub legitimate_classes: Vec<u32>,
    /// Training traces kept per anomaly class.
    pub anomaly_train_count: usize,
    /// Optional prefix length in samples (the truncated-trace variant).
    pub crop_length: Option<usize>,
}

impl AnomalySetup {
    pub fn validate(&self) -> Result<()> {
        if self.anomaly_classes.is_empty() || self.legitimate_classes.is_empty() {
            return Err(Error::InvalidInput("both class sets must be non-empty".into()));
        }
        let legit: BTreeSet<u32> = self.legitimate_classes.iter().copied().collect();
        for c in &self.anomaly_classes {
            if legit.contains(c) {
                return Err(Error::InvalidInput(format!(
                    "class {c} appears in both anomaly and legitimate sets"
                )));
            }
        }
        if self.anomaly_train_count == 0 {
            return Err(Error::InvalidInput("anomaly classes need >= 1 training trace".into()));
        }
        Ok(())
    }
}

/// Seconds-to-samples conversion for prefix truncation.
pub fn prefix_from_seconds(seconds: f64, bin_width: f64) -> Result<usize> {
    if !(seconds > 0.0 && bin_width > 0.0) {
        return Err(Error::InvalidInput("durations must be positive".into()));
    }
    Ok((seconds / bin_width).round() as usize)
}

/// Original GASF fields cropped to a prefix and re-enhanced to the
/// training resolution. The full-length crop is bit-identical to the
/// bundle's stored images.
fn cropped_image_sets(
    bundle: &DatasetBundle,
    m: usize,
) -> Result<(Vec<PixelImage>, Vec<PixelImage>)> {
    let redo = |gs: &[GasfImage]| -> Result<Vec<PixelImage>> {
        gs.iter()
            .map(|g| enhance_pipeline(&crop_prefix(g, m)?, &bundle.img_cfg))
            .collect()
    };
    Ok((redo(&bundle.train_gasf)?, redo(&bundle.test_gasf)?))
}

fn filter_images(images: &[PixelImage], keep: &BTreeSet<u32>) -> Vec<PixelImage> {
    images.iter().filter(|i| keep.contains(&i.meta.class_label)).cloned().collect()
}

/// Anomaly case with ground truth for all classes: anomaly classes train
/// with few traces, optionally augmented by a generator trained on those
/// same few; accuracy is reported on anomaly-class test traces only.
#[allow(clippy::too_many_arguments)]
pub fn anomaly_case1(
    bundle: &DatasetBundle,
    setup: &AnomalySetup,
    scenario: Scenario,
    synth_count: usize,
    dm_cfg: &DiffusionConfig,
    kind: ClassifierKind,
    params: &TrainParams,
    seed: u64,
) -> Result<EvalRow> {
    setup.validate()?;
    let n = bundle.trace_len();
    let m = setup.crop_length.unwrap_or(n);
    let (train_imgs, test_imgs) = if m == n {
        (bundle.train_images.clone(), bundle.test_images.clone())
    } else {
        cropped_image_sets(bundle, m)?
    };
    let anom: BTreeSet<u32> = setup.anomaly_classes.iter().copied().collect();
    let legit: BTreeSet<u32> = setup.legitimate_classes.iter().copied().collect();
    let legit_train = filter_images(&train_imgs, &legit);
    let anom_all = filter_images(&train_imgs, &anom);
    let anom_train = images_first_k_per_class(&anom_all, setup.anomaly_train_count)?;
    if legit_train.is_empty() {
        return Err(Error::MissingClass("no legitimate training traces".into()));
    }

    let prefix_o = format!("o:{}", bundle.dataset_id);
    let prefix_s = format!("s:{}", bundle.dataset_id);
    let legit_set = LabeledSet::from_images(&legit_train, &prefix_o)?;
    let anom_set = LabeledSet::from_images(&anom_train, &prefix_o)?;

    let train = match scenario {
        Scenario::Original => legit_set.concat(&anom_set)?,
        Scenario::Synth | Scenario::OriSynth => {
            // Generator sees only the scarce anomaly originals.
            let dm_seed = derive_seed(seed, "anom1/dm");
            let (mut generator, _) =
                train_images(&anom_train, dm_cfg, &bundle.dataset_id, dm_seed)?;
            let pool = sample_pool(
                &mut generator,
                &setup.anomaly_classes,
                synth_count,
                derive_seed(seed, "anom1/sample"),
            )?;
            let synth_set = LabeledSet::from_images(&pool, &prefix_s)?;
            match scenario {
                Scenario::Synth => legit_set.concat(&synth_set)?,
                _ => legit_set.concat(&anom_set)?.concat(&synth_set)?,
            }
        }
    };

    let test_all = LabeledSet::from_images(&test_imgs, &format!("t:{}", bundle.dataset_id))?;
    check_purity(&train, &test_all)?;
    let cs = derive_seed(seed, &format!("anom1/cell/{}/{}", scenario.id(), kind.id()));
    let mut clf = train_classifier(kind, &train, cs, params)?;
    let anom_rows: Vec<usize> =
        (0..test_all.len()).filter(|&r| anom.contains(&test_all.y[r])).collect();
    if anom_rows.is_empty() {
        return Err(Error::MissingClass("no anomaly-class test traces".into()));
    }
    let anom_test = set_subset(&test_all, &anom_rows);
    let pred = clf.predict(&anom_test)?;
    let correct = pred.iter().zip(&anom_test.y).filter(|(p, t)| p == t).count();
    let accuracy = 100.0 * correct as f64 / anom_test.len() as f64;
    Ok(EvalRow {
        dataset: bundle.dataset_id.clone(),
        level: "anomaly-case1".into(),
        scenario,
        classifier: kind.id().into(),
        train_size: setup.anomaly_train_count,
        synth_count: if scenario == Scenario::Original { 0 } else { synth_count },
        crop_length: m,
        accuracy,
        seed: cs,
    })
}

/// Entropy populations from an ensemble trained only on legitimate
/// classes; anomalies should land at higher predictive entropy.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct UncertaintyReport {
    pub ensemble_size: usize,
    pub num_classes: usize,
    pub legit_entropy: Vec<f64>,
    pub anomaly_entropy: Vec<f64>,
}

impl UncertaintyReport {
    pub fn max_entropy(&self) -> f64 {
        (self.num_classes as f64).ln()
    }

    pub fn mean_legit(&self) -> f64 {
        self.legit_entropy.iter().sum::<f64>() / self.legit_entropy.len() as f64
    }

    pub fn mean_anomaly(&self) -> f64 {
        self.anomaly_entropy.iter().sum::<f64>() / self.anomaly_entropy.len() as f64
    }

    /// Rows `population,entropy`.
    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("population,entropy\n");
        for v in &self.legit_entropy {
            s.push_str(&format!("legitimate,{v}\n"));
        }
        for v in &self.anomaly_entropy {
            s.push_str(&format!("anomaly,{v}\n"));
        }
        s
    }
}

/// Anomaly case without anomaly ground truth: M classifiers trained on
/// legitimate classes only; per-trace predictive entropy of the
/// ensemble-mean probabilities, split by population.
pub fn anomaly_case2_uncertainty(
    bundle: &DatasetBundle,
    setup: &AnomalySetup,
    ensemble_size: usize,
    kind: ClassifierKind,
    params: &TrainParams,
    seed: u64,
) -> Result<UncertaintyReport> {
    setup.validate()?;
    if ensemble_size < 2 {
        return Err(Error::InvalidInput("ensemble needs M >= 2".into()));
    }
    let legit: BTreeSet<u32> = setup.legitimate_classes.iter().copied().collect();
    let anom: BTreeSet<u32> = setup.anomaly_classes.iter().copied().collect();
    let legit_train = filter_images(&bundle.train_images, &legit);
    if legit_train.is_empty() {
        return Err(Error::MissingClass("no legitimate training traces".into()));
    }
    let train = LabeledSet::from_images(&legit_train, &format!("o:{}", bundle.dataset_id))?;
    let k = classes_of(&train).len();
    let test = bundle.test_set()?;
    check_purity(&train, &test)?;

    let mut mean_probs = vec![vec![0.0f64; k]; test.len()];
    for i in 0..ensemble_size {
        let s = derive_seed(seed, &format!("ens/{i}"));
        let mut clf = train_classifier(kind, &train, s, params)?;
        let probs = clf.predict_proba(&test)?;
        for (acc, p) in mean_probs.iter_mut().zip(&probs) {
            for (a, &v) in acc.iter_mut().zip(p) {
                *a += v / ensemble_size as f64;
            }
        }
    }
    let mut legit_entropy = Vec::new();
    let mut anomaly_entropy = Vec::new();
    let bound = (k as f64).ln() + 1e-12;
    for (r, p) in mean_probs.iter().enumerate() {
        let h = crate::classify::entropy(p);
        if !(0.0..=bound).contains(&h) {
            return Err(Error::Numerical(format!("entropy {h} outside [0, ln {k}]")));
        }
        if anom.contains(&test.y[r]) {
            anomaly_entropy.push(h);
        } else if legit.contains(&test.y[r]) {
            legit_entropy.push(h);
        }
    }
    if legit_entropy.is_empty() || anomaly_entropy.is_empty() {
        return Err(Error::MissingClass(
            "test split must contain both legitimate and anomaly traces".into(),
        ));
    }
    Ok(UncertaintyReport {
        ensemble_size,
        num_classes: k,
        legit_entropy,
        anomaly_entropy,
    })
}

// ---------------------------------------------------------------------------
// Near-real-time (prefix) evaluation
// ---------------------------------------------------------------------------

fn crop_pixels(img: &PixelImage, k: usize) -> PixelImage {
    if k >= img.h && k >= img.w {
        return img.clone();
    }
    let mut data = Vec::with_capacity(k * k);
    for r in 0..k {
        data.extend_from_slice(&img.data[r * img.w..r * img.w + k]);
    }
    PixelImage { h: k, w: k, data, meta: img.meta.clone() }
}

/// Synthetic images carry no stored field, so a prefix is realized as the
/// proportional top-left block, resized back to the training resolution.
fn frac_crop_synth(synth: &[PixelImage], m: usize, n: usize, res: usize) -> Result<Vec<PixelImage>> {
    let k = (((res * m) as f64 / n as f64).round() as usize).clamp(1, res);
    synth
        .iter()
        .map(|img| {
            let c = crop_pixels(img, k);
            resize_area(&c, res, res)
        })
        .collect()
}

/// Accuracy per trace-prefix length. The full-length row coincides with
/// [`standard_eval`]'s row for the same seed, bit for bit.
#[allow(clippy::too_many_arguments)]
pub fn realtime_eval(
    bundle: &DatasetBundle,
    prefixes: &[usize],
    synth_count: usize,
    kind: ClassifierKind,
    params: &TrainParams,
    seed: u64,
) -> Result<EvalReport> {
    let n = bundle.trace_len();
    let res = bundle.img_cfg.resolution;
    let mut rows = Vec::new();
    for &m in prefixes {
        if m < 2 || m > n {
            return Err(Error::InvalidInput(format!("prefix {m} outside [2, {n}]")));
        }
        let (train_imgs, test_imgs) = if m == n {
            (bundle.train_images.clone(), bundle.test_images.clone())
        } else {
            cropped_image_sets(bundle, m)?
        };
        let synth_imgs = if m == n {
            bundle.synth_images.clone()
        } else {
            frac_crop_synth(&bundle.synth_images, m, n, res)?
        };
        let original = LabeledSet::from_images(&train_imgs, &format!("o:{}", bundle.dataset_id))?;
        let synth = LabeledSet::from_images(&synth_imgs, &format!("s:{}", bundle.dataset_id))?;
        let test = LabeledSet::from_images(&test_imgs, &format!("t:{}", bundle.dataset_id))?;
        for scenario in ALL_SCENARIOS {
            let train = build_training_set(scenario, &original, &synth, synth_count)?;
            // Shared with the standard row so the full prefix reproduces it.
            let s = cell_seed(seed, &bundle.dataset_id, "L3", scenario, kind);
            let accuracy = eval_cell(kind, &train, &test, s, params)?;
            rows.push(EvalRow {
                dataset: bundle.dataset_id.clone(),
                level: "L3".into(),
                scenario,
                classifier: kind.id().into(),
                train_size: if scenario == Scenario::Synth { 0 } else { per_class_count(&original) },
                synth_count: if scenario == Scenario::Original { 0 } else { synth_count },
                crop_length: m,
                accuracy,
                seed: s,
            });
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// 1D-vs-2D comparison
// ---------------------------------------------------------------------------

fn traces_first_k_per_class(traces: &[NormalizedTrace], k: usize) -> Result<Vec<NormalizedTrace>> {
    let mut taken: BTreeMap<u32, usize> = BTreeMap::new();
    let mut out = Vec::new();
    for t in traces {
        let cnt = taken.entry(t.class_label).or_insert(0);
        if *cnt < k {
            out.push(t.clone());
            *cnt += 1;
        }
    }
    for (&c, &cnt) in &taken {
        if cnt < k {
            return Err(Error::InvalidInput(format!(
                "class {c} has only {cnt} traces, need {k}"
            )));
        }
    }
    Ok(out)
}

fn traces_per_class_count(traces: &[NormalizedTrace]) -> BTreeMap<u32, usize> {
    let mut counts = BTreeMap::new();
    for t in traces {
        *counts.entry(t.class_label).or_insert(0) += 1;
    }
    counts
}

/// Per-class training count for a percentage fraction, never below 1.
pub fn fraction_count(pct: usize, per_class_total: usize) -> usize {
    ((pct * per_class_total) as f64 / 100.0).floor().max(1.0) as usize
}

/// Two comparisons in one report, distinguished by the level tag.
/// "repr-1d"/"repr-2d" rows compare the raw-trace and image
/// representations on original data at training fractions; "dm-1d"/
/// "dm-2d" rows compare generators of each dimensionality under the
/// synth and ori+synth scenarios, 1D samples converted to images post
/// hoc; one "baseline" row carries the full-data original accuracy.
#[allow(clippy::too_many_arguments)]
pub fn compare_1d_2d(
    bundle: &DatasetBundle,
    fractions_pct: &[usize],
    synth_count: usize,
    dm_cfg: &DiffusionConfig,
    params: &TrainParams,
    seed: u64,
) -> Result<EvalReport> {
    let mut rows = Vec::new();
    let prefix_o = format!("o:{}", bundle.dataset_id);
    let prefix_s = format!("s:{}", bundle.dataset_id);
    let test_imgs = bundle.test_set()?;
    let test_traces = LabeledSet::from_traces(&bundle.test_traces, &format!("t:{}", bundle.dataset_id))?;

    // (a) representation comparison at training fractions.
    let counts = traces_per_class_count(&bundle.train_traces);
    let min_per_class = *counts.values().min().unwrap();
    for &pct in fractions_pct {
        if pct == 0 || pct > 100 {
            return Err(Error::InvalidInput(format!("fraction {pct}% outside (0, 100]")));
        }
        let k = fraction_count(pct, min_per_class);
        let sub_traces = traces_first_k_per_class(&bundle.train_traces, k)?;
        let sub_images = images_first_k_per_class(&bundle.train_images, k)?;
        let train_1d = LabeledSet::from_traces(&sub_traces, &prefix_o)?;
        let train_2d = LabeledSet::from_images(&sub_images, &prefix_o)?;
        let s1 = derive_seed(seed, &format!("cmp/frac{pct}/1d"));
        let a1 = eval_cell(ClassifierKind::Conv1d, &train_1d, &test_traces, s1, params)?;
        let s2 = derive_seed(seed, &format!("cmp/frac{pct}/2d"));
        let a2 = eval_cell(ClassifierKind::Conv2d, &train_2d, &test_imgs, s2, params)?;
        for (level, kind, acc, s) in [
            ("repr-1d", ClassifierKind::Conv1d, a1, s1),
            ("repr-2d", ClassifierKind::Conv2d, a2, s2),
        ] {
            rows.push(EvalRow {
                dataset: bundle.dataset_id.clone(),
                level: level.into(),
                scenario: Scenario::Original,
                classifier: kind.id().into(),
                train_size: k,
                synth_count: 0,
                crop_length: bundle.trace_len(),
                accuracy: acc,
                seed: s,
            });
        }
    }

    // (b) generator comparison: identical schedules and budgets, only the
    // denoiser dimensionality differs.
    let (mut gen_1d, _) =
        train_traces(&bundle.train_traces, dm_cfg, &bundle.dataset_id, derive_seed(seed, "cmp/dm1d"))?;
    let (mut gen_2d, _) =
        train_images(&bundle.train_images, dm_cfg, &bundle.dataset_id, derive_seed(seed, "cmp/dm2d"))?;
    let classes = bundle.classes();
    let mut synth_1d_imgs = Vec::new();
    for &c in &classes {
        for t in gen_1d.sample_traces(c, synth_count, derive_seed(seed, "cmp/sample1d"))? {
            let g = encode(&t)?;
            synth_1d_imgs.push(enhance_pipeline(&g, &bundle.img_cfg)?);
        }
    }
    let synth_2d_imgs = sample_pool(
        &mut gen_2d,
        &classes,
        synth_count,
        derive_seed(seed, "cmp/sample2d"),
    )?;
    let original = bundle.train_set()?;
    let s0 = derive_seed(seed, "cmp/baseline");
    let a0 = eval_cell(ClassifierKind::Conv2d, &original, &test_imgs, s0, params)?;
    rows.push(EvalRow {
        dataset: bundle.dataset_id.clone(),
        level: "baseline".into(),
        scenario: Scenario::Original,
        classifier: ClassifierKind::Conv2d.id().into(),
        train_size: per_class_count(&original),
        synth_count: 0,
        crop_length: bundle.trace_len(),
        accuracy: a0,
        seed: s0,
    });
    for (level, pool) in [("dm-1d", &synth_1d_imgs), ("dm-2d", &synth_2d_imgs)] {
        let synth_set = LabeledSet::from_images(pool, &prefix_s)?;
        for scenario in [Scenario::Synth, Scenario::OriSynth] {
            let train = build_training_set(scenario, &original, &synth_set, synth_count)?;
            let s = derive_seed(seed, &format!("cmp/gen/{level}/{}", scenario.id()));
            let accuracy = eval_cell(ClassifierKind::Conv2d, &train, &test_imgs, s, params)?;
            rows.push(EvalRow {
                dataset: bundle.dataset_id.clone(),
                level: level.into(),
                scenario,
                classifier: ClassifierKind::Conv2d.id().into(),
                train_size: if scenario == Scenario::Synth { 0 } else { per_class_count(&original) },
                synth_count,
                crop_length: bundle.trace_len(),
                accuracy,
                seed: s,
            });
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Synthetic-count sweep
// ---------------------------------------------------------------------------

/// Accuracy from original-only through growing synth-only counts to the
/// combined scenario at the largest count. Counts reuse one pool, so the
/// subsets nest.
pub fn synth_count_sweep(
    bundle: &DatasetBundle,
    counts: &[usize],
    kind: ClassifierKind,
    params: &TrainParams,
    seed: u64,
) -> Result<EvalReport> {
    if counts.is_empty() {
        return Err(Error::InvalidInput("no synthetic counts supplied".into()));
    }
    let original = bundle.train_set()?;
    let synth = bundle.synth_set()?;
    let test = bundle.test_set()?;
    let mut rows = Vec::new();
    let mut push = |scenario: Scenario, count: usize, tag: &str| -> Result<()> {
        let train = build_training_set(scenario, &original, &synth, count)?;
        let s = derive_seed(seed, &format!("sweep/{tag}/{}", kind.id()));
        let accuracy = eval_cell(kind, &train, &test, s, params)?;
        rows.push(EvalRow {
            dataset: bundle.dataset_id.clone(),
            level: "synth-sweep".into(),
            scenario,
            classifier: kind.id().into(),
            train_size: if scenario == Scenario::Synth { 0 } else { per_class_count(&original) },
            synth_count: count,
            crop_length: bundle.trace_len(),
            accuracy,
            seed: s,
        });
        Ok(())
    };
    push(Scenario::Original, 0, "original")?;
    for &c in counts {
        push(Scenario::Synth, c, &format!("synth{c}"))?;
    }
    let max = *counts.iter().max().unwrap();
    push(Scenario::OriSynth, max, "orisynth")?;
    Ok(rows)
}
