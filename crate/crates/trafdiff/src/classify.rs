//! Downstream classifier bank: two small CNNs (2D on images, 1D on
//! traces, same widths otherwise), an MLP, Gaussian naive Bayes, a random
//! forest, and gradient-boosted trees.
//!
//! Every classifier is deterministic given its seed and exposes class
//! probabilities, so ensembles can measure predictive entropy.

use ndarray::{Array2, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::enhance::PixelImage;
use crate::error::{Error, Result};
use crate::nn::{Adam, Conv1d, Conv2d, El, GlobalAvgPool, Linear, Sequential, SiLU};
use crate::trace::NormalizedTrace;

/// How a sample's flat feature row is shaped for convolutional models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleShape {
    Grid { h: usize, w: usize },
    Seq { len: usize },
}

impl SampleShape {
    pub fn numel(&self) -> usize {
        match *self {
            SampleShape::Grid { h, w } => h * w,
            SampleShape::Seq { len } => len,
        }
    }
}

/// Labeled feature rows plus provenance ids for test-purity auditing.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<u32>,
    pub ids: Vec<String>,
    pub shape: SampleShape,
}

impl LabeledSet {
    pub fn from_images(images: &[PixelImage], id_prefix: &str) -> Result<LabeledSet> {
        if images.is_empty() {
            return Err(Error::InvalidInput("empty image set".into()));
        }
        let (h, w) = (images[0].h, images[0].w);
        let mut x = Vec::with_capacity(images.len());
        let mut y = Vec::with_capacity(images.len());
        let mut ids = Vec::with_capacity(images.len());
        for (i, img) in images.iter().enumerate() {
            if img.h != h || img.w != w {
                return Err(Error::ShapeMismatch(format!(
                    "image {i} is {}x{}, expected {h}x{w}",
                    img.h, img.w
                )));
            }
            x.push(img.data.clone());
            y.push(img.meta.class_label);
            ids.push(format!("{id_prefix}/{}/{i}", img.meta.class_label));
        }
        Ok(LabeledSet { x, y, ids, shape: SampleShape::Grid { h, w } })
    }

    pub fn from_traces(traces: &[NormalizedTrace], id_prefix: &str) -> Result<LabeledSet> {
        if traces.is_empty() {
            return Err(Error::InvalidInput("empty trace set".into()));
        }
        let len = traces[0].len();
        let mut x = Vec::with_capacity(traces.len());
        let mut y = Vec::with_capacity(traces.len());
        let mut ids = Vec::with_capacity(traces.len());
        for (i, t) in traces.iter().enumerate() {
            if t.len() != len {
                return Err(Error::ShapeMismatch(format!(
                    "trace {i} has length {}, expected {len}",
                    t.len()
                )));
            }
            x.push(t.samples.clone());
            y.push(t.class_label);
            ids.push(format!("{id_prefix}/{}/{i}", t.class_label));
        }
        Ok(LabeledSet { x, y, ids, shape: SampleShape::Seq { len } })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Concatenate two sets with identical shapes.
    pub fn concat(&self, other: &LabeledSet) -> Result<LabeledSet> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch("cannot concat sets of different shapes".into()));
        }
        let mut out = self.clone();
        out.x.extend(other.x.iter().cloned());
        out.y.extend(other.y.iter().copied());
        out.ids.extend(other.ids.iter().cloned());
        Ok(out)
    }

    fn rows_as_array(&self, rows: &[usize]) -> ArrayD<f32> {
        let d = self.shape.numel();
        let shape: Vec<usize> = match self.shape {
            SampleShape::Grid { h, w } => vec![rows.len(), 1, h, w],
            SampleShape::Seq { len } => vec![rows.len(), 1, len],
        };
        let mut a = ArrayD::<f32>::zeros(IxDyn(&shape));
        let s = a.as_slice_mut().unwrap();
        for (k, &r) in rows.iter().enumerate() {
            for (j, &v) in self.x[r].iter().enumerate() {
                s[k * d + j] = v as f32;
            }
        }
        a
    }

    fn rows_as_flat(&self, rows: &[usize]) -> ArrayD<f32> {
        let d = self.shape.numel();
        let mut a = ArrayD::<f32>::zeros(IxDyn(&[rows.len(), d]));
        let s = a.as_slice_mut().unwrap();
        for (k, &r) in rows.iter().enumerate() {
            for (j, &v) in self.x[r].iter().enumerate() {
                s[k * d + j] = v as f32;
            }
        }
        a
    }
}

/// The six downstream classifier families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassifierKind {
    Conv2d,
    Conv1d,
    Mlp,
    NaiveBayes,
    RandomForest,
    GradientBoostedTrees,
}

impl ClassifierKind {
    pub fn parse(id: &str) -> Result<ClassifierKind> {
        Ok(match id {
            "conv2d" => ClassifierKind::Conv2d,
            "conv1d" => ClassifierKind::Conv1d,
            "mlp" => ClassifierKind::Mlp,
            "naive_bayes" => ClassifierKind::NaiveBayes,
            "random_forest" => ClassifierKind::RandomForest,
            "gradient_boosted_trees" => ClassifierKind::GradientBoostedTrees,
            other => return Err(Error::InvalidInput(format!("unknown classifier {other:?}"))),
        })
    }

    pub fn id(&self) -> &'static str {
        match self {
            ClassifierKind::Conv2d => "conv2d",
            ClassifierKind::Conv1d => "conv1d",
            ClassifierKind::Mlp => "mlp",
            ClassifierKind::NaiveBayes => "naive_bayes",
            ClassifierKind::RandomForest => "random_forest",
            ClassifierKind::GradientBoostedTrees => "gradient_boosted_trees",
        }
    }
}

/// Fixed hyperparameters; defaults sized for 64x64 inputs and <= 20 classes.
#[derive(Debug, Clone)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub mlp_hidden: usize,
    pub rf_trees: usize,
    pub rf_max_depth: usize,
    pub gbt_rounds: usize,
    pub gbt_max_depth: usize,
    pub gbt_shrinkage: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            epochs: 30,
            batch_size: 32,
            learning_rate: 3e-3,
            mlp_hidden: 128,
            rf_trees: 50,
            rf_max_depth: 8,
            gbt_rounds: 30,
            gbt_max_depth: 3,
            gbt_shrinkage: 0.3,
        }
    }
}

// ---------------------------------------------------------------------------
// Shared pieces
// ---------------------------------------------------------------------------

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    out
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Predictive entropy of a probability vector, in nats.
pub fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum()
}

// ---------------------------------------------------------------------------
// Neural classifiers
// ---------------------------------------------------------------------------

fn build_net(
    kind: ClassifierKind,
    shape: SampleShape,
    k: usize,
    params: &TrainParams,
    rng: &mut ChaCha8Rng,
) -> Result<Sequential<f32>> {
    let mut seq = Sequential::new(Vec::new());
    match (kind, shape) {
        (ClassifierKind::Conv2d, SampleShape::Grid { .. }) => {
            seq.push(Conv2d::<f32>::halving(1, 8, rng));
            seq.push(SiLU::new());
            seq.push(Conv2d::<f32>::halving(8, 16, rng));
            seq.push(SiLU::new());
            seq.push(Conv2d::<f32>::halving(16, 32, rng));
            seq.push(SiLU::new());
            seq.push(GlobalAvgPool::new());
            seq.push(Linear::new(32, k, rng));
        }
        (ClassifierKind::Conv1d, SampleShape::Seq { .. }) => {
            seq.push(Conv1d::<f32>::halving(1, 8, rng));
            seq.push(SiLU::new());
            seq.push(Conv1d::<f32>::halving(8, 16, rng));
            seq.push(SiLU::new());
            seq.push(Conv1d::<f32>::halving(16, 32, rng));
            seq.push(SiLU::new());
            seq.push(GlobalAvgPool::new());
            seq.push(Linear::new(32, k, rng));
        }
        (ClassifierKind::Mlp, shape) => {
            seq.push(Linear::<f32>::new(shape.numel(), params.mlp_hidden, rng));
            seq.push(SiLU::new());
            seq.push(Linear::new(params.mlp_hidden, k, rng));
        }
        (ClassifierKind::Conv2d, _) => {
            return Err(Error::ShapeMismatch("conv2d needs grid-shaped samples".into()))
        }
        (ClassifierKind::Conv1d, _) => {
            return Err(Error::ShapeMismatch("conv1d needs sequence-shaped samples".into()))
        }
        _ => unreachable!("non-neural kind"),
    }
    Ok(seq)
}

fn net_input(kind: ClassifierKind, set: &LabeledSet, rows: &[usize]) -> ArrayD<f32> {
    match kind {
        ClassifierKind::Mlp => set.rows_as_flat(rows),
        _ => set.rows_as_array(rows),
    }
}

fn net_logits(seq: &mut Sequential<f32>, x: &ArrayD<f32>) -> Array2<f64> {
    let out = seq.forward(x);
    let n = out.shape()[0];
    let k = out.shape()[1];
    let mut logits = Array2::<f64>::zeros((n, k));
    for (i, v) in out.iter().enumerate() {
        logits[[i / k, i % k]] = El::to_f64(*v);
    }
    logits
}

struct NetModel {
    seq: Sequential<f32>,
    kind: ClassifierKind,
}

fn train_net(
    kind: ClassifierKind,
    train: &LabeledSet,
    class_of: &[usize],
    k: usize,
    params: &TrainParams,
    rng: &mut ChaCha8Rng,
) -> Result<NetModel> {
    let mut seq = build_net(kind, train.shape, k, params, rng)?;
    let mut opt = Adam::new(params.learning_rate);
    let n = train.len();
    let b = params.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..params.epochs {
        // Fresh shuffle per epoch.
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(b) {
            let x = net_input(kind, train, chunk);
            let out = seq.forward(&x);
            let kk = out.shape()[1];
            let rows = out.shape()[0];
            let mut logits = Array2::<f64>::zeros((rows, kk));
            for (i, v) in out.iter().enumerate() {
                logits[[i / kk, i % kk]] = El::to_f64(*v);
            }
            let probs = softmax_rows(&logits);
            let mut grad = ArrayD::<f32>::zeros(out.raw_dim());
            {
                let gs = grad.as_slice_mut().unwrap();
                for (i, &r) in chunk.iter().enumerate() {
                    let target = class_of[r];
                    for c in 0..kk {
                        let delta = probs[[i, c]] - if c == target { 1.0 } else { 0.0 };
                        gs[i * kk + c] = (delta / rows as f64) as f32;
                    }
                }
            }
            for p in seq.params_mut() {
                p.zero_grad();
            }
            seq.backward(&grad);
            let mut ps = seq.params_mut();
            opt.step(&mut ps);
        }
    }
    Ok(NetModel { seq, kind })
}

// ---------------------------------------------------------------------------
// Gaussian naive Bayes
// ---------------------------------------------------------------------------

struct NbModel {
    log_prior: Vec<f64>,
    mean: Array2<f64>,
    var: Array2<f64>,
}

fn train_nb(train: &LabeledSet, class_of: &[usize], k: usize) -> NbModel {
    let d = train.shape.numel();
    let n = train.len();
    let mut counts = vec![0usize; k];
    let mut mean = Array2::<f64>::zeros((k, d));
    for (r, &c) in class_of.iter().enumerate() {
        counts[c] += 1;
        for j in 0..d {
            mean[[c, j]] += train.x[r][j];
        }
    }
    for c in 0..k {
        for j in 0..d {
            mean[[c, j]] /= counts[c] as f64;
        }
    }
    let mut var = Array2::<f64>::zeros((k, d));
    for (r, &c) in class_of.iter().enumerate() {
        for j in 0..d {
            let dv = train.x[r][j] - mean[[c, j]];
            var[[c, j]] += dv * dv;
        }
    }
    let mut max_var = 0.0f64;
    for c in 0..k {
        for j in 0..d {
            var[[c, j]] /= counts[c] as f64;
            max_var = max_var.max(var[[c, j]]);
        }
    }
    // Variance floor keeps constant features from collapsing the density.
    let floor = 1e-9 * max_var.max(1e-12);
    var.mapv_inplace(|v| v + floor);
    let log_prior = counts
        .iter()
        .map(|&c| (c as f64 / n as f64).ln())
        .collect();
    NbModel { log_prior, mean, var }
}

impl NbModel {
    fn log_posterior(&self, row: &[f64]) -> Vec<f64> {
        let k = self.log_prior.len();
        let mut out = vec![0.0; k];
        for (c, lp) in out.iter_mut().enumerate() {
            *lp = self.log_prior[c];
            for (j, &v) in row.iter().enumerate() {
                let var = self.var[[c, j]];
                let dv = v - self.mean[[c, j]];
                *lp += -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + dv * dv / var);
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Decision trees (shared by forest and boosting)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum Node {
    Split { feat: usize, thresh: f64, left: usize, right: usize },
    /// Class distribution (forest) or regression value in slot 0 (boosting).
    Leaf(Vec<f64>),
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn leaf_of(&self, row: &[f64]) -> &Vec<f64> {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split { feat, thresh, left, right } => {
                    i = if row[*feat] <= *thresh { *left } else { *right };
                }
                Node::Leaf(v) => return v,
            }
        }
    }
}

fn feature_subset(d: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..d).collect();
    for i in 0..m.min(d) {
        let j = rng.random_range(i..d);
        idx.swap(i, j);
    }
    idx.truncate(m.min(d));
    idx.sort_unstable();
    idx
}

/// Best (feature, threshold) by impurity decrease; returns None when no
/// strict improvement exists. `score` maps row indices to an impurity sum.
fn best_split<F>(
    x: &[Vec<f64>],
    rows: &[usize],
    feats: &[usize],
    impurity_sum: F,
) -> Option<(usize, f64, Vec<usize>, Vec<usize>)>
where
    F: Fn(&[usize]) -> f64,
{
    let parent = impurity_sum(rows);
    let mut best: Option<(f64, usize, f64)> = None;
    let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(rows.len());
    for &f in feats {
        scratch.clear();
        scratch.extend(rows.iter().map(|&r| (x[r][f], r)));
        scratch.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        for i in 0..scratch.len() - 1 {
            if scratch[i].0 == scratch[i + 1].0 {
                continue;
            }
            let thresh = (scratch[i].0 + scratch[i + 1].0) / 2.0;
            let left: Vec<usize> = scratch[..=i].iter().map(|&(_, r)| r).collect();
            let right: Vec<usize> = scratch[i + 1..].iter().map(|&(_, r)| r).collect();
            let gain = parent - impurity_sum(&left) - impurity_sum(&right);
            if gain > 1e-12 && best.is_none_or(|(bg, _, _)| gain > bg) {
                best = Some((gain, f, thresh));
            }
        }
    }
    let (_, f, thresh) = best?;
    let mut left = Vec::new();
    let mut right = Vec::new();
    for &r in rows {
        if x[r][f] <= thresh {
            left.push(r);
        } else {
            right.push(r);
        }
    }
    Some((f, thresh, left, right))
}

fn gini_sum(class_of: &[usize], k: usize, rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let mut counts = vec![0.0f64; k];
    for &r in rows {
        counts[class_of[r]] += 1.0;
    }
    let n = rows.len() as f64;
    let sq: f64 = counts.iter().map(|c| (c / n) * (c / n)).sum();
    n * (1.0 - sq)
}

fn var_sum(target: &[f64], rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let n = rows.len() as f64;
    let mean = rows.iter().map(|&r| target[r]).sum::<f64>() / n;
    rows.iter().map(|&r| (target[r] - mean).powi(2)).sum()
}

#[allow(clippy::too_many_arguments)]
fn build_class_tree(
    x: &[Vec<f64>],
    class_of: &[usize],
    k: usize,
    rows: Vec<usize>,
    depth: usize,
    feats_per_node: usize,
    rng: &mut ChaCha8Rng,
    nodes: &mut Vec<Node>,
) -> usize {
    let make_leaf = |rows: &[usize], nodes: &mut Vec<Node>| -> usize {
        let mut dist = vec![0.0f64; k];
        for &r in rows {
            dist[class_of[r]] += 1.0;
        }
        let n: f64 = rows.len() as f64;
        for v in &mut dist {
            *v /= n;
        }
        nodes.push(Node::Leaf(dist));
        nodes.len() - 1
    };
    if depth == 0 || rows.len() < 2 {
        return make_leaf(&rows, nodes);
    }
    let d = x[0].len();
    let feats = feature_subset(d, feats_per_node, rng);
    match best_split(x, &rows, &feats, |rs| gini_sum(class_of, k, rs)) {
        None => make_leaf(&rows, nodes),
        Some((f, thresh, left, right)) => {
            let slot = nodes.len();
            nodes.push(Node::Leaf(Vec::new()));
            let l = build_class_tree(x, class_of, k, left, depth - 1, feats_per_node, rng, nodes);
            let r = build_class_tree(x, class_of, k, right, depth - 1, feats_per_node, rng, nodes);
            nodes[slot] = Node::Split { feat: f, thresh, left: l, right: r };
            slot
        }
    }
}

fn build_reg_tree(
    x: &[Vec<f64>],
    target: &[f64],
    rows: Vec<usize>,
    depth: usize,
    feats_per_node: usize,
    rng: &mut ChaCha8Rng,
    nodes: &mut Vec<Node>,
) -> usize {
    let make_leaf = |rows: &[usize], nodes: &mut Vec<Node>| -> usize {
        let n = rows.len() as f64;
        let mean = rows.iter().map(|&r| target[r]).sum::<f64>() / n;
        nodes.push(Node::Leaf(vec![mean]));
        nodes.len() - 1
    };
    if depth == 0 || rows.len() < 2 {
        return make_leaf(&rows, nodes);
    }
    let d = x[0].len();
    let feats = feature_subset(d, feats_per_node, rng);
    match best_split(x, &rows, &feats, |rs| var_sum(target, rs)) {
        None => make_leaf(&rows, nodes),
        Some((f, thresh, left, right)) => {
            let slot = nodes.len();
            nodes.push(Node::Leaf(Vec::new()));
            let l = build_reg_tree(x, target, left, depth - 1, feats_per_node, rng, nodes);
            let r = build_reg_tree(x, target, right, depth - 1, feats_per_node, rng, nodes);
            nodes[slot] = Node::Split { feat: f, thresh, left: l, right: r };
            slot
        }
    }
}

struct ForestModel {
    trees: Vec<Tree>,
    k: usize,
}

fn train_forest(
    train: &LabeledSet,
    class_of: &[usize],
    k: usize,
    params: &TrainParams,
    rng: &mut ChaCha8Rng,
) -> ForestModel {
    let n = train.len();
    let d = train.shape.numel();
    let feats_per_node = (d as f64).sqrt().ceil() as usize;
    let mut trees = Vec::with_capacity(params.rf_trees);
    for _ in 0..params.rf_trees {
        let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let mut nodes = Vec::new();
        build_class_tree(
            &train.x,
            class_of,
            k,
            rows,
            params.rf_max_depth,
            feats_per_node,
            rng,
            &mut nodes,
        );
        trees.push(Tree { nodes });
    }
    ForestModel { trees, k }
}

struct BoostedModel {
    /// trees[round][class]
    trees: Vec<Vec<Tree>>,
    shrinkage: f64,
    k: usize,
}

fn train_gbt(
    train: &LabeledSet,
    class_of: &[usize],
    k: usize,
    params: &TrainParams,
    rng: &mut ChaCha8Rng,
) -> BoostedModel {
    let n = train.len();
    let d = train.shape.numel();
    let feats_per_node = (d as f64).sqrt().ceil() as usize;
    let mut scores = Array2::<f64>::zeros((n, k));
    let mut rounds = Vec::with_capacity(params.gbt_rounds);
    let all_rows: Vec<usize> = (0..n).collect();
    for _ in 0..params.gbt_rounds {
        let probs = softmax_rows(&scores);
        let mut round = Vec::with_capacity(k);
        for c in 0..k {
            // Negative gradient of softmax cross-entropy wrt class-c score.
            let target: Vec<f64> = (0..n)
                .map(|r| (if class_of[r] == c { 1.0 } else { 0.0 }) - probs[[r, c]])
                .collect();
            let mut nodes = Vec::new();
            build_reg_tree(
                &train.x,
                &target,
                all_rows.clone(),
                params.gbt_max_depth,
                feats_per_node,
                rng,
                &mut nodes,
            );
            let tree = Tree { nodes };
            for r in 0..n {
                scores[[r, c]] += params.gbt_shrinkage * tree.leaf_of(&train.x[r])[0];
            }
            round.push(tree);
        }
        rounds.push(round);
    }
    BoostedModel { trees: rounds, shrinkage: params.gbt_shrinkage, k }
}

// ---------------------------------------------------------------------------
// Unified trained classifier
// ---------------------------------------------------------------------------

enum Model {
    Net(NetModel),
    NaiveBayes(NbModel),
    Forest(ForestModel),
    Boosted(BoostedModel),
}

/// A trained classifier with its label vocabulary, in sorted label order.
pub struct TrainedClassifier {
    model: Model,
    pub classes: Vec<u32>,
    pub kind: ClassifierKind,
}

/// Train one classifier. Deterministic given (kind, train, seed, params).
pub fn train_classifier(
    kind: ClassifierKind,
    train: &LabeledSet,
    seed: u64,
    params: &TrainParams,
) -> Result<TrainedClassifier> {
    if train.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let mut classes: Vec<u32> = train.y.clone();
    classes.sort_unstable();
    classes.dedup();
    let k = classes.len();
    let class_of: Vec<usize> = train
        .y
        .iter()
        .map(|l| classes.binary_search(l).expect("label in vocabulary"))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = match kind {
        ClassifierKind::Conv2d | ClassifierKind::Conv1d | ClassifierKind::Mlp => {
            Model::Net(train_net(kind, train, &class_of, k, params, &mut rng)?)
        }
        ClassifierKind::NaiveBayes => Model::NaiveBayes(train_nb(train, &class_of, k)),
        ClassifierKind::RandomForest => {
            Model::Forest(train_forest(train, &class_of, k, params, &mut rng))
        }
        ClassifierKind::GradientBoostedTrees => {
            Model::Boosted(train_gbt(train, &class_of, k, params, &mut rng))
        }
    };
    Ok(TrainedClassifier { model, classes, kind })
}

impl TrainedClassifier {
    /// Class probabilities per sample, columns in `self.classes` order.
    pub fn predict_proba(&mut self, set: &LabeledSet) -> Result<Vec<Vec<f64>>> {
        let k = self.classes.len();
        let n = set.len();
        let rows: Vec<usize> = (0..n).collect();
        match &mut self.model {
            Model::Net(net) => {
                let mut out = Vec::with_capacity(n);
                // Bounded batches; per-sample loops keep results identical.
                for chunk in rows.chunks(64) {
                    let x = net_input(net.kind, set, chunk);
                    if x.shape()[1..].iter().product::<usize>()
                        != set.shape.numel()
                    {
                        return Err(Error::ShapeMismatch("feature width mismatch".into()));
                    }
                    let logits = net_logits(&mut net.seq, &x);
                    if logits.ncols() != k {
                        return Err(Error::ShapeMismatch("class count mismatch".into()));
                    }
                    let probs = softmax_rows(&logits);
                    for i in 0..chunk.len() {
                        out.push(probs.row(i).to_vec());
                    }
                }
                Ok(out)
            }
            Model::NaiveBayes(nb) => Ok(set
                .x
                .iter()
                .map(|row| {
                    let lp = nb.log_posterior(row);
                    let mx = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = lp.iter().map(|&v| (v - mx).exp()).collect();
                    let z: f64 = exps.iter().sum();
                    exps.iter().map(|&v| v / z).collect()
                })
                .collect()),
            Model::Forest(fm) => Ok(set
                .x
                .iter()
                .map(|row| {
                    let mut acc = vec![0.0f64; fm.k];
                    for t in &fm.trees {
                        for (c, v) in t.leaf_of(row).iter().enumerate() {
                            acc[c] += v;
                        }
                    }
                    let z = fm.trees.len() as f64;
                    acc.iter().map(|&v| v / z).collect()
                })
                .collect()),
            Model::Boosted(bm) => Ok(set
                .x
                .iter()
                .map(|row| {
                    let mut scores = vec![0.0f64; bm.k];
                    for round in &bm.trees {
                        for (c, tree) in round.iter().enumerate() {
                            scores[c] += bm.shrinkage * tree.leaf_of(row)[0];
                        }
                    }
                    let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = scores.iter().map(|&v| (v - mx).exp()).collect();
                    let z: f64 = exps.iter().sum();
                    exps.iter().map(|&v| v / z).collect()
                })
                .collect()),
        }
    }

    /// Hard labels; ties break to the lowest class label.
    pub fn predict(&mut self, set: &LabeledSet) -> Result<Vec<u32>> {
        Ok(self
            .predict_proba(set)?
            .iter()
            .map(|p| self.classes[argmax(p)])
            .collect())
    }
}

/// Percent accuracy of `kind` trained on `train` and scored on `test`.
/// Rejects test labels missing from the training vocabulary.
pub fn train_and_eval(
    kind: ClassifierKind,
    train: &LabeledSet,
    test: &LabeledSet,
    seed: u64,
    params: &TrainParams,
) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::InvalidInput("empty test set".into()));
    }
    if train.shape != test.shape {
        return Err(Error::ShapeMismatch("train and test shapes differ".into()));
    }
    let mut clf = train_classifier(kind, train, seed, params)?;
    for l in &test.y {
        if clf.classes.binary_search(l).is_err() {
            return Err(Error::MissingClass(format!(
                "test label {l} absent from training set"
            )));
        }
    }
    let pred = clf.predict(test)?;
    let correct = pred.iter().zip(&test.y).filter(|(p, t)| p == t).count();
    Ok(100.0 * correct as f64 / test.len() as f64)
}

pub const ALL_KINDS: [ClassifierKind; 6] = [
    ClassifierKind::Conv2d,
    ClassifierKind::Conv1d,
    ClassifierKind::Mlp,
    ClassifierKind::NaiveBayes,
    ClassifierKind::RandomForest,
    ClassifierKind::GradientBoostedTrees,
];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enhance::ImageMeta;

    fn grid_set(
        per_class: usize,
        means: &[f64],
        noise: f64,
        seed: u64,
        prefix: &str,
    ) -> LabeledSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut imgs = Vec::new();
        for (c, &m) in means.iter().enumerate() {
            for _ in 0..per_class {
                let data: Vec<f64> = (0..16 * 16)
                    .map(|_| (m + rng.random_range(-noise..noise)).clamp(0.0, 1.0))
                    .collect();
                imgs.push(PixelImage {
                    h: 16,
                    w: 16,
                    data,
                    meta: ImageMeta { dataset_id: "t".into(), class_label: c as u32, orig_n: 16 },
                });
            }
        }
        LabeledSet::from_images(&imgs, prefix).unwrap()
    }

    fn seq_set(per_class: usize, seed: u64) -> LabeledSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut traces = Vec::new();
        for c in 0..2u32 {
            for _ in 0..per_class {
                let samples: Vec<f64> = (0..32)
                    .map(|j| {
                        let base = if c == 0 { 0.2 } else { 0.8 };
                        let wave = (j as f64 / 4.0).sin() * 0.1;
                        (base + wave + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0)
                    })
                    .collect();
                traces.push(NormalizedTrace::new(samples, c, "t".to_string()).unwrap());
            }
        }
        LabeledSet::from_traces(&traces, "orig").unwrap()
    }

    fn quick_params() -> TrainParams {
        TrainParams {
            epochs: 40,
            batch_size: 8,
            rf_trees: 20,
            gbt_rounds: 10,
            ..TrainParams::default()
        }
    }

    fn nearest_centroid_accuracy(train: &LabeledSet, test: &LabeledSet) -> f64 {
        let mut classes: Vec<u32> = train.y.clone();
        classes.sort_unstable();
        classes.dedup();
        let d = train.shape.numel();
        let mut centroids = vec![vec![0.0f64; d]; classes.len()];
        let mut counts = vec![0usize; classes.len()];
        for (row, &y) in train.x.iter().zip(&train.y) {
            let c = classes.binary_search(&y).unwrap();
            counts[c] += 1;
            for (j, &v) in row.iter().enumerate() {
                centroids[c][j] += v;
            }
        }
        for (c, cnt) in counts.iter().enumerate() {
            for v in &mut centroids[c] {
                *v /= *cnt as f64;
            }
        }
        let mut correct = 0;
        for (row, &y) in test.x.iter().zip(&test.y) {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, cen) in centroids.iter().enumerate() {
                let dist: f64 =
                    row.iter().zip(cen).map(|(a, b)| (a - b) * (a - b)).sum();
                if dist < best_d {
                    best_d = dist;
                    best = c;
                }
            }
            if classes[best] == y {
                correct += 1;
            }
        }
        100.0 * correct as f64 / test.len() as f64
    }

    #[test]
    fn kind_ids_roundtrip() {
        for kind in ALL_KINDS {
            assert_eq!(ClassifierKind::parse(kind.id()).unwrap(), kind);
        }
        assert!(ClassifierKind::parse("svm").is_err());
    }

    #[test]
    fn single_class_degenerate_is_perfect() {
        let set = grid_set(6, &[0.5], 0.1, 3, "orig");
        let seq = seq_set(6, 3);
        let single_seq = LabeledSet {
            x: seq.x[..6].to_vec(),
            y: seq.y[..6].to_vec(),
            ids: seq.ids[..6].to_vec(),
            shape: seq.shape,
        };
        for kind in ALL_KINDS {
            let (train, test) = if kind == ClassifierKind::Conv1d {
                (&single_seq, &single_seq)
            } else {
                (&set, &set)
            };
            let acc = train_and_eval(kind, train, test, 1, &quick_params()).unwrap();
            assert_eq!(acc, 100.0, "{kind:?}");
        }
    }

    #[test]
    fn separable_classes_reach_high_accuracy() {
        let train = grid_set(12, &[0.25, 0.75], 0.1, 5, "orig");
        let test = grid_set(8, &[0.25, 0.75], 0.1, 77, "held");
        // Margin oracle first: centroids must already solve this layout.
        assert_eq!(nearest_centroid_accuracy(&train, &test), 100.0);
        for kind in [
            ClassifierKind::Conv2d,
            ClassifierKind::Mlp,
            ClassifierKind::NaiveBayes,
            ClassifierKind::RandomForest,
            ClassifierKind::GradientBoostedTrees,
        ] {
            let acc = train_and_eval(kind, &train, &test, 2, &quick_params()).unwrap();
            assert!(acc >= 95.0, "{kind:?} got {acc}");
        }
        let train1 = seq_set(12, 5);
        let test1 = seq_set(8, 78);
        let acc = train_and_eval(ClassifierKind::Conv1d, &train1, &test1, 2, &quick_params())
            .unwrap();
        assert!(acc >= 95.0, "conv1d got {acc}");
    }

    #[test]
    fn random_labels_sit_at_chance_level() {
        let mut params = quick_params();
        params.epochs = 4;
        params.rf_trees = 10;
        params.gbt_rounds = 5;
        for kind in ALL_KINDS {
            let mut total = 0.0;
            for seed in 0..10u64 {
                // Same feature distribution for both classes: labels carry
                // no signal.
                let mk = |s: u64, prefix: &str| {
                    if kind == ClassifierKind::Conv1d {
                        let base = seq_set(10, s);
                        let mut rng = ChaCha8Rng::seed_from_u64(s ^ 0xabc);
                        let mut set = base;
                        for row in &mut set.x {
                            for v in row.iter_mut() {
                                *v = rng.random_range(0.0..1.0);
                            }
                        }
                        let _ = prefix;
                        set
                    } else {
                        grid_set(10, &[0.5, 0.5], 0.5, s, prefix)
                    }
                };
                let train = mk(seed * 2 + 1, "orig");
                let test = mk(seed * 2 + 2, "held");
                total += train_and_eval(kind, &train, &test, seed, &params).unwrap();
            }
            let mean = total / 10.0;
            assert!(
                (40.0..=60.0).contains(&mean),
                "{kind:?} mean accuracy {mean} off chance"
            );
        }
    }

    #[test]
    fn rejects_unseen_test_label_and_shape_mismatch() {
        let train = grid_set(6, &[0.3], 0.05, 1, "orig");
        let test = grid_set(4, &[0.3, 0.8], 0.05, 2, "held");
        let err = train_and_eval(ClassifierKind::Mlp, &train, &test, 1, &quick_params());
        assert!(matches!(err, Err(Error::MissingClass(_))));

        let seq = seq_set(6, 1);
        assert!(train_and_eval(ClassifierKind::Conv2d, &seq, &seq, 1, &quick_params()).is_err());
        let grid = grid_set(6, &[0.3, 0.7], 0.05, 1, "orig");
        assert!(train_and_eval(ClassifierKind::Conv1d, &grid, &grid, 1, &quick_params()).is_err());
    }

    #[test]
    fn same_seed_reproduces_bitwise() {
        let train = grid_set(8, &[0.3, 0.7], 0.15, 9, "orig");
        let test = grid_set(5, &[0.3, 0.7], 0.15, 10, "held");
        for kind in [
            ClassifierKind::Conv2d,
            ClassifierKind::Mlp,
            ClassifierKind::RandomForest,
            ClassifierKind::GradientBoostedTrees,
        ] {
            let a = train_and_eval(kind, &train, &test, 4, &quick_params()).unwrap();
            let b = train_and_eval(kind, &train, &test, 4, &quick_params()).unwrap();
            assert_eq!(a, b, "{kind:?}");
        }
    }

    #[test]
    fn probabilities_are_normalized() {
        let train = grid_set(8, &[0.3, 0.7], 0.15, 9, "orig");
        for kind in [
            ClassifierKind::Mlp,
            ClassifierKind::NaiveBayes,
            ClassifierKind::RandomForest,
            ClassifierKind::GradientBoostedTrees,
        ] {
            let mut clf = train_classifier(kind, &train, 4, &quick_params()).unwrap();
            let probs = clf.predict_proba(&train).unwrap();
            for p in probs {
                let s: f64 = p.iter().sum();
                assert!((s - 1.0).abs() < 1e-9, "{kind:?} rows must sum to 1");
                assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }

    #[test]
    fn entropy_bounds_and_known_values() {
        let uniform = vec![0.2; 5];
        assert!((entropy(&uniform) - 5.0f64.ln()).abs() < 1e-12);
        let onehot = vec![1.0, 0.0, 0.0];
        assert_eq!(entropy(&onehot), 0.0);
        let p = vec![0.5, 0.25, 0.25];
        assert!(entropy(&p) > 0.0 && entropy(&p) <= 3.0f64.ln() + 1e-12);
    }

    #[test]
    fn concat_merges_and_checks_shape() {
        let a = grid_set(3, &[0.2, 0.8], 0.05, 1, "orig");
        let b = grid_set(2, &[0.2, 0.8], 0.05, 2, "synth");
        let c = a.concat(&b).unwrap();
        assert_eq!(c.len(), a.len() + b.len());
        assert!(c.ids.iter().take(a.len()).all(|i| i.starts_with("orig/")));
        assert!(c.ids.iter().skip(a.len()).all(|i| i.starts_with("synth/")));
        let seq = seq_set(3, 1);
        assert!(a.concat(&seq).is_err());
    }

    #[test]
    fn naive_bayes_hand_check() {
        // Two well-separated 1-feature classes.
        let set = LabeledSet {
            x: vec![vec![0.0], vec![0.1], vec![0.9], vec![1.0]],
            y: vec![0, 0, 1, 1],
            ids: (0..4).map(|i| format!("orig/x/{i}")).collect(),
            shape: SampleShape::Seq { len: 1 },
        };
        let mut clf =
            train_classifier(ClassifierKind::NaiveBayes, &set, 1, &quick_params()).unwrap();
        let probe = LabeledSet {
            x: vec![vec![0.05], vec![0.95]],
            y: vec![0, 1],
            ids: vec!["held/x/0".into(), "held/x/1".into()],
            shape: SampleShape::Seq { len: 1 },
        };
        assert_eq!(clf.predict(&probe).unwrap(), vec![0, 1]);
    }
}
