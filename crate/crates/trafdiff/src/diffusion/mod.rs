//! Denoising diffusion: noise schedule, forward marginal, training loop
//! and ancestral sampler, for images [N,1,H,W] and traces [N,1,L].
//!
//! Values live in [0,1] at the module boundary and [-1,1] inside. The
//! denoiser predicts the added noise; training minimizes its MSE against
//! the true draw.

pub mod unet;

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::{derive_seed, Conditioning, DiffusionConfig};
use crate::enhance::{ImageMeta, PixelImage};
use crate::error::{Error, Result};
use crate::nn::{Adam, El, Ema};
use crate::trace::NormalizedTrace;

pub use unet::{DenoiserSpec, SpatialKind, UNet, LEVELS};

// ---------------------------------------------------------------------------
// Schedule
// ---------------------------------------------------------------------------

/// Variance schedule: betas, alphas = 1-beta, and their running product.
/// Steps are 1-based; index t reads position t-1.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub t_max: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }
    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }
}

/// Linear beta interpolation from `beta_start` to `beta_end` over `t` steps.
pub fn make_schedule(t: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if t < 1 {
        return Err(Error::InvalidInput("schedule needs at least one step".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::InvalidInput(format!(
            "need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
        )));
    }
    let betas: Vec<f64> = (0..t)
        .map(|i| {
            if t == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (t - 1) as f64
            }
        })
        .collect();
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(t);
    let mut prod = 1.0;
    for &a in &alphas {
        prod *= a;
        alpha_bars.push(prod);
    }
    Ok(NoiseSchedule { t_max: t, beta_start, beta_end, betas, alphas, alpha_bars })
}

/// Closed-form forward marginal x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps,
/// one shared step for the whole batch. `x0` is model-space [-1,1].
pub fn forward_diffuse<E: El>(
    x0: &ArrayD<E>,
    t: usize,
    eps: &ArrayD<E>,
    sched: &NoiseSchedule,
) -> Result<ArrayD<E>> {
    if t < 1 || t > sched.t_max {
        return Err(Error::InvalidInput(format!(
            "step {t} outside [1, {}]",
            sched.t_max
        )));
    }
    if x0.shape() != eps.shape() {
        return Err(Error::ShapeMismatch("noise shape must match image shape".into()));
    }
    let ab = sched.alpha_bar(t);
    let c0 = E::from_f64(ab.sqrt());
    let c1 = E::from_f64((1.0 - ab).sqrt());
    Ok(x0.mapv(|v| v * c0) + eps.mapv(|v| v * c1))
}

/// Per-sample-step forward marginal for training batches.
fn diffuse_batch<E: El>(
    x0: &ArrayD<E>,
    ts: &[usize],
    eps: &ArrayD<E>,
    sched: &NoiseSchedule,
) -> Result<ArrayD<E>> {
    if x0.shape() != eps.shape() {
        return Err(Error::ShapeMismatch("noise shape must match image shape".into()));
    }
    let n = x0.shape()[0];
    if ts.len() != n {
        return Err(Error::ShapeMismatch("one step per sample".into()));
    }
    let stride: usize = x0.shape()[1..].iter().product();
    let mut xt = ArrayD::<E>::zeros(x0.raw_dim());
    let xs = x0.as_slice().expect("standard layout");
    let es = eps.as_slice().expect("standard layout");
    let os = xt.as_slice_mut().unwrap();
    for (i, &t) in ts.iter().enumerate() {
        if t < 1 || t > sched.t_max {
            return Err(Error::InvalidInput(format!(
                "step {t} outside [1, {}]",
                sched.t_max
            )));
        }
        let ab = sched.alpha_bar(t);
        let c0 = E::from_f64(ab.sqrt());
        let c1 = E::from_f64((1.0 - ab).sqrt());
        for j in 0..stride {
            let k = i * stride + j;
            os[k] = xs[k] * c0 + es[k] * c1;
        }
    }
    Ok(xt)
}

/// Noise-prediction MSE with backward: diffuses `x0` to the given steps,
/// runs the denoiser, accumulates parameter gradients of the mean squared
/// error against `eps`, and returns the loss (f64-accumulated). The caller
/// zeroes gradients beforehand.
pub fn diffusion_loss<E: El>(
    net: &mut UNet<E>,
    sched: &NoiseSchedule,
    x0: &ArrayD<E>,
    labels: Option<&[usize]>,
    ts: &[usize],
    eps: &ArrayD<E>,
) -> Result<f64> {
    let xt = diffuse_batch(x0, ts, eps, sched)?;
    let tsf: Vec<f64> = ts.iter().map(|&t| t as f64).collect();
    let pred = net.forward(&xt, &tsf, labels)?;
    let n = pred.len() as f64;
    let mut loss = 0.0f64;
    for (&p, &e) in pred.iter().zip(eps.iter()) {
        let d = El::to_f64(p) - El::to_f64(e);
        loss += d * d;
    }
    loss /= n;
    let scale = E::from_f64(2.0 / n);
    let grad = (&pred - eps).mapv(|d| d * scale);
    net.backward(&grad);
    Ok(loss)
}

fn draw_standard<E: El>(shape: &[usize], rng: &mut ChaCha8Rng) -> ArrayD<E> {
    let normal = StandardNormal;
    ArrayD::from_shape_simple_fn(IxDyn(shape), || {
        E::from_f64(<StandardNormal as Distribution<f64>>::sample(&normal, rng))
    })
}

/// One optimizer step on a batch: samples steps and noise, computes the
/// loss and gradients, applies Adam, updates the weight average.
#[allow(clippy::too_many_arguments)]
pub fn training_step<E: El>(
    net: &mut UNet<E>,
    sched: &NoiseSchedule,
    x0: &ArrayD<E>,
    labels: Option<&[usize]>,
    rng: &mut ChaCha8Rng,
    opt: &mut Adam,
    ema: Option<&mut Ema>,
) -> Result<f64> {
    let n = x0.shape()[0];
    let ts: Vec<usize> = (0..n).map(|_| rng.random_range(1..=sched.t_max)).collect();
    let eps = draw_standard::<E>(x0.shape(), rng);
    for p in net.params_mut() {
        p.zero_grad();
    }
    let loss = diffusion_loss(net, sched, x0, labels, &ts, &eps)?;
    if !loss.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite training loss {loss} (steps {:?}...)",
            &ts[..ts.len().min(4)]
        )));
    }
    let mut params = net.params_mut();
    opt.step(&mut params);
    if let Some(ema) = ema {
        ema.update(&params);
    }
    Ok(loss)
}

// ---------------------------------------------------------------------------
// Trained model
// ---------------------------------------------------------------------------

/// A trained (or initialized) diffusion model plus everything needed to
/// sample from it and to persist it.
pub struct DiffusionModel {
    pub net: UNet<f32>,
    pub schedule: NoiseSchedule,
    pub conditioning: Conditioning,
    pub trained_on: String,
    pub class_set: Vec<u32>,
    /// Spatial shape of training data: [h,w] or [len].
    pub spatial: Vec<usize>,
    pub cfg: DiffusionConfig,
    pub seed: u64,
}

impl DiffusionModel {
    fn class_index(&self, class_label: u32) -> Result<usize> {
        self.class_set
            .iter()
            .position(|&c| c == class_label)
            .ok_or_else(|| Error::MissingClass(format!("class {class_label} not in model")))
    }

    /// Ancestral sampling to unit-range flat buffers. Each image draws from
    /// its own counter-derived stream, so sample sets are nested: the first
    /// k of count=n equal the first k of count=k.
    fn sample_raw(&mut self, class_label: u32, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let label_idx = if self.net.spec.num_classes.is_some() {
            Some(self.class_index(class_label)?)
        } else {
            if self.conditioning == Conditioning::PerClass && self.class_set != vec![class_label] {
                return Err(Error::MissingClass(format!("class {class_label} not in model")));
            }
            None
        };
        let numel: usize = self.spatial.iter().product();
        let mut shape = vec![0usize, 1];
        shape.extend_from_slice(&self.spatial);
        let mut out = Vec::with_capacity(count);
        let mut start = 0;
        while start < count {
            let b = (count - start).min(16);
            shape[0] = b;
            let mut rngs: Vec<ChaCha8Rng> = (start..start + b)
                .map(|i| {
                    ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("img/{class_label}/{i}")))
                })
                .collect();
            let mut x = ArrayD::<f32>::zeros(IxDyn(&shape));
            {
                let xs = x.as_slice_mut().unwrap();
                for (bi, rng) in rngs.iter_mut().enumerate() {
                    for j in 0..numel {
                        xs[bi * numel + j] =
                            <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
                                as f32;
                    }
                }
            }
            let labels_vec = label_idx.map(|ix| vec![ix; b]);
            for t in (1..=self.schedule.t_max).rev() {
                let tsf = vec![t as f64; b];
                let eps_hat = self.net.forward(&x, &tsf, labels_vec.as_deref())?;
                let a = self.schedule.alpha(t);
                let ab = self.schedule.alpha_bar(t);
                let beta = self.schedule.beta(t);
                let c1 = (1.0 / a.sqrt()) as f32;
                let c2 = (beta / (1.0 - ab).sqrt()) as f32;
                let sigma = beta.sqrt() as f32;
                let xs = x.as_slice_mut().unwrap();
                let es = eps_hat.as_slice().expect("standard layout");
                if t > 1 {
                    for (bi, rng) in rngs.iter_mut().enumerate() {
                        for j in 0..numel {
                            let k = bi * numel + j;
                            let z = <StandardNormal as Distribution<f64>>::sample(
                                &StandardNormal,
                                rng,
                            ) as f32;
                            xs[k] = c1 * (xs[k] - c2 * es[k]) + sigma * z;
                        }
                    }
                } else {
                    for k in 0..b * numel {
                        xs[k] = c1 * (xs[k] - c2 * es[k]);
                    }
                }
            }
            let xs = x.as_slice().unwrap();
            for bi in 0..b {
                let buf: Vec<f64> = xs[bi * numel..(bi + 1) * numel]
                    .iter()
                    .map(|&v| ((v as f64).clamp(-1.0, 1.0) + 1.0) / 2.0)
                    .collect();
                out.push(buf);
            }
            start += b;
        }
        Ok(out)
    }

    /// Sample synthetic images for one class.
    pub fn sample(&mut self, class_label: u32, count: usize, seed: u64) -> Result<Vec<PixelImage>> {
        if self.net.spec.kind != SpatialKind::TwoD {
            return Err(Error::InvalidInput("model generates traces, not images".into()));
        }
        let (h, w) = (self.spatial[0], self.spatial[1]);
        let meta = ImageMeta {
            dataset_id: self.trained_on.clone(),
            class_label,
            orig_n: 0,
        };
        Ok(self
            .sample_raw(class_label, count, seed)?
            .into_iter()
            .map(|data| PixelImage { h, w, data, meta: meta.clone() })
            .collect())
    }

    /// Sample synthetic unit-range traces for one class (1D models).
    pub fn sample_traces(
        &mut self,
        class_label: u32,
        count: usize,
        seed: u64,
    ) -> Result<Vec<NormalizedTrace>> {
        if self.net.spec.kind != SpatialKind::OneD {
            return Err(Error::InvalidInput("model generates images, not traces".into()));
        }
        let trained_on = self.trained_on.clone();
        self.sample_raw(class_label, count, seed)?
            .into_iter()
            .map(|data| NormalizedTrace::new(data, class_label, trained_on.clone()))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Training entry points
// ---------------------------------------------------------------------------

/// Loss curves per trained model, keyed "all" or "class-<label>".
pub type TrainLog = Vec<(String, Vec<f64>)>;

/// One or many diffusion models, depending on the conditioning mode.
pub enum Generator {
    Single(Box<DiffusionModel>),
    PerClass(BTreeMap<u32, DiffusionModel>),
}

impl Generator {
    pub fn class_set(&self) -> Vec<u32> {
        match self {
            Generator::Single(m) => m.class_set.clone(),
            Generator::PerClass(map) => map.keys().copied().collect(),
        }
    }

    pub fn sample(&mut self, class_label: u32, count: usize, seed: u64) -> Result<Vec<PixelImage>> {
        match self {
            Generator::Single(m) => m.sample(class_label, count, seed),
            Generator::PerClass(map) => map
                .get_mut(&class_label)
                .ok_or_else(|| Error::MissingClass(format!("no model for class {class_label}")))?
                .sample(class_label, count, seed),
        }
    }

    pub fn sample_traces(
        &mut self,
        class_label: u32,
        count: usize,
        seed: u64,
    ) -> Result<Vec<NormalizedTrace>> {
        match self {
            Generator::Single(m) => m.sample_traces(class_label, count, seed),
            Generator::PerClass(map) => map
                .get_mut(&class_label)
                .ok_or_else(|| Error::MissingClass(format!("no model for class {class_label}")))?
                .sample_traces(class_label, count, seed),
        }
    }

    /// Write every model under `dir` plus an index file naming them.
    pub fn save(&mut self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        let mut index: BTreeMap<String, String> = BTreeMap::new();
        match self {
            Generator::Single(m) => {
                let f = dir.join("dm-all.ckpt");
                save_checkpoint(m, &f)?;
                index.insert("all".into(), "dm-all.ckpt".into());
                files.push(f);
            }
            Generator::PerClass(map) => {
                for (c, m) in map.iter_mut() {
                    let name = format!("dm-class-{c}.ckpt");
                    let f = dir.join(&name);
                    save_checkpoint(m, &f)?;
                    index.insert(c.to_string(), name);
                    files.push(f);
                }
            }
        }
        let idx_path = dir.join("generator.json");
        let payload = serde_json::to_string_pretty(&index)?;
        std::fs::write(&idx_path, payload)?;
        files.push(idx_path);
        Ok(files)
    }

    /// Rebuild a generator from [`Generator::save`] output.
    pub fn load(dir: &Path) -> Result<Generator> {
        let idx_path = dir.join("generator.json");
        let text = std::fs::read_to_string(&idx_path).map_err(|_| {
            Error::MissingStage(format!("no generator index at {}", idx_path.display()))
        })?;
        let index: BTreeMap<String, String> =
            serde_json::from_str(&text).map_err(|e| Error::MalformedArtifact {
                path: idx_path.display().to_string(),
                reason: e.to_string(),
            })?;
        if index.len() == 1 && index.contains_key("all") {
            let m = load_checkpoint(&dir.join(&index["all"]))?;
            return Ok(Generator::Single(Box::new(m)));
        }
        let mut map = BTreeMap::new();
        for (k, v) in index {
            let c: u32 = k.parse().map_err(|_| Error::MalformedArtifact {
                path: idx_path.display().to_string(),
                reason: format!("bad class key {k:?}"),
            })?;
            map.insert(c, load_checkpoint(&dir.join(v))?);
        }
        if map.is_empty() {
            return Err(Error::MalformedArtifact {
                path: idx_path.display().to_string(),
                reason: "empty generator index".into(),
            });
        }
        Ok(Generator::PerClass(map))
    }
}

struct TrainData {
    /// Unit-range inputs [N,1,spatial...].
    x0_unit: ArrayD<f32>,
    labels: Vec<u32>,
    spatial: Vec<usize>,
    kind: SpatialKind,
}

fn train_core(
    data: TrainData,
    cfg: &DiffusionConfig,
    dataset_id: &str,
    seed: u64,
) -> Result<(Generator, TrainLog)> {
    cfg.validate()?;
    let n = data.x0_unit.shape()[0];
    if n == 0 {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    let mut class_set: Vec<u32> = data.labels.clone();
    class_set.sort_unstable();
    class_set.dedup();
    match cfg.conditioning {
        Conditioning::PerClass => {
            let mut map = BTreeMap::new();
            let mut log = TrainLog::new();
            for &c in &class_set {
                let rows: Vec<usize> =
                    (0..n).filter(|&i| data.labels[i] == c).collect();
                let sub = select_rows(&data.x0_unit, &rows);
                let (model, losses) = train_single(
                    sub,
                    None,
                    vec![c],
                    None,
                    data.kind,
                    data.spatial.clone(),
                    cfg,
                    dataset_id,
                    derive_seed(seed, &format!("class/{c}")),
                )?;
                log.push((format!("class-{c}"), losses));
                map.insert(c, model);
            }
            Ok((Generator::PerClass(map), log))
        }
        Conditioning::ClassEmbedding | Conditioning::Unconditional => {
            let conditional = cfg.conditioning == Conditioning::ClassEmbedding;
            let label_idx: Option<Vec<usize>> = conditional.then(|| {
                data.labels
                    .iter()
                    .map(|l| class_set.iter().position(|c| c == l).expect("label in set"))
                    .collect()
            });
            let (model, losses) = train_single(
                data.x0_unit,
                label_idx,
                class_set,
                conditional.then_some(()),
                data.kind,
                data.spatial,
                cfg,
                dataset_id,
                seed,
            )?;
            let log = vec![("all".to_string(), losses)];
            Ok((Generator::Single(Box::new(model)), log))
        }
    }
}

fn select_rows(x: &ArrayD<f32>, rows: &[usize]) -> ArrayD<f32> {
    let mut shape = x.shape().to_vec();
    shape[0] = rows.len();
    let stride: usize = shape[1..].iter().product();
    let xs = x.as_slice().expect("standard layout");
    let mut out = ArrayD::<f32>::zeros(IxDyn(&shape));
    let os = out.as_slice_mut().unwrap();
    for (k, &r) in rows.iter().enumerate() {
        os[k * stride..(k + 1) * stride].copy_from_slice(&xs[r * stride..(r + 1) * stride]);
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn train_single(
    x0_unit: ArrayD<f32>,
    label_idx: Option<Vec<usize>>,
    class_set: Vec<u32>,
    conditional: Option<()>,
    kind: SpatialKind,
    spatial: Vec<usize>,
    cfg: &DiffusionConfig,
    dataset_id: &str,
    seed: u64,
) -> Result<(DiffusionModel, Vec<f64>)> {
    let spec = DenoiserSpec {
        kind,
        in_ch: 1,
        base_channels: cfg.base_channels,
        channel_mults: cfg.channel_mults.clone(),
        num_classes: conditional.map(|()| class_set.len()),
    };
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "init"));
    let mut net = UNet::<f32>::new(spec, &mut init_rng)?;
    let schedule = make_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end)?;
    let n = x0_unit.shape()[0];

    // Model space once, up front.
    let x0 = x0_unit.mapv(|v| 2.0 * v - 1.0);

    let mut losses = Vec::with_capacity(cfg.train_steps);
    if cfg.train_steps > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "steps"));
        let mut opt = Adam::new(cfg.learning_rate);
        let mut ema = Ema::new(cfg.ema_decay, &net.params_mut());
        let b = cfg.batch_size.min(n);
        let mut batch_shape = x0.shape().to_vec();
        batch_shape[0] = b;
        for step in 0..cfg.train_steps {
            let rows: Vec<usize> = (0..b).map(|_| rng.random_range(0..n)).collect();
            let xb = select_rows(&x0, &rows);
            let lb: Option<Vec<usize>> =
                label_idx.as_ref().map(|li| rows.iter().map(|&r| li[r]).collect());
            let loss =
                training_step(&mut net, &schedule, &xb, lb.as_deref(), &mut rng, &mut opt, Some(&mut ema))
                    .map_err(|e| {
                        Error::Numerical(format!("training diverged at step {step}: {e}"))
                    })?;
            losses.push(loss);
        }
        // Sampling uses the averaged weights.
        ema.write_to(&mut net.params_mut());
    }

    Ok((
        DiffusionModel {
            net,
            schedule,
            conditioning: cfg.conditioning,
            trained_on: dataset_id.to_string(),
            class_set,
            spatial,
            cfg: cfg.clone(),
            seed,
        },
        losses,
    ))
}

/// Train on enhanced images. Labels come from image provenance.
pub fn train_images(
    images: &[PixelImage],
    cfg: &DiffusionConfig,
    dataset_id: &str,
    seed: u64,
) -> Result<(Generator, TrainLog)> {
    if images.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    let (h, w) = (images[0].h, images[0].w);
    if h != w {
        return Err(Error::InvalidInput(format!("training images must be square, got {h}x{w}")));
    }
    let mut x0 = ArrayD::<f32>::zeros(IxDyn(&[images.len(), 1, h, w]));
    let mut labels = Vec::with_capacity(images.len());
    {
        let xs = x0.as_slice_mut().unwrap();
        for (i, img) in images.iter().enumerate() {
            if img.h != h || img.w != w {
                return Err(Error::ShapeMismatch(format!(
                    "image {i} is {}x{}, expected {h}x{w}",
                    img.h, img.w
                )));
            }
            for (j, &v) in img.data.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Domain(format!("image {i} pixel {j} = {v} outside [0,1]")));
                }
                xs[i * h * w + j] = v as f32;
            }
            labels.push(img.meta.class_label);
        }
    }
    train_core(
        TrainData { x0_unit: x0, labels, spatial: vec![h, w], kind: SpatialKind::TwoD },
        cfg,
        dataset_id,
        seed,
    )
}

/// Train directly on unit-range traces (the 1D comparison path).
pub fn train_traces(
    traces: &[NormalizedTrace],
    cfg: &DiffusionConfig,
    dataset_id: &str,
    seed: u64,
) -> Result<(Generator, TrainLog)> {
    if traces.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    let l = traces[0].len();
    let mut x0 = ArrayD::<f32>::zeros(IxDyn(&[traces.len(), 1, l]));
    let mut labels = Vec::with_capacity(traces.len());
    {
        let xs = x0.as_slice_mut().unwrap();
        for (i, t) in traces.iter().enumerate() {
            if t.len() != l {
                return Err(Error::ShapeMismatch(format!(
                    "trace {i} has length {}, expected {l}",
                    t.len()
                )));
            }
            for (j, &v) in t.samples.iter().enumerate() {
                xs[i * l + j] = v as f32;
            }
            labels.push(t.class_label);
        }
    }
    train_core(
        TrainData { x0_unit: x0, labels, spatial: vec![l], kind: SpatialKind::OneD },
        cfg,
        dataset_id,
        seed,
    )
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const CKPT_MAGIC: &[u8; 4] = b"TDC1";

#[derive(Serialize, Deserialize)]
struct CkptHeader {
    t_max: usize,
    beta_start: f64,
    beta_end: f64,
    spec: DenoiserSpec,
    conditioning: Conditioning,
    trained_on: String,
    class_set: Vec<u32>,
    spatial: Vec<usize>,
    train_cfg: DiffusionConfig,
    seed: u64,
    param_shapes: Vec<Vec<usize>>,
}

/// Self-describing checkpoint: magic, JSON header, then all parameters as
/// f32 little-endian in construction order.
pub fn save_checkpoint(model: &mut DiffusionModel, path: &Path) -> Result<()> {
    let shapes: Vec<Vec<usize>> =
        model.net.params_mut().iter().map(|p| p.w.shape().to_vec()).collect();
    let header = CkptHeader {
        t_max: model.schedule.t_max,
        beta_start: model.schedule.beta_start,
        beta_end: model.schedule.beta_end,
        spec: model.net.spec.clone(),
        conditioning: model.conditioning,
        trained_on: model.trained_on.clone(),
        class_set: model.class_set.clone(),
        spatial: model.spatial.clone(),
        train_cfg: model.cfg.clone(),
        seed: model.seed,
        param_shapes: shapes,
    };
    let json = serde_json::to_vec(&header)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CKPT_MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for p in model.net.params_mut() {
        for &v in p.w.as_slice().expect("standard layout") {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<DiffusionModel> {
    let bad = |reason: String| Error::MalformedArtifact {
        path: path.display().to_string(),
        reason,
    };
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header".into()))?;
    if &magic != CKPT_MAGIC {
        return Err(bad("wrong magic".into()));
    }
    let mut len8 = [0u8; 8];
    r.read_exact(&mut len8).map_err(|_| bad("truncated header".into()))?;
    let json_len = u64::from_le_bytes(len8) as usize;
    if json_len > 1 << 24 {
        return Err(bad("implausible header length".into()));
    }
    let mut json = vec![0u8; json_len];
    r.read_exact(&mut json).map_err(|_| bad("truncated header".into()))?;
    let header: CkptHeader =
        serde_json::from_slice(&json).map_err(|e| bad(format!("header: {e}")))?;

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = UNet::<f32>::new(header.spec.clone(), &mut rng)?;
    {
        let mut params = net.params_mut();
        if params.len() != header.param_shapes.len() {
            return Err(bad(format!(
                "parameter count mismatch: file {} vs model {}",
                header.param_shapes.len(),
                params.len()
            )));
        }
        for (i, p) in params.iter_mut().enumerate() {
            if p.w.shape() != header.param_shapes[i].as_slice() {
                return Err(bad(format!("parameter {i} shape mismatch")));
            }
            let buf = p.w.as_slice_mut().unwrap();
            let mut bytes = vec![0u8; buf.len() * 4];
            r.read_exact(&mut bytes).map_err(|_| bad("truncated weights".into()))?;
            for (j, chunk) in bytes.chunks_exact(4).enumerate() {
                buf[j] = f32::from_le_bytes(chunk.try_into().unwrap());
            }
        }
    }
    let mut tail = [0u8; 1];
    if r.read(&mut tail)? != 0 {
        return Err(bad("trailing bytes".into()));
    }
    let schedule = make_schedule(header.t_max, header.beta_start, header.beta_end)?;
    Ok(DiffusionModel {
        net,
        schedule,
        conditioning: header.conditioning,
        trained_on: header.trained_on,
        class_set: header.class_set,
        spatial: header.spatial,
        cfg: header.train_cfg,
        seed: header.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Conditioning;
    use crate::enhance::enhance_pipeline;
    use crate::gasf;
    use crate::trace::{gen_toy_dataset, ingest_trace, DatasetSpec, ToySpec};

    fn sched_default() -> NoiseSchedule {
        make_schedule(1000, 1e-4, 0.02).unwrap()
    }

    #[test]
    fn schedule_small_cases() {
        let s = make_schedule(1, 0.5, 0.5).unwrap();
        assert_eq!(s.betas, vec![0.5]);
        assert_eq!(s.alpha_bars, vec![0.5]);

        let s = make_schedule(2, 0.1, 0.2).unwrap();
        assert_eq!(s.betas, vec![0.1, 0.2]);
        assert!((s.alpha_bars[0] - 0.9).abs() < 1e-15);
        assert!((s.alpha_bars[1] - 0.72).abs() < 1e-15);
    }

    #[test]
    fn default_schedule_decays_below_one_percent() {
        let s = sched_default();
        assert!(s.alpha_bars[999] < 0.01, "abar_T = {}", s.alpha_bars[999]);
        for w in s.alpha_bars.windows(2) {
            assert!(w[1] < w[0], "alpha_bar must strictly decrease");
        }
        for &b in &s.betas {
            assert!(b > 0.0 && b < 1.0);
        }
    }

    #[test]
    fn schedule_rejects_bad_ranges() {
        assert!(make_schedule(0, 0.1, 0.2).is_err());
        assert!(make_schedule(10, 0.0, 0.2).is_err());
        assert!(make_schedule(10, 0.3, 0.2).is_err());
        assert!(make_schedule(10, 0.3, 1.0).is_err());
    }

    #[test]
    fn forward_diffuse_limits_and_midpoint() {
        // Hand-built schedules exercise the exact limit cases.
        let ones = ArrayD::<f64>::from_elem(IxDyn(&[1, 1, 4]), 1.0);
        let eps = ArrayD::<f64>::from_elem(IxDyn(&[1, 1, 4]), 0.7);
        let mk = |ab: f64| NoiseSchedule {
            t_max: 1,
            beta_start: 0.5,
            beta_end: 0.5,
            betas: vec![0.5],
            alphas: vec![0.5],
            alpha_bars: vec![ab],
        };
        let xt = forward_diffuse(&ones, 1, &eps, &mk(1.0)).unwrap();
        assert!(xt.iter().all(|&v| (v - 1.0).abs() < 1e-15));
        let xt = forward_diffuse(&ones, 1, &eps, &mk(0.0)).unwrap();
        assert!(xt.iter().all(|&v| (v - 0.7).abs() < 1e-15));
        let zeros = ArrayD::<f64>::zeros(IxDyn(&[1, 1, 4]));
        let xt = forward_diffuse(&ones, 1, &zeros, &mk(0.25)).unwrap();
        assert!(xt.iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn forward_diffuse_rejects_bad_steps() {
        let s = sched_default();
        let x = ArrayD::<f32>::zeros(IxDyn(&[1, 1, 4]));
        assert!(forward_diffuse(&x, 0, &x.clone(), &s).is_err());
        assert!(forward_diffuse(&x, 1001, &x.clone(), &s).is_err());
    }

    #[test]
    fn forward_marginal_variance_matches_schedule() {
        let s = sched_default();
        let t = 400;
        let ab = s.alpha_bar(t);
        let x0 = ArrayD::<f64>::from_elem(IxDyn(&[1, 1, 4]), 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 10_000;
        let mut sums = [0.0f64; 4];
        let mut sq = [0.0f64; 4];
        for _ in 0..draws {
            let eps = draw_standard::<f64>(&[1, 1, 4], &mut rng);
            let xt = forward_diffuse(&x0, t, &eps, &s).unwrap();
            for (j, &v) in xt.iter().enumerate() {
                sums[j] += v;
                sq[j] += v * v;
            }
        }
        let want = 1.0 - ab;
        for j in 0..4 {
            let mean = sums[j] / draws as f64;
            let var = sq[j] / draws as f64 - mean * mean;
            assert!(
                (var - want).abs() / want < 0.10,
                "pixel {j}: var {var} vs {want}"
            );
        }
    }

    fn toy_images(n_per_class: usize, res: usize, len: usize) -> Vec<PixelImage> {
        let spec = DatasetSpec {
            target_length: len,
            bin_width: None,
            num_classes: 2,
            traces_per_class: n_per_class,
        };
        let raws = gen_toy_dataset(&spec, &ToySpec::default(), "toy", 42).unwrap();
        let cfg = crate::config::ImageConfig { resolution: res, gamma: 0.25, gain: 1.0 };
        raws.iter()
            .map(|r| {
                let t = ingest_trace(r, &spec).unwrap();
                enhance_pipeline(&gasf::encode(&t).unwrap(), &cfg).unwrap()
            })
            .collect()
    }

    fn tiny_cfg(steps: usize) -> DiffusionConfig {
        DiffusionConfig {
            timesteps: 50,
            beta_start: 1e-4,
            beta_end: 0.02,
            train_steps: steps,
            batch_size: 4,
            learning_rate: 2e-3,
            ema_decay: 0.99,
            base_channels: 2,
            channel_mults: vec![1, 1, 1, 1, 1],
            conditioning: Conditioning::ClassEmbedding,
        }
    }

    #[test]
    fn zeroed_denoiser_loss_equals_mean_noise_energy() {
        let images = toy_images(3, 16, 24);
        let cfg = tiny_cfg(0);
        let (gen, log) = train_images(&images, &cfg, "toy", 7).unwrap();
        assert!(log[0].1.is_empty());
        let mut model = match gen {
            Generator::Single(m) => m,
            _ => unreachable!(),
        };
        model.net.zero_all_params();
        let x0 = ArrayD::<f32>::from_shape_simple_fn(IxDyn(&[2, 1, 16, 16]), || 0.1f32);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let eps = draw_standard::<f32>(&[2, 1, 16, 16], &mut rng);
        let ts = vec![7, 30];
        for p in model.net.params_mut() {
            p.zero_grad();
        }
        let loss =
            diffusion_loss(&mut model.net, &model.schedule, &x0, Some(&[0, 1]), &ts, &eps).unwrap();
        let want: f64 =
            eps.iter().map(|&e| (e as f64) * (e as f64)).sum::<f64>() / eps.len() as f64;
        assert!((loss - want).abs() < 1e-6, "{loss} vs {want}");
    }

    #[test]
    fn untrained_loss_is_near_unit_noise_energy() {
        let images = toy_images(3, 16, 24);
        let cfg = tiny_cfg(0);
        let (gen, _) = train_images(&images, &cfg, "toy", 7).unwrap();
        let mut model = match gen {
            Generator::Single(m) => m,
            _ => unreachable!(),
        };
        let x0 = ArrayD::<f32>::from_shape_simple_fn(IxDyn(&[4, 1, 16, 16]), || 0.0f32);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let eps = draw_standard::<f32>(&[4, 1, 16, 16], &mut rng);
        for p in model.net.params_mut() {
            p.zero_grad();
        }
        let loss = diffusion_loss(
            &mut model.net,
            &model.schedule,
            &x0,
            Some(&[0, 1, 0, 1]),
            &[5, 20, 35, 49],
            &eps,
        )
        .unwrap();
        assert!((0.5..1.5).contains(&loss), "untrained loss {loss}");
    }

    #[test]
    fn training_reduces_loss_over_three_seeds() {
        let images = toy_images(4, 16, 24);
        let mut first = 0.0;
        let mut last = 0.0;
        for seed in [1u64, 2, 3] {
            let (_, log) = train_images(&images, &tiny_cfg(500), "toy", seed).unwrap();
            let losses = &log[0].1;
            assert_eq!(losses.len(), 500);
            first += losses[..10].iter().sum::<f64>() / 10.0;
            last += losses[490..].iter().sum::<f64>() / 10.0;
        }
        assert!(
            last < first,
            "mean loss did not drop: first {first:.4} last {last:.4}"
        );
    }

    #[test]
    fn gradcheck_tiny_denoiser() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let spec = DenoiserSpec {
            kind: SpatialKind::TwoD,
            in_ch: 1,
            base_channels: 2,
            channel_mults: vec![1, 1, 1, 1, 1],
            num_classes: Some(2),
        };
        let mut net = UNet::<f64>::new(spec, &mut rng).unwrap();
        assert!(net.param_count() <= 5000);
        let sched = make_schedule(10, 1e-2, 0.1).unwrap();
        let x0 = draw_standard::<f64>(&[1, 1, 16, 16], &mut rng).mapv(|v| v.tanh());
        let eps = draw_standard::<f64>(&[1, 1, 16, 16], &mut rng);
        let probes = crate::nn::finite_diff_check(
            &mut net,
            |n| n.params_mut(),
            |n| {
                for p in n.params_mut() {
                    p.zero_grad();
                }
                diffusion_loss(n, &sched, &x0, Some(&[1]), &[4], &eps).unwrap()
            },
            20,
            1e-5,
            &mut rng,
        );
        for p in &probes {
            assert!(p.rel_err <= 1e-3, "gradient mismatch: {p:?}");
        }
    }

    #[test]
    fn sampling_is_deterministic_and_nested() {
        let images = toy_images(3, 16, 24);
        let (gen, _) = train_images(&images, &tiny_cfg(30), "toy", 11).unwrap();
        let mut gen = gen;
        let a = gen.sample(0, 3, 77).unwrap();
        let b = gen.sample(0, 3, 77).unwrap();
        assert_eq!(a.len(), 3);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.data, y.data);
        }
        // Prefix property: fewer samples are a prefix of more.
        let c = gen.sample(0, 5, 77).unwrap();
        for (x, y) in a.iter().zip(&c) {
            assert_eq!(x.data, y.data);
        }
        let other_seed = gen.sample(0, 1, 78).unwrap();
        assert_ne!(a[0].data, other_seed[0].data);
        // Unit range and metadata.
        for img in &a {
            assert_eq!((img.h, img.w), (16, 16));
            assert!(img.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert_eq!(img.meta.class_label, 0);
        }
        assert!(gen.sample(0, 0, 1).unwrap().is_empty());
        assert!(gen.sample(9, 1, 1).is_err());
    }

    #[test]
    fn per_class_and_unconditional_modes() {
        let images = toy_images(3, 16, 24);
        let mut cfg = tiny_cfg(10);
        cfg.conditioning = Conditioning::PerClass;
        let (gen, log) = train_images(&images, &cfg, "toy", 4).unwrap();
        let mut gen = gen;
        assert_eq!(gen.class_set(), vec![0, 1]);
        assert_eq!(log.len(), 2);
        assert!(gen.sample(1, 2, 5).is_ok());
        assert!(gen.sample(7, 1, 5).is_err());

        cfg.conditioning = Conditioning::Unconditional;
        let (gen, log) = train_images(&images, &cfg, "toy", 4).unwrap();
        let mut gen = gen;
        assert_eq!(log.len(), 1);
        let s = gen.sample(0, 1, 5).unwrap();
        assert_eq!(s[0].meta.class_label, 0);
    }

    #[test]
    fn one_d_training_and_sampling() {
        let spec = DatasetSpec {
            target_length: 32,
            bin_width: None,
            num_classes: 2,
            traces_per_class: 4,
        };
        let raws = gen_toy_dataset(&spec, &ToySpec::default(), "toy", 2).unwrap();
        let traces: Vec<NormalizedTrace> =
            raws.iter().map(|r| ingest_trace(r, &spec).unwrap()).collect();
        let (gen, _) = train_traces(&traces, &tiny_cfg(10), "toy", 6).unwrap();
        let mut gen = gen;
        let s = gen.sample_traces(1, 2, 3).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].len(), 32);
        assert!(s[0].samples.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(gen.sample(1, 1, 3).is_err(), "1d model must refuse image sampling");
    }

    #[test]
    fn checkpoint_roundtrip_preserves_sampling() {
        let images = toy_images(3, 16, 24);
        let (gen, _) = train_images(&images, &tiny_cfg(20), "toy", 13).unwrap();
        let mut gen = gen;
        let dir = tempfile::tempdir().unwrap();
        gen.save(dir.path()).unwrap();
        let mut back = Generator::load(dir.path()).unwrap();
        let a = gen.sample(1, 2, 99).unwrap();
        let b = back.sample(1, 2, 99).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.data, y.data);
        }
        match (&gen, &back) {
            (Generator::Single(m), Generator::Single(n)) => {
                assert_eq!(m.class_set, n.class_set);
                assert_eq!(m.spatial, n.spatial);
                assert_eq!(m.schedule, n.schedule);
                assert_eq!(m.trained_on, n.trained_on);
            }
            _ => panic!("mode changed through persistence"),
        }
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let images = toy_images(2, 16, 24);
        let (gen, _) = train_images(&images, &tiny_cfg(1), "toy", 13).unwrap();
        let mut gen = gen;
        let dir = tempfile::tempdir().unwrap();
        gen.save(dir.path()).unwrap();
        let ckpt = dir.path().join("dm-all.ckpt");
        let bytes = std::fs::read(&ckpt).unwrap();

        let trunc = dir.path().join("trunc.ckpt");
        std::fs::write(&trunc, &bytes[..bytes.len() - 2]).unwrap();
        assert!(load_checkpoint(&trunc).is_err());

        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        let wm = dir.path().join("magic.ckpt");
        std::fs::write(&wm, &wrong).unwrap();
        assert!(load_checkpoint(&wm).is_err());

        let mut extra = bytes;
        extra.push(0);
        let ex = dir.path().join("extra.ckpt");
        std::fs::write(&ex, &extra).unwrap();
        assert!(load_checkpoint(&ex).is_err());
    }
}
