//! Run configuration and deterministic seed derivation.
//!
//! One TOML file drives a whole pipeline run. Every stage derives its RNG
//! stream from the single root seed plus a stable stage name, so stages can
//! be re-run or skipped without perturbing each other.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::trace::{DatasetSpec, SplitSpec, ToySpec};

/// Derive a child seed from `(root, name)`: first 8 LE bytes of
/// SHA-256(root_le || name). Stable across platforms and releases.
pub fn derive_seed(root: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest >= 8 bytes"))
}

/// SHA-256 of a byte slice, hex-encoded. Used for config hashes and
/// artifact inventories.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// How the diffusion model conditions on class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[derive(Default)]
pub enum Conditioning {
    /// One model, class label fed through an embedding.
    #[default]
    ClassEmbedding,
    /// Independent model per class.
    PerClass,
    /// Single unconditional model (labels ignored at train and sample time).
    Unconditional,
}


/// Where the input data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DataSource {
    /// Synthetic desk-scale dataset, generated in-process.
    Toy {
        #[serde(default)]
        toy: ToySpec,
    },
    /// CSV tree `<root>/<class_label>/<trace>.csv`.
    Csv { root: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub dataset_id: String,
    pub spec: DatasetSpec,
    pub source: DataSource,
    #[serde(default)]
    pub split: SplitSpec,
}

/// Image-space settings shared by the enhancement stage and everything
/// downstream of it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageConfig {
    /// Training resolution (square).
    pub resolution: usize,
    /// Power-law exponent for the contrast stretch.
    pub gamma: f64,
    /// Gain applied with the power law.
    pub gain: f64,
}

impl Default for ImageConfig {
    fn default() -> Self {
        Self { resolution: 64, gamma: 0.25, gain: 1.0 }
    }
}

impl ImageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < 8 {
            return Err(Error::Config("resolution must be >= 8".into()));
        }
        if !self.resolution.is_multiple_of(16) {
            return Err(Error::Config(format!(
                "resolution {} must be divisible by 16 (four halvings)",
                self.resolution
            )));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.gamma) || !positive(self.gain) {
            return Err(Error::Config("gamma and gain must be > 0".into()));
        }
        Ok(())
    }
}

/// Diffusion model and training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    /// Number of diffusion timesteps.
    pub timesteps: usize,
    /// Linear noise schedule endpoints.
    pub beta_start: f64,
    pub beta_end: f64,
    /// Optimizer steps for training.
    pub train_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Exponential moving average decay for sampling weights.
    pub ema_decay: f64,
    /// Base channel width of the denoiser.
    pub base_channels: usize,
    /// Per-level channel multipliers, shallowest first.
    pub channel_mults: Vec<usize>,
    #[serde(default)]
    pub conditioning: Conditioning,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            timesteps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            train_steps: 20_000,
            batch_size: 16,
            learning_rate: 1e-4,
            ema_decay: 0.999,
            base_channels: 32,
            channel_mults: vec![1, 2, 2, 4, 4],
            conditioning: Conditioning::ClassEmbedding,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.timesteps < 2 {
            return Err(Error::Config("timesteps must be >= 2".into()));
        }
        if !(0.0 < self.beta_start && self.beta_start < self.beta_end && self.beta_end < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < beta_start < beta_end < 1, got [{}, {}]",
                self.beta_start, self.beta_end
            )));
        }
        // train_steps == 0 is legal: it yields the initialized model unchanged.
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::Config("ema_decay must be in [0,1)".into()));
        }
        if self.channel_mults.len() != 5 {
            return Err(Error::Config(format!(
                "channel_mults must have 5 levels, got {}",
                self.channel_mults.len()
            )));
        }
        if self.base_channels == 0 || self.channel_mults.contains(&0) {
            return Err(Error::Config("channel widths must be >= 1".into()));
        }
        Ok(())
    }
}

/// Fidelity scoring settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidConfig {
    /// Feature embedder: "pixel" or "convnet".
    pub embedder: String,
    /// Images sampled per class when scoring.
    pub samples_per_class: usize,
}

impl Default for FidConfig {
    fn default() -> Self {
        Self { embedder: "pixel".into(), samples_per_class: 100 }
    }
}

/// Class split for the anomaly evaluation protocols.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyEvalConfig {
    pub anomaly_classes: Vec<u32>,
    pub legitimate_classes: Vec<u32>,
    /// Training traces kept per anomaly class.
    pub train_count: usize,
    /// Optional prefix length in samples for the truncated variant.
    #[serde(default)]
    pub crop_samples: Option<usize>,
    /// Alternative prefix in seconds; requires the dataset's bin width.
    #[serde(default)]
    pub crop_seconds: Option<f64>,
}

fn default_limited_sizes() -> Vec<usize> {
    vec![5, 20]
}

fn default_fractions() -> Vec<usize> {
    vec![80, 40, 20]
}

fn default_ensemble() -> usize {
    5
}

/// Downstream evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Classifiers to run, by name.
    pub classifiers: Vec<String>,
    /// Synthetic images per class for augmentation scenarios.
    pub synth_per_class: usize,
    /// Classifier training epochs (NN-based classifiers).
    pub epochs: usize,
    /// Originals per class for the limited-data sweep.
    #[serde(default = "default_limited_sizes")]
    pub limited_sizes: Vec<usize>,
    /// Prefix lengths for the near-real-time protocol; empty means
    /// quarter, half, and full trace length.
    #[serde(default)]
    pub realtime_prefixes: Vec<usize>,
    /// Training fractions (%) for the representation comparison.
    #[serde(default = "default_fractions")]
    pub fractions_pct: Vec<usize>,
    /// Synthetic counts for the count sweep; empty means half and all of
    /// synth_per_class.
    #[serde(default)]
    pub synth_counts: Vec<usize>,
    /// Ensemble size for the uncertainty protocol.
    #[serde(default = "default_ensemble")]
    pub ensemble_size: usize,
    /// Class split for the anomaly protocols; required to run them.
    #[serde(default)]
    pub anomaly: Option<AnomalyEvalConfig>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            classifiers: vec!["conv2d".into()],
            synth_per_class: 100,
            epochs: 30,
            limited_sizes: default_limited_sizes(),
            realtime_prefixes: Vec::new(),
            fractions_pct: default_fractions(),
            synth_counts: Vec::new(),
            ensemble_size: default_ensemble(),
            anomaly: None,
        }
    }
}

/// Top-level run configuration, one per pipeline invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    /// Root directory for all stage outputs.
    pub artifact_root: PathBuf,
    pub datasets: Vec<DatasetConfig>,
    #[serde(default)]
    pub image: ImageConfig,
    #[serde(default)]
    pub diffusion: DiffusionConfig,
    #[serde(default)]
    pub fid: FidConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read {}: {e}", path.display()))
        })?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(Error::Config("at least one dataset is required".into()));
        }
        let mut ids = std::collections::BTreeSet::new();
        for d in &self.datasets {
            if d.dataset_id.is_empty() || d.dataset_id.contains(',') {
                return Err(Error::Config(format!(
                    "dataset id {:?} must be non-empty and comma-free",
                    d.dataset_id
                )));
            }
            if !ids.insert(&d.dataset_id) {
                return Err(Error::Config(format!("duplicate dataset id {:?}", d.dataset_id)));
            }
            d.spec.validate()?;
            d.split.validate()?;
        }
        self.image.validate()?;
        self.diffusion.validate()?;
        if self.fid.samples_per_class == 0 {
            return Err(Error::Config("fid.samples_per_class must be >= 1".into()));
        }
        if self.eval.classifiers.is_empty() {
            return Err(Error::Config("eval.classifiers must not be empty".into()));
        }
        if let Some(a) = &self.eval.anomaly {
            if a.anomaly_classes.is_empty() || a.legitimate_classes.is_empty() {
                return Err(Error::Config("eval.anomaly class sets must be non-empty".into()));
            }
            if a.train_count == 0 {
                return Err(Error::Config("eval.anomaly.train_count must be >= 1".into()));
            }
        }
        Ok(())
    }

    /// Hash of the canonical serialized config; stages record it so a
    /// manifest can detect configuration drift. The artifact root names
    /// where outputs go, not what they are, so it is excluded.
    pub fn content_hash(&self) -> String {
        let mut c = self.clone();
        c.artifact_root = PathBuf::new();
        let json = serde_json::to_string(&c).expect("config serializes");
        sha256_hex(json.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_seed_is_stable_and_name_sensitive() {
        let a = derive_seed(42, "encode");
        let b = derive_seed(42, "encode");
        let c = derive_seed(42, "enhance");
        let d = derive_seed(43, "encode");
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn sha256_known_vector() {
        // sha256("abc"), the classic FIPS 180-2 example.
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn config_roundtrip_toml() {
        let cfg = RunConfig {
            seed: 9,
            artifact_root: PathBuf::from("/tmp/run"),
            datasets: vec![DatasetConfig {
                dataset_id: "vid-east".into(),
                spec: DatasetSpec {
                    target_length: 128,
                    bin_width: None,
                    num_classes: 2,
                    traces_per_class: 100,
                },
                source: DataSource::Toy { toy: Default::default() },
                split: Default::default(),
            }],
            image: Default::default(),
            diffusion: Default::default(),
            fid: Default::default(),
            eval: Default::default(),
        };
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.content_hash(), back.content_hash());

        let mut dup = cfg.clone();
        dup.datasets.push(dup.datasets[0].clone());
        assert!(dup.validate().is_err(), "duplicate ids rejected");
        let mut none = cfg.clone();
        none.datasets.clear();
        assert!(none.validate().is_err(), "at least one dataset");
    }

    #[test]
    fn validation_rejects_bad_resolution_and_schedule() {
        let img = ImageConfig { resolution: 60, ..ImageConfig::default() };
        assert!(img.validate().is_err());
        let img = ImageConfig { resolution: 64, ..ImageConfig::default() };
        assert!(img.validate().is_ok());

        let d = DiffusionConfig { beta_start: 0.5, beta_end: 0.1, ..DiffusionConfig::default() };
        assert!(d.validate().is_err());
    }
}
