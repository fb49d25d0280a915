//! Acceptance gate: ten checks covering exact-math oracles for the
//! encoder, the distance metric, and the diffusion chain, plus scaled
//! end-to-end runs of the full generation and evaluation protocol.
//! Each test prints one pass line; a failed assert is the fail line.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use trafdiff::classify::{train_and_eval, ClassifierKind, LabeledSet, TrainParams};
use trafdiff::config::{derive_seed, Conditioning, DiffusionConfig, ImageConfig, RunConfig};
use trafdiff::diffusion::{
    diffusion_loss, forward_diffuse, make_schedule, train_images, DenoiserSpec, SpatialKind, UNet,
};
use trafdiff::enhance::{enhance_pipeline, PixelImage};
use trafdiff::fid::{fid_per_class, frechet_distance, gaussian_stats, Embedder, GaussianStats};
use trafdiff::gasf::{crop_prefix, decode, encode};
use trafdiff::harness::{
    anomaly_case2_uncertainty, compare_1d_2d, realtime_eval, standard_eval, AnomalySetup,
    DatasetBundle,
};
use trafdiff::nn::finite_diff_check;
use trafdiff::report::{dm_1d2d_table, fraction_table, hierarchical_table};
use trafdiff::trace::{
    gen_toy_dataset, ingest_trace, split_dataset, DatasetSpec, NormalizedTrace, SplitSpec, ToySpec,
};

fn rand_trace(rng: &mut ChaCha8Rng, n: usize) -> NormalizedTrace {
    let samples: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    NormalizedTrace::new(samples, 0, "acc").unwrap()
}

#[test]
fn acceptance_01_round_trip() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(32..=128);
        let trace = rand_trace(&mut rng, n);
        let back = decode(&encode(&trace).unwrap()).unwrap();
        for (a, b) in trace.samples.iter().zip(&back.samples) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst < 1e-9, "round-trip error {worst:e} >= 1e-9");
    let secs = t0.elapsed().as_secs_f64();
    assert!(secs < 10.0, "round trip took {secs:.1}s");
    println!("[criterion 1] image round trip: PASS (max err {worst:.2e}, {secs:.1}s)");
}

#[test]
fn acceptance_02_analytic_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(8..=64);
        let trace = rand_trace(&mut rng, n);
        let img = encode(&trace).unwrap();
        let theta: Vec<f64> = trace.samples.iter().map(|&x| x.acos()).collect();
        for i in 0..n {
            for j in 0..n {
                let got = img.get(i, j);
                worst = worst.max((got - (theta[i] + theta[j]).cos()).abs());
                assert!((-1.0..=1.0).contains(&got), "entry {got} outside [-1,1]");
                assert_eq!(got.to_bits(), img.get(j, i).to_bits(), "asymmetric at ({i},{j})");
            }
        }
    }
    assert!(worst < 1e-12, "analytic mismatch {worst:e} >= 1e-12");
    println!("[criterion 2] analytic oracle: PASS (max dev {worst:.2e})");
}

#[test]
fn acceptance_03_prefix_consistency() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    for _ in 0..100 {
        let n = rng.random_range(8..=96);
        let trace = rand_trace(&mut rng, n);
        let m = rng.random_range(2..=n);
        let cropped = crop_prefix(&encode(&trace).unwrap(), m).unwrap();
        let direct = encode(
            &NormalizedTrace::new(trace.samples[..m].to_vec(), trace.class_label, "acc").unwrap(),
        )
        .unwrap();
        assert_eq!(cropped.n, direct.n);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&cropped.data), bits(&direct.data), "prefix m={m} of n={n} not bit-exact");
    }
    println!("[criterion 3] prefix consistency: PASS (100 pairs bit-exact)");
}

#[test]
fn acceptance_04_distance_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (mu_a, mu_b) = (rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 4.0 - 2.0);
        let (sd_a, sd_b) = (rng.random::<f64>() + 0.1, rng.random::<f64>() + 0.1);
        let stats = |mu: f64, sd: f64| GaussianStats {
            mean: Array1::from_vec(vec![mu]),
            cov: Array2::from_shape_vec((1, 1), vec![sd * sd]).unwrap(),
            count: 16,
        };
        let got = frechet_distance(&stats(mu_a, sd_a), &stats(mu_b, sd_b)).unwrap();
        let want = (mu_a - mu_b).powi(2) + sd_a * sd_a + sd_b * sd_b - 2.0 * sd_a * sd_b;
        worst = worst.max((got - want).abs());
    }
    assert!(worst < 1e-9, "scalar closed form deviates by {worst:e}");

    // Self-distance of an arbitrary set.
    let vectors: Vec<Array1<f64>> = (0..20)
        .map(|_| Array1::from_vec((0..4).map(|_| rng.random::<f64>()).collect()))
        .collect();
    let s = gaussian_stats(&vectors).unwrap();
    let self_fid = frechet_distance(&s, &s).unwrap();
    assert!(self_fid <= 1e-6, "self distance {self_fid:e} > 1e-6");

    // Point masses: zero covariance leaves exactly the squared mean gap.
    let point = |v: Vec<f64>| GaussianStats {
        cov: Array2::zeros((v.len(), v.len())),
        mean: Array1::from_vec(v),
        count: 8,
    };
    let a = point(vec![0.25, -1.5, 3.0]);
    let b = point(vec![1.25, 0.5, 1.0]);
    let d2 = (0.25f64 - 1.25).powi(2) + (-1.5f64 - 0.5).powi(2) + (3.0f64 - 1.0).powi(2);
    let got = frechet_distance(&a, &b).unwrap();
    assert_eq!(got, d2, "point-mass distance {got} != {d2}");
    println!(
        "[criterion 4] distance closed form: PASS (dev {worst:.2e}, self {self_fid:.2e}, point-mass exact)"
    );
}

#[test]
fn acceptance_05_forward_marginals_and_zero_denoiser() {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let sched = make_schedule(100, 1e-4, 0.02).unwrap();
    let t = 60;
    let shape = [1usize, 1, 8, 8];
    let x0 = ArrayD::from_shape_simple_fn(IxDyn(&shape), || rng.random::<f64>() * 2.0 - 1.0);
    let draws = 10_000usize;
    let px = x0.len();
    let mut sum = vec![0.0f64; px];
    let mut sumsq = vec![0.0f64; px];
    for _ in 0..draws {
        let eps = ArrayD::from_shape_simple_fn(IxDyn(&shape), || {
            <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        });
        let xt = forward_diffuse(&x0, t, &eps, &sched).unwrap();
        for (k, &v) in xt.iter().enumerate() {
            sum[k] += v;
            sumsq[k] += v * v;
        }
    }
    let want = 1.0 - sched.alpha_bar(t);
    let mut worst_rel = 0.0f64;
    for k in 0..px {
        let mean = sum[k] / draws as f64;
        let var = sumsq[k] / draws as f64 - mean * mean;
        worst_rel = worst_rel.max((var - want).abs() / want);
    }
    assert!(worst_rel <= 0.10, "per-pixel variance off by {worst_rel:.3} rel");

    // A denoiser with all-zero weights predicts zero, so the training loss
    // must equal the mean squared target noise.
    let spec = DenoiserSpec {
        kind: SpatialKind::TwoD,
        in_ch: 1,
        base_channels: 2,
        channel_mults: vec![1, 1, 1, 1, 1],
        num_classes: Some(2),
    };
    let mut net = UNet::<f64>::new(spec, &mut rng).unwrap();
    for p in net.params_mut() {
        p.w.fill(0.0);
        p.zero_grad();
    }
    let batch = [2usize, 1, 16, 16];
    let xb = ArrayD::from_shape_simple_fn(IxDyn(&batch), || rng.random::<f64>() * 2.0 - 1.0);
    let eps = ArrayD::from_shape_simple_fn(IxDyn(&batch), || {
        <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
    });
    let loss = diffusion_loss(&mut net, &sched, &xb, Some(&[0, 1]), &[9, 42], &eps).unwrap();
    let want_loss = eps.iter().map(|e| e * e).sum::<f64>() / eps.len() as f64;
    assert!(
        (loss - want_loss).abs() < 1e-6,
        "zero-denoiser loss {loss} != mean sq noise {want_loss}"
    );
    println!(
        "[criterion 5] forward marginals: PASS (var dev {:.1}%, zero-denoiser dev {:.1e})",
        worst_rel * 100.0,
        (loss - want_loss).abs()
    );
}

#[test]
fn acceptance_06_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let spec = DenoiserSpec {
        kind: SpatialKind::TwoD,
        in_ch: 1,
        base_channels: 2,
        channel_mults: vec![1, 1, 1, 1, 1],
        num_classes: Some(2),
    };
    let mut net = UNet::<f64>::new(spec, &mut rng).unwrap();
    assert!(net.param_count() <= 5000, "denoiser has {} params", net.param_count());
    let sched = make_schedule(10, 1e-2, 0.1).unwrap();
    let shape = [1usize, 1, 16, 16];
    let x0 = ArrayD::from_shape_simple_fn(IxDyn(&shape), || rng.random::<f64>().tanh());
    let eps = ArrayD::from_shape_simple_fn(IxDyn(&shape), || {
        <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
    });
    let probes = finite_diff_check(
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
    let worst = probes.iter().map(|p| p.rel_err).fold(0.0f64, f64::max);
    assert!(worst <= 1e-3, "worst relative gradient error {worst:e}");
    println!(
        "[criterion 6] gradient check: PASS ({} params, worst rel err {worst:.2e})",
        net.param_count()
    );
}

// ---------------------------------------------------------------------------
// Shared fixture plumbing for the protocol-level criteria.

fn toy_traces(
    id: &str,
    num_classes: usize,
    per_class: usize,
    len: usize,
    base_freq: f64,
    seed: u64,
) -> (Vec<NormalizedTrace>, Vec<NormalizedTrace>) {
    let spec = DatasetSpec {
        target_length: len,
        bin_width: None,
        num_classes,
        traces_per_class: per_class,
    };
    let toy = ToySpec { base_freq, ..ToySpec::default() };
    let raws = gen_toy_dataset(&spec, &toy, id, seed).unwrap();
    let traces: Vec<_> = raws.iter().map(|r| ingest_trace(r, &spec).unwrap()).collect();
    split_dataset(&traces, &SplitSpec::default()).unwrap()
}

/// Cheap synthetic stand-in pool for table-shape checks: jittered copies
/// of the training images.
fn jitter_pool(images: &[PixelImage], copies: usize, seed: u64) -> Vec<PixelImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(images.len() * copies);
    for _ in 0..copies {
        for img in images {
            let mut j = img.clone();
            for v in &mut j.data {
                *v = (*v + rng.random::<f64>() * 0.04 - 0.02).clamp(0.0, 1.0);
            }
            out.push(j);
        }
    }
    out
}

fn tiny_dm(train_steps: usize) -> DiffusionConfig {
    DiffusionConfig {
        timesteps: 30,
        beta_start: 1e-4,
        beta_end: 0.02,
        train_steps,
        batch_size: 4,
        learning_rate: 2e-3,
        ema_decay: 0.99,
        base_channels: 2,
        channel_mults: vec![1, 1, 1, 1, 1],
        conditioning: Conditioning::ClassEmbedding,
    }
}

#[test]
fn acceptance_08_protocol_fidelity() {
    let img_cfg = ImageConfig { resolution: 16, gamma: 0.25, gain: 1.0 };
    let (train, test) = toy_traces("video-acc", 2, 10, 32, 1.0, 8);
    let pre = DatasetBundle::new("video-acc", train.clone(), test.clone(), Vec::new(), &img_cfg)
        .unwrap();
    let pool = jitter_pool(&pre.train_images, 2, 88);
    let bundle = DatasetBundle::new("video-acc", train, test, pool, &img_cfg).unwrap();
    let params = TrainParams { epochs: 6, batch_size: 8, ..TrainParams::default() };
    let seed = 515;

    // Scenario-grid table: original / synth / ori+synth columns.
    let grid = standard_eval(&bundle, 4, ClassifierKind::NaiveBayes, &params, seed).unwrap();
    let t2 = hierarchical_table(&grid).unwrap();
    let mut lines = t2.lines();
    assert_eq!(lines.next(), Some("layer,data,original,synth,ori+synth"));
    assert!(lines.next().unwrap().starts_with("L3,video-acc,"));

    // Full-prefix near-real-time row reproduces the grid row bit for bit
    // under the same seed.
    let n = bundle.trace_len();
    let rt = realtime_eval(&bundle, &[n], 4, ClassifierKind::NaiveBayes, &params, seed).unwrap();
    assert_eq!(rt.len(), grid.len());
    for row in &grid {
        assert!(rt.contains(row), "grid row not reproduced at full prefix: {row:?}");
    }

    // Sequence-vs-image comparison tables: generator columns and the
    // 80/40/20 per-fraction groups.
    let cmp = compare_1d_2d(&bundle, &[80, 40, 20], 4, &tiny_dm(15), &params, seed).unwrap();
    let t3 = dm_1d2d_table(&cmp).unwrap();
    assert_eq!(
        t3.lines().next(),
        Some("dataset,original,synth_1d,synth_2d,ori+synth_1d,ori+synth_2d")
    );
    assert!(t3.lines().nth(1).unwrap().starts_with("video-acc,"));
    let t4 = fraction_table(&cmp, &[80, 40, 20], 8).unwrap();
    assert_eq!(t4.lines().next(), Some("dataset,1d_80,2d_80,1d_40,2d_40,1d_20,2d_20"));
    assert_eq!(t4.lines().count(), 2);
    println!("[criterion 8] protocol fidelity: PASS (3 table shapes, full-prefix row bit-equal)");
}

#[test]
fn acceptance_09_entropy_bounds_and_direction() {
    let img_cfg = ImageConfig { resolution: 16, gamma: 0.25, gain: 1.0 };
    let setup = AnomalySetup {
        anomaly_classes: vec![2],
        legitimate_classes: vec![0, 1],
        anomaly_train_count: 1,
        crop_length: None,
    };
    let params = TrainParams { epochs: 40, batch_size: 8, ..TrainParams::default() };
    let (mut legit_sum, mut anom_sum) = (0.0f64, 0.0f64);
    for seed in [1u64, 2, 3] {
        let (train, test) = toy_traces("video-ood", 3, 12, 32, 1.0, 900 + seed);
        let bundle =
            DatasetBundle::new("video-ood", train, test, Vec::new(), &img_cfg).unwrap();
        let report =
            anomaly_case2_uncertainty(&bundle, &setup, 3, ClassifierKind::Mlp, &params, seed)
                .unwrap();
        let bound = report.max_entropy();
        for &e in report.legit_entropy.iter().chain(&report.anomaly_entropy) {
            assert!((0.0..=bound + 1e-12).contains(&e), "entropy {e} outside [0, {bound}]");
        }
        legit_sum += report.mean_legit();
        anom_sum += report.mean_anomaly();
    }
    assert!(
        anom_sum / 3.0 > legit_sum / 3.0,
        "anomaly entropy {:.4} not above legitimate {:.4}",
        anom_sum / 3.0,
        legit_sum / 3.0
    );
    println!(
        "[criterion 9] entropy bounds and direction: PASS (legit {:.3} < anomaly {:.3}, bound ln 2)",
        legit_sum / 3.0,
        anom_sum / 3.0
    );
}

// ---------------------------------------------------------------------------
// Full-pipeline criteria.

fn write_run_config(dir: &std::path::Path) -> std::path::PathBuf {
    use trafdiff::config::{DatasetConfig, EvalConfig, FidConfig};
    use trafdiff::trace::DatasetSpec;
    let cfg = RunConfig {
        seed: 21,
        artifact_root: dir.join("unset"),
        datasets: vec![DatasetConfig {
            dataset_id: "video-acc".into(),
            spec: DatasetSpec {
                target_length: 32,
                bin_width: None,
                num_classes: 2,
                traces_per_class: 10,
            },
            source: trafdiff::config::DataSource::Toy {
                toy: ToySpec { base_freq: 1.0, ..ToySpec::default() },
            },
            split: SplitSpec::default(),
        }],
        image: ImageConfig { resolution: 16, gamma: 0.25, gain: 1.0 },
        diffusion: tiny_dm(12),
        fid: FidConfig { embedder: "pixel".into(), samples_per_class: 2 },
        eval: EvalConfig {
            classifiers: vec!["naive_bayes".into()],
            synth_per_class: 2,
            epochs: 3,
            limited_sizes: vec![2],
            realtime_prefixes: vec![],
            fractions_pct: vec![80],
            synth_counts: vec![],
            ensemble_size: 2,
            anomaly: None,
        },
    };
    let path = dir.join("run.toml");
    std::fs::write(&path, toml::to_string(&cfg).unwrap()).unwrap();
    path
}

fn run_cli(config: &std::path::Path, root: &std::path::Path, args: &[&str]) {
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_trafdiff"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--stage-dir")
        .arg(root)
        .status()
        .expect("binary runs");
    assert!(status.success(), "trafdiff {args:?} exited with {status}");
}

#[test]
fn acceptance_10_manifest_determinism() {
    let tmp = tempfile::TempDir::new().unwrap();
    let config = write_run_config(tmp.path());
    let verbs: &[&[&str]] = &[
        &["ingest"],
        &["encode"],
        &["enhance"],
        &["train-dm"],
        &["sample"],
        &["fid"],
        &["eval"],
        &["report"],
    ];
    let root_a = tmp.path().join("a");
    let root_b = tmp.path().join("b");
    for verb in verbs {
        run_cli(&config, &root_a, verb);
    }
    for verb in verbs {
        run_cli(&config, &root_b, verb);
    }
    let stages =
        ["ingest", "encode", "enhance", "train-dm", "sample", "fid", "eval/standard", "report"];
    for stage in stages {
        let a = std::fs::read(root_a.join(stage).join("manifest.json")).unwrap();
        let b = std::fs::read(root_b.join(stage).join("manifest.json")).unwrap();
        assert_eq!(a, b, "stage {stage} manifests differ between identical runs");
    }
    println!(
        "[criterion 10] determinism: PASS ({} stage manifests identical across repeated runs)",
        stages.len()
    );
}

#[test]
fn acceptance_07_end_to_end_toy_run() {
    let t0 = Instant::now();
    let (train, test) = toy_traces("video-e2e", 2, 100, 128, 2.0, 7);
    assert_eq!(train.len(), 160);
    assert_eq!(test.len(), 40);
    let img_cfg = ImageConfig { resolution: 64, gamma: 0.25, gain: 1.0 };
    let enc = |ts: &[NormalizedTrace]| -> Vec<PixelImage> {
        ts.iter().map(|t| enhance_pipeline(&encode(t).unwrap(), &img_cfg).unwrap()).collect()
    };
    let train_imgs = enc(&train);
    let test_imgs = enc(&test);

    let dm_cfg = DiffusionConfig {
        timesteps: 150,
        beta_start: 1e-4,
        beta_end: 0.02,
        train_steps: 2500,
        batch_size: 16,
        learning_rate: 2e-3,
        ema_decay: 0.995,
        base_channels: 8,
        channel_mults: vec![1, 2, 2, 4, 4],
        conditioning: Conditioning::ClassEmbedding,
    };
    assert!(dm_cfg.train_steps <= 5000);
    let (mut generator, _) = train_images(&train_imgs, &dm_cfg, "video-e2e", 7).unwrap();
    let mut synth = Vec::new();
    for class in [0u32, 1] {
        synth.extend(generator.sample(class, 80, derive_seed(7, "e2e/sample")).unwrap());
    }

    // (a) Class affinity under the pixel embedder: each class's synthetic
    // set sits closer to its own originals than to the other class's.
    let by_class = |imgs: &[PixelImage], c: u32| -> Vec<PixelImage> {
        imgs.iter().filter(|i| i.meta.class_label == c).cloned().collect()
    };
    let matched = fid_per_class(&train_imgs, &synth, 50, Embedder::Pixel, "video-e2e", 3).unwrap();
    for &(class, own) in &matched.per_class {
        let other = 1 - class;
        let sc = by_class(&synth, class);
        let mut oc = by_class(&train_imgs, other);
        for img in &mut oc {
            img.meta.class_label = class;
        }
        let cross = fid_per_class(&oc, &sc, 50, Embedder::Pixel, "cross", 3).unwrap();
        let cross_val = cross.per_class[0].1;
        assert!(
            own < cross_val,
            "class {class}: own-class distance {own:.3} not below cross {cross_val:.3}"
        );
    }

    // (b) Synthetic-only training classifies held-out originals.
    let params = TrainParams { epochs: 40, batch_size: 16, ..TrainParams::default() };
    let test_set = LabeledSet::from_images(&test_imgs, "t").unwrap();
    let synth_set = LabeledSet::from_images(&synth, "s").unwrap();
    let acc_synth =
        train_and_eval(ClassifierKind::Conv2d, &synth_set, &test_set, 5, &params).unwrap();
    assert!(acc_synth >= 90.0, "synth-only accuracy {acc_synth:.1}% below 90%");

    // (c) Augmentation does not hurt beyond tolerance.
    let orig_set = LabeledSet::from_images(&train_imgs, "o").unwrap();
    let acc_orig =
        train_and_eval(ClassifierKind::Conv2d, &orig_set, &test_set, 5, &params).unwrap();
    let both: Vec<PixelImage> = train_imgs.iter().chain(&synth).cloned().collect();
    let both_set = LabeledSet::from_images(&both, "o").unwrap();
    let acc_both =
        train_and_eval(ClassifierKind::Conv2d, &both_set, &test_set, 5, &params).unwrap();
    assert!(
        acc_both >= acc_orig - 2.0,
        "augmented accuracy {acc_both:.1}% more than 2pp below original {acc_orig:.1}%"
    );

    let mins = t0.elapsed().as_secs_f64() / 60.0;
    assert!(mins <= 180.0, "end-to-end run took {mins:.0} minutes");
    println!(
        "[criterion 7] end-to-end toy run: PASS (synth-only {acc_synth:.1}%, original {acc_orig:.1}%, \
         augmented {acc_both:.1}%, {mins:.1} min)"
    );
}
